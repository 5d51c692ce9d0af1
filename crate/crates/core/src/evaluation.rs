//! Temporal link prediction on the held-out window.
//!
//! Positives are the pairs that contact after the split; negatives are an
//! equal number of pairs that never contact anywhere in the stream. Every
//! node is embedded once at the split time and pairs are ranked under three
//! similarities.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use log::warn;
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::graph::{pair_key, DataSplit, NodeId, TemporalGraph};
use crate::linalg::dot;
use crate::model::{cosine, ModelParams, NodeFeatures};
use crate::significance::{decayed_sum, CandidateSource, GraphScores, Selection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    Cos,
    Had,
    L2,
}

impl Similarity {
    pub const ALL: [Similarity; 3] = [Similarity::Cos, Similarity::Had, Similarity::L2];

    pub fn name(self) -> &'static str {
        match self {
            Similarity::Cos => "cos",
            Similarity::Had => "had",
            Similarity::L2 => "l2",
        }
    }
}

/// Ranking score of a pair; higher means more likely to link. The L2 form is
/// the negated squared distance.
pub fn score_pair(h_u: &[f64], h_v: &[f64], kind: Similarity) -> f64 {
    debug_assert_eq!(h_u.len(), h_v.len());
    match kind {
        Similarity::Cos => cosine(h_u, h_v),
        Similarity::Had => dot(h_u, h_v),
        Similarity::L2 => -h_u
            .iter()
            .zip(h_v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub u: NodeId,
    pub v: NodeId,
    pub score: f64,
    pub positive: bool,
}

impl ScoredPair {
    pub fn new(u: NodeId, v: NodeId, score: f64, positive: bool) -> Self {
        ScoredPair {
            u,
            v,
            score,
            positive,
        }
    }
}

fn check_scores(pairs: &[ScoredPair]) -> Result<()> {
    match pairs.iter().find(|p| !p.score.is_finite()) {
        Some(p) => Err(Error::Evaluation(format!(
            "non-finite score for pair ({}, {})",
            p.u, p.v
        ))),
        None => Ok(()),
    }
}

/// Twice the Mann-Whitney count: each (positive, negative) pair contributes
/// 2 when the positive outranks, 1 on a tie.
fn twice_wins(pairs: &[ScoredPair]) -> (u64, u64, u64) {
    let mut sorted: Vec<&ScoredPair> = pairs.iter().collect();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    let (mut neg_below, mut twice, mut n_pos, mut n_neg) = (0u64, 0u64, 0u64, 0u64);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].score;
        let (mut gp, mut gn) = (0u64, 0u64);
        while i < sorted.len() && sorted[i].score == s {
            if sorted[i].positive {
                gp += 1;
            } else {
                gn += 1;
            }
            i += 1;
        }
        twice += gp * (2 * neg_below + gn);
        neg_below += gn;
        n_pos += gp;
        n_neg += gn;
    }
    (twice, n_pos, n_neg)
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half.
pub fn auc(pairs: &[ScoredPair]) -> Result<f64> {
    check_scores(pairs)?;
    let (twice, n_pos, n_neg) = twice_wins(pairs);
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Evaluation(format!(
            "AUC needs both classes, got {n_pos} positive / {n_neg} negative"
        )));
    }
    Ok(twice as f64 / (2 * n_pos * n_neg) as f64)
}

/// Descending score, then ascending `(u, v)`.
fn ranked(pairs: &[ScoredPair]) -> Vec<&ScoredPair> {
    let mut sorted: Vec<&ScoredPair> = pairs.iter().collect();
    sorted.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| (a.u, a.v).cmp(&(b.u, b.v)))
    });
    sorted
}

fn average_precision(sorted: &[&ScoredPair]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, p) in sorted.iter().enumerate() {
        if p.positive {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Average precision of the single global ranking.
pub fn mean_average_precision(pairs: &[ScoredPair]) -> Result<f64> {
    check_scores(pairs)?;
    average_precision(&ranked(pairs))
        .ok_or_else(|| Error::Evaluation("MAP needs at least one positive".into()))
}

/// Mean over source nodes `u` of the average precision of `u`'s own ranked
/// pairs; sources without positives are skipped.
pub fn map_per_source(pairs: &[ScoredPair]) -> Result<f64> {
    check_scores(pairs)?;
    let mut groups: BTreeMap<NodeId, Vec<ScoredPair>> = BTreeMap::new();
    for p in pairs {
        groups.entry(p.u).or_default().push(*p);
    }
    let aps: Vec<f64> = groups
        .values()
        .filter_map(|g| average_precision(&ranked(g)))
        .collect();
    if aps.is_empty() {
        return Err(Error::Evaluation("MAP needs at least one positive".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Decayed contact count of each pair at `t`, using the strict-past history.
pub fn heuristic_reference(
    g_train: &TemporalGraph,
    pairs: &[(NodeId, NodeId)],
    t: f64,
    lambda: f64,
) -> Vec<f64> {
    pairs
        .iter()
        .map(|&(u, v)| decayed_sum(g_train.pair_history(u, v, t), t, lambda))
        .collect()
}

/// Up to `count` distinct unordered pairs with no contact anywhere in `full`.
pub fn sample_unlinked_pairs<R: Rng + ?Sized>(
    full: &TemporalGraph,
    count: usize,
    rng: &mut R,
) -> Vec<(NodeId, NodeId)> {
    let n = full.num_nodes();
    let total = n * n.saturating_sub(1) / 2;
    let free = total - full.num_pairs();
    if count == 0 || free == 0 {
        return Vec::new();
    }
    if count <= free / 4 {
        let mut seen = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        let mut tries = 0usize;
        while out.len() < count && tries < 1000 * count {
            tries += 1;
            let u = rng.random_range(0..n);
            let v = rng.random_range(0..n);
            if u == v || full.has_pair(u, v) {
                continue;
            }
            let key = pair_key(u, v);
            if seen.insert(key) {
                out.push(key);
            }
        }
        if out.len() == count {
            return out;
        }
    }
    // dense graph: enumerate the complement and draw without replacement
    let mut all = Vec::with_capacity(free);
    for u in 0..n {
        for v in u + 1..n {
            if !full.has_pair(u, v) {
                all.push((u, v));
            }
        }
    }
    if all.len() <= count {
        return all;
    }
    let mut idx = sample(rng, all.len(), count).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| all[i]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMetrics {
    pub auc: f64,
    pub map: f64,
    pub map_per_source: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub similarity: BTreeMap<Similarity, SimilarityMetrics>,
    pub best_auc: f64,
    pub best_auc_similarity: Similarity,
    pub best_map: f64,
    pub best_map_similarity: Similarity,
    pub reference_auc: f64,
    pub reference_map: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub m: usize,
    pub lambda: f64,
    pub selection: Selection,
}

/// Embeds every node involved in `pairs` at time `t` from the training graph.
pub fn embed_nodes(
    g_train: &TemporalGraph,
    params: &ModelParams,
    feats: &NodeFeatures,
    nodes: &[NodeId],
    t: f64,
    cfg: &EvalConfig,
) -> HashMap<NodeId, Vec<f64>> {
    let enc = Encoder::new(params, feats);
    let scores = GraphScores::new(g_train, cfg.lambda);
    let source = CandidateSource::new(&scores, cfg.m, cfg.selection);
    nodes
        .par_iter()
        .map(|&u| (u, enc.embed(&source, u, t).vector))
        .collect()
}

/// Scores the held-out pairs against sampled never-linked pairs.
pub fn evaluate<R: Rng + ?Sized>(
    split: &DataSplit,
    full: &TemporalGraph,
    params: &ModelParams,
    feats: &NodeFeatures,
    cfg: &EvalConfig,
    rng: &mut R,
) -> Result<MetricsReport> {
    let positives: Vec<(NodeId, NodeId)> = split.test_pairs.keys().copied().collect();
    let negatives = sample_unlinked_pairs(full, positives.len(), rng);
    if negatives.is_empty() {
        return Err(Error::Evaluation(
            "no never-linked pairs available as negatives".into(),
        ));
    }
    if negatives.len() < positives.len() {
        warn!(
            "only {} never-linked pairs for {} positives",
            negatives.len(),
            positives.len()
        );
    }
    let labelled: Vec<((NodeId, NodeId), bool)> = positives
        .iter()
        .map(|&p| (p, true))
        .chain(negatives.iter().map(|&p| (p, false)))
        .collect();

    let nodes: Vec<NodeId> = labelled
        .iter()
        .flat_map(|&((u, v), _)| [u, v])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let emb = embed_nodes(&split.train, params, feats, &nodes, split.t_split, cfg);

    let mut similarity = BTreeMap::new();
    for kind in Similarity::ALL {
        let scored: Vec<ScoredPair> = labelled
            .iter()
            .map(|&((u, v), pos)| ScoredPair::new(u, v, score_pair(&emb[&u], &emb[&v], kind), pos))
            .collect();
        similarity.insert(
            kind,
            SimilarityMetrics {
                auc: auc(&scored)?,
                map: mean_average_precision(&scored)?,
                map_per_source: map_per_source(&scored)?,
            },
        );
    }
    // ties resolve to the first similarity in Cos, Had, L2 order
    let pick = |metric: fn(&SimilarityMetrics) -> f64| {
        similarity
            .iter()
            .fold(None::<(Similarity, f64)>, |best, (&k, m)| match best {
                Some((_, b)) if b >= metric(m) => best,
                _ => Some((k, metric(m))),
            })
            .expect("three similarities")
    };
    let (best_auc_similarity, best_auc) = pick(|m| m.auc);
    let (best_map_similarity, best_map) = pick(|m| m.map);

    let pair_list: Vec<(NodeId, NodeId)> = labelled.iter().map(|&(p, _)| p).collect();
    let reference = heuristic_reference(&split.train, &pair_list, split.t_split, cfg.lambda);
    let reference_pairs: Vec<ScoredPair> = labelled
        .iter()
        .zip(&reference)
        .map(|(&((u, v), pos), &s)| ScoredPair::new(u, v, s, pos))
        .collect();

    Ok(MetricsReport {
        similarity,
        best_auc,
        best_auc_similarity,
        best_map,
        best_map_similarity,
        reference_auc: auc(&reference_pairs)?,
        reference_map: mean_average_precision(&reference_pairs)?,
        n_pos: positives.len(),
        n_neg: negatives.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Event;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn labelled(pos: &[f64], neg: &[f64]) -> Vec<ScoredPair> {
        pos.iter()
            .enumerate()
            .map(|(i, &s)| ScoredPair::new(0, i + 1, s, true))
            .chain(
                neg.iter()
                    .enumerate()
                    .map(|(i, &s)| ScoredPair::new(1, i + 100, s, false)),
            )
            .collect()
    }

    fn ranked_labels(labels: &[bool]) -> Vec<ScoredPair> {
        let n = labels.len();
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| ScoredPair::new(i, i + 1, (n - i) as f64, l))
            .collect()
    }

    #[test]
    fn similarity_examples() {
        let a = [1.0, 1.0];
        assert!((score_pair(&a, &a, Similarity::Cos) - 1.0).abs() < 1e-15);
        assert_eq!(score_pair(&a, &a, Similarity::Had), 2.0);
        assert_eq!(score_pair(&a, &a, Similarity::L2), 0.0);
        let (x, y) = ([1.0, 0.0], [0.0, 1.0]);
        assert_eq!(score_pair(&x, &y, Similarity::Cos), 0.0);
        assert_eq!(score_pair(&x, &y, Similarity::Had), 0.0);
        assert_eq!(score_pair(&x, &y, Similarity::L2), -2.0);
        assert_eq!(score_pair(&[0.0, 0.0], &[3.0, -7.0], Similarity::Had), 0.0);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&labelled(&[0.9, 0.8], &[0.2, 0.1])).unwrap(), 1.0);
        assert_eq!(auc(&labelled(&[0.9, 0.3], &[0.5, 0.1])).unwrap(), 0.75);
        assert_eq!(auc(&labelled(&[0.4, 0.4], &[0.4, 0.4, 0.4])).unwrap(), 0.5);
        assert!(auc(&labelled(&[0.4], &[])).is_err());
        assert!(auc(&labelled(&[], &[0.3])).is_err());
        assert!(auc(&labelled(&[f64::NAN], &[0.3])).is_err());
    }

    #[test]
    fn map_examples() {
        let m = |l: &[bool]| mean_average_precision(&ranked_labels(l)).unwrap();
        assert_eq!(m(&[true, true, false, false]), 1.0);
        assert!((m(&[true, false, true, false]) - 0.83333).abs() < 1e-5);
        assert!((m(&[false, false, true]) - 1.0 / 3.0).abs() < 1e-15);
        assert!(mean_average_precision(&ranked_labels(&[false, false])).is_err());
    }

    #[test]
    fn map_ties_break_by_pair_ids() {
        let pairs = vec![
            ScoredPair::new(2, 3, 1.0, true),
            ScoredPair::new(0, 5, 1.0, false),
        ];
        // (0, 5) ranks first on the tie
        assert_eq!(mean_average_precision(&pairs).unwrap(), 0.5);
    }

    #[test]
    fn per_source_map_averages_sources() {
        let pairs = vec![
            ScoredPair::new(0, 1, 0.9, true),
            ScoredPair::new(0, 2, 0.8, false),
            ScoredPair::new(1, 2, 0.9, false),
            ScoredPair::new(1, 3, 0.1, true),
            ScoredPair::new(4, 5, 0.5, false),
        ];
        assert!((map_per_source(&pairs).unwrap() - (1.0 + 0.5) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn reference_prefers_pairs_with_history() {
        let g = TemporalGraph::from_events(3, vec![Event::new(0, 1, 1.0), Event::new(0, 1, 2.0)])
            .unwrap();
        let s = heuristic_reference(&g, &[(0, 1), (0, 2)], 3.0, 1.0);
        assert!(s[0] > s[1]);
        assert_eq!(s[1], 0.0);
        let direct =
            crate::significance::initial_significance(g.pair_history(0, 1, 3.0), 3.0, 1.0).unwrap();
        assert_eq!(s[0], direct);
    }

    #[test]
    fn unlinked_pairs_are_distinct_and_never_linked() {
        let mut events = Vec::new();
        for u in 0..30 {
            events.push(Event::new(u, (u + 1) % 30, u as f64));
        }
        let g = TemporalGraph::from_events(30, events).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pairs = sample_unlinked_pairs(&g, 50, &mut rng);
        assert_eq!(pairs.len(), 50);
        let set: HashSet<_> = pairs.iter().collect();
        assert_eq!(set.len(), 50);
        assert!(pairs.iter().all(|&(u, v)| u < v && !g.has_pair(u, v)));
        // dense: only 3 free pairs in a 4-clique minus 3 edges
        let g = TemporalGraph::from_events(
            4,
            vec![
                Event::new(0, 1, 0.0),
                Event::new(1, 2, 0.0),
                Event::new(2, 3, 0.0),
            ],
        )
        .unwrap();
        let pairs = sample_unlinked_pairs(&g, 10, &mut rng);
        assert_eq!(pairs.len(), 3);
    }
}
