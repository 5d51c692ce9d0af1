//! Decayed interaction significance, per-node candidate lists and
//! intimate-window labels.
//!
//! The score of a pair at time `t` is `sum_i exp(-lambda (t - t_i))` over its
//! contacts strictly before `t`. Because the sum factors as
//! `score(t) = exp(-lambda (t - t')) * score(t')` whenever no contact falls
//! in `[t', t)`, a forward sweep only needs `(last_update, score)` per
//! neighbor; [`StreamingIndex`] relies on that.

use std::cmp::Ordering;
use std::collections::HashMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Event, NodeId, TemporalGraph};
use crate::rng::keyed_seed;

pub const DEFAULT_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignificanceEntry {
    pub neighbor: NodeId,
    pub score: f64,
}

/// Ranked neighbors of `owner` at `at_time`, most significant first.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateList {
    pub owner: NodeId,
    pub at_time: f64,
    pub capacity: usize,
    pub entries: Vec<SignificanceEntry>,
}

impl CandidateList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn neighbors(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.entries.iter().map(|e| e.neighbor)
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }
}

/// Score descending, then smaller neighbor id.
pub fn rank_order(a: &SignificanceEntry, b: &SignificanceEntry) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.neighbor.cmp(&b.neighbor))
}

pub fn initial_significance(history: &[f64], t: f64, lambda: f64) -> Result<f64> {
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(Error::Contract(format!(
            "decay rate must be positive, got {lambda}"
        )));
    }
    let mut s = 0.0;
    for &ti in history {
        if ti >= t {
            return Err(Error::Contract(format!(
                "history timestamp {ti} is not before query time {t}"
            )));
        }
        s += (-lambda * (t - ti)).exp();
    }
    Ok(s)
}

/// Unchecked form for callers that already hold a strict-past history.
#[inline]
pub(crate) fn decayed_sum(history: &[f64], t: f64, lambda: f64) -> f64 {
    history.iter().map(|&ti| (-lambda * (t - ti)).exp()).sum()
}

/// Source of per-neighbor significance scores at a query time.
pub trait NeighborScores {
    fn num_nodes(&self) -> usize;

    /// Appends every neighbor of `u` with at least one contact before `t`,
    /// ordered by neighbor id.
    fn scored_neighbors(&self, u: NodeId, t: f64, out: &mut Vec<SignificanceEntry>);
}

/// Scores computed directly from a graph's timestamp index.
#[derive(Debug, Clone, Copy)]
pub struct GraphScores<'g> {
    pub graph: &'g TemporalGraph,
    pub lambda: f64,
}

impl<'g> GraphScores<'g> {
    pub fn new(graph: &'g TemporalGraph, lambda: f64) -> Self {
        GraphScores { graph, lambda }
    }
}

impl NeighborScores for GraphScores<'_> {
    fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    fn scored_neighbors(&self, u: NodeId, t: f64, out: &mut Vec<SignificanceEntry>) {
        for (neighbor, ts) in self.graph.neighbors(u) {
            let past = &ts[..ts.partition_point(|&x| x < t)];
            if !past.is_empty() {
                out.push(SignificanceEntry {
                    neighbor,
                    score: decayed_sum(past, t, self.lambda),
                });
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Selection {
    /// The `m` highest-scoring neighbors.
    TopSignificance,
    /// `m` neighbors drawn uniformly without replacement, keyed on
    /// `(seed, owner, t)` so repeated queries agree.
    Uniform { seed: u64 },
}

/// Turns a scored neighbor set into a ranked list of at most `m` entries.
/// `scored` must be ordered by neighbor id.
pub fn select_candidates(
    mut scored: Vec<SignificanceEntry>,
    owner: NodeId,
    t: f64,
    m: usize,
    selection: Selection,
) -> CandidateList {
    match selection {
        Selection::TopSignificance => {
            if scored.len() > m {
                scored.select_nth_unstable_by(m, rank_order);
                scored.truncate(m);
            }
        }
        Selection::Uniform { seed } => {
            if scored.len() > m {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(keyed_seed(seed, &[owner as u64, t.to_bits()]));
                let mut picked: Vec<usize> = sample(&mut rng, scored.len(), m).into_vec();
                picked.sort_unstable();
                scored = picked.into_iter().map(|i| scored[i]).collect();
            }
        }
    }
    scored.sort_by(rank_order);
    CandidateList {
        owner,
        at_time: t,
        capacity: m,
        entries: scored,
    }
}

/// Candidate lists with a fixed capacity and selection rule.
#[derive(Debug, Clone, Copy)]
pub struct CandidateSource<'s, S: NeighborScores + ?Sized> {
    pub scores: &'s S,
    pub m: usize,
    pub selection: Selection,
}

impl<'s, S: NeighborScores + ?Sized> CandidateSource<'s, S> {
    pub fn new(scores: &'s S, m: usize, selection: Selection) -> Self {
        CandidateSource {
            scores,
            m,
            selection,
        }
    }

    pub fn list(&self, u: NodeId, t: f64) -> CandidateList {
        let mut scored = Vec::new();
        self.scores.scored_neighbors(u, t, &mut scored);
        select_candidates(scored, u, t, self.m, self.selection)
    }
}

/// The `m` most significant historical neighbors of `u` at `t`.
pub fn top_m_neighbors(
    g: &TemporalGraph,
    u: NodeId,
    t: f64,
    m: usize,
    lambda: f64,
) -> Result<CandidateList> {
    if m == 0 {
        return Err(Error::InvalidArgument(
            "capacity m must be at least 1".into(),
        ));
    }
    let scores = GraphScores::new(g, lambda);
    Ok(CandidateSource::new(&scores, m, Selection::TopSignificance).list(u, t))
}

/// Number of `(u, v)` contacts in `[t, t + delta)`. The contact at exactly `t`
/// counts. Callers pass the training graph so the window never reaches past
/// the training horizon.
pub fn significance_label(g: &TemporalGraph, u: NodeId, v: NodeId, t: f64, delta: f64) -> u32 {
    debug_assert!(delta > 0.0);
    g.count_in_window(u, v, t, t + delta) as u32
}

#[derive(Debug, Clone, Copy)]
struct NeighborState {
    neighbor: NodeId,
    last: f64,
    score: f64,
}

/// Forward-sweep significance index over a time-sorted event stream.
///
/// `advance_to(t)` ingests every event strictly before `t`; queries at `t`
/// then see exactly the strict-past history.
#[derive(Debug, Clone)]
pub struct StreamingIndex<'g> {
    events: &'g [Event],
    cursor: usize,
    lambda: f64,
    now: f64,
    states: Vec<Vec<NeighborState>>,
    slots: Vec<HashMap<NodeId, usize>>,
}

impl<'g> StreamingIndex<'g> {
    pub fn new(graph: &'g TemporalGraph, lambda: f64) -> Self {
        let n = graph.num_nodes();
        StreamingIndex {
            events: graph.events(),
            cursor: 0,
            lambda,
            now: f64::NEG_INFINITY,
            states: vec![Vec::new(); n],
            slots: vec![HashMap::new(); n],
        }
    }

    pub fn reset(&mut self) {
        self.cursor = 0;
        self.now = f64::NEG_INFINITY;
        self.states.iter_mut().for_each(Vec::clear);
        self.slots.iter_mut().for_each(HashMap::clear);
    }

    /// Time of the latest `advance_to` call.
    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn ingested(&self) -> usize {
        self.cursor
    }

    /// Ingests all events with timestamp `< t`. Time never moves backwards.
    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        if t < self.now {
            return Err(Error::Contract(format!(
                "streaming index cannot rewind from {} to {t}",
                self.now
            )));
        }
        while self.cursor < self.events.len() && self.events[self.cursor].t < t {
            let e = self.events[self.cursor];
            self.bump(e.u, e.v, e.t);
            self.bump(e.v, e.u, e.t);
            self.cursor += 1;
        }
        self.now = t;
        Ok(())
    }

    fn bump(&mut self, u: NodeId, v: NodeId, t: f64) {
        let states = &mut self.states[u];
        match self.slots[u].get(&v) {
            Some(&i) => {
                let st = &mut states[i];
                st.score = st.score * (-self.lambda * (t - st.last)).exp() + 1.0;
                st.last = t;
            }
            None => {
                self.slots[u].insert(v, states.len());
                states.push(NeighborState {
                    neighbor: v,
                    last: t,
                    score: 1.0,
                });
            }
        }
    }

    /// Score of `(u, v)` at the current time.
    pub fn score(&self, u: NodeId, v: NodeId) -> f64 {
        self.slots[u]
            .get(&v)
            .map_or(0.0, |&i| self.decayed(&self.states[u][i], self.now))
    }

    #[inline]
    fn decayed(&self, st: &NeighborState, t: f64) -> f64 {
        st.score * (-self.lambda * (t - st.last)).exp()
    }
}

impl NeighborScores for StreamingIndex<'_> {
    fn num_nodes(&self) -> usize {
        self.states.len()
    }

    /// Only valid for `t >= now()`: the index holds no future contacts, and
    /// contacts in `[now, t)` that were not ingested are missed.
    fn scored_neighbors(&self, u: NodeId, t: f64, out: &mut Vec<SignificanceEntry>) {
        debug_assert!(t >= self.now);
        let start = out.len();
        out.extend(self.states[u].iter().map(|st| SignificanceEntry {
            neighbor: st.neighbor,
            score: self.decayed(st, t),
        }));
        out[start..].sort_unstable_by_key(|e| e.neighbor);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn empty_history_scores_zero() {
        assert_eq!(initial_significance(&[], 3.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn two_event_history() {
        let t = 10.0;
        let s = initial_significance(&[t - 2.0, t - 1.0], t, 1.0).unwrap();
        assert!((s - 0.50321).abs() < 1e-5);
        assert!(rel(s, (-1f64).exp() + (-2f64).exp()) < 1e-15);
    }

    #[test]
    fn near_simultaneous_history_approaches_count() {
        let t = 5.0;
        let h = vec![t - 1e-12; 7];
        let s = initial_significance(&h, t, 1.0).unwrap();
        assert!((s - 7.0).abs() < 1e-9);
    }

    #[test]
    fn future_history_is_a_contract_error() {
        assert!(initial_significance(&[1.0, 5.0], 5.0, 1.0).is_err());
        assert!(initial_significance(&[1.0], 5.0, 0.0).is_err());
    }

    #[test]
    fn decay_decomposition() {
        let h = [0.0, 0.4, 1.3, 2.0];
        for &(tp, t) in &[(2.5, 3.0), (2.01, 9.0), (3.0, 3.5)] {
            let full = initial_significance(&h, t, 1.0).unwrap();
            let from_mid = (-(t - tp)).exp() * initial_significance(&h, tp, 1.0).unwrap();
            assert!(rel(full, from_mid) < 1e-12);
        }
    }

    #[test]
    fn single_neighbor_list_regardless_of_capacity() {
        let g = TemporalGraph::from_events(2, vec![Event::new(0, 1, 0.0)]).unwrap();
        for m in [1, 3, 10] {
            assert_eq!(top_m_neighbors(&g, 0, 1.0, m, 1.0).unwrap().len(), 1);
        }
        assert!(top_m_neighbors(&g, 0, 1.0, 0, 1.0).is_err());
        assert!(top_m_neighbors(&g, 0, 0.0, 3, 1.0).unwrap().is_empty());
    }

    #[test]
    fn recent_single_contact_beats_stale_bursts() {
        let t = 20.0;
        let mut events = vec![Event::new(0, 1, t - 0.1)];
        events.extend((0..5).map(|_| Event::new(0, 2, t - 10.0)));
        let g = TemporalGraph::from_events(3, events).unwrap();
        let list = top_m_neighbors(&g, 0, t, 2, 1.0).unwrap();
        assert_eq!(list.entries[0].neighbor, 1);
        assert!((list.entries[0].score - 0.9048).abs() < 1e-4);
        assert!((list.entries[1].score - 0.000227).abs() < 1e-6);
    }

    #[test]
    fn ties_break_by_smaller_id() {
        let events = vec![
            Event::new(0, 3, 1.0),
            Event::new(0, 1, 1.0),
            Event::new(0, 2, 1.0),
        ];
        let g = TemporalGraph::from_events(4, events).unwrap();
        let list = top_m_neighbors(&g, 0, 2.0, 2, 1.0).unwrap();
        assert_eq!(list.neighbors().collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn uniform_selection_is_keyed_and_ranked() {
        let events: Vec<Event> = (1..30).map(|v| Event::new(0, v, v as f64 * 0.1)).collect();
        let g = TemporalGraph::from_events(30, events).unwrap();
        let scores = GraphScores::new(&g, 1.0);
        let src = CandidateSource::new(&scores, 5, Selection::Uniform { seed: 9 });
        let a = src.list(0, 10.0);
        let b = src.list(0, 10.0);
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert!(a
            .entries
            .windows(2)
            .all(|w| rank_order(&w[0], &w[1]) == Ordering::Less));
        let other = CandidateSource::new(&scores, 5, Selection::Uniform { seed: 10 }).list(0, 10.0);
        assert_ne!(
            a.neighbors().collect::<Vec<_>>(),
            other.neighbors().collect::<Vec<_>>()
        );
    }

    #[test]
    fn labels_count_half_open_window() {
        let (t, d) = (4.0, 2.0);
        let events = vec![
            Event::new(0, 1, t),
            Event::new(0, 1, t + 0.5 * d),
            Event::new(0, 1, t + 2.0 * d),
            Event::new(0, 1, t + d),
        ];
        let g = TemporalGraph::from_events(2, events).unwrap();
        assert_eq!(significance_label(&g, 0, 1, t, d), 2);
        assert_eq!(significance_label(&g, 1, 0, t + 5.0 * d, d), 0);
    }

    #[test]
    fn labels_for_six_versus_one_interactions() {
        // (a, b) = (0, 1) six contacts in window, (a, k) = (0, 2) one
        let t = 10.0;
        let mut events: Vec<Event> = (0..6)
            .map(|i| Event::new(0, 1, t + i as f64 * 0.1))
            .collect();
        events.push(Event::new(0, 2, t));
        events.push(Event::new(0, 2, t + 5.0));
        let g = TemporalGraph::from_events(3, events).unwrap();
        assert_eq!(significance_label(&g, 0, 1, t, 1.0), 6);
        assert_eq!(significance_label(&g, 0, 2, t, 1.0), 1);
    }

    #[test]
    fn streaming_matches_direct_scores() {
        let events = vec![
            Event::new(0, 1, 0.0),
            Event::new(0, 1, 0.5),
            Event::new(1, 2, 0.7),
            Event::new(0, 2, 1.0),
            Event::new(0, 1, 1.0),
            Event::new(2, 0, 3.0),
        ];
        let g = TemporalGraph::from_events(3, events).unwrap();
        let direct = GraphScores::new(&g, 1.0);
        let mut stream = StreamingIndex::new(&g, 1.0);
        for &t in &[0.0, 0.5, 0.9, 1.0, 1.5, 3.0, 4.0] {
            stream.advance_to(t).unwrap();
            for u in 0..3 {
                let mut a = Vec::new();
                let mut b = Vec::new();
                direct.scored_neighbors(u, t, &mut a);
                stream.scored_neighbors(u, t, &mut b);
                assert_eq!(a.len(), b.len());
                for (x, y) in a.iter().zip(&b) {
                    assert_eq!(x.neighbor, y.neighbor);
                    assert!(rel(y.score, x.score) < 1e-12);
                }
            }
        }
        assert!(stream.advance_to(1.0).is_err());
    }
}
