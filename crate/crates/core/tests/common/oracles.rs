use rand::Rng;
use stgnn::evaluation::ScoredPair;

pub fn brute_auc(pairs: &[ScoredPair]) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for p in pairs.iter().filter(|p| p.positive) {
        for n in pairs.iter().filter(|p| !p.positive) {
            sum += if p.score > n.score {
                1.0
            } else if p.score == n.score {
                0.5
            } else {
                0.0
            };
            count += 1;
        }
    }
    sum / count as f64
}

/// Rank of each positive found by counting what precedes it.
pub fn hand_map(pairs: &[ScoredPair]) -> f64 {
    let before = |a: &ScoredPair, b: &ScoredPair| {
        a.score > b.score || (a.score == b.score && (a.u, a.v) < (b.u, b.v))
    };
    let mut ranks: Vec<(usize, bool)> = pairs
        .iter()
        .map(|p| {
            (
                pairs.iter().filter(|q| before(q, p)).count() + 1,
                p.positive,
            )
        })
        .collect();
    ranks.sort();
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, pos) in ranks {
        if pos {
            hits += 1;
            sum += hits as f64 / rank as f64;
        }
    }
    sum / hits as f64
}

pub fn random_pairs(seed: u64) -> Vec<ScoredPair> {
    let mut r = super::rng(seed);
    let n = r.random_range(2..=200);
    let levels = r.random_range(1..20);
    let mut pairs: Vec<ScoredPair> = (0..n)
        .map(|i| {
            ScoredPair::new(
                i / 7,
                1000 + i,
                f64::from(r.random_range(0..levels)) / 4.0,
                r.random_bool(0.4),
            )
        })
        .collect();
    pairs[0].positive = true;
    pairs[1].positive = false;
    pairs
}
