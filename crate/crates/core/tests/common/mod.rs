#![allow(dead_code)]

pub mod grad;
pub mod oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stgnn::{Event, TemporalGraph};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n_events` contacts among `n` nodes, uniform in `[0, horizon)`, times on a
/// coarse grid so repeats and ties occur.
pub fn random_events(seed: u64, n: usize, n_events: usize, horizon: f64) -> Vec<Event> {
    let mut r = rng(seed);
    (0..n_events)
        .map(|_| {
            let u = r.random_range(0..n);
            let mut v = r.random_range(0..n - 1);
            if v >= u {
                v += 1;
            }
            let t = (r.random_range(0.0..horizon) * 100.0).floor() / 100.0;
            Event::new(u, v, t)
        })
        .collect()
}

pub fn random_graph(seed: u64, n: usize, n_events: usize, horizon: f64) -> TemporalGraph {
    TemporalGraph::from_events(n, random_events(seed, n, n_events, horizon)).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
