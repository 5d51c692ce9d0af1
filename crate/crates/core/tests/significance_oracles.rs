mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use stgnn::significance::{initial_significance, top_m_neighbors};
use stgnn::TemporalGraph;

/// Score every neighbor the slow way, sort, cut.
fn brute_top_m(g: &TemporalGraph, u: usize, t: f64, m: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = (0..g.num_nodes())
        .filter(|&w| w != u)
        .filter_map(|w| {
            let past: Vec<f64> = g
                .events()
                .iter()
                .filter(|e| e.key() == stgnn::graph::pair_key(u, w) && e.t < t)
                .map(|e| e.t)
                .collect();
            (!past.is_empty()).then(|| (w, past.iter().map(|ti| (-(t - ti)).exp()).sum()))
        })
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    all.truncate(m);
    all
}

#[test]
fn top_m_matches_brute_force_sort() {
    let g = common::random_graph(31, 25, 1500, 40.0);
    let mut r = common::rng(32);
    for _ in 0..100 {
        let u = r.random_range(0..25);
        let t = r.random_range(0.0..45.0);
        let list = top_m_neighbors(&g, u, t, 5, 1.0).unwrap();
        let expected = brute_top_m(&g, u, t, 5);
        assert_eq!(list.len(), expected.len());
        for (entry, (w, s)) in list.entries.iter().zip(&expected) {
            assert_eq!(entry.neighbor, *w, "node {u} at {t}");
            assert!(common::rel_err(entry.score, *s) < 1e-12);
        }
    }
}

#[test]
fn top_m_ignores_event_input_order() {
    let events = common::random_events(33, 12, 400, 20.0);
    let g = TemporalGraph::from_events(12, events.clone()).unwrap();
    let mut shuffled = events;
    shuffled.shuffle(&mut common::rng(34));
    let h = TemporalGraph::from_events(12, shuffled).unwrap();
    for u in 0..12 {
        for t in [0.5, 7.25, 13.0, 25.0] {
            assert_eq!(
                top_m_neighbors(&g, u, t, 4, 1.0).unwrap(),
                top_m_neighbors(&h, u, t, 4, 1.0).unwrap()
            );
        }
    }
}

proptest! {
    #[test]
    fn score_is_bounded_and_decays(
        mut history in prop::collection::vec(0.0f64..50.0, 0..40),
        gap in 1e-6f64..10.0,
        later in 0.0f64..10.0,
    ) {
        history.sort_by(f64::total_cmp);
        let t = history.last().copied().unwrap_or(0.0) + gap;
        let s = initial_significance(&history, t, 1.0).unwrap();
        prop_assert!(s >= 0.0);
        prop_assert!(s <= history.len() as f64);
        let s_later = initial_significance(&history, t + later, 1.0).unwrap();
        prop_assert!(s_later <= s);
    }
}
