//! Continuous power-law fit of pairwise inter-event times and the mapping
//! from an event-coverage proportion `p` to an intimate-window size.
//!
//! The exponent is the continuous maximum-likelihood estimate for a given
//! lower cutoff; the cutoff is the candidate minimizing the Kolmogorov-Smirnov
//! distance between the empirical and fitted tail distributions.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::TemporalGraph;

/// Maximum number of distinct values tried as the lower cutoff.
pub const MAX_XMIN_CANDIDATES: usize = 250;

/// Smallest sample accepted by [`fit_power_law`].
pub const MIN_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub alpha: f64,
    pub xmin: f64,
    /// Density normalization `(alpha - 1) * xmin^(1 - alpha)`.
    pub c: f64,
    pub n_tail: usize,
    pub ks_distance: f64,
}

impl PowerLawFit {
    pub fn new(alpha: f64, xmin: f64, n_tail: usize, ks_distance: f64) -> Result<Self> {
        if !(alpha > 1.0 && alpha.is_finite()) {
            return Err(Error::Fit(format!("alpha must exceed 1, got {alpha}")));
        }
        if !(xmin > 0.0 && xmin.is_finite()) {
            return Err(Error::Fit(format!("xmin must be positive, got {xmin}")));
        }
        Ok(PowerLawFit {
            alpha,
            xmin,
            c: (alpha - 1.0) * xmin.powf(1.0 - alpha),
            n_tail,
            ks_distance,
        })
    }

    /// Fitted complementary CDF, `P(X >= x)` for `x >= xmin`.
    pub fn ccdf(&self, x: f64) -> f64 {
        if x <= self.xmin {
            1.0
        } else {
            (x / self.xmin).powf(1.0 - self.alpha)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterEventTimes {
    pub intervals: Vec<f64>,
    pub zero_gaps_dropped: usize,
}

/// Consecutive gaps between repeat contacts of every pair, pooled across pairs.
pub fn collect_inter_event_times(g: &TemporalGraph) -> Result<InterEventTimes> {
    let mut intervals = Vec::new();
    let mut zero_gaps_dropped = 0;
    let mut any_repeat = false;
    for (_, ts) in g.pairs() {
        if ts.len() < 2 {
            continue;
        }
        any_repeat = true;
        for w in ts.windows(2) {
            let gap = w[1] - w[0];
            if gap > 0.0 {
                intervals.push(gap);
            } else {
                zero_gaps_dropped += 1;
            }
        }
    }
    if !any_repeat {
        return Err(Error::Fit(
            "no pair has two or more contacts; supply the window size explicitly".into(),
        ));
    }
    if zero_gaps_dropped > 0 {
        warn!("dropped {zero_gaps_dropped} zero-length inter-event gap(s)");
    }
    Ok(InterEventTimes {
        intervals,
        zero_gaps_dropped,
    })
}

/// Continuous MLE of the exponent with the cutoff fixed at `xmin`, over the
/// values `>= xmin`.
pub fn fit_with_xmin(xs: &[f64], xmin: f64) -> Result<PowerLawFit> {
    if xmin.is_nan() || xmin <= 0.0 {
        return Err(Error::Fit(format!("xmin must be positive, got {xmin}")));
    }
    let mut tail: Vec<f64> = xs.iter().copied().filter(|&x| x >= xmin).collect();
    if tail.is_empty() {
        return Err(Error::Fit(format!("no samples at or above xmin={xmin}")));
    }
    let log_sum: f64 = tail.iter().map(|&x| (x / xmin).ln()).sum();
    if log_sum <= 0.0 {
        return Err(Error::Fit("all tail samples equal xmin".into()));
    }
    let alpha = 1.0 + tail.len() as f64 / log_sum;
    tail.sort_by(f64::total_cmp);
    let ks = ks_distance(&tail, alpha, xmin);
    PowerLawFit::new(alpha, xmin, tail.len(), ks)
}

/// KS distance between the empirical CDF of a sorted tail and the fitted CDF.
fn ks_distance(sorted_tail: &[f64], alpha: f64, xmin: f64) -> f64 {
    let n = sorted_tail.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted_tail.iter().enumerate() {
        let fitted = 1.0 - (x / xmin).powf(1.0 - alpha);
        let below = i as f64 / n;
        let above = (i + 1) as f64 / n;
        d = d.max((fitted - below).abs()).max((above - fitted).abs());
    }
    d
}

/// Picks up to `cap` candidate cutoff indices into the sorted sample: the
/// first occurrence of each distinct value, quantile-subsampled when there are
/// more than `cap`. The largest distinct value is never a candidate since it
/// leaves no spread for the estimator.
fn candidate_starts(sorted: &[f64], cap: usize) -> Vec<usize> {
    let mut starts = Vec::new();
    for i in 0..sorted.len() {
        if i == 0 || sorted[i] != sorted[i - 1] {
            starts.push(i);
        }
    }
    starts.pop();
    if starts.len() <= cap {
        return starts;
    }
    let last = starts.len() - 1;
    let mut picked: Vec<usize> = (0..cap)
        .map(|k| starts[(k * last + (cap - 1) / 2) / (cap - 1)])
        .collect();
    picked.dedup();
    picked
}

/// Fits a continuous power law, choosing `xmin` by KS minimization. Ties in
/// KS distance go to the smaller `xmin`.
pub fn fit_power_law(xs: &[f64]) -> Result<PowerLawFit> {
    if xs.len() < MIN_SAMPLES {
        return Err(Error::Fit(format!(
            "need at least {MIN_SAMPLES} samples, got {}",
            xs.len()
        )));
    }
    if let Some(bad) = xs.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::Fit(format!(
            "samples must be positive and finite, got {bad}"
        )));
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::Fit("all samples are identical".into()));
    }

    // suffix sums of ln x so each candidate's log-likelihood term is O(1)
    let mut suffix_ln = vec![0.0; sorted.len() + 1];
    for i in (0..sorted.len()).rev() {
        suffix_ln[i] = suffix_ln[i + 1] + sorted[i].ln();
    }

    let mut best: Option<PowerLawFit> = None;
    for start in candidate_starts(&sorted, MAX_XMIN_CANDIDATES) {
        let xmin = sorted[start];
        let tail = &sorted[start..];
        let n_tail = tail.len();
        let log_sum = suffix_ln[start] - n_tail as f64 * xmin.ln();
        if log_sum <= 0.0 {
            continue;
        }
        let alpha = 1.0 + n_tail as f64 / log_sum;
        let ks = ks_distance(tail, alpha, xmin);
        // candidates are visited in increasing xmin, strict < keeps the smaller on ties
        if best.is_none_or(|b| ks < b.ks_distance) {
            best = Some(PowerLawFit::new(alpha, xmin, n_tail, ks)?);
        }
    }
    best.ok_or_else(|| Error::Fit("no admissible xmin candidate".into()))
}

/// Window size expected to cover a proportion `p` of inter-event times:
/// `((alpha - 1) / (c (1 - p)))^(1 / (alpha - 1))`.
pub fn intimate_window_size(fit: &PowerLawFit, p: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "coverage proportion must lie in [0, 1), got {p}"
        )));
    }
    let a1 = fit.alpha - 1.0;
    Ok((a1 / (fit.c * (1.0 - p))).powf(1.0 / a1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Event;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn intervals_from_single_pair() {
        let g = TemporalGraph::from_events(
            2,
            vec![
                Event::new(0, 1, 0.0),
                Event::new(0, 1, 1.0),
                Event::new(0, 1, 3.0),
            ],
        )
        .unwrap();
        let iet = collect_inter_event_times(&g).unwrap();
        assert_eq!(iet.intervals, vec![1.0, 2.0]);
    }

    #[test]
    fn intervals_pool_across_pairs() {
        let g = TemporalGraph::from_events(
            4,
            vec![
                Event::new(0, 1, 0.0),
                Event::new(0, 1, 5.0),
                Event::new(2, 3, 2.0),
                Event::new(2, 3, 3.0),
            ],
        )
        .unwrap();
        let mut got = collect_inter_event_times(&g).unwrap().intervals;
        got.sort_by(f64::total_cmp);
        assert_eq!(got, vec![1.0, 5.0]);
    }

    #[test]
    fn zero_gaps_are_dropped_and_counted() {
        let g = TemporalGraph::from_events(
            2,
            vec![
                Event::new(0, 1, 2.0),
                Event::new(0, 1, 2.0),
                Event::new(0, 1, 4.0),
            ],
        )
        .unwrap();
        let iet = collect_inter_event_times(&g).unwrap();
        assert_eq!(iet.intervals, vec![2.0]);
        assert_eq!(iet.zero_gaps_dropped, 1);
    }

    #[test]
    fn no_repeat_pairs_is_an_error() {
        let g = TemporalGraph::from_events(3, vec![Event::new(0, 1, 0.0), Event::new(1, 2, 1.0)])
            .unwrap();
        assert!(collect_inter_event_times(&g).is_err());
    }

    #[test]
    fn forced_xmin_closed_form() {
        let fit = fit_with_xmin(&[1.0, 2.0, 4.0], 1.0).unwrap();
        let expect = 1.0 + 3.0 / (2f64.ln() + 4f64.ln());
        assert!((fit.alpha - expect).abs() < 1e-12);
        assert!((fit.alpha - 2.4427).abs() < 1e-3);
        assert_eq!(fit.n_tail, 3);
    }

    #[test]
    fn identical_samples_are_degenerate() {
        assert!(fit_power_law(&[3.0; 20]).is_err());
        assert!(fit_power_law(&[1.0; 5]).is_err());
        assert!(fit_power_law(&[1.0, -2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]).is_err());
    }

    #[test]
    fn normalization_invariant_holds() {
        let fit = PowerLawFit::new(2.7, 0.3, 10, 0.0).unwrap();
        let c = (2.7 - 1.0) * 0.3f64.powf(1.0 - 2.7);
        assert!(rel(fit.c, c) < 1e-12);
        assert!(PowerLawFit::new(1.0, 1.0, 1, 0.0).is_err());
        assert!(PowerLawFit::new(2.0, 0.0, 1, 0.0).is_err());
    }

    #[test]
    fn window_examples() {
        let f = PowerLawFit::new(2.0, 1.0, 1, 0.0).unwrap();
        assert!(rel(intimate_window_size(&f, 0.0).unwrap(), 1.0) < 1e-12);
        assert!(rel(intimate_window_size(&f, 0.5).unwrap(), 2.0) < 1e-12);
        let f = PowerLawFit::new(3.0, 2.0, 1, 0.0).unwrap();
        assert!(rel(intimate_window_size(&f, 0.75).unwrap(), 4.0) < 1e-12);
        assert!(intimate_window_size(&f, 1.0).is_err());
        assert!(intimate_window_size(&f, -0.1).is_err());
    }

    #[test]
    fn window_is_strictly_increasing_in_p() {
        let f = PowerLawFit::new(2.3, 0.7, 1, 0.0).unwrap();
        let mut prev = intimate_window_size(&f, 0.0).unwrap();
        assert!(rel(prev, f.xmin) < 1e-12);
        for k in 1..100 {
            let d = intimate_window_size(&f, k as f64 / 100.0).unwrap();
            assert!(d > prev);
            prev = d;
        }
    }

    #[test]
    fn candidate_grid_is_capped_and_sorted() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        let c = candidate_starts(&xs, MAX_XMIN_CANDIDATES);
        assert!(c.len() <= MAX_XMIN_CANDIDATES);
        assert_eq!(c[0], 0);
        assert!(c.windows(2).all(|w| w[0] < w[1]));
        assert!(*c.last().unwrap() < 999);
    }

    fn pareto_sample(rng: &mut ChaCha8Rng, n: usize, alpha: f64, xmin: f64) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let u: f64 = 1.0 - rng.random::<f64>();
                xmin * u.powf(-1.0 / (alpha - 1.0))
            })
            .collect()
    }

    #[test]
    fn recovers_exponent_from_synthetic_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs = pareto_sample(&mut rng, 10_000, 2.5, 1.0);
        let fit = fit_power_law(&xs).unwrap();
        assert!((2.4..=2.6).contains(&fit.alpha), "alpha={}", fit.alpha);
        assert!(fit.xmin >= 1.0);
    }

    #[test]
    fn estimator_error_shrinks_with_sample_size() {
        // mean absolute error over repeated draws, fixed xmin to isolate the estimator
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut errs = Vec::new();
        for n in [100usize, 1_000, 10_000] {
            let trials = 40;
            let mut total = 0.0;
            for _ in 0..trials {
                let xs = pareto_sample(&mut rng, n, 2.5, 1.0);
                total += (fit_with_xmin(&xs, 1.0).unwrap().alpha - 2.5).abs();
            }
            errs.push(total / trials as f64);
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }
}
