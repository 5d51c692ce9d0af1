//! Significance-weighted cosine loss, exact batch gradients, Adam and the
//! chronological training sweep.
//!
//! Every training contact `(u, v, t)` is a positive sample labelled with the
//! number of `(u, v)` contacts in its window `[t, t + delta)`. Each positive is
//! paired with one negative `(u, w, t)` where `w` has no contact with `u` in
//! that window. Positives lose `(1 - cos) * s_delta`; negatives lose
//! `max(0, cos) * s_bar`, with `s_bar` the mean `s_delta` over the batch's
//! positives.

use std::time::Instant;

use log::{debug, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, GradAccumulator, Tape};
use crate::error::{Error, Result};
use crate::graph::{NodeId, TemporalGraph};
use crate::linalg::{dot, norm};
use crate::model::{cosine, ModelDims, ModelParams, NodeFeatures, TENSOR_NAMES};
use crate::rng::{stream_rng, Stream};
use crate::significance::{
    significance_label, CandidateSource, GraphScores, NeighborScores, Selection, StreamingIndex,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSample {
    pub u: NodeId,
    pub v: NodeId,
    pub t: f64,
    pub label: Label,
    pub s_delta: u32,
}

impl TrainSample {
    pub fn positive(u: NodeId, v: NodeId, t: f64, s_delta: u32) -> Self {
        debug_assert!(s_delta >= 1);
        TrainSample {
            u,
            v,
            t,
            label: Label::Positive,
            s_delta,
        }
    }

    pub fn negative(u: NodeId, w: NodeId, t: f64) -> Self {
        TrainSample {
            u,
            v: w,
            t,
            label: Label::Negative,
            s_delta: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Positives per mini-batch; each brings its negative along.
    pub batch_size: usize,
    /// Stop once the epoch loss has not improved for this many epochs (0 disables).
    pub patience: usize,
    pub m: usize,
    pub p: f64,
    pub lambda: f64,
    pub seed: u64,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub use_significant_selection: bool,
    pub use_intimate_window: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            epochs: 50,
            batch_size: 200,
            patience: 10,
            m: 10,
            p: 0.5,
            lambda: 1.0,
            seed: 0,
            input_dim: 128,
            hidden_dim: 16,
            output_dim: 16,
            use_significant_selection: true,
            use_intimate_window: true,
        }
    }
}

impl TrainConfig {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            input: self.input_dim,
            hidden: self.hidden_dim,
            output: self.output_dim,
            capacity: self.m,
        }
    }

    pub fn selection(&self) -> Selection {
        if self.use_significant_selection {
            Selection::TopSignificance
        } else {
            Selection::Uniform {
                seed: stream_rng(self.seed, Stream::Selection).random(),
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.p) {
            return bad(format!("p must lie in [0, 1), got {}", self.p));
        }
        if self.lambda.is_nan() || self.lambda <= 0.0 {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.m == 0 || self.batch_size == 0 || self.epochs == 0 {
            return bad("m, batch_size and epochs must be at least 1".into());
        }
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return bad("layer widths must be at least 1".into());
        }
        Ok(())
    }
}

/// One negative per positive, aligned by index; `None` where no valid
/// partner was found within the retry budget.
pub fn sample_negatives<R: Rng + ?Sized>(
    g: &TemporalGraph,
    positives: &[TrainSample],
    delta: f64,
    rng: &mut R,
) -> Vec<Option<TrainSample>> {
    const MAX_TRIES: usize = 100;
    let n = g.num_nodes();
    let mut skipped = 0;
    let out: Vec<Option<TrainSample>> = positives
        .iter()
        .map(|p| {
            let found = (n > 1)
                .then(|| {
                    (0..MAX_TRIES).find_map(|_| {
                        let w = rng.random_range(0..n);
                        (w != p.u && significance_label(g, p.u, w, p.t, delta) == 0).then_some(w)
                    })
                })
                .flatten();
            if found.is_none() {
                skipped += 1;
            }
            found.map(|w| TrainSample::negative(p.u, w, p.t))
        })
        .collect();
    if skipped > 0 {
        warn!("skipped {skipped} negative sample(s): no unlinked partner found");
    }
    out
}

pub fn significance_loss(h_u: &[f64], h_v: &[f64], s_delta: u32, s_bar: f64) -> f64 {
    let c = cosine(h_u, h_v);
    if s_delta >= 1 {
        (1.0 - c) * s_delta as f64
    } else {
        c.max(0.0) * s_bar
    }
}

/// `(cos, dcos/da, dcos/db)`; zero gradient where the cosine is guarded to 0.
pub fn cosine_with_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let (na, nb) = (norm(a), norm(b));
    if na < 1e-12 || nb < 1e-12 {
        return (0.0, vec![0.0; a.len()], vec![0.0; b.len()]);
    }
    let c = dot(a, b) / (na * nb);
    let ga = a
        .iter()
        .zip(b)
        .map(|(&ai, &bi)| bi / (na * nb) - c * ai / (na * na))
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(&ai, &bi)| ai / (na * nb) - c * bi / (nb * nb))
        .collect();
    (c, ga, gb)
}

/// Loss and its gradient with respect to both embeddings.
pub fn loss_with_grad(
    h_u: &[f64],
    h_v: &[f64],
    s_delta: u32,
    s_bar: f64,
) -> (f64, Vec<f64>, Vec<f64>) {
    let (c, mut gu, mut gv) = cosine_with_grad(h_u, h_v);
    let (loss, scale) = if s_delta >= 1 {
        let w = s_delta as f64;
        ((1.0 - c) * w, -w)
    } else if c > 0.0 {
        (c * s_bar, s_bar)
    } else {
        (0.0, 0.0)
    };
    gu.iter_mut().for_each(|x| *x *= scale);
    gv.iter_mut().for_each(|x| *x *= scale);
    (loss, gu, gv)
}

/// Mean `s_delta` over positives; 1 when there are none.
pub fn batch_s_bar(samples: &[TrainSample]) -> f64 {
    let (sum, count) = samples
        .iter()
        .filter(|s| s.label == Label::Positive)
        .fold((0u64, 0u64), |(s, c), x| (s + x.s_delta as u64, c + 1));
    if count == 0 {
        1.0
    } else {
        sum as f64 / count as f64
    }
}

/// Forward and backward for samples sharing one query time. Gradients of
/// `scale * sum(loss)` go into `acc`; returns the unscaled loss sum.
fn accumulate_same_time<S: NeighborScores + ?Sized>(
    enc: &Encoder<'_>,
    source: &CandidateSource<'_, S>,
    t: f64,
    samples: &[TrainSample],
    s_bar: f64,
    scale: f64,
    acc: &mut GradAccumulator,
) -> f64 {
    let mut tape = Tape::new(t);
    let mut total = 0.0;
    for s in samples {
        let iu = tape.output(enc, source, s.u);
        let iv = tape.output(enc, source, s.v);
        let (loss, mut gu, mut gv) =
            loss_with_grad(tape.embedding(iu), tape.embedding(iv), s.s_delta, s_bar);
        total += loss;
        gu.iter_mut().for_each(|x| *x *= scale);
        gv.iter_mut().for_each(|x| *x *= scale);
        tape.add_output_grad(iu, &gu);
        tape.add_output_grad(iv, &gv);
    }
    tape.backward(enc, acc);
    total
}

fn check_finite(grads: &ModelParams) -> Result<()> {
    for (name, tensor) in TENSOR_NAMES.iter().zip(grads.tensors()) {
        if let Some(index) = tensor.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient {
                tensor: name,
                index,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BackwardOptions {
    /// Block gradient flow into `beta` through the softmax.
    pub detach_beta: bool,
}

/// Mean batch loss and its exact gradient, with candidate lists read from
/// `source` at each sample's own time. `s_bar` is taken from the batch.
pub fn batch_gradients<S: NeighborScores + ?Sized>(
    batch: &[TrainSample],
    source: &CandidateSource<'_, S>,
    feats: &NodeFeatures,
    params: &ModelParams,
    opts: BackwardOptions,
) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut order: Vec<&TrainSample> = batch.iter().collect();
    order.sort_by(|a, b| a.t.total_cmp(&b.t));
    let s_bar = batch_s_bar(batch);
    let scale = 1.0 / batch.len() as f64;
    let enc = Encoder::new(params, feats);
    let mut acc = GradAccumulator::new(params, feats.num_nodes()).detach_beta(opts.detach_beta);
    let mut total = 0.0;
    let mut start = 0;
    while start < order.len() {
        let t = order[start].t;
        let end = start + order[start..].iter().take_while(|s| s.t == t).count();
        let group: Vec<TrainSample> = order[start..end].iter().map(|&&s| s).collect();
        total += accumulate_same_time(&enc, source, t, &group, s_bar, scale, &mut acc);
        start = end;
    }
    let grads = acc.finish(feats);
    check_finite(&grads)?;
    Ok((total * scale, grads))
}

/// [`batch_gradients`] over top-`m` candidate lists read straight from `g`.
pub fn backward(
    batch: &[TrainSample],
    g: &TemporalGraph,
    feats: &NodeFeatures,
    params: &ModelParams,
    config: &TrainConfig,
) -> Result<(f64, ModelParams)> {
    let scores = GraphScores::new(g, config.lambda);
    let source = CandidateSource::new(&scores, config.m, config.selection());
    batch_gradients(batch, &source, feats, params, BackwardOptions::default())
}

/// Mean batch loss by plain forward evaluation; the reference for
/// finite-difference checks.
pub fn batch_loss<S: NeighborScores + ?Sized>(
    batch: &[TrainSample],
    source: &CandidateSource<'_, S>,
    feats: &NodeFeatures,
    params: &ModelParams,
) -> Result<f64> {
    let s_bar = batch_s_bar(batch);
    let mut total = 0.0;
    for s in batch {
        let hu = crate::model::forward_with(source, feats, params, s.u, s.t)?;
        let hv = crate::model::forward_with(source, feats, params, s.v, s.t)?;
        total += significance_loss(&hu.vector, &hv.vector, s.s_delta, s_bar);
    }
    Ok(total / batch.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam update, in place.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, lr: f64) {
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bc1 = 1.0 - b1.powi(state.step as i32);
    let bc2 = 1.0 - b2.powi(state.step as i32);
    let m_all = state.m.tensors_mut();
    let v_all = state.v.tensors_mut();
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(m_all)
        .zip(v_all)
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub negatives_skipped: usize,
    pub stopped_early: bool,
}

/// Positive samples for every training contact, in time order. With the
/// intimate window disabled every label is 1.
pub fn positive_samples(g: &TemporalGraph, delta: f64, use_window: bool) -> Vec<TrainSample> {
    g.events()
        .iter()
        .map(|e| {
            let s = if use_window {
                significance_label(g, e.u, e.v, e.t, delta)
            } else {
                1
            };
            TrainSample::positive(e.u, e.v, e.t, s)
        })
        .collect()
}

/// Trains from a fresh initialization drawn from the config seed.
///
/// `delta` is the intimate-window size; it defines both the positive labels
/// and the exclusion window for negatives.
pub fn train(
    g_train: &TemporalGraph,
    feats: &NodeFeatures,
    config: &TrainConfig,
    delta: f64,
) -> Result<TrainOutcome> {
    config.validate()?;
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Config(format!(
            "window size must be positive, got {delta}"
        )));
    }
    if feats.num_nodes() != g_train.num_nodes() || feats.dim() != config.input_dim {
        return Err(Error::Dimension(format!(
            "features {}x{} vs graph with {} nodes and input width {}",
            feats.num_nodes(),
            feats.dim(),
            g_train.num_nodes(),
            config.input_dim
        )));
    }
    let mut params = ModelParams::init(config.dims(), &mut stream_rng(config.seed, Stream::Init));
    let mut adam = AdamState::new(&params);
    let mut neg_rng = stream_rng(config.seed, Stream::TrainNegatives);
    let positives = positive_samples(g_train, delta, config.use_intimate_window);
    if positives.is_empty() {
        return Err(Error::InvalidArgument(
            "training graph has no events".into(),
        ));
    }
    let selection = config.selection();
    let mut index = StreamingIndex::new(g_train, config.lambda);

    let started = Instant::now();
    let mut history = Vec::new();
    let mut negatives_skipped = 0;
    let mut best = f64::INFINITY;
    let mut best_epoch = 0;
    let mut stopped_early = false;

    for epoch in 0..config.epochs {
        let negatives = sample_negatives(g_train, &positives, delta, &mut neg_rng);
        negatives_skipped += negatives.iter().filter(|n| n.is_none()).count();
        index.reset();
        let mut epoch_loss = 0.0;
        let mut epoch_count = 0usize;

        for (b, (pos, neg)) in positives
            .chunks(config.batch_size)
            .zip(negatives.chunks(config.batch_size))
            .enumerate()
        {
            // positives are time-sorted and each negative sits at its positive's time
            let mut batch = Vec::with_capacity(pos.len() * 2);
            for (p, n) in pos.iter().zip(neg) {
                batch.push(*p);
                batch.extend(n);
            }
            let s_bar = batch_s_bar(&batch);
            let scale = 1.0 / batch.len() as f64;
            let enc = Encoder::new(&params, feats);
            let mut acc = GradAccumulator::new(&params, feats.num_nodes());
            let mut batch_loss = 0.0;
            let mut start = 0;
            while start < batch.len() {
                let t = batch[start].t;
                let end = start + batch[start..].iter().take_while(|s| s.t == t).count();
                index.advance_to(t)?;
                let source = CandidateSource::new(&index, config.m, selection);
                batch_loss += accumulate_same_time(
                    &enc,
                    &source,
                    t,
                    &batch[start..end],
                    s_bar,
                    scale,
                    &mut acc,
                );
                start = end;
            }
            let grads = acc.finish(feats);
            if !batch_loss.is_finite() || check_finite(&grads).is_err() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    last_finite: Box::new(params),
                });
            }
            adam_step(&mut params, &grads, &mut adam, config.lr);
            epoch_loss += batch_loss;
            epoch_count += batch.len();
        }

        let mean_loss = epoch_loss / epoch_count as f64;
        debug!("epoch {epoch}: mean loss {mean_loss:.6}");
        history.push(EpochRecord {
            epoch,
            mean_loss,
            wall_time: started.elapsed().as_secs_f64(),
        });
        if mean_loss < best * (1.0 - 1e-4) {
            best = mean_loss;
            best_epoch = epoch;
        } else if config.patience > 0 && epoch - best_epoch >= config.patience {
            stopped_early = true;
            break;
        }
    }

    Ok(TrainOutcome {
        params,
        history,
        negatives_skipped,
        stopped_early,
    })
}
