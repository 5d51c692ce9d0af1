//! The two-layer significance-weighted aggregation network.
//!
//! Each layer maps a node's previous representation through `W_self` and adds
//! the representations of its ranked candidate neighbors mapped through
//! `W_nbr`, weighted by a softmax over `score_i * beta_i` where `beta_i` is a
//! learned correction for rank `i`. The hidden layer uses ReLU; the output
//! layer is linear so cosine similarities cover `[-1, 1]`. One `beta` vector is
//! shared by both layers and every candidate list is taken at the query time.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeId, TemporalGraph};
use crate::linalg::{dot, norm, Matrix};
use crate::significance::{CandidateSource, GraphScores, NeighborScores, Selection};

/// Layer widths and history capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub capacity: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            input: 128,
            hidden: 16,
            output: 16,
            capacity: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub w1_self: Matrix,
    pub w1_nbr: Matrix,
    pub w2_self: Matrix,
    pub w2_nbr: Matrix,
    pub beta: Vec<f64>,
}

pub const TENSOR_NAMES: [&str; 5] = ["w1_self", "w1_nbr", "w2_self", "w2_nbr", "beta"];

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        ModelParams {
            w1_self: Matrix::zeros(dims.input, dims.hidden),
            w1_nbr: Matrix::zeros(dims.input, dims.hidden),
            w2_self: Matrix::zeros(dims.hidden, dims.output),
            w2_nbr: Matrix::zeros(dims.hidden, dims.output),
            beta: vec![0.0; dims.capacity],
        }
    }

    /// Glorot-uniform weights, `beta = 0` (plain softmax over raw scores
    /// is then uniform; training moves it).
    pub fn init<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Self {
        let mut glorot = |rows: usize, cols: usize| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| rng.random_range(-a..a))
        };
        ModelParams {
            w1_self: glorot(dims.input, dims.hidden),
            w1_nbr: glorot(dims.input, dims.hidden),
            w2_self: glorot(dims.hidden, dims.output),
            w2_nbr: glorot(dims.hidden, dims.output),
            beta: vec![0.0; dims.capacity],
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            input: self.w1_self.rows(),
            hidden: self.w1_self.cols(),
            output: self.w2_self.cols(),
            capacity: self.beta.len(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams::zeros(self.dims())
    }

    /// The five tensors as flat slices, in [`TENSOR_NAMES`] order.
    pub fn tensors(&self) -> [&[f64]; 5] {
        [
            self.w1_self.as_slice(),
            self.w1_nbr.as_slice(),
            self.w2_self.as_slice(),
            self.w2_nbr.as_slice(),
            &self.beta,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.w1_self.as_mut_slice(),
            self.w1_nbr.as_mut_slice(),
            self.w2_self.as_mut_slice(),
            self.w2_nbr.as_mut_slice(),
            &mut self.beta,
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }

    fn check_shapes(&self) -> Result<()> {
        let d = self.dims();
        let ok = self.w1_nbr.rows() == d.input
            && self.w1_nbr.cols() == d.hidden
            && self.w2_self.rows() == d.hidden
            && self.w2_nbr.rows() == d.hidden
            && self.w2_nbr.cols() == d.output;
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension("inconsistent parameter shapes".into()))
        }
    }
}

/// Frozen input features, one row per node, entries in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFeatures {
    pub x: Matrix,
}

impl NodeFeatures {
    pub fn random<R: Rng + ?Sized>(num_nodes: usize, dim: usize, rng: &mut R) -> Self {
        NodeFeatures {
            x: Matrix::from_fn(num_nodes, dim, |_, _| rng.random_range(-1.0..=1.0)),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.x.rows()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    #[inline]
    pub fn row(&self, u: NodeId) -> &[f64] {
        self.x.row(u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub node: NodeId,
    pub at_time: f64,
    pub vector: Vec<f64>,
}

/// Softmax of `scores[i] * beta[i]` over the `k = scores.len()` ranks present.
/// Panics on `k == 0` or `k > beta.len()`; callers skip empty neighbor sets.
pub fn phi(scores: &[f64], beta: &[f64]) -> Vec<f64> {
    assert!(!scores.is_empty(), "phi over an empty candidate list");
    assert!(
        scores.len() <= beta.len(),
        "more candidates than beta entries"
    );
    let z: Vec<f64> = scores.iter().zip(beta).map(|(s, b)| s * b).collect();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = z.iter().map(|&zi| (zi - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|wi| *wi /= total);
    w
}

/// One aggregation layer:
/// `act(self_in W_self + sum_i phi_i * nbr_in_i W_nbr)` with ReLU when
/// `activate`, identity otherwise.
pub fn stagg_layer(
    self_in: &[f64],
    nbr_ins: &[&[f64]],
    scores: &[f64],
    w_self: &Matrix,
    w_nbr: &Matrix,
    beta: &[f64],
    activate: bool,
) -> Result<Vec<f64>> {
    if self_in.len() != w_self.rows()
        || w_self.rows() != w_nbr.rows()
        || w_self.cols() != w_nbr.cols()
    {
        return Err(Error::Dimension(format!(
            "input {} vs W_self {}x{} / W_nbr {}x{}",
            self_in.len(),
            w_self.rows(),
            w_self.cols(),
            w_nbr.rows(),
            w_nbr.cols()
        )));
    }
    if nbr_ins.len() != scores.len() || scores.len() > beta.len() {
        return Err(Error::Dimension(format!(
            "{} neighbor inputs, {} scores, {} beta entries",
            nbr_ins.len(),
            scores.len(),
            beta.len()
        )));
    }
    let mut out = w_self.vec_mul(self_in);
    if !nbr_ins.is_empty() {
        let weights = phi(scores, beta);
        for (h, w) in nbr_ins.iter().zip(weights) {
            if h.len() != self_in.len() {
                return Err(Error::Dimension(format!(
                    "neighbor input of length {} vs {}",
                    h.len(),
                    self_in.len()
                )));
            }
            let mapped = w_nbr.vec_mul(h);
            for (o, m) in out.iter_mut().zip(mapped) {
                *o += w * m;
            }
        }
    }
    if activate {
        out.iter_mut().for_each(|x| *x = x.max(0.0));
    }
    Ok(out)
}

/// Cosine similarity; 0 when either vector has norm below `1e-12`.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na < 1e-12 || nb < 1e-12 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Output embedding of `u` at `t` over an arbitrary candidate source, computed
/// layer by layer with [`stagg_layer`].
pub fn forward_with<S: NeighborScores + ?Sized>(
    source: &CandidateSource<'_, S>,
    feats: &NodeFeatures,
    params: &ModelParams,
    u: NodeId,
    t: f64,
) -> Result<Embedding> {
    params.check_shapes()?;
    if feats.dim() != params.w1_self.rows() {
        return Err(Error::Dimension(format!(
            "features have {} columns, W1 expects {}",
            feats.dim(),
            params.w1_self.rows()
        )));
    }
    let hidden = |x: NodeId| -> Result<Vec<f64>> {
        let list = source.list(x, t);
        let nbrs: Vec<&[f64]> = list.neighbors().map(|n| feats.row(n)).collect();
        stagg_layer(
            feats.row(x),
            &nbrs,
            &list.scores(),
            &params.w1_self,
            &params.w1_nbr,
            &params.beta,
            true,
        )
    };
    let list = source.list(u, t);
    let self_hidden = hidden(u)?;
    let nbr_hidden = list.neighbors().map(hidden).collect::<Result<Vec<_>>>()?;
    let nbr_refs: Vec<&[f64]> = nbr_hidden.iter().map(Vec::as_slice).collect();
    let vector = stagg_layer(
        &self_hidden,
        &nbr_refs,
        &list.scores(),
        &params.w2_self,
        &params.w2_nbr,
        &params.beta,
        false,
    )?;
    Ok(Embedding {
        node: u,
        at_time: t,
        vector,
    })
}

/// Output embedding of `u` at `t` using the top-`m` significant neighbors
/// read directly from `g`.
pub fn forward_node(
    g: &TemporalGraph,
    feats: &NodeFeatures,
    params: &ModelParams,
    u: NodeId,
    t: f64,
    m: usize,
    lambda: f64,
) -> Result<Embedding> {
    if m > params.beta.len() {
        return Err(Error::Dimension(format!(
            "capacity {m} exceeds beta length {}",
            params.beta.len()
        )));
    }
    let scores = GraphScores::new(g, lambda);
    forward_with(
        &CandidateSource::new(&scores, m, Selection::TopSignificance),
        feats,
        params,
        u,
        t,
    )
}
