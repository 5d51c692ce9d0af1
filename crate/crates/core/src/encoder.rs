//! Batched forward pass with a reverse-mode tape.
//!
//! Since `W_nbr` is linear, `sum_i phi_i x_i W1_nbr = sum_i phi_i (x_i W1_nbr)`,
//! so the first layer only needs the projections `X W1_self` and `X W1_nbr`,
//! computed once per parameter version. Gradients of those projections are
//! accumulated per row and folded back into `W1` with `X^T G` at the end.
//!
//! A [`Tape`] covers one query time. Every hidden state it creates is cached,
//! so endpoints sharing a neighborhood reuse work and receive the summed
//! gradient.

use std::collections::HashMap;

use crate::graph::NodeId;
use crate::linalg::{axpy, dot, Matrix};
use crate::model::{phi, Embedding, ModelParams, NodeFeatures};
use crate::significance::{CandidateSource, NeighborScores};

pub struct Encoder<'a> {
    params: &'a ModelParams,
    feats: &'a NodeFeatures,
    proj_self: Matrix,
    proj_nbr: Matrix,
}

impl<'a> Encoder<'a> {
    pub fn new(params: &'a ModelParams, feats: &'a NodeFeatures) -> Self {
        assert_eq!(feats.dim(), params.w1_self.rows(), "feature width vs W1");
        Encoder {
            params,
            feats,
            proj_self: feats.x.matmul(&params.w1_self),
            proj_nbr: feats.x.matmul(&params.w1_nbr),
        }
    }

    pub fn params(&self) -> &ModelParams {
        self.params
    }

    pub fn features(&self) -> &NodeFeatures {
        self.feats
    }

    /// Single embedding on a throwaway tape.
    pub fn embed<S: NeighborScores + ?Sized>(
        &self,
        source: &CandidateSource<'_, S>,
        u: NodeId,
        t: f64,
    ) -> Embedding {
        let mut tape = Tape::new(t);
        let idx = tape.output(self, source, u);
        Embedding {
            node: u,
            at_time: t,
            vector: tape.outputs[idx].out.clone(),
        }
    }
}

struct HiddenNode {
    node: NodeId,
    neighbors: Vec<NodeId>,
    scores: Vec<f64>,
    phi: Vec<f64>,
    pre: Vec<f64>,
    out: Vec<f64>,
    grad: Vec<f64>,
}

struct OutputNode {
    self_slot: usize,
    nbr_slots: Vec<usize>,
    agg: Vec<f64>,
    out: Vec<f64>,
    grad: Vec<f64>,
}

pub struct Tape {
    t: f64,
    hidden: Vec<HiddenNode>,
    hidden_slots: HashMap<NodeId, usize>,
    outputs: Vec<OutputNode>,
    output_slots: HashMap<NodeId, usize>,
}

impl Tape {
    pub fn new(t: f64) -> Self {
        Tape {
            t,
            hidden: Vec::new(),
            hidden_slots: HashMap::new(),
            outputs: Vec::new(),
            output_slots: HashMap::new(),
        }
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    fn hidden_slot<S: NeighborScores + ?Sized>(
        &mut self,
        enc: &Encoder<'_>,
        source: &CandidateSource<'_, S>,
        x: NodeId,
    ) -> usize {
        if let Some(&slot) = self.hidden_slots.get(&x) {
            return slot;
        }
        let list = source.list(x, self.t);
        let neighbors: Vec<NodeId> = list.neighbors().collect();
        let scores = list.scores();
        let mut pre = enc.proj_self.row(x).to_vec();
        let weights = if neighbors.is_empty() {
            Vec::new()
        } else {
            let w = phi(&scores, &enc.params.beta);
            for (&n, &wi) in neighbors.iter().zip(&w) {
                axpy(wi, enc.proj_nbr.row(n), &mut pre);
            }
            w
        };
        let out: Vec<f64> = pre.iter().map(|&p| p.max(0.0)).collect();
        let width = out.len();
        self.hidden.push(HiddenNode {
            node: x,
            neighbors,
            scores,
            phi: weights,
            pre,
            out,
            grad: vec![0.0; width],
        });
        let slot = self.hidden.len() - 1;
        self.hidden_slots.insert(x, slot);
        slot
    }

    /// Index of `u`'s output embedding on this tape, computing it on first use.
    pub fn output<S: NeighborScores + ?Sized>(
        &mut self,
        enc: &Encoder<'_>,
        source: &CandidateSource<'_, S>,
        u: NodeId,
    ) -> usize {
        if let Some(&idx) = self.output_slots.get(&u) {
            return idx;
        }
        let self_slot = self.hidden_slot(enc, source, u);
        let neighbors = self.hidden[self_slot].neighbors.clone();
        let nbr_slots: Vec<usize> = neighbors
            .iter()
            .map(|&n| self.hidden_slot(enc, source, n))
            .collect();

        let p = enc.params;
        let mut agg = vec![0.0; p.w2_nbr.rows()];
        let node = &self.hidden[self_slot];
        for (&slot, &w) in nbr_slots.iter().zip(&node.phi) {
            axpy(w, &self.hidden[slot].out, &mut agg);
        }
        let mut out = p.w2_self.vec_mul(&node.out);
        p.w2_nbr.vec_mul_add(&agg, &mut out);
        let width = out.len();
        self.outputs.push(OutputNode {
            self_slot,
            nbr_slots,
            agg,
            out,
            grad: vec![0.0; width],
        });
        let idx = self.outputs.len() - 1;
        self.output_slots.insert(u, idx);
        idx
    }

    pub fn embedding(&self, idx: usize) -> &[f64] {
        &self.outputs[idx].out
    }

    /// Adds `dL/dh` for an output created by [`Tape::output`].
    pub fn add_output_grad(&mut self, idx: usize, g: &[f64]) {
        axpy(1.0, g, &mut self.outputs[idx].grad);
    }

    /// Propagates all seeded output gradients into `acc`.
    pub fn backward(&mut self, enc: &Encoder<'_>, acc: &mut GradAccumulator) {
        let p = enc.params;
        for oi in 0..self.outputs.len() {
            let (self_slot, g) = {
                let o = &self.outputs[oi];
                if o.grad.iter().all(|&x| x == 0.0) {
                    continue;
                }
                (o.self_slot, o.grad.clone())
            };
            let o = &self.outputs[oi];
            acc.w2_self.add_outer(&self.hidden[self_slot].out, &g);
            acc.w2_nbr.add_outer(&o.agg, &g);

            let mut d_self = vec![0.0; p.w2_self.rows()];
            p.w2_self.mul_vec_add(&g, &mut d_self);
            let mut d_agg = vec![0.0; p.w2_nbr.rows()];
            p.w2_nbr.mul_vec_add(&g, &mut d_agg);

            let nbr_slots = o.nbr_slots.clone();
            let weights = self.hidden[self_slot].phi.clone();
            let scores = self.hidden[self_slot].scores.clone();
            axpy(1.0, &d_self, &mut self.hidden[self_slot].grad);
            if nbr_slots.is_empty() {
                continue;
            }
            let mut d_phi = Vec::with_capacity(nbr_slots.len());
            for (&slot, &w) in nbr_slots.iter().zip(&weights) {
                d_phi.push(dot(&self.hidden[slot].out, &d_agg));
                axpy(w, &d_agg, &mut self.hidden[slot].grad);
            }
            acc.add_beta(&weights, &d_phi, &scores);
        }

        for node in &self.hidden {
            if node.grad.iter().all(|&x| x == 0.0) {
                continue;
            }
            // ReLU subgradient is 0 at 0
            let d_pre: Vec<f64> = node
                .grad
                .iter()
                .zip(&node.pre)
                .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
                .collect();
            if d_pre.iter().all(|&x| x == 0.0) {
                continue;
            }
            acc.add_proj_self(node.node, &d_pre);
            if node.neighbors.is_empty() {
                continue;
            }
            let mut d_phi = Vec::with_capacity(node.neighbors.len());
            for (&n, &w) in node.neighbors.iter().zip(&node.phi) {
                d_phi.push(dot(enc.proj_nbr.row(n), &d_pre));
                acc.add_proj_nbr(n, w, &d_pre);
            }
            acc.add_beta(&node.phi, &d_phi, &node.scores);
        }
    }
}

/// Gradient sums over a batch, held in projection space for layer one.
pub struct GradAccumulator {
    w2_self: Matrix,
    w2_nbr: Matrix,
    beta: Vec<f64>,
    proj_self: Matrix,
    proj_nbr: Matrix,
    touched: Vec<bool>,
    touched_rows: Vec<usize>,
    detach_beta: bool,
}

impl GradAccumulator {
    pub fn new(params: &ModelParams, num_nodes: usize) -> Self {
        let d = params.dims();
        GradAccumulator {
            w2_self: Matrix::zeros(d.hidden, d.output),
            w2_nbr: Matrix::zeros(d.hidden, d.output),
            beta: vec![0.0; d.capacity],
            proj_self: Matrix::zeros(num_nodes, d.hidden),
            proj_nbr: Matrix::zeros(num_nodes, d.hidden),
            touched: vec![false; num_nodes],
            touched_rows: Vec::new(),
            detach_beta: false,
        }
    }

    /// Treat the softmax weights as constants: no gradient reaches `beta`.
    pub fn detach_beta(mut self, detach: bool) -> Self {
        self.detach_beta = detach;
        self
    }

    fn touch(&mut self, row: usize) {
        if !self.touched[row] {
            self.touched[row] = true;
            self.touched_rows.push(row);
        }
    }

    fn add_proj_self(&mut self, row: usize, g: &[f64]) {
        self.touch(row);
        axpy(1.0, g, self.proj_self.row_mut(row));
    }

    fn add_proj_nbr(&mut self, row: usize, w: f64, g: &[f64]) {
        self.touch(row);
        axpy(w, g, self.proj_nbr.row_mut(row));
    }

    /// Backpropagates `dL/dphi` through the softmax over `score_i * beta_i`.
    fn add_beta(&mut self, weights: &[f64], d_phi: &[f64], scores: &[f64]) {
        if self.detach_beta {
            return;
        }
        let mean: f64 = weights.iter().zip(d_phi).map(|(w, d)| w * d).sum();
        for i in 0..weights.len() {
            self.beta[i] += weights[i] * (d_phi[i] - mean) * scores[i];
        }
    }

    /// Folds projection gradients into `W1` and returns gradients shaped
    /// like the parameters.
    pub fn finish(mut self, feats: &NodeFeatures) -> ModelParams {
        let d0 = feats.dim();
        let hidden = self.proj_self.cols();
        let mut w1_self = Matrix::zeros(d0, hidden);
        let mut w1_nbr = Matrix::zeros(d0, hidden);
        self.touched_rows.sort_unstable();
        for &r in &self.touched_rows {
            w1_self.add_outer(feats.row(r), self.proj_self.row(r));
            w1_nbr.add_outer(feats.row(r), self.proj_nbr.row(r));
        }
        ModelParams {
            w1_self,
            w1_nbr,
            w2_self: self.w2_self,
            w2_nbr: self.w2_nbr,
            beta: self.beta,
        }
    }
}
