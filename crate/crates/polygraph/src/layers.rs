//! Graph convolution layers: GCN with symmetric normalization, attention
//! convolution over a chosen edge direction, and the two-direction variant.

use crate::graph::DirectedGraph;
use crate::tensor::{Tape, Tensor, TensorError, TensorRef};
use rand::Rng;

/// Negative slope of the attention score nonlinearity (GAT convention).
pub const ATTENTION_LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sigma {
    Relu,
    Sigmoid,
    /// Test-harness setting for degree measurement; not selectable from run
    /// configs.
    Identity,
}

impl Sigma {
    pub fn apply(&self, tape: &mut Tape, x: TensorRef) -> Result<TensorRef, TensorError> {
        match self {
            Sigma::Relu => tape.relu(x),
            Sigma::Sigmoid => tape.sigmoid(x),
            Sigma::Identity => Ok(x),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Sigma::Relu => "relu",
            Sigma::Sigmoid => "sigmoid",
            Sigma::Identity => "identity",
        }
    }
}

/// Which neighborhood a receiver aggregates from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    FromInNeighbors,
    FromOutNeighbors,
}

/// Per-pass options threaded through every layer.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOpts {
    pub train: bool,
    pub requires_grad: bool,
    /// Replace attention with fixed uniform neighborhood averaging.
    pub frozen_attention: bool,
}

impl ForwardOpts {
    pub fn eval() -> ForwardOpts {
        ForwardOpts {
            train: false,
            requires_grad: false,
            frozen_attention: false,
        }
    }

    pub fn train() -> ForwardOpts {
        ForwardOpts {
            train: true,
            requires_grad: true,
            frozen_attention: false,
        }
    }
}

/// Edge arrays for one aggregation direction: message sources, receivers,
/// receiver-grouped in ascending receiver order.
fn edge_arrays(g: &DirectedGraph, direction: Direction) -> (Vec<usize>, Vec<usize>) {
    let mut src = Vec::with_capacity(g.num_edges());
    let mut dst = Vec::with_capacity(g.num_edges());
    for v in 0..g.num_nodes() {
        let nbrs = match direction {
            Direction::FromInNeighbors => g.in_neighbors(v),
            Direction::FromOutNeighbors => g.out_neighbors(v),
        }
        .expect("node in range");
        for &u in nbrs {
            src.push(u);
            dst.push(v);
        }
    }
    (src, dst)
}

/// GCN layer: out_i = sum over in-neighbors j (plus an injected self-loop) of
/// x_j W / sqrt((d_i + 1)(d_j + 1)), with d the in-degree.
#[derive(Debug, Clone)]
pub struct GcnConv {
    pub weight: Tensor,
}

impl GcnConv {
    pub fn new<R: Rng>(d_in: usize, d_out: usize, rng: &mut R) -> GcnConv {
        GcnConv {
            weight: Tensor::glorot(d_in, d_out, rng),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight]
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        g: &DirectedGraph,
        x: TensorRef,
        opts: &ForwardOpts,
        param_refs: &mut Vec<TensorRef>,
    ) -> Result<TensorRef, TensorError> {
        let w = tape.leaf(self.weight.clone(), opts.requires_grad);
        param_refs.push(w);
        let h = tape.matmul(x, w)?;
        let n = g.num_nodes();
        let deg: Vec<f64> = (0..n).map(|v| (g.in_degree(v) + 1) as f64).collect();
        let (src, dst) = edge_arrays(g, Direction::FromInNeighbors);
        let coeffs: Vec<f64> = src
            .iter()
            .zip(&dst)
            .map(|(&u, &v)| 1.0 / (deg[u] * deg[v]).sqrt())
            .collect();
        let msgs = tape.gather_rows(h, &src)?;
        let scaled = tape.scale_rows(msgs, &coeffs)?;
        let agg = tape.segment_sum(scaled, &dst, n)?;
        let self_coeffs: Vec<f64> = deg.iter().map(|d| 1.0 / d).collect();
        let self_term = tape.scale_rows(h, &self_coeffs)?;
        tape.add(agg, self_term)
    }
}

/// Single-direction graph attention convolution. The additive score split
/// a_src.(W x_j) + a_dst.(W x_i) equals the concatenation form of the
/// original GAT attention.
#[derive(Debug, Clone)]
pub struct GatConv {
    pub weight: Tensor,
    pub a_src: Tensor,
    pub a_dst: Tensor,
    pub heads: usize,
    pub direction: Direction,
}

impl GatConv {
    pub fn new<R: Rng>(
        d_in: usize,
        d_out: usize,
        heads: usize,
        direction: Direction,
        rng: &mut R,
    ) -> GatConv {
        assert!(d_out % heads == 0, "d_out must divide evenly across heads");
        GatConv {
            weight: Tensor::glorot(d_in, d_out, rng),
            a_src: Tensor::glorot(1, d_out, rng),
            a_dst: Tensor::glorot(1, d_out, rng),
            heads,
            direction,
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.a_src, &self.a_dst]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.a_src, &mut self.a_dst]
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        g: &DirectedGraph,
        x: TensorRef,
        opts: &ForwardOpts,
        param_refs: &mut Vec<TensorRef>,
    ) -> Result<TensorRef, TensorError> {
        let w = tape.leaf(self.weight.clone(), opts.requires_grad);
        let a_src = tape.leaf(self.a_src.clone(), opts.requires_grad);
        let a_dst = tape.leaf(self.a_dst.clone(), opts.requires_grad);
        param_refs.extend([w, a_src, a_dst]);

        let h = tape.matmul(x, w)?;
        let (src, dst) = edge_arrays(g, self.direction);
        let alpha = if opts.frozen_attention {
            // Uniform averaging: softmax of constant scores.
            let zeros = tape.constant(Tensor::zeros(src.len(), self.heads));
            tape.segment_softmax(zeros, &dst)?
        } else {
            let s_src = tape.per_head_dot(h, a_src, self.heads)?;
            let s_dst = tape.per_head_dot(h, a_dst, self.heads)?;
            let e_src = tape.gather_rows(s_src, &src)?;
            let e_dst = tape.gather_rows(s_dst, &dst)?;
            let sum = tape.add(e_src, e_dst)?;
            let scores = tape.leaky_relu(sum, ATTENTION_LEAKY_SLOPE)?;
            tape.segment_softmax(scores, &dst)?
        };
        let msgs = tape.gather_rows(h, &src)?;
        let weighted = tape.mul_head_broadcast(msgs, alpha, self.heads)?;
        // Isolated receivers get no edge rows and come out as zero rows.
        tape.segment_sum(weighted, &dst, g.num_nodes())
    }
}

/// Two attention convolutions over opposite edge directions, combined by
/// learned linear maps: m_in W_comb_in + m_out W_comb_out. The receiving
/// node's own contribution lives in the surrounding block's linear term.
#[derive(Debug, Clone)]
pub struct DirGatConv {
    pub conv_in: GatConv,
    pub conv_out: GatConv,
    pub w_comb_in: Tensor,
    pub w_comb_out: Tensor,
}

impl DirGatConv {
    pub fn new<R: Rng>(d_in: usize, d_out: usize, heads: usize, rng: &mut R) -> DirGatConv {
        DirGatConv {
            conv_in: GatConv::new(d_in, d_out, heads, Direction::FromInNeighbors, rng),
            conv_out: GatConv::new(d_in, d_out, heads, Direction::FromOutNeighbors, rng),
            w_comb_in: Tensor::glorot(d_out, d_out, rng),
            w_comb_out: Tensor::glorot(d_out, d_out, rng),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.conv_in.params();
        p.extend(self.conv_out.params());
        p.push(&self.w_comb_in);
        p.push(&self.w_comb_out);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.conv_in.params_mut();
        p.extend(self.conv_out.params_mut());
        p.push(&mut self.w_comb_in);
        p.push(&mut self.w_comb_out);
        p
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        g: &DirectedGraph,
        x: TensorRef,
        opts: &ForwardOpts,
        param_refs: &mut Vec<TensorRef>,
    ) -> Result<TensorRef, TensorError> {
        let m_in = self.conv_in.forward(tape, g, x, opts, param_refs)?;
        let m_out = self.conv_out.forward(tape, g, x, opts, param_refs)?;
        let w_in = tape.leaf(self.w_comb_in.clone(), opts.requires_grad);
        let w_out = tape.leaf(self.w_comb_out.clone(), opts.requires_grad);
        param_refs.extend([w_in, w_out]);
        let a = tape.matmul(m_in, w_in)?;
        let b = tape.matmul(m_out, w_out)?;
        tape.add(a, b)
    }
}

#[derive(Debug, Clone)]
pub enum Conv {
    Gat(GatConv),
    DirGat(DirGatConv),
}

impl Conv {
    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Conv::Gat(c) => c.params(),
            Conv::DirGat(c) => c.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Conv::Gat(c) => c.params_mut(),
            Conv::DirGat(c) => c.params_mut(),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        g: &DirectedGraph,
        x: TensorRef,
        opts: &ForwardOpts,
        param_refs: &mut Vec<TensorRef>,
    ) -> Result<TensorRef, TensorError> {
        match self {
            Conv::Gat(c) => c.forward(tape, g, x, opts, param_refs),
            Conv::DirGat(c) => c.forward(tape, g, x, opts, param_refs),
        }
    }
}

/// One gated interpolation block:
///
///   h   = sigma(x W_h)
///   x'  = Conv(x) + x W_l
///   out = (1 - beta) (h ⊙ x') + beta x'
///
/// with beta = logistic(beta_raw), a per-layer learnable scalar kept in
/// (0, 1) by construction.
#[derive(Debug, Clone)]
pub struct PolyBlock {
    pub w_h: Tensor,
    pub w_l: Tensor,
    pub beta_raw: Tensor,
    pub conv: Conv,
    pub sigma: Sigma,
}

impl PolyBlock {
    pub fn new<R: Rng>(hidden: usize, heads: usize, directional: bool, sigma: Sigma, rng: &mut R) -> PolyBlock {
        let conv = if directional {
            Conv::DirGat(DirGatConv::new(hidden, hidden, heads, rng))
        } else {
            Conv::Gat(GatConv::new(hidden, hidden, heads, Direction::FromInNeighbors, rng))
        };
        PolyBlock {
            w_h: Tensor::glorot(hidden, hidden, rng),
            w_l: Tensor::glorot(hidden, hidden, rng),
            beta_raw: Tensor::scalar(0.0),
            conv,
            sigma,
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = vec![&self.w_h, &self.w_l, &self.beta_raw];
        p.extend(self.conv.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = vec![&mut self.w_h, &mut self.w_l, &mut self.beta_raw];
        p.extend(self.conv.params_mut());
        p
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        g: &DirectedGraph,
        x: TensorRef,
        opts: &ForwardOpts,
        param_refs: &mut Vec<TensorRef>,
    ) -> Result<TensorRef, TensorError> {
        let w_h = tape.leaf(self.w_h.clone(), opts.requires_grad);
        let w_l = tape.leaf(self.w_l.clone(), opts.requires_grad);
        let beta_raw = tape.leaf(self.beta_raw.clone(), opts.requires_grad);
        param_refs.extend([w_h, w_l, beta_raw]);
        let conv_out = self.conv.forward(tape, g, x, opts, param_refs)?;

        let pre = tape.matmul(x, w_h)?;
        let h = self.sigma.apply(tape, pre)?;
        let lin = tape.matmul(x, w_l)?;
        let x_prime = tape.add(conv_out, lin)?;
        let beta = tape.sigmoid(beta_raw)?;
        let one = tape.constant(Tensor::scalar(1.0));
        let one_minus_beta = tape.sub(one, beta)?;
        let gated = tape.mul_elementwise(h, x_prime)?;
        let a = tape.scale_by_scalar(gated, one_minus_beta)?;
        let b = tape.scale_by_scalar(x_prime, beta)?;
        tape.add(a, b)
    }
}
