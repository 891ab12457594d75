//! Dense straight-line re-implementations of the layer math, used as oracles
//! by unit and acceptance tests. Nothing here touches the tape.

use rand::Rng;

use crate::graph::DirectedGraph;
use crate::layers::{Conv, DirGatConv, Direction, GatConv, GcnConv, PolyBlock, Sigma, ATTENTION_LEAKY_SLOPE};
use crate::model::{Blocks, GraphModel};
use crate::tensor::Tensor;

pub fn tensor_add(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn random_tensor<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(rows, cols, data)
}

/// Erdos-Renyi digraph without self-loops.
pub fn random_graph<R: Rng>(n: usize, p: f64, rng: &mut R) -> DirectedGraph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u != v && rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    DirectedGraph::build(n, &edges).unwrap()
}

pub fn dense_gcn(conv: &GcnConv, g: &DirectedGraph, x: &Tensor) -> Tensor {
    let h = x.matmul(&conv.weight);
    let n = g.num_nodes();
    let deg: Vec<f64> = (0..n).map(|v| (g.in_degree(v) + 1) as f64).collect();
    let mut out = Tensor::zeros(n, h.cols());
    for v in 0..n {
        for &u in g.in_neighbors(v).unwrap() {
            let c = 1.0 / (deg[u] * deg[v]).sqrt();
            for j in 0..h.cols() {
                out.set(v, j, out.get(v, j) + c * h.get(u, j));
            }
        }
        for j in 0..h.cols() {
            out.set(v, j, out.get(v, j) + h.get(v, j) / deg[v]);
        }
    }
    out
}

pub fn dense_gat(conv: &GatConv, g: &DirectedGraph, x: &Tensor, frozen: bool) -> Tensor {
    let h = x.matmul(&conv.weight);
    let n = g.num_nodes();
    let dh = h.cols() / conv.heads;
    let mut out = Tensor::zeros(n, h.cols());
    for v in 0..n {
        let nbrs = match conv.direction {
            Direction::FromInNeighbors => g.in_neighbors(v),
            Direction::FromOutNeighbors => g.out_neighbors(v),
        }
        .unwrap();
        if nbrs.is_empty() {
            continue;
        }
        for k in 0..conv.heads {
            let scores: Vec<f64> = nbrs
                .iter()
                .map(|&u| {
                    if frozen {
                        return 0.0;
                    }
                    let mut z = 0.0;
                    for j in 0..dh {
                        z += conv.a_src.get(0, k * dh + j) * h.get(u, k * dh + j);
                        z += conv.a_dst.get(0, k * dh + j) * h.get(v, k * dh + j);
                    }
                    if z >= 0.0 {
                        z
                    } else {
                        ATTENTION_LEAKY_SLOPE * z
                    }
                })
                .collect();
            let m = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let denom: f64 = exps.iter().sum();
            for (idx, &u) in nbrs.iter().enumerate() {
                let alpha = exps[idx] / denom;
                for j in 0..dh {
                    out.set(v, k * dh + j, out.get(v, k * dh + j) + alpha * h.get(u, k * dh + j));
                }
            }
        }
    }
    out
}

pub fn dense_dir_gat(conv: &DirGatConv, g: &DirectedGraph, x: &Tensor, frozen: bool) -> Tensor {
    let m_in = dense_gat(&conv.conv_in, g, x, frozen);
    let m_out = dense_gat(&conv.conv_out, g, x, frozen);
    tensor_add(&m_in.matmul(&conv.w_comb_in), &m_out.matmul(&conv.w_comb_out))
}

fn apply_sigma(sigma: Sigma, x: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .map(|&v| match sigma {
            Sigma::Relu => v.max(0.0),
            Sigma::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            Sigma::Identity => v,
        })
        .collect();
    Tensor::from_vec(x.rows(), x.cols(), data)
}

pub fn dense_poly_block(block: &PolyBlock, g: &DirectedGraph, x: &Tensor, frozen: bool) -> Tensor {
    let conv = match &block.conv {
        Conv::Gat(c) => dense_gat(c, g, x, frozen),
        Conv::DirGat(c) => dense_dir_gat(c, g, x, frozen),
    };
    let h = apply_sigma(block.sigma, &x.matmul(&block.w_h));
    let x_prime = tensor_add(&conv, &x.matmul(&block.w_l));
    let beta = 1.0 / (1.0 + (-block.beta_raw.get(0, 0)).exp());
    let data = h
        .data()
        .iter()
        .zip(x_prime.data())
        .map(|(hv, xv)| (1.0 - beta) * hv * xv + beta * xv)
        .collect();
    Tensor::from_vec(x.rows(), x.cols(), data)
}

/// Eval-mode forward (no dropout) of any model, entirely on dense math.
pub fn dense_model_forward(model: &GraphModel, g: &DirectedGraph, x: &Tensor, frozen: bool) -> Tensor {
    let mut cur = x.matmul(&model.w_in);
    let decoded = match &model.blocks {
        Blocks::Gcn(bs) => {
            for b in bs {
                cur = apply_sigma(model.config.sigma, &dense_gcn(b, g, &cur));
            }
            cur
        }
        Blocks::Gat(bs) => {
            for b in bs {
                cur = apply_sigma(model.config.sigma, &dense_gat(b, g, &cur, frozen));
            }
            cur
        }
        Blocks::Poly(bs) => {
            let mut acc = Tensor::zeros(cur.rows(), cur.cols());
            for b in bs {
                cur = dense_poly_block(b, g, &cur, frozen);
                acc = tensor_add(&acc, &cur);
            }
            acc
        }
    };
    decoded.matmul(&model.w_out)
}
