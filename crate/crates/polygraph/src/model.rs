//! Full networks: encoder, a stack of convolution blocks, decoder, and the
//! single-file checkpoint format.
//!
//! All four model kinds share the same envelope: W_in (d x hidden), L blocks
//! operating at the hidden width, W_out (hidden x C). The poly variants sum
//! the per-block outputs before decoding; the baselines decode the last
//! block's output.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::DirectedGraph;
use crate::layers::{Direction, ForwardOpts, GatConv, GcnConv, PolyBlock, Sigma};
use crate::tensor::{Tape, Tensor, TensorError, TensorRef};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("tensor error: {0}")]
    Tensor(#[from] TensorError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint manifest: {0}")]
    BadManifest(String),
    #[error("checkpoint holds {found} parameter values, model needs {expected}")]
    ParamCountMismatch { expected: usize, found: usize },
    #[error("unknown model kind {0:?}")]
    UnknownModel(String),
    #[error("unknown sigma {0:?}")]
    UnknownSigma(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Gcn,
    Gat,
    Poly,
    DirPoly,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Gcn, ModelKind::Gat, ModelKind::Poly, ModelKind::DirPoly];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Gcn => "gcn",
            ModelKind::Gat => "gat",
            ModelKind::Poly => "poly",
            ModelKind::DirPoly => "dir-poly",
        }
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<ModelKind, ModelError> {
        match s {
            "gcn" => Ok(ModelKind::Gcn),
            "gat" => Ok(ModelKind::Gat),
            "poly" => Ok(ModelKind::Poly),
            "dir-poly" => Ok(ModelKind::DirPoly),
            other => Err(ModelError::UnknownModel(other.to_string())),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sigma {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Sigma, ModelError> {
        match s {
            "relu" => Ok(Sigma::Relu),
            "sigmoid" => Ok(Sigma::Sigmoid),
            "identity" => Ok(Sigma::Identity),
            other => Err(ModelError::UnknownSigma(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub sigma: Sigma,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub enum Blocks {
    Gcn(Vec<GcnConv>),
    Gat(Vec<GatConv>),
    Poly(Vec<PolyBlock>),
}

#[derive(Debug, Clone)]
pub struct GraphModel {
    pub config: ModelConfig,
    pub w_in: Tensor,
    pub blocks: Blocks,
    pub w_out: Tensor,
}

impl GraphModel {
    /// Build a model with Glorot-uniform weights and beta_raw = 0. All draws
    /// come from `rng` in declared parameter order, so a fixed seed gives
    /// bit-identical parameters.
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> GraphModel {
        let w_in = Tensor::glorot(config.in_dim, config.hidden, rng);
        let h = config.hidden;
        let blocks = match config.kind {
            ModelKind::Gcn => {
                Blocks::Gcn((0..config.layers).map(|_| GcnConv::new(h, h, rng)).collect())
            }
            ModelKind::Gat => Blocks::Gat(
                (0..config.layers)
                    .map(|_| GatConv::new(h, h, config.heads, Direction::FromInNeighbors, rng))
                    .collect(),
            ),
            ModelKind::Poly => Blocks::Poly(
                (0..config.layers)
                    .map(|_| PolyBlock::new(h, config.heads, false, config.sigma, rng))
                    .collect(),
            ),
            ModelKind::DirPoly => Blocks::Poly(
                (0..config.layers)
                    .map(|_| PolyBlock::new(h, config.heads, true, config.sigma, rng))
                    .collect(),
            ),
        };
        let w_out = Tensor::glorot(config.hidden, config.out_dim, rng);
        GraphModel { config, w_in, blocks, w_out }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = vec![&self.w_in];
        match &self.blocks {
            Blocks::Gcn(bs) => bs.iter().for_each(|b| p.extend(b.params())),
            Blocks::Gat(bs) => bs.iter().for_each(|b| p.extend(b.params())),
            Blocks::Poly(bs) => bs.iter().for_each(|b| p.extend(b.params())),
        }
        p.push(&self.w_out);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = vec![&mut self.w_in];
        match &mut self.blocks {
            Blocks::Gcn(bs) => bs.iter_mut().for_each(|b| p.extend(b.params_mut())),
            Blocks::Gat(bs) => bs.iter_mut().for_each(|b| p.extend(b.params_mut())),
            Blocks::Poly(bs) => bs.iter_mut().for_each(|b| p.extend(b.params_mut())),
        }
        p.push(&mut self.w_out);
        p
    }

    pub fn num_param_values(&self) -> usize {
        self.params().iter().map(|t| t.data().len()).sum()
    }

    /// Run the network. Returns the logits node and leaf refs for every
    /// parameter, in `params()` order, for gradient readout after backward.
    pub fn forward<R: Rng>(
        &self,
        tape: &mut Tape,
        g: &DirectedGraph,
        features: &Tensor,
        opts: &ForwardOpts,
        rng: &mut R,
    ) -> Result<(TensorRef, Vec<TensorRef>), TensorError> {
        let mut refs = Vec::new();
        let x = tape.constant(features.clone());
        let w_in = tape.leaf(self.w_in.clone(), opts.requires_grad);
        refs.push(w_in);
        let mut cur = tape.matmul(x, w_in)?;

        let decoded_input = match &self.blocks {
            Blocks::Gcn(bs) => {
                for b in bs {
                    let out = b.forward(tape, g, cur, opts, &mut refs)?;
                    let act = self.config.sigma.apply(tape, out)?;
                    cur = tape.dropout(act, self.config.dropout, opts.train, rng)?;
                }
                cur
            }
            Blocks::Gat(bs) => {
                for b in bs {
                    let out = b.forward(tape, g, cur, opts, &mut refs)?;
                    let act = self.config.sigma.apply(tape, out)?;
                    cur = tape.dropout(act, self.config.dropout, opts.train, rng)?;
                }
                cur
            }
            Blocks::Poly(bs) => {
                let mut acc: Option<TensorRef> = None;
                for b in bs {
                    let out = b.forward(tape, g, cur, opts, &mut refs)?;
                    let dropped = tape.dropout(out, self.config.dropout, opts.train, rng)?;
                    acc = Some(match acc {
                        None => dropped,
                        Some(a) => tape.add(a, dropped)?,
                    });
                    cur = dropped;
                }
                acc.expect("at least one layer")
            }
        };

        let w_out = tape.leaf(self.w_out.clone(), opts.requires_grad);
        refs.push(w_out);
        let logits = tape.matmul(decoded_input, w_out)?;
        Ok((logits, refs))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    model: String,
    in_dim: usize,
    hidden: usize,
    out_dim: usize,
    layers: usize,
    heads: usize,
    sigma: String,
    dropout: f64,
    param_count: usize,
}

/// Single-file checkpoint: a little-endian u64 manifest byte length, the JSON
/// manifest, then every parameter value as little-endian f64 in declared
/// enumeration order.
pub fn save_checkpoint(model: &GraphModel, path: &Path) -> Result<(), ModelError> {
    let manifest = CheckpointManifest {
        model: model.config.kind.as_str().to_string(),
        in_dim: model.config.in_dim,
        hidden: model.config.hidden,
        out_dim: model.config.out_dim,
        layers: model.config.layers,
        heads: model.config.heads,
        sigma: model.config.sigma.as_str().to_string(),
        dropout: model.config.dropout,
        param_count: model.num_param_values(),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| ModelError::BadManifest(e.to_string()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for t in model.params() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<GraphModel, ModelError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut len_buf = [0u8; 8];
    r.read_exact(&mut len_buf)?;
    let json_len = u64::from_le_bytes(len_buf) as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json)?;
    let manifest: CheckpointManifest =
        serde_json::from_slice(&json).map_err(|e| ModelError::BadManifest(e.to_string()))?;
    let config = ModelConfig {
        kind: manifest.model.parse()?,
        in_dim: manifest.in_dim,
        hidden: manifest.hidden,
        out_dim: manifest.out_dim,
        layers: manifest.layers,
        heads: manifest.heads,
        sigma: manifest.sigma.parse()?,
        dropout: manifest.dropout,
    };
    if config.layers == 0 || config.hidden == 0 {
        return Err(ModelError::BadManifest("layers and hidden must be positive".into()));
    }
    let mut model = GraphModel::new(config, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
    let expected = model.num_param_values();
    if manifest.param_count != expected {
        return Err(ModelError::ParamCountMismatch { expected, found: manifest.param_count });
    }
    let mut buf = [0u8; 8];
    for t in model.params_mut() {
        for v in t.data_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
    }
    // A trailing byte means the file does not match the manifest.
    if r.read(&mut buf)? != 0 {
        return Err(ModelError::ParamCountMismatch { expected, found: expected + 1 });
    }
    Ok(model)
}
