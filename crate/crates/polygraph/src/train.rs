//! Full-batch training: Adam with decoupled weight decay, best-validation
//! early stopping, and the seeded multi-run protocol with mean ± sample std
//! aggregation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Split, Task};
use crate::layers::{ForwardOpts, Sigma};
use crate::metrics::{self, MetricError};
use crate::model::{GraphModel, ModelConfig, ModelKind};
use crate::tensor::{Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("tensor error: {0}")]
    Tensor(#[from] TensorError),
    #[error("metric error: {0}")]
    Metric(#[from] MetricError),
    #[error("data error: {0}")]
    Data(#[from] crate::dataset::DataError),
    #[error("non-finite loss at epoch {epoch}: training diverged")]
    Diverged { epoch: usize },
    #[error("optimizer state holds {state} tensors, got {given}")]
    StateMismatch { state: usize, given: usize },
    #[error("parameter {index} shape {param:?} does not match gradient {grad:?}")]
    GradShape { index: usize, param: (usize, usize), grad: (usize, usize) },
    #[error("invalid train config: {0}")]
    BadConfig(String),
}

/// Adam with decoupled multiplicative weight decay. Moment decays 0.9/0.999,
/// epsilon 1e-8.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Adam {
    pub fn new(lr: f64, weight_decay: f64, params: &[&Tensor]) -> Adam {
        Adam {
            lr,
            weight_decay,
            t: 0,
            m: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) -> Result<(), TrainError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TrainError::StateMismatch { state: self.m.len(), given: params.len() });
        }
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(TrainError::GradShape { index: i, param: p.shape(), grad: g.shape() });
            }
            let decay = 1.0 - self.lr * self.weight_decay;
            for ((w, &grad), (m, v)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(self.m[i].data_mut().iter_mut().zip(self.v[i].data_mut()))
            {
                *w *= decay;
                *m = BETA1 * *m + (1.0 - BETA1) * grad;
                *v = BETA2 * *v + (1.0 - BETA2) * grad * grad;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: String,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub sigma: String,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            model: "poly".into(),
            hidden: 64,
            layers: 3,
            heads: 1,
            dropout: 0.2,
            sigma: "relu".into(),
            learning_rate: 3e-3,
            weight_decay: 0.0,
            max_epochs: 1000,
            patience: 100,
            seeds: (0..10).collect(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(ModelKind, Sigma), TrainError> {
        if self.seeds.is_empty() {
            return Err(TrainError::BadConfig("seeds must be non-empty".into()));
        }
        if self.patience > self.max_epochs {
            return Err(TrainError::BadConfig(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if self.layers == 0 || self.hidden == 0 || self.heads == 0 {
            return Err(TrainError::BadConfig("layers, hidden and heads must be positive".into()));
        }
        if self.hidden % self.heads != 0 {
            return Err(TrainError::BadConfig(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        let kind: ModelKind = self
            .model
            .parse()
            .map_err(|e| TrainError::BadConfig(format!("{e}")))?;
        let sigma: Sigma = self
            .sigma
            .parse()
            .map_err(|e| TrainError::BadConfig(format!("{e}")))?;
        if sigma == Sigma::Identity {
            return Err(TrainError::BadConfig("sigma identity is test-harness only".into()));
        }
        Ok((kind, sigma))
    }

    pub fn model_config(&self, dataset: &Dataset) -> Result<ModelConfig, TrainError> {
        let (kind, sigma) = self.validate()?;
        let out_dim = match dataset.task {
            Task::MulticlassAccuracy => dataset.num_classes,
            // Binary tasks emit a single logit; AUC is monotone-invariant.
            Task::BinaryRocAuc => 1,
        };
        Ok(ModelConfig {
            kind,
            in_dim: dataset.features.cols(),
            hidden: self.hidden,
            out_dim,
            layers: self.layers,
            heads: self.heads,
            sigma,
            dropout: self.dropout,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub split_id: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val_metric: f64,
    pub test_metric: f64,
    pub loss_curve: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: String,
    pub dataset: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<SeedRecord>,
}

impl TrainReport {
    /// One-row CSV with header, Table-style numbers in percent.
    pub fn to_csv(&self) -> String {
        format!(
            "model,dataset,metric,mean,std,seeds\n{},{},{},{},{},{}\n",
            self.model,
            self.dataset,
            self.metric,
            self.mean,
            self.std,
            self.per_seed.len()
        )
    }

    /// "mm.mm ± s.ss" on the 0-100 scale.
    pub fn summary_line(&self) -> String {
        format!("{:.2} ± {:.2}", self.mean * 100.0, self.std * 100.0)
    }
}

fn metric_value(dataset: &Dataset, logits: &Tensor, mask: &[bool]) -> Result<f64, MetricError> {
    match dataset.task {
        Task::MulticlassAccuracy => metrics::accuracy(logits, &dataset.labels, mask),
        Task::BinaryRocAuc => {
            let scores: Vec<f64> = (0..logits.rows()).map(|i| logits.get(i, 0)).collect();
            metrics::roc_auc(&scores, &dataset.labels, mask)
        }
    }
}

fn evaluate(
    model: &GraphModel,
    dataset: &Dataset,
    mask: &[bool],
) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (logits, _) = model.forward(
        &mut tape,
        &dataset.graph,
        &dataset.features,
        &ForwardOpts::eval(),
        &mut rng,
    )?;
    Ok(metric_value(dataset, tape.value(logits), mask)?)
}

/// Train one model on one split with one seed. Returns the per-seed record
/// and the model restored to its best-validation parameters.
pub fn train_one(
    dataset: &Dataset,
    split: &Split,
    config: &TrainConfig,
    split_id: usize,
    seed: u64,
) -> Result<(SeedRecord, GraphModel), TrainError> {
    let model_config = config.model_config(dataset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = GraphModel::new(model_config, &mut rng);
    let mut opt = Adam::new(config.learning_rate, config.weight_decay, &model.params());

    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut best_params: Vec<Tensor> = model.params().into_iter().cloned().collect();
    let mut since_improvement = 0usize;
    let mut loss_curve = Vec::new();
    let mut epochs_run = 0;

    for epoch in 0..config.max_epochs {
        let mut tape = Tape::new();
        let (logits, refs) = model.forward(
            &mut tape,
            &dataset.graph,
            &dataset.features,
            &ForwardOpts::train(),
            &mut rng,
        )?;
        let loss = match dataset.task {
            Task::MulticlassAccuracy => tape.cross_entropy_logits(logits, &dataset.labels, &split.train)?,
            Task::BinaryRocAuc => tape.bce_logits(logits, &dataset.labels, &split.train)?,
        };
        let loss_value = tape.value(loss).get(0, 0);
        if !loss_value.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        loss_curve.push(loss_value);
        tape.backward(loss)?;
        let grads: Vec<Tensor> = refs
            .iter()
            .map(|r| tape.grad(*r).cloned().unwrap_or_else(|| {
                let (rows, cols) = tape.shape(*r);
                Tensor::zeros(rows, cols)
            }))
            .collect();
        drop(tape);
        opt.step(model.params_mut(), &grads)?;
        epochs_run = epoch + 1;

        let val = evaluate(&model, dataset, &split.val)?;
        if val > best_val {
            best_val = val;
            best_epoch = epoch;
            best_params = model.params().into_iter().cloned().collect();
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }
        if since_improvement >= config.patience {
            break;
        }
    }

    for (dst, src) in model.params_mut().into_iter().zip(&best_params) {
        *dst = src.clone();
    }
    let test_metric = evaluate(&model, dataset, &split.test)?;
    Ok((
        SeedRecord {
            seed,
            split_id,
            best_epoch,
            epochs_run,
            best_val_metric: best_val,
            test_metric,
            loss_curve,
        },
        model,
    ))
}

/// Train once per seed, cycling through the dataset's splits, and aggregate
/// mean ± sample standard deviation of the test metric. Returns the report
/// and the model of the seed with the highest validation metric (ties to the
/// earliest seed).
pub fn run_protocol(
    dataset: &Dataset,
    config: &TrainConfig,
    dataset_name: &str,
    parallel: bool,
) -> Result<(TrainReport, GraphModel), TrainError> {
    config.validate()?;
    dataset.validate()?;
    let n_splits = dataset.splits.len().max(1);
    if dataset.splits.is_empty() {
        return Err(TrainError::BadConfig("dataset has no splits".into()));
    }

    let jobs: Vec<(usize, u64)> = config
        .seeds
        .iter()
        .enumerate()
        .map(|(i, &s)| (i % n_splits, s))
        .collect();

    let mut results: Vec<(SeedRecord, GraphModel)> = Vec::with_capacity(jobs.len());
    if parallel && jobs.len() > 1 {
        let outcomes: Vec<Result<(SeedRecord, GraphModel), TrainError>> =
            std::thread::scope(|scope| {
                let handles: Vec<_> = jobs
                    .iter()
                    .map(|&(split_id, seed)| {
                        scope.spawn(move || {
                            let split = dataset.split(split_id)?;
                            train_one(dataset, split, config, split_id, seed)
                        })
                    })
                    .collect();
                // Joining in spawn order keeps aggregation deterministic.
                handles.into_iter().map(|h| h.join().expect("seed thread")).collect()
            });
        for outcome in outcomes {
            results.push(outcome?);
        }
    } else {
        for &(split_id, seed) in &jobs {
            let split = dataset.split(split_id)?;
            results.push(train_one(dataset, split, config, split_id, seed)?);
        }
    }

    let metrics: Vec<f64> = results.iter().map(|(r, _)| r.test_metric).collect();
    let mean = metrics.iter().sum::<f64>() / metrics.len() as f64;
    let std = if metrics.len() < 2 {
        0.0
    } else {
        (metrics.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (metrics.len() - 1) as f64)
            .sqrt()
    };

    let best_index = results
        .iter()
        .enumerate()
        .max_by(|(ia, (a, _)), (ib, (b, _))| {
            a.best_val_metric
                .partial_cmp(&b.best_val_metric)
                .expect("finite metrics")
                .then(ib.cmp(ia))
        })
        .map(|(i, _)| i)
        .expect("at least one seed");

    let metric_name = match dataset.task {
        Task::MulticlassAccuracy => "accuracy",
        Task::BinaryRocAuc => "rocauc",
    };
    let per_seed: Vec<SeedRecord> = results.iter().map(|(r, _)| r.clone()).collect();
    let best_model = results.swap_remove(best_index).1;
    Ok((
        TrainReport {
            model: config.model.clone(),
            dataset: dataset_name.to_string(),
            metric: metric_name.to_string(),
            mean,
            std,
            per_seed,
        },
        best_model,
    ))
}
