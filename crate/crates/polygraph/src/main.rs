//! Command-line front end: dataset generation and inspection, training,
//! evaluation, and the gradient / polynomial-degree verification harnesses.
//!
//! Primary outputs are deterministic given their inputs; anything
//! time-dependent goes to standard error only.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use polygraph::config::{RunConfig, KEY_REFERENCE};
use polygraph::datagen::{generate, GenSpec};
use polygraph::dataset::{load_dataset, save_dataset, Task};
use polygraph::gradcheck::check_gradients;
use polygraph::graph::DirectedGraph;
use polygraph::homophily::{homophily_report, report_csv};
use polygraph::layers::{ForwardOpts, Sigma};
use polygraph::metrics;
use polygraph::model::{load_checkpoint, save_checkpoint, GraphModel, ModelConfig, ModelKind};
use polygraph::polycheck::{harness_opts, polynomial_degree_check};
use polygraph::tensor::{Tape, Tensor};
use polygraph::train::run_protocol;

#[derive(Parser)]
#[command(name = "polygraph", version, about = "Directional and polynomially expressive graph networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset utilities.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Train a model per a run config; writes report JSON/CSV, a checkpoint
    /// and the resolved config into the output directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace the config's seed list with this single seed.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Train seeds on separate threads.
        #[arg(long)]
        parallel_seeds: bool,
    },
    /// Evaluate a checkpoint on one split of a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        split: usize,
    },
    /// Measure empirical polynomial degrees of GCN and one- and two-layer
    /// gated networks under the frozen-attention identity-activation harness.
    Polycheck {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare reverse-mode gradients against central finite differences for
    /// the configured model on a small random graph.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print every config key with its default and meaning.
    ConfigReference,
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Generate a dataset from a JSON generator spec.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the manifest summary and homophily table of a dataset.
    Inspect {
        #[arg(long)]
        data: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn read_run_config(path: &Path) -> Result<RunConfig, String> {
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    RunConfig::parse(&text).map_err(|e| e.to_string())
}

fn run(command: Command) -> Result<(), String> {
    match command {
        Command::Dataset { command } => match command {
            DatasetCommand::Gen { spec, out } => cmd_dataset_gen(&spec, &out),
            DatasetCommand::Inspect { data } => cmd_dataset_inspect(&data),
        },
        Command::Train { config, out, seed_override, parallel_seeds } => {
            cmd_train(&config, out, seed_override, parallel_seeds)
        }
        Command::Eval { checkpoint, data, split } => cmd_eval(&checkpoint, &data, split),
        Command::Polycheck { config } => cmd_polycheck(&config),
        Command::Gradcheck { config } => cmd_gradcheck(&config),
        Command::ConfigReference => {
            for (key, default, desc) in KEY_REFERENCE {
                if default.is_empty() {
                    println!("{key}\t(required)\t{desc}");
                } else {
                    println!("{key}\t{default}\t{desc}");
                }
            }
            Ok(())
        }
    }
}

fn cmd_dataset_gen(spec_path: &Path, out: &Path) -> Result<(), String> {
    let text = fs::read_to_string(spec_path)
        .map_err(|e| format!("cannot read spec {}: {e}", spec_path.display()))?;
    let spec: GenSpec =
        serde_json::from_str(&text).map_err(|e| format!("invalid generator spec: {e}"))?;
    let dataset = generate(&spec).map_err(|e| e.to_string())?;
    fs::create_dir_all(out).map_err(|e| format!("cannot create {}: {e}", out.display()))?;
    save_dataset(&dataset, out).map_err(|e| e.to_string())?;
    eprintln!(
        "wrote {} nodes, {} edges, {} splits to {}",
        dataset.graph.num_nodes(),
        dataset.graph.num_edges(),
        dataset.splits.len(),
        out.display()
    );
    Ok(())
}

fn cmd_dataset_inspect(data: &Path) -> Result<(), String> {
    let dataset = load_dataset(data).map_err(|e| e.to_string())?;
    println!("nodes,{}", dataset.graph.num_nodes());
    println!("edges,{}", dataset.graph.num_edges());
    println!("feature_dim,{}", dataset.features.cols());
    println!("classes,{}", dataset.num_classes);
    println!("task,{}", dataset.task.as_str());
    println!("splits,{}", dataset.splits.len());
    print!("{}", report_csv(&homophily_report(&dataset)));
    Ok(())
}

fn cmd_train(
    config_path: &Path,
    out_override: Option<PathBuf>,
    seed_override: Option<u64>,
    parallel_seeds: bool,
) -> Result<(), String> {
    let mut cfg = read_run_config(config_path)?;
    if let Some(out) = out_override {
        cfg.out = out;
    }
    if let Some(seed) = seed_override {
        cfg.train.seeds = vec![seed];
    }
    let dataset = load_dataset(&cfg.dataset).map_err(|e| e.to_string())?;
    let dataset_name = cfg
        .dataset
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());

    let started = std::time::Instant::now();
    let (report, best_model) = run_protocol(&dataset, &cfg.train, &dataset_name, parallel_seeds)
        .map_err(|e| e.to_string())?;
    eprintln!(
        "trained {} seeds in {:.1?}; test {}",
        report.per_seed.len(),
        started.elapsed(),
        report.summary_line()
    );

    fs::create_dir_all(&cfg.out).map_err(|e| format!("cannot create {}: {e}", cfg.out.display()))?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
    fs::write(cfg.out.join("report.json"), json.as_bytes()).map_err(|e| e.to_string())?;
    fs::write(cfg.out.join("report.csv"), report.to_csv()).map_err(|e| e.to_string())?;
    fs::write(cfg.out.join("config.resolved"), cfg.resolved()).map_err(|e| e.to_string())?;
    save_checkpoint(&best_model, &cfg.out.join("model.ckpt")).map_err(|e| e.to_string())?;
    println!("{}", report.summary_line());
    Ok(())
}

fn cmd_eval(checkpoint: &Path, data: &Path, split_id: usize) -> Result<(), String> {
    let model = load_checkpoint(checkpoint).map_err(|e| e.to_string())?;
    let dataset = load_dataset(data).map_err(|e| e.to_string())?;
    if model.config.in_dim != dataset.features.cols() {
        return Err(format!(
            "checkpoint expects {} input features, dataset has {}",
            model.config.in_dim,
            dataset.features.cols()
        ));
    }
    let expected_out = match dataset.task {
        Task::MulticlassAccuracy => dataset.num_classes,
        Task::BinaryRocAuc => 1,
    };
    if model.config.out_dim != expected_out {
        return Err(format!(
            "checkpoint emits {} outputs, task needs {}",
            model.config.out_dim, expected_out
        ));
    }
    let split = dataset.split(split_id).map_err(|e| e.to_string())?;
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (logits, _) = model
        .forward(&mut tape, &dataset.graph, &dataset.features, &ForwardOpts::eval(), &mut rng)
        .map_err(|e| e.to_string())?;
    let logits = tape.value(logits);
    let value = match dataset.task {
        Task::MulticlassAccuracy => metrics::accuracy(logits, &dataset.labels, &split.test),
        Task::BinaryRocAuc => {
            let scores: Vec<f64> = (0..logits.rows()).map(|i| logits.get(i, 0)).collect();
            metrics::roc_auc(&scores, &dataset.labels, &split.test)
        }
    }
    .map_err(|e| e.to_string())?;
    println!("{value}");
    Ok(())
}

/// Small fixed probe instance shared by the two verification commands.
fn probe_graph() -> (DirectedGraph, Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 12;
    let mut edges = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u != v && rand::Rng::gen_bool(&mut rng, 0.3) {
                edges.push((u, v));
            }
        }
    }
    let g = DirectedGraph::build(n, &edges).expect("probe edges in range");
    let rand_tensor = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
        Tensor::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rand::Rng::gen_range(rng, -1.0..1.0)).collect(),
        )
    };
    let x = rand_tensor(n, 6, &mut rng);
    let dir = rand_tensor(n, 6, &mut rng);
    (g, x, dir)
}

fn cmd_polycheck(config_path: &Path) -> Result<(), String> {
    let cfg = read_run_config(config_path)?;
    let (g, x, dir) = probe_graph();
    let hidden = cfg.train.hidden.min(16);
    println!("model,layers,measured_degree,bound");
    let cases: [(ModelKind, usize, usize); 3] = [
        (ModelKind::Gcn, 1, 1),
        (ModelKind::Poly, 1, 2),
        (ModelKind::Poly, 2, 4),
    ];
    for (kind, layers, bound) in cases {
        let config = ModelConfig {
            kind,
            in_dim: x.cols(),
            hidden,
            out_dim: 3,
            layers,
            heads: 1,
            sigma: Sigma::Identity,
            dropout: 0.0,
        };
        let model = GraphModel::new(config, &mut ChaCha8Rng::seed_from_u64(23));
        let degree = polynomial_degree_check(&model, &g, &x, &dir, bound, &harness_opts())
            .map_err(|e| e.to_string())?;
        println!("{},{layers},{degree},{bound}", kind.as_str());
        if degree > bound {
            return Err(format!("{} exceeds its degree bound {bound}", kind.as_str()));
        }
    }
    Ok(())
}

fn cmd_gradcheck(config_path: &Path) -> Result<(), String> {
    let cfg = read_run_config(config_path)?;
    let (kind, sigma) = cfg.train.validate().map_err(|e| e.to_string())?;
    let (g, x, _) = probe_graph();
    let hidden = cfg.train.hidden.min(16);
    let config = ModelConfig {
        kind,
        in_dim: x.cols(),
        hidden,
        out_dim: 3,
        layers: cfg.train.layers.min(2),
        heads: cfg.train.heads.min(2),
        sigma,
        dropout: 0.0,
    };
    let model = GraphModel::new(config, &mut ChaCha8Rng::seed_from_u64(29));
    let labels: Vec<usize> = (0..g.num_nodes()).map(|i| i % 3).collect();
    let mask = vec![true; g.num_nodes()];

    let eval_loss = |m: &GraphModel| -> Result<(f64, Option<Vec<Tensor>>), String> {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let opts = ForwardOpts { train: false, requires_grad: true, frozen_attention: false };
        let (logits, refs) = m
            .forward(&mut tape, &g, &x, &opts, &mut rng)
            .map_err(|e| e.to_string())?;
        let loss = tape
            .cross_entropy_logits(logits, &labels, &mask)
            .map_err(|e| e.to_string())?;
        let value = tape.value(loss).get(0, 0);
        tape.backward(loss).map_err(|e| e.to_string())?;
        let grads = refs
            .iter()
            .map(|r| {
                tape.grad(*r).cloned().unwrap_or_else(|| {
                    let (rows, cols) = tape.shape(*r);
                    Tensor::zeros(rows, cols)
                })
            })
            .collect();
        Ok((value, Some(grads)))
    };

    let (_, grads) = eval_loss(&model)?;
    let grads = grads.expect("gradients requested");
    let params: Vec<Tensor> = model.params().into_iter().cloned().collect();
    let fd_eval = |ps: &[Tensor]| {
        let mut m = model.clone();
        for (dst, src) in m.params_mut().into_iter().zip(ps) {
            *dst = src.clone();
        }
        eval_loss(&m).expect("probe forward succeeds").0
    };
    let report = check_gradients(fd_eval, &params, &grads, 1e-5, 1e-3);
    println!(
        "max_rel_error,{:e}\nentries_checked,{}",
        report.max_rel_error, report.entries_checked
    );
    if report.max_rel_error >= 1e-4 {
        return Err(format!("gradient check failed: max relative error {:e}", report.max_rel_error));
    }
    Ok(())
}
