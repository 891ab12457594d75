//! End-to-end acceptance suite. Each test covers one release criterion and
//! prints a single `criterion N ...: pass` line on success; the oracles here
//! are written from scratch against the public API only.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use polygraph::datagen::{directional_benchmark, generate, GenSpec, LabelMode};
use polygraph::dataset::{load_dataset, save_dataset, Task};
use polygraph::gradcheck::check_gradients;
use polygraph::graph::DirectedGraph;
use polygraph::homophily::{node_homophily, weighted_node_homophily, MessageMatrixSpec};
use polygraph::layers::{ForwardOpts, Sigma};
use polygraph::metrics::{accuracy, roc_auc, MetricError};
use polygraph::model::{GraphModel, ModelConfig, ModelKind};
use polygraph::polycheck::{harness_opts, polynomial_degree_check};
use polygraph::tensor::{Tape, Tensor};
use polygraph::train::{run_protocol, TrainConfig};

fn random_digraph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> DirectedGraph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u != v && rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    DirectedGraph::build(n, &edges).expect("edges in range")
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn bench_train_config(model: &str, layers: usize) -> TrainConfig {
    TrainConfig {
        model: model.to_string(),
        hidden: 12,
        layers,
        heads: 1,
        dropout: 0.1,
        sigma: "relu".into(),
        learning_rate: 1e-2,
        weight_decay: 0.0,
        max_epochs: 120,
        patience: 25,
        seeds: (0..10).collect(),
    }
}

#[test]
fn criterion_1_gradient_fidelity() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let g = random_digraph(&mut rng, 12, 0.3);
    let x = random_tensor(&mut rng, 12, 5);
    let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
    let mask = vec![true; 12];
    let config = ModelConfig {
        kind: ModelKind::Poly,
        in_dim: 5,
        hidden: 8,
        out_dim: 3,
        layers: 2,
        heads: 1,
        sigma: Sigma::Relu,
        dropout: 0.0,
    };
    let model = GraphModel::new(config, &mut rng);

    let loss_and_grads = |m: &GraphModel, want_grads: bool| -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let mut fwd_rng = ChaCha8Rng::seed_from_u64(0);
        let opts = ForwardOpts { train: false, requires_grad: want_grads, frozen_attention: false };
        let (logits, refs) = m.forward(&mut tape, &g, &x, &opts, &mut fwd_rng).unwrap();
        let loss = tape.cross_entropy_logits(logits, &labels, &mask).unwrap();
        let value = tape.value(loss).get(0, 0);
        if !want_grads {
            return (value, Vec::new());
        }
        tape.backward(loss).unwrap();
        let grads = refs
            .iter()
            .map(|&r| {
                tape.grad(r).cloned().unwrap_or_else(|| {
                    let (rows, cols) = tape.shape(r);
                    Tensor::zeros(rows, cols)
                })
            })
            .collect();
        (value, grads)
    };

    let (_, grads) = loss_and_grads(&model, true);
    let params: Vec<Tensor> = model.params().into_iter().cloned().collect();
    let eval = |ps: &[Tensor]| -> f64 {
        let mut m = model.clone();
        for (dst, src) in m.params_mut().into_iter().zip(ps) {
            *dst = src.clone();
        }
        loss_and_grads(&m, false).0
    };
    let report = check_gradients(eval, &params, &grads, 1e-5, 1e-3);
    assert!(
        report.max_rel_error < 1e-4,
        "max relative error {:e} over {} entries",
        report.max_rel_error,
        report.entries_checked
    );
    assert!(started.elapsed().as_secs() < 30, "took {:?}", started.elapsed());
    println!(
        "criterion 1 (gradient fidelity, max rel error {:e}): pass",
        report.max_rel_error
    );
}

#[test]
fn criterion_2_polynomial_expressivity() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let g = random_digraph(&mut rng, 14, 0.3);
    let x = random_tensor(&mut rng, 14, 6);
    let dir = random_tensor(&mut rng, 14, 6);
    let mut degree_of = |kind: ModelKind, layers: usize, bound: usize| -> usize {
        let config = ModelConfig {
            kind,
            in_dim: 6,
            hidden: 8,
            out_dim: 3,
            layers,
            heads: 1,
            sigma: Sigma::Identity,
            dropout: 0.0,
        };
        let model = GraphModel::new(config, &mut rng);
        polynomial_degree_check(&model, &g, &x, &dir, bound, &harness_opts()).unwrap()
    };
    let gcn = degree_of(ModelKind::Gcn, 1, 2);
    assert_eq!(gcn, 1, "GCN measured degree");
    let poly1 = degree_of(ModelKind::Poly, 1, 3);
    assert_eq!(poly1, 2, "one-block gated network measured degree");
    let poly2 = degree_of(ModelKind::Poly, 2, 5);
    assert!(poly2 > 1 && poly2 <= 4, "two-block measured degree {poly2}");
    println!(
        "criterion 2 (polynomial degrees gcn={gcn}, poly L=1 -> {poly1}, poly L=2 -> {poly2}): pass"
    );
}

/// Materializes the full message matrix and applies the per-node definition
/// directly; `None` when every row is zero.
fn dense_homophily(g: &DirectedGraph, labels: &[usize], spec: MessageMatrixSpec) -> Option<f64> {
    let n = g.num_nodes();
    let mut a = vec![vec![0u64; n]; n];
    for (u, v) in g.edges() {
        a[u][v] = 1;
    }
    let matmul = |x: &Vec<Vec<u64>>, y: &Vec<Vec<u64>>| {
        let mut out = vec![vec![0u64; n]; n];
        for i in 0..n {
            for k in 0..n {
                for j in 0..n {
                    out[i][j] += x[i][k] * y[k][j];
                }
            }
        }
        out
    };
    let mut at = vec![vec![0u64; n]; n];
    for i in 0..n {
        for j in 0..n {
            at[i][j] = a[j][i];
        }
    }
    let s = match spec {
        MessageMatrixSpec::A => a.clone(),
        MessageMatrixSpec::AT => at.clone(),
        MessageMatrixSpec::ASym => {
            let mut out = vec![vec![0u64; n]; n];
            for i in 0..n {
                for j in 0..n {
                    out[i][j] = a[i][j] | at[i][j];
                }
            }
            out
        }
        MessageMatrixSpec::A2 => matmul(&a, &a),
        MessageMatrixSpec::ATA => matmul(&at, &a),
        MessageMatrixSpec::AAT => matmul(&a, &at),
    };
    let mut total = 0.0;
    let mut counted = 0usize;
    for i in 0..n {
        let denom: u64 = s[i].iter().sum();
        if denom == 0 {
            continue;
        }
        let agree: u64 =
            (0..n).filter(|&j| labels[j] == labels[i]).map(|j| s[i][j]).sum();
        total += agree as f64 / denom as f64;
        counted += 1;
    }
    (counted > 0).then(|| total / counted as f64)
}

#[test]
fn criterion_3_homophily_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for case in 0..100 {
        let n = rng.gen_range(3..=30);
        let m = rng.gen_range(0..4 * n);
        let edges: Vec<(usize, usize)> =
            (0..m).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n))).collect();
        let g = DirectedGraph::build(n, &edges).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        for spec in MessageMatrixSpec::ALL {
            let got = weighted_node_homophily(&g, &labels, spec).ok();
            let want = dense_homophily(&g, &labels, spec);
            match (got, want) {
                (Some(x), Some(y)) => {
                    assert!((x - y).abs() < 1e-12, "case {case} {spec:?}: {x} vs {y}")
                }
                (None, None) => {}
                other => panic!("case {case} {spec:?}: definedness mismatch {other:?}"),
            }
        }
        if g.num_edges() > 0 {
            let plain = node_homophily(&g, &labels).unwrap();
            let weighted =
                weighted_node_homophily(&g, &labels, MessageMatrixSpec::A).unwrap();
            assert_eq!(plain, weighted, "case {case}: S=A must equal the unweighted form");
        }
    }
    println!("criterion 3 (homophily vs dense oracle, 100 graphs x 6 matrices): pass");
}

#[test]
fn criterion_4_permutation_equivariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let n = 25;
    let g = random_digraph(&mut rng, n, 0.2);
    let x = random_tensor(&mut rng, n, 6);
    for kind in [ModelKind::Poly, ModelKind::DirPoly] {
        let config = ModelConfig {
            kind,
            in_dim: 6,
            hidden: 8,
            out_dim: 4,
            layers: 2,
            heads: 2,
            sigma: Sigma::Relu,
            dropout: 0.0,
        };
        let model = GraphModel::new(config, &mut rng);
        let forward = |graph: &DirectedGraph, feats: &Tensor| -> Tensor {
            let mut tape = Tape::new();
            let mut fwd_rng = ChaCha8Rng::seed_from_u64(0);
            let (logits, _) =
                model.forward(&mut tape, graph, feats, &ForwardOpts::eval(), &mut fwd_rng).unwrap();
            tape.value(logits).clone()
        };
        let base = forward(&g, &x);
        for _ in 0..20 {
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let edges: Vec<(usize, usize)> =
                g.edges().iter().map(|&(u, v)| (perm[u], perm[v])).collect();
            let pg = DirectedGraph::build(n, &edges).unwrap();
            let mut px = Tensor::zeros(n, x.cols());
            for i in 0..n {
                for c in 0..x.cols() {
                    px.set(perm[i], c, x.get(i, c));
                }
            }
            let permuted = forward(&pg, &px);
            for i in 0..n {
                for c in 0..base.cols() {
                    let diff = (permuted.get(perm[i], c) - base.get(i, c)).abs();
                    assert!(diff < 1e-10, "{kind:?}: node {i} col {c} differs by {diff}");
                }
            }
        }
    }
    println!("criterion 4 (permutation equivariance, 20 permutations, poly + dir-poly): pass");
}

#[test]
fn criterion_5_directionality_benefit() {
    let started = Instant::now();
    let (directed, symmetrized) = directional_benchmark(1);
    let (dir_report, _) =
        run_protocol(&directed, &bench_train_config("dir-poly", 1), "bench-dir", false).unwrap();
    let (sym_report, _) = run_protocol(
        &symmetrized,
        &bench_train_config("poly", 1),
        "bench-sym",
        false,
    )
    .unwrap();
    let gap = (dir_report.mean - sym_report.mean) * 100.0;
    assert!(
        dir_report.mean >= 0.85,
        "directional accuracy {} below 85%",
        dir_report.summary_line()
    );
    assert!(
        gap >= 10.0,
        "directional gap {gap:.2} points ({} vs {})",
        dir_report.summary_line(),
        sym_report.summary_line()
    );
    assert!(started.elapsed().as_secs() < 900, "took {:?}", started.elapsed());
    println!(
        "criterion 5 (directionality: dir-poly {} vs poly-on-symmetrized {}, gap {gap:.2} pts, {:?}): pass",
        dir_report.summary_line(),
        sym_report.summary_line(),
        started.elapsed()
    );
}

#[test]
fn criterion_6_expressivity_benefit() {
    // Zero-diagonal affinity over paired blocks: neighbor averages separate the
    // pairs {0,1} and {2,3} but are identical within each pair, so within-pair
    // discrimination requires an undiluted self-feature path.
    let spec = GenSpec {
        num_nodes: 3000,
        num_classes: 4,
        feature_dim: 16,
        feature_noise: 2.0,
        affinity: vec![
            vec![0.0, 0.0, 0.4, 0.4],
            vec![0.0, 0.0, 0.4, 0.4],
            vec![0.4, 0.4, 0.0, 0.0],
            vec![0.4, 0.4, 0.0, 0.0],
        ],
        expected_out_degree: 10.0,
        label_mode: LabelMode::Intrinsic,
        split_fractions: [0.5, 0.25, 0.25],
        num_splits: 1,
        seed: 2,
    };
    let dataset = generate(&spec).unwrap();
    let h = weighted_node_homophily(&dataset.graph, &dataset.labels, MessageMatrixSpec::A).unwrap();
    assert!(h < 0.1, "benchmark must be heterophilic, h(A) = {h}");
    let (poly_report, _) =
        run_protocol(&dataset, &bench_train_config("poly", 1), "hetero", false).unwrap();
    let (gcn_report, _) =
        run_protocol(&dataset, &bench_train_config("gcn", 2), "hetero", false).unwrap();
    let gap = (poly_report.mean - gcn_report.mean) * 100.0;
    assert!(
        gap >= 5.0,
        "poly {} vs gcn {}: gap {gap:.2} points",
        poly_report.summary_line(),
        gcn_report.summary_line()
    );
    println!(
        "criterion 6 (expressivity: poly {} vs gcn {}, gap {gap:.2} pts): pass",
        poly_report.summary_line(),
        gcn_report.summary_line()
    );
}

#[test]
fn criterion_7_train_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = GenSpec {
        num_nodes: 150,
        num_classes: 3,
        feature_dim: 6,
        feature_noise: 0.5,
        affinity: vec![
            vec![0.3, 0.02, 0.02],
            vec![0.02, 0.3, 0.02],
            vec![0.02, 0.02, 0.3],
        ],
        expected_out_degree: 5.0,
        label_mode: LabelMode::Intrinsic,
        split_fractions: [0.5, 0.25, 0.25],
        num_splits: 2,
        seed: 7,
    };
    let data_dir = tmp.path().join("data");
    save_dataset(&generate(&spec).unwrap(), &data_dir).unwrap();
    let config_path = tmp.path().join("run.cfg");
    std::fs::write(
        &config_path,
        format!(
            "model=poly\nhidden=8\nlayers=2\ndropout=0.1\nlearning_rate=0.01\n\
             max_epochs=40\npatience=15\nseeds=0,1\ndataset={}\nout={}\n",
            data_dir.display(),
            tmp.path().join("unused").display()
        ),
    )
    .unwrap();
    let run = |out: &Path| {
        let status = Command::new(env!("CARGO_BIN_EXE_polygraph"))
            .args(["train", "--config"])
            .arg(&config_path)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success(), "train exited with {status}");
        std::fs::read(out.join("report.json")).unwrap()
    };
    let first = run(&tmp.path().join("run-a"));
    let second = run(&tmp.path().join("run-b"));
    assert_eq!(first, second, "report JSON differs between identical invocations");
    println!("criterion 7 (byte-identical report JSON across train reruns): pass");
}

#[test]
fn criterion_8_metric_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    for case in 0..200 {
        let n = rng.gen_range(2..60);
        // Quantized scores force heavy ties.
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..5) as f64 / 4.0).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.8)).collect();
        let mut pairs = 0.0;
        let mut wins = 0.0;
        for i in 0..n {
            if !mask[i] || labels[i] != 1 {
                continue;
            }
            for j in 0..n {
                if !mask[j] || labels[j] != 0 {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        match roc_auc(&scores, &labels, &mask) {
            Ok(got) => {
                assert!(pairs > 0.0, "case {case}: defined with no pos/neg pair");
                let want = wins / pairs;
                assert!((got - want).abs() < 1e-12, "case {case}: {got} vs {want}");
            }
            Err(MetricError::AucUndefined) => {
                assert_eq!(pairs, 0.0, "case {case}: undefined despite pos/neg pairs")
            }
            Err(e) => panic!("case {case}: {e}"),
        }

        let classes = rng.gen_range(2..5);
        let logits = random_tensor(&mut rng, n, classes);
        let mlabels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        if !mask.iter().any(|&b| b) {
            continue;
        }
        let got = accuracy(&logits, &mlabels, &mask).unwrap();
        let mut hits = 0usize;
        let mut total = 0usize;
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            let mut best = 0;
            for c in 1..classes {
                if logits.get(i, c) > logits.get(i, best) {
                    best = c;
                }
            }
            total += 1;
            hits += usize::from(best == mlabels[i]);
        }
        assert_eq!(got, hits as f64 / total as f64, "case {case}: accuracy mismatch");
    }
    println!("criterion 8 (roc_auc vs pairwise oracle, accuracy vs loop oracle): pass");
}

#[test]
fn criterion_9_format_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let files = ["manifest.json", "edges.csv", "features.csv", "labels.csv", "splits.csv"];
    for case in 0..50 {
        let classes = rng.gen_range(2..5);
        let affinity: Vec<Vec<f64>> = (0..classes)
            .map(|_| (0..classes).map(|_| rng.gen_range(0.05..0.5)).collect())
            .collect();
        let spec = GenSpec {
            num_nodes: rng.gen_range(12..50),
            num_classes: classes,
            feature_dim: rng.gen_range(2..7),
            feature_noise: rng.gen_range(0.1..1.5),
            affinity,
            expected_out_degree: rng.gen_range(1.5..6.0),
            label_mode: if rng.gen_bool(0.5) {
                LabelMode::Intrinsic
            } else {
                LabelMode::InNeighborMajority
            },
            split_fractions: [0.5, 0.25, 0.25],
            num_splits: rng.gen_range(1..4),
            seed: rng.gen(),
        };
        let dataset = generate(&spec).unwrap();
        if classes == 2 {
            assert_eq!(dataset.task, Task::BinaryRocAuc);
        }
        let first = tmp.path().join(format!("{case}-a"));
        let second = tmp.path().join(format!("{case}-b"));
        save_dataset(&dataset, &first).unwrap();
        let reloaded = load_dataset(&first).unwrap();
        save_dataset(&reloaded, &second).unwrap();
        for file in files {
            let a = std::fs::read(first.join(file)).unwrap();
            let b = std::fs::read(second.join(file)).unwrap();
            assert_eq!(a, b, "case {case}: {file} not byte-identical after round trip");
        }
    }
    println!("criterion 9 (50 datasets byte-identical through save/load/save): pass");
}
