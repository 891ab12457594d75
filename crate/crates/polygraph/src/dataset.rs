//! On-disk dataset container: graph + features + labels + splits + task.
//!
//! A dataset directory holds `manifest.json`, `edges.csv`, `features.csv`,
//! `labels.csv` and `splits.csv`; all text files are UTF-8 with LF line
//! endings and floats are written with full round-trip precision.

use crate::graph::{DirectedGraph, GraphError};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid manifest: {0}")]
    BadManifest(String),
    #[error("{file} row count {found} does not match manifest ({expected})")]
    RowCountMismatch {
        file: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("label {label} at node {node} outside class range [0, {classes})")]
    LabelOutOfRange {
        node: usize,
        label: usize,
        classes: usize,
    },
    #[error("parse error in {file} line {line}: {msg}")]
    Parse {
        file: &'static str,
        line: usize,
        msg: String,
    },
    #[error("split {split} assigns node {node} to more than one partition")]
    OverlappingSplit { split: usize, node: usize },
    #[error("split id {0} out of range for {1} splits")]
    SplitOutOfRange(usize, usize),
    #[error("binary-rocauc task requires 2 classes, got {0}")]
    BinaryNeedsTwoClasses(usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "multiclass-accuracy")]
    MulticlassAccuracy,
    #[serde(rename = "binary-rocauc")]
    BinaryRocAuc,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::MulticlassAccuracy => "multiclass-accuracy",
            Task::BinaryRocAuc => "binary-rocauc",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    num_nodes: usize,
    num_edges: usize,
    feature_dim: usize,
    num_classes: usize,
    task: Task,
    num_splits: usize,
}

/// Train/val/test masks over nodes; pairwise disjoint, union need not cover.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl Split {
    pub fn empty(n: usize) -> Split {
        Split {
            train: vec![false; n],
            val: vec![false; n],
            test: vec![false; n],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: DirectedGraph,
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub splits: Vec<Split>,
    pub task: Task,
}

impl Dataset {
    /// Validate the container invariants shared by construction and load.
    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.graph.num_nodes();
        if self.features.rows() != n {
            return Err(DataError::RowCountMismatch {
                file: "features.csv",
                expected: n,
                found: self.features.rows(),
            });
        }
        if self.labels.len() != n {
            return Err(DataError::RowCountMismatch {
                file: "labels.csv",
                expected: n,
                found: self.labels.len(),
            });
        }
        for (node, &label) in self.labels.iter().enumerate() {
            if label >= self.num_classes {
                return Err(DataError::LabelOutOfRange {
                    node,
                    label,
                    classes: self.num_classes,
                });
            }
        }
        if self.task == Task::BinaryRocAuc && self.num_classes != 2 {
            return Err(DataError::BinaryNeedsTwoClasses(self.num_classes));
        }
        for (sid, split) in self.splits.iter().enumerate() {
            for node in 0..n {
                let count = split.train[node] as u8 + split.val[node] as u8 + split.test[node] as u8;
                if count > 1 {
                    return Err(DataError::OverlappingSplit { split: sid, node });
                }
            }
        }
        Ok(())
    }

    pub fn split(&self, id: usize) -> Result<&Split, DataError> {
        self.splits
            .get(id)
            .ok_or(DataError::SplitOutOfRange(id, self.splits.len()))
    }

    /// Same dataset over the symmetrized graph.
    pub fn symmetrized(&self) -> Dataset {
        let mut out = self.clone();
        out.graph = self.graph.symmetrize();
        out
    }
}

fn read_file(dir: &Path, name: &str) -> Result<String, DataError> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(DataError::MissingFile(path.display().to_string()));
    }
    fs::read_to_string(&path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), DataError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<(), DataError> {
    dataset.validate()?;
    fs::create_dir_all(dir).map_err(|source| DataError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let manifest = Manifest {
        num_nodes: dataset.graph.num_nodes(),
        num_edges: dataset.graph.num_edges(),
        feature_dim: dataset.features.cols(),
        num_classes: dataset.num_classes,
        task: dataset.task,
        num_splits: dataset.splits.len(),
    };
    let mut manifest_json =
        serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    manifest_json.push('\n');
    write_file(dir, "manifest.json", &manifest_json)?;

    let mut edges = String::new();
    for (src, dst) in dataset.graph.edges() {
        writeln!(edges, "{src},{dst}").unwrap();
    }
    write_file(dir, "edges.csv", &edges)?;

    let mut features = String::new();
    for i in 0..dataset.features.rows() {
        let row: Vec<String> = dataset.features.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(features, "{}", row.join(",")).unwrap();
    }
    write_file(dir, "features.csv", &features)?;

    let mut labels = String::new();
    for &label in &dataset.labels {
        writeln!(labels, "{label}").unwrap();
    }
    write_file(dir, "labels.csv", &labels)?;

    let mut splits = String::new();
    for (sid, split) in dataset.splits.iter().enumerate() {
        for node in 0..dataset.graph.num_nodes() {
            let partition = if split.train[node] {
                "train"
            } else if split.val[node] {
                "val"
            } else if split.test[node] {
                "test"
            } else {
                continue;
            };
            writeln!(splits, "{sid},{node},{partition}").unwrap();
        }
    }
    write_file(dir, "splits.csv", &splits)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let manifest: Manifest = serde_json::from_str(&read_file(dir, "manifest.json")?)
        .map_err(|e| DataError::BadManifest(e.to_string()))?;
    let n = manifest.num_nodes;

    let edges_text = read_file(dir, "edges.csv")?;
    let mut edges = Vec::new();
    for (lineno, line) in edges_text.lines().enumerate() {
        let mut parts = line.split(',');
        let parse = |p: Option<&str>| -> Result<usize, DataError> {
            p.and_then(|s| s.trim().parse().ok()).ok_or(DataError::Parse {
                file: "edges.csv",
                line: lineno + 1,
                msg: format!("expected \"src,dst\", got {line:?}"),
            })
        };
        let src = parse(parts.next())?;
        let dst = parse(parts.next())?;
        edges.push((src, dst));
    }
    if edges.len() != manifest.num_edges {
        return Err(DataError::RowCountMismatch {
            file: "edges.csv",
            expected: manifest.num_edges,
            found: edges.len(),
        });
    }
    let graph = DirectedGraph::build(n, &edges)?;

    let features_text = read_file(dir, "features.csv")?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in features_text.lines().enumerate() {
        let mut row = Vec::with_capacity(manifest.feature_dim);
        for part in line.split(',') {
            let v: f64 = part.trim().parse().map_err(|_| DataError::Parse {
                file: "features.csv",
                line: lineno + 1,
                msg: format!("bad float {part:?}"),
            })?;
            row.push(v);
        }
        if row.len() != manifest.feature_dim {
            return Err(DataError::Parse {
                file: "features.csv",
                line: lineno + 1,
                msg: format!(
                    "expected {} values, got {}",
                    manifest.feature_dim,
                    row.len()
                ),
            });
        }
        rows.push(row);
    }
    if rows.len() != n {
        return Err(DataError::RowCountMismatch {
            file: "features.csv",
            expected: n,
            found: rows.len(),
        });
    }
    let features = Tensor::from_rows(&rows);

    let labels_text = read_file(dir, "labels.csv")?;
    let mut labels = Vec::new();
    for (lineno, line) in labels_text.lines().enumerate() {
        let v: usize = line.trim().parse().map_err(|_| DataError::Parse {
            file: "labels.csv",
            line: lineno + 1,
            msg: format!("bad label {line:?}"),
        })?;
        labels.push(v);
    }
    if labels.len() != n {
        return Err(DataError::RowCountMismatch {
            file: "labels.csv",
            expected: n,
            found: labels.len(),
        });
    }

    let splits_text = read_file(dir, "splits.csv")?;
    let mut splits = vec![Split::empty(n); manifest.num_splits];
    for (lineno, line) in splits_text.lines().enumerate() {
        let parts: Vec<&str> = line.split(',').collect();
        let bad = |msg: String| DataError::Parse {
            file: "splits.csv",
            line: lineno + 1,
            msg,
        };
        if parts.len() != 3 {
            return Err(bad(format!("expected \"split_id,node_id,partition\", got {line:?}")));
        }
        let sid: usize = parts[0].trim().parse().map_err(|_| bad(format!("bad split id {:?}", parts[0])))?;
        let node: usize = parts[1].trim().parse().map_err(|_| bad(format!("bad node id {:?}", parts[1])))?;
        if sid >= manifest.num_splits {
            return Err(DataError::SplitOutOfRange(sid, manifest.num_splits));
        }
        if node >= n {
            return Err(bad(format!("node {node} out of range")));
        }
        let split = &mut splits[sid];
        if split.train[node] || split.val[node] || split.test[node] {
            return Err(DataError::OverlappingSplit { split: sid, node });
        }
        match parts[2].trim() {
            "train" => split.train[node] = true,
            "val" => split.val[node] = true,
            "test" => split.test[node] = true,
            other => return Err(bad(format!("unknown partition {other:?}"))),
        }
    }

    let dataset = Dataset {
        graph,
        features,
        labels,
        num_classes: manifest.num_classes,
        splits,
        task: manifest.task,
    };
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let graph = DirectedGraph::build(3, &[(0, 1), (1, 2)]).unwrap();
        let features = Tensor::from_rows(&[
            vec![0.25, -1.5],
            vec![0.1, 0.2],
            vec![1.0 / 3.0, 2.0],
        ]);
        let mut split = Split::empty(3);
        split.train[0] = true;
        split.val[1] = true;
        split.test[2] = true;
        Dataset {
            graph,
            features,
            labels: vec![0, 1, 0],
            num_classes: 2,
            splits: vec![split],
            task: Task::MulticlassAccuracy,
        }
    }

    #[test]
    fn roundtrip_equality() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny();
        save_dataset(&ds, dir.path()).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.graph, ds.graph);
        assert_eq!(loaded.features, ds.features);
        assert_eq!(loaded.labels, ds.labels);
        assert_eq!(loaded.splits, ds.splits);
        assert_eq!(loaded.task, ds.task);
    }

    #[test]
    fn minimal_load() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny(), dir.path()).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.graph.num_nodes(), 3);
    }

    #[test]
    fn row_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny(), dir.path()).unwrap();
        // Drop one feature row: manifest says 3.
        let p = dir.path().join("features.csv");
        let text = std::fs::read_to_string(&p).unwrap();
        let truncated: Vec<&str> = text.lines().take(2).collect();
        std::fs::write(&p, truncated.join("\n") + "\n").unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(
            err,
            DataError::RowCountMismatch { file: "features.csv", expected: 3, found: 2 }
        ));
    }

    #[test]
    fn missing_file() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny(), dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("labels.csv")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(DataError::MissingFile(_))));
    }

    #[test]
    fn label_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny(), dir.path()).unwrap();
        std::fs::write(dir.path().join("labels.csv"), "0\n5\n0\n").unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, DataError::LabelOutOfRange { node: 1, label: 5, classes: 2 }));
    }

    #[test]
    fn overlapping_split_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny(), dir.path()).unwrap();
        std::fs::write(dir.path().join("splits.csv"), "0,0,train\n0,0,val\n").unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, DataError::OverlappingSplit { split: 0, node: 0 }));
    }

    #[test]
    fn byte_identical_roundtrip() {
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        save_dataset(&tiny(), dir1.path()).unwrap();
        let loaded = load_dataset(dir1.path()).unwrap();
        save_dataset(&loaded, dir2.path()).unwrap();
        for name in ["manifest.json", "edges.csv", "features.csv", "labels.csv", "splits.csv"] {
            let a = std::fs::read(dir1.path().join(name)).unwrap();
            let b = std::fs::read(dir2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs after roundtrip");
        }
    }
}
