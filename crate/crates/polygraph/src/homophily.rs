//! Node homophily and weighted node homophily under a family of
//! message-passing matrices.

use crate::dataset::Dataset;
use crate::graph::DirectedGraph;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HomophilyError {
    #[error("homophily undefined: every row of the message matrix is zero")]
    Undefined,
    #[error("labels length {0} does not match node count {1}")]
    LabelLength(usize, usize),
}

/// Message-passing matrix whose entries count (possibly 2-hop) walks.
/// `ASym` is the binary union of the edge set with its transpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageMatrixSpec {
    /// Adjacency A (out-edges).
    A,
    /// Transpose Aᵀ (in-edges).
    AT,
    /// Binary symmetrized adjacency.
    ASym,
    /// 2-hop walk counts A·A.
    A2,
    /// Co-in-source counts Aᵀ·A.
    ATA,
    /// Co-out-target counts A·Aᵀ.
    AAT,
}

impl MessageMatrixSpec {
    pub const ALL: [MessageMatrixSpec; 6] = [
        MessageMatrixSpec::A,
        MessageMatrixSpec::AT,
        MessageMatrixSpec::ASym,
        MessageMatrixSpec::A2,
        MessageMatrixSpec::ATA,
        MessageMatrixSpec::AAT,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MessageMatrixSpec::A => "A",
            MessageMatrixSpec::AT => "A_T",
            MessageMatrixSpec::ASym => "A_sym",
            MessageMatrixSpec::A2 => "A2",
            MessageMatrixSpec::ATA => "AT_A",
            MessageMatrixSpec::AAT => "A_AT",
        }
    }

    /// Row i of the message matrix as (column, walk count) pairs, computed by
    /// neighbor-list expansion without materializing N x N.
    fn row(&self, g: &DirectedGraph, i: usize) -> Vec<(usize, u64)> {
        let ones = |nbrs: &[usize]| nbrs.iter().map(|&j| (j, 1u64)).collect::<Vec<_>>();
        match self {
            MessageMatrixSpec::A => ones(g.out_neighbors(i).expect("node in range")),
            MessageMatrixSpec::AT => ones(g.in_neighbors(i).expect("node in range")),
            MessageMatrixSpec::ASym => {
                let mut cols: Vec<usize> = g
                    .out_neighbors(i)
                    .expect("node in range")
                    .iter()
                    .chain(g.in_neighbors(i).expect("node in range"))
                    .copied()
                    .collect();
                cols.sort_unstable();
                cols.dedup();
                cols.into_iter().map(|j| (j, 1u64)).collect()
            }
            MessageMatrixSpec::A2 => {
                expand(g.out_neighbors(i).expect("node in range"), |w| {
                    g.out_neighbors(w).expect("node in range")
                })
            }
            MessageMatrixSpec::ATA => {
                expand(g.in_neighbors(i).expect("node in range"), |w| {
                    g.out_neighbors(w).expect("node in range")
                })
            }
            MessageMatrixSpec::AAT => {
                expand(g.out_neighbors(i).expect("node in range"), |w| {
                    g.in_neighbors(w).expect("node in range")
                })
            }
        }
    }
}

fn expand<'a>(first_hop: &[usize], second_hop: impl Fn(usize) -> &'a [usize]) -> Vec<(usize, u64)> {
    let mut counts: HashMap<usize, u64> = HashMap::new();
    for &w in first_hop {
        for &j in second_hop(w) {
            *counts.entry(j).or_insert(0) += 1;
        }
    }
    let mut row: Vec<(usize, u64)> = counts.into_iter().collect();
    row.sort_unstable();
    row
}

/// Mean over nodes with out-degree >= 1 of the same-label out-neighbor
/// fraction; zero-out-degree nodes are excluded from the average.
pub fn node_homophily(g: &DirectedGraph, labels: &[usize]) -> Result<f64, HomophilyError> {
    weighted_node_homophily(g, labels, MessageMatrixSpec::A)
}

/// Weighted node homophily: per node i with a nonzero row, the label-matching
/// walk-count fraction; averaged over such nodes. Per-node counts are exact
/// integers with a single division.
pub fn weighted_node_homophily(
    g: &DirectedGraph,
    labels: &[usize],
    spec: MessageMatrixSpec,
) -> Result<f64, HomophilyError> {
    if labels.len() != g.num_nodes() {
        return Err(HomophilyError::LabelLength(labels.len(), g.num_nodes()));
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    for i in 0..g.num_nodes() {
        let row = spec.row(g, i);
        let denom: u64 = row.iter().map(|&(_, s)| s).sum();
        if denom == 0 {
            continue;
        }
        let agree: u64 = row
            .iter()
            .filter(|&&(j, _)| labels[j] == labels[i])
            .map(|&(_, s)| s)
            .sum();
        total += agree as f64 / denom as f64;
        counted += 1;
    }
    if counted == 0 {
        return Err(HomophilyError::Undefined);
    }
    Ok(total / counted as f64)
}

/// Homophily under every [`MessageMatrixSpec`]; `None` marks undefined
/// entries (all rows zero for that matrix).
pub fn homophily_report(dataset: &Dataset) -> Vec<(MessageMatrixSpec, Option<f64>)> {
    MessageMatrixSpec::ALL
        .iter()
        .map(|&spec| {
            let value = match weighted_node_homophily(&dataset.graph, &dataset.labels, spec) {
                Ok(v) => Some(v),
                Err(HomophilyError::Undefined) => None,
                Err(e) => unreachable!("dataset invariants hold: {e}"),
            };
            (spec, value)
        })
        .collect()
}

/// The report in the CLI's CSV form: header "matrix,homophily", NA for
/// undefined entries.
pub fn report_csv(report: &[(MessageMatrixSpec, Option<f64>)]) -> String {
    let mut out = String::from("matrix,homophily\n");
    for (spec, value) in report {
        match value {
            Some(v) => out.push_str(&format!("{},{}\n", spec.as_str(), v)),
            None => out.push_str(&format!("{},NA\n", spec.as_str())),
        }
    }
    out
}
