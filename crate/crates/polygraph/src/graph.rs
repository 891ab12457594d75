//! Immutable sparse directed-graph storage with neighbor iteration in both
//! directions.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge ({0}, {1}) out of range for {2} nodes")]
    EdgeOutOfRange(usize, usize, usize),
    #[error("node {0} out of range for {1} nodes")]
    NodeOutOfRange(usize, usize),
}

/// One CSR adjacency block: `row_offsets` has length N+1 and indexes into
/// `targets`, whose entries are sorted ascending within each row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Csr {
    pub row_offsets: Vec<usize>,
    pub targets: Vec<usize>,
}

impl Csr {
    fn from_sorted_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Csr {
        let mut row_offsets = vec![0usize; num_nodes + 1];
        for &(src, _) in edges {
            row_offsets[src + 1] += 1;
        }
        for i in 0..num_nodes {
            row_offsets[i + 1] += row_offsets[i];
        }
        let targets = edges.iter().map(|&(_, dst)| dst).collect();
        Csr { row_offsets, targets }
    }

    fn row(&self, v: usize) -> &[usize] {
        &self.targets[self.row_offsets[v]..self.row_offsets[v + 1]]
    }
}

/// Directed graph stored as a CSR over the edge set plus a cached CSR over
/// the transposed edge set, both built once at construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    num_nodes: usize,
    out_csr: Csr,
    in_csr: Csr,
}

impl DirectedGraph {
    /// Build a graph from (src, dst) pairs. Duplicate edges are removed and
    /// neighbor lists are stored sorted, so iteration order is deterministic.
    pub fn build(num_nodes: usize, edges: &[(usize, usize)]) -> Result<DirectedGraph, GraphError> {
        for &(src, dst) in edges {
            if src >= num_nodes || dst >= num_nodes {
                return Err(GraphError::EdgeOutOfRange(src, dst, num_nodes));
            }
        }
        let mut fwd: Vec<(usize, usize)> = edges.to_vec();
        fwd.sort_unstable();
        fwd.dedup();
        let mut rev: Vec<(usize, usize)> = fwd.iter().map(|&(s, d)| (d, s)).collect();
        rev.sort_unstable();
        Ok(DirectedGraph {
            num_nodes,
            out_csr: Csr::from_sorted_edges(num_nodes, &fwd),
            in_csr: Csr::from_sorted_edges(num_nodes, &rev),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.out_csr.targets.len()
    }

    pub fn out_neighbors(&self, v: usize) -> Result<&[usize], GraphError> {
        if v >= self.num_nodes {
            return Err(GraphError::NodeOutOfRange(v, self.num_nodes));
        }
        Ok(self.out_csr.row(v))
    }

    pub fn in_neighbors(&self, v: usize) -> Result<&[usize], GraphError> {
        if v >= self.num_nodes {
            return Err(GraphError::NodeOutOfRange(v, self.num_nodes));
        }
        Ok(self.in_csr.row(v))
    }

    pub fn out_degree(&self, v: usize) -> usize {
        self.out_csr.row(v).len()
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.in_csr.row(v).len()
    }

    /// Edges in (src, dst) order, sorted by src then dst.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for v in 0..self.num_nodes {
            for &t in self.out_csr.row(v) {
                out.push((v, t));
            }
        }
        out
    }

    /// Graph over the reversed edge set.
    pub fn transpose(&self) -> DirectedGraph {
        let rev: Vec<(usize, usize)> = self.edges().iter().map(|&(s, d)| (d, s)).collect();
        DirectedGraph::build(self.num_nodes, &rev).expect("indices already validated")
    }

    /// Union of the edge set with its transpose; the result equals its own
    /// transpose.
    pub fn symmetrize(&self) -> DirectedGraph {
        let mut all = self.edges();
        all.extend(self.edges().iter().map(|&(s, d)| (d, s)));
        DirectedGraph::build(self.num_nodes, &all).expect("indices already validated")
    }
}
