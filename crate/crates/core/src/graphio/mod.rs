//! Graph datasets: the in-memory graph type, TU-format I/O, dataset
//! statistics and stratified fold assignment.

mod folds;
mod tu;

use std::path::PathBuf;

pub use folds::{stratified_folds, stratified_subsample, FoldPlan};
pub use tu::{load_tu_dataset, parse_tu, write_tu_dataset};

#[derive(Debug, thiserror::Error)]
pub enum GraphIoError {
    #[error("cannot read {path}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{file}:{line}: {msg}")]
    Format { file: String, line: usize, msg: String },
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// Undirected, unweighted graph with a class label. Edges are stored once as
/// `(u, v)` with `u < v`, sorted and deduplicated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    label: usize,
}

impl Graph {
    pub fn new(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        label: usize,
    ) -> Result<Self, GraphIoError> {
        if num_nodes == 0 {
            return Err(GraphIoError::InvalidGraph("graph has no nodes".into()));
        }
        let mut out = Vec::new();
        for (u, v) in edges {
            if u == v {
                return Err(GraphIoError::InvalidGraph(format!("self-loop on node {u}")));
            }
            if u >= num_nodes || v >= num_nodes {
                return Err(GraphIoError::InvalidGraph(format!(
                    "edge ({u}, {v}) outside {num_nodes} nodes"
                )));
            }
            out.push((u.min(v), u.max(v)));
        }
        out.sort_unstable();
        out.dedup();
        Ok(Graph { num_nodes, edges: out, label })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = label;
        self
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.binary_search(&(u.min(v), u.max(v))).is_ok()
    }

    /// Neighbor lists in ascending index order.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        adj.iter_mut().for_each(|n| n.sort_unstable());
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }
}

/// Encoding width per known benchmark dataset.
pub fn default_dn(name: &str) -> Option<usize> {
    match name.to_ascii_uppercase().as_str() {
        "MUTAG" => Some(11),
        "ENZYMES" => Some(25),
        "PROTEINS_FULL" | "PROTEINS" => Some(80),
        "NCI1" => Some(11),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub num_classes: usize,
    /// Encoding width: predecessor slots kept per node row.
    pub d_n: usize,
    /// Original label value of each contiguous class index.
    pub label_values: Vec<i64>,
}

impl Dataset {
    /// Builds a dataset with contiguous labels `0..num_classes`.
    pub fn new(name: impl Into<String>, graphs: Vec<Graph>, num_classes: usize, d_n: usize) -> Result<Self, GraphIoError> {
        let label_values = (0..num_classes as i64).collect();
        let ds = Dataset { name: name.into(), graphs, num_classes, d_n, label_values };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), GraphIoError> {
        if self.graphs.is_empty() {
            return Err(GraphIoError::InvalidDataset("no graphs".into()));
        }
        if self.d_n == 0 {
            return Err(GraphIoError::InvalidDataset("d_n must be at least 1".into()));
        }
        if self.label_values.len() != self.num_classes {
            return Err(GraphIoError::InvalidDataset("label table does not match class count".into()));
        }
        let mut seen = vec![false; self.num_classes];
        for (i, g) in self.graphs.iter().enumerate() {
            if g.label() >= self.num_classes {
                return Err(GraphIoError::InvalidDataset(format!(
                    "graph {i} has label {} with {} classes",
                    g.label(),
                    self.num_classes
                )));
            }
            seen[g.label()] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(GraphIoError::InvalidDataset(format!("class {c} has no graphs")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// Padded sequence length: the largest node count in the dataset.
    pub fn max_nodes(&self) -> usize {
        self.graphs.iter().map(Graph::num_nodes).max().unwrap_or(0)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(Graph::label).collect()
    }

    pub fn with_dn(mut self, d_n: usize) -> Result<Self, GraphIoError> {
        self.d_n = d_n;
        self.validate()?;
        Ok(self)
    }

    /// Keeps the graphs at `indices`, in that order. Classes must all survive.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, GraphIoError> {
        let graphs = indices
            .iter()
            .map(|&i| self.graphs.get(i).cloned().ok_or_else(|| GraphIoError::Argument(format!("graph {i} out of range"))))
            .collect::<Result<Vec<_>, _>>()?;
        let ds = Dataset { graphs, ..self.clone() };
        ds.validate()?;
        Ok(ds)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetStats {
    pub num_graphs: usize,
    pub num_classes: usize,
    /// Fraction of graphs in the largest class.
    pub bias: f64,
    pub avg_nodes: f64,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub avg_edges: f64,
    /// Mean count of nonzero adjacency entries (each undirected edge counted twice).
    pub avg_adjacency_entries: f64,
}

pub fn compute_stats(ds: &Dataset) -> DatasetStats {
    let n = ds.graphs.len();
    let mut per_class = vec![0usize; ds.num_classes];
    for g in &ds.graphs {
        per_class[g.label()] += 1;
    }
    let nodes: Vec<usize> = ds.graphs.iter().map(Graph::num_nodes).collect();
    DatasetStats {
        num_graphs: n,
        num_classes: ds.num_classes,
        bias: *per_class.iter().max().unwrap_or(&0) as f64 / n as f64,
        avg_nodes: nodes.iter().sum::<usize>() as f64 / n as f64,
        min_nodes: nodes.iter().copied().min().unwrap_or(0),
        max_nodes: nodes.iter().copied().max().unwrap_or(0),
        avg_edges: ds.graphs.iter().map(Graph::num_edges).sum::<usize>() as f64 / n as f64,
        avg_adjacency_entries: 2.0 * ds.graphs.iter().map(Graph::num_edges).sum::<usize>() as f64 / n as f64,
    }
}
