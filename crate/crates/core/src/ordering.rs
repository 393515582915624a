//! BFS-ordered, window-truncated adjacency sequences.
//!
//! A graph is read as a sequence of nodes in BFS order from a root. Row `i`
//! of the encoding records which of the `min(i, d_n)` immediately preceding
//! nodes node `i` is adjacent to, nearest first: column 0 is position `i-1`,
//! column 1 is position `i-2`, and so on. Rows past the graph's node count are
//! zero padding up to the dataset-wide sequence length `n_G`.
//!
//! Ties inside BFS are broken by ascending node index. A disconnected graph is
//! continued from its lowest-index unvisited node.

use std::collections::VecDeque;

use rand::Rng;

use crate::graphio::Graph;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum OrderingError {
    #[error("root {root} outside graph of {num_nodes} nodes")]
    BadRoot { root: usize, num_nodes: usize },
    #[error("order is not a permutation of 0..{0}")]
    NotPermutation(usize),
    #[error("sequence length {n_g} shorter than graph of {num_nodes} nodes")]
    TooShort { n_g: usize, num_nodes: usize },
    #[error("encoding width must be at least 1")]
    ZeroWidth,
    #[error("malformed encoding: {0}")]
    Malformed(String),
}

/// `(n_G × d_n)` binary matrix plus the metadata needed to map rows back to nodes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedGraph {
    rows: Vec<u8>,
    n_g: usize,
    d_n: usize,
    true_len: usize,
    order: Vec<usize>,
}

impl EncodedGraph {
    /// Validating constructor from raw parts.
    pub fn from_parts(rows: Vec<u8>, n_g: usize, d_n: usize, order: Vec<usize>) -> Result<Self, OrderingError> {
        if d_n == 0 {
            return Err(OrderingError::ZeroWidth);
        }
        let true_len = order.len();
        if true_len == 0 {
            return Err(OrderingError::Malformed("empty order".into()));
        }
        if n_g < true_len {
            return Err(OrderingError::TooShort { n_g, num_nodes: true_len });
        }
        if rows.len() != n_g.checked_mul(d_n).ok_or_else(|| OrderingError::Malformed("size overflow".into()))? {
            return Err(OrderingError::Malformed(format!("{} cells for {n_g} x {d_n}", rows.len())));
        }
        check_permutation(&order, true_len)?;
        for (i, row) in rows.chunks(d_n).enumerate() {
            let width = if i < true_len { i.min(d_n) } else { 0 };
            for (k, &b) in row.iter().enumerate() {
                if b > 1 {
                    return Err(OrderingError::Malformed(format!("cell ({i}, {k}) = {b} is not binary")));
                }
                if b == 1 && k >= width {
                    return Err(OrderingError::Malformed(format!("cell ({i}, {k}) set outside the predecessor window")));
                }
            }
        }
        Ok(EncodedGraph { rows, n_g, d_n, true_len, order })
    }

    pub fn n_g(&self) -> usize {
        self.n_g
    }

    pub fn d_n(&self) -> usize {
        self.d_n
    }

    /// Number of real (non-padding) rows, equal to the node count.
    pub fn true_len(&self) -> usize {
        self.true_len
    }

    pub fn root(&self) -> usize {
        self.order[0]
    }

    /// Sequence position -> original node index.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.rows[i * self.d_n..(i + 1) * self.d_n]
    }

    pub fn cells(&self) -> &[u8] {
        &self.rows
    }

    pub fn ones(&self) -> usize {
        self.rows.iter().map(|&b| b as usize).sum()
    }

    /// Real rows as whitespace-separated 0/1 text, one row per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for i in 0..self.true_len {
            let line: Vec<String> = self.row(i).iter().map(|b| b.to_string()).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }
}

fn check_permutation(order: &[usize], n: usize) -> Result<(), OrderingError> {
    let mut seen = vec![false; n];
    for &v in order {
        if v >= n || std::mem::replace(&mut seen[v], true) {
            return Err(OrderingError::NotPermutation(n));
        }
    }
    if order.len() != n {
        return Err(OrderingError::NotPermutation(n));
    }
    Ok(())
}

/// BFS visit order from `root`, restarting at the lowest unvisited node when
/// the component is exhausted.
pub fn bfs_order(g: &Graph, root: usize) -> Result<Vec<usize>, OrderingError> {
    let n = g.num_nodes();
    if root >= n {
        return Err(OrderingError::BadRoot { root, num_nodes: n });
    }
    let adj = g.adjacency();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    let mut next_start = 0;
    let mut start = root;
    loop {
        visited[start] = true;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &v in &adj[u] {
                if !visited[v] {
                    visited[v] = true;
                    queue.push_back(v);
                }
            }
        }
        while next_start < n && visited[next_start] {
            next_start += 1;
        }
        if next_start == n {
            break;
        }
        start = next_start;
    }
    Ok(order)
}

/// Truncated adjacency sequence of `g` under `order`, padded to `n_g` rows.
pub fn encode(g: &Graph, order: &[usize], d_n: usize, n_g: usize) -> Result<EncodedGraph, OrderingError> {
    let n = g.num_nodes();
    if d_n == 0 {
        return Err(OrderingError::ZeroWidth);
    }
    if n_g < n {
        return Err(OrderingError::TooShort { n_g, num_nodes: n });
    }
    check_permutation(order, n)?;
    let mut pos = vec![0; n];
    for (p, &v) in order.iter().enumerate() {
        pos[v] = p;
    }
    let mut rows = vec![0u8; n_g * d_n];
    for &(u, v) in g.edges() {
        let (a, b) = (pos[u].min(pos[v]), pos[u].max(pos[v]));
        let k = b - a - 1;
        if k < d_n {
            rows[b * d_n + k] = 1;
        }
    }
    Ok(EncodedGraph { rows, n_g, d_n, true_len: n, order: order.to_vec() })
}

/// Graph over sequence positions whose edges are exactly the window bits set.
pub fn decode(e: &EncodedGraph) -> Graph {
    Graph::new(e.true_len, window_edges(e), 0).expect("window edges are valid")
}

/// Like [`decode`], but relabelled back to original node indices via the order.
pub fn decode_original(e: &EncodedGraph) -> Graph {
    let edges = window_edges(e).into_iter().map(|(a, b)| (e.order[a], e.order[b]));
    Graph::new(e.true_len, edges, 0).expect("window edges are valid")
}

fn window_edges(e: &EncodedGraph) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 1..e.true_len {
        for (k, &b) in e.row(i).iter().enumerate() {
            if b == 1 {
                edges.push((i - 1 - k, i));
            }
        }
    }
    edges
}

/// Largest positional distance between the endpoints of any edge under `order`.
/// The encoding is lossless exactly when this is at most `d_n`.
pub fn bandwidth(g: &Graph, order: &[usize]) -> usize {
    let mut pos = vec![0; g.num_nodes()];
    for (p, &v) in order.iter().enumerate() {
        pos[v] = p;
    }
    g.edges().iter().map(|&(u, v)| pos[u].abs_diff(pos[v])).max().unwrap_or(0)
}

/// Encoding rooted at a uniformly random node.
pub fn sample_encoding<R: Rng + ?Sized>(g: &Graph, d_n: usize, n_g: usize, rng: &mut R) -> Result<EncodedGraph, OrderingError> {
    let root = rng.random_range(0..g.num_nodes());
    encode_from_root(g, root, d_n, n_g)
}

pub fn encode_from_root(g: &Graph, root: usize, d_n: usize, n_g: usize) -> Result<EncodedGraph, OrderingError> {
    let order = bfs_order(g, root)?;
    encode(g, &order, d_n, n_g)
}
