//! TU Dortmund benchmark format.
//!
//! A dataset `DS` is a directory with `DS_A.txt` (one `i, j` edge per line,
//! 1-based global node ids), `DS_graph_indicator.txt` (1-based graph id of each
//! node) and `DS_graph_labels.txt` (one integer label per graph). Node and edge
//! label/attribute files may be present and are ignored.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{default_dn, Dataset, Graph, GraphIoError};

fn format_err(file: &str, line: usize, msg: impl Into<String>) -> GraphIoError {
    GraphIoError::Format { file: file.to_string(), line, msg: msg.into() }
}

/// Non-blank lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty())
}

fn parse_id(file: &str, line: usize, tok: &str) -> Result<usize, GraphIoError> {
    let id: usize = tok.trim().parse().map_err(|_| format_err(file, line, format!("bad index {:?}", tok.trim())))?;
    if id == 0 {
        return Err(format_err(file, line, "indices are 1-based"));
    }
    Ok(id)
}

/// Parses the three TU files from memory.
pub fn parse_tu(name: &str, a_txt: &str, indicator_txt: &str, labels_txt: &str) -> Result<Dataset, GraphIoError> {
    let a_file = format!("{name}_A.txt");
    let ind_file = format!("{name}_graph_indicator.txt");
    let lab_file = format!("{name}_graph_labels.txt");

    let raw_labels = lines(labels_txt)
        .map(|(ln, l)| l.parse::<i64>().map_err(|_| format_err(&lab_file, ln, format!("bad label {l:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    if raw_labels.is_empty() {
        return Err(format_err(&lab_file, 0, "no graph labels"));
    }
    let num_graphs = raw_labels.len();

    // Global node -> (graph, local index).
    let mut node_graph = Vec::new();
    let mut node_local = Vec::new();
    let mut counts = vec![0usize; num_graphs];
    for (ln, l) in lines(indicator_txt) {
        let gid = parse_id(&ind_file, ln, l)?;
        if gid > num_graphs {
            return Err(format_err(
                &ind_file,
                ln,
                format!("node references graph {gid} but only {num_graphs} graphs are labelled"),
            ));
        }
        node_graph.push(gid - 1);
        node_local.push(counts[gid - 1]);
        counts[gid - 1] += 1;
    }
    if let Some(g) = counts.iter().position(|&c| c == 0) {
        return Err(GraphIoError::InvalidDataset(format!("graph {} has no nodes", g + 1)));
    }

    let mut edges: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); num_graphs];
    for (ln, l) in lines(a_txt) {
        let (i, j) = l.split_once(',').ok_or_else(|| format_err(&a_file, ln, "expected \"i, j\""))?;
        let (i, j) = (parse_id(&a_file, ln, i)?, parse_id(&a_file, ln, j)?);
        for id in [i, j] {
            if id > node_graph.len() {
                return Err(format_err(&a_file, ln, format!("node {id} not in graph indicator")));
            }
        }
        let (gi, gj) = (node_graph[i - 1], node_graph[j - 1]);
        if gi != gj {
            return Err(format_err(&a_file, ln, format!("edge ({i}, {j}) crosses graphs {} and {}", gi + 1, gj + 1)));
        }
        let (u, v) = (node_local[i - 1], node_local[j - 1]);
        // Self-loops carry no predecessor information; drop them.
        if u != v {
            edges[gi].insert((u.min(v), u.max(v)));
        }
    }

    let mut label_values = raw_labels.clone();
    label_values.sort_unstable();
    label_values.dedup();
    let graphs = raw_labels
        .iter()
        .zip(counts)
        .zip(edges)
        .map(|((lab, n), e)| {
            let class = label_values.binary_search(lab).expect("label present");
            Graph::new(n, e, class)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let max_nodes = graphs.iter().map(Graph::num_nodes).max().unwrap_or(1);
    let ds = Dataset {
        name: name.to_string(),
        num_classes: label_values.len(),
        d_n: default_dn(name).unwrap_or(max_nodes.saturating_sub(1).max(1)),
        graphs,
        label_values,
    };
    ds.validate()?;
    Ok(ds)
}

fn read(dir: &Path, file: &str) -> Result<String, GraphIoError> {
    let path = dir.join(file);
    fs::read_to_string(&path).map_err(|source| GraphIoError::Io { path, source })
}

pub fn load_tu_dataset(dir: impl AsRef<Path>, name: &str) -> Result<Dataset, GraphIoError> {
    let dir = dir.as_ref();
    let a = read(dir, &format!("{name}_A.txt"))?;
    let ind = read(dir, &format!("{name}_graph_indicator.txt"))?;
    let lab = read(dir, &format!("{name}_graph_labels.txt"))?;
    parse_tu(name, &a, &ind, &lab)
}

/// Writes the dataset in TU format (both edge directions, original label values).
pub fn write_tu_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<(), GraphIoError> {
    let dir = dir.as_ref();
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| GraphIoError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut a = Vec::new();
    let mut ind = Vec::new();
    let mut lab = Vec::new();
    let mut base = 0;
    for (gi, g) in ds.graphs.iter().enumerate() {
        for _ in 0..g.num_nodes() {
            writeln!(ind, "{}", gi + 1).expect("vec write");
        }
        for &(u, v) in g.edges() {
            writeln!(a, "{}, {}", base + u + 1, base + v + 1).expect("vec write");
            writeln!(a, "{}, {}", base + v + 1, base + u + 1).expect("vec write");
        }
        writeln!(lab, "{}", ds.label_values[g.label()]).expect("vec write");
        base += g.num_nodes();
    }
    for (suffix, body) in [("A", a), ("graph_indicator", ind), ("graph_labels", lab)] {
        let path = dir.join(format!("{}_{suffix}.txt", ds.name));
        fs::write(&path, body).map_err(io(&path))?;
    }
    Ok(())
}
