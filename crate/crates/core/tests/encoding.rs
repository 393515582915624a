use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use vrgc::graphio::{compute_stats, load_tu_dataset, stratified_folds, write_tu_dataset, Graph};
use vrgc::ordering::{bandwidth, bfs_order, decode, decode_original, encode, encode_from_root};
use vrgc::seeds::StreamRng;

fn random_graph(rng: &mut StreamRng) -> Graph {
    let n = rng.random_range(1..=12);
    let p: f64 = rng.random_range(0.05..0.8);
    let edges: Vec<_> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).filter(|_| rng.random_bool(p)).collect();
    Graph::new(n, edges, 0).unwrap()
}

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

#[test]
fn full_width_encoding_is_lossless() {
    let mut rng = StreamRng::seed_from_u64(1);
    for _ in 0..300 {
        let g = random_graph(&mut rng);
        let n = g.num_nodes();
        let order = bfs_order(&g, rng.random_range(0..n)).unwrap();
        let e = encode(&g, &order, n.max(1), n + 3).unwrap();
        assert_eq!(decode_original(&e).edges(), g.edges());
        // position-labelled decode is the graph relabelled by the order
        let relabelled = decode(&e);
        for &(u, v) in g.edges() {
            let (pu, pv) = (order.iter().position(|&x| x == u).unwrap(), order.iter().position(|&x| x == v).unwrap());
            assert!(relabelled.has_edge(pu, pv));
        }
        assert_eq!(relabelled.num_edges(), g.num_edges());
    }
}

#[test]
fn narrow_encoding_is_lossless_exactly_within_bandwidth() {
    let mut rng = StreamRng::seed_from_u64(2);
    let (mut kept, mut lost) = (0, 0);
    for _ in 0..300 {
        let g = random_graph(&mut rng);
        let order = bfs_order(&g, rng.random_range(0..g.num_nodes())).unwrap();
        let e = encode(&g, &order, 2, 12).unwrap();
        let ok = decode_original(&e).edges() == g.edges();
        assert_eq!(ok, bandwidth(&g, &order) <= 2);
        if ok { kept += 1 } else { lost += 1 }
    }
    assert!(kept > 0 && lost > 0);
}

#[test]
fn mutag_matches_published_statistics() {
    let ds = load_tu_dataset(data_dir().join("MUTAG"), "MUTAG").unwrap();
    let s = compute_stats(&ds);
    assert_eq!((s.num_graphs, s.num_classes, s.min_nodes, s.max_nodes), (188, 2, 10, 28));
    assert_eq!((s.bias * 100.0).round(), 66.0);
    assert_eq!(s.avg_nodes.round(), 18.0);
    // adjacency entries count each bond twice: 39.6
    assert_eq!(s.avg_adjacency_entries.floor(), 39.0);
    assert_eq!(ds.d_n, 11);
    assert_eq!(ds.label_values, vec![-1, 1]);
}

#[test]
fn mutag_survives_a_write_read_cycle() {
    let ds = load_tu_dataset(data_dir().join("MUTAG"), "MUTAG").unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_tu_dataset(&ds, dir.path()).unwrap();
    let back = load_tu_dataset(dir.path(), "MUTAG").unwrap();
    assert_eq!(back, ds);
}

#[test]
fn mutag_folds_are_stratified() {
    let ds = load_tu_dataset(data_dir().join("MUTAG"), "MUTAG").unwrap();
    let plan = stratified_folds(&ds, 10, 0).unwrap();
    for f in 0..10 {
        let test = plan.test_indices(f);
        assert!((18..=19).contains(&test.len()));
        let pos = test.iter().filter(|&&i| ds.graphs[i].label() == 1).count();
        assert!((12..=13).contains(&pos), "fold {f}: {pos} positives");
    }
}

#[test]
fn every_mutag_root_encodes() {
    let ds = load_tu_dataset(data_dir().join("MUTAG"), "MUTAG").unwrap();
    let n_g = ds.max_nodes();
    for g in &ds.graphs {
        for r in 0..g.num_nodes() {
            let e = encode_from_root(g, r, ds.d_n, n_g).unwrap();
            assert_eq!(e.true_len(), g.num_nodes());
            assert!(e.ones() <= g.num_edges());
            assert_eq!(e.ones() == g.num_edges(), bandwidth(g, e.order()) <= ds.d_n);
        }
    }
}
