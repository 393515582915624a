use rand::{Rng, SeedableRng};
use vrgc::graphio::{Dataset, Graph};
use vrgc::model::{Noise, Vrgc, VrgcConfig};
use vrgc::nn::{load_checkpoint, save_checkpoint};
use vrgc::ordering::{encode_from_root, EncodedGraph};
use vrgc::seeds::{SeedBundle, StreamRng};
use vrgc::train::{train_fold, TrainConfig};
use vrgc::var::kl_standard_normal;

fn noise(seed: u64) -> Noise {
    Noise { dropout: StreamRng::seed_from_u64(seed), eps: StreamRng::seed_from_u64(seed + 1) }
}

fn small_cfg(d_n: usize, n_g: usize) -> VrgcConfig {
    let mut c = VrgcConfig::new(d_n, n_g, 2);
    c.pre_embed_dim = 8;
    c.embed_hidden = 12;
    c.classifier_hidden = 10;
    c.head_hidden = 8;
    c.latent_dim = 3;
    c.decoder_hidden = 6;
    c
}

fn random_graph(rng: &mut StreamRng, max_nodes: usize, label: usize) -> Graph {
    let n = rng.random_range(2..=max_nodes);
    let p: f64 = rng.random_range(0.2..0.7);
    let edges: Vec<_> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).filter(|_| rng.random_bool(p)).collect();
    Graph::new(n, edges, label).unwrap()
}

fn batch(n_g: usize, d_n: usize, seed: u64) -> (Vec<EncodedGraph>, Vec<usize>) {
    let mut rng = StreamRng::seed_from_u64(seed);
    let graphs: Vec<Graph> = (0..7).map(|i| random_graph(&mut rng, 8, i % 2)).collect();
    let enc = graphs.iter().map(|g| encode_from_root(g, rng.random_range(0..g.num_nodes()), d_n, n_g).unwrap()).collect();
    (enc, graphs.iter().map(Graph::label).collect())
}

#[test]
fn predictions_are_distributions_and_deterministic() {
    let model = Vrgc::new(small_cfg(4, 8)).unwrap();
    let p = model.init_params(&mut StreamRng::seed_from_u64(1)).unwrap();
    let (enc, _) = batch(8, 4, 2);
    let a = model.predict_batch(&p, &enc).unwrap();
    let b = model.predict_batch(&p, &enc).unwrap();
    assert_eq!(a, b);
    for row in &a {
        assert!(row.iter().all(|&x| x >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn batched_and_single_predictions_agree() {
    let model = Vrgc::new(small_cfg(4, 8)).unwrap();
    let p = model.init_params(&mut StreamRng::seed_from_u64(1)).unwrap();
    let (enc, _) = batch(8, 4, 3);
    let all = model.predict_batch(&p, &enc).unwrap();
    for (e, row) in enc.iter().zip(&all) {
        let one = model.predict(&p, e).unwrap();
        for (x, y) in one.iter().zip(row) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn prediction_depends_on_root() {
    let model = Vrgc::new(small_cfg(3, 6)).unwrap();
    let p = model.init_params(&mut StreamRng::seed_from_u64(5)).unwrap();
    // an end of the path and its centre give different encodings
    let g = Graph::new(6, [(0, 1), (1, 2), (2, 3), (3, 4), (2, 5)], 0).unwrap();
    let p0 = model.predict(&p, &encode_from_root(&g, 0, 3, 6).unwrap()).unwrap();
    let p2 = model.predict(&p, &encode_from_root(&g, 2, 3, 6).unwrap()).unwrap();
    assert!((p0[0] - p2[0]).abs() > 1e-9, "{p0:?} vs {p2:?}");
}

#[test]
fn padding_does_not_change_predictions_or_losses() {
    let model = Vrgc::new(small_cfg(4, 8)).unwrap();
    let p = model.init_params(&mut StreamRng::seed_from_u64(9)).unwrap();
    let (short, labels) = batch(8, 4, 4);
    let (long, _) = batch(13, 4, 4);
    let a = model.forward(&p, &short, Some(&labels), true, &mut noise(3)).unwrap().out;
    let b = model.forward(&p, &long, Some(&labels), true, &mut noise(3)).unwrap().out;
    assert!((a.loss_pred - b.loss_pred).abs() < 1e-12);
    assert!((a.loss_classif - b.loss_classif).abs() < 1e-12);
    let pa = model.predict_batch(&p, &short).unwrap();
    let pb = model.predict_batch(&p, &long).unwrap();
    for (x, y) in pa.iter().flatten().zip(pb.iter().flatten()) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn total_loss_decomposes() {
    let model = Vrgc::new(small_cfg(4, 8)).unwrap();
    let p = model.init_params(&mut StreamRng::seed_from_u64(9)).unwrap();
    let (enc, labels) = batch(8, 4, 6);
    let out = model.forward(&p, &enc, Some(&labels), true, &mut noise(1)).unwrap().out;
    assert!(out.loss_pred > 0.0);
    assert!((out.loss_total - model.cfg.alpha * out.loss_pred - out.loss_classif).abs() < 1e-12);

    let mut cfg = small_cfg(4, 8);
    cfg.alpha = 0.0;
    let model = Vrgc::new(cfg).unwrap();
    let out = model.forward(&p, &enc, Some(&labels), true, &mut noise(1)).unwrap().out;
    assert_eq!(out.loss_total, out.loss_classif);
}

#[test]
fn pred_loss_is_per_graph_sum_of_step_terms() {
    let model = Vrgc::new(small_cfg(4, 8)).unwrap();
    let p = model.init_params(&mut StreamRng::seed_from_u64(2)).unwrap();
    let (enc, labels) = batch(8, 4, 8);
    let out = model.forward(&p, &enc, Some(&labels), true, &mut noise(4)).unwrap().out;
    let var = out.var.unwrap();
    assert_eq!(var.kl_per_step[0], 0.0);
    assert_eq!(var.recon_per_step[0], 0.0);
    let total: f64 = var.kl_per_step.iter().chain(&var.recon_per_step).sum();
    assert!((total / enc.len() as f64 - out.loss_pred).abs() < 1e-9);
    for (mu, lv) in var.mu.iter().zip(&var.logvar) {
        assert!(kl_standard_normal(mu, lv) >= 0.0);
    }
}

#[test]
fn rgc_path_is_identical_with_zero_alpha() {
    let mut rng = StreamRng::seed_from_u64(11);
    let graphs: Vec<Graph> = (0..12).map(|i| random_graph(&mut rng, 7, i % 2)).collect();
    let ds = Dataset::new("toy", graphs, 2, 3).unwrap();
    let tc = TrainConfig { iterations: 12, batch_size: 5, ..TrainConfig::default() };
    let seeds = SeedBundle::new(4);
    let idx: Vec<usize> = (0..ds.len()).collect();

    let mut rgc_cfg = small_cfg(3, 7);
    rgc_cfg.variational = false;
    let rgc = Vrgc::new(rgc_cfg).unwrap();
    let mut var_cfg = small_cfg(3, 7);
    var_cfg.alpha = 0.0;
    let vrgc = Vrgc::new(var_cfg).unwrap();

    let (pa, ra) = train_fold(&rgc, &ds, &idx, &tc, &seeds, 0, &mut |_| {}).unwrap();
    let (pb, rb) = train_fold(&vrgc, &ds, &idx, &tc, &seeds, 0, &mut |_| {}).unwrap();
    let ta: Vec<_> = ra.iterations.iter().map(|r| r.loss_total.to_bits()).collect();
    let tb: Vec<_> = rb.iterations.iter().map(|r| r.loss_total.to_bits()).collect();
    assert_eq!(ta, tb);
    for (name, t) in &pa.tensors {
        if !name.starts_with("var.") {
            assert_eq!(t, pb.get(name).unwrap(), "{name}");
        }
    }
}

#[test]
fn checkpoint_round_trip_restores_predictions() {
    let model = Vrgc::new(small_cfg(4, 8)).unwrap();
    let p = model.init_params(&mut StreamRng::seed_from_u64(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&p, &path).unwrap();
    let q = load_checkpoint(&path).unwrap();
    model.check_params(&q).unwrap();
    let (enc, _) = batch(8, 4, 2);
    assert_eq!(model.predict_batch(&p, &enc).unwrap(), model.predict_batch(&q, &enc).unwrap());

    let other = Vrgc::new(small_cfg(5, 8)).unwrap();
    let err = other.check_params(&q).unwrap_err().to_string();
    assert!(err.contains("pre.weight"), "{err}");
}

#[test]
fn reconstruction_has_input_shape_and_window() {
    let model = Vrgc::new(small_cfg(3, 8)).unwrap();
    let p = model.init_params(&mut StreamRng::seed_from_u64(1)).unwrap();
    let g = Graph::new(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)], 0).unwrap();
    let e = encode_from_root(&g, 0, 3, 8).unwrap();
    let r = model.reconstruct(&p, &e, false, &mut StreamRng::seed_from_u64(2)).unwrap();
    assert_eq!((r.true_len(), r.d_n(), r.n_g()), (6, 3, 8));
    assert!(r.row(0).iter().all(|&b| b == 0));
    assert!(r.row(1)[1..].iter().all(|&b| b == 0));
    let m1 = model.reconstruct(&p, &e, true, &mut StreamRng::seed_from_u64(2)).unwrap();
    let m2 = model.reconstruct(&p, &e, true, &mut StreamRng::seed_from_u64(3)).unwrap();
    assert_eq!(m1, m2);
}

#[test]
fn bad_inputs_are_rejected() {
    let model = Vrgc::new(small_cfg(4, 8)).unwrap();
    let p = model.init_params(&mut StreamRng::seed_from_u64(1)).unwrap();
    let (enc, _) = batch(8, 4, 2);
    assert!(model.forward(&p, &[], None, false, &mut noise(0)).is_err());
    assert!(model.forward(&p, &enc, Some(&[0, 1]), false, &mut noise(0)).is_err());
    assert!(model.forward(&p, &enc, Some(&[2; 7]), false, &mut noise(0)).is_err());
    let (wide, _) = batch(8, 5, 2);
    assert!(model.predict_batch(&p, &wide).is_err());
}
