use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use vrgc::autodiff::Tensor;
use vrgc::eval::VoteConfig;
use vrgc::graphio::{Dataset, Graph};
use vrgc::model::{Vrgc, VrgcConfig};
use vrgc::nn::ModelParams;
use vrgc::seeds::{SeedBundle, StreamRng};
use vrgc::train::{adam_step, cross_validate, mean_std, train_fold, AdamState, CvConfig, TrainConfig, TrainError};

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

fn toy_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = StreamRng::seed_from_u64(seed);
    let graphs = (0..n)
        .map(|i| {
            let k = rng.random_range(4..=7);
            // class 0: paths, class 1: cycles
            let mut edges: Vec<_> = (0..k - 1).map(|u| (u, u + 1)).collect();
            if i % 2 == 1 {
                edges.push((0, k - 1));
            }
            Graph::new(k, edges, i % 2).unwrap()
        })
        .collect();
    Dataset::new("toy", graphs, 2, 3).unwrap()
}

fn scalar_params(w: &[f64]) -> ModelParams {
    ModelParams { version: 1, tensors: BTreeMap::from([("w".to_string(), Tensor::vector(w.to_vec()))]) }
}

#[test]
fn adam_with_zero_gradient_leaves_params() {
    let mut p = scalar_params(&[0.3, -1.2]);
    let mut st = AdamState::new(&p);
    let g = BTreeMap::from([("w".to_string(), Tensor::vector(vec![0.0, 0.0]))]);
    for _ in 0..5 {
        adam_step(&mut p, &g, &mut st, 1e-3).unwrap();
    }
    assert_eq!(p.get("w").unwrap().data(), &[0.3, -1.2]);
}

#[test]
fn adam_update_direction_ignores_loss_scale() {
    let target = [1.0, -2.0, 0.5, 3.0, -0.25];
    let run = |scale: f64| {
        let mut p = scalar_params(&[0.0; 5]);
        let mut st = AdamState::new(&p);
        let mut updates = Vec::new();
        for t in 0..30 {
            let w = p.get("w").unwrap().data().to_vec();
            let g: Vec<f64> = w.iter().zip(&target).enumerate().map(|(i, (x, y))| scale * (i + 1) as f64 * 2.0 * (x - y)).collect();
            adam_step(&mut p, &BTreeMap::from([("w".to_string(), Tensor::vector(g))]), &mut st, 1e-2).unwrap();
            if t >= 10 {
                let after = p.get("w").unwrap().data().to_vec();
                updates.push(after.iter().zip(&w).map(|(a, b)| a - b).collect::<Vec<_>>());
            }
        }
        updates
    };
    let (a, b) = (run(1.0), run(10.0));
    for (ua, ub) in a.iter().flatten().zip(b.iter().flatten()) {
        if ua.abs() > 1e-12 && ub.abs() > 1e-12 {
            assert_eq!(ua.signum(), ub.signum());
        }
    }
}

#[test]
fn training_is_deterministic_per_seed() {
    let ds = toy_dataset(14, 1);
    let model = Vrgc::new(small_cfg(3, ds.max_nodes())).unwrap();
    let tc = TrainConfig { iterations: 8, batch_size: 4, ..TrainConfig::default() };
    let idx: Vec<usize> = (0..ds.len()).collect();
    let (pa, ra) = train_fold(&model, &ds, &idx, &tc, &SeedBundle::new(3), 0, &mut |_| {}).unwrap();
    let (pb, rb) = train_fold(&model, &ds, &idx, &tc, &SeedBundle::new(3), 0, &mut |_| {}).unwrap();
    assert_eq!(pa, pb);
    assert_eq!(ra.to_csv(), rb.to_csv());
    let (pc, _) = train_fold(&model, &ds, &idx, &tc, &SeedBundle::new(4), 0, &mut |_| {}).unwrap();
    assert_ne!(pa, pc);
}

#[test]
fn iterations_count_minibatches_and_follow_the_schedule() {
    let ds = toy_dataset(10, 2);
    let model = Vrgc::new(small_cfg(3, ds.max_nodes())).unwrap();
    let mut tc = TrainConfig { iterations: 7, batch_size: 4, ..TrainConfig::default() };
    tc.schedule.milestones = vec![3, 5];
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut seen = Vec::new();
    let (_, rec) = train_fold(&model, &ds, &idx, &tc, &SeedBundle::new(1), 0, &mut |r| seen.push(r.iteration)).unwrap();
    assert_eq!(seen, (0..7).collect::<Vec<_>>());
    let lrs: Vec<f64> = rec.iterations.iter().map(|r| r.lr).collect();
    assert_eq!(lrs[2], 1e-3);
    assert!((lrs[3] - 3e-4).abs() < 1e-18 && (lrs[5] - 9e-5).abs() < 1e-18);
    assert!(rec.to_csv().starts_with("iteration,loss_classif,loss_pred,loss_total,lr,skipped\n"));
}

#[test]
fn empty_or_invalid_training_sets_are_rejected() {
    let ds = toy_dataset(6, 2);
    let model = Vrgc::new(small_cfg(3, ds.max_nodes())).unwrap();
    let tc = TrainConfig { iterations: 2, ..TrainConfig::default() };
    assert!(matches!(train_fold(&model, &ds, &[], &tc, &SeedBundle::new(1), 0, &mut |_| {}), Err(TrainError::Argument(_))));
    assert!(train_fold(&model, &ds, &[99], &tc, &SeedBundle::new(1), 0, &mut |_| {}).is_err());
    let bad = TrainConfig { batch_size: 0, ..tc };
    assert!(train_fold(&model, &ds, &[0], &bad, &SeedBundle::new(1), 0, &mut |_| {}).is_err());
}

#[test]
fn cross_validation_is_leak_free_and_thread_count_independent() {
    let ds = toy_dataset(20, 3);
    let cfg = CvConfig {
        model: small_cfg(3, ds.max_nodes()),
        train: TrainConfig { iterations: 4, batch_size: 8, ..TrainConfig::default() },
        vote: VoteConfig { n: 2, k: 2, seed: 0 },
        folds: 4,
        only_folds: Vec::new(),
        jobs: 1,
    };
    let a = cross_validate(&ds, &cfg, &SeedBundle::new(9), &|_, _| {}).unwrap();
    let b = cross_validate(&ds, &CvConfig { jobs: 3, ..cfg.clone() }, &SeedBundle::new(9), &|_, _| {}).unwrap();
    assert_eq!(a.folds.len(), 4);
    for f in 0..4 {
        let test = a.plan.test_indices(f);
        assert!(a.plan.train_indices(f).iter().all(|i| !test.contains(i)));
        assert!((0.0..=1.0).contains(&a.folds[f].accuracy));
    }
    assert_eq!(a.folds.iter().map(|f| f.accuracy).collect::<Vec<_>>(), b.folds.iter().map(|f| f.accuracy).collect::<Vec<_>>());
    assert_eq!(a.folds[2].params, b.folds[2].params);
    assert_eq!(a.majority_baseline, 0.5);
}

#[test]
fn mean_std_is_population_statistic() {
    let (m, s) = mean_std(&[0.5, 1.0]);
    assert_eq!((m, s), (0.75, 0.25));
}
