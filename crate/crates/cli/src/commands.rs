use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use serde_json::{json, Value};
use vrgc::eval::{evaluate, votes_csv, Frozen};
use vrgc::graphio::{compute_stats, load_tu_dataset, stratified_folds, stratified_subsample, Dataset};
use vrgc::model::Vrgc;
use vrgc::nn::{load_checkpoint, save_checkpoint, ModelParams};
use vrgc::ordering::encode_from_root;
use vrgc::seeds::SeedBundle;
use vrgc::train::{cross_validate, train_fold, CvSummary, IterRecord};

use crate::config::RunConfig;

/// Writes through a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))
}

/// Loads `data_dir/dataset`, applies the `d_n` override and the subsample.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let dir = cfg.data_dir.join(&cfg.dataset);
    let mut ds = load_tu_dataset(&dir, &cfg.dataset).with_context(|| format!("loading {} from {}", cfg.dataset, dir.display()))?;
    if let Some(d) = cfg.d_n {
        ds = ds.with_dn(d)?;
    }
    if cfg.subsample < 1.0 {
        let keep = stratified_subsample(&ds, cfg.subsample, SeedBundle::new(cfg.seed).seed_for("subsample", 0))?;
        ds = ds.subset(&keep)?;
    }
    Ok(ds)
}

pub fn stats_table(ds: &Dataset) -> String {
    let s = compute_stats(ds);
    format!(
        "{:<12} {:>7} {:>8} {:>6} {:>8} {:>7} {:>7} {:>8} {:>8}\n{:<12} {:>7} {:>8} {:>6.2} {:>8.1} {:>7} {:>7} {:>8.1} {:>8.1}\n",
        "dataset",
        "graphs",
        "classes",
        "bias",
        "avg|V|",
        "min|V|",
        "max|V|",
        "avg|E|",
        "avg|A|",
        ds.name,
        s.num_graphs,
        s.num_classes,
        s.bias,
        s.avg_nodes,
        s.min_nodes,
        s.max_nodes,
        s.avg_edges,
        s.avg_adjacency_entries
    )
}

fn progress(fold: usize, r: &IterRecord) {
    if r.iteration % 100 == 0 || r.skipped {
        eprintln!(
            "fold {fold} iter {:>5} lr {:.1e} loss {:.4} (classif {:.4}, pred {:.4}){}",
            r.iteration,
            r.lr,
            r.loss_total,
            r.loss_classif,
            r.loss_pred,
            if r.skipped { " skipped" } else { "" }
        );
    }
}

/// Deterministic summary: no wall-clock values.
pub fn summary_json(cfg: &RunConfig, ds: &Dataset, s: &CvSummary) -> Value {
    let folds: Vec<Value> = s
        .folds
        .iter()
        .map(|f| {
            json!({
                "fold": f.fold,
                "accuracy": f.accuracy,
                "test_size": f.evaluation.votes.len(),
                "final_loss": f.record.tail_loss(1),
                "skipped_batches": f.record.iterations.iter().filter(|r| r.skipped).count(),
            })
        })
        .collect();
    json!({
        "dataset": s.dataset,
        "num_graphs": ds.len(),
        "num_classes": ds.num_classes,
        "d_n": ds.d_n,
        "n_g": ds.max_nodes(),
        "config": cfg.to_map(),
        "fold_accuracies": s.folds.iter().map(|f| f.accuracy).collect::<Vec<_>>(),
        "mean_accuracy": s.mean,
        "std_accuracy": s.std,
        "majority_baseline": s.majority_baseline,
        "folds": folds,
    })
}

pub fn fold_dir(out: &Path, fold: usize) -> PathBuf {
    out.join(format!("fold_{fold}"))
}

pub fn crossval(cfg: &RunConfig, only_folds: &[usize], quiet: bool) -> Result<CvSummary> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let mut cv = cfg.cv_config(&ds);
    cv.only_folds = only_folds.to_vec();
    let seeds = SeedBundle::new(cfg.seed);
    let report = |fold: usize, r: &IterRecord| {
        if !quiet {
            progress(fold, r)
        }
    };
    let summary = cross_validate(&ds, &cv, &seeds, &report)?;
    for f in &summary.folds {
        let dir = fold_dir(&cfg.out, f.fold);
        write_atomic(&dir.join("train.csv"), f.record.to_csv().as_bytes())?;
        write_atomic(&dir.join("votes.csv"), votes_csv(&f.evaluation.votes).as_bytes())?;
        fs::create_dir_all(&dir)?;
        save_checkpoint(&f.params, dir.join("model.ckpt"))?;
    }
    write_atomic(&cfg.out.join("config.txt"), cfg.to_text().as_bytes())?;
    let text = serde_json::to_string_pretty(&summary_json(cfg, &ds, &summary))? + "\n";
    write_atomic(&cfg.out.join("summary.json"), text.as_bytes())?;
    Ok(summary)
}

/// Trains one fold and writes its checkpoint and loss trace. Returns the test accuracy.
pub fn train_one_fold(cfg: &RunConfig, fold: usize, quiet: bool) -> Result<f64> {
    cfg.validate()?;
    if fold >= cfg.folds {
        bail!("fold {fold} out of range for {} folds", cfg.folds);
    }
    let ds = load_dataset(cfg)?;
    let seeds = SeedBundle::new(cfg.seed);
    let plan = stratified_folds(&ds, cfg.folds, seeds.seed_for("folds", 0))?;
    let model = Vrgc::new(cfg.model_config(&ds))?;
    let (params, record) = train_fold(&model, &ds, &plan.train_indices(fold), &cfg.train_config(), &seeds, fold, &mut |r| {
        if !quiet {
            progress(fold, r)
        }
    })?;
    let dir = fold_dir(&cfg.out, fold);
    write_atomic(&dir.join("train.csv"), record.to_csv().as_bytes())?;
    save_checkpoint(&params, dir.join("model.ckpt"))?;
    let test: Vec<_> = plan.test_indices(fold).into_iter().map(|i| (i, &ds.graphs[i])).collect();
    let vote = vrgc::eval::VoteConfig { seed: seeds.seed_for("eval", fold as u64), ..cfg.vote_config() };
    let ev = evaluate(&Frozen { model: &model, params: &params }, &test, &vote)?;
    write_atomic(&dir.join("votes.csv"), votes_csv(&ev.votes).as_bytes())?;
    Ok(ev.accuracy)
}

fn load_model(cfg: &RunConfig, ds: &Dataset, checkpoint: &Path) -> Result<(Vrgc, ModelParams)> {
    let model = Vrgc::new(cfg.model_config(ds))?;
    let params = load_checkpoint(checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
    model.check_params(&params).with_context(|| format!("{} does not match the configured model", checkpoint.display()))?;
    Ok((model, params))
}

/// Votes on the test graphs of `fold`, or on every graph when `fold` is `None`.
pub fn eval_checkpoint(cfg: &RunConfig, checkpoint: &Path, fold: Option<usize>, out: &Path) -> Result<f64> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let (model, params) = load_model(cfg, &ds, checkpoint)?;
    let seeds = SeedBundle::new(cfg.seed);
    let (ids, vote_seed) = match fold {
        Some(f) => {
            if f >= cfg.folds {
                bail!("fold {f} out of range for {} folds", cfg.folds);
            }
            let plan = stratified_folds(&ds, cfg.folds, seeds.seed_for("folds", 0))?;
            (plan.test_indices(f), seeds.seed_for("eval", f as u64))
        }
        None => ((0..ds.len()).collect(), cfg.seed),
    };
    let graphs: Vec<_> = ids.into_iter().map(|i| (i, &ds.graphs[i])).collect();
    let vote = vrgc::eval::VoteConfig { seed: vote_seed, ..cfg.vote_config() };
    let ev = evaluate(&Frozen { model: &model, params: &params }, &graphs, &vote)?;
    write_atomic(out, votes_csv(&ev.votes).as_bytes())?;
    Ok(ev.accuracy)
}

/// First two principal-component scores of each row.
pub fn pca2(rows: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if n == 0 || d == 0 {
        return vec![[0.0; 2]; n];
    }
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let pcs: Vec<_> = idx.iter().take(2).map(|&c| eig.eigenvectors.column(c).clone_owned()).collect();
    (0..n)
        .map(|i| {
            let mut s = [0.0; 2];
            for (k, pc) in pcs.iter().enumerate() {
                s[k] = centered.row(i).iter().zip(pc.iter()).map(|(a, b)| a * b).sum();
            }
            s
        })
        .collect()
}

/// `roots` encodings of each listed graph, cycling through a shuffled node order.
pub fn dump_latents(cfg: &RunConfig, checkpoint: &Path, graph_ids: &[usize], roots: usize, out: &Path) -> Result<usize> {
    cfg.validate()?;
    if roots == 0 {
        bail!("need at least one root per graph");
    }
    let ds = load_dataset(cfg)?;
    let (model, params) = load_model(cfg, &ds, checkpoint)?;
    let mut rng = SeedBundle::new(cfg.seed).stream("dump", 0);
    let mut meta = Vec::new();
    let mut batch = Vec::new();
    for &gid in graph_ids {
        let g = ds.graphs.get(gid).ok_or_else(|| anyhow!("graph {gid} out of range ({} graphs)", ds.len()))?;
        let mut nodes: Vec<usize> = (0..g.num_nodes()).collect();
        nodes.shuffle(&mut rng);
        for r in 0..roots {
            let root = nodes[r % nodes.len()];
            batch.push(encode_from_root(g, root, ds.d_n, ds.max_nodes())?);
            meta.push((gid, root, g.label()));
        }
    }
    let latents = model.latents(&params, &batch)?;
    let scores = pca2(&latents);
    let width = latents.first().map_or(0, Vec::len);
    let mut text = String::from("graph_id\troot\tlabel");
    for j in 0..width {
        text.push_str(&format!("\th{j}"));
    }
    text.push_str("\tpc1\tpc2\n");
    for ((m, h), s) in meta.iter().zip(&latents).zip(&scores) {
        text.push_str(&format!("{}\t{}\t{}", m.0, m.1, m.2));
        for v in h {
            text.push_str(&format!("\t{v}"));
        }
        text.push_str(&format!("\t{}\t{}\n", s[0], s[1]));
    }
    write_atomic(out, text.as_bytes())?;
    Ok(meta.len())
}

/// Two rooted encodings of one graph with their VAR reconstructions.
pub fn dump_recon(cfg: &RunConfig, checkpoint: &Path, graph_id: usize, latent_mean: bool, out: &Path) -> Result<()> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let (model, params) = load_model(cfg, &ds, checkpoint)?;
    let g = ds.graphs.get(graph_id).ok_or_else(|| anyhow!("graph {graph_id} out of range ({} graphs)", ds.len()))?;
    let mut rng = SeedBundle::new(cfg.seed).stream("dump", 1);
    let mut nodes: Vec<usize> = (0..g.num_nodes()).collect();
    nodes.shuffle(&mut rng);
    let mut text = format!("# graph {graph_id} label {} d_n {}\n", g.label(), ds.d_n);
    for k in 0..2 {
        let root = nodes[k % nodes.len()];
        let e = encode_from_root(g, root, ds.d_n, ds.max_nodes())?;
        let recon = model.reconstruct(&params, &e, latent_mean, &mut rng)?;
        text.push_str(&format!("# root {root} input\n{}", e.to_text()));
        text.push_str(&format!("# root {root} prediction\n{}", recon.to_text()));
    }
    write_atomic(out, text.as_bytes())
}

/// Parses a summary file back into its config snapshot.
pub fn config_from_summary(text: &str) -> Result<RunConfig> {
    let v: Value = serde_json::from_str(text)?;
    let map: BTreeMap<String, String> = serde_json::from_value(v.get("config").cloned().ok_or_else(|| anyhow!("summary has no config"))?)?;
    Ok(RunConfig::from_map(&map)?)
}
