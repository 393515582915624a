//! Run configuration: flat `key = value` files, overridable from the command line.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use vrgc::eval::VoteConfig;
use vrgc::graphio::{default_dn, Dataset};
use vrgc::model::VrgcConfig;
use vrgc::train::{CvConfig, Schedule, TrainConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: usize,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "config: {}", self.msg)
        } else {
            write!(f, "config line {}: {}", self.line, self.msg)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: String,
    pub data_dir: PathBuf,
    /// `None` picks the per-dataset default.
    pub d_n: Option<usize>,
    pub variational: bool,
    pub alpha: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub milestones: Vec<usize>,
    pub lr_factor: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub votes_n: usize,
    pub votes_k: usize,
    pub folds: usize,
    pub jobs: usize,
    /// Stratified fraction of the dataset to keep.
    pub subsample: f64,
    pub decoder_hidden: usize,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: "MUTAG".into(),
            data_dir: PathBuf::from("data"),
            d_n: None,
            variational: true,
            alpha: 0.1,
            iterations: 1400,
            batch_size: 64,
            lr: 1e-3,
            milestones: vec![400, 1000],
            lr_factor: 0.3,
            clip_norm: None,
            seed: 0,
            votes_n: 16,
            votes_k: 8,
            folds: 10,
            jobs: 1,
            subsample: 1.0,
            decoder_hidden: 32,
            out: PathBuf::from("runs/latest"),
        }
    }
}

pub const KEYS: &[&str] = &[
    "dataset",
    "data_dir",
    "d_n",
    "variational",
    "alpha",
    "iterations",
    "batch_size",
    "lr",
    "milestones",
    "lr_factor",
    "clip_norm",
    "seed",
    "votes_n",
    "votes_k",
    "folds",
    "jobs",
    "subsample",
    "decoder_hidden",
    "out",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("{key}: cannot parse {v:?}"))
}

fn float(key: &str, v: &str) -> Result<f64, String> {
    let x: f64 = num(key, v)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("{key}: {v:?} is not finite"))
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let v = v.trim();
        match key {
            "dataset" if !v.is_empty() => self.dataset = v.to_string(),
            "dataset" => return Err("dataset: empty name".into()),
            "data_dir" => self.data_dir = PathBuf::from(v),
            "d_n" => self.d_n = if v == "auto" { None } else { Some(num(key, v)?) },
            "variational" => self.variational = num(key, v)?,
            "alpha" => self.alpha = float(key, v)?,
            "iterations" => self.iterations = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "lr" => self.lr = float(key, v)?,
            "milestones" => {
                self.milestones = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|m| num(key, m.trim())).collect::<Result<_, _>>()?
                }
            }
            "lr_factor" => self.lr_factor = float(key, v)?,
            "clip_norm" => self.clip_norm = if v == "none" { None } else { Some(float(key, v)?) },
            "seed" => self.seed = num(key, v)?,
            "votes_n" => self.votes_n = num(key, v)?,
            "votes_k" => self.votes_k = num(key, v)?,
            "folds" => self.folds = num(key, v)?,
            "jobs" => self.jobs = num(key, v)?,
            "subsample" => self.subsample = float(key, v)?,
            "decoder_hidden" => self.decoder_hidden = num(key, v)?,
            "out" => self.out = PathBuf::from(v),
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "dataset" => self.dataset.clone(),
            "data_dir" => self.data_dir.display().to_string(),
            "d_n" => self.d_n.map_or("auto".into(), |d| d.to_string()),
            "variational" => self.variational.to_string(),
            "alpha" => self.alpha.to_string(),
            "iterations" => self.iterations.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr" => self.lr.to_string(),
            "milestones" => self.milestones.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            "lr_factor" => self.lr_factor.to_string(),
            "clip_norm" => self.clip_norm.map_or("none".into(), |c| c.to_string()),
            "seed" => self.seed.to_string(),
            "votes_n" => self.votes_n.to_string(),
            "votes_k" => self.votes_k.to_string(),
            "folds" => self.folds.to_string(),
            "jobs" => self.jobs.to_string(),
            "subsample" => self.subsample.to_string(),
            "decoder_hidden" => self.decoder_hidden.to_string(),
            "out" => self.out.display().to_string(),
            _ => return None,
        })
    }

    /// Applies a `key = value` file on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content.split_once('=').ok_or_else(|| ConfigError { line, msg: format!("expected key = value, got {content:?}") })?;
            let k = k.trim();
            if let Some(prev) = seen.insert(k.to_string(), line) {
                return Err(ConfigError { line, msg: format!("{k} already set on line {prev}") });
            }
            self.set(k, v).map_err(|msg| ConfigError { line, msg })?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.get(k).expect("listed key"))).collect()
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        KEYS.iter().map(|k| (k.to_string(), self.get(k).expect("listed key"))).collect()
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<RunConfig, ConfigError> {
        let mut c = RunConfig::default();
        for (k, v) in map {
            c.set(k, v).map_err(|msg| ConfigError { line: 0, msg })?;
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |msg: String| Err(ConfigError { line: 0, msg });
        if self.d_n == Some(0) {
            return err("d_n must be at least 1".into());
        }
        if self.alpha < 0.0 {
            return err(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if self.batch_size == 0 || self.votes_n == 0 || self.votes_k == 0 || self.decoder_hidden == 0 {
            return err("batch_size, votes_n, votes_k and decoder_hidden must be positive".into());
        }
        if self.lr <= 0.0 || self.lr_factor <= 0.0 {
            return err("lr and lr_factor must be positive".into());
        }
        if self.clip_norm.is_some_and(|c| c <= 0.0) {
            return err("clip_norm must be positive".into());
        }
        if self.folds < 2 {
            return err(format!("need at least 2 folds, got {}", self.folds));
        }
        if self.jobs == 0 {
            return err("jobs must be at least 1".into());
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return err(format!("subsample must be in (0, 1], got {}", self.subsample));
        }
        Ok(())
    }

    pub fn resolved_dn(&self) -> Option<usize> {
        self.d_n.or_else(|| default_dn(&self.dataset))
    }

    pub fn model_config(&self, ds: &Dataset) -> VrgcConfig {
        let mut m = VrgcConfig::new(ds.d_n, ds.max_nodes(), ds.num_classes);
        m.variational = self.variational;
        m.alpha = self.alpha;
        m.decoder_hidden = self.decoder_hidden;
        m
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            batch_size: self.batch_size,
            schedule: Schedule { base_lr: self.lr, milestones: self.milestones.clone(), factor: self.lr_factor },
            clip_norm: self.clip_norm,
            ..TrainConfig::default()
        }
    }

    pub fn vote_config(&self) -> VoteConfig {
        VoteConfig { n: self.votes_n, k: self.votes_k, seed: self.seed }
    }

    pub fn cv_config(&self, ds: &Dataset) -> CvConfig {
        CvConfig {
            model: self.model_config(ds),
            train: self.train_config(),
            vote: self.vote_config(),
            folds: self.folds,
            only_folds: Vec::new(),
            jobs: self.jobs,
        }
    }
}
