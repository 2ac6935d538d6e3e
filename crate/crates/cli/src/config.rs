//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;

use style_adapt::datagen::DatagenConfig;
use style_adapt::discriminator::{DiscTrainConfig, DiscriminatorConfig};
use style_adapt::network::{EpsPolicy, TrainConfig};
use style_adapt::sinkhorn::EpsMetric;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: PathBuf,
    pub datagen: DatagenConfig,
    pub train: TrainConfig,
    pub disc_arch: DiscriminatorConfig,
    pub disc: DiscTrainConfig,
    pub base_weights: Option<PathBuf>,
    pub discriminator: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub lf_sweep: bool,
    pub ablation_parallel: bool,
    pub check_instances: usize,
    pub check_budget: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            data: PathBuf::from("data"),
            datagen: DatagenConfig::default(),
            train: TrainConfig::default(),
            disc_arch: DiscriminatorConfig::default(),
            disc: DiscTrainConfig::default(),
            base_weights: None,
            discriminator: None,
            weights: None,
            lf_sweep: false,
            ablation_parallel: false,
            check_instances: 200,
            check_budget: 200,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("{key}: cannot parse '{v}'"))
}

fn flag(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got '{v}'")),
    }
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn list(key: &str, v: &str) -> Result<Vec<usize>, String> {
    v.split(',').map(|s| num(key, s.trim())).collect()
}

fn show_list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn eps_policy(v: &str) -> Result<EpsPolicy, String> {
    match v {
        "dynamic" => Ok(EpsPolicy::Dynamic),
        "shared" => Ok(EpsPolicy::DynamicShared),
        other => match other.parse::<f64>() {
            Ok(e) if e > 0.0 && e.is_finite() => Ok(EpsPolicy::Fixed(e)),
            _ => Err(format!("eps: expected dynamic, shared or a positive number, got '{v}'")),
        },
    }
}

fn show_eps(p: EpsPolicy) -> String {
    match p {
        EpsPolicy::Dynamic => "dynamic".into(),
        EpsPolicy::DynamicShared => "shared".into(),
        EpsPolicy::Fixed(e) => e.to_string(),
    }
}

impl RunConfig {
    pub const KEYS: [&'static str; 39] = [
        "seed",
        "out",
        "data",
        "source_identities",
        "target_identities",
        "images_per_source",
        "images_per_target",
        "adapt_per_target",
        "gap",
        "brightness_offset",
        "jitter",
        "templates_per_target",
        "known_subjects",
        "folds",
        "mode",
        "lf",
        "lambda",
        "baseline_epochs",
        "baseline_lr",
        "adapt_epochs",
        "adapt_lr",
        "momentum",
        "batch_size",
        "sinkhorn_budget",
        "eps_momentum",
        "eps",
        "eps_metric",
        "disc_channels",
        "disc_epochs",
        "disc_lr",
        "disc_momentum",
        "disc_batch_size",
        "base_weights",
        "discriminator",
        "weights",
        "lf_sweep",
        "ablation_parallel",
        "check_instances",
        "check_budget",
    ];

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let d = &mut self.datagen;
        let t = &mut self.train;
        match key {
            "seed" => self.seed = num(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "data" => self.data = PathBuf::from(v),
            "source_identities" => d.source_identities = num(key, v)?,
            "target_identities" => d.target_identities = num(key, v)?,
            "images_per_source" => d.images_per_source = num(key, v)?,
            "images_per_target" => d.images_per_target = num(key, v)?,
            "adapt_per_target" => d.adapt_per_target = num(key, v)?,
            "gap" => d.gap = num(key, v)?,
            "brightness_offset" => d.brightness_offset = num(key, v)?,
            "jitter" => d.jitter = num(key, v)?,
            "templates_per_target" => d.templates_per_target = num(key, v)?,
            "known_subjects" => d.known_subjects = num(key, v)?,
            "folds" => d.folds = num(key, v)?,
            "mode" => t.mode = v.parse().map_err(|e: style_adapt::Error| e.to_string())?,
            "lf" => t.lf = num(key, v)?,
            "lambda" => t.lambda = num(key, v)?,
            "baseline_epochs" => t.baseline_epochs = num(key, v)?,
            "baseline_lr" => t.baseline_lr = num(key, v)?,
            "adapt_epochs" => t.adapt_epochs = num(key, v)?,
            "adapt_lr" => t.adapt_lr = num(key, v)?,
            "momentum" => t.momentum = num(key, v)?,
            "batch_size" => t.batch_size = num(key, v)?,
            "sinkhorn_budget" => t.sinkhorn_budget = num(key, v)?,
            "eps_momentum" => t.eps_momentum = num(key, v)?,
            "eps" => t.eps_policy = eps_policy(v)?,
            "eps_metric" => {
                t.eps_metric = match v {
                    "squared_euclidean" => EpsMetric::SquaredEuclidean,
                    "euclidean" => EpsMetric::Euclidean,
                    _ => return Err(format!("eps_metric: expected squared_euclidean or euclidean, got '{v}'")),
                }
            }
            "disc_channels" => self.disc_arch.channels = list(key, v)?,
            "disc_epochs" => self.disc.epochs = num(key, v)?,
            "disc_lr" => self.disc.lr = num(key, v)?,
            "disc_momentum" => self.disc.momentum = num(key, v)?,
            "disc_batch_size" => self.disc.batch_size = num(key, v)?,
            "base_weights" => self.base_weights = opt_path(v),
            "discriminator" => self.discriminator = opt_path(v),
            "weights" => self.weights = opt_path(v),
            "lf_sweep" => self.lf_sweep = flag(key, v)?,
            "ablation_parallel" => self.ablation_parallel = flag(key, v)?,
            "check_instances" => self.check_instances = num(key, v)?,
            "check_budget" => self.check_budget = num(key, v)?,
            _ => return Err(format!("unknown config key '{key}'")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> String {
        let d = &self.datagen;
        let t = &self.train;
        match key {
            "seed" => self.seed.to_string(),
            "out" => self.out.display().to_string(),
            "data" => self.data.display().to_string(),
            "source_identities" => d.source_identities.to_string(),
            "target_identities" => d.target_identities.to_string(),
            "images_per_source" => d.images_per_source.to_string(),
            "images_per_target" => d.images_per_target.to_string(),
            "adapt_per_target" => d.adapt_per_target.to_string(),
            "gap" => d.gap.to_string(),
            "brightness_offset" => d.brightness_offset.to_string(),
            "jitter" => d.jitter.to_string(),
            "templates_per_target" => d.templates_per_target.to_string(),
            "known_subjects" => d.known_subjects.to_string(),
            "folds" => d.folds.to_string(),
            "mode" => t.mode.to_string(),
            "lf" => t.lf.to_string(),
            "lambda" => t.lambda.to_string(),
            "baseline_epochs" => t.baseline_epochs.to_string(),
            "baseline_lr" => t.baseline_lr.to_string(),
            "adapt_epochs" => t.adapt_epochs.to_string(),
            "adapt_lr" => t.adapt_lr.to_string(),
            "momentum" => t.momentum.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "sinkhorn_budget" => t.sinkhorn_budget.to_string(),
            "eps_momentum" => t.eps_momentum.to_string(),
            "eps" => show_eps(t.eps_policy),
            "eps_metric" => match t.eps_metric {
                EpsMetric::SquaredEuclidean => "squared_euclidean".into(),
                EpsMetric::Euclidean => "euclidean".into(),
            },
            "disc_channels" => show_list(&self.disc_arch.channels),
            "disc_epochs" => self.disc.epochs.to_string(),
            "disc_lr" => self.disc.lr.to_string(),
            "disc_momentum" => self.disc.momentum.to_string(),
            "disc_batch_size" => self.disc.batch_size.to_string(),
            "base_weights" => show_path(&self.base_weights),
            "discriminator" => show_path(&self.discriminator),
            "weights" => show_path(&self.weights),
            "lf_sweep" => self.lf_sweep.to_string(),
            "ablation_parallel" => self.ablation_parallel.to_string(),
            "check_instances" => self.check_instances.to_string(),
            "check_budget" => self.check_budget.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
            self.set(k.trim(), v.trim()).map_err(|e| format!("line {}: {e}", i + 1))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// Every key with its resolved value, one per line.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for k in Self::KEYS {
            writeln!(s, "{k} = {}", self.get(k)).expect("string write");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::default();
        c.apply_text("gap = 0.35\nlambda=0.02 # comment\neps = 0.125\nmode = ps+sm\ndisc_channels = 4,8\nweights = a/b.w\n")
            .unwrap();
        let back = RunConfig::parse(&c.echo()).unwrap();
        assert_eq!(back, c);
        assert_eq!(RunConfig::parse(&RunConfig::default().echo()).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_and_malformed_keys_rejected() {
        assert!(RunConfig::parse("nope = 1").is_err());
        assert!(RunConfig::parse("gap").is_err());
        assert!(RunConfig::parse("gap = x").is_err());
        assert!(RunConfig::parse("mode = fancy").is_err());
        assert!(RunConfig::parse("eps = -1").is_err());
    }

    #[test]
    fn every_key_is_settable() {
        let c = RunConfig::default();
        for k in RunConfig::KEYS {
            let mut d = RunConfig::default();
            d.set(k, &c.get(k)).unwrap();
            assert_eq!(d, c, "{k}");
        }
    }
}
