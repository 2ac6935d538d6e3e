use std::fmt;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use style_adapt::datagen::{self, Dataset, DatagenConfig};
use style_adapt::discriminator::{DiscriminatorConfig, DiscriminatorParams};
use style_adapt::io::{self, DatasetParts, WeightFile};
use style_adapt::network::{Mode, Model, NetworkConfig, TrainConfig};
use style_adapt::pipeline::{self, EvalReport};
use style_adapt::rng::Rng;
use style_adapt::{par, sinkhorn, Error};

use crate::config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Numeric(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration: {m}"),
            CliError::Io(m) => write!(f, "input/output: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } | Error::Format { .. } => CliError::Io(e.to_string()),
            Error::NonFinite(_) => CliError::Numeric(e.to_string()),
            Error::Shape(_) | Error::InvalidArgument(_) => CliError::Config(e.to_string()),
        }
    }
}

type CliResult = Result<(), CliError>;

const MODEL_KIND: &str = "network";
const DISC_KIND: &str = "discriminator";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn echo_config(cfg: &RunConfig) -> CliResult {
    io::write_file(&cfg.out.join("config.resolved"), cfg.echo().as_bytes())?;
    Ok(())
}

fn write_json(path: &Path, v: &Value) -> CliResult {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    io::write_file(path, s.as_bytes())?;
    Ok(())
}

fn model_bytes(model: &Model) -> Vec<u8> {
    let meta = serde_json::to_string(&model.config).expect("config serializes");
    WeightFile::from_params(MODEL_KIND, &meta, model).to_bytes()
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    let w = WeightFile::load(path)?;
    if w.kind != MODEL_KIND {
        return Err(CliError::Io(format!("{}: expected {MODEL_KIND} weights, found {}", path.display(), w.kind)));
    }
    let config: NetworkConfig =
        serde_json::from_str(&w.meta).map_err(|e| CliError::Io(format!("{}: bad metadata: {e}", path.display())))?;
    let mut model = Model::init(config, &mut Rng::new(0))?;
    w.load_into(&mut model)?;
    Ok(model)
}

fn save_discriminator(path: &Path, arch: &DiscriminatorConfig, params: &DiscriminatorParams) -> CliResult {
    let meta = serde_json::to_string(arch).expect("config serializes");
    WeightFile::from_params(DISC_KIND, &meta, params).save(path)?;
    Ok(())
}

fn load_discriminator(path: &Path) -> Result<DiscriminatorParams, CliError> {
    let w = WeightFile::load(path)?;
    if w.kind != DISC_KIND {
        return Err(CliError::Io(format!("{}: expected {DISC_KIND} weights, found {}", path.display(), w.kind)));
    }
    let arch: DiscriminatorConfig =
        serde_json::from_str(&w.meta).map_err(|e| CliError::Io(format!("{}: bad metadata: {e}", path.display())))?;
    let mut params = DiscriminatorParams::init(&arch, &mut Rng::new(0))?;
    w.load_into(&mut params)?;
    Ok(params)
}

fn load_data(cfg: &RunConfig, parts: DatasetParts) -> Result<Dataset, CliError> {
    Ok(io::load_dataset(&cfg.data, parts)?)
}

fn train_config(cfg: &RunConfig) -> Result<TrainConfig, CliError> {
    cfg.train.validate()?;
    Ok(cfg.train.clone())
}

pub fn datagen(cfg: &RunConfig) -> CliResult {
    let dg = DatagenConfig {
        seed: cfg.seed,
        ..cfg.datagen.clone()
    };
    let d = datagen::generate(&dg)?;
    io::save_dataset(&cfg.out, &d)?;
    echo_config(cfg)?;
    let manifest = io::read_file(&cfg.out.join(io::files::MANIFEST))?;
    println!(
        "dataset: {} source images ({} identities), {} adapt, {} eval, {} templates, {} pairs",
        d.source_images.len(),
        d.source_identities.len(),
        d.adapt_images.len(),
        d.eval_images.len(),
        d.templates.len(),
        d.protocol.pairs.len()
    );
    println!("manifest sha256 {}", sha256_hex(&manifest));
    Ok(())
}

/// Baseline checkpoint from `base_weights` or by training; returns it with
/// its curve rows (empty when loaded).
fn baseline(cfg: &RunConfig, d: &Dataset, tc: &TrainConfig) -> Result<(Model, Vec<style_adapt::network::CurveRow>), CliError> {
    match &cfg.base_weights {
        Some(p) => {
            let m = load_model(p)?;
            if m.config != pipeline::network_config(d) {
                return Err(CliError::Config(format!("{}: architecture does not match the dataset", p.display())));
            }
            Ok((m, Vec::new()))
        }
        None => {
            eprintln!("training baseline for {} epochs", tc.baseline_epochs);
            Ok(pipeline::train_baseline(d, tc, cfg.seed)?)
        }
    }
}

fn require_discriminator(cfg: &RunConfig) -> Result<&PathBuf, CliError> {
    cfg.discriminator.as_ref().ok_or_else(|| {
        CliError::Config(format!(
            "mode {} needs a discriminator weight file (set discriminator = PATH)",
            cfg.train.mode
        ))
    })
}

pub fn train(cfg: &RunConfig) -> CliResult {
    let tc = train_config(cfg)?;
    let disc_path = if tc.mode.uses_scores() { Some(require_discriminator(cfg)?) } else { None };
    let d = load_data(
        cfg,
        DatasetParts {
            adapt: tc.mode.uses_target(),
            eval: false,
        },
    )?;
    let scores = match disc_path {
        Some(p) => Some(pipeline::source_scores(&d, &load_discriminator(p)?)?),
        None => None,
    };
    let (base, mut curves) = baseline(cfg, &d, &tc)?;
    io::write_file(&cfg.out.join("baseline.w"), &model_bytes(&base))?;
    eprintln!("adapting in mode {} for {} epochs", tc.mode, tc.adapt_epochs);
    let out = pipeline::adapt(&base, &d, scores.as_deref(), &tc, cfg.seed)?;
    curves.extend(out.curves);
    io::write_file(&cfg.out.join("model.w"), &model_bytes(&out.model))?;
    io::write_curves(&cfg.out.join("curves.csv"), &curves)?;
    echo_config(cfg)?;
    println!("model sha256 {}", sha256_hex(&model_bytes(&out.model)));
    Ok(())
}

pub fn train_discriminator(cfg: &RunConfig) -> CliResult {
    let d = load_data(cfg, DatasetParts { adapt: true, eval: false })?;
    let (params, curve) = pipeline::train_discriminator(&d, &cfg.disc_arch, &cfg.disc, cfg.seed)?;
    save_discriminator(&cfg.out.join("discriminator.w"), &cfg.disc_arch, &params)?;
    io::write_csv(
        &cfg.out.join("disc_curve.csv"),
        "epoch,loss",
        curve.iter().enumerate().map(|(e, l)| format!("{e},{l}")),
    )?;
    let src = pipeline::source_scores(&d, &params)?;
    let tgt = style_adapt::discriminator::score_all(&d.adapt_images, &params)?;
    io::write_csv(&cfg.out.join("source_scores.csv"), "index,score", src.iter().enumerate().map(|(i, s)| format!("{i},{s}")))?;
    let auc = style_adapt::eval::auc(&tgt, &src)?;
    let mean = src.iter().sum::<f64>() / src.len() as f64;
    let weighted = src.iter().map(|s| s * s).sum::<f64>() / src.iter().sum::<f64>();
    write_json(
        &cfg.out.join("disc_summary.json"),
        &json!({ "train_auc": auc, "source_score_mean": mean, "source_score_weighted_mean": weighted, "final_loss": curve.last() }),
    )?;
    echo_config(cfg)?;
    println!("discriminator train AUC {auc:.4}");
    Ok(())
}

fn summary(report: &EvalReport) -> Vec<(String, Value)> {
    let mut out = Vec::new();
    for r in &report.metrics {
        let key = match r.protocol.as_str() {
            "tpr_at_fpr" => format!("TPR@FPR={}", r.level),
            "tpir_at_fpir" => format!("TPIR@FPIR={}", r.level),
            "rank" => format!("rank{}", r.level),
            other => other.to_string(),
        };
        out.push((key, json!(r.value)));
    }
    let ms = |m: Option<style_adapt::network::MeanSd>| m.map_or(Value::Null, |m| json!(m.mean));
    out.push(("intra_cos".into(), ms(report.embed.intra)));
    out.push(("inter_cos".into(), ms(report.embed.inter)));
    out.push(("norm_mean".into(), json!(report.embed.norm.mean)));
    out
}

fn embed_json(report: &EvalReport) -> Value {
    let ms = |m: Option<style_adapt::network::MeanSd>| m.map_or(Value::Null, |m| json!({ "mean": m.mean, "sd": m.sd }));
    json!({
        "intra_cos": ms(report.embed.intra),
        "inter_cos": ms(report.embed.inter),
        "norm": ms(Some(report.embed.norm)),
    })
}

fn report_json(report: &EvalReport) -> Value {
    let metrics: Vec<Value> = report
        .metrics
        .iter()
        .map(|r| json!({ "protocol": r.protocol, "level": r.level, "threshold": r.threshold, "value": r.value, "unreachable": r.unreachable }))
        .collect();
    let summary: serde_json::Map<String, Value> = summary(report).into_iter().collect();
    json!({ "metrics": metrics, "summary": summary, "embed_stats": embed_json(report) })
}

pub fn eval(cfg: &RunConfig) -> CliResult {
    let path = cfg.weights.clone().unwrap_or_else(|| cfg.out.join("model.w"));
    let model = load_model(&path)?;
    let d = load_data(cfg, DatasetParts { adapt: false, eval: true })?;
    let report = pipeline::evaluate(&model, &d)?;
    io::write_csv(
        &cfg.out.join("report.csv"),
        "protocol,level,threshold,value,unreachable",
        report.metrics.iter().map(|r| {
            let t = r.threshold.map(|t| t.to_string()).unwrap_or_default();
            format!("{},{},{t},{},{}", r.protocol, r.level, r.value, r.unreachable)
        }),
    )?;
    write_json(&cfg.out.join("report.json"), &report_json(&report))?;
    echo_config(cfg)?;
    for (k, v) in summary(&report) {
        println!("{k} {v}");
    }
    Ok(())
}

struct AblationRow {
    name: String,
    mode: Mode,
    lf: usize,
    model_hash: String,
    report: EvalReport,
}

pub fn ablation(cfg: &RunConfig) -> CliResult {
    let tc = train_config(cfg)?;
    let d = load_data(cfg, DatasetParts::ALL)?;
    let (base, _) = baseline(cfg, &d, &tc)?;
    let base_bytes = model_bytes(&base);
    let base_hash = sha256_hex(&base_bytes);
    io::write_file(&cfg.out.join("baseline.w"), &base_bytes)?;

    let disc = match &cfg.discriminator {
        Some(p) => load_discriminator(p)?,
        None => {
            eprintln!("training discriminator for {} epochs", cfg.disc.epochs);
            let (params, _) = pipeline::train_discriminator(&d, &cfg.disc_arch, &cfg.disc, cfg.seed)?;
            params
        }
    };
    save_discriminator(&cfg.out.join("discriminator.w"), &cfg.disc_arch, &disc)?;
    let scores = pipeline::source_scores(&d, &disc)?;

    let mut plan: Vec<(String, Mode, usize)> = Mode::ALL.iter().map(|&m| (m.to_string(), m, tc.lf)).collect();
    if cfg.lf_sweep {
        for lf in 1..=pipeline::network_config(&d).taps.len() {
            plan.push((format!("sm_lf{lf}"), Mode::Sm, lf));
        }
    }
    let run = |(name, mode, lf): &(String, Mode, usize)| -> Result<AblationRow, Error> {
        eprintln!("ablation row {name}");
        let c = TrainConfig {
            mode: *mode,
            lf: *lf,
            ..tc.clone()
        };
        let out = pipeline::adapt(&base, &d, Some(&scores), &c, cfg.seed)?;
        Ok(AblationRow {
            name: name.clone(),
            mode: *mode,
            lf: *lf,
            model_hash: sha256_hex(&model_bytes(&out.model)),
            report: pipeline::evaluate(&out.model, &d)?,
        })
    };
    let rows: Vec<AblationRow> = if cfg.ablation_parallel {
        par::map(&plan, run).into_iter().collect::<Result<_, _>>()?
    } else {
        plan.iter().map(run).collect::<Result<_, _>>()?
    };

    let columns: Vec<String> = summary(&rows[0].report).into_iter().map(|(k, _)| k).collect();
    let fmt = |v: &Value| match v {
        Value::Null => String::new(),
        other => other.to_string(),
    };
    io::write_csv(
        &cfg.out.join("ablation.csv"),
        &format!("row,mode,lf,base_hash,model_hash,{}", columns.join(",")),
        rows.iter().map(|r| {
            let vals: Vec<String> = summary(&r.report).iter().map(|(_, v)| fmt(v)).collect();
            format!("{},{},{},{base_hash},{},{}", r.name, r.mode, r.lf, r.model_hash, vals.join(","))
        }),
    )?;
    let json_rows: Vec<Value> = rows
        .iter()
        .map(|r| {
            let summary: serde_json::Map<String, Value> = summary(&r.report).into_iter().collect();
            json!({
                "row": r.name, "mode": r.mode.to_string(), "lf": r.lf,
                "base_hash": base_hash, "model_hash": r.model_hash,
                "summary": summary, "embed_stats": embed_json(&r.report),
            })
        })
        .collect();
    write_json(&cfg.out.join("ablation.json"), &json!({ "seed": cfg.seed, "rows": json_rows }))?;
    echo_config(cfg)?;
    for r in &rows {
        println!(
            "{:<10} TPR@FPR=0.01 {:.4}  TPIR@FPIR=0.1 {:.4}",
            r.name,
            r.report.tpr_at(0.01).unwrap_or(f64::NAN),
            r.report.tpir_at(0.1).unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

pub fn sinkhorn_check(cfg: &RunConfig) -> CliResult {
    let r = sinkhorn::oracle_suite(cfg.seed, cfg.check_instances, cfg.check_budget)?;
    let line = |ok: bool, what: String| println!("{} {what}", if ok { "PASS" } else { "FAIL" });
    line(
        r.ot_ok(),
        format!(
            "regularized OT within 5% of exact: {}/{} outside, worst relative error {:.3e} (L = {})",
            r.ot_failures, r.instances, r.worst_relative_error, cfg.check_budget
        ),
    );
    line(r.nonnegative_ok(), format!("divergence nonnegative: minimum {:.3e}", r.min_divergence));
    line(r.symmetry_ok(), format!("divergence symmetric: max asymmetry {:.3e}", r.max_asymmetry));
    line(r.self_distance_ok(), format!("self-distance zero: max {:.3e}", r.max_self_distance));
    if r.passed() {
        Ok(())
    } else {
        Err(CliError::Numeric("Sinkhorn oracle checks failed".into()))
    }
}
