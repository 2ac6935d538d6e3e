//! End-to-end steps shared by the command-line tool and the acceptance
//! suite: baseline training, discriminator scoring, adaptation forks and
//! evaluation on the synthetic protocol.

use crate::datagen::Dataset;
use crate::discriminator::{self, DiscTrainConfig, DiscriminatorConfig, DiscriminatorParams};
use crate::error::{Error, Result};
use crate::eval::{self, MetricRow, Template};
use crate::network::{self, CurveRow, EmbedStats, LabeledSet, Model, NetworkConfig, TrainConfig};
use crate::rng::Rng;

/// RNG stream labels, fixed so that every mode forks from identical state.
const STREAM_INIT: u64 = 11;
const STREAM_BASELINE: u64 = 12;
const STREAM_DISC_INIT: u64 = 13;
const STREAM_DISC_TRAIN: u64 = 14;
const STREAM_ADAPT: u64 = 15;

pub fn network_config(dataset: &Dataset) -> NetworkConfig {
    NetworkConfig::desk(dataset.source_identities.len())
}

pub fn source_set(dataset: &Dataset) -> LabeledSet<'_> {
    LabeledSet {
        images: &dataset.source_images,
        labels: &dataset.source_labels,
    }
}

/// Fresh initialization plus the baseline phase.
pub fn train_baseline(dataset: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<(Model, Vec<CurveRow>)> {
    let rng = Rng::new(seed);
    let model = Model::init(network_config(dataset), &mut rng.split(STREAM_INIT))?;
    network::train_baseline(model, &source_set(dataset), cfg, &mut rng.split(STREAM_BASELINE))
}

/// Discriminator trained on source versus the target adaptation images.
pub fn train_discriminator(
    dataset: &Dataset,
    arch: &DiscriminatorConfig,
    cfg: &DiscTrainConfig,
    seed: u64,
) -> Result<(DiscriminatorParams, Vec<f64>)> {
    let rng = Rng::new(seed);
    let params = DiscriminatorParams::init(arch, &mut rng.split(STREAM_DISC_INIT))?;
    discriminator::train_discriminator(
        &dataset.source_images,
        &dataset.adapt_images,
        params,
        cfg,
        &mut rng.split(STREAM_DISC_TRAIN),
    )
}

/// Adaptation phase forked from `base`. Every mode draws the same batches.
pub fn adapt(
    base: &Model,
    dataset: &Dataset,
    scores: Option<&[f64]>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<network::AdaptOutcome> {
    let target = cfg.mode.uses_target().then_some(&dataset.adapt_images[..]);
    network::adapt(
        base.clone(),
        &source_set(dataset),
        target,
        scores,
        cfg,
        cfg.baseline_epochs,
        &mut Rng::new(seed).split(STREAM_ADAPT),
    )
}

/// Metrics plus embedding statistics for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub metrics: Vec<MetricRow>,
    pub embed: EmbedStats,
}

impl EvalReport {
    pub fn tpr_at(&self, level: f64) -> Option<f64> {
        eval::lookup(&self.metrics, "tpr_at_fpr", level)
    }

    pub fn tpir_at(&self, level: f64) -> Option<f64> {
        eval::lookup(&self.metrics, "tpir_at_fpir", level)
    }
}

/// Embeds every target evaluation image, fuses templates and runs all
/// protocols.
pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<EvalReport> {
    let emb = network::embed_all(model, &dataset.eval_images)?;
    let embed = network::embed_stats(&emb, &dataset.eval_subjects())?;
    let fused = dataset
        .templates
        .iter()
        .map(|t| {
            let media = t.media.iter().map(|g| g.iter().map(|&i| emb[i].clone()).collect()).collect();
            Template {
                id: t.id,
                subject: t.subject,
                media,
            }
            .fused()
        })
        .collect::<Result<Vec<_>>>()?;
    let metrics = eval::evaluate(&fused, &dataset.template_subjects(), &dataset.protocol)?;
    Ok(EvalReport { metrics, embed })
}

/// Discriminator scores for every source image.
pub fn source_scores(dataset: &Dataset, disc: &DiscriminatorParams) -> Result<Vec<f64>> {
    let s = discriminator::score_all(&dataset.source_images, disc)?;
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("discriminator scores"));
    }
    Ok(s)
}
