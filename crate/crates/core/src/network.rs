//! Recognition backbone with tapped intermediate maps, softmax classifier,
//! the adaptation objectives, and the SGD training loops.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, BlockTrace, ConvBlock, Parameters};
use crate::par;
use crate::rng::Rng;
use crate::sinkhorn::{EpsMetric, Measure, DEFAULT_BUDGET, DEFAULT_EPS_MOMENTUM};
use crate::style::{self, EpsTracker, LayerEps, LayerTapSet, SinkhornOptions};
use crate::tensor::{logsumexp_slice, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_channels: usize,
    pub input_size: usize,
    pub channels: Vec<usize>,
    /// Whether each block ends in a 2×2 average pool.
    pub pools: Vec<bool>,
    /// 1-based block indices whose outputs are exposed as taps.
    pub taps: Vec<usize>,
    pub embedding_dim: usize,
    pub num_classes: usize,
}

impl NetworkConfig {
    /// Five blocks on 32×32 inputs, taps after blocks 1–4, 64-d embedding.
    pub fn desk(num_classes: usize) -> Self {
        NetworkConfig {
            input_channels: 1,
            input_size: 32,
            channels: vec![8, 8, 16, 16, 32],
            pools: vec![true, true, false, true, true],
            taps: vec![1, 2, 3, 4],
            embedding_dim: 64,
            num_classes,
        }
    }

    /// Two blocks on 8×8 inputs with an 8-d embedding and 3 classes; small
    /// enough for exhaustive finite-difference checks.
    pub fn miniature() -> Self {
        NetworkConfig {
            input_channels: 1,
            input_size: 8,
            channels: vec![3, 4],
            pools: vec![true, true],
            taps: vec![1, 2],
            embedding_dim: 8,
            num_classes: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.len() != self.pools.len() {
            return Err(Error::invalid("one pool flag per block"));
        }
        if self.num_classes == 0 || self.embedding_dim == 0 {
            return Err(Error::invalid("classes and embedding dim must be positive"));
        }
        let pools = self.pools.iter().filter(|&&p| p).count();
        if self.input_size % (1 << pools) != 0 {
            return Err(Error::invalid("input size not divisible by the pooling factor"));
        }
        if self.taps.iter().any(|&t| t == 0 || t > self.channels.len()) {
            return Err(Error::invalid("tap index out of range"));
        }
        if self.taps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("taps must be strictly increasing"));
        }
        Ok(())
    }

    /// Spatial size of the last block's output.
    pub fn final_size(&self) -> usize {
        self.input_size >> self.pools.iter().filter(|&&p| p).count()
    }

    /// Shapes of every tap map, in tap order.
    pub fn tap_shapes(&self) -> Vec<[usize; 3]> {
        let mut size = self.input_size;
        let mut shapes = Vec::new();
        for (b, (&c, &p)) in self.channels.iter().zip(&self.pools).enumerate() {
            if p {
                size /= 2;
            }
            if self.taps.contains(&(b + 1)) {
                shapes.push([c, size, size]);
            }
        }
        shapes
    }

    /// The first `lf` taps as a style tap set.
    pub fn tap_set(&self, lf: usize) -> Result<LayerTapSet> {
        if lf == 0 || lf > self.taps.len() {
            return Err(Error::invalid(format!(
                "L_f = {lf} outside 1..={}",
                self.taps.len()
            )));
        }
        let channels = self.taps[..lf].iter().map(|&t| self.channels[t - 1]).collect();
        LayerTapSet::new(self.taps[..lf].to_vec(), channels)
    }
}

/// Convolutional feature extractor plus embedding projection.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams {
    pub blocks: Vec<ConvBlock>,
    pub proj: Tensor,
    pub proj_bias: Tensor,
    pub taps: Vec<usize>,
}

/// Single-layer perceptron `K×D` feeding the softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub weight: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: NetworkConfig,
    pub backbone: BackboneParams,
    pub classifier: ClassifierParams,
}

impl Model {
    pub fn init(config: NetworkConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut c_in = config.input_channels;
        let mut blocks = Vec::new();
        for (&c, &p) in config.channels.iter().zip(&config.pools) {
            blocks.push(ConvBlock::init(c_in, c, p, rng));
            c_in = c;
        }
        let d = config.embedding_dim;
        let flat = c_in * config.final_size() * config.final_size();
        let std_p = (1.0 / flat as f64).sqrt();
        let std_w = (1.0 / d as f64).sqrt();
        Ok(Model {
            backbone: BackboneParams {
                blocks,
                proj: Tensor::from_fn(&[d, flat], |_| std_p * rng.normal()),
                proj_bias: Tensor::zeros(&[d]),
                taps: config.taps.clone(),
            },
            classifier: ClassifierParams {
                weight: Tensor::from_fn(&[config.num_classes, d], |_| std_w * rng.normal()),
            },
            config,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.config.input_channels, self.config.input_size, self.config.input_size]
    }
}

impl Parameters for Model {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.backbone.blocks.iter().enumerate() {
            out.push((format!("backbone.block{i}.weight"), &b.weight));
            out.push((format!("backbone.block{i}.bias"), &b.bias));
        }
        out.push(("backbone.proj.weight".into(), &self.backbone.proj));
        out.push(("backbone.proj.bias".into(), &self.backbone.proj_bias));
        out.push(("classifier.weight".into(), &self.classifier.weight));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for b in &mut self.backbone.blocks {
            out.push(&mut b.weight);
            out.push(&mut b.bias);
        }
        out.push(&mut self.backbone.proj);
        out.push(&mut self.backbone.proj_bias);
        out.push(&mut self.classifier.weight);
        out
    }
}

/// Recorded forward pass of one image.
#[derive(Debug, Clone)]
pub struct GradTape {
    traces: Vec<BlockTrace>,
    last_shape: Vec<usize>,
    features: Vec<f64>,
    pub taps: Vec<Tensor>,
    pub embedding: Vec<f64>,
    pub logits: Vec<f64>,
}

pub fn forward(x: &Tensor, model: &Model) -> Result<GradTape> {
    if x.shape() != model.input_shape() {
        return Err(Error::shape(format!(
            "network expects {:?}, got {:?}",
            model.input_shape(),
            x.shape()
        )));
    }
    let bb = &model.backbone;
    let mut traces = Vec::with_capacity(bb.blocks.len());
    let mut taps = Vec::with_capacity(bb.taps.len());
    let mut cur = x.clone();
    for (b, block) in bb.blocks.iter().enumerate() {
        let (out, tr) = block.forward(&cur)?;
        traces.push(tr);
        if bb.taps.contains(&(b + 1)) {
            taps.push(out.clone());
        }
        cur = out;
    }
    let d = bb.proj.dim(0);
    let embedding: Vec<f64> = (0..d)
        .map(|i| bb.proj_bias.data()[i] + bb.proj.row(i).iter().zip(cur.data()).map(|(w, v)| w * v).sum::<f64>())
        .collect();
    let w = &model.classifier.weight;
    let logits: Vec<f64> = (0..w.dim(0))
        .map(|k| w.row(k).iter().zip(&embedding).map(|(a, b)| a * b).sum())
        .collect();
    if logits.iter().chain(&embedding).any(|v| !v.is_finite()) {
        return Err(Error::non_finite("network forward"));
    }
    Ok(GradTape {
        traces,
        last_shape: cur.shape().to_vec(),
        features: cur.into_data(),
        taps,
        embedding,
        logits,
    })
}

/// Parameter gradients given upstream gradients on the logits, optionally on
/// the embedding, and optionally on each tap map.
pub fn backward(
    tape: &GradTape,
    model: &Model,
    d_logits: &[f64],
    d_embedding: Option<&[f64]>,
    d_taps: &[Option<Tensor>],
) -> Result<Model> {
    let mut g = model.zeros_like();
    let (k, d) = (model.classifier.weight.dim(0), model.config.embedding_dim);
    if d_logits.len() != k {
        return Err(Error::shape("d_logits length"));
    }
    let w = &model.classifier.weight;
    let mut d_emb = vec![0.0; d];
    for c in 0..k {
        let dl = d_logits[c];
        if dl == 0.0 {
            continue;
        }
        for i in 0..d {
            g.classifier.weight.data_mut()[c * d + i] += dl * tape.embedding[i];
            d_emb[i] += dl * w.at2(c, i);
        }
    }
    if let Some(extra) = d_embedding {
        for (a, b) in d_emb.iter_mut().zip(extra) {
            *a += b;
        }
    }
    let f = tape.features.len();
    let mut d_feat = vec![0.0; f];
    for i in 0..d {
        g.backbone.proj_bias.data_mut()[i] += d_emb[i];
        let row = model.backbone.proj.row(i);
        let grow = &mut g.backbone.proj.data_mut()[i * f..(i + 1) * f];
        for j in 0..f {
            grow[j] += d_emb[i] * tape.features[j];
            d_feat[j] += d_emb[i] * row[j];
        }
    }
    let mut grad = Tensor::new(&tape.last_shape, d_feat)?;

    let taps = &model.backbone.taps;
    for b in (0..model.backbone.blocks.len()).rev() {
        if let Some(t) = taps.iter().position(|&l| l == b + 1) {
            if let Some(Some(dt)) = d_taps.get(t) {
                grad.axpy(1.0, dt)?;
            }
        }
        grad = model.backbone.blocks[b].backward(&tape.traces[b], &grad, &mut g.backbone.blocks[b])?;
    }
    Ok(g)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = logsumexp_slice(logits);
    logits.iter().map(|z| (z - lse).exp()).collect()
}

/// `−log softmax(logits)[label]`.
pub fn classification_loss(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    Ok(logsumexp_slice(logits) - logits[label])
}

fn classification_grad(logits: &[f64], label: usize, scale: f64) -> Vec<f64> {
    let mut p = softmax(logits);
    p[label] -= 1.0;
    p.iter_mut().for_each(|v| *v *= scale);
    p
}

/// Which adaptation objective to optimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Baseline,
    Ps,
    Sm,
    PsSm,
    Mmd,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Baseline, Mode::Ps, Mode::Sm, Mode::PsSm, Mode::Mmd];

    pub fn uses_scores(self) -> bool {
        matches!(self, Mode::Ps | Mode::PsSm)
    }

    pub fn uses_style(self) -> bool {
        matches!(self, Mode::Sm | Mode::PsSm)
    }

    pub fn uses_target(self) -> bool {
        matches!(self, Mode::Sm | Mode::PsSm | Mode::Mmd)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::Ps => "ps",
            Mode::Sm => "sm",
            Mode::PsSm => "ps+sm",
            Mode::Mmd => "mmd",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "ps" => Ok(Mode::Ps),
            "sm" => Ok(Mode::Sm),
            "ps+sm" | "sm+ps" => Ok(Mode::PsSm),
            "mmd" => Ok(Mode::Mmd),
            other => Err(Error::invalid(format!("unknown mode '{other}'"))),
        }
    }
}

/// How ε is chosen for the style loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsPolicy {
    /// Momentum-averaged batch estimates, one tracker per layer and statistic.
    Dynamic,
    /// Momentum-averaged, one tracker fed the mean of all term estimates.
    DynamicShared,
    /// A constant ε for every term.
    Fixed(f64),
}

/// ε state carried across batches during adaptation.
#[derive(Debug, Clone)]
pub struct EpsBank {
    policy: EpsPolicy,
    layers: Vec<LayerEps>,
    shared: Option<EpsTracker>,
}

impl EpsBank {
    pub fn new(policy: EpsPolicy, n_layers: usize, momentum: f64) -> Result<Self> {
        let layers = match policy {
            EpsPolicy::Dynamic => vec![LayerEps::dynamic(momentum)?; n_layers],
            EpsPolicy::DynamicShared => vec![LayerEps::fixed(1.0, 1.0); n_layers],
            EpsPolicy::Fixed(e) => {
                if !(e > 0.0) {
                    return Err(Error::invalid("fixed ε must be positive"));
                }
                vec![LayerEps::fixed(e, e); n_layers]
            }
        };
        let shared = match policy {
            EpsPolicy::DynamicShared => Some(EpsTracker::dynamic(momentum)?),
            _ => None,
        };
        Ok(EpsBank { policy, layers, shared })
    }

    /// Pin every term to the ε values currently held.
    pub fn frozen(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| LayerEps::fixed(l.mu.current().unwrap_or(1.0), l.sigma.current().unwrap_or(1.0)))
            .collect();
        EpsBank {
            policy: EpsPolicy::Fixed(1.0),
            layers,
            shared: None,
        }
    }

    pub fn layers(&self) -> &[LayerEps] {
        &self.layers
    }

    fn prepare(&mut self, source: &[Vec<Tensor>], target: &[Vec<Tensor>], taps: &LayerTapSet, metric: EpsMetric) -> Result<()> {
        if let (EpsPolicy::DynamicShared, Some(tracker)) = (self.policy, self.shared.as_mut()) {
            let mut ests = Vec::new();
            for t in 0..taps.len() {
                let layer = taps.layers()[t];
                let (pm, ps) = style::style_measures(&source[t], layer)?;
                let (qm, qs) = style::style_measures(&target[t], layer)?;
                ests.push(crate::sinkhorn::eps_estimate_batch(&pm, &qm, metric)?);
                ests.push(crate::sinkhorn::eps_estimate_batch(&ps, &qs, metric)?);
            }
            let e = tracker.advance(ests.iter().sum::<f64>() / ests.len() as f64)?;
            self.layers.iter_mut().for_each(|l| *l = LayerEps::fixed(e, e));
        }
        Ok(())
    }
}

/// Fixed ingredients of the adaptation objective.
#[derive(Debug, Clone)]
pub struct AdaptContext {
    pub lambda: f64,
    pub taps: LayerTapSet,
    pub sinkhorn: SinkhornOptions,
    pub eps: EpsBank,
    /// Kernel bandwidths for the MMD mode; derived from each batch when unset.
    pub mmd_bandwidths: Option<Vec<f64>>,
}

impl AdaptContext {
    pub fn new(config: &NetworkConfig, lf: usize, lambda: f64, sinkhorn: SinkhornOptions, policy: EpsPolicy, eps_momentum: f64) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::invalid("λ must be nonnegative"));
        }
        let taps = config.tap_set(lf)?;
        Ok(AdaptContext {
            lambda,
            eps: EpsBank::new(policy, taps.len(), eps_momentum)?,
            taps,
            sinkhorn,
            mmd_bandwidths: None,
        })
    }
}

/// A labelled source mini-batch, with optional per-image discriminator scores.
#[derive(Debug, Clone, Copy)]
pub struct SourceBatch<'a> {
    pub images: &'a [Tensor],
    pub labels: &'a [usize],
    pub scores: Option<&'a [f64]>,
}

/// Terms of one evaluation of the adaptation objective.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    /// Unweighted mean classification loss.
    pub lc: f64,
    /// Mean of `g(x)·L_c` when scores are in use.
    pub lc_weighted: Option<f64>,
    pub ls: Option<f64>,
    pub mmd: Option<f64>,
    /// `(ε_μ, ε_σ)` per tapped layer.
    pub eps: Vec<(f64, f64)>,
}

/// Loss value only.
pub fn adaptation_loss(
    model: &Model,
    source: &SourceBatch,
    target: Option<&[Tensor]>,
    mode: Mode,
    ctx: &mut AdaptContext,
) -> Result<LossBreakdown> {
    Ok(adaptation_inner(model, source, target, mode, ctx, false)?.0)
}

/// Loss and gradients with respect to every model parameter.
pub fn adaptation_grads(
    model: &Model,
    source: &SourceBatch,
    target: Option<&[Tensor]>,
    mode: Mode,
    ctx: &mut AdaptContext,
) -> Result<(LossBreakdown, Model)> {
    let (l, g) = adaptation_inner(model, source, target, mode, ctx, true)?;
    Ok((l, g.expect("gradients requested")))
}

fn tap_batches(tapes: &[GradTape], n_taps: usize) -> Vec<Vec<Tensor>> {
    (0..n_taps).map(|t| tapes.iter().map(|tp| tp.taps[t].clone()).collect()).collect()
}

fn embeddings_measure(tapes: &[GradTape]) -> Result<Measure> {
    let rows: Vec<Vec<f64>> = tapes.iter().map(|t| t.embedding.clone()).collect();
    Measure::from_rows(&rows)
}

fn adaptation_inner(
    model: &Model,
    source: &SourceBatch,
    target: Option<&[Tensor]>,
    mode: Mode,
    ctx: &mut AdaptContext,
    want_grads: bool,
) -> Result<(LossBreakdown, Option<Model>)> {
    let n = source.images.len();
    if n == 0 || source.labels.len() != n {
        return Err(Error::invalid("source batch must be nonempty with one label per image"));
    }
    let weights: Option<&[f64]> = if mode.uses_scores() {
        let s = source
            .scores
            .ok_or_else(|| Error::invalid(format!("mode {mode} needs discriminator scores")))?;
        if s.len() != n {
            return Err(Error::shape("one score per source image"));
        }
        Some(s)
    } else {
        None
    };
    let target = if mode.uses_target() {
        let t = target.ok_or_else(|| Error::invalid(format!("mode {mode} needs a target batch")))?;
        if t.is_empty() {
            return Err(Error::invalid("empty target batch"));
        }
        Some(t)
    } else {
        None
    };

    let s_tapes = par::map(source.images, |x| forward(x, model))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let t_tapes = match target {
        Some(t) => par::map(t, |x| forward(x, model)).into_iter().collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };

    let mut out = LossBreakdown::default();
    let mut d_logits = Vec::with_capacity(n);
    let (mut lc_sum, mut lcw_sum) = (0.0, 0.0);
    for (i, tape) in s_tapes.iter().enumerate() {
        let l = classification_loss(&tape.logits, source.labels[i])?;
        let w = weights.map_or(1.0, |w| w[i]);
        lc_sum += l;
        lcw_sum += w * l;
        if want_grads {
            d_logits.push(classification_grad(&tape.logits, source.labels[i], w / n as f64));
        }
    }
    out.lc = lc_sum / n as f64;
    out.total = if weights.is_some() {
        out.lc_weighted = Some(lcw_sum / n as f64);
        lcw_sum / n as f64
    } else {
        out.lc
    };

    let n_taps = model.backbone.taps.len();
    let mut s_tap_grads: Vec<Vec<Option<Tensor>>> = vec![vec![None; n_taps]; n];
    let mut t_tap_grads: Vec<Vec<Option<Tensor>>> = vec![vec![None; n_taps]; t_tapes.len()];
    let mut s_emb_grads: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut t_emb_grads: Vec<Option<Vec<f64>>> = vec![None; t_tapes.len()];

    if mode.uses_style() {
        let lf = ctx.taps.len();
        let src = tap_batches(&s_tapes, lf);
        let tgt = tap_batches(&t_tapes, lf);
        ctx.eps.prepare(&src, &tgt, &ctx.taps, ctx.sinkhorn.metric)?;
        let (ls, grads) = if want_grads {
            let (l, g) = style::style_matching_loss_with_grads(&src, &tgt, &ctx.taps, &mut ctx.eps.layers, ctx.sinkhorn)?;
            (l, Some(g))
        } else {
            (style::style_matching_loss(&src, &tgt, &ctx.taps, &mut ctx.eps.layers, ctx.sinkhorn)?, None)
        };
        out.total += ctx.lambda * ls.value;
        out.ls = Some(ls.value);
        out.eps = ls.eps;
        if let Some(g) = grads {
            for t in 0..lf {
                for (i, gm) in g.source[t].iter().enumerate() {
                    let mut gm = gm.clone();
                    gm.scale(ctx.lambda);
                    s_tap_grads[i][t] = Some(gm);
                }
                for (j, gm) in g.target[t].iter().enumerate() {
                    let mut gm = gm.clone();
                    gm.scale(ctx.lambda);
                    t_tap_grads[j][t] = Some(gm);
                }
            }
        }
    }

    if mode == Mode::Mmd {
        let p = embeddings_measure(&s_tapes)?;
        let q = embeddings_measure(&t_tapes)?;
        let bw = match &ctx.mmd_bandwidths {
            Some(b) => b.clone(),
            None => style::default_bandwidths(&p, &q)?,
        };
        let (v, gp, gq) = style::mmd_loss_with_grads(&p, &q, &bw)?;
        out.total += ctx.lambda * v;
        out.mmd = Some(v);
        if want_grads {
            for i in 0..n {
                s_emb_grads[i] = Some(gp.row(i).iter().map(|g| ctx.lambda * g).collect());
            }
            for j in 0..t_tapes.len() {
                t_emb_grads[j] = Some(gq.row(j).iter().map(|g| ctx.lambda * g).collect());
            }
        }
    }

    if !out.total.is_finite() {
        return Err(Error::non_finite("adaptation loss"));
    }
    if !want_grads {
        return Ok((out, None));
    }

    let k = model.config.num_classes;
    let zero_logits = vec![0.0; k];
    let mut jobs: Vec<(&GradTape, &[f64], Option<&[f64]>, &[Option<Tensor>])> = Vec::new();
    for i in 0..n {
        jobs.push((&s_tapes[i], &d_logits[i], s_emb_grads[i].as_deref(), &s_tap_grads[i]));
    }
    for j in 0..t_tapes.len() {
        let needs = t_emb_grads[j].is_some() || t_tap_grads[j].iter().any(Option::is_some);
        if needs {
            jobs.push((&t_tapes[j], &zero_logits, t_emb_grads[j].as_deref(), &t_tap_grads[j]));
        }
    }
    let per = par::map(&jobs, |&(tape, dl, de, dt)| backward(tape, model, dl, de, dt));
    let mut grads = model.zeros_like();
    for g in per {
        nn::accumulate(&mut grads, &g?)?;
    }
    Ok((out, Some(grads)))
}

/// Training hyper-parameters for both phases.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub baseline_epochs: usize,
    pub baseline_lr: f64,
    pub adapt_epochs: usize,
    pub adapt_lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub sinkhorn_budget: usize,
    pub eps_momentum: f64,
    pub eps_policy: EpsPolicy,
    pub eps_metric: EpsMetric,
    pub lf: usize,
    pub mode: Mode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            baseline_epochs: 12,
            baseline_lr: 0.01,
            adapt_epochs: 4,
            adapt_lr: 0.01,
            momentum: 0.9,
            batch_size: 32,
            lambda: 0.01,
            sinkhorn_budget: DEFAULT_BUDGET,
            eps_momentum: DEFAULT_EPS_MOMENTUM,
            eps_policy: EpsPolicy::Dynamic,
            eps_metric: EpsMetric::SquaredEuclidean,
            lf: 2,
            mode: Mode::Baseline,
        }
    }
}

impl TrainConfig {
    /// Large-dataset schedule: 50 epochs, batch 128, LR 0.1 then 0.0001.
    pub fn large_scale() -> Self {
        TrainConfig {
            baseline_epochs: 50,
            baseline_lr: 0.1,
            adapt_lr: 0.0001,
            batch_size: 128,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid("batch size must be at least 2"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("λ must be nonnegative"));
        }
        if !(self.baseline_lr > 0.0 && self.adapt_lr > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if self.sinkhorn_budget == 0 {
            return Err(Error::invalid("Sinkhorn budget must be positive"));
        }
        Ok(())
    }

    /// Baseline LR at `epoch`: ×0.1 at half and again at three quarters.
    pub fn baseline_lr_at(&self, epoch: usize) -> f64 {
        let e = self.baseline_epochs;
        let mut lr = self.baseline_lr;
        if epoch * 2 >= e && e >= 2 {
            lr *= 0.1;
        }
        if epoch * 4 >= 3 * e && e >= 4 {
            lr *= 0.1;
        }
        lr
    }
}

/// Labelled images.
#[derive(Debug, Clone, Copy)]
pub struct LabeledSet<'a> {
    pub images: &'a [Tensor],
    pub labels: &'a [usize],
}

/// One row of the loss-curve log.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    pub batch: usize,
    pub term: String,
    pub value: f64,
}

fn batches(n: usize, batch: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let order = rng.permutation(n);
    if n <= batch {
        return vec![order];
    }
    order.chunks_exact(batch).map(<[usize]>::to_vec).collect()
}

fn log_terms(curves: &mut Vec<CurveRow>, epoch: usize, batch: usize, l: &LossBreakdown) {
    let mut push = |term: String, value: f64| curves.push(CurveRow { epoch, batch, term, value });
    push("total".into(), l.total);
    push("L_c".into(), l.lc);
    if let Some(v) = l.lc_weighted {
        push("L_c_weighted".into(), v);
    }
    if let Some(v) = l.ls {
        push("L_s".into(), v);
    }
    if let Some(v) = l.mmd {
        push("MMD".into(), v);
    }
    for (t, (em, es)) in l.eps.iter().enumerate() {
        push(format!("eps_mu_l{}", t + 1), *em);
        push(format!("eps_sigma_l{}", t + 1), *es);
    }
}

fn numeric_context(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite(what) => Error::NonFinite(format!("{what} (epoch {epoch}, batch {batch})")),
        other => other,
    }
}

/// Phase one: classification-only training on the source set.
pub fn train_baseline(model: Model, source: &LabeledSet, cfg: &TrainConfig, rng: &mut Rng) -> Result<(Model, Vec<CurveRow>)> {
    cfg.validate()?;
    let mut model = model;
    let mut velocity = model.zeros_like();
    let mut curves = Vec::new();
    let mut ctx = AdaptContext::new(&model.config, 1, 0.0, SinkhornOptions::default(), EpsPolicy::Fixed(1.0), cfg.eps_momentum)?;
    for epoch in 0..cfg.baseline_epochs {
        let lr = cfg.baseline_lr_at(epoch);
        for (bi, idx) in batches(source.images.len(), cfg.batch_size, rng).iter().enumerate() {
            let imgs: Vec<Tensor> = idx.iter().map(|&i| source.images[i].clone()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| source.labels[i]).collect();
            let batch = SourceBatch {
                images: &imgs,
                labels: &labels,
                scores: None,
            };
            let (loss, grads) =
                adaptation_grads(&model, &batch, None, Mode::Baseline, &mut ctx).map_err(|e| numeric_context(e, epoch, bi))?;
            nn::sgd_step(&mut model, &grads, lr, cfg.momentum, &mut velocity).map_err(|e| numeric_context(e, epoch, bi))?;
            log_terms(&mut curves, epoch, bi, &loss);
        }
    }
    Ok((model, curves))
}

/// Everything produced by the adaptation phase.
#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub model: Model,
    pub curves: Vec<CurveRow>,
    pub eps: EpsBank,
}

/// Phase two: fine-tune at the adaptation LR with the configured mode.
/// Epoch numbers in the curve continue after `epoch_offset`.
pub fn adapt(
    model: Model,
    source: &LabeledSet,
    target: Option<&[Tensor]>,
    scores: Option<&[f64]>,
    cfg: &TrainConfig,
    epoch_offset: usize,
    rng: &mut Rng,
) -> Result<AdaptOutcome> {
    cfg.validate()?;
    let mode = cfg.mode;
    if mode.uses_scores() {
        match scores {
            None => return Err(Error::invalid(format!("mode {mode} needs discriminator scores"))),
            Some(s) if s.len() != source.images.len() => return Err(Error::shape("one score per source image")),
            _ => {}
        }
    }
    if mode.uses_target() && target.map_or(true, |t| t.len() < 2) {
        return Err(Error::invalid(format!("mode {mode} needs at least 2 target images")));
    }
    let mut model = model;
    let mut velocity = model.zeros_like();
    let mut curves = Vec::new();
    let sk = SinkhornOptions {
        budget: cfg.sinkhorn_budget,
        metric: cfg.eps_metric,
    };
    let mut ctx = AdaptContext::new(&model.config, cfg.lf, cfg.lambda, sk, cfg.eps_policy, cfg.eps_momentum)?;
    let mut t_order: Vec<usize> = Vec::new();
    let mut t_pos = 0;
    for e in 0..cfg.adapt_epochs {
        let epoch = epoch_offset + e;
        for (bi, idx) in batches(source.images.len(), cfg.batch_size, rng).iter().enumerate() {
            let imgs: Vec<Tensor> = idx.iter().map(|&i| source.images[i].clone()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| source.labels[i]).collect();
            let sc: Option<Vec<f64>> = scores.map(|s| idx.iter().map(|&i| s[i]).collect());
            // target images drawn without replacement, cycling through reshuffles
            let tgt: Option<Vec<Tensor>> = match (mode.uses_target(), target) {
                (true, Some(t)) => {
                    let want = idx.len().min(t.len());
                    let mut picked = Vec::with_capacity(want);
                    while picked.len() < want {
                        if t_pos >= t_order.len() {
                            t_order = rng.permutation(t.len());
                            t_pos = 0;
                        }
                        picked.push(t[t_order[t_pos]].clone());
                        t_pos += 1;
                    }
                    Some(picked)
                }
                _ => None,
            };
            let batch = SourceBatch {
                images: &imgs,
                labels: &labels,
                scores: sc.as_deref(),
            };
            let (loss, grads) =
                adaptation_grads(&model, &batch, tgt.as_deref(), mode, &mut ctx).map_err(|e| numeric_context(e, epoch, bi))?;
            nn::sgd_step(&mut model, &grads, cfg.adapt_lr, cfg.momentum, &mut velocity).map_err(|e| numeric_context(e, epoch, bi))?;
            log_terms(&mut curves, epoch, bi, &loss);
        }
    }
    Ok(AdaptOutcome {
        model,
        curves,
        eps: ctx.eps,
    })
}

/// Baseline phase followed by adaptation.
pub fn train(
    model: Model,
    source: &LabeledSet,
    target: Option<&[Tensor]>,
    scores: Option<&[f64]>,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(Model, Vec<CurveRow>)> {
    let mut base_rng = rng.split(1);
    let mut adapt_rng = rng.split(2);
    let (base, mut curves) = train_baseline(model, source, cfg, &mut base_rng)?;
    let out = adapt(base, source, target, scores, cfg, cfg.baseline_epochs, &mut adapt_rng)?;
    curves.extend(out.curves);
    Ok((out.model, curves))
}

/// Embeddings for many images, in input order.
pub fn embed_all(model: &Model, images: &[Tensor]) -> Result<Vec<Vec<f64>>> {
    par::map(images, |x| forward(x, model).map(|t| t.embedding))
        .into_iter()
        .collect()
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(MeanSd { mean, sd: var.sqrt() })
    }
}

/// Intra-class and inter-class cosine similarity and embedding norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbedStats {
    pub intra: Option<MeanSd>,
    pub inter: Option<MeanSd>,
    pub norm: MeanSd,
}

pub fn embed_stats(embeddings: &[Vec<f64>], labels: &[usize]) -> Result<EmbedStats> {
    if embeddings.len() != labels.len() || embeddings.is_empty() {
        return Err(Error::invalid("embed_stats needs one label per embedding"));
    }
    let norms: Vec<f64> = embeddings.iter().map(|e| e.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    if norms.iter().any(|&n| n == 0.0) {
        return Err(Error::invalid("zero-norm embedding"));
    }
    let rows = par::map_range(embeddings.len(), |i| {
        let mut intra = Vec::new();
        let mut inter = Vec::new();
        for j in (i + 1)..embeddings.len() {
            let dot: f64 = embeddings[i].iter().zip(&embeddings[j]).map(|(a, b)| a * b).sum();
            let c = dot / (norms[i] * norms[j]);
            if labels[i] == labels[j] {
                intra.push(c);
            } else {
                inter.push(c);
            }
        }
        (intra, inter)
    });
    let mut intra = Vec::new();
    let mut inter = Vec::new();
    for (a, b) in rows {
        intra.extend(a);
        inter.extend(b);
    }
    Ok(EmbedStats {
        intra: MeanSd::of(&intra),
        inter: MeanSd::of(&inter),
        norm: MeanSd::of(&norms).expect("nonempty"),
    })
}
