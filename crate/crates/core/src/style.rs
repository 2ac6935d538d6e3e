//! Per-channel feature statistics as style, and losses that match them
//! across domains.

use crate::error::{Error, Result};
use crate::par;
use crate::sinkhorn::{self, EpsMetric, EpsState, Measure};
use crate::tensor::{chw, Tensor};

/// Stabilizer added to the variance before the square root.
pub const SIGMA_STABILIZER: f64 = 1e-5;

/// Channel means and standard deviations of one feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub layer: usize,
}

pub fn style_stats(map: &Tensor, layer: usize) -> Result<StyleStats> {
    let (c, h, w) = chw(map)?;
    let hw = h * w;
    if hw == 0 {
        return Err(Error::invalid("style_stats needs a nonempty spatial extent"));
    }
    let mut mu = Vec::with_capacity(c);
    let mut sigma = Vec::with_capacity(c);
    for ch in map.data().chunks(hw) {
        let m = ch.iter().sum::<f64>() / hw as f64;
        let var = ch.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / hw as f64;
        mu.push(m);
        sigma.push((var + SIGMA_STABILIZER).sqrt());
    }
    Ok(StyleStats { mu, sigma, layer })
}

/// Pull gradients on `(mu, sigma)` back to the feature map.
pub fn style_stats_backward(map: &Tensor, stats: &StyleStats, d_mu: &[f64], d_sigma: &[f64]) -> Tensor {
    let (_, h, w) = (map.dim(0), map.dim(1), map.dim(2));
    let hw = (h * w) as f64;
    let mut out = map.clone();
    for (ci, ch) in out.data_mut().chunks_mut(h * w).enumerate() {
        let (m, s) = (stats.mu[ci], stats.sigma[ci]);
        let a = d_mu[ci] / hw;
        let b = d_sigma[ci] / (hw * s);
        for v in ch.iter_mut() {
            *v = a + b * (*v - m);
        }
    }
    out
}

/// Which backbone taps feed the style loss, with their channel counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerTapSet {
    layers: Vec<usize>,
    channels: Vec<usize>,
}

impl LayerTapSet {
    pub const MAX_TAPS: usize = 4;

    pub fn new(layers: Vec<usize>, channels: Vec<usize>) -> Result<Self> {
        if layers.is_empty() || layers.len() > Self::MAX_TAPS {
            return Err(Error::invalid(format!(
                "tap count must be 1..={}, got {}",
                Self::MAX_TAPS,
                layers.len()
            )));
        }
        if layers.len() != channels.len() {
            return Err(Error::invalid("one channel count per tap"));
        }
        if layers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("tap indices must be strictly increasing"));
        }
        Ok(LayerTapSet { layers, channels })
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

/// Stack per-image `μ` and `σ` vectors into two empirical measures.
pub fn style_measures(batch: &[Tensor], layer: usize) -> Result<(Measure, Measure)> {
    if batch.len() < 2 {
        return Err(Error::invalid(format!(
            "style measures need at least 2 maps, got {}",
            batch.len()
        )));
    }
    let stats = batch
        .iter()
        .map(|m| style_stats(m, layer))
        .collect::<Result<Vec<_>>>()?;
    stats_to_measures(&stats)
}

fn stats_to_measures(stats: &[StyleStats]) -> Result<(Measure, Measure)> {
    let c = stats[0].mu.len();
    if stats.iter().any(|s| s.mu.len() != c) {
        return Err(Error::shape("channel counts differ within a batch"));
    }
    let n = stats.len();
    let mu = Tensor::new(&[n, c], stats.iter().flat_map(|s| s.mu.iter().copied()).collect())?;
    let sigma = Tensor::new(&[n, c], stats.iter().flat_map(|s| s.sigma.iter().copied()).collect())?;
    Ok((Measure::new(mu)?, Measure::new(sigma)?))
}

/// ε for one divergence term: either tracked from batch estimates or pinned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsTracker {
    Dynamic(EpsState),
    Fixed(f64),
}

impl EpsTracker {
    pub fn dynamic(momentum: f64) -> Result<Self> {
        Ok(EpsTracker::Dynamic(EpsState::new(momentum)?))
    }

    /// Fold in this batch's estimate (dynamic only) and return the ε to use.
    pub fn advance(&mut self, estimate: f64) -> Result<f64> {
        match self {
            EpsTracker::Dynamic(s) => s.update(estimate),
            EpsTracker::Fixed(e) => Ok(*e),
        }
    }

    pub fn current(&self) -> Option<f64> {
        match self {
            EpsTracker::Dynamic(s) => s.eps(),
            EpsTracker::Fixed(e) => Some(*e),
        }
    }
}

/// ε trackers for the `μ` and `σ` terms of one tapped layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerEps {
    pub mu: EpsTracker,
    pub sigma: EpsTracker,
}

impl LayerEps {
    pub fn dynamic(momentum: f64) -> Result<Self> {
        Ok(LayerEps {
            mu: EpsTracker::dynamic(momentum)?,
            sigma: EpsTracker::dynamic(momentum)?,
        })
    }

    pub fn fixed(mu: f64, sigma: f64) -> Self {
        LayerEps {
            mu: EpsTracker::Fixed(mu),
            sigma: EpsTracker::Fixed(sigma),
        }
    }
}

/// Options shared by every term of the style loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions {
    pub budget: usize,
    pub metric: EpsMetric,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        SinkhornOptions {
            budget: sinkhorn::DEFAULT_BUDGET,
            metric: EpsMetric::SquaredEuclidean,
        }
    }
}

/// Value of the style loss with its per-layer breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleLoss {
    pub value: f64,
    /// `(μ term, σ term)` per tapped layer
    pub terms: Vec<(f64, f64)>,
    /// `(ε_μ, ε_σ)` used per tapped layer
    pub eps: Vec<(f64, f64)>,
}

/// Gradients of the style loss with respect to every input map,
/// indexed `[tap][sample]`.
#[derive(Debug, Clone)]
pub struct StyleGrads {
    pub source: Vec<Vec<Tensor>>,
    pub target: Vec<Vec<Tensor>>,
}

fn check_taps(source: &[Vec<Tensor>], target: &[Vec<Tensor>], taps: &LayerTapSet, eps: &[LayerEps]) -> Result<()> {
    let n = taps.len();
    if source.len() != n || target.len() != n || eps.len() != n {
        return Err(Error::invalid(format!(
            "style loss expects {n} taps (source {}, target {}, ε {})",
            source.len(),
            target.len(),
            eps.len()
        )));
    }
    for (t, (s, q)) in source.iter().zip(target).enumerate() {
        if s.is_empty() || q.is_empty() {
            return Err(Error::invalid(format!("empty batch on tap {t}")));
        }
        let c = taps.channels()[t];
        if s.iter().chain(q).any(|m| m.ndim() != 3 || m.dim(0) != c) {
            return Err(Error::shape(format!("tap {t} maps must have {c} channels")));
        }
    }
    Ok(())
}

/// Sum over tapped layers of the Sinkhorn divergences between source and
/// target `μ`-measures and `σ`-measures. Each tracker is advanced with the
/// current batch before its term is evaluated.
pub fn style_matching_loss(
    source: &[Vec<Tensor>],
    target: &[Vec<Tensor>],
    taps: &LayerTapSet,
    eps: &mut [LayerEps],
    opts: SinkhornOptions,
) -> Result<StyleLoss> {
    Ok(style_matching_inner(source, target, taps, eps, opts, false)?.0)
}

pub fn style_matching_loss_with_grads(
    source: &[Vec<Tensor>],
    target: &[Vec<Tensor>],
    taps: &LayerTapSet,
    eps: &mut [LayerEps],
    opts: SinkhornOptions,
) -> Result<(StyleLoss, StyleGrads)> {
    let (loss, grads) = style_matching_inner(source, target, taps, eps, opts, true)?;
    Ok((loss, grads.expect("gradients requested")))
}

struct LayerInput {
    s_stats: Vec<StyleStats>,
    t_stats: Vec<StyleStats>,
    eps_mu: f64,
    eps_sigma: f64,
}

#[allow(clippy::type_complexity)]
fn style_matching_inner(
    source: &[Vec<Tensor>],
    target: &[Vec<Tensor>],
    taps: &LayerTapSet,
    eps: &mut [LayerEps],
    opts: SinkhornOptions,
    want_grads: bool,
) -> Result<(StyleLoss, Option<StyleGrads>)> {
    check_taps(source, target, taps, eps)?;

    // statistics and ε updates are sequential; divergences fan out per layer
    let mut inputs = Vec::with_capacity(taps.len());
    for (t, tracker) in eps.iter_mut().enumerate() {
        let layer = taps.layers()[t];
        let s_stats = source[t].iter().map(|m| style_stats(m, layer)).collect::<Result<Vec<_>>>()?;
        let t_stats = target[t].iter().map(|m| style_stats(m, layer)).collect::<Result<Vec<_>>>()?;
        let (sp_mu, sp_sigma) = stats_to_measures(&s_stats)?;
        let (tq_mu, tq_sigma) = stats_to_measures(&t_stats)?;
        let eps_mu = tracker.mu.advance(sinkhorn::eps_estimate_batch(&sp_mu, &tq_mu, opts.metric)?)?;
        let eps_sigma = tracker
            .sigma
            .advance(sinkhorn::eps_estimate_batch(&sp_sigma, &tq_sigma, opts.metric)?)?;
        inputs.push(LayerInput {
            s_stats,
            t_stats,
            eps_mu,
            eps_sigma,
        });
    }

    let per_layer = par::map(&inputs, |inp| -> Result<_> {
        let (p_mu, p_sigma) = stats_to_measures(&inp.s_stats)?;
        let (q_mu, q_sigma) = stats_to_measures(&inp.t_stats)?;
        let mu = sinkhorn::sinkhorn_divergence_with_grads(&p_mu, &q_mu, inp.eps_mu, opts.budget)?;
        let sigma = sinkhorn::sinkhorn_divergence_with_grads(&p_sigma, &q_sigma, inp.eps_sigma, opts.budget)?;
        Ok((mu, sigma))
    });

    let mut value = 0.0;
    let mut terms = Vec::with_capacity(inputs.len());
    let mut eps_used = Vec::with_capacity(inputs.len());
    let mut grads = want_grads.then(|| StyleGrads {
        source: Vec::new(),
        target: Vec::new(),
    });
    for (t, (res, inp)) in per_layer.into_iter().zip(&inputs).enumerate() {
        let ((v_mu, gp_mu, gq_mu), (v_sigma, gp_sigma, gq_sigma)) = res?;
        value += v_mu + v_sigma;
        terms.push((v_mu, v_sigma));
        eps_used.push((inp.eps_mu, inp.eps_sigma));
        if let Some(g) = grads.as_mut() {
            let back = |maps: &[Tensor], stats: &[StyleStats], gmu: &Tensor, gsigma: &Tensor| -> Vec<Tensor> {
                maps.iter()
                    .zip(stats)
                    .enumerate()
                    .map(|(i, (m, s))| style_stats_backward(m, s, gmu.row(i), gsigma.row(i)))
                    .collect()
            };
            g.source.push(back(&source[t], &inp.s_stats, &gp_mu, &gp_sigma));
            g.target.push(back(&target[t], &inp.t_stats, &gq_mu, &gq_sigma));
        }
    }
    Ok((
        StyleLoss {
            value,
            terms,
            eps: eps_used,
        },
        grads,
    ))
}

/// Default MMD bandwidths: `σ_b² = s · (mean pairwise squared distance)` for
/// `s ∈ {0.5, 1, 2}`.
pub fn default_bandwidths(p: &Measure, q: &Measure) -> Result<Vec<f64>> {
    let mean = sinkhorn::eps_estimate_batch(p, q, EpsMetric::SquaredEuclidean)?;
    let mean = if mean > 0.0 { mean } else { 1.0 };
    Ok([0.5, 1.0, 2.0].iter().map(|s| (s * mean).sqrt()).collect())
}

fn kernel_sum(d2: f64, bandwidths: &[f64]) -> f64 {
    bandwidths.iter().map(|b| (-d2 / (b * b)).exp()).sum()
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

// order-independent sum so swapping the arguments is bit-exact
fn canonical_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

fn check_mmd(p: &Measure, q: &Measure, bandwidths: &[f64]) -> Result<()> {
    if bandwidths.is_empty() {
        return Err(Error::invalid("MMD needs at least one bandwidth"));
    }
    if bandwidths.iter().any(|b| !(*b > 0.0)) {
        return Err(Error::invalid("MMD bandwidths must be positive"));
    }
    if p.dim() != q.dim() {
        return Err(Error::shape("MMD point dimension mismatch"));
    }
    Ok(())
}

fn self_term(p: &Measure, bandwidths: &[f64]) -> f64 {
    let n = p.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += kernel_sum(sq_dist(p.point(i), p.point(j)), bandwidths);
        }
    }
    s / (n * n) as f64
}

/// Multi-kernel squared MMD with Gaussian kernels `exp(−‖x−y‖²/σ_b²)`.
pub fn mmd_loss(p: &Measure, q: &Measure, bandwidths: &[f64]) -> Result<f64> {
    check_mmd(p, q, bandwidths)?;
    let cross: Vec<f64> = (0..p.len())
        .flat_map(|i| (0..q.len()).map(move |j| (i, j)))
        .map(|(i, j)| kernel_sum(sq_dist(p.point(i), q.point(j)), bandwidths))
        .collect();
    let cross = canonical_sum(cross) / (p.len() * q.len()) as f64;
    let (a, b) = (self_term(p, bandwidths), self_term(q, bandwidths));
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    Ok(lo + hi - 2.0 * cross)
}

fn kernel_grad(x: &[f64], y: &[f64], bandwidths: &[f64], scale: f64, out: &mut [f64]) {
    // ∂/∂x Σ_b exp(−‖x−y‖²/σ_b²) = Σ_b −2(x−y)/σ_b² · k_b
    let d2 = sq_dist(x, y);
    let coef: f64 = bandwidths
        .iter()
        .map(|b| -2.0 / (b * b) * (-d2 / (b * b)).exp())
        .sum();
    for k in 0..x.len() {
        out[k] += scale * coef * (x[k] - y[k]);
    }
}

/// MMD value plus gradients with respect to the points of both measures
/// (bandwidths held constant).
pub fn mmd_loss_with_grads(p: &Measure, q: &Measure, bandwidths: &[f64]) -> Result<(f64, Tensor, Tensor)> {
    let value = mmd_loss(p, q, bandwidths)?;
    let (n, m, d) = (p.len(), q.len(), p.dim());
    let mut gp = Tensor::zeros(&[n, d]);
    let mut gq = Tensor::zeros(&[m, d]);
    let (nn, mm, nm) = ((n * n) as f64, (m * m) as f64, (n * m) as f64);
    for i in 0..n {
        let row = &mut gp.data_mut()[i * d..(i + 1) * d];
        for i2 in 0..n {
            kernel_grad(p.point(i), p.point(i2), bandwidths, 2.0 / nn, row);
        }
        for j in 0..m {
            kernel_grad(p.point(i), q.point(j), bandwidths, -2.0 / nm, row);
        }
    }
    for j in 0..m {
        let row = &mut gq.data_mut()[j * d..(j + 1) * d];
        for j2 in 0..m {
            kernel_grad(q.point(j), q.point(j2), bandwidths, 2.0 / mm, row);
        }
        for i in 0..n {
            kernel_grad(q.point(j), p.point(i), bandwidths, -2.0 / nm, row);
        }
    }
    Ok((value, gp, gq))
}
