//! Perceptual-scoring domain discriminator.
//!
//! A small convolutional backbone produces one feature map per block. Each
//! map is unit-normalized along channels, projected onto a nonnegative
//! per-layer weight vector and averaged spatially, giving one scalar per
//! layer. A linear head and a sigmoid turn those scalars into a score in
//! `(0, 1)`: near 0 for source-looking images, near 1 for target-looking ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, BlockTrace, ConvBlock, Parameters};
use crate::par;
use crate::rng::Rng;
use crate::tensor::{chw, Tensor};

/// Floor added to the channel norm in `unit_normalize`.
pub const NORM_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub input_channels: usize,
    pub input_size: usize,
    /// Output channels per backbone block; one tap per block.
    pub channels: Vec<usize>,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            input_channels: 1,
            input_size: 32,
            channels: vec![8, 16, 32, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorParams {
    pub blocks: Vec<ConvBlock>,
    /// Per-layer channel weights `u^l`, kept nonnegative.
    pub u: Vec<Tensor>,
    /// Head vector `v`, one entry per layer.
    pub v: Tensor,
    pub input_shape: [usize; 3],
}

impl DiscriminatorParams {
    pub const U_INIT: f64 = 0.1;

    pub fn init(cfg: &DiscriminatorConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.channels.is_empty() {
            return Err(Error::invalid("discriminator needs at least one block"));
        }
        let pools = cfg.channels.len();
        if cfg.input_size % (1 << pools) != 0 {
            return Err(Error::invalid(format!(
                "input size {} not divisible by 2^{pools}",
                cfg.input_size
            )));
        }
        let mut c_in = cfg.input_channels;
        let mut blocks = Vec::new();
        for &c in &cfg.channels {
            blocks.push(ConvBlock::init(c_in, c, true, rng));
            c_in = c;
        }
        Ok(DiscriminatorParams {
            u: cfg.channels.iter().map(|&c| Tensor::full(&[c], Self::U_INIT)).collect(),
            v: Tensor::zeros(&[cfg.channels.len()]),
            blocks,
            input_shape: [cfg.input_channels, cfg.input_size, cfg.input_size],
        })
    }

    pub fn num_layers(&self) -> usize {
        self.blocks.len()
    }

    fn clamp_u(&mut self) {
        for u in &mut self.u {
            u.data_mut().iter_mut().for_each(|x| *x = x.max(0.0));
        }
    }
}

impl Parameters for DiscriminatorParams {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("disc.block{i}.weight"), &b.weight));
            out.push((format!("disc.block{i}.bias"), &b.bias));
        }
        for (i, u) in self.u.iter().enumerate() {
            out.push((format!("disc.u{i}"), u));
        }
        out.push(("disc.v".into(), &self.v));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.weight);
            out.push(&mut b.bias);
        }
        for u in &mut self.u {
            out.push(u);
        }
        out.push(&mut self.v);
        out
    }
}

/// Divide each spatial site's channel vector by its norm (plus a floor).
pub fn unit_normalize(map: &Tensor) -> Result<Tensor> {
    let (c, h, w) = chw(map)?;
    if map.is_empty() {
        return Err(Error::invalid("unit_normalize on an empty map"));
    }
    let hw = h * w;
    let norms = site_norms(map, c, hw);
    let mut out = map.clone();
    for ch in 0..c {
        for s in 0..hw {
            out.data_mut()[ch * hw + s] /= norms[s] + NORM_FLOOR;
        }
    }
    Ok(out)
}

fn site_norms(map: &Tensor, c: usize, hw: usize) -> Vec<f64> {
    let d = map.data();
    (0..hw)
        .map(|s| (0..c).map(|ch| d[ch * hw + s] * d[ch * hw + s]).sum::<f64>().sqrt())
        .collect()
}

fn unit_normalize_backward(map: &Tensor, grad_norm: &Tensor) -> Tensor {
    let (c, h, w) = (map.dim(0), map.dim(1), map.dim(2));
    let hw = h * w;
    let norms = site_norms(map, c, hw);
    let (x, gn) = (map.data(), grad_norm.data());
    let mut out = Tensor::zeros(map.shape());
    for s in 0..hw {
        let nrm = norms[s];
        let den = nrm + NORM_FLOOR;
        let dot: f64 = (0..c).map(|ch| x[ch * hw + s] * gn[ch * hw + s]).sum();
        let corr = if nrm > 0.0 { dot / (den * den * nrm) } else { 0.0 };
        for ch in 0..c {
            out.data_mut()[ch * hw + s] = gn[ch * hw + s] / den - x[ch * hw + s] * corr;
        }
    }
    out
}

/// Spatial mean of `⟨u, n_hw⟩` over a normalized map.
pub fn perceptual_scalar(norm_map: &Tensor, u: &Tensor) -> Result<f64> {
    let (c, h, w) = chw(norm_map)?;
    if u.len() != c {
        return Err(Error::shape(format!("u has {} entries for {c} channels", u.len())));
    }
    let hw = h * w;
    let mut total = 0.0;
    for (ch, plane) in norm_map.data().chunks(hw).enumerate() {
        total += u.data()[ch] * plane.iter().sum::<f64>();
    }
    Ok(total / hw as f64)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Everything the backward pass needs from one scored image.
#[derive(Debug, Clone)]
pub struct ScoreTrace {
    traces: Vec<BlockTrace>,
    taps: Vec<Tensor>,
    normed: Vec<Tensor>,
    pub r: Tensor,
    pub score: f64,
}

/// Backbone tap maps for one image.
pub fn backbone_taps(x: &Tensor, params: &DiscriminatorParams) -> Result<(Vec<Tensor>, Vec<BlockTrace>)> {
    if x.shape() != params.input_shape {
        return Err(Error::shape(format!(
            "discriminator expects {:?}, got {:?}",
            params.input_shape,
            x.shape()
        )));
    }
    let mut taps = Vec::with_capacity(params.blocks.len());
    let mut traces = Vec::with_capacity(params.blocks.len());
    let mut cur = x.clone();
    for b in &params.blocks {
        let (out, tr) = b.forward(&cur)?;
        traces.push(tr);
        taps.push(out.clone());
        cur = out;
    }
    Ok((taps, traces))
}

/// Perceptual feature `r` and score from precomputed tap maps.
pub fn score_from_taps(taps: &[Tensor], params: &DiscriminatorParams) -> Result<(Tensor, f64)> {
    if taps.len() != params.num_layers() {
        return Err(Error::shape("one tap per discriminator layer"));
    }
    let r = taps
        .iter()
        .zip(&params.u)
        .map(|(t, u)| perceptual_scalar(&unit_normalize(t)?, u))
        .collect::<Result<Vec<_>>>()?;
    let logit: f64 = r.iter().zip(params.v.data()).map(|(a, b)| a * b).sum();
    Ok((Tensor::vector(r), sigmoid(logit)))
}

pub fn score_traced(x: &Tensor, params: &DiscriminatorParams) -> Result<ScoreTrace> {
    let (taps, traces) = backbone_taps(x, params)?;
    let normed = taps.iter().map(unit_normalize).collect::<Result<Vec<_>>>()?;
    let r = normed
        .iter()
        .zip(&params.u)
        .map(|(n, u)| perceptual_scalar(n, u))
        .collect::<Result<Vec<_>>>()?;
    let logit: f64 = r.iter().zip(params.v.data()).map(|(a, b)| a * b).sum();
    let score = sigmoid(logit);
    if !score.is_finite() {
        return Err(Error::non_finite("discriminator score"));
    }
    Ok(ScoreTrace {
        traces,
        taps,
        normed,
        r: Tensor::vector(r),
        score,
    })
}

/// `g(x) = σ(vᵀ r(x))`.
pub fn score(x: &Tensor, params: &DiscriminatorParams) -> Result<f64> {
    Ok(score_traced(x, params)?.score)
}

/// Scores for many images, fanned out across workers, in input order.
pub fn score_all(images: &[Tensor], params: &DiscriminatorParams) -> Result<Vec<f64>> {
    par::map(images, |x| score(x, params)).into_iter().collect()
}

/// Accumulate `d score · grad_score` into `grads`.
pub fn score_backward(
    trace: &ScoreTrace,
    params: &DiscriminatorParams,
    grad_score: f64,
    grads: &mut DiscriminatorParams,
) -> Result<()> {
    let s = trace.score;
    let d_logit = grad_score * s * (1.0 - s);
    for (gv, r) in grads.v.data_mut().iter_mut().zip(trace.r.data()) {
        *gv += d_logit * r;
    }
    let mut grad_next: Option<Tensor> = None;
    for l in (0..params.num_layers()).rev() {
        let d_r = d_logit * params.v.data()[l];
        let normed = &trace.normed[l];
        let (c, h, w) = chw(normed)?;
        let hw = h * w;
        // du_c = d_r · mean_hw n_c ; dn_c,hw = d_r · u_c / HW
        for ch in 0..c {
            let mean = normed.data()[ch * hw..(ch + 1) * hw].iter().sum::<f64>() / hw as f64;
            grads.u[l].data_mut()[ch] += d_r * mean;
        }
        let grad_norm = Tensor::from_fn(normed.shape(), |k| d_r * params.u[l].data()[k / hw] / hw as f64);
        let mut grad_tap = unit_normalize_backward(&trace.taps[l], &grad_norm);
        if let Some(g) = grad_next.take() {
            grad_tap.axpy(1.0, &g)?;
        }
        let gin = params.blocks[l].backward(&trace.traces[l], &grad_tap, &mut grads.blocks[l])?;
        grad_next = Some(gin);
    }
    Ok(())
}

/// Domain discrepancy for one source/target pair: `g_s² + (g_t − 1)²`.
pub fn domain_loss(source_score: f64, target_score: f64) -> f64 {
    source_score * source_score + (target_score - 1.0) * (target_score - 1.0)
}

/// Mean domain loss over equally sized source and target score lists.
pub fn domain_loss_batch(source: &[f64], target: &[f64]) -> Result<f64> {
    if source.len() != target.len() || source.is_empty() {
        return Err(Error::invalid("domain loss needs equal, nonempty source/target batches"));
    }
    Ok(source.iter().zip(target).map(|(&s, &t)| domain_loss(s, t)).sum::<f64>() / source.len() as f64)
}

/// Scale a classification loss by a (detached) discriminator score.
pub fn weight_classification(score: f64, lc: f64) -> f64 {
    score * lc
}

/// Batch domain loss and its gradient with respect to all discriminator parameters.
pub fn domain_loss_grads(
    source: &[Tensor],
    target: &[Tensor],
    params: &DiscriminatorParams,
) -> Result<(f64, DiscriminatorParams)> {
    if source.len() != target.len() || source.is_empty() {
        return Err(Error::invalid("discriminator batches must be equal and nonempty"));
    }
    let b = source.len() as f64;
    let jobs: Vec<(&Tensor, bool)> = source
        .iter()
        .map(|x| (x, false))
        .chain(target.iter().map(|x| (x, true)))
        .collect();
    let per = par::map(&jobs, |&(x, is_target)| -> Result<(f64, DiscriminatorParams)> {
        let tr = score_traced(x, params)?;
        let s = tr.score;
        let (loss, d) = if is_target {
            ((s - 1.0) * (s - 1.0), 2.0 * (s - 1.0) / b)
        } else {
            (s * s, 2.0 * s / b)
        };
        let mut g = params.zeros_like();
        score_backward(&tr, params, d, &mut g)?;
        Ok((loss, g))
    });
    let mut total = 0.0;
    let mut grads = params.zeros_like();
    for r in per {
        let (l, g) = r?;
        total += l;
        nn::accumulate(&mut grads, &g)?;
    }
    Ok((total / b, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscTrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for DiscTrainConfig {
    fn default() -> Self {
        DiscTrainConfig {
            lr: 0.05,
            momentum: 0.9,
            batch_size: 16,
            epochs: 10,
        }
    }
}

/// Train by SGD on the batch-mean domain loss with equal source and target
/// counts per batch. Returns the trained parameters and per-epoch mean loss.
pub fn train_discriminator(
    source: &[Tensor],
    target: &[Tensor],
    mut params: DiscriminatorParams,
    cfg: &DiscTrainConfig,
    rng: &mut Rng,
) -> Result<(DiscriminatorParams, Vec<f64>)> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::invalid("discriminator training needs both domains"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let per_epoch = source.len().max(target.len()).div_ceil(cfg.batch_size);
    let mut velocity = params.zeros_like();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let s_order = rng.permutation(source.len());
        let t_order = rng.permutation(target.len());
        let mut epoch_loss = 0.0;
        for step in 0..per_epoch {
            let pick = |order: &[usize], imgs: &[Tensor]| -> Vec<Tensor> {
                (0..cfg.batch_size)
                    .map(|k| imgs[order[(step * cfg.batch_size + k) % order.len()]].clone())
                    .collect()
            };
            let sb = pick(&s_order, source);
            let tb = pick(&t_order, target);
            let (loss, grads) = domain_loss_grads(&sb, &tb, &params)?;
            if !loss.is_finite() {
                return Err(Error::non_finite(format!(
                    "discriminator loss at epoch {epoch}, batch {step}"
                )));
            }
            nn::sgd_step(&mut params, &grads, cfg.lr, cfg.momentum, &mut velocity)?;
            params.clamp_u();
            epoch_loss += loss;
        }
        curve.push(epoch_loss / per_epoch as f64);
    }
    Ok((params, curve))
}

/// Binned score mass; bin `k` covers `[k/B, (k+1)/B)` and the last bin also
/// holds 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub mass: Vec<f64>,
}

/// Histogram of scores in `[0, 1]`, optionally weighting each sample.
pub fn score_histogram(scores: &[f64], weights: Option<&[f64]>, bins: usize) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::invalid("histogram needs at least 2 bins"));
    }
    if let Some(w) = weights {
        if w.len() != scores.len() {
            return Err(Error::shape("one weight per score"));
        }
    }
    let mut mass = vec![0.0; bins];
    for (i, &s) in scores.iter().enumerate() {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::invalid(format!("score {s} outside [0, 1]")));
        }
        let k = ((s * bins as f64) as usize).min(bins - 1);
        mass[k] += weights.map_or(1.0, |w| w[i]);
    }
    Ok(Histogram {
        edges: (0..=bins).map(|k| k as f64 / bins as f64).collect(),
        mass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> DiscriminatorConfig {
        DiscriminatorConfig {
            input_channels: 1,
            input_size: 8,
            channels: vec![3, 4],
        }
    }

    fn random_params(rng: &mut Rng) -> DiscriminatorParams {
        let mut p = DiscriminatorParams::init(&small_cfg(), rng).unwrap();
        for u in &mut p.u {
            u.data_mut().iter_mut().for_each(|x| *x = rng.uniform());
        }
        p.v.data_mut().iter_mut().for_each(|x| *x = rng.normal());
        for b in &mut p.blocks {
            b.bias.data_mut().iter_mut().for_each(|x| *x = 0.1 * rng.normal());
        }
        p
    }

    #[test]
    fn unit_normalize_cases() {
        let mut onehot = Tensor::zeros(&[3, 1, 1]);
        onehot.data_mut()[1] = 1.0;
        let n = unit_normalize(&onehot).unwrap();
        assert!((n.data()[1] - 1.0).abs() < 1e-9);
        let v = Tensor::new(&[2, 1, 1], vec![3.0, 4.0]).unwrap();
        let n = unit_normalize(&v).unwrap();
        assert!((n.data()[0] - 0.6).abs() < 1e-10 && (n.data()[1] - 0.8).abs() < 1e-10);
        let z = unit_normalize(&Tensor::zeros(&[2, 2, 2])).unwrap();
        assert!(z.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn unit_normalize_random_sites_have_unit_norm() {
        let mut rng = Rng::new(1);
        let m = Tensor::from_fn(&[5, 3, 4], |_| rng.normal());
        let n = unit_normalize(&m).unwrap();
        for s in 0..12 {
            let norm: f64 = (0..5).map(|c| n.data()[c * 12 + s].powi(2)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn perceptual_scalar_cases() {
        let mut rng = Rng::new(2);
        let m = unit_normalize(&Tensor::from_fn(&[3, 2, 2], |_| rng.normal())).unwrap();
        assert_eq!(perceptual_scalar(&m, &Tensor::zeros(&[3])).unwrap(), 0.0);
        let mut onehot = Tensor::zeros(&[3, 2, 2]);
        onehot.data_mut()[4..8].iter_mut().for_each(|x| *x = 1.0);
        let e1 = Tensor::vector(vec![0.0, 1.0, 0.0]);
        assert!((perceptual_scalar(&onehot, &e1).unwrap() - 1.0).abs() < 1e-15);
        assert!(perceptual_scalar(&m, &Tensor::zeros(&[2])).is_err());
        let u = Tensor::vector(vec![0.3, 0.5, 0.9]);
        let mut oracle = 0.0;
        for s in 0..4 {
            let mut dot = 0.0;
            for c in 0..3 {
                dot += u.data()[c] * m.data()[c * 4 + s];
            }
            oracle += dot;
        }
        assert!((perceptual_scalar(&m, &u).unwrap() - oracle / 4.0).abs() < 1e-14);
    }

    #[test]
    fn neutral_head_scores_half() {
        let mut rng = Rng::new(3);
        let p = DiscriminatorParams::init(&small_cfg(), &mut rng).unwrap();
        let x = Tensor::from_fn(&[1, 8, 8], |_| rng.uniform());
        assert_eq!(score(&x, &p).unwrap(), 0.5);
        assert!(score(&Tensor::zeros(&[1, 4, 4]), &p).is_err());
    }

    #[test]
    fn score_is_sigmoid_of_staged_logit() {
        let mut rng = Rng::new(4);
        let p = random_params(&mut rng);
        let x = Tensor::from_fn(&[1, 8, 8], |_| rng.uniform());
        let (taps, _) = backbone_taps(&x, &p).unwrap();
        let mut logit = 0.0;
        for (l, t) in taps.iter().enumerate() {
            logit += p.v.data()[l] * perceptual_scalar(&unit_normalize(t).unwrap(), &p.u[l]).unwrap();
        }
        let expect = 1.0 / (1.0 + (-logit).exp());
        assert!((score(&x, &p).unwrap() - expect).abs() < 1e-15);
        // vᵀr = ln 3 gives 0.75
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn score_ignores_positive_rescaling_of_taps() {
        let mut rng = Rng::new(5);
        let p = random_params(&mut rng);
        let x = Tensor::from_fn(&[1, 8, 8], |_| rng.uniform());
        let (taps, _) = backbone_taps(&x, &p).unwrap();
        let (_, base) = score_from_taps(&taps, &p).unwrap();
        for l in 0..taps.len() {
            let mut scaled = taps.clone();
            scaled[l].scale(37.5);
            let (_, s) = score_from_taps(&scaled, &p).unwrap();
            assert!((s - base).abs() < 1e-9);
        }
    }

    #[test]
    fn domain_loss_values() {
        assert_eq!(domain_loss(0.0, 1.0), 0.0);
        assert_eq!(domain_loss(0.5, 0.5), 0.5);
        assert_eq!(domain_loss(1.0, 0.0), 2.0);
        assert!(domain_loss_batch(&[0.1], &[]).is_err());
    }

    #[test]
    fn weighting_values() {
        assert_eq!(weight_classification(0.0, 3.0), 0.0);
        assert_eq!(weight_classification(1.0, 3.0), 3.0);
        assert!((weight_classification(0.3, 2.0) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn domain_loss_gradient_matches_finite_differences() {
        let mut rng = Rng::new(6);
        let p = random_params(&mut rng);
        let src: Vec<Tensor> = (0..2).map(|_| Tensor::from_fn(&[1, 8, 8], |_| rng.uniform())).collect();
        let tgt: Vec<Tensor> = (0..2).map(|_| Tensor::from_fn(&[1, 8, 8], |_| rng.uniform() + 0.3)).collect();
        let (_, g) = domain_loss_grads(&src, &tgt, &p).unwrap();
        let flat = p.flatten();
        let gflat = g.flatten();
        let h = 1e-5;
        let loss = |q: &DiscriminatorParams| {
            let s: Vec<f64> = src.iter().map(|x| score(x, q).unwrap()).collect();
            let t: Vec<f64> = tgt.iter().map(|x| score(x, q).unwrap()).collect();
            domain_loss_batch(&s, &t).unwrap()
        };
        for i in 0..flat.len() {
            let (mut a, mut b) = (p.clone(), p.clone());
            let mut fa = flat.clone();
            fa[i] += h;
            a.set_flat(&fa).unwrap();
            let mut fb = flat.clone();
            fb[i] -= h;
            b.set_flat(&fb).unwrap();
            let fd = (loss(&a) - loss(&b)) / (2.0 * h);
            let rel = (fd - gflat[i]).abs() / fd.abs().max(gflat[i].abs()).max(1e-6);
            assert!(rel < 1e-4, "param {i}: {fd} vs {}", gflat[i]);
        }
    }

    #[test]
    fn histogram_conventions() {
        let h = score_histogram(&[0.5, 0.5, 0.5], None, 2).unwrap();
        assert_eq!(h.mass, vec![0.0, 3.0]);
        let s = [0.1, 0.4, 0.95, 1.0, 0.0];
        let w = score_histogram(&s, Some(&[1.0; 5]), 4).unwrap();
        assert_eq!(w, score_histogram(&s, None, 4).unwrap());
        assert!(score_histogram(&s, None, 1).is_err());
        assert!(score_histogram(&[1.5], None, 2).is_err());
    }

    #[test]
    fn histogram_matches_loop_binning() {
        let mut rng = Rng::new(7);
        let s: Vec<f64> = (0..500).map(|_| rng.uniform()).collect();
        let h = score_histogram(&s, Some(&s), 7).unwrap();
        let mut oracle = vec![0.0; 7];
        for &x in &s {
            let mut k = 0;
            while k + 1 < 7 && x >= (k + 1) as f64 / 7.0 {
                k += 1;
            }
            oracle[k] += x;
        }
        for k in 0..7 {
            assert!((h.mass[k] - oracle[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn training_keeps_u_nonnegative_and_learns() {
        let mut rng = Rng::new(8);
        let src: Vec<Tensor> = (0..16).map(|_| Tensor::from_fn(&[1, 8, 8], |_| 0.2 * rng.uniform())).collect();
        let tgt: Vec<Tensor> = (0..16).map(|_| Tensor::from_fn(&[1, 8, 8], |_| 0.7 + 0.3 * rng.uniform())).collect();
        let p0 = DiscriminatorParams::init(&small_cfg(), &mut rng).unwrap();
        let cfg = DiscTrainConfig {
            lr: 0.1,
            momentum: 0.9,
            batch_size: 8,
            epochs: 30,
        };
        let (p, curve) = train_discriminator(&src, &tgt, p0, &cfg, &mut rng).unwrap();
        assert!(p.u.iter().all(|u| u.data().iter().all(|&x| x >= 0.0)));
        assert!(curve.last().unwrap() < &curve[0]);
        let ms: f64 = src.iter().map(|x| score(x, &p).unwrap()).sum::<f64>() / 16.0;
        let mt: f64 = tgt.iter().map(|x| score(x, &p).unwrap()).sum::<f64>() / 16.0;
        assert!(mt > ms);
    }
}
