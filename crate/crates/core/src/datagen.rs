//! Seeded synthetic two-domain recognition data.
//!
//! An identity is three geometric primitives on a 32×32 canvas; a domain is a
//! range of photometric styles. Source and target use disjoint identities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{round_robin_folds, ProtocolSet};
use crate::par;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const CANVAS: usize = 32;
const BACKGROUND: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    Disk,
    Bar,
    Ring,
}

/// Geometry in canvas units (pixels); `angle` in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    pub cx: f64,
    pub cy: f64,
    pub size: f64,
    pub angle: f64,
    pub intensity: f64,
}

impl Primitive {
    fn covers(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        match self.kind {
            PrimitiveKind::Disk => dx * dx + dy * dy <= self.size * self.size,
            PrimitiveKind::Ring => {
                let r = (dx * dx + dy * dy).sqrt();
                r <= self.size && r >= 0.55 * self.size
            }
            PrimitiveKind::Bar => {
                let (s, c) = self.angle.sin_cos();
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                u.abs() <= self.size && v.abs() <= 0.3 * self.size
            }
        }
    }

    fn params(&self) -> [f64; 4] {
        let kind = match self.kind {
            PrimitiveKind::Disk => 0.0,
            PrimitiveKind::Bar => 10.0,
            PrimitiveKind::Ring => 20.0,
        };
        [kind, self.cx, self.cy, self.size]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentitySpec {
    pub id: usize,
    pub primitives: [Primitive; 3],
    /// Maximum per-image translation in pixels.
    pub jitter: f64,
}

impl IdentitySpec {
    /// Largest coordinate difference over matching primitives.
    pub fn separation(&self, other: &IdentitySpec) -> f64 {
        self.primitives
            .iter()
            .zip(&other.primitives)
            .flat_map(|(a, b)| a.params().into_iter().zip(b.params()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleSpec {
    pub domain: Domain,
    pub brightness: f64,
    pub contrast: f64,
    pub texture: f64,
    /// Phases of the four low-frequency texture components.
    pub phases: [f64; 4],
    pub blur: usize,
}

impl StyleSpec {
    pub fn neutral(domain: Domain) -> Self {
        StyleSpec {
            domain,
            brightness: 0.0,
            contrast: 1.0,
            texture: 0.0,
            phases: [0.0; 4],
            blur: 0,
        }
    }
}

/// Ranges from which one domain's styles are sampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleRange {
    pub domain: Domain,
    pub brightness: (f64, f64),
    pub contrast: (f64, f64),
    pub texture: (f64, f64),
    pub blur_probability: f64,
}

impl StyleRange {
    pub fn source() -> Self {
        StyleRange {
            domain: Domain::Source,
            brightness: (-0.05, 0.05),
            contrast: (0.9, 1.1),
            texture: (0.0, 0.04),
            blur_probability: 0.0,
        }
    }

    /// Source ranges shifted by `gap` times the full-gap offsets.
    pub fn target(gap: f64, brightness_offset: f64) -> Self {
        let s = Self::source();
        let shift = |(a, b): (f64, f64), d: f64| (a + gap * d, b + gap * d);
        StyleRange {
            domain: Domain::Target,
            brightness: shift(s.brightness, brightness_offset),
            contrast: shift(s.contrast, -0.35),
            texture: shift(s.texture, 0.12),
            blur_probability: gap,
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> StyleSpec {
        let mut phases = [0.0; 4];
        phases.iter_mut().for_each(|p| *p = rng.range(0.0, std::f64::consts::TAU));
        StyleSpec {
            domain: self.domain,
            brightness: rng.range(self.brightness.0, self.brightness.1),
            contrast: rng.range(self.contrast.0, self.contrast.1),
            texture: rng.range(self.texture.0, self.texture.1),
            phases,
            blur: usize::from(rng.uniform() < self.blur_probability),
        }
    }
}

/// Content raster of `identity` shifted by `(dx, dy)` pixels.
pub fn raster(identity: &IdentitySpec, dx: f64, dy: f64) -> Tensor {
    Tensor::from_fn(&[1, CANVAS, CANVAS], |i| {
        let (x, y) = ((i % CANVAS) as f64 + 0.5 - dx, (i / CANVAS) as f64 + 0.5 - dy);
        identity
            .primitives
            .iter()
            .filter(|p| p.covers(x, y))
            .map(|p| p.intensity)
            .fold(BACKGROUND, f64::max)
    })
}

/// Zero-mean periodic field with values in `[-1, 1]`.
fn texture_field(phases: &[f64; 4]) -> Vec<f64> {
    const FREQS: [(f64, f64); 4] = [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (2.0, 1.0)];
    let n = CANVAS as f64;
    (0..CANVAS * CANVAS)
        .map(|i| {
            let (x, y) = ((i % CANVAS) as f64, (i / CANVAS) as f64);
            FREQS
                .iter()
                .zip(phases)
                .map(|(&(fx, fy), ph)| (std::f64::consts::TAU * (fx * x + fy * y) / n + ph).cos())
                .sum::<f64>()
                / 4.0
        })
        .collect()
}

/// Periodic box blur of the given radius; preserves the image mean.
pub fn box_blur(img: &Tensor, radius: usize) -> Tensor {
    if radius == 0 {
        return img.clone();
    }
    let (h, w) = (img.dim(1), img.dim(2));
    let r = radius as isize;
    let norm = ((2 * radius + 1) * (2 * radius + 1)) as f64;
    let src = img.data();
    Tensor::from_fn(img.shape(), |i| {
        let (c, y, x) = (i / (h * w), (i / w) % h, i % w);
        let mut acc = 0.0;
        for oy in -r..=r {
            for ox in -r..=r {
                let yy = (y as isize + oy).rem_euclid(h as isize) as usize;
                let xx = (x as isize + ox).rem_euclid(w as isize) as usize;
                acc += src[c * h * w + yy * w + xx];
            }
        }
        acc / norm
    })
}

/// Style stages in order: contrast about the image mean, brightness, texture,
/// blur. Nothing is clamped.
pub fn apply_style_unclamped(content: &Tensor, style: &StyleSpec) -> Tensor {
    let mut img = content.clone();
    let m = img.sum() / img.len() as f64;
    let field = texture_field(&style.phases);
    for (v, f) in img.data_mut().iter_mut().zip(&field) {
        *v = m + style.contrast * (*v - m) + style.brightness + style.texture * f;
    }
    box_blur(&img, style.blur)
}

pub fn apply_style(content: &Tensor, style: &StyleSpec) -> Tensor {
    let mut img = apply_style_unclamped(content, style);
    img.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    img
}

/// One image: jittered content raster with the given style.
pub fn render(identity: &IdentitySpec, style: &StyleSpec, rng: &mut Rng) -> Tensor {
    let j = identity.jitter;
    let (dx, dy) = if j > 0.0 { (rng.range(-j, j), rng.range(-j, j)) } else { (0.0, 0.0) };
    apply_style(&raster(identity, dx, dy), style)
}

fn random_identity(id: usize, jitter: f64, rng: &mut Rng) -> IdentitySpec {
    let kinds = [PrimitiveKind::Disk, PrimitiveKind::Bar, PrimitiveKind::Ring];
    let mut prim = |_| Primitive {
        kind: kinds[rng.below(3)],
        cx: rng.range(7.0, 25.0),
        cy: rng.range(7.0, 25.0),
        size: rng.range(3.0, 7.0),
        angle: rng.range(0.0, std::f64::consts::PI),
        intensity: rng.range(0.35, 0.6),
    };
    IdentitySpec {
        id,
        primitives: [prim(0), prim(1), prim(2)],
        jitter,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatagenConfig {
    pub seed: u64,
    pub source_identities: usize,
    pub target_identities: usize,
    pub images_per_source: usize,
    pub images_per_target: usize,
    /// Unlabelled target renders per identity for adaptation.
    pub adapt_per_target: usize,
    pub gap: f64,
    pub brightness_offset: f64,
    pub jitter: f64,
    /// Minimum `separation` between any two identities.
    pub min_separation: f64,
    pub templates_per_target: usize,
    /// Media group sizes inside each template.
    pub media_sizes: Vec<usize>,
    pub known_subjects: usize,
    pub folds: usize,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        DatagenConfig {
            seed: 0,
            source_identities: 50,
            target_identities: 30,
            images_per_source: 40,
            images_per_target: 30,
            adapt_per_target: 30,
            gap: 1.0,
            brightness_offset: 0.25,
            jitter: 1.5,
            min_separation: 3.0,
            templates_per_target: 6,
            media_sizes: vec![2, 3],
            known_subjects: 20,
            folds: 10,
        }
    }
}

impl DatagenConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.source_identities,
            self.target_identities,
            self.images_per_source,
            self.images_per_target,
            self.adapt_per_target,
            self.templates_per_target,
            self.folds,
        ];
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::invalid("dataset counts must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gap) {
            return Err(Error::invalid("gap must lie in [0, 1]"));
        }
        if self.media_sizes.is_empty() || self.media_sizes.iter().any(|&m| m == 0) {
            return Err(Error::invalid("media sizes must be positive"));
        }
        let per_template: usize = self.media_sizes.iter().sum();
        if per_template * self.templates_per_target > self.images_per_target {
            return Err(Error::invalid("templates need more images than each target identity has"));
        }
        if self.known_subjects == 0 || self.known_subjects >= self.target_identities {
            return Err(Error::invalid("known subjects must leave at least one unknown subject"));
        }
        if self.templates_per_target < 2 {
            return Err(Error::invalid("each target subject needs a gallery and a probe template"));
        }
        if self.folds < 2 {
            return Err(Error::invalid("at least 2 folds"));
        }
        Ok(())
    }
}

/// One rendered image with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleInfo {
    pub identity: usize,
    pub style: StyleSpec,
}

/// Template over target-eval image indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub id: usize,
    pub subject: usize,
    pub media: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatagenConfig,
    pub source_identities: Vec<IdentitySpec>,
    pub target_identities: Vec<IdentitySpec>,
    pub source_range: StyleRange,
    pub target_range: StyleRange,
    pub source_images: Vec<Tensor>,
    /// Class index in `0..source_identities.len()`.
    pub source_labels: Vec<usize>,
    pub source_info: Vec<SampleInfo>,
    pub adapt_images: Vec<Tensor>,
    pub adapt_info: Vec<SampleInfo>,
    pub eval_images: Vec<Tensor>,
    pub eval_info: Vec<SampleInfo>,
    pub templates: Vec<TemplateSpec>,
    pub protocol: ProtocolSet,
}

impl Dataset {
    pub fn template_subjects(&self) -> Vec<usize> {
        self.templates.iter().map(|t| t.subject).collect()
    }

    pub fn eval_subjects(&self) -> Vec<usize> {
        self.eval_info.iter().map(|s| s.identity).collect()
    }
}

/// Store through `f32` so in-memory and on-disk images agree exactly.
fn to_f32_grid(mut t: Tensor) -> Tensor {
    t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
    t
}

fn render_set(ids: &[IdentitySpec], per_id: usize, range: &StyleRange, rng: &Rng, stream: u64) -> (Vec<Tensor>, Vec<SampleInfo>) {
    let jobs: Vec<(usize, usize)> = (0..ids.len() * per_id).map(|i| (i / per_id, i)).collect();
    let base = rng.split(stream);
    let out = par::map(&jobs, |&(k, i)| {
        let mut r = base.split(i as u64);
        let style = range.sample(&mut r);
        let img = to_f32_grid(render(&ids[k], &style, &mut r));
        (img, SampleInfo { identity: ids[k].id, style })
    });
    out.into_iter().unzip()
}

pub fn generate(config: &DatagenConfig) -> Result<Dataset> {
    config.validate()?;
    let root = Rng::new(config.seed);
    let mut id_rng = root.split(1);
    let total = config.source_identities + config.target_identities;
    let mut identities: Vec<IdentitySpec> = Vec::with_capacity(total);
    let mut attempts = 0usize;
    while identities.len() < total {
        attempts += 1;
        if attempts > 1000 * total {
            return Err(Error::invalid("cannot place identities at the requested separation"));
        }
        let cand = random_identity(identities.len(), config.jitter, &mut id_rng);
        if identities.iter().all(|o| cand.separation(o) >= config.min_separation) {
            identities.push(cand);
        }
    }
    let target_ids = identities.split_off(config.source_identities);
    let source_ids = identities;

    let source_range = StyleRange::source();
    let target_range = StyleRange::target(config.gap, config.brightness_offset);
    let (source_images, source_info) = render_set(&source_ids, config.images_per_source, &source_range, &root, 2);
    let source_labels = (0..source_images.len()).map(|i| i / config.images_per_source).collect();
    let (adapt_images, adapt_info) = render_set(&target_ids, config.adapt_per_target, &target_range, &root, 3);
    let (eval_images, eval_info) = render_set(&target_ids, config.images_per_target, &target_range, &root, 4);

    let per_template: usize = config.media_sizes.iter().sum();
    let mut templates = Vec::new();
    for (k, ident) in target_ids.iter().enumerate() {
        for t in 0..config.templates_per_target {
            let mut next = k * config.images_per_target + t * per_template;
            let media = config
                .media_sizes
                .iter()
                .map(|&m| {
                    let g: Vec<usize> = (next..next + m).collect();
                    next += m;
                    g
                })
                .collect();
            templates.push(TemplateSpec {
                id: templates.len(),
                subject: ident.id,
                media,
            });
        }
    }

    let tpt = config.templates_per_target;
    let known = config.known_subjects;
    let gallery: Vec<usize> = (0..known).map(|k| k * tpt).collect();
    let known_probes: Vec<usize> = (0..known).flat_map(|k| (1..tpt).map(move |t| k * tpt + t)).collect();
    let unknown_probes: Vec<usize> = (known * tpt..templates.len()).collect();
    let mut pairs = Vec::new();
    for a in 0..templates.len() {
        for b in (a + 1)..templates.len() {
            pairs.push((a, b, templates[a].subject == templates[b].subject));
        }
    }
    let mut pair_rng = root.split(5);
    pair_rng.shuffle(&mut pairs);
    let protocol = ProtocolSet {
        folds: round_robin_folds(pairs.len(), config.folds),
        num_folds: config.folds,
        pairs,
        gallery,
        known_probes,
        unknown_probes,
    };
    let subjects: Vec<usize> = templates.iter().map(|t| t.subject).collect();
    protocol.validate(&subjects)?;

    Ok(Dataset {
        config: config.clone(),
        source_identities: source_ids,
        target_identities: target_ids,
        source_range,
        target_range,
        source_images,
        source_labels,
        source_info,
        adapt_images,
        adapt_info,
        eval_images,
        eval_info,
        templates,
        protocol,
    })
}

pub fn mean_intensity(images: &[Tensor]) -> f64 {
    let total: f64 = images.iter().map(|t| t.sum()).sum();
    total / images.iter().map(Tensor::len).sum::<usize>() as f64
}
