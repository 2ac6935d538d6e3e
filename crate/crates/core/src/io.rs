//! On-disk formats: weight files, the row container used for images and
//! embeddings, and the line-oriented protocol and curve files.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, DatagenConfig, IdentitySpec, SampleInfo, StyleRange, CANVAS};
use crate::error::{Error, Result};
use crate::eval::ProtocolSet;
use crate::network::CurveRow;
use crate::nn::Parameters;
use crate::tensor::Tensor;

pub const WEIGHT_MAGIC: &[u8; 4] = b"SADW";
pub const WEIGHT_VERSION: u32 = 1;
const LITTLE_ENDIAN_TAG: u8 = b'L';

fn format_err(what: &'static str, detail: impl Into<String>) -> Error {
    Error::Format {
        what,
        detail: detail.into(),
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Named parameter blocks with a free-form kind tag and JSON metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub kind: String,
    pub meta: String,
    pub blocks: Vec<(String, Tensor)>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

impl WeightFile {
    pub fn from_params<P: Parameters>(kind: &str, meta: &str, params: &P) -> Self {
        WeightFile {
            kind: kind.to_string(),
            meta: meta.to_string(),
            blocks: params.named_tensors().into_iter().map(|(n, t)| (n, t.clone())).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHT_MAGIC);
        put_u32(&mut out, WEIGHT_VERSION);
        out.push(LITTLE_ENDIAN_TAG);
        put_str(&mut out, &self.kind);
        put_str(&mut out, &self.meta);
        put_u32(&mut out, self.blocks.len() as u32);
        for (name, t) in &self.blocks {
            put_str(&mut out, name);
            put_u32(&mut out, t.ndim() as u32);
            for &d in t.shape() {
                put_u32(&mut out, d as u32);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        take(&mut r, &mut magic)?;
        if &magic != WEIGHT_MAGIC {
            return Err(format_err("weights", "bad magic"));
        }
        let version = get_u32(&mut r)?;
        if version != WEIGHT_VERSION {
            return Err(format_err("weights", format!("unsupported version {version}")));
        }
        let mut tag = [0u8; 1];
        take(&mut r, &mut tag)?;
        if tag[0] != LITTLE_ENDIAN_TAG {
            return Err(format_err("weights", "only little-endian files are supported"));
        }
        let kind = get_str(&mut r)?;
        let meta = get_str(&mut r)?;
        let n = get_u32(&mut r)? as usize;
        let mut blocks = Vec::with_capacity(n);
        for _ in 0..n {
            let name = get_str(&mut r)?;
            let ndim = get_u32(&mut r)? as usize;
            let shape = (0..ndim).map(|_| get_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let mut b = [0u8; 8];
                take(&mut r, &mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            blocks.push((name, Tensor::new(&shape, data)?));
        }
        if !r.is_empty() {
            return Err(format_err("weights", "trailing bytes"));
        }
        Ok(WeightFile { kind, meta, blocks })
    }

    /// Copies blocks into `params`, requiring identical names and shapes.
    pub fn load_into<P: Parameters>(&self, params: &mut P) -> Result<()> {
        let expected: Vec<(String, Vec<usize>)> = params
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if expected.len() != self.blocks.len() {
            return Err(format_err("weights", format!("expected {} blocks, found {}", expected.len(), self.blocks.len())));
        }
        for ((en, es), (n, t)) in expected.iter().zip(&self.blocks) {
            if en != n || es.as_slice() != t.shape() {
                return Err(format_err("weights", format!("block {n} {:?} does not match {en} {es:?}", t.shape())));
            }
        }
        for (dst, (_, src)) in params.tensors_mut().into_iter().zip(&self.blocks) {
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

fn take(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| format_err("binary", "unexpected end of data"))
}

fn get_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    take(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_str(r: &mut &[u8]) -> Result<String> {
    let n = get_u32(r)? as usize;
    if n > r.len() {
        return Err(format_err("binary", "string length exceeds data"));
    }
    let mut b = vec![0u8; n];
    take(r, &mut b)?;
    String::from_utf8(b).map_err(|_| format_err("binary", "string is not UTF-8"))
}

/// `u32 count, u32 D`, then `count × D` little-endian `f32` values.
pub fn rows_to_bytes(rows: &[&[f64]], d: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + rows.len() * d * 4);
    put_u32(&mut out, rows.len() as u32);
    put_u32(&mut out, d as u32);
    for r in rows {
        if r.len() != d {
            return Err(Error::shape("rows differ in length"));
        }
        for &v in r.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn rows_from_bytes(bytes: &[u8]) -> Result<(Vec<Vec<f64>>, usize)> {
    let mut r = bytes;
    let n = get_u32(&mut r)? as usize;
    let d = get_u32(&mut r)? as usize;
    if r.len() != n * d * 4 {
        return Err(format_err("rows", format!("expected {} payload bytes, found {}", n * d * 4, r.len())));
    }
    if d == 0 {
        return Ok((vec![Vec::new(); n], 0));
    }
    let rows = r
        .chunks_exact(d * 4)
        .map(|row| {
            row.chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect()
        })
        .collect();
    Ok((rows, d))
}

pub fn save_images(path: &Path, images: &[Tensor]) -> Result<()> {
    let d = images.first().map_or(0, Tensor::len);
    let rows: Vec<&[f64]> = images.iter().map(Tensor::data).collect();
    write_file(path, &rows_to_bytes(&rows, d)?)
}

pub fn load_images(path: &Path, shape: &[usize]) -> Result<Vec<Tensor>> {
    let (rows, d) = rows_from_bytes(&read_file(path)?)?;
    if !rows.is_empty() && d != shape.iter().product::<usize>() {
        return Err(format_err("images", format!("row length {d} does not match {shape:?}")));
    }
    rows.into_iter().map(|r| Tensor::new(shape, r)).collect()
}

fn lines(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push((i + 1, t.split(',').map(|s| s.trim().to_string()).collect()));
    }
    Ok(out)
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| format_err("csv", format!("{}:{line}: cannot parse '{s}'", path.display())))
}

fn expect_fields(path: &Path, line: usize, f: &[String], n: usize) -> Result<()> {
    if f.len() != n {
        return Err(format_err("csv", format!("{}:{line}: expected {n} fields, found {}", path.display(), f.len())));
    }
    Ok(())
}

pub fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut buf = BufWriter::new(Vec::new());
    writeln!(buf, "{header}").expect("in-memory write");
    for r in rows {
        writeln!(buf, "{r}").expect("in-memory write");
    }
    write_file(path, &buf.into_inner().expect("in-memory buffer"))
}

/// `templateIdA,templateIdB,label` with label ∈ {0, 1}.
pub fn write_pairs(path: &Path, pairs: &[(usize, usize, bool)]) -> Result<()> {
    write_csv(path, "# a,b,label", pairs.iter().map(|&(a, b, l)| format!("{a},{b},{}", u8::from(l))))
}

pub fn read_pairs(path: &Path) -> Result<Vec<(usize, usize, bool)>> {
    lines(path)?
        .into_iter()
        .map(|(ln, f)| {
            expect_fields(path, ln, &f, 3)?;
            let label: u8 = parse_field(path, ln, &f[2])?;
            if label > 1 {
                return Err(format_err("csv", format!("{}:{ln}: label must be 0 or 1", path.display())));
            }
            Ok((parse_field(path, ln, &f[0])?, parse_field(path, ln, &f[1])?, label == 1))
        })
        .collect()
}

/// `templateId,subjectId` lines.
pub fn write_membership(path: &Path, entries: &[(usize, usize)]) -> Result<()> {
    write_csv(path, "# template,subject", entries.iter().map(|(t, s)| format!("{t},{s}")))
}

pub fn read_membership(path: &Path) -> Result<Vec<(usize, usize)>> {
    lines(path)?
        .into_iter()
        .map(|(ln, f)| {
            expect_fields(path, ln, &f, 2)?;
            Ok((parse_field(path, ln, &f[0])?, parse_field(path, ln, &f[1])?))
        })
        .collect()
}

/// `templateId,subjectId,media,imageIndex` lines.
pub fn write_templates(path: &Path, templates: &[crate::datagen::TemplateSpec]) -> Result<()> {
    let rows = templates.iter().flat_map(|t| {
        t.media
            .iter()
            .enumerate()
            .flat_map(move |(m, g)| g.iter().map(move |i| format!("{},{},{m},{i}", t.id, t.subject)))
    });
    write_csv(path, "# template,subject,media,image", rows)
}

pub fn read_templates(path: &Path) -> Result<Vec<crate::datagen::TemplateSpec>> {
    let mut out: Vec<crate::datagen::TemplateSpec> = Vec::new();
    for (ln, f) in lines(path)? {
        expect_fields(path, ln, &f, 4)?;
        let (id, subject, media, image): (usize, usize, usize, usize) = (
            parse_field(path, ln, &f[0])?,
            parse_field(path, ln, &f[1])?,
            parse_field(path, ln, &f[2])?,
            parse_field(path, ln, &f[3])?,
        );
        if id == out.len() {
            out.push(crate::datagen::TemplateSpec {
                id,
                subject,
                media: Vec::new(),
            });
        } else if id + 1 != out.len() {
            return Err(format_err("csv", format!("{}:{ln}: templates must be listed in order", path.display())));
        }
        let t = out.last_mut().expect("pushed above");
        if media == t.media.len() {
            t.media.push(Vec::new());
        } else if media + 1 != t.media.len() {
            return Err(format_err("csv", format!("{}:{ln}: media must be listed in order", path.display())));
        }
        t.media.last_mut().expect("pushed above").push(image);
    }
    Ok(out)
}

/// Pair folds stored alongside the pair file, one index per line.
pub fn write_folds(path: &Path, folds: &[usize], k: usize) -> Result<()> {
    write_csv(path, &format!("# folds={k}"), folds.iter().map(|f| f.to_string()))
}

pub fn read_folds(path: &Path) -> Result<(Vec<usize>, usize)> {
    let text = read_text(path)?;
    let k = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# folds="))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| format_err("csv", format!("{}: missing '# folds=K' header", path.display())))?;
    let folds = lines(path)?
        .into_iter()
        .map(|(ln, f)| {
            expect_fields(path, ln, &f, 1)?;
            parse_field(path, ln, &f[0])
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok((folds, k))
}

/// Protocol file names inside a dataset directory.
pub mod files {
    pub const MANIFEST: &str = "manifest.json";
    pub const SOURCE_IMAGES: &str = "source_images.bin";
    pub const SOURCE_LABELS: &str = "source_labels.csv";
    pub const ADAPT_IMAGES: &str = "target_adapt_images.bin";
    pub const EVAL_IMAGES: &str = "target_eval_images.bin";
    pub const TEMPLATES: &str = "templates.csv";
    pub const PAIRS: &str = "pairs.csv";
    pub const FOLDS: &str = "folds.csv";
    pub const GALLERY: &str = "gallery.csv";
    pub const KNOWN_PROBES: &str = "probes_known.csv";
    pub const UNKNOWN_PROBES: &str = "probes_unknown.csv";
}

pub fn write_protocol(dir: &Path, protocol: &ProtocolSet, subjects: &[usize]) -> Result<()> {
    let member = |ids: &[usize]| ids.iter().map(|&t| (t, subjects[t])).collect::<Vec<_>>();
    write_pairs(&dir.join(files::PAIRS), &protocol.pairs)?;
    write_folds(&dir.join(files::FOLDS), &protocol.folds, protocol.num_folds)?;
    write_membership(&dir.join(files::GALLERY), &member(&protocol.gallery))?;
    write_membership(&dir.join(files::KNOWN_PROBES), &member(&protocol.known_probes))?;
    write_membership(&dir.join(files::UNKNOWN_PROBES), &member(&protocol.unknown_probes))
}

pub fn read_protocol(dir: &Path, subjects: &[usize]) -> Result<ProtocolSet> {
    let (folds, num_folds) = read_folds(&dir.join(files::FOLDS))?;
    let ids = |name: &str| -> Result<Vec<usize>> {
        let path = dir.join(name);
        let entries = read_membership(&path)?;
        for &(t, s) in &entries {
            if subjects.get(t) != Some(&s) {
                return Err(format_err("protocol", format!("{}: template {t} is not subject {s}", path.display())));
            }
        }
        Ok(entries.into_iter().map(|(t, _)| t).collect())
    };
    let p = ProtocolSet {
        pairs: read_pairs(&dir.join(files::PAIRS))?,
        folds,
        num_folds,
        gallery: ids(files::GALLERY)?,
        known_probes: ids(files::KNOWN_PROBES)?,
        unknown_probes: ids(files::UNKNOWN_PROBES)?,
    };
    p.validate(subjects)?;
    Ok(p)
}

pub fn write_curves(path: &Path, rows: &[CurveRow]) -> Result<()> {
    write_csv(
        path,
        "epoch,batch,term,value",
        rows.iter().map(|r| format!("{},{},{},{}", r.epoch, r.batch, r.term, r.value)),
    )
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    lines(path)?
        .into_iter()
        .map(|(ln, f)| {
            expect_fields(path, ln, &f, 1)?;
            parse_field(path, ln, &f[0])
        })
        .collect()
}

/// Dataset description written next to the binary image files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: DatagenConfig,
    pub image_shape: [usize; 3],
    pub source_identities: Vec<IdentitySpec>,
    pub target_identities: Vec<IdentitySpec>,
    pub source_range: StyleRange,
    pub target_range: StyleRange,
    pub files: BTreeMap<String, String>,
    pub source_samples: Vec<SampleInfo>,
    pub adapt_samples: Vec<SampleInfo>,
    pub eval_samples: Vec<SampleInfo>,
}

pub const MANIFEST_VERSION: u32 = 1;

/// Which optional image sets `load_dataset` should read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetParts {
    pub adapt: bool,
    pub eval: bool,
}

impl DatasetParts {
    pub const ALL: DatasetParts = DatasetParts { adapt: true, eval: true };
}

pub fn save_dataset(dir: &Path, d: &Dataset) -> Result<Manifest> {
    let names = [
        ("source_images", files::SOURCE_IMAGES),
        ("source_labels", files::SOURCE_LABELS),
        ("adapt_images", files::ADAPT_IMAGES),
        ("eval_images", files::EVAL_IMAGES),
        ("templates", files::TEMPLATES),
        ("pairs", files::PAIRS),
        ("folds", files::FOLDS),
        ("gallery", files::GALLERY),
        ("probes_known", files::KNOWN_PROBES),
        ("probes_unknown", files::UNKNOWN_PROBES),
    ];
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        config: d.config.clone(),
        image_shape: [1, CANVAS, CANVAS],
        source_identities: d.source_identities.clone(),
        target_identities: d.target_identities.clone(),
        source_range: d.source_range,
        target_range: d.target_range,
        files: names.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        source_samples: d.source_info.clone(),
        adapt_samples: d.adapt_info.clone(),
        eval_samples: d.eval_info.clone(),
    };
    save_images(&dir.join(files::SOURCE_IMAGES), &d.source_images)?;
    save_images(&dir.join(files::ADAPT_IMAGES), &d.adapt_images)?;
    save_images(&dir.join(files::EVAL_IMAGES), &d.eval_images)?;
    write_csv(&dir.join(files::SOURCE_LABELS), "# label", d.source_labels.iter().map(|l| l.to_string()))?;
    write_templates(&dir.join(files::TEMPLATES), &d.templates)?;
    write_protocol(dir, &d.protocol, &d.template_subjects())?;
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| format_err("manifest", e.to_string()))?;
    write_file(&dir.join(files::MANIFEST), json.as_bytes())?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(files::MANIFEST);
    let m: Manifest = serde_json::from_str(&read_text(&path)?)
        .map_err(|e| format_err("manifest", format!("{}: {e}", path.display())))?;
    if m.format_version != MANIFEST_VERSION {
        return Err(format_err("manifest", format!("unsupported version {}", m.format_version)));
    }
    Ok(m)
}

/// Reads a dataset directory; skipped parts come back empty.
pub fn load_dataset(dir: &Path, parts: DatasetParts) -> Result<Dataset> {
    let m = load_manifest(dir)?;
    let shape = m.image_shape;
    let counted = |imgs: Vec<Tensor>, info: &[SampleInfo], what: &str| -> Result<Vec<Tensor>> {
        if imgs.len() != info.len() {
            return Err(format_err("dataset", format!("{what}: {} images but {} manifest entries", imgs.len(), info.len())));
        }
        Ok(imgs)
    };
    let source_images = counted(load_images(&dir.join(files::SOURCE_IMAGES), &shape)?, &m.source_samples, "source")?;
    let source_labels = read_labels(&dir.join(files::SOURCE_LABELS))?;
    if source_labels.len() != source_images.len() || source_labels.iter().any(|&l| l >= m.source_identities.len()) {
        return Err(format_err("dataset", "source labels do not match the images"));
    }
    let adapt_images = if parts.adapt {
        counted(load_images(&dir.join(files::ADAPT_IMAGES), &shape)?, &m.adapt_samples, "adapt")?
    } else {
        Vec::new()
    };
    let (eval_images, templates, protocol) = if parts.eval {
        let imgs = counted(load_images(&dir.join(files::EVAL_IMAGES), &shape)?, &m.eval_samples, "eval")?;
        let templates = read_templates(&dir.join(files::TEMPLATES))?;
        for t in &templates {
            if t.media.iter().flatten().any(|&i| m.eval_samples.get(i).map(|s| s.identity) != Some(t.subject)) {
                return Err(format_err("dataset", format!("template {} references foreign images", t.id)));
            }
        }
        let subjects: Vec<usize> = templates.iter().map(|t| t.subject).collect();
        let protocol = read_protocol(dir, &subjects)?;
        (imgs, templates, protocol)
    } else {
        (Vec::new(), Vec::new(), ProtocolSet::default())
    };
    Ok(Dataset {
        config: m.config,
        source_identities: m.source_identities,
        target_identities: m.target_identities,
        source_range: m.source_range,
        target_range: m.target_range,
        source_images,
        source_labels,
        source_info: m.source_samples,
        adapt_images,
        adapt_info: m.adapt_samples,
        eval_images,
        eval_info: m.eval_samples,
        templates,
        protocol,
    })
}
