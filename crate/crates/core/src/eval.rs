//! Biometric evaluation: template fusion, verification, closed-set and
//! open-set identification.
//!
//! A comparison is accepted when its score is at least the threshold. Every
//! threshold is drawn from the observed scores plus one sentinel just above
//! the largest impostor score, so sweeps are finite and exact.

use crate::error::{Error, Result};
use crate::network::MeanSd;
use crate::par;

/// Verification levels reported for TPR.
pub const FPR_LEVELS: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];
/// Open-set levels reported for TPIR.
pub const FPIR_LEVELS: [f64; 2] = [1e-2, 1e-1];
pub const RANKS: [usize; 2] = [1, 10];

/// Mean over media of the mean over frames within each media.
pub fn fuse_template(media: &[Vec<Vec<f64>>]) -> Result<Vec<f64>> {
    let groups: Vec<&Vec<Vec<f64>>> = media.iter().filter(|m| !m.is_empty()).collect();
    if groups.is_empty() {
        return Err(Error::invalid("template has no nonempty media"));
    }
    let d = groups[0][0].len();
    let mut fused = vec![0.0; d];
    for g in &groups {
        if g.iter().any(|f| f.len() != d) {
            return Err(Error::shape("frames differ in dimension"));
        }
        for i in 0..d {
            fused[i] += g.iter().map(|f| f[i]).sum::<f64>() / g.len() as f64;
        }
    }
    fused.iter_mut().for_each(|v| *v /= groups.len() as f64);
    Ok(fused)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine: dimension mismatch"));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine of a zero vector"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity of every probe against every gallery entry.
pub fn score_matrix(probes: &[Vec<f64>], gallery: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    par::map(probes, |p| gallery.iter().map(|g| cosine(p, g)).collect::<Result<Vec<_>>>())
        .into_iter()
        .collect()
}

/// One operating point of a threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub level: f64,
    pub threshold: f64,
    pub rate: f64,
    /// Fewer impostor scores than `1/level`: the rate is measured at zero
    /// false accepts instead.
    pub unreachable: bool,
}

fn check_scores(name: &str, s: &[f64]) -> Result<()> {
    if s.is_empty() {
        return Err(Error::invalid(format!("{name} scores are empty")));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite(format!("{name} scores")));
    }
    Ok(())
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Number of entries of ascending `s` that are `≥ t`.
fn count_at_least(s: &[f64], t: f64) -> usize {
    s.len() - s.partition_point(|&v| v < t)
}

/// Smallest candidate `t` with `|{imp ≥ t}|/|imp| ≤ level`. Candidates are
/// `others ∪ imp ∪ {next_up(max imp)}`.
fn threshold_for(imp_sorted: &[f64], others: &[f64], level: f64) -> (f64, bool) {
    let n = imp_sorted.len() as f64;
    let sentinel = imp_sorted[imp_sorted.len() - 1].next_up();
    let ok = |t: f64| count_at_least(imp_sorted, t) as f64 / n <= level;
    let mut cands: Vec<f64> = others.iter().chain(imp_sorted).copied().filter(|&t| t < sentinel).collect();
    cands.push(sentinel);
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let idx = cands.partition_point(|&t| !ok(t));
    (cands[idx], level * n < 1.0)
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("level {level} outside (0, 1)")));
    }
    Ok(())
}

pub fn tpr_at_fpr(pos: &[f64], neg: &[f64], levels: &[f64]) -> Result<Vec<OperatingPoint>> {
    check_scores("genuine", pos)?;
    check_scores("impostor", neg)?;
    let neg_s = sorted(neg);
    let pos_s = sorted(pos);
    levels
        .iter()
        .map(|&level| {
            check_level(level)?;
            let (threshold, unreachable) = threshold_for(&neg_s, pos, level);
            Ok(OperatingPoint {
                level,
                threshold,
                rate: count_at_least(&pos_s, threshold) as f64 / pos.len() as f64,
                unreachable,
            })
        })
        .collect()
}

/// A scored comparison with its ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPair {
    pub score: f64,
    pub genuine: bool,
}

fn accuracy(pairs: &[&ScoredPair], t: f64) -> f64 {
    let correct = pairs.iter().filter(|p| (p.score >= t) == p.genuine).count();
    correct as f64 / pairs.len() as f64
}

/// Threshold maximizing accuracy over `pairs`; ties go to the smallest.
fn best_threshold(pairs: &[&ScoredPair]) -> f64 {
    let mut s: Vec<&ScoredPair> = pairs.to_vec();
    s.sort_by(|a, b| a.score.total_cmp(&b.score));
    let total_pos = s.iter().filter(|p| p.genuine).count();
    // at t = s[i].score (first of its group) everything before i is rejected
    let (mut neg_below, mut pos_below) = (0usize, 0usize);
    let mut best = (0usize, f64::NAN);
    let mut i = 0;
    loop {
        let t = if i < s.len() { s[i].score } else { s[s.len() - 1].score.next_up() };
        let correct = neg_below + total_pos - pos_below;
        if best.1.is_nan() || correct > best.0 {
            best = (correct, t);
        }
        if i == s.len() {
            return best.1;
        }
        let v = s[i].score;
        while i < s.len() && s[i].score == v {
            if s[i].genuine {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            i += 1;
        }
    }
}

/// Fold of pair `i` under round-robin assignment.
pub fn round_robin_folds(n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|i| i % k).collect()
}

/// Per-fold accuracies plus their mean and spread.
#[derive(Debug, Clone, PartialEq)]
pub struct KFoldResult {
    pub fold_accuracy: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub summary: MeanSd,
}

pub fn kfold_verification(pairs: &[ScoredPair], folds: &[usize], k: usize) -> Result<KFoldResult> {
    if k < 2 {
        return Err(Error::invalid("k-fold needs K ≥ 2"));
    }
    if folds.len() != pairs.len() || folds.iter().any(|&f| f >= k) {
        return Err(Error::invalid("one fold index in 0..K per pair"));
    }
    check_scores("pair", &pairs.iter().map(|p| p.score).collect::<Vec<_>>())?;
    let mut fold_accuracy = Vec::with_capacity(k);
    let mut thresholds = Vec::with_capacity(k);
    for f in 0..k {
        let test: Vec<&ScoredPair> = pairs.iter().zip(folds).filter(|(_, &g)| g == f).map(|(p, _)| p).collect();
        let train: Vec<&ScoredPair> = pairs.iter().zip(folds).filter(|(_, &g)| g != f).map(|(p, _)| p).collect();
        if test.is_empty() || train.is_empty() {
            return Err(Error::invalid(format!("fold {f} is empty")));
        }
        let t = best_threshold(&train);
        thresholds.push(t);
        fold_accuracy.push(accuracy(&test, t));
    }
    let summary = MeanSd::of(&fold_accuracy).expect("k ≥ 2");
    Ok(KFoldResult {
        fold_accuracy,
        thresholds,
        summary,
    })
}

/// Gallery indices ordered by descending score, stable on ties. Scores must
/// be finite; `-0.0` and `0.0` tie.
fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores").then(a.cmp(&b)));
    idx
}

/// Closed-set accuracy at each rank in `ks`.
pub fn rank_k(
    scores: &[Vec<f64>],
    probe_subjects: &[usize],
    gallery_subjects: &[usize],
    ks: &[usize],
) -> Result<Vec<(usize, f64)>> {
    if scores.len() != probe_subjects.len() || scores.is_empty() {
        return Err(Error::invalid("one score row per probe"));
    }
    let mut first_hit = Vec::with_capacity(scores.len());
    for (row, subj) in scores.iter().zip(probe_subjects) {
        if row.len() != gallery_subjects.len() {
            return Err(Error::shape("score row length differs from gallery"));
        }
        check_scores("probe", row)?;
        if !gallery_subjects.contains(subj) {
            return Err(Error::invalid(format!("probe subject {subj} missing from gallery")));
        }
        let pos = ranking(row).iter().position(|&g| gallery_subjects[g] == *subj).expect("present");
        first_hit.push(pos);
    }
    ks.iter()
        .map(|&k| {
            if k == 0 {
                return Err(Error::invalid("rank must be positive"));
            }
            Ok((k, first_hit.iter().filter(|&&p| p < k).count() as f64 / first_hit.len() as f64))
        })
        .collect()
}

fn max_of(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Open-set rank-1 identification rate at each false-positive level.
pub fn tpir_at_fpir(
    known_scores: &[Vec<f64>],
    known_subjects: &[usize],
    unknown_scores: &[Vec<f64>],
    gallery_subjects: &[usize],
    levels: &[f64],
) -> Result<Vec<OperatingPoint>> {
    if known_scores.len() != known_subjects.len() || known_scores.is_empty() || unknown_scores.is_empty() {
        return Err(Error::invalid("need known probes with subjects and unknown probes"));
    }
    if gallery_subjects.is_empty() {
        return Err(Error::invalid("empty gallery"));
    }
    let mut tops = Vec::with_capacity(known_scores.len());
    for (row, subj) in known_scores.iter().zip(known_subjects) {
        if row.len() != gallery_subjects.len() {
            return Err(Error::shape("score row length differs from gallery"));
        }
        check_scores("known probe", row)?;
        let best = ranking(row)[0];
        tops.push((row[best], gallery_subjects[best] == *subj));
    }
    let mut maxima = Vec::with_capacity(unknown_scores.len());
    for row in unknown_scores {
        if row.len() != gallery_subjects.len() {
            return Err(Error::shape("score row length differs from gallery"));
        }
        maxima.push(max_of(row));
    }
    check_scores("unknown probe", &maxima)?;
    check_scores("known probe", &tops.iter().map(|t| t.0).collect::<Vec<_>>())?;
    let maxima_s = sorted(&maxima);
    let top_scores: Vec<f64> = tops.iter().map(|t| t.0).collect();
    levels
        .iter()
        .map(|&level| {
            check_level(level)?;
            let (threshold, unreachable) = threshold_for(&maxima_s, &top_scores, level);
            let hits = tops.iter().filter(|&&(s, ok)| ok && s >= threshold).count();
            Ok(OperatingPoint {
                level,
                threshold,
                rate: hits as f64 / tops.len() as f64,
                unreachable,
            })
        })
        .collect()
}

/// Area under the ROC curve; ties count one half.
pub fn auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check_scores("positive", pos)?;
    check_scores("negative", neg)?;
    let neg_s = sorted(neg);
    let mut wins = 0.0;
    for &p in pos {
        let below = neg_s.partition_point(|&v| v < p);
        let ties = neg_s.partition_point(|&v| v <= p) - below;
        wins += below as f64 + 0.5 * ties as f64;
    }
    Ok(wins / (pos.len() as f64 * neg.len() as f64))
}

/// A subject's media groups, each a list of frame embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub id: usize,
    pub subject: usize,
    pub media: Vec<Vec<Vec<f64>>>,
}

impl Template {
    pub fn fused(&self) -> Result<Vec<f64>> {
        fuse_template(&self.media)
    }
}

/// Evaluation protocol over templates referenced by index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProtocolSet {
    /// `(template a, template b, genuine)`.
    pub pairs: Vec<(usize, usize, bool)>,
    pub folds: Vec<usize>,
    pub num_folds: usize,
    pub gallery: Vec<usize>,
    pub known_probes: Vec<usize>,
    pub unknown_probes: Vec<usize>,
}

impl ProtocolSet {
    /// Checks open-set semantics and the fold partition against template subjects.
    pub fn validate(&self, subjects: &[usize]) -> Result<()> {
        let n = subjects.len();
        let all = self
            .pairs
            .iter()
            .flat_map(|&(a, b, _)| [a, b])
            .chain(self.gallery.iter().copied())
            .chain(self.known_probes.iter().copied())
            .chain(self.unknown_probes.iter().copied());
        for t in all {
            if t >= n {
                return Err(Error::invalid(format!("template {t} out of range")));
            }
        }
        for &(a, b, genuine) in &self.pairs {
            if (subjects[a] == subjects[b]) != genuine {
                return Err(Error::invalid(format!("pair ({a}, {b}) mislabelled")));
            }
        }
        let gallery_subjects: Vec<usize> = self.gallery.iter().map(|&g| subjects[g]).collect();
        if self.known_probes.iter().any(|&p| !gallery_subjects.contains(&subjects[p])) {
            return Err(Error::invalid("known probe subject missing from gallery"));
        }
        if self.unknown_probes.iter().any(|&p| gallery_subjects.contains(&subjects[p])) {
            return Err(Error::invalid("unknown probe subject present in gallery"));
        }
        if self.folds.len() != self.pairs.len() || self.folds.iter().any(|&f| f >= self.num_folds) {
            return Err(Error::invalid("fold assignment must cover every pair"));
        }
        Ok(())
    }
}

/// One reported metric value.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub protocol: String,
    pub level: f64,
    pub threshold: Option<f64>,
    pub value: f64,
    pub unreachable: bool,
}

/// Runs every protocol on fused template embeddings.
pub fn evaluate(templates: &[Vec<f64>], subjects: &[usize], protocol: &ProtocolSet) -> Result<Vec<MetricRow>> {
    if templates.len() != subjects.len() {
        return Err(Error::invalid("one subject per template"));
    }
    protocol.validate(subjects)?;
    let mut rows = Vec::new();

    let scored: Vec<ScoredPair> = par::map(&protocol.pairs, |&(a, b, genuine)| {
        cosine(&templates[a], &templates[b]).map(|score| ScoredPair { score, genuine })
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let pos: Vec<f64> = scored.iter().filter(|p| p.genuine).map(|p| p.score).collect();
    let neg: Vec<f64> = scored.iter().filter(|p| !p.genuine).map(|p| p.score).collect();
    for op in tpr_at_fpr(&pos, &neg, &FPR_LEVELS)? {
        rows.push(MetricRow {
            protocol: "tpr_at_fpr".into(),
            level: op.level,
            threshold: Some(op.threshold),
            value: op.rate,
            unreachable: op.unreachable,
        });
    }
    let kf = kfold_verification(&scored, &protocol.folds, protocol.num_folds)?;
    rows.push(MetricRow {
        protocol: "kfold_accuracy".into(),
        level: protocol.num_folds as f64,
        threshold: None,
        value: kf.summary.mean,
        unreachable: false,
    });
    rows.push(MetricRow {
        protocol: "kfold_accuracy_sd".into(),
        level: protocol.num_folds as f64,
        threshold: None,
        value: kf.summary.sd,
        unreachable: false,
    });

    let gallery: Vec<Vec<f64>> = protocol.gallery.iter().map(|&g| templates[g].clone()).collect();
    let gallery_subjects: Vec<usize> = protocol.gallery.iter().map(|&g| subjects[g]).collect();
    let pick = |ids: &[usize]| -> Vec<Vec<f64>> { ids.iter().map(|&i| templates[i].clone()).collect() };
    let known = score_matrix(&pick(&protocol.known_probes), &gallery)?;
    let unknown = score_matrix(&pick(&protocol.unknown_probes), &gallery)?;
    let known_subjects: Vec<usize> = protocol.known_probes.iter().map(|&p| subjects[p]).collect();
    let ks: Vec<usize> = RANKS.iter().map(|&k| k.min(gallery.len())).collect();
    for (k, acc) in rank_k(&known, &known_subjects, &gallery_subjects, &ks)? {
        rows.push(MetricRow {
            protocol: "rank".into(),
            level: k as f64,
            threshold: None,
            value: acc,
            unreachable: false,
        });
    }
    for op in tpir_at_fpir(&known, &known_subjects, &unknown, &gallery_subjects, &FPIR_LEVELS)? {
        rows.push(MetricRow {
            protocol: "tpir_at_fpir".into(),
            level: op.level,
            threshold: Some(op.threshold),
            value: op.rate,
            unreachable: op.unreachable,
        });
    }
    Ok(rows)
}

/// Value of the first row matching `protocol` and `level`.
pub fn lookup(rows: &[MetricRow], protocol: &str, level: f64) -> Option<f64> {
    rows.iter()
        .find(|r| r.protocol == protocol && r.level == level)
        .map(|r| r.value)
}
