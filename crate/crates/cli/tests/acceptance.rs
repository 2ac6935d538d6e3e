//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion does. Criteria run one after another so
//! that the reported runtimes are not inflated by each other.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use style_adapt::datagen::{self, Dataset, DatagenConfig};
use style_adapt::discriminator::{self, DiscTrainConfig, DiscriminatorConfig, DiscriminatorParams};
use style_adapt::eval::{self, ScoredPair};
use style_adapt::network::{self, AdaptContext, EpsPolicy, Mode, Model, NetworkConfig, SourceBatch, TrainConfig};
use style_adapt::nn::Parameters;
use style_adapt::pipeline::{self, EvalReport};
use style_adapt::rng::Rng;
use style_adapt::sinkhorn::{self, EpsState};
use style_adapt::style::{self, LayerEps, SinkhornOptions};
use style_adapt::tensor::Tensor;

struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
}

fn report(name: &'static str, start: Instant, passed: bool, detail: String) -> Outcome {
    let o = Outcome {
        name,
        passed,
        detail,
        elapsed: start.elapsed(),
    };
    println!(
        "{} {} ({:.1} s): {}",
        if o.passed { "PASS" } else { "FAIL" },
        o.name,
        o.elapsed.as_secs_f64(),
        o.detail
    );
    o
}

// ---------------------------------------------------------------- Sinkhorn

fn sinkhorn_correctness() -> Outcome {
    let t = Instant::now();
    let r = sinkhorn::oracle_suite(2024, 200, 200).unwrap();
    let fast = t.elapsed() < Duration::from_secs(30);
    report(
        "1 sinkhorn correctness",
        t,
        r.passed() && fast,
        format!(
            "OT outside 5%: {}/{} (worst {:.3e}); min divergence {:.2e}; max asymmetry {:.2e}; max self-distance {:.2e}",
            r.ot_failures, r.instances, r.worst_relative_error, r.min_divergence, r.max_asymmetry, r.max_self_distance
        ),
    )
}

// ---------------------------------------------------------------- gradients

/// Worst relative error between `grad` and central differences of `f`.
fn fd_worst<P: Parameters + Clone>(params: &P, grad: &P, f: impl Fn(&P) -> f64) -> f64 {
    let flat = params.flatten();
    let g = grad.flatten();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..flat.len() {
        let at = |delta: f64| {
            let mut p = params.clone();
            let mut v = flat.clone();
            v[i] += delta;
            p.set_flat(&v).unwrap();
            f(&p)
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        worst = worst.max((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-3));
    }
    worst
}

fn noise_images(n: usize, shape: &[usize], shift: f64, rng: &mut Rng) -> Vec<Tensor> {
    let len: usize = shape.iter().product();
    (0..n)
        .map(|_| Tensor::new(shape, (0..len).map(|_| rng.uniform() + shift).collect()).unwrap())
        .collect()
}

/// Style loss gradient with respect to the tapped maps themselves.
fn style_input_worst(rng: &mut Rng) -> f64 {
    let shapes = [[3usize, 8, 8], [4, 4, 4]];
    let src: Vec<Vec<Tensor>> = shapes.iter().map(|s| noise_images(3, s, 0.0, rng)).collect();
    let tgt: Vec<Vec<Tensor>> = shapes.iter().map(|s| noise_images(3, s, 0.5, rng)).collect();
    let taps = style::LayerTapSet::new(vec![1, 2], vec![3, 4]).unwrap();
    let opts = SinkhornOptions::default();
    let eps = || vec![LayerEps::fixed(0.05, 0.05); 2];
    let loss = |s: &[Vec<Tensor>]| style::style_matching_loss(s, &tgt, &taps, &mut eps(), opts).unwrap().value;
    let (_, g) = style::style_matching_loss_with_grads(&src, &tgt, &taps, &mut eps(), opts).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for l in 0..2 {
        for b in 0..3 {
            for i in 0..src[l][b].len() {
                let at = |delta: f64| {
                    let mut s = src.clone();
                    s[l][b].data_mut()[i] += delta;
                    loss(&s)
                };
                let fd = (at(h) - at(-h)) / (2.0 * h);
                let an = g.source[l][b].data()[i];
                worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-3));
            }
        }
    }
    worst
}

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let mut rng = Rng::new(77);
    let model = Model::init(NetworkConfig::miniature(), &mut rng).unwrap();
    let shape = model.input_shape();
    let s = noise_images(3, &shape, 0.0, &mut rng);
    let tg = noise_images(3, &shape, 0.6, &mut rng);
    let labels = [0, 2, 1];
    let scores = [0.3, 0.8, 0.6];
    let mut parts = Vec::new();
    for mode in Mode::ALL {
        let mut ctx = AdaptContext::new(&model.config, 2, 1.0, SinkhornOptions::default(), EpsPolicy::Fixed(0.05), 0.9).unwrap();
        ctx.mmd_bandwidths = Some(vec![0.7, 1.5, 3.0]);
        let batch = SourceBatch {
            images: &s,
            labels: &labels,
            scores: mode.uses_scores().then_some(&scores[..]),
        };
        let target = mode.uses_target().then_some(&tg[..]);
        let (_, g) = network::adaptation_grads(&model, &batch, target, mode, &mut ctx.clone()).unwrap();
        let w = fd_worst(&model, &g, |m| {
            network::adaptation_loss(m, &batch, target, mode, &mut ctx.clone()).unwrap().total
        });
        let name = if mode == Mode::Baseline { "L_c".to_string() } else { mode.to_string() };
        parts.push((name, w));
    }
    parts.push(("L_s maps".into(), style_input_worst(&mut rng)));

    let arch = DiscriminatorConfig {
        input_channels: 1,
        input_size: 8,
        channels: vec![2, 3],
    };
    let disc = DiscriminatorParams::init(&arch, &mut rng).unwrap();
    let ds = noise_images(2, &[1, 8, 8], 0.0, &mut rng);
    let dt = noise_images(2, &[1, 8, 8], 0.4, &mut rng);
    let (_, g) = discriminator::domain_loss_grads(&ds, &dt, &disc).unwrap();
    parts.push((
        "L_d".into(),
        fd_worst(&disc, &g, |p| discriminator::domain_loss_grads(&ds, &dt, p).unwrap().0),
    ));

    let worst = parts.iter().map(|p| p.1).fold(0.0, f64::max);
    let fast = t.elapsed() < Duration::from_secs(300);
    let detail = parts.iter().map(|(n, w)| format!("{n} {w:.1e}")).collect::<Vec<_>>().join(", ");
    report("2 gradient suite", t, worst < 1e-4 && fast, format!("worst relative error per loss: {detail}"))
}

// ---------------------------------------------------------------- evaluation oracles

/// Smallest candidate threshold meeting each level, by direct counting.
fn oracle_thresholds(neg: &[f64], pos: &[f64], levels: &[f64]) -> Vec<f64> {
    let max_neg = neg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut best = vec![f64::INFINITY; levels.len()];
    for &c in neg.iter().chain(pos).chain([max_neg.next_up()].iter()) {
        let fp = neg.iter().filter(|&&v| v >= c).count() as f64 / neg.len() as f64;
        for (b, &level) in best.iter_mut().zip(levels) {
            if fp <= level && c < *b {
                *b = c;
            }
        }
    }
    best
}

fn random_scores(n: usize, shift: f64, coarse: bool, rng: &mut Rng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v = rng.normal() + shift;
            if coarse {
                (v * 4.0).round() / 4.0
            } else {
                v
            }
        })
        .collect()
}

fn check_tpr(rng: &mut Rng) -> bool {
    let (np, nn) = (1 + rng.below(2000), 1 + rng.below(3000));
    let coarse = rng.below(2) == 0;
    let pos = random_scores(np, 1.5, coarse, rng);
    let neg = random_scores(nn, 0.0, coarse, rng);
    let got = eval::tpr_at_fpr(&pos, &neg, &eval::FPR_LEVELS).unwrap();
    let ts = oracle_thresholds(&neg, &pos, &eval::FPR_LEVELS);
    got.iter().zip(ts).all(|(op, t)| {
        let rate = pos.iter().filter(|&&v| v >= t).count() as f64 / np as f64;
        op.threshold == t && op.rate == rate && op.unreachable == (op.level * (nn as f64) < 1.0)
    })
}

fn check_kfold(rng: &mut Rng) -> bool {
    let n = 20 + rng.below(400);
    let k = 2 + rng.below(9);
    let coarse = rng.below(2) == 0;
    let pairs: Vec<ScoredPair> = (0..n)
        .map(|_| {
            let genuine = rng.below(2) == 0;
            let s = random_scores(1, if genuine { 1.0 } else { 0.0 }, coarse, rng)[0];
            ScoredPair { score: s, genuine }
        })
        .collect();
    let folds: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
    if (0..k).any(|f| !folds.contains(&f)) {
        return eval::kfold_verification(&pairs, &folds, k).is_err();
    }
    let got = eval::kfold_verification(&pairs, &folds, k).unwrap();
    let acc = |set: &[&ScoredPair], t: f64| set.iter().filter(|p| (p.score >= t) == p.genuine).count() as f64 / set.len() as f64;
    let mut accs = Vec::new();
    for f in 0..k {
        let train: Vec<&ScoredPair> = pairs.iter().zip(&folds).filter(|(_, &g)| g != f).map(|(p, _)| p).collect();
        let test: Vec<&ScoredPair> = pairs.iter().zip(&folds).filter(|(_, &g)| g == f).map(|(p, _)| p).collect();
        let max = train.iter().map(|p| p.score).fold(f64::NEG_INFINITY, f64::max);
        let mut best = (f64::NEG_INFINITY, f64::INFINITY);
        for c in train.iter().map(|p| p.score).chain([max.next_up()]) {
            let a = acc(&train, c);
            if a > best.0 || (a == best.0 && c < best.1) {
                best = (a, c);
            }
        }
        if got.thresholds[f] != best.1 {
            return false;
        }
        accs.push(acc(&test, best.1));
    }
    let mean = accs.iter().sum::<f64>() / k as f64;
    let sd = (accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / k as f64).sqrt();
    got.fold_accuracy == accs && (got.summary.mean - mean).abs() < 1e-12 && (got.summary.sd - sd).abs() < 1e-12
}

/// Score rows for probes against a gallery, with a few planted duplicates.
fn gallery_scores(probes: usize, gallery: usize, coarse: bool, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..probes).map(|_| random_scores(gallery, 0.0, coarse, rng)).collect()
}

fn first_hit(row: &[f64], subj: usize, gallery: &[usize]) -> usize {
    (0..row.len())
        .filter(|&g| gallery[g] == subj)
        .map(|g| (0..row.len()).filter(|&o| row[o] > row[g] || (row[o] == row[g] && o < g)).count())
        .min()
        .unwrap()
}

fn check_rank(rng: &mut Rng) -> bool {
    let g = 2 + rng.below(60);
    let p = 1 + rng.below(150);
    let gallery: Vec<usize> = (0..g).map(|_| rng.below(g.max(3) / 2 + 1)).collect();
    let probe_subjects: Vec<usize> = (0..p).map(|_| gallery[rng.below(g)]).collect();
    let scores = gallery_scores(p, g, rng.below(2) == 0, rng);
    let got = eval::rank_k(&scores, &probe_subjects, &gallery, &[1, 5, 10]).unwrap();
    got.iter().all(|&(k, rate)| {
        let hits = scores.iter().zip(&probe_subjects).filter(|(r, &s)| first_hit(r, s, &gallery) < k).count();
        rate == hits as f64 / p as f64
    })
}

fn check_tpir(rng: &mut Rng) -> bool {
    let g = 2 + rng.below(50);
    let gallery: Vec<usize> = (0..g).collect();
    let nk = 1 + rng.below(200);
    let nu = 1 + rng.below(400);
    let coarse = rng.below(2) == 0;
    let known_subjects: Vec<usize> = (0..nk).map(|_| rng.below(g)).collect();
    let mut known = gallery_scores(nk, g, coarse, rng);
    for (row, &s) in known.iter_mut().zip(&known_subjects) {
        row[s] += 1.0;
    }
    let unknown = gallery_scores(nu, g, coarse, rng);
    let got = eval::tpir_at_fpir(&known, &known_subjects, &unknown, &gallery, &eval::FPIR_LEVELS).unwrap();
    let tops: Vec<(f64, bool)> = known
        .iter()
        .zip(&known_subjects)
        .map(|(row, &s)| {
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            (row[best], gallery[best] == s)
        })
        .collect();
    let maxima: Vec<f64> = unknown.iter().map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
    let top_scores: Vec<f64> = tops.iter().map(|t| t.0).collect();
    let ts = oracle_thresholds(&maxima, &top_scores, &eval::FPIR_LEVELS);
    got.iter().zip(ts).all(|(op, t)| {
        let rate = tops.iter().filter(|&&(s, ok)| ok && s >= t).count() as f64 / nk as f64;
        op.threshold == t && op.rate == rate
    })
}

fn evaluation_oracles() -> Outcome {
    let t = Instant::now();
    let mut rng = Rng::new(5);
    let mut failures = [0usize; 4];
    let checks: [fn(&mut Rng) -> bool; 4] = [check_tpr, check_kfold, check_rank, check_tpir];
    for _ in 0..100 {
        for (f, check) in failures.iter_mut().zip(checks) {
            if !check(&mut rng) {
                *f += 1;
            }
        }
    }
    let fast = t.elapsed() < Duration::from_secs(60);
    report(
        "3 evaluation oracles",
        t,
        failures.iter().all(|&f| f == 0) && fast,
        format!(
            "disagreements over 100 instances: tpr_at_fpr {}, kfold {}, rank_k {}, tpir_at_fpir {}",
            failures[0], failures[1], failures[2], failures[3]
        ),
    )
}

// ---------------------------------------------------------------- discriminator

const SEEDS: [u64; 3] = [0, 1, 2];

fn disc_arch() -> DiscriminatorConfig {
    DiscriminatorConfig {
        channels: vec![4, 8, 16, 16],
        ..DiscriminatorConfig::default()
    }
}

fn disc_train() -> DiscTrainConfig {
    DiscTrainConfig {
        epochs: 4,
        ..DiscTrainConfig::default()
    }
}

/// Held-out domain AUC on a dataset rendered from another generator seed:
/// new identities and new renders on both sides, none seen in training.
fn held_out_auc(d: &Dataset, disc: &DiscriminatorParams, seed: u64) -> f64 {
    let fresh = datagen::generate(&DatagenConfig {
        seed: seed + 1000,
        ..d.config.clone()
    })
    .unwrap();
    let src = discriminator::score_all(&fresh.source_images, disc).unwrap();
    let tgt = discriminator::score_all(&fresh.eval_images, disc).unwrap();
    eval::auc(&tgt, &src).unwrap()
}

fn discriminator_behavior() -> Outcome {
    let t = Instant::now();
    let mut ok = true;
    let mut notes = Vec::new();
    for seed in SEEDS {
        for gap in [1.0, 0.0] {
            let d = datagen::generate(&DatagenConfig {
                seed,
                gap,
                ..DatagenConfig::default()
            })
            .unwrap();
            let (disc, _) = pipeline::train_discriminator(&d, &disc_arch(), &disc_train(), seed).unwrap();
            let auc = held_out_auc(&d, &disc, seed);
            let in_band = if gap == 1.0 { auc > 0.95 } else { (0.4..=0.6).contains(&auc) };
            let s = pipeline::source_scores(&d, &disc).unwrap();
            let mean = s.iter().sum::<f64>() / s.len() as f64;
            let weighted = s.iter().map(|v| v * v).sum::<f64>() / s.iter().sum::<f64>();
            let constant = s.iter().all(|&v| v == s[0]);
            let ordered = constant || weighted > mean;
            ok &= in_band && ordered;
            notes.push(format!("seed {seed} gap {gap}: AUC {auc:.3}, mean {mean:.3} weighted {weighted:.3}"));
        }
    }
    report("4 discriminator behavior", t, ok, notes.join("; "))
}

// ---------------------------------------------------------------- adaptation

const ADAPT_GAP: f64 = 0.75;

struct SeedRun {
    baseline: EvalReport,
    sm: EvalReport,
    ps_sm: EvalReport,
    fixed: EvalReport,
    eps_ok: bool,
    runtime: Duration,
}

fn train_config(mode: Mode) -> TrainConfig {
    TrainConfig {
        mode,
        lf: 2,
        ..TrainConfig::default()
    }
}

fn eps_values(out: &network::AdaptOutcome) -> Vec<f64> {
    out.curves.iter().filter(|r| r.term.starts_with("eps_")).map(|r| r.value).collect()
}

fn run_seed(seed: u64) -> SeedRun {
    let t = Instant::now();
    let d = datagen::generate(&DatagenConfig {
        seed,
        gap: ADAPT_GAP,
        ..DatagenConfig::default()
    })
    .unwrap();
    let (base, _) = pipeline::train_baseline(&d, &train_config(Mode::Baseline), seed).unwrap();
    let (disc, _) = pipeline::train_discriminator(&d, &disc_arch(), &disc_train(), seed).unwrap();
    let scores = pipeline::source_scores(&d, &disc).unwrap();
    let fork = |cfg: &TrainConfig| pipeline::adapt(&base, &d, Some(&scores), cfg, seed).unwrap();
    let baseline = pipeline::evaluate(&fork(&train_config(Mode::Baseline)).model, &d).unwrap();
    let sm_out = fork(&train_config(Mode::Sm));
    let sm = pipeline::evaluate(&sm_out.model, &d).unwrap();
    let ps_sm_out = fork(&train_config(Mode::PsSm));
    let ps_sm = pipeline::evaluate(&ps_sm_out.model, &d).unwrap();
    let runtime = t.elapsed();

    let mut eps = eps_values(&sm_out);
    eps.extend(eps_values(&ps_sm_out));
    let eps_ok = !eps.is_empty() && eps.iter().all(|&e| e.is_finite() && e > 0.0);
    let tuned = eps_values(&sm_out).iter().sum::<f64>() / eps_values(&sm_out).len() as f64;
    let fixed_cfg = TrainConfig {
        eps_policy: EpsPolicy::Fixed(tuned),
        ..train_config(Mode::Sm)
    };
    let fixed = pipeline::evaluate(&fork(&fixed_cfg).model, &d).unwrap();
    SeedRun {
        baseline,
        sm,
        ps_sm,
        fixed,
        eps_ok,
        runtime,
    }
}

fn tpr(r: &EvalReport) -> f64 {
    r.tpr_at(0.01).unwrap()
}

fn inter(r: &EvalReport) -> f64 {
    r.embed.inter.unwrap().mean
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn directional(runs: &[SeedRun]) -> Outcome {
    let t = Instant::now();
    let runtime: Duration = runs.iter().map(|r| r.runtime).sum();
    let wins = runs.iter().filter(|r| tpr(&r.sm) > tpr(&r.baseline)).count();
    let pair = |f: fn(&SeedRun) -> &EvalReport| mean(runs.iter().map(|r| (tpr(f(r)) + f(r).tpir_at(0.1).unwrap()) / 2.0));
    let (sm_pair, ps_sm_pair) = (pair(|r| &r.sm), pair(|r| &r.ps_sm));
    let inter_base = mean(runs.iter().map(|r| inter(&r.baseline)));
    let inter_sm = mean(runs.iter().map(|r| inter(&r.sm)));
    let a = wins == runs.len();
    let b = ps_sm_pair >= sm_pair;
    let c = inter_sm < inter_base;
    let fast = runtime < Duration::from_secs(1200);
    let per_seed = runs
        .iter()
        .map(|r| format!("{:.4}->{:.4}", tpr(&r.baseline), tpr(&r.sm)))
        .collect::<Vec<_>>()
        .join(" ");
    report(
        "5 directional adaptation",
        t,
        a && b && c && fast,
        format!(
            "(a) SM beats baseline TPR@FPR=0.01 in {wins}/3 seeds [{per_seed}]; (b) mean of TPR@FPR=0.01 and TPIR@FPIR=0.1: SM+PS {ps_sm_pair:.4} vs SM {sm_pair:.4}; (c) inter-class cosine baseline {inter_base:.4} SM {inter_sm:.4}; runtime {:.0} s",
            runtime.as_secs_f64()
        ),
    )
}

fn eps_dynamics(runs: &[SeedRun]) -> Outcome {
    let t = Instant::now();
    let mut s = EpsState::with_value(1.0, 0.9).unwrap();
    let mut worst = 0.0f64;
    for k in 1..=50 {
        let e = s.update(5.0).unwrap();
        worst = worst.max((e - (5.0 - 4.0 * 0.9f64.powi(k))).abs());
    }
    let closed = worst <= 1e-12;
    let finite = runs.iter().all(|r| r.eps_ok);
    let dynamic: Vec<f64> = runs.iter().map(|r| tpr(&r.sm)).collect();
    let fixed: Vec<f64> = runs.iter().map(|r| tpr(&r.fixed)).collect();
    let gap = mean(dynamic.iter().copied()) - mean(fixed.iter().copied());
    // seed-to-seed spread of the dynamic runs
    let m = mean(dynamic.iter().copied());
    let noise = (dynamic.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (dynamic.len() - 1) as f64).sqrt();
    let parity = gap.abs() <= noise;
    let per_seed = dynamic
        .iter()
        .zip(&fixed)
        .map(|(d, f)| format!("{d:.4}/{f:.4}"))
        .collect::<Vec<_>>()
        .join(" ");
    report(
        "6 eps dynamics",
        t,
        closed && finite && parity,
        format!(
            "closed form max error {worst:.1e}; dynamic eps finite and positive: {finite}; TPR@FPR=0.01 dynamic/fixed per seed [{per_seed}], mean gap {gap:+.4} vs seed spread {noise:.4}"
        ),
    )
}

// ---------------------------------------------------------------- determinism

const ABLATION_CONFIG: &str = "\
source_identities = 12
target_identities = 10
images_per_source = 12
images_per_target = 15
adapt_per_target = 6
templates_per_target = 3
known_subjects = 6
folds = 5
baseline_epochs = 3
adapt_epochs = 1
batch_size = 16
disc_channels = 4,8
disc_epochs = 2
lf_sweep = true
";

fn ablation_run(dir: &Path, out: &str) {
    let status = Command::new(env!("CARGO_BIN_EXE_style-adapt"))
        .current_dir(dir)
        .args(["ablation", "--config", "ablation.cfg", "--seed", "3", "--out", out])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
}

fn determinism() -> Outcome {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("ablation.cfg"), ABLATION_CONFIG).unwrap();
    let gen = Command::new(env!("CARGO_BIN_EXE_style-adapt"))
        .current_dir(p)
        .args(["datagen", "--config", "ablation.cfg", "--seed", "3", "--out", "data"])
        .output()
        .unwrap();
    assert!(gen.status.success());
    ablation_run(p, "first");
    ablation_run(p, "second");
    let same: Vec<bool> = ["ablation.csv", "ablation.json"]
        .iter()
        .map(|f| fs::read(p.join("first").join(f)).unwrap() == fs::read(p.join("second").join(f)).unwrap())
        .collect();
    report(
        "7 determinism",
        t,
        same.iter().all(|&s| s),
        format!("ablation.csv identical: {}, ablation.json identical: {}", same[0], same[1]),
    )
}

#[test]
fn acceptance() {
    let mut outcomes = vec![sinkhorn_correctness(), gradient_suite(), evaluation_oracles(), discriminator_behavior()];
    let runs: Vec<SeedRun> = SEEDS.iter().map(|&s| run_seed(s)).collect();
    outcomes.push(directional(&runs));
    outcomes.push(eps_dynamics(&runs));
    outcomes.push(determinism());
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    println!("acceptance: {}/{} criteria passed", outcomes.len() - failed.len(), outcomes.len());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
