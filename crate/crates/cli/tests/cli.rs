use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = "\
source_identities = 5
target_identities = 6
images_per_source = 6
images_per_target = 10
adapt_per_target = 4
templates_per_target = 2
known_subjects = 4
folds = 3
baseline_epochs = 1
adapt_epochs = 1
batch_size = 8
disc_channels = 4,8
disc_epochs = 1
disc_batch_size = 8
";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_style-adapt"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn workdir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    ok(dir.path(), &["datagen", "--config", "tiny.cfg", "--out", "data"]);
    dir
}

#[test]
fn datagen_writes_every_file_deterministically() {
    let dir = workdir();
    let p = dir.path();
    for f in ["manifest.json", "source_images.bin", "source_labels.csv", "templates.csv", "pairs.csv", "folds.csv", "gallery.csv", "config.resolved"] {
        assert!(p.join("data").join(f).exists(), "{f}");
    }
    let again = ok(p, &["datagen", "--config", "tiny.cfg", "--out", "data2"]);
    let first = fs::read(p.join("data/manifest.json")).unwrap();
    assert_eq!(first, fs::read(p.join("data2/manifest.json")).unwrap());
    assert!(again.contains("manifest sha256"));
    let other = ok(p, &["datagen", "--config", "tiny.cfg", "--seed", "9", "--out", "data3"]);
    assert_ne!(
        fs::read(p.join("data/source_images.bin")).unwrap(),
        fs::read(p.join("data3/source_images.bin")).unwrap()
    );
    assert!(other.contains("30 source images"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("bad.cfg"), "no_such_key = 1\n").unwrap();
    assert_eq!(code(&run(p, &["datagen", "--config", "bad.cfg"])), 2);
    assert_eq!(code(&run(p, &["datagen", "--mode", "fancy"])), 2);
    fs::write(p.join("gap.cfg"), "gap = 3\n").unwrap();
    assert_eq!(code(&run(p, &["datagen", "--config", "gap.cfg"])), 2);
}

#[test]
fn missing_inputs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&run(p, &["train", "--mode", "baseline"])), 3);
    assert_eq!(code(&run(p, &["eval"])), 3);
    assert_eq!(code(&run(p, &["datagen", "--config", "absent.cfg"])), 3);
}

#[test]
fn scoring_modes_require_a_discriminator() {
    let dir = workdir();
    for mode in ["ps", "ps+sm"] {
        let out = run(dir.path(), &["train", "--config", "tiny.cfg", "--mode", mode]);
        assert_eq!(code(&out), 2, "{mode}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("discriminator"));
    }
}

#[test]
fn discriminator_train_and_eval_pipeline() {
    let dir = workdir();
    let p = dir.path();
    ok(p, &["train-discriminator", "--config", "tiny.cfg", "--out", "disc"]);
    for f in ["discriminator.w", "disc_curve.csv", "source_scores.csv", "disc_summary.json"] {
        assert!(p.join("disc").join(f).exists(), "{f}");
    }
    let scores = fs::read_to_string(p.join("disc/source_scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 31);

    fs::write(p.join("run.cfg"), format!("{TINY}discriminator = disc/discriminator.w\n")).unwrap();
    ok(p, &["train", "--config", "run.cfg", "--mode", "ps+sm", "--lf", "2", "--out", "run"]);
    let curves = fs::read_to_string(p.join("run/curves.csv")).unwrap();
    assert!(curves.contains("L_s"));
    assert!(curves.contains("eps_mu_l1"));
    let resolved = fs::read_to_string(p.join("run/config.resolved")).unwrap();
    assert!(resolved.contains("mode = ps+sm"));
    assert!(resolved.contains("lf = 2"));

    ok(p, &["eval", "--config", "run.cfg", "--out", "run"]);
    let report: Value = serde_json::from_str(&fs::read_to_string(p.join("run/report.json")).unwrap()).unwrap();
    let summary = report["summary"].as_object().unwrap();
    for k in ["TPR@FPR=0.01", "TPIR@FPIR=0.1", "rank1", "kfold_accuracy", "inter_cos"] {
        assert!(summary.contains_key(k), "{k}");
    }
    let csv = fs::read_to_string(p.join("run/report.csv")).unwrap();
    assert!(csv.starts_with("protocol,level,threshold,value,unreachable\n"));

    ok(p, &["train", "--config", "run.cfg", "--mode", "sm", "--out", "warm"]);
    fs::write(p.join("warm.cfg"), format!("{TINY}base_weights = warm/baseline.w\n")).unwrap();
    ok(p, &["train", "--config", "warm.cfg", "--mode", "sm", "--out", "warm2"]);
    assert_eq!(
        fs::read(p.join("warm/model.w")).unwrap(),
        fs::read(p.join("warm2/model.w")).unwrap()
    );
}

#[test]
fn ablation_is_byte_reproducible() {
    let dir = workdir();
    let p = dir.path();
    ok(p, &["ablation", "--config", "tiny.cfg", "--out", "a"]);
    ok(p, &["ablation", "--config", "tiny.cfg", "--out", "b"]);
    for f in ["ablation.csv", "ablation.json"] {
        assert_eq!(fs::read(p.join("a").join(f)).unwrap(), fs::read(p.join("b").join(f)).unwrap(), "{f}");
    }
    let csv = fs::read_to_string(p.join("a/ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rows, ["baseline", "ps", "sm", "ps+sm", "mmd"]);
    let hashes: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(3).unwrap()).collect();
    assert!(hashes.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn ablation_parallel_matches_sequential() {
    let dir = workdir();
    let p = dir.path();
    fs::write(p.join("par.cfg"), format!("{TINY}ablation_parallel = true\nlf_sweep = true\n")).unwrap();
    fs::write(p.join("seq.cfg"), format!("{TINY}lf_sweep = true\n")).unwrap();
    ok(p, &["ablation", "--config", "par.cfg", "--out", "par"]);
    ok(p, &["ablation", "--config", "seq.cfg", "--out", "seq"]);
    let a = fs::read_to_string(p.join("par/ablation.csv")).unwrap();
    assert_eq!(a, fs::read_to_string(p.join("seq/ablation.csv")).unwrap());
    assert!(a.contains("sm_lf1") && a.contains("sm_lf4"));
}

#[test]
fn sinkhorn_check_reports_each_property() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["sinkhorn-check", "--config", "/dev/null"]);
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4, "{text}");
    assert!(lines.iter().all(|l| l.starts_with("PASS ") || l.starts_with("FAIL ")));
    let failed = lines.iter().any(|l| l.starts_with("FAIL "));
    assert_eq!(code(&out), if failed { 4 } else { 0 });
}
