use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn spem(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spem"))
        .args(args)
        .arg("--output-dir")
        .arg(dir)
        .env_remove("SPEM_OUTPUT_DIR")
        .output()
        .expect("spawn spem")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = spem(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// gen + train + bank at a tiny size.
fn prepared() -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen", "--seed", "3", "--n-train", "400", "--n-test", "120"]);
    ok(d.path(), &["train", "--seed", "3", "--epochs", "2"]);
    ok(d.path(), &["bank", "--seed", "3"]);
    d
}

fn entries(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn missing_input_fails_without_writing() {
    let d = tempfile::tempdir().unwrap();
    for args in [
        &["train", "--seed", "1"][..],
        &["bank", "--seed", "1"][..],
        &["score", "--seed", "1"][..],
        &["sweep", "--seed", "1"][..],
    ] {
        let out = spem(d.path(), args);
        assert!(!out.status.success(), "{args:?} should fail");
        assert!(String::from_utf8_lossy(&out.stderr).contains("not found"));
        assert!(entries(d.path()).is_empty(), "{args:?} left {:?}", entries(d.path()));
    }
}

#[test]
fn seed_is_required_and_keys_are_checked() {
    let d = tempfile::tempdir().unwrap();
    let out = spem(d.path(), &["gen"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
    let out = spem(d.path(), &["gen", "--seed", "1", "--set", "data.colour=red"]);
    assert!(!out.status.success());
    assert!(entries(d.path()).is_empty());
}

#[test]
fn flags_override_config_file() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.cfg");
    fs::write(&cfg, "# tiny\nrun.seed=4\ndata.n_train=50\ndata.n_test=30\n").unwrap();
    let out_dir = d.path().join("out");
    let run = |extra: &[&str]| {
        let mut args = vec!["gen", "--config", cfg.to_str().unwrap()];
        args.extend_from_slice(extra);
        ok(&out_dir, &args);
        fs::read_to_string(out_dir.join("test.csv")).unwrap().lines().count()
    };
    // header plus 30 id and 30 ood rows
    assert_eq!(run(&[]), 61);
    assert_eq!(run(&["--n-test", "10"]), 21);
    assert_eq!(run(&["--set", "data.n_test=5"]), 11);
}

#[test]
fn score_formats_and_sigma_zero_matches_likelihood() {
    let d = prepared();
    let p = d.path();
    let before = fs::read(p.join("test.csv")).unwrap();
    ok(p, &["score", "--seed", "3", "--detectors", "likelihood,spem"]);
    ok(p, &["sweep", "--seed", "3", "--kind", "sigma", "--grid", "0,0.05"]);
    assert_eq!(fs::read(p.join("test.csv")).unwrap(), before, "inputs untouched");

    let scores = fs::read_to_string(p.join("scores.csv")).unwrap();
    let mut lines = scores.lines();
    assert_eq!(lines.next().unwrap(), "sample_id,detector,score,lambda,sigma");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2 * 240);
    assert!(rows[..240].iter().all(|r| r[1] == "likelihood" && r[3].is_empty()));
    assert!(rows[240..]
        .iter()
        .all(|r| r[1] == "spem" && !r[3].is_empty() && !r[4].is_empty()));
    assert_eq!(rows[240][0], "0");

    let summary = fs::read_to_string(p.join("auroc.csv")).unwrap();
    let lik = summary
        .lines()
        .find_map(|l| l.strip_prefix("likelihood,"))
        .expect("likelihood row")
        .to_string();
    let sweep = fs::read_to_string(p.join("sweep.csv")).unwrap();
    let mut sl = sweep.lines();
    assert_eq!(sl.next().unwrap(), "grid,auroc,detector,seed");
    let first: Vec<&str> = sl.next().unwrap().split(',').collect();
    assert_eq!(first[0], "0");
    assert_eq!(first[1], lik, "sigma = 0 row equals the likelihood AUROC");
}

#[test]
fn alpha_sweep_matches_score_at_same_alpha() {
    let d = prepared();
    let p = d.path();
    // the sweep drives both scales with alpha
    ok(
        p,
        &[
            "score",
            "--seed",
            "3",
            "--detectors",
            "spem",
            "--alpha",
            "0.3",
            "--set",
            "spem.alpha_noise=0.3",
        ],
    );
    ok(p, &["sweep", "--seed", "3", "--kind", "alpha", "--grid", "0.3"]);
    let second_field = |file: &str| {
        let text = fs::read_to_string(p.join(file)).unwrap();
        text.lines().nth(1).unwrap().split(',').nth(1).unwrap().to_string()
    };
    assert_eq!(second_field("sweep.csv"), second_field("auroc.csv"));
}

#[test]
fn verify_theorems_small_run_passes() {
    let d = tempfile::tempdir().unwrap();
    ok(
        d.path(),
        &[
            "verify-theorems",
            "--seed",
            "0",
            "--instances",
            "10",
            "--mc-samples",
            "2000",
        ],
    );
    let text = fs::read_to_string(d.path().join("theorems.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "name,method,lhs,rhs,upper,slack,tolerance,holds,diagnostic,instance"
    );
    assert!(lines.count() > 60);
}

#[test]
fn output_dir_from_environment() {
    let d = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_spem"))
        .args(["gen", "--seed", "2", "--n-train", "20", "--n-test", "5"])
        .env("SPEM_OUTPUT_DIR", d.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(entries(d.path()), vec!["test.csv", "train.csv"]);
}

#[test]
fn help_for_every_subcommand() {
    for sub in ["gen", "train", "bank", "score", "sweep", "verify-theorems", "benchmark"] {
        let out = Command::new(env!("CARGO_BIN_EXE_spem"))
            .args([sub, "--help"])
            .output()
            .unwrap();
        assert!(out.status.success(), "{sub}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("--seed"));
    }
}
