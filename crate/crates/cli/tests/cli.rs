use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn blendopt(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blendopt"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = blendopt(out, args);
    assert!(o.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Instance, dataset and a tiny model trained for a few steps.
fn tiny_pipeline(dir: &Path) -> (PathBuf, PathBuf) {
    ok(dir, &["gen-instance", "--n-ct", "3", "--n-pt", "2", "--n", "8", "--seed", "4"]);
    let inst = dir.join("instance.json");
    ok(dir, &["gen-data", "--instance", p(&inst), "--count", "12", "--seed", "1"]);
    let data = dir.join("dataset.bin");
    ok(
        dir,
        &["train", "--data", p(&data), "--channels", "2", "--epochs", "2", "--batch-size", "12", "--warmup-steps", "1", "--T", "20"],
    );
    (inst, dir.join("model.ckpt"))
}

#[test]
fn gen_instance_reports_decision_dimension_at_largest_scale() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["gen-instance", "--n-ct", "12", "--n-pt", "7", "--n", "300"]);
    assert!(stdout.contains("decision variables: 50400"), "{stdout}");
    assert!(dir.path().join("gen-instance.manifest.json").exists());
}

#[test]
fn zero_scale_optimize_matches_random_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let (inst, model) = tiny_pipeline(dir.path());
    let a = dir.path().join("guided");
    let b = dir.path().join("random");
    let common = ["--instance", p(&inst), "--model", p(&model), "--T", "20", "--pop", "6", "--seed", "9"];
    let mut args = vec!["optimize", "--scale-s", "0"];
    args.extend(common);
    ok(&a, &args);
    let mut args = vec!["baseline", "random"];
    args.extend(common);
    ok(&b, &args);
    for f in ["front.csv", "population.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let names = |d: &Path| {
        let mut v: Vec<_> = fs::read_dir(d.join("schedules")).unwrap().map(|e| e.unwrap().file_name()).collect();
        v.sort();
        v
    };
    assert_eq!(names(&a), names(&b));
    for n in names(&a) {
        assert_eq!(fs::read(a.join("schedules").join(&n)).unwrap(), fs::read(b.join("schedules").join(&n)).unwrap());
    }
}

#[test]
fn manifest_replays_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (inst, model) = tiny_pipeline(dir.path());
    let first = dir.path().join("first");
    ok(&first, &["optimize", "--instance", p(&inst), "--model", p(&model), "--T", "20", "--pop", "5", "--seed", "2", "--trace"]);
    let second = dir.path().join("second");
    let manifest = first.join("optimize.manifest.json");
    ok(&second, &["--config", p(&manifest), "optimize"]);
    for f in ["front.csv", "population.csv", "trace.csv", "snapshots/t0001.svg", "snapshots/t0020.svg"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }
    let m: serde_json::Value = serde_json::from_slice(&fs::read(&manifest).unwrap()).unwrap();
    assert_eq!(m["optimize"]["seed"], 2);
    assert!(m["run"]["wall_time_s"].as_f64().unwrap() >= 0.0);
    assert_eq!(m["run"]["blendopt_version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[gen_instance]\nn_ct = 4\nn_pt = 2\nperiods = 10\n").unwrap();
    let stdout = ok(dir.path(), &["--config", p(&cfg), "gen-instance"]);
    assert!(stdout.contains("decision variables: 160"), "{stdout}");
    let stdout = ok(dir.path(), &["--config", p(&cfg), "gen-instance", "--n", "12"]);
    assert!(stdout.contains("decision variables: 192"), "{stdout}");
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_blendopt"))
        .env("BLENDOPT_OUT_DIR", dir.path().join("env-out"))
        .args(["gen-instance", "--n-ct", "2", "--n-pt", "2", "--n", "4"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("env-out/instance.json").exists());
}

#[test]
fn evaluate_fixture_fronts() {
    let dir = tempfile::tempdir().unwrap();
    let a = fixture("two_point.csv");
    let b = fixture("single_point.csv");
    let stdout = ok(dir.path(), &["evaluate", "--front", p(&a), "--front", p(&b), "--reference", "1,1"]);
    let lines: Vec<&str> = stdout.lines().collect();
    assert!(lines[0].starts_with("HV 0.480000"), "{stdout}");
    // the infeasible row of the second file is ignored
    assert!(lines[1].starts_with("HV 0.250000"), "{stdout}");
    let eval: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("evaluation.json")).unwrap()).unwrap();
    assert!((eval["hypervolume"][0]["hv"].as_f64().unwrap() - 0.48).abs() < 1e-12);
    // (0.5, 0.5) is dominated by neither point; it dominates neither
    assert_eq!(eval["coverage"][0]["c"], 0.0);
    assert_eq!(eval["coverage"][1]["c"], 0.0);
}

#[test]
fn render_zero_schedule_is_a_blank_grid() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["render", "--schedule", p(&fixture("zero_schedule.json"))]);
    let svg = fs::read_to_string(dir.path().join("zero_schedule.svg")).unwrap();
    assert!(svg.starts_with("<svg ") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<rect ").count(), 2 * 3 * 4);
    assert_eq!(svg.matches(r##"fill="#ffffff""##).count(), 2 * 3 * 4);
    assert_eq!(svg.matches('<').count(), svg.matches('>').count());
}

#[test]
fn render_front_scatter() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["render", "--front", p(&fixture("two_point.csv"))]);
    let svg = fs::read_to_string(dir.path().join("front.svg")).unwrap();
    assert_eq!(svg.matches("<circle ").count(), 2);
    assert!(svg.contains("two_point"));
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = blendopt(dir.path(), &["gen-data", "--instance", "does/not/exist.json"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("does/not/exist.json"));

    let unknown = blendopt(dir.path(), &["optimize", "--no-such-flag"]);
    assert!(!unknown.status.success());
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("--no-such-flag"));

    let no_input = blendopt(dir.path(), &["evaluate"]);
    assert!(!no_input.status.success());
}

#[test]
fn model_instance_shape_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (_, model) = tiny_pipeline(dir.path());
    let other = dir.path().join("other");
    ok(&other, &["gen-instance", "--n-ct", "3", "--n-pt", "3", "--n", "8"]);
    let o = blendopt(
        &other,
        &["optimize", "--instance", p(&other.join("instance.json")), "--model", p(&model), "--T", "20", "--pop", "4"],
    );
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("product tanks"), "{}", String::from_utf8_lossy(&o.stderr));
}
