use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use turnpike_cli::preset::RunManifest;

fn turnpike(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_turnpike")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn simulate_estimate_analyze_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let batch = dir.path().join("batch.csv");
    let out = turnpike(&["simulate", "--model", "reactor", "--T", "80", "--seed", "4", "--out", p(&batch)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(batch.with_extension("json").exists());
    for (scheme, extra) in [("ihe", vec![]), ("mhe", vec!["--N", "20"]), ("ae", vec!["--N", "20", "--delta", "5"])] {
        let est = dir.path().join(format!("{scheme}.csv"));
        let mut args = vec!["estimate", "--in", p(&batch), "--scheme", scheme, "--workers", "2", "--out", p(&est)];
        args.extend(extra);
        let out = turnpike(&args);
        assert_eq!(code(&out), 0, "{scheme}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let an = dir.path().join("analysis");
    let out = turnpike(&[
        "analyze",
        "--estimates",
        p(&dir.path().join("mhe.csv")),
        p(&dir.path().join("ae.csv")),
        "--truth",
        p(&batch),
        "--benchmark",
        p(&dir.path().join("ihe.csv")),
        "--metrics",
        "sse,perf,regret,turnpike",
        "--out",
        p(&an),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["sse.csv", "performance.csv", "regret.csv", "deviation.csv"] {
        assert!(an.join(f).exists(), "{f}");
    }
    let sse = fs::read_to_string(an.join("sse.csv")).unwrap();
    assert_eq!(sse.lines().count(), 3);
}

#[test]
fn kalman_schemes_on_linear_batch() {
    let dir = tempfile::tempdir().unwrap();
    let batch = dir.path().join("b.csv");
    assert_eq!(code(&turnpike(&["simulate", "--model", "lti:4:2:2:9", "--T", "60", "--out", p(&batch)])), 0);
    for scheme in ["kf", "fis", "fie", "dmhe"] {
        let est = dir.path().join(format!("{scheme}.csv"));
        let out = turnpike(&["estimate", "--in", p(&batch), "--scheme", scheme, "--N", "10", "--delta", "2", "--out", p(&est)]);
        assert_eq!(code(&out), 0, "{scheme}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn validation_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let batch = dir.path().join("b.csv");
    assert_eq!(code(&turnpike(&["simulate", "--model", "unknown", "--T", "5", "--out", p(&batch)])), 2);
    assert_eq!(code(&turnpike(&["estimate", "--in", p(&batch), "--scheme", "mhe"])), 2);
    assert_eq!(code(&turnpike(&["estimate", "--in", p(&batch), "--scheme", "nonsense"])), 2);
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[simulate]\nunknown_key = 1\n").unwrap();
    assert_eq!(code(&turnpike(&["simulate", "--model", "scalar", "--T", "5", "--config", p(&cfg), "--out", p(&batch)])), 2);
    assert_eq!(code(&turnpike(&["simulate", "--model", "cstr", "--T", "20", "--out", p(&batch)])), 0);
    // Kalman recursions need a linear model; odd N is rejected for the turnpike prior
    assert_eq!(code(&turnpike(&["estimate", "--in", p(&batch), "--scheme", "kf"])), 2);
    assert_eq!(code(&turnpike(&["estimate", "--in", p(&batch), "--scheme", "mhe-prior", "--N", "9"])), 2);
    assert_eq!(code(&turnpike(&["preset", "run", "no-such-preset", "--out", p(dir.path())])), 2);
}

#[test]
fn solver_failure_exits_with_3() {
    use turnpike_core::io::write_batch;
    use turnpike_core::models::batch_reactor;
    use turnpike_core::simulate::{simulate, InputProfile, NoiseSpec};
    use turnpike_core::Vector;

    let dir = tempfile::tempdir().unwrap();
    let model = batch_reactor();
    let mut batch = simulate(
        &model,
        &Vector::from_vec(vec![3.0, 0.0]),
        &InputProfile::reactor_default(),
        &NoiseSpec::none(2, 1),
        20,
        0,
    )
    .unwrap();
    batch.outputs[5][0] = f64::NAN;
    batch.truth = None;
    let path = dir.path().join("nan.csv");
    write_batch(&path, &batch).unwrap();
    let out = turnpike(&["estimate", "--in", p(&path), "--scheme", "ihe", "--out", p(&dir.path().join("e.csv"))]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn motivating_preset_is_idempotent_and_self_comparable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = turnpike(&["preset", "run", "motivating-scalar", "--out", p(d)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    for n in [10, 20, 30] {
        assert!(a.join(format!("seed-0/profiles/N{n}.csv")).exists());
    }
    assert!(!a.join(".partial").exists());
    let ma = fs::read_to_string(a.join("manifest.json")).unwrap();
    assert_eq!(ma, fs::read_to_string(b.join("manifest.json")).unwrap());
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
    let m: RunManifest = serde_json::from_str(&ma).unwrap();
    assert_eq!(m.summary.len(), 3);
    let table = dir.path().join("cmp.csv");
    let out = turnpike(&["compare", p(&a), p(&b), "--out", p(&table)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&table).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.ends_with(",0")), "{text}");
}

#[test]
fn cstr_preset_with_overrides_is_worker_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "seeds = [0, 1]\n[params]\nt_final = 60\nprofile_range = [30, 50]\n").unwrap();
    let (one, two) = (dir.path().join("w1"), dir.path().join("w2"));
    for (d, w) in [(&one, "1"), (&two, "2")] {
        let out = turnpike(&["preset", "run", "cstr-online", "--config", p(&cfg), "--workers", w, "--out", p(d)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let m1 = RunManifest::load(&one).unwrap();
    assert_eq!(m1, RunManifest::load(&two).unwrap());
    assert_eq!(m1.seeds, vec![0, 1]);
    // three priors by three delays plus the benchmark
    assert_eq!(m1.summary.len(), 10);
    assert!(m1.summary.iter().all(|s| s.runs == 2));
    assert!(one.join("seed-1/priors/turnpike.csv").exists());
    assert!(one.join("seed-0/profiles/turnpike.csv").exists());
    assert!(one.join("seed-0/estimates/turnpike-d5.csv").exists());

    // a different initial state changes the truth, so comparison must fail
    let other_cfg = dir.path().join("o.toml");
    fs::write(&other_cfg, "seeds = [0, 1]\n[params]\nt_final = 60\nx0 = [0.8, 300.0, 0.7]\n").unwrap();
    let other = dir.path().join("other");
    assert_eq!(code(&turnpike(&["preset", "run", "cstr-online", "--config", p(&other_cfg), "--out", p(&other)])), 0);
    assert_eq!(code(&turnpike(&["compare", p(&one), p(&other)])), 2);
}

#[test]
fn offline_presets_at_small_scale() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("batch-reactor", "t_final = 80\nhorizons = [20, 40]\n", vec!["full", "ae-N20", "mhe-N20", "ae-N40", "mhe-N40"]),
        ("lti-offline", "n = 4\nm = 3\np = 2\nt_final = 200\nhorizon = 40\ndelta = 10\n", vec!["full", "ae", "fis", "kf"]),
        ("quadrotor-online", "t_final = 40\nhorizon = 10\ndelays = [0, 3]\n", vec!["filtering-d0", "turnpike-d3", "ihe"]),
    ];
    for (name, params, schemes) in cases {
        let cfg = dir.path().join(format!("{name}.toml"));
        fs::write(&cfg, format!("seeds = [2]\n[params]\n{params}")).unwrap();
        let out_dir = dir.path().join(name);
        let out = turnpike(&["preset", "run", name, "--config", p(&cfg), "--out", p(&out_dir)]);
        assert_eq!(code(&out), 0, "{name}: {}", String::from_utf8_lossy(&out.stderr));
        let m = RunManifest::load(&out_dir).unwrap();
        for s in schemes {
            let row = m.summary.iter().find(|r| r.scheme == s).unwrap_or_else(|| panic!("{name} lacks {s}"));
            assert!(row.sse.unwrap().median.is_finite());
        }
        assert!(out_dir.join("timing.csv").exists());
    }
}

#[test]
fn failed_preset_leaves_partial_marker() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    // the turnpike prior needs an even horizon
    fs::write(&cfg, "seeds = [0]\n[params]\nt_final = 30\nhorizon = 9\n").unwrap();
    let out = turnpike(&["preset", "run", "cstr-online", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(code(&out), 2);
    let marker = fs::read_to_string(dir.path().join(".partial")).unwrap();
    assert!(marker.contains("seed 0"), "{marker}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed 0"));
    assert!(!dir.path().join("manifest.json").exists());
}

#[test]
fn preset_show_applies_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[params]\nn = 30\np = 10\n").unwrap();
    let out = turnpike(&["preset", "show", "lti-offline", "--config", p(&cfg)]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["params"]["n"], 30);
    assert_eq!(v["params"]["horizon"], 150);
    assert_eq!(v["seeds"].as_array().unwrap().len(), 5);
}
