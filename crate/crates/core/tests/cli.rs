use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fbcsf::io::{read_json, RunManifest, MANIFEST};

const SMALL_DISK: &str = "domain.kind = disk
domain.params = 1.0
initial.r0 = 0.3
initial.perturbation = 0, 0.01, 0.01, 0.01
solver.n = 64
linear.n = 64
linear.steps = 400
";

fn fbcsf(args: &[&str], cfg: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fbcsf"))
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .output()
        .expect("fbcsf runs")
}

fn setup(text: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, text).unwrap();
    (dir, cfg)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_key_exits_1_naming_key_and_line() {
    let (dir, cfg) = setup("domain.kind = disk\nsolver.bogus = 3\n");
    let o = fbcsf(&["simulate"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("solver.bogus") && stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn missing_domain_exits_1() {
    let (dir, cfg) = setup("initial.r0 = 1\n");
    let o = fbcsf(&["pipeline"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("domain"));
}

#[test]
fn coarse_grid_is_a_solver_error() {
    let (dir, cfg) = setup("domain.kind = halfplane\nsolver.n = 8\n");
    let o = fbcsf(&["pipeline"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("simulate"), "{}", stderr(&o));
}

#[test]
fn stage_without_inputs_reports_its_code() {
    let (dir, cfg) = setup(SMALL_DISK);
    let out = dir.path().join("out");
    assert_eq!(fbcsf(&["modulate"], &cfg, &out).status.code(), Some(3));
    assert_eq!(fbcsf(&["analyze"], &cfg, &out).status.code(), Some(4));
    assert_eq!(fbcsf(&["normalize"], &cfg, &out).status.code(), Some(2));
}

#[test]
fn unknown_stage_is_a_usage_error() {
    let (dir, cfg) = setup(SMALL_DISK);
    let o = fbcsf(&["pipeline", "--stage", "nothing"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn exact_halfplane_pipeline_passes() {
    let (dir, cfg) = setup(
        "domain.kind = halfplane\ninitial.r0 = 1\nsolver.n = 64\nlinear.n = 64\nlinear.steps = 400\nanalysis.gate_exponents = false\n",
    );
    let out = dir.path().join("out");
    let o = fbcsf(&["pipeline"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["analysis.csv", "rates.txt", "residuals.csv", "spectrum.csv", "report.txt", MANIFEST] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let m: RunManifest = read_json(&out.join(MANIFEST)).unwrap();
    assert!(m.acceptance.values().all(|v| *v));
    assert!(m.acceptance.contains_key("identity.area_law"));
    // every listed file exists with the recorded length
    for f in &m.files {
        assert_eq!(fs::metadata(out.join(&f.path)).unwrap().len(), f.bytes, "{}", f.path);
    }
}

#[test]
fn stages_run_separately_match_the_pipeline() {
    let (dir, cfg) = setup(SMALL_DISK);
    let whole = dir.path().join("whole");
    let split = dir.path().join("split");
    fbcsf(&["pipeline"], &cfg, &whole);
    for stage in ["simulate", "estimate-extinction", "normalize", "modulate", "analyze", "linear-spectrum", "report"] {
        let o = fbcsf(&[stage], &cfg, &split);
        assert!(matches!(o.status.code(), Some(0 | 4)), "{stage}: {}", stderr(&o));
    }
    for f in ["trajectory.csv", "modulation.csv", "analysis.csv", "residuals.csv", "spectrum.csv", "rates.txt", "report.txt"] {
        assert_eq!(fs::read(whole.join(f)).unwrap(), fs::read(split.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn stage_flag_stops_early() {
    let (dir, cfg) = setup(SMALL_DISK);
    let out = dir.path().join("out");
    let o = fbcsf(&["pipeline", "--stage", "modulate"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(out.join("modulation.csv").is_file());
    assert!(!out.join("analysis.csv").exists());
    let m: RunManifest = read_json(&out.join(MANIFEST)).unwrap();
    assert!(m.files.iter().any(|f| f.path == "modulation.csv"));
}

#[test]
fn set_overrides_and_hash() {
    let (dir, cfg) = setup(SMALL_DISK);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    fbcsf(&["simulate"], &cfg, &a);
    let o = Command::new(env!("CARGO_BIN_EXE_fbcsf"))
        .args(["simulate", "--set", "solver.n=32", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&b)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ma: RunManifest = read_json(&a.join(MANIFEST)).unwrap();
    let mb: RunManifest = read_json(&b.join(MANIFEST)).unwrap();
    assert_ne!(ma.config_hash, mb.config_hash);
    let ck = fs::read_to_string(b.join("checkpoints/ckpt_00000.txt")).unwrap();
    assert!(ck.lines().any(|l| l == "N 32"));
    assert_eq!(ck.lines().skip(4).count(), 33);
}

#[test]
fn sweep_isolates_runs() {
    let (dir, cfg) = setup(SMALL_DISK);
    let out = dir.path().join("sweep");
    let o = Command::new(env!("CARGO_BIN_EXE_fbcsf"))
        .env("FBCSF_THREADS", "2")
        .args(["sweep", "--param", "solver.n", "--value", "48", "--value", "8", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    // the N = 8 run fails in the solver; the status is the worst of the runs
    let code = o.status.code().unwrap();
    assert!(code == 2 || code == 4, "{code}: {}", stderr(&o));
    assert!(out.join("solver.n=48/analysis.csv").is_file());
    assert!(!out.join("solver.n=8/analysis.csv").exists());
    let summary = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(summary.starts_with("value,exit_code,message\n"));
    assert!(summary.contains("\n8,2,"), "{summary}");
}
