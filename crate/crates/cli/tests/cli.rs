use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use evorobogami_core::evolution::bin_of;
use evorobogami_core::genome::{parse_design_file, write_design_file, DesignRecord, Genome};
use evorobogami_core::runner::Manifest;
use evorobogami_core::simulator::Frame;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_evorobogami"))
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn run_args(out: &Path, extra: &[&str]) -> Output {
    let mut cmd = bin();
    cmd.args([
        "run",
        "--env",
        "ground",
        "--condition",
        "h0",
        "--iterations",
        "20",
    ])
    .arg("--out")
    .arg(out)
    .args(extra);
    cmd.output().unwrap()
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(run_args(&a, &["--repeats", "2", "--rng-seed", "7"]));
    ok(run_args(
        &b,
        &["--repeats", "2", "--rng-seed", "7", "--jobs", "2"],
    ));
    for k in 0..2 {
        for f in ["log.csv", "archive.csv", "manifest"] {
            let pa = a.join(format!("ground/h0/run{k}/{f}"));
            let pb = b.join(format!("ground/h0/run{k}/{f}"));
            assert_eq!(
                fs::read(pa).unwrap(),
                fs::read(pb).unwrap(),
                "{f} of run{k} differs"
            );
        }
    }
}

#[test]
fn repeats_use_additive_seeds_and_hashed_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let listed = ok(run_args(&out, &["--repeats", "3", "--rng-seed", "40"]));
    assert_eq!(listed.lines().count(), 3);
    for k in 0..3u64 {
        let run = out.join(format!("ground/h0/run{k}"));
        let m: Manifest = serde_json::from_slice(&fs::read(run.join("manifest")).unwrap()).unwrap();
        assert_eq!(m.rng_seed, 40 + k);
        let log = fs::read(run.join("log.csv")).unwrap();
        assert_eq!(
            m.files["log.csv"],
            evorobogami_core::runner::sha256_hex(&log)
        );
        let rows = String::from_utf8(log).unwrap().lines().count();
        assert_eq!(rows, 1 + 21);
    }
}

#[test]
fn thread_cap_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(run_args(&a, &["--repeats", "2", "--jobs", "2"]));
    let out = {
        let mut cmd = bin();
        cmd.env("EVOROBOGAMI_THREADS", "1")
            .args([
                "run",
                "--env",
                "ground",
                "--condition",
                "h0",
                "--iterations",
                "20",
                "--repeats",
                "2",
                "--jobs",
                "2",
            ])
            .arg("--out")
            .arg(&b);
        cmd.output().unwrap()
    };
    ok(out);
    for k in 0..2 {
        let f = format!("ground/h0/run{k}/archive.csv");
        assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap());
    }
}

fn pool(users: usize, each: usize) -> Vec<DesignRecord> {
    let mut out = Vec::new();
    for u in 0..users {
        for i in 0..each {
            let mut g = Genome::neutral();
            g.body_scale[0] = 0.5 + 0.01 * (u * each + i) as f64;
            out.push(DesignRecord {
                genome: g,
                user_id: Some(format!("user{u:02}")),
                environment: Some("ground".into()),
                iteration: Some(i as u32 + 1),
                recorded_fitness: Some((u * each + i) as f64),
            });
        }
    }
    out
}

#[test]
fn infeasible_seed_selection_names_the_shortfall() {
    let dir = tempfile::tempdir().unwrap();
    let seeds = dir.path().join("pool.json");
    fs::write(&seeds, write_design_file(&pool(10, 2)).unwrap()).unwrap();
    let out = bin()
        .args([
            "run",
            "--env",
            "ground",
            "--condition",
            "h25",
            "--iterations",
            "2",
            "--repeats",
            "1",
        ])
        .arg("--seeds-file")
        .arg(&seeds)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("need 25 seeds, have 20"), "{err}");
    assert!(!dir.path().join("o").exists());
}

#[test]
fn seeded_conditions_run_from_a_seeds_file() {
    let dir = tempfile::tempdir().unwrap();
    let seeds = dir.path().join("pool.json");
    fs::write(&seeds, write_design_file(&pool(10, 3)).unwrap()).unwrap();
    let out = dir.path().join("o");
    ok(bin()
        .args([
            "run",
            "--env",
            "ground",
            "--condition",
            "h0,h5,h25",
            "--iterations",
            "3",
            "--repeats",
            "1",
        ])
        .arg("--seeds-file")
        .arg(&seeds)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap());
    let m: Manifest =
        serde_json::from_slice(&fs::read(out.join("ground/h25/run0/manifest")).unwrap()).unwrap();
    assert_eq!(m.settings.seeds.len(), 25);
    assert_eq!(m.settings.seeds[0].recorded_fitness, Some(29.0));
}

#[test]
fn analyze_writes_tables_and_flags_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    ok(run_args(&out, &["--repeats", "2"]));
    let text = ok(bin()
        .args([
            "analyze",
            "--milestones",
            "30,50",
            "--pairwise",
            "qd_score",
            "--runs",
        ])
        .arg(&out)
        .output()
        .unwrap());
    assert!(text.contains("coverage milestones"));
    let analysis = out.join("analysis");
    for f in [
        "summary.csv",
        "milestones.csv",
        "milestones_mean_ground.csv",
        "pairwise_qd_score_ground.csv",
    ] {
        assert!(analysis.join(f).exists(), "{f} missing");
    }
    let summary = fs::read_to_string(analysis.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);

    let log = out.join("ground/h0/run1/log.csv");
    let text = fs::read_to_string(&log)
        .unwrap()
        .replacen("\n0,", "\n0,0", 1);
    fs::write(&log, text).unwrap();
    let res = bin()
        .args(["analyze", "--runs"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("log.csv hash differs"));
}

#[test]
fn simulate_prints_result_and_frames() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.json");
    fs::write(&g, serde_json::to_string(&Genome::neutral()).unwrap()).unwrap();
    let frames = dir.path().join("frames.json");
    let text = ok(bin()
        .args(["simulate", "--env", "ground", "--genome"])
        .arg(&g)
        .arg("--frames-out")
        .arg(&frames)
        .output()
        .unwrap());
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let dx = v["dx"].as_f64().unwrap();
    let dy = v["dy"].as_f64().unwrap();
    assert_eq!(v["fitness"].as_f64().unwrap(), dx - 0.5 * dy.abs());
    assert_eq!(v["fell_off"], serde_json::json!(false));
    let f: Vec<Frame> = serde_json::from_slice(&fs::read(frames).unwrap()).unwrap();
    assert_eq!(f.len(), 601);
    assert_eq!(f[0].t, 0.0);
    assert!((f[600].t - 30.0).abs() < 1e-9);
}

#[test]
fn terrain_and_gait_configs_are_applied() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.json");
    fs::write(&g, serde_json::to_string(&Genome::neutral()).unwrap()).unwrap();
    let sim = |env: &str, extra: &[&str]| -> serde_json::Value {
        let text = ok(bin()
            .args(["simulate", "--env", env, "--genome"])
            .arg(&g)
            .args(extra)
            .output()
            .unwrap());
        serde_json::from_str(&text).unwrap()
    };
    let base = sim("sine", &[]);
    let terrain = dir.path().join("t.json");
    fs::write(&terrain, r#"{"amplitude": 4.0, "wavelength": 12.0}"#).unwrap();
    let changed = sim("sine", &["--terrain-config", terrain.to_str().unwrap()]);
    assert_ne!(base["fitness"], changed["fitness"]);

    let gait = dir.path().join("gait.json");
    let zeros = serde_json::to_string(&evorobogami_core::controller::GaitTable::zeros()).unwrap();
    fs::write(&gait, zeros).unwrap();
    let still = sim("ground", &["--gait-config", gait.to_str().unwrap()]);
    assert_eq!(still["dx"].as_f64().unwrap(), 0.0);
}

#[test]
fn scattered_pool_covers_many_cells() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pool.json");
    ok(bin()
        .args([
            "gen-seeds",
            "--mode",
            "scattered",
            "--n",
            "30",
            "--env",
            "ground",
            "--rng-seed",
            "4",
            "--out",
        ])
        .arg(&path)
        .output()
        .unwrap());
    let pool = parse_design_file(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(pool.len(), 30);
    assert!(pool
        .iter()
        .all(|r| r.genome.is_valid() && r.recorded_fitness.is_some()));
    let cells: HashSet<_> = pool.iter().map(|r| bin_of(&r.genome.features())).collect();
    assert!(cells.len() >= 15, "{} cells", cells.len());
    let users: HashSet<_> = pool.iter().map(|r| r.user_id.clone().unwrap()).collect();
    assert_eq!(users.len(), 10);
}

#[test]
fn gen_seeds_prints_to_stdout() {
    let text = ok(bin()
        .args([
            "gen-seeds",
            "--mode",
            "clustered_low",
            "--n",
            "4",
            "--env",
            "valley",
        ])
        .output()
        .unwrap());
    let pool = parse_design_file(&text).unwrap();
    assert_eq!(pool.len(), 4);
    assert!(pool
        .iter()
        .all(|r| r.environment.as_deref() == Some("valley")));
}

#[test]
fn bad_arguments_fail() {
    for args in [
        vec!["run", "--condition", "h7"],
        vec!["run", "--env", "moon"],
        vec!["gen-seeds", "--mode", "clumped"],
        vec!["analyze", "--runs", "/nonexistent/evorobogami"],
    ] {
        let out = bin().args(&args).output().unwrap();
        assert!(!out.status.success(), "{args:?} should fail");
    }
}
