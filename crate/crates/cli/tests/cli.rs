use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn ase_lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ase-lab"))
        .args(args)
        .env_remove("ASE_LAB_SEED")
        .output()
        .expect("binary runs")
}

fn json_out(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn m2_query<'a>(kind: &'a str, action: &'a str, extra: &[&'a str]) -> Vec<String> {
    let mut v: Vec<String> = [
        "--model",
        &fixture("m2.json"),
        "--kind",
        kind,
        "--agent",
        "a",
        "--time",
        "0",
        "--action",
        action,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    v.extend(
        ["--outcome", "final_state==one"]
            .iter()
            .map(|s| s.to_string()),
    );
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

fn run(cmd: &str, args: Vec<String>) -> Output {
    let mut all = vec![cmd.to_string()];
    all.extend(args);
    ase_lab(&all.iter().map(String::as_str).collect::<Vec<_>>())
}

fn checksums(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().into(),
                Sha256::digest(std::fs::read(&p).unwrap()).to_vec(),
            )
        })
        .collect()
}

#[test]
fn factual_action_effect_is_zero() {
    let traj = fixture("m2_factual.json");
    let out = run(
        "effect",
        m2_query(
            "cf-ase",
            "0",
            &[
                "--trajectory",
                &traj,
                "--effect-agents",
                "b",
                "--samples",
                "500",
            ],
        ),
    );
    let v = json_out(&out);
    assert_eq!(v["value"], 0.0);
    for key in ["se", "H", "seed"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn m2_cf_ase_estimate_is_near_exact_value() {
    let traj = fixture("m2_factual.json");
    let out = run(
        "effect",
        m2_query(
            "cf-ase",
            "1",
            &[
                "--trajectory",
                &traj,
                "--effect-agents",
                "b",
                "--samples",
                "100000",
                "--seed",
                "9",
            ],
        ),
    );
    let v = json_out(&out);
    assert!((v["value"].as_f64().unwrap() - 0.8).abs() <= 0.02, "{v}");
    assert_eq!(v["H"], 100_000);
}

#[test]
fn cf_ase_without_effect_agents_is_a_validation_error() {
    let traj = fixture("m2_factual.json");
    let out = run("effect", m2_query("cf-ase", "1", &["--trajectory", &traj]));
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "validation");
}

#[test]
fn impossible_evidence_exits_with_three() {
    let traj = fixture("m2_impossible.json");
    let out = run(
        "effect",
        m2_query(
            "cf-ase",
            "1",
            &["--trajectory", &traj, "--effect-agents", "b"],
        ),
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn oracle_gives_m2_value_with_full_precision() {
    let traj = fixture("m2_factual.json");
    let v = json_out(&run(
        "oracle",
        m2_query(
            "cf-ase",
            "1",
            &["--trajectory", &traj, "--effect-agents", "b"],
        ),
    ));
    let text: f64 = v["value_text"].as_str().unwrap().parse().unwrap();
    assert!((text - 0.8).abs() <= 1e-12);
    assert!(v["value_text"].as_str().unwrap().len() >= 14);
}

#[test]
fn oracle_checks_the_pse_identity() {
    let v = json_out(&run(
        "oracle",
        m2_query(
            "ase",
            "1",
            &[
                "--reference",
                "0",
                "--effect-agents",
                "b",
                "--check-prop-fpse-pse",
            ],
        ),
    ));
    assert!(
        v["identity"]["abs_difference"].as_f64().unwrap() <= 1e-12,
        "{v}"
    );
}

#[test]
fn oversized_oracle_query_exits_with_four() {
    let out = ase_lab(&[
        "oracle",
        "--env",
        "graph",
        "--kind",
        "ase",
        "--agent",
        "0",
        "--time",
        "0",
        "--action",
        "1",
        "--reference",
        "0",
        "--effect-agents",
        "1",
        "--outcome",
        "state[2]==0",
        "--budget",
        "20000",
    ]);
    assert_eq!(out.status.code(), Some(4));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["required"].is_string());
}

#[test]
fn seed_falls_back_to_environment() {
    let traj = fixture("m2_factual.json");
    let args = m2_query("tcfe", "1", &["--trajectory", &traj, "--samples", "300"]);
    let mut with_flag = args.clone();
    with_flag.extend(["--seed".to_string(), "77".to_string()]);
    let a = json_out(&run("effect", with_flag));
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ase-lab"));
    cmd.arg("effect").args(&args).env("ASE_LAB_SEED", "77");
    let b = json_out(&cmd.output().unwrap());
    assert_eq!(a, b);
    assert_eq!(b["seed"], 77);
}

#[test]
fn trust_sweep_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"experiment": "trust_sweep", "trajectories": 3, "mu_grid": [0.4, 1.0], "samples": 40}"#,
    )
    .unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let v = json_out(&ase_lab(&[
            "experiment",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "5",
            "--threads",
            "2",
        ]));
        assert!(v["summary"].as_str().unwrap().ends_with("summary.json"));
    }
    let sums = checksums(&a);
    let names: Vec<_> = sums
        .iter()
        .map(|(n, _)| n.to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, ["summary.json", "trust_sweep.csv"]);
    assert_eq!(sums, checksums(&b));
    let csv = std::fs::read_to_string(a.join("trust_sweep.csv")).unwrap();
    assert!(csv.starts_with("experiment,setting,method,direction,trajectory_id,agent,time,action,effect,se,samples,seed\n"));
}

#[test]
fn bad_experiment_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"experiment": "trust_sweep", "threshold": 1.5}"#,
    )
    .unwrap();
    let out = ase_lab(&[
        "experiment",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn paper_scale_profile_is_accepted_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"experiment": "trust_sweep", "trajectories": 2, "mu_grid": [1.0], "samples": 20}"#,
    )
    .unwrap();
    let out = ase_lab(&[
        "experiment",
        config.to_str().unwrap(),
        "--paper-scale",
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    json_out(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("o/summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["config"]["target_samples"], 10_000);
}

#[test]
fn env_writes_model_and_failures_usable_by_effect() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("graph");
    let v = json_out(&ase_lab(&[
        "env",
        "graph",
        "--failures",
        "2",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(v["failures"].as_array().unwrap().len(), 2);
    let model = out.join("model.json");
    let traj = out.join("failures/0000.json");
    let e = json_out(&ase_lab(&[
        "effect",
        "--model",
        model.to_str().unwrap(),
        "--trajectory",
        traj.to_str().unwrap(),
        "--kind",
        "tcfe",
        "--agent",
        "0",
        "--time",
        "0",
        "--action",
        "2",
        "--outcome",
        "final_state==goal",
        "--samples",
        "50",
    ]));
    assert!((0.0..=1.0).contains(&e["value"].as_f64().unwrap()));
}

#[test]
fn sepsis_asset_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("asset.json");
    json_out(&ase_lab(&[
        "sepsis-asset",
        "--write",
        path.to_str().unwrap(),
    ]));
    let v = json_out(&ase_lab(&[
        "sepsis-asset",
        "--verify",
        path.to_str().unwrap(),
    ]));
    assert!(v["rows"].as_u64().unwrap() > 0);
    std::fs::write(
        &path,
        std::fs::read_to_string(&path)
            .unwrap()
            .replacen("0.", "0.0", 1),
    )
    .unwrap();
    assert_eq!(
        ase_lab(&["sepsis-asset", "--verify", path.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
}
