use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pavgrid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pavgrid"))
        .args(args)
        .output()
        .expect("binary runs")
}

const SMALL: [&str; 8] = [
    "--set",
    "episodes=3",
    "--set",
    "max_steps=40",
    "--set",
    "monte_carlo_runs=2",
    "--set",
    "snapshot_episodes=[1,3]",
];

fn run_small(cmd: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--out", out.to_str().unwrap()];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    pavgrid(&args)
}

fn scenario_map_path() -> String {
    concat!(env!("CARGO_MANIFEST_DIR"), "/../core/maps/scenario.map").to_string()
}

#[test]
fn validate_map_accepts_the_bundled_map() {
    let out = pavgrid(&["validate-map", &scenario_map_path()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(
        text.contains("36x24 cells, 4 agents, target (30, 12)"),
        "{text}"
    );
}

#[test]
fn bad_map_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.map");
    fs::write(&path, "###\n#1#\n###\n").unwrap();
    assert_eq!(
        pavgrid(&["validate-map", path.to_str().unwrap()])
            .status
            .code(),
        Some(3)
    );
    let missing = dir.path().join("missing.map");
    assert_eq!(
        pavgrid(&["validate-map", missing.to_str().unwrap()])
            .status
            .code(),
        Some(3)
    );

    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, format!("{{\"map\": {:?}}}", path.to_str().unwrap())).unwrap();
    let out = dir.path().join("out");
    let code = pavgrid(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
    .status
    .code();
    assert_eq!(code, Some(3));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(
        run_small("run", &out, &["--set", "hyper.gamma=1.5"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run_small("run", &out, &["--set", "no_such_key=1"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run_small("run", &out, &["--set", "novalue"]).status.code(),
        Some(2)
    );
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, "{ not json").unwrap();
    let code = pavgrid(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
    .status
    .code();
    assert_eq!(code, Some(2));
    assert!(!out.exists());
}

#[test]
fn unwritable_output_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    assert_eq!(
        run_small("run", &blocker.join("sub"), &[]).status.code(),
        Some(4)
    );
}

#[test]
fn run_writes_the_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let res = run_small(
        "run",
        &out,
        &["--set", "condition=pavlovian_instrumental", "--svg"],
    );
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    for f in [
        "learning_curve.csv",
        "learning_curve.svg",
        "episode_stats_pavlovian_instrumental.csv",
        "fields_pavlovian_instrumental/pav_field_ep1_agent0.csv",
        "fields_pavlovian_instrumental/pav_field_ep3_agent3.csv",
        "fields_pavlovian_instrumental/pav_field_ep3_agent3.svg",
        "trajectory_pavlovian_instrumental_agent2.csv",
        "tables_pavlovian_instrumental/q_mf_agent1.csv",
        "tables_pavlovian_instrumental/q_pav_agent1.csv",
        "run_manifest.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let curve = fs::read_to_string(out.join("learning_curve.csv")).unwrap();
    let lines: Vec<&str> = curve.lines().collect();
    assert_eq!(
        lines[0],
        "episode,pavlovian_instrumental_mean_steps,pavlovian_instrumental_std_steps"
    );
    assert_eq!(lines.len(), 4);
    assert!(!curve.contains('\r'));
    let field =
        fs::read_to_string(out.join("fields_pavlovian_instrumental/pav_field_ep1_agent0.csv"))
            .unwrap();
    assert_eq!(field.lines().count(), 1 + 36 * 24);
    assert!(field.lines().any(|l| l == "0,0,"));
    assert!(!out
        .join("tables_pavlovian_instrumental/q_mb_agent0.csv")
        .exists());
    let table =
        fs::read_to_string(out.join("tables_pavlovian_instrumental/q_mf_agent0.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 36 * 24);
}

#[test]
fn compare_is_deterministic_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    assert_eq!(
        run_small("compare", &a, &["--seed", "11"]).status.code(),
        Some(0)
    );
    assert_eq!(
        run_small("compare", &b, &["--seed", "11"]).status.code(),
        Some(0)
    );
    assert_eq!(
        run_small("compare", &c, &["--seed", "12"]).status.code(),
        Some(0)
    );
    let curve = |d: &Path| fs::read(d.join("learning_curve.csv")).unwrap();
    let field = |d: &Path| fs::read(d.join("fields_full_hybrid/pav_field_ep3_agent0.csv")).unwrap();
    assert_eq!(curve(&a), curve(&b));
    assert_eq!(field(&a), field(&b));
    assert_ne!(field(&a), field(&c));
    let header = String::from_utf8(curve(&a)).unwrap();
    assert_eq!(header.lines().next().unwrap().split(',').count(), 1 + 2 * 4);
    for cond in [
        "instrumental_only",
        "pavlovian_instrumental",
        "instrumental_model_based",
        "full_hybrid",
    ] {
        let name = format!("trajectory_{cond}_agent0.csv");
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap()
        );
    }
}

#[test]
fn snapshot_reproduces_fields_and_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(run_small("compare", &out, &[]).status.code(), Some(0));
    let again = dir.path().join("again");
    let manifest = out.join("run_manifest.json");
    let res = pavgrid(&[
        "snapshot",
        manifest.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    for f in [
        "fields_full_hybrid/pav_field_ep3_agent1.csv",
        "trajectory_instrumental_only_agent3.csv",
        "trajectory_full_hybrid_agent0.csv",
        "tables_full_hybrid/q_mb_agent2.csv",
    ] {
        assert_eq!(
            fs::read(out.join(f)).unwrap(),
            fs::read(again.join(f)).unwrap(),
            "{f}"
        );
    }
    let bogus = dir.path().join("bogus.json");
    fs::write(&bogus, "{}").unwrap();
    let code = pavgrid(&[
        "snapshot",
        bogus.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ])
    .status
    .code();
    assert_eq!(code, Some(2));
}
