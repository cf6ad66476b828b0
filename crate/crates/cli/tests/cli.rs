use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn apheat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apheat")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn sha_line(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    assert_eq!(apheat(&[]).status.code(), Some(2));
    assert_eq!(apheat(&["bogus"]).status.code(), Some(2));
}

#[test]
fn odd_grid_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = apheat(&["condition", "--grid", "9", "--out", out]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("even"));
}

#[test]
fn bad_epsilon_and_foreign_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for args in [
        vec!["condition", "--epsilon", "2", "--out", out],
        vec!["condition", "--epsilon", "-1e-3", "--out", out],
        vec!["condition", "--omega", "3", "--out", out],
        vec!["condition", "--set", "nonsense=1", "--out", out],
        vec!["island", "--bc", "robin", "--out", out],
    ] {
        let o = apheat(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn limit_token_reaches_the_solver() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    let o = apheat(&[
        "condition",
        "--variant",
        "e_aps",
        "--epsilon",
        "limit",
        "--grid",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("condition.csv")).unwrap();
    let row = csv.lines().nth(2).unwrap();
    assert!(row.starts_with("e_aps,0.000000e0,"), "{row}");
    assert!(fs::read_to_string(out.join("resolved.cfg")).unwrap().contains("epsilon=limit"));
}

#[test]
fn resolved_config_reproduces_bitwise_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = apheat(&[
        "converge-space",
        "--variant",
        "rk_aps",
        "--levels",
        "0.25,0.125",
        "--steps",
        "3",
        "--tau",
        "1e-3",
        "--out",
        a.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = a.join("resolved.cfg");
    let o = apheat(&["converge-space", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(a.join("resolved.cfg")).unwrap(), fs::read(b.join("resolved.cfg")).unwrap());
    assert_eq!(fs::read(a.join("convergence.csv")).unwrap(), fs::read(b.join("convergence.csv")).unwrap());
    let first = sha_line(&a.join("convergence.csv"));
    assert!(first.starts_with("# config_sha256=") && first.len() == 16 + 64, "{first}");
}

#[test]
fn config_for_another_command_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("x.cfg");
    fs::write(&cfg, "command=island\ngrid=8\n").unwrap();
    let o = apheat(&["condition", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn small_island_run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("isl");
    let o = apheat(&[
        "island",
        "--grid",
        "12",
        "--steps",
        "4",
        "--profile-every",
        "2",
        "--omega",
        "10",
        "--vtk",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let tag = sha_line(&out.join("energy.csv"));
    assert!(tag.starts_with("# config_sha256="));
    let energy = fs::read_to_string(out.join("energy.csv")).unwrap();
    assert_eq!(energy.lines().count(), 2 + 5);
    for step in [0, 2, 4] {
        for line in ["axis", "center", "offset"] {
            let p = out.join("profiles").join(format!("step{step:06}_{line}.csv"));
            assert_eq!(sha_line(&p), tag, "{}", p.display());
        }
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.contains("final_energy,"));
    assert!(fs::read_to_string(out.join("final.vtk")).unwrap().starts_with("# vtk DataFile"));
}

#[test]
fn ap_on_island_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = apheat(&["island", "--variant", "e_ap", "--grid", "8", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
