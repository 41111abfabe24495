use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use quotalab::lab::{build_fixture, FixtureParams};
use quotalab::variants::{cyclic_point_space, iid_type_space};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_quotalab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_fixture(dir: &Path, name: &str) -> PathBuf {
    write_fixture_with(dir, name, FixtureParams::default())
}

fn write_fixture_with(dir: &Path, name: &str, p: FixtureParams) -> PathBuf {
    let f = build_fixture(name, &p).unwrap();
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, serde_json::to_string(&f.env_file()).unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fixture_emit_round_trips() {
    let o = run(&["fixture", "voting", "--emit"]);
    assert_eq!(o.status.code(), Some(0));
    let (env, _) = quotalab::EnvFile::from_json(&stdout(&o)).unwrap();
    assert_eq!(env.n(), 2);
    assert_eq!(run(&["fixture", "no-such-fixture"]).status.code(), Some(1));
    assert_eq!(run(&["fixture", "tightness", "--m", "4", "--k", "2"]).status.code(), Some(1));
}

#[test]
fn check_cm_and_transfers() {
    let dir = TempDir::new().unwrap();
    let env = write_fixture(dir.path(), "medication");
    let o = run(&["check-cm", s(&env)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("cyclically monotone: true"));
    let out = dir.path().join("t.json");
    let o = run(&["transfers", s(&env), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(v[0]["ic_violation"].as_f64().unwrap() <= 1e-9);

    // reversed preferences over the allocation: not CM
    let mut f = build_fixture("allocation", &FixtureParams::default()).unwrap();
    f.env.agents[0].utility = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, serde_json::to_string(&f.env_file()).unwrap()).unwrap();
    assert_eq!(run(&["check-cm", s(&bad)]).status.code(), Some(2));
    assert_eq!(run(&["transfers", s(&bad)]).status.code(), Some(2));
}

#[test]
fn solve_ot_shift_chain() {
    let dir = TempDir::new().unwrap();
    let inst = dir.path().join("ot.json");
    let third = 1.0 / 3.0;
    let body = serde_json::json!({
        "cost": [[0.0, -1.0, -1.0], [2.0, 0.0, -1.0], [2.0, 2.0, 0.0]],
        "p": [2.0 * third, third, 0.0],
        "q": [third, third, 1.0 - 2.0 * third],
        "set": "diagonal",
    });
    std::fs::write(&inst, body.to_string()).unwrap();
    let out = dir.path().join("r.json");
    let o = run(&["solve-ot", s(&inst), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!((v["value"].as_f64().unwrap() + 2.0 / 3.0).abs() < 1e-9);
}

#[test]
fn equilibrium_and_scan() {
    let dir = TempDir::new().unwrap();
    let env = write_fixture(dir.path(), "allocation");
    let o = run(&["equilibrium", s(&env), "--k", "4", "--theta", "H,H,L,H"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("average error 0.250000, bound 0.250000"));
    // wrong length and unknown labels are usage errors
    assert_eq!(run(&["equilibrium", s(&env), "--k", "4", "--theta", "H,H"]).status.code(), Some(1));
    assert_eq!(run(&["equilibrium", s(&env), "--k", "2", "--theta", "H,X"]).status.code(), Some(1));

    let env2 = write_fixture(dir.path(), "allocation2");
    let o = run(&["scan", s(&env2), "--k-max", "3"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).matches("0 violations").count(), 3);
}

#[test]
fn simulate_csv_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let env = write_fixture(dir.path(), "allocation");
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for out in [&a, &b] {
        let o = run(&[
            "simulate", s(&env), "--k", "4", "--samples", "3000", "--seed", "7", "--no-timing", "--out", s(out),
        ]);
        assert_eq!(o.status.code(), Some(0));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert!(text.starts_with("run_id,K,samples,seed,estimate,std_error,bound,refined_bound,runtime_ms\n"));
    // no CSV form for a JSON-only command
    let o = run(&["check-cm", s(&env), "--out", s(&dir.path().join("x.csv"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn robustness_and_compare_js() {
    let dir = TempDir::new().unwrap();
    let env = write_fixture(dir.path(), "medication");
    let out = dir.path().join("r.csv");
    let o = run(&[
        "robustness", s(&env), "--pi", "0.3433333333333333,0.3333333333333333,0.3233333333333334",
        "--k-list", "8,32", "--samples", "200", "--out", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("bound 0.020000"));
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 3);

    let env = write_fixture(dir.path(), "allocation2");
    let o = run(&["compare-js", s(&env), "--k", "3"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("shrink factor 0.250000"));
}

#[test]
fn typespace_check_and_verify() {
    let dir = TempDir::new().unwrap();
    let env = write_fixture(dir.path(), "allocation3");
    let cyc = dir.path().join("cyclic.json");
    std::fs::write(&cyc, serde_json::to_string(&cyclic_point_space(&["L", "M", "H"])).unwrap()).unwrap();
    assert_eq!(run(&["typespace", s(&cyc), "--check"]).status.code(), Some(2));
    assert_eq!(run(&["typespace", s(&cyc), "--verify", "--env", s(&env)]).status.code(), Some(2));
    assert_eq!(run(&["typespace", s(&cyc), "--verify"]).status.code(), Some(1));

    let f = build_fixture("allocation3", &FixtureParams::default()).unwrap();
    let mech = f.mechanism(2).unwrap();
    let iid = dir.path().join("iid.json");
    let ts = iid_type_space(&mech, &f.quotas()).unwrap();
    std::fs::write(&iid, serde_json::to_string(&ts).unwrap()).unwrap();
    assert_eq!(run(&["typespace", s(&iid), "--check"]).status.code(), Some(0));
    let o = run(&["typespace", s(&iid), "--verify", "--env", s(&env)]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn dynamic_runs_and_traces() {
    let dir = TempDir::new().unwrap();
    let env = write_fixture(dir.path(), "weak-cm");
    let trace = dir.path().join("trace.csv");
    let o = run(&[
        "dynamic", s(&env), "--beta", "0.9", "--paths", "50", "--policy", "counterexample",
        "--trace", s(&trace), "--trace-paths", "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let t = std::fs::read_to_string(&trace).unwrap();
    assert!(t.starts_with("path,t,theta,r_t1,r_t2,r_t3,tv\n"));
    assert_eq!(t.lines().count(), 1 + 2 * 44);

    let alloc = write_fixture(dir.path(), "allocation");
    let out = dir.path().join("d.json");
    let o = run(&["dynamic", s(&alloc), "--beta", "0.9", "--paths", "100", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(v["max_quota_excess"].as_f64().unwrap() <= 1e-9);
    // horizon too short for the tail bound, and beta outside (0, 1)
    assert_eq!(run(&["dynamic", s(&alloc), "--beta", "0.9", "--horizon", "5"]).status.code(), Some(1));
    assert_eq!(run(&["dynamic", s(&alloc), "--beta", "1.0"]).status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["scan"]).status.code(), Some(1));
    assert_eq!(run(&["check-cm", "/nonexistent/env.json"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}
