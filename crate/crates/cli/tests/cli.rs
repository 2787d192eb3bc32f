use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ivsens"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn sample_csv(n: usize) -> String {
    let mut s = String::from("pair_id,unit,z,d,y,x_1,subgroup\n");
    for i in 0..n {
        let x = (i as f64 * 0.37).fract();
        let g = if i % 3 == 0 { "septic" } else { "other" };
        let (zd, cd) = if i % 4 == 0 { (0, 0) } else { (1, 0) };
        let noise = ((i * 7919) % 13) as f64 / 6.5 - 1.0;
        let yt = 1.0 + 2.0 * zd as f64 + x + noise;
        let yc = 0.5 + x - 0.3 * noise;
        // Alternate which row is listed first and which unit is encouraged.
        if i % 2 == 0 {
            s += &format!("p{i},1,1,{zd},{yt:.4},{x:.4},{g}\np{i},2,0,{cd},{yc:.4},{x:.4},{g}\n");
        } else {
            s += &format!("p{i},2,1,{zd},{yt:.4},{x:.4},{g}\np{i},1,0,{cd},{yc:.4},{x:.4},{g}\n");
        }
    }
    s
}

#[test]
fn estimate_two_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "d.csv", "pair_id,unit,z,d,y\na,1,1,1,3\na,2,0,0,1\nb,1,0,0,1\nb,2,1,1,2\n");
    let v = json(&run(&["estimate", "--input", f.to_str().unwrap()]));
    assert_eq!(v["result"]["n"], 2);
    assert_eq!(v["result"]["lambda_hat"], 1.5);
    assert_eq!(v["provenance"]["command"], "estimate");
    assert_eq!(v["provenance"]["tool"], "ivsens");
}

#[test]
fn three_rows_fail_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "d.csv", "pair_id,unit,z,d,y\na,1,1,1,3\na,2,0,0,1\na,2,0,0,1\nb,1,0,0,1\nb,2,1,1,2\n");
    let out_file = dir.path().join("out.json");
    let out = run(&["estimate", "--input", f.to_str().unwrap(), "--out", out_file.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("pair 'a'"));
    assert!(out.stdout.is_empty());
    assert!(!out_file.exists());
}

#[test]
fn subgroup_filter_keeps_only_that_label() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "d.csv", &sample_csv(30));
    let v = json(&run(&["estimate", "--input", f.to_str().unwrap(), "--subgroup", "septic"]));
    assert_eq!(v["result"]["n"], 10);
    assert_eq!(v["result"]["subgroups"], serde_json::json!(["septic"]));
}

#[test]
fn sensitivity_with_pop_engine() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "d.csv", &sample_csv(40));
    let args = ["sensitivity", "--input", f.to_str().unwrap(), "--lambda0", "0", "--gamma", "1.5", "--engine", "pop", "--reps", "400", "--gamma-max", "4"];
    let v = json(&run(&args));
    let t = &v["result"]["test"];
    assert_eq!(t["engine"], "pairs_of_pairs");
    assert_eq!(t["gamma"], 1.5);
    let p = t["p_bound"].as_f64().unwrap();
    assert!(p > 0.0 && p <= 1.0);
    assert!(v["result"]["sensitivity_value"]["gamma"].as_f64().unwrap() >= 1.0);
    let params = &v["provenance"]["params"];
    for key in ["alpha", "reps", "seed", "engine", "side", "lambda0", "gamma"] {
        assert!(!params[key].is_null(), "missing {key}");
    }
}

#[test]
fn outputs_are_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "d.csv", &sample_csv(24));
    let args = ["interval", "--input", f.to_str().unwrap(), "--engine", "regression", "--reps", "300", "--seed", "9"];
    let a = bin().args(args).env("IVSENS_THREADS", "1").output().unwrap();
    let b = bin().args(args).env("IVSENS_THREADS", "3").output().unwrap();
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn negative_lambda_and_two_sided() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "d.csv", &sample_csv(20));
    let v = json(&run(&["sensitivity", "--input", f.to_str().unwrap(), "--lambda0", "-1.5", "--side", "two-sided", "--reps", "200"]));
    assert_eq!(v["result"]["test"]["side"], "two_sided");
    assert_eq!(v["result"]["test"]["lambda0"], -1.5);
}

#[test]
fn bad_flags_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "d.csv", &sample_csv(20));
    assert!(!run(&["sensitivity", "--input", f.to_str().unwrap(), "--engine", "bogus"]).status.success());
    assert!(!run(&["sensitivity", "--input", f.to_str().unwrap(), "--gamma", "0.5"]).status.success());
}

#[test]
fn omnibus_document() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "d.csv", &sample_csv(30));
    let v = json(&run(&["omnibus", "--input", f.to_str().unwrap(), "--reps", "200"]));
    let r = &v["result"];
    assert_eq!(r["beta"], 0.01);
    assert!(r["p_beta"].as_f64().unwrap() >= r["sup_p"].as_f64().unwrap());
    assert_eq!(r["f_engine"], "regression");
    assert_eq!(r["ci_engine"], "pairs_of_pairs");
}

#[test]
fn table5_csv() {
    let out = run(&["design-sens", "--table5"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 21);
    assert_eq!(lines[0], "subgroup,lambda,sigma,noise,compliance,design_sensitivity");
    let cell = lines.iter().find(|l| l.starts_with("non-septic,4.1,8.9,laplace,1.0,")).unwrap();
    let v: f64 = cell.rsplit(',').next().unwrap().parse().unwrap();
    assert!((v - 3.50).abs() < 0.01);
}

#[test]
fn single_design_sensitivity() {
    let v = json(&run(&["design-sens", "--lambda", "4.1", "--sigma", "8.9", "--compliance", "0.75"]));
    assert!((v["result"]["design_sensitivity"].as_f64().unwrap() - 2.33).abs() < 0.01);
}

#[test]
fn simulate_writes_csv_and_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("power.csv");
    let status = run(&["simulate", "--power", "--reps", "20", "--inner-reps", "100", "--gammas", "1,2", "--out", out.to_str().unwrap()]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("subgroup,gamma,n,power\n"));
    assert_eq!(text.lines().count(), 5);
    let prov: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("power.csv.provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["params"]["inner_reps"], 100);

    let t3 = run(&["simulate", "--table3", "--reps", "2", "--inner-reps", "100"]);
    assert!(t3.status.success(), "{}", String::from_utf8_lossy(&t3.stderr));
    assert_eq!(String::from_utf8(t3.stdout).unwrap().lines().count(), 7);
}
