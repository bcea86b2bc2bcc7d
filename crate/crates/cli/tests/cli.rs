use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn slicebf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slicebf")).args(args).env_remove("SLICEBF_CALIBRATION").output().unwrap()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

/// Deterministic pseudo-random stream for building input files.
struct Lcg(u64);

impl Lcg {
    fn unit(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    fn bit(&mut self) -> u32 {
        (self.unit() < 0.5) as u32
    }

    fn gauss(&mut self) -> f64 {
        let (u, v) = (self.unit().max(1e-300), self.unit());
        (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
    }
}

#[test]
fn toy_file_gives_four_thirds() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "toy.csv", "y,x\n0.5,1\n1.5,2\n");
    let doc = json(&slicebf(&["test", "--response", "y", "--covariate", "x", "--permutations", "0", &f]));
    assert_eq!(doc["schema"], 1);
    assert!((doc["bf"].as_f64().unwrap() - 4.0 / 3.0).abs() < 1e-12);
    assert!(doc["permutation"].is_null());
}

#[test]
fn given_columns_are_super_encoded() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = Lcg(3);
    let mut text = String::from("y,x,z1,z2\n");
    for _ in 0..60 {
        let (x, z1, z2) = (rng.bit(), rng.bit(), rng.bit());
        text.push_str(&format!("{},{x},{z1},{z2}\n", rng.gauss() + x as f64));
    }
    let f = write(dir.path(), "d.csv", &text);
    let doc = json(&slicebf(&["test", "--covariate", "x", "--given", "z1,z2", "--permutations", "50", "--methods", "anova", &f]));
    assert_eq!(doc["z_levels"], 4);
    let p = doc["permutation"]["p_value"].as_f64().unwrap();
    assert!(p > 0.0 && p <= 1.0);
    assert_eq!(doc["baselines"][0]["method"], "anova_two_way");
}

#[test]
fn balanced_binary_file_gets_formula_pvalue() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = Lcg(4);
    let mut text = String::from("y\tx\n");
    for i in 0..200 {
        text.push_str(&format!("{}\t{}\n", rng.gauss() + (i % 2) as f64, i % 2));
    }
    let f = write(dir.path(), "d.tsv", &text);
    let doc = json(&slicebf(&["test", "--covariate", "x", "--permutations", "0", "--methods", "t,ranksum,ks,ad", &f]));
    assert_eq!(doc["formula"]["source"], "builtin");
    assert!(doc["formula"]["p_value"].as_f64().unwrap() < 1e-3);
    assert_eq!(doc["baselines"].as_array().unwrap().len(), 4);
}

#[test]
fn calibration_table_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let table = r#"{"schema": 1, "entries": [{"x_levels": 2, "z_levels": 1, "frequencies": [0.5, 0.5],
        "lambda0": 1.0, "alpha0": 1.0, "constants": {"alpha": 1.0, "beta": 0.5, "gamma": 0.5}, "source": "local"}]}"#;
    let t = write(dir.path(), "cal.json", table);
    let f = write(dir.path(), "toy.csv", "y,x\n0.5,1\n1.5,2\n");
    let out = Command::new(env!("CARGO_BIN_EXE_slicebf"))
        .args(["test", "--covariate", "x", "--permutations", "0", &f])
        .env("SLICEBF_CALIBRATION", &t)
        .output()
        .unwrap();
    let doc = json(&out);
    assert_eq!(doc["formula"]["source"], "local");
    // γ / (b^α n^β) = 0.5 / ((4/3) · √2)
    let want = 0.5 / (4.0 / 3.0 * 2f64.sqrt());
    assert!((doc["formula"]["p_value"].as_f64().unwrap() - want).abs() < 1e-12);
}

#[test]
fn input_errors_exit_2_and_degenerate_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "toy.csv", "y,x\n0.5,1\n1.5,2\n");
    assert_eq!(slicebf(&["test", "--covariate", "nope", &f]).status.code(), Some(2));
    assert_eq!(slicebf(&["test", "--covariate", "x", "missing.csv"]).status.code(), Some(2));
    assert_eq!(slicebf(&["simulate", "--scenario", "s9", "--seed", "1"]).status.code(), Some(2));
    // seed is required for simulate
    assert_eq!(slicebf(&["simulate", "--scenario", "s1"]).status.code(), Some(2));
    let g = write(dir.path(), "const.csv", "y,x\n0.5,a\n1.5,a\n2.5,a\n");
    assert_eq!(slicebf(&["test", "--covariate", "x", "--permutations", "0", &g]).status.code(), Some(3));
    let grid = ["calibrate", "--ns", "100", "--bs", "1,10", "--replicates", "10"];
    assert_eq!(slicebf(&grid).status.code(), Some(2));
}

fn marker_file(dir: &Path, seed: u64) -> String {
    let mut rng = Lcg(seed);
    let mut text = String::from("y,m1,m2,m3,m4,m5,m6\n");
    for _ in 0..300 {
        let m: Vec<u32> = (0..6).map(|_| rng.bit()).collect();
        let y = 1.2 * m[1] as f64 + 1.2 * m[4] as f64 + rng.gauss();
        let cells: Vec<String> = m.iter().map(u32::to_string).collect();
        text.push_str(&format!("{y},{}\n", cells.join(",")));
    }
    write(dir, "markers.csv", &text)
}

#[test]
fn select_recovers_planted_markers() {
    let dir = tempfile::tempdir().unwrap();
    let f = marker_file(dir.path(), 9);
    let doc = json(&slicebf(&["select", "--permutations", "99", "--seed", "2", &f]));
    let mut chosen: Vec<String> =
        doc["trace"]["final_labels"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    chosen.sort();
    assert_eq!(chosen, ["m2", "m5"]);
}

#[test]
fn select_honors_fixed_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let f = marker_file(dir.path(), 9);
    let doc = json(&slicebf(&["select", "--stop-rule", "bf:150", &f]));
    assert_eq!(doc["config"]["stop_rule"]["kind"], "fixed_threshold");
    assert_eq!(doc["config"]["stop_rule"]["thresholds"][0], 150.0);
    for step in doc["trace"]["steps"].as_array().unwrap() {
        let accepted = step["decision"] == "selected";
        assert_eq!(accepted, step["log_bf"].as_f64().unwrap() > 150f64.ln());
        assert!(step.get("p_value").is_none());
    }
}

#[test]
fn select_on_null_data_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = Lcg(17);
    let names: Vec<String> = (1..=10).map(|j| format!("c{j}")).collect();
    let mut text = format!("y,{}\n", names.join(","));
    for _ in 0..400 {
        let cells: Vec<String> = (0..10).map(|_| rng.bit().to_string()).collect();
        text.push_str(&format!("{},{}\n", rng.gauss(), cells.join(",")));
    }
    let f = write(dir.path(), "null.csv", &text);
    let doc = json(&slicebf(&["select", "--permutations", "99", &f]));
    assert_eq!(doc["schema"], 1);
    assert_eq!(doc["trace"]["final_set"].as_array().unwrap().len(), 0);
}

#[test]
fn simulate_null_rejection_rates() {
    let doc = json(&slicebf(&["simulate", "--scenario", "s1", "--mu", "0", "--reps", "2000", "--n", "200", "--seed", "5"]));
    for s in doc["summary"].as_array().unwrap() {
        if let Some(rate) = s["rejection_rate_h1"].as_f64() {
            assert!((0.03..=0.07).contains(&rate), "{}: {rate}", s["method"]);
        }
    }
}

#[test]
fn simulate_scale_change_ordering() {
    let doc = json(&slicebf(&["simulate", "--scenario", "s2", "--methods", "bf,ks,ad,t,ranksum", "--seed", "8"]));
    let auc = |m: &str| {
        doc["summary"].as_array().unwrap().iter().find(|s| s["method"] == m).unwrap()["auc"].as_f64().unwrap()
    };
    assert!(auc("bf") > auc("ks"));
    assert!((0.45..=0.55).contains(&auc("t")));
}

#[test]
fn simulate_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, jobs: &str| {
        let tsv = dir.path().join(name);
        let out = slicebf(&[
            "--jobs", jobs, "simulate", "--scenario", "case3", "--reps", "40", "--n", "120", "--seed", "3",
            "--scores", tsv.to_str().unwrap(),
        ]);
        assert!(out.status.success());
        (out.stdout, std::fs::read(tsv).unwrap())
    };
    let (a, b) = (run("a.tsv", "1"), run("b.tsv", "2"));
    assert_eq!(a, b);
    assert!(String::from_utf8(a.1).unwrap().starts_with("method\treplicate\thypothesis\tscore\n"));
}

#[test]
fn calibrate_small_grid_updates_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("cal.json");
    let args = [
        "calibrate", "--ns", "50,100", "--bs", "1,3", "--replicates", "400", "--min-hits", "5",
        "--table", table.to_str().unwrap(),
    ];
    let doc = json(&slicebf(&args));
    assert_eq!(doc["entry"]["source"], "simulated");
    assert_eq!(doc["points"].as_array().unwrap().len(), 4);
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(&table).unwrap()).unwrap();
    assert_eq!(saved["schema"], 1);
    assert_eq!(saved["entries"][0]["constants"], doc["entry"]["constants"]);
    assert_eq!(json(&slicebf(&args)).to_string(), doc.to_string());
}

#[test]
fn help_documents_tsv_columns() {
    let out = slicebf(&["simulate", "--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for col in ["method", "replicate", "hypothesis", "score"] {
        assert!(text.contains(col));
    }
}
