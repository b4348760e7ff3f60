use std::fs;
use std::path::Path;
use std::process::Command;

use macop::model::Scenario;

fn macop(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_macop"))
        .args(args)
        .env("MACOP_THREADS", "1")
        .output()
        .expect("binary runs")
        .status
        .code()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn generate_then_run_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    assert_eq!(macop(&["generate", "--n", "4", "--m", "5", "--seed", "3", "--density", "0.5", "--out", p(&gen)]), 0);
    let (scenario, graph) = (gen.join("scenario.json"), gen.join("graph.json"));

    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let code = macop(&[
            "run", "--scenario", p(&scenario), "--graph", p(&graph), "--iterations", "6", "--mode", "both",
            "--no-timing", "--seed", "3", "--out", p(&out),
        ]);
        assert_eq!(code, 0);
        outputs.push(fs::read(out.join("run_0.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);

    let mut rdr = csv::Reader::from_reader(outputs[0].as_slice());
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (jc, vc) = (col("J"), col("v_star"));
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 7);
    let js: Vec<f64> = rows.iter().map(|r| r[jc].parse().unwrap()).collect();
    let v: f64 = rows[0][vc].parse().unwrap();
    assert!(js.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    assert!(js.iter().all(|&j| v <= j + 1e-9));
}

#[test]
fn bounds_sweep_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bounds");
    let code = macop(&[
        "bounds", "--n", "3", "--m", "4", "--seed", "5", "--tau-sweep", "0:2:3", "--reps", "2", "--out", p(&out),
    ]);
    assert_eq!(code, 0);
    let mut rdr = csv::Reader::from_path(out.join("bounds.csv")).unwrap();
    let headers: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(headers, ["rep", "seed", "tau", "l_b", "u_b", "relative_error", "penalties_exact", "note"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        if let (Ok(l), Ok(u)) = (r[3].parse::<f64>(), r[4].parse::<f64>()) {
            assert!(l <= u + 1e-9 * l.abs().max(1.0));
        }
    }
}

#[test]
fn bounds_keeps_infeasible_repetitions() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bounds");
    let code = macop(&["bounds", "--n", "3", "--m", "5", "--tau-sweep", "0:2:5", "--reps", "3", "--out", p(&out)]);
    assert_eq!(code, 2);
    let mut rdr = csv::Reader::from_path(out.join("bounds.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 15);
    assert!(rows.iter().any(|r| r[3].is_empty() && r[7].contains("infeasible")));
}

#[test]
fn infeasible_scenario_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    assert_eq!(macop(&["generate", "--n", "2", "--m", "3", "--seed", "1", "--out", p(&gen)]), 0);
    let path = gen.join("scenario.json");
    let mut s = Scenario::from_json(&fs::read_to_string(&path).unwrap()).unwrap();
    for sat in &mut s.satellites {
        sat.w.iter_mut().for_each(|w| *w = 1e-6);
    }
    fs::write(&path, s.to_json()).unwrap();
    let out = dir.path().join("run");
    let code = macop(&["run", "--scenario", p(&path), "--graph", p(&gen.join("graph.json")), "--out", p(&out)]);
    assert_eq!(code, 2);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(macop(&["run", "--iterations", "many"]), 1);
    assert_eq!(macop(&["bounds", "--n", "2", "--m", "2", "--tau-sweep", "1:0:3"]), 1);
    assert_eq!(macop(&["run", "--scenario", "/nonexistent/scenario.json"]), 1);
}
