use std::path::Path;
use std::process::{Command, Output};

fn ssdm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssdm"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

// y = x1 sin(π r²) + x2 + noise on 200 random locations.
fn write_dataset(dir: &Path) {
    let mut text = String::from("u,v,y,x1,x2\n");
    let mut state: u64 = 12345;
    let mut unif = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for _ in 0..200 {
        let (u, v) = (unif(), unif());
        let (x1, x2) = (unif() * 2.0 - 1.0, unif() * 2.0 - 1.0);
        let e = (unif() - 0.5) * 0.5;
        let y = x1 * (std::f64::consts::PI * (u * u + v * v)).sin() + x2 + e;
        text.push_str(&format!("{u},{v},{y},{x1},{x2}\n"));
    }
    std::fs::write(dir.join("d.csv"), text).unwrap();
}

fn without_timestamp(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.contains("created_unix"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn simulate_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = ssdm(
        &["simulate", "--table", "1", "--n", "400", "--reps", "5", "--seed", "1", "--out", "r.json"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(report["format_version"], 1);
    assert_eq!(report["provenance"]["seed"], 1);
    assert_eq!(report["reports"][0]["n"], 400);
    assert_eq!(report["reports"][0]["reps"], 5);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = ssdm(&["fit", "--no-such-flag"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    let o = ssdm(&["simulate", "--table", "3", "--out", "x.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = ssdm(&["--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["fit", "select", "simulate", "diagnose"] {
        assert!(text.contains(sub));
    }
}

#[test]
fn tiny_bandwidth_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path());
    let o = ssdm(&["fit", "--data", "d.csv", "--h", "0.01", "--out", "f.json"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    let msg = stderr(&o);
    assert!(msg.contains("locallinear"), "{msg}");
    assert!(msg.contains("at target row"), "{msg}");
    assert!(msg.contains("smallest feasible bandwidth"), "{msg}");
}

#[test]
fn data_problems_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = ssdm(&["fit", "--data", "missing.csv", "--out", "f.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.csv"));

    std::fs::write(dir.path().join("bad.csv"), "u,v,y,x1\n0,0,1,2\n1,0,oops,3\n").unwrap();
    let o = ssdm(&["fit", "--data", "bad.csv", "--out", "f.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("oops"));

    write_dataset(dir.path());
    let o = ssdm(
        &["fit", "--data", "d.csv", "--covariates", "x1,TAX", "--out", "f.json"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("TAX"));
}

#[test]
fn fit_select_diagnose_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path());
    let p = dir.path();
    let fit_args = [
        "fit", "--data", "d.csv", "--h", "0.3", "--h1", "0.45", "--constant", "2", "--se",
        "sandwich", "--out", "fit.json", "--surface", "surface.csv",
    ];
    let o = ssdm(&fit_args, p);
    assert!(o.status.success(), "{}", stderr(&o));
    let surface = std::fs::read_to_string(p.join("surface.csv")).unwrap();
    assert!(surface.starts_with("u,v,beta_1,beta_2,se_1,se_2\n"));
    assert_eq!(surface.lines().count(), 201);

    let fit = ssdm::io::read_fit(p.join("fit.json")).unwrap();
    assert_eq!(fit.model.to_string(), "{2}");
    assert!(fit.se_alpha.is_some());
    let first = without_timestamp(&p.join("fit.json"));
    assert!(ssdm(&fit_args, p).status.success());
    assert_eq!(first, without_timestamp(&p.join("fit.json")));

    let o = ssdm(&["select", "--data", "d.csv", "--out", "sel.json"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    let sel: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p.join("sel.json")).unwrap()).unwrap();
    assert_eq!(sel["selection"]["chosen"], serde_json::json!([2]));
    assert!(sel["selection"]["trace"].as_array().unwrap().len() >= 3);
    assert_eq!(sel["provenance"]["subcommand"], "select");

    let o = ssdm(
        &["diagnose", "--fit", "fit.json", "--data", "d.csv", "--lags", "20", "--out", "diag.json"],
        p,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let diag: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p.join("diag.json")).unwrap()).unwrap();
    assert_eq!(diag["diagnostics"]["acf"].as_array().unwrap().len(), 20);
    assert_eq!(diag["diagnostics"]["qq"].as_array().unwrap().len(), 200);
}

#[test]
fn simulate_output_does_not_depend_on_threads() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let base = ["simulate", "--table", "2", "--n", "300", "--reps", "3", "--seed", "5"];
    let mut a: Vec<&str> = base.to_vec();
    a.extend(["--threads", "1", "--out", "a.json"]);
    let mut b: Vec<&str> = base.to_vec();
    b.extend(["--threads", "3", "--out", "a2.json"]);
    assert!(ssdm(&a, p).status.success());
    assert!(ssdm(&b, p).status.success());
    let strip = |name: &str| {
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(p.join(name)).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("provenance");
        v.to_string()
    };
    assert_eq!(strip("a.json"), strip("a2.json"));
}

#[test]
fn median_surfaces_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = ssdm(
        &[
            "simulate", "--table", "1", "--n", "200", "--reps", "3", "--out", "r.json",
            "--surfaces-out", "surf",
        ],
        p,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for j in 1..=3 {
        let t = std::fs::read_to_string(p.join(format!("surf/median_n200_beta{j}.csv"))).unwrap();
        assert!(t.starts_with("u,v,beta,beta_hat\n"));
        assert_eq!(t.lines().count(), 201);
    }
}
