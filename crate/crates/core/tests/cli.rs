use ldvqr::cli::sig7;
use ldvqr::simulate::{dgp_binary, dgp_censored, true_coef_binary};
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ldvqr"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env("LDVQR_THREADS", "2").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_censored(dir: &Path, n: usize) -> PathBuf {
    let p = dir.join("cens.csv");
    dgp_censored(n, true, 11)
        .write_csv(std::fs::File::create(&p).unwrap())
        .unwrap();
    p
}

fn write_binary(dir: &Path, n: usize) -> PathBuf {
    let p = dir.join("bin.csv");
    dgp_binary(n, 12)
        .write_csv(std::fs::File::create(&p).unwrap())
        .unwrap();
    p
}

fn num(v: &Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

#[test]
fn censored_fit_table_json_and_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_censored(dir.path(), 400);
    let json = dir.path().join("out.json");
    let pred = dir.path().join("pred.csv");
    let o = run(&[
        "fit",
        data.to_str().unwrap(),
        "--dep", "y_c", "--cov", "x",
        "--tau", "10", "20", "30", "40", "50", "60", "70", "80", "90",
        "--ll", "0", "--ul", "1", "--reps", "10",
        "--homogeneity", "x",
        "--qcen", "myqcen", "--pcen", "mypcen",
        "--json", json.to_str().unwrap(),
        "--out-csv", pred.to_str().unwrap(),
    ]);
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{text}\n{}", String::from_utf8_lossy(&o.stderr));
    assert!(text.contains("Censored quantile regression"));
    assert!(text.contains("Number of obs"));
    assert!(text.contains("Replications"));

    // every printed coefficient number comes from the JSON values
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let mut expected = Vec::new();
    for t in report["per_tau"].as_array().unwrap() {
        for c in t["coef"].as_array().unwrap() {
            let mut row = vec![c["name"].as_str().unwrap().to_string()];
            for key in ["est", "se", "z", "p", "ci_lo", "ci_hi"] {
                row.push(sig7(num(&c[key])));
            }
            expected.push(row);
        }
    }
    let printed: Vec<Vec<String>> = text
        .lines()
        .filter(|l| l.contains(" | ") && l.split_whitespace().count() == 8)
        .map(|l| l.split_whitespace().filter(|t| *t != "|").map(str::to_string).collect())
        .collect();
    assert_eq!(printed, expected);
    assert_eq!(report["per_tau"].as_array().unwrap().len(), 9);
    assert_eq!(report["V"].as_array().unwrap().len(), 18);
    assert_eq!(report["spec"]["ll"], 0.0);
    assert_eq!(report["tests"][0]["df"], 8);
    let w = sig7(num(&report["tests"][0]["statistic"]));
    assert!(text.contains(&w));

    let mut rdr = csv::Reader::from_path(&pred).unwrap();
    let headers: Vec<String> = rdr.headers().unwrap().iter().map(str::to_string).collect();
    for q in (10..=90).step_by(10) {
        assert!(headers.contains(&format!("myqcen_q{q}")), "{headers:?}");
    }
    assert!(headers.contains(&"mypcen".to_string()) && headers.contains(&"mypcen_s".to_string()));
    let q10 = headers.iter().position(|h| h == "myqcen_q10").unwrap();
    let pc = headers.iter().position(|h| h == "mypcen").unwrap();
    let mut min_q10 = f64::INFINITY;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let q: f64 = rec[q10].parse().unwrap();
        let p: f64 = rec[pc].parse().unwrap();
        assert!((0.0..=1.0).contains(&q));
        assert_eq!((p * 9.0).round() / 9.0, p);
        min_q10 = min_q10.min(q);
    }
    assert_eq!(min_q10, 0.0);
}

#[test]
fn binary_detected_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_binary(dir.path(), 400);
    let json = dir.path().join("b.json");
    let o = run(&[
        "fit", data.to_str().unwrap(), "--dep", "y_b", "--cov", "x", "--reps", "5",
        "--json", json.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("Binary quantile regression"));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["spec"]["kind"], "binary");
    assert_eq!(report["spec"]["taus"][0], 0.5);
    let est: Vec<f64> = report["per_tau"][0]["coef"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| num(&c["est"]))
        .collect();
    assert!((est[0] * est[0] + est[1] * est[1] - 1.0).abs() < 1e-12);
}

#[test]
fn missing_values_are_dropped_and_padded() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("na.csv");
    let d = dgp_censored(300, false, 3);
    let mut s = String::from("x,y_c\n");
    for i in 0..300 {
        match i {
            5 => s.push_str(&format!("NA,{}\n", d.observed[i])),
            9 => s.push_str(&format!("{},\n", d.x[i])),
            _ => s.push_str(&format!("{},{}\n", d.x[i], d.observed[i])),
        }
    }
    std::fs::write(&p, s).unwrap();
    let out = dir.path().join("o.csv");
    let o = run(&[
        "fit", p.to_str().unwrap(), "--dep", "y_c", "--cov", "x", "--ll", "0", "--ul", "1",
        "--tau", "25", "75", "--reps", "5", "--qcen", "q", "--out-csv", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("298"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("2 observations dropped"));
    let rows: Vec<csv::StringRecord> = csv::Reader::from_path(&out).unwrap().records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 300);
    assert_eq!(&rows[5][2], "NA");
    assert_eq!(&rows[9][3], "NA");
    assert_ne!(&rows[6][2], "NA");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_censored(dir.path(), 100);
    let f = data.to_str().unwrap();
    let code = |args: &[&str]| run(args).status.code();
    assert_eq!(code(&["fit", f, "--dep", "y_c", "--bogus"]), Some(2));
    assert_eq!(code(&["fit", f, "--dep", "y_c", "--cov", "x", "--tau", "120"]), Some(2));
    assert_eq!(code(&["fit", f, "--dep", "y_c", "--cov", "x", "--ll", "1", "--ul", "0"]), Some(2));
    assert_eq!(code(&["fit", "/nonexistent/file.csv", "--dep", "y"]), Some(3));
    assert_eq!(code(&["fit", f, "--dep", "nope", "--cov", "x"]), Some(3));
    assert_eq!(
        code(&["fit", f, "--dep", "y_c", "--cov", "x", "--tau", "25", "75", "--symmetry", "0.25"]),
        Some(2)
    );
    assert_eq!(code(&["simulate", "--dgp", "weird"]), Some(2));
    let o = run(&["fit", f, "--dep", "y_c", "--bogus"]);
    assert_eq!(String::from_utf8_lossy(&o.stderr).trim().lines().count(), 1);
}

#[test]
fn simulate_censored_shape() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let o = run(&[
        "simulate", "--dgp", "censored", "--heter", "--n", "2000", "--taus", "20", "50", "80",
        "--mc", "20", "--seed", "7", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let rows: Vec<csv::StringRecord> = csv::Reader::from_path(&out).unwrap().records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.iter().filter(|r| &r[2] == "naive").count(), 3);
    assert_eq!(rows.iter().filter(|r| &r[2] == "cqr").count(), 3);
    for r in &rows {
        assert_eq!(&r[7], "2000");
        assert_eq!(&r[8], "20");
    }
}

#[test]
fn simulate_binary_truth_column() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let json = dir.path().join("bench.json");
    let o = run(&[
        "simulate", "--dgp", "binary", "--n", "2000", "--taus", "20", "50", "80", "--mc", "2",
        "--out", out.to_str().unwrap(), "--json", json.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    for r in csv::Reader::from_path(&out).unwrap().records() {
        let r = r.unwrap();
        let tau: f64 = r[1].parse().unwrap();
        let truth: f64 = r[3].parse().unwrap();
        assert_eq!(truth, true_coef_binary(tau).0);
    }
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 6);
}
