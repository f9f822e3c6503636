use std::fs;
use std::process::{Command, Output};

fn gfdm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gfdm")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn solve_prints_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u.csv");
    let out = gfdm(&["solve", "--case", "1", "--method", "ddo2", "--recon", "am", "--h", "0.16", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let line = stdout(&out);
    let error: f64 = line.trim().strip_prefix("error=").unwrap().parse().unwrap();
    assert!(error > 0.0 && error < 0.1);
    let csv = fs::read_to_string(path).unwrap();
    assert!(csv.starts_with("id,x,y,u_h,u_ref,abs_err\n"));
}

#[test]
fn bad_case_is_a_parameter_error() {
    let out = gfdm(&["solve", "--case", "9", "--method", "ddo2", "--recon", "am", "--h", "0.16"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("case 9"));
}

#[test]
fn bad_flags_are_parameter_errors() {
    for args in [
        &["solve", "--case", "1", "--method", "fem", "--h", "0.16"][..],
        &["solve", "--case", "1", "--method", "ddo2", "--recon", "xx", "--h", "0.16"],
        &["solve", "--case", "1", "--method", "ddo2", "--h", "-1"],
        &["converge", "--case", "1", "--h-list", "0.08,0.16"],
        &["verify", "--suite", "everything"],
        &["gen", "--h", "abc", "--out", "x.csv"],
    ] {
        assert_eq!(gfdm(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn converge_writes_one_row_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    let out = gfdm(&[
        "converge", "--case", "3", "--methods", "mls2,ddo2,fvm", "--recon", "hm", "--h-list", "0.16,0.08,0.04", "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(&path).unwrap();
    assert_eq!(csv.lines().count(), 1 + 9);
    let summary = stdout(&out);
    for m in ["mls2", "ddo2", "fvm"] {
        assert!(summary.contains(&format!("{m}: order=")), "{summary}");
    }
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let out = gfdm(&["gen", "--h", "0.1", "--seed", "4", "--out", p.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert!(text.starts_with("id,x,y,h,is_boundary\n"));
}

#[test]
fn verify_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.csv");
    let out = gfdm(&["verify", "--suite", "signs", "--h-list", "0.16,0.08", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("0 failed"));
    assert!(fs::read_to_string(path).unwrap().starts_with("check,param,h,residual,slope,pass\n"));
}
