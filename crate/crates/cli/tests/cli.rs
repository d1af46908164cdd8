use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cdd-audit"))
}

fn berkeley() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/berkeley.csv")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn berkeley_flags() -> Vec<String> {
    vec![
        "--input".into(),
        berkeley().to_str().unwrap().into(),
        "--input-format".into(),
        "contingency".into(),
        "--protected".into(),
        "gender".into(),
        "--outcome".into(),
        "outcome".into(),
        "--advantaged-label".into(),
        "admitted".into(),
        "--disadvantaged-label".into(),
        "rejected".into(),
    ]
}

fn audit(extra: &[&str]) -> Output {
    let mut args = vec!["audit".to_string()];
    args.extend(berkeley_flags());
    args.extend(extra.iter().map(|s| s.to_string()));
    bin().args(&args).output().unwrap()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    let v = run(&["--version"]);
    assert_eq!(v.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&v.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["audit", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["audit"]).status.code(), Some(1));
    assert_eq!(audit(&["--nd-threshold", "abc"]).status.code(), Some(1));
    assert_eq!(audit(&["--nd-threshold", "1.5"]).status.code(), Some(1));
    assert_eq!(audit(&["--condition-on", "faculty"]).status.code(), Some(1));
    assert_eq!(audit(&["--condition-on", "gender"]).status.code(), Some(1));
    assert_eq!(audit(&["--class", "Other"]).status.code(), Some(1));
    assert_eq!(audit(&["--max-depth", "0", "--condition-on", "dept"]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--scenario", "nope"]).status.code(), Some(1));
    assert_eq!(
        run(&["simulate", "--scenario", "random", "--param", "depth=3"]).status.code(),
        Some(1)
    );
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "dept,gender,outcome,count\nA,Male,admitted,1.5\n").unwrap();
    let out = run(&[
        "audit", "--input", path.to_str().unwrap(), "--input-format", "contingency",
        "--protected", "gender", "--outcome", "outcome",
        "--advantaged-label", "admitted", "--disadvantaged-label", "rejected",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.csv") && err.contains("line 2"), "{err}");

    std::fs::write(&path, "gender,outcome\nMale,admitted\nFemale,maybe\n").unwrap();
    let out = run(&[
        "audit", "--input", path.to_str().unwrap(), "--protected", "gender",
        "--outcome", "outcome", "--advantaged-label", "admitted", "--disadvantaged-label", "rejected",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let missing = dir.path().join("absent.csv");
    let out = run(&["audit", "--input", missing.to_str().unwrap(), "--protected", "g", "--outcome", "o"]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(&path, "dept,gender,outcome,count\nA,Male,admitted,0\n").unwrap();
    let out = run(&[
        "audit", "--input", path.to_str().unwrap(), "--input-format", "contingency",
        "--protected", "gender", "--outcome", "outcome",
        "--advantaged-label", "admitted", "--disadvantaged-label", "rejected",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn findings_never_change_the_exit_code() {
    let out = audit(&["--condition-on", "dept", "--flag-threshold", "0.01", "--format", "text"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("Advisory markers"));
    assert!(text.contains("* Female in (all): D-A 14%"), "{text}");
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("audit.toml");
    let mut f = std::fs::File::create(&config).unwrap();
    writeln!(
        f,
        r#"input = "{}"
input_format = "contingency"
protected = "gender"
outcome = "outcome"
advantaged_label = "admitted"
disadvantaged_label = "rejected"
condition_on = ["dept"]
nd_threshold = "0.4"
weighting = "uniform""#,
        berkeley().display()
    )
    .unwrap();
    let out = run(&["audit", "--config", config.to_str().unwrap()]);
    let report = json(&out);
    assert_eq!(report["config"]["nd_threshold"], "2/5");
    assert_eq!(report["config"]["weighting"], "uniform");
    // 46% of the rejected are women, so the lower threshold fires
    assert_eq!(report["unconditioned"][1]["negative_dominance"]["fired"], true);

    let out = run(&["audit", "--config", config.to_str().unwrap(), "--nd-threshold", "1/2"]);
    let report = json(&out);
    assert_eq!(report["config"]["nd_threshold"], "1/2");
    assert_eq!(report["unconditioned"][1]["negative_dominance"]["fired"], false);

    std::fs::write(&config, "unknown_key = 1\n").unwrap();
    assert_eq!(run(&["audit", "--config", config.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn tabulate_round_trips_records_from_stdin() {
    let mut csv = String::from("dept,gender,outcome\n");
    for _ in 0..3 {
        csv.push_str("A,Female,admitted\n");
    }
    csv.push_str("B,Male,rejected\nA,Male,admitted\n");
    let mut child = bin()
        .args([
            "tabulate", "--input", "-", "--protected", "gender", "--outcome", "outcome",
            "--advantaged-label", "admitted", "--disadvantaged-label", "rejected",
            "--condition-on", "dept",
        ])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(csv.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.starts_with("dept,gender,outcome,count\n"), "{table}");
    assert!(table.contains("A,Female,admitted,3\n"));
    assert!(table.contains("B,Male,rejected,1\n"));
    let total: u64 = table
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, 5);
}

#[test]
fn jsonl_input_with_intersections() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("people.jsonl");
    let mut lines = String::new();
    for (eth, gender, outcome, n) in [
        ("black", "woman", "no", 5),
        ("black", "woman", "yes", 1),
        ("white", "woman", "yes", 4),
        ("white", "man", "yes", 5),
        ("black", "man", "no", 2),
    ] {
        for _ in 0..n {
            lines.push_str(&format!(
                "{{\"ethnicity\":\"{eth}\",\"gender\":\"{gender}\",\"hired\":\"{outcome}\"}}\n"
            ));
        }
    }
    std::fs::write(&path, lines).unwrap();
    let out = run(&[
        "audit", "--input", path.to_str().unwrap(), "--input-format", "jsonl",
        "--protected", "gender", "--outcome", "hired",
        "--advantaged-label", "yes", "--disadvantaged-label", "no",
        "--class", "woman", "--intersect", "ethnicity=black,gender=woman",
        "--partition", "ethnicity",
    ]);
    let report = json(&out);
    let inter = &report["unconditioned"][1];
    assert_eq!(inter["class_value"], "ethnicity=black,gender=woman");
    let p = &inter["demographic_disparity"]["proportions"];
    assert_eq!((p["class_advantaged"].as_u64(), p["class_disadvantaged"].as_u64()), (Some(1), Some(5)));
    // the intersection already fixes ethnicity, so only the plain class is scanned
    let scans = report["masking_scans"].as_array().unwrap();
    assert_eq!(scans.len(), 1);
    assert_eq!(scans[0]["class_value"], "woman");
}

#[test]
fn scan_and_csv_outputs() {
    let mut args = vec!["scan".to_string()];
    args.extend(berkeley_flags());
    args.extend(["--partition".into(), "dept".into()]);
    let out = bin().args(&args).output().unwrap();
    let report = json(&out);
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["masking_scans"].as_array().unwrap().len(), 2);

    let out = audit(&["--condition-on", "dept", "--format", "csv"]);
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("conditioning,cell,class,measure,"));
    // 2 classes x 2 unconditioned measures + 6 depts x 2 classes
    assert_eq!(lines.count(), 4 + 12);
}

#[test]
fn simulate_writes_contingency_csv() {
    let out = run(&["simulate", "--scenario", "berkeley"]);
    assert!(out.status.success());
    let generated = String::from_utf8(out.stdout).unwrap();
    let bundled = std::fs::read_to_string(berkeley()).unwrap();
    let sort = |s: &str| {
        let mut v: Vec<String> = s.lines().map(String::from).collect();
        v.sort();
        v
    };
    assert_eq!(sort(&generated), sort(&bundled));

    let a = run(&["simulate", "--scenario", "random", "--seed", "3"]).stdout;
    let b = run(&["simulate", "--scenario", "random", "--seed", "3"]).stdout;
    let c = run(&["simulate", "--scenario", "random", "--seed", "4"]).stdout;
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn out_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    let out = audit(&["--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let report: Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    assert_eq!(report["dataset"]["total"], 4486);
}

#[test]
fn max_depth_enumerates_conditioning_sets() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("two.csv");
    std::fs::write(
        &path,
        "site,shift,group,outcome,count\nn,day,x,ok,5\nn,day,y,bad,3\ns,night,x,bad,2\ns,day,y,ok,4\n",
    )
    .unwrap();
    let base = [
        "audit", "--input", path.to_str().unwrap(), "--input-format", "contingency",
        "--protected", "group", "--outcome", "outcome",
        "--advantaged-label", "ok", "--disadvantaged-label", "bad",
        "--condition-on", "site", "--condition-on", "shift",
    ];
    let sets = |extra: &[&str]| {
        let mut args = base.to_vec();
        args.extend(extra);
        json(&run(&args))["conditional"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c["attributes"].to_string())
            .collect::<Vec<_>>()
    };
    assert_eq!(sets(&[]), [r#"["site"]"#, r#"["shift"]"#, r#"["site","shift"]"#]);
    assert_eq!(sets(&["--max-depth", "1"]), [r#"["site"]"#, r#"["shift"]"#]);
}
