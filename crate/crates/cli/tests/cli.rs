use std::fs;
use std::process::{Command, Output};

use clap::Parser;
use dilequiv_cli::{parse_pair, run, CliError, JobConfig, EXIT_INPUT, EXIT_NUMERICAL};

const SPLIT: &str = r#"{"A": [[3,0],[0,2]], "B": [[3,0],[1,2]]}"#;
const COUNTER: &str = r#"{"A": [[2,2],[0,2]], "B": [[2,4],[0,2]]}"#;

fn dilequiv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dilequiv"))
        .args(args)
        .output()
        .unwrap()
}

fn config(args: &[&str]) -> JobConfig {
    JobConfig::try_parse_from(std::iter::once("dilequiv").chain(args.iter().copied())).unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn classify_reports_the_split_pair() {
    let report: serde_json::Value =
        serde_json::from_str(&stdout(&dilequiv(&["--inline", SPLIT]))).unwrap();
    assert_eq!(report["schema"], 1);
    assert_eq!(report["hom_besov_equal"], false);
    assert_eq!(report["inhom_besov_equal"], true);
    assert_eq!(report["hardy_equal"], false);
}

#[test]
fn classify_verdict_examples() {
    let same = r#"{"A": [[2,0],[0,2]], "B": [[2,0],[0,2]]}"#;
    for (input, expected) in [(same, true), (COUNTER, false)] {
        let v: serde_json::Value =
            serde_json::from_str(&run(&config(&["--inline", input])).unwrap().body).unwrap();
        for key in ["hom_besov_equal", "inhom_besov_equal", "hardy_equal"] {
            assert_eq!(v[key], expected, "{input} {key}");
        }
    }
}

#[test]
fn output_is_byte_identical_across_runs() {
    for command in ["classify", "normal-form", "probe", "covering"] {
        let args = ["--inline", COUNTER, "--command", command, "--seed", "3"];
        assert_eq!(
            stdout(&dilequiv(&args)),
            stdout(&dilequiv(&args)),
            "{command}"
        );
    }
}

#[test]
fn probe_csv_layout() {
    let csv = stdout(&dilequiv(&["--inline", COUNTER, "--command", "probe"]));
    assert!(!csv.contains('\r'));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("k,log_norm"));
    let rows: Vec<&str> = csv
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .collect();
    assert_eq!(rows.len(), 201);
    assert!(rows.contains(&"0,0.0000000000000000e0"));
    assert!(csv
        .lines()
        .last()
        .unwrap()
        .starts_with("# classification: polynomial degree="));
}

#[test]
fn probe_of_a_matrix_with_itself_stays_below_its_norm() {
    let input = r#"{"A": [[2,1],[0,3]], "B": [[2,1],[0,3]]}"#;
    let csv = stdout(&dilequiv(&[
        "--inline",
        input,
        "--command",
        "probe",
        "--kmax",
        "60",
    ]));
    let bound = dilequiv::linalg::operator_norm(&parse_pair(input).unwrap().b.unwrap()).ln();
    for row in csv.lines().skip(1).filter(|l| !l.starts_with('#')) {
        let v: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert!((-1e-12..=bound + 1e-12).contains(&v), "{row}");
    }
    assert!(csv.ends_with("# classification: bounded\n"));
}

#[test]
fn normal_form_accepts_a_single_matrix() {
    let v: serde_json::Value = serde_json::from_str(&stdout(&dilequiv(&[
        "--inline",
        r#"{"A": [[4,0],[0,4]]}"#,
        "--command",
        "normal-form",
    ])))
    .unwrap();
    let nf = &v["A"]["matrix"];
    let s = 2f64.sqrt();
    assert!((nf[0][0].as_f64().unwrap() - s).abs() < 1e-12);
    assert!(v.get("B").is_none());
}

#[test]
fn invalid_inputs_exit_with_code_two() {
    let cases = [
        r#"{"A": [[2,0],[0,2]], "B": [[2]]}"#,
        r#"{"A": [[2,0],[0,2]]"#,
        r#"{"A": [[2,0],[0,2]], "B": [[2,0],[0,2]], "C": 1}"#,
        r#"{"A": [[0.5,0],[0,2]], "B": [[2,0],[0,2]]}"#,
        r#"{"A": [[2,0],[0]], "B": [[2,0],[0,2]]}"#,
        r#"{"A": [[2,0],[0,2]]}"#,
    ];
    for input in cases {
        let out = dilequiv(&["--inline", input]);
        assert_eq!(out.status.code(), Some(EXIT_INPUT), "{input}");
        assert!(out.stdout.is_empty());
    }
    let probe = dilequiv(&["--inline", cases[0], "--command", "probe"]);
    assert_eq!(probe.status.code(), Some(EXIT_INPUT));
}

#[test]
fn malformed_json_reports_line_and_column() {
    let err = run(&config(&["--inline", "{\"A\": [[2,0],\n [0,2]],, }"])).unwrap_err();
    let CliError::Input(msg) = err else {
        panic!("{err:?}")
    };
    assert!(msg.contains("line 2 column"), "{msg}");
}

#[test]
fn numerical_failures_map_to_code_three() {
    let err = CliError::from(dilequiv::Error::IllConditionedBasis {
        cond: 1e12,
        cap: 1e8,
    });
    assert_eq!(err.exit_code(), EXIT_NUMERICAL);
    let err = CliError::from(dilequiv::Error::NotExpansive("0.5".into()));
    assert_eq!(err.exit_code(), EXIT_INPUT);
}

#[test]
fn rejects_bad_options() {
    let err = run(&config(&["--inline", SPLIT, "--kmax", "10"])).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_INPUT);
    let err = run(&config(&["--inline", SPLIT, "--tol-verdict", "0"])).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_INPUT);
    let out = dilequiv(&["--inline", SPLIT, "--command", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn files_in_and_out() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("pair.json");
    let out = dir.path().join("report.json");
    let table = dir.path().join("counts.csv");
    fs::write(&input, COUNTER).unwrap();
    let status = dilequiv(&[
        "--input",
        input.to_str().unwrap(),
        "--command",
        "covering",
        "--out",
        out.to_str().unwrap(),
        "--table",
        table.to_str().unwrap(),
        "--r",
        "2,10",
        "--directions",
        "200",
    ]);
    assert!(status.status.success());
    assert!(status.stdout.is_empty());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["equivalent"], false);
    assert_eq!(report["indicators_agree"], true);
    assert_eq!(report["weak_counts"].as_array().unwrap().len(), 4);
    let csv = fs::read_to_string(&table).unwrap();
    assert!(csv.starts_with("# R=2.0000000000000000e0\ni,count,witness_j_list\n"));

    let missing = dilequiv(&["--input", dir.path().join("nope.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(EXIT_INPUT));
}
