use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn ipmn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ipmn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: [&str; 8] = [
    "--cv-folds",
    "3",
    "--set",
    "gbt.n_estimators=[20]",
    "--set",
    "gbt.max_depth=[2]",
    "--set",
    "preprocess.median_radius=1",
];

#[test]
fn phantom_then_run_is_reproducible() {
    let d = TempDir::new().unwrap();
    let study = d.path().join("study");
    let out = ipmn(&[
        "phantom",
        "--out",
        s(&study),
        "--seed",
        "3",
        "--cases-per-class",
        "6",
        "--size",
        "40",
        "--dl-accuracy",
        "0.8",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let mut reports = vec![];
    for run in ["a", "b"] {
        let dir = d.path().join(run);
        let mut args = vec![
            "run",
            "--seed",
            "3",
            "--study",
            s(&study),
            "--out",
            s(&dir),
            "--dl-probs",
            "dl_probs.csv",
        ];
        args.extend(SMALL);
        let out = ipmn(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(
            stdout.contains("radiomics: acc") && stdout.contains("fused:"),
            "{stdout}"
        );
        for f in [
            "report.json",
            "summary.txt",
            "test_predictions.csv",
            "roc_radiomics.csv",
            "roc_fused.csv",
        ] {
            assert!(dir.join(f).exists(), "{f} missing");
        }
        reports.push(std::fs::read(dir.join("report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn run_requires_a_seed() {
    let out = ipmn(&["run", "--study", "x", "--out", "y"]);
    assert!(!out.status.success());
}

#[test]
fn failures_name_their_category() {
    let d = TempDir::new().unwrap();
    let out = ipmn(&[
        "run",
        "--seed",
        "1",
        "--study",
        s(&d.path().join("missing")),
        "--out",
        s(&d.path().join("o")),
    ]);
    assert!(!out.status.success());
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("error[io]"),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out = ipmn(&[
        "run",
        "--seed",
        "1",
        "--study",
        "s",
        "--out",
        "o",
        "--set",
        "gbt.depth=3",
    ]);
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("error[config]"),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
