use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn pikan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pikan")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = pikan(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &str = r#"
seed = 3
folds = 3
lambda_candidates = [0.5, 2.0]

[synth]
rows = 400
seed = 11
vessel_id = "demo"

[kan]
hidden_width = 4

[train]
max_epochs = 4
patience = 4
"#;

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("experiment.toml");
    std::fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_train_evaluate_chain_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));

    ok(&["synth-gen", "--config", s(&cfg), "--out", s(&a)]);
    let csv = std::fs::read_to_string(a.join("demo.csv")).unwrap();
    assert_eq!(csv.lines().count(), 401);
    assert!(csv.lines().next().unwrap().ends_with("shaft_rpm,shaft_power,fuel_consumed"));

    for out in [&a, &b] {
        ok(&["--jobs", "1", "train", "--config", s(&cfg), "--out", s(out)]);
    }
    for f in ["models.json", "oof.csv", "test.csv", "manifest.json", "trainlog_shaft_power.csv"] {
        let x = std::fs::read(a.join("demo").join(f)).unwrap();
        let y = std::fs::read(b.join("demo").join(f)).unwrap();
        assert!(x == y, "{f} differs between identical runs");
    }
    let log = std::fs::read_to_string(a.join("demo/trainlog_shaft_power.csv")).unwrap();
    assert!(log.starts_with("epoch,L_data,L_physics,lambda,val_mae"));

    let models = a.join("demo/models.json");
    let report = a.join("report.csv");
    let table = ok(&["evaluate", "--models", s(&models), "--test", s(&a.join("demo/test.csv")), "--out", s(&report)]);
    assert!(table.contains("pikan"));
    let text = std::fs::read_to_string(&report).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "vessel,method,target,mae,rmse,mape_pct,r2_pct,me_signed_pct,n,excluded_n");
    assert_eq!(lines.count(), 3);

    let responses = a.join("responses.csv");
    ok(&["export-responses", "--models", s(&models), "--out", s(&responses)]);
    let text = std::fs::read_to_string(&responses).unwrap();
    assert!(text.starts_with("feature,x,response"));
    // 14 shared inputs plus predicted rpm, 100 points each
    assert_eq!(text.lines().count(), 1 + 15 * 100);
}

#[test]
fn predict_accepts_csv_without_targets() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--out", s(&out)]);

    let labelled = std::fs::read_to_string(out.join("demo/test.csv")).unwrap();
    let stripped: String =
        labelled.lines().map(|l| l.split(',').take(13).collect::<Vec<_>>().join(",") + "\n").collect();
    let input = dir.path().join("features.csv");
    std::fs::write(&input, stripped).unwrap();
    let pred = dir.path().join("pred.csv");
    ok(&["predict", "--models", s(&out.join("demo/models.json")), "--input", s(&input), "--out", s(&pred)]);
    let text = std::fs::read_to_string(&pred).unwrap();
    assert_eq!(text.lines().next().unwrap(), "timestamp,predicted_rpm,predicted_shaft_power,predicted_fuel_consumed");
    assert_eq!(text.lines().count(), labelled.lines().count());
}

#[test]
fn train_from_logged_csv_and_tune() {
    let dir = tempfile::tempdir().unwrap();
    let gen = write_config(dir.path(), SMALL);
    ok(&["synth-gen", "--config", s(&gen), "--out", s(dir.path())]);
    let cfg = write_config(
        dir.path(),
        r#"
folds = 2
lambda_candidates = [1.0, 0.1]
tune_target = { stage = "rpm" }
out_dir = "tuned"

[data]
train = ["demo.csv"]

[physics]
c_calm = 18000.0
c_wind = 350.0
c_wave = 17000.0
eta = 0.45

[kan]
hidden_width = 4

[train]
max_epochs = 3
patience = 3
"#,
    );
    let stdout = ok(&["tune-lambda", "--config", s(&cfg)]);
    // λ never reaches the rpm stage, so both candidates tie and the smaller wins
    assert!(stdout.contains("lambda* = 0.1"), "{stdout}");
    let csv = std::fs::read_to_string(dir.path().join("tuned/lambda_tuning.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "lambda,median_val_mae");
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn gradcheck_passes_with_default_seed() {
    let stdout = ok(&["gradcheck"]);
    assert!(stdout.contains("gradcheck passed"));
}

#[test]
fn errors_are_single_line_with_code_and_leave_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}\n[data]\ntrain = [\"x.csv\"]\n"));
    let out = dir.path().join("never");
    let res = pikan(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert!(!res.status.success());
    let err = String::from_utf8(res.stderr).unwrap();
    assert!(err.starts_with("error[E_CONFIG]: "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
    assert!(!out.exists());

    let res = pikan(&["predict", "--models", "missing.json", "--input", "x.csv", "--out", s(&out.join("p.csv"))]);
    assert!(!res.status.success());
    assert!(String::from_utf8(res.stderr).unwrap().starts_with("error[E_IO]: "));
    assert!(!out.exists());
}
