use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn datasets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../datasets")
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_expabs-lm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn data_args(name: &str, file: &str) -> Vec<String> {
    vec![
        "--dataset".into(),
        datasets().join(file).to_string_lossy().into_owned(),
        "--schema".into(),
        datasets()
            .join(format!("{name}.toml"))
            .to_string_lossy()
            .into_owned(),
    ]
}

fn run(args: Vec<String>) -> Output {
    cli(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn train_writes_summary_and_log() {
    let out_dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train".to_string()];
    args.extend(data_args("iris", "iris.data"));
    args.extend(
        ["--tau", "2", "--max-iter", "40", "--seed", "3", "--out"]
            .iter()
            .map(|s| s.to_string()),
    );
    args.push(out_dir.path().to_string_lossy().into_owned());
    let out = run(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("\"final_tau\""));
    assert!(stdout.contains("1 runs, 0 failed"));
    let log = out_dir.path().join("logs/iris_dynamic_full_tau2_rep0.csv");
    let text = std::fs::read_to_string(log).unwrap();
    assert!(text.starts_with("iteration,e_expabs,mse,ce,rec_rate,tau,mu,eta,branch"));
    assert!(out_dir.path().join("plan.json").exists());
}

#[test]
fn bench_grid_counts_runs() {
    let out_dir = tempfile::tempdir().unwrap();
    let mut args = vec!["bench".to_string()];
    args.extend(data_args("wine", "wine.data"));
    args.extend(
        [
            "--tau",
            "0.5,5",
            "--mode",
            "fixed,dynamic",
            "--speedup",
            "full,none",
            "--reps",
            "2",
            "--max-iter",
            "25",
            "--jobs",
            "2",
            "--out",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    args.push(out_dir.path().to_string_lossy().into_owned());
    let out = run(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    // fixed 2 τ + dynamic 2 variants x 2 τ, 2 reps each
    let runs = std::fs::read_to_string(out_dir.path().join("runs.jsonl")).unwrap();
    assert_eq!(runs.lines().count(), 12);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("wine fixed none: cap hits"));
    assert!(stdout.contains("wine dynamic full: cap hits"));
}

#[test]
fn adult_echoes_its_configuration() {
    let out_dir = tempfile::tempdir().unwrap();
    let mut args = vec!["adult".to_string()];
    args.extend(data_args("adult", "adult_subsample.data"));
    args.extend(["--max-iter", "15", "--out"].iter().map(|s| s.to_string()));
    args.push(out_dir.path().to_string_lossy().into_owned());
    let out = run(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    for line in [
        "patience      500",
        "eta_plus      1.02",
        "eta_minus     0.3",
        "tau_init      10",
        "alpha         0.1",
        "hidden_nodes  8",
        "split         307 / 87 / 1606",
        "test error (1 - RecRate)",
    ] {
        assert!(stdout.contains(line), "missing {line:?} in\n{stdout}");
    }
}

#[test]
fn bad_input_exits_with_2() {
    let mut args = vec!["train".to_string()];
    args.extend(data_args("iris", "no_such_file.data"));
    let out = run(args);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_file.data"));

    let mut args = vec!["train".to_string()];
    args.extend(data_args("iris", "iris.data"));
    args.extend(["--tau", "0"].iter().map(|s| s.to_string()));
    assert_eq!(run(args).status.code(), Some(2));

    assert_eq!(cli(&["bench", "--mode", "sideways"]).status.code(), Some(2));
}
