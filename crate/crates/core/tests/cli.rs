use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn wavecast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavecast"))
        .args(args)
        .env_remove("WAVECAST_SEED")
        .output()
        .expect("spawn wavecast")
}

fn write_series(path: &Path, values: impl IntoIterator<Item = f64>) {
    let body: String = values.into_iter().map(|v| format!("{v}\n")).collect();
    fs::write(path, format!("value\n{body}")).unwrap();
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn version_and_usage_errors() {
    let out = wavecast(&["version"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("wavecast "));
    assert_eq!(wavecast(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(wavecast(&["run", "--model", "arima", "--data", "x.csv"]).status.code(), Some(2));
    assert_eq!(wavecast(&["run", "--test-len", "2"]).status.code(), Some(2));
}

#[test]
fn bad_path_exits_with_input_error() {
    let out = wavecast(&["decompose", "--data", "/nonexistent/series.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("load"), "{err}");
    assert!(out.stdout.is_empty());
}

#[test]
fn decompose_constant_series() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("flat.csv");
    write_series(&data, std::iter::repeat_n(4.25, 100));
    let out_dir = dir.path().join("bands");
    let out = wavecast(&["decompose", "--data", p(&data), "--out", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    // floor(ln 100) - 1 = 3 details plus the smooth
    for j in 1..=3 {
        let text = fs::read_to_string(out_dir.join(format!("band_D{j}.csv"))).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,value"));
        let vals: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
        assert_eq!(vals.len(), 100);
        assert!(vals.iter().all(|v| v.abs() < 1e-12));
    }
    let wide = fs::read_to_string(out_dir.join("bands.csv")).unwrap();
    assert_eq!(wide.lines().next(), Some("t,D1,D2,D3,S3"));
    assert_eq!(wide.lines().count(), 101);
    assert!(fs::read_to_string(out_dir.join("decomposition.svg")).unwrap().contains("<svg"));
}

#[test]
fn decompose_uses_training_split_and_level_override() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("ramp.csv");
    write_series(&data, (0..40).map(f64::from));
    let out_dir = dir.path().join("o");
    let out = wavecast(&["decompose", "--data", p(&data), "--test-len", "8", "--levels", "2", "--out", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(0));
    let wide = fs::read_to_string(out_dir.join("bands.csv")).unwrap();
    assert_eq!(wide.lines().next(), Some("t,D1,D2,S2"));
    assert_eq!(wide.lines().count(), 33);
    // additivity survives the CSV round trip
    for (t, line) in wide.lines().skip(1).enumerate() {
        let sum: f64 = line.split(',').skip(1).map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((sum - t as f64).abs() < 1e-9);
    }
    let too_many = wavecast(&["decompose", "--data", p(&data), "--levels", "6", "--out", p(&out_dir)]);
    assert_eq!(too_many.status.code(), Some(2));
}

#[test]
fn naive_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("ten.csv");
    write_series(&data, (1..=10).map(f64::from));
    let out_dir = dir.path().join("run");
    let out = wavecast(&["run", "--data", p(&data), "--test-len", "2", "--model", "naive", "--out", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let preds = fs::read_to_string(out_dir.join("predictions_naive.csv")).unwrap();
    assert_eq!(preds, "index,actual,predicted\n8,9.0,8.0\n9,10.0,8.0\n");
    let metrics = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("data,horizon,model,rmse,mae,smape,mase"));
    // errors 1 and 2; in-sample lag-1 MAE is 1
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..3], ["ten", "long", "naive"]);
    assert!((row[3].parse::<f64>().unwrap() - 2.5f64.sqrt()).abs() < 1e-12);
    assert_eq!(row[4].parse::<f64>().unwrap(), 1.5);
    assert_eq!(row[6].parse::<f64>().unwrap(), 1.5);
    let manifest = fs::read_to_string(out_dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains("split train 8 test 2"));
    assert!(manifest.contains("model naive"));
    assert!(out_dir.join("run.cfg").exists());
}

#[test]
fn transformer_runs_write_loss_traces_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("wave.csv");
    write_series(&data, (0..80).map(|t| (t as f64 / 3.0).sin() + t as f64 / 40.0));
    let out_dir = dir.path().join("run");
    let args = [
        "run", "--data", p(&data), "--test-len", "6", "--model", "wtransformer", "--model", "transformer",
        "--epochs", "2", "--set", "d_model=8", "--set", "num_heads=2", "--levels", "2", "--seed", "5",
        "--horizon", "short", "--out", p(&out_dir),
    ];
    let out = wavecast(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    let models: Vec<&str> = metrics.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(models, ["wtransformer", "transformer"]);
    assert!(metrics.lines().skip(1).all(|l| l.split(',').nth(1) == Some("short")));
    for band in ["D1", "D2", "S2"] {
        let trace = fs::read_to_string(out_dir.join(format!("loss_wtransformer_{band}.csv"))).unwrap();
        assert_eq!(trace.lines().count(), 3);
    }
    assert!(out_dir.join("loss_transformer_S0.csv").exists());
    let bands = fs::read_to_string(out_dir.join("band_predictions_wtransformer.csv")).unwrap();
    assert_eq!(bands.lines().next(), Some("index,D1,D2,S2"));

    // replaying the recorded config reproduces the predictions
    let first = fs::read(out_dir.join("predictions_wtransformer.csv")).unwrap();
    let replay_dir = dir.path().join("replay");
    let out = wavecast(&["run", "--config", p(&out_dir.join("run.cfg")), "--out", p(&replay_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(replay_dir.join("predictions_wtransformer.csv")).unwrap(), first);
}

#[test]
fn seed_env_is_a_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("s.csv");
    write_series(&data, (0..40).map(|t| (t as f64).cos()));
    let run = |env_seed: Option<&str>, flag: Option<&str>, name: &str| {
        let out_dir = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_wavecast"));
        cmd.args(["run", "--data", p(&data), "--test-len", "4", "--model", "transformer", "--epochs", "1"]);
        cmd.args(["--set", "d_model=4", "--set", "num_heads=1", "--out", p(&out_dir)]);
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        match env_seed {
            Some(s) => cmd.env("WAVECAST_SEED", s),
            None => cmd.env_remove("WAVECAST_SEED"),
        };
        let out = cmd.output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read_to_string(out_dir.join("run.cfg")).unwrap()
    };
    assert!(run(None, None, "a").contains("seed=42\n"));
    assert!(run(Some("7"), None, "b").contains("seed=7\n"));
    assert!(run(Some("7"), Some("9"), "c").contains("seed=9\n"));
    let bad = Command::new(env!("CARGO_BIN_EXE_wavecast"))
        .args(["run", "--data", p(&data), "--test-len", "4", "--model", "naive"])
        .env("WAVECAST_SEED", "abc")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn evaluate_and_mcb_commands() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    write_series(&data, [1.0, 2.0, 3.0, 4.0, 10.0, 20.0]);
    let good = dir.path().join("good.csv");
    let bad = dir.path().join("bad.csv");
    fs::write(&good, "index,actual,predicted\n4,10.0,11.0\n5,20.0,19.0\n").unwrap();
    fs::write(&bad, "index,actual,predicted\n4,10.0,4.0\n5,20.0,4.0\n").unwrap();
    let eval_dir = dir.path().join("eval");
    let out = wavecast(&[
        "evaluate", "--data", p(&data), "--test-len", "2", "--pred", &format!("good={}", p(&good)),
        "--pred", &format!("bad={}", p(&bad)), "--horizon", "short", "--out", p(&eval_dir),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(eval_dir.join("metrics.csv")).unwrap();
    assert!(metrics.contains("d,short,good,1.0,1.0,"));

    let mcb_dir = dir.path().join("mcb");
    let out = wavecast(&["mcb", "--metrics", p(&eval_dir.join("metrics.csv")), "--out", p(&mcb_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let ranks = fs::read_to_string(mcb_dir.join("ranks.csv")).unwrap();
    let rows: Vec<Vec<&str>> = ranks.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!((rows[0][1], rows[0][2]), ("good", "1.0"));
    assert_eq!((rows[1][1], rows[1][2]), ("bad", "2.0"));
    assert!(mcb_dir.join("mcb_short.svg").exists());

    // a model missing from one dataset is named in the error
    let partial = dir.path().join("partial.csv");
    fs::write(&partial, "data,horizon,model,rmse,mae,smape,mase\ne,short,good,1,1,1,1\n").unwrap();
    let out = wavecast(&["mcb", "--metrics", p(&eval_dir.join("metrics.csv")), "--metrics", p(&partial), "--out", p(&mcb_dir)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad") && err.contains("e/short"), "{err}");
}
