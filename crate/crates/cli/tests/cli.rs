use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vbid(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vbid"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_CONFIG: &str = "train_days = 40
nn_hidden = 8
nn_epochs = 2
nn_batch_size = 256
gbt_rounds = 10
gbt_depth = 3
sample_days = 7
shares = 0.01, 0.05
";

#[test]
fn synth_writes_three_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let o = vbid(
        &["synth", "--days", "90", "--nodes", "5", "--seed", "7", "--out", "data/"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["lmp.csv", "features.csv", "vbids.csv", "manifest.txt"] {
        assert!(dir.path().join("data").join(f).is_file(), "{f}");
    }
    let lmp = fs::read_to_string(dir.path().join("data/lmp.csv")).unwrap();
    assert_eq!(lmp.lines().count(), 1 + 90 * 24 * 5);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = vbid(&["synth", "--no-such-flag"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    let o = vbid(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn short_history_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = vbid(&["synth", "--days", "14", "--out", "d"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let o = vbid(&["backtest", "--data", "d", "--out", "bt"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("insufficient history"), "{}", stderr(&o));
}

#[test]
fn help_lists_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let o = vbid(&["backtest", "--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for key in ["train_days", "risk_limit", "theta_quantity", "gbt_rounds", "shares"] {
        assert!(text.contains(key), "{key}");
    }
}

#[test]
fn ingest_reproduces_written_files() {
    let dir = tempfile::tempdir().unwrap();
    vbid(&["synth", "--days", "3", "--nodes", "2", "--out", "a"], dir.path());
    let o = vbid(
        &[
            "ingest", "--lmp", "a/lmp.csv", "--features", "a/features.csv", "--vbids",
            "a/vbids.csv", "--ref-node", "N01", "--out", "b",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["lmp.csv", "features.csv", "vbids.csv"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn backtest_is_reproducible_and_verifiable() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("cfg.txt"), SMALL_CONFIG).unwrap();
    assert_eq!(vbid(&["synth", "--days", "75", "--nodes", "3", "--seed", "2", "--out", "d"], p).status.code(), Some(0));
    for (out, workers) in [("r1", "1"), ("r2", "3")] {
        let o = vbid(
            &["backtest", "--data", "d", "--config", "cfg.txt", "--seed", "4", "--workers", workers, "--out", out],
            p,
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in ["pnl.csv", "metrics.txt", "curves.csv", "ledger.csv"] {
        assert_eq!(fs::read(p.join("r1").join(f)).unwrap(), fs::read(p.join("r2").join(f)).unwrap(), "{f}");
    }
    let curves = fs::read_to_string(p.join("r1/curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 3);

    let o = vbid(&["report", "--run", "r1"], p);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("total_net = "));
    fs::write(p.join("r1/pnl.csv"), "tampered\n").unwrap();
    let o = vbid(&["report", "--run", "r1"], p);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("digest mismatch"));
}

#[test]
fn train_fit_and_optimize() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("cfg.txt"), SMALL_CONFIG).unwrap();
    vbid(&["synth", "--days", "50", "--nodes", "3", "--seed", "5", "--out", "d"], p);
    let common = ["--data", "d", "--config", "cfg.txt", "--seed", "1"];
    let run = |extra: &[&str]| {
        let args: Vec<&str> = extra[..1].iter().chain(&common).chain(&extra[1..]).copied().collect();
        let o = vbid(&args, p);
        assert_eq!(o.status.code(), Some(0), "{:?}: {}", extra, stderr(&o));
    };
    run(&["train-spread", "--out", "s.json"]);
    run(&["train-quantity", "--model", "lstm", "--out", "q.json"]);
    run(&[
        "fit-sensitivity", "--date", "2021-02-10", "--quantity-model", "q.json", "--pwl-out",
        "pwl.csv", "--out", "gbt.txt",
    ]);
    run(&[
        "optimize", "--date", "2021-02-10", "--spread-model", "s.json", "--pwl", "pwl.csv",
        "--budget", "200", "--out", "opt",
    ]);
    let decisions = fs::read_to_string(p.join("opt/decisions.csv")).unwrap();
    assert!(decisions.starts_with("hour,node_id,side,quantity_mwh\n"));
    assert!(decisions.lines().count() > 1);
    assert!(p.join("opt/problem.txt").is_file());
    assert!(p.join("s.json.manifest.txt").is_file());

    let o = vbid(
        &["optimize", "--data", "d", "--date", "2021-02-10", "--budget", "100", "--mode", "sideways", "--out", "x"],
        p,
    );
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let o = vbid(&["fit-sensitivity", "--data", "d", "--pwl-out", "p.csv", "--out", "g.txt"], p);
    assert_eq!(o.status.code(), Some(1));
}
