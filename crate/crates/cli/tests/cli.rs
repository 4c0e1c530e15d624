use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn epic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epic")).args(args).output().expect("spawn epic")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const SMALL: &str = r#"
seed = 3
months = 2

[synthetic]
ancestral_length = 60
total_samples = 400

[model]
hidden_dims = [16, 8]

[train]
epochs = 2
"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn gen_writes_every_record_after_the_comments() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "seed = 1\nmonths = 6\n[synthetic]\nancestral_length = 50\n");
    let tsv = dir.path().join("corpus.tsv");
    let out = epic(&["gen", "--config", &cfg, "--out", tsv.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&tsv).unwrap();
    let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data.len(), 8000);
    assert!(data.iter().all(|l| l.split('\t').count() == 5));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("8000 records") && stdout.contains("Epsilon"));
}

#[test]
fn run_then_eval_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let run_dir = dir.path().join("run");
    let out = epic(&["run", "--config", &cfg, "--out-dir", run_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in
        ["config.toml", "seeds.json", "plan.json", "global_test.tsv", "history.csv", "report.json", "metadata.json"]
    {
        assert!(run_dir.join(f).is_file(), "missing {f}");
    }
    for month in ["month_00", "month_01"] {
        let n = fs::read_dir(run_dir.join("checkpoints").join(month)).unwrap().count();
        assert_eq!(n, 9, "{month}");
    }
    let history = fs::read_to_string(run_dir.join("history.csv")).unwrap();
    // 9 models x 2 months x 2 epochs, centralized 4 epochs, header
    assert_eq!(history.lines().count(), 9 * 2 * 2 + 4 + 1);

    let ckpt = run_dir.join("checkpoints/month_01/global.epicw");
    let test = run_dir.join("global_test.tsv");
    let out =
        epic(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", test.to_str().unwrap(), "--config", &cfg]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let scored: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(scored, report["global"]);

    // a different architecture must refuse the checkpoint
    let other = write(dir.path(), "other.toml", &SMALL.replace("[16, 8]", "[16, 4]"));
    let out =
        epic(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", test.to_str().unwrap(), "--config", &other]);
    assert_eq!(code(&out), 6);

    // unknown lineage in the evaluation data
    let tsv = fs::read_to_string(&test).unwrap();
    let bad = write(dir.path(), "bad.tsv", &tsv.replacen("\tAlpha", "\tOmicron", 1));
    let out = epic(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", &bad, "--config", &cfg]);
    assert_eq!(code(&out), 2);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = write(dir.path(), "missing.toml", "seed = 1\nmonths = 2\n");
    let out = epic(&["run", "--config", &missing, "--out-dir", dir.path().join("r").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing key"));

    let unknown = write(dir.path(), "unknown.toml", &format!("{SMALL}\n[extra]\nx = 1\n"));
    let out = epic(&["run", "--config", &unknown, "--out-dir", dir.path().join("r").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn empty_first_month_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "data.tsv", "x1\tACDE\tFrance\t2021-02\ta\nx2\tACDF\tFrance\t2021-02\tb\n");
    let cfg = write(
        dir.path(),
        "data.toml",
        "seed = 1\nmonths = 2\ncentralized = false\n[data]\npath = \"data.tsv\"\nlabels = [\"a\", \"b\"]\n",
    );
    let out = epic(&["run", "--config", &cfg, "--out-dir", dir.path().join("r").to_str().unwrap()]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}
