use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use epic_core::checkpoint;
use epic_core::encode::{encode_dataset, SequenceRecord};
use epic_core::metrics::MetricsReport;
use epic_core::orchestrator::{
    evaluate_dataset, prepare, run_centralized, run_epic, LocalReport, RoundState, CENTRALIZED_MODEL, GLOBAL_MODEL,
};
use epic_core::tsv::{read_tsv, write_tsv};
use serde::Serialize;

use crate::config::{self, DerivedSeeds};
use crate::exit::CliError;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

pub fn cmd_gen(config_path: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = config::load(config_path)?;
    let spec = cfg.synthetic_spec()?;
    let records = epic_core::datagen::generate(&spec)?;
    let comments = vec![
        format!("synthetic corpus: {} samples, ancestral length {}", spec.total_samples, spec.ancestral_length),
        format!("seed {} (datagen stream {})", cfg.config.seed, spec.seed),
        "id\tsequence\tcountry\tmonth\tlineage".to_string(),
    ];
    write_tsv(out, &records, &cfg.window(), &comments).map_err(|e| io_err(out, e))?;

    println!("wrote {} records to {}", records.len(), out.display());
    let mut counts: BTreeMap<&str, usize> = spec.lineages.iter().map(|l| (l.name.as_str(), 0)).collect();
    for r in &records {
        *counts.entry(r.lineage.as_str()).or_default() += 1;
    }
    for l in &spec.lineages {
        println!("  {}\t{}", l.name, counts[l.name.as_str()]);
    }
    Ok(())
}

#[derive(Serialize)]
struct RunReport<'a> {
    labels: &'a [String],
    countries: &'a [String],
    model_fingerprint: String,
    seeds: &'a DerivedSeeds,
    global: &'a MetricsReport,
    locals: &'a [LocalReport],
    centralized: Option<&'a MetricsReport>,
}

#[derive(Serialize)]
struct RunMetadata {
    started_unix_seconds: u64,
    total_seconds: f64,
    parallelism: usize,
    train_seconds: BTreeMap<String, f64>,
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

pub fn checkpoint_path(run_dir: &Path, month: u32, model: &str) -> PathBuf {
    run_dir.join("checkpoints").join(format!("month_{month:02}")).join(format!("{}.epicw", file_stem(model)))
}

fn write_round(run_dir: &Path, state: &RoundState) -> epic_core::Result<()> {
    let dir = run_dir.join("checkpoints").join(format!("month_{:02}", state.month));
    fs::create_dir_all(&dir)?;
    for (country, c) in &state.local {
        checkpoint::save(&checkpoint_path(run_dir, state.month, country), &c.weights)?;
    }
    if let Some(g) = &state.global {
        checkpoint::save(&checkpoint_path(run_dir, state.month, GLOBAL_MODEL), &g.weights)?;
    }
    Ok(())
}

fn metrics_line(m: &MetricsReport) -> String {
    let auc = m.roc_auc_macro.map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}"));
    format!(
        "accuracy={:.4} precision={:.4} recall={:.4} f1_weighted={:.4} f1_macro={:.4} roc_auc={auc}",
        m.accuracy, m.precision_weighted, m.recall_weighted, m.f1_weighted, m.f1_macro
    )
}

pub fn cmd_run(config_path: &Path, out_dir: Option<&Path>, parallelism: usize) -> Result<(), CliError> {
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let cfg = config::load(config_path)?;
    let run_dir = match (out_dir, &cfg.config.output_dir) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(d)) => cfg.base_dir.join(d),
        (None, None) => return Err(CliError::Config("missing key: output_dir (or pass --out-dir)".into())),
    };
    let records = cfg.records()?;
    let exp = cfg.experiment(&records, parallelism)?;
    let prepared = prepare(&exp, &records)?;
    let seeds = cfg.seeds();

    fs::create_dir_all(&run_dir).map_err(|e| io_err(&run_dir, e))?;
    write_file(&run_dir.join("config.toml"), &cfg.text)?;
    write_file(&run_dir.join("seeds.json"), serde_json::to_string_pretty(&seeds).expect("serializable"))?;
    write_file(&run_dir.join("plan.json"), prepared.plan.to_json())?;
    let global_test: Vec<SequenceRecord> = prepared.plan.global_test.iter().map(|&i| records[i].clone()).collect();
    let test_path = run_dir.join("global_test.tsv");
    write_tsv(&test_path, &global_test, &cfg.window(), &["accumulated global test set".into()])
        .map_err(|e| io_err(&test_path, e))?;

    let report = run_epic(&exp, &prepared, &mut |state| write_round(&run_dir, state))?;
    let centralized = if cfg.config.centralized { Some(run_centralized(&exp, &prepared)?) } else { None };

    let mut csv = String::from("model,month,epoch,accuracy,loss\n");
    for h in &report.histories {
        for (e, rec) in h.history.epochs.iter().enumerate() {
            writeln!(csv, "{},{},{},{},{}", h.model, h.month, e, rec.train_accuracy, rec.train_loss).unwrap();
        }
    }
    if let Some(c) = &centralized {
        for (e, rec) in c.history.epochs.iter().enumerate() {
            writeln!(csv, "{CENTRALIZED_MODEL},all,{e},{},{}", rec.train_accuracy, rec.train_loss).unwrap();
        }
    }
    write_file(&run_dir.join("history.csv"), csv)?;

    let run_report = RunReport {
        labels: &exp.context.label_set,
        countries: &exp.countries,
        model_fingerprint: exp.model.fingerprint().to_hex(),
        seeds: &seeds,
        global: &report.global,
        locals: &report.locals,
        centralized: centralized.as_ref().map(|c| &c.metrics),
    };
    write_file(&run_dir.join("report.json"), serde_json::to_string_pretty(&run_report).expect("serializable"))?;

    let mut train_seconds = report.train_seconds.clone();
    if let Some(c) = &centralized {
        train_seconds.insert(CENTRALIZED_MODEL.to_string(), c.train_seconds);
    }
    let meta = RunMetadata {
        started_unix_seconds: started,
        total_seconds: clock.elapsed().as_secs_f64(),
        parallelism,
        train_seconds,
    };
    write_file(&run_dir.join("metadata.json"), serde_json::to_string_pretty(&meta).expect("serializable"))?;

    println!("global {}", metrics_line(&report.global));
    if let Some(c) = &centralized {
        println!("centralized {}", metrics_line(&c.metrics));
    }
    println!("run directory: {}", run_dir.display());
    Ok(())
}

pub fn cmd_eval(checkpoint_path: &Path, data: &Path, config_path: &Path) -> Result<(), CliError> {
    let cfg = config::load(config_path)?;
    let ctx = cfg.context(None)?;
    let spec = cfg.model_spec(&ctx);
    let weights = checkpoint::load(checkpoint_path)?;
    if weights.fingerprint != spec.fingerprint() {
        return Err(CliError::Fingerprint(format!(
            "{} has fingerprint {}, config describes {}",
            checkpoint_path.display(),
            weights.fingerprint.to_hex(),
            spec.fingerprint().to_hex()
        )));
    }
    weights.check_matches(&spec).map_err(|e| CliError::Fingerprint(e.to_string()))?;
    let records = read_tsv(data, &cfg.window())?;
    let dataset = encode_dataset(&records, &ctx)?;
    let report = evaluate_dataset(&weights, &spec, &dataset)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    eprintln!("{}", metrics_line(&report));
    Ok(())
}
