//! The four subcommands, callable without going through argument parsing.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gmd_core::diagnostics::{
    angle_histogram, norm_stats, parse_conflicts, weight_traces, write_angle_csv, write_norm_stats_csv,
    write_weight_csv, Phase,
};
use gmd_core::par::Schedule;
use gmd_core::synth_data::{write_tabular, Split};
use gmd_core::trainer::{decode_bundle, evaluate_all_cases, run_experiment, Metric, RunStatus};

use crate::config::{parse_case_filter, DataConfig, RunConfig};
use crate::error::{CliError, Result};
use crate::manifest::{Manifest, SeedEntry, Status};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFLICTS_FILE: &str = "conflicts.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MODEL_FILE: &str = "model.bin";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CONFIG_ECHO_FILE: &str = "config.toml";
pub const DATA_FILE: &str = "data.csv";
pub const SCHEMA_FILE: &str = "schema.toml";
pub const EVAL_FILE: &str = "eval.csv";
pub const NORM_STATS_FILE: &str = "norm_stats.csv";
pub const ANGLES_FILE: &str = "angles.csv";
pub const WEIGHTS_FILE: &str = "weights.csv";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed_override: Option<u64>,
    pub quiet: bool,
    pub schedule: Schedule,
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

fn prepare_out(cfg: &mut RunConfig, out: Option<&Path>) -> Result<PathBuf> {
    let dir = match (out, &cfg.output.dir) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(d)) => d.clone(),
        (None, None) => return Err(CliError::config("no output directory: set output.dir or pass --out")),
    };
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let dir = fs::canonicalize(&dir).map_err(|e| CliError::io(&dir, e))?;
    cfg.output.dir = Some(dir.clone());
    Ok(dir)
}

fn note(quiet: bool, msg: impl AsRef<str>) {
    if !quiet {
        eprintln!("{}", msg.as_ref());
    }
}

/// Writes the synthetic dataset described by the config as `data.csv` plus
/// `schema.toml`. `--seed-override` replaces the generator seed.
pub fn generate(config: &Path, opts: &RunOptions) -> Result<PathBuf> {
    let start = Instant::now();
    let mut cfg = RunConfig::load(config)?;
    let DataConfig::Synthetic(gen) = &mut cfg.data else {
        return Err(CliError::config("generate needs data.source = \"synthetic\""));
    };
    if let Some(s) = opts.seed_override {
        gen.seed = s;
    }
    let gen = gen.clone();
    let dir = prepare_out(&mut cfg, opts.out.as_deref())?;
    cfg.validate()?;

    let ds = gen.generate()?;
    let mut csv = Vec::new();
    let schema = write_tabular(&ds, &mut csv, ',')?;
    let schema_toml =
        toml::to_string(&schema.to_map()).map_err(|e| CliError::config(format!("cannot render schema: {e}")))?;
    write(&dir, DATA_FILE, &csv)?;
    write(&dir, SCHEMA_FILE, schema_toml.as_bytes())?;
    write(&dir, CONFIG_ECHO_FILE, cfg.to_toml()?.as_bytes())?;

    let mut manifest = Manifest::new("generate", &cfg)?;
    manifest.seeds.push(SeedEntry {
        seed: gen.seed,
        status: RunStatus::Completed,
        wall_time_s: start.elapsed().as_secs_f64(),
    });
    manifest.files = vec![
        DATA_FILE.into(),
        SCHEMA_FILE.into(),
        CONFIG_ECHO_FILE.into(),
        MANIFEST_FILE.into(),
    ];
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    write(&dir, MANIFEST_FILE, manifest.to_json()?.as_bytes())?;
    note(opts.quiet, format!("wrote {} samples to {}", ds.len(), dir.display()));
    Ok(dir)
}

/// Trains every configured seed and writes the run artifacts.
/// `--seed-override` replaces the seed list with that single seed.
pub fn train(config: &Path, opts: &RunOptions) -> Result<PathBuf> {
    let start = Instant::now();
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = opts.seed_override {
        cfg.train.seeds = vec![s];
    }
    cfg.validate()?;
    let data = cfg.load_dataset()?;
    cfg.model
        .arch(&data.dims(), data.output_dim())
        .map_err(|e| CliError::config(format!("model: {e}")))?;
    let dir = prepare_out(&mut cfg, opts.out.as_deref())?;
    write(&dir, CONFIG_ECHO_FILE, cfg.to_toml()?.as_bytes())?;

    note(
        opts.quiet,
        format!(
            "training {} seed(s) for {} steps (decoupling {})",
            cfg.train.seeds.len(),
            cfg.train.steps,
            if cfg.train.gmd_enabled { "on" } else { "off" }
        ),
    );
    let art = run_experiment(&cfg.train, &cfg.model, &data, opts.schedule)?;

    let mut metrics = Vec::new();
    art.write_metrics_csv(&mut metrics)?;
    write(&dir, METRICS_FILE, &metrics)?;
    let mut conflicts = Vec::new();
    art.write_conflicts_jsonl(&mut conflicts)?;
    write(&dir, CONFLICTS_FILE, &conflicts)?;
    let mut summary = Vec::new();
    art.write_summary_csv(&mut summary)?;
    write(&dir, SUMMARY_FILE, &summary)?;
    write(&dir, MODEL_FILE, &art.model_bundle()?)?;

    let mut manifest = Manifest::new("train", &cfg)?;
    manifest.seeds = art
        .runs
        .iter()
        .map(|r| SeedEntry {
            seed: r.seed,
            status: r.status.clone(),
            wall_time_s: r.wall_time_s,
        })
        .collect();
    manifest.files = [
        METRICS_FILE,
        CONFLICTS_FILE,
        SUMMARY_FILE,
        MODEL_FILE,
        CONFIG_ECHO_FILE,
        MANIFEST_FILE,
    ]
    .map(String::from)
    .to_vec();
    let failure = art.first_failure().map(|r| match &r.status {
        RunStatus::Failed { message, numerical, .. } => (format!("seed {}: {message}", r.seed), *numerical),
        RunStatus::Completed => unreachable!("first_failure returns failed runs"),
    });
    if let Some((msg, _)) = &failure {
        manifest.status = Status::Failed;
        manifest.error = Some(msg.clone());
    }
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    write(&dir, MANIFEST_FILE, manifest.to_json()?.as_bytes())?;

    if let Some((message, numerical)) = failure {
        return Err(CliError::RunFailed { message, numerical });
    }
    for row in art.summary.iter().filter(|r| r.metric_name.ends_with("_mean")) {
        note(
            opts.quiet,
            format!(
                "{:>10} {} = {:.4} ± {:.4}",
                row.case_mask, row.metric_name, row.mean, row.std
            ),
        );
    }
    note(opts.quiet, format!("artifacts in {}", dir.display()));
    Ok(dir)
}

/// Evaluates every model in a bundle on the config's test split, for the
/// cases admitted by `cases`. Returns the CSV text and writes `eval.csv`
/// under `out` when given.
pub fn eval(model: &Path, config: &Path, cases: &str, out: Option<&Path>, schedule: Schedule) -> Result<String> {
    let filter = parse_case_filter(cases)?;
    let cfg = RunConfig::load(config)?;
    let bytes = fs::read(model).map_err(|e| CliError::io(model, e))?;
    let models = decode_bundle(&bytes).map_err(|e| CliError::config(format!("{}: {e}", model.display())))?;
    let data = cfg.load_dataset()?;
    let (batch, targets) = if data.splits.test.is_empty() {
        data.split_batch(Split::Val)?
    } else {
        data.split_batch(Split::Test)?
    };
    let metric = Metric::for_loss(cfg.train.loss);
    let mut csv = String::from("seed,case_mask,metric_name,value\n");
    for (seed, m) in &models {
        if m.modalities() != data.modalities() {
            return Err(CliError::config(format!(
                "model has {} modalities, dataset has {}",
                m.modalities(),
                data.modalities()
            )));
        }
        let dims: Vec<usize> = m.arch().encoders.iter().map(|e| e.input_dim).collect();
        if dims != data.dims() {
            return Err(CliError::config(format!(
                "model expects modality widths {dims:?}, dataset has {:?}",
                data.dims()
            )));
        }
        let table = evaluate_all_cases(m, &batch, &targets, metric, &filter, schedule)?;
        for (case, v) in &table.rows {
            csv.push_str(&format!("{seed},{case},test_{},{v}\n", metric.name()));
        }
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        write(dir, EVAL_FILE, csv.as_bytes())?;
    }
    Ok(csv)
}

/// Reads `conflicts.jsonl` from `records` (a run directory or the file
/// itself) and writes norm statistics, angle histograms and weight traces.
pub fn diag(records: &Path, out: Option<&Path>, window: usize) -> Result<Vec<PathBuf>> {
    let file = if records.is_dir() {
        records.join(CONFLICTS_FILE)
    } else {
        records.to_path_buf()
    };
    if !file.is_file() {
        return Err(CliError::config(format!("no records found at {}", file.display())));
    }
    let text = fs::read(&file).map_err(|e| CliError::io(&file, e))?;
    let lines = parse_conflicts(text.as_slice(), &file.display().to_string())?;
    if lines.is_empty() {
        return Err(CliError::config(format!("{} holds no records", file.display())));
    }
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| file.parent().unwrap_or(Path::new(".")).to_path_buf());
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;

    let mut norms = Vec::new();
    write_norm_stats_csv(&norm_stats(&lines)?, &mut norms)?;
    let mut angles = Vec::new();
    write_angle_csv(
        &angle_histogram(&lines, Phase::Pre),
        &angle_histogram(&lines, Phase::Post),
        &mut angles,
    )?;
    let mut weights = Vec::new();
    write_weight_csv(&weight_traces(&lines, window)?, &mut weights)?;
    Ok(vec![
        write(&dir, NORM_STATS_FILE, &norms)?,
        write(&dir, ANGLES_FILE, &angles)?,
        write(&dir, WEIGHTS_FILE, &weights)?,
    ])
}
