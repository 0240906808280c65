//! Experiment configuration and the commands behind the CLI: single runs over
//! task-order permutations, ablation tables, memory-size sweeps and reports.
//!
//! A results directory holds:
//! - `config.toml`: the effective configuration
//! - `logs.jsonl`: one record per training epoch
//! - `matrix_p{p}.csv`: the accuracy matrix of permutation `p`
//! - `metrics.csv`: per-step cumulative F1 per permutation, then mean/variance rows
//! - `checkpoints/p{p}_task{k}.json`: training state after each task
//! - `summary.json`: headline numbers, byte-identical across reruns

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{generate, load_dump, SynthSpec};
use crate::error::{EscoError, Result};
use crate::losses::HyperParams;
use crate::memory::Herding;
use crate::metrics::{bwt, fwt, report, MetricMatrix, RunCurve};
use crate::model::ModelConfig;
use crate::stream::{permutations, Corpus, StreamSpec, TaskStream};
use crate::trainer::{run_lifelong_with, EpochLog, LifelongRun, Method, RunSettings};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Where samples come from; exactly one source per config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SynthSpec),
    Dump(PathBuf),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SynthSpec::default())
    }
}

/// Top-level experiment configuration. `seed` drives the stream split, the
/// task orders and training; it replaces `hp.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_tasks: usize,
    pub permutations: usize,
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub data: DataSource,
    pub hp: HyperParams,
    pub model: ModelConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            n_tasks: 5,
            permutations: 1,
            method: Method::Esco,
            output_dir: None,
            data: DataSource::default(),
            hp: HyperParams::default(),
            model: ModelConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| EscoError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| EscoError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| EscoError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tasks < 1 {
            return Err(EscoError::Config("n_tasks must be >= 1".into()));
        }
        if self.permutations < 1 {
            return Err(EscoError::Config("permutations must be >= 1".into()));
        }
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate().map_err(|e| EscoError::Config(e.to_string()))?;
        }
        if self.model.d_rep < 1 || self.model.d_prompt < 1 {
            return Err(EscoError::Config("model dimensions must be >= 1".into()));
        }
        self.hp.validate().map_err(|e| EscoError::Config(e.to_string()))
    }

    /// Output directory resolved against `root` when relative.
    pub fn resolve_output(&self, root: Option<&Path>) -> PathBuf {
        let dir = self
            .output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(format!("{}-seed{}", self.method, self.seed)));
        match root {
            Some(root) if dir.is_relative() => root.join(dir),
            _ => dir,
        }
    }

    pub fn stream_spec(&self) -> StreamSpec {
        StreamSpec {
            n_tasks: self.n_tasks,
            split_seed: self.seed,
            permutation_seed: self.seed,
            ..Default::default()
        }
    }

    fn settings(&self, method: Method, corpus: &Corpus) -> Result<RunSettings> {
        let mut model = self.model.clone();
        model.d_enc = corpus.feature_dim().ok_or(EscoError::EmptyCorpus)?;
        Ok(RunSettings {
            hp: HyperParams {
                seed: self.seed,
                ..self.hp.clone()
            },
            model,
            method,
        })
    }
}

pub fn load_corpus(source: &DataSource) -> Result<Corpus> {
    match source {
        DataSource::Synthetic(spec) => generate(spec),
        DataSource::Dump(path) => load_dump(path),
    }
}

/// The streams a config trains on, one per permutation.
pub fn config_streams(config: &ExperimentConfig) -> Result<(Corpus, Vec<TaskStream>)> {
    config.validate()?;
    let corpus = load_corpus(&config.data)?;
    let streams = permutations(&corpus, &config.stream_spec(), config.permutations)?;
    Ok((corpus, streams))
}

/// Headline numbers of one permutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationSummary {
    pub permutation: usize,
    pub fingerprint: String,
    pub order: Vec<Vec<usize>>,
    pub final_f1: f64,
    pub bwt: f64,
    pub fwt: f64,
    pub per_step_f1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub code_version: String,
    pub method: Method,
    pub seed: u64,
    pub corpus_fingerprint: String,
    /// Mean over permutations of the final cumulative F1.
    pub final_mean_f1: f64,
    pub bwt: f64,
    pub fwt: f64,
    pub per_step_f1: Vec<f64>,
    pub per_step_variance: Vec<f64>,
    pub permutations: Vec<PermutationSummary>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// BWT and FWT; both 0 for single-task streams.
fn transfer(m: &MetricMatrix) -> Result<(f64, f64)> {
    if m.n < 2 {
        return Ok((0.0, 0.0));
    }
    Ok((bwt(m)?, fwt(m)?))
}

fn summarize(config: &ExperimentConfig, method: Method, corpus: &Corpus, streams: &[TaskStream], runs: &[LifelongRun]) -> Result<Summary> {
    let mut perms = Vec::with_capacity(runs.len());
    for (p, (stream, run)) in streams.iter().zip(runs).enumerate() {
        let (b, f) = transfer(&run.matrix)?;
        perms.push(PermutationSummary {
            permutation: p,
            fingerprint: stream.fingerprint.clone(),
            order: stream.order(),
            final_f1: *run.cumulative_f1.last().ok_or(EscoError::NoTypes)?,
            bwt: b,
            fwt: f,
            per_step_f1: run.cumulative_f1.clone(),
        });
    }
    let curves: Vec<RunCurve> = perms
        .iter()
        .map(|p| RunCurve {
            label: format!("p{}", p.permutation),
            f1: p.per_step_f1.clone(),
        })
        .collect();
    let rep = report(&curves)?;
    Ok(Summary {
        code_version: CODE_VERSION.to_string(),
        method,
        seed: config.seed,
        corpus_fingerprint: corpus.fingerprint(),
        final_mean_f1: mean(&perms.iter().map(|p| p.final_f1).collect::<Vec<_>>()),
        bwt: mean(&perms.iter().map(|p| p.bwt).collect::<Vec<_>>()),
        fwt: mean(&perms.iter().map(|p| p.fwt).collect::<Vec<_>>()),
        per_step_f1: rep.mean,
        per_step_variance: rep.variance,
        permutations: perms,
    })
}

/// Runs `method` on every stream in parallel; results keep stream order.
fn run_streams(
    config: &ExperimentConfig,
    method: Method,
    corpus: &Corpus,
    streams: &[TaskStream],
    checkpoints: Option<&Path>,
) -> Result<Vec<LifelongRun>> {
    let settings = config.settings(method, corpus)?;
    streams
        .par_iter()
        .enumerate()
        .map(|(p, stream)| {
            let mut on_task = |state: &crate::trainer::TrainState| match checkpoints {
                Some(dir) => state.save(&dir.join(format!("p{p}_task{}.json", state.k))),
                None => Ok(()),
            };
            run_lifelong_with(stream, &corpus.labels, &settings, &Herding, &mut on_task).map(|(run, _)| run)
        })
        .collect()
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| EscoError::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| EscoError::io(path, e))
}

fn fmt_f1(v: f64) -> String {
    format!("{v:.6}")
}

fn matrix_csv(m: &MetricMatrix) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["row".to_string()];
    header.extend((1..=m.n).map(|j| format!("task_{j}")));
    w.write_record(&header)?;
    let cell = |v: Option<f64>| v.map(fmt_f1).unwrap_or_default();
    for (i, row) in m.r.iter().enumerate() {
        let mut rec = vec![format!("after_{}", i + 1)];
        rec.extend(row.iter().map(|&v| cell(v)));
        w.write_record(&rec)?;
    }
    let mut rec = vec!["baseline".to_string()];
    rec.extend(m.b.iter().map(|&v| cell(v)));
    w.write_record(&rec)?;
    w.into_inner().map_err(|e| EscoError::Ragged(e.to_string()))
}

fn metrics_csv(summary: &Summary) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["permutation", "step", "f1"])?;
    for p in &summary.permutations {
        for (s, v) in p.per_step_f1.iter().enumerate() {
            w.write_record([p.permutation.to_string(), (s + 1).to_string(), fmt_f1(*v)])?;
        }
    }
    for (name, values) in [("mean", &summary.per_step_f1), ("variance", &summary.per_step_variance)] {
        for (s, v) in values.iter().enumerate() {
            w.write_record([name.to_string(), (s + 1).to_string(), fmt_f1(*v)])?;
        }
    }
    w.into_inner().map_err(|e| EscoError::Ragged(e.to_string()))
}

#[derive(Serialize)]
struct LogRecord<'a> {
    permutation: usize,
    #[serde(flatten)]
    epoch: &'a EpochLog,
}

/// Trains `config.method` on every permutation and writes the results
/// directory. Returns the summary.
pub fn cmd_run(config: &ExperimentConfig, out: &Path) -> Result<Summary> {
    let (corpus, streams) = config_streams(config)?;
    let ckpt_dir = out.join("checkpoints");
    create_dir(&ckpt_dir)?;
    write_file(&out.join("config.toml"), config.to_toml()?.as_bytes())?;

    let runs = run_streams(config, config.method, &corpus, &streams, Some(&ckpt_dir))?;

    let mut logs = Vec::new();
    for (p, run) in runs.iter().enumerate() {
        for epoch in &run.logs {
            serde_json::to_writer(&mut logs, &LogRecord { permutation: p, epoch })?;
            logs.push(b'\n');
        }
        write_file(&out.join(format!("matrix_p{p}.csv")), &matrix_csv(&run.matrix)?)?;
    }
    write_file(&out.join("logs.jsonl"), &logs)?;

    let summary = summarize(config, config.method, &corpus, &streams, &runs)?;
    write_file(&out.join("metrics.csv"), &metrics_csv(&summary)?)?;
    let mut json = serde_json::to_vec_pretty(&summary)?;
    json.push(b'\n');
    write_file(&out.join("summary.json"), &json)?;
    Ok(summary)
}

/// Final F1 (percent) per method and permutation on shared streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub methods: Vec<Method>,
    /// `f1[m][p]`, in percent.
    pub f1: Vec<Vec<f64>>,
    /// Stream fingerprints seen by each method, per permutation.
    pub fingerprints: Vec<Vec<String>>,
}

impl AblationTable {
    pub fn mean(&self, m: usize) -> f64 {
        mean(&self.f1[m])
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let n = self.f1.first().map_or(0, Vec::len);
        let mut header = vec!["method".to_string()];
        header.extend((1..=n).map(|p| format!("perm_{p}")));
        header.push("mean".into());
        w.write_record(&header)?;
        for (m, method) in self.methods.iter().enumerate() {
            let mut rec = vec![method.to_string()];
            rec.extend(self.f1[m].iter().map(|v| format!("{v:.2}")));
            rec.push(format!("{:.2}", self.mean(m)));
            w.write_record(&rec)?;
        }
        w.into_inner().map_err(|e| EscoError::Ragged(e.to_string()))
    }
}

pub const ABLATION_METHODS: [Method; 4] = [Method::Esco, Method::NoMargin, Method::NoCalibration, Method::NoFkt];

/// Runs each of `methods` on the config's streams. Every method sees the
/// same streams and seed.
pub fn ablation(config: &ExperimentConfig, methods: &[Method]) -> Result<AblationTable> {
    let (corpus, streams) = config_streams(config)?;
    let runs = methods
        .par_iter()
        .map(|&m| run_streams(config, m, &corpus, &streams, None))
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable {
        methods: methods.to_vec(),
        f1: runs
            .iter()
            .map(|rs| rs.iter().map(|r| 100.0 * r.cumulative_f1.last().copied().unwrap_or(0.0)).collect())
            .collect(),
        fingerprints: methods
            .iter()
            .map(|_| streams.iter().map(|s| s.fingerprint.clone()).collect())
            .collect(),
    })
}

/// The ablation table over esco and its three ablations; writes
/// `ablation.csv` into `out`.
pub fn cmd_ablate(config: &ExperimentConfig, out: &Path) -> Result<AblationTable> {
    let table = ablation(config, &ABLATION_METHODS)?;
    create_dir(out)?;
    write_file(&out.join("config.toml"), config.to_toml()?.as_bytes())?;
    write_file(&out.join("ablation.csv"), &table.to_csv()?)?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub size: usize,
    pub method: Method,
    /// Mean final F1 over permutations, in percent.
    pub final_f1: f64,
}

pub const SWEEP_METHODS: [Method; 2] = [Method::Esco, Method::ReplayOnly];

/// Final F1 of esco and replay-only for each memory size.
pub fn sweep_memory(config: &ExperimentConfig, sizes: &[usize]) -> Result<Vec<SweepPoint>> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(EscoError::Config("memory sizes must be a non-empty list of values >= 1".into()));
    }
    let arms: Vec<(usize, Method)> = sizes
        .iter()
        .flat_map(|&s| SWEEP_METHODS.iter().map(move |&m| (s, m)))
        .collect();
    arms.par_iter()
        .map(|&(size, method)| {
            let cfg = ExperimentConfig {
                hp: HyperParams {
                    mem_per_type: size,
                    ..config.hp.clone()
                },
                ..config.clone()
            };
            let table = ablation(&cfg, &[method])?;
            Ok(SweepPoint {
                size,
                method,
                final_f1: table.mean(0),
            })
        })
        .collect()
}

pub fn cmd_sweep_memory(config: &ExperimentConfig, sizes: &[usize], out: &Path) -> Result<Vec<SweepPoint>> {
    let points = sweep_memory(config, sizes)?;
    create_dir(out)?;
    write_file(&out.join("config.toml"), config.to_toml()?.as_bytes())?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["size", "method", "final_f1"])?;
    for p in &points {
        w.write_record([p.size.to_string(), p.method.to_string(), format!("{:.2}", p.final_f1)])?;
    }
    let bytes = w.into_inner().map_err(|e| EscoError::Ragged(e.to_string()))?;
    write_file(&out.join("sweep.csv"), &bytes)?;
    Ok(points)
}

pub fn load_summary(dir: &Path) -> Result<Summary> {
    let path = dir.join("summary.json");
    let bytes = fs::read(&path).map_err(|e| EscoError::io(&path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// A CSV comparing the summaries of several results directories.
pub fn cmd_report<W: Write>(dirs: &[PathBuf], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dir", "method", "seed", "permutations", "final_f1", "bwt", "fwt"])?;
    for dir in dirs {
        let s = load_summary(dir)?;
        w.write_record([
            dir.display().to_string(),
            s.method.to_string(),
            s.seed.to_string(),
            s.permutations.len().to_string(),
            format!("{:.2}", 100.0 * s.final_mean_f1),
            format!("{:.2}", s.bwt),
            format!("{:.2}", s.fwt),
        ])?;
    }
    w.flush().map_err(|e| EscoError::io(Path::new("<report>"), e))
}
