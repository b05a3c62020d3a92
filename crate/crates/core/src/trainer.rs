//! Training loop: per-step case sampling, per-case gradients, optional
//! decoupling of the shared-group gradients, reduction and one optimizer
//! update. Also evaluation over every modality subset and multi-seed runs.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{GradientVector, Tensor};
use crate::cases::{sample_cases, CasePool, ModalityCase, PoolPolicy, SamplerConfig};
use crate::ds_model::{DsModel, LossKind, ModelSpec, MultimodalBatch, Targets};
use crate::error::{Error, Result};
use crate::gmd::{gmd_all, reduce, ConflictReport};
use crate::par::Schedule;
use crate::synth_data::{MultimodalDataset, Split};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            lr: 1e-3,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

impl OptimizerConfig {
    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr, .. } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.lr();
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::invalid(format!("optimizer lr must be positive, got {lr}")));
        }
        match *self {
            OptimizerConfig::Sgd { momentum, .. } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(Error::invalid(format!("momentum must be in [0, 1), got {momentum}")));
                }
            }
            OptimizerConfig::Adam { beta1, beta2, eps, .. } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                    return Err(Error::invalid("adam betas must be in [0, 1)"));
                }
                if !(eps.is_finite() && eps > 0.0) {
                    return Err(Error::invalid("adam eps must be positive"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub gmd_enabled: bool,
    #[serde(default)]
    pub sampler: SamplerConfig,
    pub loss: LossKind,
    pub seeds: Vec<u64>,
    /// Validation evaluation period in steps; 0 disables it.
    #[serde(default)]
    pub eval_every: u64,
    /// Keep raw and calibrated shared gradients in the conflict log.
    #[serde(default)]
    pub log_gradients: bool,
}

impl TrainConfig {
    pub fn validate(&self, modalities: usize) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds must not be empty"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("seeds must be distinct"));
        }
        self.optimizer.validate()?;
        // A one-case pool can only ever yield one case per step.
        if self.sampler.effective_pool(modalities)?.len() == 1 {
            self.sampler.validate_draw(modalities)
        } else {
            self.sampler.validate(modalities)
        }
    }

    /// Sampler used by the run with the given seed.
    pub fn sampler_for(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            seed: self.sampler.seed ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15),
            ..self.sampler.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerState {
    Sgd { velocity: Vec<f64> },
    Adam { m: Vec<f64>, v: Vec<f64>, t: u64 },
}

impl OptimizerState {
    pub fn new(cfg: &OptimizerConfig, n: usize) -> Self {
        match cfg {
            OptimizerConfig::Sgd { .. } => OptimizerState::Sgd { velocity: vec![0.0; n] },
            OptimizerConfig::Adam { .. } => OptimizerState::Adam {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        }
    }

    /// Applies one update in place.
    pub fn apply(&mut self, cfg: &OptimizerConfig, params: &mut [f64], grad: &[f64]) -> Result<()> {
        match (self, *cfg) {
            (OptimizerState::Sgd { velocity }, OptimizerConfig::Sgd { lr, momentum }) => {
                check_len(velocity.len(), params.len(), grad.len())?;
                for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
                    *v = momentum * *v + g;
                    *p -= lr * *v;
                }
            }
            (OptimizerState::Adam { m, v, t }, OptimizerConfig::Adam { lr, beta1, beta2, eps }) => {
                check_len(m.len(), params.len(), grad.len())?;
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t as i32);
                let c2 = 1.0 - beta2.powi(*t as i32);
                for (((p, m), v), &g) in params.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(grad) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
            _ => return Err(Error::invalid("optimizer state does not match optimizer config")),
        }
        Ok(())
    }
}

fn check_len(state: usize, params: usize, grad: usize) -> Result<()> {
    if state != params || grad != params {
        return Err(Error::shape(format!(
            "optimizer state has {state} entries, parameters {params}, gradient {grad}"
        )));
    }
    Ok(())
}

/// Everything needed to continue a run exactly where it stopped.
///
/// Randomness is a pure function of `(seed, step)`, so no generator state is
/// stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub model: DsModel,
    pub optimizer: OptimizerState,
    /// Steps completed so far.
    pub step: u64,
    pub seed: u64,
}

impl TrainState {
    pub fn new(model: DsModel, cfg: &OptimizerConfig, seed: u64) -> Self {
        let n = model.param_count();
        TrainState {
            model,
            optimizer: OptimizerState::new(cfg, n),
            step: 0,
            seed,
        }
    }

    /// Fresh state for a run: the model is initialized from the seed.
    pub fn init(
        spec: &ModelSpec,
        input_dims: &[usize],
        output_dim: usize,
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        let arch = spec.arch(input_dims, output_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = DsModel::init(arch, &mut rng)?;
        Ok(TrainState::new(model, &cfg.optimizer, seed))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let state: TrainState = serde_json::from_str(s)?;
        let n = state.model.param_count();
        let len = match &state.optimizer {
            OptimizerState::Sgd { velocity } => velocity.len(),
            OptimizerState::Adam { m, v, .. } => {
                if m.len() != v.len() {
                    return Err(Error::invalid("adam moments differ in length"));
                }
                m.len()
            }
        };
        if len != n {
            return Err(Error::invalid(format!(
                "optimizer state has {len} entries, model has {n} parameters"
            )));
        }
        Ok(state)
    }
}

/// What happened in one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Index of this step (the state's step counter before the update).
    pub step: u64,
    /// Loss per case, in `report.cases` order.
    pub losses: Vec<f64>,
    pub report: ConflictReport,
    /// Shared-group gradient of each case before calibration, in `report.cases` order.
    pub shared_raw: Vec<GradientVector>,
    /// The same after calibration (equal to `shared_raw` when decoupling is off).
    pub shared_calibrated: Vec<GradientVector>,
    /// Reduced update direction per group, in model group order.
    pub update: Vec<GradientVector>,
}

fn abort(step: u64, e: Error) -> Error {
    match e {
        Error::StepAborted { .. } => e,
        other => Error::StepAborted {
            step,
            source: Box::new(other),
        },
    }
}

/// Mini-batch rows for a step.
pub fn batch_indices(train: &[usize], batch_size: usize, seed: u64, step: u64) -> Vec<usize> {
    if batch_size >= train.len() {
        return train.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1 << 63) | step);
    rand::seq::index::sample(&mut rng, train.len(), batch_size)
        .into_iter()
        .map(|i| train[i])
        .collect()
}

/// One optimization step on `batch` with cases drawn by `sampler`.
pub fn train_step(
    state: &mut TrainState,
    batch: &MultimodalBatch,
    targets: &Targets,
    cfg: &TrainConfig,
    sampler: &SamplerConfig,
    schedule: Schedule,
) -> Result<StepRecord> {
    let step = state.step;
    let m = state.model.modalities();
    let cases = sample_cases(sampler, m, step).map_err(|e| abort(step, e))?;
    let model = &state.model;
    let per_case = schedule
        .map(&cases, |c| model.grad_case(batch, targets, c, cfg.loss))
        .into_iter()
        .collect::<Result<Vec<_>>>()
        .map_err(|e| abort(step, e))?;
    for g in &per_case {
        if !g.loss.is_finite() {
            return Err(abort(step, Error::NonFinite(format!("loss of case {}", g.case))));
        }
    }

    let entries: Vec<(ModalityCase, GradientVector)> = per_case.iter().map(|g| (g.case, g.shared.clone())).collect();
    let (calibrated, report) = if cfg.gmd_enabled {
        gmd_all(&entries, schedule).map_err(|e| abort(step, e))?
    } else {
        let report = ConflictReport::observe(&entries, schedule).map_err(|e| abort(step, e))?;
        (entries.iter().map(|(_, g)| g.clone()).collect(), report)
    };
    let shared = reduce(&calibrated)?;

    let mut update = Vec::with_capacity(m + 2);
    for i in 0..m {
        let mut acc = model.encoders()[i].zero_grad();
        for g in per_case.iter().filter(|g| g.case.contains(i)) {
            acc.axpy(1.0, &g.encoders[i]);
        }
        update.push(acc);
    }
    update.push(shared);
    update.push(reduce(&per_case.iter().map(|g| g.head.clone()).collect::<Vec<_>>())?);
    if let Some(bad) = update.iter().find(|g| !g.is_finite()) {
        return Err(abort(
            step,
            Error::NonFinite(format!("reduced gradient of group {}", bad.group_id())),
        ));
    }

    let mut params: Vec<f64> = state.model.groups().flat_map(|g| g.flatten()).collect();
    let flat_grad: Vec<f64> = update.iter().flat_map(|g| g.values().iter().copied()).collect();
    let mut optimizer = state.optimizer.clone();
    optimizer.apply(&cfg.optimizer, &mut params, &flat_grad)?;
    if params.iter().any(|p| !p.is_finite()) {
        return Err(abort(step, Error::NonFinite("parameters after update".into())));
    }
    let mut offset = 0;
    for g in state.model.groups_mut() {
        let n = g.param_count();
        g.assign_flat(&params[offset..offset + n])?;
        offset += n;
    }
    state.optimizer = optimizer;
    state.step += 1;

    Ok(StepRecord {
        step,
        losses: per_case.iter().map(|g| g.loss).collect(),
        report,
        shared_raw: entries.into_iter().map(|(_, g)| g).collect(),
        shared_calibrated: calibrated,
        update,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Mse,
}

impl Metric {
    pub fn for_loss(loss: LossKind) -> Self {
        match loss {
            LossKind::CrossEntropy => Metric::Accuracy,
            LossKind::Mse => Metric::Mse,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Mse => "mse",
        }
    }

    pub fn compute(self, prediction: &Tensor, targets: &Targets) -> Result<f64> {
        match (self, targets) {
            (Metric::Accuracy, Targets::Classes(labels)) => {
                let (n, c) = prediction.dims2()?;
                if n != labels.len() || n == 0 {
                    return Err(Error::shape(format!("{n} predictions for {} labels", labels.len())));
                }
                let correct = (0..n)
                    .filter(|&r| {
                        let row = &prediction.data()[r * c..(r + 1) * c];
                        let mut best = 0;
                        for (j, v) in row.iter().enumerate() {
                            if *v > row[best] {
                                best = j;
                            }
                        }
                        best == labels[r]
                    })
                    .count();
                Ok(correct as f64 / n as f64)
            }
            (Metric::Mse, Targets::Values(t)) => crate::ds_model::mse(prediction, t),
            (Metric::Accuracy, Targets::Values(_)) => Err(Error::invalid("accuracy needs class labels")),
            (Metric::Mse, Targets::Classes(_)) => Err(Error::invalid("mse needs real-valued targets")),
        }
    }
}

/// Metric per modality subset plus aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub metric: Metric,
    pub rows: Vec<(ModalityCase, f64)>,
    /// Mean over rows with the given number of missing modalities.
    pub by_missing: Vec<(usize, f64)>,
    /// Mean over all rows.
    pub average: f64,
}

impl EvalTable {
    pub fn get(&self, case: &ModalityCase) -> Option<f64> {
        self.rows.iter().find(|(c, _)| c == case).map(|&(_, v)| v)
    }
}

/// Evaluates `model` on every case admitted by `filter`.
pub fn evaluate_all_cases(
    model: &DsModel,
    batch: &MultimodalBatch,
    targets: &Targets,
    metric: Metric,
    filter: &PoolPolicy,
    schedule: Schedule,
) -> Result<EvalTable> {
    let cases = CasePool::new(filter, model.modalities())?.enumerate();
    let values = schedule
        .map(&cases, |c| {
            let (pred, _) = model.forward_case(batch, c)?;
            metric.compute(&pred, targets)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<(ModalityCase, f64)> = cases.into_iter().zip(values).collect();
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (c, v) in &rows {
        groups.entry(c.missing()).or_default().push(*v);
    }
    let by_missing = groups.into_iter().map(|(d, vs)| (d, mean(&vs))).collect();
    let average = mean(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    Ok(EvalTable {
        metric,
        rows,
        by_missing,
        average,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// One line of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub seed: u64,
    pub step: u64,
    /// Case bit string, or an aggregate label such as `missing1` or `all`.
    pub case_mask: String,
    pub metric_name: String,
    pub value: f64,
}

/// One line of `conflicts.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictLine {
    pub seed: u64,
    pub step: u64,
    pub losses: Vec<f64>,
    #[serde(flatten)]
    pub report: ConflictReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared_grads: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrated_grads: Option<Vec<Vec<f64>>>,
}

impl ConflictLine {
    pub fn from_record(seed: u64, record: &StepRecord, with_gradients: bool) -> Self {
        let dump = |gs: &[GradientVector]| gs.iter().map(|g| g.values().to_vec()).collect();
        ConflictLine {
            seed,
            step: record.step,
            losses: record.losses.clone(),
            report: record.report.clone(),
            shared_grads: with_gradients.then(|| dump(&record.shared_raw)),
            calibrated_grads: with_gradients.then(|| dump(&record.shared_calibrated)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed {
        step: Option<u64>,
        message: String,
        numerical: bool,
    },
}

/// Outcome of training with one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub status: RunStatus,
    pub metrics: Vec<MetricRow>,
    pub conflicts: Vec<ConflictLine>,
    pub final_eval: Option<EvalTable>,
    pub model: Option<DsModel>,
    pub wall_time_s: f64,
}

/// Mean and spread of one final metric across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub case_mask: String,
    pub metric_name: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub runs: Vec<SeedRun>,
    /// Across completed seeds; empty if none completed.
    pub summary: Vec<SummaryRow>,
}

impl RunArtifacts {
    pub fn all_completed(&self) -> bool {
        self.runs.iter().all(|r| r.status == RunStatus::Completed)
    }

    pub fn first_failure(&self) -> Option<&SeedRun> {
        self.runs.iter().find(|r| r.status != RunStatus::Completed)
    }

    pub fn summary_value(&self, case_mask: &str, metric_name: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| r.case_mask == case_mask && r.metric_name == metric_name)
            .map(|r| r.mean)
    }

    pub fn write_metrics_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "seed,step,case_mask,metric_name,value")?;
        for run in &self.runs {
            for r in &run.metrics {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    r.seed, r.step, r.case_mask, r.metric_name, r.value
                )?;
            }
        }
        Ok(())
    }

    pub fn write_conflicts_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for run in &self.runs {
            for line in &run.conflicts {
                serde_json::to_writer(&mut out, line)?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "case_mask,metric_name,mean,std,n")?;
        for r in &self.summary {
            writeln!(out, "{},{},{},{},{}", r.case_mask, r.metric_name, r.mean, r.std, r.n)?;
        }
        Ok(())
    }

    /// Final models of the completed seeds.
    pub fn model_bundle(&self) -> Result<Vec<u8>> {
        let models: Vec<(u64, &DsModel)> = self
            .runs
            .iter()
            .filter_map(|r| r.model.as_ref().map(|m| (r.seed, m)))
            .collect();
        encode_bundle(&models)
    }
}

const BUNDLE_MAGIC: &[u8; 8] = b"GMDBNDL1";

/// Packs `(seed, model)` pairs: magic, count, then per model its seed, byte
/// length and serialization.
pub fn encode_bundle(models: &[(u64, &DsModel)]) -> Result<Vec<u8>> {
    let mut out = BUNDLE_MAGIC.to_vec();
    out.extend_from_slice(&(models.len() as u32).to_le_bytes());
    for (seed, m) in models {
        let bytes = m.to_bytes()?;
        out.extend_from_slice(&seed.to_le_bytes());
        out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&bytes);
    }
    Ok(out)
}

pub fn decode_bundle(bytes: &[u8]) -> Result<Vec<(u64, DsModel)>> {
    let truncated = || Error::invalid("model bundle is truncated");
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        let s = bytes.get(*pos..*pos + n).ok_or_else(truncated)?;
        *pos += n;
        Ok(s)
    };
    let mut pos = 0;
    if take(&mut pos, 8)? != BUNDLE_MAGIC {
        return Err(Error::invalid("not a model bundle (bad magic)"));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().expect("4 bytes"));
    let mut models = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let seed = u64::from_le_bytes(take(&mut pos, 8)?.try_into().expect("8 bytes"));
        let len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().expect("8 bytes")) as usize;
        models.push((seed, DsModel::from_bytes(take(&mut pos, len)?)?));
    }
    if pos != bytes.len() {
        return Err(Error::invalid("trailing bytes after model bundle"));
    }
    Ok(models)
}

fn eval_rows(seed: u64, step: u64, prefix: &str, table: &EvalTable, aggregates: bool) -> Vec<MetricRow> {
    let name = format!("{prefix}_{}", table.metric.name());
    let mut rows: Vec<MetricRow> = table
        .rows
        .iter()
        .map(|(c, v)| MetricRow {
            seed,
            step,
            case_mask: c.bits(),
            metric_name: name.clone(),
            value: *v,
        })
        .collect();
    if aggregates {
        let agg = format!("{name}_mean");
        for &(d, v) in &table.by_missing {
            rows.push(MetricRow {
                seed,
                step,
                case_mask: format!("missing{d}"),
                metric_name: agg.clone(),
                value: v,
            });
        }
        rows.push(MetricRow {
            seed,
            step,
            case_mask: "all".into(),
            metric_name: agg,
            value: table.average,
        });
    }
    rows
}

/// Trains one seed to completion (or to the first aborted step).
pub fn train_seed(
    cfg: &TrainConfig,
    spec: &ModelSpec,
    data: &MultimodalDataset,
    seed: u64,
    schedule: Schedule,
) -> SeedRun {
    let start = Instant::now();
    let mut run = SeedRun {
        seed,
        status: RunStatus::Completed,
        metrics: Vec::new(),
        conflicts: Vec::new(),
        final_eval: None,
        model: None,
        wall_time_s: 0.0,
    };
    if let Err(e) = train_seed_inner(cfg, spec, data, seed, schedule, &mut run) {
        let step = match &e {
            Error::StepAborted { step, .. } => Some(*step),
            _ => None,
        };
        run.status = RunStatus::Failed {
            step,
            message: e.to_string(),
            numerical: e.is_numerical(),
        };
        run.model = None;
        run.final_eval = None;
    }
    run.wall_time_s = start.elapsed().as_secs_f64();
    run
}

fn train_seed_inner(
    cfg: &TrainConfig,
    spec: &ModelSpec,
    data: &MultimodalDataset,
    seed: u64,
    schedule: Schedule,
    run: &mut SeedRun,
) -> Result<()> {
    let metric = Metric::for_loss(cfg.loss);
    let sampler = cfg.sampler_for(seed);
    let mut state = TrainState::init(spec, &data.dims(), data.output_dim(), cfg, seed)?;
    let train = data.splits.get(Split::Train);
    if train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let val = (!data.splits.val.is_empty())
        .then(|| data.split_batch(Split::Val))
        .transpose()?;
    let all = PoolPolicy::All;
    while state.step < cfg.steps {
        let idx = batch_indices(train, cfg.batch_size, seed, state.step);
        let (batch, targets) = data.batch(&idx)?;
        let record = train_step(&mut state, &batch, &targets, cfg, &sampler, schedule)?;
        run.conflicts
            .push(ConflictLine::from_record(seed, &record, cfg.log_gradients));
        let done = state.step;
        if cfg.eval_every > 0 && done % cfg.eval_every == 0 && done < cfg.steps {
            run.metrics.push(MetricRow {
                seed,
                step: done,
                case_mask: "sampled".into(),
                metric_name: "train_loss".into(),
                value: mean(&record.losses),
            });
            if let Some((vb, vt)) = &val {
                let table = evaluate_all_cases(&state.model, vb, vt, metric, &all, schedule)?;
                run.metrics.extend(eval_rows(seed, done, "val", &table, false));
            }
        }
    }
    let (tb, tt) = if data.splits.test.is_empty() {
        data.split_batch(Split::Val)?
    } else {
        data.split_batch(Split::Test)?
    };
    if tt.is_empty() {
        return Err(Error::invalid("no test or validation rows to evaluate on"));
    }
    let table = evaluate_all_cases(&state.model, &tb, &tt, metric, &all, schedule)?;
    run.metrics.extend(eval_rows(seed, cfg.steps, "test", &table, true));
    run.final_eval = Some(table);
    run.model = Some(state.model);
    Ok(())
}

/// Trains every configured seed and summarizes the final test metrics.
///
/// Seeds run concurrently under [`Schedule::Parallel`]; each seed's results
/// do not depend on the schedule.
pub fn run_experiment(
    cfg: &TrainConfig,
    spec: &ModelSpec,
    data: &MultimodalDataset,
    schedule: Schedule,
) -> Result<RunArtifacts> {
    cfg.validate(data.modalities())?;
    spec.arch(&data.dims(), data.output_dim())?;
    let runs = schedule.map(&cfg.seeds, |&seed| train_seed(cfg, spec, data, seed, schedule));

    let mut by_key: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    let mut order: Vec<(String, String)> = Vec::new();
    for run in runs.iter().filter(|r| r.status == RunStatus::Completed) {
        for r in run.metrics.iter().filter(|r| r.step == cfg.steps) {
            let key = (r.case_mask.clone(), r.metric_name.clone());
            if !by_key.contains_key(&key) {
                order.push(key.clone());
            }
            by_key.entry(key).or_default().push(r.value);
        }
    }
    let summary = order
        .into_iter()
        .map(|key| {
            let vs = &by_key[&key];
            SummaryRow {
                case_mask: key.0,
                metric_name: key.1,
                mean: mean(vs),
                std: std_dev(vs),
                n: vs.len(),
            }
        })
        .collect();
    Ok(RunArtifacts { runs, summary })
}
