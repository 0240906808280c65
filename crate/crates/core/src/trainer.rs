//! Task-by-task training: growth with prompt transfer, SGD on the composite
//! objective with early stopping, memory and prototype refresh at task
//! boundaries, and the evaluation protocol that fills the metric matrix.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EscoError, Result};
use crate::losses::{loss_total, HyperParams, LossTerms, Objective, Separation};
use crate::memory::{compute_prototypes, ExemplarSelector, Herding, PrototypeStore, ReplayBuffer, ReplayCycle};
use crate::metrics::{F1Report, MetricMatrix};
use crate::model::{Model, ModelConfig, PromptInit, SpanSample};
use crate::stream::{TaskData, TaskStream};

/// Training method: the full objective or one of its ablations/baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Esco,
    NoMargin,
    NoCalibration,
    NoFkt,
    ReplayOnly,
    Finetune,
    EscoContrastive,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Esco,
        Method::NoMargin,
        Method::NoCalibration,
        Method::NoFkt,
        Method::ReplayOnly,
        Method::Finetune,
        Method::EscoContrastive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Esco => "esco",
            Method::NoMargin => "no-margin",
            Method::NoCalibration => "no-calibration",
            Method::NoFkt => "no-fkt",
            Method::ReplayOnly => "replay-only",
            Method::Finetune => "finetune",
            Method::EscoContrastive => "esco-contrastive",
        }
    }

    pub fn parse(name: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == name)
    }

    pub fn uses_memory(self) -> bool {
        self != Method::Finetune
    }

    pub fn objective(self) -> Objective {
        let separation = match self {
            Method::Esco | Method::NoCalibration | Method::NoFkt => Separation::Margin,
            Method::EscoContrastive => Separation::Contrastive,
            Method::NoMargin | Method::ReplayOnly | Method::Finetune => Separation::Off,
        };
        let calibration = matches!(
            self,
            Method::Esco | Method::NoMargin | Method::NoFkt | Method::EscoContrastive
        );
        Objective {
            separation,
            replay: self.uses_memory(),
            calibration,
        }
    }

    pub fn prompt_init(self) -> PromptInit {
        match self {
            Method::Esco | Method::NoMargin | Method::NoCalibration | Method::EscoContrastive => {
                PromptInit::FromPrevious
            }
            Method::NoFkt | Method::ReplayOnly | Method::Finetune => PromptInit::Random,
        }
    }

    /// Hyperparameters with the method's forced settings applied.
    pub fn effective_hp(self, hp: &HyperParams) -> HyperParams {
        let mut hp = hp.clone();
        if self.objective().separation == Separation::Off {
            hp.lambda1 = 0.0;
        }
        hp
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = EscoError;

    fn from_str(s: &str) -> Result<Self> {
        Method::parse(s).ok_or_else(|| EscoError::Config(format!("unknown method {s:?}")))
    }
}

/// Everything that changes between task boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Number of completed tasks.
    pub k: usize,
    pub model: Model,
    pub buffer: ReplayBuffer,
    pub prototypes: PrototypeStore,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::new(config, &mut rng)?;
        Ok(TrainState {
            k: 0,
            model,
            buffer: ReplayBuffer::default(),
            prototypes: PrototypeStore::default(),
            rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self)?;
        fs::write(path, json).map_err(|e| EscoError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| EscoError::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub task: usize,
    pub epoch: usize,
    pub loss_new: f64,
    pub loss_sim: f64,
    pub loss_mem: f64,
    pub loss_cal: f64,
    pub loss_total: f64,
    pub valid_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_valid_f1: f64,
}

/// Micro-F1 of `model.predict` over `samples`.
pub fn evaluate(model: &Model, samples: &[SpanSample]) -> Result<F1Report> {
    let ctx = model.forward_ctx()?;
    let labels = model.registry.labels();
    let mut report = F1Report::default();
    for s in samples {
        model.registry.require(s.label)?;
        let predicted = labels[ctx.predict(s)?];
        report.record(s.label, predicted);
    }
    Ok(report)
}

/// Forced-choice evaluation among `allowed` labels only.
pub fn evaluate_masked(model: &Model, samples: &[SpanSample], allowed: &[usize]) -> Result<F1Report> {
    let ctx = model.forward_ctx()?;
    let allowed_ids = allowed
        .iter()
        .map(|&l| model.registry.require(l))
        .collect::<Result<Vec<_>>>()?;
    let labels = model.registry.labels();
    let mut report = F1Report::default();
    for s in samples {
        if !allowed.contains(&s.label) {
            return Err(EscoError::UnknownLabel(s.label));
        }
        let predicted = labels[ctx.predict_masked(s, &allowed_ids)?];
        report.record(s.label, predicted);
    }
    Ok(report)
}

fn named(labels: &[usize], names: &[String]) -> Result<Vec<(usize, String)>> {
    labels
        .iter()
        .map(|&l| {
            names
                .get(l)
                .map(|n| (l, n.clone()))
                .ok_or(EscoError::UnknownLabel(l))
        })
        .collect()
}

/// Trains one task and refreshes memory and prototypes.
///
/// Validation F1 (new-task validation split plus all stored memory samples)
/// is measured after every epoch; the best epoch's parameters are restored
/// before memory selection. `patience == 0` disables early stopping.
pub fn train_task(
    state: &mut TrainState,
    task: &TaskData,
    label_names: &[String],
    hp: &HyperParams,
    method: Method,
    selector: &dyn ExemplarSelector,
    log: &mut dyn FnMut(EpochLog),
) -> Result<TaskSummary> {
    if task.task_id != state.k + 1 {
        return Err(EscoError::TaskOrder {
            expected: state.k + 1,
            got: task.task_id,
        });
    }
    hp.validate()?;
    let hp = method.effective_hp(hp);
    let objective = method.objective();
    let uses_memory = method.uses_memory();

    let new_types = named(&task.types, label_names)?;
    state
        .model
        .grow_for_task(task.task_id, &new_types, method.prompt_init(), &mut state.rng)?;

    let mut valid: Vec<SpanSample> = task.valid.clone();
    if uses_memory {
        valid.extend(state.buffer.samples().cloned());
    }

    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_model = state.model.clone();
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut epochs_run = 0;
    let mut cycle = ReplayCycle::default();
    let mut order = task.train.clone();

    for epoch in 1..=hp.epochs {
        epochs_run = epoch;
        order.sort_by_key(|s| s.sample_id);
        order.shuffle(&mut state.rng);
        let mut sums = LossTerms::default();
        let mut total_sum = 0.0;
        for (b, batch) in order.chunks(hp.batch_size).enumerate() {
            let mem_batch = if uses_memory {
                cycle.next_batch(&state.buffer, hp.batch_size, &mut state.rng)
            } else {
                Vec::new()
            };
            let total = loss_total(&state.model, batch, &mem_batch, &state.prototypes, &hp, objective)?;
            if !total.value.is_finite() || !total.grads.is_finite() {
                return Err(EscoError::Diverged {
                    task: task.task_id,
                    epoch,
                    batch: b,
                    terms: format!("{:?}", total.terms),
                });
            }
            state.model.sgd_step(hp.learning_rate, &total.grads);
            sums.new += total.terms.new;
            sums.sim += total.terms.sim;
            sums.mem += total.terms.mem;
            sums.cal += total.terms.cal;
            total_sum += total.value;
        }

        let f1 = evaluate(&state.model, &valid)?.micro_f1();
        log(EpochLog {
            task: task.task_id,
            epoch,
            loss_new: sums.new,
            loss_sim: sums.sim,
            loss_mem: sums.mem,
            loss_cal: sums.cal,
            loss_total: total_sum,
            valid_f1: f1,
        });
        if f1 > best_f1 {
            best_f1 = f1;
            best_model = state.model.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if hp.patience > 0 && since_best >= hp.patience {
                break;
            }
        }
    }
    state.model = best_model;

    if uses_memory {
        state.buffer.update(
            task.task_id,
            &task.types,
            &task.train,
            &state.model,
            hp.mem_per_type,
            selector,
        )?;
        state.prototypes = compute_prototypes(
            &state.buffer,
            &state.model,
            &state.model.registry.labels(),
            task.task_id,
        )?;
    }
    state.k = task.task_id;
    Ok(TaskSummary {
        task: task.task_id,
        epochs_run,
        best_epoch,
        best_valid_f1: best_f1,
    })
}

/// Seed for an auxiliary stream (`tag`, `index`) derived from the run seed
/// without touching the training RNG.
fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    // splitmix64 finalizer over a simple combination
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_PROBE: u64 = 1;
const TAG_BASELINE: u64 = 2;

/// Forward-transfer probe: F1 on the upcoming task's test set, restricted to
/// that task's types, for `model` provisionally grown with random rows and
/// prompts. Uses its own RNG so the training stream is unaffected.
pub fn transfer_probe(model: &Model, task: &TaskData, label_names: &[String], seed: u64) -> Result<f64> {
    let mut probe = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    probe.grow_for_task(task.task_id, &named(&task.types, label_names)?, PromptInit::Random, &mut rng)?;
    Ok(evaluate_masked(&probe, &task.test, &task.types)?.micro_f1())
}

/// The same probe on a freshly initialized model.
pub fn random_baseline(config: &ModelConfig, task: &TaskData, label_names: &[String], seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fresh = Model::new(config.clone(), &mut rng)?;
    transfer_probe(&fresh, task, label_names, derive_seed(seed, TAG_PROBE, 0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifelongRun {
    pub method: Method,
    pub matrix: MetricMatrix,
    /// F1 on the cumulative test set after each task.
    pub cumulative_f1: Vec<f64>,
    pub tasks: Vec<TaskSummary>,
    pub logs: Vec<EpochLog>,
}

/// Settings for one lifelong run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub hp: HyperParams,
    pub model: ModelConfig,
    pub method: Method,
}

/// Trains every task of `stream` in order, filling `R[i][j]` for `j ≤ i`,
/// the transfer probes `R[i−1][i]` and the baselines `b[i]`.
pub fn run_lifelong(stream: &TaskStream, label_names: &[String], settings: &RunSettings) -> Result<(LifelongRun, TrainState)> {
    run_lifelong_with(stream, label_names, settings, &Herding, &mut |_| Ok(()))
}

pub fn run_lifelong_with(
    stream: &TaskStream,
    label_names: &[String],
    settings: &RunSettings,
    selector: &dyn ExemplarSelector,
    on_task: &mut dyn FnMut(&TrainState) -> Result<()>,
) -> Result<(LifelongRun, TrainState)> {
    let n = stream.len();
    let seed = settings.hp.seed;
    let mut state = TrainState::new(settings.model.clone(), seed)?;
    let mut matrix = MetricMatrix::new(n);
    let mut cumulative_f1 = Vec::with_capacity(n);
    let mut tasks = Vec::with_capacity(n);
    let mut logs = Vec::new();

    for (i, task) in stream.tasks.iter().enumerate() {
        matrix.b[i] = Some(random_baseline(
            &settings.model,
            task,
            label_names,
            derive_seed(seed, TAG_BASELINE, i as u64),
        )?);
        if i > 0 {
            let probe = transfer_probe(&state.model, task, label_names, derive_seed(seed, TAG_PROBE, i as u64))?;
            matrix.set(i - 1, i, probe);
        }

        let summary = train_task(
            &mut state,
            task,
            label_names,
            &settings.hp,
            settings.method,
            selector,
            &mut |l| logs.push(l),
        )?;
        tasks.push(summary);
        on_task(&state)?;

        for (j, seen) in stream.tasks[..=i].iter().enumerate() {
            matrix.set(i, j, evaluate(&state.model, &seen.test)?.micro_f1());
        }
        cumulative_f1.push(evaluate(&state.model, &stream.cumulative_test(i + 1)?)?.micro_f1());
    }

    Ok((
        LifelongRun {
            method: settings.method,
            matrix,
            cumulative_f1,
            tasks,
            logs,
        },
        state,
    ))
}
