//! Replay memory: herding exemplar selection, the per-type replay buffer and
//! the prototype store derived from it.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EscoError, Result};
use crate::model::{Model, SpanSample};
use crate::numerics::axpy;

/// Picks exemplars for one type. Implementations return indices into
/// `candidates`, in selection order.
pub trait ExemplarSelector {
    fn select(&self, candidates: &[SpanSample], reps: &[Vec<f64>], l: usize) -> Result<Vec<usize>>;
}

/// Mean-matching greedy herding.
#[derive(Debug, Clone, Copy, Default)]
pub struct Herding;

impl ExemplarSelector for Herding {
    fn select(&self, candidates: &[SpanSample], reps: &[Vec<f64>], l: usize) -> Result<Vec<usize>> {
        herding_select(candidates, reps, l)
    }
}

/// Greedy herding: at every step pick the unchosen candidate that brings the
/// mean of the chosen representations closest (L2) to the mean of all
/// representations. Ties go to the lowest `sample_id`. Returns indices into
/// `candidates` in pick order; at most `l` of them.
pub fn herding_select(candidates: &[SpanSample], reps: &[Vec<f64>], l: usize) -> Result<Vec<usize>> {
    if l == 0 {
        return Err(EscoError::InvalidCount("herding budget l must be >= 1".into()));
    }
    if candidates.is_empty() {
        return Err(EscoError::EmptyCandidates);
    }
    if reps.len() != candidates.len() {
        return Err(EscoError::shape("herding_select", candidates.len(), reps.len()));
    }
    let dim = reps[0].len();
    if reps.iter().any(|r| r.len() != dim) {
        return Err(EscoError::Ragged("herding representations differ in dimension".into()));
    }
    let n = candidates.len();
    let mut mu = vec![0.0; dim];
    for r in reps {
        axpy(1.0, r, &mut mu);
    }
    mu.iter_mut().for_each(|v| *v /= n as f64);

    let budget = l.min(n);
    let mut chosen = Vec::with_capacity(budget);
    let mut taken = vec![false; n];
    let mut sum = vec![0.0; dim];
    for step in 0..budget {
        let denom = (step + 1) as f64;
        let mut best: Option<(f64, usize)> = None;
        for i in (0..n).filter(|&i| !taken[i]) {
            let dist2: f64 = (0..dim)
                .map(|d| {
                    let diff = mu[d] - (sum[d] + reps[i][d]) / denom;
                    diff * diff
                })
                .sum();
            let better = match best {
                None => true,
                Some((bd, bi)) => {
                    dist2 < bd || (dist2 == bd && candidates[i].sample_id < candidates[bi].sample_id)
                }
            };
            if better {
                best = Some((dist2, i));
            }
        }
        let (_, pick) = best.expect("budget never exceeds the candidate count");
        taken[pick] = true;
        axpy(1.0, &reps[pick], &mut sum);
        chosen.push(pick);
    }
    Ok(chosen)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub sample: SpanSample,
    pub task_id: usize,
    /// 0-based position in the herding order.
    pub rank: usize,
}

/// Per-label exemplar sets, each holding at most `l` samples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    buckets: BTreeMap<usize, Vec<Exemplar>>,
}

impl ReplayBuffer {
    pub fn from_buckets(buckets: BTreeMap<usize, Vec<Exemplar>>) -> Self {
        ReplayBuffer { buckets }
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.values().all(|b| b.is_empty())
    }

    /// Total number of stored samples.
    pub fn len(&self) -> usize {
        self.buckets.values().map(Vec::len).sum()
    }

    pub fn num_buckets(&self) -> usize {
        self.buckets.len()
    }

    pub fn bucket(&self, label: usize) -> Option<&[Exemplar]> {
        self.buckets.get(&label).map(Vec::as_slice)
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.buckets.keys().copied()
    }

    /// All stored samples, by label then rank.
    pub fn samples(&self) -> impl Iterator<Item = &SpanSample> {
        self.buckets.values().flatten().map(|e| &e.sample)
    }

    /// Runs selection for every label of a just-finished task and stores the
    /// picks. Representations come from `model` as it stands now; buckets of
    /// other labels are left untouched.
    pub fn update(
        &mut self,
        task_id: usize,
        labels: &[usize],
        train: &[SpanSample],
        model: &Model,
        l: usize,
        selector: &dyn ExemplarSelector,
    ) -> Result<()> {
        let mut staged = Vec::with_capacity(labels.len());
        for &label in labels {
            let candidates: Vec<SpanSample> = train.iter().filter(|s| s.label == label).cloned().collect();
            if candidates.is_empty() {
                return Err(EscoError::NoTrainingSamples(label));
            }
            let reps = candidates
                .iter()
                .map(|s| model.span_rep(s))
                .collect::<Result<Vec<_>>>()?;
            let picks = selector.select(&candidates, &reps, l)?;
            let bucket: Vec<Exemplar> = picks
                .into_iter()
                .enumerate()
                .map(|(rank, i)| Exemplar {
                    sample: candidates[i].clone(),
                    task_id,
                    rank,
                })
                .collect();
            staged.push((label, bucket));
        }
        for (label, bucket) in staged {
            if let Some(dup) = bucket
                .iter()
                .find(|e| self.samples().any(|s| s.sample_id == e.sample.sample_id))
            {
                return Err(EscoError::Config(format!(
                    "sample {} is already stored in memory",
                    dup.sample.sample_id
                )));
            }
            self.buckets.insert(label, bucket);
        }
        Ok(())
    }

    /// One epoch of seeded-shuffled batches covering every stored sample once.
    pub fn epoch_batches<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<Vec<SpanSample>> {
        let mut all: Vec<SpanSample> = self.samples().cloned().collect();
        all.shuffle(rng);
        all.chunks(batch_size.max(1)).map(<[SpanSample]>::to_vec).collect()
    }
}

/// Endless replay schedule: hands out memory batches, reshuffling whenever an
/// epoch over the buffer is exhausted.
#[derive(Debug, Clone, Default)]
pub struct ReplayCycle {
    pending: Vec<Vec<SpanSample>>,
}

impl ReplayCycle {
    pub fn next_batch<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        batch_size: usize,
        rng: &mut R,
    ) -> Vec<SpanSample> {
        if buffer.is_empty() {
            return Vec::new();
        }
        if self.pending.is_empty() {
            self.pending = buffer.epoch_batches(batch_size, rng);
            self.pending.reverse();
        }
        self.pending.pop().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub label: usize,
    pub vector: Vec<f64>,
    /// Number of completed tasks when the prototype was computed.
    pub computed_at: usize,
}

/// Mean span representation of each learned type's memory bucket. Entries are
/// kept in the order of the `types` list they were computed for.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrototypeStore {
    entries: Vec<Prototype>,
}

impl PrototypeStore {
    pub fn from_entries(entries: Vec<Prototype>) -> Self {
        PrototypeStore { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Prototype] {
        &self.entries
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|p| p.label).collect()
    }

    pub fn position(&self, label: usize) -> Option<usize> {
        self.entries.iter().position(|p| p.label == label)
    }

    pub fn get(&self, label: usize) -> Option<&[f64]> {
        self.entries.iter().find(|p| p.label == label).map(|p| p.vector.as_slice())
    }
}

/// `e_j = mean(span_rep(s) for s in M_j)` for every label in `types`.
pub fn compute_prototypes(
    buffer: &ReplayBuffer,
    model: &Model,
    types: &[usize],
    computed_at: usize,
) -> Result<PrototypeStore> {
    let entries = types
        .iter()
        .map(|&label| {
            let bucket = buffer
                .bucket(label)
                .filter(|b| !b.is_empty())
                .ok_or(EscoError::EmptyBucket(label))?;
            let mut mean = vec![0.0; model.config.d_rep];
            for e in bucket {
                axpy(1.0, &model.span_rep(&e.sample)?, &mut mean);
            }
            let n = bucket.len() as f64;
            mean.iter_mut().for_each(|v| *v /= n);
            if mean.iter().all(|v| *v == 0.0) {
                return Err(EscoError::DegeneratePrototype(label));
            }
            Ok(Prototype {
                label,
                vector: mean,
                computed_at,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PrototypeStore { entries })
}
