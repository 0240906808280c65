//! Class-incremental task streams: disjoint type partitions, stratified
//! per-type splits, order permutations and cumulative test sets.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{EscoError, Result};
use crate::model::SpanSample;

/// A labeled span corpus. `labels[i]` is the name of label id `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub labels: Vec<String>,
    pub samples: Vec<SpanSample>,
}

impl Corpus {
    pub fn feature_dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.start_feat.len())
    }

    /// SHA-256 over label names, sample ids, labels and feature bits.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for name in &self.labels {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
        }
        for s in &self.samples {
            h.update(s.sample_id.to_le_bytes());
            h.update((s.label as u64).to_le_bytes());
            for v in s.start_feat.iter().chain(&s.end_feat) {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex(&h.finalize())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskData {
    /// 1-based.
    pub task_id: usize,
    /// Labels of this task, in registration order.
    pub types: Vec<usize>,
    pub train: Vec<SpanSample>,
    pub valid: Vec<SpanSample>,
    pub test: Vec<SpanSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStream {
    pub tasks: Vec<TaskData>,
    pub permutation: usize,
    pub fingerprint: String,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// The type sets in task order.
    pub fn order(&self) -> Vec<Vec<usize>> {
        self.tasks.iter().map(|t| t.types.clone()).collect()
    }

    /// Test sets of tasks `1..=k`, concatenated.
    pub fn cumulative_test(&self, k: usize) -> Result<Vec<SpanSample>> {
        cumulative_test(self, k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamSpec {
    pub n_tasks: usize,
    /// Train / valid / test fractions per type.
    pub split_ratios: [f64; 3],
    pub split_seed: u64,
    pub permutation_seed: u64,
}

impl Default for StreamSpec {
    fn default() -> Self {
        StreamSpec {
            n_tasks: 5,
            split_ratios: [0.6, 0.2, 0.2],
            split_seed: 0,
            permutation_seed: 0,
        }
    }
}

impl StreamSpec {
    fn validate(&self) -> Result<()> {
        if self.n_tasks < 1 {
            return Err(EscoError::Config("n_tasks must be >= 1".into()));
        }
        let [a, b, c] = self.split_ratios;
        if [a, b, c].iter().any(|r| !(*r > 0.0) || !r.is_finite()) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(EscoError::Config("split ratios must be positive and sum to 1".into()));
        }
        Ok(())
    }
}

struct Split {
    train: Vec<SpanSample>,
    valid: Vec<SpanSample>,
    test: Vec<SpanSample>,
}

/// Per-type stratified split; every split receives at least one sample.
fn stratify(corpus: &Corpus, spec: &StreamSpec) -> Result<BTreeMap<usize, Split>> {
    let mut by_label: BTreeMap<usize, Vec<SpanSample>> = BTreeMap::new();
    for s in &corpus.samples {
        by_label.entry(s.label).or_default().push(s.clone());
    }
    let mut out = BTreeMap::new();
    for (label, mut samples) in by_label {
        let n = samples.len();
        if n < 3 {
            return Err(EscoError::TypeTooSmall { label, count: n });
        }
        samples.sort_by_key(|s| s.sample_id);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.split_seed ^ (label as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        samples.shuffle(&mut rng);
        let n_valid = ((n as f64 * spec.split_ratios[1]).round() as usize).max(1);
        let n_test = ((n as f64 * spec.split_ratios[2]).round() as usize).max(1);
        if n_valid + n_test >= n {
            return Err(EscoError::TypeTooSmall { label, count: n });
        }
        let test = samples.split_off(n - n_test);
        let valid = samples.split_off(n - n_test - n_valid);
        out.insert(
            label,
            Split {
                train: samples,
                valid,
                test,
            },
        );
    }
    Ok(out)
}

/// Seeded assignment of types to tasks: shuffle, then cut into groups whose
/// sizes differ by at most one (larger groups first).
fn partition(labels: &[usize], n_tasks: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order = labels.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = order.len() / n_tasks;
    let extra = order.len() % n_tasks;
    let mut groups = Vec::with_capacity(n_tasks);
    let mut it = order.into_iter();
    for g in 0..n_tasks {
        let size = base + usize::from(g < extra);
        groups.push(it.by_ref().take(size).collect());
    }
    groups
}

fn assemble(splits: &BTreeMap<usize, Split>, groups: Vec<Vec<usize>>, permutation: usize, fingerprint: String) -> TaskStream {
    let tasks = groups
        .into_iter()
        .enumerate()
        .map(|(i, types)| {
            let task_id = i + 1;
            let collect = |pick: fn(&Split) -> &Vec<SpanSample>| -> Vec<SpanSample> {
                types
                    .iter()
                    .flat_map(|l| pick(&splits[l]).iter().cloned())
                    .map(|mut s| {
                        s.task_id = task_id;
                        s
                    })
                    .collect()
            };
            TaskData {
                task_id,
                train: collect(|s| &s.train),
                valid: collect(|s| &s.valid),
                test: collect(|s| &s.test),
                types,
            }
        })
        .collect();
    TaskStream {
        tasks,
        permutation,
        fingerprint,
    }
}

fn stream_fingerprint(corpus_fp: &str, spec: &StreamSpec, perm_seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(corpus_fp.as_bytes());
    h.update((spec.n_tasks as u64).to_le_bytes());
    for r in spec.split_ratios {
        h.update(r.to_bits().to_le_bytes());
    }
    h.update(spec.split_seed.to_le_bytes());
    h.update(perm_seed.to_le_bytes());
    hex(&h.finalize())
}

fn corpus_labels(corpus: &Corpus, n_tasks: usize) -> Result<Vec<usize>> {
    if corpus.samples.is_empty() {
        return Err(EscoError::EmptyCorpus);
    }
    let mut labels: Vec<usize> = corpus.samples.iter().map(|s| s.label).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() < n_tasks {
        return Err(EscoError::TooFewTypes {
            types: labels.len(),
            tasks: n_tasks,
        });
    }
    Ok(labels)
}

/// Splits `corpus` into `spec.n_tasks` tasks with disjoint type sets.
pub fn build_stream(corpus: &Corpus, spec: &StreamSpec) -> Result<TaskStream> {
    spec.validate()?;
    let labels = corpus_labels(corpus, spec.n_tasks)?;
    let splits = stratify(corpus, spec)?;
    let groups = partition(&labels, spec.n_tasks, spec.permutation_seed);
    let fp = stream_fingerprint(&corpus.fingerprint(), spec, spec.permutation_seed);
    Ok(assemble(&splits, groups, 0, fp))
}

/// `count` streams that share per-type splits but use different seeded
/// type-to-task orders. The first is the base order of `spec`. Later orders
/// are re-drawn until they differ from all earlier ones (when enough
/// distinct orders exist).
pub fn permutations(corpus: &Corpus, spec: &StreamSpec, count: usize) -> Result<Vec<TaskStream>> {
    spec.validate()?;
    if count < 1 {
        return Err(EscoError::InvalidCount("permutation count must be >= 1".into()));
    }
    let labels = corpus_labels(corpus, spec.n_tasks)?;
    let splits = stratify(corpus, spec)?;
    let corpus_fp = corpus.fingerprint();
    let mut seen: Vec<Vec<Vec<usize>>> = Vec::new();
    let mut streams = Vec::with_capacity(count);
    let mut seed = spec.permutation_seed;
    for p in 0..count {
        let mut groups = partition(&labels, spec.n_tasks, seed);
        for _ in 0..64 {
            if !seen.contains(&groups) {
                break;
            }
            seed = seed.wrapping_add(1);
            groups = partition(&labels, spec.n_tasks, seed);
        }
        seen.push(groups.clone());
        let fp = stream_fingerprint(&corpus_fp, spec, seed);
        streams.push(assemble(&splits, groups, p, fp));
        seed = seed.wrapping_add(1);
    }
    Ok(streams)
}

/// `D̂_test^k`: the test splits of tasks 1..=k.
pub fn cumulative_test(stream: &TaskStream, k: usize) -> Result<Vec<SpanSample>> {
    if k < 1 || k > stream.len() {
        return Err(EscoError::TaskOutOfRange { k, n: stream.len() });
    }
    Ok(stream.tasks[..k].iter().flat_map(|t| t.test.iter().cloned()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn corpus(types: usize, per_type: usize) -> Corpus {
        let mut samples = Vec::new();
        for label in 0..types {
            for i in 0..per_type {
                let id = (label * per_type + i) as u64;
                samples.push(SpanSample {
                    sample_id: id,
                    start_feat: vec![id as f64, 0.5],
                    end_feat: vec![label as f64, -0.5],
                    label,
                    task_id: 0,
                });
            }
        }
        Corpus {
            labels: (0..types).map(|l| format!("type_{l:02}")).collect(),
            samples,
        }
    }

    fn spec(n_tasks: usize, seed: u64) -> StreamSpec {
        StreamSpec {
            n_tasks,
            permutation_seed: seed,
            ..Default::default()
        }
    }

    #[test]
    fn single_task_holds_every_type() {
        let s = build_stream(&corpus(6, 10), &spec(1, 0)).unwrap();
        assert_eq!(s.len(), 1);
        let mut types = s.tasks[0].types.clone();
        types.sort();
        assert_eq!(types, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn twenty_types_five_tasks_gives_groups_of_four() {
        let s = build_stream(&corpus(20, 10), &spec(5, 3)).unwrap();
        assert!(s.tasks.iter().all(|t| t.types.len() == 4));
        let s = build_stream(&corpus(7, 10), &spec(3, 3)).unwrap();
        let sizes: Vec<usize> = s.tasks.iter().map(|t| t.types.len()).collect();
        assert_eq!(sizes, vec![3, 2, 2]);
    }

    #[test]
    fn streams_are_deterministic_and_seed_dependent() {
        let c = corpus(20, 10);
        assert_eq!(build_stream(&c, &spec(5, 1)).unwrap(), build_stream(&c, &spec(5, 1)).unwrap());
        let base = build_stream(&c, &spec(5, 0)).unwrap().order();
        let differing = (1..=10)
            .filter(|&seed| build_stream(&c, &spec(5, seed)).unwrap().order() != base)
            .count();
        assert_eq!(differing, 10);
    }

    #[test]
    fn disjointness_and_stratification() {
        let c = corpus(12, 9);
        let s = build_stream(&c, &spec(4, 7)).unwrap();
        let mut types = HashSet::new();
        let mut ids = HashSet::new();
        for t in &s.tasks {
            for &l in &t.types {
                assert!(types.insert(l), "type {l} in two tasks");
                for split in [&t.train, &t.valid, &t.test] {
                    assert!(split.iter().any(|x| x.label == l));
                }
            }
            for x in t.train.iter().chain(&t.valid).chain(&t.test) {
                assert!(t.types.contains(&x.label));
                assert_eq!(x.task_id, t.task_id);
                assert!(ids.insert(x.sample_id), "sample {} repeated", x.sample_id);
            }
        }
        assert_eq!(types.len(), 12);
        assert_eq!(ids.len(), c.samples.len());
    }

    #[test]
    fn errors() {
        assert!(matches!(build_stream(&corpus(3, 10), &spec(4, 0)), Err(EscoError::TooFewTypes { .. })));
        assert!(matches!(build_stream(&corpus(3, 2), &spec(1, 0)), Err(EscoError::TypeTooSmall { .. })));
        let empty = Corpus { labels: vec![], samples: vec![] };
        assert!(matches!(build_stream(&empty, &spec(1, 0)), Err(EscoError::EmptyCorpus)));
        let bad = StreamSpec { split_ratios: [0.5, 0.5, 0.5], ..spec(1, 0) };
        assert!(build_stream(&corpus(3, 10), &bad).is_err());
        // Three samples is the minimum.
        assert!(build_stream(&corpus(3, 3), &spec(1, 0)).is_ok());
    }

    #[test]
    fn cumulative_test_sets() {
        let s = build_stream(&corpus(10, 10), &spec(5, 2)).unwrap();
        assert_eq!(cumulative_test(&s, 1).unwrap(), s.tasks[0].test);
        for k in 1..=5 {
            let expected: usize = s.tasks[..k].iter().map(|t| t.test.len()).sum();
            assert_eq!(s.cumulative_test(k).unwrap().len(), expected);
        }
        let all: HashSet<u64> = cumulative_test(&s, 5).unwrap().iter().map(|x| x.sample_id).collect();
        let total: usize = s.tasks.iter().map(|t| t.test.len()).sum();
        assert_eq!(all.len(), total);
        assert!(cumulative_test(&s, 0).is_err());
        assert!(cumulative_test(&s, 6).is_err());
    }

    #[test]
    fn permutations_share_splits_and_differ_in_order() {
        let c = corpus(20, 10);
        let sp = spec(5, 11);
        let one = permutations(&c, &sp, 1).unwrap();
        assert_eq!(one[0].order(), build_stream(&c, &sp).unwrap().order());

        let perms = permutations(&c, &sp, 5).unwrap();
        for i in 0..5 {
            for j in i + 1..5 {
                assert_ne!(perms[i].order(), perms[j].order());
                assert_ne!(perms[i].fingerprint, perms[j].fingerprint);
            }
        }
        let test_ids = |s: &TaskStream| -> Vec<u64> {
            let mut v: Vec<u64> = s.tasks.iter().flat_map(|t| t.test.iter().map(|x| x.sample_id)).collect();
            v.sort();
            v
        };
        for p in &perms {
            let mut types: Vec<usize> = p.order().concat();
            types.sort();
            assert_eq!(types, (0..20).collect::<Vec<_>>());
            assert_eq!(test_ids(p), test_ids(&perms[0]));
        }
        assert!(permutations(&c, &sp, 0).is_err());
    }
}
