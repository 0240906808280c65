//! Micro-F1 tallies, the task accuracy matrix and the backward/forward
//! transfer metrics derived from it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{EscoError, Result};

/// Global confusion tallies for single-label span classification.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2·TP / (2·TP + FP + FN)`; 0 when there is nothing to score.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-label tallies plus their micro aggregate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub micro: Counts,
    pub per_label: BTreeMap<usize, Counts>,
}

impl F1Report {
    /// Records one prediction. A wrong prediction is a false positive for the
    /// predicted label and a false negative for the gold label.
    pub fn record(&mut self, gold: usize, predicted: usize) {
        if gold == predicted {
            self.micro.tp += 1;
            self.per_label.entry(gold).or_default().tp += 1;
        } else {
            self.micro.fp += 1;
            self.micro.fn_ += 1;
            self.per_label.entry(predicted).or_default().fp += 1;
            self.per_label.entry(gold).or_default().fn_ += 1;
        }
    }

    pub fn micro_f1(&self) -> f64 {
        self.micro.f1()
    }
}

/// `R[i][j]`: F1 on task `j`'s test set after training task `i` (0-based
/// here), plus the random-init baselines `b[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMatrix {
    pub n: usize,
    pub r: Vec<Vec<Option<f64>>>,
    pub b: Vec<Option<f64>>,
}

impl MetricMatrix {
    pub fn new(n: usize) -> Self {
        MetricMatrix {
            n,
            r: vec![vec![None; n]; n],
            b: vec![None; n],
        }
    }

    /// Builds a matrix from 0-based rows; `NaN` marks an absent entry.
    pub fn from_rows(rows: &[Vec<f64>], baselines: &[f64]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) || (!baselines.is_empty() && baselines.len() != n) {
            return Err(EscoError::Ragged("metric matrix must be square".into()));
        }
        let opt = |v: f64| if v.is_nan() { None } else { Some(v) };
        let mut m = MetricMatrix::new(n);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                m.r[i][j] = opt(v);
            }
        }
        for (j, &v) in baselines.iter().enumerate() {
            m.b[j] = opt(v);
        }
        Ok(m)
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.r[i][j] = Some(value);
    }

    pub fn get(&self, i: usize, j: usize) -> Result<f64> {
        self.r
            .get(i)
            .and_then(|row| row.get(j))
            .copied()
            .flatten()
            .ok_or(EscoError::MissingEntry { row: i + 1, col: j + 1 })
    }

    pub fn diagonal_complete(&self) -> bool {
        (0..self.n).all(|i| self.r[i][i].is_some())
    }
}

/// `(1/(n−1)) Σ_{i<n} (R[n][i] − R[i][i])`, in percentage points.
pub fn bwt(m: &MetricMatrix) -> Result<f64> {
    if m.n < 2 {
        return Err(EscoError::InvalidCount("BWT needs at least 2 tasks".into()));
    }
    let last = m.n - 1;
    let mut sum = 0.0;
    for i in 0..last {
        sum += m.get(last, i)? - m.get(i, i)?;
    }
    Ok(100.0 * sum / last as f64)
}

/// `(1/(n−1)) Σ_{i≥2} (R[i−1][i] − b[i])`, in percentage points.
pub fn fwt(m: &MetricMatrix) -> Result<f64> {
    if m.n < 2 {
        return Err(EscoError::InvalidCount("FWT needs at least 2 tasks".into()));
    }
    let mut sum = 0.0;
    for i in 1..m.n {
        let base = m.b[i].ok_or(EscoError::MissingEntry { row: 0, col: i + 1 })?;
        sum += m.get(i - 1, i)? - base;
    }
    Ok(100.0 * sum / (m.n - 1) as f64)
}

/// Per-step F1 of one run (one task order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCurve {
    pub label: String,
    pub f1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub mean: Vec<f64>,
    /// Population variance across runs.
    pub variance: Vec<f64>,
    pub runs: Vec<RunCurve>,
}

/// Mean and variance of per-step F1 across runs.
pub fn report(runs: &[RunCurve]) -> Result<Report> {
    let first = runs
        .first()
        .ok_or_else(|| EscoError::InvalidCount("report needs at least one run".into()))?;
    let steps = first.f1.len();
    if runs.iter().any(|r| r.f1.len() != steps) {
        return Err(EscoError::Ragged("runs have different step counts".into()));
    }
    let k = runs.len() as f64;
    let mean: Vec<f64> = (0..steps).map(|s| runs.iter().map(|r| r.f1[s]).sum::<f64>() / k).collect();
    let variance = (0..steps)
        .map(|s| runs.iter().map(|r| (r.f1[s] - mean[s]).powi(2)).sum::<f64>() / k)
        .collect();
    Ok(Report {
        mean,
        variance,
        runs: runs.to_vec(),
    })
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    assert!(n > 0, "median of empty slice");
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const NA: f64 = f64::NAN;

    #[test]
    fn f1_from_counts() {
        let c = Counts { tp: 3, fp: 1, fn_: 2 };
        assert!((c.f1() - 6.0 / 9.0).abs() < 1e-15);
        assert_eq!(Counts::default().f1(), 0.0);
        assert!((c.precision() - 0.75).abs() < 1e-15);
        assert!((c.recall() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn report_tallies() {
        let mut all_right = F1Report::default();
        let mut all_wrong = F1Report::default();
        for g in 0..4 {
            all_right.record(g, g);
            all_wrong.record(g, (g + 1) % 4);
        }
        assert_eq!(all_right.micro_f1(), 1.0);
        assert_eq!(all_wrong.micro_f1(), 0.0);
        assert_eq!(all_wrong.per_label[&1], Counts { tp: 0, fp: 1, fn_: 1 });
    }

    #[test]
    fn bwt_two_tasks() {
        let m = MetricMatrix::from_rows(&[vec![0.8, NA], vec![0.6, 0.7]], &[]).unwrap();
        assert!((bwt(&m).unwrap() - -20.0).abs() < 1e-12);
    }

    #[test]
    fn bwt_zero_without_forgetting() {
        let m = MetricMatrix::from_rows(&[vec![0.5, NA, NA], vec![0.5, 0.9, NA], vec![0.5, 0.9, 0.3]], &[]).unwrap();
        assert_eq!(bwt(&m).unwrap(), 0.0);
    }

    #[test]
    fn fwt_two_tasks() {
        let m = MetricMatrix::from_rows(&[vec![0.9, 0.5], vec![0.4, 0.8]], &[NA, 0.3]).unwrap();
        assert!((fwt(&m).unwrap() - 20.0).abs() < 1e-12);
        let m = MetricMatrix::from_rows(&[vec![0.9, 0.3], vec![0.4, 0.8]], &[NA, 0.3]).unwrap();
        assert_eq!(fwt(&m).unwrap(), 0.0);
    }

    #[test]
    fn missing_entries_are_errors() {
        let m = MetricMatrix::from_rows(&[vec![NA, NA], vec![0.6, 0.7]], &[]).unwrap();
        assert!(matches!(bwt(&m), Err(EscoError::MissingEntry { row: 1, col: 1 })));
        assert!(fwt(&m).is_err());
        assert!(bwt(&MetricMatrix::new(1)).is_err());
        assert!(MetricMatrix::from_rows(&[vec![0.1], vec![0.2, 0.3]], &[]).is_err());
    }

    #[test]
    fn report_aggregates() {
        let single = report(&[RunCurve { label: "a".into(), f1: vec![0.7, 0.5] }]).unwrap();
        assert_eq!(single.mean, vec![0.7, 0.5]);
        assert_eq!(single.variance, vec![0.0, 0.0]);
        let two = report(&[
            RunCurve { label: "a".into(), f1: vec![0.4] },
            RunCurve { label: "b".into(), f1: vec![0.6] },
        ])
        .unwrap();
        assert!((two.mean[0] - 0.5).abs() < 1e-15);
        assert!((two.variance[0] - 0.01).abs() < 1e-15);
        assert!(report(&[]).is_err());
        assert!(report(&[
            RunCurve { label: "a".into(), f1: vec![0.4] },
            RunCurve { label: "b".into(), f1: vec![0.6, 0.1] },
        ])
        .is_err());
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    proptest::proptest! {
        #[test]
        fn report_mean_is_bounded(runs in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 4), 1..6)) {
            let curves: Vec<RunCurve> = runs.iter().map(|f1| RunCurve { label: String::new(), f1: f1.clone() }).collect();
            let r = report(&curves).unwrap();
            for s in 0..4 {
                let lo = runs.iter().map(|v| v[s]).fold(f64::INFINITY, f64::min);
                let hi = runs.iter().map(|v| v[s]).fold(f64::NEG_INFINITY, f64::max);
                proptest::prop_assert!(r.mean[s] >= lo - 1e-12 && r.mean[s] <= hi + 1e-12);
            }
        }

        #[test]
        fn bwt_is_linear_in_deviations(
            diag in proptest::collection::vec(0.2f64..0.8, 4),
            dev in proptest::collection::vec(-0.2f64..0.2, 3),
            scale in 0.0f64..1.0,
        ) {
            let build = |s: f64| {
                let mut rows = vec![vec![NA; 4]; 4];
                for i in 0..4 {
                    rows[i][i] = diag[i];
                }
                for i in 0..3 {
                    rows[3][i] = diag[i] + s * dev[i];
                }
                MetricMatrix::from_rows(&rows, &[]).unwrap()
            };
            let full = bwt(&build(1.0)).unwrap();
            let scaled = bwt(&build(scale)).unwrap();
            proptest::prop_assert!((scaled - scale * full).abs() < 1e-9);
        }
    }
}
