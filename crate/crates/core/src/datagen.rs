//! Synthetic span corpora and the line-delimited JSON dump format.
//!
//! Dump format, one span per line:
//! `{"sample_id":0,"start_feat":[..],"end_feat":[..],"label":"type_00","text":".."}`
//! with `text` optional. Floats are written in shortest round-trip decimal.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{EscoError, Result};
use crate::model::SpanSample;
use crate::numerics::norm;
use crate::stream::Corpus;

/// Gaussian type clusters with centers on a sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_types: usize,
    pub samples_per_type: usize,
    pub d_enc: usize,
    /// Within-cluster standard deviation.
    pub sigma: f64,
    /// Radius of the sphere the centers lie on.
    pub rho: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_types: 20,
            samples_per_type: 60,
            d_enc: 16,
            sigma: 0.34,
            rho: 1.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d_enc < 2 {
            return Err(EscoError::Config("d_enc must be >= 2".into()));
        }
        if self.n_types < 2 {
            return Err(EscoError::Config("n_types must be >= 2".into()));
        }
        if !(self.sigma > 0.0) || !(self.rho > 0.0) {
            return Err(EscoError::Config("sigma and rho must be > 0".into()));
        }
        if self.samples_per_type < 1 {
            return Err(EscoError::Config("samples_per_type must be >= 1".into()));
        }
        Ok(())
    }

    /// The overlap knob σ/ρ.
    pub fn overlap(&self) -> f64 {
        self.sigma / self.rho
    }
}

/// Type centers, drawn uniformly on the radius-ρ sphere.
pub fn centers(spec: &SynthSpec) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.n_types)
        .map(|_| loop {
            let v: Vec<f64> = (0..spec.d_enc).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = norm(&v);
            if n > 1e-12 {
                break v.iter().map(|x| x * spec.rho / n).collect();
            }
        })
        .collect()
}

/// Samples `samples_per_type` spans per type; start and end features are
/// independent draws from `N(center, σ²I)`.
pub fn generate(spec: &SynthSpec) -> Result<Corpus> {
    spec.validate()?;
    let centers = centers(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0x5EED));
    let noise = Normal::new(0.0, spec.sigma).map_err(|e| EscoError::Config(e.to_string()))?;
    let mut samples = Vec::with_capacity(spec.n_types * spec.samples_per_type);
    for (label, c) in centers.iter().enumerate() {
        for _ in 0..spec.samples_per_type {
            let mut draw = || -> Vec<f64> { c.iter().map(|m| m + noise.sample(&mut rng)).collect() };
            let start_feat = draw();
            let end_feat = draw();
            samples.push(SpanSample {
                sample_id: samples.len() as u64,
                start_feat,
                end_feat,
                label,
                task_id: 0,
            });
        }
    }
    Ok(Corpus {
        labels: (0..spec.n_types).map(|l| format!("type_{l:02}")).collect(),
        samples,
    })
}

/// Mean over types of (distance from the type's empirical centroid to the
/// nearest other centroid) minus twice the type's RMS spread. Shrinks as the
/// clusters overlap more.
pub fn mean_center_margin(corpus: &Corpus) -> f64 {
    let dim = corpus.feature_dim().unwrap_or(0) * 2;
    let n_types = corpus.labels.len();
    let mut sums = vec![vec![0.0; dim]; n_types];
    let mut counts = vec![0usize; n_types];
    let joined = |s: &SpanSample| -> Vec<f64> { s.start_feat.iter().chain(&s.end_feat).copied().collect() };
    for s in &corpus.samples {
        for (a, b) in sums[s.label].iter_mut().zip(joined(s)) {
            *a += b;
        }
        counts[s.label] += 1;
    }
    let means: Vec<Vec<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s.iter().map(|v| v / c.max(1) as f64).collect())
        .collect();
    let mut spread = vec![0.0; n_types];
    for s in &corpus.samples {
        let d2: f64 = joined(s).iter().zip(&means[s.label]).map(|(a, b)| (a - b).powi(2)).sum();
        spread[s.label] += d2;
    }
    let dist = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt() };
    let present: Vec<usize> = (0..n_types).filter(|&t| counts[t] > 0).collect();
    let margins: Vec<f64> = present
        .iter()
        .map(|&t| {
            let nearest = present
                .iter()
                .filter(|&&o| o != t)
                .map(|&o| dist(&means[t], &means[o]))
                .fold(f64::INFINITY, f64::min);
            nearest - 2.0 * (spread[t] / counts[t] as f64).sqrt()
        })
        .collect();
    margins.iter().sum::<f64>() / margins.len().max(1) as f64
}

#[derive(Debug, Serialize, Deserialize)]
struct DumpRecord {
    sample_id: u64,
    start_feat: Vec<f64>,
    end_feat: Vec<f64>,
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

/// Parses the line-delimited dump format. Labels are interned in order of
/// first appearance. Blank lines are skipped.
pub fn read_dump<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut labels: Vec<String> = Vec::new();
    let mut samples = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| EscoError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| EscoError::Parse { line: line_no, message };
        // NaN/Infinity are not JSON; reject them with the line number too.
        let rec: DumpRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let d = *dim.get_or_insert(rec.start_feat.len());
        if rec.start_feat.len() != d || rec.end_feat.len() != d || d == 0 {
            return Err(parse_err(format!(
                "feature dims {}/{} do not match {d}",
                rec.start_feat.len(),
                rec.end_feat.len()
            )));
        }
        if rec.start_feat.iter().chain(&rec.end_feat).any(|v| !v.is_finite()) {
            return Err(parse_err("non-finite feature value".into()));
        }
        if samples.iter().any(|s: &SpanSample| s.sample_id == rec.sample_id) {
            return Err(parse_err(format!("duplicate sample_id {}", rec.sample_id)));
        }
        let label = match labels.iter().position(|l| *l == rec.label) {
            Some(p) => p,
            None => {
                labels.push(rec.label);
                labels.len() - 1
            }
        };
        samples.push(SpanSample {
            sample_id: rec.sample_id,
            start_feat: rec.start_feat,
            end_feat: rec.end_feat,
            label,
            task_id: 0,
        });
    }
    if samples.is_empty() {
        return Err(EscoError::EmptyCorpus);
    }
    Ok(Corpus { labels, samples })
}

pub fn load_dump(path: &Path) -> Result<Corpus> {
    let file = fs::File::open(path).map_err(|e| EscoError::io(path, e))?;
    read_dump(BufReader::new(file))
}

pub fn write_dump<W: Write>(corpus: &Corpus, mut out: W) -> Result<()> {
    for s in &corpus.samples {
        let rec = DumpRecord {
            sample_id: s.sample_id,
            start_feat: s.start_feat.clone(),
            end_feat: s.end_feat.clone(),
            label: corpus.labels[s.label].clone(),
            text: None,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n").map_err(|e| EscoError::io("<dump>", e))?;
    }
    Ok(())
}

pub fn save_dump(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_dump(corpus, &mut buf)?;
    fs::write(path, buf).map_err(|e| EscoError::io(path, e))
}
