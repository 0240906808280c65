//! Prompt-entangled span classifier.
//!
//! A span is represented by the start and end feature vectors of an external
//! encoder. The span head maps their concatenation through a one-layer tanh
//! FFN to the span representation, and a linear classifier produces one logit
//! per registered type. Every type also owns a learnable prompt vector; the
//! prompt projection maps it into span-representation space and its inner
//! product with the span representation is added to that type's logit.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{EscoError, Result};
use crate::numerics::{axpy, dot, ensure_finite, tanh_backward, tanh_vec, Mat};

/// One labeled span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanSample {
    pub sample_id: u64,
    pub start_feat: Vec<f64>,
    pub end_feat: Vec<f64>,
    /// Corpus-level label id (index into the corpus label inventory).
    pub label: usize,
    /// 1-based task the sample was assigned to; 0 before stream construction.
    pub task_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeEntry {
    pub label: usize,
    pub name: String,
    pub task_id: usize,
}

/// Registered types in registration order. The position of a type in this
/// list is its type id: its classifier row and its prompt index.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeRegistry {
    entries: Vec<TypeEntry>,
}

impl TypeRegistry {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[TypeEntry] {
        &self.entries
    }

    pub fn type_id(&self, label: usize) -> Option<usize> {
        self.entries.iter().position(|e| e.label == label)
    }

    pub fn require(&self, label: usize) -> Result<usize> {
        self.type_id(label).ok_or(EscoError::UnknownLabel(label))
    }

    pub fn contains(&self, label: usize) -> bool {
        self.type_id(label).is_some()
    }

    /// Labels in type-id order (the cumulative type set).
    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.label).collect()
    }

    /// Labels registered by one task, in type-id order.
    pub fn task_labels(&self, task_id: usize) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.task_id == task_id)
            .map(|e| e.label)
            .collect()
    }

    fn push(&mut self, entry: TypeEntry) {
        self.entries.push(entry);
    }
}

/// How the prompts of a newly added task are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptInit {
    /// Seeded Gaussian draw.
    Random,
    /// Copy the prompts learned for the previous task (cyclically). Falls back
    /// to `Random` when there is no previous task.
    FromPrevious,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_enc: usize,
    pub d_rep: usize,
    pub d_prompt: usize,
    /// Std of new classifier rows.
    pub classifier_init_std: f64,
    /// Std of randomly initialized prompts.
    pub prompt_init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_enc: 16,
            d_rep: 32,
            d_prompt: 16,
            classifier_init_std: 0.01,
            prompt_init_std: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanHead {
    /// `d_rep × 2·d_enc`
    pub ffn_w: Mat,
    pub ffn_b: Vec<f64>,
    /// `|types| × d_rep`
    pub cls_w: Mat,
    pub cls_b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBank {
    /// One prompt per registered type, in type-id order (the accumulated view).
    pub prompts: Vec<Vec<f64>>,
    /// Number of prompts contributed by each task, in task order.
    pub task_sizes: Vec<usize>,
    /// `d_rep × d_prompt`
    pub proj_w: Mat,
    pub proj_b: Vec<f64>,
}

impl PromptBank {
    /// Prompts of the `i`-th grown task (0-based).
    pub fn task_prompts(&self, i: usize) -> &[Vec<f64>] {
        let start: usize = self.task_sizes[..i].iter().sum();
        &self.prompts[start..start + self.task_sizes[i]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub z_span: Vec<f64>,
    pub z_prompt: Vec<f64>,
    pub combined: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub registry: TypeRegistry,
    pub head: SpanHead,
    pub prompts: PromptBank,
}

fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, std: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, std).expect("finite non-negative std");
    (0..n).map(|_| normal.sample(rng)).collect()
}

fn gaussian_mat<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Mat {
    let data = gaussian_vec(rng, rows * cols, std);
    Mat::from_fn(rows, cols, |r, c| data[r * cols + c])
}

impl Model {
    /// Fresh model with no registered types. FFN weights use a
    /// `1/sqrt(fan_in)` Gaussian init; biases start at zero.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        if config.d_enc == 0 || config.d_rep == 0 || config.d_prompt == 0 {
            return Err(EscoError::Config("model dimensions must be positive".into()));
        }
        if !(config.classifier_init_std >= 0.0 && config.prompt_init_std >= 0.0) {
            return Err(EscoError::Config("init std must be non-negative".into()));
        }
        let d_in = 2 * config.d_enc;
        let ffn_w = gaussian_mat(rng, config.d_rep, d_in, 1.0 / (d_in as f64).sqrt());
        let proj_w = gaussian_mat(
            rng,
            config.d_rep,
            config.d_prompt,
            1.0 / (config.d_prompt as f64).sqrt(),
        );
        Ok(Model {
            head: SpanHead {
                ffn_w,
                ffn_b: vec![0.0; config.d_rep],
                cls_w: Mat::zeros(0, config.d_rep),
                cls_b: Vec::new(),
            },
            prompts: PromptBank {
                prompts: Vec::new(),
                task_sizes: Vec::new(),
                proj_w,
                proj_b: vec![0.0; config.d_rep],
            },
            registry: TypeRegistry::default(),
            config,
        })
    }

    pub fn num_types(&self) -> usize {
        self.registry.len()
    }

    fn check_sync(&self) -> Result<()> {
        let (p, c, t) = (
            self.prompts.prompts.len(),
            self.head.cls_w.rows(),
            self.registry.len(),
        );
        if p != t || c != t || self.head.cls_b.len() != t {
            return Err(EscoError::PromptBankOutOfSync {
                prompts: p,
                classes: c,
                types: t,
            });
        }
        Ok(())
    }

    /// Registers the types of a new task, growing the classifier and prompt
    /// bank. Existing rows and prompts are left untouched.
    pub fn grow_for_task<R: Rng + ?Sized>(
        &mut self,
        task_id: usize,
        new_types: &[(usize, String)],
        init: PromptInit,
        rng: &mut R,
    ) -> Result<()> {
        for (i, (label, _)) in new_types.iter().enumerate() {
            if self.registry.contains(*label) || new_types[..i].iter().any(|(l, _)| l == label) {
                return Err(EscoError::TypeOverlap(*label));
            }
        }
        if new_types.is_empty() {
            return Ok(());
        }
        self.check_sync()?;

        let n = new_types.len();
        for _ in 0..n {
            let row = gaussian_vec(rng, self.config.d_rep, self.config.classifier_init_std);
            self.head.cls_w.push_row(&row)?;
            self.head.cls_b.push(0.0);
        }

        let previous = match (init, self.prompts.task_sizes.len()) {
            (PromptInit::FromPrevious, t) if t > 0 => Some(self.prompts.task_prompts(t - 1).to_vec()),
            _ => None,
        };
        let new_prompts: Vec<Vec<f64>> = match previous {
            Some(prev) => (0..n).map(|i| prev[i % prev.len()].clone()).collect(),
            None => (0..n)
                .map(|_| gaussian_vec(rng, self.config.d_prompt, self.config.prompt_init_std))
                .collect(),
        };
        self.prompts.prompts.extend(new_prompts);
        self.prompts.task_sizes.push(n);

        for (label, name) in new_types {
            self.registry.push(TypeEntry {
                label: *label,
                name: name.clone(),
                task_id,
            });
        }
        Ok(())
    }

    /// Prompt projections `tanh(W_p p_j + b_p)` for every registered type.
    pub fn project_prompts(&self) -> Result<Vec<Vec<f64>>> {
        self.prompts
            .prompts
            .iter()
            .map(|p| {
                let mut u = self.prompts.proj_w.matvec(p)?;
                axpy(1.0, &self.prompts.proj_b, &mut u);
                Ok(tanh_vec(&u))
            })
            .collect()
    }

    /// Read-only forward context; prompt projections are computed once.
    pub fn forward_ctx(&self) -> Result<ForwardCtx<'_>> {
        self.check_sync()?;
        Ok(ForwardCtx {
            model: self,
            projected: self.project_prompts()?,
        })
    }

    pub fn span_rep(&self, sample: &SpanSample) -> Result<Vec<f64>> {
        Ok(span_forward(self, sample)?.1)
    }

    pub fn forward_logits(&self, sample: &SpanSample) -> Result<Logits> {
        self.forward_ctx()?.logits(sample)
    }

    pub fn predict(&self, sample: &SpanSample) -> Result<usize> {
        self.forward_ctx()?.predict(sample)
    }

    /// Parameters in a fixed order: FFN W, FFN b, classifier W, classifier b,
    /// projection W, projection b, prompts.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.head.ffn_w.data());
        out.extend_from_slice(&self.head.ffn_b);
        out.extend_from_slice(self.head.cls_w.data());
        out.extend_from_slice(&self.head.cls_b);
        out.extend_from_slice(self.prompts.proj_w.data());
        out.extend_from_slice(&self.prompts.proj_b);
        for p in &self.prompts.prompts {
            out.extend_from_slice(p);
        }
        out
    }

    /// Inverse of [`Model::flatten_params`].
    pub fn load_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.flatten_params().len();
        if flat.len() != expected {
            return Err(EscoError::shape("load_flat_params", expected, flat.len()));
        }
        let mut rest = flat;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        take(self.head.ffn_w.data_mut());
        take(&mut self.head.ffn_b);
        take(self.head.cls_w.data_mut());
        take(&mut self.head.cls_b);
        take(self.prompts.proj_w.data_mut());
        take(&mut self.prompts.proj_b);
        for p in &mut self.prompts.prompts {
            take(p);
        }
        Ok(())
    }

    /// One plain gradient-descent step.
    pub fn sgd_step(&mut self, lr: f64, grads: &Gradients) {
        axpy(-lr, grads.ffn_w.data(), self.head.ffn_w.data_mut());
        axpy(-lr, &grads.ffn_b, &mut self.head.ffn_b);
        axpy(-lr, grads.cls_w.data(), self.head.cls_w.data_mut());
        axpy(-lr, &grads.cls_b, &mut self.head.cls_b);
        axpy(-lr, grads.proj_w.data(), self.prompts.proj_w.data_mut());
        axpy(-lr, &grads.proj_b, &mut self.prompts.proj_b);
        for (p, g) in self.prompts.prompts.iter_mut().zip(&grads.prompts) {
            axpy(-lr, g, p);
        }
    }
}

/// Concatenated input and span representation.
fn span_forward(model: &Model, sample: &SpanSample) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = model.config.d_enc;
    if sample.start_feat.len() != d || sample.end_feat.len() != d {
        return Err(EscoError::shape(
            "span_rep",
            format!("{d}+{d}"),
            format!("{}+{}", sample.start_feat.len(), sample.end_feat.len()),
        ));
    }
    let mut input = Vec::with_capacity(2 * d);
    input.extend_from_slice(&sample.start_feat);
    input.extend_from_slice(&sample.end_feat);
    ensure_finite("span features", &input)?;
    let mut a = model.head.ffn_w.matvec(&input)?;
    axpy(1.0, &model.head.ffn_b, &mut a);
    Ok((input, tanh_vec(&a)))
}

pub struct ForwardCtx<'a> {
    model: &'a Model,
    projected: Vec<Vec<f64>>,
}

/// Intermediate values of one span's forward pass, kept for backward.
#[derive(Debug, Clone)]
pub struct SpanForward {
    pub input: Vec<f64>,
    pub rep: Vec<f64>,
    pub logits: Logits,
}

impl<'a> ForwardCtx<'a> {
    pub fn model(&self) -> &'a Model {
        self.model
    }

    pub fn forward(&self, sample: &SpanSample) -> Result<SpanForward> {
        let (input, rep) = span_forward(self.model, sample)?;
        let mut z_span = self.model.head.cls_w.matvec(&rep)?;
        axpy(1.0, &self.model.head.cls_b, &mut z_span);
        let z_prompt: Vec<f64> = self.projected.iter().map(|q| dot(q, &rep)).collect();
        let combined = z_span.iter().zip(&z_prompt).map(|(a, b)| a + b).collect();
        Ok(SpanForward {
            input,
            rep,
            logits: Logits {
                z_span,
                z_prompt,
                combined,
            },
        })
    }

    pub fn logits(&self, sample: &SpanSample) -> Result<Logits> {
        Ok(self.forward(sample)?.logits)
    }

    /// Argmax of the combined logits; ties go to the lowest type id.
    pub fn predict(&self, sample: &SpanSample) -> Result<usize> {
        if self.model.num_types() == 0 {
            return Err(EscoError::NoTypes);
        }
        Ok(argmax(&self.logits(sample)?.combined))
    }

    /// Argmax restricted to `allowed` type ids (forced choice).
    pub fn predict_masked(&self, sample: &SpanSample, allowed: &[usize]) -> Result<usize> {
        let combined = self.logits(sample)?.combined;
        let mut best: Option<usize> = None;
        let mut sorted = allowed.to_vec();
        sorted.sort_unstable();
        for t in sorted {
            if t >= combined.len() {
                return Err(EscoError::TargetOutOfRange {
                    target: t,
                    classes: combined.len(),
                });
            }
            if best.is_none_or(|b| combined[t] > combined[b]) {
                best = Some(t);
            }
        }
        best.ok_or(EscoError::NoTypes)
    }
}

/// Index of the maximum; the first maximum wins.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Gradient buffers mirroring [`Model`]'s trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub ffn_w: Mat,
    pub ffn_b: Vec<f64>,
    pub cls_w: Mat,
    pub cls_b: Vec<f64>,
    pub proj_w: Mat,
    pub proj_b: Vec<f64>,
    pub prompts: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        let h = &model.head;
        let p = &model.prompts;
        Gradients {
            ffn_w: Mat::zeros(h.ffn_w.rows(), h.ffn_w.cols()),
            ffn_b: vec![0.0; h.ffn_b.len()],
            cls_w: Mat::zeros(h.cls_w.rows(), h.cls_w.cols()),
            cls_b: vec![0.0; h.cls_b.len()],
            proj_w: Mat::zeros(p.proj_w.rows(), p.proj_w.cols()),
            proj_b: vec![0.0; p.proj_b.len()],
            prompts: p.prompts.iter().map(|v| vec![0.0; v.len()]).collect(),
        }
    }

    /// `self += alpha · other`
    pub fn add_scaled(&mut self, alpha: f64, other: &Gradients) {
        axpy(alpha, other.ffn_w.data(), self.ffn_w.data_mut());
        axpy(alpha, &other.ffn_b, &mut self.ffn_b);
        axpy(alpha, other.cls_w.data(), self.cls_w.data_mut());
        axpy(alpha, &other.cls_b, &mut self.cls_b);
        axpy(alpha, other.proj_w.data(), self.proj_w.data_mut());
        axpy(alpha, &other.proj_b, &mut self.proj_b);
        for (a, b) in self.prompts.iter_mut().zip(&other.prompts) {
            axpy(alpha, b, a);
        }
    }

    /// Same order as [`Model::flatten_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.ffn_w.data());
        out.extend_from_slice(&self.ffn_b);
        out.extend_from_slice(self.cls_w.data());
        out.extend_from_slice(&self.cls_b);
        out.extend_from_slice(self.proj_w.data());
        out.extend_from_slice(&self.proj_b);
        for p in &self.prompts {
            out.extend_from_slice(p);
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.flatten().iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

/// Accumulates gradients over a batch. Prompt-projection gradients are
/// collected per type and pushed through the projection once in
/// [`Tape::finish`].
pub struct Tape<'a> {
    ctx: ForwardCtx<'a>,
    grads: Gradients,
    d_projected: Vec<Vec<f64>>,
}

impl<'a> Tape<'a> {
    pub fn new(model: &'a Model) -> Result<Self> {
        let ctx = model.forward_ctx()?;
        let d_projected = vec![vec![0.0; model.config.d_rep]; ctx.projected.len()];
        Ok(Tape {
            grads: Gradients::zeros_like(model),
            ctx,
            d_projected,
        })
    }

    pub fn model(&self) -> &'a Model {
        self.ctx.model
    }

    pub fn forward(&self, sample: &SpanSample) -> Result<SpanForward> {
        self.ctx.forward(sample)
    }

    /// Backpropagates `∂L/∂combined` (if any) and an extra `∂L/∂rep` (if any)
    /// for one span.
    pub fn backward(&mut self, fwd: &SpanForward, d_logits: Option<&[f64]>, d_rep_extra: Option<&[f64]>) {
        let model = self.ctx.model;
        let mut d_rep = vec![0.0; fwd.rep.len()];
        if let Some(g) = d_logits {
            // combined = z_span + z_prompt, so both receive g unchanged.
            self.grads.cls_w.add_outer(1.0, g, &fwd.rep);
            axpy(1.0, g, &mut self.grads.cls_b);
            for (j, &gj) in g.iter().enumerate() {
                if gj == 0.0 {
                    continue;
                }
                axpy(gj, model.head.cls_w.row(j), &mut d_rep);
                axpy(gj, &self.ctx.projected[j], &mut d_rep);
                axpy(gj, &fwd.rep, &mut self.d_projected[j]);
            }
        }
        if let Some(extra) = d_rep_extra {
            axpy(1.0, extra, &mut d_rep);
        }
        let d_pre = tanh_backward(&fwd.rep, &d_rep);
        self.grads.ffn_w.add_outer(1.0, &d_pre, &fwd.input);
        axpy(1.0, &d_pre, &mut self.grads.ffn_b);
    }

    pub fn finish(mut self) -> Gradients {
        let model = self.ctx.model;
        for (j, dq) in self.d_projected.iter().enumerate() {
            if dq.iter().all(|v| *v == 0.0) {
                continue;
            }
            let du = tanh_backward(&self.ctx.projected[j], dq);
            let prompt = &model.prompts.prompts[j];
            self.grads.proj_w.add_outer(1.0, &du, prompt);
            axpy(1.0, &du, &mut self.grads.proj_b);
            let dp = model
                .prompts
                .proj_w
                .matvec_t(&du)
                .expect("projection shape checked at construction");
            axpy(1.0, &dp, &mut self.grads.prompts[j]);
        }
        self.grads
    }
}
