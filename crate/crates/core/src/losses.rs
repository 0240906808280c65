//! Training objectives: cross-entropy on new and replayed spans, the margin
//! separation loss against old prototypes, memory calibration toward own
//! prototypes, and their weighted combination.
//!
//! All losses are sums over the batch. Prototypes are constants: gradients
//! reach them only through the span representation of the sample.

use serde::{Deserialize, Serialize};

use crate::error::{EscoError, Result};
use crate::memory::PrototypeStore;
use crate::model::{Gradients, Model, SpanSample, Tape};
use crate::numerics::{axpy, cosine_sim_with_grad, hinge, softmax_ce};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    /// Margin for the separation hinge.
    pub m1: f64,
    /// Weight of the separation loss.
    pub lambda1: f64,
    /// Smoothing constant in `λ2 = s / (k + s)`.
    pub s: f64,
    /// Exemplars kept per type.
    pub mem_per_type: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            m1: -0.1,
            lambda1: 0.1,
            s: 50.0,
            mem_per_type: 20,
            epochs: 20,
            patience: 5,
            learning_rate: 0.05,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(EscoError::Config(msg.to_string()));
        if !(self.lambda1 >= 0.0) {
            return bad("lambda1 must be >= 0");
        }
        if !(self.s > 0.0) {
            return bad("s must be > 0");
        }
        if self.mem_per_type < 1 {
            return bad("mem_per_type must be >= 1");
        }
        if !(-1.0..=1.0).contains(&self.m1) {
            return bad("m1 must lie in [-1, 1]");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be finite and >= 0");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if self.epochs < 1 {
            return bad("epochs must be >= 1");
        }
        Ok(())
    }
}

/// Replay weight `s / (k + s)` for a batch holding `k_spans` target spans.
pub fn lambda2(k_spans: usize, s: f64) -> f64 {
    s / (k_spans as f64 + s)
}

#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub grads: Gradients,
}

fn cross_entropy_sum(model: &Model, batch: &[SpanSample]) -> Result<LossValue> {
    let mut tape = Tape::new(model)?;
    let mut value = 0.0;
    for s in batch {
        let target = model.registry.require(s.label)?;
        let fwd = tape.forward(s)?;
        let (loss, g) = softmax_ce(&fwd.logits.combined, target)?;
        value += loss;
        tape.backward(&fwd, Some(&g), None);
    }
    Ok(LossValue {
        value,
        grads: tape.finish(),
    })
}

/// Σ CE(Z_span + Z_prompt, y) over new-task spans.
pub fn loss_new(model: &Model, batch: &[SpanSample]) -> Result<LossValue> {
    cross_entropy_sum(model, batch)
}

/// Σ CE(Z_span + Z_prompt, y) over replayed memory spans.
pub fn loss_mem(model: &Model, batch: &[SpanSample]) -> Result<LossValue> {
    cross_entropy_sum(model, batch)
}

/// Σ_samples Σ_prototypes max(0, cos(rep, e) − m1).
pub fn loss_sim(model: &Model, batch: &[SpanSample], prototypes: &PrototypeStore, m1: f64) -> Result<LossValue> {
    let mut tape = Tape::new(model)?;
    let mut value = 0.0;
    if !prototypes.is_empty() {
        for s in batch {
            let fwd = tape.forward(s)?;
            let mut d_rep = vec![0.0; fwd.rep.len()];
            let mut active = false;
            for p in prototypes.entries() {
                let (cos, d_cos, _) = cosine_sim_with_grad(&fwd.rep, &p.vector)?;
                let (h, dh) = hinge(cos - m1);
                value += h;
                if dh != 0.0 {
                    active = true;
                    axpy(dh, &d_cos, &mut d_rep);
                }
            }
            if active {
                tape.backward(&fwd, None, Some(&d_rep));
            }
        }
    }
    Ok(LossValue {
        value,
        grads: tape.finish(),
    })
}

/// Softmax cross-entropy over cosine similarities to all prototypes, with
/// the sample's own prototype as target.
pub fn loss_cal(model: &Model, batch: &[SpanSample], prototypes: &PrototypeStore) -> Result<LossValue> {
    let mut tape = Tape::new(model)?;
    let mut value = 0.0;
    for s in batch {
        let target = prototypes
            .position(s.label)
            .ok_or(EscoError::MissingPrototype(s.label))?;
        let fwd = tape.forward(s)?;
        let mut sims = Vec::with_capacity(prototypes.len());
        let mut d_sims = Vec::with_capacity(prototypes.len());
        for p in prototypes.entries() {
            let (cos, d_cos, _) = cosine_sim_with_grad(&fwd.rep, &p.vector)?;
            sims.push(cos);
            d_sims.push(d_cos);
        }
        let (loss, g) = softmax_ce(&sims, target)?;
        value += loss;
        let mut d_rep = vec![0.0; fwd.rep.len()];
        for (gj, d_cos) in g.iter().zip(&d_sims) {
            axpy(*gj, d_cos, &mut d_rep);
        }
        tape.backward(&fwd, None, Some(&d_rep));
    }
    Ok(LossValue {
        value,
        grads: tape.finish(),
    })
}

/// Pairwise alternative to [`loss_sim`] that also uses positive pairs: new
/// spans get the negative hinge against every prototype; memory spans get
/// `1 − cos(rep, own)` plus the negative hinge against every other prototype.
pub fn loss_contrastive(
    model: &Model,
    new_batch: &[SpanSample],
    mem_batch: &[SpanSample],
    prototypes: &PrototypeStore,
    m1: f64,
) -> Result<LossValue> {
    let mut tape = Tape::new(model)?;
    let mut value = 0.0;
    if !prototypes.is_empty() {
        let tagged = new_batch
            .iter()
            .map(|s| (s, None))
            .chain(mem_batch.iter().map(|s| (s, Some(s.label))));
        for (s, own) in tagged {
            if let Some(label) = own {
                if prototypes.position(label).is_none() {
                    return Err(EscoError::MissingPrototype(label));
                }
            }
            let fwd = tape.forward(s)?;
            let mut d_rep = vec![0.0; fwd.rep.len()];
            for p in prototypes.entries() {
                let (cos, d_cos, _) = cosine_sim_with_grad(&fwd.rep, &p.vector)?;
                if Some(p.label) == own {
                    value += 1.0 - cos;
                    axpy(-1.0, &d_cos, &mut d_rep);
                } else {
                    let (h, dh) = hinge(cos - m1);
                    value += h;
                    axpy(dh, &d_cos, &mut d_rep);
                }
            }
            tape.backward(&fwd, None, Some(&d_rep));
        }
    }
    Ok(LossValue {
        value,
        grads: tape.finish(),
    })
}

/// Which separation term enters the composite objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Separation {
    Margin,
    Contrastive,
    Off,
}

/// Switches for the composite objective; set by the training method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Objective {
    pub separation: Separation,
    pub replay: bool,
    pub calibration: bool,
}

impl Objective {
    pub const FULL: Objective = Objective {
        separation: Separation::Margin,
        replay: true,
        calibration: true,
    };
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub new: f64,
    pub sim: f64,
    pub mem: f64,
    pub cal: f64,
}

#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub value: f64,
    pub terms: LossTerms,
    pub lambda2: f64,
    pub grads: Gradients,
}

/// `L_new + λ1 L_sim + λ2 (L_mem + L_cal)` with `λ2 = s / (|new_batch| + s)`.
///
/// Terms whose inputs are absent (no prototypes or no memory, as on the first
/// task) contribute exactly zero.
pub fn loss_total(
    model: &Model,
    new_batch: &[SpanSample],
    mem_batch: &[SpanSample],
    prototypes: &PrototypeStore,
    hp: &HyperParams,
    objective: Objective,
) -> Result<TotalLoss> {
    let lambda2 = lambda2(new_batch.len(), hp.s);
    let new = loss_new(model, new_batch)?;
    let mut grads = new.grads;
    let mut terms = LossTerms {
        new: new.value,
        ..LossTerms::default()
    };

    let use_mem = objective.replay && !mem_batch.is_empty();
    if !prototypes.is_empty() && hp.lambda1 > 0.0 {
        let sep = match objective.separation {
            Separation::Margin => Some(loss_sim(model, new_batch, prototypes, hp.m1)?),
            Separation::Contrastive => {
                let mem: &[SpanSample] = if use_mem { mem_batch } else { &[] };
                Some(loss_contrastive(model, new_batch, mem, prototypes, hp.m1)?)
            }
            Separation::Off => None,
        };
        if let Some(sep) = sep {
            terms.sim = sep.value;
            grads.add_scaled(hp.lambda1, &sep.grads);
        }
    }
    if use_mem {
        let mem = loss_mem(model, mem_batch)?;
        terms.mem = mem.value;
        grads.add_scaled(lambda2, &mem.grads);
        if objective.calibration && !prototypes.is_empty() {
            let cal = loss_cal(model, mem_batch, prototypes)?;
            terms.cal = cal.value;
            grads.add_scaled(lambda2, &cal.grads);
        }
    }

    let value = terms.new + hp.lambda1 * terms.sim + lambda2 * (terms.mem + terms.cal);
    Ok(TotalLoss {
        value,
        terms,
        lambda2,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::Prototype;
    use crate::model::tests::{random_sample, sample, toy_model};
    use crate::numerics::{cosine_sim, grad_check, Mat};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store(vectors: Vec<(usize, Vec<f64>)>) -> PrototypeStore {
        PrototypeStore::from_entries(
            vectors
                .into_iter()
                .map(|(label, vector)| Prototype {
                    label,
                    vector,
                    computed_at: 1,
                })
                .collect(),
        )
    }

    fn random_store(rng: &mut impl Rng, labels: &[usize], dim: usize) -> PrototypeStore {
        store(
            labels
                .iter()
                .map(|&l| (l, (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
                .collect(),
        )
    }

    fn check<F>(model: &Model, analytic: &Gradients, f: F) -> f64
    where
        F: Fn(&Model) -> Result<f64>,
    {
        grad_check(
            |p| {
                let mut m = model.clone();
                m.load_flat_params(p)?;
                f(&m)
            },
            &model.flatten_params(),
            &analytic.flatten(),
        )
        .unwrap()
    }

    #[test]
    fn empty_batches_give_zero() {
        let model = toy_model(0, 3, 4, 3);
        let l = loss_new(&model, &[]).unwrap();
        assert_eq!(l.value, 0.0);
        assert_eq!(l.grads.max_abs(), 0.0);
        assert_eq!(loss_mem(&model, &[]).unwrap().value, 0.0);
    }

    #[test]
    fn saturated_sample_has_near_zero_loss() {
        let mut model = toy_model(0, 2, 2, 2);
        model.head.ffn_w = Mat::from_vec(2, 4, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        model.head.ffn_b = vec![0.0; 2];
        model.head.cls_w = Mat::from_vec(2, 2, vec![1e4, 0.0, -1e4, 0.0]).unwrap();
        model.prompts.proj_w = Mat::zeros(2, 4);
        model.prompts.proj_b = vec![0.0; 2];
        let s = sample(0, vec![1.0, 0.0], vec![0.0, 0.0], 0);
        assert!(loss_new(&model, &[s.clone()]).unwrap().value < 1e-12);
        assert!(loss_mem(&model, &[s]).unwrap().value < 1e-12);
    }

    #[test]
    fn unknown_label_is_rejected() {
        let model = toy_model(0, 3, 4, 2);
        let s = random_sample(&mut ChaCha8Rng::seed_from_u64(0), 0, 3, 9);
        assert!(matches!(loss_new(&model, &[s]), Err(EscoError::UnknownLabel(9))));
    }

    #[test]
    fn cross_entropy_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for seed in 0..20 {
            let model = toy_model(seed, 3, 5, 4);
            let batch: Vec<SpanSample> = (0..8).map(|i| random_sample(&mut rng, i, 3, (i % 4) as usize)).collect();
            let l = loss_new(&model, &batch).unwrap();
            let err = check(&model, &l.grads, |m| Ok(loss_new(m, &batch)?.value));
            assert!(err < 1e-5, "loss_new relative error {err}");
            let l = loss_mem(&model, &batch[..3]).unwrap();
            let err = check(&model, &l.grads, |m| Ok(loss_mem(m, &batch[..3])?.value));
            assert!(err < 1e-5, "loss_mem relative error {err}");
        }
    }

    #[test]
    fn inactive_hinges_give_zero() {
        let model = toy_model(1, 3, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch: Vec<SpanSample> = (0..4).map(|i| random_sample(&mut rng, i, 3, 0)).collect();
        // Prototype = −rep of each sample's mean direction: pick one sample and negate.
        let rep = model.span_rep(&batch[0]).unwrap();
        let anti: Vec<f64> = rep.iter().map(|v| -v).collect();
        let l = loss_sim(&model, &batch[..1], &store(vec![(0, anti)]), -0.1).unwrap();
        assert_eq!(l.value, 0.0);
        assert_eq!(l.grads.max_abs(), 0.0);
        // No prototypes at all.
        let l = loss_sim(&model, &batch, &PrototypeStore::default(), -0.1).unwrap();
        assert_eq!(l.value, 0.0);
    }

    #[test]
    fn single_active_pair_contributes_cos_minus_margin() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Model::new(
            crate::model::ModelConfig { d_enc: 1, d_rep: 2, ..Default::default() },
            &mut rng,
        )
        .unwrap();
        // rep = tanh(a) with a chosen so that rep = (0.5, sqrt(0.75)) · 0.8.
        let target = [0.4f64, 0.75f64.sqrt() * 0.8];
        model.head.ffn_w = Mat::zeros(2, 2);
        model.head.ffn_b = vec![target[0].atanh(), target[1].atanh()];
        let s = sample(0, vec![0.0], vec![0.0], 0);
        let rep = model.span_rep(&s).unwrap();
        let e = vec![1.0, 0.0];
        let cos = cosine_sim(&rep, &e).unwrap();
        assert!((cos - 0.5).abs() < 1e-12);
        let l = loss_sim(&model, &[s], &store(vec![(0, e)]), -0.1).unwrap();
        assert!((l.value - 0.6).abs() < 1e-12);
    }

    #[test]
    fn separation_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for seed in 0..20 {
            let model = toy_model(seed, 3, 5, 3);
            let protos = random_store(&mut rng, &[10, 11, 12, 13], 5);
            let batch: Vec<SpanSample> = (0..6).map(|i| random_sample(&mut rng, i, 3, 0)).collect();
            let l = loss_sim(&model, &batch, &protos, -0.1).unwrap();
            assert!(l.value > 0.0);
            let err = check(&model, &l.grads, |m| Ok(loss_sim(m, &batch, &protos, -0.1)?.value));
            assert!(err < 1e-5, "loss_sim relative error {err}");
        }
    }

    #[test]
    fn calibration_single_prototype_is_zero() {
        let model = toy_model(0, 3, 4, 1);
        let s = random_sample(&mut ChaCha8Rng::seed_from_u64(0), 0, 3, 0);
        let l = loss_cal(&model, &[s], &store(vec![(0, vec![0.3, -0.2, 0.1, 0.9])])).unwrap();
        assert!(l.value.abs() < 1e-15);
    }

    #[test]
    fn calibration_missing_prototype_is_rejected() {
        let model = toy_model(0, 3, 4, 2);
        let s = random_sample(&mut ChaCha8Rng::seed_from_u64(0), 0, 3, 1);
        let err = loss_cal(&model, &[s], &store(vec![(0, vec![1.0; 4])]));
        assert!(matches!(err, Err(EscoError::MissingPrototype(1))));
    }

    /// Prototypes whose cosines to the rep are (0.9, 0.1, −0.2) by construction.
    #[test]
    fn calibration_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Model::new(
            crate::model::ModelConfig { d_enc: 1, d_rep: 2, ..Default::default() },
            &mut rng,
        )
        .unwrap();
        model.head.ffn_w = Mat::zeros(2, 2);
        model.head.ffn_b = vec![0.5f64.atanh(), 0.0];
        let s = sample(0, vec![0.0], vec![0.0], 7);
        // rep = (0.5, 0) so cos(rep, (c, sqrt(1-c²))) = c.
        let unit = |c: f64| vec![c, (1.0 - c * c).sqrt()];
        let protos = store(vec![(7, unit(0.9)), (8, unit(0.1)), (9, unit(-0.2))]);
        let l = loss_cal(&model, &[s], &protos).unwrap();
        let expected = -(0.9f64.exp() / (0.9f64.exp() + 0.1f64.exp() + (-0.2f64).exp())).ln();
        assert!((l.value - expected).abs() < 1e-10);
        assert!((expected - 0.577_848_583_025_850_8).abs() < 1e-12);
    }

    #[test]
    fn calibration_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for seed in 0..20 {
            let model = toy_model(seed, 3, 5, 4);
            let protos = random_store(&mut rng, &[0, 1, 2, 3], 5);
            let batch: Vec<SpanSample> = (0..6).map(|i| random_sample(&mut rng, i, 3, (i % 4) as usize)).collect();
            let l = loss_cal(&model, &batch, &protos).unwrap();
            let err = check(&model, &l.grads, |m| Ok(loss_cal(m, &batch, &protos)?.value));
            assert!(err < 1e-5, "loss_cal relative error {err}");
        }
    }

    #[test]
    fn contrastive_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for seed in 0..10 {
            let model = toy_model(seed, 3, 5, 6);
            let protos = random_store(&mut rng, &[0, 1, 2], 5);
            let new: Vec<SpanSample> = (0..4).map(|i| random_sample(&mut rng, i, 3, 3 + (i % 3) as usize)).collect();
            let mem: Vec<SpanSample> = (0..4).map(|i| random_sample(&mut rng, 10 + i, 3, (i % 3) as usize)).collect();
            let l = loss_contrastive(&model, &new, &mem, &protos, -0.1).unwrap();
            let err = check(&model, &l.grads, |m| Ok(loss_contrastive(m, &new, &mem, &protos, -0.1)?.value));
            assert!(err < 1e-5, "contrastive relative error {err}");
        }
    }

    #[test]
    fn lambda2_schedule() {
        assert_eq!(lambda2(50, 50.0), 0.5);
        assert_eq!(lambda2(0, 50.0), 1.0);
        assert!(lambda2(16, 50.0) > lambda2(17, 50.0));
    }

    #[test]
    fn first_task_total_equals_new_loss() {
        let model = toy_model(2, 3, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch: Vec<SpanSample> = (0..5).map(|i| random_sample(&mut rng, i, 3, (i % 3) as usize)).collect();
        let total = loss_total(&model, &batch, &[], &PrototypeStore::default(), &HyperParams::default(), Objective::FULL).unwrap();
        let new = loss_new(&model, &batch).unwrap();
        assert_eq!(total.value, new.value);
        assert_eq!(total.grads, new.grads);
        assert_eq!(total.terms.sim, 0.0);
        assert_eq!(total.terms.mem, 0.0);
        assert_eq!(total.terms.cal, 0.0);
    }

    #[test]
    fn total_is_the_weighted_sum_and_has_correct_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let hp = HyperParams::default();
        for seed in 0..20 {
            let model = toy_model(seed, 3, 5, 7);
            let protos = random_store(&mut rng, &[0, 1, 2, 3], 5);
            let new: Vec<SpanSample> = (0..5).map(|i| random_sample(&mut rng, i, 3, 4 + (i % 3) as usize)).collect();
            let mem: Vec<SpanSample> = (0..4).map(|i| random_sample(&mut rng, 10 + i, 3, i as usize)).collect();
            let total = loss_total(&model, &new, &mem, &protos, &hp, Objective::FULL).unwrap();

            let l2 = lambda2(new.len(), hp.s);
            let manual = loss_new(&model, &new).unwrap().value
                + hp.lambda1 * loss_sim(&model, &new, &protos, hp.m1).unwrap().value
                + l2 * (loss_mem(&model, &mem).unwrap().value + loss_cal(&model, &mem, &protos).unwrap().value);
            assert!((total.value - manual).abs() < 1e-12);

            let err = check(&model, &total.grads, |m| {
                Ok(loss_total(m, &new, &mem, &protos, &hp, Objective::FULL)?.value)
            });
            assert!(err < 1e-5, "loss_total relative error {err}");
        }
    }

    #[test]
    fn objective_switches_drop_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let hp = HyperParams::default();
        let model = toy_model(0, 3, 5, 7);
        let protos = random_store(&mut rng, &[0, 1, 2, 3], 5);
        let new: Vec<SpanSample> = (0..5).map(|i| random_sample(&mut rng, i, 3, 4)).collect();
        let mem: Vec<SpanSample> = (0..4).map(|i| random_sample(&mut rng, 10 + i, 3, i as usize)).collect();
        let no_cal = Objective { calibration: false, ..Objective::FULL };
        let t = loss_total(&model, &new, &mem, &protos, &hp, no_cal).unwrap();
        assert_eq!(t.terms.cal, 0.0);
        assert!(t.terms.mem > 0.0);
        let no_sep = Objective { separation: Separation::Off, ..Objective::FULL };
        assert_eq!(loss_total(&model, &new, &mem, &protos, &hp, no_sep).unwrap().terms.sim, 0.0);
        let no_replay = Objective { replay: false, calibration: false, separation: Separation::Off };
        let t = loss_total(&model, &new, &mem, &protos, &hp, no_replay).unwrap();
        assert_eq!(t.value, loss_new(&model, &new).unwrap().value);
    }

    #[test]
    fn perturbing_prototypes_changes_values_not_gradient_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let model = toy_model(0, 3, 5, 4);
        let protos = random_store(&mut rng, &[0, 1, 2, 3], 5);
        let mut moved = protos.clone();
        let mut entries = moved.entries().to_vec();
        entries[0].vector[0] += 0.5;
        moved = PrototypeStore::from_entries(entries);
        let batch: Vec<SpanSample> = (0..4).map(|i| random_sample(&mut rng, i, 3, i as usize)).collect();
        let a = loss_cal(&model, &batch, &protos).unwrap();
        let b = loss_cal(&model, &batch, &moved).unwrap();
        assert_ne!(a.value, b.value);
        assert_eq!(a.grads.flatten().len(), model.flatten_params().len());
        assert_eq!(b.grads.flatten().len(), model.flatten_params().len());
    }

    #[test]
    fn losses_are_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        for seed in 0..10 {
            let model = toy_model(seed, 3, 4, 4);
            let protos = random_store(&mut rng, &[0, 1, 2, 3], 4);
            let batch: Vec<SpanSample> = (0..4).map(|i| random_sample(&mut rng, i, 3, i as usize)).collect();
            assert!(loss_new(&model, &batch).unwrap().value >= 0.0);
            assert!(loss_sim(&model, &batch, &protos, -0.1).unwrap().value >= 0.0);
            assert!(loss_cal(&model, &batch, &protos).unwrap().value >= 0.0);
        }
    }

    #[test]
    fn hyperparams_validation() {
        assert!(HyperParams::default().validate().is_ok());
        assert!(HyperParams { s: 0.0, ..Default::default() }.validate().is_err());
        assert!(HyperParams { lambda1: -1.0, ..Default::default() }.validate().is_err());
        assert!(HyperParams { mem_per_type: 0, ..Default::default() }.validate().is_err());
        assert!(HyperParams { m1: 1.5, ..Default::default() }.validate().is_err());
    }
}
