//! Unlearnable-example generation: error-minimizing and error-maximizing
//! perturbations over a chosen portion of the training set, crafted by
//! projected signed-gradient steps on the inputs with an optionally
//! sharpness-aware input gradient.

use crate::data::apply_perturbations;
use crate::error::{Error, Result};
use crate::nn::{self, LabeledBatch, ModelParams, ModelSpec};
use crate::rng::{self, derive_seed};
use crate::sharpness::{ascent_direction, SharpnessConfig};
use crate::tensor::Tensor;

/// Seed-stream tags, part of the crate's determinism contract (see the
/// matching module in `gradmatch`).
pub mod streams {
    /// Surrogate model initialization.
    pub const MODEL: u64 = 0x756d6f64;
    /// Perturbed-index selection for partial portions.
    pub const PORTION: u64 = 0x75706f72;
    /// Perturbation initialization.
    pub const DELTA: u64 = 0x7564656c;
    /// Inner model-update shuffles; chained with the epoch index.
    pub const INNER: u64 = 0x75696e6e;
    /// Clean pretraining shuffles (error-max).
    pub const PRETRAIN: u64 = 0x75707265;
}

use streams::{
    DELTA as STREAM_DELTA, INNER as STREAM_INNER, MODEL as STREAM_MODEL, PORTION as STREAM_PORTION,
    PRETRAIN as STREAM_PRETRAIN,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UntargetedMode {
    ErrorMin,
    ErrorMax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UntargetedConfig {
    pub mode: UntargetedMode,
    pub sharpness: SharpnessConfig,
    /// PGD steps: per epoch for error-min, total for error-max.
    pub pgd_steps: usize,
    /// Model update steps per epoch (error-min only).
    pub inner_steps: usize,
    /// Alternation epochs (error-min only).
    pub epochs: usize,
    pub alpha: f64,
    pub epsilon: f64,
    /// Fraction of training samples perturbed (floored).
    pub portion: f64,
    /// Clean pretraining epochs before the ascent phase (error-max only).
    pub pretrain_epochs: usize,
    pub batch_size: usize,
    pub inner_lr: f64,
    /// Compute one ascent direction per sample instead of per minibatch.
    pub per_sample_direction: bool,
    /// Make the inner model updates sharpness-aware as well.
    pub sharp_inner_updates: bool,
    pub seed: u64,
}

impl UntargetedConfig {
    pub fn error_min(epsilon: f64, rho: f64, seed: u64) -> Self {
        UntargetedConfig {
            mode: UntargetedMode::ErrorMin,
            sharpness: SharpnessConfig::l2(rho),
            pgd_steps: 20,
            inner_steps: 10,
            epochs: 100,
            alpha: epsilon / 10.0,
            epsilon,
            portion: 1.0,
            pretrain_epochs: 0,
            batch_size: 32,
            inner_lr: 0.1,
            per_sample_direction: false,
            sharp_inner_updates: false,
            seed,
        }
    }

    pub fn error_max(epsilon: f64, rho: f64, seed: u64) -> Self {
        UntargetedConfig {
            mode: UntargetedMode::ErrorMax,
            pgd_steps: 250,
            epochs: 1,
            pretrain_epochs: 40,
            ..UntargetedConfig::error_min(epsilon, rho, seed)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 && self.mode == UntargetedMode::ErrorMin {
            return Err(Error::InvalidConfig("error-min needs epochs >= 1".into()));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidConfig("alpha must be positive".into()));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        if !(self.portion > 0.0 && self.portion <= 1.0) {
            return Err(Error::InvalidConfig("portion must be in (0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-sample perturbations for a chosen portion of the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSet {
    pub indices: Vec<usize>,
    pub deltas: Vec<Tensor>,
    pub epsilon: f64,
    pub portion: f64,
}

impl PerturbationSet {
    pub fn apply(&self, train: &LabeledBatch) -> LabeledBatch {
        apply_perturbations(train, &self.indices, &self.deltas)
    }

    pub fn assert_within_budget(&self) {
        for d in &self.deltas {
            for &v in d.data() {
                assert!(
                    v.abs() <= self.epsilon,
                    "delta entry {v} exceeds budget {}",
                    self.epsilon
                );
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepDirection {
    Descend,
    Ascend,
}

fn sign3(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One projected signed-gradient step on the inputs. The result satisfies
/// `|x_next - x_original| <= epsilon` and `x_next in [0, 1]` coordinatewise,
/// both under floating-point evaluation.
pub fn pgd_step(
    current: &Tensor,
    original: &Tensor,
    grad: &Tensor,
    alpha: f64,
    epsilon: f64,
    direction: StepDirection,
) -> Tensor {
    assert_eq!(current.shape(), original.shape(), "pgd shapes differ");
    assert_eq!(current.shape(), grad.shape(), "pgd gradient shape differs");
    let sgn = match direction {
        StepDirection::Descend => -1.0,
        StepDirection::Ascend => 1.0,
    };
    let mut out = Vec::with_capacity(current.len());
    for ((&c, &o), &g) in current.data().iter().zip(original.data()).zip(grad.data()) {
        let moved = c + sgn * alpha * sign3(g);
        let mut x = if (moved - o).abs() <= epsilon && (0.0..=1.0).contains(&moved) {
            moved
        } else {
            let d = (moved - o).clamp(-epsilon, epsilon);
            let mut x = (o + d).clamp(0.0, 1.0);
            // one-ulp rounding of o + d can overshoot the ball; pull back
            while x - o > epsilon {
                x = next_toward(x, o);
            }
            while o - x > epsilon {
                x = next_toward(x, o);
            }
            x
        };
        if x == 0.0 {
            // normalize -0.0 so byte comparisons are stable
            x = 0.0;
        }
        debug_assert!((x - o).abs() <= epsilon);
        debug_assert!((0.0..=1.0).contains(&x));
        out.push(x);
    }
    Tensor::from_parts(current.shape().to_vec(), out)
}

fn next_toward(x: f64, target: f64) -> f64 {
    if x > target {
        x.next_down()
    } else if x < target {
        x.next_up()
    } else {
        x
    }
}

/// Input gradient with the sharpness-aware parameter shift: the batch
/// parameter gradient picks the ascent direction, then per-sample input
/// gradients are taken at the shifted parameters. A zero radius gives the
/// plain input gradient, bitwise.
#[derive(Debug, Clone)]
pub struct SharpInputGrad {
    pub grad: Tensor,
    pub degenerate: bool,
}

pub fn sharp_input_grad(
    spec: &ModelSpec,
    params: &ModelParams,
    batch: &LabeledBatch,
    cfg: &SharpnessConfig,
) -> Result<SharpInputGrad> {
    if !cfg.is_active() {
        return Ok(SharpInputGrad {
            grad: nn::grad_inputs(spec, params, batch)?,
            degenerate: false,
        });
    }
    let g = nn::grad_params(spec, params, batch)?;
    let dir = ascent_direction(&g, cfg);
    if dir.degenerate {
        return Ok(SharpInputGrad {
            grad: nn::grad_inputs(spec, params, batch)?,
            degenerate: true,
        });
    }
    let shifted = params.perturbed(&dir.step)?;
    Ok(SharpInputGrad {
        grad: nn::grad_inputs(spec, &shifted, batch)?,
        degenerate: false,
    })
}

/// Per-sample variant: one ascent direction per sample, from that sample's
/// own parameter gradient. Matches `sharp_input_grad` on singleton batches.
pub fn sharp_input_grad_per_sample(
    spec: &ModelSpec,
    params: &ModelParams,
    batch: &LabeledBatch,
    cfg: &SharpnessConfig,
) -> Result<SharpInputGrad> {
    let mut rows = Vec::with_capacity(batch.len());
    let mut degenerate = false;
    for i in 0..batch.len() {
        let single = LabeledBatch::new(batch.inputs.gather(&[i]), vec![batch.labels[i]])?;
        let g = sharp_input_grad(spec, params, &single, cfg)?;
        degenerate |= g.degenerate;
        rows.push(g.grad.sample_tensor(0));
    }
    Ok(SharpInputGrad {
        grad: Tensor::stack(&rows)?,
        degenerate,
    })
}

fn select_portion(train: &LabeledBatch, portion: f64, seed: u64) -> Result<Vec<usize>> {
    let n = train.len();
    let count = (portion * n as f64).floor() as usize;
    if count == 0 {
        return Err(Error::InvalidConfig(format!(
            "portion {portion} of {n} samples rounds down to zero"
        )));
    }
    if count == n {
        return Ok((0..n).collect());
    }
    let pool: Vec<usize> = (0..n).collect();
    let mut r = rng::rng_from(seed);
    Ok(rng::sample_distinct(&mut r, &pool, count))
}

fn init_deltas(train: &LabeledBatch, indices: &[usize], epsilon: f64, seed: u64) -> Vec<Tensor> {
    let mut r = rng::rng_from(seed);
    let shape = train.inputs.sample_shape().to_vec();
    let n = train.inputs.sample_len();
    indices
        .iter()
        .map(|&i| {
            let clean = train.inputs.sample(i);
            let mut d = rng::uniform_vec(&mut r, n, -epsilon, epsilon);
            for (dv, &x) in d.iter_mut().zip(clean) {
                *dv = dv.clamp(-x, 1.0 - x).clamp(-epsilon, epsilon);
            }
            Tensor::from_parts(shape.clone(), d)
        })
        .collect()
}

/// Runs the PGD phase over one chunk of samples, returning updated deltas.
#[allow(clippy::too_many_arguments)]
fn pgd_phase_on_chunk(
    spec: &ModelSpec,
    params: &ModelParams,
    train: &LabeledBatch,
    chunk: &[usize],
    deltas: &mut [Tensor],
    delta_offset: usize,
    cfg: &UntargetedConfig,
    direction: StepDirection,
) -> Result<()> {
    let original = train.inputs.gather(chunk);
    let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
    let mut current = original.clone();
    for (row, d) in (0..chunk.len()).zip(&deltas[delta_offset..]) {
        let cur = current.sample_mut(row);
        for (x, dv) in cur.iter_mut().zip(d.data()) {
            *x = (*x + dv).clamp(0.0, 1.0);
        }
    }
    for _ in 0..cfg.pgd_steps {
        let batch = LabeledBatch::new(current.clone(), labels.clone())?;
        let g = if cfg.per_sample_direction {
            sharp_input_grad_per_sample(spec, params, &batch, &cfg.sharpness)?
        } else {
            sharp_input_grad(spec, params, &batch, &cfg.sharpness)?
        };
        current = pgd_step(
            &current,
            &original,
            &g.grad,
            cfg.alpha,
            cfg.epsilon,
            direction,
        );
    }
    let shape = train.inputs.sample_shape().to_vec();
    for row in 0..chunk.len() {
        let d: Vec<f64> = current
            .sample(row)
            .iter()
            .zip(original.sample(row))
            .map(|(&x, &o)| x - o)
            .collect();
        deltas[delta_offset + row] = Tensor::from_parts(shape.clone(), d);
    }
    Ok(())
}

/// Plain or sharpness-aware minibatch SGD steps for the inner model update.
fn inner_update_steps(
    spec: &ModelSpec,
    init: &ModelParams,
    data: &LabeledBatch,
    steps: usize,
    cfg: &UntargetedConfig,
    seed: u64,
) -> Result<ModelParams> {
    let mut theta = init.clone();
    let mut pass = 0u64;
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    for step in 0..steps {
        if cursor >= order.len() {
            let mut r = rng::rng_from(derive_seed(seed, pass));
            order = rng::permutation(&mut r, data.len());
            cursor = 0;
            pass += 1;
        }
        let end = (cursor + cfg.batch_size).min(order.len());
        let batch = data.select(&order[cursor..end]);
        cursor = end;
        let mut g = nn::grad_params(spec, &theta, &batch)?;
        if cfg.sharp_inner_updates && cfg.sharpness.is_active() {
            let dir = ascent_direction(&g, &cfg.sharpness);
            if !dir.degenerate {
                let shifted = theta.perturbed(&dir.step)?;
                g = nn::grad_params(spec, &shifted, &batch)?;
            }
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { epoch: step });
        }
        let flat = theta.flat_mut();
        for i in 0..flat.len() {
            flat[i] -= cfg.inner_lr * g[i];
        }
    }
    Ok(theta)
}

/// Error-min crafting plus the poisoned-loss trajectory over epochs.
#[derive(Debug, Clone)]
pub struct ErrorMinOutcome {
    pub set: PerturbationSet,
    /// Mean poisoned training loss after each epoch's two phases.
    pub epoch_losses: Vec<f64>,
}

/// Alternating perturbation/model optimization: each epoch runs the descent
/// PGD phase on every perturbed sample, then the inner model-update steps on
/// the poisoned training set.
pub fn craft_error_min(
    spec: &ModelSpec,
    train: &LabeledBatch,
    cfg: &UntargetedConfig,
) -> Result<ErrorMinOutcome> {
    cfg.validate()?;
    if cfg.mode != UntargetedMode::ErrorMin {
        return Err(Error::InvalidConfig("config mode is not error-min".into()));
    }
    let indices = select_portion(train, cfg.portion, derive_seed(cfg.seed, STREAM_PORTION))?;
    let mut deltas = init_deltas(
        train,
        &indices,
        cfg.epsilon,
        derive_seed(cfg.seed, STREAM_DELTA),
    );
    let mut theta = spec.init_params(derive_seed(cfg.seed, STREAM_MODEL));
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut offset = 0;
        for chunk in indices.chunks(cfg.batch_size) {
            pgd_phase_on_chunk(
                spec,
                &theta,
                train,
                chunk,
                &mut deltas,
                offset,
                cfg,
                StepDirection::Descend,
            )?;
            offset += chunk.len();
        }
        for d in &deltas {
            debug_assert!(d.data().iter().all(|v| v.abs() <= cfg.epsilon));
        }
        let poisoned = apply_perturbations(train, &indices, &deltas);
        theta = inner_update_steps(
            spec,
            &theta,
            &poisoned,
            cfg.inner_steps,
            cfg,
            derive_seed(derive_seed(cfg.seed, STREAM_INNER), epoch as u64),
        )?;
        let logits = nn::forward(spec, &theta, &poisoned.inputs)?;
        epoch_losses.push(nn::cross_entropy(&logits, &poisoned.labels)?);
    }
    Ok(ErrorMinOutcome {
        set: PerturbationSet {
            indices,
            deltas,
            epsilon: cfg.epsilon,
            portion: cfg.portion,
        },
        epoch_losses,
    })
}

/// Pretrains a clean surrogate, freezes it, then runs the ascent PGD steps
/// from a zero perturbation.
pub fn craft_error_max(
    spec: &ModelSpec,
    train: &LabeledBatch,
    cfg: &UntargetedConfig,
) -> Result<PerturbationSet> {
    cfg.validate()?;
    if cfg.mode != UntargetedMode::ErrorMax {
        return Err(Error::InvalidConfig("config mode is not error-max".into()));
    }
    let init = spec.init_params(derive_seed(cfg.seed, STREAM_MODEL));
    let theta = crate::training::sgd_epochs(
        spec,
        &init,
        train,
        cfg.pretrain_epochs,
        cfg.inner_lr,
        cfg.batch_size,
        derive_seed(cfg.seed, STREAM_PRETRAIN),
    )?;
    let indices = select_portion(train, cfg.portion, derive_seed(cfg.seed, STREAM_PORTION))?;
    let shape = train.inputs.sample_shape().to_vec();
    let mut deltas: Vec<Tensor> = indices
        .iter()
        .map(|_| Tensor::zeros(shape.clone()))
        .collect();
    let mut offset = 0;
    for chunk in indices.chunks(cfg.batch_size) {
        pgd_phase_on_chunk(
            spec,
            &theta,
            train,
            chunk,
            &mut deltas,
            offset,
            cfg,
            StepDirection::Ascend,
        )?;
        offset += chunk.len();
    }
    Ok(PerturbationSet {
        indices,
        deltas,
        epsilon: cfg.epsilon,
        portion: cfg.portion,
    })
}
