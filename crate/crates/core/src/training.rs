//! Retraining harness: minibatch SGD with momentum, step and cyclic
//! learning-rate schedules, mixup and cutout augmentation, and a
//! sharpness-aware (perturbed-gradient) optimizer variant. Fully seeded;
//! identical config, seed and dataset produce bitwise identical parameters.

use crate::error::{Error, Result};
use crate::nn::{self, LabeledBatch, ModelParams, ModelSpec};
use crate::rng::{self, derive_seed};
use crate::sharpness::{ascent_direction, SharpnessConfig};
use crate::tensor::Tensor;

const STREAM_SHUFFLE: u64 = 0x73687566;
const STREAM_AUG: u64 = 0x6175676d;

#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Step {
        milestones: Vec<usize>,
        factor: f64,
    },
    Cyclic {
        period: usize,
        min_lr: f64,
        max_lr: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Augmentation {
    None,
    Mixup { alpha: f64 },
    Cutout { size: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerVariant {
    Erm,
    Sam { rho: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub augmentation: Augmentation,
    pub optimizer: OptimizerVariant,
    pub seed: u64,
}

impl TrainConfig {
    /// Desk-scale default: 60 epochs with the step decay scaled down
    /// proportionally from the full 160-epoch recipe.
    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            epochs: 60,
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 32,
            schedule: Schedule::Step {
                milestones: vec![30, 45],
                factor: 0.1,
            },
            augmentation: Augmentation::None,
            optimizer: OptimizerVariant::Erm,
            seed,
        }
    }

    /// The full-scale recipe: 160 epochs, decay by 0.1 at epochs 80 and 120.
    pub fn full_scale(seed: u64) -> Self {
        TrainConfig {
            epochs: 160,
            schedule: Schedule::Step {
                milestones: vec![80, 120],
                factor: 0.1,
            },
            ..TrainConfig::desk(seed)
        }
    }

    /// Long 500-epoch run with proportionally scaled milestones.
    pub fn long_run(seed: u64) -> Self {
        TrainConfig {
            epochs: 500,
            schedule: Schedule::Step {
                milestones: vec![250, 375],
                factor: 0.1,
            },
            ..TrainConfig::desk(seed)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Same recipe under a different epoch budget; step milestones are
    /// rescaled proportionally so the config stays valid.
    pub fn scaled_to_epochs(mut self, epochs: usize) -> Self {
        if let Schedule::Step { milestones, .. } = &mut self.schedule {
            let old = self.epochs.max(1);
            for m in milestones.iter_mut() {
                *m = (*m as f64 * epochs as f64 / old as f64).floor() as usize;
            }
            milestones.retain(|&m| m > 0 && m < epochs);
            milestones.dedup();
        }
        self.epochs = epochs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !nonneg(self.base_lr) || !nonneg(self.momentum) || !nonneg(self.weight_decay) {
            return Err(Error::InvalidConfig("rates must be nonnegative".into()));
        }
        match &self.schedule {
            Schedule::Step { milestones, factor } => {
                if !(*factor > 0.0 && *factor <= 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "step factor must be in (0, 1], got {factor}"
                    )));
                }
                for w in milestones.windows(2) {
                    if w[0] >= w[1] {
                        return Err(Error::InvalidConfig(
                            "milestones must be strictly increasing".into(),
                        ));
                    }
                }
                if let Some(&last) = milestones.last() {
                    if last >= self.epochs {
                        return Err(Error::InvalidConfig(format!(
                            "milestone {last} not below epochs {}",
                            self.epochs
                        )));
                    }
                }
            }
            Schedule::Cyclic {
                period,
                min_lr,
                max_lr,
            } => {
                if *period < 2 {
                    return Err(Error::InvalidConfig("cyclic period must be >= 2".into()));
                }
                if min_lr.is_nan() || max_lr.is_nan() || min_lr > max_lr {
                    return Err(Error::InvalidConfig("min_lr must not exceed max_lr".into()));
                }
            }
        }
        if let Augmentation::Mixup { alpha } = self.augmentation {
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(Error::InvalidConfig("mixup alpha must be positive".into()));
            }
        }
        if let OptimizerVariant::Sam { rho } = self.optimizer {
            if !nonneg(rho) {
                return Err(Error::InvalidConfig("sam rho must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

/// Learning rate at a given epoch, computed in closed form.
///
/// Step: `base_lr * factor^(number of milestones <= epoch)`. Cyclic: a
/// triangular wave from `min_lr` (epoch 0) up to `max_lr` at half period and
/// back, ignoring `base_lr`; the endpoints are returned exactly.
pub fn schedule_lr(schedule: &Schedule, epoch: usize, base_lr: f64) -> f64 {
    match schedule {
        Schedule::Step { milestones, factor } => {
            let hits = milestones.iter().filter(|&&m| m <= epoch).count();
            base_lr * factor.powi(hits as i32)
        }
        Schedule::Cyclic {
            period,
            min_lr,
            max_lr,
        } => {
            let phase = epoch % period;
            if phase == 0 {
                return *min_lr;
            }
            if 2 * phase == *period {
                return *max_lr;
            }
            let half = *period as f64 / 2.0;
            if (phase as f64) < half {
                min_lr + (max_lr - min_lr) * phase as f64 / half
            } else {
                max_lr - (max_lr - min_lr) * (phase as f64 - half) / half
            }
        }
    }
}

/// A pairwise-mixed batch: inputs are `lambda * x_i + (1 - lambda) * x_p(i)`
/// and the loss is the lambda-weighted sum of the two hard-label losses.
#[derive(Debug, Clone)]
pub struct MixupBatch {
    pub inputs: Tensor,
    pub labels_a: Vec<usize>,
    pub labels_b: Vec<usize>,
    pub lambda: f64,
}

/// Mixes the batch with the given permutation. `lambda = 1` returns the
/// batch unchanged, `lambda = 0` the permuted batch.
pub fn mixup_batch(batch: &LabeledBatch, lambda: f64, perm: &[usize]) -> MixupBatch {
    assert_eq!(perm.len(), batch.len(), "permutation length mismatch");
    let n = batch.inputs.sample_len();
    let mut data = Vec::with_capacity(batch.inputs.len());
    for (i, &j) in perm.iter().enumerate() {
        let a = batch.inputs.sample(i);
        let b = batch.inputs.sample(j);
        for k in 0..n {
            data.push(lambda * a[k] + (1.0 - lambda) * b[k]);
        }
    }
    MixupBatch {
        inputs: Tensor::from_parts(batch.inputs.shape().to_vec(), data),
        labels_a: batch.labels.clone(),
        labels_b: perm.iter().map(|&j| batch.labels[j]).collect(),
        lambda,
    }
}

/// Zeroes a seeded size-by-size square per image (or a length-`size` window
/// for flat feature vectors). Placement is uniform over positions where the
/// window lies fully inside the sample.
pub fn cutout_batch(batch: &LabeledBatch, size: usize, seed: u64) -> LabeledBatch {
    if size == 0 {
        return batch.clone();
    }
    let mut out = batch.clone();
    let shape = out.inputs.sample_shape().to_vec();
    let mut r = rng::rng_from(seed);
    use rand::Rng;
    match shape.len() {
        1 => {
            let d = shape[0];
            assert!(size <= d, "cutout size {size} exceeds feature length {d}");
            for i in 0..out.len() {
                let start = r.random_range(0..=d - size);
                let s = out.inputs.sample_mut(i);
                for v in &mut s[start..start + size] {
                    *v = 0.0;
                }
            }
        }
        3 => {
            let (c, h, w) = (shape[0], shape[1], shape[2]);
            assert!(
                size <= h && size <= w,
                "cutout size {size} exceeds image side"
            );
            for i in 0..out.len() {
                let top = r.random_range(0..=h - size);
                let left = r.random_range(0..=w - size);
                let s = out.inputs.sample_mut(i);
                for ch in 0..c {
                    for y in top..top + size {
                        let row = ch * h * w + y * w + left;
                        for v in &mut s[row..row + size] {
                            *v = 0.0;
                        }
                    }
                }
            }
        }
        other => panic!("cutout expects rank-1 or rank-3 samples, got rank {other}"),
    }
    out
}

enum BatchView<'a> {
    Hard(&'a LabeledBatch),
    Mixed(&'a MixupBatch),
}

/// Loss value and mean-loss parameter gradient for a (possibly mixed) batch.
fn loss_and_grad(
    spec: &ModelSpec,
    params: &ModelParams,
    view: &BatchView,
) -> Result<(f64, Vec<f64>)> {
    match view {
        BatchView::Hard(batch) => {
            let trace = nn::forward_trace(spec, params, &batch.inputs)?;
            let loss = nn::cross_entropy(trace.logits(), &batch.labels)?;
            let d_logits = nn::ce_dlogits(trace.logits(), &batch.labels)?;
            let (mut g, _) = nn::backward_from_dlogits(spec, params, &trace, d_logits);
            let scale = 1.0 / batch.len() as f64;
            for gi in &mut g {
                *gi *= scale;
            }
            Ok((loss, g))
        }
        BatchView::Mixed(mix) => {
            let trace = nn::forward_trace(spec, params, &mix.inputs)?;
            let la = nn::cross_entropy(trace.logits(), &mix.labels_a)?;
            let lb = nn::cross_entropy(trace.logits(), &mix.labels_b)?;
            let loss = mix.lambda * la + (1.0 - mix.lambda) * lb;
            let mut d_logits = nn::softmax(trace.logits())?;
            for (i, (&ya, &yb)) in mix.labels_a.iter().zip(&mix.labels_b).enumerate() {
                let row = d_logits.sample_mut(i);
                row[ya] -= mix.lambda;
                row[yb] -= 1.0 - mix.lambda;
            }
            let (mut g, _) = nn::backward_from_dlogits(spec, params, &trace, d_logits);
            let scale = 1.0 / mix.labels_a.len() as f64;
            for gi in &mut g {
                *gi *= scale;
            }
            Ok((loss, g))
        }
    }
}

fn gradient_for_step(
    spec: &ModelSpec,
    theta: &ModelParams,
    view: &BatchView,
    optimizer: &OptimizerVariant,
) -> Result<(f64, Vec<f64>)> {
    let (loss, g) = loss_and_grad(spec, theta, view)?;
    match optimizer {
        OptimizerVariant::Erm => Ok((loss, g)),
        OptimizerVariant::Sam { rho } => {
            let cfg = SharpnessConfig::l2(*rho);
            if !cfg.is_active() {
                return Ok((loss, g));
            }
            let dir = ascent_direction(&g, &cfg);
            if dir.degenerate {
                return Ok((loss, g));
            }
            let shifted = theta.perturbed(&dir.step)?;
            let (_, g2) = loss_and_grad(spec, &shifted, view)?;
            Ok((loss, g2))
        }
    }
}

/// Minibatch SGD with momentum, weight decay, the configured schedule and
/// augmentation. Aborts with a diagnostic if the loss turns non-finite.
pub fn train(
    spec: &ModelSpec,
    init: &ModelParams,
    data: &LabeledBatch,
    cfg: &TrainConfig,
) -> Result<ModelParams> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    data.check_labels(spec.classes())?;
    let mut theta = init.clone();
    let mut velocity = vec![0.0; theta.len()];
    use rand::Rng;
    use rand_distr::Distribution;

    for epoch in 0..cfg.epochs {
        let lr = schedule_lr(&cfg.schedule, epoch, cfg.base_lr);
        let mut shuffle_rng = rng::rng_from(derive_seed(
            derive_seed(cfg.seed, STREAM_SHUFFLE),
            epoch as u64,
        ));
        let order = rng::permutation(&mut shuffle_rng, data.len());
        let mut aug_rng =
            rng::rng_from(derive_seed(derive_seed(cfg.seed, STREAM_AUG), epoch as u64));

        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.select(chunk);
            let (loss, g) = match &cfg.augmentation {
                Augmentation::None => {
                    gradient_for_step(spec, &theta, &BatchView::Hard(&batch), &cfg.optimizer)?
                }
                Augmentation::Mixup { alpha } => {
                    let beta = rand_distr::Beta::new(*alpha, *alpha)
                        .map_err(|e| Error::InvalidConfig(format!("beta({alpha}): {e}")))?;
                    let lambda: f64 = beta.sample(&mut aug_rng);
                    let perm = rng::permutation(&mut aug_rng, batch.len());
                    let mixed = mixup_batch(&batch, lambda, &perm);
                    gradient_for_step(spec, &theta, &BatchView::Mixed(&mixed), &cfg.optimizer)?
                }
                Augmentation::Cutout { size } => {
                    let cut_seed: u64 = aug_rng.random();
                    let cut = cutout_batch(&batch, *size, cut_seed);
                    gradient_for_step(spec, &theta, &BatchView::Hard(&cut), &cfg.optimizer)?
                }
            };
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let flat = theta.flat_mut();
            for i in 0..flat.len() {
                let grad = g[i] + cfg.weight_decay * flat[i];
                velocity[i] = cfg.momentum * velocity[i] + grad;
                if lr != 0.0 {
                    flat[i] -= lr * velocity[i];
                }
            }
        }
    }
    Ok(theta)
}

/// Plain SGD steps (no momentum, no decay) cycling through seeded shuffles.
/// Used for inner model updates during poison crafting.
pub fn sgd_steps(
    spec: &ModelSpec,
    init: &ModelParams,
    data: &LabeledBatch,
    steps: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> Result<ModelParams> {
    let mut theta = init.clone();
    if steps == 0 {
        return Ok(theta);
    }
    let mut pass = 0u64;
    let mut order = Vec::new();
    let mut cursor = 0usize;
    for step in 0..steps {
        if cursor >= data.len() {
            cursor = 0;
            order.clear();
        }
        if order.is_empty() {
            let mut r = rng::rng_from(derive_seed(seed, pass));
            order = rng::permutation(&mut r, data.len());
            pass += 1;
        }
        let end = (cursor + batch_size).min(data.len());
        let batch = data.select(&order[cursor..end]);
        cursor = end;
        let (loss, g) = loss_and_grad(spec, &theta, &BatchView::Hard(&batch))?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch: step });
        }
        let flat = theta.flat_mut();
        for i in 0..flat.len() {
            flat[i] -= lr * g[i];
        }
    }
    Ok(theta)
}

/// Plain SGD for whole epochs, one seeded shuffle per epoch.
pub fn sgd_epochs(
    spec: &ModelSpec,
    init: &ModelParams,
    data: &LabeledBatch,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> Result<ModelParams> {
    let mut theta = init.clone();
    for epoch in 0..epochs {
        let mut r = rng::rng_from(derive_seed(seed, epoch as u64));
        let order = rng::permutation(&mut r, data.len());
        for chunk in order.chunks(batch_size) {
            let batch = data.select(chunk);
            let (loss, g) = loss_and_grad(spec, &theta, &BatchView::Hard(&batch))?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let flat = theta.flat_mut();
            for i in 0..flat.len() {
                flat[i] -= lr * g[i];
            }
        }
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval;

    #[test]
    fn step_schedule_matches_decay_recipe() {
        let s = Schedule::Step {
            milestones: vec![80, 120],
            factor: 0.1,
        };
        assert_eq!(schedule_lr(&s, 0, 0.1), 0.1);
        assert_eq!(schedule_lr(&s, 79, 0.1), 0.1);
        // exact closed form, and within float roundoff of the decimals
        assert_eq!(schedule_lr(&s, 80, 0.1), 0.1 * 0.1f64.powi(1));
        assert_eq!(schedule_lr(&s, 120, 0.1), 0.1 * 0.1f64.powi(2));
        assert!((schedule_lr(&s, 80, 0.1) - 0.01).abs() < 1e-15);
        assert!((schedule_lr(&s, 119, 0.1) - 0.01).abs() < 1e-15);
        assert!((schedule_lr(&s, 120, 0.1) - 0.001).abs() < 1e-15);
        assert!((schedule_lr(&s, 159, 0.1) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn factor_one_is_constant() {
        let s = Schedule::Step {
            milestones: vec![5, 10],
            factor: 1.0,
        };
        for e in 0..20 {
            assert_eq!(schedule_lr(&s, e, 0.3), 0.3);
        }
    }

    #[test]
    fn cyclic_endpoints_exact() {
        let s = Schedule::Cyclic {
            period: 10,
            min_lr: 0.001,
            max_lr: 0.1,
        };
        assert_eq!(schedule_lr(&s, 0, 1.0), 0.001);
        assert_eq!(schedule_lr(&s, 5, 1.0), 0.1);
        assert_eq!(schedule_lr(&s, 10, 1.0), 0.001);
        assert_eq!(schedule_lr(&s, 15, 1.0), 0.1);
        // rising and falling flanks are symmetric
        assert!((schedule_lr(&s, 3, 1.0) - schedule_lr(&s, 7, 1.0)).abs() < 1e-12);
    }

    fn toy_data(seed: u64, n: usize) -> LabeledBatch {
        let src = crate::data::DatasetSource {
            kind: crate::data::DatasetKind::Gaussians {
                classes: 2,
                dim: 2,
                separation: 0.5,
            },
            train: n,
            test: 8,
            seed,
        };
        crate::data::generate(&src).unwrap().0
    }

    #[test]
    fn zero_learning_rate_leaves_params_bitwise() {
        let spec = ModelSpec::mlp(&[2, 6, 2]).unwrap();
        let init = spec.init_params(1);
        let data = toy_data(11, 48);
        let cfg = TrainConfig {
            base_lr: 0.0,
            epochs: 3,
            ..TrainConfig::desk(5)
        };
        let cfg = TrainConfig {
            schedule: Schedule::Step {
                milestones: vec![],
                factor: 0.5,
            },
            ..cfg
        };
        let out = train(&spec, &init, &data, &cfg).unwrap();
        assert_eq!(out.flat(), init.flat());
    }

    #[test]
    fn sam_zero_rho_is_erm_bitwise() {
        let spec = ModelSpec::mlp(&[2, 6, 2]).unwrap();
        let init = spec.init_params(2);
        let data = toy_data(13, 64);
        let erm = TrainConfig::desk(9).scaled_to_epochs(4);
        let sam = TrainConfig {
            optimizer: OptimizerVariant::Sam { rho: 0.0 },
            ..erm.clone()
        };
        let a = train(&spec, &init, &data, &erm).unwrap();
        let b = train(&spec, &init, &data, &sam).unwrap();
        assert_eq!(a.flat(), b.flat());
    }

    #[test]
    fn training_is_deterministic() {
        let spec = ModelSpec::mlp(&[2, 6, 2]).unwrap();
        let init = spec.init_params(3);
        let data = toy_data(17, 64);
        let cfg = TrainConfig {
            augmentation: Augmentation::Mixup { alpha: 1.0 },
            ..TrainConfig::desk(21).scaled_to_epochs(5)
        };
        let a = train(&spec, &init, &data, &cfg).unwrap();
        let b = train(&spec, &init, &data, &cfg).unwrap();
        assert_eq!(a.flat(), b.flat());
    }

    #[test]
    fn separable_logistic_toy_converges() {
        // strongly separated 2-class gaussians, linear model
        let src = crate::data::DatasetSource {
            kind: crate::data::DatasetKind::Gaussians {
                classes: 2,
                dim: 2,
                separation: 0.8,
            },
            train: 128,
            test: 16,
            seed: 4,
        };
        let (train_set, _) = crate::data::generate(&src).unwrap();
        let spec = ModelSpec::mlp(&[2, 2]).unwrap();
        let init = spec.init_params(6);
        let cfg = TrainConfig {
            epochs: 50,
            weight_decay: 0.0,
            schedule: Schedule::Step {
                milestones: vec![],
                factor: 0.5,
            },
            ..TrainConfig::desk(33)
        };
        let out = train(&spec, &init, &train_set, &cfg).unwrap();
        let acc = eval::accuracy(&spec, &out, &train_set).unwrap();
        assert!(acc >= 0.99, "train accuracy {acc}");
    }

    #[test]
    fn divergence_guard_names_epoch() {
        let spec = ModelSpec::mlp(&[2, 4, 2]).unwrap();
        let init = spec.init_params(8);
        let data = toy_data(23, 32);
        let cfg = TrainConfig {
            base_lr: 1e150,
            epochs: 4,
            schedule: Schedule::Step {
                milestones: vec![],
                factor: 0.5,
            },
            ..TrainConfig::desk(2)
        };
        match train(&spec, &init, &data, &cfg) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn mixup_lambda_one_is_identity() {
        let data = toy_data(29, 8);
        let perm: Vec<usize> = (0..8).rev().collect();
        let mixed = mixup_batch(&data, 1.0, &perm);
        assert_eq!(mixed.inputs.data(), data.inputs.data());
        assert_eq!(mixed.labels_a, data.labels);
    }

    #[test]
    fn mixup_lambda_zero_is_permutation() {
        let data = toy_data(31, 8);
        let perm: Vec<usize> = (0..8).rev().collect();
        let mixed = mixup_batch(&data, 0.0, &perm);
        for (i, &j) in perm.iter().enumerate() {
            assert_eq!(mixed.inputs.sample(i), data.inputs.sample(j));
        }
        assert_eq!(
            mixed.labels_b,
            perm.iter().map(|&j| data.labels[j]).collect::<Vec<_>>()
        );
    }

    #[test]
    fn mixup_half_averages_samples() {
        // dyadic values so the averages are exact
        let inputs = Tensor::new(vec![2, 2], vec![0.25, 0.5, 0.75, 1.0]).unwrap();
        let batch = LabeledBatch::new(inputs, vec![0, 1]).unwrap();
        let mixed = mixup_batch(&batch, 0.5, &[1, 0]);
        assert_eq!(mixed.inputs.sample(0), &[0.5, 0.75]);
        assert_eq!(mixed.inputs.sample(1), &[0.5, 0.75]);
        // the loss is the lambda-weighted pair of hard-label losses
        let spec = ModelSpec::mlp(&[2, 2]).unwrap();
        let params = spec
            .params_from_flat(vec![0.8, -0.2, 0.1, 0.4, 0.0, 0.0])
            .unwrap();
        let (loss, _) = loss_and_grad(&spec, &params, &BatchView::Mixed(&mixed)).unwrap();
        let logits = crate::nn::forward(&spec, &params, &mixed.inputs).unwrap();
        let la = crate::nn::cross_entropy(&logits, &mixed.labels_a).unwrap();
        let lb = crate::nn::cross_entropy(&logits, &mixed.labels_b).unwrap();
        assert!((loss - (0.5 * la + 0.5 * lb)).abs() < 1e-15);
    }

    #[test]
    fn cutout_zero_size_unchanged() {
        let data = toy_data(37, 8);
        let cut = cutout_batch(&data, 0, 99);
        assert_eq!(cut.inputs.data(), data.inputs.data());
    }

    #[test]
    fn cutout_full_image_zeroes_everything() {
        let inputs = Tensor::scalar_filled(vec![3, 1, 4, 4], 0.7);
        let batch = LabeledBatch::new(inputs, vec![0, 1, 0]).unwrap();
        let cut = cutout_batch(&batch, 4, 7);
        assert!(cut.inputs.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cutout_interior_count_is_exact() {
        let inputs = Tensor::scalar_filled(vec![4, 2, 8, 8], 0.9);
        let batch = LabeledBatch::new(inputs, vec![0, 1, 0, 1]).unwrap();
        let size = 3;
        let cut = cutout_batch(&batch, size, 12);
        for i in 0..batch.len() {
            let zeros = cut.inputs.sample(i).iter().filter(|&&v| v == 0.0).count();
            assert_eq!(zeros, 2 * size * size);
        }
    }

    #[test]
    fn augmented_inputs_stay_in_range() {
        let data = toy_data(41, 32);
        let cut = cutout_batch(&data, 1, 3);
        assert!(cut.inputs.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let perm = rng::permutation(&mut rng::rng_from(5), data.len());
        let mixed = mixup_batch(&data, 0.3, &perm);
        assert!(mixed
            .inputs
            .data()
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v)));
    }
}
