//! Targeted and backdoor poisoning by gradient matching.
//!
//! Crafting minimizes the cosine alignment loss between the adversarial
//! objective gradient (optionally evaluated at the worst-case perturbed
//! parameters) and the training-loss gradient of the poisoned batch, by
//! signed-gradient descent on the per-sample perturbations under an L-inf
//! budget. Restarted crafting keeps the restart with the smallest final
//! alignment loss; backdoor crafting periodically retrains the surrogate on
//! the current poisoned set.

use rayon::prelude::*;

use crate::data::apply_perturbations;
use crate::error::{Error, Result};
use crate::nn::{self, LabeledBatch, ModelParams, ModelSpec};
use crate::rng::{self, derive_seed};
use crate::sharpness::{l2_norm, Objective, SharpGrad, SharpnessConfig};
use crate::tensor::Tensor;
use crate::training::{self, TrainConfig};

/// Seed-stream tags, part of the crate's determinism contract: every random
/// choice in crafting draws from `derive_seed(cfg.seed, tag)` so external
/// code can reproduce any sub-computation in isolation.
pub mod streams {
    /// Poison index selection.
    pub const INDICES: u64 = 0x706f6f6c;
    /// Base tag for restart `r`: `RESTART + r`.
    pub const RESTART: u64 = 0x72737472;
    /// Perturbation initialization (backdoor crafting).
    pub const DELTA_INIT: u64 = 0x64696e69;
    /// Base tag for surrogate re-initialization event `k`: `MODEL_RESTART + k`.
    pub const MODEL_RESTART: u64 = 0x6d727374;
}

use streams::{
    DELTA_INIT as STREAM_DELTA_INIT, INDICES as STREAM_INDICES,
    MODEL_RESTART as STREAM_MODEL_RESTART, RESTART as STREAM_RESTART,
};

/// Relative scale of the central-difference step used for the
/// gradient-of-gradient computation in `alignment_grad_wrt_deltas`.
const HVP_STEP_SCALE: f64 = 1e-6;

// ---------------------------------------------------------------------------
// victim set and trigger
// ---------------------------------------------------------------------------

/// Small pattern written over a fixed hyper-rectangle of an input.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerPatch {
    pub pattern: Tensor,
    pub anchor: Vec<usize>,
}

impl TriggerPatch {
    pub fn new(pattern: Tensor, anchor: Vec<usize>) -> Result<Self> {
        if anchor.len() != pattern.ndim() {
            return Err(Error::TriggerOutOfBounds(format!(
                "anchor rank {} does not match pattern rank {}",
                anchor.len(),
                pattern.ndim()
            )));
        }
        if pattern.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidConfig(
                "trigger pattern values must lie in [0, 1]".into(),
            ));
        }
        Ok(TriggerPatch { pattern, anchor })
    }

    /// Seeded random pattern of the given shape at the given anchor.
    pub fn random(shape: Vec<usize>, anchor: Vec<usize>, seed: u64) -> Result<Self> {
        let mut r = rng::rng_from(seed);
        let n = shape.iter().product();
        let data = rng::uniform_vec(&mut r, n, 0.0, 1.0);
        TriggerPatch::new(Tensor::new(shape, data)?, anchor)
    }

    /// Square pattern in the bottom-right corner of a sample shape.
    pub fn corner(sample_shape: &[usize], size: usize, seed: u64) -> Result<Self> {
        match sample_shape {
            [d] => {
                if size > *d {
                    return Err(Error::TriggerOutOfBounds(format!(
                        "trigger length {size} exceeds feature length {d}"
                    )));
                }
                TriggerPatch::random(vec![size], vec![d - size], seed)
            }
            [c, h, w] => {
                if size > *h || size > *w {
                    return Err(Error::TriggerOutOfBounds(format!(
                        "trigger side {size} exceeds image {h}x{w}"
                    )));
                }
                TriggerPatch::random(vec![*c, size, size], vec![0, h - size, w - size], seed)
            }
            other => Err(Error::TriggerOutOfBounds(format!(
                "unsupported sample shape {other:?}"
            ))),
        }
    }

    fn check_fits(&self, image_shape: &[usize]) -> Result<()> {
        if self.pattern.ndim() != image_shape.len() {
            return Err(Error::TriggerOutOfBounds(format!(
                "pattern rank {} vs image rank {}",
                self.pattern.ndim(),
                image_shape.len()
            )));
        }
        for ((&a, &p), &s) in self
            .anchor
            .iter()
            .zip(self.pattern.shape())
            .zip(image_shape)
        {
            if a + p > s {
                return Err(Error::TriggerOutOfBounds(format!(
                    "anchor {:?} + pattern {:?} exceeds image {:?}",
                    self.anchor,
                    self.pattern.shape(),
                    image_shape
                )));
            }
        }
        Ok(())
    }
}

/// Replaces pixels under the patch with the pattern values. All other
/// entries are untouched; applying twice equals applying once.
pub fn apply_trigger(image: &Tensor, patch: &TriggerPatch) -> Result<Tensor> {
    patch.check_fits(image.shape())?;
    let mut out = image.clone();
    let pshape = patch.pattern.shape();
    let ishape = image.shape();
    let rank = pshape.len();
    // strides of the image
    let mut strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * ishape[d + 1];
    }
    let mut idx = vec![0usize; rank];
    for (flat, &v) in patch.pattern.data().iter().enumerate() {
        // unravel flat index into the pattern's coordinates
        let mut rem = flat;
        for d in (0..rank).rev() {
            idx[d] = rem % pshape[d];
            rem /= pshape[d];
        }
        let target: usize = idx
            .iter()
            .zip(&patch.anchor)
            .zip(&strides)
            .map(|((&i, &a), &s)| (i + a) * s)
            .sum();
        out.data_mut()[target] = v;
    }
    Ok(out)
}

/// Victim samples sharing one true class, the adversarial class, and an
/// optional trigger (present exactly when the attack is a backdoor).
#[derive(Debug, Clone, PartialEq)]
pub struct VictimSpec {
    pub victims: Vec<(Tensor, usize)>,
    pub y_obj: usize,
    pub trigger: Option<TriggerPatch>,
}

impl VictimSpec {
    fn validated(self) -> Result<Self> {
        if self.victims.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let y_vic = self.victims[0].1;
        if self.victims.iter().any(|(_, y)| *y != y_vic) {
            return Err(Error::InvalidConfig(
                "all victim samples must share one class".into(),
            ));
        }
        if self.y_obj == y_vic {
            return Err(Error::InvalidConfig(
                "adversarial class must differ from the victim class".into(),
            ));
        }
        if let Some(t) = &self.trigger {
            for (x, _) in &self.victims {
                t.check_fits(x.shape())?;
            }
        }
        Ok(self)
    }

    pub fn targeted(victims: Vec<(Tensor, usize)>, y_obj: usize) -> Result<Self> {
        VictimSpec {
            victims,
            y_obj,
            trigger: None,
        }
        .validated()
    }

    pub fn backdoor(
        victims: Vec<(Tensor, usize)>,
        y_obj: usize,
        trigger: TriggerPatch,
    ) -> Result<Self> {
        VictimSpec {
            victims,
            y_obj,
            trigger: Some(trigger),
        }
        .validated()
    }

    pub fn y_vic(&self) -> usize {
        self.victims[0].1
    }

    /// Victim inputs stacked, with the trigger applied when present, all
    /// labeled with the adversarial class.
    pub fn objective_batch(&self) -> Result<LabeledBatch> {
        let mut stacked = Vec::with_capacity(self.victims.len());
        for (x, _) in &self.victims {
            match &self.trigger {
                Some(t) => stacked.push(apply_trigger(x, t)?),
                None => stacked.push(x.clone()),
            }
        }
        LabeledBatch::new(
            Tensor::stack(&stacked)?,
            vec![self.y_obj; self.victims.len()],
        )
    }
}

// ---------------------------------------------------------------------------
// adversarial objectives
// ---------------------------------------------------------------------------

/// Sum (not mean) of victim cross-entropy losses toward the adversarial
/// class, as a function of the flat parameter vector.
pub struct VictimObjective<'a> {
    spec: &'a ModelSpec,
    batch: LabeledBatch,
}

impl<'a> VictimObjective<'a> {
    pub fn new(spec: &'a ModelSpec, victim: &VictimSpec) -> Result<Self> {
        Ok(VictimObjective {
            spec,
            batch: victim.objective_batch()?,
        })
    }
}

impl Objective for VictimObjective<'_> {
    fn value(&self, theta: &[f64]) -> Result<f64> {
        let params = self.spec.params_from_flat(theta.to_vec())?;
        let logits = nn::forward(self.spec, &params, &self.batch.inputs)?;
        let per = nn::cross_entropy_per_sample(&logits, &self.batch.labels)?;
        Ok(per.iter().sum())
    }

    fn grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let params = self.spec.params_from_flat(theta.to_vec())?;
        nn::grad_params_sum(self.spec, &params, &self.batch)
    }
}

/// Summed victim loss toward the adversarial class (trigger-free mode).
pub fn targeted_loss(spec: &ModelSpec, params: &ModelParams, victim: &VictimSpec) -> Result<f64> {
    if victim.trigger.is_some() {
        return Err(Error::TriggerUnexpected);
    }
    VictimObjective::new(spec, victim)?.value(params.flat())
}

/// Summed victim loss toward the adversarial class with the trigger applied.
pub fn backdoor_loss(spec: &ModelSpec, params: &ModelParams, victim: &VictimSpec) -> Result<f64> {
    if victim.trigger.is_none() {
        return Err(Error::TriggerMissing);
    }
    VictimObjective::new(spec, victim)?.value(params.flat())
}

/// Adversarial-objective gradient at the (possibly) perturbed parameters.
pub fn victim_grad(
    spec: &ModelSpec,
    params: &ModelParams,
    victim: &VictimSpec,
    cfg: &SharpnessConfig,
) -> Result<SharpGrad> {
    let obj = VictimObjective::new(spec, victim)?;
    crate::sharpness::sharp_grad(&obj, params.flat(), cfg)
}

/// Mean adversarial-objective gradient across an ensemble of surrogates
/// with identical parameter layouts.
pub fn ensemble_grad(
    models: &[(&ModelSpec, &ModelParams)],
    victim: &VictimSpec,
    cfg: &SharpnessConfig,
) -> Result<SharpGrad> {
    if models.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let len = models[0].1.len();
    let mut acc = vec![0.0; len];
    let mut degenerate = false;
    for (spec, params) in models {
        if params.len() != len {
            return Err(Error::LengthMismatch {
                expected: len,
                got: params.len(),
            });
        }
        let g = victim_grad(spec, params, victim, cfg)?;
        degenerate |= g.degenerate;
        for (a, gi) in acc.iter_mut().zip(&g.grad) {
            *a += gi;
        }
    }
    let scale = 1.0 / models.len() as f64;
    for a in &mut acc {
        *a *= scale;
    }
    Ok(SharpGrad {
        grad: acc,
        degenerate,
    })
}

// ---------------------------------------------------------------------------
// alignment loss and its gradient with respect to the perturbations
// ---------------------------------------------------------------------------

/// One minus the cosine similarity of the two gradients; in [0, 2].
pub fn alignment_loss(g_q: &[f64], g_l: &[f64]) -> Result<f64> {
    if g_q.len() != g_l.len() {
        return Err(Error::LengthMismatch {
            expected: g_q.len(),
            got: g_l.len(),
        });
    }
    if let Some(err) = crate::sharpness::degenerate_pair(g_q, g_l) {
        return Err(err);
    }
    let dot: f64 = g_q.iter().zip(g_l).map(|(a, b)| a * b).sum();
    let cos = (dot / (l2_norm(g_q) * l2_norm(g_l))).clamp(-1.0, 1.0);
    Ok(1.0 - cos)
}

/// Alignment loss of the current poisoned batch plus its gradient with
/// respect to every perturbation entry.
///
/// The gradient flows through the training-loss gradient of the poisoned
/// batch; the mixed second derivative is evaluated exactly up to a
/// central-difference error by differencing per-sample input gradients at
/// parameters shifted along the alignment's cotangent vector.
pub struct AlignmentStep {
    pub alignment: f64,
    /// Per poisoned sample, same shape as the poison inputs.
    pub delta_grads: Tensor,
}

pub fn alignment_grad_wrt_deltas(
    spec: &ModelSpec,
    params: &ModelParams,
    poison: &LabeledBatch,
    g_q: &[f64],
) -> Result<AlignmentStep> {
    let g_l = nn::grad_params(spec, params, poison)?;
    let alignment = alignment_loss(g_q, &g_l)?;

    let nq = l2_norm(g_q);
    let nl = l2_norm(&g_l);
    let dot: f64 = g_q.iter().zip(&g_l).map(|(a, b)| a * b).sum();
    // d(alignment)/d(g_l)
    let cot: Vec<f64> = g_q
        .iter()
        .zip(&g_l)
        .map(|(&q, &l)| -(q / (nq * nl) - dot * l / (nq * nl * nl * nl)))
        .collect();
    let cot_norm = l2_norm(&cot);
    if cot_norm == 0.0 {
        // gradients exactly parallel: alignment is stationary in g_l
        return Ok(AlignmentStep {
            alignment,
            delta_grads: Tensor::zeros(poison.inputs.shape().to_vec()),
        });
    }

    let theta_norm = l2_norm(params.flat());
    let h = HVP_STEP_SCALE * (1.0 + theta_norm) / cot_norm;
    let plus = params.perturbed(&cot.iter().map(|c| c * h).collect::<Vec<_>>())?;
    let minus = params.perturbed(&cot.iter().map(|c| -c * h).collect::<Vec<_>>())?;
    let g_plus = nn::grad_inputs(spec, &plus, poison)?;
    let g_minus = nn::grad_inputs(spec, &minus, poison)?;
    let scale = 1.0 / (2.0 * h * poison.len() as f64);
    let data: Vec<f64> = g_plus
        .data()
        .iter()
        .zip(g_minus.data())
        .map(|(p, m)| (p - m) * scale)
        .collect();
    Ok(AlignmentStep {
        alignment,
        delta_grads: Tensor::from_parts(poison.inputs.shape().to_vec(), data),
    })
}

// ---------------------------------------------------------------------------
// poison set and crafting
// ---------------------------------------------------------------------------

/// Clean-label poison: distinct training indices plus per-index
/// perturbations under an L-inf budget.
#[derive(Debug, Clone, PartialEq)]
pub struct PoisonSet {
    pub indices: Vec<usize>,
    pub deltas: Vec<Tensor>,
    pub epsilon: f64,
}

impl PoisonSet {
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

#[derive(Debug, Clone, PartialEq)]
pub struct CraftConfig {
    /// Restart count for targeted crafting; retraining factor for backdoor.
    pub restarts: usize,
    pub steps: usize,
    /// Signed-gradient step size on the perturbations.
    pub step_size: f64,
    pub epsilon: f64,
    /// Fraction of the training set that may be perturbed (floored).
    pub ratio: f64,
    pub sharpness: SharpnessConfig,
    pub seed: u64,
}

impl CraftConfig {
    pub fn new(
        epsilon: f64,
        ratio: f64,
        restarts: usize,
        steps: usize,
        rho: f64,
        seed: u64,
    ) -> Self {
        CraftConfig {
            restarts,
            steps,
            step_size: epsilon / 10.0,
            epsilon,
            ratio,
            sharpness: SharpnessConfig::l2(rho),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.restarts == 0 && self.steps == 0 {
            return Err(Error::InvalidConfig(
                "need restarts >= 1 or steps >= 1".into(),
            ));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be >= 1".into()));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::InvalidConfig("ratio must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Projects one perturbation entry into the budget ball and the pixel-range
/// feasible interval around its clean value.
pub fn project_delta(delta: f64, clean: f64, epsilon: f64) -> f64 {
    let d = delta.clamp(-epsilon, epsilon);
    d.clamp(-clean, 1.0 - clean)
}

pub fn project_deltas(deltas: &mut [f64], clean: &[f64], epsilon: f64) {
    for (d, &x) in deltas.iter_mut().zip(clean) {
        *d = project_delta(*d, x, epsilon);
    }
}

/// Uniform-random poison indices: `floor(ratio * n)` draws from the pool.
pub fn select_poison_indices(
    total: usize,
    pool: &[usize],
    ratio: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    let count = (ratio * total as f64).floor() as usize;
    if count == 0 {
        return Err(Error::InvalidConfig(format!(
            "poison ratio {ratio} of {total} samples rounds down to zero"
        )));
    }
    if count > pool.len() {
        return Err(Error::InvalidConfig(format!(
            "need {count} poison samples but the eligible pool has {}",
            pool.len()
        )));
    }
    let mut r = rng::rng_from(seed);
    Ok(rng::sample_distinct(&mut r, pool, count))
}

fn init_deltas(train: &LabeledBatch, indices: &[usize], epsilon: f64, seed: u64) -> Vec<Tensor> {
    let mut r = rng::rng_from(seed);
    let shape = train.inputs.sample_shape().to_vec();
    let n = train.inputs.sample_len();
    indices
        .iter()
        .map(|&i| {
            let mut d = rng::uniform_vec(&mut r, n, -epsilon, epsilon);
            project_deltas(&mut d, train.inputs.sample(i), epsilon);
            Tensor::from_parts(shape.clone(), d)
        })
        .collect()
}

fn poison_batch(train: &LabeledBatch, indices: &[usize], deltas: &[Tensor]) -> LabeledBatch {
    let clean = train.select(indices);
    let mut inputs = clean.inputs.clone();
    for (i, d) in deltas.iter().enumerate() {
        let row = inputs.sample_mut(i);
        for (x, dv) in row.iter_mut().zip(d.data()) {
            *x = (*x + dv).clamp(0.0, 1.0);
        }
    }
    LabeledBatch {
        inputs,
        labels: clean.labels,
    }
}

/// One descent step against the alignment loss followed by projection. The
/// step is the alignment gradient rescaled so its largest coordinate moves
/// by exactly `step_size`: scale-free like a signed step, but continuous in
/// the objective gradient so small objective changes are not quantized
/// away. Returns false when the step degenerated and was skipped.
fn alignment_descent_step(
    spec: &ModelSpec,
    params: &ModelParams,
    train: &LabeledBatch,
    indices: &[usize],
    deltas: &mut [Tensor],
    g_q: &[f64],
    cfg: &CraftConfig,
) -> Result<bool> {
    let poison = poison_batch(train, indices, deltas);
    let step = match alignment_grad_wrt_deltas(spec, params, &poison, g_q) {
        Ok(s) => s,
        Err(Error::DegenerateGradient(_)) => return Ok(false),
        Err(e) => return Err(e),
    };
    let ginf = step
        .delta_grads
        .data()
        .iter()
        .fold(0.0f64, |m, g| m.max(g.abs()));
    if ginf == 0.0 {
        return Ok(false);
    }
    let scale = cfg.step_size / ginf;
    for (i, &idx) in indices.iter().enumerate() {
        let clean = train.inputs.sample(idx);
        let g = step.delta_grads.sample(i);
        let d = deltas[i].data_mut();
        for k in 0..d.len() {
            d[k] = project_delta(d[k] - scale * g[k], clean[k], cfg.epsilon);
            assert!(
                d[k].abs() <= cfg.epsilon,
                "budget violated after projection"
            );
        }
    }
    Ok(true)
}

fn final_alignment(
    spec: &ModelSpec,
    params: &ModelParams,
    train: &LabeledBatch,
    indices: &[usize],
    deltas: &[Tensor],
    g_q: &[f64],
) -> Option<f64> {
    let poison = poison_batch(train, indices, deltas);
    let g_l = nn::grad_params(spec, params, &poison).ok()?;
    alignment_loss(g_q, &g_l).ok()
}

/// Outcome of a single crafting restart.
#[derive(Debug, Clone)]
pub struct RestartOutcome {
    pub deltas: Vec<Tensor>,
    /// Final alignment loss; infinite when it could not be evaluated.
    pub alignment: f64,
    /// Alignment loss of the freshly initialized perturbations.
    pub initial_alignment: f64,
    pub degenerate_steps: usize,
}

/// Runs one restart of targeted crafting from an explicit delta-init seed.
pub fn craft_targeted_restart(
    spec: &ModelSpec,
    pretrained: &ModelParams,
    train: &LabeledBatch,
    victim: &VictimSpec,
    cfg: &CraftConfig,
    indices: &[usize],
    restart_seed: u64,
) -> Result<RestartOutcome> {
    let g_q = victim_grad(spec, pretrained, victim, &cfg.sharpness)?;
    let mut deltas = init_deltas(train, indices, cfg.epsilon, restart_seed);
    let mut degenerate_steps = 0usize;
    if g_q.grad.iter().all(|&g| g == 0.0) {
        // no adversarial signal at all: every step is a no-op
        return Ok(RestartOutcome {
            deltas,
            alignment: f64::INFINITY,
            initial_alignment: f64::INFINITY,
            degenerate_steps: cfg.steps,
        });
    }
    let initial_alignment = final_alignment(spec, pretrained, train, indices, &deltas, &g_q.grad)
        .unwrap_or(f64::INFINITY);
    for _ in 0..cfg.steps {
        if !alignment_descent_step(
            spec,
            pretrained,
            train,
            indices,
            &mut deltas,
            &g_q.grad,
            cfg,
        )? {
            degenerate_steps += 1;
        }
    }
    let alignment = final_alignment(spec, pretrained, train, indices, &deltas, &g_q.grad)
        .unwrap_or(f64::INFINITY);
    Ok(RestartOutcome {
        deltas,
        alignment,
        initial_alignment,
        degenerate_steps,
    })
}

#[derive(Debug, Clone)]
pub struct CraftOutcome {
    pub poison: PoisonSet,
    /// Final alignment loss of the selected perturbations.
    pub alignment: f64,
    /// Initial alignment loss of the selected restart's random deltas.
    pub initial_alignment: f64,
    pub degenerate_steps: usize,
    /// Index of the selected restart (targeted crafting only).
    pub restart: usize,
}

/// Restarted targeted crafting: independent restarts with derived seeds,
/// keeping the restart with the smallest final alignment loss (ties break
/// toward the lowest restart index). Restarts run in parallel.
///
/// Poison indices are drawn from the adversarial class: a sample whose true
/// label is the adversarial class can drag the decision boundary over the
/// victim by being fit correctly, which is what gradient alignment needs.
pub fn craft_targeted(
    spec: &ModelSpec,
    pretrained: &ModelParams,
    train: &LabeledBatch,
    victim: &VictimSpec,
    cfg: &CraftConfig,
) -> Result<CraftOutcome> {
    cfg.validate()?;
    if victim.trigger.is_some() {
        return Err(Error::TriggerUnexpected);
    }
    if cfg.restarts == 0 {
        return Err(Error::InvalidConfig(
            "targeted crafting needs restarts >= 1".into(),
        ));
    }
    let pool: Vec<usize> = (0..train.len())
        .filter(|&i| train.labels[i] == victim.y_obj)
        .collect();
    let indices = select_poison_indices(
        train.len(),
        &pool,
        cfg.ratio,
        derive_seed(cfg.seed, STREAM_INDICES),
    )?;

    let outcomes: Vec<RestartOutcome> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            craft_targeted_restart(
                spec,
                pretrained,
                train,
                victim,
                cfg,
                &indices,
                derive_seed(cfg.seed, STREAM_RESTART.wrapping_add(r as u64)),
            )
        })
        .collect::<Result<_>>()?;

    let degenerate_steps: usize = outcomes.iter().map(|o| o.degenerate_steps).sum();
    if degenerate_steps == cfg.restarts * cfg.steps {
        return Err(Error::CraftingFailed);
    }
    let mut best = 0;
    for (r, o) in outcomes.iter().enumerate() {
        if o.alignment < outcomes[best].alignment {
            best = r;
        }
    }
    let chosen = &outcomes[best];
    Ok(CraftOutcome {
        poison: PoisonSet {
            indices,
            deltas: chosen.deltas.clone(),
            epsilon: cfg.epsilon,
        },
        alignment: chosen.alignment,
        initial_alignment: chosen.initial_alignment,
        degenerate_steps,
        restart: best,
    })
}

/// Backdoor crafting: a single perturbation trajectory over the triggered
/// objective, with the surrogate retrained from scratch on the current
/// poisoned set every `floor(steps / (restarts + 1))` steps. Poison indices
/// are drawn from the adversarial class.
pub fn craft_backdoor(
    spec: &ModelSpec,
    pretrained: &ModelParams,
    train: &LabeledBatch,
    victim: &VictimSpec,
    cfg: &CraftConfig,
    retrain_cfg: &TrainConfig,
) -> Result<CraftOutcome> {
    cfg.validate()?;
    if victim.trigger.is_none() {
        return Err(Error::TriggerMissing);
    }
    let pool: Vec<usize> = (0..train.len())
        .filter(|&i| train.labels[i] == victim.y_obj)
        .collect();
    let indices = select_poison_indices(
        train.len(),
        &pool,
        cfg.ratio,
        derive_seed(cfg.seed, STREAM_INDICES),
    )?;

    let mut surrogate = pretrained.clone();
    let mut g_q = victim_grad(spec, &surrogate, victim, &cfg.sharpness)?;
    let mut deltas = init_deltas(
        train,
        &indices,
        cfg.epsilon,
        derive_seed(cfg.seed, STREAM_DELTA_INIT),
    );
    let mut degenerate_steps = 0usize;
    let initial_alignment = final_alignment(spec, &surrogate, train, &indices, &deltas, &g_q.grad)
        .unwrap_or(f64::INFINITY);
    let chunk = cfg.steps / (cfg.restarts + 1);
    let mut retrain_events = 0u64;

    for m in 1..=cfg.steps {
        let signal = !g_q.grad.iter().all(|&g| g == 0.0);
        let stepped = signal
            && alignment_descent_step(
                spec,
                &surrogate,
                train,
                &indices,
                &mut deltas,
                &g_q.grad,
                cfg,
            )?;
        if !stepped {
            degenerate_steps += 1;
        }
        if chunk > 0 && m % chunk == 0 && m != cfg.steps {
            retrain_events += 1;
            let poisoned = apply_perturbations(train, &indices, &deltas);
            let init = spec.init_params(derive_seed(
                cfg.seed,
                STREAM_MODEL_RESTART.wrapping_add(retrain_events),
            ));
            let event_cfg = retrain_cfg
                .clone()
                .with_seed(derive_seed(retrain_cfg.seed, retrain_events));
            surrogate = training::train(spec, &init, &poisoned, &event_cfg)?;
            g_q = victim_grad(spec, &surrogate, victim, &cfg.sharpness)?;
        }
    }
    if degenerate_steps == cfg.steps {
        return Err(Error::CraftingFailed);
    }
    let alignment = final_alignment(spec, &surrogate, train, &indices, &deltas, &g_q.grad)
        .unwrap_or(f64::INFINITY);
    Ok(CraftOutcome {
        poison: PoisonSet {
            indices,
            deltas,
            epsilon: cfg.epsilon,
        },
        alignment,
        initial_alignment,
        degenerate_steps,
        restart: 0,
    })
}
