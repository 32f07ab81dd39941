//! Experiment orchestration: craft, retrain from scratch, evaluate, repeat
//! over derived per-trial seeds, and aggregate metrics.
//!
//! Seed discipline: every trial seed is derived from the master seed and the
//! trial index alone, never from the attack mode or sharpness radius, so
//! paired comparisons retrain identically initialized models.

use std::path::Path;

use rayon::prelude::*;

use crate::data::{self, DatasetSource};
use crate::error::{Error, Result};
use crate::eval;
use crate::gradmatch::{self, CraftConfig, TriggerPatch, VictimSpec};
use crate::nn::{LabeledBatch, LayerKind, ModelSpec};
use crate::persist::{self, fmt_f64, KvMap};
use crate::rng::{self, derive_seed};
use crate::sharpness::{self, SharpnessConfig};
use crate::tensor::Tensor;
use crate::training::{self, TrainConfig};
use crate::unlearnable::{self, UntargetedConfig, UntargetedMode};

const STREAM_PRETRAIN_INIT: u64 = 1;
const STREAM_PRETRAIN: u64 = 2;
const STREAM_VICTIM: u64 = 3;
const STREAM_TRIGGER: u64 = 4;
const STREAM_CRAFT: u64 = 5;
const STREAM_RETRAIN_INIT: u64 = 6;
const STREAM_RETRAIN: u64 = 7;
const STREAM_SURROGATE_RETRAIN: u64 = 8;
const STREAM_CASE: u64 = 0x100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackMode {
    Targeted,
    Backdoor,
    ErrorMin,
    ErrorMax,
}

impl AttackMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttackMode::Targeted => "targeted",
            AttackMode::Backdoor => "backdoor",
            AttackMode::ErrorMin => "error-min",
            AttackMode::ErrorMax => "error-max",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "targeted" => Ok(AttackMode::Targeted),
            "backdoor" => Ok(AttackMode::Backdoor),
            "error-min" => Ok(AttackMode::ErrorMin),
            "error-max" => Ok(AttackMode::ErrorMax),
            other => Err(Error::InvalidConfig(format!("unknown mode `{other}`"))),
        }
    }

    pub fn is_untargeted(&self) -> bool {
        matches!(self, AttackMode::ErrorMin | AttackMode::ErrorMax)
    }
}

/// Dense stack over the flattened input. The standard surrogate and victim
/// architecture for the desk-scale datasets.
pub fn build_mlp(input_shape: &[usize], hidden: &[usize], classes: usize) -> Result<ModelSpec> {
    let input_dim: usize = input_shape.iter().product();
    let mut layers = Vec::new();
    if input_shape.len() > 1 {
        layers.push(LayerKind::Flatten);
    }
    let mut dims = vec![input_dim];
    dims.extend_from_slice(hidden);
    dims.push(classes);
    for i in 0..dims.len() - 1 {
        layers.push(LayerKind::Dense {
            inputs: dims[i],
            outputs: dims[i + 1],
        });
        if i + 2 < dims.len() {
            layers.push(LayerKind::Relu);
        }
    }
    ModelSpec::new(input_shape.to_vec(), layers)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: AttackMode,
    pub dataset: DatasetSource,
    pub hidden: Vec<usize>,
    pub trials: usize,
    /// Poison-target cases per trial (targeted attacks).
    pub cases_per_trial: usize,
    /// Victim samples per case.
    pub victims: usize,
    pub trigger_size: usize,
    pub master_seed: u64,
    /// Crafting knobs for targeted/backdoor; the seed field is overwritten
    /// with a derived per-case seed.
    pub craft: CraftConfig,
    /// Crafting knobs for error-min/error-max; seed overwritten per trial.
    pub untargeted: UntargetedConfig,
    /// Surrogate pretraining epochs (targeted/backdoor).
    pub pretrain_epochs: usize,
    /// Weight decay during surrogate pretraining. Heavier decay keeps the
    /// surrogate's parameter norm small, which makes a fixed sharpness
    /// radius a proportionally larger perturbation.
    pub pretrain_weight_decay: f64,
    /// Epoch count for surrogate retraining inside backdoor crafting.
    pub surrogate_retrain_epochs: usize,
    /// Victim retraining recipe; seed overwritten per case.
    pub retrain: TrainConfig,
    /// Radius for the reported sharpness metric.
    pub probe_rho: f64,
}

impl ExperimentConfig {
    pub fn desk_default(mode: AttackMode, master_seed: u64) -> Self {
        let dataset = match mode {
            AttackMode::Targeted | AttackMode::Backdoor => {
                DatasetSource::gaussians(2, 2, 0.5, 200, 200, 1)
            }
            _ => DatasetSource::two_moons(0.1, 240, 240, 1),
        };
        let trials = if mode.is_untargeted() { 5 } else { 20 };
        ExperimentConfig {
            mode,
            dataset,
            hidden: vec![16],
            trials,
            cases_per_trial: if mode == AttackMode::Targeted { 10 } else { 1 },
            victims: 1,
            trigger_size: 1,
            master_seed,
            craft: CraftConfig::new(0.1, 0.02, 4, 60, 0.05, 0),
            untargeted: match mode {
                AttackMode::ErrorMax => UntargetedConfig::error_max(0.15, 0.05, 0),
                _ => UntargetedConfig::error_min(0.15, 0.05, 0),
            },
            pretrain_epochs: 30,
            pretrain_weight_decay: 5e-4,
            surrogate_retrain_epochs: 40,
            retrain: TrainConfig::desk(0),
            probe_rho: 0.05,
        }
    }

    fn classes(&self, train: &LabeledBatch, test: &LabeledBatch) -> usize {
        self.dataset.classes().unwrap_or_else(|| {
            train
                .labels
                .iter()
                .chain(&test.labels)
                .copied()
                .max()
                .unwrap_or(1)
                + 1
        })
    }
}

/// One trial's raw outcome. A failed trial keeps its error string and is
/// excluded from aggregate means.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub success_rate: Option<f64>,
    pub clean_accuracy: Option<f64>,
    pub sharpness: Option<f64>,
    pub alignment: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Metrics {
    pub success_rate: Option<f64>,
    pub avg_success_rate: Option<f64>,
    pub clean_test_accuracy: Option<f64>,
    pub sharpness_estimate: Option<f64>,
    pub excluded_trials: usize,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let collected: Vec<f64> = values.collect();
    if collected.is_empty() {
        None
    } else {
        Some(collected.iter().sum::<f64>() / collected.len() as f64)
    }
}

impl Metrics {
    pub fn aggregate(records: &[TrialRecord]) -> Metrics {
        let ok = records.iter().filter(|r| r.error.is_none());
        let success = mean_of(ok.clone().filter_map(|r| r.success_rate));
        Metrics {
            success_rate: success,
            avg_success_rate: success,
            clean_test_accuracy: mean_of(ok.clone().filter_map(|r| r.clean_accuracy)),
            sharpness_estimate: mean_of(ok.clone().filter_map(|r| r.sharpness)),
            excluded_trials: records.iter().filter(|r| r.error.is_some()).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentManifest {
    pub config: ExperimentConfig,
    pub trial_seeds: Vec<u64>,
    pub records: Vec<TrialRecord>,
    pub metrics: Metrics,
    pub version: String,
    pub wall_clock_secs: f64,
}

pub fn trial_seed(master: u64, trial: usize) -> u64 {
    derive_seed(master, trial as u64)
}

struct TrialContext<'a> {
    cfg: &'a ExperimentConfig,
    spec: &'a ModelSpec,
    train: &'a LabeledBatch,
    test: &'a LabeledBatch,
    classes: usize,
}

fn pretrain_surrogate(ctx: &TrialContext, seed: u64) -> Result<crate::nn::ModelParams> {
    let init = ctx
        .spec
        .init_params(derive_seed(seed, STREAM_PRETRAIN_INIT));
    let mut cfg = ctx
        .cfg
        .retrain
        .clone()
        .scaled_to_epochs(ctx.cfg.pretrain_epochs)
        .with_seed(derive_seed(seed, STREAM_PRETRAIN));
    cfg.weight_decay = ctx.cfg.pretrain_weight_decay;
    training::train(ctx.spec, &init, ctx.train, &cfg)
}

/// Draws a victim class and a distinct adversarial class.
pub fn pick_classes(rng: &mut rand_chacha::ChaCha8Rng, classes: usize) -> (usize, usize) {
    use rand::Rng;
    let y_vic = rng.random_range(0..classes);
    let mut y_obj = rng.random_range(0..classes - 1);
    if y_obj >= y_vic {
        y_obj += 1;
    }
    (y_vic, y_obj)
}

/// Victim samples of one class drawn from a split.
fn sample_victims(
    batch: &LabeledBatch,
    class: usize,
    count: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Vec<(Tensor, usize, usize)>> {
    let pool: Vec<usize> = (0..batch.len())
        .filter(|&i| batch.labels[i] == class)
        .collect();
    if pool.len() < count {
        return Err(Error::EmptyClass { class });
    }
    let chosen = rng::sample_distinct(rng, &pool, count);
    Ok(chosen
        .into_iter()
        .map(|i| (batch.inputs.sample_tensor(i), class, i))
        .collect())
}

struct CaseOutcome {
    success: f64,
    accuracy: f64,
    sharpness: f64,
    alignment: f64,
}

fn run_targeted_case(
    ctx: &TrialContext,
    surrogate: &crate::nn::ModelParams,
    case_seed: u64,
) -> Result<CaseOutcome> {
    let mut vic_rng = rng::rng_from(derive_seed(case_seed, STREAM_VICTIM));
    let (y_vic, y_obj) = pick_classes(&mut vic_rng, ctx.classes);
    let picked = sample_victims(ctx.test, y_vic, ctx.cfg.victims, &mut vic_rng)?;
    let victim = VictimSpec::targeted(picked.into_iter().map(|(x, y, _)| (x, y)).collect(), y_obj)?;

    let mut craft = ctx.cfg.craft.clone();
    craft.seed = derive_seed(case_seed, STREAM_CRAFT);
    let outcome = gradmatch::craft_targeted(ctx.spec, surrogate, ctx.train, &victim, &craft)?;
    let poisoned = outcome.poison.apply(ctx.train);

    let init = ctx
        .spec
        .init_params(derive_seed(case_seed, STREAM_RETRAIN_INIT));
    let retrain = ctx
        .cfg
        .retrain
        .clone()
        .with_seed(derive_seed(case_seed, STREAM_RETRAIN));
    let model = training::train(ctx.spec, &init, &poisoned, &retrain)?;

    let ev = eval::eval_targeted(ctx.spec, &model, &victim)?;
    let accuracy = eval::accuracy(ctx.spec, &model, ctx.test)?;
    let sharpness = sharpness::sharpness_estimate(
        ctx.spec,
        &model,
        &poisoned,
        &SharpnessConfig::l2(ctx.cfg.probe_rho),
    )?;
    Ok(CaseOutcome {
        success: ev.success_rate,
        accuracy,
        sharpness,
        alignment: outcome.alignment,
    })
}

fn run_backdoor_case(
    ctx: &TrialContext,
    surrogate: &crate::nn::ModelParams,
    case_seed: u64,
) -> Result<CaseOutcome> {
    let mut vic_rng = rng::rng_from(derive_seed(case_seed, STREAM_VICTIM));
    let (y_vic, y_obj) = pick_classes(&mut vic_rng, ctx.classes);
    let picked = sample_victims(ctx.train, y_vic, ctx.cfg.victims, &mut vic_rng)?;
    let trigger = TriggerPatch::corner(
        ctx.train.inputs.sample_shape(),
        ctx.cfg.trigger_size,
        derive_seed(case_seed, STREAM_TRIGGER),
    )?;
    let victim = VictimSpec::backdoor(
        picked.into_iter().map(|(x, y, _)| (x, y)).collect(),
        y_obj,
        trigger.clone(),
    )?;

    let mut craft = ctx.cfg.craft.clone();
    craft.seed = derive_seed(case_seed, STREAM_CRAFT);
    let surrogate_retrain = ctx
        .cfg
        .retrain
        .clone()
        .scaled_to_epochs(ctx.cfg.surrogate_retrain_epochs)
        .with_seed(derive_seed(case_seed, STREAM_SURROGATE_RETRAIN));
    let outcome = gradmatch::craft_backdoor(
        ctx.spec,
        surrogate,
        ctx.train,
        &victim,
        &craft,
        &surrogate_retrain,
    )?;
    let poisoned = outcome.poison.apply(ctx.train);

    let init = ctx
        .spec
        .init_params(derive_seed(case_seed, STREAM_RETRAIN_INIT));
    let retrain = ctx
        .cfg
        .retrain
        .clone()
        .with_seed(derive_seed(case_seed, STREAM_RETRAIN));
    let model = training::train(ctx.spec, &init, &poisoned, &retrain)?;

    let success = eval::eval_backdoor(ctx.spec, &model, ctx.test, y_vic, &trigger, y_obj)?;
    let accuracy = eval::accuracy(ctx.spec, &model, ctx.test)?;
    let sharpness = sharpness::sharpness_estimate(
        ctx.spec,
        &model,
        &poisoned,
        &SharpnessConfig::l2(ctx.cfg.probe_rho),
    )?;
    Ok(CaseOutcome {
        success,
        accuracy,
        sharpness,
        alignment: outcome.alignment,
    })
}

fn run_untargeted_trial(ctx: &TrialContext, seed: u64) -> Result<CaseOutcome> {
    let mut ucfg = ctx.cfg.untargeted.clone();
    ucfg.mode = match ctx.cfg.mode {
        AttackMode::ErrorMin => UntargetedMode::ErrorMin,
        AttackMode::ErrorMax => UntargetedMode::ErrorMax,
        _ => unreachable!("untargeted trial on a targeted mode"),
    };
    ucfg.seed = derive_seed(seed, STREAM_CRAFT);
    let set = match ucfg.mode {
        UntargetedMode::ErrorMin => unlearnable::craft_error_min(ctx.spec, ctx.train, &ucfg)?.set,
        UntargetedMode::ErrorMax => unlearnable::craft_error_max(ctx.spec, ctx.train, &ucfg)?,
    };
    let poisoned = set.apply(ctx.train);

    let init = ctx.spec.init_params(derive_seed(seed, STREAM_RETRAIN_INIT));
    let retrain = ctx
        .cfg
        .retrain
        .clone()
        .with_seed(derive_seed(seed, STREAM_RETRAIN));
    let model = training::train(ctx.spec, &init, &poisoned, &retrain)?;

    let accuracy = eval::accuracy(ctx.spec, &model, ctx.test)?;
    let sharpness = sharpness::sharpness_estimate(
        ctx.spec,
        &model,
        &poisoned,
        &SharpnessConfig::l2(ctx.cfg.probe_rho),
    )?;
    Ok(CaseOutcome {
        success: f64::NAN,
        accuracy,
        sharpness,
        alignment: f64::NAN,
    })
}

fn run_trial(ctx: &TrialContext, trial: usize) -> TrialRecord {
    let seed = trial_seed(ctx.cfg.master_seed, trial);
    let result = (|| -> Result<TrialRecord> {
        match ctx.cfg.mode {
            AttackMode::Targeted | AttackMode::Backdoor => {
                let surrogate = pretrain_surrogate(ctx, seed)?;
                let mut outcomes = Vec::with_capacity(ctx.cfg.cases_per_trial);
                for case in 0..ctx.cfg.cases_per_trial {
                    let case_seed = derive_seed(seed, STREAM_CASE + case as u64);
                    let out = match ctx.cfg.mode {
                        AttackMode::Targeted => run_targeted_case(ctx, &surrogate, case_seed)?,
                        _ => run_backdoor_case(ctx, &surrogate, case_seed)?,
                    };
                    outcomes.push(out);
                }
                let n = outcomes.len() as f64;
                Ok(TrialRecord {
                    trial,
                    seed,
                    success_rate: Some(outcomes.iter().map(|o| o.success).sum::<f64>() / n),
                    clean_accuracy: Some(outcomes.iter().map(|o| o.accuracy).sum::<f64>() / n),
                    sharpness: Some(outcomes.iter().map(|o| o.sharpness).sum::<f64>() / n),
                    alignment: Some(outcomes.iter().map(|o| o.alignment).sum::<f64>() / n),
                    error: None,
                })
            }
            AttackMode::ErrorMin | AttackMode::ErrorMax => {
                let out = run_untargeted_trial(ctx, seed)?;
                Ok(TrialRecord {
                    trial,
                    seed,
                    success_rate: None,
                    clean_accuracy: Some(out.accuracy),
                    sharpness: Some(out.sharpness),
                    alignment: None,
                    error: None,
                })
            }
        }
    })();
    result.unwrap_or_else(|e| TrialRecord {
        trial,
        seed,
        success_rate: None,
        clean_accuracy: None,
        sharpness: None,
        alignment: None,
        error: Some(e.to_string()),
    })
}

/// Runs the full craft/retrain/evaluate pipeline over all trials. Trials run
/// in parallel and are joined in trial order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentManifest> {
    let started = std::time::Instant::now();
    let (train, test) = data::generate(&cfg.dataset)?;
    let classes = cfg.classes(&train, &test);
    let spec = build_mlp(train.inputs.sample_shape(), &cfg.hidden, classes)?;
    train.check_labels(classes)?;
    test.check_labels(classes)?;

    let ctx = TrialContext {
        cfg,
        spec: &spec,
        train: &train,
        test: &test,
        classes,
    };
    let records: Vec<TrialRecord> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(&ctx, t))
        .collect();
    let metrics = Metrics::aggregate(&records);
    Ok(ExperimentManifest {
        trial_seeds: (0..cfg.trials)
            .map(|t| trial_seed(cfg.master_seed, t))
            .collect(),
        records,
        metrics,
        config: cfg.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// manifest serialization
// ---------------------------------------------------------------------------

fn push_config(kv: &mut KvMap, cfg: &ExperimentConfig) {
    kv.push("mode", cfg.mode.as_str());
    persist::push_dataset(kv, "dataset", &cfg.dataset);
    kv.push("model.hidden", persist::fmt_usize_list(&cfg.hidden));
    kv.push("trials", cfg.trials.to_string());
    kv.push("cases_per_trial", cfg.cases_per_trial.to_string());
    kv.push("victims", cfg.victims.to_string());
    kv.push("trigger_size", cfg.trigger_size.to_string());
    kv.push("master_seed", cfg.master_seed.to_string());
    kv.push("craft.restarts", cfg.craft.restarts.to_string());
    kv.push("craft.steps", cfg.craft.steps.to_string());
    kv.push_f64("craft.step_size", cfg.craft.step_size);
    kv.push_f64("craft.epsilon", cfg.craft.epsilon);
    kv.push_f64("craft.ratio", cfg.craft.ratio);
    kv.push_f64("craft.rho", cfg.craft.sharpness.rho);
    kv.push(
        "craft.p_norm",
        match cfg.craft.sharpness.p_norm {
            sharpness::PNorm::L2 => "2",
            sharpness::PNorm::LInf => "inf",
        },
    );
    kv.push("untargeted.pgd_steps", cfg.untargeted.pgd_steps.to_string());
    kv.push(
        "untargeted.inner_steps",
        cfg.untargeted.inner_steps.to_string(),
    );
    kv.push("untargeted.epochs", cfg.untargeted.epochs.to_string());
    kv.push_f64("untargeted.alpha", cfg.untargeted.alpha);
    kv.push_f64("untargeted.epsilon", cfg.untargeted.epsilon);
    kv.push_f64("untargeted.portion", cfg.untargeted.portion);
    kv.push(
        "untargeted.pretrain_epochs",
        cfg.untargeted.pretrain_epochs.to_string(),
    );
    kv.push(
        "untargeted.batch_size",
        cfg.untargeted.batch_size.to_string(),
    );
    kv.push_f64("untargeted.inner_lr", cfg.untargeted.inner_lr);
    kv.push_f64("untargeted.rho", cfg.untargeted.sharpness.rho);
    kv.push(
        "untargeted.per_sample_direction",
        (cfg.untargeted.per_sample_direction as u8).to_string(),
    );
    kv.push(
        "untargeted.sharp_inner_updates",
        (cfg.untargeted.sharp_inner_updates as u8).to_string(),
    );
    kv.push("pretrain_epochs", cfg.pretrain_epochs.to_string());
    kv.push_f64("pretrain_weight_decay", cfg.pretrain_weight_decay);
    kv.push(
        "surrogate_retrain_epochs",
        cfg.surrogate_retrain_epochs.to_string(),
    );
    persist::push_train_config(kv, "retrain", &cfg.retrain);
    kv.push_f64("probe_rho", cfg.probe_rho);
}

pub fn config_from_kv(kv: &KvMap) -> Result<ExperimentConfig> {
    let mode = AttackMode::parse(kv.require("mode")?)?;
    let mut cfg = ExperimentConfig::desk_default(mode, kv.require_u64("master_seed")?);
    cfg.dataset = persist::read_dataset(kv, "dataset")?;
    if kv.contains("model.hidden") {
        cfg.hidden = kv.require_usize_list("model.hidden")?;
    }
    let usize_field = |kv: &KvMap, key: &str, slot: &mut usize| -> Result<()> {
        if kv.contains(key) {
            *slot = kv.require_usize(key)?;
        }
        Ok(())
    };
    let f64_field = |kv: &KvMap, key: &str, slot: &mut f64| -> Result<()> {
        if kv.contains(key) {
            *slot = kv.require_f64(key)?;
        }
        Ok(())
    };
    usize_field(kv, "trials", &mut cfg.trials)?;
    usize_field(kv, "cases_per_trial", &mut cfg.cases_per_trial)?;
    usize_field(kv, "victims", &mut cfg.victims)?;
    usize_field(kv, "trigger_size", &mut cfg.trigger_size)?;
    usize_field(kv, "craft.restarts", &mut cfg.craft.restarts)?;
    usize_field(kv, "craft.steps", &mut cfg.craft.steps)?;
    f64_field(kv, "craft.step_size", &mut cfg.craft.step_size)?;
    f64_field(kv, "craft.epsilon", &mut cfg.craft.epsilon)?;
    f64_field(kv, "craft.ratio", &mut cfg.craft.ratio)?;
    f64_field(kv, "craft.rho", &mut cfg.craft.sharpness.rho)?;
    if kv.contains("craft.p_norm") {
        cfg.craft.sharpness.p_norm = match kv.require("craft.p_norm")? {
            "2" => sharpness::PNorm::L2,
            "inf" => sharpness::PNorm::LInf,
            other => {
                return Err(Error::InvalidConfig(format!("unknown p_norm `{other}`")));
            }
        };
    }
    usize_field(kv, "untargeted.pgd_steps", &mut cfg.untargeted.pgd_steps)?;
    usize_field(
        kv,
        "untargeted.inner_steps",
        &mut cfg.untargeted.inner_steps,
    )?;
    usize_field(kv, "untargeted.epochs", &mut cfg.untargeted.epochs)?;
    f64_field(kv, "untargeted.alpha", &mut cfg.untargeted.alpha)?;
    f64_field(kv, "untargeted.epsilon", &mut cfg.untargeted.epsilon)?;
    f64_field(kv, "untargeted.portion", &mut cfg.untargeted.portion)?;
    usize_field(
        kv,
        "untargeted.pretrain_epochs",
        &mut cfg.untargeted.pretrain_epochs,
    )?;
    usize_field(kv, "untargeted.batch_size", &mut cfg.untargeted.batch_size)?;
    f64_field(kv, "untargeted.inner_lr", &mut cfg.untargeted.inner_lr)?;
    f64_field(kv, "untargeted.rho", &mut cfg.untargeted.sharpness.rho)?;
    if kv.contains("untargeted.per_sample_direction") {
        cfg.untargeted.per_sample_direction =
            kv.require_usize("untargeted.per_sample_direction")? != 0;
    }
    if kv.contains("untargeted.sharp_inner_updates") {
        cfg.untargeted.sharp_inner_updates =
            kv.require_usize("untargeted.sharp_inner_updates")? != 0;
    }
    usize_field(kv, "pretrain_epochs", &mut cfg.pretrain_epochs)?;
    f64_field(kv, "pretrain_weight_decay", &mut cfg.pretrain_weight_decay)?;
    usize_field(
        kv,
        "surrogate_retrain_epochs",
        &mut cfg.surrogate_retrain_epochs,
    )?;
    if kv.contains("retrain.epochs") {
        cfg.retrain = persist::read_train_config(kv, "retrain")?;
    }
    f64_field(kv, "probe_rho", &mut cfg.probe_rho)?;
    cfg.untargeted.mode = match mode {
        AttackMode::ErrorMax => UntargetedMode::ErrorMax,
        _ => UntargetedMode::ErrorMin,
    };
    Ok(cfg)
}

fn opt_value(v: &Option<f64>) -> String {
    match v {
        Some(x) => fmt_f64(*x),
        None => "-".to_string(),
    }
}

impl ExperimentManifest {
    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.push("format", "experiment-v1");
        kv.push("version", &self.version);
        push_config(&mut kv, &self.config);
        kv.push(
            "trial_seeds",
            self.trial_seeds
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(" "),
        );
        for r in &self.records {
            let prefix = format!("trial.{}", r.trial);
            kv.push(&format!("{prefix}.seed"), r.seed.to_string());
            kv.push(
                &format!("{prefix}.success_rate"),
                opt_value(&r.success_rate),
            );
            kv.push(
                &format!("{prefix}.clean_accuracy"),
                opt_value(&r.clean_accuracy),
            );
            kv.push(&format!("{prefix}.sharpness"), opt_value(&r.sharpness));
            kv.push(&format!("{prefix}.alignment"), opt_value(&r.alignment));
            if let Some(e) = &r.error {
                kv.push(&format!("{prefix}.error"), e.replace('\n', " "));
            }
        }
        kv.push(
            "metrics.success_rate",
            opt_value(&self.metrics.success_rate),
        );
        kv.push(
            "metrics.avg_success_rate",
            opt_value(&self.metrics.avg_success_rate),
        );
        kv.push(
            "metrics.clean_test_accuracy",
            opt_value(&self.metrics.clean_test_accuracy),
        );
        kv.push(
            "metrics.sharpness_estimate",
            opt_value(&self.metrics.sharpness_estimate),
        );
        kv.push(
            "metrics.excluded_trials",
            self.metrics.excluded_trials.to_string(),
        );
        kv.push("wall_clock_secs", fmt_f64(self.wall_clock_secs));
        kv
    }

    /// Manifest text with the wall-clock line removed: every byte of this
    /// digest is reproducible from the config alone.
    pub fn determinism_digest(&self) -> String {
        self.to_kv()
            .to_text()
            .lines()
            .filter(|l| !l.starts_with("wall_clock_secs:"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        let mut path = base.as_os_str().to_owned();
        path.push(".manifest");
        self.to_kv().save(Path::new(&path))
    }

    /// Per-trial metrics table: `trial,seed,metric,value`, floats at 17
    /// significant digits, one row per available metric plus a `failed` row
    /// for errored trials.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("trial,seed,metric,value\n");
        for r in &self.records {
            let mut row = |metric: &str, value: String| {
                out.push_str(&format!("{},{},{},{}\n", r.trial, r.seed, metric, value));
            };
            if let Some(v) = r.success_rate {
                row("success_rate", fmt_f64(v));
            }
            if let Some(v) = r.clean_accuracy {
                row("clean_accuracy", fmt_f64(v));
            }
            if let Some(v) = r.sharpness {
                row("sharpness", fmt_f64(v));
            }
            if let Some(v) = r.alignment {
                row("alignment", fmt_f64(v));
            }
            if r.error.is_some() {
                row("failed", "1".to_string());
            }
        }
        out
    }
}

/// Writes the manifest and the metrics CSV next to each other.
pub fn export_metrics(manifest: &ExperimentManifest, base: &Path) -> Result<()> {
    manifest.save(base)?;
    let mut csv_path = base.as_os_str().to_owned();
    csv_path.push(".metrics.csv");
    persist::write_bytes(Path::new(&csv_path), manifest.metrics_csv().as_bytes())
}

/// Reloads the config section of a saved manifest (or a flat config file)
/// so the experiment can be re-run.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    config_from_kv(&KvMap::load(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(mode: AttackMode, seed: u64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::desk_default(mode, seed);
        cfg.dataset = match mode {
            AttackMode::Targeted | AttackMode::Backdoor => {
                DatasetSource::gaussians(2, 2, 0.5, 50, 40, 3)
            }
            _ => DatasetSource::two_moons(0.1, 40, 40, 3),
        };
        cfg.trials = 2;
        cfg.cases_per_trial = 1;
        cfg.pretrain_epochs = 3;
        cfg.retrain.epochs = 4;
        cfg.retrain.schedule = crate::training::Schedule::Step {
            milestones: vec![2],
            factor: 0.1,
        };
        cfg.craft = CraftConfig::new(0.1, 0.04, 1, 3, 0.05, 0);
        cfg.untargeted.epochs = 2;
        cfg.untargeted.pgd_steps = 2;
        cfg.untargeted.inner_steps = 2;
        cfg.untargeted.pretrain_epochs = 2;
        cfg.surrogate_retrain_epochs = 2;
        cfg
    }

    #[test]
    fn single_trial_aggregate_equals_trial() {
        let mut cfg = tiny_config(AttackMode::Targeted, 5);
        cfg.trials = 1;
        let m = run_experiment(&cfg).unwrap();
        assert_eq!(m.records.len(), 1);
        assert_eq!(m.metrics.success_rate, m.records[0].success_rate);
        assert_eq!(m.metrics.clean_test_accuracy, m.records[0].clean_accuracy);
    }

    #[test]
    fn rerun_is_bitwise_identical() {
        let cfg = tiny_config(AttackMode::ErrorMin, 7);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.determinism_digest(), b.determinism_digest());
    }

    #[test]
    fn manifest_round_trip_reproduces_metrics() {
        let cfg = tiny_config(AttackMode::Targeted, 11);
        let a = run_experiment(&cfg).unwrap();
        let dir = std::env::temp_dir().join("poisoncraft-manifest-test");
        let base = dir.join("exp");
        a.save(&base).unwrap();
        let mut mpath = base.as_os_str().to_owned();
        mpath.push(".manifest");
        let loaded = load_config(Path::new(&mpath)).unwrap();
        assert_eq!(loaded, cfg);
        let b = run_experiment(&loaded).unwrap();
        assert_eq!(a.determinism_digest(), b.determinism_digest());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn paired_runs_share_trial_seeds_and_inits() {
        let base = tiny_config(AttackMode::Targeted, 13);
        let mut sharp = base.clone();
        sharp.craft.sharpness.rho = 0.05;
        let mut plain = base;
        plain.craft.sharpness.rho = 0.0;
        let a = run_experiment(&sharp).unwrap();
        let b = run_experiment(&plain).unwrap();
        assert_eq!(a.trial_seeds, b.trial_seeds);
    }

    #[test]
    fn metrics_csv_shape() {
        let cfg = tiny_config(AttackMode::ErrorMin, 17);
        let m = run_experiment(&cfg).unwrap();
        let csv = m.metrics_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("trial,seed,metric,value"));
        for line in lines {
            assert_eq!(line.split(',').count(), 4);
        }
    }

    #[test]
    fn failed_trials_are_recorded_not_dropped() {
        let mut cfg = tiny_config(AttackMode::Targeted, 23);
        // more victims than any test class holds: every trial must fail
        cfg.victims = 10_000;
        let m = run_experiment(&cfg).unwrap();
        assert_eq!(m.records.len(), cfg.trials);
        assert_eq!(m.metrics.excluded_trials, cfg.trials);
        assert!(m.records.iter().all(|r| r.error.is_some()));
        assert!(m.metrics.success_rate.is_none());
        // the failure reason survives serialization
        let kv = m.to_kv();
        assert!(kv.get("trial.0.error").is_some());
    }

    #[test]
    fn aggregation_matches_manual_mean() {
        let records = vec![
            TrialRecord {
                trial: 0,
                seed: 1,
                success_rate: Some(0.25),
                clean_accuracy: Some(0.9),
                sharpness: Some(0.1),
                alignment: None,
                error: None,
            },
            TrialRecord {
                trial: 1,
                seed: 2,
                success_rate: Some(0.75),
                clean_accuracy: Some(0.8),
                sharpness: Some(0.3),
                alignment: None,
                error: None,
            },
            TrialRecord {
                trial: 2,
                seed: 3,
                success_rate: None,
                clean_accuracy: None,
                sharpness: None,
                alignment: None,
                error: Some("boom".into()),
            },
        ];
        let m = Metrics::aggregate(&records);
        assert!((m.success_rate.unwrap() - 0.5).abs() < 1e-12);
        assert!((m.clean_test_accuracy.unwrap() - 0.85).abs() < 1e-12);
        assert_eq!(m.excluded_trials, 1);
    }
}
