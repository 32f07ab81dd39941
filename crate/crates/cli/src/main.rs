//! Command-line driver: craft poisons, retrain victims, evaluate attacks,
//! probe loss landscapes, and run full seeded experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use poisoncraft::data::{DatasetKind, DatasetSource};
use poisoncraft::error::Error;
use poisoncraft::experiment::{self, AttackMode};
use poisoncraft::gradmatch::{self, CraftConfig, TriggerPatch, VictimSpec};
use poisoncraft::persist::{Checkpoint, PoisonArtifact, VictimInfo};
use poisoncraft::rng::{self, derive_seed};
use poisoncraft::sharpness::SharpnessConfig;
use poisoncraft::training::{self, Augmentation, OptimizerVariant, Schedule, TrainConfig};
use poisoncraft::unlearnable::{self, UntargetedConfig, UntargetedMode};
use poisoncraft::{eval, landscape, LabeledBatch, ModelParams, ModelSpec, Result};

#[derive(Parser)]
#[command(
    name = "poisoncraft",
    version,
    about = "data poisoning research toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Craft a poison or perturbation set and save it.
    Craft(CraftArgs),
    /// Retrain a model from scratch on a poisoned training set.
    Retrain(RetrainArgs),
    /// Evaluate a retrained model against a saved poison artifact.
    Eval(EvalArgs),
    /// Probe the loss landscape around a checkpoint.
    Landscape(LandscapeArgs),
    /// Run a full multi-trial experiment from a config file.
    Run(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Targeted,
    Backdoor,
    ErrorMin,
    ErrorMax,
}

impl From<ModeArg> for AttackMode {
    fn from(m: ModeArg) -> AttackMode {
        match m {
            ModeArg::Targeted => AttackMode::Targeted,
            ModeArg::Backdoor => AttackMode::Backdoor,
            ModeArg::ErrorMin => AttackMode::ErrorMin,
            ModeArg::ErrorMax => AttackMode::ErrorMax,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetArg {
    Gaussians,
    TwoMoons,
    Spirals,
    Csv,
    Idx,
}

#[derive(Args)]
struct DataFlags {
    #[arg(long, value_enum, default_value = "gaussians")]
    dataset: DatasetArg,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 0.5)]
    separation: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 1.5)]
    turns: f64,
    /// CSV file or IDX prefix, for the file-backed dataset kinds.
    #[arg(long)]
    data_path: Option<String>,
    #[arg(long, default_value_t = 200)]
    train_size: usize,
    #[arg(long, default_value_t = 200)]
    test_size: usize,
    #[arg(long, default_value_t = 1)]
    data_seed: u64,
}

impl DataFlags {
    fn source(&self) -> Result<DatasetSource> {
        let kind =
            match self.dataset {
                DatasetArg::Gaussians => DatasetKind::Gaussians {
                    classes: self.classes,
                    dim: self.dim,
                    separation: self.separation,
                },
                DatasetArg::TwoMoons => DatasetKind::TwoMoons { noise: self.noise },
                DatasetArg::Spirals => DatasetKind::Spirals {
                    turns: self.turns,
                    noise: self.noise,
                },
                DatasetArg::Csv => DatasetKind::Csv {
                    path: self.data_path.clone().ok_or_else(|| {
                        Error::InvalidConfig("--data-path required for csv".into())
                    })?,
                },
                DatasetArg::Idx => DatasetKind::IdxImages {
                    prefix: self.data_path.clone().ok_or_else(|| {
                        Error::InvalidConfig("--data-path required for idx".into())
                    })?,
                },
            };
        Ok(DatasetSource {
            kind,
            train: self.train_size,
            test: self.test_size,
            seed: self.data_seed,
        })
    }
}

#[derive(Args)]
struct CraftArgs {
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Sharpness radius; 0 disables the sharpness-aware objective.
    #[arg(long, default_value_t = 0.05)]
    sharp_rho: f64,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// Poisoning ratio (targeted/backdoor).
    #[arg(long, default_value_t = 0.02)]
    ratio: f64,
    /// Perturbed portion of the training set (error-min/error-max).
    #[arg(long, default_value_t = 1.0)]
    portion: f64,
    /// Restart count (targeted) or retraining factor (backdoor).
    #[arg(long, default_value_t = 4)]
    restarts: usize,
    /// Optimization steps per restart.
    #[arg(long, default_value_t = 60)]
    steps: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    data: DataFlags,
    /// Hidden layer widths of the surrogate model.
    #[arg(long, value_delimiter = ',', default_value = "16")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    pretrain_epochs: usize,
    #[arg(long, default_value_t = 40)]
    surrogate_retrain_epochs: usize,
    #[arg(long, default_value_t = 1)]
    victims: usize,
    #[arg(long, default_value_t = 1)]
    trigger_size: usize,
    /// PGD steps for the untargeted modes (per epoch for error-min).
    #[arg(long, default_value_t = 20)]
    pgd_steps: usize,
    #[arg(long, default_value_t = 10)]
    inner_steps: usize,
    /// Alternation epochs for error-min.
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// PGD step size; defaults to epsilon / 10.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    inner_lr: f64,
}

#[derive(Args)]
struct RetrainArgs {
    #[arg(long)]
    poison: PathBuf,
    #[arg(long, value_enum, default_value = "step")]
    schedule: ScheduleArg,
    #[arg(long, value_enum, default_value = "none")]
    aug: AugArg,
    #[arg(long, value_enum, default_value = "erm")]
    optimizer: OptArg,
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    base_lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Step-schedule milestones.
    #[arg(long, value_delimiter = ',', default_value = "30,45")]
    milestones: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    factor: f64,
    #[arg(long, default_value_t = 10)]
    period: usize,
    #[arg(long, default_value_t = 0.001)]
    min_lr: f64,
    #[arg(long, default_value_t = 0.1)]
    max_lr: f64,
    #[arg(long, default_value_t = 1.0)]
    mixup_alpha: f64,
    #[arg(long, default_value_t = 1)]
    cutout_size: usize,
    #[arg(long, default_value_t = 0.05)]
    sam_rho: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Step,
    Cyclic,
}

#[derive(Clone, Copy, ValueEnum)]
enum AugArg {
    None,
    Mixup,
    Cutout,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptArg {
    Erm,
    Sam,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    poison: PathBuf,
    /// Optional CSV output path for the metrics.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    probe_rho: f64,
}

#[derive(Args)]
struct LandscapeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    poison: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    extent: f64,
    #[arg(long, default_value_t = 21)]
    resolution: usize,
    #[arg(long, default_value_t = 3)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Flat key-value config file (or a saved experiment manifest).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the trial count from the config.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn rebuild(artifact: &PoisonArtifact) -> Result<(ModelSpec, LabeledBatch, LabeledBatch, usize)> {
    let (train, test) = poisoncraft::data::generate(&artifact.dataset)?;
    let classes = artifact.dataset.classes().unwrap_or_else(|| {
        train
            .labels
            .iter()
            .chain(&test.labels)
            .copied()
            .max()
            .unwrap_or(1)
            + 1
    });
    let spec = experiment::build_mlp(train.inputs.sample_shape(), &artifact.hidden, classes)?;
    Ok((spec, train, test, classes))
}

fn poisoned_train(artifact: &PoisonArtifact, train: &LabeledBatch) -> LabeledBatch {
    poisoncraft::data::apply_perturbations(train, &artifact.indices, &artifact.deltas)
}

fn cmd_craft(args: CraftArgs) -> Result<()> {
    let mode: AttackMode = args.mode.into();
    let source = args.data.source()?;
    let (train, test) = poisoncraft::data::generate(&source)?;
    let classes = source.classes().unwrap_or_else(|| {
        train
            .labels
            .iter()
            .chain(&test.labels)
            .copied()
            .max()
            .unwrap_or(1)
            + 1
    });
    let spec = experiment::build_mlp(train.inputs.sample_shape(), &args.hidden, classes)?;

    let artifact = match mode {
        AttackMode::Targeted | AttackMode::Backdoor => {
            let pre_init = spec.init_params(derive_seed(args.seed, 1));
            let pre_cfg =
                TrainConfig::desk(derive_seed(args.seed, 2)).scaled_to_epochs(args.pretrain_epochs);
            let surrogate = training::train(&spec, &pre_init, &train, &pre_cfg)?;

            let mut vic_rng = rng::rng_from(derive_seed(args.seed, 3));
            let craft_cfg = CraftConfig {
                restarts: args.restarts,
                steps: args.steps,
                step_size: args.alpha.unwrap_or(args.epsilon / 10.0),
                epsilon: args.epsilon,
                ratio: args.ratio,
                sharpness: SharpnessConfig::l2(args.sharp_rho),
                seed: derive_seed(args.seed, 4),
            };
            let (y_vic, y_obj) = experiment::pick_classes(&mut vic_rng, classes);
            match mode {
                AttackMode::Targeted => {
                    let pool: Vec<usize> = (0..test.len())
                        .filter(|&i| test.labels[i] == y_vic)
                        .collect();
                    if pool.len() < args.victims {
                        return Err(Error::EmptyClass { class: y_vic });
                    }
                    let picked = rng::sample_distinct(&mut vic_rng, &pool, args.victims);
                    let victims: Vec<_> = picked
                        .iter()
                        .map(|&i| (test.inputs.sample_tensor(i), y_vic))
                        .collect();
                    let victim = VictimSpec::targeted(victims, y_obj)?;
                    let outcome =
                        gradmatch::craft_targeted(&spec, &surrogate, &train, &victim, &craft_cfg)?;
                    println!(
                        "crafted targeted poison: {} samples, alignment {:.6}, restart {}",
                        outcome.poison.indices.len(),
                        outcome.alignment,
                        outcome.restart
                    );
                    PoisonArtifact {
                        mode,
                        epsilon: args.epsilon,
                        fraction: args.ratio,
                        seed: args.seed,
                        indices: outcome.poison.indices,
                        deltas: outcome.poison.deltas,
                        dataset: source,
                        hidden: args.hidden.clone(),
                        victim: Some(VictimInfo {
                            y_vic,
                            y_obj,
                            victim_indices: picked,
                            trigger: None,
                        }),
                    }
                }
                _ => {
                    let pool: Vec<usize> = (0..train.len())
                        .filter(|&i| train.labels[i] == y_vic)
                        .collect();
                    if pool.len() < args.victims {
                        return Err(Error::EmptyClass { class: y_vic });
                    }
                    let picked = rng::sample_distinct(&mut vic_rng, &pool, args.victims);
                    let victims: Vec<_> = picked
                        .iter()
                        .map(|&i| (train.inputs.sample_tensor(i), y_vic))
                        .collect();
                    let trigger = TriggerPatch::corner(
                        train.inputs.sample_shape(),
                        args.trigger_size,
                        derive_seed(args.seed, 5),
                    )?;
                    let victim = VictimSpec::backdoor(victims, y_obj, trigger.clone())?;
                    let retrain_cfg = TrainConfig::desk(derive_seed(args.seed, 6))
                        .scaled_to_epochs(args.surrogate_retrain_epochs);
                    let outcome = gradmatch::craft_backdoor(
                        &spec,
                        &surrogate,
                        &train,
                        &victim,
                        &craft_cfg,
                        &retrain_cfg,
                    )?;
                    println!(
                        "crafted backdoor poison: {} samples, alignment {:.6}",
                        outcome.poison.indices.len(),
                        outcome.alignment
                    );
                    PoisonArtifact {
                        mode,
                        epsilon: args.epsilon,
                        fraction: args.ratio,
                        seed: args.seed,
                        indices: outcome.poison.indices,
                        deltas: outcome.poison.deltas,
                        dataset: source,
                        hidden: args.hidden.clone(),
                        victim: Some(VictimInfo {
                            y_vic,
                            y_obj,
                            victim_indices: picked,
                            trigger: Some(trigger),
                        }),
                    }
                }
            }
        }
        AttackMode::ErrorMin | AttackMode::ErrorMax => {
            let ucfg = UntargetedConfig {
                mode: if mode == AttackMode::ErrorMin {
                    UntargetedMode::ErrorMin
                } else {
                    UntargetedMode::ErrorMax
                },
                sharpness: SharpnessConfig::l2(args.sharp_rho),
                pgd_steps: args.pgd_steps,
                inner_steps: args.inner_steps,
                epochs: args.epochs,
                alpha: args.alpha.unwrap_or(args.epsilon / 10.0),
                epsilon: args.epsilon,
                portion: args.portion,
                pretrain_epochs: args.pretrain_epochs,
                batch_size: args.batch_size,
                inner_lr: args.inner_lr,
                per_sample_direction: false,
                sharp_inner_updates: false,
                seed: derive_seed(args.seed, 4),
            };
            let set = match ucfg.mode {
                UntargetedMode::ErrorMin => {
                    let out = unlearnable::craft_error_min(&spec, &train, &ucfg)?;
                    println!(
                        "crafted error-min perturbations: {} samples, final poisoned loss {:.6}",
                        out.set.indices.len(),
                        out.epoch_losses.last().copied().unwrap_or(f64::NAN)
                    );
                    out.set
                }
                UntargetedMode::ErrorMax => {
                    let set = unlearnable::craft_error_max(&spec, &train, &ucfg)?;
                    println!(
                        "crafted error-max perturbations: {} samples",
                        set.indices.len()
                    );
                    set
                }
            };
            PoisonArtifact {
                mode,
                epsilon: args.epsilon,
                fraction: args.portion,
                seed: args.seed,
                indices: set.indices,
                deltas: set.deltas,
                dataset: source,
                hidden: args.hidden.clone(),
                victim: None,
            }
        }
    };
    artifact.save(&args.out)?;
    println!("saved poison artifact to {}", args.out.display());
    Ok(())
}

fn cmd_retrain(args: RetrainArgs) -> Result<()> {
    let artifact = PoisonArtifact::load(&args.poison)?;
    let (spec, train, test, classes) = rebuild(&artifact)?;
    let poisoned = poisoned_train(&artifact, &train);

    let schedule = match args.schedule {
        ScheduleArg::Step => Schedule::Step {
            milestones: args.milestones.clone(),
            factor: args.factor,
        },
        ScheduleArg::Cyclic => Schedule::Cyclic {
            period: args.period,
            min_lr: args.min_lr,
            max_lr: args.max_lr,
        },
    };
    let augmentation = match args.aug {
        AugArg::None => Augmentation::None,
        AugArg::Mixup => Augmentation::Mixup {
            alpha: args.mixup_alpha,
        },
        AugArg::Cutout => Augmentation::Cutout {
            size: args.cutout_size,
        },
    };
    let optimizer = match args.optimizer {
        OptArg::Erm => OptimizerVariant::Erm,
        OptArg::Sam => OptimizerVariant::Sam { rho: args.sam_rho },
    };
    let cfg = TrainConfig {
        epochs: args.epochs,
        base_lr: args.base_lr,
        momentum: args.momentum,
        weight_decay: args.weight_decay,
        batch_size: args.batch_size,
        schedule,
        augmentation,
        optimizer,
        seed: args.seed,
    };
    let init = spec.init_params(derive_seed(args.seed, 11));
    let model = training::train(&spec, &init, &poisoned, &cfg)?;
    let acc = eval::accuracy(&spec, &model, &test)?;
    println!(
        "retrained {} epochs, clean test accuracy {:.4}",
        args.epochs, acc
    );

    Checkpoint {
        input_shape: train.inputs.sample_shape().to_vec(),
        hidden: artifact.hidden.clone(),
        classes,
        epoch: args.epochs,
        train: cfg,
        params: model.flat().to_vec(),
        spec_fingerprint: spec.fingerprint(),
    }
    .save(&args.out)?;
    println!("saved checkpoint to {}", args.out.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<(ModelSpec, ModelParams, Checkpoint)> {
    let ckpt = Checkpoint::load(path)?;
    let spec = experiment::build_mlp(&ckpt.input_shape, &ckpt.hidden, ckpt.classes)?;
    if spec.fingerprint() != ckpt.spec_fingerprint {
        return Err(Error::InvalidConfig(format!(
            "checkpoint fingerprint {} does not match rebuilt architecture {}",
            ckpt.spec_fingerprint,
            spec.fingerprint()
        )));
    }
    let params = spec.params_from_flat(ckpt.params.clone())?;
    Ok((spec, params, ckpt))
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let artifact = PoisonArtifact::load(&args.poison)?;
    let (spec, params, _) = load_model(&args.model)?;
    let (_, train, test, _) = rebuild(&artifact)?;
    let poisoned = poisoned_train(&artifact, &train);

    let mut rows: Vec<(String, f64)> = Vec::new();
    match (&artifact.mode, &artifact.victim) {
        (AttackMode::Targeted, Some(v)) => {
            let victims: Vec<_> = v
                .victim_indices
                .iter()
                .map(|&i| (test.inputs.sample_tensor(i), v.y_vic))
                .collect();
            let victim = VictimSpec::targeted(victims, v.y_obj)?;
            let ev = eval::eval_targeted(&spec, &params, &victim)?;
            rows.push(("success_rate".into(), ev.success_rate));
        }
        (AttackMode::Backdoor, Some(v)) => {
            let trigger = v.trigger.as_ref().ok_or(Error::TriggerMissing)?;
            let rate = eval::eval_backdoor(&spec, &params, &test, v.y_vic, trigger, v.y_obj)?;
            rows.push(("success_rate".into(), rate));
        }
        _ => {}
    }
    rows.push((
        "clean_test_accuracy".into(),
        eval::accuracy(&spec, &params, &test)?,
    ));
    rows.push((
        "sharpness_estimate".into(),
        poisoncraft::sharpness::sharpness_estimate(
            &spec,
            &params,
            &poisoned,
            &SharpnessConfig::l2(args.probe_rho),
        )?,
    ));

    for (name, value) in &rows {
        println!("{name} {value:.6}");
    }
    if let Some(out) = &args.out {
        let mut csv = String::from("metric,value\n");
        for (name, value) in &rows {
            csv.push_str(&format!(
                "{},{}\n",
                name,
                poisoncraft::persist::fmt_f64(*value)
            ));
        }
        poisoncraft::persist::write_bytes(out, csv.as_bytes())?;
        println!("wrote metrics to {}", out.display());
    }
    Ok(())
}

fn cmd_landscape(args: LandscapeArgs) -> Result<()> {
    let artifact = PoisonArtifact::load(&args.poison)?;
    let (spec, params, _) = load_model(&args.model)?;
    let (_, train, _, _) = rebuild(&artifact)?;
    let poisoned = poisoned_train(&artifact, &train);
    let grid = landscape::probe(
        &spec,
        &params,
        &poisoned,
        args.extent,
        args.resolution,
        args.seed,
    )?;
    poisoncraft::persist::write_bytes(&args.out, grid.to_csv().as_bytes())?;
    println!(
        "landscape grid {}x{} written to {}, center loss {:.6}",
        args.resolution,
        args.resolution,
        args.out.display(),
        grid.center()
    );
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut cfg = experiment::load_config(&args.config)?;
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    let manifest = experiment::run_experiment(&cfg)?;
    experiment::export_metrics(&manifest, &args.out)?;
    println!(
        "experiment {} over {} trials ({} failed)",
        cfg.mode.as_str(),
        cfg.trials,
        manifest.metrics.excluded_trials
    );
    if let Some(v) = manifest.metrics.success_rate {
        println!("mean success rate {v:.4}");
    }
    if let Some(v) = manifest.metrics.clean_test_accuracy {
        println!("mean clean test accuracy {v:.4}");
    }
    if let Some(v) = manifest.metrics.sharpness_estimate {
        println!("mean sharpness estimate {v:.6}");
    }
    println!("manifest and metrics written under {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("POISONCRAFT_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n > 0 => {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .ok();
            }
            _ => {
                eprintln!("error: POISONCRAFT_THREADS must be a positive integer");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Craft(args) => cmd_craft(args),
        Command::Retrain(args) => cmd_retrain(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Landscape(args) => cmd_landscape(args),
        Command::Run(args) => cmd_run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
