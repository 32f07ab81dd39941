//! Pilot runs for the paired directional experiments: scans candidate task
//! configurations and reports per-arm metrics so a working configuration
//! can be frozen into the acceptance suite.

use poisoncraft::data::DatasetSource;
use poisoncraft::experiment::{run_experiment, AttackMode, ExperimentConfig};
use poisoncraft::gradmatch::CraftConfig;
use poisoncraft::training::{Augmentation, OptimizerVariant};

fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    // P(Binom(n, 1/2) >= wins)
    let mut p = 0.0;
    for k in wins..=n {
        let mut c = 1.0f64;
        for i in 0..k {
            c *= (n - i) as f64 / (i + 1) as f64;
        }
        p += c / 2f64.powi(n as i32);
    }
    p
}

fn paired_report(
    name: &str,
    a: &poisoncraft::experiment::ExperimentManifest,
    b: &poisoncraft::experiment::ExperimentManifest,
    higher_better: bool,
) {
    let mut wins = 0;
    let mut losses = 0;
    let mut ties = 0;
    for (ra, rb) in a.records.iter().zip(&b.records) {
        let (va, vb) = if higher_better {
            (ra.success_rate, rb.success_rate)
        } else {
            (ra.clean_accuracy, rb.clean_accuracy)
        };
        match (va, vb) {
            (Some(x), Some(y)) => {
                let better = if higher_better { x > y } else { x < y };
                let worse = if higher_better { x < y } else { x > y };
                if better {
                    wins += 1;
                } else if worse {
                    losses += 1;
                } else {
                    ties += 1;
                }
            }
            _ => ties += 1,
        }
    }
    let (ma, mb) = if higher_better {
        (a.metrics.success_rate, b.metrics.success_rate)
    } else {
        (a.metrics.clean_test_accuracy, b.metrics.clean_test_accuracy)
    };
    println!(
        "{name}: sharp {:.4} vs plain {:.4} | wins {wins} losses {losses} ties {ties} | sign p {:.4} | sharpness {:?} vs {:?}",
        ma.unwrap_or(f64::NAN),
        mb.unwrap_or(f64::NAN),
        sign_test_p(wins, losses),
        a.metrics.sharpness_estimate,
        b.metrics.sharpness_estimate,
    );
}

struct TPilot {
    sep: f64,
    train_n: usize,
    hidden: Vec<usize>,
    pretrain: usize,
    pretrain_wd: f64,
    retrain_epochs: usize,
    cases: usize,
    trials: usize,
    victims: usize,
    seed: u64,
    aug: Augmentation,
    opt: OptimizerVariant,
}

fn targeted_pair(
    p: &TPilot,
) -> (
    poisoncraft::experiment::ExperimentManifest,
    poisoncraft::experiment::ExperimentManifest,
) {
    let mut cfg = ExperimentConfig::desk_default(AttackMode::Targeted, p.seed);
    cfg.dataset = DatasetSource::gaussians(2, 2, p.sep, p.train_n, 200, 11);
    cfg.hidden = p.hidden.clone();
    cfg.trials = p.trials;
    cfg.cases_per_trial = p.cases;
    cfg.victims = p.victims;
    cfg.pretrain_epochs = p.pretrain;
    cfg.pretrain_weight_decay = p.pretrain_wd;
    cfg.retrain = cfg.retrain.scaled_to_epochs(p.retrain_epochs);
    cfg.retrain.augmentation = p.aug.clone();
    cfg.retrain.optimizer = p.opt.clone();
    cfg.craft = CraftConfig::new(0.1, 0.02, 4, 60, 0.05, 0);
    let mut plain = cfg.clone();
    plain.craft.sharpness.rho = 0.0;
    (
        run_experiment(&cfg).unwrap(),
        run_experiment(&plain).unwrap(),
    )
}

struct UPilot {
    mode: AttackMode,
    noise: f64,
    n: usize,
    seed: u64,
    hidden: Vec<usize>,
    inner_lr: f64,
    retrain_epochs: usize,
    trials: usize,
    rho: f64,
    per_sample: bool,
}

fn untargeted_pair(
    p: &UPilot,
) -> (
    poisoncraft::experiment::ExperimentManifest,
    poisoncraft::experiment::ExperimentManifest,
    f64,
) {
    let mut cfg = ExperimentConfig::desk_default(p.mode, p.seed);
    cfg.dataset = DatasetSource::two_moons(p.noise, p.n, p.n, 11);
    cfg.hidden = p.hidden.clone();
    cfg.trials = p.trials;
    cfg.untargeted.epsilon = 0.15;
    cfg.untargeted.alpha = 0.015;
    cfg.untargeted.sharpness.rho = p.rho;
    cfg.untargeted.inner_lr = p.inner_lr;
    cfg.untargeted.per_sample_direction = p.per_sample;
    cfg.retrain = cfg.retrain.scaled_to_epochs(p.retrain_epochs);
    let mut plain = cfg.clone();
    plain.untargeted.sharpness.rho = 0.0;
    let sharp = run_experiment(&cfg).unwrap();
    let plain_m = run_experiment(&plain).unwrap();

    // clean baseline: train on the unpoisoned set over a few seeds
    let (train, test) = poisoncraft::data::generate(&cfg.dataset).unwrap();
    let spec =
        poisoncraft::experiment::build_mlp(train.inputs.sample_shape(), &cfg.hidden, 2).unwrap();
    let mut accs = Vec::new();
    for s in 0..p.trials as u64 {
        let init = spec.init_params(900 + s);
        let model =
            poisoncraft::training::train(&spec, &init, &train, &cfg.retrain.clone().with_seed(s))
                .unwrap();
        accs.push(poisoncraft::eval::accuracy(&spec, &model, &test).unwrap());
    }
    let clean = accs.iter().sum::<f64>() / accs.len() as f64;
    (sharp, plain_m, clean)
}

fn trial_accs(m: &poisoncraft::experiment::ExperimentManifest) -> Vec<f64> {
    m.records
        .iter()
        .map(|r| r.clean_accuracy.unwrap_or(f64::NAN))
        .collect()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(|s| s.as_str()).unwrap_or("all");

    if which == "targeted" || which == "all" {
        println!("== targeted: frozen-candidate protocol under retraining variants ==");
        for (name, aug, opt) in [
            ("erm", Augmentation::None, OptimizerVariant::Erm),
            (
                "mixup",
                Augmentation::Mixup { alpha: 1.0 },
                OptimizerVariant::Erm,
            ),
            (
                "sam",
                Augmentation::None,
                OptimizerVariant::Sam { rho: 0.05 },
            ),
        ] {
            let p = TPilot {
                sep: 0.25,
                train_n: 200,
                hidden: vec![16],
                pretrain: 30,
                pretrain_wd: 5e-4,
                retrain_epochs: 60,
                cases: 10,
                trials: 20,
                victims: 1,
                seed: 2024,
                aug,
                opt,
            };
            let (a, b) = targeted_pair(&p);
            paired_report(&format!("retrain {name}"), &a, &b, true);
        }
    }

    if which == "untargeted" || which == "all" {
        println!("== untargeted: two-moons (5 trials) ==");
        for mode in [AttackMode::ErrorMin, AttackMode::ErrorMax] {
            for &per_sample in &[false, true] {
                for &master in &[2024u64, 1, 7, 777] {
                    let p = UPilot {
                        mode,
                        noise: 0.1,
                        n: 240,
                        seed: master,
                        hidden: vec![16],
                        inner_lr: 0.1,
                        retrain_epochs: 60,
                        trials: 5,
                        rho: 0.05,
                        per_sample,
                    };
                    let (a, b, clean) = untargeted_pair(&p);
                    let tag = format!(
                        "{} ps {per_sample} master {master}",
                        if mode == AttackMode::ErrorMin {
                            "error-min"
                        } else {
                            "error-max"
                        }
                    );
                    println!("{tag}: clean {clean:.4}");
                    paired_report(&tag, &a, &b, false);
                    println!("  sharp accs {:?}", trial_accs(&a));
                    println!("  plain accs {:?}", trial_accs(&b));
                }
            }
        }
    }
}
