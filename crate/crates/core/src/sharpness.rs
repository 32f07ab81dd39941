//! Loss-landscape sharpness: worst-case parameter perturbations, one-step
//! sharpness estimates, a multi-step ascent oracle, and sharpness-aware
//! objective gradients.

use crate::error::{Error, Result};
use crate::nn::{self, LabeledBatch, ModelParams, ModelSpec};

/// Norm used for the perturbation ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PNorm {
    L2,
    LInf,
}

/// Radius and norm of the parameter perturbation ball. A radius of zero
/// turns every sharpness-aware quantity into its plain counterpart, bitwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharpnessConfig {
    pub rho: f64,
    pub p_norm: PNorm,
}

impl SharpnessConfig {
    pub fn l2(rho: f64) -> Self {
        SharpnessConfig {
            rho,
            p_norm: PNorm::L2,
        }
    }

    pub fn linf(rho: f64) -> Self {
        SharpnessConfig {
            rho,
            p_norm: PNorm::LInf,
        }
    }

    /// Plain, non-sharp behavior.
    pub fn disabled() -> Self {
        SharpnessConfig::l2(0.0)
    }

    pub fn is_active(&self) -> bool {
        self.rho > 0.0
    }
}

/// First-order worst-case perturbation inside the configured ball.
///
/// `degenerate` is set when the radius is positive but the gradient is zero,
/// in which case the ascent direction is undefined and the step is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AscentDirection {
    pub step: Vec<f64>,
    pub degenerate: bool,
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

/// Unit-radius ascent direction for the given norm; the caller scales it.
fn unit_direction(grad: &[f64], p_norm: PNorm) -> Option<Vec<f64>> {
    match p_norm {
        PNorm::L2 => {
            let norm = l2_norm(grad);
            if norm == 0.0 {
                return None;
            }
            Some(grad.iter().map(|g| g / norm).collect())
        }
        PNorm::LInf => {
            if grad.iter().all(|&g| g == 0.0) {
                return None;
            }
            Some(grad.iter().map(|&g| sign3(g)).collect())
        }
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Norm-`rho` parameter perturbation that maximizes the linearized objective:
/// `rho * g / ||g||_2` for the L2 ball and `rho * sign(g)` for the L-inf ball.
pub fn ascent_direction(grad: &[f64], cfg: &SharpnessConfig) -> AscentDirection {
    if !cfg.is_active() {
        return AscentDirection {
            step: vec![0.0; grad.len()],
            degenerate: false,
        };
    }
    match unit_direction(grad, cfg.p_norm) {
        Some(mut unit) => {
            for u in &mut unit {
                *u *= cfg.rho;
            }
            AscentDirection {
                step: unit,
                degenerate: false,
            }
        }
        None => AscentDirection {
            step: vec![0.0; grad.len()],
            degenerate: true,
        },
    }
}

/// A scalar objective of the flat parameter vector, with its exact gradient.
pub trait Objective {
    fn value(&self, theta: &[f64]) -> Result<f64>;
    fn grad(&self, theta: &[f64]) -> Result<Vec<f64>>;
}

/// Mean cross-entropy of a model on a fixed batch, as a function of the
/// flat parameter vector.
pub struct BatchLoss<'a> {
    pub spec: &'a ModelSpec,
    pub batch: &'a LabeledBatch,
}

impl Objective for BatchLoss<'_> {
    fn value(&self, theta: &[f64]) -> Result<f64> {
        let params = self.spec.params_from_flat(theta.to_vec())?;
        let logits = nn::forward(self.spec, &params, &self.batch.inputs)?;
        nn::cross_entropy(&logits, &self.batch.labels)
    }

    fn grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let params = self.spec.params_from_flat(theta.to_vec())?;
        nn::grad_params(self.spec, &params, self.batch)
    }
}

/// Objective gradient evaluated at the worst-case perturbed parameters.
#[derive(Debug, Clone)]
pub struct SharpGrad {
    pub grad: Vec<f64>,
    pub degenerate: bool,
}

/// Gradient of the sharpness-aware objective: takes the plain gradient g,
/// moves to `theta + step(g)` and re-evaluates the gradient there. With a
/// zero radius this returns the plain gradient untouched.
pub fn sharp_grad<O: Objective>(
    obj: &O,
    theta: &[f64],
    cfg: &SharpnessConfig,
) -> Result<SharpGrad> {
    let g = obj.grad(theta)?;
    if !cfg.is_active() {
        return Ok(SharpGrad {
            grad: g,
            degenerate: false,
        });
    }
    let dir = ascent_direction(&g, cfg);
    if dir.degenerate {
        return Ok(SharpGrad {
            grad: g,
            degenerate: true,
        });
    }
    let shifted: Vec<f64> = theta.iter().zip(&dir.step).map(|(t, s)| t + s).collect();
    Ok(SharpGrad {
        grad: obj.grad(&shifted)?,
        degenerate: false,
    })
}

/// One-ascent-step sharpness estimate: loss at the perturbed point minus the
/// loss at the current point. Exactly zero when the radius is zero.
pub fn sharpness_estimate_for<O: Objective>(
    obj: &O,
    theta: &[f64],
    cfg: &SharpnessConfig,
) -> Result<f64> {
    if !cfg.is_active() {
        return Ok(0.0);
    }
    let g = obj.grad(theta)?;
    let dir = ascent_direction(&g, cfg);
    if dir.degenerate {
        return Ok(0.0);
    }
    let shifted: Vec<f64> = theta.iter().zip(&dir.step).map(|(t, s)| t + s).collect();
    Ok(obj.value(&shifted)? - obj.value(theta)?)
}

pub fn sharpness_estimate(
    spec: &ModelSpec,
    params: &ModelParams,
    data: &LabeledBatch,
    cfg: &SharpnessConfig,
) -> Result<f64> {
    sharpness_estimate_for(&BatchLoss { spec, batch: data }, params.flat(), cfg)
}

fn project_ball(v: &mut [f64], rho: f64, p_norm: PNorm) {
    match p_norm {
        PNorm::L2 => {
            let norm = l2_norm(v);
            if norm > rho {
                let scale = rho / norm;
                for x in v {
                    *x *= scale;
                }
            }
        }
        PNorm::LInf => {
            for x in v {
                *x = x.clamp(-rho, rho);
            }
        }
    }
}

/// Multi-step projected gradient ascent inside the ball, tracking the best
/// loss increase seen. Tighter reference for the one-step estimate: with
/// `k_steps = 1` and `step_size = rho` it reproduces the estimate exactly.
pub fn sharpness_oracle_for<O: Objective>(
    obj: &O,
    theta: &[f64],
    cfg: &SharpnessConfig,
    k_steps: usize,
    step_size: f64,
) -> Result<f64> {
    assert!(k_steps >= 1, "oracle needs at least one step");
    if !cfg.is_active() {
        return Ok(0.0);
    }
    let base = obj.value(theta)?;
    let mut v = vec![0.0; theta.len()];
    let mut best = 0.0f64;
    for _ in 0..k_steps {
        let shifted: Vec<f64> = theta.iter().zip(&v).map(|(t, s)| t + s).collect();
        let g = obj.grad(&shifted)?;
        match unit_direction(&g, cfg.p_norm) {
            Some(unit) => {
                for (vi, u) in v.iter_mut().zip(&unit) {
                    *vi += step_size * u;
                }
            }
            None => break,
        }
        project_ball(&mut v, cfg.rho, cfg.p_norm);
        let probe: Vec<f64> = theta.iter().zip(&v).map(|(t, s)| t + s).collect();
        best = best.max(obj.value(&probe)? - base);
    }
    Ok(best)
}

pub fn sharpness_oracle(
    spec: &ModelSpec,
    params: &ModelParams,
    data: &LabeledBatch,
    cfg: &SharpnessConfig,
    k_steps: usize,
    step_size: f64,
) -> Result<f64> {
    sharpness_oracle_for(
        &BatchLoss { spec, batch: data },
        params.flat(),
        cfg,
        k_steps,
        step_size,
    )
}

/// Checks whether either vector of a gradient pair is zero, which makes the
/// cosine alignment undefined.
pub fn degenerate_pair(a: &[f64], b: &[f64]) -> Option<Error> {
    if a.iter().all(|&x| x == 0.0) {
        return Some(Error::DegenerateGradient("first gradient is zero".into()));
    }
    if b.iter().all(|&x| x == 0.0) {
        return Some(Error::DegenerateGradient("second gradient is zero".into()));
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    /// L(theta) = 0.5 * ||theta||^2, exact for closed-form checks.
    pub(crate) struct Quadratic;

    impl Objective for Quadratic {
        fn value(&self, theta: &[f64]) -> Result<f64> {
            Ok(0.5 * theta.iter().map(|t| t * t).sum::<f64>())
        }

        fn grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
            Ok(theta.to_vec())
        }
    }

    #[test]
    fn l2_direction_is_scaled_gradient() {
        let cfg = SharpnessConfig::l2(0.05);
        let dir = ascent_direction(&[3.0, 4.0], &cfg);
        assert!(!dir.degenerate);
        assert!((dir.step[0] - 0.03).abs() < 1e-15);
        assert!((dir.step[1] - 0.04).abs() < 1e-15);
        assert!((l2_norm(&dir.step) - 0.05).abs() < 1e-10);
    }

    #[test]
    fn linf_direction_is_scaled_sign() {
        let cfg = SharpnessConfig::linf(0.1);
        let dir = ascent_direction(&[2.0, -0.5, 0.0], &cfg);
        assert_eq!(dir.step, vec![0.1, -0.1, 0.0]);
    }

    #[test]
    fn zero_radius_gives_zero_step() {
        let cfg = SharpnessConfig::l2(0.0);
        let dir = ascent_direction(&[1.0, 2.0], &cfg);
        assert_eq!(dir.step, vec![0.0, 0.0]);
        assert!(!dir.degenerate);
    }

    #[test]
    fn zero_gradient_flags_degenerate() {
        let cfg = SharpnessConfig::l2(0.1);
        let dir = ascent_direction(&[0.0, 0.0], &cfg);
        assert_eq!(dir.step, vec![0.0, 0.0]);
        assert!(dir.degenerate);
    }

    #[test]
    fn quadratic_estimate_matches_closed_form() {
        // max over |v| <= rho of 0.5 (theta + v)^2 - 0.5 theta^2
        // = rho |theta| + rho^2 / 2 = 0.105 at theta = 1, rho = 0.1
        let cfg = SharpnessConfig::l2(0.1);
        let est = sharpness_estimate_for(&Quadratic, &[1.0], &cfg).unwrap();
        assert!((est - 0.105).abs() < 1e-9);
    }

    #[test]
    fn oracle_single_step_reproduces_estimate() {
        let cfg = SharpnessConfig::l2(0.1);
        let est = sharpness_estimate_for(&Quadratic, &[1.0], &cfg).unwrap();
        let oracle = sharpness_oracle_for(&Quadratic, &[1.0], &cfg, 1, cfg.rho).unwrap();
        assert!((est - oracle).abs() < 1e-9);
    }

    #[test]
    fn oracle_converges_on_quadratic() {
        let cfg = SharpnessConfig::l2(0.1);
        let oracle = sharpness_oracle_for(&Quadratic, &[1.0], &cfg, 50, cfg.rho / 10.0).unwrap();
        assert!((oracle - 0.105).abs() < 1e-6);
    }

    #[test]
    fn sharp_grad_quadratic_closed_form() {
        // grad at theta + rho theta/||theta|| is theta (1 + rho/||theta||)
        let cfg = SharpnessConfig::l2(0.3);
        let theta = [0.6, -0.8];
        let g = sharp_grad(&Quadratic, &theta, &cfg).unwrap();
        assert!(!g.degenerate);
        for (gi, ti) in g.grad.iter().zip(&theta) {
            let expect = ti * (1.0 + 0.3 / 1.0);
            assert!((gi - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn sharp_grad_zero_radius_is_plain_gradient_bitwise() {
        let cfg = SharpnessConfig::disabled();
        let theta = [0.123456789, -9.87654321, 0.5];
        let g = sharp_grad(&Quadratic, &theta, &cfg).unwrap();
        let plain = Quadratic.grad(&theta).unwrap();
        assert_eq!(g.grad, plain);
        assert!(!g.degenerate);
    }

    #[test]
    fn estimate_zero_at_zero_radius() {
        let est = sharpness_estimate_for(&Quadratic, &[3.0], &SharpnessConfig::disabled()).unwrap();
        assert_eq!(est, 0.0);
    }

    #[test]
    fn sharp_grad_degenerate_at_stationary_point() {
        let cfg = SharpnessConfig::l2(0.1);
        let g = sharp_grad(&Quadratic, &[0.0, 0.0], &cfg).unwrap();
        assert!(g.degenerate);
        assert_eq!(g.grad, vec![0.0, 0.0]);
    }
}
