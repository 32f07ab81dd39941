#![allow(dead_code)]

//! Shared test oracles. These recompute quantities through routes
//! independent of the gradient code they check.

use poisoncraft::nn::{self, LabeledBatch, ModelParams, ModelSpec};
use poisoncraft::Tensor;

/// Central finite differences of the mean batch loss with respect to every
/// parameter. Depends only on forward evaluation.
pub fn fd_param_grad(
    spec: &ModelSpec,
    params: &ModelParams,
    batch: &LabeledBatch,
    h: f64,
) -> Vec<f64> {
    let mut grad = vec![0.0; params.len()];
    let loss_at = |flat: &[f64]| -> f64 {
        let p = spec.params_from_flat(flat.to_vec()).unwrap();
        let logits = nn::forward(spec, &p, &batch.inputs).unwrap();
        nn::cross_entropy(&logits, &batch.labels).unwrap()
    };
    let base = params.flat().to_vec();
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        grad[i] = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
    }
    grad
}

/// Central finite differences of each sample's own loss with respect to its
/// input entries.
pub fn fd_input_grad(
    spec: &ModelSpec,
    params: &ModelParams,
    batch: &LabeledBatch,
    h: f64,
) -> Tensor {
    let mut out = Tensor::zeros(batch.inputs.shape().to_vec());
    let n = batch.inputs.sample_len();
    for s in 0..batch.len() {
        for k in 0..n {
            let mut plus = batch.inputs.clone();
            plus.sample_mut(s)[k] += h;
            let mut minus = batch.inputs.clone();
            minus.sample_mut(s)[k] -= h;
            let lp = per_sample_loss(spec, params, &plus, batch.labels[s], s);
            let lm = per_sample_loss(spec, params, &minus, batch.labels[s], s);
            out.sample_mut(s)[k] = (lp - lm) / (2.0 * h);
        }
    }
    out
}

fn per_sample_loss(
    spec: &ModelSpec,
    params: &ModelParams,
    inputs: &Tensor,
    label: usize,
    sample: usize,
) -> f64 {
    let logits = nn::forward(spec, params, inputs).unwrap();
    let row = logits.sample_tensor(sample);
    let batched = Tensor::stack(&[row]).unwrap();
    nn::cross_entropy(&batched, &[label]).unwrap()
}

/// Max-norm relative disagreement between two gradient vectors.
pub fn rel_err_max(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max);
    let scale = a
        .iter()
        .chain(b)
        .map(|x| x.abs())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    diff / scale
}
