//! Attack evaluation: predictions, per-victim success indicators, triggered
//! success rate, and clean accuracy.

use crate::error::{Error, Result};
use crate::gradmatch::{apply_trigger, TriggerPatch, VictimSpec};
use crate::nn::{self, LabeledBatch, ModelParams, ModelSpec};
use crate::tensor::Tensor;

/// Argmax class per sample; ties break toward the lowest class index.
pub fn predictions(spec: &ModelSpec, params: &ModelParams, inputs: &Tensor) -> Result<Vec<usize>> {
    let logits = nn::forward(spec, params, inputs)?;
    let m = logits.sample_len();
    Ok((0..logits.batch())
        .map(|s| {
            let row = logits.sample(s);
            let mut best = 0;
            for k in 1..m {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect())
}

/// Per-victim indicators of classification into the adversarial class, plus
/// their mean (the average success rate).
#[derive(Debug, Clone)]
pub struct TargetedEval {
    pub hits: Vec<bool>,
    pub success_rate: f64,
}

pub fn eval_targeted(
    spec: &ModelSpec,
    params: &ModelParams,
    victim: &VictimSpec,
) -> Result<TargetedEval> {
    let inputs = Tensor::stack(
        &victim
            .victims
            .iter()
            .map(|(x, _)| x.clone())
            .collect::<Vec<_>>(),
    )?;
    let preds = predictions(spec, params, &inputs)?;
    let hits: Vec<bool> = preds.iter().map(|&p| p == victim.y_obj).collect();
    let success_rate = hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64;
    Ok(TargetedEval { hits, success_rate })
}

/// Fraction of victim-class test samples that, with the trigger attached,
/// are classified as the adversarial class.
pub fn eval_backdoor(
    spec: &ModelSpec,
    params: &ModelParams,
    test: &LabeledBatch,
    y_vic: usize,
    trigger: &TriggerPatch,
    y_obj: usize,
) -> Result<f64> {
    let mut triggered = Vec::new();
    for i in 0..test.len() {
        if test.labels[i] == y_vic {
            triggered.push(apply_trigger(&test.inputs.sample_tensor(i), trigger)?);
        }
    }
    if triggered.is_empty() {
        return Err(Error::EmptyClass { class: y_vic });
    }
    let inputs = Tensor::stack(&triggered)?;
    let preds = predictions(spec, params, &inputs)?;
    let hits = preds.iter().filter(|&&p| p == y_obj).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Fraction of argmax-correct predictions.
pub fn accuracy(spec: &ModelSpec, params: &ModelParams, test: &LabeledBatch) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let preds = predictions(spec, params, &test.inputs)?;
    let hits = preds
        .iter()
        .zip(&test.labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerKind;

    /// Linear model whose bias pins every prediction to `class`.
    fn hardwired(classes: usize, class: usize) -> (ModelSpec, ModelParams) {
        let spec = ModelSpec::new(
            vec![2],
            vec![LayerKind::Dense {
                inputs: 2,
                outputs: classes,
            }],
        )
        .unwrap();
        let mut params = spec.zero_params();
        params.flat_mut()[2 * classes + class] = 10.0;
        (spec, params)
    }

    fn victims(k: usize, y_vic: usize, y_obj: usize) -> VictimSpec {
        let vs = (0..k)
            .map(|i| {
                (
                    Tensor::new(vec![2], vec![0.1 * i as f64, 0.5]).unwrap(),
                    y_vic,
                )
            })
            .collect();
        VictimSpec::targeted(vs, y_obj).unwrap()
    }

    #[test]
    fn hardwired_model_rates() {
        let (spec, params) = hardwired(3, 2);
        let v = victims(4, 0, 2);
        let ev = eval_targeted(&spec, &params, &v).unwrap();
        assert_eq!(ev.success_rate, 1.0);

        let (spec, params) = hardwired(3, 0);
        let ev = eval_targeted(&spec, &params, &v).unwrap();
        assert_eq!(ev.success_rate, 0.0);
    }

    #[test]
    fn fractional_success_rate_counts() {
        // 8 victims, predictions split by input sign through a weight row
        let spec = ModelSpec::new(
            vec![1],
            vec![LayerKind::Dense {
                inputs: 1,
                outputs: 2,
            }],
        )
        .unwrap();
        let mut params = spec.zero_params();
        params.flat_mut()[0] = 1.0; // logit_0 = x
        params.flat_mut()[1] = -1.0; // logit_1 = -x
        let vs: Vec<(Tensor, usize)> = (0..8)
            .map(|i| {
                let x = if i < 3 { -1.0 } else { 1.0 };
                (Tensor::new(vec![1], vec![x]).unwrap(), 0)
            })
            .collect();
        let victim = VictimSpec::targeted(vs, 1).unwrap();
        let ev = eval_targeted(&spec, &params, &victim).unwrap();
        assert_eq!(ev.success_rate, 0.375);
    }

    #[test]
    fn accuracy_counting_and_ties() {
        let (spec, params) = hardwired(2, 1);
        let batch = LabeledBatch::new(
            Tensor::new(vec![4, 2], vec![0.0; 8]).unwrap(),
            vec![1, 0, 1, 1],
        )
        .unwrap();
        let acc = accuracy(&spec, &params, &batch).unwrap();
        assert_eq!(acc, 0.75);

        // all-zero params: every logit ties, argmax breaks to class 0
        let zero = spec.zero_params();
        let preds = predictions(&spec, &zero, &batch.inputs).unwrap();
        assert!(preds.iter().all(|&p| p == 0));
    }

    #[test]
    fn backdoor_counts_triggered_fraction() {
        let (spec, params) = hardwired(2, 1);
        let batch = LabeledBatch::new(
            Tensor::new(vec![10, 2], vec![0.2; 20]).unwrap(),
            vec![0, 0, 0, 0, 1, 1, 1, 1, 1, 1],
        )
        .unwrap();
        let trigger = TriggerPatch::new(Tensor::new(vec![1], vec![1.0]).unwrap(), vec![0]).unwrap();
        let rate = eval_backdoor(&spec, &params, &batch, 0, &trigger, 1).unwrap();
        assert_eq!(rate, 1.0);

        let err = eval_backdoor(&spec, &params, &batch, 5, &trigger, 1).unwrap_err();
        assert!(matches!(err, Error::EmptyClass { class: 5 }));
    }

    #[test]
    fn backdoor_fractional_counting() {
        // 10 victim-class samples, 4 of which the model sends to y_obj:
        // logit_1 - logit_0 = 10 (x0 - 0.45), trigger touches only x1
        let spec = ModelSpec::new(
            vec![2],
            vec![LayerKind::Dense {
                inputs: 2,
                outputs: 2,
            }],
        )
        .unwrap();
        let mut params = spec.zero_params();
        params.flat_mut()[..4].copy_from_slice(&[-5.0, 0.0, 5.0, 0.0]);
        params.flat_mut()[4] = 2.25;
        params.flat_mut()[5] = -2.25;
        let mut inputs = Vec::new();
        for i in 0..10 {
            let x0 = if i < 4 { 0.9 } else { 0.1 };
            inputs.extend_from_slice(&[x0, 0.5]);
        }
        let batch =
            LabeledBatch::new(Tensor::new(vec![10, 2], inputs).unwrap(), vec![0; 10]).unwrap();
        let trigger = TriggerPatch::new(Tensor::new(vec![1], vec![1.0]).unwrap(), vec![1]).unwrap();
        let rate = eval_backdoor(&spec, &params, &batch, 0, &trigger, 1).unwrap();
        assert_eq!(rate, 0.4);
    }

    #[test]
    fn constant_model_on_balanced_set_scores_one_over_m() {
        let spec = ModelSpec::mlp(&[2, 4]).unwrap();
        let params = spec.zero_params();
        let batch = LabeledBatch::new(
            Tensor::new(vec![8, 2], vec![0.3; 16]).unwrap(),
            vec![0, 1, 2, 3, 0, 1, 2, 3],
        )
        .unwrap();
        let acc = accuracy(&spec, &params, &batch).unwrap();
        assert_eq!(acc, 0.25);
    }

    #[test]
    fn empty_test_set_rejected() {
        let (spec, params) = hardwired(2, 0);
        let batch = LabeledBatch {
            inputs: Tensor::zeros(vec![0, 2]),
            labels: vec![],
        };
        assert!(matches!(
            accuracy(&spec, &params, &batch),
            Err(Error::EmptyBatch)
        ));
    }
}
