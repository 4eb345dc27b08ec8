//! Exact-class and super-class accuracy, FGSM attacks and robustness sweeps.

use serde::{Deserialize, Serialize};

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::nn::{cross_entropy_loss, Mode, Network};
use crate::tensor::Tensor;

/// Images per inference chunk.
pub const EVAL_BATCH: usize = 250;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub exact_acc: f64,
    pub super_acc: f64,
    /// `confusion[true][predicted]` counts over local class indices.
    pub confusion: Vec<Vec<u64>>,
    /// CIFAR-100 fine label of each local class.
    pub classes: Vec<usize>,
    /// Accuracy under attack, `(epsilon, exact_acc)`, when a sweep was run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_strength: Vec<SweepPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub exact_acc: f64,
    pub super_acc: f64,
}

/// Argmax predictions, computed in chunks of [`EVAL_BATCH`] with eval-mode
/// semantics.
pub fn predict(net: &Network, images: &Tensor) -> Result<Vec<usize>> {
    let n = images.batch();
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_BATCH).min(n);
        let idx: Vec<usize> = (start..end).collect();
        out.extend(net.infer(&images.select_rows(&idx))?.argmax_rows());
        start = end;
    }
    Ok(out)
}

/// Scores predictions. `class_coarse[k]` is the super-class of local class `k`.
pub fn score(predictions: &[usize], labels: &[usize], class_coarse: &[usize]) -> Result<EvalReport> {
    if predictions.len() != labels.len() {
        return Err(Error::input(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::input("cannot score an empty set"));
    }
    let k = class_coarse.len();
    if let Some(&bad) = predictions.iter().chain(labels).find(|&&c| c >= k) {
        return Err(Error::input(format!("class index {bad} outside 0..{k}")));
    }
    let mut confusion = vec![vec![0u64; k]; k];
    let (mut exact, mut sup) = (0usize, 0usize);
    for (&p, &t) in predictions.iter().zip(labels) {
        confusion[t][p] += 1;
        exact += usize::from(p == t);
        sup += usize::from(class_coarse[p] == class_coarse[t]);
    }
    let n = labels.len() as f64;
    Ok(EvalReport {
        n: labels.len(),
        exact_acc: exact as f64 / n,
        super_acc: sup as f64 / n,
        confusion,
        classes: Vec::new(),
        per_strength: Vec::new(),
    })
}

pub fn evaluate(net: &Network, set: &LabeledSet) -> Result<EvalReport> {
    let pred = predict(net, &set.images)?;
    let mut report = score(&pred, &set.labels, &set.class_coarse())?;
    report.classes = set.classes.clone();
    Ok(report)
}

/// Fast gradient sign attack at the true labels:
/// `x' = clip(x + ε·sign(∂L_CE/∂x), 0, 1)` with `sign(0) = 0`.
///
/// The network runs in eval mode for the gradient and is returned to its
/// previous mode afterwards.
pub fn fgsm_attack(net: &mut Network, images: &Tensor, labels: &[usize], epsilon: f64) -> Result<Tensor> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::input(format!("epsilon must be finite and nonnegative, got {epsilon}")));
    }
    if epsilon == 0.0 {
        return Ok(images.clone());
    }
    let grad = input_gradient(net, images, labels)?;
    let mut out = images.clone();
    for (x, g) in out.data_mut().iter_mut().zip(grad.data()) {
        let s = if *g > 0.0 {
            1.0
        } else if *g < 0.0 {
            -1.0
        } else {
            continue;
        };
        *x = (*x + epsilon * s).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// `∂L_CE/∂x` for a batch, computed in eval mode.
pub fn input_gradient(net: &mut Network, images: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let previous = net.mode();
    net.set_mode(Mode::Eval);
    let result = (|| {
        let logits = net.forward(images, None)?;
        let (_, dlogits) = cross_entropy_loss(&logits, labels)?;
        Ok(net.backward(dlogits)?.input)
    })();
    net.clear_caches();
    net.set_mode(previous);
    result
}

/// Exact and super-class accuracy under FGSM at each strength. Strengths
/// must be ascending and start at 0; the ε = 0 entry equals clean accuracy.
pub fn robustness_sweep(net: &mut Network, set: &LabeledSet, strengths: &[f64]) -> Result<Vec<SweepPoint>> {
    if strengths.first() != Some(&0.0) {
        return Err(Error::input("attack strengths must start at 0"));
    }
    if strengths.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::input("attack strengths must be strictly ascending"));
    }
    let class_coarse = set.class_coarse();
    let n = set.len();
    let mut points = Vec::with_capacity(strengths.len());
    for &eps in strengths {
        let mut pred = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + EVAL_BATCH).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let (x, y) = set.batch(&idx);
            let attacked = fgsm_attack(net, &x, &y, eps)?;
            pred.extend(predict(net, &attacked)?);
            start = end;
        }
        let r = score(&pred, &set.labels, &class_coarse)?;
        points.push(SweepPoint {
            epsilon: eps,
            exact_acc: r.exact_acc,
            super_acc: r.super_acc,
        });
    }
    Ok(points)
}
