use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seed;

/// Linear SVM training knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvmParams {
    /// Hinge-loss weight against the `0.5 * |w|^2` regularizer.
    pub c: f64,
    /// Maximum number of passes over the data.
    pub epochs: usize,
    /// Stop once the spread of projected gradients in a pass drops below this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self { c: 1.0, epochs: 1000, tolerance: 1e-4, seed: 0 }
    }
}

/// Weights and bias of a linear classifier; `score >= 0` means positive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "feature has {} entries, model expects {}",
                x.len(),
                self.weights.len()
            )));
        }
        Ok(crate::nn::dot(&self.weights, x) + self.bias)
    }
}

/// Minimizes `0.5*(|w|^2 + b^2) + C * sum_i max(0, 1 - s_i (w.x_i + b))`
/// by dual coordinate descent, visiting examples in a seeded random order
/// each pass. The bias is learned as the weight of a constant feature 1.
pub fn fit_linear_svm(features: &[Vec<f64>], labels: &[bool], params: &SvmParams) -> Result<LinearModel> {
    if features.len() != labels.len() {
        return Err(invalid("features and labels differ in length"));
    }
    if !(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l)) {
        return Err(Error::SingleClass);
    }
    if params.epochs == 0 || !(params.c > 0.0) || !(params.tolerance >= 0.0) {
        return Err(invalid("SVM needs epochs >= 1, C > 0 and tolerance >= 0"));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::ShapeMismatch("features of unequal length".into()));
    }
    let c = params.c;
    let sign: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    let q: Vec<f64> = features.iter().map(|x| crate::nn::dot(x, x) + 1.0).collect();
    let mut alpha = vec![0.0; features.len()];
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut rng = seed::rng(params.seed);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut converged = false;
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            let x = &features[i];
            let g = sign[i] * (crate::nn::dot(&w, x) + b) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / q[i]).clamp(0.0, c);
                let step = (alpha[i] - old) * sign[i];
                crate::nn::axpy(step, x, &mut w);
                b += step;
            }
        }
        if pg_max - pg_min <= params.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        log::debug!("linear SVM stopped after {} passes without converging", params.epochs);
    }
    if !w.iter().all(|v| v.is_finite()) || !b.is_finite() {
        return Err(invalid("SVM training produced non-finite weights"));
    }
    Ok(LinearModel { weights: w, bias: b })
}
