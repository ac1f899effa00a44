use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Audit result for one user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditOutcome {
    pub user_id: String,
    /// True membership.
    pub label: bool,
    pub decision: bool,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    /// False when nothing was classified positive; precision is then 0.
    pub precision_defined: bool,
}

pub fn classification_metrics(outcomes: &[AuditOutcome]) -> Result<ClassificationMetrics> {
    if outcomes.is_empty() {
        return Err(invalid("no audit outcomes"));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for o in outcomes {
        match (o.label, o.decision) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(ClassificationMetrics {
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        accuracy: ratio(tp + tn, outcomes.len()),
        precision_defined: tp + fp > 0,
    })
}

/// Area under the ROC curve: the chance that a random member outscores a
/// random non-member, ties counting one half. Computed from midranks.
pub fn auc(outcomes: &[AuditOutcome]) -> Result<f64> {
    let n_pos = outcomes.iter().filter(|o| o.label).count();
    let n_neg = outcomes.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    if outcomes.iter().any(|o| !o.score.is_finite()) {
        return Err(invalid("non-finite audit score"));
    }
    let mut idx: Vec<usize> = (0..outcomes.len()).collect();
    idx.sort_by(|&a, &b| outcomes[a].score.total_cmp(&outcomes[b].score));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && outcomes[idx[j + 1]].score == outcomes[idx[i]].score {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their average
        let mid = (i + j + 2) as f64 / 2.0;
        pos_rank_sum += mid * idx[i..=j].iter().filter(|&&k| outcomes[k].label).count() as f64;
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}
