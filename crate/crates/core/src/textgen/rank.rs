use std::cmp::Ordering;

use crate::error::{invalid, Result};

/// Descending probability, ascending token id on ties.
#[inline]
fn by_rank(dist: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b))
}

/// 0-indexed rank of `token`: tokens with strictly higher probability plus
/// equal-probability tokens with a smaller id.
pub fn rank_of(dist: &[f64], token: usize) -> usize {
    let p = dist[token];
    dist.iter()
        .enumerate()
        .filter(|&(i, &q)| q > p || (q == p && i < token))
        .count()
}

/// The `k` likeliest token ids in rank order.
pub fn truncate_topk(dist: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > dist.len() {
        return Err(invalid(format!("top-k size {k} outside 1..={}", dist.len())));
    }
    let mut ids: Vec<usize> = (0..dist.len()).collect();
    let cmp = by_rank(dist);
    if k < ids.len() {
        ids.select_nth_unstable_by(k - 1, &cmp);
        ids.truncate(k);
    }
    ids.sort_unstable_by(&cmp);
    Ok(ids)
}

/// The full ranking of all token ids.
pub fn ranking(dist: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..dist.len()).collect();
    ids.sort_unstable_by(by_rank(dist));
    ids
}

/// Index of the likeliest token (smallest id on ties).
pub fn argmax(dist: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in dist.iter().enumerate().skip(1) {
        if p > dist[best] {
            best = i;
        }
    }
    best
}

/// Probability floor applied before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Summed negative natural-log likelihood of `targets`.
pub fn nll_loss(distributions: &[Vec<f64>], targets: &[usize]) -> Result<f64> {
    if distributions.len() != targets.len() {
        return Err(invalid(format!(
            "{} distributions for {} targets",
            distributions.len(),
            targets.len()
        )));
    }
    Ok(distributions
        .iter()
        .zip(targets)
        .map(|(d, &t)| -d[t].max(PROB_FLOOR).ln())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rank_examples() {
        let d = [0.1, 0.6, 0.3];
        assert_eq!(rank_of(&d, 1), 0);
        assert_eq!(rank_of(&d, 2), 1);
        assert_eq!(rank_of(&d, 0), 2);
        assert_eq!(rank_of(&[0.25; 4], 3), 3);
        assert_eq!(rank_of(&[0.25; 4], 0), 0);
    }

    #[test]
    fn second_likeliest_has_rank_one() {
        // Ground truth is the second most likely word.
        let d = [0.05, 0.5, 0.3, 0.15];
        assert_eq!(rank_of(&d, 2), 1);
    }

    #[test]
    fn topk_extremes() {
        let d = [0.1, 0.4, 0.4, 0.1];
        assert_eq!(truncate_topk(&d, 4).unwrap(), ranking(&d));
        assert_eq!(ranking(&d), vec![1, 2, 0, 3]);
        assert_eq!(truncate_topk(&d, 1).unwrap(), vec![argmax(&d)]);
        assert!(truncate_topk(&d, 0).is_err());
        assert!(truncate_topk(&d, 5).is_err());
    }

    #[test]
    fn nll_cases() {
        assert_eq!(nll_loss(&[vec![0.0, 1.0], vec![1.0, 0.0]], &[1, 0]).unwrap(), 0.0);
        let u = vec![vec![0.25; 4]; 2];
        assert!((nll_loss(&u, &[0, 3]).unwrap() - 2.0 * 4f64.ln()).abs() < 1e-12);
        assert!(nll_loss(&u, &[0]).is_err());
        assert!(nll_loss(&[vec![0.0, 1.0]], &[0]).unwrap().is_finite());
    }

    fn dist_strategy() -> impl Strategy<Value = Vec<f64>> {
        // Coarse values so ties actually occur.
        prop::collection::vec(0u8..6, 2..30).prop_map(|v| {
            let s: f64 = v.iter().map(|&x| x as f64 + 0.5).sum();
            v.iter().map(|&x| (x as f64 + 0.5) / s).collect()
        })
    }

    proptest! {
        #[test]
        fn ranks_form_a_permutation(d in dist_strategy()) {
            let mut r: Vec<usize> = (0..d.len()).map(|t| rank_of(&d, t)).collect();
            prop_assert_eq!(rank_of(&d, argmax(&d)), 0);
            let full = ranking(&d);
            for (pos, &t) in full.iter().enumerate() {
                prop_assert_eq!(r[t], pos);
            }
            r.sort_unstable();
            prop_assert_eq!(r, (0..d.len()).collect::<Vec<_>>());
        }

        #[test]
        fn nll_matches_direct_sum(d in dist_strategy(), t in 0usize..2) {
            let dists = vec![d.clone(), d.clone()];
            let expected = -(d[t].ln()) - d[0].ln();
            prop_assert!((nll_loss(&dists, &[t, 0]).unwrap() - expected).abs() < 1e-9);
        }
    }
}
