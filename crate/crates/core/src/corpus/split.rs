use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::UserDataset;
use crate::error::{invalid, Result};
use crate::seed;

/// Disjoint user roles for one experiment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train_users: Vec<String>,
    pub test_users: Vec<String>,
    pub shadow_users: Vec<String>,
}

impl CorpusSplit {
    /// Validates pairwise disjointness.
    pub fn new(train_users: Vec<String>, test_users: Vec<String>, shadow_users: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for u in train_users.iter().chain(&test_users).chain(&shadow_users) {
            if !seen.insert(u.as_str()) {
                return Err(invalid(format!("user {u} appears in more than one role")));
            }
        }
        Ok(Self {
            train_users,
            test_users,
            shadow_users,
        })
    }

    /// Shuffles `users` with `seed` and assigns the first `n_train` to the
    /// target, the next `n_test` to the held-out set and the next `n_shadow`
    /// to the auditor's reference pool.
    pub fn random(users: &[String], n_train: usize, n_test: usize, n_shadow: usize, seed: u64) -> Result<Self> {
        let need = n_train + n_test + n_shadow;
        if need > users.len() {
            return Err(invalid(format!("split needs {need} users, corpus has {}", users.len())));
        }
        let mut order: Vec<String> = users.to_vec();
        order.shuffle(&mut seed::rng(seed));
        let shadow = order[n_train + n_test..need].to_vec();
        let test = order[n_train..n_train + n_test].to_vec();
        order.truncate(n_train);
        Self::new(order, test, shadow)
    }
}

/// Deals `records` into `n_users` artificial users of near-equal size.
///
/// Records are shuffled with `seed` and dealt round-robin, so user sizes
/// differ by at most one.
pub fn partition_artificial_users<T: Clone>(records: &[T], n_users: usize, seed: u64) -> Result<Vec<Vec<T>>> {
    if n_users == 0 {
        return Err(invalid("n_users must be positive"));
    }
    if n_users > records.len() {
        return Err(invalid(format!("cannot split {} records into {n_users} users", records.len())));
    }
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.shuffle(&mut seed::rng(seed));
    let mut users = vec![Vec::new(); n_users];
    for (i, &r) in idx.iter().enumerate() {
        users[i % n_users].push(records[r].clone());
    }
    Ok(users)
}

/// Splits a user's examples into a clean part and `round(fraction * n)`
/// held-out examples. Both parts keep the original example order.
pub fn noise_holdout(user: &UserDataset, fraction: f64, seed: u64) -> Result<(UserDataset, UserDataset)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(invalid(format!("holdout fraction {fraction} outside [0, 1)")));
    }
    let n = user.examples.len();
    let n_out = (fraction * n as f64).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    let mut held = vec![false; n];
    for &i in &idx[..n_out] {
        held[i] = true;
    }
    let (mut clean, mut out) = (Vec::new(), Vec::new());
    for (ex, h) in user.examples.iter().zip(held) {
        if h {
            out.push(ex.clone());
        } else {
            clean.push(ex.clone());
        }
    }
    Ok((
        UserDataset::new(user.user_id.clone(), clean),
        UserDataset::new(user.user_id.clone(), out),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Example;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("u{i}")).collect()
    }

    #[test]
    fn split_is_disjoint_and_sized() {
        let s = CorpusSplit::random(&ids(80), 20, 20, 40, 3).unwrap();
        assert_eq!((s.train_users.len(), s.test_users.len(), s.shadow_users.len()), (20, 20, 40));
        assert!(CorpusSplit::new(s.train_users.clone(), s.test_users.clone(), s.shadow_users.clone()).is_ok());
        assert_eq!(s, CorpusSplit::random(&ids(80), 20, 20, 40, 3).unwrap());
    }

    #[test]
    fn overlapping_roles_rejected() {
        assert!(CorpusSplit::new(vec!["a".into()], vec!["a".into()], vec![]).is_err());
        assert!(CorpusSplit::random(&ids(5), 3, 3, 0, 1).is_err());
    }

    #[test]
    fn artificial_users_balanced() {
        let recs: Vec<u32> = (0..10).collect();
        let one_each = partition_artificial_users(&recs, 10, 1).unwrap();
        assert!(one_each.iter().all(|u| u.len() == 1));
        let three = partition_artificial_users(&recs, 3, 1).unwrap();
        let mut sizes: Vec<usize> = three.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 4]);
        let mut all: Vec<u32> = three.concat();
        all.sort_unstable();
        assert_eq!(all, recs);
        assert_eq!(three, partition_artificial_users(&recs, 3, 1).unwrap());
        assert!(partition_artificial_users(&recs, 0, 1).is_err());
        assert!(partition_artificial_users(&recs, 11, 1).is_err());
    }

    fn user(n: usize) -> UserDataset {
        let examples = (0..n).map(|i| Example { x: vec![i], y: vec![i + 1] }).collect();
        UserDataset::new("u", examples)
    }

    #[test]
    fn holdout_counts() {
        let u = user(10);
        let (clean, held) = noise_holdout(&u, 0.0, 1).unwrap();
        assert!(held.examples.is_empty());
        assert_eq!(clean, u);

        let (clean, held) = noise_holdout(&u, 0.3, 1).unwrap();
        assert_eq!((clean.examples.len(), held.examples.len()), (7, 3));
        let mut all = clean.examples.clone();
        all.extend(held.examples.clone());
        all.sort_by_key(|e| e.x[0]);
        assert_eq!(all, u.examples);
        assert!(clean.examples.iter().all(|e| !held.examples.contains(e)));
        assert_eq!((clean, held), noise_holdout(&u, 0.3, 1).unwrap());
    }

    #[test]
    fn holdout_fraction_range() {
        assert!(noise_holdout(&user(3), 1.0, 1).is_err());
        assert!(noise_holdout(&user(3), -0.1, 1).is_err());
    }
}
