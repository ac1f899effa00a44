use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::seed;

/// A fixed set of hidden units forced to zero at every timestep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationMask {
    pub fraction: f64,
    pub seed: u64,
    pub units: Vec<usize>,
    hidden: usize,
}

impl AblationMask {
    /// Samples `round(fraction * hidden)` distinct units with `seed`.
    pub fn new(fraction: f64, hidden: usize, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(invalid(format!("ablation fraction {fraction} outside [0, 1]")));
        }
        let count = (fraction * hidden as f64).round() as usize;
        let mut units = sample(&mut seed::rng(seed), hidden, count).into_vec();
        units.sort_unstable();
        Ok(Self {
            fraction,
            seed,
            units,
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Zeroes the masked units of one hidden vector in place.
    pub fn apply_in_place(&self, h: &mut [f64]) {
        for &u in &self.units {
            if let Some(v) = h.get_mut(u) {
                *v = 0.0;
            }
        }
    }
}

/// Zeroes the masked units of every hidden vector.
pub fn apply_ablation(hidden_states: &[Vec<f64>], mask: &AblationMask) -> Vec<Vec<f64>> {
    hidden_states
        .iter()
        .map(|h| {
            let mut h = h.clone();
            mask.apply_in_place(&mut h);
            h
        })
        .collect()
}
