// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::error::{Error, Result};

/// Generalized advantage estimates for one episode. The episode ends after
/// the last reward, so the value after it is 0. Returns `(advantages,
/// returns)` with `returns = advantages + values`.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() {
        return Err(Error::Shape(format!(
            "gae: {} rewards, {} values",
            rewards.len(),
            values.len()
        )));
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        next_adv = delta + gamma * lambda * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Whiten advantages in place across all episodes (zero mean, unit
/// variance over tokens).
pub fn normalize_advantages(episodes: &mut [Vec<f64>]) {
    let n: usize = episodes.iter().map(Vec::len).sum();
    if n == 0 {
        return;
    }
    let mean = episodes.iter().flatten().sum::<f64>() / n as f64;
    let var = episodes.iter().flatten().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
    let inv = 1.0 / (var.sqrt() + 1e-8);
    for a in episodes.iter_mut().flatten() {
        *a = (*a - mean) * inv;
    }
}
