//! Generalised advantage estimation over one environment's rollout segment.

use super::RlError;

/// Advantages and returns for consecutive steps of one environment.
///
/// `next_values[t]` is the value of the state reached by step `t` (before any
/// reset). `ends[t]` stops the advantage recursion at an episode boundary and
/// `terminals[t]` additionally drops the bootstrap value.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    ends: &[bool],
    terminals: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), RlError> {
    let n = rewards.len();
    if [values.len(), next_values.len(), ends.len(), terminals.len()].iter().any(|&l| l != n) {
        return Err(RlError::Shape(format!(
            "GAE inputs have lengths {n}, {}, {}, {}, {}",
            values.len(),
            next_values.len(),
            ends.len(),
            terminals.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let boot = if terminals[t] { 0.0 } else { next_values[t] };
        let delta = rewards[t] + gamma * boot - values[t];
        let carry = if ends[t] { 0.0 } else { next_adv };
        adv[t] = delta + gamma * lambda * carry;
        next_adv = adv[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}
