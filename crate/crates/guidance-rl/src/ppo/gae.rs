//! Generalized advantage estimation.

use crate::{Error, Result};

/// Compute advantages and returns for one episode.
///
/// `delta_j = r_j + discount * V_{j+1} - V_j` with a terminal bootstrap value
/// of zero, then `A_j = delta_j + discount * lambda * A_{j+1}` and
/// `returns = A + V`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    discount: f64,
    gae_lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() {
        return Err(Error::ContractViolation(format!(
            "rewards ({}) and values ({}) length mismatch",
            rewards.len(),
            values.len()
        )));
    }
    if rewards.is_empty() {
        return Err(Error::ContractViolation("empty episode".into()));
    }
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut carry = 0.0;
    for j in (0..n).rev() {
        let next_value = if j + 1 < n { values[j + 1] } else { 0.0 };
        let delta = rewards[j] + discount * next_value - values[j];
        carry = delta + discount * gae_lambda * carry;
        advantages[j] = carry;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, returns))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn telescopes_at_lambda_one() {
        // With discount = lambda = 1 the advantage is total future reward
        // minus the value.
        let rewards = [0.0, 0.5, 0.0, 2.0];
        let values = [0.3, -0.2, 0.7, 0.1];
        let (adv, ret) = compute_gae(&rewards, &values, 1.0, 1.0).unwrap();
        for j in 0..4 {
            let future: f64 = rewards[j..].iter().sum();
            assert_abs_diff_eq!(adv[j], future - values[j], epsilon = 1e-12);
            assert_abs_diff_eq!(ret[j], future, epsilon = 1e-12);
        }
    }

    #[test]
    fn hand_recursion_example() {
        let (adv, ret) = compute_gae(&[0.0, 1.0], &[0.5, 0.2], 1.0, 0.95).unwrap();
        assert_abs_diff_eq!(adv[0], 0.46, epsilon = 1e-12);
        assert_abs_diff_eq!(adv[1], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(ret[0], 0.96, epsilon = 1e-12);
        assert_abs_diff_eq!(ret[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zeros_in_zeros_out() {
        let (adv, ret) = compute_gae(&[0.0; 5], &[0.0; 5], 1.0, 0.95).unwrap();
        assert!(adv.iter().all(|&a| a == 0.0));
        assert!(ret.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn rejects_mismatched_lengths() {
        assert!(compute_gae(&[1.0], &[0.0, 0.0], 1.0, 0.95).is_err());
        assert!(compute_gae(&[], &[], 1.0, 0.95).is_err());
    }
}
