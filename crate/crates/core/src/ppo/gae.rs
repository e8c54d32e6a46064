/// Generalized advantage estimates and value targets.
///
/// `terminals[t]` marks the last step of an episode; the value after a
/// terminal step is taken as zero. A trajectory that does not end on a
/// terminal step is also bootstrapped with zero.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    terminals: &[bool],
    discount: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len(), "rewards and values must align");
    assert_eq!(
        rewards.len(),
        terminals.len(),
        "rewards and terminal flags must align"
    );
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = 0.0;
    for t in (0..n).rev() {
        let live = if terminals[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + discount * next_value * live - values[t];
        next_adv = delta + discount * lambda * live * next_adv;
        advantages[t] = next_adv;
        next_value = values[t];
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    (advantages, returns)
}

/// Shift and scale to zero mean and unit variance (population variance).
pub fn normalize(values: &mut [f64]) {
    let n = values.len();
    if n < 2 {
        return;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    for v in values.iter_mut() {
        *v = (*v - mean) / (std + 1e-8);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_step_example() {
        let (a, r) = compute_gae(&[1.0, 0.0], &[0.5, 0.25], &[false, true], 0.99, 0.95);
        assert!((a[0] - 0.512375).abs() < 1e-12);
        assert!((a[1] + 0.25).abs() < 1e-12);
        assert!((r[0] - 1.012375).abs() < 1e-12);
    }

    #[test]
    fn lambda_zero_is_td_error() {
        let rewards = [0.3, -0.2, 1.0, 0.5];
        let values = [0.1, 0.4, -0.3, 0.2];
        let terminals = [false, false, true, true];
        let (a, _) = compute_gae(&rewards, &values, &terminals, 0.9, 0.0);
        assert!((a[0] - (0.3 + 0.9 * 0.4 - 0.1)).abs() < 1e-15);
        assert!((a[1] - (-0.2 + 0.9 * -0.3 - 0.4)).abs() < 1e-15);
        assert!((a[2] - (1.0 - -0.3)).abs() < 1e-15);
        assert!((a[3] - (0.5 - 0.2)).abs() < 1e-15);
    }

    #[test]
    fn zeros_in_zeros_out() {
        let (a, r) = compute_gae(
            &[0.0; 5],
            &[0.0; 5],
            &[false, false, true, false, true],
            0.99,
            0.95,
        );
        assert!(a.iter().chain(&r).all(|&v| v == 0.0));
    }

    #[test]
    fn normalization() {
        let mut v = vec![1.0, 2.0, 3.0, 4.0];
        normalize(&mut v);
        let mean: f64 = v.iter().sum::<f64>() / 4.0;
        let var: f64 = v.iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-6);
        let mut one = vec![3.0];
        normalize(&mut one);
        assert_eq!(one, vec![3.0]);
    }
}
