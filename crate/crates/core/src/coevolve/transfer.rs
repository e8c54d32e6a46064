use crate::approximator::{batch, masked_softmax, Mlp};
use crate::domain::{WeightVector, OBS_DIM};
use crate::error::{Error, Result};

use super::StatePool;

/// Floor applied to the second distribution inside the KL log ratio.
pub const KL_FLOOR: f64 = 1e-12;

/// Distances closer than this count as ties.
const DISTANCE_TIE: f64 = 1e-12;

/// KL(p ‖ q) between two masked action distributions.
pub fn categorical_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pa, _)| pa > 0.0)
        .map(|(&pa, &qa)| pa * (pa / qa.max(KL_FLOOR)).ln())
        .sum()
}

/// Mean KL(π_p ‖ π_q) over the pooled states.
pub fn estimate_kl(policy_p: &Mlp, policy_q: &Mlp, pool: &StatePool) -> Result<f64> {
    if pool.is_empty() {
        return Err(Error::Contract(
            "KL estimate needs a nonempty state pool".into(),
        ));
    }
    let x = batch(pool.iter().map(|(o, _)| o.as_slice()), OBS_DIM);
    let lp = policy_p.forward(x.view());
    let lq = policy_q.forward(x.view());
    let mut total = 0.0;
    for (i, (_, mask)) in pool.iter().enumerate() {
        let p = masked_softmax(lp.row(i).as_slice().expect("contiguous"), &mask.0)?;
        let q = masked_softmax(lq.row(i).as_slice().expect("contiguous"), &mask.0)?;
        total += categorical_kl(&p, &q);
    }
    Ok(total / pool.len() as f64)
}

/// Blend factor `tau_max · exp(−phi · kl)`.
pub fn adaptive_tau(kl: f64, tau_max: f64, phi: f64) -> f64 {
    tau_max * (-phi * kl).exp()
}

/// The `k` members nearest to member `p` in weight space, nearest first;
/// equal distances resolve to the lower index.
pub fn neighbor_set(weights: &[WeightVector], p: usize, k: usize) -> Vec<usize> {
    let mut others: Vec<(f64, usize)> = (0..weights.len())
        .filter(|&q| q != p)
        .map(|q| (weights[p].distance(&weights[q]), q))
        .collect();
    others.sort_by(|a, b| {
        if (a.0 - b.0).abs() <= DISTANCE_TIE {
            a.1.cmp(&b.1)
        } else {
            a.0.total_cmp(&b.0)
        }
    });
    others.into_iter().take(k).map(|(_, q)| q).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ActionMask, Observation};
    use crate::seeds;

    #[test]
    fn one_term_kl() {
        let kl = categorical_kl(&[1.0, 0.0, 0.0], &[0.5, 0.25, 0.25]);
        assert!((kl - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(categorical_kl(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5]), 0.0);
    }

    #[test]
    fn tau_closed_form() {
        assert_eq!(adaptive_tau(0.0, 0.5, 0.5), 0.5);
        assert!((adaptive_tau(4f64.ln(), 0.5, 0.5) - 0.25).abs() < 1e-16);
        assert!(adaptive_tau(1.0, 0.5, 0.5) > adaptive_tau(1.1, 0.5, 0.5));
    }

    #[test]
    fn kl_of_identical_policies_is_zero() {
        let mut rng = seeds::stream(7, &[]);
        let net = Mlp::new(&[OBS_DIM, 8, 3], 1.0, 1.0, &mut rng);
        let mut pool = StatePool::new(16);
        for i in 0..16 {
            pool.push(
                Observation([i as f64 / 16.0; OBS_DIM]),
                ActionMask([true, i % 2 == 0, false]),
            );
        }
        assert!(estimate_kl(&net, &net, &pool).unwrap().abs() < 1e-12);
        assert!(estimate_kl(&net, &net, &StatePool::new(4)).is_err());
    }

    #[test]
    fn neighbors_exclude_self() {
        let table = WeightVector::default_table();
        for p in 0..table.len() {
            let all = neighbor_set(&table, p, table.len() - 1);
            assert_eq!(all.len(), table.len() - 1);
            assert!(!all.contains(&p));
        }
    }
}
