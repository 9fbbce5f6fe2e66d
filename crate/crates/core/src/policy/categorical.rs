//! Categorical distributions in log space.

use crate::error::{Error, Result};

/// Numerically stable `log_softmax`. Rejects non-finite logits.
pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if let Some((i, z)) = logits.iter().enumerate().find(|(_, z)| !z.is_finite()) {
        return Err(Error::numeric(format!("non-finite logit {z} at token {i}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    Ok(logits.iter().map(|z| z - lse).collect())
}

pub fn probs(logp: &[f64]) -> Vec<f64> {
    logp.iter().map(|l| l.exp()).collect()
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `D_KL(p || q)` from log-probabilities.
///
/// Positions where `p` has no mass contribute nothing. Mass of `p` where `q`
/// has none is a support violation and is reported, never clamped.
pub fn kl_divergence(logp: &[f64], logq: &[f64]) -> Result<f64> {
    debug_assert_eq!(logp.len(), logq.len());
    let mut kl = 0.0;
    for (a, (&lp, &lq)) in logp.iter().zip(logq).enumerate() {
        if lp == f64::NEG_INFINITY {
            continue;
        }
        if lq == f64::NEG_INFINITY {
            return Err(Error::numeric(format!(
                "support violation: token {a} has mass {} under p but none under q",
                lp.exp()
            )));
        }
        kl += lp.exp() * (lp - lq);
    }
    Ok(kl)
}

/// Reverse KL `D_KL(student || teacher)` together with the per-token weights
/// `w_a = p_a (log p_a - log q_a)` for which
/// `grad KL = sum_a w_a grad log p_a` (teacher held constant).
pub fn reverse_kl_with_weights(student: &[f64], teacher: &[f64]) -> Result<(f64, Vec<f64>)> {
    let kl = kl_divergence(student, teacher)?;
    let weights = student
        .iter()
        .zip(teacher)
        .map(|(&lp, &lq)| {
            if lp == f64::NEG_INFINITY {
                0.0
            } else {
                lp.exp() * (lp - lq)
            }
        })
        .collect();
    Ok((kl, weights))
}

/// Maps per-token weights on `grad log p_a` to weights on `grad z_b`:
/// `d_b = w_b - (sum_a w_a) p_b`.
pub fn logit_coefficients(logp: &[f64], weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    weights
        .iter()
        .zip(logp)
        .map(|(&w, &lp)| w - total * lp.exp())
        .collect()
}
