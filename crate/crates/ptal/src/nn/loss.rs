//! Cross-entropy losses shared by every training stage.

use crate::error::{PtalError, Result};

/// Log arguments are floored at `PROB_EPS` so losses stay finite; exact
/// predictions therefore score exactly zero.
pub const PROB_EPS: f64 = 1e-7;

pub fn clamp_prob(p: f64) -> f64 {
    p.max(PROB_EPS)
}

/// Categorical cross-entropy `-sum(target * ln(pred))`.
pub fn cross_entropy(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(PtalError::Dimension(format!(
            "cross_entropy: pred has {} entries, target {}",
            pred.len(),
            target.len()
        )));
    }
    let mut loss = 0.0;
    for (p, t) in pred.iter().zip(target) {
        if *t != 0.0 {
            loss -= t * clamp_prob(*p).ln();
        }
    }
    Ok(loss)
}

/// Per-entry binary cross-entropy `-(t ln p + (1-t) ln(1-p))`.
pub fn binary_cross_entropy(pred: f64, target: f64) -> f64 {
    -(target * clamp_prob(pred).ln() + (1.0 - target) * clamp_prob(1.0 - pred).ln())
}

/// d/d pred of [`binary_cross_entropy`]; each log term goes flat where its
/// floor is active, so the gradient matches the clamped loss surface.
pub fn binary_cross_entropy_grad(pred: f64, target: f64) -> f64 {
    let mut g = 0.0;
    if pred > PROB_EPS {
        g -= target / pred;
    }
    if 1.0 - pred > PROB_EPS {
        g += (1.0 - target) / (1.0 - pred);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn perfect_one_hot_is_within_the_clamp_residual() {
        let pred = vec![0.0, 1.0, 0.0];
        let target = vec![0.0, 1.0, 0.0];
        let l = cross_entropy(&pred, &target).unwrap();
        assert!(l >= 0.0 && l <= -((1.0f64 - PROB_EPS).ln()));
    }

    #[test]
    fn binary_half_against_one_is_ln_two() {
        let l = binary_cross_entropy(0.5, 1.0);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((l - 0.6931).abs() < 1e-4);
    }

    #[test]
    fn categorical_matches_direct_summation() {
        let mut rng = StdRng::seed_from_u64(77);
        for _ in 0..100 {
            let n = rng.random_range(1..10);
            let pred: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
            let target: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let got = cross_entropy(&pred, &target).unwrap();
            let mut expect = 0.0;
            for i in 0..n {
                expect += -target[i] * pred[i].max(PROB_EPS).ln();
            }
            assert!((got - expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn grad_matches_finite_differences_away_from_the_floor() {
        let mut rng = StdRng::seed_from_u64(8);
        for _ in 0..100 {
            let p = rng.random_range(0.01..0.99);
            let t = if rng.random::<bool>() { 1.0 } else { 0.0 };
            let h = 1e-7;
            let fd = (binary_cross_entropy(p + h, t) - binary_cross_entropy(p - h, t)) / (2.0 * h);
            let a = binary_cross_entropy_grad(p, t);
            assert!((a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()).max(1.0));
        }
    }

    #[test]
    fn length_mismatch_is_a_dimension_error() {
        assert!(matches!(
            cross_entropy(&[0.5, 0.5], &[1.0]),
            Err(crate::error::PtalError::Dimension(_))
        ));
    }
}
