//! Quadratic lower bounds on the logistic and log-sum-exp functions.

use crate::linalg::logistic;

const XI_LIMIT: f64 = 1e-8;

/// `λ(ξ) = (σ(ξ) − ½) / (2ξ)`, with its limit 1/8 at ξ = 0.
pub fn lambda_of_xi(xi: f64) -> f64 {
    let a = xi.abs();
    if a <= XI_LIMIT {
        0.125
    } else {
        // σ(a) − ½ = ½ tanh(a/2), without the cancellation
        (0.5 * a).tanh() / (4.0 * a)
    }
}

/// Lower bound `σ(ξ) exp(½(x − ξ) − λ(ξ)(x² − ξ²))` on `σ(x)`.
pub fn logistic_bound(x: f64, xi: f64) -> f64 {
    logistic(xi) * (0.5 * (x - xi) - lambda_of_xi(xi) * (x * x - xi * xi)).exp()
}

/// Upper bound `α + Σ ln(1 + exp(ηᵢ − α))` on `ln Σ exp(ηᵢ)`.
pub fn log_sum_exp_bound(eta: &[f64], alpha: f64) -> f64 {
    alpha + eta.iter().map(|&e| softplus(e - alpha)).sum::<f64>()
}

pub fn log_sum_exp(eta: &[f64]) -> f64 {
    let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + eta.iter().map(|&e| (e - m).exp()).sum::<f64>().ln()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_values() {
        assert_eq!(lambda_of_xi(0.0), 0.125);
        // σ(1) = 0.7310585786300049
        let expected = (0.7310585786300049 - 0.5) / 2.0;
        assert!((lambda_of_xi(1.0) - expected).abs() < 1e-15);
        assert!((lambda_of_xi(1.0) - 0.1155293).abs() < 1e-7);
        for a in [0.3, 2.0, 17.5, 1e-9] {
            assert_eq!(lambda_of_xi(a), lambda_of_xi(-a));
        }
        // continuous across the cutoff
        assert!((lambda_of_xi(2e-8) - 0.125).abs() < 1e-12);
    }

    #[test]
    fn bound_tight_at_xi() {
        for x in [-8.0, -1.0, 0.0, 0.5, 6.0] {
            assert!((logistic_bound(x, x) - logistic(x)).abs() < 1e-15);
        }
    }
}
