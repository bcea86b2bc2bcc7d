//! Small numeric helpers shared across modules.

pub use statrs::function::gamma::ln_gamma;

/// `log(sum(exp(v)))` without overflow. Returns `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// `log(1 + exp(a))`.
pub fn softplus(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ln_gamma_reference_values() {
        // ln Γ(1/2) = ln √π, ln Γ(10) = ln 9!, ln Γ(1.5) = ln(√π / 2)
        let half = std::f64::consts::PI.sqrt().ln();
        assert_relative_eq!(ln_gamma(0.5), half, max_relative = 1e-13);
        assert_relative_eq!(ln_gamma(10.0), 362880f64.ln(), max_relative = 1e-13);
        assert_relative_eq!(ln_gamma(1.5), half - 2f64.ln(), max_relative = 1e-13);
        assert_relative_eq!(ln_gamma(1000.5), 5_908.674_175_848_677, max_relative = 1e-13);
        assert!(ln_gamma(1.0).abs() < 1e-14);
    }

    #[test]
    fn lse_matches_direct_sum() {
        let v = [0.1f64, -2.0, 3.5];
        let direct: f64 = v.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert_relative_eq!(log_sum_exp(&v), direct, max_relative = 1e-15);
        assert_relative_eq!(log_sum_exp(&[1000.0, 1000.0]), 1000.0 + 2f64.ln());
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn softplus_tails() {
        assert_relative_eq!(softplus(0.0), 2f64.ln());
        assert_relative_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
    }
}
