//! Log-log slope fits over geometric parameter sequences.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Fewest samples a rate fit accepts.
pub const MIN_SAMPLES: usize = 5;
/// Number of trailing (smallest-ε) samples used for the slope.
pub const DEFAULT_TAIL: usize = 4;
/// Largest RMS log-residual of an accepted fit.
pub const ACCEPT_RESIDUAL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub eps_values: Vec<f64>,
    pub quantity_values: Vec<f64>,
    /// Least-squares slope of `log|quantity|` against `log ε` over the tail.
    pub fitted_slope: f64,
    /// RMS residual of that fit, in natural-log units.
    pub fit_residual: f64,
    pub tail: usize,
    pub accepted: bool,
}

impl RateFit {
    /// Fits the last `DEFAULT_TAIL` samples.
    pub fn fit(eps: &[f64], values: &[f64]) -> Result<Self> {
        Self::fit_tail(eps, values, DEFAULT_TAIL)
    }

    pub fn fit_tail(eps: &[f64], values: &[f64], tail: usize) -> Result<Self> {
        if eps.len() != values.len() {
            return Err(Error::InvalidArgument(
                "ε and quantity lengths differ".into(),
            ));
        }
        if eps.len() < MIN_SAMPLES.max(tail) || tail < 2 {
            return Err(Error::InsufficientPoints {
                needed: MIN_SAMPLES.max(tail),
                got: eps.len(),
            });
        }
        let start = eps.len() - tail;
        let mut xs = Vec::with_capacity(tail);
        let mut ys = Vec::with_capacity(tail);
        for (e, v) in eps[start..].iter().zip(&values[start..]) {
            if !(*e > 0.0 && v.is_finite() && *v != 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "cannot fit ε = {e}, value = {v}"
                )));
            }
            xs.push(e.ln());
            ys.push(v.abs().ln());
        }
        let m = tail as f64;
        let mx = xs.iter().sum::<f64>() / m;
        let my = ys.iter().sum::<f64>() / m;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        if sxx == 0.0 {
            return Err(Error::InvalidArgument("ε values are not distinct".into()));
        }
        let slope = sxy / sxx;
        let icpt = my - slope * mx;
        let rss: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - icpt - slope * x).powi(2))
            .sum();
        let fit_residual = (rss / m).sqrt();
        Ok(Self {
            eps_values: eps.to_vec(),
            quantity_values: values.to_vec(),
            fitted_slope: slope,
            fit_residual,
            tail,
            accepted: fit_residual < ACCEPT_RESIDUAL,
        })
    }
}

/// `{first·2^{-k}, k = 0..count}`.
pub fn geometric_grid(first: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| first * 0.5f64.powi(k as i32)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn recovers_power_laws() {
        let eps = geometric_grid(0.4, 7);
        let v: Vec<f64> = eps.iter().map(|e| 3.0 * e.powf(1.5)).collect();
        let f = RateFit::fit(&eps, &v).unwrap();
        assert!((f.fitted_slope - 1.5).abs() < 1e-12);
        assert!(f.fit_residual < 1e-12 && f.accepted);
    }

    #[test]
    fn rejects_short_inputs() {
        let eps = geometric_grid(0.4, 4);
        assert!(matches!(
            RateFit::fit(&eps, &eps),
            Err(Error::InsufficientPoints { .. })
        ));
    }

    proptest! {
        #[test]
        fn slope_is_invariant_under_scaling(c in 0.01f64..100.0, s in -3.0f64..3.0) {
            let eps = geometric_grid(0.4, 6);
            let v: Vec<f64> = eps.iter().map(|e| c * e.powf(s) * (1.0 + 0.01 * e)).collect();
            let w: Vec<f64> = v.iter().map(|x| 7.0 * x).collect();
            let a = RateFit::fit(&eps, &v).unwrap();
            let b = RateFit::fit(&eps, &w).unwrap();
            prop_assert!((a.fitted_slope - b.fitted_slope).abs() < 1e-10);
        }
    }
}
