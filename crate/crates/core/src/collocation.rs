//! Chebyshev collocation for radial ground states, an oracle independent of
//! shooting.
//!
//! With `y = r z` in three dimensions the radial equation
//! `z'' + 2z'/r - z + A z^p = 0` becomes `y'' - y + A |y|^{p-1} y / r^{p-1} = 0`
//! with `y(0) = 0`, solved on `[0, L]` with `y(L) = 0` by damped Newton.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

#[derive(Debug, Clone)]
pub struct CollocationSolution {
    pub p: f64,
    pub amplitude: f64,
    pub length: f64,
    /// Nodes in `r`, from `0` to `L`.
    pub nodes: Vec<f64>,
    /// `y = r z` at the nodes.
    pub y: Vec<f64>,
    /// `z(0) = y'(0)`.
    pub peak: f64,
    pub newton_iters: usize,
    /// Max-norm of the collocation residual at the interior nodes.
    pub residual: f64,
}

/// Chebyshev points `cos(πj/n)` and the differentiation matrix on `[-1, 1]`.
fn cheb(n: usize) -> (Vec<f64>, DMatrix<f64>) {
    let x: Vec<f64> = (0..=n).map(|j| (PI * j as f64 / n as f64).cos()).collect();
    let c =
        |j: usize| (if j == 0 || j == n { 2.0 } else { 1.0 }) * if j % 2 == 0 { 1.0 } else { -1.0 };
    let mut d = DMatrix::zeros(n + 1, n + 1);
    for i in 0..=n {
        for j in 0..=n {
            if i != j {
                d[(i, j)] = c(i) / c(j) / (x[i] - x[j]);
            }
        }
    }
    // Negative-sum trick for the diagonal.
    for i in 0..=n {
        let s: f64 = (0..=n).filter(|&j| j != i).map(|j| d[(i, j)]).sum();
        d[(i, i)] = -s;
    }
    (x, d)
}

/// Solves the three-dimensional ground state of `-Δz + z = A z^p` with `n`
/// collocation intervals on `[0, length]`.
pub fn ground_state_3d(
    p: f64,
    amplitude: f64,
    n: usize,
    length: f64,
) -> Result<CollocationSolution> {
    if !(p > 1.0 && p < 5.0) || !(amplitude > 0.0) || n < 16 || !(length > 1.0) {
        return Err(Error::InvalidArgument(format!(
            "collocation needs 1 < p < 5, A > 0, n ≥ 16, L > 1 (p = {p}, A = {amplitude}, n = {n}, L = {length})"
        )));
    }
    let (x, dx) = cheb(n);
    let scale = -2.0 / length;
    let r: Vec<f64> = x.iter().map(|v| 0.5 * length * (1.0 - v)).collect();
    let d1 = &dx * scale;
    let d2 = &d1 * &d1;
    let nonlin = |y: f64, r: f64| amplitude * y.abs().powf(p - 1.0) * y / r.powf(p - 1.0);
    let dnonlin = |y: f64, r: f64| amplitude * p * y.abs().powf(p - 1.0) / r.powf(p - 1.0);

    // Start from a scaled bump `c r e^{-r²/2}` whose height matches the
    // local balance `z ≈ A^{-1/(p-1)}` times a generous factor.
    let c0 = 4.0 * amplitude.powf(-1.0 / (p - 1.0));
    let mut y = DVector::from_iterator(n + 1, r.iter().map(|&ri| c0 * ri * (-0.5 * ri * ri).exp()));
    let interior = 1..n;
    let residual = |y: &DVector<f64>| -> DVector<f64> {
        let dy = &d2 * y;
        let mut f = DVector::zeros(n + 1);
        for j in interior.clone() {
            f[j] = dy[j] - y[j] + nonlin(y[j], r[j]);
        }
        f[0] = y[0];
        f[n] = y[n];
        f
    };
    let mut f = residual(&y);
    let mut norm = f.amax();
    for iter in 1..=60 {
        let mut jac = d2.clone();
        for j in 0..=n {
            if j == 0 || j == n {
                jac.row_mut(j).fill(0.0);
                jac[(j, j)] = 1.0;
            } else {
                jac[(j, j)] += dnonlin(y[j], r[j]) - 1.0;
            }
        }
        let step = jac
            .lu()
            .solve(&(-&f))
            .ok_or_else(|| Error::NonConvergence("singular collocation Jacobian".into()))?;
        let mut t = 1.0;
        loop {
            let trial = &y + &step * t;
            let ft = residual(&trial);
            if ft.amax() < norm || t < 1e-4 {
                y = trial;
                f = ft;
                break;
            }
            t *= 0.5;
        }
        let prev = norm;
        norm = f.amax();
        if norm < 1e-11 * c0 || (step.amax() * t < 1e-14 * c0 && norm <= prev) {
            let dy = &d1 * &y;
            let peak = dy[0];
            if !(peak > 0.0) || y.iter().any(|v| *v < -1e-8 * c0) {
                return Err(Error::NonConvergence(
                    "collocation converged to a non-positive state".into(),
                ));
            }
            return Ok(CollocationSolution {
                p,
                amplitude,
                length,
                nodes: r,
                y: y.iter().copied().collect(),
                peak,
                newton_iters: iter,
                residual: norm,
            });
        }
    }
    Err(Error::NonConvergence(format!(
        "collocation Newton stalled at residual {norm:.3e}"
    )))
}

impl CollocationSolution {
    /// `z(r)` by barycentric interpolation of `y`, with `z(0)` the peak.
    pub fn eval(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return self.peak;
        }
        if r >= self.length {
            return 0.0;
        }
        let n = self.nodes.len() - 1;
        let mut num = 0.0;
        let mut den = 0.0;
        for (j, (&rj, &yj)) in self.nodes.iter().zip(&self.y).enumerate() {
            let mut w = if j % 2 == 0 { 1.0 } else { -1.0 };
            if j == 0 || j == n {
                w *= 0.5;
            }
            let d = r - rj;
            if d == 0.0 {
                return yj / r;
            }
            num += w * yj / d;
            den += w / d;
        }
        num / den / r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn differentiation_is_exact_on_polynomials() {
        let (x, d) = cheb(8);
        let f = DVector::from_iterator(9, x.iter().map(|v| v.powi(5)));
        let df = &d * f;
        for (xi, v) in x.iter().zip(df.iter()) {
            assert!((v - 5.0 * xi.powi(4)).abs() < 1e-12);
        }
    }

    #[test]
    fn cubic_ground_state_peak() {
        let s = ground_state_3d(3.0, 1.0, 128, 24.0).unwrap();
        assert!((s.peak - 4.3373).abs() < 1e-3, "{}", s.peak);
        assert!(s.residual < 1e-9);
        // Amplitude scaling: z_A = A^{-1/(p-1)} z_1.
        let t = ground_state_3d(3.0, 4.0, 128, 24.0).unwrap();
        assert!(
            (t.peak * 2.0 - s.peak).abs() < 1e-9,
            "{} {}",
            t.peak,
            s.peak
        );
    }

    #[test]
    fn agrees_with_shooting() {
        let c = ground_state_3d(3.0, 1.0, 128, 24.0).unwrap();
        let g = crate::groundstate::solve_ground_state(3, 3.0, 1.0, 1e-10).unwrap();
        for r in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0] {
            assert!(
                (c.eval(r) - g.eval(r)).abs() < 1e-5,
                "r = {r}: {} vs {}",
                c.eval(r),
                g.eval(r)
            );
        }
    }

    #[test]
    fn rejects_supercritical_and_bad_sizes() {
        assert!(ground_state_3d(5.0, 1.0, 64, 20.0).is_err());
        assert!(ground_state_3d(3.0, 1.0, 8, 20.0).is_err());
    }
}
