//! Krylov solvers on plain slices: preconditioned CG, preconditioned MINRES
//! and a Lanczos iteration in a user-supplied inner product.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, SymmetricEigen};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += a·x`.
pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Preconditioned conjugate gradients for an SPD operator. Returns the
/// iterate once `‖b - Ax‖ ≤ rtol·‖b‖`, or the final relative residual on
/// failure.
pub fn pcg(
    apply: impl Fn(&[f64], &mut [f64]),
    precond: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    x0: Vec<f64>,
    rtol: f64,
    max_iter: usize,
) -> std::result::Result<Vec<f64>, f64> {
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut x = x0;
    let mut ax = vec![0.0; n];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut rn = norm(&r);
    if rn <= rtol * bnorm {
        return Ok(x);
    }
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for _ in 0..max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        axpy(&mut x, alpha, &p);
        axpy(&mut r, -alpha, &ap);
        rn = norm(&r);
        if rn <= rtol * bnorm {
            return Ok(x);
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    Err(rn / bnorm)
}

/// Outcome of a MINRES solve.
#[derive(Debug, Clone)]
pub struct MinresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Preconditioned residual norm relative to its initial value.
    pub relative_residual: f64,
}

/// Preconditioned MINRES for a symmetric (possibly indefinite) operator with
/// an SPD preconditioner given through its inverse action.
pub fn minres(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precond_inv: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    rtol: f64,
    max_iter: usize,
) -> Result<MinresOutcome> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut v_prev = vec![0.0; n];
    let mut v = b.to_vec();
    let mut z = precond_inv(&v);
    let mut gamma = dot(&z, &v);
    if gamma < 0.0 {
        return Err(Error::SolverNonConvergence(
            "preconditioner is not positive".into(),
        ));
    }
    gamma = gamma.sqrt();
    let gamma1 = gamma;
    if gamma1 == 0.0 {
        return Ok(MinresOutcome {
            x,
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut gamma_prev = 1.0;
    let mut eta = gamma;
    let (mut s_prev, mut s) = (0.0, 0.0);
    let (mut c_prev, mut c) = (1.0, 1.0);
    let mut w_prev = vec![0.0; n];
    let mut w = vec![0.0; n];
    for it in 1..=max_iter {
        for zi in z.iter_mut() {
            *zi /= gamma;
        }
        let az = apply(&z);
        let delta = dot(&az, &z);
        let mut v_next = az;
        axpy(&mut v_next, -delta / gamma, &v);
        axpy(&mut v_next, -gamma / gamma_prev, &v_prev);
        let z_next = precond_inv(&v_next);
        let g2 = dot(&z_next, &v_next);
        if g2 < -1e-14 * gamma1 * gamma1 {
            return Err(Error::SolverNonConvergence(
                "preconditioner is not positive".into(),
            ));
        }
        let gamma_next = g2.max(0.0).sqrt();
        let a0 = c * delta - c_prev * s * gamma;
        let a1 = (a0 * a0 + gamma_next * gamma_next).sqrt();
        let a2 = s * delta + c_prev * c * gamma;
        let a3 = s_prev * gamma;
        if a1 == 0.0 {
            return Err(Error::SolverNonConvergence("MINRES breakdown".into()));
        }
        let c_next = a0 / a1;
        let s_next = gamma_next / a1;
        let mut w_next = z.clone();
        axpy(&mut w_next, -a3, &w_prev);
        axpy(&mut w_next, -a2, &w);
        for wi in w_next.iter_mut() {
            *wi /= a1;
        }
        axpy(&mut x, c_next * eta, &w_next);
        eta *= -s_next;

        let rel = eta.abs() / gamma1;
        if rel <= rtol || gamma_next == 0.0 {
            return Ok(MinresOutcome {
                x,
                iterations: it,
                relative_residual: rel,
            });
        }
        v_prev = v;
        v = v_next;
        z = z_next;
        gamma_prev = gamma;
        gamma = gamma_next;
        w_prev = w;
        w = w_next;
        c_prev = c;
        c = c_next;
        s_prev = s;
        s = s_next;
    }
    Err(Error::SolverNonConvergence(format!(
        "MINRES reached {max_iter} iterations at relative residual {}",
        eta.abs() / gamma1
    )))
}

/// Extremal eigenpairs from Lanczos.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    /// Largest eigenvalues, in decreasing order.
    pub values: Vec<f64>,
    /// Matching eigenvectors, normalized in the supplied inner product.
    pub vectors: Vec<Vec<f64>>,
    pub iterations: usize,
}

/// Lanczos with full reorthogonalization for an operator that is
/// self-adjoint in the inner product `ip`. Returns the `k` largest
/// eigenvalues.
pub fn lanczos_largest(
    op: impl Fn(&[f64]) -> Vec<f64>,
    ip: impl Fn(&[f64], &[f64]) -> f64,
    start: Vec<f64>,
    k: usize,
    max_iter: usize,
    tol: f64,
) -> Result<EigenPairs> {
    let n = start.len();
    let max_iter = max_iter.min(n);
    let k = k.min(max_iter);
    let mut q = start;
    let s = ip(&q, &q).sqrt();
    if !(s > 0.0) {
        return Err(Error::EigensolverNonConvergence("zero start vector".into()));
    }
    q.iter_mut().for_each(|v| *v /= s);
    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();

    let ritz = |alphas: &[f64], betas: &[f64]| {
        let m = alphas.len();
        let mut t = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = alphas[i];
            if i + 1 < m {
                t[(i, i + 1)] = betas[i];
                t[(i + 1, i)] = betas[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        (eig, order)
    };

    for j in 0..max_iter {
        let mut w = op(&basis[j]);
        let a = ip(&basis[j], &w);
        alphas.push(a);
        // Two passes of classical Gram-Schmidt against the whole basis.
        for _ in 0..2 {
            for b in &basis {
                let c = ip(b, &w);
                axpy(&mut w, -c, b);
            }
        }
        let beta = ip(&w, &w).max(0.0).sqrt();
        let m = alphas.len();
        let scale = alphas
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
            .max(1e-300);
        let invariant = beta <= 1e-12 * scale;
        if (m >= k && m % 5 == 0) || invariant || m == max_iter {
            let (eig, order) = ritz(&alphas, &betas);
            let converged = order.iter().take(k).all(|&i| {
                let last = eig.eigenvectors[(m - 1, i)];
                (beta * last).abs() <= tol * eig.eigenvalues[i].abs().max(1.0)
            });
            if (m >= k && converged) || invariant {
                let values: Vec<f64> = order.iter().take(k).map(|&i| eig.eigenvalues[i]).collect();
                let vectors = order
                    .iter()
                    .take(k)
                    .map(|&i| {
                        let mut v = vec![0.0; n];
                        for (r, b) in basis.iter().enumerate() {
                            axpy(&mut v, eig.eigenvectors[(r, i)], b);
                        }
                        let s = ip(&v, &v).sqrt();
                        v.iter_mut().for_each(|x| *x /= s);
                        v
                    })
                    .collect();
                return Ok(EigenPairs {
                    values,
                    vectors,
                    iterations: m,
                });
            }
        }
        if invariant {
            break;
        }
        betas.push(beta);
        w.iter_mut().for_each(|v| *v /= beta);
        basis.push(w);
    }
    Err(Error::EigensolverNonConvergence(format!(
        "no convergence in {max_iter} Lanczos steps"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn laplacian_1d(n: usize) -> impl Fn(&[f64], &mut [f64]) {
        move |v: &[f64], out: &mut [f64]| {
            for i in 0..n {
                let l = if i > 0 { v[i - 1] } else { 0.0 };
                let r = if i + 1 < n { v[i + 1] } else { 0.0 };
                out[i] = 2.5 * v[i] - l - r;
            }
        }
    }

    #[test]
    fn cg_solves_spd_system() {
        let n = 50;
        let a = laplacian_1d(n);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = pcg(&a, |v| v.to_vec(), &b, vec![0.0; n], 1e-12, 500).unwrap();
        let mut ax = vec![0.0; n];
        a(&x, &mut ax);
        let err = ax
            .iter()
            .zip(&b)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-10);
    }

    #[test]
    fn minres_solves_indefinite_system() {
        let n = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let diag: Vec<f64> = (0..n)
            .map(|i| {
                if i % 3 == 0 {
                    -1.0 - i as f64
                } else {
                    1.0 + i as f64
                }
            })
            .collect();
        let off: Vec<f64> = (0..n).map(|_| rng.random_range(-0.3..0.3)).collect();
        let apply = |v: &[f64]| {
            (0..n)
                .map(|i| {
                    let mut s = diag[i] * v[i];
                    if i > 0 {
                        s += off[i - 1] * v[i - 1];
                    }
                    if i + 1 < n {
                        s += off[i] * v[i + 1];
                    }
                    s
                })
                .collect::<Vec<_>>()
        };
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let prec = |v: &[f64]| {
            v.iter()
                .zip(&diag)
                .map(|(x, d)| x / d.abs())
                .collect::<Vec<_>>()
        };
        let out = minres(apply, prec, &b, 1e-12, 500).unwrap();
        let r = apply(&out.x);
        let err = r
            .iter()
            .zip(&b)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn lanczos_finds_largest_eigenvalues() {
        let n = 200;
        let d: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let op = |v: &[f64]| v.iter().zip(&d).map(|(x, di)| x * di).collect::<Vec<_>>();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let start: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = lanczos_largest(op, dot, start, 4, 200, 1e-12).unwrap();
        for (i, v) in out.values.iter().enumerate() {
            assert!((v - d[i]).abs() < 1e-10, "{i}: {v}");
        }
    }
}
