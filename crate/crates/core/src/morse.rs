//! Morse indices in the `H¹` metric, the near-kernel spanned by the
//! translation modes, and the tangent block of the Hessian at `u_ε`.
//!
//! The Hessian `f''_ε(u) = K - D` is studied through the generalized problem
//! `(K - D)v = μKv`. Writing `μ = 1 - ν`, the low end of the `μ` spectrum is
//! the high end of `K⁻¹D`, which is self-adjoint in the `K` product and has
//! its essential part at `ν = 0`. Lanczos with locking extracts the top
//! eigenpairs one at a time so that degenerate translation pairs are resolved.

use crate::error::{Error, Result};
use crate::fit::{RateFit, MIN_SAMPLES};
use crate::functional::{classify, Definiteness, Functional};
use crate::grid::{self, Field, Grid};
use crate::groundstate::GroundState;
use crate::linalg;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Seed of the Lanczos start vectors.
const START_SEED: u64 = 0x5eed_0f_4a11;
/// `|μ|` below which an eigenvalue counts toward the near-kernel.
pub const NEAR_KERNEL_TOL: f64 = 1e-3;
/// Tangent alignment required of a near-kernel eigenvector.
pub const ALIGNMENT_TOL: f64 = 0.99;
/// Width of the nondegeneracy band, in units of `ε^α`.
pub const BAND_FACTOR: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eigenpair {
    pub mu: f64,
    /// Norm of the `H¹` projection of the unit eigenvector onto the tangent span.
    pub tangent_alignment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnperturbedSpectrum {
    pub m0: usize,
    pub near_kernel_dim: usize,
    /// Smallest `μ` with alignments, ascending.
    pub eigenpairs: Vec<Eigenpair>,
    /// The near-kernel eigenvalues.
    pub kernel_values: Vec<f64>,
    pub min_kernel_alignment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorseReport {
    pub eps: f64,
    pub theta: Vec<f64>,
    pub m0: usize,
    pub near_kernel_dim: usize,
    pub index_u_eps: usize,
    /// Count with two more eigenvalues agrees with `index_u_eps`.
    pub index_stable: bool,
    /// `D²f_ε(u_ε)[∂_i z, ∂_j z]`.
    pub tangent_block: Vec<Vec<f64>>,
    pub tangent_block_scaled: Vec<Vec<f64>>,
    pub gamma_hessian_ref: Vec<Vec<f64>>,
    pub eigenvalues_low: Vec<f64>,
    /// `BAND_FACTOR · ε^α`.
    pub band: f64,
    /// Largest `δ̂` with lowest eigenvalue `< -δ̂` and normalized tangent
    /// eigenvalues of magnitude `≥ δ̂ ε^α`.
    pub delta_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentLimit {
    pub eps_values: Vec<f64>,
    pub scaled_blocks: Vec<Vec<Vec<f64>>>,
    pub reference: Vec<Vec<f64>>,
    /// `‖S_ε - D²Γ‖_F / ‖D²Γ‖_F` per point.
    pub relative_errors: Vec<f64>,
    pub terminal_relative_error: f64,
    /// Each scaled block has the definiteness of `D²Γ`.
    pub signs_match: Vec<bool>,
    pub error_rate: Option<RateFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub theta: Vec<f64>,
    /// `max_{i≠j} |(∂_i z|∂_j z)| / (‖∂_i z‖‖∂_j z‖)`.
    pub orthogonality: f64,
    /// `max_{i,j} |‖∂_i z‖ - ‖∂_j z‖| / max_i ‖∂_i z‖`.
    pub norm_spread: f64,
    /// `max |(∂_{ij} z|∂_l z)| / (‖∂_{ij} z‖‖∂_l z‖)`.
    pub curvature: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Low `μ` spectrum of `K - diag(d)` with tangent alignments against `t`.
fn low_spectrum(func: &Functional, d: &[f64], t: &[Vec<f64>], k: usize) -> Result<Vec<Eigenpair>> {
    let n = d.len();
    let ip = |a: &[f64], b: &[f64]| func.h1(a, b);
    let mut locked: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut values = Vec::with_capacity(k);
    let deflate = |x: &mut Vec<f64>, locked: &[Vec<f64>]| {
        for _ in 0..2 {
            for v in locked {
                let c = func.h1(v, x);
                linalg::axpy(x, -c, v);
            }
        }
    };
    for run in 0..k {
        let mut rng = ChaCha8Rng::seed_from_u64(START_SEED + run as u64);
        let mut start: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        deflate(&mut start, &locked);
        let op = |x: &[f64]| {
            let mut y = x.to_vec();
            deflate(&mut y, &locked);
            let c: Vec<f64> = d.iter().zip(&y).map(|(a, b)| a * b).collect();
            let mut r = func.riesz_fast(&c);
            deflate(&mut r, &locked);
            r
        };
        let pairs = linalg::lanczos_largest(op, ip, start, 1, 600, 1e-10)?;
        let mut v =
            pairs.vectors.into_iter().next().ok_or_else(|| {
                Error::EigensolverNonConvergence("Lanczos returned no vector".into())
            })?;
        deflate(&mut v, &locked);
        let s = func.h1(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= s);
        values.push(1.0 - pairs.values[0]);
        locked.push(v);
    }
    let dim = t.len();
    let kt: Vec<Vec<f64>> = t.iter().map(|ti| func.stiffness(ti)).collect();
    let gram = DMatrix::from_fn(dim, dim, |i, j| linalg::dot(&t[i], &kt[j]));
    let gram_inv = gram
        .try_inverse()
        .ok_or_else(|| Error::BorderSingular("tangent Gram".into()))?;
    let mut out: Vec<Eigenpair> = values
        .iter()
        .zip(&locked)
        .map(|(&mu, v)| {
            let c = nalgebra::DVector::from_iterator(dim, kt.iter().map(|k| linalg::dot(k, v)));
            let proj = (c.transpose() * &gram_inv * &c)[(0, 0)].max(0.0).sqrt();
            Eigenpair {
                mu,
                tangent_alignment: proj,
            }
        })
        .collect();
    out.sort_by(|a, b| a.mu.total_cmp(&b.mu));
    Ok(out)
}

fn frame_vectors(grid: &Grid, gs: &GroundState, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
    Ok(grid::tangent_frame(grid, gs, theta)?
        .into_iter()
        .map(Field::into_values)
        .collect())
}

/// Spectrum of `D²f₀(z₀)`: `m₀` counts negative eigenvalues whose
/// eigenvectors are not tangent modes. Needs `k ≥ N + 1`.
pub fn unperturbed_spectrum(func: &Functional, k: usize) -> Result<UnperturbedSpectrum> {
    let grid = func.grid();
    let theta = vec![0.0; grid.dim];
    if k < grid.dim + 1 {
        return Err(Error::InvalidArgument(format!("need k > N, got {k}")));
    }
    let z = grid::embed_state(grid, func.ground_state(), &theta)?;
    let d = func.energy_hess_diag(0.0, z.values());
    let t = frame_vectors(grid, func.ground_state(), &theta)?;
    let eigenpairs = low_spectrum(func, &d, &t, k)?;
    let kernel: Vec<&Eigenpair> = eigenpairs
        .iter()
        .filter(|e| e.mu.abs() < NEAR_KERNEL_TOL)
        .collect();
    let near_kernel_dim = kernel
        .iter()
        .filter(|e| e.tangent_alignment > ALIGNMENT_TOL)
        .count();
    let m0 = eigenpairs
        .iter()
        .filter(|e| e.mu < 0.0 && e.tangent_alignment < ALIGNMENT_TOL)
        .count();
    Ok(UnperturbedSpectrum {
        m0,
        near_kernel_dim,
        kernel_values: kernel.iter().map(|e| e.mu).collect(),
        min_kernel_alignment: kernel
            .iter()
            .map(|e| e.tangent_alignment)
            .fold(1.0, f64::min),
        eigenpairs,
    })
}

/// `D²f_ε(u)[∂_i z_θ, ∂_j z_θ]`.
pub fn tangent_block(
    func: &Functional,
    eps: f64,
    u: &Field,
    theta: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if !u.grid().same_as(func.grid()) {
        return Err(Error::GridMismatch("state on a different grid".into()));
    }
    let t = frame_vectors(func.grid(), func.ground_state(), theta)?;
    let d = func.energy_hess_diag(eps, u.values());
    let ht: Vec<Vec<f64>> = t
        .iter()
        .map(|ti| {
            let mut c = func.stiffness(ti);
            for (ci, (di, x)) in c.iter_mut().zip(d.iter().zip(ti)) {
                *ci -= di * x;
            }
            c
        })
        .collect();
    let n = t.len();
    let mut b = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            b[i][j] = linalg::dot(&t[i], &ht[j]);
        }
    }
    Ok(b)
}

/// Eigenvalues of the tangent block relative to the tangent Gram matrix.
fn normalized_block_eigs(func: &Functional, theta: &[f64], block: &[Vec<f64>]) -> Result<Vec<f64>> {
    let t = frame_vectors(func.grid(), func.ground_state(), theta)?;
    let n = t.len();
    let gram = DMatrix::from_fn(n, n, |i, j| func.h1(&t[i], &t[j]));
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::BorderSingular("tangent Gram".into()))?;
    let l_inv = chol
        .l()
        .try_inverse()
        .ok_or_else(|| Error::BorderSingular("tangent Gram".into()))?;
    let b = DMatrix::from_fn(n, n, |i, j| 0.5 * (block[i][j] + block[j][i]));
    let m = &l_inv * b * l_inv.transpose();
    Ok(SymmetricEigen::new(m).eigenvalues.iter().copied().collect())
}

/// Morse index of `D²f_ε(u_ε)` against `m₀`, with the tangent block at
/// `θ_ε`. Fails with `DegenerateAtScale` if any computed eigenvalue lies
/// inside the band `|μ| < BAND_FACTOR · ε^α`.
pub fn perturbed_index(
    func: &Functional,
    eps: f64,
    u: &Field,
    theta: &[f64],
    unperturbed: &UnperturbedSpectrum,
) -> Result<MorseReport> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ε = {eps} must be positive"
        )));
    }
    let grid = func.grid();
    if !u.grid().same_as(grid) {
        return Err(Error::GridMismatch("state on a different grid".into()));
    }
    let k = unperturbed.m0 + grid.dim + 3;
    let t = frame_vectors(grid, func.ground_state(), theta)?;
    let d = func.energy_hess_diag(eps, u.values());
    let pairs = low_spectrum(func, &d, &t, k + 2)?;
    let mus: Vec<f64> = pairs.iter().map(|e| e.mu).collect();
    let count = |m: &[f64]| m.iter().filter(|v| **v < 0.0).count();
    let mut first_k = mus.clone();
    first_k.truncate(k);
    let index_u_eps = count(&first_k);
    let index_stable = count(&mus) == index_u_eps;

    let alpha = func.alpha();
    let scale = eps.powf(alpha);
    let band = BAND_FACTOR * scale;
    if let Some(bad) = mus.iter().find(|m| m.abs() < band) {
        return Err(Error::DegenerateAtScale(format!(
            "eigenvalue {bad:.3e} inside the band {band:.3e} at ε = {eps}"
        )));
    }
    let block = tangent_block(func, eps, u, theta)?;
    let scaled: Vec<Vec<f64>> = block
        .iter()
        .map(|r| r.iter().map(|v| v / scale).collect())
        .collect();
    let (gref, _) = func.hess_gamma(theta)?;
    let teigs = normalized_block_eigs(func, theta, &scaled)?;
    let tmin = teigs.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    let delta_hat = (-mus[0]).min(tmin);
    Ok(MorseReport {
        eps,
        theta: theta.to_vec(),
        m0: unperturbed.m0,
        near_kernel_dim: unperturbed.near_kernel_dim,
        index_u_eps,
        index_stable,
        tangent_block: block,
        tangent_block_scaled: scaled,
        gamma_hessian_ref: gref,
        eigenvalues_low: first_k,
        band,
        delta_hat,
    })
}

fn frobenius(a: &[Vec<f64>]) -> f64 {
    a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

/// Convergence of `ε^{-α}` times the tangent block toward `D²Γ(θ)`, with
/// `θ` the shift of the last (smallest-ε) point.
pub fn tangent_block_limit(
    func: &Functional,
    points: &[(f64, Vec<f64>, Field)],
) -> Result<TangentLimit> {
    if points.len() < 4 {
        return Err(Error::InsufficientPoints {
            needed: 4,
            got: points.len(),
        });
    }
    let alpha = func.alpha();
    let theta_ref = &points[points.len() - 1].1;
    let (reference, _) = func.hess_gamma(theta_ref)?;
    let ref_def = classify(&reference);
    let ref_norm = frobenius(&reference);
    let mut eps_values = Vec::with_capacity(points.len());
    let mut scaled_blocks = Vec::with_capacity(points.len());
    let mut relative_errors = Vec::with_capacity(points.len());
    let mut signs_match = Vec::with_capacity(points.len());
    for (eps, theta, u) in points {
        let scale = eps.powf(alpha);
        let s: Vec<Vec<f64>> = tangent_block(func, *eps, u, theta)?
            .into_iter()
            .map(|r| r.into_iter().map(|v| v / scale).collect())
            .collect();
        let diff: Vec<Vec<f64>> = s
            .iter()
            .zip(&reference)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        relative_errors.push(frobenius(&diff) / ref_norm);
        signs_match.push(ref_def != Definiteness::Degenerate && classify(&s) == ref_def);
        eps_values.push(*eps);
        scaled_blocks.push(s);
    }
    let error_rate = if points.len() >= MIN_SAMPLES {
        RateFit::fit(&eps_values, &relative_errors).ok()
    } else {
        None
    };
    Ok(TangentLimit {
        terminal_relative_error: *relative_errors.last().unwrap_or(&f64::NAN),
        eps_values,
        scaled_blocks,
        reference,
        relative_errors,
        signs_match,
        error_rate,
    })
}

/// Checks the frame identities of a translation manifold at `θ` in the
/// discrete `H¹` product.
pub fn check_hypothesis_h(
    grid: &Grid,
    gs: &GroundState,
    theta: &[f64],
    tol: f64,
) -> Result<HypothesisReport> {
    let t = grid::tangent_frame(grid, gs, theta)?;
    let c = grid::curvature_frame(grid, gs, theta)?;
    check_frames(theta, &t, &c, tol)
}

/// As [`check_hypothesis_h`] for explicitly supplied frames.
pub fn check_frames(
    theta: &[f64],
    t: &[Field],
    c: &[Vec<Field>],
    tol: f64,
) -> Result<HypothesisReport> {
    let n = t.len();
    let norms: Vec<f64> = t.iter().map(grid::h1_norm).collect();
    let mut orthogonality = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                orthogonality =
                    orthogonality.max(grid::h1_inner(&t[i], &t[j])?.abs() / (norms[i] * norms[j]));
            }
        }
    }
    let top = norms.iter().fold(0.0f64, |a, v| a.max(*v));
    let mut norm_spread = 0.0f64;
    for a in &norms {
        for b in &norms {
            norm_spread = norm_spread.max((a - b).abs() / top);
        }
    }
    let mut curvature = 0.0f64;
    for row in c {
        for cij in row {
            let cn = grid::h1_norm(cij);
            if cn == 0.0 {
                continue;
            }
            for (tl, nl) in t.iter().zip(&norms) {
                curvature = curvature.max(grid::h1_inner(cij, tl)?.abs() / (cn * nl));
            }
        }
    }
    Ok(HypothesisReport {
        theta: theta.to_vec(),
        orthogonality,
        norm_spread,
        curvature,
        tol,
        passed: orthogonality < tol && norm_spread < tol && curvature < tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groundstate::{closed_form_1d, solve_ground_state};
    use crate::problem::{CoefficientSpec, PerturbationCase, ProblemSpec};
    use crate::reduction::{Reducer, ReductionConfig};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn canonical(s: f64, h: f64) -> Functional {
        let spec = ProblemSpec {
            dim: 1,
            p: 3.0,
            q: 5.0,
            amplitude: 1.0,
            a: CoefficientSpec::gaussian(s / PI.sqrt(), 1.0),
            b: CoefficientSpec::gaussian(1.0, 1.0),
            case: PerturbationCase::L1Case,
        };
        let gs = Arc::new(closed_form_1d(3.0, 1.0));
        Functional::new(spec, Grid::new(1, 20.0, h).unwrap(), gs).unwrap()
    }

    #[test]
    fn ground_state_spectrum() {
        let f = canonical(1.0, 0.02);
        let s = unperturbed_spectrum(&f, 4).unwrap();
        assert_eq!(s.m0, 1);
        assert_eq!(s.near_kernel_dim, 1);
        assert!(s.min_kernel_alignment > 0.99);
        // K⁻¹D z₀ = p z₀ in the continuum, so μ₁ ≈ 1 - p.
        assert!(
            (s.eigenpairs[0].mu + 2.0).abs() < 1e-2,
            "{:?}",
            s.eigenpairs
        );
    }

    #[test]
    fn near_kernel_shrinks_under_refinement() {
        let a = unperturbed_spectrum(&canonical(1.0, 0.02), 3)
            .unwrap()
            .kernel_values[0];
        let b = unperturbed_spectrum(&canonical(1.0, 0.01), 3)
            .unwrap()
            .kernel_values[0];
        assert!(a.abs() / b.abs() >= 3.5, "{a} {b}");
    }

    #[test]
    fn index_follows_the_sign_of_the_mass() {
        for (s, want) in [(1.0, 1), (-1.0, 2)] {
            let f = Arc::new(canonical(s, 0.02));
            let spec = unperturbed_spectrum(&f, 4).unwrap();
            let r = Reducer::new(f.clone(), ReductionConfig::default());
            let t = r.find_theta(0.05, &[0.0], 1.0).unwrap();
            let sol = r.solve_w(0.05, &t).unwrap();
            let rep = perturbed_index(&f, 0.05, &sol.u, &t, &spec).unwrap();
            assert_eq!(rep.index_u_eps, want, "{rep:?}");
            assert!(rep.index_stable);
            assert!(rep.delta_hat > 0.0);
            let b = &rep.tangent_block;
            assert!((b[0][0] * s) > 0.0);
        }
    }

    #[test]
    fn tangent_block_vanishes_without_perturbation() {
        let f = canonical(1.0, 0.02);
        let z = grid::embed_state(f.grid(), f.ground_state(), &[0.0]).unwrap();
        let b = tangent_block(&f, 0.0, &z, &[0.0]).unwrap();
        let t = grid::tangent_frame(f.grid(), f.ground_state(), &[0.0]).unwrap();
        assert!(b[0][0].abs() < 1e-3 * grid::h1_norm(&t[0]).powi(2), "{b:?}");
    }

    #[test]
    fn frame_identities() {
        let gs = solve_ground_state(2, 3.0, 1.0, 1e-10).unwrap();
        let g2 = Grid::default_for(2).unwrap();
        let r = check_hypothesis_h(&g2, &gs, &[0.0, 0.0], 1e-5).unwrap();
        assert!(r.passed, "{r:?}");
        let g1 = Grid::default_for(1).unwrap();
        let gs1 = closed_form_1d(3.0, 1.0);
        let r = check_hypothesis_h(&g1, &gs1, &[3.0], 1e-5).unwrap();
        assert!(r.curvature < 1e-5, "{r:?}");
        let mut t = grid::tangent_frame(&g2, &gs, &[0.0, 0.0]).unwrap();
        let skew = t[1].scaled(0.1);
        t[0].axpy(1.0, &skew).unwrap();
        let c = grid::curvature_frame(&g2, &gs, &[0.0, 0.0]).unwrap();
        assert!(!check_frames(&[0.0, 0.0], &t, &c, 1e-5).unwrap().passed);
    }
}
