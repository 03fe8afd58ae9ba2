//! Finite-dimensional reduction: the correction `w(ε, θ)` off the critical
//! manifold, the reduced functional, its extremizer `θ_ε`, and the branch.
//!
//! The correction solves the bordered system
//!
//! ```text
//! f'_ε(z_θ + W) - Σ a_l K ∂_l z_θ = 0,    (W | ∂_i z_θ) = 0
//! ```
//!
//! by Newton with MINRES inner solves, preconditioned by `blockdiag(K, TᵀKT)`.
//! On a grid `z_θ` is critical for `f₀` only up to an `O(h²)` defect, so the
//! discrete manifold is `z_θ + W₀(θ)` with `W₀` the `ε = 0` solution, and the
//! reported correction is `w = W_ε - W₀`.

use crate::error::{Error, Result};
use crate::fit::{RateFit, MIN_SAMPLES};
use crate::functional::{check_eps_grid, Definiteness, Functional};
use crate::grid::{self, Field, Grid};
use crate::linalg;
use crate::problem::ProblemSpec;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReductionConfig {
    /// Dual-norm residual at which Newton stops.
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Newton steps without a new best residual before giving up.
    pub stall_steps: usize,
    pub krylov_rtol: f64,
    pub krylov_max: usize,
    /// Radius of the search ball around `θ_start`.
    pub delta: f64,
    pub terminal_step: f64,
    /// Largest `f'_ε(u_ε)` dual norm of an accepted branch point.
    pub pde_tol: f64,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        Self {
            newton_tol: 1e-10,
            max_newton: 50,
            stall_steps: 5,
            krylov_rtol: 1e-10,
            krylov_max: 2000,
            delta: 1.0,
            terminal_step: 1e-4,
            pde_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReducedSolution {
    pub eps: f64,
    pub theta: Vec<f64>,
    /// `W_ε - W₀`: the part of the correction caused by the perturbation.
    pub w: Field,
    /// `W_ε`, so that `u = z_θ + W_ε`.
    pub correction: Field,
    pub u: Field,
    /// Coefficients `a_l` of `f'_ε(u)` along `K ∂_l z_θ`.
    pub multipliers: Vec<f64>,
    pub newton_iters: usize,
    /// Dual norm of `f'_ε(u) - Σ a_l K ∂_l z_θ`.
    pub residual: f64,
    /// `max_i |(w|∂_i z)| / (‖w‖‖∂_i z‖)`.
    pub orthogonality: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum PointStatus {
    Accepted,
    Failed { code: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub eps: f64,
    pub lambda: f64,
    pub theta: Vec<f64>,
    pub u_norm_h1: f64,
    pub w_norm_h1: f64,
    /// `‖u_ε - z_{θ_ε}‖`.
    pub dist_to_manifold: f64,
    pub psi_l2: f64,
    pub psi_h1: f64,
    pub psi_linf: f64,
    pub energy: f64,
    /// `f₀` on the discrete manifold.
    pub energy0: f64,
    pub gamma_at_theta: f64,
    /// `|f_ε(u_ε) - energy0 - ε^α Γ(θ_ε)|`.
    pub energy_remainder: f64,
    pub pde_residual: f64,
    pub multipliers: Vec<f64>,
    pub newton_iters: usize,
    pub orthogonality: f64,
    pub morse_index: Option<usize>,
    /// `|θ_ε - θ_prev|` against the previous accepted point.
    pub gap_theta: Option<f64>,
    /// `‖u_ε - u_prev‖` against the previous accepted point.
    pub gap_u: Option<f64>,
    pub status: PointStatus,
}

impl BranchPoint {
    pub fn accepted(&self) -> bool {
        self.status == PointStatus::Accepted
    }

    fn failed(eps: f64, err: &Error) -> Self {
        let nan = f64::NAN;
        Self {
            eps,
            lambda: -eps * eps,
            theta: Vec::new(),
            u_norm_h1: nan,
            w_norm_h1: nan,
            dist_to_manifold: nan,
            psi_l2: nan,
            psi_h1: nan,
            psi_linf: nan,
            energy: nan,
            energy0: nan,
            gamma_at_theta: nan,
            energy_remainder: nan,
            pde_residual: nan,
            multipliers: Vec::new(),
            newton_iters: 0,
            orthogonality: nan,
            morse_index: None,
            gap_theta: None,
            gap_u: None,
            status: PointStatus::Failed {
                code: err.code().into(),
                message: err.to_string(),
            },
        }
    }
}

/// A swept branch with the solved states of its accepted points.
#[derive(Debug, Clone)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    pub states: Vec<Option<Field>>,
}

/// Norms of `ψ(x) = ε^{2/(p-1)} u(εx)` from the exact scaling identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalNorms {
    pub lambda: f64,
    pub psi_l2: f64,
    pub psi_grad_l2: f64,
    pub psi_h1: f64,
    pub psi_linf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticReport {
    pub alpha: f64,
    pub w: RateFit,
    pub energy_remainder: RateFit,
    pub psi_l2: RateFit,
    pub psi_h1: RateFit,
    pub psi_linf: RateFit,
    /// `α/2 + 0.1`.
    pub w_gate: f64,
    /// `α + 0.1`.
    pub remainder_gate: f64,
    /// `(4/(p-1) - N)/2`.
    pub psi_l2_predicted: f64,
    /// `2/(p-1)`.
    pub psi_linf_predicted: f64,
}

/// Tangent frame at `θ` with its stiffness images and Gram matrix.
struct Frame {
    z: Vec<f64>,
    t: Vec<Vec<f64>>,
    kt: Vec<Vec<f64>>,
    gram_inv: DMatrix<f64>,
    tnorm: Vec<f64>,
}

struct Core {
    w: Vec<f64>,
    a: Vec<f64>,
    iters: usize,
}

pub struct Reducer {
    func: Arc<Functional>,
    config: ReductionConfig,
    base: Mutex<HashMap<Vec<u64>, Arc<Vec<f64>>>>,
}

impl std::fmt::Debug for Reducer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Reducer")
            .field("config", &self.config)
            .finish()
    }
}

fn theta_key(theta: &[f64]) -> Vec<u64> {
    theta.iter().map(|t| t.to_bits()).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

impl Reducer {
    pub fn new(func: Arc<Functional>, config: ReductionConfig) -> Self {
        Self {
            func,
            config,
            base: Mutex::new(HashMap::new()),
        }
    }

    pub fn functional(&self) -> &Functional {
        &self.func
    }

    pub fn config(&self) -> &ReductionConfig {
        &self.config
    }

    fn grid(&self) -> &Grid {
        self.func.grid()
    }

    fn frame(&self, theta: &[f64]) -> Result<Frame> {
        let grid = self.grid();
        let limit = 0.25 * grid.half_width;
        let norm = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
        if theta.len() != grid.dim {
            return Err(Error::InvalidArgument(
                "shift has the wrong dimension".into(),
            ));
        }
        if !norm.is_finite() || norm > limit {
            return Err(Error::ThetaOutOfRange { norm, limit });
        }
        let gs = self.func.ground_state();
        let z = grid::embed_state(grid, gs, theta)?.into_values();
        let t: Vec<Vec<f64>> = grid::tangent_frame(grid, gs, theta)?
            .into_iter()
            .map(Field::into_values)
            .collect();
        let kt: Vec<Vec<f64>> = t.iter().map(|ti| self.func.stiffness(ti)).collect();
        let d = t.len();
        let gram = DMatrix::from_fn(d, d, |i, j| linalg::dot(&t[i], &kt[j]));
        let gram = (&gram + gram.transpose()) * 0.5;
        let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
        let big = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let small = eig.iter().fold(f64::INFINITY, |a, v| a.min(*v));
        if !(big > 0.0) || small <= 1e-10 * big {
            return Err(Error::BorderSingular(format!(
                "Gram eigenvalues {:?}",
                eig.as_slice()
            )));
        }
        let gram_inv = gram
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::BorderSingular("Gram matrix not invertible".into()))?;
        let tnorm = (0..d).map(|i| gram[(i, i)].sqrt()).collect();
        Ok(Frame {
            z,
            t,
            kt,
            gram_inv,
            tnorm,
        })
    }

    fn apply_gram_inv(frame: &Frame, v: &[f64]) -> Vec<f64> {
        (frame.gram_inv.clone() * DVector::from_column_slice(v))
            .as_slice()
            .to_vec()
    }

    /// Removes the `H¹` component of `w` along the tangent frame.
    fn project(frame: &Frame, w: &mut [f64]) {
        let c: Vec<f64> = frame.kt.iter().map(|k| linalg::dot(k, w)).collect();
        let coef = Self::apply_gram_inv(frame, &c);
        for (ti, ci) in frame.t.iter().zip(&coef) {
            linalg::axpy(w, -ci, ti);
        }
    }

    fn multipliers(frame: &Frame, c: &[f64]) -> Vec<f64> {
        let tc: Vec<f64> = frame.t.iter().map(|t| linalg::dot(t, c)).collect();
        Self::apply_gram_inv(frame, &tc)
    }

    fn u_of(frame: &Frame, w: &[f64]) -> Vec<f64> {
        frame.z.iter().zip(w).map(|(a, b)| a + b).collect()
    }

    /// `f'_ε(u) - KTa` with `a` the Galerkin multipliers, and `a`.
    fn bordered_residual(&self, eps: f64, frame: &Frame, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let u = Self::u_of(frame, w);
        let mut c = self.func.energy_covector(eps, &u);
        let a = Self::multipliers(frame, &c);
        for (k, al) in frame.kt.iter().zip(&a) {
            linalg::axpy(&mut c, -al, k);
        }
        (c, a)
    }

    fn fast_dual(&self, c: &[f64]) -> f64 {
        linalg::dot(c, &self.func.riesz_fast(c)).max(0.0).sqrt()
    }

    fn newton(&self, eps: f64, frame: &Frame, init: &[f64]) -> Result<Core> {
        let cfg = &self.config;
        let n = frame.z.len();
        let d = frame.t.len();
        let mut w = init.to_vec();
        Self::project(frame, &mut w);
        let (mut r, mut a) = self.bordered_residual(eps, frame, &w);
        let mut res = self.fast_dual(&r);
        let mut best = res;
        let mut since_best = 0;
        let mut iters = 0;
        while res > cfg.newton_tol {
            if iters >= cfg.max_newton {
                return Err(Error::NewtonDivergence(format!(
                    "{iters} steps at ε = {eps}, residual {res:.3e}"
                )));
            }
            iters += 1;
            let u = Self::u_of(frame, &w);
            let dh = self.func.energy_hess_diag(eps, &u);
            let apply = |x: &[f64]| {
                let (xw, xa) = x.split_at(n);
                let mut top = self.func.stiffness(xw);
                for i in 0..n {
                    top[i] -= dh[i] * xw[i];
                }
                for (k, al) in frame.kt.iter().zip(xa) {
                    linalg::axpy(&mut top, -al, k);
                }
                top.extend(frame.kt.iter().map(|k| -linalg::dot(k, xw)));
                top
            };
            let precond = |x: &[f64]| {
                let (xw, xa) = x.split_at(n);
                let mut out = self.func.riesz_fast(xw);
                out.extend(Self::apply_gram_inv(frame, xa));
                out
            };
            let mut rhs: Vec<f64> = r.iter().map(|v| -v).collect();
            rhs.extend(std::iter::repeat(0.0).take(d));
            let step = linalg::minres(apply, precond, &rhs, cfg.krylov_rtol, cfg.krylov_max)?;
            let dw = &step.x[..n];

            // Backtrack on the dual residual.
            let mut lam = 1.0;
            let mut accepted = None;
            for _ in 0..8 {
                let mut trial = w.clone();
                linalg::axpy(&mut trial, lam, dw);
                Self::project(frame, &mut trial);
                let (rt, at) = self.bordered_residual(eps, frame, &trial);
                let rest = self.fast_dual(&rt);
                if rest.is_finite() && rest < res {
                    accepted = Some((trial, rt, at, rest));
                    break;
                }
                lam *= 0.5;
            }
            match accepted {
                Some((tw, tr, ta, tres)) => {
                    w = tw;
                    r = tr;
                    a = ta;
                    res = tres;
                }
                None => since_best = cfg.stall_steps,
            }
            if res < best {
                best = res;
                since_best = 0;
            } else {
                since_best += 1;
            }
            if since_best >= cfg.stall_steps && res > cfg.newton_tol {
                return Err(Error::NewtonDivergence(format!(
                    "no residual decrease at ε = {eps}, residual {res:.3e}"
                )));
            }
        }
        Ok(Core { w, a, iters })
    }

    /// `W₀(θ)`, the correction that makes `z_θ` critical for the discrete `f₀`.
    fn base_correction(&self, theta: &[f64], frame: &Frame) -> Result<Arc<Vec<f64>>> {
        let key = theta_key(theta);
        if let Some(b) = self
            .base
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(&key)
        {
            return Ok(b.clone());
        }
        let core = self.newton(0.0, frame, &vec![0.0; frame.z.len()])?;
        let b = Arc::new(core.w);
        self.base
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key, b.clone());
        Ok(b)
    }

    fn check_eps(eps: f64) -> Result<()> {
        if eps.is_finite() && eps >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "ε = {eps} must be non-negative"
            )))
        }
    }

    /// Solves for the full correction at `(ε, θ)` from `init` (or `W₀`).
    fn solve_core(&self, eps: f64, theta: &[f64], init: Option<&[f64]>) -> Result<(Frame, Core)> {
        Self::check_eps(eps)?;
        let frame = self.frame(theta)?;
        let core = match init {
            Some(w) => self.newton(eps, &frame, w)?,
            None => {
                let base = self.base_correction(theta, &frame)?;
                if eps == 0.0 {
                    let (_, a) = self.bordered_residual(0.0, &frame, &base);
                    Core {
                        w: base.to_vec(),
                        a,
                        iters: 0,
                    }
                } else {
                    self.newton(eps, &frame, &base)?
                }
            }
        };
        Ok((frame, core))
    }

    fn finish(&self, eps: f64, theta: &[f64], frame: Frame, core: Core) -> Result<ReducedSolution> {
        let grid = *self.grid();
        let base = self.base_correction(theta, &frame)?;
        let w: Vec<f64> = core.w.iter().zip(base.iter()).map(|(a, b)| a - b).collect();
        let u = Self::u_of(&frame, &core.w);
        let (r, _) = self.bordered_residual(eps, &frame, &core.w);
        let residual = self.func.dual_norm(&r)?;
        let wn = self.func.h1(&w, &w).max(0.0).sqrt();
        let orthogonality = frame
            .kt
            .iter()
            .zip(&frame.tnorm)
            .map(|(k, tn)| {
                if wn == 0.0 {
                    0.0
                } else {
                    linalg::dot(k, &w).abs() / (wn * tn)
                }
            })
            .fold(0.0, f64::max);
        let energy = self.func.energy_value(eps, &u);
        Ok(ReducedSolution {
            eps,
            theta: theta.to_vec(),
            w: Field::from_vec(grid, w),
            correction: Field::from_vec(grid, core.w),
            u: Field::from_vec(grid, u),
            multipliers: core.a,
            newton_iters: core.iters,
            residual,
            orthogonality,
            energy,
        })
    }

    /// The correction at `(ε, θ)`; `|θ| ≤ R/4`.
    pub fn solve_w(&self, eps: f64, theta: &[f64]) -> Result<ReducedSolution> {
        let (frame, core) = self.solve_core(eps, theta, None)?;
        self.finish(eps, theta, frame, core)
    }

    /// As [`Reducer::solve_w`], continuing from a previous full correction.
    pub fn solve_w_from(&self, eps: f64, theta: &[f64], init: &Field) -> Result<ReducedSolution> {
        if !init.grid().same_as(self.grid()) {
            return Err(Error::GridMismatch("warm start on a different grid".into()));
        }
        let (frame, core) = self.solve_core(eps, theta, Some(init.values()))?;
        self.finish(eps, theta, frame, core)
    }

    /// `f_ε(z_θ + W_ε(θ))`.
    pub fn reduced_functional(&self, eps: f64, theta: &[f64]) -> Result<f64> {
        let (frame, core) = self.solve_core(eps, theta, None)?;
        Ok(self.func.energy_value(eps, &Self::u_of(&frame, &core.w)))
    }

    /// Central-difference `θ`-gradient of the reduced functional.
    pub fn reduced_gradient(&self, eps: f64, theta: &[f64], step: f64) -> Result<Vec<f64>> {
        let (_, core) = self.solve_core(eps, theta, None)?;
        let mut g = Vec::with_capacity(theta.len());
        for i in 0..theta.len() {
            let at = |s: f64| -> Result<f64> {
                let mut t = theta.to_vec();
                t[i] += s;
                let (fr, c) = self.solve_core(eps, &t, Some(&core.w))?;
                Ok(self.func.energy_value(eps, &Self::u_of(&fr, &c.w)))
            };
            g.push((at(step)? - at(-step)?) / (2.0 * step));
        }
        Ok(g)
    }

    fn orientation(&self, theta_start: &[f64]) -> Result<f64> {
        let (_, def) = self.func.hess_gamma(theta_start)?;
        match def {
            Definiteness::PosDef => Ok(1.0),
            Definiteness::NegDef => Ok(-1.0),
            other => Err(Error::DegenerateHessian(format!(
                "D²Γ is {other:?} at {theta_start:?}"
            ))),
        }
    }

    /// Extremizer of the reduced functional in `‖θ - θ_start‖ ≤ δ`: a minimum
    /// where `D²Γ(θ_start)` is positive, a maximum where it is negative.
    pub fn find_theta(&self, eps: f64, theta_start: &[f64], delta: f64) -> Result<Vec<f64>> {
        Ok(self.search(eps, theta_start, theta_start, delta, None)?.0)
    }

    /// Compass search from `init`, then Newton on the multipliers.
    fn search(
        &self,
        eps: f64,
        center: &[f64],
        init: &[f64],
        delta: f64,
        warm: Option<&[f64]>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ε = {eps}: every shift is stationary without a perturbation"
            )));
        }
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "search radius {delta} must be positive"
            )));
        }
        let sign = self.orientation(center)?;
        let n = center.len();
        let mut theta = init.to_vec();
        let (frame, core) = self.solve_core(eps, &theta, warm)?;
        let mut best = sign * self.func.energy_value(eps, &Self::u_of(&frame, &core.w));
        let mut w = core.w;
        let mut step = delta / 4.0;
        while step >= self.config.terminal_step {
            let mut moved = false;
            'poll: for i in 0..n {
                for s in [1.0, -1.0] {
                    let mut cand = theta.clone();
                    cand[i] += s * step;
                    if dist(&cand, center) > delta {
                        continue;
                    }
                    let (fr, c) = self.solve_core(eps, &cand, Some(&w))?;
                    let v = sign * self.func.energy_value(eps, &Self::u_of(&fr, &c.w));
                    if v < best {
                        best = v;
                        theta = cand;
                        w = c.w;
                        moved = true;
                        break 'poll;
                    }
                }
            }
            if !moved {
                step *= 0.5;
            }
        }
        if dist(&theta, center) > delta - 1e-3 {
            return Err(Error::BoundaryExtremum { theta });
        }
        self.polish(eps, center, delta, theta, w)
    }

    /// Drives the multipliers to zero, which makes `z_θ + W` a true critical
    /// point; the Jacobian of `θ ↦ a(θ)` is taken by central differences.
    fn polish(
        &self,
        eps: f64,
        center: &[f64],
        delta: f64,
        mut theta: Vec<f64>,
        mut w: Vec<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = theta.len();
        let h = 1e-3;
        let (_, core) = self.solve_core(eps, &theta, Some(&w))?;
        let mut a = core.a;
        w = core.w;
        for _ in 0..6 {
            let an = linalg::norm(&a);
            if an < 1e-14 {
                break;
            }
            let mut jac = DMatrix::zeros(n, n);
            for j in 0..n {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[j] += h;
                tm[j] -= h;
                let (_, cp) = self.solve_core(eps, &tp, Some(&w))?;
                let (_, cm) = self.solve_core(eps, &tm, Some(&w))?;
                for i in 0..n {
                    jac[(i, j)] = (cp.a[i] - cm.a[i]) / (2.0 * h);
                }
            }
            let Some(step) = jac.lu().solve(&DVector::from_column_slice(&a)) else {
                break;
            };
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t - s).collect();
            if dist(&cand, &theta) > 10.0 * self.config.terminal_step
                || dist(&cand, center) > delta - 1e-3
            {
                break;
            }
            let (_, c) = self.solve_core(eps, &cand, Some(&w))?;
            if linalg::norm(&c.a) >= an {
                break;
            }
            theta = cand;
            a = c.a;
            w = c.w;
        }
        Ok((theta, w))
    }

    /// `ψ` norms and `λ` from `u_ε` by the scaling identities.
    pub fn rescale_to_physical(&self, eps: f64, u: &Field) -> PhysicalNorms {
        rescale_to_physical(self.func.spec(), eps, u)
    }

    /// Sweeps `eps_grid` (strictly decreasing) with warm starts. Points whose
    /// solve fails are marked and the sweep continues.
    pub fn solve_branch(
        &self,
        eps_grid: &[f64],
        theta_start: &[f64],
        delta: f64,
    ) -> Result<Branch> {
        check_eps_grid(eps_grid)?;
        let (frame0, core0) = self.solve_core(0.0, theta_start, None)?;
        let energy0 = self.func.energy_value(0.0, &Self::u_of(&frame0, &core0.w));
        let alpha = self.func.alpha();
        let mut points = Vec::with_capacity(eps_grid.len());
        let mut states = Vec::with_capacity(eps_grid.len());
        let mut prev: Option<(Vec<f64>, Field, Field)> = None;
        for &eps in eps_grid {
            let attempt = (|| -> Result<(BranchPoint, Field, Field)> {
                let (init, warm) = match &prev {
                    Some((t, _, c)) => (t.clone(), Some(c.values().to_vec())),
                    None => (theta_start.to_vec(), None),
                };
                let (theta, w) = self.search(eps, theta_start, &init, delta, warm.as_deref())?;
                let sol = self.solve_w_from(eps, &theta, &Field::from_vec(*self.grid(), w))?;
                let full = self.func.energy_covector(eps, sol.u.values());
                let pde_residual = self.func.dual_norm(&full)?;
                if !(pde_residual < self.config.pde_tol) {
                    return Err(Error::NewtonDivergence(format!(
                        "pde residual {pde_residual:.3e} above {:.1e}",
                        self.config.pde_tol
                    )));
                }
                let phys = self.rescale_to_physical(eps, &sol.u);
                let gamma_at_theta = self.func.gamma(&theta)?;
                let (gap_theta, gap_u) = match &prev {
                    Some((t, u, _)) => {
                        let du = sol.u.sub(u)?;
                        (Some(dist(&theta, t)), Some(grid::h1_norm(&du)))
                    }
                    None => (None, None),
                };
                let bp = BranchPoint {
                    eps,
                    lambda: phys.lambda,
                    u_norm_h1: grid::h1_norm(&sol.u),
                    w_norm_h1: grid::h1_norm(&sol.w),
                    dist_to_manifold: grid::h1_norm(&sol.correction),
                    psi_l2: phys.psi_l2,
                    psi_h1: phys.psi_h1,
                    psi_linf: phys.psi_linf,
                    energy: sol.energy,
                    energy0,
                    gamma_at_theta,
                    energy_remainder: (sol.energy - energy0 - eps.powf(alpha) * gamma_at_theta)
                        .abs(),
                    pde_residual,
                    multipliers: sol.multipliers.clone(),
                    newton_iters: sol.newton_iters,
                    orthogonality: sol.orthogonality,
                    morse_index: None,
                    gap_theta,
                    gap_u,
                    theta,
                    status: PointStatus::Accepted,
                };
                Ok((bp, sol.u, sol.correction))
            })();
            match attempt {
                Ok((bp, u, c)) => {
                    prev = Some((bp.theta.clone(), u.clone(), c));
                    points.push(bp);
                    states.push(Some(u));
                }
                Err(e) => {
                    points.push(BranchPoint::failed(eps, &e));
                    states.push(None);
                }
            }
        }
        Ok(Branch { points, states })
    }

    /// Max nodal mismatch between the strong residual of the physical problem
    /// at `ψ` on the scaled grid and `ε^{2/(p-1)+2}` times the rescaled
    /// residual at `u`, relative to the largest term of the physical
    /// equation. At a solved point the residual itself is tiny, so dividing
    /// by it would measure cancellation rather than the identity.
    pub fn scaling_consistency(&self, eps: f64, u: &Field) -> Result<f64> {
        let spec = *self.func.spec();
        let grid = *self.grid();
        if !u.grid().same_as(&grid) {
            return Err(Error::GridMismatch("state on a different grid".into()));
        }
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ε = {eps} must be positive"
            )));
        }
        let (p, q) = (spec.p, spec.q);
        let e_psi = eps.powf(2.0 / (p - 1.0));
        let odd = |v: f64, e: f64| v.abs().powf(e - 1.0) * v;

        let mut lap = vec![0.0; grid.len()];
        grid::apply_stencil(&grid, u.values(), &mut lap);
        let bs = eps.powf(spec.b_exponent());
        let r_u: Vec<f64> = (0..grid.len())
            .map(|i| {
                let x = grid.point(i);
                let y: Vec<f64> = x[..grid.dim].iter().map(|c| c / eps).collect();
                let v = u.values()[i];
                let a = spec.amplitude + spec.a.eval(&y);
                lap[i] - a * odd(v, p) - bs * spec.b.eval(&y) * odd(v, q)
            })
            .collect();

        let pg = Grid {
            half_width: grid.half_width / eps,
            spacing: grid.spacing / eps,
            ..grid
        };
        let psi: Vec<f64> = u.values().iter().map(|v| e_psi * v).collect();
        let mut lp = vec![0.0; pg.len()];
        grid::apply_stencil(&pg, &psi, &mut lp);
        let lambda = -eps * eps;
        let mut den = 0.0f64;
        let r_psi: Vec<f64> = (0..pg.len())
            .map(|i| {
                let y = pg.point(i);
                let v = psi[i];
                let na = (spec.amplitude + spec.a.eval(&y[..pg.dim])) * odd(v, p);
                let nb = spec.b.eval(&y[..pg.dim]) * odd(v, q);
                den = den.max(lp[i].abs() + v.abs() * (1.0 + lambda.abs()) + na.abs() + nb.abs());
                // The stencil applies -Δ + 1; the physical operator is -Δ - λ.
                lp[i] - v - lambda * v - na - nb
            })
            .collect();
        let scale = e_psi * eps * eps;
        let mut num = 0.0f64;
        for (a, b) in r_psi.iter().zip(&r_u) {
            num = num.max((a - scale * b).abs());
        }
        Ok(if den == 0.0 { 0.0 } else { num / den })
    }
}

/// `ψ` norms from `u` by the exact identities
/// `‖ψ‖²_{L²} = ε^{4/(p-1)-N}‖u‖²`, `‖∇ψ‖² = ε^{4/(p-1)+2-N}‖∇u‖²`,
/// `‖ψ‖_∞ = ε^{2/(p-1)}‖u‖_∞`.
pub fn rescale_to_physical(spec: &ProblemSpec, eps: f64, u: &Field) -> PhysicalNorms {
    let grid = u.grid();
    let nf = grid.dim as f64;
    let k = 4.0 / (spec.p - 1.0);
    let l2 = grid.cell_volume() * u.values().iter().map(|v| v * v).sum::<f64>();
    let grad = (grid::h1_norm(u).powi(2) - l2).max(0.0);
    let psi_l2_sq = eps.powf(k - nf) * l2;
    let psi_grad_sq = eps.powf(k + 2.0 - nf) * grad;
    PhysicalNorms {
        lambda: -eps * eps,
        psi_l2: psi_l2_sq.sqrt(),
        psi_grad_l2: psi_grad_sq.sqrt(),
        psi_h1: (psi_l2_sq + psi_grad_sq).sqrt(),
        psi_linf: eps.powf(2.0 / (spec.p - 1.0)) * u.max_abs(),
    }
}

/// Rate fits over the accepted points of a branch.
pub fn asymptotic_report(branch: &[BranchPoint], spec: &ProblemSpec) -> Result<AsymptoticReport> {
    let ok: Vec<&BranchPoint> = branch.iter().filter(|b| b.accepted()).collect();
    if ok.len() < MIN_SAMPLES {
        return Err(Error::InsufficientPoints {
            needed: MIN_SAMPLES,
            got: ok.len(),
        });
    }
    let eps: Vec<f64> = ok.iter().map(|b| b.eps).collect();
    let col = |f: fn(&BranchPoint) -> f64| -> Vec<f64> { ok.iter().map(|b| f(b)).collect() };
    let alpha = spec.alpha();
    let nf = spec.dim as f64;
    Ok(AsymptoticReport {
        alpha,
        w: RateFit::fit(&eps, &col(|b| b.w_norm_h1))?,
        energy_remainder: RateFit::fit(&eps, &col(|b| b.energy_remainder))?,
        psi_l2: RateFit::fit(&eps, &col(|b| b.psi_l2))?,
        psi_h1: RateFit::fit(&eps, &col(|b| b.psi_h1))?,
        psi_linf: RateFit::fit(&eps, &col(|b| b.psi_linf))?,
        w_gate: alpha / 2.0 + 0.1,
        remainder_gate: alpha + 0.1,
        psi_l2_predicted: (4.0 / (spec.p - 1.0) - nf) / 2.0,
        psi_linf_predicted: 2.0 / (spec.p - 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::geometric_grid;
    use crate::groundstate::closed_form_1d;
    use crate::problem::{CoefficientSpec, PerturbationCase};
    use std::f64::consts::PI;

    fn canonical(s: f64) -> Reducer {
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
        let f = Functional::new(spec, Grid::default_for(1).unwrap(), gs).unwrap();
        Reducer::new(Arc::new(f), ReductionConfig::default())
    }

    #[test]
    fn unperturbed_correction_vanishes() {
        let r = canonical(1.0);
        let s = r.solve_w(0.0, &[0.7]).unwrap();
        assert_eq!(s.w.max_abs(), 0.0);
        assert!(s.multipliers.iter().all(|a| a.abs() < 1e-4));
        assert!(grid::h1_norm(&s.correction) < 1e-3);
        let e0 = r.reduced_functional(0.0, &[0.0]).unwrap();
        let e1 = r.reduced_functional(0.0, &[0.7]).unwrap();
        assert!((e0 - 4.0 / 3.0).abs() < 1e-3);
        assert!((e0 - e1).abs() < 1e-6, "{e0} {e1}");
    }

    #[test]
    fn correction_is_orthogonal_and_solves_the_bordered_system() {
        let r = canonical(1.0);
        let s = r.solve_w(0.1, &[0.3]).unwrap();
        assert!(s.residual < 1e-9, "{}", s.residual);
        assert!(s.orthogonality < 1e-8, "{}", s.orthogonality);
        assert!(s.multipliers[0].abs() > 1e-6);
    }

    #[test]
    fn rejects_far_shifts_and_zero_eps_search() {
        let r = canonical(1.0);
        assert!(matches!(
            r.solve_w(0.1, &[6.0]),
            Err(Error::ThetaOutOfRange { .. })
        ));
        assert!(matches!(
            r.find_theta(0.0, &[0.0], 1.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn extremizer_sits_at_the_origin() {
        let r = canonical(1.0);
        let t = r.find_theta(0.05, &[0.3], 1.0).unwrap();
        assert!(t[0].abs() < 0.05, "{t:?}");
        let t = canonical(-1.0).find_theta(0.05, &[0.2], 1.0).unwrap();
        assert!(t[0].abs() < 0.05, "{t:?}");
    }

    #[test]
    fn canonical_branch() {
        let r = canonical(1.0);
        let eps = geometric_grid(0.4, 7);
        let br = r.solve_branch(&eps, &[0.0], 1.0).unwrap();
        assert!(br.points.iter().all(|b| b.accepted()), "{:?}", br.points);
        for b in &br.points {
            assert!(b.pde_residual < 1e-6);
            assert!(b.orthogonality < 1e-8);
            assert!(b.gap_u.map_or(true, |g| g < 0.2), "{:?}", b.gap_u);
        }
        let last = br.points.last().unwrap();
        assert!(last.theta[0].abs() < 0.05);
        let ratio = (last.energy - 4.0 / 3.0) / (-last.eps);
        assert!((ratio - 1.0).abs() < 0.1, "{ratio}");
        let rep = asymptotic_report(&br.points, r.functional().spec()).unwrap();
        assert!(rep.w.fitted_slope > rep.w_gate, "{:?}", rep.w);
        assert!(
            rep.energy_remainder.fitted_slope > rep.remainder_gate,
            "{:?}",
            rep.energy_remainder
        );
        assert!((rep.psi_l2.fitted_slope - rep.psi_l2_predicted).abs() < 0.05);
        assert!((rep.psi_linf.fitted_slope - rep.psi_linf_predicted).abs() < 0.05);
        let u = br.states.last().unwrap().as_ref().unwrap();
        assert!(r.scaling_consistency(last.eps, u).unwrap() < 1e-10);
        let g = r.reduced_gradient(last.eps, &last.theta, 1e-3).unwrap();
        assert!(g[0].abs() < 1e-4 * last.eps, "{g:?}");
    }

    #[test]
    fn branch_is_deterministic() {
        let r = canonical(1.0);
        let eps = geometric_grid(0.2, 2);
        let a = r.solve_branch(&eps, &[0.1], 1.0).unwrap();
        let b = canonical(1.0).solve_branch(&eps, &[0.1], 1.0).unwrap();
        for (x, y) in a.points.iter().zip(&b.points) {
            assert_eq!(theta_key(&x.theta), theta_key(&y.theta));
        }
    }

    #[test]
    fn physical_norms_follow_the_scaling_identities() {
        let r = canonical(1.0);
        let u = grid::embed_state(r.grid(), r.functional().ground_state(), &[0.0]).unwrap();
        let a = r.rescale_to_physical(0.1, &u);
        let b = r.rescale_to_physical(0.05, &u);
        // p = 3, N = 1: ‖ψ‖² ∝ ε, ‖ψ‖_∞ ∝ ε.
        assert!(((a.psi_l2 / b.psi_l2).powi(2) - 2.0).abs() < 1e-12);
        assert!((a.psi_linf / b.psi_linf - 2.0).abs() < 1e-12);
        assert!((a.lambda + 0.01).abs() < 1e-15);
    }

    #[test]
    fn report_needs_five_points() {
        let r = canonical(1.0);
        let br = r
            .solve_branch(&geometric_grid(0.2, 2), &[0.0], 1.0)
            .unwrap();
        assert!(matches!(
            asymptotic_report(&br.points, r.functional().spec()),
            Err(Error::InsufficientPoints { needed: 5, got: 2 })
        ));
    }
}
