//! The rescaled energy `f_ε(u) = ½‖u‖² - F(u) + G(ε, u)` on a grid, its
//! derivatives, the reduced functional `Γ`, and the `ε → 0` rate probes.
//!
//! Discretization: `‖u‖²` is the stencil form `uᵀKu` with `K = h^N(-Δ_h + 1)`;
//! `F` uses the nodal weight `h^N`; the coefficients of `G` enter through
//! their projections onto hat functions, `w_i = ∫ c(x/ε) φ_i dx`, which stay
//! accurate when `c(x/ε)` varies below the mesh scale. Gradients and Hessian
//! actions are Euclidean covectors mapped through `K⁻¹`.

use crate::error::{Error, Result};
use crate::fit::RateFit;
use crate::grid::{self, Field, Grid, SineSolver};
use crate::groundstate::GroundState;
use crate::linalg;
use crate::problem::{PerturbationCase, ProblemSpec};
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Definiteness {
    PosDef,
    NegDef,
    Indefinite,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaProfile {
    pub case_tag: PerturbationCase,
    pub alpha: f64,
    pub theta_samples: Vec<(Vec<f64>, f64)>,
    pub extremum_theta: Vec<f64>,
    pub hessian_at_extremum: Vec<Vec<f64>>,
    pub definiteness: Definiteness,
}

/// Tabulated `G(ε, z_θ)/ε^α` against `Γ(θ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaLimitProbe {
    pub theta: Vec<f64>,
    pub alpha: f64,
    pub reference: f64,
    pub scaled_values: Vec<f64>,
    pub relative_errors: Vec<f64>,
    pub terminal_relative_error: f64,
    /// Error strictly decreasing over the last three samples.
    pub decreasing_tail: bool,
    /// Slope of `|G(ε, z_θ)|`, which should approach `α`.
    pub rate: RateFit,
}

/// Prediction for the decay of `‖G'(ε, z_θ)‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PredictedRate {
    Exactly(f64),
    Above(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GPrimeProbe {
    pub theta: Vec<f64>,
    pub rate: RateFit,
    pub predicted: PredictedRate,
    /// Slope every admissible case must exceed: `α/2`.
    pub gate: f64,
}

/// Hat-projected coefficients of `G` at one `ε`.
#[derive(Debug, Clone)]
pub struct PerturbationWeights {
    pub eps: f64,
    /// `∫ (a(x/ε) - A) φ_i`.
    pub a: Vec<f64>,
    /// `∫ b(x/ε) φ_i`.
    pub b: Vec<f64>,
    /// `ε^{2(q-p)/(p-1)}`.
    pub b_scale: f64,
}

pub struct Functional {
    spec: ProblemSpec,
    grid: Grid,
    gs: Arc<GroundState>,
    solver: Arc<SineSolver>,
    weights: Mutex<HashMap<u64, Arc<PerturbationWeights>>>,
}

impl std::fmt::Debug for Functional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Functional")
            .field("spec", &self.spec)
            .field("grid", &self.grid)
            .finish()
    }
}

fn odd_power(u: f64, e: f64) -> f64 {
    u.abs().powf(e - 1.0) * u
}

impl Functional {
    pub fn new(spec: ProblemSpec, grid: Grid, gs: Arc<GroundState>) -> Result<Self> {
        if spec.dim != grid.dim || gs.dim != spec.dim {
            return Err(Error::GridMismatch(format!(
                "problem N={}, grid N={}, ground state N={}",
                spec.dim, grid.dim, gs.dim
            )));
        }
        Ok(Self {
            spec,
            grid,
            gs,
            solver: SineSolver::shared(&grid),
            weights: Mutex::new(HashMap::new()),
        })
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn ground_state(&self) -> &GroundState {
        &self.gs
    }

    pub fn alpha(&self) -> f64 {
        self.spec.alpha()
    }

    fn mass(&self) -> f64 {
        self.grid.cell_volume()
    }

    /// Projected coefficients at `ε`, cached per `ε`.
    pub fn weights(&self, eps: f64) -> Arc<PerturbationWeights> {
        let key = eps.to_bits();
        if let Some(w) = self
            .weights
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(&key)
        {
            return w.clone();
        }
        let w = Arc::new(self.compute_weights(eps));
        self.weights
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key, w.clone());
        w
    }

    fn compute_weights(&self, eps: f64) -> PerturbationWeights {
        let n = self.grid.len();
        if eps == 0.0 {
            return PerturbationWeights {
                eps,
                a: vec![0.0; n],
                b: vec![0.0; n],
                b_scale: 0.0,
            };
        }
        let project = |c: crate::problem::CoefficientSpec| {
            if c.amplitude == 0.0 {
                return vec![0.0; n];
            }
            let inv = 1.0 / (eps * eps);
            let f = move |r2: f64| c.eval_r2(r2 * inv);
            grid::hat_projection(
                &self.grid,
                &f,
                eps * c.width,
                c.support_radius().map(|s| eps * s),
            )
        };
        PerturbationWeights {
            eps,
            a: project(self.spec.a),
            b: project(self.spec.b),
            b_scale: eps.powf(self.spec.b_exponent()),
        }
    }

    /// `K u` as a covector.
    pub fn stiffness(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        grid::apply_stencil(&self.grid, u, &mut out);
        let m = self.mass();
        out.iter_mut().for_each(|v| *v *= m);
        out
    }

    /// `K⁻¹ c`: the `H¹` representative of covector `c`.
    pub fn riesz(&self, c: &[f64]) -> Result<Vec<f64>> {
        let m = self.mass();
        let g: Vec<f64> = c.iter().map(|v| v / m).collect();
        self.solver.solve(&g)
    }

    /// Fast unverified `K⁻¹ c`, for preconditioning.
    pub fn riesz_fast(&self, c: &[f64]) -> Vec<f64> {
        let m = self.mass();
        let g: Vec<f64> = c.iter().map(|v| v / m).collect();
        self.solver.solve_raw(&g)
    }

    /// `uᵀ K v`.
    pub fn h1(&self, u: &[f64], v: &[f64]) -> f64 {
        grid::h1_form(&self.grid, u, v)
    }

    /// `√(cᵀ K⁻¹ c)`.
    pub fn dual_norm(&self, c: &[f64]) -> Result<f64> {
        let r = self.riesz(c)?;
        Ok(linalg::dot(c, &r).max(0.0).sqrt())
    }

    fn check(&self, u: &Field) -> Result<()> {
        if u.grid().same_as(&self.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                u.grid(),
                self.grid
            )))
        }
    }

    fn to_field(&self, v: Vec<f64>) -> Field {
        Field::from_vec(self.grid, v)
    }

    // Raw covector forms.

    pub fn potential_value(&self, u: &[f64]) -> f64 {
        let p = self.spec.p;
        self.spec.amplitude / (p + 1.0)
            * self.mass()
            * u.iter().map(|v| v.abs().powf(p + 1.0)).sum::<f64>()
    }

    pub fn potential_covector(&self, u: &[f64]) -> Vec<f64> {
        let c = self.spec.amplitude * self.mass();
        u.iter().map(|&v| c * odd_power(v, self.spec.p)).collect()
    }

    /// Diagonal of `F''(u)` as a matrix on nodal values.
    pub fn potential_hess_diag(&self, u: &[f64]) -> Vec<f64> {
        let p = self.spec.p;
        let c = p * self.spec.amplitude * self.mass();
        u.iter().map(|&v| c * v.abs().powf(p - 1.0)).collect()
    }

    pub fn perturbation_value(&self, eps: f64, u: &[f64]) -> f64 {
        if eps == 0.0 {
            return 0.0;
        }
        let w = self.weights(eps);
        let (p, q) = (self.spec.p, self.spec.q);
        let mut sa = 0.0;
        let mut sb = 0.0;
        for (i, &v) in u.iter().enumerate() {
            let av = v.abs();
            if w.a[i] != 0.0 {
                sa += w.a[i] * av.powf(p + 1.0);
            }
            if w.b[i] != 0.0 {
                sb += w.b[i] * av.powf(q + 1.0);
            }
        }
        -sa / (p + 1.0) - w.b_scale * sb / (q + 1.0)
    }

    pub fn perturbation_covector(&self, eps: f64, u: &[f64]) -> Vec<f64> {
        if eps == 0.0 {
            return vec![0.0; u.len()];
        }
        let w = self.weights(eps);
        let (p, q) = (self.spec.p, self.spec.q);
        u.iter()
            .enumerate()
            .map(|(i, &v)| {
                let mut c = 0.0;
                if w.a[i] != 0.0 {
                    c -= w.a[i] * odd_power(v, p);
                }
                if w.b[i] != 0.0 {
                    c -= w.b_scale * w.b[i] * odd_power(v, q);
                }
                c
            })
            .collect()
    }

    /// Diagonal of `G''(ε, u)`.
    pub fn perturbation_hess_diag(&self, eps: f64, u: &[f64]) -> Vec<f64> {
        if eps == 0.0 {
            return vec![0.0; u.len()];
        }
        let w = self.weights(eps);
        let (p, q) = (self.spec.p, self.spec.q);
        u.iter()
            .enumerate()
            .map(|(i, &v)| {
                let av = v.abs();
                let mut c = 0.0;
                if w.a[i] != 0.0 {
                    c -= p * w.a[i] * av.powf(p - 1.0);
                }
                if w.b[i] != 0.0 {
                    c -= q * w.b_scale * w.b[i] * av.powf(q - 1.0);
                }
                c
            })
            .collect()
    }

    pub fn energy_value(&self, eps: f64, u: &[f64]) -> f64 {
        0.5 * self.h1(u, u) - self.potential_value(u) + self.perturbation_value(eps, u)
    }

    /// `K u - F'(u) + G'(ε, u)` as a covector.
    pub fn energy_covector(&self, eps: f64, u: &[f64]) -> Vec<f64> {
        let mut c = self.stiffness(u);
        linalg::axpy(&mut c, -1.0, &self.potential_covector(u));
        if eps != 0.0 {
            linalg::axpy(&mut c, 1.0, &self.perturbation_covector(eps, u));
        }
        c
    }

    /// `d` with `f_ε''(u) = K - diag(d)`.
    pub fn energy_hess_diag(&self, eps: f64, u: &[f64]) -> Vec<f64> {
        let mut d = self.potential_hess_diag(u);
        if eps != 0.0 {
            linalg::axpy(&mut d, -1.0, &self.perturbation_hess_diag(eps, u));
        }
        d
    }

    // Field-level operations with Riesz-mapped gradients.

    pub fn potential_eval(&self, u: &Field) -> Result<f64> {
        self.check(u)?;
        Ok(self.potential_value(u.values()))
    }

    pub fn potential_grad(&self, u: &Field) -> Result<Field> {
        self.check(u)?;
        Ok(self.to_field(self.riesz(&self.potential_covector(u.values()))?))
    }

    pub fn potential_hess_apply(&self, u: &Field, v: &Field) -> Result<Field> {
        self.check(u)?;
        self.check(v)?;
        let d = self.potential_hess_diag(u.values());
        let c: Vec<f64> = d.iter().zip(v.values()).map(|(a, b)| a * b).collect();
        Ok(self.to_field(self.riesz(&c)?))
    }

    pub fn perturbation_eval(&self, eps: f64, u: &Field) -> Result<f64> {
        self.check(u)?;
        check_eps(eps)?;
        Ok(self.perturbation_value(eps, u.values()))
    }

    pub fn perturbation_grad(&self, eps: f64, u: &Field) -> Result<Field> {
        self.check(u)?;
        check_eps(eps)?;
        Ok(self.to_field(self.riesz(&self.perturbation_covector(eps, u.values()))?))
    }

    pub fn perturbation_hess_apply(&self, eps: f64, u: &Field, v: &Field) -> Result<Field> {
        self.check(u)?;
        self.check(v)?;
        check_eps(eps)?;
        let d = self.perturbation_hess_diag(eps, u.values());
        let c: Vec<f64> = d.iter().zip(v.values()).map(|(a, b)| a * b).collect();
        Ok(self.to_field(self.riesz(&c)?))
    }

    pub fn energy_eval(&self, eps: f64, u: &Field) -> Result<f64> {
        self.check(u)?;
        check_eps(eps)?;
        Ok(self.energy_value(eps, u.values()))
    }

    pub fn energy_grad(&self, eps: f64, u: &Field) -> Result<Field> {
        self.check(u)?;
        check_eps(eps)?;
        Ok(self.to_field(self.riesz(&self.energy_covector(eps, u.values()))?))
    }

    /// `v - K⁻¹(diag(d) v)`.
    pub fn energy_hess_apply(&self, eps: f64, u: &Field, v: &Field) -> Result<Field> {
        self.check(u)?;
        self.check(v)?;
        check_eps(eps)?;
        let d = self.energy_hess_diag(eps, u.values());
        let c: Vec<f64> = d.iter().zip(v.values()).map(|(a, b)| a * b).collect();
        let r = self.riesz(&c)?;
        Ok(self.to_field(v.values().iter().zip(&r).map(|(a, b)| a - b).collect()))
    }

    // Reduced functional.

    /// `Γ(θ) = -S z₀^{p+1}(|θ|)/(p+1)`.
    pub fn gamma_l1(&self, theta: &[f64]) -> Result<f64> {
        if self.spec.case != PerturbationCase::L1Case {
            return Err(Error::WrongCase(
                "integrable formula needs the L1 case".into(),
            ));
        }
        let s = self
            .spec
            .s_integral()
            .ok_or_else(|| Error::WrongCase("no finite ∫(a - A)".into()))?;
        let r = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
        let p = self.spec.p;
        Ok(-s * self.gs.eval(r).powf(p + 1.0) / (p + 1.0))
    }

    /// `Γ(θ) = -L/(p+1) ∫ |x|^{-γ} z₀^{p+1}(x+θ) dx`.
    pub fn gamma_algebraic(&self, theta: &[f64]) -> Result<f64> {
        if self.spec.case != PerturbationCase::AlgebraicCase {
            return Err(Error::WrongCase(
                "algebraic formula needs the algebraic case".into(),
            ));
        }
        let gamma = self.spec.a.gamma.unwrap_or(f64::NAN);
        if !(gamma > 0.0 && gamma < self.grid.dim as f64) {
            return Err(Error::GammaOutOfRange {
                gamma,
                dim: self.grid.dim,
            });
        }
        let p = self.spec.p;
        let f = grid::sample_translated(&self.grid, &self.gs, theta, |z| z.powf(p + 1.0))?;
        Ok(-self.spec.a.amplitude / (p + 1.0) * grid::singular_quadrature(&f, gamma)?)
    }

    pub fn gamma(&self, theta: &[f64]) -> Result<f64> {
        match self.spec.case {
            PerturbationCase::L1Case => self.gamma_l1(theta),
            PerturbationCase::AlgebraicCase => self.gamma_algebraic(theta),
        }
    }

    /// `D²Γ(θ)`: analytic in the integrable case, central differences with
    /// step `1e-3` otherwise. Fails if the matrix is numerically singular.
    pub fn hess_gamma(&self, theta: &[f64]) -> Result<(Vec<Vec<f64>>, Definiteness)> {
        let h = self.hess_gamma_matrix(theta)?;
        let def = classify(&h);
        if def == Definiteness::Degenerate {
            return Err(Error::DegenerateHessian(format!("D²Γ({theta:?}) = {h:?}")));
        }
        Ok((h, def))
    }

    fn hess_gamma_matrix(&self, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
        let n = self.grid.dim;
        if theta.len() != n {
            return Err(Error::InvalidArgument(
                "shift has the wrong dimension".into(),
            ));
        }
        let mut out = vec![vec![0.0; n]; n];
        match self.spec.case {
            PerturbationCase::L1Case => {
                let s = self
                    .spec
                    .s_integral()
                    .ok_or_else(|| Error::WrongCase("no finite ∫(a - A)".into()))?;
                let p = self.spec.p;
                let rho = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
                let (z, d1, d2) = self.gs.eval_all(rho);
                for i in 0..n {
                    for j in 0..n {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        let (dz_i, dz_j, dzz) = if rho == 0.0 {
                            (0.0, 0.0, d2 * delta)
                        } else {
                            let (ui, uj) = (theta[i] / rho, theta[j] / rho);
                            (
                                d1 * ui,
                                d1 * uj,
                                d2 * ui * uj + d1 / rho * (delta - ui * uj),
                            )
                        };
                        out[i][j] = -s * (z.powf(p) * dzz + p * z.powf(p - 1.0) * dz_i * dz_j);
                    }
                }
            }
            PerturbationCase::AlgebraicCase => {
                let step = 1e-3;
                let at = |di: isize, i: usize, dj: isize, j: usize| -> Result<f64> {
                    let mut t = theta.to_vec();
                    t[i] += di as f64 * step;
                    t[j] += dj as f64 * step;
                    self.gamma_algebraic(&t)
                };
                let g0 = self.gamma_algebraic(theta)?;
                for i in 0..n {
                    out[i][i] = (at(1, i, 0, i)? - 2.0 * g0 + at(-1, i, 0, i)?) / (step * step);
                    for j in 0..i {
                        let v = (at(1, i, 1, j)? - at(1, i, -1, j)? - at(-1, i, 1, j)?
                            + at(-1, i, -1, j)?)
                            / (4.0 * step * step);
                        out[i][j] = v;
                        out[j][i] = v;
                    }
                }
            }
        }
        Ok(out)
    }

    /// `Γ` on a list of shifts, with the extremum taken where `|Γ|` is largest.
    pub fn gamma_profile(&self, thetas: &[Vec<f64>]) -> Result<GammaProfile> {
        if thetas.is_empty() {
            return Err(Error::InvalidArgument("no shifts to sample".into()));
        }
        let values: Vec<f64> = thetas
            .par_iter()
            .map(|t| self.gamma(t))
            .collect::<Result<Vec<_>>>()?;
        let best = values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let ext = thetas[best].clone();
        let h = self.hess_gamma_matrix(&ext)?;
        Ok(GammaProfile {
            case_tag: self.spec.case,
            alpha: self.alpha(),
            theta_samples: thetas.iter().cloned().zip(values).collect(),
            extremum_theta: ext,
            definiteness: classify(&h),
            hessian_at_extremum: h,
        })
    }

    /// `G(ε, z_θ)/ε^α` along `eps_grid` compared with `Γ(θ)`.
    pub fn gamma_limit_probe(&self, theta: &[f64], eps_grid: &[f64]) -> Result<GammaLimitProbe> {
        check_eps_grid(eps_grid)?;
        let z = grid::embed_state(&self.grid, &self.gs, theta)?;
        let alpha = self.alpha();
        let reference = self.gamma(theta)?;
        let g: Vec<f64> = eps_grid
            .par_iter()
            .map(|&e| self.perturbation_value(e, z.values()))
            .collect();
        let scaled: Vec<f64> = g
            .iter()
            .zip(eps_grid)
            .map(|(v, e)| v / e.powf(alpha))
            .collect();
        let errs: Vec<f64> = scaled
            .iter()
            .map(|s| ((s - reference) / reference).abs())
            .collect();
        let m = errs.len();
        let decreasing_tail = m >= 3 && errs[m - 3] > errs[m - 2] && errs[m - 2] > errs[m - 1];
        Ok(GammaLimitProbe {
            theta: theta.to_vec(),
            alpha,
            reference,
            terminal_relative_error: errs[m - 1],
            scaled_values: scaled,
            relative_errors: errs,
            decreasing_tail,
            rate: RateFit::fit(eps_grid, &g)?,
        })
    }

    /// Slope of `‖G'(ε, z_θ)‖` in the dual norm.
    pub fn gprime_rate_probe(&self, theta: &[f64], eps_grid: &[f64]) -> Result<GPrimeProbe> {
        check_eps_grid(eps_grid)?;
        let z = grid::embed_state(&self.grid, &self.gs, theta)?;
        let norms: Vec<f64> = eps_grid
            .par_iter()
            .map(|&e| self.dual_norm(&self.perturbation_covector(e, z.values())))
            .collect::<Result<Vec<_>>>()?;
        Ok(GPrimeProbe {
            theta: theta.to_vec(),
            rate: RateFit::fit(eps_grid, &norms)?,
            predicted: self.predicted_gprime_rate(),
            gate: self.alpha() / 2.0,
        })
    }

    pub fn predicted_gprime_rate(&self) -> PredictedRate {
        let nf = self.grid.dim as f64;
        let top = nf / 2.0 + 1.0;
        match self.spec.case {
            PerturbationCase::L1Case => PredictedRate::Exactly(top),
            PerturbationCase::AlgebraicCase => {
                let g = self.alpha();
                let threshold = (nf + 2.0) / 2.0;
                if (g - threshold).abs() < 1e-12 {
                    PredictedRate::Above(g / 2.0)
                } else if g < threshold {
                    PredictedRate::Exactly(g)
                } else {
                    PredictedRate::Exactly(top)
                }
            }
        }
    }
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

/// Strictly decreasing positive values.
pub fn check_eps_grid(eps: &[f64]) -> Result<()> {
    if eps.is_empty() {
        return Err(Error::InvalidArgument("empty ε grid".into()));
    }
    if eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(Error::InvalidArgument("ε values must be positive".into()));
    }
    if eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument(
            "ε grid must be strictly decreasing".into(),
        ));
    }
    Ok(())
}

/// Definiteness of a symmetric matrix; `Degenerate` when the smallest
/// eigenvalue magnitude is below `1e-8` of the largest.
pub fn classify(h: &[Vec<f64>]) -> Definiteness {
    let n = h.len();
    let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (h[i][j] + h[j][i]));
    let eig = SymmetricEigen::new(m).eigenvalues;
    let big = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let small = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if !(big > 0.0) || small < 1e-8 * big {
        Definiteness::Degenerate
    } else if eig.iter().all(|v| *v > 0.0) {
        Definiteness::PosDef
    } else if eig.iter().all(|v| *v < 0.0) {
        Definiteness::NegDef
    } else {
        Definiteness::Indefinite
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groundstate::{closed_form_1d, solve_ground_state};
    use crate::problem::CoefficientSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn canonical(s: f64) -> Functional {
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
        Functional::new(spec, Grid::default_for(1).unwrap(), gs).unwrap()
    }

    fn smooth_field(grid: Grid, rng: &mut ChaCha8Rng) -> Field {
        let bumps: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(0.5..2.0),
                )
            })
            .collect();
        Field::from_fn(grid, |x| {
            bumps
                .iter()
                .map(|(a, c, w)| a * (-((x[0] - c) / w).powi(2)).exp())
                .sum()
        })
    }

    #[test]
    fn canonical_values() {
        let f = canonical(1.0);
        let z = grid::embed_state(f.grid(), f.ground_state(), &[0.0]).unwrap();
        assert!((f.potential_eval(&z).unwrap() - 4.0 / 3.0).abs() < 1e-3);
        assert!((f.energy_eval(0.0, &z).unwrap() - 4.0 / 3.0).abs() < 1e-3);
        assert_eq!(f.perturbation_eval(0.0, &z).unwrap(), 0.0);
        let g = f.energy_grad(0.0, &z).unwrap();
        assert!(grid::h1_norm(&g) < 1e-4, "{}", grid::h1_norm(&g));
        let zero = Field::zeros(*f.grid());
        assert_eq!(f.potential_eval(&zero).unwrap(), 0.0);
        assert_eq!(f.potential_grad(&zero).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn gamma_closed_form_values() {
        let f = canonical(1.0);
        assert!((f.gamma_l1(&[0.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(f.gamma_l1(&[10.0]).unwrap().abs() < 1e-6);
        let (h, d) = f.hess_gamma(&[0.0]).unwrap();
        assert!((h[0][0] - 4.0).abs() < 1e-9);
        assert_eq!(d, Definiteness::PosDef);
        let (_, d) = canonical(-1.0).hess_gamma(&[0.0]).unwrap();
        assert_eq!(d, Definiteness::NegDef);
        assert!(matches!(
            f.gamma_algebraic(&[0.0]),
            Err(Error::WrongCase(_))
        ));
    }

    #[test]
    fn zero_integral_gives_zero_gamma() {
        let f = canonical(0.0);
        assert_eq!(f.gamma_l1(&[0.3]).unwrap(), 0.0);
    }

    #[test]
    fn gamma_extremum_is_at_the_origin() {
        let f = canonical(1.0);
        let thetas: Vec<Vec<f64>> = (-20..=20).map(|k| vec![k as f64 * 0.1]).collect();
        let prof = f.gamma_profile(&thetas).unwrap();
        assert_eq!(prof.extremum_theta, vec![0.0]);
        assert!(prof.theta_samples.iter().all(|(_, g)| *g < 0.0));
        let vals: Vec<f64> = prof.theta_samples.iter().map(|(_, g)| *g).collect();
        let zero = vals.iter().filter(|v| **v == vals[20]).count();
        assert_eq!(zero, 1);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let f = canonical(1.0);
        let grid = *f.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let eps = 0.1;
        let t = 1e-5;
        for _ in 0..20 {
            let u = smooth_field(grid, &mut rng);
            let v = smooth_field(grid, &mut rng);
            let shift = |s: f64| {
                let mut w = u.clone();
                w.axpy(s, &v).unwrap();
                w
            };
            let (up, um) = (shift(t), shift(-t));
            let checks: [(f64, f64); 3] = [
                (
                    (f.potential_eval(&up).unwrap() - f.potential_eval(&um).unwrap()) / (2.0 * t),
                    grid::h1_inner(&f.potential_grad(&u).unwrap(), &v).unwrap(),
                ),
                (
                    (f.perturbation_eval(eps, &up).unwrap()
                        - f.perturbation_eval(eps, &um).unwrap())
                        / (2.0 * t),
                    grid::h1_inner(&f.perturbation_grad(eps, &u).unwrap(), &v).unwrap(),
                ),
                (
                    (f.energy_eval(eps, &up).unwrap() - f.energy_eval(eps, &um).unwrap())
                        / (2.0 * t),
                    grid::h1_inner(&f.energy_grad(eps, &u).unwrap(), &v).unwrap(),
                ),
            ];
            for (fd, an) in checks {
                assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "{fd} vs {an}");
            }
        }
    }

    #[test]
    fn hessians_are_symmetric() {
        let f = canonical(1.0);
        let grid = *f.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let u = smooth_field(grid, &mut rng);
            let v = smooth_field(grid, &mut rng);
            let w = smooth_field(grid, &mut rng);
            let a = grid::h1_inner(&f.energy_hess_apply(0.05, &u, &v).unwrap(), &w).unwrap();
            let b = grid::h1_inner(&v, &f.energy_hess_apply(0.05, &u, &w).unwrap()).unwrap();
            assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
        }
    }

    #[test]
    fn limit_probe_approaches_gamma() {
        let f = canonical(1.0);
        let eps = crate::fit::geometric_grid(0.4, 7);
        let probe = f.gamma_limit_probe(&[0.0], &eps).unwrap();
        assert!(
            probe.terminal_relative_error < 0.05,
            "{:?}",
            probe.relative_errors
        );
        assert!(probe.decreasing_tail);
        // Separability in θ.
        let shifted = f.gamma_limit_probe(&[1.0], &eps).unwrap();
        let ratio = shifted.scaled_values.last().unwrap() / probe.scaled_values.last().unwrap();
        let z = f.ground_state();
        let want = (z.eval(1.0) / z.eval(0.0)).powi(4);
        assert!((ratio / want - 1.0).abs() < 0.05);
    }

    #[test]
    fn b_term_alone_decays_at_least_quadratically() {
        let spec = ProblemSpec {
            dim: 1,
            p: 3.0,
            q: 5.0,
            amplitude: 1.0,
            a: CoefficientSpec::gaussian(0.0, 1.0),
            b: CoefficientSpec::gaussian(1.0, 1.0),
            case: PerturbationCase::L1Case,
        };
        let f = Functional::new(
            spec,
            Grid::default_for(1).unwrap(),
            Arc::new(closed_form_1d(3.0, 1.0)),
        )
        .unwrap();
        let z = grid::embed_state(f.grid(), f.ground_state(), &[0.0]).unwrap();
        let eps = crate::fit::geometric_grid(0.4, 7);
        let g: Vec<f64> = eps
            .iter()
            .map(|&e| f.perturbation_eval(e, &z).unwrap())
            .collect();
        let fit = RateFit::fit(&eps, &g).unwrap();
        assert!(fit.fitted_slope >= 2.0, "{}", fit.fitted_slope);
    }

    #[test]
    fn radial_hessian_has_no_off_diagonal() {
        let spec = ProblemSpec {
            dim: 2,
            p: 3.0,
            q: 5.0,
            amplitude: 1.0,
            a: CoefficientSpec::algebraic(1.0, 1.0, 1.0),
            b: CoefficientSpec::gaussian(1.0, 1.0),
            case: PerturbationCase::AlgebraicCase,
        };
        let gs = Arc::new(solve_ground_state(2, 3.0, 1.0, 1e-10).unwrap());
        let f = Functional::new(spec, Grid::default_for(2).unwrap(), gs).unwrap();
        let (h, d) = f.hess_gamma(&[0.0, 0.0]).unwrap();
        assert!(h[0][1].abs() < 1e-6 * h[0][0].abs(), "{h:?}");
        assert_eq!(d, Definiteness::PosDef);
        assert!(f.gamma_algebraic(&[0.0, 0.0]).unwrap() < 0.0);
        assert!(f.gamma_algebraic(&[3.0, 1.0]).unwrap() < 0.0);
    }

    #[test]
    fn eps_grid_validation() {
        assert!(check_eps_grid(&[0.4, 0.2, 0.1]).is_ok());
        assert!(check_eps_grid(&[0.4, 0.4]).is_err());
        assert!(check_eps_grid(&[0.4, -0.1]).is_err());
    }
}
