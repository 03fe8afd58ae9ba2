//! Truncated uniform tensor grids with zero-Dirichlet boundary, the discrete
//! `-Δ + 1` operator, its `H¹` form, quadrature and Riesz representatives.
//!
//! The discrete `H¹` product is the energy form of the `(2N+1)`-point stencil:
//! `(u|v) = h^N [Σ u v + h⁻² Σ_edges Δu Δv]`, where edges to the zero ghost
//! layer are included. It equals `h^N Σ (Lu) v` exactly, so Riesz maps and
//! gradients built from it are mutually consistent.

use crate::error::{Error, Result};
use crate::groundstate::GroundState;
use crate::quad;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Upper bound on `N·points_per_axis^N` unless a caller supplies its own.
pub const DEFAULT_MEMORY_BUDGET: usize = 1 << 27;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub half_width: f64,
    pub spacing: f64,
    pub points_per_axis: usize,
}

impl Grid {
    pub fn new(dim: usize, half_width: f64, spacing: f64) -> Result<Self> {
        Self::with_budget(dim, half_width, spacing, DEFAULT_MEMORY_BUDGET)
    }

    pub fn with_budget(dim: usize, half_width: f64, spacing: f64, budget: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidArgument(format!("grid dimension {dim}")));
        }
        if !(half_width.is_finite() && spacing.is_finite() && half_width > 0.0 && spacing > 0.0) {
            return Err(Error::InvalidArgument(
                "grid extent and spacing must be positive".into(),
            ));
        }
        let ratio = half_width / spacing;
        let cells = ratio.round();
        if (ratio - cells).abs() > 1e-9 * ratio.max(1.0) || cells < 1.0 {
            return Err(Error::InvalidArgument(format!(
                "R/h = {ratio} is not a positive integer"
            )));
        }
        let n = 2.0 * cells + 1.0;
        let total = dim as f64 * n.powi(dim as i32);
        if total > budget as f64 {
            return Err(Error::InvalidArgument(format!(
                "grid needs {total} values, budget is {budget}"
            )));
        }
        Ok(Self {
            dim,
            half_width,
            spacing,
            points_per_axis: n as usize,
        })
    }

    /// Default desk-scale grid per dimension.
    pub fn default_for(dim: usize) -> Result<Self> {
        match dim {
            1 => Self::new(1, 20.0, 0.02),
            2 => Self::new(2, 12.0, 0.1),
            3 => Self::new(3, 8.0, 0.25),
            _ => Err(Error::InvalidArgument(format!("grid dimension {dim}"))),
        }
    }

    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `h^N`, the trapezoid weight of one node.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// Coordinate of node `i` along any axis.
    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing
    }

    /// Flat index of the node at the origin.
    pub fn center_index(&self) -> usize {
        let c = self.points_per_axis / 2;
        (0..self.dim).fold(0, |acc, _| acc * self.points_per_axis + c)
    }

    /// Stride of `axis` in the row-major layout.
    pub fn stride(&self, axis: usize) -> usize {
        self.points_per_axis.pow((self.dim - 1 - axis) as u32)
    }

    /// Per-axis indices of flat index `idx`.
    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        let mut out = [0; 3];
        let mut rem = idx;
        for ax in (0..self.dim).rev() {
            out[ax] = rem % self.points_per_axis;
            rem /= self.points_per_axis;
        }
        out
    }

    /// Cartesian coordinates of flat index `idx` (unused axes are zero).
    pub fn point(&self, idx: usize) -> [f64; 3] {
        let m = self.multi_index(idx);
        let mut x = [0.0; 3];
        for ax in 0..self.dim {
            x[ax] = self.coord(m[ax]);
        }
        x
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self.dim == other.dim
            && self.points_per_axis == other.points_per_axis
            && self.half_width.to_bits() == other.half_width.to_bits()
            && self.spacing.to_bits() == other.spacing.to_bits()
    }
}

/// A real function sampled at every node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    /// Validates length and finiteness.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "field has {} values, grid has {}",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value at node {i}"
            )));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_vec(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    /// Samples `f` at every node.
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64 + Sync) -> Self {
        let values = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let x = grid.point(i);
                f(&x[..grid.dim])
            })
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn check_same_grid(&self, other: &Field) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )))
        }
    }

    /// `self += a·x`.
    pub fn axpy(&mut self, a: f64, x: &Field) -> Result<()> {
        self.check_same_grid(x)?;
        for (s, v) in self.values.iter_mut().zip(&x.values) {
            *s += a * v;
        }
        Ok(())
    }

    pub fn scaled(&self, a: f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|v| a * v).collect(),
        }
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `h^N [Σ u v + h⁻² Σ_edges Δu Δv]`, ghost edges included.
pub(crate) fn h1_form(grid: &Grid, u: &[f64], v: &[f64]) -> f64 {
    let n = grid.points_per_axis;
    let h = grid.spacing;
    let mut mass = 0.0;
    let mut grad = 0.0;
    for i in 0..u.len() {
        mass += u[i] * v[i];
    }
    for ax in 0..grid.dim {
        let s = grid.stride(ax);
        for i in 0..u.len() {
            let k = (i / s) % n;
            if k == 0 {
                grad += u[i] * v[i];
            }
            if k + 1 < n {
                grad += (u[i + s] - u[i]) * (v[i + s] - v[i]);
            } else {
                grad += u[i] * v[i];
            }
        }
    }
    grid.cell_volume() * (mass + grad / (h * h))
}

/// `(-Δ_h + 1) u` with zero ghosts.
pub(crate) fn apply_stencil(grid: &Grid, u: &[f64], out: &mut [f64]) {
    let n = grid.points_per_axis;
    let ih2 = 1.0 / (grid.spacing * grid.spacing);
    out.copy_from_slice(u);
    for ax in 0..grid.dim {
        let s = grid.stride(ax);
        for i in 0..u.len() {
            let k = (i / s) % n;
            let left = if k > 0 { u[i - s] } else { 0.0 };
            let right = if k + 1 < n { u[i + s] } else { 0.0 };
            out[i] += (2.0 * u[i] - left - right) * ih2;
        }
    }
}

/// Discrete `H¹` inner product.
pub fn h1_inner(u: &Field, v: &Field) -> Result<f64> {
    u.check_same_grid(v)?;
    Ok(h1_form(&u.grid, &u.values, &v.values))
}

pub fn h1_norm(u: &Field) -> f64 {
    h1_form(&u.grid, &u.values, &u.values).max(0.0).sqrt()
}

/// Standard `(2N+1)`-point `-Δ + 1`, zero Dirichlet outside the box.
pub fn apply_operator(u: &Field) -> Field {
    let mut out = vec![0.0; u.values.len()];
    apply_stencil(&u.grid, &u.values, &mut out);
    Field::from_vec(u.grid, out)
}

/// Trapezoid sum `h^N Σ f`.
pub fn quadrature(f: &Field) -> f64 {
    f.grid.cell_volume() * f.values.iter().sum::<f64>()
}

/// `∫_{[-a,a]^N} |x|^{-γ} dx`.
pub fn cell_kernel_integral(dim: usize, a: f64, gamma: f64) -> f64 {
    let nf = dim as f64;
    let (x, w) = quad::gauss_legendre(48);
    let pref = 2.0 * nf * a / (nf - gamma);
    match dim {
        1 => 2.0 * a.powf(1.0 - gamma) / (1.0 - gamma),
        2 => {
            let s: f64 = x
                .iter()
                .zip(&w)
                .map(|(t, wt)| wt * a * (a * a * (1.0 + t * t)).powf(-gamma / 2.0))
                .sum();
            pref * s
        }
        _ => {
            let mut s = 0.0;
            for (t1, w1) in x.iter().zip(&w) {
                for (t2, w2) in x.iter().zip(&w) {
                    s += w1 * w2 * a * a * (a * a * (1.0 + t1 * t1 + t2 * t2)).powf(-gamma / 2.0);
                }
            }
            pref * s
        }
    }
}

/// `∫ f(x) |x|^{-γ} dx`: trapezoid away from the origin, and
/// `f(0)·∫_{cell}|x|^{-γ}` on the origin cell.
pub fn singular_quadrature(f: &Field, gamma: f64) -> Result<f64> {
    let g = f.grid;
    if !(gamma > 0.0 && gamma < g.dim as f64) {
        return Err(Error::GammaOutOfRange { gamma, dim: g.dim });
    }
    let c = g.center_index();
    let mut s = 0.0;
    for (i, v) in f.values.iter().enumerate() {
        if i == c || *v == 0.0 {
            continue;
        }
        let x = g.point(i);
        let r2: f64 = x[..g.dim].iter().map(|t| t * t).sum();
        s += v * r2.powf(-gamma / 2.0);
    }
    Ok(g.cell_volume() * s + f.values[c] * cell_kernel_integral(g.dim, 0.5 * g.spacing, gamma))
}

/// Fast exact solver for `(-Δ_h + 1) r = g` by sine transforms along every
/// axis. A sine series with `n` interior nodes diagonalizes the
/// zero-Dirichlet stencil.
pub struct SineSolver {
    grid: Grid,
    fft: Arc<dyn Fft<f64>>,
    eig: Vec<f64>,
}

impl std::fmt::Debug for SineSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SineSolver")
            .field("grid", &self.grid)
            .finish()
    }
}

type SolverKey = (usize, usize, u64);

fn solver_cache() -> &'static Mutex<HashMap<SolverKey, Arc<SineSolver>>> {
    static CACHE: OnceLock<Mutex<HashMap<SolverKey, Arc<SineSolver>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

impl SineSolver {
    pub fn new(grid: Grid) -> Self {
        let n = grid.points_per_axis;
        let fft = FftPlanner::new().plan_fft_forward(2 * (n + 1));
        let h2 = grid.spacing * grid.spacing;
        let eig = (1..=n)
            .map(|k| (2.0 - 2.0 * (std::f64::consts::PI * k as f64 / (n + 1) as f64).cos()) / h2)
            .collect();
        Self { grid, fft, eig }
    }

    /// Shared instance per grid.
    pub fn shared(grid: &Grid) -> Arc<Self> {
        let key = (grid.dim, grid.points_per_axis, grid.spacing.to_bits());
        let mut cache = solver_cache().lock().unwrap_or_else(|e| e.into_inner());
        cache
            .entry(key)
            .or_insert_with(|| Arc::new(Self::new(*grid)))
            .clone()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Unnormalized type-I sine transform along `axis`, two lines per
    /// complex FFT.
    fn dst_axis(&self, data: &mut [f64], axis: usize) {
        let n = self.grid.points_per_axis;
        let s = self.grid.stride(axis);
        let outer = data.len() / (n * s);
        let starts: Vec<usize> = (0..outer)
            .flat_map(|o| (0..s).map(move |i| o * n * s + i))
            .collect();
        let m = 2 * (n + 1);
        let src: &[f64] = data;
        let results: Vec<(usize, Vec<f64>)> = starts
            .par_chunks(2)
            .flat_map_iter(|pair| {
                let mut buf = vec![Complex::new(0.0, 0.0); m];
                for j in 0..n {
                    let a = src[pair[0] + j * s];
                    let b = if pair.len() > 1 {
                        src[pair[1] + j * s]
                    } else {
                        0.0
                    };
                    buf[j + 1] = Complex::new(a, b);
                    buf[m - 1 - j] = Complex::new(-a, -b);
                }
                self.fft.process(&mut buf);
                // Each odd real line transforms to -2i·X; packing the second
                // line in the imaginary part adds +2·X_b to the real part.
                let xa: Vec<f64> = (1..=n).map(|k| -0.5 * buf[k].im).collect();
                let mut out = vec![(pair[0], xa)];
                if pair.len() > 1 {
                    out.push((pair[1], (1..=n).map(|k| 0.5 * buf[k].re).collect()));
                }
                out.into_iter()
            })
            .collect();
        for (start, line) in results {
            for (j, v) in line.into_iter().enumerate() {
                data[start + j * s] = v;
            }
        }
    }

    /// `(-Δ_h + 1)⁻¹ g` by transform, divide, transform.
    pub fn solve_raw(&self, g: &[f64]) -> Vec<f64> {
        let grid = &self.grid;
        let n = grid.points_per_axis;
        let mut x = g.to_vec();
        for ax in 0..grid.dim {
            self.dst_axis(&mut x, ax);
        }
        for (i, v) in x.iter_mut().enumerate() {
            let m = grid.multi_index(i);
            let lam: f64 = (0..grid.dim).map(|ax| self.eig[m[ax]]).sum();
            *v /= 1.0 + lam;
        }
        for ax in 0..grid.dim {
            self.dst_axis(&mut x, ax);
        }
        let scale = (2.0 / (n + 1) as f64).powi(grid.dim as i32);
        for v in x.iter_mut() {
            *v *= scale;
        }
        x
    }

    /// Solves to relative residual `1e-10`, refining the transform solution
    /// by preconditioned conjugate gradients if needed.
    pub fn solve(&self, g: &[f64]) -> Result<Vec<f64>> {
        let gnorm = crate::linalg::norm(g);
        if gnorm == 0.0 {
            return Ok(vec![0.0; g.len()]);
        }
        let x0 = self.solve_raw(g);
        crate::linalg::pcg(
            |v, out| apply_stencil(&self.grid, v, out),
            |v| self.solve_raw(v),
            g,
            x0,
            1e-10,
            100,
        )
        .map_err(|res| Error::SolverNonConvergence(format!("relative residual {res}")))
    }
}

/// Riesz representative of `ℓ(v) = ∫ g v` and its dual norm.
pub fn riesz_dual_norm(g: &Field) -> Result<(Field, f64)> {
    let solver = SineSolver::shared(&g.grid);
    let r = solver.solve(&g.values)?;
    let norm = h1_form(&g.grid, &r, &r).max(0.0).sqrt();
    Ok((Field::from_vec(g.grid, r), norm))
}

fn check_theta(grid: &Grid, theta: &[f64], limit: f64) -> Result<()> {
    if theta.len() != grid.dim {
        return Err(Error::InvalidArgument(format!(
            "shift has {} components, grid has dimension {}",
            theta.len(),
            grid.dim
        )));
    }
    let norm = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
    if !norm.is_finite() || norm > limit {
        return Err(Error::ThetaOutOfRange { norm, limit });
    }
    Ok(())
}

/// Samples `g(z₀(|x+θ|))` for any `|θ|` below the box half-width.
pub fn sample_translated(
    grid: &Grid,
    gs: &GroundState,
    theta: &[f64],
    g: impl Fn(f64) -> f64 + Sync,
) -> Result<Field> {
    check_theta(grid, theta, grid.half_width)?;
    Ok(Field::from_fn(*grid, |x| {
        let r2: f64 = x.iter().zip(theta).map(|(a, b)| (a + b) * (a + b)).sum();
        g(gs.eval(r2.sqrt()))
    }))
}

/// `z_θ(x) = z₀(x + θ)`.
pub fn embed_state(grid: &Grid, gs: &GroundState, theta: &[f64]) -> Result<Field> {
    check_theta(grid, theta, 0.5 * grid.half_width)?;
    sample_translated(grid, gs, theta, |z| z)
}

/// `∂z_θ/∂θ_i = z₀'(ρ)(x+θ)_i/ρ`.
pub fn tangent_frame(grid: &Grid, gs: &GroundState, theta: &[f64]) -> Result<Vec<Field>> {
    check_theta(grid, theta, 0.5 * grid.half_width)?;
    let radial = Field::from_fn(*grid, |x| {
        let r2: f64 = x.iter().zip(theta).map(|(a, b)| (a + b) * (a + b)).sum();
        let rho = r2.sqrt();
        if rho == 0.0 {
            0.0
        } else {
            gs.eval_deriv(rho) / rho
        }
    });
    Ok((0..grid.dim)
        .map(|i| {
            let vals = radial
                .values
                .iter()
                .enumerate()
                .map(|(k, d)| d * (grid.point(k)[i] + theta[i]))
                .collect();
            Field::from_vec(*grid, vals)
        })
        .collect())
}

/// `∂²z_θ/∂θ_i∂θ_j` via the radial chain rule.
pub fn curvature_frame(grid: &Grid, gs: &GroundState, theta: &[f64]) -> Result<Vec<Vec<Field>>> {
    check_theta(grid, theta, 0.5 * grid.half_width)?;
    let n = grid.dim;
    let mut out = vec![Vec::with_capacity(n); n];
    for (i, row) in out.iter_mut().enumerate() {
        for j in 0..n {
            row.push(Field::from_fn(*grid, |x| {
                let y: Vec<f64> = x.iter().zip(theta).map(|(a, b)| a + b).collect();
                let rho = y.iter().map(|t| t * t).sum::<f64>().sqrt();
                let (_, d1, d2) = gs.eval_all(rho);
                let delta = if i == j { 1.0 } else { 0.0 };
                if rho == 0.0 {
                    d2 * delta
                } else {
                    let (ui, uj) = (y[i] / rho, y[j] / rho);
                    d2 * ui * uj + d1 / rho * (delta - ui * uj)
                }
            }));
        }
    }
    Ok(out)
}

/// `w_i = ∫ c(|x|²) φ_i(x) dx` for the multilinear hat functions `φ_i`.
///
/// Each cell is split into `m^N` panels of tensor Gauss-Legendre points, with
/// `m` set by the ratio of `h` to the local variation length
/// `max(scale, dist(0, cell))`. Cells beyond `support` are skipped.
pub fn hat_projection(
    grid: &Grid,
    c: &(dyn Fn(f64) -> f64 + Sync),
    scale: f64,
    support: Option<f64>,
) -> Vec<f64> {
    let n = grid.points_per_axis;
    let dim = grid.dim;
    let h = grid.spacing;
    let ncells = (n + 1).pow(dim as u32);
    let corners = 1usize << dim;
    let max_panels = [512usize, 160, 24][dim - 1];
    let order = if dim == 3 { 4 } else { 6 };
    let vol = grid.cell_volume();

    let contrib: Vec<[f64; 8]> = (0..ncells)
        .into_par_iter()
        .map(|cell| {
            let mut out = [0.0; 8];
            let mut lo = [0.0; 3];
            let mut rem = cell;
            for ax in (0..dim).rev() {
                let j = (rem % (n + 1)) as f64 - 1.0;
                rem /= n + 1;
                lo[ax] = -grid.half_width + j * h;
            }
            let mut d2 = 0.0;
            for &x in lo.iter().take(dim) {
                let gap = if x > 0.0 {
                    x
                } else if x + h < 0.0 {
                    -(x + h)
                } else {
                    0.0
                };
                d2 += gap * gap;
            }
            let d = d2.sqrt();
            if let Some(s) = support {
                if d > s {
                    return out;
                }
            }
            let ell = scale.max(d);
            let m = ((2.0 * h / ell).ceil() as usize).clamp(1, max_panels);
            let (ts, ws) = quad::composite_unit(m, order);
            let k = ts.len();
            let total = k.pow(dim as u32);
            let mut t = [0.0; 3];
            for flat in 0..total {
                let mut r = flat;
                let mut wprod = vol;
                let mut r2 = 0.0;
                for ax in 0..dim {
                    let a = r % k;
                    r /= k;
                    t[ax] = ts[a];
                    wprod *= ws[a];
                    let x = lo[ax] + h * ts[a];
                    r2 += x * x;
                }
                let val = c(r2) * wprod;
                if val == 0.0 {
                    continue;
                }
                for (cn, o) in out.iter_mut().enumerate().take(corners) {
                    let mut hat = 1.0;
                    for (ax, &ta) in t.iter().enumerate().take(dim) {
                        hat *= if (cn >> ax) & 1 == 1 { ta } else { 1.0 - ta };
                    }
                    *o += val * hat;
                }
            }
            out
        })
        .collect();

    let mut w = vec![0.0; grid.len()];
    for (cell, vals) in contrib.iter().enumerate() {
        let mut j = [0isize; 3];
        let mut rem = cell;
        for ax in (0..dim).rev() {
            j[ax] = (rem % (n + 1)) as isize - 1;
            rem /= n + 1;
        }
        'corner: for (cn, v) in vals.iter().enumerate().take(corners) {
            if *v == 0.0 {
                continue;
            }
            let mut idx = 0usize;
            for ax in 0..dim {
                let node = j[ax] + ((cn >> ax) & 1) as isize;
                if node < 0 || node >= n as isize {
                    continue 'corner;
                }
                idx = idx * n + node as usize;
            }
            w[idx] += v;
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groundstate::{closed_form_1d, solve_ground_state};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: Grid, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field::from_vec(
            grid,
            (0..grid.len())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
    }

    fn l2_dot(a: &Field, b: &Field) -> f64 {
        a.values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| x * y)
            .sum::<f64>()
            * a.grid.cell_volume()
    }

    #[test]
    fn grid_shape() {
        let g = Grid::new(1, 20.0, 0.02).unwrap();
        assert_eq!(g.points_per_axis, 2001);
        assert_eq!(g.coord(g.center_index()), 0.0);
        assert!(Grid::new(1, 1.0, 0.3).is_err());
        assert!(Grid::with_budget(3, 8.0, 0.01, 1 << 20).is_err());
        let g2 = Grid::new(2, 1.0, 0.5).unwrap();
        assert_eq!(g2.point(g2.center_index()), [0.0, 0.0, 0.0]);
        assert_eq!(g2.point(1), [-1.0, -0.5, 0.0]);
    }

    #[test]
    fn ground_state_norms_on_the_grid() {
        let grid = Grid::default_for(1).unwrap();
        let gs = closed_form_1d(3.0, 1.0);
        let z = embed_state(&grid, &gs, &[0.0]).unwrap();
        assert!((h1_inner(&z, &z).unwrap() - 16.0 / 3.0).abs() < 1e-3);
        let z2 = Field::from_vec(grid, z.values.iter().map(|v| v * v).collect());
        assert!((quadrature(&z2) - 4.0).abs() < 1e-3);
        assert_eq!(h1_inner(&z, &Field::zeros(grid)).unwrap(), 0.0);
        assert_eq!(quadrature(&Field::zeros(grid)), 0.0);
        assert_eq!(z.values[grid.center_index()], z.max_abs());
    }

    #[test]
    fn operator_reproduces_the_nonlinearity() {
        let grid = Grid::default_for(1).unwrap();
        let gs = closed_form_1d(3.0, 1.0);
        let z = embed_state(&grid, &gs, &[0.0]).unwrap();
        let lz = apply_operator(&z);
        for i in 100..grid.len() - 100 {
            let v = z.values[i];
            assert!((lz.values[i] - v * v * v).abs() < 5.0 * grid.spacing.powi(2));
        }
        let one = Field::from_fn(grid, |_| 1.0);
        assert!((apply_operator(&one).values[grid.center_index()] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn operator_is_symmetric_and_matches_the_form() {
        for dim in 1..=3 {
            let grid = Grid::new(dim, 2.0, 0.25).unwrap();
            let u = random_field(grid, 1);
            let v = random_field(grid, 2);
            let a = l2_dot(&apply_operator(&u), &v);
            let b = l2_dot(&u, &apply_operator(&v));
            assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
            let f = h1_inner(&u, &v).unwrap();
            assert!((f - a).abs() < 1e-10 * a.abs().max(1.0));
            assert!(h1_inner(&u, &u).unwrap() > 0.0);
        }
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let a = Field::zeros(Grid::new(1, 2.0, 0.5).unwrap());
        let b = Field::zeros(Grid::new(1, 2.0, 0.25).unwrap());
        assert!(matches!(h1_inner(&a, &b), Err(Error::GridMismatch(_))));
        assert!(Field::new(*a.grid(), vec![0.0; 3]).is_err());
    }

    #[test]
    fn transform_solver_inverts_the_stencil() {
        for (dim, r, h) in [(1, 3.0, 0.1), (2, 2.0, 0.1), (3, 1.0, 0.125)] {
            let grid = Grid::new(dim, r, h).unwrap();
            let u = random_field(grid, 7);
            let lu = apply_operator(&u);
            let back = SineSolver::new(grid).solve_raw(&lu.values);
            let err = back
                .iter()
                .zip(&u.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-11, "dim {dim}: {err}");
        }
    }

    #[test]
    fn transform_solver_agrees_with_plain_cg() {
        let grid = Grid::new(2, 3.0, 0.1).unwrap();
        let g = random_field(grid, 11);
        let fast = SineSolver::new(grid).solve(&g.values).unwrap();
        let mut out = vec![0.0; grid.len()];
        let slow = crate::linalg::pcg(
            |v, o| apply_stencil(&grid, v, o),
            |v| v.to_vec(),
            &g.values,
            vec![0.0; grid.len()],
            1e-12,
            5000,
        )
        .unwrap();
        apply_stencil(&grid, &slow, &mut out);
        let err = fast
            .iter()
            .zip(&slow)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn riesz_map_of_an_operator_image() {
        let grid = Grid::new(1, 10.0, 0.05).unwrap();
        let gs = closed_form_1d(3.0, 1.0);
        let u0 = embed_state(&grid, &gs, &[0.7]).unwrap();
        let (r, norm) = riesz_dual_norm(&apply_operator(&u0)).unwrap();
        let err = r
            .values
            .iter()
            .zip(&u0.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-10);
        assert!((norm - h1_norm(&u0)).abs() < 1e-10);
        let (z, zn) = riesz_dual_norm(&Field::zeros(grid)).unwrap();
        assert_eq!(zn, 0.0);
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn dual_norm_is_refinement_stable() {
        let gs = closed_form_1d(3.0, 1.0);
        let norm_at = |h: f64| {
            let grid = Grid::new(1, 20.0, h).unwrap();
            let g = sample_translated(&grid, &gs, &[0.0], |z| z.powi(3)).unwrap();
            riesz_dual_norm(&g).unwrap().1
        };
        let (a, b) = (norm_at(0.02), norm_at(0.01));
        assert!(((a - b) / b).abs() < 1e-3);
    }

    #[test]
    fn singular_quadrature_of_an_indicator() {
        let grid = Grid::new(1, 2.0, 0.001).unwrap();
        let f = Field::from_fn(grid, |x| if x[0].abs() <= 1.0 { 1.0 } else { 0.0 });
        let v = singular_quadrature(&f, 0.5).unwrap();
        assert!((v - 4.0).abs() < 1e-2, "{v}");
        assert!(matches!(
            singular_quadrature(&f, 1.0),
            Err(Error::GammaOutOfRange { .. })
        ));
    }

    #[test]
    fn cell_kernel_integrals_match_direct_quadrature() {
        // Polar integration of |x|^{-γ} over the square [-a,a]², by angle.
        let (a, g) = (0.3, 1.2);
        let (x, w) = quad::gauss_legendre(64);
        let quarter = std::f64::consts::FRAC_PI_4;
        let mut s = 0.0;
        for (t, wt) in x.iter().zip(&w) {
            let phi = quarter * (t + 1.0) / 2.0;
            let rho = a / phi.cos();
            s += wt * quarter / 2.0 * rho.powf(2.0 - g) / (2.0 - g);
        }
        let direct = 8.0 * s;
        assert!((cell_kernel_integral(2, a, g) - direct).abs() < 1e-10 * direct);
    }

    #[test]
    fn frames_satisfy_the_symmetry_identities() {
        let grid = Grid::default_for(2).unwrap();
        let gs = solve_ground_state(2, 3.0, 1.0, 1e-10).unwrap();
        let t = tangent_frame(&grid, &gs, &[0.0, 0.0]).unwrap();
        let n11 = h1_inner(&t[0], &t[0]).unwrap();
        let n22 = h1_inner(&t[1], &t[1]).unwrap();
        assert!(h1_inner(&t[0], &t[1]).unwrap().abs() < 1e-6 * n11);
        assert!(((n11 - n22) / n11).abs() < 1e-6);
        assert!(matches!(
            embed_state(&grid, &gs, &[7.0, 0.0]),
            Err(Error::ThetaOutOfRange { .. })
        ));
    }

    #[test]
    fn curvature_frame_matches_differences_of_the_tangent() {
        let grid = Grid::new(2, 6.0, 0.1).unwrap();
        let gs = solve_ground_state(2, 3.0, 1.0, 1e-10).unwrap();
        let th = [0.3, -0.2];
        let c = curvature_frame(&grid, &gs, &th).unwrap();
        let d = 1e-4;
        let tp = tangent_frame(&grid, &gs, &[th[0] + d, th[1]]).unwrap();
        let tm = tangent_frame(&grid, &gs, &[th[0] - d, th[1]]).unwrap();
        for j in 0..2 {
            let worst = (0..grid.len())
                .map(|k| {
                    ((tp[j].values[k] - tm[j].values[k]) / (2.0 * d) - c[0][j].values[k]).abs()
                })
                .fold(0.0, f64::max);
            assert!(worst < 1e-6, "{j}: {worst}");
        }
    }

    #[test]
    fn hat_projection_preserves_mass() {
        let grid = Grid::new(2, 4.0, 0.1).unwrap();
        for sigma in [0.5, 0.03, 0.004] {
            let f = move |r2: f64| (-r2 / (sigma * sigma)).exp();
            let w = hat_projection(&grid, &f, sigma, Some(8.0 * sigma));
            let total: f64 = w.iter().sum();
            let exact = std::f64::consts::PI * sigma * sigma;
            assert!(
                ((total - exact) / exact).abs() < 1e-8,
                "σ={sigma}: {total} vs {exact}"
            );
        }
        let grid1 = Grid::new(1, 3.0, 0.02).unwrap();
        let w = hat_projection(&grid1, &|_| 1.0, 1.0, None);
        // Interior nodes carry h; the box (with its outer half cells) has length 2R + h.
        assert!((w[grid1.center_index()] - 0.02).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 6.02).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn h1_inner_is_symmetric(seed in 0u64..1000) {
            let grid = Grid::new(2, 1.5, 0.1).unwrap();
            let u = random_field(grid, seed);
            let v = random_field(grid, seed + 5000);
            let a = h1_inner(&u, &v).unwrap();
            let b = h1_inner(&v, &u).unwrap();
            prop_assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
            prop_assert!(h1_inner(&u, &u).unwrap() > 0.0);
        }

        #[test]
        fn quadrature_is_exact_for_constants(c in -3.0f64..3.0) {
            let grid = Grid::new(1, 2.0, 0.25).unwrap();
            let f = Field::from_fn(grid, |_| c);
            let exact = c * grid.cell_volume() * grid.len() as f64;
            prop_assert!((quadrature(&f) - exact).abs() < 1e-12);
        }
    }
}
