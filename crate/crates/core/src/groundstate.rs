//! Positive radial ground state of `-Δz + z = A z^p` on `ℝᴺ`.
//!
//! The profile is computed by shooting on `z(0)` with an embedded
//! Runge-Kutta 5(4) integrator locked to a uniform radial mesh. Once the two
//! bracketing trajectories separate, the profile is continued by the decaying
//! solution of the linearized equation, matched in value and slope.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Default truncation radius of the radial mesh.
pub const DEFAULT_R_MAX: f64 = 25.0;
/// Default radial mesh spacing.
pub const DEFAULT_DR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundState {
    pub dim: usize,
    pub p: f64,
    pub amplitude: f64,
    pub r_max: f64,
    pub dr: f64,
    /// `z(r_k)` for `r_k = k·dr`.
    pub profile: Vec<f64>,
    /// `z'(r_k)`.
    pub dprofile: Vec<f64>,
    /// `z''(r_k)`, taken from the equation.
    pub d2profile: Vec<f64>,
    pub decay_rate: f64,
    pub peak: f64,
}

/// Summary numbers reported alongside a profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundStateSummary {
    pub dim: usize,
    pub p: f64,
    #[serde(rename = "A")]
    pub amplitude: f64,
    pub peak: f64,
    pub decay_rate: f64,
    pub residual: f64,
    pub l2_norm_sq: f64,
    pub h1_norm_sq: f64,
    pub r_max: f64,
    pub dr: f64,
}

/// Peak of the one-dimensional closed form.
pub fn closed_form_peak(p: f64, amplitude: f64) -> f64 {
    ((p + 1.0) / (2.0 * amplitude)).powf(1.0 / (p - 1.0))
}

/// Samples `z(x) = P·sech^{2/(p-1)}((p-1)x/2)` with exact derivatives.
pub fn closed_form_1d(p: f64, amplitude: f64) -> GroundState {
    closed_form_1d_on(p, amplitude, DEFAULT_R_MAX, DEFAULT_DR)
}

pub fn closed_form_1d_on(p: f64, amplitude: f64, r_max: f64, dr: f64) -> GroundState {
    let peak = closed_form_peak(p, amplitude);
    let m = (r_max / dr).round() as usize;
    let k = 2.0 / (p - 1.0);
    let s = 0.5 * (p - 1.0);
    let mut profile = Vec::with_capacity(m + 1);
    let mut dprofile = Vec::with_capacity(m + 1);
    let mut d2profile = Vec::with_capacity(m + 1);
    for i in 0..=m {
        let r = i as f64 * dr;
        let sech = 1.0 / (s * r).cosh();
        let th = (s * r).tanh();
        let z = peak * sech.powf(k);
        // d/dr sech^k(sr) = -k s tanh · sech^k
        let dz = -k * s * th * z;
        profile.push(z);
        dprofile.push(dz);
        d2profile.push(z - amplitude * z.powf(p));
    }
    let mut gs = GroundState {
        dim: 1,
        p,
        amplitude,
        r_max: m as f64 * dr,
        dr,
        profile,
        dprofile,
        d2profile,
        decay_rate: 1.0,
        peak,
    };
    gs.decay_rate = gs.fit_decay_rate();
    gs
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum Outcome {
    /// Trajectory turned upward before reaching zero: initial value too small.
    Under,
    /// Trajectory crossed zero: initial value too large.
    Over,
}

struct Ode {
    dim: f64,
    p: f64,
    amplitude: f64,
}

impl Ode {
    fn rhs(&self, r: f64, y: [f64; 2]) -> [f64; 2] {
        let (z, w) = (y[0], y[1]);
        let nonlin = self.amplitude * z.abs().powf(self.p - 1.0) * z;
        if r == 0.0 {
            [w, (z - nonlin) / self.dim]
        } else {
            [w, z - nonlin - (self.dim - 1.0) / r * w]
        }
    }

    /// One Dormand-Prince step; returns the new state and an error estimate.
    fn dopri_step(&self, r: f64, y: [f64; 2], h: f64) -> ([f64; 2], f64) {
        const C: [f64; 6] = [0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
        const A2: [f64; 1] = [0.2];
        const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
        const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
        const A5: [f64; 4] = [
            19372.0 / 6561.0,
            -25360.0 / 2187.0,
            64448.0 / 6561.0,
            -212.0 / 729.0,
        ];
        const A6: [f64; 5] = [
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
        ];
        const B5: [f64; 6] = [
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
        ];
        const E: [f64; 7] = [
            35.0 / 384.0 - 5179.0 / 57600.0,
            0.0,
            500.0 / 1113.0 - 7571.0 / 16695.0,
            125.0 / 192.0 - 393.0 / 640.0,
            -2187.0 / 6784.0 + 92097.0 / 339200.0,
            11.0 / 84.0 - 187.0 / 2100.0,
            -1.0 / 40.0,
        ];
        let comb = |ks: &[[f64; 2]], a: &[f64]| -> [f64; 2] {
            let mut out = y;
            for (k, c) in ks.iter().zip(a) {
                out[0] += h * c * k[0];
                out[1] += h * c * k[1];
            }
            out
        };
        let mut ks: Vec<[f64; 2]> = Vec::with_capacity(7);
        ks.push(self.rhs(r, y));
        ks.push(self.rhs(r + C[0] * h, comb(&ks, &A2)));
        ks.push(self.rhs(r + C[1] * h, comb(&ks, &A3)));
        ks.push(self.rhs(r + C[2] * h, comb(&ks, &A4)));
        ks.push(self.rhs(r + C[3] * h, comb(&ks, &A5)));
        ks.push(self.rhs(r + C[4] * h, comb(&ks, &A6)));
        let y5 = comb(&ks, &B5);
        ks.push(self.rhs(r + h, y5));
        let mut err = [0.0; 2];
        for (k, e) in ks.iter().zip(E.iter()) {
            err[0] += h * e * k[0];
            err[1] += h * e * k[1];
        }
        (y5, err[0].abs().max(err[1].abs()))
    }

    /// Advances across one mesh interval, halving the step until the local
    /// error estimate meets `tol` (scaled by the state size).
    fn advance(&self, r: f64, y: [f64; 2], h: f64, tol: f64, depth: u32) -> [f64; 2] {
        let (y1, err) = self.dopri_step(r, y, h);
        let scale = 1.0 + y[0].abs().max(y[1].abs());
        if err <= tol * scale || depth >= 12 {
            return y1;
        }
        let mid = self.advance(r, y, 0.5 * h, tol, depth + 1);
        self.advance(r + 0.5 * h, mid, 0.5 * h, tol, depth + 1)
    }
}

struct Shooter {
    ode: Ode,
    dr: f64,
    steps: usize,
    tol: f64,
}

impl Shooter {
    /// Integrates until the trajectory's fate is clear.
    fn classify(&self, z0: f64) -> Outcome {
        let mut y = [z0, 0.0];
        for k in 0..self.steps {
            let r = k as f64 * self.dr;
            y = self.ode.advance(r, y, self.dr, self.tol, 0);
            if y[0] < 0.0 {
                return Outcome::Over;
            }
            if y[1] > 0.0 {
                return Outcome::Under;
            }
        }
        if y[0] + y[1] < 0.0 {
            Outcome::Over
        } else {
            Outcome::Under
        }
    }

    /// Full trajectory on the mesh, stopping early if it turns or crosses.
    fn trajectory(&self, z0: f64, upto: usize) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(upto + 1);
        let mut y = [z0, 0.0];
        out.push(y);
        for k in 0..upto {
            let r = k as f64 * self.dr;
            y = self.ode.advance(r, y, self.dr, self.tol, 0);
            out.push(y);
        }
        out
    }
}

/// Decaying radial solution of `-φ'' - (N-1)/r φ' + φ = 0`, up to a constant:
/// `r^{-(N-2)/2} K_{|N-2|/2}(r)`, via its large-argument expansion.
/// Returns `(log φ, φ'/φ)` up to an additive constant in the logarithm.
fn linear_tail(dim: usize, r: f64) -> (f64, f64) {
    let nu = (dim as f64 - 2.0).abs() / 2.0;
    let mu = 4.0 * nu * nu;
    let mut term = 1.0;
    let mut s = 1.0;
    let mut ds = 0.0;
    for k in 1..=12 {
        let kf = k as f64;
        term *= (mu - (2.0 * kf - 1.0).powi(2)) / (kf * 8.0);
        if term == 0.0 {
            break;
        }
        s += term / r.powi(k);
        ds -= kf * term / r.powi(k + 1);
    }
    let nf = dim as f64;
    let log_phi = -(nf - 1.0) / 2.0 * r.ln() - r + s.ln();
    let dlog = -(nf - 1.0) / (2.0 * r) - 1.0 + ds / s;
    (log_phi, dlog)
}

/// Multiplier on the one-dimensional peak bounding the shooting bracket
/// from above, per dimension.
fn bracket_factor(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => 4.0,
        _ => 8.0,
    }
}

/// The closed form in one dimension, shooting otherwise.
pub fn ground_state_for(dim: usize, p: f64, amplitude: f64, tol: f64) -> Result<GroundState> {
    if dim == 1 {
        if !(p > 1.0 && p.is_finite() && amplitude > 0.0 && amplitude.is_finite()) {
            return Err(Error::InvalidArgument(format!("p = {p}, A = {amplitude}")));
        }
        Ok(closed_form_1d(p, amplitude))
    } else {
        solve_ground_state(dim, p, amplitude, tol)
    }
}

/// Bisection shooting for the ground state. `tol` is the per-interval local
/// error tolerance of the integrator.
pub fn solve_ground_state(dim: usize, p: f64, amplitude: f64, tol: f64) -> Result<GroundState> {
    solve_ground_state_on(dim, p, amplitude, tol, DEFAULT_R_MAX, DEFAULT_DR)
}

pub fn solve_ground_state_on(
    dim: usize,
    p: f64,
    amplitude: f64,
    tol: f64,
    r_max: f64,
    dr: f64,
) -> Result<GroundState> {
    if !(1..=3).contains(&dim) {
        return Err(Error::InvalidArgument(format!("dimension {dim}")));
    }
    if !(p > 1.0 && p.is_finite() && amplitude > 0.0 && amplitude.is_finite()) {
        return Err(Error::InvalidArgument(format!("p = {p}, A = {amplitude}")));
    }
    if dim == 3 && p >= 5.0 {
        return Err(Error::InvalidArgument("p must be subcritical".into()));
    }
    if !(tol > 0.0 && r_max > 0.0 && dr > 0.0 && dr < r_max) {
        return Err(Error::InvalidArgument(
            "tolerance and mesh must be positive".into(),
        ));
    }
    let steps = (r_max / dr).round() as usize;
    let shooter = Shooter {
        ode: Ode {
            dim: dim as f64,
            p,
            amplitude,
        },
        dr,
        steps,
        tol: tol.min(1e-10) * 1e-3,
    };

    let p1 = closed_form_peak(p, amplitude);
    let (mut lo, mut hi) = (0.5 * p1, bracket_factor(dim) * p1);
    if shooter.classify(lo) != Outcome::Under || shooter.classify(hi) != Outcome::Over {
        return Err(Error::ShootingBracketFailure(format!(
            "no sign change on [{lo}, {hi}] for N={dim}, p={p}, A={amplitude}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match shooter.classify(mid) {
            Outcome::Under => lo = mid,
            Outcome::Over => hi = mid,
        }
    }
    if (hi - lo) > 1e-13 * hi {
        return Err(Error::NonConvergence(format!(
            "bracket width {} after bisection",
            hi - lo
        )));
    }

    let zl = shooter.trajectory(lo, steps);
    let zh = shooter.trajectory(hi, steps);
    let peak_guess = 0.5 * (lo + hi);

    // Splice where the profile has decayed enough, or where the bracketing
    // trajectories have begun to separate.
    let mut splice = None;
    for k in 1..=steps {
        let (a, b) = (zl[k], zh[k]);
        let sep = (b[0] - a[0]).abs();
        if a[0] <= 1e-7 * peak_guess || sep > 1e-3 * a[0].abs() || a[1] > 0.0 || b[0] < 0.0 {
            splice = Some(k);
            break;
        }
    }
    let km = splice.unwrap_or(steps);
    let rm = km as f64 * dr;
    let (a, b) = (zl[km], zh[km]);
    if a[0] > 1e-4 * peak_guess {
        return Err(Error::NonConvergence(format!(
            "trajectories separate at r = {rm} before the profile decays"
        )));
    }
    let (log_phi_m, dlog_m) = linear_tail(dim, rm);
    let kappa = -dlog_m;
    let dz = [b[0] - a[0], b[1] - a[1]];
    let denom = dz[1] + kappa * dz[0];
    let t = if denom.abs() > 0.0 {
        (-(a[1] + kappa * a[0]) / denom).clamp(-1.0, 2.0)
    } else {
        0.5
    };

    let ode = &shooter.ode;
    let mut profile = Vec::with_capacity(steps + 1);
    let mut dprofile = Vec::with_capacity(steps + 1);
    for k in 0..=km {
        profile.push(zl[k][0] + t * (zh[k][0] - zl[k][0]));
        dprofile.push(zl[k][1] + t * (zh[k][1] - zl[k][1]));
    }
    let zm = profile[km];
    for k in km + 1..=steps {
        let r = k as f64 * dr;
        let (lp, dl) = linear_tail(dim, r);
        let z = zm * (lp - log_phi_m).exp();
        profile.push(z);
        dprofile.push(z * dl);
    }
    let d2profile = (0..=steps)
        .map(|k| ode.rhs(k as f64 * dr, [profile[k], dprofile[k]])[1])
        .collect();

    let peak = profile[0];
    let mut gs = GroundState {
        dim,
        p,
        amplitude,
        r_max: steps as f64 * dr,
        dr,
        profile,
        dprofile,
        d2profile,
        decay_rate: 1.0,
        peak,
    };
    gs.decay_rate = gs.fit_decay_rate();
    Ok(gs)
}

impl GroundState {
    /// `z(r)`, quintic Hermite between mesh nodes, exponential tail beyond.
    pub fn eval(&self, r: f64) -> f64 {
        self.eval_all(r).0
    }

    /// `z'(r)`.
    pub fn eval_deriv(&self, r: f64) -> f64 {
        self.eval_all(r).1
    }

    /// `z''(r)`.
    pub fn eval_deriv2(&self, r: f64) -> f64 {
        self.eval_all(r).2
    }

    /// `(z, z', z'')` at radius `r ≥ 0`.
    pub fn eval_all(&self, r: f64) -> (f64, f64, f64) {
        let r = r.abs();
        let last = self.profile.len() - 1;
        if r >= self.r_max {
            let zmax = self.profile[last];
            let k = (self.dim as f64 - 1.0) / 2.0;
            let rate = self.decay_rate;
            let z = zmax * (self.r_max / r).powf(k) * (-rate * (r - self.r_max)).exp();
            let g = -k / r - rate;
            let dz = z * g;
            let d2z = z * (g * g + k / (r * r));
            return (z, dz, d2z);
        }
        let s = r / self.dr;
        let i = (s.floor() as usize).min(last - 1);
        let t = s - i as f64;
        let h = self.dr;
        let (y0, y1) = (self.profile[i], self.profile[i + 1]);
        let (d0, d1) = (self.dprofile[i] * h, self.dprofile[i + 1] * h);
        let (c0, c1) = (self.d2profile[i] * h * h, self.d2profile[i + 1] * h * h);
        let (t2, t3) = (t * t, t * t * t);
        let (t4, t5) = (t3 * t, t3 * t2);
        // Quintic Hermite basis on [0, 1].
        let h0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
        let h1 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
        let h2 = 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5);
        let h5 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
        let h4 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
        let h3 = 0.5 * (t3 - 2.0 * t4 + t5);
        let z = y0 * h0 + d0 * h1 + c0 * h2 + c1 * h3 + d1 * h4 + y1 * h5;

        let g0 = -30.0 * t2 + 60.0 * t3 - 30.0 * t4;
        let g1 = 1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4;
        let g2 = 0.5 * (2.0 * t - 9.0 * t2 + 12.0 * t3 - 5.0 * t4);
        let g5 = 30.0 * t2 - 60.0 * t3 + 30.0 * t4;
        let g4 = -12.0 * t2 + 28.0 * t3 - 15.0 * t4;
        let g3 = 0.5 * (3.0 * t2 - 8.0 * t3 + 5.0 * t4);
        let dz = (y0 * g0 + d0 * g1 + c0 * g2 + c1 * g3 + d1 * g4 + y1 * g5) / h;

        let e0 = -60.0 * t + 180.0 * t2 - 120.0 * t3;
        let e1 = -36.0 * t + 96.0 * t2 - 60.0 * t3;
        let e2 = 0.5 * (2.0 - 18.0 * t + 36.0 * t2 - 20.0 * t3);
        let e5 = 60.0 * t - 180.0 * t2 + 120.0 * t3;
        let e4 = -24.0 * t + 84.0 * t2 - 60.0 * t3;
        let e3 = 0.5 * (6.0 * t - 24.0 * t2 + 20.0 * t3);
        let d2z = (y0 * e0 + d0 * e1 + c0 * e2 + c1 * e3 + d1 * e4 + y1 * e5) / (h * h);
        (z, dz, d2z)
    }

    /// Largest pointwise residual of the radial equation on the mesh, using
    /// sixth-order differences of the stored slope. At `r = 0` the radial
    /// Laplacian is `N z''(0)`.
    pub fn residual_norm(&self) -> f64 {
        let n = self.profile.len();
        let h = self.dr;
        let nf = self.dim as f64;
        // z' is odd in r.
        let dz_at = |k: isize| -> f64 {
            if k < 0 {
                -self.dprofile[(-k) as usize]
            } else {
                self.dprofile[k as usize]
            }
        };
        const W: [f64; 3] = [3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0];
        let mut worst: f64 = 0.0;
        for k in 0..n.saturating_sub(3) {
            let ki = k as isize;
            let mut d2 = 0.0;
            for (j, w) in W.iter().enumerate() {
                let j = j as isize + 1;
                d2 += w * (dz_at(ki + j) - dz_at(ki - j));
            }
            d2 /= h;
            let z = self.profile[k];
            let lap = if k == 0 {
                nf * d2
            } else {
                d2 + (nf - 1.0) / (k as f64 * h) * self.dprofile[k]
            };
            let res = lap - z + self.amplitude * z.abs().powf(self.p - 1.0) * z;
            worst = worst.max(res.abs());
        }
        worst
    }

    /// Least-squares rate of `r^{(N-1)/2} z(r)` over the outer half of the mesh.
    fn fit_decay_rate(&self) -> f64 {
        let k = (self.dim as f64 - 1.0) / 2.0;
        let n = self.profile.len();
        let (mut sx, mut sy, mut sxx, mut sxy, mut m) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in (n / 2..n).step_by(10) {
            let r = i as f64 * self.dr;
            let v = self.profile[i];
            if v <= 0.0 {
                continue;
            }
            let y = (r.powf(k) * v).ln();
            sx += r;
            sy += y;
            sxx += r * r;
            sxy += r * y;
            m += 1.0;
        }
        -(m * sxy - sx * sy) / (m * sxx - sx * sx)
    }

    /// `∫_{ℝᴺ} f(z(|x|), z'(|x|)) dx` by composite Simpson on the mesh.
    pub fn radial_integral(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let n = self.profile.len();
        let m = if n % 2 == 0 { n - 1 } else { n };
        let area = match self.dim {
            1 => 2.0,
            2 => 2.0 * PI,
            _ => 4.0 * PI,
        };
        let mut s = 0.0;
        for i in 0..m {
            let r = i as f64 * self.dr;
            let w = if i == 0 || i == m - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            s += w * f(self.profile[i], self.dprofile[i]) * r.powi(self.dim as i32 - 1);
        }
        area * s * self.dr / 3.0
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.radial_integral(|z, _| z * z)
    }

    pub fn h1_norm_sq(&self) -> f64 {
        self.radial_integral(|z, dz| z * z + dz * dz)
    }

    pub fn summary(&self) -> GroundStateSummary {
        GroundStateSummary {
            dim: self.dim,
            p: self.p,
            amplitude: self.amplitude,
            peak: self.peak,
            decay_rate: self.decay_rate,
            residual: self.residual_norm(),
            l2_norm_sq: self.l2_norm_sq(),
            h1_norm_sq: self.h1_norm_sq(),
            r_max: self.r_max,
            dr: self.dr,
        }
    }

    /// Mesh radii.
    pub fn radii(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.profile.len()).map(move |k| k as f64 * self.dr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sup_diff(a: &GroundState, b: &GroundState) -> f64 {
        a.profile
            .iter()
            .zip(&b.profile)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn closed_form_values() {
        let gs = closed_form_1d(3.0, 1.0);
        assert!((gs.eval(0.0) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(gs.eval_deriv(0.0), 0.0);
        assert!((closed_form_1d(2.0, 1.0).peak - 1.5).abs() < 1e-15);
        assert!((gs.l2_norm_sq() - 4.0).abs() < 1e-9);
        assert!((gs.h1_norm_sq() - 16.0 / 3.0).abs() < 1e-9);
        assert!(gs.residual_norm() < 1e-10, "{}", gs.residual_norm());
        assert!(gs.eval(2.0 * gs.r_max) < 1e-12 * gs.peak);
    }

    #[test]
    fn first_integral_holds() {
        let gs = solve_ground_state(1, 3.0, 1.0, 1e-10).unwrap();
        for (i, (&z, &dz)) in gs.profile.iter().zip(&gs.dprofile).enumerate() {
            let lhs = 0.5 * dz * dz;
            let rhs = 0.5 * z * z - z.powi(4) / 4.0;
            assert!((lhs - rhs).abs() < 1e-8, "at index {i}");
        }
    }

    #[test]
    fn shooting_matches_closed_form() {
        for p in [2.0, 3.0, 4.0] {
            for a in [1.0, 2.0] {
                let s = solve_ground_state(1, p, a, 1e-10).unwrap();
                let c = closed_form_1d(p, a);
                assert!(sup_diff(&s, &c) < 1e-6, "p={p} A={a}: {}", sup_diff(&s, &c));
                assert!(
                    s.residual_norm() < 1e-8,
                    "p={p} A={a}: {}",
                    s.residual_norm()
                );
                assert!((0.95..=1.05).contains(&s.decay_rate));
            }
        }
    }

    #[test]
    fn known_peaks_in_higher_dimensions() {
        let two = solve_ground_state(2, 3.0, 1.0, 1e-10).unwrap();
        assert!(
            (two.peak - 2.206_200_864_669_016).abs() < 1e-7,
            "{}",
            two.peak
        );
        let three = solve_ground_state(3, 3.0, 1.0, 1e-10).unwrap();
        assert!((three.peak - 4.3373).abs() < 1e-3, "{}", three.peak);
        assert!(three.residual_norm() < 1e-8, "{}", three.residual_norm());
        for gs in [&two, &three] {
            assert!((0.95..=1.05).contains(&gs.decay_rate), "{}", gs.decay_rate);
            assert!(*gs.profile.last().unwrap() < 1e-8 * gs.peak);
            assert!(gs.profile.windows(2).all(|w| w[1] < w[0] && w[1] > 0.0));
            assert_eq!(gs.dprofile[0], 0.0);
        }
    }

    #[test]
    fn amplitude_scaling_covariance() {
        for n in [1usize, 2] {
            let g1 = solve_ground_state(n, 3.0, 1.0, 1e-10).unwrap();
            let g2 = solve_ground_state(n, 3.0, 2.0, 1e-10).unwrap();
            let c = 2f64.powf(-1.0 / 2.0);
            let worst = g1
                .profile
                .iter()
                .zip(&g2.profile)
                .map(|(a, b)| (c * a - b).abs())
                .fold(0.0, f64::max);
            assert!(worst < 1e-8, "N={n}: {worst}");
        }
    }

    #[test]
    fn perturbed_peak_has_large_residual() {
        let mut gs = closed_form_1d(3.0, 1.0);
        for v in gs.profile.iter_mut().chain(gs.dprofile.iter_mut()) {
            *v *= 1.01;
        }
        assert!(gs.residual_norm() > 1e-3);
    }

    #[test]
    fn interpolation_is_consistent() {
        let gs = closed_form_1d(3.0, 1.0);
        for &r in &[0.0123f64, 0.5, 1.23456, 7.77] {
            let exact = 2f64.sqrt() / r.cosh();
            assert!((gs.eval(r) - exact).abs() < 1e-14);
            let dexact = -exact * r.tanh();
            assert!((gs.eval_deriv(r) - dexact).abs() < 1e-12);
        }
        // The tail continues smoothly beyond the mesh.
        let r = gs.r_max;
        assert!((gs.eval(r + 1e-9) - gs.eval(r - 1e-9)).abs() < 1e-15);
    }

    #[test]
    fn bracket_failure_is_reported() {
        assert!(matches!(
            solve_ground_state(3, 4.99, 1.0, 1e-10),
            Err(Error::ShootingBracketFailure(_)) | Err(Error::NonConvergence(_))
        ));
    }
}
