//! Problem data for `-Δψ - λψ = a(x)|ψ|^{p-1}ψ + b(x)|ψ|^{q-1}ψ` and the
//! admissibility checks that decide whether the reduction applies.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Parametric coefficient shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientFamily {
    /// `c·exp(-|x|²/σ²)`
    GaussianBump,
    /// `L·(σ² + |x|²)^{-γ/2}`, so that `|x|^γ·value → L`.
    AlgebraicTail,
    /// `c·(1 + cos(π|x|/σ))/2` on `|x| ≤ σ`, zero outside.
    CompactBump,
}

/// One coefficient of the nonlinearity. For `a` this describes the
/// perturbation `a - A`; for `b` it describes `b` itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSpec {
    pub family: CoefficientFamily,
    pub amplitude: f64,
    pub width: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

/// Which hypothesis set on `a` is in force.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationCase {
    /// `a - A` integrable with nonzero integral; order `α = N`.
    L1Case,
    /// `|x|^γ (a - A) → L ≠ 0`; order `α = γ`.
    AlgebraicCase,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    #[serde(rename = "N")]
    pub dim: usize,
    pub p: f64,
    pub q: f64,
    #[serde(rename = "A")]
    pub amplitude: f64,
    pub a: CoefficientSpec,
    pub b: CoefficientSpec,
    pub case: PerturbationCase,
}

/// Predicted behavior of `‖ψ_λ‖_{H¹}` as `λ ↑ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchClass {
    Origin,
    Bounded,
    Infinity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub ok: bool,
    /// Upper integrability threshold for `b`; `+∞` when unrestricted.
    #[serde(with = "extended_real")]
    pub beta_star: f64,
    pub alpha: f64,
    pub subcritical_mass_flag: bool,
    pub violations: Vec<String>,
}

impl CoefficientSpec {
    pub fn gaussian(amplitude: f64, width: f64) -> Self {
        Self {
            family: CoefficientFamily::GaussianBump,
            amplitude,
            width,
            gamma: None,
        }
    }

    pub fn algebraic(amplitude: f64, width: f64, gamma: f64) -> Self {
        Self {
            family: CoefficientFamily::AlgebraicTail,
            amplitude,
            width,
            gamma: Some(gamma),
        }
    }

    pub fn compact(amplitude: f64, width: f64) -> Self {
        Self {
            family: CoefficientFamily::CompactBump,
            amplitude,
            width,
            gamma: None,
        }
    }

    /// Pointwise value at `x` (the perturbation part for `a`).
    pub fn eval(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        self.eval_r2(r2)
    }

    /// Value as a function of `|x|²`.
    pub fn eval_r2(&self, r2: f64) -> f64 {
        let s = self.width;
        match self.family {
            CoefficientFamily::GaussianBump => self.amplitude * (-r2 / (s * s)).exp(),
            CoefficientFamily::AlgebraicTail => {
                let g = self.gamma.unwrap_or(0.0);
                self.amplitude * (s * s + r2).powf(-0.5 * g)
            }
            CoefficientFamily::CompactBump => {
                let r = r2.sqrt();
                if r >= s {
                    0.0
                } else {
                    self.amplitude * 0.5 * (1.0 + (PI * r / s).cos())
                }
            }
        }
    }

    /// Radius beyond which the coefficient vanishes (or is below 1e-28 of its
    /// peak), in the coefficient's own variable.
    pub fn support_radius(&self) -> Option<f64> {
        match self.family {
            CoefficientFamily::GaussianBump => Some(8.0 * self.width),
            CoefficientFamily::CompactBump => Some(self.width),
            CoefficientFamily::AlgebraicTail => None,
        }
    }

    /// `∫ value dx` over `ℝᴺ` when finite.
    pub fn integral(&self, dim: usize) -> Option<f64> {
        let (c, s, n) = (self.amplitude, self.width, dim as f64);
        match self.family {
            CoefficientFamily::GaussianBump => Some(c * (s * PI.sqrt()).powi(dim as i32)),
            CoefficientFamily::CompactBump => match dim {
                1 => Some(c * s),
                2 => Some(c * s * s * (PI / 2.0 - 2.0 / PI)),
                3 => Some(c * s.powi(3) * (2.0 * PI / 3.0 - 4.0 / PI)),
                _ => None,
            },
            CoefficientFamily::AlgebraicTail => {
                let g = self.gamma?;
                if g <= n {
                    return None;
                }
                Some(
                    c * PI.powf(n / 2.0) * s.powf(n - g) * libm::tgamma((g - n) / 2.0)
                        / libm::tgamma(g / 2.0),
                )
            }
        }
    }

    /// Whether the coefficient lies in `L^β(ℝᴺ)`.
    pub fn in_lebesgue(&self, beta: f64, dim: usize) -> bool {
        match self.family {
            CoefficientFamily::GaussianBump | CoefficientFamily::CompactBump => beta > 0.0,
            CoefficientFamily::AlgebraicTail => {
                self.amplitude == 0.0 || beta * self.gamma.unwrap_or(0.0) > dim as f64
            }
        }
    }

    fn well_formed(&self) -> Option<String> {
        if !(self.amplitude.is_finite() && self.width.is_finite() && self.width > 0.0) {
            return Some("amplitude must be finite and width positive".into());
        }
        match (self.family, self.gamma) {
            (CoefficientFamily::AlgebraicTail, None) => Some("algebraic tail needs gamma".into()),
            (CoefficientFamily::AlgebraicTail, Some(g)) if !(g.is_finite() && g > 0.0) => {
                Some("gamma must be positive".into())
            }
            _ => None,
        }
    }
}

impl ProblemSpec {
    /// `2(q-p)/(p-1)`, the scaling exponent of the `b` term.
    pub fn b_exponent(&self) -> f64 {
        2.0 * (self.q - self.p) / (self.p - 1.0)
    }

    /// Perturbation order `α`.
    pub fn alpha(&self) -> f64 {
        match self.case {
            PerturbationCase::L1Case => self.dim as f64,
            PerturbationCase::AlgebraicCase => self.a.gamma.unwrap_or(f64::NAN),
        }
    }

    /// `S = ∫(a - A)` in the integrable case.
    pub fn s_integral(&self) -> Option<f64> {
        self.a.integral(self.dim)
    }
}

/// Checks the exponent window, the hypotheses on `a` for the selected case,
/// and the integrability requirements on `b`.
pub fn validate(spec: &ProblemSpec) -> AdmissibilityReport {
    let mut violations = Vec::new();
    let n = spec.dim;
    let nf = n as f64;
    let (p, q) = (spec.p, spec.q);

    if !(1..=3).contains(&n) {
        violations.push("dimension must be 1, 2 or 3".to_string());
    }
    if !(spec.amplitude.is_finite() && spec.amplitude > 0.0) {
        violations.push("A > 0".to_string());
    }
    let exponents_ok = p.is_finite() && q.is_finite() && 1.0 < p && p < q;
    if !exponents_ok {
        violations.push("exponent window 1 < p < q < ∞".to_string());
    } else if n >= 3 && q > (nf + 2.0) / (nf - 2.0) {
        violations.push(format!("exponent window q ≤ {}", (nf + 2.0) / (nf - 2.0)));
    }
    for (name, c) in [("a", &spec.a), ("b", &spec.b)] {
        if let Some(msg) = c.well_formed() {
            violations.push(format!("coefficient {name}: {msg}"));
        }
    }

    let alpha = spec.alpha();
    match spec.case {
        PerturbationCase::L1Case => match spec.a.integral(n) {
            None => violations.push("(a₁)".to_string()),
            Some(s) if s == 0.0 || !s.is_finite() => violations.push("(a₂)".to_string()),
            Some(_) => {}
        },
        PerturbationCase::AlgebraicCase => {
            if spec.a.family != CoefficientFamily::AlgebraicTail {
                violations.push("(a₃) needs an algebraic tail".to_string());
            } else {
                let g = spec.a.gamma.unwrap_or(f64::NAN);
                if !(g > 0.0 && g < nf) {
                    violations.push(format!("(a₃) gamma {g} outside (0, {n})"));
                }
                if spec.a.amplitude == 0.0 {
                    violations.push("(a₃) L ≠ 0".to_string());
                }
            }
            if n > 2 {
                violations.push("algebraic decay needs N ≤ 2".to_string());
            }
        }
    }

    // Threshold shared by (b₂) and (b₃): compare the scale of decay
    // (N or γ) against 2(q-p)/(p-1).
    let mut beta_star = f64::INFINITY;
    if exponents_ok {
        let tau = spec.b_exponent();
        let scale = match spec.case {
            PerturbationCase::L1Case => nf,
            PerturbationCase::AlgebraicCase => alpha,
        };
        let label = match spec.case {
            PerturbationCase::L1Case => "(b₂)",
            PerturbationCase::AlgebraicCase => "(b₃)",
        };
        if scale > tau {
            beta_star = nf * (p - 1.0) / (scale * (p - 1.0) - 2.0 * (q - p));
        }
        if !spec.b.in_lebesgue(2.0 * nf / (nf + 2.0), n) {
            violations.push(format!("{label} b ∈ L^(2N/(N+2))"));
        }
        if scale >= tau {
            // Need some β in [1, β*) with b ∈ L^β. Bumps lie in every L^β;
            // a tail of rate γ_b lies in L^β exactly for β > N/γ_b.
            let fails = match spec.b.family {
                CoefficientFamily::AlgebraicTail if spec.b.amplitude != 0.0 => {
                    let t = nf / spec.b.gamma.unwrap_or(0.0);
                    t >= 1.0 && t >= beta_star
                }
                _ => false,
            };
            if fails {
                violations.push(format!("{label} β-integrability below β* = {beta_star}"));
            }
        }
    }

    let subcritical_mass_flag = exponents_ok && p < 1.0 + 4.0 / nf;
    AdmissibilityReport {
        ok: violations.is_empty(),
        beta_star,
        alpha,
        subcritical_mass_flag,
        violations,
    }
}

/// Sign of `4/(p-1) - N` decides where the `H¹` branch goes.
pub fn classify_branch(dim: usize, p: f64) -> BranchClass {
    let d = 4.0 / (p - 1.0) - dim as f64;
    if d.abs() <= 1e-12 {
        BranchClass::Bounded
    } else if d > 0.0 {
        BranchClass::Origin
    } else {
        BranchClass::Infinity
    }
}

mod extended_real {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            Repr::Text(if *v > 0.0 { "inf" } else { "-inf" }.into()).serialize(s)
        } else {
            Repr::Num(*v).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                _ => Err(serde::de::Error::custom(format!("bad extended real {t}"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn l1_spec(n: usize, p: f64, q: f64) -> ProblemSpec {
        ProblemSpec {
            dim: n,
            p,
            q,
            amplitude: 1.0,
            a: CoefficientSpec::gaussian(1.0, 1.0),
            b: CoefficientSpec::gaussian(1.0, 1.0),
            case: PerturbationCase::L1Case,
        }
    }

    #[test]
    fn beta_star_finite_threshold() {
        let r = validate(&l1_spec(3, 2.0, 3.0));
        assert!(r.ok, "{:?}", r.violations);
        assert!((r.beta_star - 3.0).abs() < 1e-14);
    }

    #[test]
    fn beta_star_infinite_at_equality() {
        let r = validate(&l1_spec(2, 2.0, 3.0));
        assert!(r.beta_star.is_infinite());
    }

    #[test]
    fn zero_integral_fails_a2() {
        let mut s = l1_spec(1, 3.0, 5.0);
        s.a.amplitude = 0.0;
        let r = validate(&s);
        assert!(!r.ok);
        assert!(r.violations.iter().any(|v| v == "(a₂)"));
    }

    #[test]
    fn exponent_window_in_three_dimensions() {
        let r = validate(&l1_spec(3, 3.0, 5.5));
        assert!(!r.ok);
        assert!(r.violations[0].starts_with("exponent window"));
        assert!(validate(&l1_spec(3, 3.0, 5.0)).ok);
    }

    #[test]
    fn algebraic_gamma_window() {
        let mut s = l1_spec(2, 3.0, 5.0);
        s.case = PerturbationCase::AlgebraicCase;
        s.a = CoefficientSpec::algebraic(1.0, 1.0, 2.5);
        assert!(!validate(&s).ok);
        s.a.gamma = Some(1.0);
        let r = validate(&s);
        assert!(r.ok, "{:?}", r.violations);
        assert_eq!(r.alpha, 1.0);
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify_branch(1, 3.0), BranchClass::Origin);
        assert_eq!(classify_branch(2, 3.0), BranchClass::Bounded);
        assert_eq!(classify_branch(3, 4.0), BranchClass::Infinity);
        assert_eq!(classify_branch(1, 5.0), BranchClass::Bounded);
        assert_eq!(classify_branch(1, 6.0), BranchClass::Infinity);
    }

    #[test]
    fn coefficient_values() {
        let g = CoefficientSpec::gaussian(1.0, 1.0);
        assert_eq!(g.eval(&[0.0]), 1.0);
        assert!((g.integral(1).unwrap() - 1.772_453_850_905_516).abs() < 1e-12);
        let t = CoefficientSpec::algebraic(2.0, 1.0, 1.0);
        let x = 1e6;
        assert!((x * t.eval(&[x]) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn integrals_match_radial_quadrature() {
        // Midpoint rule on the radial integral as an independent check.
        let sphere = [2.0, 2.0 * PI, 4.0 * PI];
        let fams = [
            CoefficientSpec::gaussian(0.7, 1.3),
            CoefficientSpec::compact(1.1, 0.8),
            CoefficientSpec::algebraic(1.0, 0.9, 6.5),
        ];
        for c in fams {
            for n in 1..=3usize {
                let m = 400_000;
                let rmax = 400.0;
                let dr = rmax / m as f64;
                let mut sum = 0.0;
                for k in 0..m {
                    let r = (k as f64 + 0.5) * dr;
                    sum += c.eval_r2(r * r) * r.powi(n as i32 - 1) * dr;
                }
                let exact = c.integral(n).unwrap();
                assert!(
                    ((sphere[n - 1] * sum - exact) / exact).abs() < 1e-4,
                    "{c:?} N={n}"
                );
            }
        }
    }

    #[test]
    fn report_serializes_infinite_threshold() {
        let r = validate(&l1_spec(2, 2.0, 3.0));
        let j = serde_json::to_string(&r).unwrap();
        assert!(j.contains("\"inf\""));
        let back: AdmissibilityReport = serde_json::from_str(&j).unwrap();
        assert!(back.beta_star.is_infinite());
    }

    proptest! {
        #[test]
        fn alpha_matches_case(n in 1usize..=3, p in 1.1f64..3.0, dq in 0.05f64..1.0) {
            let s = l1_spec(n, p, p + dq);
            let r = validate(&s);
            prop_assert_eq!(r.alpha, n as f64);
            prop_assert!(r.alpha > 0.0 && r.alpha <= n as f64);
            prop_assert_eq!(r.subcritical_mass_flag, classify_branch(n, p) == BranchClass::Origin);
        }

        #[test]
        fn beta_star_grows_with_q(n in 1usize..=3, p in 1.5f64..3.0, dq in 0.01f64..0.2) {
            // β* = N(p-1)/(N(p-1) - 2(q-p)) on its finite branch.
            let tau = |q: f64| 2.0 * (q - p) / (p - 1.0);
            let q1 = p + dq;
            let q2 = p + 1.5 * dq;
            prop_assume!(tau(q2) < n as f64);
            let b1 = validate(&l1_spec(n, p, q1)).beta_star;
            let b2 = validate(&l1_spec(n, p, q2)).beta_star;
            prop_assert!(b2 > b1);
        }

        #[test]
        fn validate_is_deterministic(n in 1usize..=3, p in 1.01f64..6.0, q in 1.01f64..8.0) {
            let s = l1_spec(n, p, q);
            prop_assert_eq!(validate(&s), validate(&s));
        }
    }
}
