//! Run configuration, manifests, and the on-disk formats: binary and CSV
//! fields, `branch.csv`, grid strings, and plot tables.

use crate::error::{Error, Result};
use crate::fit::geometric_grid;
use crate::functional::{check_eps_grid, GammaProfile};
use crate::grid::{Field, Grid};
use crate::groundstate::GroundState;
use crate::problem::{CoefficientSpec, PerturbationCase, ProblemSpec};
use crate::reduction::{BranchPoint, ReductionConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Largest number of shifts a theta-grid string may expand to.
pub const MAX_THETA_SAMPLES: usize = 1_000_000;
/// Largest number of entries in an ε-grid string.
pub const MAX_EPS_SAMPLES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifyLevel {
    #[default]
    Fast,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    #[serde(rename = "R")]
    pub half_width: f64,
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub ground_state: f64,
    pub newton: f64,
    pub pde: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            ground_state: 1e-10,
            newton: 1e-10,
            pde: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyToggles {
    pub level: VerifyLevel,
    /// Criteria to run; all when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub criteria: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_start: Option<Vec<f64>>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default)]
    pub verify: VerifyToggles,
}

fn default_delta() -> f64 {
    1.0
}

/// `N = 1, p = 3, q = 5, A = 1`, Gaussian `a - A` with unit integral and a
/// Gaussian `b`.
pub fn canonical_problem() -> ProblemSpec {
    ProblemSpec {
        dim: 1,
        p: 3.0,
        q: 5.0,
        amplitude: 1.0,
        a: CoefficientSpec::gaussian(1.0 / std::f64::consts::PI.sqrt(), 1.0),
        b: CoefficientSpec::gaussian(1.0, 1.0),
        case: PerturbationCase::L1Case,
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: canonical_problem(),
            grid: None,
            eps_grid: None,
            tolerances: Tolerances::default(),
            theta_start: None,
            delta: 1.0,
            output: None,
            verify: VerifyToggles::default(),
        }
    }
}

/// Default ε grid: `0.4·2^{-k}` with seven samples in one dimension, five
/// otherwise.
pub fn default_eps_grid(dim: usize) -> Vec<f64> {
    geometric_grid(0.4, if dim == 1 { 7 } else { 5 })
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Structural checks; admissibility of the problem itself is left to
    /// [`crate::problem::validate`].
    pub fn check(&self) -> Result<()> {
        let t = &self.tolerances;
        for (name, v) in [
            ("ground_state", t.ground_state),
            ("newton", t.newton),
            ("pde", t.pde),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "tolerance {name} = {v} must be positive"
                )));
            }
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "delta = {} must be positive",
                self.delta
            )));
        }
        if let Some(e) = &self.eps_grid {
            check_eps_grid(e)?;
        }
        if let Some(t) = &self.theta_start {
            if t.len() != self.problem.dim || t.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(
                    "theta_start must be a finite N-vector".into(),
                ));
            }
        }
        if let Some(g) = &self.grid {
            Grid::new(self.problem.dim.clamp(1, 3), g.half_width, g.h)?;
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        match &self.grid {
            Some(g) => Grid::new(self.problem.dim, g.half_width, g.h),
            None => Grid::default_for(self.problem.dim),
        }
    }

    pub fn eps_grid(&self) -> Vec<f64> {
        self.eps_grid
            .clone()
            .unwrap_or_else(|| default_eps_grid(self.problem.dim))
    }

    pub fn theta_start(&self) -> Vec<f64> {
        self.theta_start
            .clone()
            .unwrap_or_else(|| vec![0.0; self.problem.dim])
    }

    pub fn reduction_config(&self) -> ReductionConfig {
        ReductionConfig {
            newton_tol: self.tolerances.newton,
            pde_tol: self.tolerances.pde,
            delta: self.delta,
            ..ReductionConfig::default()
        }
    }

    /// SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(&serde_json::to_vec(self)?))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
}

/// Everything needed to reproduce a run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub grid: Grid,
    pub reduction: ReductionConfig,
    pub files: Vec<FileDigest>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Result<Self> {
        Ok(Self {
            tool: "bifurc".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash: config.hash()?,
            config: config.clone(),
            grid: config.grid()?,
            reduction: config.reduction_config(),
            files: Vec::new(),
        })
    }

    pub fn record(&mut self, name: &str, bytes: &[u8]) {
        self.files.push(FileDigest {
            name: name.into(),
            sha256: sha256_hex(bytes),
        });
    }
}

// Binary fields: u32 N, f64 R, f64 h, then row-major f64 values, all
// little-endian.

const FIELD_HEADER: usize = 4 + 8 + 8;

pub fn encode_field(f: &Field) -> Vec<u8> {
    let g = f.grid();
    let mut out = Vec::with_capacity(FIELD_HEADER + 8 * g.len());
    out.extend_from_slice(&(g.dim as u32).to_le_bytes());
    out.extend_from_slice(&g.half_width.to_le_bytes());
    out.extend_from_slice(&g.spacing.to_le_bytes());
    for v in f.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_field(bytes: &[u8]) -> Result<Field> {
    if bytes.len() < FIELD_HEADER {
        return Err(Error::Parse(format!(
            "field header needs {FIELD_HEADER} bytes, got {}",
            bytes.len()
        )));
    }
    let dim = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let half_width = f64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes"));
    let spacing = f64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let grid = Grid::new(dim, half_width, spacing)
        .map_err(|e| Error::Parse(format!("field header: {e}")))?;
    let body = &bytes[FIELD_HEADER..];
    if body.len() != 8 * grid.len() {
        return Err(Error::Parse(format!(
            "field body has {} bytes, grid needs {}",
            body.len(),
            8 * grid.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Field::new(grid, values).map_err(|e| Error::Parse(format!("field values: {e}")))
}

/// `x,value` rows for a one-dimensional field.
pub fn field_csv(f: &Field) -> Result<String> {
    let g = f.grid();
    if g.dim != 1 {
        return Err(Error::InvalidArgument(
            "CSV export is for N = 1 fields".into(),
        ));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "value"])?;
    for (i, v) in f.values().iter().enumerate() {
        w.write_record([g.coord(i).to_string(), v.to_string()])?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

// branch.csv

/// One parsed row of `branch.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRow {
    pub eps: f64,
    pub lambda: f64,
    pub theta: Vec<f64>,
    pub w_h1: f64,
    pub energy: f64,
    pub energy_remainder: f64,
    pub gamma_theta: f64,
    pub psi_l2: f64,
    pub psi_h1: f64,
    pub psi_linf: f64,
    pub pde_residual: f64,
    pub morse_index: Option<usize>,
}

impl BranchRow {
    /// Failed points are written with non-finite residuals.
    pub fn accepted(&self) -> bool {
        self.pde_residual.is_finite()
    }
}

fn branch_header(dim: usize) -> Vec<String> {
    let mut h = vec!["eps".to_string(), "lambda".to_string()];
    h.extend((1..=dim).map(|i| format!("theta_{i}")));
    h.extend(
        [
            "w_h1",
            "energy",
            "energy_remainder",
            "gamma_theta",
            "psi_l2",
            "psi_h1",
            "psi_linf",
            "pde_residual",
            "morse_index",
        ]
        .map(String::from),
    );
    h
}

impl From<&BranchPoint> for BranchRow {
    fn from(b: &BranchPoint) -> Self {
        Self {
            eps: b.eps,
            lambda: b.lambda,
            theta: b.theta.clone(),
            w_h1: b.w_norm_h1,
            energy: b.energy,
            energy_remainder: b.energy_remainder,
            gamma_theta: b.gamma_at_theta,
            psi_l2: b.psi_l2,
            psi_h1: b.psi_h1,
            psi_linf: b.psi_linf,
            pde_residual: b.pde_residual,
            morse_index: b.morse_index,
        }
    }
}

pub fn write_branch_csv(rows: &[BranchRow], dim: usize) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(branch_header(dim))?;
    for r in rows {
        let mut rec = vec![r.eps.to_string(), r.lambda.to_string()];
        if r.theta.is_empty() {
            rec.extend((0..dim).map(|_| f64::NAN.to_string()));
        } else if r.theta.len() == dim {
            rec.extend(r.theta.iter().map(f64::to_string));
        } else {
            return Err(Error::InvalidArgument("shift length differs from N".into()));
        }
        rec.extend(
            [
                r.w_h1,
                r.energy,
                r.energy_remainder,
                r.gamma_theta,
                r.psi_l2,
                r.psi_h1,
                r.psi_linf,
                r.pde_residual,
            ]
            .iter()
            .map(f64::to_string),
        );
        rec.push(r.morse_index.map(|m| m.to_string()).unwrap_or_default());
        w.write_record(&rec)?;
    }
    finish(w)
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("{what}: cannot parse {s:?}")))
}

pub fn parse_branch_csv(text: &str) -> Result<Vec<BranchRow>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::Parse(format!("branch header: {e}")))?
        .iter()
        .map(String::from)
        .collect();
    let dim = header.iter().filter(|h| h.starts_with("theta_")).count();
    if !(1..=3).contains(&dim) || header != branch_header(dim) {
        return Err(Error::Parse(format!("unexpected branch header {header:?}")));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("branch row {line}: {e}")))?;
        if rec.len() != header.len() {
            return Err(Error::Parse(format!(
                "branch row {line} has {} fields",
                rec.len()
            )));
        }
        let f = |i: usize| parse_f64(&rec[i], &header[i]);
        let theta: Vec<f64> = (0..dim).map(|i| f(2 + i)).collect::<Result<_>>()?;
        let k = 2 + dim;
        let mi = rec[k + 8].trim();
        rows.push(BranchRow {
            eps: f(0)?,
            lambda: f(1)?,
            theta: if theta.iter().all(|t| t.is_nan()) {
                Vec::new()
            } else {
                theta
            },
            w_h1: f(k)?,
            energy: f(k + 1)?,
            energy_remainder: f(k + 2)?,
            gamma_theta: f(k + 3)?,
            psi_l2: f(k + 4)?,
            psi_h1: f(k + 5)?,
            psi_linf: f(k + 6)?,
            pde_residual: f(k + 7)?,
            morse_index: if mi.is_empty() {
                None
            } else {
                Some(
                    mi.parse()
                        .map_err(|_| Error::Parse(format!("morse_index {mi:?}")))?,
                )
            },
        });
    }
    Ok(rows)
}

// Grid strings

/// `"0.4,0.2,0.1"` or `"FIRST:COUNT"` for `FIRST·2^{-k}`, `k < COUNT`.
pub fn parse_eps_grid(s: &str) -> Result<Vec<f64>> {
    let s = s.trim();
    let eps = if let Some((first, count)) = s.split_once(':') {
        let first = parse_f64(first, "eps-grid start")?;
        let count: usize = count
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("eps-grid count {count:?}")))?;
        if count == 0 || count > MAX_EPS_SAMPLES {
            return Err(Error::Parse(format!(
                "eps-grid count {count} outside 1..={MAX_EPS_SAMPLES}"
            )));
        }
        geometric_grid(first, count)
    } else {
        let v: Vec<f64> = s
            .split(',')
            .map(|t| parse_f64(t, "eps-grid"))
            .collect::<Result<_>>()?;
        if v.len() > MAX_EPS_SAMPLES {
            return Err(Error::Parse(format!(
                "more than {MAX_EPS_SAMPLES} ε values"
            )));
        }
        v
    };
    check_eps_grid(&eps).map_err(|e| Error::Parse(e.to_string()))?;
    Ok(eps)
}

/// `"LO:HI:COUNT"` for the tensor lattice with `COUNT` points per axis, or
/// `"x,y;x,y"` for explicit shifts.
pub fn parse_theta_grid(s: &str, dim: usize) -> Result<Vec<Vec<f64>>> {
    if !(1..=3).contains(&dim) {
        return Err(Error::Parse(format!("dimension {dim}")));
    }
    let s = s.trim();
    let parts: Vec<&str> = s.split(':').collect();
    let out = if parts.len() == 3 {
        let lo = parse_f64(parts[0], "theta-grid low")?;
        let hi = parse_f64(parts[1], "theta-grid high")?;
        let count: usize = parts[2]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("theta-grid count {:?}", parts[2])))?;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) || count == 0 {
            return Err(Error::Parse(
                "theta-grid needs finite LO ≤ HI and COUNT ≥ 1".into(),
            ));
        }
        let total = (count as u128).checked_pow(dim as u32).unwrap_or(u128::MAX);
        if total > MAX_THETA_SAMPLES as u128 {
            return Err(Error::Parse(format!(
                "theta-grid expands to {total} shifts"
            )));
        }
        let axis: Vec<f64> = (0..count)
            .map(|k| {
                if count == 1 {
                    lo
                } else {
                    lo + (hi - lo) * k as f64 / (count - 1) as f64
                }
            })
            .collect();
        let mut pts: Vec<Vec<f64>> = vec![Vec::new()];
        for _ in 0..dim {
            pts = pts
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |a| {
                        let mut q = p.clone();
                        q.push(*a);
                        q
                    })
                })
                .collect();
        }
        pts
    } else if parts.len() == 1 {
        let pts: Vec<Vec<f64>> = s
            .split(';')
            .map(|pt| {
                pt.split(',')
                    .map(|t| parse_f64(t, "theta"))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        if pts.len() > MAX_THETA_SAMPLES {
            return Err(Error::Parse("too many shifts".into()));
        }
        pts
    } else {
        return Err(Error::Parse(format!("cannot read theta-grid {s:?}")));
    };
    if out
        .iter()
        .any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Parse(format!(
            "every shift needs {dim} finite coordinates"
        )));
    }
    Ok(out)
}

// Plot tables

/// `log_eps,log_<name>` over the accepted points, one row each.
pub fn loglog_csv(
    points: &[BranchPoint],
    name: &str,
    value: fn(&BranchPoint) -> f64,
) -> Result<String> {
    let ok: Vec<&BranchPoint> = points.iter().filter(|b| b.accepted()).collect();
    if ok.is_empty() {
        return Err(Error::MissingArtifact(
            "branch has no accepted points".into(),
        ));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["log_eps".to_string(), format!("log_{name}")])?;
    for b in ok {
        w.write_record([b.eps.ln().to_string(), value(b).abs().ln().to_string()])?;
    }
    finish(w)
}

/// The `(file name, contents)` pairs of a branch's log-log tables.
pub fn emit_plot_data(points: &[BranchPoint]) -> Result<Vec<(String, String)>> {
    let tables: [(&str, fn(&BranchPoint) -> f64); 5] = [
        ("w", |b| b.w_norm_h1),
        ("energy_remainder", |b| b.energy_remainder),
        ("psi_l2", |b| b.psi_l2),
        ("psi_h1", |b| b.psi_h1),
        ("psi_linf", |b| b.psi_linf),
    ];
    tables
        .iter()
        .map(|(name, f)| Ok((format!("loglog_{name}.csv"), loglog_csv(points, name, *f)?)))
        .collect()
}

/// `r,z,dz` rows of a radial profile.
pub fn profile_csv(gs: &GroundState) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["r", "z", "dz"])?;
    for ((r, z), dz) in gs.radii().zip(&gs.profile).zip(&gs.dprofile) {
        w.write_record([r.to_string(), z.to_string(), dz.to_string()])?;
    }
    finish(w)
}

/// `theta_1..theta_N,gamma` rows of a profile.
pub fn gamma_csv(profile: &GammaProfile) -> Result<String> {
    let Some((first, _)) = profile.theta_samples.first() else {
        return Err(Error::MissingArtifact("empty Γ profile".into()));
    };
    let dim = first.len();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut h: Vec<String> = (1..=dim).map(|i| format!("theta_{i}")).collect();
    h.push("gamma".into());
    w.write_record(&h)?;
    for (t, g) in &profile.theta_samples {
        let mut rec: Vec<String> = t.iter().map(f64::to_string).collect();
        rec.push(g.to_string());
        w.write_record(&rec)?;
    }
    finish(w)
}
