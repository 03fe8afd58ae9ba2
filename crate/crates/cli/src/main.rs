use anyhow::{bail, Context, Result};
use bifurc::functional::Functional;
use bifurc::groundstate::ground_state_for;
use bifurc::io::{self, BranchRow, GridParams, Manifest, RunConfig, VerifyLevel};
use bifurc::morse;
use bifurc::problem::{self, PerturbationCase, ProblemSpec};
use bifurc::reduction::{asymptotic_report, Reducer};
use bifurc::verify::Verifier;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(
    name = "bifurc",
    version,
    about = "Bifurcation from the essential spectrum by finite-dimensional reduction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the radial ground state and write its profile.
    Groundstate(Common),
    /// Tabulate the limit functional over a lattice of shifts.
    Gamma {
        #[command(flatten)]
        common: Common,
        /// `LO:HI:COUNT` per axis, or explicit shifts `x,y;x,y`.
        #[arg(long, allow_hyphen_values = true)]
        theta_grid: Option<String>,
    },
    /// Sweep the branch over the ε grid.
    Branch {
        #[command(flatten)]
        common: Common,
        /// Write each accepted state as a binary field.
        #[arg(long)]
        dump_fields: bool,
    },
    /// Morse indices along a swept branch.
    Morse {
        /// Directory written by `bifurc branch`.
        #[arg(long)]
        branch: PathBuf,
        /// Report file; defaults to `morse.json` in the branch directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance criteria and write a JSON verdict.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        verify_level: Option<Level>,
    },
}

#[derive(Args)]
struct Common {
    /// Run configuration (or a bare problem) as JSON; the canonical problem
    /// when absent.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory (a file for `verify`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// `a,b,c` or `FIRST:COUNT` for `FIRST·2^-k`.
    #[arg(long, allow_hyphen_values = true)]
    eps_grid: Option<String>,
    #[arg(long)]
    grid_h: Option<f64>,
    #[arg(long = "grid-R")]
    grid_r: Option<f64>,
    /// Newton tolerance on the dual-norm residual.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, value_enum)]
    case: Option<Case>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Case {
    L1,
    Algebraic,
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    Fast,
    Full,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.spec {
        None => RunConfig::default(),
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            match RunConfig::from_json(&text) {
                Ok(c) => c,
                Err(first) => match serde_json::from_str::<ProblemSpec>(&text) {
                    Ok(problem) => RunConfig {
                        problem,
                        ..RunConfig::default()
                    },
                    Err(_) => return Err(first.into()),
                },
            }
        }
    };
    if let Some(s) = &common.eps_grid {
        cfg.eps_grid = Some(io::parse_eps_grid(s)?);
    }
    if common.grid_h.is_some() || common.grid_r.is_some() {
        let base = cfg.grid()?;
        cfg.grid = Some(GridParams {
            half_width: common.grid_r.unwrap_or(base.half_width),
            h: common.grid_h.unwrap_or(base.spacing),
        });
    }
    if let Some(t) = common.tol {
        cfg.tolerances.newton = t;
    }
    if let Some(c) = common.case {
        cfg.problem.case = match c {
            Case::L1 => PerturbationCase::L1Case,
            Case::Algebraic => PerturbationCase::AlgebraicCase,
        };
    }
    cfg.check()?;
    let report = problem::validate(&cfg.problem);
    if !report.ok {
        return Err(bifurc::Error::InvalidArgument(report.violations.join("; ")).into());
    }
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &RunConfig, default: &str) -> Result<PathBuf> {
    let dir = common
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

/// Writes `bytes` and records its digest.
fn emit(dir: &Path, name: &str, bytes: &[u8], manifest: &mut Manifest) -> Result<()> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    manifest.record(name, bytes);
    Ok(())
}

fn finish(dir: &Path, manifest: &Manifest) -> Result<()> {
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(manifest)? + "\n",
    )?;
    Ok(())
}

fn functional(cfg: &RunConfig) -> Result<Arc<Functional>> {
    let p = &cfg.problem;
    let gs = ground_state_for(p.dim, p.p, p.amplitude, cfg.tolerances.ground_state)?;
    Ok(Arc::new(Functional::new(
        p.clone(),
        cfg.grid()?,
        Arc::new(gs),
    )?))
}

fn json(v: &impl serde::Serialize) -> Result<Vec<u8>> {
    Ok((serde_json::to_string_pretty(v)? + "\n").into_bytes())
}

fn groundstate(common: Common) -> Result<bool> {
    let cfg = load_config(&common)?;
    let dir = out_dir(&common, &cfg, "groundstate")?;
    let p = &cfg.problem;
    let gs = ground_state_for(p.dim, p.p, p.amplitude, cfg.tolerances.ground_state)?;
    let mut m = Manifest::new("groundstate", &cfg)?;
    emit(&dir, "groundstate.json", &json(&gs.summary())?, &mut m)?;
    emit(
        &dir,
        "profile.csv",
        io::profile_csv(&gs)?.as_bytes(),
        &mut m,
    )?;
    finish(&dir, &m)?;
    eprintln!("peak {:.12} residual {:.3e}", gs.peak, gs.residual_norm());
    Ok(true)
}

fn default_theta_grid(dim: usize) -> &'static str {
    match dim {
        1 => "-8:8:161",
        2 => "-8:8:33",
        _ => "-4:4:9",
    }
}

fn gamma(common: Common, theta_grid: Option<String>) -> Result<bool> {
    let cfg = load_config(&common)?;
    let dir = out_dir(&common, &cfg, "gamma")?;
    let f = functional(&cfg)?;
    let thetas = io::parse_theta_grid(
        theta_grid
            .as_deref()
            .unwrap_or(default_theta_grid(cfg.problem.dim)),
        cfg.problem.dim,
    )?;
    let profile = f.gamma_profile(&thetas)?;
    let mut m = Manifest::new("gamma", &cfg)?;
    emit(
        &dir,
        "gamma.csv",
        io::gamma_csv(&profile)?.as_bytes(),
        &mut m,
    )?;
    emit(&dir, "gamma.json", &json(&profile)?, &mut m)?;
    finish(&dir, &m)?;
    eprintln!(
        "extremum at {:?} ({:?})",
        profile.extremum_theta, profile.definiteness
    );
    Ok(true)
}

fn branch(common: Common, dump_fields: bool) -> Result<bool> {
    let cfg = load_config(&common)?;
    let dir = out_dir(&common, &cfg, "branch")?;
    let reducer = Reducer::new(functional(&cfg)?, cfg.reduction_config());
    let br = reducer.solve_branch(&cfg.eps_grid(), &cfg.theta_start(), cfg.delta)?;
    let mut m = Manifest::new("branch", &cfg)?;
    let rows: Vec<BranchRow> = br.points.iter().map(BranchRow::from).collect();
    emit(
        &dir,
        "config.json",
        (cfg.to_json()? + "\n").as_bytes(),
        &mut m,
    )?;
    emit(
        &dir,
        "branch.csv",
        io::write_branch_csv(&rows, cfg.problem.dim)?.as_bytes(),
        &mut m,
    )?;
    emit(&dir, "points.json", &json(&br.points)?, &mut m)?;
    match asymptotic_report(&br.points, &cfg.problem) {
        Ok(rep) => emit(&dir, "report.json", &json(&rep)?, &mut m)?,
        Err(e) => eprintln!("no asymptotic report: {e}"),
    }
    if br.points.iter().any(|b| b.accepted()) {
        for (name, text) in io::emit_plot_data(&br.points)? {
            emit(&dir, &name, text.as_bytes(), &mut m)?;
        }
    }
    if dump_fields {
        for (k, state) in br.states.iter().enumerate() {
            if let Some(u) = state {
                emit(
                    &dir,
                    &format!("fields/u_{k:02}.bin"),
                    &io::encode_field(u),
                    &mut m,
                )?;
            }
        }
    }
    finish(&dir, &m)?;
    let failed: Vec<String> = br
        .points
        .iter()
        .filter(|b| !b.accepted())
        .map(|b| format!("ε = {}", b.eps))
        .collect();
    for b in &br.points {
        eprintln!(
            "ε = {:<10} θ = {:?} residual {:.3e}",
            b.eps, b.theta, b.pde_residual
        );
    }
    if !failed.is_empty() {
        eprintln!("failed points: {}", failed.join(", "));
    }
    Ok(failed.is_empty())
}

fn morse_cmd(branch_dir: PathBuf, out: Option<PathBuf>) -> Result<bool> {
    let cfg_text =
        fs::read_to_string(branch_dir.join("config.json")).context("reading config.json")?;
    let cfg = RunConfig::from_json(&cfg_text)?;
    let csv_path = branch_dir.join("branch.csv");
    let mut rows =
        io::parse_branch_csv(&fs::read_to_string(&csv_path).context("reading branch.csv")?)?;
    let func = functional(&cfg)?;
    let reducer = Reducer::new(func.clone(), cfg.reduction_config());
    let spectrum = morse::unperturbed_spectrum(&func, cfg.problem.dim + 3)?;
    let mut reports = Vec::new();
    let mut ok = true;
    for row in rows.iter_mut().filter(|r| r.accepted()) {
        let outcome = reducer
            .solve_w(row.eps, &row.theta)
            .and_then(|s| morse::perturbed_index(&func, row.eps, &s.u, &row.theta, &spectrum));
        match outcome {
            Ok(rep) => {
                row.morse_index = Some(rep.index_u_eps);
                reports.push(serde_json::to_value(&rep)?);
            }
            Err(e) => {
                ok = false;
                row.morse_index = None;
                eprintln!("ε = {}: {}: {e}", row.eps, e.code());
                reports.push(serde_json::json!({"eps": row.eps, "error": e.code(), "message": e.to_string()}));
            }
        }
    }
    fs::write(&csv_path, io::write_branch_csv(&rows, cfg.problem.dim)?)?;
    let out = out.unwrap_or_else(|| branch_dir.join("morse.json"));
    let doc = serde_json::json!({"unperturbed": spectrum, "points": reports});
    fs::write(&out, json(&doc)?)?;
    eprintln!(
        "m0 = {}, near-kernel dimension = {}",
        spectrum.m0, spectrum.near_kernel_dim
    );
    Ok(ok)
}

fn verify(common: Common, level: Option<Level>) -> Result<bool> {
    let mut cfg = load_config(&common)?;
    if let Some(l) = level {
        cfg.verify.level = match l {
            Level::Fast => VerifyLevel::Fast,
            Level::Full => VerifyLevel::Full,
        };
    }
    let verdict = Verifier::new(cfg)?.run()?;
    for c in &verdict.criteria {
        eprintln!("{}", c.line());
    }
    let text = serde_json::to_string_pretty(&verdict)? + "\n";
    match &common.out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, text)?;
        }
        None => print!("{text}"),
    }
    Ok(verdict.passed)
}

fn threads() -> Result<()> {
    if let Ok(v) = std::env::var("BIFURC_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .with_context(|| format!("BIFURC_THREADS = {v:?}"))?;
        if n == 0 {
            bail!("BIFURC_THREADS must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || -> Result<bool> {
        threads()?;
        match cli.command {
            Command::Groundstate(c) => groundstate(c),
            Command::Gamma { common, theta_grid } => gamma(common, theta_grid),
            Command::Branch {
                common,
                dump_fields,
            } => branch(common, dump_fields),
            Command::Morse { branch, out } => morse_cmd(branch, out),
            Command::Verify {
                common,
                verify_level,
            } => verify(common, verify_level),
        }
    };
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            match e.downcast_ref::<bifurc::Error>() {
                Some(be) => eprintln!("error: {}: {be}", be.code()),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::from(2)
        }
    }
}
