//! Command-line front end for the pxlogit solvers and benchmark harness.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;

use pxlogit::data::{self, Loaded};
use pxlogit::diagnostics::verify_theorem1;
use pxlogit::harness::{self, DataSource, Init, DEFAULT_PATH};
use pxlogit::missing::{px_solve_missing, MissingConfig};
use pxlogit::model::weighted_loglik;
use pxlogit::penalty::SCAD_DEFAULT_A;
use pxlogit::{BenchConfig, Dataset, Method, Penalty, PenaltyKind, RaySearchConfig, SolveResult, SolverConfig, SolverKind, WeightMode};

#[derive(Parser)]
#[command(name = "pxlogit", version, about = "Weighted, penalized logistic regression by EM and parameter-expanded EM")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model and print the result as JSON.
    Solve(SolveArgs),
    /// Replicated runs of several methods with trace and summary CSVs.
    Bench(BenchArgs),
    /// Write a synthetic dataset as CSV.
    Gen(GenArgs),
    /// Compare EM and PX-ECME convergence rates at the MLE.
    Diagnose(DiagnoseArgs),
    /// Run EM, PX-ECME and Newton on the built-in seven-point example.
    Table1(Table1Args),
}

#[derive(Clone, Copy, ValueEnum)]
enum PenaltyArg {
    None,
    L1,
    L2,
    ElasticNet,
    Scad,
}

#[derive(Args, Clone)]
struct PenaltyOpts {
    #[arg(long, value_enum, default_value = "none")]
    penalty: PenaltyArg,
    /// L1 strength, or the SCAD threshold.
    #[arg(long, default_value_t = 0.0)]
    lambda1: f64,
    /// Ridge strength.
    #[arg(long, default_value_t = 0.0)]
    lambda2: f64,
    #[arg(long, default_value_t = SCAD_DEFAULT_A)]
    scad_a: f64,
    /// Leave the first coefficient unpenalized.
    #[arg(long)]
    exempt_intercept: bool,
}

impl PenaltyOpts {
    fn kind(&self) -> PenaltyKind {
        match self.penalty {
            PenaltyArg::None => PenaltyKind::None,
            PenaltyArg::L1 => PenaltyKind::L1 { lambda1: self.lambda1 },
            PenaltyArg::L2 => PenaltyKind::L2 { lambda2: self.lambda2 },
            PenaltyArg::ElasticNet => PenaltyKind::ElasticNet {
                lambda1: self.lambda1,
                lambda2: self.lambda2,
            },
            PenaltyArg::Scad => PenaltyKind::Scad {
                lambda: self.lambda1,
                a: self.scad_a,
            },
        }
    }

    fn exempt(&self) -> Vec<usize> {
        if self.exempt_intercept {
            vec![0]
        } else {
            Vec::new()
        }
    }

    fn build(&self) -> Result<Penalty> {
        Ok(Penalty::new(self.kind())?.with_exempt(self.exempt()))
    }
}

#[derive(Args)]
struct SolveArgs {
    /// `y,m,s,x1..xp` CSV; the built-in example when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Solver name, or cd_em / cd_nr for coordinate descent.
    #[arg(long, default_value = "px_ecme")]
    solver: String,
    #[command(flatten)]
    pen: PenaltyOpts,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long, default_value_t = 100_000)]
    max_iter: usize,
    #[arg(long, default_value = "zeros")]
    init: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Coordinates between weight refreshes in coordinate descent.
    #[arg(long)]
    block_size: Option<usize>,
    /// Overrides the weight mode implied by the coordinate-descent name.
    #[arg(long)]
    weight_mode: Option<String>,
    /// Directory for `trace.csv` and `result.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated method names.
    #[arg(long, default_value = "em,px_ecme,mm,px_mm,newton,gd,gpx,gd_backtrack,aa1", value_delimiter = ',')]
    solver: Vec<String>,
    #[command(flatten)]
    pen: PenaltyOpts,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long, default_value_t = 100_000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "zeros")]
    init: String,
    /// Complete `y,m,s,x1..xp` CSV shared by all replications.
    #[arg(long, conflicts_with_all = ["gen", "kyphosis"])]
    data: Option<PathBuf>,
    /// Covariate file with age, number and start columns.
    #[arg(long, conflicts_with = "gen")]
    kyphosis: Option<PathBuf>,
    /// Synthetic generator; the built-in example when no data source is given.
    #[arg(long, value_enum)]
    gen: Option<GenKind>,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    p: usize,
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    /// Draw rate-one exponential weights in every replication.
    #[arg(long)]
    exp_weights: bool,
    /// Comma-separated penalty path, or `default` for the nine-value path.
    #[arg(long)]
    path: Option<String>,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Ar1,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "ar1")]
    gen: GenKind,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    p: usize,
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    exp_weights: bool,
    /// Pseudo-outcomes over this covariate file instead of the generator.
    #[arg(long)]
    kyphosis: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 100_000)]
    max_iter: usize,
    /// Also print the four Jacobian matrices.
    #[arg(long)]
    full: bool,
}

#[derive(Args)]
struct Table1Args {
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long)]
    json: bool,
}

fn parse_init(s: &str) -> Result<Init> {
    Ok(s.parse()?)
}

fn load_data(path: &Option<PathBuf>) -> Result<Loaded> {
    match path {
        None => Ok(Loaded::Complete(data::builtin_table1())),
        Some(p) => data::load_csv(p).with_context(|| format!("loading {}", p.display())),
    }
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

#[derive(Serialize)]
struct SolveReport {
    method: String,
    n: usize,
    p: usize,
    beta: Vec<f64>,
    iterations: usize,
    converged: bool,
    diverged: bool,
    stalled: bool,
    failure: Option<String>,
    final_loglik: f64,
    final_penalized_loglik: f64,
    final_grad_norm: f64,
    elapsed_sec: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<Vec<f64>>,
}

impl SolveReport {
    fn new(method: &str, n: usize, p: usize, r: &SolveResult, gamma: Option<Vec<f64>>) -> Self {
        Self {
            method: method.to_string(),
            n,
            p,
            beta: vec_of(&r.beta),
            iterations: r.iterations,
            converged: r.converged,
            diverged: r.diverged,
            stalled: r.stalled,
            failure: r.failure.clone(),
            final_loglik: r.final_loglik,
            final_penalized_loglik: r.final_penalized_loglik,
            final_grad_norm: r.final_grad_norm,
            elapsed_sec: r.elapsed_sec,
            gamma,
        }
    }
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>, name: &str) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(name), text + "\n")?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_solve(a: SolveArgs) -> Result<()> {
    let mut method: Method = a.solver.parse()?;
    if let (Method::Cd(_), Some(mode)) = (method, &a.weight_mode) {
        method = Method::Cd(mode.parse::<WeightMode>()?);
    }
    let init = parse_init(&a.init)?;
    match load_data(&a.data)? {
        Loaded::Complete(d) => {
            let pen = a.pen.build()?;
            let cfg = BenchConfig {
                tol: a.tol,
                max_iter: a.max_iter,
                block_size: a.block_size,
                ..BenchConfig::default()
            };
            let beta0 = harness::initial_beta(init, d.p(), a.seed);
            let res = harness::run_method(&d, &pen, method, &beta0, &cfg)?;
            if let Some(dir) = &a.out {
                fs::create_dir_all(dir)?;
                fs::write(dir.join("trace.csv"), harness::trace_csv(&res.trace))?;
            }
            emit_json(&SolveReport::new(method.name(), d.n(), d.p(), &res, None), a.out.as_deref(), "result.json")
        }
        Loaded::Missing(md) => {
            let px = match method {
                Method::Solver(SolverKind::Em) => false,
                Method::Solver(SolverKind::PxEcme) => true,
                _ => bail!("files with missing covariates are fitted with em or px_ecme only"),
            };
            if !matches!(a.pen.penalty, PenaltyArg::None) {
                bail!("files with missing covariates are fitted without a penalty");
            }
            let cfg = MissingConfig {
                tol: a.tol,
                max_iter: a.max_iter,
                px,
                ray: RaySearchConfig::default(),
            };
            let beta0 = harness::initial_beta(init, md.p(), a.seed);
            let res = px_solve_missing(&md, &beta0, &md.uniform_gamma(), &cfg)?;
            if let Some(dir) = &a.out {
                fs::create_dir_all(dir)?;
                fs::write(dir.join("trace.csv"), harness::trace_csv(&res.solve.trace))?;
            }
            let report = SolveReport::new(method.name(), md.n(), md.p(), &res.solve, Some(vec_of(&res.gamma)));
            emit_json(&report, a.out.as_deref(), "result.json")
        }
    }
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let methods = a.solver.iter().map(|s| s.parse::<Method>()).collect::<Result<Vec<_>, _>>()?;
    let data = match (&a.data, &a.kyphosis, a.gen) {
        (Some(p), _, _) => DataSource::Csv(p.clone()),
        (_, Some(p), _) => DataSource::Kyphosis(p.clone()),
        (_, _, Some(GenKind::Ar1)) => DataSource::Ar1 { n: a.n, p: a.p, rho: a.rho },
        _ => DataSource::Table1,
    };
    let path = match a.path.as_deref() {
        None => None,
        Some("default") => Some(DEFAULT_PATH.to_vec()),
        Some(list) => Some(
            list.split(',')
                .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad path value '{v}'")))
                .collect::<Result<Vec<_>>>()?,
        ),
    };
    let cfg = BenchConfig {
        methods,
        penalty: a.pen.kind(),
        exempt: a.pen.exempt(),
        tol: a.tol,
        max_iter: a.max_iter,
        replications: a.reps,
        seed: a.seed,
        init: parse_init(&a.init)?,
        data,
        exp_weights: a.exp_weights,
        path,
        block_size: a.block_size,
        ray: RaySearchConfig::default(),
        out_dir: Some(a.out.clone()),
    };
    let out = harness::run_benchmark(&cfg)?;
    print!("{}", harness::summary_csv(&out.summary));
    eprintln!("wrote {} traces and summary.csv to {}", out.records.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct GenReport {
    path: String,
    n: usize,
    p: usize,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta_true: Option<Vec<f64>>,
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let (d, beta): (Dataset, Option<DVector<f64>>) = match &a.kyphosis {
        Some(cov) => (data::gen_kyphosis_outcomes(&harness::load_kyphosis_covariates(cov)?, a.seed)?, None),
        None => match a.gen {
            GenKind::Ar1 => {
                let (d, b) = data::gen_ar1(a.n, a.p, a.rho, a.seed)?;
                (d, Some(b))
            }
        },
    };
    let d = if a.exp_weights {
        let s = data::gen_exp_weights(d.n(), a.seed.wrapping_add(1));
        d.with_weights(s)?
    } else {
        d
    };
    data::write_csv(&d, &a.out)?;
    let report = GenReport {
        path: a.out.display().to_string(),
        n: d.n(),
        p: d.p(),
        seed: a.seed,
        beta_true: beta.as_ref().map(vec_of),
    };
    emit_json(&report, None, "")
}

#[derive(Serialize)]
struct DiagnoseReport {
    beta_star: Vec<f64>,
    grad_norm: f64,
    r_em: f64,
    r_px: f64,
    fd_agreement: f64,
    fd_ok: bool,
    rate_ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    matrices: Option<[Vec<Vec<f64>>; 4]>,
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn cmd_diagnose(a: DiagnoseArgs) -> Result<()> {
    let d = load_data(&a.data)?.complete()?;
    let cfg = SolverConfig {
        tol: a.tol,
        max_iter: a.max_iter,
        ..SolverConfig::default()
    };
    let rep = verify_theorem1(&d, &cfg)?;
    let out = DiagnoseReport {
        beta_star: vec_of(&rep.beta_star),
        grad_norm: rep.grad_norm,
        r_em: rep.r_em,
        r_px: rep.r_px,
        fd_agreement: rep.fd_agreement,
        fd_ok: rep.fd_ok(),
        rate_ok: rep.rate_ok(),
        matrices: a.full.then(|| [rows(&rep.j_em), rows(&rep.j_px), rows(&rep.j_em_fd), rows(&rep.j_px_fd)]),
    };
    emit_json(&out, None, "")
}

#[derive(Serialize)]
struct Table1Row {
    method: String,
    first_beta: Vec<f64>,
    first_loglik: f64,
    beta: Vec<f64>,
    loglik: f64,
    iterations: usize,
    converged: bool,
    diverged: bool,
}

fn cmd_table1(a: Table1Args) -> Result<()> {
    let d = data::builtin_table1();
    let pen = Penalty::none();
    let beta0 = DVector::zeros(2);
    let mut out = Vec::new();
    for kind in [SolverKind::Em, SolverKind::PxEcme, SolverKind::Newton] {
        let one = pxlogit::solvers::run(&d, &pen, kind, &beta0, &SolverConfig { max_iter: 1, ..SolverConfig::with_tol(a.tol) })?;
        let full = pxlogit::solvers::run(&d, &pen, kind, &beta0, &SolverConfig::with_tol(a.tol))?;
        out.push(Table1Row {
            method: kind.name().to_string(),
            first_loglik: weighted_loglik(&d, &one.beta),
            first_beta: vec_of(&one.beta),
            beta: vec_of(&full.beta),
            loglik: full.final_loglik,
            iterations: full.iterations,
            converged: full.converged,
            diverged: full.diverged,
        });
    }
    if a.json {
        return emit_json(&out, None, "");
    }
    println!("loglik at zero: {:.4}", weighted_loglik(&d, &beta0));
    println!("{:<8} {:>20} {:>10} {:>22} {:>10} {:>6}  status", "method", "first iterate", "loglik", "final", "loglik", "iters");
    for r in &out {
        let status = if r.converged {
            "converged"
        } else if r.diverged {
            "diverged"
        } else {
            "stopped"
        };
        println!(
            "{:<8} {:>9.4} {:>10.4} {:>10.4} {:>11.4} {:>10.4} {:>10.4} {:>6}  {status}",
            r.method, r.first_beta[0], r.first_beta[1], r.first_loglik, r.beta[0], r.beta[1], r.loglik, r.iterations
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    let argv = config::expand(std::env::args().collect())?;
    match Cli::parse_from(argv).command {
        Command::Solve(a) => cmd_solve(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Table1(a) => cmd_table1(a),
    }
}
