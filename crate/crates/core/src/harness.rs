//! Replicated benchmark runs with per-run trace files and a summary table.
//!
//! Output layout under the chosen directory:
//! `summary.csv` and `traces/{method}__r{rep:04}.csv`, with an extra
//! `__eta{k:02}` suffix for runs along a penalty path. Summaries are computed
//! from the traces alone, so [`summary_from_trace_dir`] reproduces
//! `summary.csv` byte for byte.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;

use crate::coord::{cd_solve, CdConfig, WeightMode};
use crate::data::{builtin_table1, gen_ar1, gen_kyphosis_outcomes, load_csv};
use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::numeric::RaySearchConfig;
use crate::penalty::{Penalty, PenaltyKind};
use crate::solvers::{self, SolveResult, SolverConfig, SolverKind, TraceRow};

/// Decreasing penalty path used for the high-dimensional weighted study.
pub const DEFAULT_PATH: [f64; 9] = [5000.0, 1000.0, 500.0, 200.0, 50.0, 10.0, 2.0, 0.5, 0.1];

pub const TRACE_HEADER: &str = "iter,loglik,penalized_loglik,step_norm,elapsed_sec";
pub const SUMMARY_HEADER: &str = "method,median_iter,mean_iter,sd_iter,median_sec,mean_sec,mean_final_loglik,not_converged";

// independent ChaCha streams per replication seed
const STREAM_INIT: u64 = 1;
const STREAM_WEIGHTS: u64 = 2;

/// A full-vector solver or coordinate descent with one of its weight modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Solver(SolverKind),
    Cd(WeightMode),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Solver(k) => k.name(),
            Method::Cd(WeightMode::Em) => "cd_em",
            Method::Cd(WeightMode::Nr) => "cd_nr",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cd" | "cd_em" => Ok(Method::Cd(WeightMode::Em)),
            "cd_nr" => Ok(Method::Cd(WeightMode::Nr)),
            _ => s.parse().map(Method::Solver),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Init {
    #[default]
    Zeros,
    RandomNormal,
}

impl FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zeros" | "zero" => Ok(Init::Zeros),
            "random_normal" | "random" | "normal" => Ok(Init::RandomNormal),
            _ => Err(Error::InvalidConfig(format!("unknown init '{s}', expected zeros or random_normal"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Table1,
    Ar1 { n: usize, p: usize, rho: f64 },
    /// A complete `y,m,s,x1..xp` file, shared by every replication.
    Csv(PathBuf),
    /// Covariate file with `age`, `number` and `start` columns; outcomes are
    /// regenerated for each replication.
    Kyphosis(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub methods: Vec<Method>,
    pub penalty: PenaltyKind,
    /// Coefficients left unpenalized, usually the intercept.
    pub exempt: Vec<usize>,
    pub tol: f64,
    pub max_iter: usize,
    pub replications: usize,
    /// Replication `r` uses `seed + r`.
    pub seed: u64,
    pub init: Init,
    pub data: DataSource,
    /// Draw fresh rate-one exponential weights in every replication.
    pub exp_weights: bool,
    /// Penalty strengths visited in order with warm starts. Each value
    /// replaces the strength of an l1, l2 or SCAD penalty and multiplies
    /// both elastic-net strengths.
    pub path: Option<Vec<f64>>,
    pub block_size: Option<usize>,
    pub ray: RaySearchConfig,
    pub out_dir: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Solver(SolverKind::Em), Method::Solver(SolverKind::PxEcme)],
            penalty: PenaltyKind::None,
            exempt: Vec::new(),
            tol: 1e-7,
            max_iter: 100_000,
            replications: 1,
            seed: 0,
            init: Init::Zeros,
            data: DataSource::Table1,
            exp_weights: false,
            path: None,
            block_size: None,
            ray: RaySearchConfig::default(),
            out_dir: None,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no methods selected".into()));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 || self.replications == 0 {
            return Err(Error::InvalidConfig("tol, max_iter and replications must be positive".into()));
        }
        if let Some(path) = &self.path {
            if path.is_empty() || path.iter().any(|&e| !(e.is_finite() && e >= 0.0)) {
                return Err(Error::InvalidConfig("path values must be finite and nonnegative".into()));
            }
            if self.penalty == PenaltyKind::None {
                return Err(Error::InvalidConfig("a penalty path needs a penalty family".into()));
            }
        }
        self.ray.validate()?;
        Penalty::new(self.penalty).map(|_| ())
    }

    fn penalty_at(&self, eta: Option<f64>) -> Result<Penalty> {
        let kind = match (self.penalty, eta) {
            (k, None) => k,
            (PenaltyKind::None, Some(_)) => PenaltyKind::None,
            (PenaltyKind::L1 { .. }, Some(e)) => PenaltyKind::L1 { lambda1: e },
            (PenaltyKind::L2 { .. }, Some(e)) => PenaltyKind::L2 { lambda2: e },
            (PenaltyKind::ElasticNet { lambda1, lambda2 }, Some(e)) => PenaltyKind::ElasticNet {
                lambda1: e * lambda1,
                lambda2: e * lambda2,
            },
            (PenaltyKind::Scad { a, .. }, Some(e)) => PenaltyKind::Scad { lambda: e, a },
        };
        Ok(Penalty::new(kind)?.with_exempt(self.exempt.iter().copied()))
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Reads Kyphosis-style covariates by column name (case-insensitive).
pub fn load_kyphosis_covariates(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim_matches('"').to_lowercase()).collect();
    let idx = ["age", "number", "start"]
        .iter()
        .map(|want| {
            header.iter().position(|h| h == want).ok_or_else(|| Error::Parse {
                row: 0,
                column: want.to_string(),
                message: "column not found".into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut vals = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for &j in &idx {
            let v: f64 = rec[j].parse().map_err(|_| Error::Parse {
                row: r + 1,
                column: header[j].clone(),
                message: format!("'{}' is not a number", &rec[j]),
            })?;
            vals.push(v);
        }
    }
    Ok(DMatrix::from_row_slice(vals.len() / 3, 3, &vals))
}

enum Prepared {
    Fixed(Dataset),
    Kyphosis(DMatrix<f64>),
    Ar1 { n: usize, p: usize, rho: f64 },
}

impl Prepared {
    fn new(src: &DataSource) -> Result<Self> {
        Ok(match src {
            DataSource::Table1 => Prepared::Fixed(builtin_table1()),
            DataSource::Csv(path) => Prepared::Fixed(load_csv(path)?.complete()?),
            DataSource::Kyphosis(path) => Prepared::Kyphosis(load_kyphosis_covariates(path)?),
            DataSource::Ar1 { n, p, rho } => Prepared::Ar1 { n: *n, p: *p, rho: *rho },
        })
    }

    fn replicate(&self, seed: u64, exp_weights: bool) -> Result<Dataset> {
        let d = match self {
            Prepared::Fixed(d) => d.clone(),
            Prepared::Kyphosis(cov) => gen_kyphosis_outcomes(cov, seed)?,
            Prepared::Ar1 { n, p, rho } => gen_ar1(*n, *p, *rho, seed)?.0,
        };
        if !exp_weights {
            return Ok(d);
        }
        let mut rng = stream_rng(seed, STREAM_WEIGHTS);
        let s = DVector::from_fn(d.n(), |_, _| Exp1.sample(&mut rng));
        d.with_weights(s)
    }
}

/// Starting coefficients for replication seed `seed`.
pub fn initial_beta(init: Init, p: usize, seed: u64) -> DVector<f64> {
    match init {
        Init::Zeros => DVector::zeros(p),
        Init::RandomNormal => {
            let mut rng = stream_rng(seed, STREAM_INIT);
            DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng))
        }
    }
}

/// Runs one method. Coordinate descent takes the elastic-net strengths of
/// the penalty and ignores exemptions.
pub fn run_method(d: &Dataset, pen: &Penalty, method: Method, beta0: &DVector<f64>, cfg: &BenchConfig) -> Result<SolveResult> {
    match method {
        Method::Solver(kind) => {
            let scfg = SolverConfig {
                tol: cfg.tol,
                max_iter: cfg.max_iter,
                ray: cfg.ray,
                record_trace: true,
            };
            solvers::run(d, pen, kind, beta0, &scfg)
        }
        Method::Cd(mode) => {
            let (lambda1, lambda2) = pen.elastic_net_params().ok_or(Error::UnsupportedPenalty {
                solver: method.name(),
                penalty: pen.kind().name(),
            })?;
            if !pen.exempt().is_empty() {
                return Err(Error::InvalidConfig("coordinate descent penalizes every coefficient".into()));
            }
            let ccfg = CdConfig {
                block_size: cfg.block_size,
                weight_mode: mode,
                lambda1,
                lambda2,
                tol: cfg.tol,
                max_cycles: cfg.max_iter,
                expansion: true,
                ray: cfg.ray,
            };
            cd_solve(d, &ccfg, beta0)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub method: Method,
    pub replication: usize,
    /// Index into the penalty path and its value.
    pub path_step: Option<(usize, f64)>,
    /// `None` when the method could not start.
    pub result: Option<SolveResult>,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn trace(&self) -> &[TraceRow] {
        self.result.as_ref().map_or(&[], |r| r.trace.as_slice())
    }

    pub fn file_name(&self) -> String {
        match self.path_step {
            None => format!("{}__r{:04}.csv", self.method, self.replication),
            Some((k, _)) => format!("{}__r{:04}__eta{:02}.csv", self.method, self.replication, k),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub median_iter: f64,
    pub mean_iter: f64,
    pub sd_iter: f64,
    pub median_sec: f64,
    pub mean_sec: f64,
    /// Mean final penalized log-likelihood over runs with at least one trace row.
    pub mean_final_loglik: f64,
    pub not_converged: usize,
}

impl SummaryRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{}",
            self.method, self.median_iter, self.mean_iter, self.sd_iter, self.median_sec, self.mean_sec, self.mean_final_loglik, self.not_converged
        )
    }
}

/// Whether a trace ends in a converged state: a completed iteration whose
/// step is below `tol` at a finite objective.
pub fn trace_converged(trace: &[TraceRow], tol: f64) -> bool {
    trace.last().is_some_and(|r| r.iter >= 1 && r.step_norm < tol && r.penalized_loglik.is_finite())
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Summary statistics over the traces of one method, in the given order.
pub fn summarize<'a>(method: &str, traces: impl IntoIterator<Item = &'a [TraceRow]>, tol: f64) -> SummaryRow {
    let (mut iters, mut secs, mut finals) = (Vec::new(), Vec::new(), Vec::new());
    let mut not_converged = 0;
    for tr in traces {
        iters.push(tr.last().map_or(0.0, |r| r.iter as f64));
        secs.push(tr.iter().map(|r| r.elapsed_sec).sum::<f64>());
        if let Some(last) = tr.last() {
            finals.push(last.penalized_loglik);
        }
        if !trace_converged(tr, tol) {
            not_converged += 1;
        }
    }
    let mean_iter = mean(&iters);
    let sd_iter = if iters.len() > 1 {
        (iters.iter().map(|x| (x - mean_iter).powi(2)).sum::<f64>() / (iters.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    SummaryRow {
        method: method.to_string(),
        median_iter: median(&mut iters.clone()),
        mean_iter,
        sd_iter,
        median_sec: median(&mut secs.clone()),
        mean_sec: mean(&secs),
        mean_final_loglik: mean(&finals),
        not_converged,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOutput {
    pub records: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
}

/// Runs every (method, replication) pair in parallel and collects results in
/// a fixed order. Method failures become not-converged records.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchOutput> {
    cfg.validate()?;
    let prepared = Prepared::new(&cfg.data)?;
    let datasets = (0..cfg.replications)
        .into_par_iter()
        .map(|r| prepared.replicate(cfg.seed.wrapping_add(r as u64), cfg.exp_weights))
        .collect::<Result<Vec<_>>>()?;
    let tasks: Vec<(usize, Method)> = (0..cfg.replications).flat_map(|r| cfg.methods.iter().map(move |&m| (r, m))).collect();
    let per_task: Vec<Vec<RunRecord>> = tasks.par_iter().map(|&(r, method)| run_task(cfg, &datasets[r], r, method)).collect();

    // order: method, then replication, then path step
    let mut records = Vec::with_capacity(per_task.iter().map(Vec::len).sum());
    for method in &cfg.methods {
        for (task, recs) in tasks.iter().zip(&per_task) {
            if task.1 == *method {
                records.extend(recs.iter().cloned());
            }
        }
    }
    let summary = cfg
        .methods
        .iter()
        .map(|m| summarize(m.name(), records.iter().filter(|r| r.method == *m).map(RunRecord::trace), cfg.tol))
        .collect();
    let out = BenchOutput { records, summary };
    if let Some(dir) = &cfg.out_dir {
        write_outputs(dir, &out)?;
    }
    Ok(out)
}

fn run_task(cfg: &BenchConfig, d: &Dataset, r: usize, method: Method) -> Vec<RunRecord> {
    let seed = cfg.seed.wrapping_add(r as u64);
    let mut beta = initial_beta(cfg.init, d.p(), seed);
    let steps: Vec<Option<(usize, f64)>> = match &cfg.path {
        None => vec![None],
        Some(path) => path.iter().copied().enumerate().map(Some).collect(),
    };
    let mut out = Vec::with_capacity(steps.len());
    for step in steps {
        let attempt = cfg.penalty_at(step.map(|s| s.1)).and_then(|pen| run_method(d, &pen, method, &beta, cfg));
        let rec = match attempt {
            Ok(res) => {
                // warm start from the last iterate, unless the run blew up
                if res.beta.iter().all(|b| b.is_finite()) && !res.diverged {
                    beta = res.beta.clone();
                }
                RunRecord {
                    method,
                    replication: r,
                    path_step: step,
                    error: res.failure.clone(),
                    result: Some(res),
                }
            }
            Err(e) => RunRecord {
                method,
                replication: r,
                path_step: step,
                result: None,
                error: Some(e.to_string()),
            },
        };
        out.push(rec);
    }
    out
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for r in trace {
        s.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            r.iter, r.loglik, r.penalized_loglik, r.step_norm, r.elapsed_sec
        ));
    }
    s
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

pub fn write_outputs(dir: &Path, out: &BenchOutput) -> Result<()> {
    let traces = dir.join("traces");
    fs::create_dir_all(&traces)?;
    for rec in &out.records {
        fs::write(traces.join(rec.file_name()), trace_csv(rec.trace()))?;
    }
    let mut f = BufWriter::new(File::create(dir.join("summary.csv"))?);
    f.write_all(summary_csv(&out.summary).as_bytes())?;
    f.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |j: usize| -> Result<f64> {
            rec[j].parse().map_err(|_| Error::Parse {
                row: r + 1,
                column: TRACE_HEADER.split(',').nth(j).unwrap_or("?").to_string(),
                message: format!("'{}' is not a number", &rec[j]),
            })
        };
        rows.push(TraceRow {
            iter: rec[0].parse().map_err(|_| Error::Parse {
                row: r + 1,
                column: "iter".into(),
                message: format!("'{}' is not an integer", &rec[0]),
            })?,
            loglik: field(1)?,
            penalized_loglik: field(2)?,
            step_norm: field(3)?,
            elapsed_sec: field(4)?,
        });
    }
    Ok(rows)
}

/// Rebuilds the summary from `dir/traces`, listing methods in `order`.
pub fn summary_from_trace_dir(dir: &Path, order: &[String], tol: f64) -> Result<Vec<SummaryRow>> {
    let mut by_method: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    for entry in fs::read_dir(dir.join("traces"))? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        if let Some((method, _)) = name.split_once("__") {
            by_method.entry(method.to_string()).or_default().push(path.clone());
        }
    }
    order
        .iter()
        .map(|m| {
            let mut files = by_method.remove(m).unwrap_or_default();
            files.sort();
            let traces = files.iter().map(|f| read_trace(f)).collect::<Result<Vec<_>>>()?;
            Ok(summarize(m, traces.iter().map(Vec::as_slice), tol))
        })
        .collect()
}
