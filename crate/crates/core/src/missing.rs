//! EM and PX-ECME for logistic regression with binary covariates missing at
//! random.
//!
//! Covariate vectors are modelled as a categorical distribution `gamma` over
//! the `2^(p-1)` patterns of the non-intercept columns. Configuration `k`
//! sets column `j >= 1` to bit `j - 1` of `k`.
//!
//! The weight matrix of the M-step uses the Polya-Gamma weight of each
//! configuration inside the posterior expectation,
//! `B = sum_i s_i sum_k omega(d_k'beta, m_i) p_ik d_k d_k'`, which is the
//! conditional expectation of the complete-data curvature. A form with a
//! single weight per row outside the expectation is not defined when the row
//! has missing entries.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{add_outer, ln_binomial, log1p_exp, mirror_upper, pg_weight, sigmoid, Dataset};
use crate::numeric::{ray_maximize_smooth, solve_spd, RaySearchConfig};
use crate::solvers::{SolveResult, TraceRow};

/// Largest supported number of columns, intercept included.
pub const MAX_COLUMNS: usize = 16;

/// Observed/missing layout of one row: bit `j - 1` of `mask` is set when
/// column `j` is observed, and the matching bit of `bits` holds its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Pattern {
    mask: u32,
    bits: u32,
}

/// Binary covariates with missing entries, stored as `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct MissingDataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    m: DVector<f64>,
    s: DVector<f64>,
    u: DVector<f64>,
    patterns: Vec<Pattern>,
    log_binom: f64,
}

fn row_pattern(row: &[f64]) -> Result<Pattern> {
    if row.is_empty() || row[0] != 1.0 {
        return Err(Error::InvalidData("first column must be an observed intercept of ones".into()));
    }
    let mut pat = Pattern { mask: 0, bits: 0 };
    for (j, &v) in row.iter().enumerate().skip(1) {
        let bit = 1u32 << (j - 1);
        if v.is_nan() {
            continue;
        }
        pat.mask |= bit;
        if v == 1.0 {
            pat.bits |= bit;
        } else if v != 0.0 {
            return Err(Error::InvalidData(format!("column {j} holds {v}; covariates must be 0, 1 or missing")));
        }
    }
    Ok(pat)
}

/// Indices of every configuration agreeing with the observed entries of
/// `row` (intercept first, missing entries as `NaN`).
pub fn enumerate_consistent(row: &[f64]) -> Result<Vec<usize>> {
    if row.len() > MAX_COLUMNS {
        return Err(Error::TooManyCovariates {
            covariates: row.len(),
            limit: MAX_COLUMNS,
        });
    }
    let pat = row_pattern(row)?;
    Ok(consistent(pat, row.len() - 1))
}

fn consistent(pat: Pattern, q: usize) -> Vec<usize> {
    let free = !pat.mask & ((1u32 << q) - 1);
    // walk the submasks of the free bits
    let mut out = Vec::with_capacity(1 << free.count_ones());
    let mut sub = 0u32;
    loop {
        out.push((pat.bits | sub) as usize);
        if sub == free {
            break;
        }
        sub = (sub.wrapping_sub(free)) & free;
    }
    out
}

impl MissingDataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, m: DVector<f64>, s: DVector<f64>) -> Result<Self> {
        let (n, p) = (x.nrows(), x.ncols());
        if p > MAX_COLUMNS {
            return Err(Error::TooManyCovariates {
                covariates: p,
                limit: MAX_COLUMNS,
            });
        }
        // reuse the outcome and weight checks on an imputed copy
        let filled = x.map(|v| if v.is_nan() { 0.0 } else { v });
        Dataset::new(filled, y.clone(), m.clone(), s.clone())?;
        let patterns = (0..n)
            .map(|i| {
                let row: Vec<f64> = x.row(i).iter().copied().collect();
                row_pattern(&row).map_err(|e| Error::InvalidData(format!("row {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let u = DVector::from_fn(n, |i, _| y[i] - 0.5 * m[i]);
        let log_binom = (0..n).map(|i| s[i] * ln_binomial(m[i], y[i])).sum();
        Ok(Self {
            x,
            y,
            m,
            s,
            u,
            patterns,
            log_binom,
        })
    }

    /// Wraps a fully observed binary dataset.
    pub fn from_complete(d: &Dataset) -> Result<Self> {
        Self::new(d.x().clone(), d.y().clone(), d.m().clone(), d.s().clone())
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Number of covariate configurations, `2^(p-1)`.
    pub fn n_configs(&self) -> usize {
        1 << (self.p() - 1)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn m(&self) -> &DVector<f64> {
        &self.m
    }

    pub fn s(&self) -> &DVector<f64> {
        &self.s
    }

    pub fn n_missing(&self) -> usize {
        self.x.iter().filter(|v| v.is_nan()).count()
    }

    /// Configurations consistent with row `i`.
    pub fn consistent_set(&self, i: usize) -> Vec<usize> {
        consistent(self.patterns[i], self.p() - 1)
    }

    /// Covariate vector `d_k`, intercept first.
    pub fn config(&self, k: usize) -> DVector<f64> {
        DVector::from_fn(self.p(), |j, _| if j == 0 { 1.0 } else { ((k >> (j - 1)) & 1) as f64 })
    }

    /// Uniform distribution over configurations.
    pub fn uniform_gamma(&self) -> DVector<f64> {
        let k = self.n_configs();
        DVector::from_element(k, 1.0 / k as f64)
    }

    fn check_gamma(&self, gamma: &DVector<f64>) -> Result<()> {
        if gamma.len() != self.n_configs() {
            return Err(Error::Dimension(format!("gamma has {} cells, expected {}", gamma.len(), self.n_configs())));
        }
        if gamma.iter().any(|g| !(g.is_finite() && *g >= 0.0)) || (gamma.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidData("gamma must be a probability vector".into()));
        }
        Ok(())
    }

    fn check_beta(&self, beta: &DVector<f64>) -> Result<()> {
        if beta.len() != self.p() {
            return Err(Error::Dimension(format!("beta has length {}, data has {} columns", beta.len(), self.p())));
        }
        Ok(())
    }

    // d_k'beta for every configuration, summed in column order like a row of X beta
    fn config_predictors(&self, beta: &DVector<f64>) -> Vec<f64> {
        (0..self.n_configs())
            .map(|k| {
                let mut acc = 0.0;
                for j in 0..self.p() {
                    let v = if j == 0 { 1.0 } else { ((k >> (j - 1)) & 1) as f64 };
                    acc += v * beta[j];
                }
                acc
            })
            .collect()
    }
}

/// E-step output. Posterior rows are stored sparsely over the consistent set.
#[derive(Debug, Clone, PartialEq)]
pub struct EStepQuantities {
    /// `(k, p_ik)` for each row, `k` ranging over the consistent set.
    pub pik: Vec<Vec<(usize, f64)>>,
    /// Posterior means of the covariate vectors, one row per observation.
    pub a: DMatrix<f64>,
    /// `sum_i s_i sum_k omega(d_k'beta, m_i) p_ik d_k d_k'`.
    pub b: DMatrix<f64>,
    /// `sum_i s_i u_i a_i`.
    pub rhs: DVector<f64>,
    /// Weighted expected configuration counts `sum_i s_i p_ik`.
    pub gk: DVector<f64>,
}

impl EStepQuantities {
    pub fn dense_pik(&self, n_configs: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.pik.len(), n_configs);
        for (i, row) in self.pik.iter().enumerate() {
            for &(k, p) in row {
                out[(i, k)] = p;
            }
        }
        out
    }
}

// Log of the per-configuration outcome density without the binomial constant.
fn log_kernel(y: f64, m: f64, z: f64) -> f64 {
    y * z - m * log1p_exp(z)
}

pub fn e_step(md: &MissingDataset, beta: &DVector<f64>, gamma: &DVector<f64>) -> Result<EStepQuantities> {
    md.check_beta(beta)?;
    md.check_gamma(gamma)?;
    let (n, p) = (md.n(), md.p());
    let eta = md.config_predictors(beta);
    let log_gamma: Vec<f64> = gamma.iter().map(|g| g.ln()).collect();

    let mut pik = Vec::with_capacity(n);
    let mut a = DMatrix::zeros(n, p);
    let mut b = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    let mut gk = DVector::zeros(md.n_configs());
    for i in 0..n {
        let set = md.consistent_set(i);
        let post = if set.len() == 1 {
            vec![(set[0], 1.0)]
        } else {
            let logs: Vec<f64> = set.iter().map(|&k| log_kernel(md.y[i], md.m[i], eta[k]) + log_gamma[k]).collect();
            let mx = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if mx == f64::NEG_INFINITY {
                return Err(Error::InvalidData(format!("row {i}: no consistent configuration has positive probability")));
            }
            let w: Vec<f64> = logs.iter().map(|l| (l - mx).exp()).collect();
            let tot: f64 = w.iter().sum();
            set.iter().zip(w).map(|(&k, wk)| (k, wk / tot)).collect()
        };
        let si = md.s[i];
        for &(k, pk) in &post {
            for j in 0..p {
                let dkj = if j == 0 { 1.0 } else { ((k >> (j - 1)) & 1) as f64 };
                a[(i, j)] += pk * dkj;
            }
            let w = si * (pk * pg_weight(eta[k], md.m[i]));
            if w != 0.0 {
                add_outer(&mut b, w, |j| if j == 0 { 1.0 } else { ((k >> (j - 1)) & 1) as f64 });
            }
            gk[k] += si * pk;
        }
        let v = si * md.u[i];
        if v != 0.0 {
            for j in 0..p {
                rhs[j] += v * a[(i, j)];
            }
        }
        pik.push(post);
    }
    mirror_upper(&mut b);
    Ok(EStepQuantities { pik, a, b, rhs, gk })
}

/// `beta = B^{-1} rhs` and `gamma = G / sum(G)`.
pub fn m_step(eq: &EStepQuantities) -> Result<(DVector<f64>, DVector<f64>)> {
    let beta = solve_spd(&eq.b, &eq.rhs)?.x;
    let total = eq.gk.sum();
    Ok((beta, &eq.gk / total))
}

/// Weighted joint log-likelihood of the outcomes and observed covariates,
/// `sum_i s_i log sum_{k consistent} p(y_i | d_k, beta) gamma_k`.
///
/// EM increases this quantity at every iteration. It differs from
/// [`conditional_loglik_missing`] by `sum_i s_i log P(x_i,obs | gamma)`, which
/// does not involve `beta`.
pub fn observed_loglik_missing(md: &MissingDataset, beta: &DVector<f64>, gamma: &DVector<f64>) -> Result<f64> {
    md.check_beta(beta)?;
    md.check_gamma(gamma)?;
    let eta = md.config_predictors(beta);
    let mut acc = md.log_binom;
    for i in 0..md.n() {
        if md.s[i] == 0.0 {
            continue;
        }
        let lse = log_sum_exp(md.consistent_set(i).iter().map(|&k| log_kernel(md.y[i], md.m[i], eta[k]) + gamma[k].ln()));
        acc += md.s[i] * lse;
    }
    Ok(acc)
}

/// Weighted log-likelihood of the outcomes given the observed covariates,
/// `sum_i s_i log sum_k p(y_i | d_k, beta) p(d_k | x_i,obs, gamma)`.
pub fn conditional_loglik_missing(md: &MissingDataset, beta: &DVector<f64>, gamma: &DVector<f64>) -> Result<f64> {
    let joint = observed_loglik_missing(md, beta, gamma)?;
    let marg: f64 = (0..md.n())
        .filter(|&i| md.s[i] != 0.0)
        .map(|i| md.s[i] * md.consistent_set(i).iter().map(|&k| gamma[k]).sum::<f64>().ln())
        .sum();
    Ok(joint - marg)
}

fn log_sum_exp(it: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = it.collect();
    let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// Maximizer over `rho` of the conditional log-likelihood at `rho * dir`,
/// with `gamma` held fixed.
fn ray_search_missing(md: &MissingDataset, dir: &DVector<f64>, gamma: &DVector<f64>, cfg: &RaySearchConfig) -> f64 {
    if dir.iter().all(|&b| b == 0.0) {
        return 1.0;
    }
    let eta = md.config_predictors(dir);
    // rows: a single configuration, or (configuration, log conditional prior) pairs
    let rows: Vec<Vec<(usize, f64)>> = (0..md.n())
        .map(|i| {
            let set = md.consistent_set(i);
            if set.len() == 1 {
                return vec![(set[0], 0.0)];
            }
            let tot: f64 = set.iter().map(|&k| gamma[k]).sum();
            set.iter().map(|&k| (k, (gamma[k] / tot).ln())).collect()
        })
        .collect();
    let (s, y, m) = (&md.s, &md.y, &md.m);
    let f = |rho: f64| {
        let mut acc = md.log_binom;
        for (i, row) in rows.iter().enumerate() {
            if s[i] == 0.0 {
                continue;
            }
            if let [(k, _)] = row.as_slice() {
                let z = rho * eta[*k];
                acc += s[i] * (y[i] * z - m[i] * log1p_exp(z));
            } else {
                acc += s[i] * log_sum_exp(row.iter().map(|&(k, lp)| log_kernel(y[i], m[i], rho * eta[k]) + lp));
            }
        }
        acc
    };
    let slope = |rho: f64| {
        let mut acc = 0.0;
        for (i, row) in rows.iter().enumerate() {
            if s[i] == 0.0 {
                continue;
            }
            if let [(k, _)] = row.as_slice() {
                acc += s[i] * eta[*k] * (y[i] - m[i] * sigmoid(rho * eta[*k]));
            } else {
                let logs: Vec<f64> = row.iter().map(|&(k, lp)| log_kernel(y[i], m[i], rho * eta[k]) + lp).collect();
                let mx = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = logs.iter().map(|l| (l - mx).exp()).collect();
                let tot: f64 = w.iter().sum();
                let num: f64 = row
                    .iter()
                    .zip(&w)
                    .map(|(&(k, _), wk)| wk * eta[k] * (y[i] - m[i] * sigmoid(rho * eta[k])))
                    .sum();
                acc += s[i] * num / tot;
            }
        }
        acc
    };
    ray_maximize_smooth(f, slope, cfg).0
}

/// One EM iteration, optionally followed by the rescaling of `beta`.
pub fn missing_step(
    md: &MissingDataset,
    beta: &DVector<f64>,
    gamma: &DVector<f64>,
    px: bool,
    ray: &RaySearchConfig,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let eq = e_step(md, beta, gamma)?;
    let (b_em, g_em) = m_step(&eq)?;
    if !px {
        return Ok((b_em, g_em));
    }
    let rho = ray_search_missing(md, &b_em, &g_em, ray);
    Ok((rho * b_em, g_em))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MissingConfig {
    /// Stop once the combined change in `(beta, gamma)` falls below `tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Rescale each EM update along its ray; plain EM when off.
    pub px: bool,
    pub ray: RaySearchConfig,
}

impl Default for MissingConfig {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 100_000,
            px: true,
            ray: RaySearchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissingSolveResult {
    /// Trace log-likelihoods are [`observed_loglik_missing`] values.
    pub solve: SolveResult,
    pub gamma: DVector<f64>,
}

pub fn px_solve_missing(
    md: &MissingDataset,
    beta0: &DVector<f64>,
    gamma0: &DVector<f64>,
    cfg: &MissingConfig,
) -> Result<MissingSolveResult> {
    if !(cfg.tol > 0.0) || cfg.max_iter == 0 {
        return Err(Error::InvalidConfig("tol and max_iter must be positive".into()));
    }
    cfg.ray.validate()?;
    let mut beta = beta0.clone();
    let mut gamma = gamma0.clone();
    let l0 = observed_loglik_missing(md, &beta, &gamma)?;
    let mut trace = vec![TraceRow {
        iter: 0,
        loglik: l0,
        penalized_loglik: l0,
        step_norm: 0.0,
        elapsed_sec: 0.0,
    }];
    let mut res = SolveResult {
        beta: beta.clone(),
        iterations: 0,
        converged: false,
        diverged: false,
        stalled: false,
        failure: None,
        final_penalized_loglik: l0,
        final_loglik: l0,
        final_grad_norm: f64::NAN,
        elapsed_sec: 0.0,
        trace: Vec::new(),
    };
    for t in 1..=cfg.max_iter {
        let start = Instant::now();
        let (b, g) = match missing_step(md, &beta, &gamma, cfg.px, &cfg.ray) {
            Ok(v) => v,
            Err(e) => {
                res.failure = Some(e.to_string());
                break;
            }
        };
        let step_norm = ((&b - &beta).norm_squared() + (&g - &gamma).norm_squared()).sqrt();
        beta = b;
        gamma = g;
        let l = observed_loglik_missing(md, &beta, &gamma)?;
        let elapsed = start.elapsed().as_secs_f64();
        res.elapsed_sec += elapsed;
        res.iterations = t;
        res.final_loglik = l;
        res.final_penalized_loglik = l;
        trace.push(TraceRow {
            iter: t,
            loglik: l,
            penalized_loglik: l,
            step_norm,
            elapsed_sec: elapsed,
        });
        if !l.is_finite() || beta.norm() > crate::solvers::DIVERGENCE_NORM {
            res.diverged = true;
            break;
        }
        if step_norm < cfg.tol {
            res.converged = true;
            break;
        }
    }
    res.beta = beta;
    res.trace = trace;
    Ok(MissingSolveResult { solve: res, gamma })
}
