//! Coordinate descent for the elastic-net penalized likelihood, with optional
//! parameter expansion `beta = alpha * theta`.
//!
//! Coordinates of `theta` are cycled against a quadratic model built from the
//! weights at the last refresh point. Every `block_size` coordinates (and at
//! the end of each cycle) the scale `alpha` is re-optimized along the ray,
//! `beta` is updated and the weights are recomputed.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{grad_loglik, link_quantities, weighted_loglik, Dataset};
use crate::numeric::RaySearchConfig;
use crate::penalty::{soft_threshold, Penalty};
use crate::solvers::{ray_search, SolveResult, TraceRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// Polya-Gamma EM weights.
    Em,
    /// Newton-Raphson weights with the matching working response.
    Nr,
}

impl std::str::FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "em" => Ok(WeightMode::Em),
            "nr" | "newton" => Ok(WeightMode::Nr),
            _ => Err(Error::InvalidConfig(format!("unknown weight mode '{s}', expected em or nr"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdConfig {
    /// Coordinates between refreshes; `None` means once per cycle.
    pub block_size: Option<usize>,
    pub weight_mode: WeightMode,
    pub lambda1: f64,
    pub lambda2: f64,
    pub tol: f64,
    pub max_cycles: usize,
    /// When off, `alpha` stays at 1 and only the weights are refreshed.
    pub expansion: bool,
    pub ray: RaySearchConfig,
}

impl Default for CdConfig {
    fn default() -> Self {
        Self {
            block_size: None,
            weight_mode: WeightMode::Em,
            lambda1: 0.0,
            lambda2: 0.0,
            tol: 1e-7,
            max_cycles: 100_000,
            expansion: true,
            ray: RaySearchConfig::default(),
        }
    }
}

impl CdConfig {
    pub fn penalty(&self) -> Result<Penalty> {
        Penalty::elastic_net(self.lambda1, self.lambda2)
    }

    fn block(&self, p: usize) -> Result<usize> {
        let k = self.block_size.unwrap_or(p);
        if k == 0 || k > p {
            return Err(Error::InvalidConfig(format!("block size must lie in [1, {p}], got {k}")));
        }
        Ok(k)
    }

    fn validate(&self, p: usize) -> Result<usize> {
        self.penalty()?;
        if !(self.tol > 0.0 && self.tol.is_finite()) || self.max_cycles == 0 {
            return Err(Error::InvalidConfig("tol and max_cycles must be positive".into()));
        }
        self.ray.validate()?;
        self.block(p)
    }
}

/// Working state of a coordinate-descent solve.
#[derive(Debug, Clone, PartialEq)]
pub struct CdState {
    pub theta: DVector<f64>,
    pub alpha: f64,
    /// `alpha * theta` at the last refresh.
    pub beta: DVector<f64>,
    /// `S^{1/2} W^{1/2} X` with weights from the last refresh.
    pub a: DMatrix<f64>,
    /// Squared column norms of `a`.
    pub col_sq: DVector<f64>,
    /// `a * theta`, kept current after every coordinate move.
    pub resid: DVector<f64>,
    /// Linear coefficient of each coordinate in the quadratic model.
    pub lin: DVector<f64>,
}

impl CdState {
    /// State at `beta0` with `alpha = 1` and weights evaluated at `beta0`.
    pub fn new(d: &Dataset, mode: WeightMode, beta0: &DVector<f64>) -> Result<Self> {
        if beta0.len() != d.p() {
            return Err(Error::Dimension(format!("beta0 has length {}, data has {} columns", beta0.len(), d.p())));
        }
        let mut st = Self {
            theta: beta0.clone(),
            alpha: 1.0,
            beta: beta0.clone(),
            a: DMatrix::zeros(d.n(), d.p()),
            col_sq: DVector::zeros(d.p()),
            resid: DVector::zeros(d.n()),
            lin: DVector::zeros(d.p()),
        };
        st.rebuild(d, mode);
        Ok(st)
    }

    fn rebuild(&mut self, d: &Dataset, mode: WeightMode) {
        let lq = link_quantities(d, &self.beta);
        let w = match mode {
            WeightMode::Em => &lq.w_em,
            WeightMode::Nr => &lq.w_nr,
        };
        let (n, p) = (d.n(), d.p());
        let root = DVector::from_fn(n, |i, _| (d.s()[i] * w[i]).sqrt());
        self.a = DMatrix::from_fn(n, p, |i, j| root[i] * d.x()[(i, j)]);
        self.col_sq = DVector::from_fn(p, |j, _| self.a.column(j).norm_squared());
        self.resid = &self.a * &self.theta;
        self.lin = match mode {
            WeightMode::Em => d.xt_s_u().clone(),
            WeightMode::Nr => {
                let z = DVector::from_fn(n, |i, _| d.s()[i] * (d.y()[i] - lq.mu[i] + w[i] * lq.eta[i]));
                crate::model::weighted_xt(d.x(), &z)
            }
        };
    }
}

/// Soft-thresholded maximizer of the quadratic model in `theta_j`; updates
/// `theta_j` and the residual in place and returns the new value.
pub fn cd_coordinate_update(state: &mut CdState, cfg: &CdConfig, j: usize) -> f64 {
    let denom = state.col_sq[j] + cfg.lambda2;
    if denom <= 0.0 {
        return state.theta[j];
    }
    let old = state.theta[j];
    let col = state.a.column(j);
    let cross = col.dot(&state.resid) - old * state.col_sq[j];
    let v = state.lin[j] / denom;
    let u = cross / denom;
    let lt = cfg.lambda1 / denom;
    let alpha = state.alpha;
    let new = soft_threshold(v / alpha - u, lt / alpha.abs());
    if new != old {
        state.resid.axpy(new - old, &col, 1.0);
        state.theta[j] = new;
    }
    new
}

/// Optional rescaling of `alpha` along the ray, then `beta = alpha * theta`
/// and fresh weights.
pub fn cd_refresh(state: &mut CdState, d: &Dataset, cfg: &CdConfig, pen: &Penalty) {
    if cfg.expansion {
        let dir = state.alpha * &state.theta;
        let (rho, _) = ray_search(d, &dir, pen, &cfg.ray);
        state.alpha *= rho;
        if state.alpha == 0.0 {
            state.theta.fill(0.0);
            state.alpha = 1.0;
        }
    }
    state.beta = state.alpha * &state.theta;
    state.rebuild(d, cfg.weight_mode);
}

/// Cycles through the coordinates until the per-cycle change in `beta`
/// falls below `cfg.tol`.
pub fn cd_solve(d: &Dataset, cfg: &CdConfig, beta0: &DVector<f64>) -> Result<SolveResult> {
    let p = d.p();
    let k = cfg.validate(p)?;
    let pen = cfg.penalty()?;
    let mut st = CdState::new(d, cfg.weight_mode, beta0)?;

    let ll0 = weighted_loglik(d, &st.beta);
    let pl0 = ll0 - pen.value(&st.beta);
    let mut trace = vec![TraceRow {
        iter: 0,
        loglik: ll0,
        penalized_loglik: pl0,
        step_norm: 0.0,
        elapsed_sec: 0.0,
    }];
    let mut res = SolveResult {
        beta: st.beta.clone(),
        iterations: 0,
        converged: false,
        diverged: false,
        stalled: false,
        failure: None,
        final_penalized_loglik: pl0,
        final_loglik: ll0,
        final_grad_norm: f64::NAN,
        elapsed_sec: 0.0,
        trace: Vec::new(),
    };

    for cycle in 1..=cfg.max_cycles {
        let start = Instant::now();
        let before = st.beta.clone();
        for j in 0..p {
            cd_coordinate_update(&mut st, cfg, j);
            if (j + 1) % k == 0 || j + 1 == p {
                cd_refresh(&mut st, d, cfg, &pen);
            }
        }
        let step_norm = (&st.beta - &before).norm();
        let ll = weighted_loglik(d, &st.beta);
        let pl = ll - pen.value(&st.beta);
        let elapsed = start.elapsed().as_secs_f64();
        res.elapsed_sec += elapsed;
        res.iterations = cycle;
        res.final_loglik = ll;
        res.final_penalized_loglik = pl;
        trace.push(TraceRow {
            iter: cycle,
            loglik: ll,
            penalized_loglik: pl,
            step_norm,
            elapsed_sec: elapsed,
        });
        if !pl.is_finite() || st.beta.norm() > crate::solvers::DIVERGENCE_NORM {
            res.diverged = true;
            break;
        }
        if step_norm < cfg.tol {
            res.converged = true;
            break;
        }
    }
    res.final_grad_norm = grad_loglik(d, &st.beta).norm();
    res.beta = st.beta;
    res.trace = trace;
    Ok(res)
}

/// Largest violation of the elastic-net optimality conditions at `beta`.
pub fn kkt_check(d: &Dataset, beta: &DVector<f64>, lambda1: f64, lambda2: f64) -> f64 {
    let g = grad_loglik(d, beta) - lambda2 * beta;
    g.iter()
        .zip(beta.iter())
        .map(|(&gj, &bj)| {
            if bj != 0.0 {
                (gj - lambda1 * bj.signum()).abs()
            } else {
                (gj.abs() - lambda1).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}
