//! Iterative solvers for the penalized weighted logistic likelihood and the
//! driver that runs any of them with a common stopping rule and trace.
//!
//! Every step is a pure function of the data, the current coefficients and
//! the penalty. The parameter-expanded variants follow their base update with
//! a scalar search over `rho` in `pl(rho * beta)`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{
    grad_from_eta, grad_loglik, link_quantities, linear_predictor, log1p_exp, loglik_from_eta, penalized_loglik, pg_weight, sigmoid,
    weighted_gram, weighted_loglik, Dataset,
};
use crate::numeric::{max_eigenvalue, ray_maximize_smooth, solve_spd, RaySearchConfig};
use crate::penalty::Penalty;

/// Coefficient norm beyond which a run is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e8;
/// Relative margin applied to eigenvalue-based steplength bounds.
pub const KAPPA_MARGIN: f64 = 1e-6;
/// Halvings tried by the backtracking line search before it gives up.
pub const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KappaRule {
    /// Largest EM weight at the current iterate.
    MaxWeight,
    /// Fixed 1/4; valid only when every observation has a single trial.
    Quarter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Em,
    PxEcme,
    Newton,
    Mm(KappaRule),
    PxMm(KappaRule),
    /// Proximal gradient with the fixed steplength from [`safe_gd_kappa`].
    Gd,
    GdBacktrack,
    GpxEcmePgd,
    Aa1,
}

impl SolverKind {
    pub const ALL: [SolverKind; 11] = [
        SolverKind::Em,
        SolverKind::PxEcme,
        SolverKind::Newton,
        SolverKind::Mm(KappaRule::MaxWeight),
        SolverKind::Mm(KappaRule::Quarter),
        SolverKind::PxMm(KappaRule::MaxWeight),
        SolverKind::PxMm(KappaRule::Quarter),
        SolverKind::Gd,
        SolverKind::GdBacktrack,
        SolverKind::GpxEcmePgd,
        SolverKind::Aa1,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::Em => "em",
            SolverKind::PxEcme => "px_ecme",
            SolverKind::Newton => "newton",
            SolverKind::Mm(KappaRule::MaxWeight) => "mm",
            SolverKind::Mm(KappaRule::Quarter) => "mm_quarter",
            SolverKind::PxMm(KappaRule::MaxWeight) => "px_mm",
            SolverKind::PxMm(KappaRule::Quarter) => "px_mm_quarter",
            SolverKind::Gd => "gd",
            SolverKind::GdBacktrack => "gd_backtrack",
            SolverKind::GpxEcmePgd => "gpx_ecme_pgd",
            SolverKind::Aa1 => "aa1",
        }
    }

    /// Whether the step is guaranteed not to decrease the penalized objective.
    pub fn is_monotone(&self) -> bool {
        !matches!(self, SolverKind::Newton)
    }

    /// Only none/l2 have a closed-form quadratic M-step.
    pub fn accepts(&self, pen: &Penalty) -> bool {
        match self {
            SolverKind::Gd | SolverKind::GdBacktrack | SolverKind::GpxEcmePgd => true,
            _ => pen.ridge().is_some(),
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        let key = match key.as_str() {
            "gpx" | "gpx_ecme" => "gpx_ecme_pgd",
            "nr" => "newton",
            "px" => "px_ecme",
            "gdbt" => "gd_backtrack",
            k => k,
        };
        SolverKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown solver '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Stop once `||beta_{t+1} - beta_t||_2 < tol`.
    pub tol: f64,
    pub max_iter: usize,
    pub ray: RaySearchConfig,
    pub record_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 100_000,
            ray: RaySearchConfig::default(),
            record_trace: true,
        }
    }
}

impl SolverConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be positive".into()));
        }
        self.ray.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub loglik: f64,
    pub penalized_loglik: f64,
    /// Zero on the row for the starting point.
    pub step_norm: f64,
    pub elapsed_sec: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub beta: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub diverged: bool,
    /// The backtracking search ran out of halvings.
    pub stalled: bool,
    /// Error raised by a step, which ended the run early.
    pub failure: Option<String>,
    pub final_penalized_loglik: f64,
    pub final_loglik: f64,
    /// Norm of the unpenalized gradient at `beta`.
    pub final_grad_norm: f64,
    /// Sum of the per-iteration wall-clock times.
    pub elapsed_sec: f64,
    /// Starting point at `iter = 0`, then one row per iteration.
    pub trace: Vec<TraceRow>,
}

/// Maximizer of `rho -> pl(rho * dir)` and the objective there.
pub fn ray_search(d: &Dataset, dir: &DVector<f64>, pen: &Penalty, cfg: &RaySearchConfig) -> (f64, f64) {
    if dir.iter().all(|&b| b == 0.0) {
        return (1.0, penalized_loglik(d, dir, pen));
    }
    let eta = linear_predictor(d.x(), dir);
    let (s, y, m) = (d.s(), d.y(), d.m());
    let c = d.log_binomial_constant();
    let f = |rho: f64| {
        let mut acc = c;
        for i in 0..eta.len() {
            if s[i] != 0.0 {
                let z = rho * eta[i];
                acc += s[i] * (y[i] * z - m[i] * log1p_exp(z));
            }
        }
        acc - pen.ray_value(dir, rho)
    };
    let slope = |rho: f64| {
        let mut acc = 0.0;
        for i in 0..eta.len() {
            if s[i] != 0.0 {
                acc += s[i] * eta[i] * (y[i] - m[i] * sigmoid(rho * eta[i]));
            }
        }
        acc - pen.ray_slope(dir, rho)
    };
    ray_maximize_smooth(f, slope, cfg)
}

fn ridge_diag(pen: &Penalty, p: usize, solver: &'static str) -> Result<DVector<f64>> {
    pen.ridge_diagonal(p).ok_or(Error::UnsupportedPenalty {
        solver,
        penalty: pen.kind().name(),
    })
}

fn add_diag(a: &mut DMatrix<f64>, diag: &DVector<f64>) {
    for (j, v) in diag.iter().enumerate() {
        a[(j, j)] += v;
    }
}

/// EM update: maximizes the expected complete-data penalized log-likelihood.
pub fn em_step(d: &Dataset, beta: &DVector<f64>, pen: &Penalty) -> Result<DVector<f64>> {
    let ridge = ridge_diag(pen, d.p(), "em")?;
    let eta = linear_predictor(d.x(), beta);
    let sw = DVector::from_fn(d.n(), |i, _| d.s()[i] * pg_weight(eta[i], d.m()[i]));
    let mut a = weighted_gram(d.x(), &sw);
    add_diag(&mut a, &ridge);
    Ok(solve_spd(&a, d.xt_s_u())?.x)
}

/// EM update followed by the optimal rescaling `rho * beta_em`.
pub fn px_ecme_step(d: &Dataset, beta: &DVector<f64>, pen: &Penalty, ray: &RaySearchConfig) -> Result<DVector<f64>> {
    let em = em_step(d, beta, pen)?;
    let (rho, _) = ray_search(d, &em, pen, ray);
    Ok(rho * em)
}

/// Unsafeguarded Newton-Raphson (Fisher scoring) update.
pub fn newton_step(d: &Dataset, beta: &DVector<f64>, pen: &Penalty) -> Result<DVector<f64>> {
    let ridge = ridge_diag(pen, d.p(), "newton")?;
    let lq = link_quantities(d, beta);
    let mut h = weighted_gram(d.x(), &d.s().component_mul(&lq.w_nr));
    add_diag(&mut h, &ridge);
    let g = grad_from_eta(d, &lq.eta) - ridge.component_mul(beta);
    Ok(beta + solve_spd(&h, &g)?.x)
}

/// `kappa` for the MM family at `beta`.
pub fn mm_kappa(d: &Dataset, beta: &DVector<f64>, rule: KappaRule) -> Result<f64> {
    match rule {
        KappaRule::Quarter => {
            if d.all_single_trial() {
                Ok(0.25)
            } else {
                Err(Error::InvalidConfig("the 1/4 steplength rule needs m_i = 1 for every observation".into()))
            }
        }
        KappaRule::MaxWeight => {
            let eta = linear_predictor(d.x(), beta);
            Ok((0..d.n())
                .filter(|&i| d.s()[i] > 0.0)
                .map(|i| pg_weight(eta[i], d.m()[i]))
                .fold(0.0, f64::max))
        }
    }
}

/// MM update `beta + (X'SX + lambda/kappa I)^{-1} (grad - lambda beta) / kappa`.
pub fn mm_step(d: &Dataset, beta: &DVector<f64>, pen: &Penalty, rule: KappaRule) -> Result<DVector<f64>> {
    let ridge = ridge_diag(pen, d.p(), "mm")?;
    let kappa = mm_kappa(d, beta, rule)?;
    let mut a = weighted_gram(d.x(), d.s());
    add_diag(&mut a, &(&ridge / kappa));
    let g = (grad_from_eta(d, &linear_predictor(d.x(), beta)) - ridge.component_mul(beta)) / kappa;
    Ok(beta + solve_spd(&a, &g)?.x)
}

/// MM update followed by the optimal rescaling.
pub fn px_mm_step(
    d: &Dataset,
    beta: &DVector<f64>,
    pen: &Penalty,
    rule: KappaRule,
    ray: &RaySearchConfig,
) -> Result<DVector<f64>> {
    let mm = mm_step(d, beta, pen, rule)?;
    let (rho, _) = ray_search(d, &mm, pen, ray);
    Ok(rho * mm)
}

/// Proximal gradient ascent step `prox_{kappa P}(beta + kappa grad)`.
pub fn gd_step(d: &Dataset, beta: &DVector<f64>, pen: &Penalty, kappa: f64) -> Result<DVector<f64>> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::NonpositiveCurvature(kappa));
    }
    let g = grad_loglik(d, beta);
    prox_update(pen, beta.len(), kappa, |j| (beta[j] + kappa * g[j]) / kappa)
}

fn prox_update(pen: &Penalty, p: usize, kappa: f64, linear: impl Fn(usize) -> f64) -> Result<DVector<f64>> {
    let q = 1.0 / kappa;
    let mut out = DVector::zeros(p);
    for j in 0..p {
        out[j] = pen.coordinate_min(j, q, linear(j))?;
    }
    Ok(out)
}

/// Largest steplength that guarantees ascent for every iterate:
/// the reciprocal of an upper bound on the curvature of the log-likelihood.
pub fn safe_gd_kappa(d: &Dataset) -> Result<f64> {
    let w = DVector::from_fn(d.n(), |i, _| 0.25 * d.s()[i] * d.m()[i]);
    let lmax = max_eigenvalue(&weighted_gram(d.x(), &w))?;
    if lmax <= 0.0 {
        return Err(Error::NonpositiveCurvature(lmax));
    }
    Ok(1.0 / ((1.0 + KAPPA_MARGIN) * lmax))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktrackOutcome {
    pub beta: DVector<f64>,
    /// Accepted steplength; the last one tried when stalled.
    pub kappa: f64,
    pub stalled: bool,
}

/// `pl(to) - pl(from)` accumulated from per-observation differences, so that
/// gains far below the rounding error of `pl` itself keep their sign.
pub fn penalized_loglik_change(d: &Dataset, from: &DVector<f64>, to: &DVector<f64>, pen: &Penalty) -> f64 {
    let eta = linear_predictor(d.x(), from);
    let delta = linear_predictor(d.x(), &(to - from));
    let (s, y, m) = (d.s(), d.y(), d.m());
    let mut acc = 0.0;
    for i in 0..eta.len() {
        if s[i] == 0.0 {
            continue;
        }
        // log1p_exp(eta + delta) - log1p_exp(eta)
        let dl = if delta[i].abs() < 1.0 {
            (sigmoid(eta[i]) * delta[i].exp_m1()).ln_1p()
        } else {
            log1p_exp(eta[i] + delta[i]) - log1p_exp(eta[i])
        };
        acc += s[i] * (y[i] * delta[i] - m[i] * dl);
    }
    acc - pen.value_change(from, to)
}

/// Proximal gradient step whose steplength starts at `kappa0` and is halved
/// until the penalized objective does not decrease.
pub fn gd_backtrack_step(d: &Dataset, beta: &DVector<f64>, pen: &Penalty, kappa0: f64) -> Result<BacktrackOutcome> {
    let mut kappa = kappa0;
    for _ in 0..=MAX_HALVINGS {
        let cand = gd_step(d, beta, pen, kappa)?;
        let gain = penalized_loglik_change(d, beta, &cand, pen);
        if gain >= 0.0 {
            return Ok(BacktrackOutcome {
                beta: cand,
                kappa,
                stalled: false,
            });
        }
        kappa *= 0.5;
    }
    Ok(BacktrackOutcome {
        beta: beta.clone(),
        kappa: kappa * 2.0,
        stalled: true,
    })
}

/// Steplength `1 / ((1 + margin) lambda_max(X'SWX))` used by the GPX step.
pub fn gpx_kappa(d: &Dataset, beta: &DVector<f64>) -> Result<f64> {
    let lq = link_quantities(d, beta);
    let lmax = max_eigenvalue(&weighted_gram(d.x(), &d.s().component_mul(&lq.w_em)))?;
    if lmax <= 0.0 {
        return Err(Error::NonpositiveCurvature(lmax));
    }
    Ok(1.0 / ((1.0 + KAPPA_MARGIN) * lmax))
}

/// Maximizer of the surrogate Q-function with `H = I/kappa - X'SWX`,
/// written from the EM quantities rather than the gradient.
pub fn gpx_inner_step(d: &Dataset, beta: &DVector<f64>, pen: &Penalty, kappa: f64) -> Result<DVector<f64>> {
    let lq = link_quantities(d, beta);
    let swxb = weighted_gram(d.x(), &d.s().component_mul(&lq.w_em)) * beta;
    let xsu = d.xt_s_u();
    prox_update(pen, beta.len(), kappa, |j| xsu[j] + beta[j] / kappa - swxb[j])
}

/// Generalized PX-ECME: surrogate maximization, then the optimal rescaling.
pub fn gpx_ecme_pgd_step(d: &Dataset, beta: &DVector<f64>, pen: &Penalty, ray: &RaySearchConfig) -> Result<DVector<f64>> {
    let kappa = gpx_kappa(d, beta)?;
    let inner = gpx_inner_step(d, beta, pen, kappa)?;
    let (rho, _) = ray_search(d, &inner, pen, ray);
    Ok(rho * inner)
}

/// History carried between order-1 Anderson steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Aa1State {
    /// Input of the previous step.
    pub beta_prev: Option<DVector<f64>>,
    /// EM map applied to `beta_prev`.
    pub em_prev: Option<DVector<f64>>,
}

/// Order-1 Anderson acceleration of the EM map, falling back to the plain EM
/// point whenever the extrapolation does not improve on it.
pub fn aa1_step(d: &Dataset, beta: &DVector<f64>, pen: &Penalty, state: &Aa1State) -> Result<(DVector<f64>, Aa1State)> {
    let em_next = em_step(d, beta, pen)?;
    let mut out = em_next.clone();
    if let (Some(beta_prev), Some(em_prev)) = (&state.beta_prev, &state.em_prev) {
        let r = &em_next - beta;
        let v = &r + beta_prev - em_prev;
        let vv = v.dot(&v);
        if vv > 0.0 {
            let gamma = v.dot(&r) / vv;
            let cand = (1.0 - gamma) * &em_next + gamma * em_prev;
            if cand.iter().all(|c| c.is_finite())
                && penalized_loglik(d, &cand, pen) >= penalized_loglik(d, &em_next, pen)
            {
                out = cand;
            }
        }
    }
    let next = Aa1State {
        beta_prev: Some(beta.clone()),
        em_prev: Some(em_next),
    };
    Ok((out, next))
}

enum StepState {
    None,
    Backtrack { kappa: f64 },
    FixedKappa(f64),
    Aa1(Aa1State),
}

/// Runs `kind` from `beta0` until the coefficient change drops below
/// `cfg.tol`, the iteration budget runs out, or the iterates diverge.
pub fn run(d: &Dataset, pen: &Penalty, kind: SolverKind, beta0: &DVector<f64>, cfg: &SolverConfig) -> Result<SolveResult> {
    cfg.validate()?;
    if beta0.len() != d.p() {
        return Err(Error::Dimension(format!("beta0 has length {}, data has {} columns", beta0.len(), d.p())));
    }
    if beta0.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidConfig("beta0 must be finite".into()));
    }
    if !kind.accepts(pen) {
        return Err(Error::UnsupportedPenalty {
            solver: kind.name(),
            penalty: pen.kind().name(),
        });
    }
    if let SolverKind::Mm(KappaRule::Quarter) | SolverKind::PxMm(KappaRule::Quarter) = kind {
        mm_kappa(d, beta0, KappaRule::Quarter)?;
    }

    let mut state = match kind {
        SolverKind::Gd => StepState::FixedKappa(safe_gd_kappa(d)?),
        SolverKind::GdBacktrack => StepState::Backtrack { kappa: 0.5 },
        SolverKind::Aa1 => StepState::Aa1(Aa1State::default()),
        _ => StepState::None,
    };

    let mut beta = beta0.clone();
    let mut pl = penalized_loglik(d, &beta, pen);
    let mut ll = weighted_loglik(d, &beta);
    let mut trace = Vec::new();
    if cfg.record_trace {
        trace.push(TraceRow {
            iter: 0,
            loglik: ll,
            penalized_loglik: pl,
            step_norm: 0.0,
            elapsed_sec: 0.0,
        });
    }
    let mut res = SolveResult {
        beta: beta.clone(),
        iterations: 0,
        converged: false,
        diverged: false,
        stalled: false,
        failure: None,
        final_penalized_loglik: pl,
        final_loglik: ll,
        final_grad_norm: f64::NAN,
        elapsed_sec: 0.0,
        trace: Vec::new(),
    };

    for t in 1..=cfg.max_iter {
        let start = Instant::now();
        let step = match (&mut state, kind) {
            (_, SolverKind::Em) => em_step(d, &beta, pen),
            (_, SolverKind::PxEcme) => px_ecme_step(d, &beta, pen, &cfg.ray),
            (_, SolverKind::Newton) => newton_step(d, &beta, pen),
            (_, SolverKind::Mm(rule)) => mm_step(d, &beta, pen, rule),
            (_, SolverKind::PxMm(rule)) => px_mm_step(d, &beta, pen, rule, &cfg.ray),
            (StepState::FixedKappa(k), SolverKind::Gd) => gd_step(d, &beta, pen, *k),
            (StepState::Backtrack { kappa }, SolverKind::GdBacktrack) => {
                gd_backtrack_step(d, &beta, pen, 2.0 * *kappa).map(|o| {
                    *kappa = o.kappa;
                    res.stalled = o.stalled;
                    o.beta
                })
            }
            (_, SolverKind::GpxEcmePgd) => gpx_ecme_pgd_step(d, &beta, pen, &cfg.ray),
            (StepState::Aa1(st), SolverKind::Aa1) => aa1_step(d, &beta, pen, st).map(|(b, next)| {
                *st = next;
                b
            }),
            _ => unreachable!("step state is set up to match the solver kind"),
        };
        let next = match step {
            Ok(b) => b,
            Err(e) => {
                res.failure = Some(e.to_string());
                break;
            }
        };
        let step_norm = (&next - &beta).norm();
        beta = next;
        let eta = linear_predictor(d.x(), &beta);
        ll = loglik_from_eta(d, &eta);
        pl = ll - pen.value(&beta);
        let elapsed = start.elapsed().as_secs_f64();
        res.elapsed_sec += elapsed;
        res.iterations = t;
        if cfg.record_trace {
            trace.push(TraceRow {
                iter: t,
                loglik: ll,
                penalized_loglik: pl,
                step_norm,
                elapsed_sec: elapsed,
            });
        }
        if !pl.is_finite() || !step_norm.is_finite() || beta.norm() > DIVERGENCE_NORM {
            res.diverged = true;
            break;
        }
        if step_norm < cfg.tol {
            res.converged = true;
            break;
        }
        if res.stalled {
            break;
        }
    }

    res.final_grad_norm = grad_loglik(d, &beta).norm();
    res.beta = beta;
    res.final_penalized_loglik = pl;
    res.final_loglik = ll;
    res.trace = trace;
    Ok(res)
}

/// Gradient of the penalized objective for quadratic penalties.
pub fn penalized_gradient(d: &Dataset, beta: &DVector<f64>, pen: &Penalty) -> Result<DVector<f64>> {
    let ridge = ridge_diag(pen, d.p(), "penalized_gradient")?;
    Ok(grad_loglik(d, beta) - ridge.component_mul(beta))
}
