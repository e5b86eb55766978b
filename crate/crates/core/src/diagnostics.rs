//! Local convergence rates of EM and PX-ECME in the unpenalized model.
//!
//! With `E = X'S W X` (Polya-Gamma weights) and `V = X'S R X` (Newton weights
//! `m pi (1 - pi)`), the EM map has Jacobian `I - E^{-1} V` at a fixed point,
//! and the PX-ECME map subtracts the rank-one term
//! `c^{-1} beta beta' (V - V E^{-1} V)` with `c = beta' V beta`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{grad_loglik, linear_predictor, nr_weight, pg_weight, weighted_gram, Dataset};
use crate::numeric::{solve_spd, RaySearchConfig};
use crate::penalty::Penalty;
use crate::solvers::{self, em_step, newton_step, px_ecme_step, SolverConfig, SolverKind};

/// Gradient norm required before Jacobians are formed.
pub const STATIONARITY_TOL: f64 = 1e-8;
/// Coefficient norm beyond which a non-converging fit is treated as separated.
pub const SEPARATION_NORM: f64 = 1e4;

fn curvature_matrices(d: &Dataset, beta: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let eta = linear_predictor(d.x(), beta);
    let (s, m) = (d.s(), d.m());
    let w = DVector::from_fn(d.n(), |i, _| s[i] * pg_weight(eta[i], m[i]));
    let r = DVector::from_fn(d.n(), |i, _| s[i] * nr_weight(eta[i], m[i]));
    (weighted_gram(d.x(), &w), weighted_gram(d.x(), &r))
}

// E^{-1} M column by column
fn solve_columns(e: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for j in 0..m.ncols() {
        let col = solve_spd(e, &m.column(j).into_owned())?.x;
        out.set_column(j, &col);
    }
    Ok(out)
}

pub fn jacobian_em_analytic(d: &Dataset, beta_star: &DVector<f64>) -> Result<DMatrix<f64>> {
    let (e, v) = curvature_matrices(d, beta_star);
    let einv_v = solve_columns(&e, &v)?;
    Ok(DMatrix::identity(d.p(), d.p()) - einv_v)
}

pub fn jacobian_px_analytic(d: &Dataset, beta_star: &DVector<f64>) -> Result<DMatrix<f64>> {
    if beta_star.iter().all(|&b| b == 0.0) {
        return Err(Error::InvalidData("the expanded-map Jacobian is undefined at beta = 0".into()));
    }
    let (e, v) = curvature_matrices(d, beta_star);
    let einv_v = solve_columns(&e, &v)?;
    let j_em = DMatrix::identity(d.p(), d.p()) - &einv_v;
    let c = beta_star.dot(&(&v * beta_star));
    if !(c > 0.0) {
        return Err(Error::NonpositiveCurvature(c));
    }
    let inner = &v - &v * &einv_v;
    Ok(j_em - (beta_star * beta_star.transpose()) * inner / c)
}

/// Largest eigenvalue modulus, from the real Schur form.
pub fn spectral_radius(j: &DMatrix<f64>) -> Result<f64> {
    if j.nrows() != j.ncols() {
        return Err(Error::Dimension(format!("{}x{} matrix is not square", j.nrows(), j.ncols())));
    }
    if j.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("matrix has non-finite entries".into()));
    }
    let schur = nalgebra::linalg::Schur::try_new(j.clone(), f64::EPSILON, 10_000).ok_or(Error::NotConverged {
        what: "Schur decomposition",
        iterations: 10_000,
    })?;
    Ok(schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Central-difference Jacobian of `map` at `beta`, step `1e-5 max(1, |beta_j|)`.
pub fn fd_jacobian(beta: &DVector<f64>, mut map: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>) -> Result<DMatrix<f64>> {
    let p = beta.len();
    let mut out = DMatrix::zeros(p, p);
    for j in 0..p {
        let h = 1e-5 * beta[j].abs().max(1.0);
        let mut up = beta.clone();
        let mut dn = beta.clone();
        up[j] += h;
        dn[j] -= h;
        let col = (map(&up)? - map(&dn)?) / (2.0 * h);
        out.set_column(j, &col);
    }
    Ok(out)
}

pub fn jacobian_em_fd(d: &Dataset, beta_star: &DVector<f64>) -> Result<DMatrix<f64>> {
    let pen = Penalty::none();
    fd_jacobian(beta_star, |b| em_step(d, b, &pen))
}

pub fn jacobian_px_fd(d: &Dataset, beta_star: &DVector<f64>, ray: &RaySearchConfig) -> Result<DMatrix<f64>> {
    let pen = Penalty::none();
    let ray = RaySearchConfig { tol: 1e-12, ..*ray };
    fd_jacobian(beta_star, |b| px_ecme_step(d, b, &pen, &ray))
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianReport {
    pub beta_star: DVector<f64>,
    pub grad_norm: f64,
    pub j_em: DMatrix<f64>,
    pub j_px: DMatrix<f64>,
    pub j_em_fd: DMatrix<f64>,
    pub j_px_fd: DMatrix<f64>,
    pub r_em: f64,
    pub r_px: f64,
    /// Largest elementwise gap between analytic and finite-difference Jacobians.
    pub fd_agreement: f64,
}

impl JacobianReport {
    pub const FD_TOL: f64 = 1e-3;
    pub const RATE_SLACK: f64 = 1e-8;

    pub fn fd_ok(&self) -> bool {
        self.fd_agreement < Self::FD_TOL
    }

    pub fn rate_ok(&self) -> bool {
        self.r_px <= self.r_em + Self::RATE_SLACK
    }
}

/// Builds the report at a given stationary point.
pub fn jacobian_report(d: &Dataset, beta_star: &DVector<f64>, ray: &RaySearchConfig) -> Result<JacobianReport> {
    let grad_norm = grad_loglik(d, beta_star).norm();
    if !(grad_norm < STATIONARITY_TOL) {
        return Err(Error::InvalidData(format!("gradient norm {grad_norm:e} is not below {STATIONARITY_TOL:e}")));
    }
    let j_em = jacobian_em_analytic(d, beta_star)?;
    let j_px = jacobian_px_analytic(d, beta_star)?;
    let j_em_fd = jacobian_em_fd(d, beta_star)?;
    let j_px_fd = jacobian_px_fd(d, beta_star, ray)?;
    let gap = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a - b).amax();
    let fd_agreement = gap(&j_em, &j_em_fd).max(gap(&j_px, &j_px_fd));
    Ok(JacobianReport {
        r_em: spectral_radius(&j_em)?,
        r_px: spectral_radius(&j_px)?,
        beta_star: beta_star.clone(),
        grad_norm,
        j_em,
        j_px,
        j_em_fd,
        j_px_fd,
        fd_agreement,
    })
}

/// Finds the unpenalized MLE (PX-ECME, then Newton polishing) and compares
/// the two local rates there.
pub fn verify_theorem1(d: &Dataset, cfg: &SolverConfig) -> Result<JacobianReport> {
    let pen = Penalty::none();
    let cfg = SolverConfig {
        record_trace: false,
        ..*cfg
    };
    let fit = solvers::run(d, &pen, SolverKind::PxEcme, &DVector::zeros(d.p()), &cfg)?;
    let mut beta = fit.beta;
    if fit.diverged || beta.norm() > SEPARATION_NORM {
        return Err(Error::NonFiniteMle(format!(
            "coefficient norm reached {:.3e} after {} iterations; the data may be separated",
            beta.norm(),
            fit.iterations
        )));
    }
    if !fit.converged {
        return Err(Error::NotConverged {
            what: "px_ecme",
            iterations: fit.iterations,
        });
    }
    for _ in 0..50 {
        if grad_loglik(d, &beta).norm() < STATIONARITY_TOL {
            break;
        }
        beta = newton_step(d, &beta, &pen)?;
    }
    if !(grad_loglik(d, &beta).norm() < STATIONARITY_TOL) {
        return Err(Error::NotConverged {
            what: "newton polishing",
            iterations: 50,
        });
    }
    // vanishing curvature at a flat point also signals separation
    jacobian_report(d, &beta, &cfg.ray).map_err(|e| match e {
        Error::NonpositiveCurvature(c) => Error::NonFiniteMle(format!("curvature along the solution is {c:e}")),
        other => other,
    })
}
