//! Separable coefficient penalties and their univariate minimizers.

use std::collections::BTreeSet;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Default SCAD shape parameter.
pub const SCAD_DEFAULT_A: f64 = 3.7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyKind {
    None,
    /// `lambda1 * |b|`
    L1 { lambda1: f64 },
    /// `lambda2 / 2 * b^2`
    L2 { lambda2: f64 },
    /// `lambda1 * |b| + lambda2 / 2 * b^2`
    ElasticNet { lambda1: f64, lambda2: f64 },
    /// Smoothly clipped absolute deviation with threshold `lambda` and shape `a > 2`.
    Scad { lambda: f64, a: f64 },
}

impl PenaltyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PenaltyKind::None => "none",
            PenaltyKind::L1 { .. } => "l1",
            PenaltyKind::L2 { .. } => "l2",
            PenaltyKind::ElasticNet { .. } => "elastic_net",
            PenaltyKind::Scad { .. } => "scad",
        }
    }

    /// Penalty of a single coefficient.
    pub fn value_scalar(&self, b: f64) -> f64 {
        match *self {
            PenaltyKind::None => 0.0,
            PenaltyKind::L1 { lambda1 } => lambda1 * b.abs(),
            PenaltyKind::L2 { lambda2 } => 0.5 * lambda2 * b * b,
            PenaltyKind::ElasticNet { lambda1, lambda2 } => lambda1 * b.abs() + 0.5 * lambda2 * b * b,
            PenaltyKind::Scad { lambda, a } => scad_value(b.abs(), lambda, a),
        }
    }

    /// `value_scalar(to) - value_scalar(from)`, formed without cancellation
    /// in the quadratic part.
    pub fn value_change_scalar(&self, from: f64, to: f64) -> f64 {
        let ridge = |l2: f64| 0.5 * l2 * (to - from) * (to + from);
        match *self {
            PenaltyKind::None => 0.0,
            PenaltyKind::L1 { lambda1 } => lambda1 * (to.abs() - from.abs()),
            PenaltyKind::L2 { lambda2 } => ridge(lambda2),
            PenaltyKind::ElasticNet { lambda1, lambda2 } => lambda1 * (to.abs() - from.abs()) + ridge(lambda2),
            PenaltyKind::Scad { .. } => self.value_scalar(to) - self.value_scalar(from),
        }
    }

    /// Derivative of [`value_scalar`](Self::value_scalar), taking 0 at the kink `b = 0`.
    pub fn derivative_scalar(&self, b: f64) -> f64 {
        let sgn = if b > 0.0 {
            1.0
        } else if b < 0.0 {
            -1.0
        } else {
            0.0
        };
        match *self {
            PenaltyKind::None => 0.0,
            PenaltyKind::L1 { lambda1 } => lambda1 * sgn,
            PenaltyKind::L2 { lambda2 } => lambda2 * b,
            PenaltyKind::ElasticNet { lambda1, lambda2 } => lambda1 * sgn + lambda2 * b,
            PenaltyKind::Scad { lambda, a } => {
                let t = b.abs();
                let d = if t <= lambda {
                    lambda
                } else if t <= a * lambda {
                    (a * lambda - t) / (a - 1.0)
                } else {
                    0.0
                };
                d * sgn
            }
        }
    }
}

fn scad_value(t: f64, lambda: f64, a: f64) -> f64 {
    if t <= lambda {
        lambda * t
    } else if t <= a * lambda {
        (2.0 * a * lambda * t - t * t - lambda * lambda) / (2.0 * (a - 1.0))
    } else {
        0.5 * lambda * lambda * (a + 1.0)
    }
}

/// A separable penalty `sum_j P_j(beta_j)`; coordinates in `exempt` are unpenalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Penalty {
    kind: PenaltyKind,
    exempt: BTreeSet<usize>,
}

fn check_lambda(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidPenalty(format!("{name} must be finite and nonnegative, got {v}")))
    }
}

impl Penalty {
    pub fn new(kind: PenaltyKind) -> Result<Self> {
        match kind {
            PenaltyKind::None => {}
            PenaltyKind::L1 { lambda1 } => check_lambda("lambda1", lambda1)?,
            PenaltyKind::L2 { lambda2 } => check_lambda("lambda2", lambda2)?,
            PenaltyKind::ElasticNet { lambda1, lambda2 } => {
                check_lambda("lambda1", lambda1)?;
                check_lambda("lambda2", lambda2)?;
            }
            PenaltyKind::Scad { lambda, a } => {
                check_lambda("lambda", lambda)?;
                if !(a.is_finite() && a > 2.0) {
                    return Err(Error::InvalidPenalty(format!("SCAD shape a must exceed 2, got {a}")));
                }
            }
        }
        Ok(Self {
            kind,
            exempt: BTreeSet::new(),
        })
    }

    pub fn none() -> Self {
        Self {
            kind: PenaltyKind::None,
            exempt: BTreeSet::new(),
        }
    }

    pub fn l1(lambda1: f64) -> Result<Self> {
        Self::new(PenaltyKind::L1 { lambda1 })
    }

    pub fn l2(lambda2: f64) -> Result<Self> {
        Self::new(PenaltyKind::L2 { lambda2 })
    }

    pub fn elastic_net(lambda1: f64, lambda2: f64) -> Result<Self> {
        Self::new(PenaltyKind::ElasticNet { lambda1, lambda2 })
    }

    pub fn scad(lambda: f64, a: f64) -> Result<Self> {
        Self::new(PenaltyKind::Scad { lambda, a })
    }

    /// Leaves the given coordinates unpenalized, e.g. `[0]` for an intercept.
    pub fn with_exempt(mut self, idx: impl IntoIterator<Item = usize>) -> Self {
        self.exempt.extend(idx);
        self
    }

    pub fn kind(&self) -> &PenaltyKind {
        &self.kind
    }

    pub fn exempt(&self) -> &BTreeSet<usize> {
        &self.exempt
    }

    pub fn is_exempt(&self, j: usize) -> bool {
        self.exempt.contains(&j)
    }

    /// Kind acting on coordinate `j`.
    pub fn kind_at(&self, j: usize) -> PenaltyKind {
        if self.is_exempt(j) {
            PenaltyKind::None
        } else {
            self.kind
        }
    }

    /// `value(to) - value(from)`, summed coordinatewise.
    pub fn value_change(&self, from: &DVector<f64>, to: &DVector<f64>) -> f64 {
        (0..from.len()).map(|j| self.kind_at(j).value_change_scalar(from[j], to[j])).sum()
    }

    pub fn value(&self, beta: &DVector<f64>) -> f64 {
        self.ray_value(beta, 1.0)
    }

    /// `value(rho * beta)`.
    pub fn ray_value(&self, beta: &DVector<f64>, rho: f64) -> f64 {
        if matches!(self.kind, PenaltyKind::None) {
            return 0.0;
        }
        beta.iter()
            .enumerate()
            .filter(|(j, _)| !self.is_exempt(*j))
            .map(|(_, &b)| self.kind.value_scalar(rho * b))
            .sum()
    }

    /// `d/drho value(rho * beta)`.
    pub fn ray_slope(&self, beta: &DVector<f64>, rho: f64) -> f64 {
        if matches!(self.kind, PenaltyKind::None) {
            return 0.0;
        }
        beta.iter()
            .enumerate()
            .filter(|(j, _)| !self.is_exempt(*j))
            .map(|(_, &b)| b * self.kind.derivative_scalar(rho * b))
            .sum()
    }

    /// Ridge strength if the penalty is quadratic (none or l2), else `None`.
    pub fn ridge(&self) -> Option<f64> {
        match self.kind {
            PenaltyKind::None => Some(0.0),
            PenaltyKind::L2 { lambda2 } => Some(lambda2),
            _ => None,
        }
    }

    /// `(lambda1, lambda2)` for penalties expressible as an elastic net.
    pub fn elastic_net_params(&self) -> Option<(f64, f64)> {
        match self.kind {
            PenaltyKind::None => Some((0.0, 0.0)),
            PenaltyKind::L1 { lambda1 } => Some((lambda1, 0.0)),
            PenaltyKind::L2 { lambda2 } => Some((0.0, lambda2)),
            PenaltyKind::ElasticNet { lambda1, lambda2 } => Some((lambda1, lambda2)),
            PenaltyKind::Scad { .. } => None,
        }
    }

    /// `diag(lambda2 * [j not exempt])` as a vector, for quadratic penalties.
    pub(crate) fn ridge_diagonal(&self, p: usize) -> Option<DVector<f64>> {
        let lam = self.ridge()?;
        Some(DVector::from_fn(p, |j, _| if self.is_exempt(j) { 0.0 } else { lam }))
    }

    /// Minimizer of `q/2 b^2 - l b + P_j(b)` for coordinate `j`.
    pub fn coordinate_min(&self, j: usize, q: f64, l: f64) -> Result<f64> {
        scalar_quadratic_penalized_min(&self.kind_at(j), q, l)
    }
}

/// `sign(z) * max(|z| - t, 0)`.
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Global minimizer of `q/2 b^2 - l b + P(b)` over the real line.
pub fn scalar_quadratic_penalized_min(kind: &PenaltyKind, q: f64, l: f64) -> Result<f64> {
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::NonpositiveCurvature(q));
    }
    Ok(match *kind {
        PenaltyKind::None => l / q,
        PenaltyKind::L1 { lambda1 } => soft_threshold(l, lambda1) / q,
        PenaltyKind::L2 { lambda2 } => l / (q + lambda2),
        PenaltyKind::ElasticNet { lambda1, lambda2 } => soft_threshold(l, lambda1) / (q + lambda2),
        PenaltyKind::Scad { lambda, a } => l.signum() * scad_min_nonneg(q, l.abs(), lambda, a),
    })
}

// Minimizes q/2 b^2 - t b + scad(b) over b >= 0; the optimum for t >= 0 is never negative.
fn scad_min_nonneg(q: f64, t: f64, lambda: f64, a: f64) -> f64 {
    let f = |b: f64| 0.5 * q * b * b - t * b + scad_value(b, lambda, a);
    let hi = a * lambda;
    let mut cands = vec![0.0, lambda, hi];
    cands.push(((t - lambda) / q).clamp(0.0, lambda));
    let curv = q - 1.0 / (a - 1.0);
    if curv > 0.0 {
        cands.push(((t - hi / (a - 1.0)) / curv).clamp(lambda, hi));
    }
    cands.push((t / q).max(hi));

    let mut best = 0.0;
    let mut best_val = f(0.0);
    for b in cands {
        let v = f(b);
        if v < best_val {
            best = b;
            best_val = v;
        }
    }
    best
}
