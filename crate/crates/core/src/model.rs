//! Data model and likelihood-level quantities for weighted binomial logistic
//! regression.
//!
//! Every solver in this crate works on the weighted observed log-likelihood
//!
//! ```text
//! l(beta) = sum_i s_i [ log C(m_i, y_i) + y_i x_i'beta - m_i log(1 + exp(x_i'beta)) ]
//! ```
//!
//! together with the Polya-Gamma EM weights `omega(z, m) = m tanh(z/2) / (2z)`
//! and the Newton-Raphson weights `m pi(z) (1 - pi(z))`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::penalty::Penalty;

/// Below this magnitude `omega` is evaluated from its Taylor expansion.
const PG_TAYLOR_CUTOFF: f64 = 1e-4;

/// Observations `(X, y, m, s)` for a weighted binomial logistic model.
///
/// Rows with `s_i = 0` are kept; they contribute nothing to any sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    m: DVector<f64>,
    s: DVector<f64>,
    u: DVector<f64>,
    xt_s_u: DVector<f64>,
    log_binom: f64,
}

impl Dataset {
    /// Validates and builds a dataset. `y` and `m` must hold integers with
    /// `0 <= y_i <= m_i` and `m_i >= 1`.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, m: DVector<f64>, s: DVector<f64>) -> Result<Self> {
        let n = x.nrows();
        if y.len() != n || m.len() != n || s.len() != n {
            return Err(Error::Dimension(format!(
                "X has {n} rows but y, m, s have lengths {}, {}, {}",
                y.len(),
                m.len(),
                s.len()
            )));
        }
        if n == 0 || x.ncols() == 0 {
            return Err(Error::InvalidData("dataset needs at least one row and one column".into()));
        }
        if let Some((i, j)) = (0..n)
            .flat_map(|i| (0..x.ncols()).map(move |j| (i, j)))
            .find(|&(i, j)| !x[(i, j)].is_finite())
        {
            return Err(Error::InvalidData(format!("X[{i}, {j}] is not finite")));
        }
        for i in 0..n {
            let (yi, mi, si) = (y[i], m[i], s[i]);
            if !(mi.is_finite() && mi >= 1.0 && mi.fract() == 0.0) {
                return Err(Error::InvalidData(format!("row {i}: m = {mi} is not a positive integer")));
            }
            if !(yi.is_finite() && yi >= 0.0 && yi.fract() == 0.0) {
                return Err(Error::InvalidData(format!("row {i}: y = {yi} is not a nonnegative integer")));
            }
            if yi > mi {
                return Err(Error::InvalidData(format!("row {i}: y = {yi} exceeds m = {mi}")));
            }
            if !(si.is_finite() && si >= 0.0) {
                return Err(Error::InvalidData(format!("row {i}: weight s = {si} must be finite and nonnegative")));
            }
        }
        if s.iter().all(|&si| si == 0.0) {
            return Err(Error::InvalidData("at least one weight must be positive".into()));
        }

        let u = DVector::from_fn(n, |i, _| y[i] - 0.5 * m[i]);
        let su = s.component_mul(&u);
        let xt_s_u = weighted_xt(&x, &su);
        let log_binom = (0..n).map(|i| s[i] * ln_binomial(m[i], y[i])).sum();
        Ok(Self {
            x,
            y,
            m,
            s,
            u,
            xt_s_u,
            log_binom,
        })
    }

    /// Binary outcomes (`m_i = 1`) with unit weights.
    pub fn binary(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let n = x.nrows();
        Self::new(x, y, DVector::from_element(n, 1.0), DVector::from_element(n, 1.0))
    }

    /// Same observations with a new weight vector.
    pub fn with_weights(&self, s: DVector<f64>) -> Result<Self> {
        Self::new(self.x.clone(), self.y.clone(), self.m.clone(), s)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
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

    /// `u_i = y_i - m_i / 2`.
    pub fn u(&self) -> &DVector<f64> {
        &self.u
    }

    /// `X'Su`, the fixed right-hand side of every EM step.
    pub fn xt_s_u(&self) -> &DVector<f64> {
        &self.xt_s_u
    }

    /// `sum_i s_i log C(m_i, y_i)`.
    pub fn log_binomial_constant(&self) -> f64 {
        self.log_binom
    }

    pub fn all_single_trial(&self) -> bool {
        self.m.iter().all(|&mi| mi == 1.0)
    }
}

/// Per-observation quantities at a coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkQuantities {
    /// Linear predictor `X beta`.
    pub eta: DVector<f64>,
    /// Mean `m_i pi(eta_i)`.
    pub mu: DVector<f64>,
    /// Polya-Gamma EM weights `omega(eta_i, m_i)`.
    pub w_em: DVector<f64>,
    /// Newton-Raphson weights `m_i pi(eta_i)(1 - pi(eta_i))`.
    pub w_nr: DVector<f64>,
}

/// Logistic function evaluated without overflow.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` evaluated without overflow.
pub fn log1p_exp(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Conditional expectation of a `PG(m, z)` variable, `m tanh(z/2) / (2z)`.
///
/// Even in `z`, maximal at `z = 0` where it equals `m/4`.
pub fn pg_weight(z: f64, m: f64) -> f64 {
    let a = z.abs();
    if a < PG_TAYLOR_CUTOFF {
        m / 4.0 - m * z * z / 48.0
    } else {
        m * (0.5 * a).tanh() / (2.0 * a)
    }
}

/// Newton-Raphson (Fisher scoring) weight `m e^{-z} / (1 + e^{-z})^2`.
pub fn nr_weight(z: f64, m: f64) -> f64 {
    let e = (-z.abs()).exp();
    let d = 1.0 + e;
    m * e / (d * d)
}

/// `ln C(m, y)` for integer-valued `m >= y >= 0`.
pub fn ln_binomial(m: f64, y: f64) -> f64 {
    let k = y.min(m - y);
    if k <= 0.0 {
        return 0.0;
    }
    let k = k as u64;
    (1..=k).map(|i| ((m - k as f64 + i as f64) / i as f64).ln()).sum()
}

/// `X beta`, accumulated left to right in each row.
pub fn linear_predictor(x: &DMatrix<f64>, beta: &DVector<f64>) -> DVector<f64> {
    debug_assert_eq!(x.ncols(), beta.len());
    DVector::from_fn(x.nrows(), |i, _| row_dot(x, i, beta))
}

pub(crate) fn row_dot(x: &DMatrix<f64>, i: usize, beta: &DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..x.ncols() {
        acc += x[(i, j)] * beta[j];
    }
    acc
}

/// `sum_i w_i x_i x_i'`, accumulated row by row.
pub fn weighted_gram(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let p = x.ncols();
    let mut g = DMatrix::zeros(p, p);
    for i in 0..x.nrows() {
        let wi = w[i];
        if wi == 0.0 {
            continue;
        }
        add_outer(&mut g, wi, |j| x[(i, j)]);
    }
    mirror_upper(&mut g);
    g
}

/// Adds `w v v'` into the upper triangle of `g`.
pub(crate) fn add_outer(g: &mut DMatrix<f64>, w: f64, v: impl Fn(usize) -> f64) {
    let p = g.nrows();
    for a in 0..p {
        let wa = w * v(a);
        if wa == 0.0 {
            continue;
        }
        for b in a..p {
            g[(a, b)] += wa * v(b);
        }
    }
}

pub(crate) fn mirror_upper(g: &mut DMatrix<f64>) {
    let p = g.nrows();
    for a in 0..p {
        for b in 0..a {
            g[(a, b)] = g[(b, a)];
        }
    }
}

/// `sum_i v_i x_i`, accumulated row by row.
pub fn weighted_xt(x: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let p = x.ncols();
    let mut out = DVector::zeros(p);
    for i in 0..x.nrows() {
        let vi = v[i];
        if vi == 0.0 {
            continue;
        }
        for j in 0..p {
            out[j] += vi * x[(i, j)];
        }
    }
    out
}

/// Weighted observed log-likelihood, including the binomial constant.
pub fn weighted_loglik(d: &Dataset, beta: &DVector<f64>) -> f64 {
    let eta = linear_predictor(d.x(), beta);
    loglik_from_eta(d, &eta)
}

pub(crate) fn loglik_from_eta(d: &Dataset, eta: &DVector<f64>) -> f64 {
    let mut acc = d.log_binomial_constant();
    for i in 0..d.n() {
        let si = d.s[i];
        if si == 0.0 {
            continue;
        }
        acc += si * (d.y[i] * eta[i] - d.m[i] * log1p_exp(eta[i]));
    }
    acc
}

/// Gradient `X'S(y - mu)` of [`weighted_loglik`].
pub fn grad_loglik(d: &Dataset, beta: &DVector<f64>) -> DVector<f64> {
    let eta = linear_predictor(d.x(), beta);
    grad_from_eta(d, &eta)
}

pub(crate) fn grad_from_eta(d: &Dataset, eta: &DVector<f64>) -> DVector<f64> {
    let r = DVector::from_fn(d.n(), |i, _| d.s[i] * (d.y[i] - d.m[i] * sigmoid(eta[i])));
    weighted_xt(d.x(), &r)
}

/// `weighted_loglik(beta) - pen.value(beta)`.
pub fn penalized_loglik(d: &Dataset, beta: &DVector<f64>, pen: &Penalty) -> f64 {
    weighted_loglik(d, beta) - pen.value(beta)
}

/// Linear predictor, mean and both weight vectors at `beta`.
pub fn link_quantities(d: &Dataset, beta: &DVector<f64>) -> LinkQuantities {
    let eta = linear_predictor(d.x(), beta);
    let n = d.n();
    let mu = DVector::from_fn(n, |i, _| d.m[i] * sigmoid(eta[i]));
    let w_em = DVector::from_fn(n, |i, _| pg_weight(eta[i], d.m[i]));
    let w_nr = DVector::from_fn(n, |i, _| nr_weight(eta[i], d.m[i]));
    LinkQuantities { eta, mu, w_em, w_nr }
}

/// EM weights `omega(x_i'beta, m_i)`.
pub fn em_weights(d: &Dataset, eta: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(d.n(), |i, _| pg_weight(eta[i], d.m[i]))
}
