//! Numerical kernels: jittered Cholesky solves, power iteration and the
//! one-dimensional search along a ray used by every parameter-expanded step.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Jitter multipliers (of `trace(A)/p`) tried after a failed factorization.
pub const JITTER_LADDER: [f64; 3] = [1e-10, 1e-8, 1e-6];

#[derive(Debug, Clone, PartialEq)]
pub struct SpdSolution {
    pub x: DVector<f64>,
    /// Diagonal shift that made the factorization succeed; zero if none was needed.
    pub jitter: f64,
}

/// Solves `A x = b` for symmetric positive (semi)definite `A` by Cholesky,
/// shifting the diagonal along [`JITTER_LADDER`] when the factorization fails.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<SpdSolution> {
    let p = a.nrows();
    if a.ncols() != p || b.len() != p {
        return Err(Error::Dimension(format!(
            "solve_spd: matrix is {}x{}, rhs has length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    if let Some(ch) = a.clone().cholesky() {
        return Ok(SpdSolution { x: ch.solve(b), jitter: 0.0 });
    }
    let scale = a.trace() / p as f64;
    let scale = if scale.is_finite() && scale > 0.0 { scale } else { 1.0 };
    let mut last = a.clone();
    for mult in JITTER_LADDER {
        let delta = mult * scale;
        let mut shifted = a.clone();
        for i in 0..p {
            shifted[(i, i)] += delta;
        }
        if let Some(ch) = shifted.clone().cholesky() {
            return Ok(SpdSolution { x: ch.solve(b), jitter: delta });
        }
        last = shifted;
    }
    let jitter = JITTER_LADDER[JITTER_LADDER.len() - 1] * scale;
    let residual = match last.clone().lu().solve(b) {
        Some(x) => (&last * x - b).norm(),
        None => f64::INFINITY,
    };
    Err(Error::Singular { jitter, residual })
}

const POWER_MAX_ITERS: usize = 10_000;
const POWER_REL_TOL: f64 = 1e-8;

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration from a fixed start vector. Returns the Rayleigh quotient, which
/// never exceeds the true value.
pub fn max_eigenvalue(a: &DMatrix<f64>) -> Result<f64> {
    let p = a.nrows();
    if a.ncols() != p {
        return Err(Error::Dimension(format!("max_eigenvalue: matrix is {}x{}", a.nrows(), a.ncols())));
    }
    if p == 0 {
        return Ok(0.0);
    }
    let mut v = DVector::from_fn(p, |j, _| 1.0 + 0.1 * (j as f64 + 1.0) / p as f64);
    v /= v.norm();
    for _ in 0..POWER_MAX_ITERS {
        let av = a * &v;
        let lambda = v.dot(&av);
        let norm = av.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        if (&av - lambda * &v).norm() <= POWER_REL_TOL * lambda.abs() {
            return Ok(lambda.max(0.0));
        }
        v = av / norm;
    }
    Err(Error::NotConverged {
        what: "power iteration",
        iterations: POWER_MAX_ITERS,
    })
}

/// Settings for the scalar search over `rho` in `f(rho * direction)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySearchConfig {
    /// First probe offset `h` around `rho = 1`.
    pub initial_bracket_halfwidth: f64,
    /// Probes are `1 +- h 2^k` for `k < max_expansions`.
    pub max_expansions: usize,
    /// Termination tolerance on `rho`.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for RaySearchConfig {
    fn default() -> Self {
        Self {
            initial_bracket_halfwidth: 1.0,
            max_expansions: 60,
            tol: 1e-10,
            max_iters: 200,
        }
    }
}

impl RaySearchConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.initial_bracket_halfwidth > 0.0
            && self.initial_bracket_halfwidth.is_finite()
            && self.max_expansions > 0
            && self.tol > 0.0
            && self.max_iters > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("ray search settings must be positive: {self:?}")))
        }
    }
}

/// Evaluates `f`, mapping NaN to `-inf`, and remembers the best point seen.
struct Tracker<F> {
    f: F,
    best: (f64, f64),
}

impl<F: FnMut(f64) -> f64> Tracker<F> {
    fn new(mut f: F) -> Self {
        let f1 = sanitize(f(1.0));
        Self { f, best: (1.0, f1) }
    }

    fn eval(&mut self, x: f64) -> f64 {
        let v = sanitize((self.f)(x));
        if v > self.best.1 {
            self.best = (x, v);
        }
        v
    }
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Derivative-free maximization of `f` over `rho`, started at `rho = 1`.
///
/// The returned pair is the best point evaluated, so `f(rho*) >= f(1)` holds
/// whatever the shape of `f`.
pub fn ray_maximize(f: impl FnMut(f64) -> f64, cfg: &RaySearchConfig) -> (f64, f64) {
    let mut t = Tracker::new(f);
    let f1 = t.best.1;
    let h = cfg.initial_bracket_halfwidth;
    let fr = t.eval(1.0 + h);
    let fl = t.eval(1.0 - h);

    let bracket = if f1 >= fr && f1 >= fl {
        Some((1.0 - h, 1.0, f1, 1.0 + h))
    } else if fr >= fl {
        expand(&mut t, 1.0 + h, fr, h, 1.0, cfg.max_expansions)
    } else {
        expand(&mut t, 1.0 - h, fl, h, -1.0, cfg.max_expansions)
    };
    if let Some((a, b, fb, c)) = bracket {
        let (lo, hi) = if a < c { (a, c) } else { (c, a) };
        brent_max(&mut t, lo, b, fb, hi, cfg.tol, cfg.max_iters);
    }
    t.best
}

// Walks 1 + dir h 2^k while f keeps increasing; returns (outer, middle, f(middle), next).
fn expand<F: FnMut(f64) -> f64>(
    t: &mut Tracker<F>,
    x1: f64,
    f1: f64,
    h: f64,
    dir: f64,
    max_expansions: usize,
) -> Option<(f64, f64, f64, f64)> {
    let (mut prev, mut mid, mut fmid) = (1.0, x1, f1);
    for k in 1..max_expansions {
        let next = 1.0 + dir * h * 2f64.powi(k as i32);
        let fnext = t.eval(next);
        if fnext <= fmid {
            return Some((prev, mid, fmid, next));
        }
        prev = mid;
        mid = next;
        fmid = fnext;
    }
    None
}

const GOLDEN: f64 = 0.381_966_011_250_105_1;

// Brent's parabolic/golden-section maximization on [a, b] started from x.
fn brent_max<F: FnMut(f64) -> f64>(t: &mut Tracker<F>, a: f64, x0: f64, fx0: f64, b: f64, tol: f64, max_iters: usize) {
    let (mut a, mut b) = (a, b);
    let (mut x, mut w, mut v) = (x0, x0, x0);
    // work with g = -f so the textbook minimizer applies
    let (mut gx, mut gw, mut gv) = (-fx0, -fx0, -fx0);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    for _ in 0..max_iters {
        let xm = 0.5 * (a + b);
        let tol1 = tol * x.abs().max(1.0) + 1e-15;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            return;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (gx - gv);
            let mut q = (x - v) * (gx - gw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let gu = -t.eval(u);
        if gu <= gx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            gv = gw;
            w = x;
            gw = gx;
            x = u;
            gx = gu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if gu <= gw || w == x {
                v = w;
                gv = gw;
                w = u;
                gw = gu;
            } else if gu <= gv || v == x || v == w {
                v = u;
                gv = gu;
            }
        }
    }
}

/// Maximizes `f` over `rho` by locating a sign change of its derivative
/// `slope` with Brent's root finder.
///
/// Suited to objectives that are concave along the ray. The root is accepted
/// unless it lowers `f` below `f(1)` by more than a few ulps; otherwise, or
/// when no sign change is found, the derivative-free [`ray_maximize`] takes over.
pub fn ray_maximize_smooth(
    mut f: impl FnMut(f64) -> f64,
    mut slope: impl FnMut(f64) -> f64,
    cfg: &RaySearchConfig,
) -> (f64, f64) {
    let f1 = sanitize(f(1.0));
    let s1 = slope(1.0);
    if s1 == 0.0 {
        return (1.0, f1);
    }
    if s1.is_finite() {
        let dir = s1.signum();
        let h = cfg.initial_bracket_halfwidth;
        let mut inner = (1.0, s1);
        for k in 0..cfg.max_expansions {
            let x = 1.0 + dir * h * 2f64.powi(k as i32);
            let sx = slope(x);
            if !sx.is_finite() {
                break;
            }
            if sx == 0.0 || sx.signum() != dir {
                let root = brent_root(&mut slope, inner, (x, sx), cfg.tol, cfg.max_iters);
                let fr = sanitize(f(root));
                // near rho = 1 the true gain can be below the resolution of f
                if fr >= f1 - 8.0 * f64::EPSILON * f1.abs().max(1.0) {
                    return (root, fr);
                }
                break;
            }
            inner = (x, sx);
        }
    }
    ray_maximize(f, cfg)
}

// Brent's root finder on a bracket with opposite-signed (or zero) endpoint values.
fn brent_root(g: &mut impl FnMut(f64) -> f64, lo: (f64, f64), hi: (f64, f64), tol: f64, max_iters: usize) -> f64 {
    let (mut a, mut fa) = lo;
    let (mut b, mut fb) = hi;
    if fa == 0.0 {
        return a;
    }
    if fb == 0.0 {
        return b;
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iters {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return b;
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = g(b);
    }
    b
}
