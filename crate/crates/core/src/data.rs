//! Built-in instances, synthetic generators and CSV input/output.
//!
//! All generators draw from `ChaCha8Rng::seed_from_u64(seed)`, so a seed
//! reproduces the same data on every platform and build.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::missing::MissingDataset;
use crate::model::{sigmoid, Dataset};

/// Seven-observation weighted example with a single covariate plus intercept.
pub fn builtin_table1() -> Dataset {
    let x = [0.0, 0.0, 0.001, 100.0, -1.0, -1.0, 0.5];
    let y = [1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0];
    let s = [0.4, 0.01, 0.4, 0.01, 0.04, 0.1, 0.04];
    let design = DMatrix::from_fn(7, 2, |i, j| if j == 0 { 1.0 } else { x[i] });
    Dataset::new(
        design,
        DVector::from_row_slice(&y),
        DVector::from_element(7, 1.0),
        DVector::from_row_slice(&s),
    )
    .expect("built-in instance is valid")
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Student t with three degrees of freedom as `N(0,1) / sqrt(chi2_3 / 3)`.
fn student_t3(rng: &mut ChaCha8Rng) -> f64 {
    let z = normal(rng);
    let chi: f64 = ChiSquared::new(3.0).expect("valid degrees of freedom").sample(rng);
    z / (chi / 3.0).sqrt()
}

/// AR(1) design with Bernoulli outcomes and sparse heavy-tailed coefficients.
///
/// Column 0 is the intercept, column 1 is standard normal, and column `j >= 2`
/// is `rho x_{j-1} + sqrt(1 - rho^2) e_j` with standard normal `e_j`, so every
/// column has unit variance and adjacent columns have correlation `rho`.
/// Coefficients are `Z_j T_j` with `Z_j ~ Bernoulli(0.75)` and `T_j ~ t_3`.
/// Draw order: the design row by row, then the coefficients, then outcomes.
pub fn gen_ar1(n: usize, p: usize, rho: f64, seed: u64) -> Result<(Dataset, DVector<f64>)> {
    if n == 0 || p == 0 {
        return Err(Error::InvalidConfig("n and p must be positive".into()));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidConfig(format!("autocorrelation {rho} is outside [0, 1]")));
    }
    let mut rng = rng_from_seed(seed);
    let innov = (1.0 - rho * rho).sqrt();
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for j in 1..p {
            let e = normal(&mut rng);
            x[(i, j)] = if j == 1 { e } else { rho * x[(i, j - 1)] + innov * e };
        }
    }
    let mut beta = DVector::zeros(p);
    for j in 0..p {
        let z = rng.random_bool(0.75);
        let t = student_t3(&mut rng);
        beta[j] = if z { t } else { 0.0 };
    }
    let eta = &x * &beta;
    let y = DVector::from_fn(n, |i, _| if rng.random::<f64>() < sigmoid(eta[i]) { 1.0 } else { 0.0 });
    Ok((Dataset::binary(x, y)?, beta))
}

/// I.i.d. rate-one exponential weights.
pub fn gen_exp_weights(n: usize, seed: u64) -> DVector<f64> {
    let mut rng = rng_from_seed(seed);
    DVector::from_fn(n, |_, _| Exp1.sample(&mut rng))
}

/// Pseudo-outcomes over Kyphosis-style covariates.
///
/// `covariates` has columns (age, number of vertebrae, topmost vertebra). The
/// returned design prepends an intercept, and `y_i ~ Bernoulli(expit(3 number_i - start_i))`.
pub fn gen_kyphosis_outcomes(covariates: &DMatrix<f64>, seed: u64) -> Result<Dataset> {
    if covariates.ncols() != 3 {
        return Err(Error::Dimension(format!("expected 3 covariate columns, got {}", covariates.ncols())));
    }
    let n = covariates.nrows();
    let mut rng = rng_from_seed(seed);
    let x = DMatrix::from_fn(n, 4, |i, j| if j == 0 { 1.0 } else { covariates[(i, j - 1)] });
    let y = DVector::from_fn(n, |i, _| {
        let prob = sigmoid(3.0 * covariates[(i, 1)] - covariates[(i, 2)]);
        if rng.random::<f64>() < prob {
            1.0
        } else {
            0.0
        }
    });
    Dataset::binary(x, y)
}

/// A loaded file: complete numeric data, or binary covariates with `NA` cells.
#[derive(Debug, Clone, PartialEq)]
pub enum Loaded {
    Complete(Dataset),
    Missing(MissingDataset),
}

impl Loaded {
    pub fn n(&self) -> usize {
        match self {
            Loaded::Complete(d) => d.n(),
            Loaded::Missing(d) => d.n(),
        }
    }

    pub fn p(&self) -> usize {
        match self {
            Loaded::Complete(d) => d.p(),
            Loaded::Missing(d) => d.p(),
        }
    }

    pub fn complete(self) -> Result<Dataset> {
        match self {
            Loaded::Complete(d) => Ok(d),
            Loaded::Missing(_) => Err(Error::InvalidData("file has missing covariates".into())),
        }
    }
}

fn parse_err(row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

/// Reads `y,m,s,x1,...,xp`. The x columns form the design as given, so an
/// intercept must be stored as a column of ones. `NA` is accepted only in x
/// columns and routes the file to [`MissingDataset`]. Rows are numbered from
/// 1 at the first data line.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Loaded> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < 4 || header[0] != "y" || header[1] != "m" || header[2] != "s" {
        return Err(parse_err(0, &header.join(","), "header must start with y,m,s followed by x1..xp"));
    }
    for (j, name) in header.iter().enumerate().skip(3) {
        if *name != format!("x{}", j - 2) {
            return Err(parse_err(0, name, format!("expected column name x{}", j - 2)));
        }
    }
    let p = header.len() - 3;
    let (mut y, mut m, mut s, mut x) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut any_missing = false;
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec?;
        let num = |j: usize| -> Result<f64> {
            let cell = &rec[j];
            let v: f64 = cell.parse().map_err(|_| parse_err(row, &header[j], format!("'{cell}' is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(row, &header[j], format!("'{cell}' is not finite")));
            }
            Ok(v)
        };
        let (yi, mi, si) = (num(0)?, num(1)?, num(2)?);
        if !(mi >= 1.0 && mi.fract() == 0.0) {
            return Err(parse_err(row, "m", format!("m = {mi} is not a positive integer")));
        }
        if !(yi >= 0.0 && yi.fract() == 0.0) {
            return Err(parse_err(row, "y", format!("y = {yi} is not a nonnegative integer")));
        }
        if yi > mi {
            return Err(parse_err(row, "y", format!("y = {yi} exceeds m = {mi}")));
        }
        if si < 0.0 {
            return Err(parse_err(row, "s", format!("weight {si} is negative")));
        }
        y.push(yi);
        m.push(mi);
        s.push(si);
        for j in 3..3 + p {
            if &rec[j] == "NA" {
                any_missing = true;
                x.push(f64::NAN);
            } else {
                x.push(num(j)?);
            }
        }
    }
    let n = y.len();
    if n == 0 {
        return Err(Error::InvalidData("file has no data rows".into()));
    }
    let x = DMatrix::from_row_slice(n, p, &x);
    let (y, m, s) = (DVector::from_vec(y), DVector::from_vec(m), DVector::from_vec(s));
    if any_missing {
        Ok(Loaded::Missing(MissingDataset::new(x, y, m, s)?))
    } else {
        Ok(Loaded::Complete(Dataset::new(x, y, m, s)?))
    }
}

fn write_rows(path: &Path, p: usize, n: usize, cell: impl Fn(usize, usize) -> String) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    let names: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    writeln!(out, "y,m,s,{}", names.join(","))?;
    for i in 0..n {
        let row: Vec<String> = (0..p + 3).map(|j| cell(i, j)).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Writes shortest round-trip decimal representations, so loading the file
/// back reproduces every value exactly.
pub fn write_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_rows(path.as_ref(), d.p(), d.n(), |i, j| match j {
        0 => d.y()[i].to_string(),
        1 => d.m()[i].to_string(),
        2 => d.s()[i].to_string(),
        _ => d.x()[(i, j - 3)].to_string(),
    })
}

pub fn write_missing_csv(d: &MissingDataset, path: impl AsRef<Path>) -> Result<()> {
    write_rows(path.as_ref(), d.p(), d.n(), |i, j| match j {
        0 => d.y()[i].to_string(),
        1 => d.m()[i].to_string(),
        2 => d.s()[i].to_string(),
        _ => {
            let v = d.x()[(i, j - 3)];
            if v.is_nan() {
                "NA".to_string()
            } else {
                v.to_string()
            }
        }
    })
}
