//! Weighted and penalized logistic regression fitted by Polya-Gamma EM and
//! its parameter-expanded accelerations.
//!
//! ```
//! use pxlogit::{data::builtin_table1, solvers, Penalty, SolverConfig, SolverKind};
//! use nalgebra::DVector;
//!
//! let d = builtin_table1();
//! let fit = solvers::run(&d, &Penalty::none(), SolverKind::PxEcme, &DVector::zeros(2), &SolverConfig::default()).unwrap();
//! assert!(fit.converged);
//! assert!((fit.beta[1] - 5.30).abs() < 0.01);
//! ```

pub mod coord;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod missing;
pub mod model;
pub mod numeric;
pub mod penalty;
pub mod solvers;

pub use coord::{CdConfig, WeightMode};
pub use diagnostics::JacobianReport;
pub use error::{Error, Result};
pub use harness::{BenchConfig, Method};
pub use missing::MissingDataset;
pub use model::{Dataset, LinkQuantities};
pub use numeric::RaySearchConfig;
pub use penalty::{Penalty, PenaltyKind};
pub use solvers::{KappaRule, SolveResult, SolverConfig, SolverKind, TraceRow};
