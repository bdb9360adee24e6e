//! Anderson-accelerated Picard and Newton iterations for the steady
//! Boussinesq equations, discretized with P2 velocity and temperature and
//! Taylor-Hood or Scott-Vogelius pressure on the unit square.

// NaN must fail comparisons; element loops index several arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod anderson;
pub mod assembly;
pub mod bench;
pub mod error;
pub mod fespace;
pub mod fixedpoint;
pub mod linesearch;
pub mod linsolve;
pub mod mesh;
pub mod quadrature;
pub mod scalar;
pub mod sparse;

pub use anderson::{drive, AndersonHistory, ConvergenceRecord, InnerProduct, IterationLog, Status};
pub use assembly::ProblemConfig;
pub use bench::{emit_csv, run_case, run_sweep, BenchmarkCase, Method, SweepTable};
pub use error::{Error, Result};
pub use fespace::{BcSpec, ElementFamily};
pub use fixedpoint::{BInnerProduct, Boussinesq, State, StateLayout};
pub use linesearch::LineSearchKind;
pub use mesh::{Mesh, MeshSpec};
pub use scalar::Scalar;

pub type AndersonConfig = anderson::AndersonConfig<f64>;
pub type AndersonConfigF32 = anderson::AndersonConfig<f32>;
pub type DepthSchedule = anderson::DepthSchedule<f64>;
pub type Damping = anderson::Damping<f64>;
pub type LsSolution = anderson::LsSolution<f64>;
pub type DriveOutcome = anderson::DriveOutcome<f64>;
pub type LineSearchSpec = linesearch::LineSearchSpec<f64>;
