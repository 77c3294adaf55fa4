//! Stochastic Laplacian growth driven by boundary local time, and the
//! deterministic geometric flow it homogenizes to.

// `!(x > 0.0)` rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::excessive_precision)]

pub mod error;
pub mod flow;
pub mod geometry;
pub mod growth;
pub mod kernels;
pub mod lab;
pub mod metric;
pub mod rng;
pub mod sde;
pub mod spline;
pub mod stats;

pub use error::*;
pub use geometry::*;
pub use rng::CounterRng;
pub use flow::{flow_rhs, euler_step, integrate_until_blowup, picard_solve, radial_ode_oracle, FlowTrajectory};
pub use kernels::{Kernel, KernelFamily, KernelSpec, Normalization};
pub use metric::{ChiProfile, CollarChart, CollarPoint, Cutoff, MetricField};
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
