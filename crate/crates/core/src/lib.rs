//! Exact finite-volume Gibbs measures on Z^d, entropy factorization checks,
//! heat-bath block dynamics and strong spatial mixing estimates.

pub mod dynamics;
pub mod error;
pub mod gibbs;
pub mod inequalities;
pub mod io;
pub mod lattice;
pub mod mc;
pub mod model;
pub mod optimize;
pub mod report;
pub mod ssm;

pub use error::{Error, Result};
pub use gibbs::{gibbs_table, ConfigFunction, GibbsTable};
pub use lattice::Region;
pub use model::{BoundaryCondition, SpinModel};
