//! Routing instances and everything that does not learn: generators, the
//! TSPLIB reader, geometric transforms, K-means multiresolution hierarchies
//! and the classical solvers used as references and exact oracles.

pub mod dataset;
mod error;
pub mod generate;
pub mod instance;
pub mod multires;
pub mod solvers;
pub mod transform;
pub mod tsplib;

pub use error::CoreError;
pub use generate::Distribution;
pub use instance::{
    cvrp_solution_length, tour_length, CvrpSolution, Instance, Point, ProblemKind, Solution,
    Tour, CAPACITY_TOLERANCE,
};
pub use multires::{build_hierarchy, coarsen, kmeans, ClusterPartition, MultiresHierarchy};
pub use transform::{apply_transform, TransformSpec};

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
