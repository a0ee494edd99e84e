//! Virtual fixtures on surface point clouds.
//!
//! Behaviors annotated on a few regions of a scanned surface (a force limit,
//! an obstacle, a target) are spread over the rest of the surface by solving
//! diffusion problems with a point-cloud Laplace-Beltrami operator. The
//! results are queryable per position: a value fixture answers "what scalar
//! applies here", a guidance fixture answers "which tangent direction should
//! an agent move in".
//!
//! The pipeline is:
//!
//! 1. [`geometry`]: build a [`PointCloud`] (k-NN graph, spacing `h`) and
//!    estimate oriented tangent frames.
//! 2. [`segmentation`]: attach per-point region ids and extract interface and
//!    open (scan-edge) boundaries.
//! 3. [`operators`]: assemble the Gaussian-kernel graph Laplacian and mass
//!    matrix, evaluate tangent-plane gradients.
//! 4. [`solvers`]: harmonic interpolation and backward-Euler heat steps under
//!    Dirichlet / zero-Neumann conditions.
//! 5. [`fixtures`]: value and guidance fixtures, point queries, agent
//!    simulation.
//!
//! [`io`] holds the PLY, JSON spec and CSV formats used by the CLI and the
//! HTTP service.

pub mod fixtures;
pub mod geometry;
pub mod io;
pub mod operators;
pub mod segmentation;
pub mod solvers;

pub use fixtures::{
    build_fixture, build_guidance_fixture, build_value_fixture, Fixture, FixtureError,
    FixtureKind, FixtureParams, FixtureResponse, FixtureSpec, GuidanceFixture, Outcome, Role,
    Trajectory, ValueFixture,
};
pub use geometry::{build_cloud, build_surface, GeometryError, PointCloud, TangentFrame};
pub use operators::{assemble_laplacian, LaplacianParams, ScalarField, SparseOperator, TangentVectorField};
pub use segmentation::{apply_labels, RegionId, RegionLabeling, SegmentationError};
pub use solvers::{heat_step, solve_laplace, BoundaryConditions, SolveError, SolveParams};

/// Default number of nearest neighbors per point.
pub const DEFAULT_K: usize = 12;

pub type Vec3 = nalgebra::Vector3<f64>;
