//! Deterministic interacting particle systems on sparse inhomogeneous random
//! graphs, their nested empirical measures, explicit large-deviation rate
//! functions, and numerical checks of the associated scaling limits.

pub mod acceptance;
pub mod circle;
pub mod dynamics;
pub mod error;
pub mod graph;
pub mod hexfloat;
pub mod ldp;
pub mod measures;
pub mod oracle;
pub mod output;
pub mod pushforward;
pub mod rates;
pub mod rng;
pub mod transport;

pub use circle::{
    circle_mean, kernel_mass, ArcPartition, CircleArc, CircleDensity, ConnectionKernel, Grid,
    GridFunction, KernelSpec, MassDensity,
};
pub use dynamics::{
    integrate, path_empirical, simulate, Coupling, Drift, InitialCondition, Lift, Scheme,
    TrajectoryBundle, VectorFieldPair,
};
pub use error::{Error, Result};
pub use graph::{sample_graph, GraphSample, SparsitySchedule};
pub use measures::{
    build_nested, nested_wasserstein, path_wasserstein, project_pi, unroll_phi, wasserstein,
    AtomMeasure, DepthMeasure, NestedEmpiricalMeasure, PathMeasure, PlusMeasure,
};
