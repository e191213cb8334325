//! Multiscale crowd simulation on rectangular domains with rectangular obstacles.
//!
//! Particles carry the microscopic state. Every step they are smoothed onto a
//! cell-centred grid with an SPH kernel, steered either by a domain potential
//! (fast marching on an anisotropic unit-cost field) or by a visibility-graph
//! route planner, and kept below a maximum density by a pressure obtained from
//! a linear complementarity problem.
//!
//! # Modules
//! - [`scene`] -- domain geometry, grid indexing, scenario files.
//! - [`particles`] -- particle storage, inflow/outflow, Euler stepping, minimum distance.
//! - [`fields`] -- cell-centred fields and the finite-difference operators.
//! - [`sph`] -- kernels and the particle-to-grid conversion.
//! - [`eikonal`] -- speed/discomfort/cost fields and fast marching.
//! - [`visgraph`] -- segment/rectangle predicates, visibility graph, waypoint paths.
//! - [`uic`] -- sparse assembly, LCP formulation and the projected Gauss-Seidel solver.
//! - [`sim`] -- time stepping drivers and metrics.

pub mod eikonal;
pub mod error;
pub mod fields;
pub mod geom;
pub mod particles;
pub mod rng;
pub mod scene;
pub mod sim;
pub mod sph;
pub mod uic;
pub mod visgraph;

pub use error::{Error, Result};
pub use geom::{Rect, Vec2};
pub use scene::{Entrance, Exit, Grid, SceneSpec};
