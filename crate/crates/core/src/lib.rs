//! Distributed formation planning on a virtual rigid body with
//! chance-constrained inter-robot collision avoidance.
//!
//! Module map:
//!
//! - [`vrb`]: formation transform, Jacobian and pseudo-inverse.
//! - [`chance`]: probabilistic collision constraints on the formation scale.
//! - [`qp`]: active-set projection of the scale derivative.
//! - [`planner`]: the per-robot planning tick.
//! - [`sim`]: deterministic lockstep simulator, scenarios and metrics.
//! - [`verify`]: randomized checks of the collision bound and the projection.

pub mod chance;
pub mod error;
pub mod normal;
pub mod obstacles;
pub mod planner;
pub mod qp;
pub mod sim;
pub mod verify;
pub mod vrb;

pub use error::{ChanceError, GeometryError, PlannerError, QpError, ScenarioError, SimError};
