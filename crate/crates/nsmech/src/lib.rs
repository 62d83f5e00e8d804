//! nsmech: projection-operator dynamics for constrained multibody systems.
//!
//! The engine treats equality (bilateral) and contact (unilateral)
//! constraints uniformly through the orthogonal projector onto the null
//! space of the active constraint Jacobian. On top of that projector it
//! builds a constraint inertia matrix with tunable conditioning, an oblique
//! projector that splits accelerations and forces without ever forming
//! Lagrange multipliers explicitly, a multiple-impact solver (scalar and
//! matrix restitution) with a built-in energy audit, an energetic
//! consistency test for restitution matrices, and an event-driven simulator
//! that switches contact topology at impacts, activations, and separations.
//!
//! Entry points:
//! - [`jacobian`]: pseudo-inverse, null space projector, Jacobian rate terms.
//! - [`projection`]: constraint inertia, oblique projector, [`projection::ProjectionBundle`].
//! - [`model`]: constraint sets, system dynamics, constrained accelerations and forces.
//! - [`models`]: the built-in model library.
//! - [`impact`]: impulsive contact resolution and energy accounting.
//! - [`restitution`]: energetic feasibility of restitution matrices.
//! - [`sim`]: the event-driven simulator.
//! - [`scenario`] / [`problem`] / [`output`]: file formats.
//! - [`verify`]: randomized self-check suites.

pub mod error;
pub mod integrate;
pub mod jacobian;
pub mod impact;
pub mod model;
pub mod models;
pub mod output;
pub mod problem;
pub mod projection;
pub mod restitution;
pub mod scenario;
pub mod sim;
pub mod verify;

pub use error::{Error, Result};
