//! Queueing-aware facility location via mixed-integer second-order cone
//! programming.
//!
//! The crate has three layers:
//!
//! * closed-form performance metrics for single-server queues with general
//!   service times, plus a discrete-event simulator used to cross-check them
//!   ([`queue`]);
//! * an algebra of second-order cone constraints and the exact conic models
//!   of a congestion-aware facility location problem built from them
//!   ([`conic`], [`model`], [`location`], [`reform`]);
//! * an exact solver: outer approximation of the cone rows around an in-repo
//!   simplex core, wrapped in branch and bound ([`solver`]), together with a
//!   reproducible instance generator ([`instgen`]).

pub mod conic;
pub mod instgen;
pub mod location;
pub mod model;
pub mod queue;
pub mod reform;
pub mod rng;
pub mod solver;
