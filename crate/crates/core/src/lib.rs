//! Sampling-based model predictive path-integral navigation for vehicles
//! with four independently driven and steered wheels.

pub mod kinematics;
pub mod world;
pub mod planner;
pub mod mppi;
pub mod hybrid;
pub mod harness;
