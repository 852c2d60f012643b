//! Simulation and control stack for a tendon-driven robotic hand.

pub mod bridge;
pub mod clock;
pub mod config;
pub mod coordinator;
pub mod dynamics;
pub mod grasp;
pub mod hand;
pub mod kinematics;
pub mod node;
pub mod protocol;
pub mod record;
pub mod scenario;
pub mod sensor;
pub mod server;
pub mod sim;
pub mod simhand;
pub mod touch;
pub mod transport;
