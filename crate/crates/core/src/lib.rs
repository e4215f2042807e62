//! Offset-free model predictive control for a two-axis spherical soft arm,
//! with the ball-catching pipeline built on top of it.
//!
//! The crate is organised bottom-up:
//!
//! * [`allocation`]: three bellow pressures to two orientation-aligned
//!   pressure differences and the induced input hexagon.
//! * [`dynamics`]: linear arm/pressure model, exact discretization and the
//!   mismatched plant used as ground truth.
//! * [`sysid`]: excitation design, local-polynomial differentiation and
//!   least-squares identification of the model coefficients.
//! * [`estimation`]: disturbance-augmented steady-state Kalman filter.
//! * [`tracking`]: disturbance-aware target state/input calculation.
//! * [`qp`] and [`mpc`]: condensed tracking QP and its interior-point solver.
//! * [`ball`], [`planner`]: ball EKF, sphere-intercept prediction and
//!   great-circle set point generation.
//! * [`simharness`]: closed-loop tracking and catching scenarios.

pub mod acceptance;
pub mod allocation;
pub mod ball;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod estimation;
pub mod mpc;
pub mod planner;
pub mod qp;
pub mod simharness;
pub mod sphere;
pub mod sysid;
pub mod tracking;

pub use allocation::{ActuatorPressures, AllocatedInput, InputPolytope};
pub use dynamics::{ArmState, ContinuousModel, DiscreteModel, Input, ModelParams, TruePlantConfig};
pub use error::{Error, Result};
pub use sphere::{Angles, ArmSphere};

/// Controller sampling time in seconds.
pub const CONTROL_PERIOD: f64 = 0.02;
/// Sensor / plant integration period in seconds.
pub const SENSOR_PERIOD: f64 = 0.005;
/// Lower pressure bound used throughout.
pub const P_BAR: f64 = 1.05;
/// Ambient pressure, bar.
pub const P_MIN: f64 = 1.0;
/// Maximum allowed actuator pressure, bar.
pub const P_MAX: f64 = 1.9;
