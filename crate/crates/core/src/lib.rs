//! Locally exponentially stabilizing residual controllers: a fixed linear
//! gain plus learnable stable Youla dynamics, trained through unrolled RK4
//! rollouts of a closed-loop neural ODE.

pub mod autodiff;
pub mod error;
pub mod lincontrol;
pub mod linalg;
pub mod necessity;
pub mod ode;
pub mod plant;
pub mod policy;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
