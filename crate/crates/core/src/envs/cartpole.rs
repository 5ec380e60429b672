use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRAVITY: f64 = 9.8;
pub const MASS_CART: f64 = 1.0;
pub const MASS_POLE: f64 = 0.1;
pub const HALF_LENGTH: f64 = 0.5;
pub const FORCE: f64 = 10.0;
pub const DT: f64 = 0.02;
/// Rail half-span in metres.
pub const X_LIMIT: f64 = 2.4;
/// Angle bound that ends a randomly controlled data-collection episode.
pub const THETA_LIMIT: f64 = 12.0 * std::f64::consts::PI / 180.0;

/// `theta` is measured from vertical and positive when the pole leans
/// toward `+x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartPoleState {
    /// The pole has swung past horizontal-down in either direction.
    pub fn fallen(&self) -> bool {
        self.theta.abs() > std::f64::consts::PI
    }

    /// Outside the angle or rail limits used while collecting data.
    pub fn out_of_bounds(&self) -> bool {
        self.theta.abs() > THETA_LIMIT || self.x.abs() > X_LIMIT
    }
}

/// Explicit Euler step under an arbitrary horizontal force.
pub fn cartpole_step_force(s: CartPoleState, force: f64, dt: f64) -> Result<CartPoleState> {
    if ![s.x, s.x_dot, s.theta, s.theta_dot, force, dt].iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite cart-pole input {s:?}, f={force}")));
    }
    let total = MASS_CART + MASS_POLE;
    let pml = MASS_POLE * HALF_LENGTH;
    let (sin, cos) = s.theta.sin_cos();
    let temp = (force + pml * s.theta_dot * s.theta_dot * sin) / total;
    let theta_acc = (GRAVITY * sin - cos * temp) / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / total));
    let x_acc = temp - pml * theta_acc * cos / total;
    Ok(CartPoleState {
        x: s.x + dt * s.x_dot,
        x_dot: s.x_dot + dt * x_acc,
        theta: s.theta + dt * s.theta_dot,
        theta_dot: s.theta_dot + dt * theta_acc,
    })
}

/// Action 1 pushes with `+10 N`, action 0 with `-10 N`.
pub fn cartpole_step(s: CartPoleState, action: u8, dt: f64) -> Result<CartPoleState> {
    let force = if action == 1 { FORCE } else { -FORCE };
    cartpole_step_force(s, force, dt)
}

/// Regression target: pole angle in degrees.
pub fn cartpole_label(s: &CartPoleState) -> Vec<f64> {
    vec![s.theta.to_degrees()]
}
