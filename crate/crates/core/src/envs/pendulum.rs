use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRAVITY: f64 = 10.0;
pub const MASS: f64 = 1.0;
pub const LENGTH: f64 = 1.0;
pub const DT: f64 = 0.05;
pub const MAX_SPEED: f64 = 8.0;
pub const MAX_TORQUE: f64 = 2.0;

/// Swing-up pendulum; `theta = 0` is upright.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumState {
    pub theta: f64,
    pub theta_dot: f64,
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta % (2.0 * PI);
    if t <= -PI {
        t += 2.0 * PI;
    } else if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// One semi-implicit Euler step; torque is clipped to `±2`.
pub fn pendulum_step(s: PendulumState, torque: f64, dt: f64) -> Result<PendulumState> {
    if !(s.theta.is_finite() && s.theta_dot.is_finite() && torque.is_finite() && dt.is_finite()) {
        return Err(Error::Numerical(format!("non-finite pendulum input {s:?}, u={torque}, dt={dt}")));
    }
    let u = torque.clamp(-MAX_TORQUE, MAX_TORQUE);
    let acc = 3.0 * GRAVITY / (2.0 * LENGTH) * s.theta.sin() + 3.0 / (MASS * LENGTH * LENGTH) * u;
    let theta_dot = (s.theta_dot + acc * dt).clamp(-MAX_SPEED, MAX_SPEED);
    Ok(PendulumState { theta: wrap_angle(s.theta + theta_dot * dt), theta_dot })
}

/// Regression target `(sin θ, cos θ)`.
pub fn pendulum_label(s: &PendulumState) -> Vec<f64> {
    vec![s.theta.sin(), s.theta.cos()]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn energy(s: &PendulumState) -> f64 {
        // Per unit inertia: kinetic plus potential of the scaled gravity term.
        0.5 * s.theta_dot * s.theta_dot + 3.0 * GRAVITY / (2.0 * LENGTH) * s.theta.cos()
    }

    #[test]
    fn equilibria_are_fixed_points() {
        let up = PendulumState { theta: 0.0, theta_dot: 0.0 };
        assert_eq!(pendulum_step(up, 0.0, DT).unwrap(), up);
        let mut down = PendulumState { theta: PI, theta_dot: 0.0 };
        for _ in 0..100 {
            down = pendulum_step(down, 0.0, DT).unwrap();
        }
        assert!((down.theta.abs() - PI).abs() < 1e-12 && down.theta_dot.abs() < 1e-12);
    }

    #[test]
    fn energy_drift_is_bounded() {
        // Semi-implicit Euler keeps the raw energy oscillating at O(dt); the
        // audit checks secular drift of windowed means and the scheme's
        // first-order modified energy, which is conserved to O(dt²).
        let k = 3.0 * GRAVITY / (2.0 * LENGTH);
        let shadow = |s: &PendulumState| energy(s) + 0.5 * DT * s.theta_dot * k * s.theta.sin();
        let mut s = PendulumState { theta: 2.0, theta_dot: 0.0 };
        let (e0, m0) = (energy(&s), shadow(&s));
        let mut raw = Vec::with_capacity(1000);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            s = pendulum_step(s, 0.0, DT).unwrap();
            raw.push(energy(&s));
            worst = worst.max((shadow(&s) - m0).abs());
        }
        let head = raw[..100].iter().sum::<f64>() / 100.0;
        let tail = raw[900..].iter().sum::<f64>() / 100.0;
        assert!((tail - head).abs() < 0.05 * e0.abs(), "windowed drift {head} -> {tail}");
        assert!(worst < 0.05 * e0.abs(), "modified energy moved by {worst}");
    }

    #[test]
    fn speed_is_clamped_and_angle_wrapped() {
        let s = pendulum_step(PendulumState { theta: 3.1, theta_dot: 7.99 }, 2.0, DT).unwrap();
        assert_eq!(s.theta_dot, MAX_SPEED);
        assert!(s.theta > -PI && s.theta <= PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!(pendulum_step(PendulumState { theta: f64::NAN, theta_dot: 0.0 }, 0.0, DT).is_err());
    }

    #[test]
    fn labels_lie_on_unit_circle() {
        assert_eq!(pendulum_label(&PendulumState { theta: 0.0, theta_dot: 0.0 }), vec![0.0, 1.0]);
        let l = pendulum_label(&PendulumState { theta: PI / 2.0, theta_dot: 0.0 });
        assert!((l[0] - 1.0).abs() < 1e-15 && l[1].abs() < 1e-15);
    }
}
