//! Simulated processes and their camera: pendulum and cart-pole dynamics,
//! a supersampled rasterizer, and random-control dataset generation.

mod cartpole;
mod pendulum;
mod render;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

pub use cartpole::{
    cartpole_label, cartpole_step, cartpole_step_force, CartPoleState, DT as CARTPOLE_DT, THETA_LIMIT, X_LIMIT,
};
pub use pendulum::{pendulum_label, pendulum_step, wrap_angle, PendulumState, DT as PENDULUM_DT, MAX_TORQUE};
pub use render::{render_cartpole, render_pendulum, RenderSpec};

use crate::dataset::Dataset;
use crate::error::{arg_err, Result};
use crate::numeric::{derive_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Pendulum,
    Cartpole,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Pendulum => "pendulum",
            Self::Cartpole => "cartpole",
        }
    }

    pub fn default_render(self, size: usize) -> RenderSpec {
        match self {
            Self::Pendulum => RenderSpec::pendulum(size),
            Self::Cartpole => RenderSpec::cartpole(size),
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(Self::Pendulum),
            "cartpole" => Ok(Self::Cartpole),
            _ => Err(arg_err!("unknown environment {s:?}")),
        }
    }
}

/// Random-control data collection settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerateSpec {
    pub env: EnvKind,
    pub episodes: usize,
    pub seed: u64,
    pub render: RenderSpec,
    /// Frames per pendulum episode.
    pub pendulum_steps: usize,
    /// Step cap for a cart-pole episode.
    pub cartpole_max_steps: usize,
    /// Cart start positions are drawn from `±cartpole_start_x`.
    pub cartpole_start_x: f64,
}

impl GenerateSpec {
    pub fn new(env: EnvKind, episodes: usize, size: usize, seed: u64) -> Self {
        Self {
            env,
            episodes,
            seed,
            render: env.default_render(size),
            pendulum_steps: 40,
            cartpole_max_steps: 200,
            cartpole_start_x: 2.0,
        }
    }
}

/// Pendulum start: angle uniform over the circle, rate in `±1`.
pub fn pendulum_start(rng: &mut Rng) -> PendulumState {
    PendulumState { theta: wrap_angle(rng.uniform_range(-PI, PI)), theta_dot: rng.uniform_range(-1.0, 1.0) }
}

/// Cart-pole start with every component in `±0.05` except the cart
/// position, which spans `±start_x`.
pub fn cartpole_start(rng: &mut Rng, start_x: f64) -> CartPoleState {
    CartPoleState {
        x: rng.uniform_range(-start_x, start_x),
        x_dot: rng.uniform_range(-0.05, 0.05),
        theta: rng.uniform_range(-0.05, 0.05),
        theta_dot: rng.uniform_range(-0.05, 0.05),
    }
}

/// Rolls `episodes` randomly controlled episodes and renders every visited
/// state. Episode `e` draws from its own stream derived from the seed, and
/// frames are stored episode by episode.
pub fn generate_dataset(spec: &GenerateSpec) -> Result<Dataset> {
    if spec.episodes == 0 {
        return Err(arg_err!("need at least one episode"));
    }
    spec.render.validate()?;
    let mut out = Dataset { images: vec![], labels: vec![], episode_starts: vec![] };
    for e in 0..spec.episodes {
        let mut rng = Rng::new(derive_seed(spec.seed, e as u64));
        out.episode_starts.push(out.images.len());
        match spec.env {
            EnvKind::Pendulum => {
                let mut s = pendulum_start(&mut rng);
                for _ in 0..spec.pendulum_steps {
                    out.images.push(render_pendulum(&s, &spec.render));
                    out.labels.push(pendulum_label(&s));
                    s = pendulum_step(s, rng.uniform_range(-MAX_TORQUE, MAX_TORQUE), PENDULUM_DT)?;
                }
            }
            EnvKind::Cartpole => {
                let mut s = cartpole_start(&mut rng, spec.cartpole_start_x);
                for _ in 0..spec.cartpole_max_steps {
                    out.images.push(render_cartpole(&s, &spec.render));
                    out.labels.push(cartpole_label(&s));
                    s = cartpole_step(s, rng.below(2) as u8, CARTPOLE_DT)?;
                    if s.out_of_bounds() {
                        break;
                    }
                }
            }
        }
    }
    Ok(out)
}
