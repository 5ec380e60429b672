use serde::{Deserialize, Serialize};

use super::cartpole::{CartPoleState, X_LIMIT};
use super::pendulum::PendulumState;
use crate::error::{arg_err, Result};
use crate::numeric::Tensor3;

const BACKGROUND: f64 = 1.0;
const ROD: f64 = 0.2;
const AXLE: f64 = 0.0;
const CART: f64 = 0.0;
const POLE: f64 = 0.35;
const TRACK: f64 = 0.6;

/// Frame geometry in pixels. Shapes are tested at `supersample²` evenly
/// spaced points per pixel and the pixel takes the mean sample value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub size: usize,
    pub supersample: usize,
    /// Pendulum rod or cart-pole pole length.
    pub rod_length: f64,
    pub rod_half_width: f64,
    pub axle_radius: f64,
    pub cart_width: f64,
    pub cart_height: f64,
    /// Vertical position of the rail and the cart's bottom edge.
    pub track_row: f64,
}

impl RenderSpec {
    pub fn pendulum(size: usize) -> Self {
        let s = size as f64;
        Self {
            size,
            supersample: 2,
            rod_length: 0.4 * s,
            rod_half_width: 0.05 * s,
            axle_radius: 0.04 * s,
            cart_width: 0.0,
            cart_height: 0.0,
            track_row: 0.0,
        }
    }

    pub fn cartpole(size: usize) -> Self {
        let s = size as f64;
        Self {
            size,
            supersample: 2,
            rod_length: 0.45 * s,
            rod_half_width: 0.025 * s,
            axle_radius: 0.0,
            cart_width: 0.16 * s,
            cart_height: 0.08 * s,
            track_row: 0.8 * s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.size, 64 | 128) {
            return Err(arg_err!("image size must be 64 or 128, got {}", self.size));
        }
        if self.supersample == 0 {
            return Err(arg_err!("supersample factor must be positive"));
        }
        if self.cart_width >= self.size as f64 {
            return Err(arg_err!("cart wider than the frame"));
        }
        Ok(())
    }

    /// Horizontal pixel coordinate of the cart centre. The rails at `±2.4`
    /// put the cart flush with the frame edges.
    pub fn cart_center(&self, x: f64) -> f64 {
        0.5 * self.size as f64 + self.cart_offset(x)
    }

    fn cart_offset(&self, x: f64) -> f64 {
        x * (self.size as f64 - self.cart_width) / (2.0 * X_LIMIT)
    }
}

/// Squared distance from `p` to the segment `a + t d`, `t ∈ [0, 1]`.
fn segment_dist2(px: f64, py: f64, ax: f64, ay: f64, dx: f64, dy: f64) -> f64 {
    let (rx, ry) = (px - ax, py - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { ((rx * dx + ry * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (ex, ey) = (rx - t * dx, ry - t * dy);
    ex * ex + ey * ey
}

fn rasterize(spec: &RenderSpec, shade: impl Fn(f64, f64) -> f64) -> Tensor3 {
    let n = spec.size;
    let ss = spec.supersample;
    let offsets: Vec<f64> = (0..ss).map(|i| (i as f64 + 0.5) / ss as f64).collect();
    let inv = 1.0 / (ss * ss) as f64;
    let mut data = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            let mut acc = 0.0;
            for oy in &offsets {
                for ox in &offsets {
                    acc += shade(c as f64 + ox, r as f64 + oy);
                }
            }
            data.push(acc * inv);
        }
    }
    Tensor3::from_raw(n, n, 1, data)
}

/// Rod from the frame centre toward `(-sin θ, -cos θ)` in (column, row)
/// coordinates, so `θ = 0` points up and positive angles lean left.
pub fn render_pendulum(s: &PendulumState, spec: &RenderSpec) -> Tensor3 {
    let c = 0.5 * spec.size as f64;
    let (sin, cos) = s.theta.sin_cos();
    let (dx, dy) = (-spec.rod_length * sin, -spec.rod_length * cos);
    let w2 = spec.rod_half_width * spec.rod_half_width;
    let a2 = spec.axle_radius * spec.axle_radius;
    rasterize(spec, |px, py| {
        let (rx, ry) = (px - c, py - c);
        if rx * rx + ry * ry <= a2 {
            AXLE
        } else if segment_dist2(rx, ry, 0.0, 0.0, dx, dy) <= w2 {
            ROD
        } else {
            BACKGROUND
        }
    })
}

/// Rail line, cart box centred at the mapped `x`, and a pole hinged at the
/// cart's top centre leaning toward `+x` for positive angles.
pub fn render_cartpole(s: &CartPoleState, spec: &RenderSpec) -> Tensor3 {
    let mid = 0.5 * spec.size as f64;
    let offset = spec.cart_offset(s.x);
    let top = spec.track_row - spec.cart_height;
    let (sin, cos) = s.theta.sin_cos();
    let (dx, dy) = (spec.rod_length * sin, -spec.rod_length * cos);
    let w2 = spec.rod_half_width * spec.rod_half_width;
    let half_cart = 0.5 * spec.cart_width;
    rasterize(spec, |px, py| {
        // Horizontal coordinates relative to the frame centre keep the
        // drawing exactly antisymmetric under x -> -x.
        let rx = px - mid - offset;
        if segment_dist2(rx, py, 0.0, top, dx, dy) <= w2 {
            POLE
        } else if rx.abs() <= half_cart && py >= top && py <= spec.track_row {
            CART
        } else if (py - spec.track_row).abs() <= 0.5 {
            TRACK
        } else {
            BACKGROUND
        }
    })
}
