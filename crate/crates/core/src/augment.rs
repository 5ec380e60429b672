//! Synthetic visual disturbances for training-set augmentation and runtime
//! injection: blockages, defocus blur, fog, sensor noise, perspective shift
//! and lens spatter.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{arg_err, dim_err, Error, Result};
use crate::numeric::{derive_seed, Rng, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceKind {
    Blockages,
    Blur,
    Fog,
    Noise,
    Shift,
    Spatter,
}

impl DisturbanceKind {
    pub const ALL: [DisturbanceKind; 6] = [Self::Blockages, Self::Blur, Self::Fog, Self::Noise, Self::Shift, Self::Spatter];

    pub fn name(self) -> &'static str {
        match self {
            Self::Blockages => "blockages",
            Self::Blur => "blur",
            Self::Fog => "fog",
            Self::Noise => "noise",
            Self::Shift => "shift",
            Self::Spatter => "spatter",
        }
    }
}

impl std::str::FromStr for DisturbanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| arg_err!("unknown disturbance {s:?}"))
    }
}

/// Sampling ranges for every disturbance parameter. Lengths are fractions
/// of the image side unless noted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceRanges {
    pub blockage_count: (usize, usize),
    pub blockage_side: (f64, f64),
    pub blockage_fill: f64,
    /// Disc radius in pixels at 64 px; scaled with the image side.
    pub blur_radius: (f64, f64),
    pub fog_strength: (f64, f64),
    pub noise_sigma: (f64, f64),
    /// Maximum corner displacement.
    pub shift_jitter: f64,
    /// Fraction of pixels covered by drops.
    pub spatter_coverage: (f64, f64),
}

impl Default for DisturbanceRanges {
    fn default() -> Self {
        Self {
            blockage_count: (1, 4),
            blockage_side: (0.10, 0.25),
            blockage_fill: 0.5,
            blur_radius: (1.0, 3.0),
            fog_strength: (0.3, 0.6),
            noise_sigma: (0.05, 0.15),
            shift_jitter: 0.08,
            spatter_coverage: (0.02, 0.08),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    pub kind: DisturbanceKind,
    pub seed: u64,
    #[serde(default)]
    pub ranges: DisturbanceRanges,
}

impl DisturbanceSpec {
    pub fn new(kind: DisturbanceKind, seed: u64) -> Self {
        Self { kind, seed, ranges: DisturbanceRanges::default() }
    }
}

/// Axis-aligned rectangle in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// A disturbance with every random parameter drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Disturbance {
    Blockages { rects: Vec<Rect>, fill: f64 },
    Blur { radius: f64 },
    Fog { strength: f64, noise_seed: u64 },
    Noise { sigma: f64, noise_seed: u64 },
    /// Source-image positions of the four output corners, in the order
    /// top-left, top-right, bottom-right, bottom-left, as pixel offsets.
    Shift { corner_offsets: [(f64, f64); 4] },
    Spatter { coverage: f64, noise_seed: u64 },
}

/// Draws concrete parameters for an image of the given size.
pub fn realize(spec: &DisturbanceSpec, rows: usize, cols: usize) -> Disturbance {
    let r = &spec.ranges;
    let mut rng = Rng::new(spec.seed);
    let side = rows.min(cols) as f64;
    match spec.kind {
        DisturbanceKind::Blockages => {
            let k = rng.int_inclusive(r.blockage_count.0, r.blockage_count.1);
            let rects = (0..k)
                .map(|_| {
                    let h = ((rng.uniform_range(r.blockage_side.0, r.blockage_side.1) * rows as f64).round() as usize).clamp(1, rows);
                    let w = ((rng.uniform_range(r.blockage_side.0, r.blockage_side.1) * cols as f64).round() as usize).clamp(1, cols);
                    Rect { top: rng.below(rows - h + 1), left: rng.below(cols - w + 1), height: h, width: w }
                })
                .collect();
            Disturbance::Blockages { rects, fill: r.blockage_fill }
        }
        DisturbanceKind::Blur => {
            Disturbance::Blur { radius: rng.uniform_range(r.blur_radius.0, r.blur_radius.1) * side / 64.0 }
        }
        DisturbanceKind::Fog => {
            Disturbance::Fog { strength: rng.uniform_range(r.fog_strength.0, r.fog_strength.1), noise_seed: rng.next_u64() }
        }
        DisturbanceKind::Noise => {
            Disturbance::Noise { sigma: rng.uniform_range(r.noise_sigma.0, r.noise_sigma.1), noise_seed: rng.next_u64() }
        }
        DisturbanceKind::Shift => {
            let j = r.shift_jitter * side;
            let mut corner_offsets = [(0.0, 0.0); 4];
            for c in &mut corner_offsets {
                *c = (rng.uniform_range(-j, j), rng.uniform_range(-j, j));
            }
            Disturbance::Shift { corner_offsets }
        }
        DisturbanceKind::Spatter => Disturbance::Spatter {
            coverage: rng.uniform_range(r.spatter_coverage.0, r.spatter_coverage.1),
            noise_seed: rng.next_u64(),
        },
    }
}

pub fn apply_disturbance(image: &Tensor3, spec: &DisturbanceSpec) -> Result<Tensor3> {
    apply_realized(image, &realize(spec, image.dim1(), image.dim2()))
}

/// Applies concrete parameters; the output is clamped to `[0, 1]`.
pub fn apply_realized(image: &Tensor3, d: &Disturbance) -> Result<Tensor3> {
    if image.channels() != 1 {
        return Err(dim_err!("disturbances need a grayscale image, got {} channels", image.channels()));
    }
    let (rows, cols) = (image.dim1(), image.dim2());
    let src = image.data();
    let mut out: Vec<f64> = match d {
        Disturbance::Blockages { rects, fill } => {
            let mut o = src.to_vec();
            for rc in rects {
                for r in rc.top..(rc.top + rc.height).min(rows) {
                    for c in rc.left..(rc.left + rc.width).min(cols) {
                        o[r * cols + c] = *fill;
                    }
                }
            }
            o
        }
        Disturbance::Blur { radius } => disc_blur(src, rows, cols, *radius),
        Disturbance::Fog { strength, noise_seed } => {
            let mask = value_noise(rows, cols, &[4, 8, 16], *noise_seed);
            let mean = mask.iter().sum::<f64>() / mask.len() as f64;
            let scale = if mean > 0.0 { strength / mean } else { 0.0 };
            src.iter().zip(&mask).map(|(v, m)| {
                let a = (m * scale).clamp(0.0, 1.0);
                (1.0 - a) * v + a
            }).collect()
        }
        Disturbance::Noise { sigma, noise_seed } => {
            let mut rng = Rng::new(*noise_seed);
            src.iter().map(|v| v + sigma * rng.normal()).collect()
        }
        Disturbance::Shift { corner_offsets } => warp(src, rows, cols, corner_offsets)?,
        Disturbance::Spatter { coverage, noise_seed } => spatter(src, rows, cols, *coverage, *noise_seed),
    };
    out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(Tensor3::from_raw(rows, cols, 1, out))
}

/// Mean over a disc of the given radius with clamp-to-edge borders.
fn disc_blur(src: &[f64], rows: usize, cols: usize, radius: f64) -> Vec<f64> {
    let reach = radius.floor() as isize;
    let mut taps = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            if ((dx * dx + dy * dy) as f64) <= radius * radius {
                taps.push((dy, dx));
            }
        }
    }
    let w = 1.0 / taps.len() as f64;
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for &(dy, dx) in &taps {
                let rr = (r as isize + dy).clamp(0, rows as isize - 1) as usize;
                let cc = (c as isize + dx).clamp(0, cols as isize - 1) as usize;
                acc += src[rr * cols + cc];
            }
            out[r * cols + c] = acc * w;
        }
    }
    out
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Sum of smoothly interpolated random lattices, one per cell count, with
/// amplitude halving per octave; normalized to `[0, 1]`.
fn value_noise(rows: usize, cols: usize, cells: &[usize], seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    let mut out = vec![0.0; rows * cols];
    let mut amp = 1.0;
    let mut total = 0.0;
    for &k in cells {
        let lattice: Vec<f64> = (0..(k + 1) * (k + 1)).map(|_| rng.uniform()).collect();
        for r in 0..rows {
            let y = (r as f64 + 0.5) / rows as f64 * k as f64;
            let y0 = (y.floor() as usize).min(k - 1);
            let ty = smoothstep(y - y0 as f64);
            for c in 0..cols {
                let x = (c as f64 + 0.5) / cols as f64 * k as f64;
                let x0 = (x.floor() as usize).min(k - 1);
                let tx = smoothstep(x - x0 as f64);
                let at = |i: usize, j: usize| lattice[i * (k + 1) + j];
                let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
                let bot = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
                out[r * cols + c] += amp * (top * (1.0 - ty) + bot * ty);
            }
        }
        total += amp;
        amp *= 0.5;
    }
    out.iter_mut().for_each(|v| *v /= total);
    out
}

const DROP: f64 = 0.1;

/// Darkens the `coverage` fraction of pixels where blurred white noise is
/// largest, giving clustered drops.
fn spatter(src: &[f64], rows: usize, cols: usize, coverage: f64, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    let white: Vec<f64> = (0..rows * cols).map(|_| rng.normal()).collect();
    let field = disc_blur(&white, rows, cols, (rows.min(cols) as f64 / 32.0).max(1.0) * 1.5);
    let mut order: Vec<usize> = (0..field.len()).collect();
    order.sort_by(|&a, &b| field[b].total_cmp(&field[a]).then(a.cmp(&b)));
    let count = (coverage * field.len() as f64).round() as usize;
    let mut out = src.to_vec();
    for &i in &order[..count.min(order.len())] {
        out[i] = DROP;
    }
    out
}

/// Solves the 8-parameter homography taking the frame corners to the
/// jittered corners.
fn homography(dst: &[(f64, f64); 4], src: &[(f64, f64); 4]) -> Result<[f64; 9]> {
    let mut a = [[0.0f64; 9]; 8];
    for i in 0..4 {
        let (x, y) = dst[i];
        let (u, v) = src[i];
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    for col in 0..8 {
        let piv = (col..8).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap_or(col);
        if a[piv][col].abs() < 1e-12 {
            return Err(Error::Numerical("degenerate perspective corners".into()));
        }
        a.swap(col, piv);
        for row in 0..8 {
            if row != col {
                let f = a[row][col] / a[col][col];
                if f != 0.0 {
                    for k in col..9 {
                        a[row][k] -= f * a[col][k];
                    }
                }
            }
        }
    }
    let mut h = [0.0; 9];
    for i in 0..8 {
        h[i] = a[i][8] / a[i][i];
    }
    h[8] = 1.0;
    Ok(h)
}

fn warp(src: &[f64], rows: usize, cols: usize, offsets: &[(f64, f64); 4]) -> Result<Vec<f64>> {
    let (w, h) = ((cols - 1) as f64, (rows - 1) as f64);
    let frame = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
    let mut moved = frame;
    for (m, o) in moved.iter_mut().zip(offsets) {
        m.0 += o.0;
        m.1 += o.1;
    }
    let hm = homography(&frame, &moved)?;
    let pixel = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= rows as isize || c >= cols as isize {
            1.0
        } else {
            src[r as usize * cols + c as usize]
        }
    };
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let (x, y) = (c as f64, r as f64);
            let den = hm[6] * x + hm[7] * y + hm[8];
            let u = (hm[0] * x + hm[1] * y + hm[2]) / den;
            let v = (hm[3] * x + hm[4] * y + hm[5]) / den;
            let (u0, v0) = (u.floor(), v.floor());
            let (fu, fv) = (u - u0, v - v0);
            let (iu, iv) = (u0 as isize, v0 as isize);
            let top = pixel(iv, iu) * (1.0 - fu) + pixel(iv, iu + 1) * fu;
            let bot = pixel(iv + 1, iu) * (1.0 - fu) + pixel(iv + 1, iu + 1) * fu;
            out[r * cols + c] = top * (1.0 - fv) + bot * fv;
        }
    }
    Ok(out)
}

/// Disturbed copies of `images`, the `i`-th drawn from its own seed.
pub fn disturb_images(images: &[Tensor3], kind: DisturbanceKind, seed: u64) -> Result<Vec<Tensor3>> {
    images
        .iter()
        .enumerate()
        .map(|(i, img)| apply_disturbance(img, &DisturbanceSpec::new(kind, derive_seed(seed, i as u64))))
        .collect()
}

/// Appends one disturbed copy of every frame per requested kind, in the
/// order given. Copies keep their source labels and episode structure.
pub fn augment_dataset(data: &Dataset, kinds: &[DisturbanceKind], seed: u64) -> Result<Dataset> {
    if data.is_empty() {
        return Err(Error::InsufficientData("cannot augment an empty dataset".into()));
    }
    let n = data.len();
    let mut out = data.clone();
    for (k, &kind) in kinds.iter().enumerate() {
        let base = out.images.len();
        out.images.extend(disturb_images(&data.images, kind, derive_seed(seed, k as u64))?);
        out.labels.extend(data.labels.iter().cloned());
        out.episode_starts.extend(data.episode_starts.iter().map(|s| s + base));
        debug_assert_eq!(out.images.len(), base + n);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{render_pendulum, PendulumState, RenderSpec};

    fn scene() -> Tensor3 {
        render_pendulum(&PendulumState { theta: 0.9, theta_dot: 0.0 }, &RenderSpec::pendulum(64))
    }

    #[test]
    fn outputs_stay_in_range_and_are_deterministic() {
        let img = scene();
        for kind in DisturbanceKind::ALL {
            let spec = DisturbanceSpec::new(kind, 17);
            let a = apply_disturbance(&img, &spec).unwrap();
            assert_eq!(a.shape(), img.shape());
            assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)), "{kind:?}");
            assert_eq!(a, apply_disturbance(&img, &spec).unwrap());
            assert_ne!(a, img, "{kind:?} left the image unchanged");
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let img = scene();
        let out = apply_realized(&img, &Disturbance::Noise { sigma: 0.0, noise_seed: 3 }).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn noise_residual_has_requested_spread() {
        let img = Tensor3::filled(64, 64, 1, 0.5);
        let out = apply_realized(&img, &Disturbance::Noise { sigma: 0.1, noise_seed: 4 }).unwrap();
        let res: Vec<f64> = out.data().iter().map(|v| v - 0.5).collect();
        let mean = res.iter().sum::<f64>() / res.len() as f64;
        let sd = (res.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / res.len() as f64).sqrt();
        assert!((sd - 0.1).abs() < 0.01, "stdev {sd}");
    }

    #[test]
    fn blur_keeps_constants() {
        let img = Tensor3::filled(16, 16, 1, 0.3);
        for radius in [1.0, 2.2, 3.0] {
            let out = apply_realized(&img, &Disturbance::Blur { radius }).unwrap();
            assert!(out.max_abs_diff(&img) < 1e-12);
        }
    }

    #[test]
    fn zero_jitter_shift_is_identity() {
        let img = scene();
        let out = apply_realized(&img, &Disturbance::Shift { corner_offsets: [(0.0, 0.0); 4] }).unwrap();
        assert!(out.max_abs_diff(&img) < 1e-12);
    }

    #[test]
    fn translation_shift_moves_content() {
        // Moving every source corner by +2 columns samples two pixels to the right.
        let img = scene();
        let out = apply_realized(&img, &Disturbance::Shift { corner_offsets: [(2.0, 0.0); 4] }).unwrap();
        for r in 0..64 {
            for c in 0..62 {
                assert!((out.get(r, c, 0) - img.get(r, c + 2, 0)).abs() < 1e-9);
            }
            assert_eq!(out.get(r, 63, 0), 1.0);
        }
    }

    #[test]
    fn blockage_and_spatter_geometry() {
        let img = Tensor3::filled(64, 64, 1, 1.0);
        let rect = Rect { top: 2, left: 5, height: 3, width: 4 };
        let out = apply_realized(&img, &Disturbance::Blockages { rects: vec![rect], fill: 0.5 }).unwrap();
        assert_eq!(out.data().iter().filter(|v| **v == 0.5).count(), 12);
        assert_eq!(out.get(2, 5, 0), 0.5);
        assert_eq!(out.get(5, 5, 0), 1.0);
        let sp = apply_realized(&img, &Disturbance::Spatter { coverage: 0.05, noise_seed: 1 }).unwrap();
        let dark = sp.data().iter().filter(|v| **v == DROP).count();
        assert_eq!(dark, (0.05f64 * 4096.0).round() as usize);
        for kind in DisturbanceKind::ALL {
            if let Disturbance::Blockages { rects, .. } = realize(&DisturbanceSpec::new(kind, 5), 64, 64) {
                assert!((1..=4).contains(&rects.len()));
                for r in rects {
                    assert!(r.top + r.height <= 64 && r.left + r.width <= 64);
                    assert!((6..=16).contains(&r.height));
                }
            }
        }
    }

    #[test]
    fn fog_brightens_by_requested_mean_strength() {
        let img = Tensor3::zeros(64, 64, 1);
        let out = apply_realized(&img, &Disturbance::Fog { strength: 0.4, noise_seed: 2 }).unwrap();
        let mean = out.data().iter().sum::<f64>() / 4096.0;
        assert!((mean - 0.4).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn rgb_input_rejected() {
        let img = Tensor3::zeros(4, 4, 3);
        assert!(apply_disturbance(&img, &DisturbanceSpec::new(DisturbanceKind::Blur, 1)).is_err());
    }

    #[test]
    fn augmentation_appends_labeled_copies() {
        let data = Dataset {
            images: vec![scene(), scene().map(|v| v * 0.5)],
            labels: vec![vec![0.1, 0.2], vec![0.3, 0.4]],
            episode_starts: vec![0],
        };
        let one = augment_dataset(&data, &[DisturbanceKind::Fog], 1).unwrap();
        assert_eq!(one.len(), 4);
        assert_eq!(one.labels[2..], data.labels[..]);
        assert_eq!(one.episode_starts, vec![0, 2]);
        assert_eq!(one.images[..2], data.images[..]);
        let two = augment_dataset(&data, &[DisturbanceKind::Fog, DisturbanceKind::Noise], 1).unwrap();
        assert_eq!(two.len(), 6);
        assert_eq!(two.images[..4], one.images[..]);
    }
}
