//! Synthetic motion blur: random piecewise-smooth scenes rendered over a
//! short subframe sequence with camera translation, rotation and independent
//! object motion, then averaged.

use crate::error::{Error, Result};
use crate::init::Rng;
use crate::tensor::Tensor;

use super::ppm::to_byte;
use super::ImagePair;

/// Averages `frames` into the blurry image; the middle frame (index
/// `len / 2`) is the sharp reference.
pub fn synth_blur(frames: &[Tensor<f32>], id: impl Into<String>) -> Result<ImagePair> {
    if frames.len() < 2 {
        return Err(Error::invalid(
            "synth_blur",
            format!("need at least 2 frames, got {}", frames.len()),
        ));
    }
    let shape = frames[0].shape();
    let mut acc = vec![0.0f64; frames[0].len()];
    for f in frames {
        if f.shape() != shape {
            return Err(Error::ShapeMismatch {
                op: "synth_blur",
                left: shape,
                right: f.shape(),
            });
        }
        acc.iter_mut()
            .zip(f.data())
            .for_each(|(a, &v)| *a += f64::from(v));
    }
    let m = frames.len() as f64;
    let blurry = Tensor::new(shape, acc.into_iter().map(|a| (a / m) as f32).collect())?;
    ImagePair::new(id, blurry, frames[frames.len() / 2].clone())
}

/// Knobs of the scene and motion generator. Speeds are per subframe.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    pub min_frames: usize,
    pub max_frames: usize,
    /// Camera drift in pixels.
    pub max_camera_speed: f64,
    /// Camera rotation about the image center in radians.
    pub max_rotation: f64,
    /// Drift of moving objects relative to the scene, in pixels.
    pub max_object_speed: f64,
    /// Chance that a given shape moves on its own.
    pub moving_fraction: f64,
    pub min_shapes: usize,
    pub max_shapes: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            min_frames: 7,
            max_frames: 13,
            max_camera_speed: 0.6,
            max_rotation: 0.004,
            max_object_speed: 0.8,
            moving_fraction: 0.3,
            min_shapes: 6,
            max_shapes: 14,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Fill {
    Gradient,
    Stripes(f64),
}

#[derive(Clone, Copy, Debug)]
enum Outline {
    Rect,
    Ellipse,
}

#[derive(Clone, Debug)]
struct Blob {
    outline: Outline,
    fill: Fill,
    center: [f64; 2],
    half: [f64; 2],
    cos: f64,
    sin: f64,
    c0: [f64; 3],
    c1: [f64; 3],
    velocity: [f64; 2],
}

impl Blob {
    fn color(&self, x: f64, y: f64, s: f64) -> Option<[f64; 3]> {
        let dx = x - self.velocity[0] * s - self.center[0];
        let dy = y - self.velocity[1] * s - self.center[1];
        let u = (self.cos * dx + self.sin * dy) / self.half[0];
        let v = (-self.sin * dx + self.cos * dy) / self.half[1];
        let inside = match self.outline {
            Outline::Rect => u.abs() <= 1.0 && v.abs() <= 1.0,
            Outline::Ellipse => u * u + v * v <= 1.0,
        };
        if !inside {
            return None;
        }
        let t = match self.fill {
            Fill::Gradient => 0.5 * (u + 1.0),
            Fill::Stripes(freq) => f64::from(((u + 1.0) * freq).floor() as i64 % 2 == 0),
        };
        Some(lerp3(self.c0, self.c1, t))
    }
}

#[derive(Clone, Debug)]
struct Scene {
    bg0: [f64; 3],
    bg1: [f64; 3],
    bg_dir: [f64; 2],
    wave: [f64; 3],
    blobs: Vec<Blob>,
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
}

fn random_color(rng: &mut Rng) -> [f64; 3] {
    [
        rng.uniform(0.0, 1.0),
        rng.uniform(0.0, 1.0),
        rng.uniform(0.0, 1.0),
    ]
}

impl Scene {
    fn random(h: usize, w: usize, p: &SynthParams, rng: &mut Rng) -> Self {
        let angle = rng.uniform(0.0, std::f64::consts::TAU);
        let bg0 = random_color(rng);
        let bg1 = random_color(rng);
        let wave = [
            rng.uniform(0.02, 0.15),
            rng.uniform(0.02, 0.15),
            rng.uniform(0.0, 0.08),
        ];
        let count = rng.range_inclusive(p.min_shapes, p.max_shapes);
        let size = h.min(w) as f64;
        let blobs = (0..count)
            .map(|_| {
                let theta = rng.uniform(0.0, std::f64::consts::PI);
                let moving = rng.uniform(0.0, 1.0) < p.moving_fraction;
                let speed = if moving {
                    rng.uniform(0.0, p.max_object_speed)
                } else {
                    0.0
                };
                let heading = rng.uniform(0.0, std::f64::consts::TAU);
                Blob {
                    outline: if rng.below(2) == 0 {
                        Outline::Rect
                    } else {
                        Outline::Ellipse
                    },
                    fill: if rng.below(3) == 0 {
                        Fill::Stripes(rng.uniform(1.5, 5.0))
                    } else {
                        Fill::Gradient
                    },
                    center: [rng.uniform(0.0, w as f64), rng.uniform(0.0, h as f64)],
                    half: [rng.uniform(0.05, 0.3) * size, rng.uniform(0.05, 0.3) * size],
                    cos: theta.cos(),
                    sin: theta.sin(),
                    c0: random_color(rng),
                    c1: random_color(rng),
                    velocity: [speed * heading.cos(), speed * heading.sin()],
                }
            })
            .collect();
        Self {
            bg0,
            bg1,
            bg_dir: [angle.cos() / w as f64, angle.sin() / h as f64],
            wave,
            blobs,
        }
    }

    fn color(&self, x: f64, y: f64, s: f64) -> [f64; 3] {
        let t = (0.5 + x * self.bg_dir[0] + y * self.bg_dir[1]).clamp(0.0, 1.0);
        let mut c = lerp3(self.bg0, self.bg1, t);
        let ripple = self.wave[2] * (x * self.wave[0] + y * self.wave[1]).sin();
        c.iter_mut().for_each(|v| *v += ripple);
        for b in &self.blobs {
            if let Some(col) = b.color(x, y, s) {
                c = col;
            }
        }
        c
    }
}

#[derive(Clone, Copy, Debug)]
struct CameraPath {
    velocity: [f64; 2],
    accel: [f64; 2],
    spin: f64,
}

impl CameraPath {
    fn random(p: &SynthParams, rng: &mut Rng) -> Self {
        let speed = rng.uniform(0.0, p.max_camera_speed);
        let heading = rng.uniform(0.0, std::f64::consts::TAU);
        let accel = rng.uniform(0.0, 0.1 * p.max_camera_speed);
        let turn = rng.uniform(0.0, std::f64::consts::TAU);
        Self {
            velocity: [speed * heading.cos(), speed * heading.sin()],
            accel: [accel * turn.cos(), accel * turn.sin()],
            spin: rng.uniform(-p.max_rotation, p.max_rotation),
        }
    }

    /// Scene coordinate seen by pixel `(x, y)` at subframe offset `s`.
    fn map(&self, x: f64, y: f64, s: f64, center: [f64; 2]) -> [f64; 2] {
        let (sin, cos) = (self.spin * s).sin_cos();
        let (dx, dy) = (x - center[0], y - center[1]);
        [
            cos * dx - sin * dy + center[0] + self.velocity[0] * s + self.accel[0] * s * s,
            sin * dx + cos * dy + center[1] + self.velocity[1] * s + self.accel[1] * s * s,
        ]
    }
}

const SUPERSAMPLE: usize = 2;

fn render(scene: &Scene, camera: &CameraPath, h: usize, w: usize, s: f64) -> Tensor<f32> {
    let center = [w as f64 / 2.0, h as f64 / 2.0];
    let plane = h * w;
    let mut data = vec![0.0f32; 3 * plane];
    let step = 1.0 / SUPERSAMPLE as f64;
    let norm = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    for r in 0..h {
        for c in 0..w {
            let mut acc = [0.0; 3];
            for i in 0..SUPERSAMPLE {
                for j in 0..SUPERSAMPLE {
                    let x = c as f64 + (j as f64 + 0.5) * step;
                    let y = r as f64 + (i as f64 + 0.5) * step;
                    let [sx, sy] = camera.map(x, y, s, center);
                    let col = scene.color(sx, sy, s);
                    (0..3).for_each(|k| acc[k] += col[k]);
                }
            }
            for k in 0..3 {
                data[k * plane + r * w + c] = (acc[k] / norm).clamp(0.0, 1.0) as f32;
            }
        }
    }
    Tensor::new([1, 3, h, w], data).expect("render shape")
}

fn quantize(t: &Tensor<f32>) -> Tensor<f32> {
    t.map(|v| f32::from(to_byte(v)) / 255.0)
}

/// One synthetic pair of size `h × w`, quantized to 8 bits so that it
/// survives a PPM round trip unchanged.
pub fn synth_pair(
    id: impl Into<String>,
    h: usize,
    w: usize,
    params: &SynthParams,
    rng: &mut Rng,
) -> Result<ImagePair> {
    if params.min_frames < 2 || params.min_frames > params.max_frames {
        return Err(Error::invalid(
            "synth_pair",
            format!("frame range {}..={}", params.min_frames, params.max_frames),
        ));
    }
    let scene = Scene::random(h, w, params, rng);
    let camera = CameraPath::random(params, rng);
    let m = rng.range_inclusive(params.min_frames, params.max_frames);
    let mid = (m / 2) as f64;
    let frames: Vec<Tensor<f32>> = (0..m)
        .map(|t| render(&scene, &camera, h, w, t as f64 - mid))
        .collect();
    let pair = synth_blur(&frames, id)?;
    ImagePair::new(pair.id, quantize(&pair.blurry), quantize(&pair.sharp))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_frames_give_sharp_blur() {
        let f = Tensor::<f32>::from_fn([1, 3, 4, 5], |[_, c, h, w]| (c + h + w) as f32 / 10.0);
        let pair = synth_blur(&vec![f.clone(); 5], "x").unwrap();
        assert_eq!(pair.blurry, f);
        assert_eq!(pair.sharp, f);
    }

    #[test]
    fn two_constant_frames_average() {
        let pair = synth_blur(
            &[Tensor::zeros([1, 3, 2, 2]), Tensor::ones([1, 3, 2, 2])],
            "x",
        )
        .unwrap();
        assert!(pair.blurry.data().iter().all(|&v| v == 0.5));
        assert!(pair.sharp.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn translating_pattern_matches_shift_average() {
        let (h, w, m) = (3, 24, 7);
        let pattern = |x: i64| if (x.rem_euclid(9)) < 3 { 1.0f32 } else { 0.0 };
        let frames: Vec<Tensor<f32>> = (0..m)
            .map(|t| Tensor::from_fn([1, 3, h, w], |[_, _, _, x]| pattern(x as i64 - t as i64)))
            .collect();
        let pair = synth_blur(&frames, "shift").unwrap();
        for x in 0..w {
            let expected: f32 =
                (0..m).map(|t| pattern(x as i64 - t as i64)).sum::<f32>() / m as f32;
            assert!((pair.blurry.at([0, 1, 2, x]) - expected).abs() < 1e-6);
        }
        // A single bright column spreads over exactly m columns.
        let dot: Vec<Tensor<f32>> = (0..m)
            .map(|t| Tensor::from_fn([1, 3, 1, w], |[_, _, _, x]| f32::from(x == 5 + t)))
            .collect();
        let blurred = synth_blur(&dot, "dot").unwrap().blurry;
        let lit = (0..w).filter(|&x| blurred.at([0, 0, 0, x]) > 0.0).count();
        assert_eq!(lit, m);
    }

    #[test]
    fn rejects_bad_frame_lists() {
        assert!(synth_blur(&[], "e").is_err());
        assert!(synth_blur(&[Tensor::zeros([1, 3, 2, 2])], "e").is_err());
        assert!(synth_blur(
            &[Tensor::zeros([1, 3, 2, 2]), Tensor::zeros([1, 3, 2, 3])],
            "e"
        )
        .is_err());
    }

    #[test]
    fn synthetic_pairs_are_deterministic_and_in_range() {
        let p = SynthParams::default();
        let a = synth_pair("a", 24, 32, &p, &mut Rng::new(3)).unwrap();
        let b = synth_pair("a", 24, 32, &p, &mut Rng::new(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.blurry.shape(), [1, 3, 24, 32]);
        assert!(a
            .blurry
            .data()
            .iter()
            .chain(a.sharp.data())
            .all(|&v| (0.0..=1.0).contains(&v)));
    }
}
