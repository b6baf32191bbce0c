//! Procedurally rendered stand-in for the recorded dataset.
//!
//! Each view shows one flat shape on a turntable, seen by three cameras with
//! small horizontal offsets, plus a depth map of a round object whose
//! surface profile depends on the class. In the default (redundant) mode
//! every class has its own shape and its own depth profile. In
//! complementary mode the label is `shape * 2 + profile` with two profiles,
//! so cameras alone can be right at most half the time and depth alone at
//! most `2 / n_classes` of the time.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::RawSample;
use crate::{Error, Result, Tensor};

/// Number of depth profiles in complementary mode.
pub const COMPLEMENTARY_DEPTH_CLASSES: usize = 2;

const BACKGROUND: f64 = 50.0;
const FOREGROUND: f64 = 200.0;
const TABLE_MM: f64 = 1500.0;
const OBJECT_MM: f64 = 700.0;
const CAMERA_OFFSETS: [f64; 3] = [-3.0, 3.0, 0.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_classes: usize,
    pub views_per_class: usize,
    /// Make the label a function of (shape, depth profile) pairs.
    pub complementary: bool,
    pub height: usize,
    pub width: usize,
    /// Standard deviation of per-pixel Gaussian noise, in 0..=255 units.
    pub pixel_noise: f64,
    /// Uniform jitter added to the turntable angle, in degrees.
    pub angle_jitter: f64,
    /// Uniform jitter of the object center, in pixels.
    pub position_jitter: f64,
    /// Standard deviation of depth noise in millimeters.
    pub depth_noise: f64,
    /// Half-width of an occluding bar drawn across the object independently
    /// for each camera, relative to the object radius. Zero disables it.
    pub occlusion: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_classes: 10,
            views_per_class: 72,
            complementary: false,
            height: 48,
            width: 64,
            pixel_noise: 0.5,
            angle_jitter: 1.0,
            position_jitter: 0.0,
            depth_noise: 1.0,
            occlusion: 0.0,
        }
    }
}

impl SyntheticConfig {
    /// The complementary task with occlusion 0.8, which keeps single-camera
    /// accuracy clearly below its 1/2 ceiling while the joint model still
    /// learns the shape from three partly occluded views.
    pub fn complementary(n_classes: usize, views_per_class: usize) -> Self {
        SyntheticConfig {
            n_classes,
            views_per_class,
            complementary: true,
            occlusion: 0.8,
            ..Self::default()
        }
    }

    pub fn n_shapes(&self) -> usize {
        if self.complementary {
            self.n_classes / COMPLEMENTARY_DEPTH_CLASSES
        } else {
            self.n_classes
        }
    }

    /// `(shape, depth profile)` drawn for a label.
    pub fn factors(&self, label: usize) -> (usize, usize) {
        if self.complementary {
            (label / COMPLEMENTARY_DEPTH_CLASSES, label % COMPLEMENTARY_DEPTH_CLASSES)
        } else {
            (label, label)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Argument(format!(
                "need at least 2 classes, got {}",
                self.n_classes
            )));
        }
        if self.complementary && self.n_classes % COMPLEMENTARY_DEPTH_CLASSES != 0 {
            return Err(Error::Argument(format!(
                "complementary mode needs an even class count, got {}",
                self.n_classes
            )));
        }
        if self.views_per_class == 0 {
            return Err(Error::Argument("views_per_class must be positive".into()));
        }
        if self.height < 16 || self.width < 16 {
            return Err(Error::Argument(format!(
                "rendered images must be at least 16x16, got {}x{}",
                self.height, self.width
            )));
        }
        let finite_nonneg = [
            self.pixel_noise,
            self.angle_jitter,
            self.position_jitter,
            self.depth_noise,
            self.occlusion,
        ]
        .iter()
        .all(|v| v.is_finite() && *v >= 0.0);
        if !finite_nonneg {
            return Err(Error::Argument("noise and jitter settings must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Render `n_classes * views_per_class` samples, class-major.
pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<Vec<RawSample>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixel_noise = Normal::new(0.0, config.pixel_noise).expect("validated");
    let depth_noise = Normal::new(0.0, config.depth_noise).expect("validated");
    let n_profiles = if config.complementary {
        COMPLEMENTARY_DEPTH_CLASSES
    } else {
        config.n_classes
    };
    let (h, w) = (config.height, config.width);
    // Object radius in pixels, proportional to the image height.
    let radius = h as f64 * 0.27;

    let mut samples = Vec::with_capacity(config.n_classes * config.views_per_class);
    for label in 0..config.n_classes {
        let (shape_id, profile_id) = config.factors(label);
        let shape = Shape::catalog(shape_id);
        for v in 0..config.views_per_class {
            let view_angle = 360.0 * v as f64 / config.views_per_class as f64;
            let angle = (view_angle + rng.random_range(-1.0..=1.0) * config.angle_jitter).to_radians();
            let cx = w as f64 / 2.0 + rng.random_range(-1.0..=1.0) * config.position_jitter;
            let cy = h as f64 / 2.0 + rng.random_range(-1.0..=1.0) * config.position_jitter;

            let mut cams = CAMERA_OFFSETS.iter().map(|&dx| {
                let scale = if dx == 0.0 { radius * 1.1 } else { radius };
                let occluder = (config.occlusion > 0.0).then(|| {
                    let theta = rng.random_range(0.0..PI);
                    let offset = rng.random_range(-0.6..=0.6) * radius;
                    (theta.cos(), theta.sin(), offset, config.occlusion * radius)
                });
                let mut data = Vec::with_capacity(h * w * 3);
                for y in 0..h {
                    for x in 0..w {
                        let (px, py) = (x as f64 - cx - dx, y as f64 - cy);
                        let mut on = shape.contains(px / scale, py / scale, angle);
                        if let Some((c, s, offset, half)) = occluder {
                            on &= (px * c + py * s - offset).abs() > half;
                        }
                        let base = if on { FOREGROUND } else { BACKGROUND };
                        for _ in 0..3 {
                            data.push((base + pixel_noise.sample(&mut rng)).clamp(0.0, 255.0));
                        }
                    }
                }
                Tensor::new(vec![h, w, 3], data)
            }).collect::<Result<Vec<_>>>()?.into_iter();

            let mut depth = Vec::with_capacity(h * w);
            for y in 0..h {
                for x in 0..w {
                    let r = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt() / (radius * 1.08);
                    let surface = if r < 1.0 {
                        OBJECT_MM + profile(profile_id, n_profiles, r)
                    } else {
                        TABLE_MM
                    };
                    depth.push((surface + depth_noise.sample(&mut rng)).round().max(0.0));
                }
            }

            samples.push(RawSample {
                rgb_left: cams.next().expect("three cameras"),
                rgb_right: cams.next().expect("three cameras"),
                rgb_realsense: cams.next().expect("three cameras"),
                depth: Tensor::new(vec![h, w], depth)?,
                label,
                view_angle,
            });
        }
    }
    Ok(samples)
}

/// Height offset in millimeters at normalized radius `r < 1`. Profiles run
/// from a dome bulging towards the camera to a bowl.
fn profile(id: usize, n_profiles: usize, r: f64) -> f64 {
    let t = id as f64 / (n_profiles - 1) as f64;
    let amplitude = -120.0 + 240.0 * t;
    amplitude * (1.0 - r * r) - 60.0 * t
}

#[derive(Debug, Clone)]
enum Shape {
    Disk,
    Ring,
    Polygon(Vec<(f64, f64)>),
}

impl Shape {
    /// Shape number `i`: disk, ring, square, triangle, four-point star, then
    /// stars with varying point counts and inner radii.
    fn catalog(i: usize) -> Shape {
        match i {
            0 => Shape::Disk,
            1 => Shape::Ring,
            2 => Shape::regular(4, PI / 4.0),
            3 => Shape::regular(3, -PI / 2.0),
            4 => Shape::star(4, 0.4),
            _ => {
                let j = i - 5;
                let golden = 0.618_033_988_749_895;
                Shape::star(5 + j % 6, 0.3 + 0.5 * (j as f64 * golden).fract())
            }
        }
    }

    fn regular(k: usize, phase: f64) -> Shape {
        Shape::Polygon(
            (0..k)
                .map(|j| {
                    let a = phase + 2.0 * PI * j as f64 / k as f64;
                    (a.cos(), a.sin())
                })
                .collect(),
        )
    }

    fn star(points: usize, inner: f64) -> Shape {
        Shape::Polygon(
            (0..2 * points)
                .map(|j| {
                    let r = if j % 2 == 0 { 1.0 } else { inner };
                    let a = PI * j as f64 / points as f64;
                    (r * a.cos(), r * a.sin())
                })
                .collect(),
        )
    }

    /// Whether the point, in object-radius units, lies inside the shape
    /// rotated by `angle`.
    fn contains(&self, x: f64, y: f64, angle: f64) -> bool {
        match self {
            Shape::Disk => x * x + y * y < 0.81,
            Shape::Ring => {
                let r2 = x * x + y * y;
                r2 < 1.0 && r2 > 0.3025
            }
            Shape::Polygon(vertices) => {
                let (c, s) = (angle.cos(), angle.sin());
                let (xr, yr) = (c * x + s * y, -s * x + c * y);
                let mut inside = false;
                let mut j = vertices.len() - 1;
                for (i, &(xi, yi)) in vertices.iter().enumerate() {
                    let (xj, yj) = vertices[j];
                    if (yi > yr) != (yj > yr) && xr < (xj - xi) * (yr - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                    j = i;
                }
                inside
            }
        }
    }
}
