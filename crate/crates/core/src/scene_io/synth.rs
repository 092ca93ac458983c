//! Deterministic synthetic scenes made of Gaussian density blobs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{rot_x, rot_y, PinholeCamera, RigidTransform, Vec3};
use crate::pnp::keypoint_grid;
use crate::skinning::PartPoseSet;
use crate::volume::{CanonicalVolume, RenderCube, VoxelGrid, DEFAULT_BG_DENSITY};

use super::{Scene, SceneError};

/// Logit magnitude of the one-hot part layout.
pub const ONE_HOT_LOGIT: f64 = 20.0;

/// Densities below this fraction of the peak are cut to zero.
const SUPPORT_CUTOFF: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartLayout {
    /// Each voxel belongs to exactly one part.
    OneHot,
    /// Weights blend smoothly between nearby parts.
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub size: usize,
    pub n_parts: usize,
    pub blobs: usize,
    pub layout: PartLayout,
    /// Length of the ground-truth pose track.
    pub frames: usize,
    pub peak_density: f64,
    pub image_size: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            size: 16,
            n_parts: 2,
            blobs: 4,
            layout: PartLayout::OneHot,
            frames: 8,
            peak_density: 6.0,
            image_size: 64,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::InvalidSpec(m.into()));
        if self.size < 2 {
            return bad("size must be >= 2");
        }
        if self.n_parts == 0 {
            return bad("need at least one part");
        }
        if self.blobs < self.n_parts {
            return bad("need at least one blob per part");
        }
        if self.frames == 0 {
            return bad("need at least one frame");
        }
        if !(self.peak_density > 0.0) || !self.peak_density.is_finite() {
            return bad("peak density must be positive");
        }
        if self.image_size == 0 {
            return bad("image size must be >= 1");
        }
        Ok(())
    }
}

struct Blob {
    center: Vec3,
    sigma: f64,
    color: [f64; 3],
    part: usize,
}

fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

/// Texture-space anchor of each part, spread along x.
fn part_anchor(p: usize, n: usize) -> Vec3 {
    if n == 1 {
        Vec3::zeros()
    } else {
        Vec3::new(-0.4 + 0.8 * (p as f64 + 0.5) / n as f64, 0.0, 0.0)
    }
}

/// Builds a scene from `seed`; equal seeds and specs give identical scenes.
pub fn synth_scene(seed: u64, spec: &SynthSpec) -> Result<Scene, SceneError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.n_parts;
    let spread = 0.3 / n as f64;
    let blobs: Vec<Blob> = (0..spec.blobs)
        .map(|b| {
            let part = b % n;
            let jitter = Vec3::new(
                rng.random_range(-spread..=spread),
                rng.random_range(-0.25..=0.25),
                rng.random_range(-0.25..=0.25),
            );
            Blob {
                center: part_anchor(part, n) + jitter,
                sigma: rng.random_range(0.14..0.24) / (n as f64).cbrt(),
                color: [
                    rng.random_range(0.15..0.95),
                    rng.random_range(0.15..0.95),
                    rng.random_range(0.15..0.95),
                ],
                part,
            }
        })
        .collect();

    let s = spec.size;
    let tex = |k: usize| -1.0 + (2 * k + 1) as f64 / s as f64;
    let count = s * s * s;
    let mut density = Vec::with_capacity(count);
    let mut rgb = Vec::with_capacity(count * 3);
    let mut logits = Vec::with_capacity(count * n);
    let mut contrib = vec![0.0; spec.blobs];
    let mut per_part = vec![0.0; n];
    for z in 0..s {
        for y in 0..s {
            for x in 0..s {
                let p = Vec3::new(tex(x), tex(y), tex(z));
                for (c, b) in contrib.iter_mut().zip(&blobs) {
                    *c = (-(p - b.center).norm_squared() / (2.0 * b.sigma * b.sigma)).exp();
                }
                let total: f64 = contrib.iter().sum();
                let d = (spec.peak_density * total).min(spec.peak_density);
                density.push(quantize(if d < SUPPORT_CUTOFF * spec.peak_density { 0.0 } else { d }));

                let mut color = [0.0; 3];
                if total > 1e-300 {
                    for (c, b) in contrib.iter().zip(&blobs) {
                        for k in 0..3 {
                            color[k] += c / total * b.color[k];
                        }
                    }
                } else {
                    let nearest = blobs
                        .iter()
                        .min_by(|a, b| (p - a.center).norm().total_cmp(&(p - b.center).norm()))
                        .expect("at least one blob");
                    color = nearest.color;
                }
                let shade = 0.08 * (3.0 * p.y).sin();
                rgb.extend(color.iter().map(|c| quantize((c + shade).clamp(0.0, 1.0))));

                per_part.iter_mut().for_each(|v| *v = 0.0);
                for (c, b) in contrib.iter().zip(&blobs) {
                    per_part[b.part] += c;
                }
                let owner = if total > 1e-300 {
                    per_part
                        .iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                        .0
                } else {
                    (0..n)
                        .min_by(|&a, &b| {
                            (p - part_anchor(a, n)).norm().total_cmp(&(p - part_anchor(b, n)).norm())
                        })
                        .expect("at least one part")
                };
                for q in 0..n {
                    let l = if n == 1 {
                        0.0
                    } else {
                        match spec.layout {
                            PartLayout::OneHot => {
                                if q == owner {
                                    ONE_HOT_LOGIT
                                } else {
                                    -ONE_HOT_LOGIT
                                }
                            }
                            PartLayout::Soft => {
                                let share = if total > 1e-300 { per_part[q] / total } else { (q == owner) as u8 as f64 };
                                6.0 * share - 3.0
                            }
                        }
                    };
                    logits.push(quantize(l));
                }
            }
        }
    }

    let grid = |ch: usize, data: Vec<f64>| VoxelGrid::from_data(s, ch, data).expect("grid size");
    let volume = CanonicalVolume::new(
        grid(1, density),
        grid(3, rgb),
        grid(n, logits),
        [0.1, 0.1, 0.12],
        DEFAULT_BG_DENSITY,
    )
    .map_err(|e| SceneError::InvalidSpec(e.to_string()))?;

    let cube = RenderCube::default();
    let anchors: Vec<Vec3> = (0..n).map(|p| cube.texture_to_world(&part_anchor(p, n))).collect();
    let keypoints = anchors.iter().map(|a| keypoint_grid(*a, 0.25, 5)).collect();
    let pose_track = (0..spec.frames)
        .map(|f| {
            let phase = 2.0 * std::f64::consts::PI * f as f64 / spec.frames as f64;
            PartPoseSet::new(
                anchors
                    .iter()
                    .enumerate()
                    .map(|(p, a)| {
                        let q = phase + p as f64;
                        let r = rot_y(0.25 * q.sin()) * rot_x(0.1 * q.cos());
                        let shift = Vec3::new(0.05 * phase.sin(), 0.03 * q.cos(), 0.0);
                        RigidTransform::from_translation(shift).compose(&RigidTransform::about_point(r, *a))
                    })
                    .collect(),
            )
        })
        .collect();
    let scene = Scene {
        volume,
        cube,
        camera: PinholeCamera::square(spec.image_size),
        keypoints,
        pose_track: Some(pose_track),
    };
    scene.validate()?;
    Ok(scene)
}
