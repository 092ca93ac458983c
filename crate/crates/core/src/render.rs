//! Volumetric rendering of the skinned canonical volume from the fixed camera.
//!
//! Each ray is clipped to the rendering cube and sampled at `n_samples`
//! stratified positions. Sample `i` sits in bin `[t_near + i*dt, t_near + (i+1)*dt)`
//! (bin center, or a uniform position inside the bin when jittering) and
//! contributes `w_i = T_i (1 - exp(-sigma_i dt))`. The opaque background plate
//! at the far face is composited analytically as `T_final * bg_color`.
//!
//! Random perturbations come from a per-pixel stream keyed by the seed and the
//! pixel index, so results do not depend on how rays are split across workers.

use crate::geometry::{GeometryError, Mat3, PinholeCamera, RigidTransform, Vec2, Vec3};
use crate::image::Image;
use crate::skinning::{InverseSkinning, PartPoseSet};
use crate::volume::{CanonicalVolume, RenderCube, Stencil};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("pose set has {got} parts, volume has {expected}")]
    InconsistentParts { expected: usize, got: usize },
    #[error("invalid render config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit direction.
    pub dir: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }

    /// Expresses the ray in the frame mapped by `t`.
    pub fn transformed(&self, t: &RigidTransform) -> Ray {
        Ray {
            origin: t.apply(&self.origin),
            dir: t.rotation() * self.dir,
        }
    }
}

/// One ray per pixel, row-major, through the pixel centers.
pub fn make_rays(cam: &PinholeCamera) -> Vec<Ray> {
    let mut rays = Vec::with_capacity(cam.width * cam.height);
    for j in 0..cam.height {
        for i in 0..cam.width {
            let dir = cam.ray_direction(&Vec2::new(i as f64 + 0.5, j as f64 + 0.5));
            rays.push(Ray {
                origin: Vec3::zeros(),
                dir,
            });
        }
    }
    rays
}

/// Slab intersection clipped to `t >= 0`; `None` on a miss.
pub fn ray_cube_intersect(ray: &Ray, cube: &RenderCube) -> Option<(f64, f64)> {
    let mut t_near = 0.0f64;
    let mut t_far = f64::INFINITY;
    for a in 0..3 {
        let o = ray.origin[a];
        let d = ray.dir[a];
        if d.abs() < 1e-300 {
            if o < cube.min[a] || o > cube.max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d;
        let mut t0 = (cube.min[a] - o) * inv;
        let mut t1 = (cube.max[a] - o) * inv;
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        t_near = t_near.max(t0);
        t_far = t_far.min(t1);
    }
    (t_near <= t_far).then_some((t_near, t_far))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub n_samples: usize,
    /// Stratified jitter of each sample inside its bin.
    pub jitter: bool,
    /// Standard deviation of Gaussian noise added to sampled densities.
    pub density_noise_sigma: f64,
    pub include_background: bool,
    pub seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            n_samples: 128,
            jitter: false,
            density_noise_sigma: 0.0,
            include_background: true,
            seed: 0,
        }
    }
}

impl RenderConfig {
    /// Perturbed sampling used while fitting: jittered positions and density
    /// noise at the start-of-schedule level.
    pub fn training() -> Self {
        Self {
            jitter: true,
            density_noise_sigma: 0.5,
            ..Self::default()
        }
    }

    /// Fewer samples for single-part geometry fitting.
    pub fn g_phase() -> Self {
        Self {
            n_samples: 48,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if self.n_samples < 2 {
            return Err(RenderError::InvalidConfig(format!(
                "n_samples = {} (need >= 2)",
                self.n_samples
            )));
        }
        if !(self.density_noise_sigma >= 0.0) || !self.density_noise_sigma.is_finite() {
            return Err(RenderError::InvalidConfig("density noise must be >= 0".into()));
        }
        Ok(())
    }

    fn is_perturbed(&self) -> bool {
        self.jitter || self.density_noise_sigma > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub rgb: Image,
    /// Expected termination distance along the ray.
    pub depth: Image,
    pub occupancy: Image,
    /// Unit normals, zero where nothing was hit.
    pub normals: Image,
    /// Per-pixel part distribution.
    pub parts: Image,
    /// Transmittance left after the last sample, before the background plate.
    pub transmittance: Image,
}

/// Everything one ray produces.
#[derive(Debug, Clone, Default)]
pub(crate) struct RayResult {
    pub rgb: [f64; 3],
    pub occupancy: f64,
    pub depth: f64,
    pub transmittance: f64,
    pub normal: [f64; 3],
    pub parts: Vec<f64>,
}

/// Per-sample state kept for the backward pass.
#[derive(Debug, Clone)]
struct SampleRecord {
    transmittance: f64,
    weight: f64,
    sigma: f64,
    /// Whether the noisy density was above the clamp.
    active: bool,
    color: [f64; 3],
    stencil: Option<Stencil>,
}

/// Per-worker scratch space.
pub(crate) struct Workspace {
    skin: InverseSkinning,
    skins: Vec<InverseSkinning>,
    records: Vec<SampleRecord>,
    color: [f64; 3],
}

impl Workspace {
    pub fn new(n_parts: usize, n_samples: usize) -> Self {
        Self {
            skin: InverseSkinning::new(n_parts),
            skins: Vec::with_capacity(n_samples),
            records: Vec::with_capacity(n_samples),
            color: [0.0; 3],
        }
    }
}

/// Gradients of a scalar with respect to the post-activation grids.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGradient {
    pub density: Vec<f64>,
    pub rgb: Vec<f64>,
    pub lbs_logits: Vec<f64>,
}

impl GridGradient {
    pub fn zeros(vol: &CanonicalVolume) -> Self {
        Self {
            density: vec![0.0; vol.density.data().len()],
            rgb: vec![0.0; vol.rgb.data().len()],
            lbs_logits: vec![0.0; vol.lbs_logits.data().len()],
        }
    }

    pub fn add_assign(&mut self, other: &GridGradient) {
        for (a, b) in self.density.iter_mut().zip(&other.density) {
            *a += b;
        }
        for (a, b) in self.rgb.iter_mut().zip(&other.rgb) {
            *a += b;
        }
        for (a, b) in self.lbs_logits.iter_mut().zip(&other.lbs_logits) {
            *a += b;
        }
    }
}

/// Fixed number of pixel blocks whose gradients are summed in order.
const GRADIENT_BLOCKS: usize = 8;

/// Immutable per-call rendering state.
pub(crate) struct Tracer<'a> {
    vol: &'a CanonicalVolume,
    cube: &'a RenderCube,
    cfg: &'a RenderConfig,
    inverses: Vec<RigidTransform>,
    rotations: Vec<Mat3>,
    tex_scale: Vec3,
    n_parts: usize,
}

fn pixel_rng(seed: u64, pixel: usize) -> ChaCha8Rng {
    // splitmix64 finalizer over (seed, pixel)
    let mut z = seed ^ (pixel as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}

impl<'a> Tracer<'a> {
    pub fn new(
        vol: &'a CanonicalVolume,
        poses: &PartPoseSet,
        cube: &'a RenderCube,
        cfg: &'a RenderConfig,
    ) -> Result<Self, RenderError> {
        cfg.validate()?;
        if poses.len() != vol.n_parts() {
            return Err(RenderError::InconsistentParts {
                expected: vol.n_parts(),
                got: poses.len(),
            });
        }
        Ok(Self {
            vol,
            cube,
            cfg,
            inverses: poses.poses.iter().map(|p| p.inverse()).collect(),
            rotations: poses.poses.iter().map(|p| *p.rotation()).collect(),
            tex_scale: cube.texture_per_world(),
            n_parts: vol.n_parts(),
        })
    }

    /// Traces one ray. With `record`, per-sample state is kept in the
    /// workspace for `backward`.
    pub fn trace(
        &self,
        ray: &Ray,
        pixel: usize,
        ws: &mut Workspace,
        aux: bool,
        record: bool,
    ) -> RayResult {
        let n_parts = self.n_parts;
        let mut out = RayResult {
            transmittance: 1.0,
            parts: if aux { vec![0.0; n_parts] } else { Vec::new() },
            ..Default::default()
        };
        ws.records.clear();
        ws.skins.clear();
        let Some((t_near, t_far)) = ray_cube_intersect(ray, self.cube) else {
            self.finish(&mut out);
            return out;
        };
        let n = self.cfg.n_samples;
        let dt = (t_far - t_near) / n as f64;
        let mut rng = self.cfg.is_perturbed().then(|| pixel_rng(self.cfg.seed, pixel));
        let noise_sigma = self.cfg.density_noise_sigma;
        let center = self.cube.center();
        let mut trans = 1.0;
        let mut weight_sum = 0.0;
        let mut normal = Vec3::zeros();
        for i in 0..n {
            let offset = match (&mut rng, self.cfg.jitter) {
                (Some(r), true) => r.random::<f64>(),
                _ => 0.5,
            };
            let noise = match &mut rng {
                Some(r) if noise_sigma > 0.0 => noise_sigma * r.sample::<f64, _>(StandardNormal),
                _ => 0.0,
            };
            let t = t_near + (i as f64 + offset) * dt;
            let x_d = ray.at(t);
            let hit = ws.skin.evaluate(&x_d, &self.inverses, self.vol, self.cube);
            let stencil = if hit {
                let tex = (ws.skin.x_c - center).component_mul(&self.tex_scale);
                Stencil::new(self.vol.size(), &tex)
            } else {
                None
            };
            let raw_sigma = match &stencil {
                Some(st) => self.vol.density.gather_channel(st, 0),
                None => 0.0,
            };
            let noisy = raw_sigma + noise;
            let active = noisy > 0.0;
            let sigma = if active { noisy } else { 0.0 };
            let mut color = [0.0; 3];
            if let Some(st) = &stencil {
                self.vol.rgb.gather(st, &mut ws.color);
                color = ws.color;
            }
            let alpha = -(-sigma * dt).exp_m1();
            let w = trans * alpha;
            for c in 0..3 {
                out.rgb[c] += w * color[c];
            }
            weight_sum += w;
            out.depth += w * t;
            if aux && w > 0.0 {
                if let Some(st) = &stencil {
                    for p in 0..n_parts {
                        out.parts[p] += w * ws.skin.weights[p];
                    }
                    let g = self.vol.density.gather_gradient(st, 0).component_mul(&self.tex_scale);
                    let norm = g.norm();
                    if norm > 0.0 {
                        let dominant = ws
                            .skin
                            .weights
                            .iter()
                            .enumerate()
                            .fold((0, f64::NEG_INFINITY), |best, (p, &v)| if v > best.1 { (p, v) } else { best })
                            .0;
                        normal += w * (self.rotations[dominant] * (-g / norm));
                    }
                }
            }
            if record {
                ws.records.push(SampleRecord {
                    transmittance: trans,
                    weight: w,
                    sigma,
                    active,
                    color,
                    stencil,
                });
                if n_parts > 1 {
                    ws.skins.push(ws.skin.clone());
                }
            }
            trans *= (-sigma * dt).exp();
        }
        out.occupancy = weight_sum;
        out.transmittance = trans;
        out.depth /= weight_sum.max(1e-8);
        if aux {
            let nn = normal.norm();
            if nn > 0.0 {
                out.normal = [normal.x / nn, normal.y / nn, normal.z / nn];
            }
            let ps: f64 = out.parts.iter().sum();
            if ps > 0.0 {
                out.parts.iter_mut().for_each(|v| *v /= ps);
            }
        }
        self.finish(&mut out);
        out
    }

    fn finish(&self, out: &mut RayResult) {
        if self.cfg.include_background {
            for c in 0..3 {
                out.rgb[c] += out.transmittance * self.vol.bg_color[c];
            }
        }
    }

    /// Accumulates the gradient of `g_rgb . rgb + g_occ * occupancy` for one
    /// ray into `grad`.
    pub fn backward(
        &self,
        ray: &Ray,
        pixel: usize,
        g_rgb: [f64; 3],
        g_occ: f64,
        ws: &mut Workspace,
        grad: &mut GridGradient,
    ) {
        let result = self.trace(ray, pixel, ws, false, true);
        if ws.records.is_empty() {
            return;
        }
        let Some((t_near, t_far)) = ray_cube_intersect(ray, self.cube) else { return };
        let dt = (t_far - t_near) / self.cfg.n_samples as f64;
        let t_final = result.transmittance;
        let v_bg = if self.cfg.include_background {
            (0..3).map(|c| self.vol.bg_color[c] * g_rgb[c]).sum::<f64>()
        } else {
            0.0
        };
        let n_parts = self.n_parts;
        let mut suffix = 0.0;
        for i in (0..ws.records.len()).rev() {
            let rec = &ws.records[i];
            let v = rec.color[0] * g_rgb[0] + rec.color[1] * g_rgb[1] + rec.color[2] * g_rgb[2] + g_occ;
            let t_next = rec.transmittance * (-rec.sigma * dt).exp();
            let d_sigma = dt * (t_next * v - suffix - t_final * v_bg);
            suffix += rec.weight * v;
            let Some(st) = &rec.stencil else { continue };
            let d_sigma_raw = if rec.active { d_sigma } else { 0.0 };
            let d_color = [rec.weight * g_rgb[0], rec.weight * g_rgb[1], rec.weight * g_rgb[2]];
            for k in 0..8 {
                let w = st.weights[k];
                let vox = st.voxels[k];
                grad.density[vox] += d_sigma_raw * w;
                for c in 0..3 {
                    grad.rgb[vox * 3 + c] += d_color[c] * w;
                }
            }
            if n_parts > 1 {
                let mut d_tex = self.vol.density.gather_gradient(st, 0) * d_sigma_raw;
                for c in 0..3 {
                    d_tex += self.vol.rgb.gather_gradient(st, c) * d_color[c];
                }
                let d_xc = d_tex.component_mul(&self.tex_scale);
                ws.skins[i].backward(&d_xc, &mut grad.lbs_logits);
            }
        }
    }
}

/// Renders the deformed volume from the fixed camera.
pub fn render(
    vol: &CanonicalVolume,
    poses: &PartPoseSet,
    cam: &PinholeCamera,
    cube: &RenderCube,
    cfg: &RenderConfig,
) -> Result<RenderOutput, RenderError> {
    cam.validate()?;
    let rays = make_rays(cam);
    render_rays(vol, poses, &rays, cam.width, cam.height, cube, cfg)
}

/// Renders an arbitrary row-major bundle of `width * height` rays.
pub fn render_rays(
    vol: &CanonicalVolume,
    poses: &PartPoseSet,
    rays: &[Ray],
    width: usize,
    height: usize,
    cube: &RenderCube,
    cfg: &RenderConfig,
) -> Result<RenderOutput, RenderError> {
    assert_eq!(rays.len(), width * height, "ray count must match the image size");
    let tracer = Tracer::new(vol, poses, cube, cfg)?;
    let n_parts = vol.n_parts();
    let results: Vec<RayResult> = rays
        .par_iter()
        .enumerate()
        .map_init(
            || Workspace::new(n_parts, cfg.n_samples),
            |ws, (pixel, ray)| tracer.trace(ray, pixel, ws, true, false),
        )
        .collect();
    let mut out = RenderOutput {
        rgb: Image::zeros(width, height, 3),
        depth: Image::zeros(width, height, 1),
        occupancy: Image::zeros(width, height, 1),
        normals: Image::zeros(width, height, 3),
        parts: Image::zeros(width, height, n_parts),
        transmittance: Image::zeros(width, height, 1),
    };
    for (pixel, r) in results.iter().enumerate() {
        out.rgb.data[pixel * 3..pixel * 3 + 3].copy_from_slice(&r.rgb);
        out.normals.data[pixel * 3..pixel * 3 + 3].copy_from_slice(&r.normal);
        out.parts.data[pixel * n_parts..(pixel + 1) * n_parts].copy_from_slice(&r.parts);
        out.depth.data[pixel] = r.depth;
        out.occupancy.data[pixel] = r.occupancy;
        out.transmittance.data[pixel] = r.transmittance;
    }
    Ok(out)
}

/// Color and occupancy only; cheaper than `render` for loss evaluation.
pub fn render_color_occupancy(
    vol: &CanonicalVolume,
    poses: &PartPoseSet,
    rays: &[Ray],
    width: usize,
    height: usize,
    cube: &RenderCube,
    cfg: &RenderConfig,
) -> Result<(Image, Image), RenderError> {
    let tracer = Tracer::new(vol, poses, cube, cfg)?;
    let n_parts = vol.n_parts();
    let results: Vec<([f64; 3], f64)> = rays
        .par_iter()
        .enumerate()
        .map_init(
            || Workspace::new(n_parts, cfg.n_samples),
            |ws, (pixel, ray)| {
                let r = tracer.trace(ray, pixel, ws, false, false);
                (r.rgb, r.occupancy)
            },
        )
        .collect();
    let mut rgb = Image::zeros(width, height, 3);
    let mut occ = Image::zeros(width, height, 1);
    for (pixel, (c, o)) in results.into_iter().enumerate() {
        rgb.data[pixel * 3..pixel * 3 + 3].copy_from_slice(&c);
        occ.data[pixel] = o;
    }
    Ok((rgb, occ))
}

/// Back-propagates per-pixel color and occupancy gradients into the
/// post-activation grids. Pixels are split into a fixed number of blocks whose
/// partial sums are added in block order, so the result is independent of
/// the worker count.
#[allow(clippy::too_many_arguments)]
pub fn render_backward(
    vol: &CanonicalVolume,
    poses: &PartPoseSet,
    rays: &[Ray],
    cube: &RenderCube,
    cfg: &RenderConfig,
    d_rgb: &Image,
    d_occupancy: &Image,
) -> Result<GridGradient, RenderError> {
    let tracer = Tracer::new(vol, poses, cube, cfg)?;
    let n_parts = vol.n_parts();
    let n = rays.len();
    let block = n.div_ceil(GRADIENT_BLOCKS).max(1);
    let partials: Vec<GridGradient> = (0..n)
        .step_by(block)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let mut grad = GridGradient::zeros(vol);
            let mut ws = Workspace::new(n_parts, cfg.n_samples);
            for pixel in start..(start + block).min(n) {
                let g_rgb = [
                    d_rgb.data[pixel * 3],
                    d_rgb.data[pixel * 3 + 1],
                    d_rgb.data[pixel * 3 + 2],
                ];
                let g_occ = d_occupancy.data[pixel];
                if g_rgb == [0.0; 3] && g_occ == 0.0 {
                    continue;
                }
                tracer.backward(&rays[pixel], pixel, g_rgb, g_occ, &mut ws, &mut grad);
            }
            grad
        })
        .collect();
    let mut total = GridGradient::zeros(vol);
    for p in &partials {
        total.add_assign(p);
    }
    Ok(total)
}
