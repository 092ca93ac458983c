//! Voxel storage for the canonical object and the rendering cube.
//!
//! Grids are cell-centered: along each axis voxel `k` sits at texture
//! coordinate `-1 + (2k + 1) / S`. Queries beyond the outermost voxel centers
//! are outside the modeled volume and read as zero.

use crate::geometry::Vec3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VolumeError {
    #[error("grid data has {got} values, expected {expected}")]
    DataLength { expected: usize, got: usize },
    #[error("grid contains a non-finite value at {0}")]
    NonFinite(usize),
    #[error("grid sizes disagree: {0}")]
    SizeMismatch(String),
    #[error("invalid volume: {0}")]
    Invalid(String),
}

/// Dense `S^3 x C` grid stored row-major as `[z][y][x][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    size: usize,
    channels: usize,
    data: Vec<f64>,
}

impl VoxelGrid {
    pub fn zeros(size: usize, channels: usize) -> Self {
        Self {
            size,
            channels,
            data: vec![0.0; size * size * size * channels],
        }
    }

    pub fn filled(size: usize, channels: usize, value: f64) -> Self {
        Self {
            size,
            channels,
            data: vec![value; size * size * size * channels],
        }
    }

    pub fn from_data(size: usize, channels: usize, data: Vec<f64>) -> Result<Self, VolumeError> {
        let expected = size * size * size * channels;
        if size == 0 || channels == 0 {
            return Err(VolumeError::Invalid(format!(
                "size {size} and channels {channels} must be positive"
            )));
        }
        if data.len() != expected {
            return Err(VolumeError::DataLength {
                expected,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite(i));
        }
        Ok(Self {
            size,
            channels,
            data,
        })
    }

    /// Builds a grid by evaluating `f(x, y, z, channel)` on voxel indices.
    pub fn from_fn(
        size: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(size * size * size * channels);
        for z in 0..size {
            for y in 0..size {
                for x in 0..size {
                    for c in 0..channels {
                        data.push(f(x, y, z, c));
                    }
                }
            }
        }
        Self {
            size,
            channels,
            data,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn voxel_count(&self) -> usize {
        self.size * self.size * self.size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Flat index of the first channel of voxel `(x, y, z)`.
    #[inline]
    pub fn voxel_index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.size + y) * self.size + x
    }

    pub fn get(&self, x: usize, y: usize, z: usize, c: usize) -> f64 {
        self.data[self.voxel_index(x, y, z) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, c: usize, v: f64) {
        let i = self.voxel_index(x, y, z) * self.channels + c;
        self.data[i] = v;
    }

    /// Texture coordinate of voxel center `k` along one axis.
    pub fn voxel_center(&self, k: usize) -> f64 {
        -1.0 + (2 * k + 1) as f64 / self.size as f64
    }

    /// Whether `p_tex` lies within the box spanned by the outermost voxel centers.
    pub fn contains(&self, p_tex: &Vec3) -> bool {
        let limit = 1.0 - 1.0 / self.size as f64;
        p_tex.iter().all(|v| v.abs() <= limit)
    }

    /// Interpolation stencil at `p_tex`, `None` outside the modeled volume.
    #[inline]
    pub fn stencil(&self, p_tex: &Vec3) -> Option<Stencil> {
        Stencil::new(self.size, p_tex)
    }

    /// Trilinear interpolation; the zero vector outside the modeled volume.
    pub fn sample_trilinear(&self, p_tex: &Vec3) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        if let Some(st) = self.stencil(p_tex) {
            self.gather(&st, &mut out);
        }
        out
    }

    /// Accumulates the stencil-weighted channels into `out` (overwriting it).
    #[inline]
    pub fn gather(&self, st: &Stencil, out: &mut [f64]) {
        let c = self.channels;
        out[..c].iter_mut().for_each(|v| *v = 0.0);
        for k in 0..8 {
            let w = st.weights[k];
            let base = st.voxels[k] * c;
            for ch in 0..c {
                out[ch] += w * self.data[base + ch];
            }
        }
    }

    /// Single-channel fast path.
    #[inline]
    pub fn gather_channel(&self, st: &Stencil, ch: usize) -> f64 {
        let c = self.channels;
        let mut acc = 0.0;
        for k in 0..8 {
            acc += st.weights[k] * self.data[st.voxels[k] * c + ch];
        }
        acc
    }

    /// Gradient of channel `ch` with respect to the texture-space position.
    pub fn gather_gradient(&self, st: &Stencil, ch: usize) -> Vec3 {
        let c = self.channels;
        let mut g = Vec3::zeros();
        for k in 0..8 {
            let v = self.data[st.voxels[k] * c + ch];
            g += st.dweights[k] * v;
        }
        g
    }
}

/// The eight voxels and weights of one trilinear lookup.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    /// Voxel indices (`voxel_index`) in corner order `dz * 4 + dy * 2 + dx`.
    pub voxels: [usize; 8],
    pub weights: [f64; 8],
    /// Derivative of each weight with respect to the texture-space position.
    pub dweights: [Vec3; 8],
}

impl Stencil {
    #[inline]
    pub fn new(size: usize, p_tex: &Vec3) -> Option<Self> {
        let s = size as f64;
        let max = (size - 1) as f64;
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let u = ((p_tex[a] + 1.0) * s - 1.0) * 0.5;
            if !(u >= 0.0 && u <= max) {
                return None;
            }
            if size == 1 {
                lo[a] = 0;
                hi[a] = 0;
                frac[a] = 0.0;
                continue;
            }
            let i0 = (u.floor() as usize).min(size - 2);
            lo[a] = i0;
            hi[a] = i0 + 1;
            frac[a] = u - i0 as f64;
        }
        // d(u)/d(tex) = S / 2
        let du = s * 0.5;
        let mut voxels = [0usize; 8];
        let mut weights = [0.0; 8];
        let mut dweights = [Vec3::zeros(); 8];
        for k in 0..8 {
            let dx = k & 1;
            let dy = (k >> 1) & 1;
            let dz = (k >> 2) & 1;
            let x = if dx == 1 { hi[0] } else { lo[0] };
            let y = if dy == 1 { hi[1] } else { lo[1] };
            let z = if dz == 1 { hi[2] } else { lo[2] };
            voxels[k] = (z * size + y) * size + x;
            let wx = if dx == 1 { frac[0] } else { 1.0 - frac[0] };
            let wy = if dy == 1 { frac[1] } else { 1.0 - frac[1] };
            let wz = if dz == 1 { frac[2] } else { 1.0 - frac[2] };
            let sx = if dx == 1 { du } else { -du };
            let sy = if dy == 1 { du } else { -du };
            let sz = if dz == 1 { du } else { -du };
            weights[k] = wx * wy * wz;
            dweights[k] = Vec3::new(sx * wy * wz, wx * sy * wz, wx * wy * sz);
        }
        Some(Self {
            voxels,
            weights,
            dweights,
        })
    }
}

/// Axis-aligned world region in which the object lives and rays are sampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderCube {
    pub min: [f64; 3],
    pub max: [f64; 3],
    /// Enlargement of the cube, about its center, when mapping to texture space.
    pub texture_scale: f64,
}

pub const CUBE_HALF_WIDTH: f64 = 1.0088;
pub const CUBE_NEAR: f64 = 9.5;
pub const CUBE_FAR: f64 = 11.5;

impl Default for RenderCube {
    fn default() -> Self {
        Self {
            min: [-CUBE_HALF_WIDTH, -CUBE_HALF_WIDTH, CUBE_NEAR],
            max: [CUBE_HALF_WIDTH, CUBE_HALF_WIDTH, CUBE_FAR],
            texture_scale: 1.075,
        }
    }
}

impl RenderCube {
    /// Configuration with the larger texture margin used for cat faces.
    pub fn cats() -> Self {
        Self {
            texture_scale: 1.2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), VolumeError> {
        for a in 0..3 {
            if !(self.min[a] < self.max[a]) {
                return Err(VolumeError::Invalid(format!(
                    "cube axis {a}: min {} >= max {}",
                    self.min[a], self.max[a]
                )));
            }
        }
        if !(self.texture_scale > 0.0) {
            return Err(VolumeError::Invalid("texture_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn center(&self) -> Vec3 {
        Vec3::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }

    pub fn half_extent(&self) -> Vec3 {
        Vec3::new(
            0.5 * (self.max[0] - self.min[0]),
            0.5 * (self.max[1] - self.min[1]),
            0.5 * (self.max[2] - self.min[2]),
        )
    }

    /// Scale from world offsets to texture offsets, per axis.
    pub fn texture_per_world(&self) -> Vec3 {
        self.half_extent().map(|h| 1.0 / (h * self.texture_scale))
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn world_to_texture(&self, p: &Vec3) -> Vec3 {
        (p - self.center()).component_mul(&self.texture_per_world())
    }

    pub fn texture_to_world(&self, p_tex: &Vec3) -> Vec3 {
        p_tex.component_div(&self.texture_per_world()) + self.center()
    }
}

/// Maps the enlarged cube affinely onto `[-1, 1]^3`.
pub fn world_to_texture(cube: &RenderCube, p: &Vec3) -> Vec3 {
    cube.world_to_texture(p)
}

/// Density, color and part-logit grids of one object in canonical pose.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalVolume {
    /// Post-activation density, non-negative.
    pub density: VoxelGrid,
    /// Post-activation color in `[0, 1]`.
    pub rgb: VoxelGrid,
    /// Raw part logits; `softmax` along channels gives skinning weights.
    pub lbs_logits: VoxelGrid,
    pub bg_color: [f64; 3],
    pub bg_density: f64,
}

pub const DEFAULT_BG_DENSITY: f64 = 1e4;

impl CanonicalVolume {
    pub fn new(
        density: VoxelGrid,
        rgb: VoxelGrid,
        lbs_logits: VoxelGrid,
        bg_color: [f64; 3],
        bg_density: f64,
    ) -> Result<Self, VolumeError> {
        let s = density.size();
        if rgb.size() != s || lbs_logits.size() != s {
            return Err(VolumeError::SizeMismatch(format!(
                "density {s}, rgb {}, lbs {}",
                rgb.size(),
                lbs_logits.size()
            )));
        }
        if density.channels() != 1 || rgb.channels() != 3 {
            return Err(VolumeError::Invalid(format!(
                "expected 1 density and 3 color channels, got {} and {}",
                density.channels(),
                rgb.channels()
            )));
        }
        if density.data().iter().any(|&v| v < 0.0) {
            return Err(VolumeError::Invalid("negative density".into()));
        }
        if rgb.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(VolumeError::Invalid("color outside [0, 1]".into()));
        }
        if bg_color.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(VolumeError::Invalid("background color outside [0, 1]".into()));
        }
        if !(bg_density > 0.0) || !bg_density.is_finite() {
            return Err(VolumeError::Invalid("background density must be positive".into()));
        }
        Ok(Self {
            density,
            rgb,
            lbs_logits,
            bg_color,
            bg_density,
        })
    }

    /// Empty volume: zero density, mid-gray color, uniform part weights.
    pub fn empty(size: usize, n_parts: usize) -> Self {
        Self {
            density: VoxelGrid::zeros(size, 1),
            rgb: VoxelGrid::filled(size, 3, 0.5),
            lbs_logits: VoxelGrid::zeros(size, n_parts),
            bg_color: [0.0; 3],
            bg_density: DEFAULT_BG_DENSITY,
        }
    }

    pub fn size(&self) -> usize {
        self.density.size()
    }

    pub fn n_parts(&self) -> usize {
        self.lbs_logits.channels()
    }
}

/// Numerically stable softmax of `logits` into `out`.
#[inline]
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Canonical skinning weights at a texture-space point: softmax of the
/// trilinearly sampled logits. Outside the volume the logits read as zero,
/// which gives the uniform simplex.
pub fn lbs_weights_canonical(vol: &CanonicalVolume, x_c_tex: &Vec3) -> Vec<f64> {
    let logits = vol.lbs_logits.sample_trilinear(x_c_tex);
    let mut w = vec![0.0; logits.len()];
    softmax_into(&logits, &mut w);
    w
}
