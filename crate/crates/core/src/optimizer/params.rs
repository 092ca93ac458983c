//! Unconstrained parameterization of a canonical volume.

use crate::render::GridGradient;
use crate::volume::{CanonicalVolume, VoxelGrid};

use super::LossError;

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of `softplus`, clamped so that zero maps to a finite value.
#[inline]
pub fn softplus_inverse(y: f64) -> f64 {
    let y = y.max(1e-8);
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(y: f64) -> f64 {
    let y = y.clamp(1e-6, 1.0 - 1e-6);
    (y / (1.0 - y)).ln()
}

/// Raw volume parameters laid out as `[density | rgb | lbs logits]`, each
/// block in voxel order. Density passes through softplus, color through a
/// logistic squash, logits are used as is.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeParams {
    size: usize,
    n_parts: usize,
    pub values: Vec<f64>,
    pub bg_color: [f64; 3],
    pub bg_density: f64,
}

impl VolumeParams {
    pub fn from_volume(vol: &CanonicalVolume) -> Self {
        let mut values = Vec::with_capacity(vol.density.data().len() * 4 + vol.lbs_logits.data().len());
        values.extend(vol.density.data().iter().map(|&d| softplus_inverse(d)));
        values.extend(vol.rgb.data().iter().map(|&c| logit(c)));
        values.extend_from_slice(vol.lbs_logits.data());
        Self {
            size: vol.size(),
            n_parts: vol.n_parts(),
            values,
            bg_color: vol.bg_color,
            bg_density: vol.bg_density,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn n_parts(&self) -> usize {
        self.n_parts
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn voxel_count(&self) -> usize {
        self.size * self.size * self.size
    }

    /// Ranges of the density, color and logit blocks.
    pub fn blocks(&self) -> [std::ops::Range<usize>; 3] {
        let v = self.voxel_count();
        [0..v, v..4 * v, 4 * v..4 * v + v * self.n_parts]
    }

    pub fn to_volume(&self) -> CanonicalVolume {
        let [d, c, l] = self.blocks();
        let s = self.size;
        let grid = |ch: usize, data: Vec<f64>| VoxelGrid::from_data(s, ch, data).expect("parameter block size");
        CanonicalVolume {
            density: grid(1, self.values[d].iter().map(|&x| softplus(x)).collect()),
            rgb: grid(3, self.values[c].iter().map(|&x| sigmoid(x)).collect()),
            lbs_logits: grid(self.n_parts, self.values[l].to_vec()),
            bg_color: self.bg_color,
            bg_density: self.bg_density,
        }
    }

    /// Chains a gradient on the post-activation grids into raw parameters.
    pub fn chain(&self, grad: &GridGradient) -> Result<Vec<f64>, LossError> {
        let [d, c, l] = self.blocks();
        if grad.density.len() != d.len() || grad.rgb.len() != c.len() || grad.lbs_logits.len() != l.len() {
            return Err(LossError::ShapeMismatch("gradient does not match parameters".into()));
        }
        let mut out = Vec::with_capacity(self.values.len());
        out.extend(self.values[d].iter().zip(&grad.density).map(|(&x, g)| g * sigmoid(x)));
        out.extend(self.values[c].iter().zip(&grad.rgb).map(|(&x, g)| {
            let s = sigmoid(x);
            g * s * (1.0 - s)
        }));
        out.extend_from_slice(&grad.lbs_logits);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn activations_invert() {
        for y in [1e-3, 0.1, 1.0, 5.0, 40.0] {
            assert_abs_diff_eq!(softplus(softplus_inverse(y)), y, epsilon = 1e-12 * y.max(1.0));
        }
        for y in [0.01, 0.3, 0.5, 0.99] {
            assert_abs_diff_eq!(sigmoid(logit(y)), y, epsilon = 1e-12);
        }
        assert!(softplus_inverse(0.0).is_finite());
        assert!(softplus(-800.0) >= 0.0);
    }

    #[test]
    fn volume_round_trip() {
        let mut vol = CanonicalVolume::empty(3, 2);
        vol.density = VoxelGrid::from_fn(3, 1, |x, y, z, _| 0.2 + (x + 2 * y + 3 * z) as f64);
        vol.rgb = VoxelGrid::from_fn(3, 3, |x, _, _, c| 0.1 + 0.2 * c as f64 + 0.05 * x as f64);
        vol.lbs_logits = VoxelGrid::from_fn(3, 2, |x, y, _, c| x as f64 - y as f64 * c as f64);
        let back = VolumeParams::from_volume(&vol).to_volume();
        for (a, b) in back.density.data().iter().zip(vol.density.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        for (a, b) in back.rgb.data().iter().zip(vol.rgb.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert_eq!(back.lbs_logits, vol.lbs_logits);
        assert_eq!(back.bg_density, vol.bg_density);
    }
}
