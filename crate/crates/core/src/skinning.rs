//! Linear blend skinning and its approximate inverse.
//!
//! Forward skinning moves a canonical point with the weighted sum of the
//! part transforms. Rendering needs the opposite direction: every deformed
//! point is pulled back through each part's inverse transform, and the
//! canonical weights found there (masked to the modeled volume and
//! renormalized) decide how the pulled-back candidates are blended.

use crate::geometry::{RigidTransform, Vec3};
use crate::volume::{softmax_into, CanonicalVolume, RenderCube, Stencil};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Inverse weights are undefined below this total canonical weight.
pub const EMPTY_WEIGHT_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkinningError {
    #[error("pose set has {got} parts, volume has {expected}")]
    PartCount { expected: usize, got: usize },
}

/// One part-to-camera transform per part.
#[derive(Debug, Clone, PartialEq)]
pub struct PartPoseSet {
    pub poses: Vec<RigidTransform>,
}

impl PartPoseSet {
    pub fn new(poses: Vec<RigidTransform>) -> Self {
        Self { poses }
    }

    pub fn identity(n_parts: usize) -> Self {
        Self {
            poses: vec![RigidTransform::identity(); n_parts],
        }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn check_parts(&self, n_parts: usize) -> Result<(), SkinningError> {
        if self.poses.len() != n_parts {
            return Err(SkinningError::PartCount {
                expected: n_parts,
                got: self.poses.len(),
            });
        }
        Ok(())
    }

    /// Applies `t` after every part pose (moves the whole object).
    pub fn premultiply(&self, t: &RigidTransform) -> PartPoseSet {
        PartPoseSet {
            poses: self.poses.iter().map(|p| t.compose(p)).collect(),
        }
    }

    pub fn to_rows(&self) -> Vec<[[f64; 4]; 3]> {
        self.poses.iter().map(|p| p.to_rows()).collect()
    }
}

/// Serialized form: one row-major 3x4 matrix per part.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosesFile {
    pub poses: Vec<[[f64; 4]; 3]>,
}

/// `x_d = sum_p w_p (R_p x_c + t_p)`.
pub fn lbs_forward(x_c: &Vec3, weights: &[f64], poses: &PartPoseSet) -> Vec3 {
    weights
        .iter()
        .zip(&poses.poses)
        .fold(Vec3::zeros(), |acc, (&w, t)| acc + w * t.apply(x_c))
}

/// Inverse skinning weights at a deformed point; `None` when no part claims it.
pub fn inverse_lbs_weights(
    x_d: &Vec3,
    poses: &PartPoseSet,
    vol: &CanonicalVolume,
    cube: &RenderCube,
) -> Option<Vec<f64>> {
    let inverses: Vec<RigidTransform> = poses.poses.iter().map(|p| p.inverse()).collect();
    let mut scratch = InverseSkinning::new(vol.n_parts());
    if scratch.evaluate(x_d, &inverses, vol, cube) {
        Some(scratch.weights.clone())
    } else {
        None
    }
}

/// Deformed-to-canonical lookup; `None` signals empty space.
pub fn deform_to_canonical(
    x_d: &Vec3,
    poses: &PartPoseSet,
    vol: &CanonicalVolume,
    cube: &RenderCube,
) -> Option<Vec3> {
    let inverses: Vec<RigidTransform> = poses.poses.iter().map(|p| p.inverse()).collect();
    let mut scratch = InverseSkinning::new(vol.n_parts());
    if scratch.evaluate(x_d, &inverses, vol, cube) {
        Some(scratch.x_c)
    } else {
        None
    }
}

/// Reusable evaluation of the inverse skinning at one point, keeping the
/// intermediates that the backward pass needs.
#[derive(Debug, Clone)]
pub struct InverseSkinning {
    n_parts: usize,
    /// Pulled-back candidate per part (world units).
    pub candidates: Vec<Vec3>,
    /// Stencil of each candidate in the logit grid, `None` when masked out.
    pub stencils: Vec<Option<Stencil>>,
    /// Canonical softmax at each candidate, row-major `[part][channel]`.
    pub softmax: Vec<f64>,
    /// Unnormalized weight of each part (its own channel at its own candidate).
    pub raw: Vec<f64>,
    pub total: f64,
    /// Normalized inverse weights.
    pub weights: Vec<f64>,
    pub x_c: Vec3,
    /// Scratch: sampled logits in the forward pass, weight gradients in the backward pass.
    logits: Vec<f64>,
}

impl InverseSkinning {
    pub fn new(n_parts: usize) -> Self {
        Self {
            n_parts,
            candidates: vec![Vec3::zeros(); n_parts],
            stencils: vec![None; n_parts],
            softmax: vec![0.0; n_parts * n_parts],
            raw: vec![0.0; n_parts],
            total: 0.0,
            weights: vec![0.0; n_parts],
            x_c: Vec3::zeros(),
            logits: vec![0.0; n_parts],
        }
    }

    /// Evaluates at `x_d` given the inverted part poses. Returns `false` when
    /// the point maps outside every part.
    pub fn evaluate(
        &mut self,
        x_d: &Vec3,
        inverses: &[RigidTransform],
        vol: &CanonicalVolume,
        cube: &RenderCube,
    ) -> bool {
        let n = self.n_parts;
        let size = vol.size();
        self.total = 0.0;
        for p in 0..n {
            let y = inverses[p].apply(x_d);
            self.candidates[p] = y;
            let st = Stencil::new(size, &cube.world_to_texture(&y));
            self.stencils[p] = st;
            self.raw[p] = match &st {
                None => 0.0,
                Some(_) if n == 1 => 1.0,
                Some(st) => {
                    vol.lbs_logits.gather(st, &mut self.logits);
                    let row = &mut self.softmax[p * n..(p + 1) * n];
                    softmax_into(&self.logits, row);
                    row[p]
                }
            };
            self.total += self.raw[p];
        }
        if self.total < EMPTY_WEIGHT_THRESHOLD {
            return false;
        }
        self.x_c = Vec3::zeros();
        for p in 0..n {
            self.weights[p] = self.raw[p] / self.total;
            self.x_c += self.weights[p] * self.candidates[p];
        }
        true
    }

    /// Back-propagates `d_xc` (gradient of the loss with respect to the
    /// canonical point) into the logit grid gradient `d_logits`.
    pub fn backward(&mut self, d_xc: &Vec3, d_logits: &mut [f64]) {
        let n = self.n_parts;
        if n == 1 {
            return;
        }
        let mut gw_dot = 0.0;
        for p in 0..n {
            self.logits[p] = d_xc.dot(&self.candidates[p]);
            gw_dot += self.logits[p] * self.weights[p];
        }
        for q in 0..n {
            let Some(st) = &self.stencils[q] else { continue };
            let ga = (self.logits[q] - gw_dot) / self.total;
            let s = &self.softmax[q * n..(q + 1) * n];
            let sq = s[q];
            for k in 0..n {
                let delta = if k == q { 1.0 } else { 0.0 };
                let g = ga * sq * (delta - s[k]);
                if g == 0.0 {
                    continue;
                }
                for c in 0..8 {
                    d_logits[st.voxels[c] * n + k] += g * st.weights[c];
                }
            }
        }
    }
}
