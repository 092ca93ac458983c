//! Weighted loss over a set of target views and its gradient with respect
//! to raw volume parameters.

use crate::geometry::{PinholeCamera, Vec2};
use crate::image::Image;
use crate::pnp::{reprojection_error, KeypointCorrespondence};
use crate::render::{make_rays, render_backward, render_color_occupancy, GridGradient, Ray, RenderConfig};
use crate::skinning::PartPoseSet;
use crate::volume::{softmax_into, CanonicalVolume, RenderCube};
use serde::{Deserialize, Serialize};

use super::losses::{
    background_loss_grad, equivariance_loss, geometry_reg_loss, init_loss, init_loss_sigma_grad,
    part_mean_density, pyramid_reconstruction_grad, Affine2, DEFAULT_PYRAMID, INIT_DENSITY_THRESHOLD,
};
use super::params::VolumeParams;
use super::LossError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_rec: f64,
    pub w_bkg: f64,
    pub w_eq: f64,
    pub w_proj: f64,
    pub w_init: f64,
    pub w_geo: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_rec: 1.0,
            w_bkg: 1.0,
            w_eq: 1.0,
            w_proj: 1.0,
            w_init: 1.0,
            w_geo: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let all = [self.w_rec, self.w_bkg, self.w_eq, self.w_proj, self.w_init, self.w_geo];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(LossError::InvalidConfig("loss weights must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Keypoints detected on an image and on its affinely warped copy.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivarianceSample {
    pub k_orig: Vec<Vec2>,
    pub k_warped: Vec<Vec2>,
    pub affine: Affine2,
}

/// One observed frame: image, part poses, optional background mask and
/// optional keypoint evidence.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetView {
    pub image: Image,
    pub poses: PartPoseSet,
    /// 1 on background pixels.
    pub mask: Option<Image>,
    /// One correspondence set per part.
    pub keypoints: Option<Vec<KeypointCorrespondence>>,
    pub equivariance: Option<EquivarianceSample>,
}

impl TargetView {
    pub fn new(image: Image, poses: PartPoseSet) -> Self {
        Self {
            image,
            poses,
            mask: None,
            keypoints: None,
            equivariance: None,
        }
    }

    pub fn with_mask(mut self, mask: Image) -> Self {
        self.mask = Some(mask);
        self
    }
}

/// Unweighted loss terms plus their weighted sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub rec: f64,
    pub bkg: f64,
    pub eq: f64,
    pub proj: f64,
    pub init: f64,
    pub geo: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.total, self.rec, self.bkg, self.eq, self.proj, self.init, self.geo]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Everything held fixed while the volume changes.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    pub cam: PinholeCamera,
    pub cube: RenderCube,
    pub render: RenderConfig,
    pub weights: LossWeights,
    pub pyramid: Vec<usize>,
    pub init_threshold: f64,
    pub geo_reference: Option<&'a CanonicalVolume>,
}

impl<'a> Objective<'a> {
    pub fn new(cam: PinholeCamera, cube: RenderCube, render: RenderConfig) -> Self {
        Self {
            cam,
            cube,
            render,
            weights: LossWeights::default(),
            pyramid: DEFAULT_PYRAMID.to_vec(),
            init_threshold: INIT_DENSITY_THRESHOLD,
            geo_reference: None,
        }
    }

    pub fn loss(&self, params: &VolumeParams, targets: &[TargetView]) -> Result<LossBreakdown, LossError> {
        Ok(self.run(params, targets, false)?.0)
    }

    /// Loss and its gradient with respect to `params.values`.
    pub fn loss_and_grad(
        &self,
        params: &VolumeParams,
        targets: &[TargetView],
    ) -> Result<(LossBreakdown, Vec<f64>), LossError> {
        let (b, g) = self.run(params, targets, true)?;
        Ok((b, g.expect("gradient requested")))
    }

    fn run(
        &self,
        params: &VolumeParams,
        targets: &[TargetView],
        want_grad: bool,
    ) -> Result<(LossBreakdown, Option<Vec<f64>>), LossError> {
        if targets.is_empty() {
            return Err(LossError::InvalidConfig("no target views".into()));
        }
        self.weights.validate()?;
        let vol = params.to_volume();
        let rays = make_rays(&self.cam);
        let n_t = targets.len() as f64;
        let w = &self.weights;
        let mut b = LossBreakdown::default();
        let mut grad = want_grad.then(|| GridGradient::zeros(&vol));
        let sigma = part_mean_density(&vol);
        let mut d_sigma = vec![0.0; vol.n_parts()];

        for t in targets {
            let (rec, bkg, d_rgb, d_occ) = self.image_terms(&vol, &rays, t)?;
            b.rec += rec / n_t;
            b.bkg += bkg / n_t;
            if let Some(eq) = &t.equivariance {
                b.eq += equivariance_loss(&eq.k_orig, &eq.k_warped, &eq.affine)? / n_t;
            }
            if let Some(kps) = &t.keypoints {
                if kps.len() != t.poses.len() {
                    return Err(LossError::ShapeMismatch(format!(
                        "{} keypoint sets for {} parts",
                        kps.len(),
                        t.poses.len()
                    )));
                }
                let proj: f64 = kps
                    .iter()
                    .zip(&t.poses.poses)
                    .map(|(c, p)| reprojection_error(c, p, &self.cam))
                    .sum::<Result<f64, _>>()?;
                b.proj += proj / kps.len() as f64 / n_t;
            }
            b.init += init_loss(&t.poses, &sigma, self.init_threshold) / n_t;

            if let Some(g) = grad.as_mut() {
                let scale_rgb = w.w_rec / n_t;
                let scale_occ = w.w_bkg / n_t;
                let has_rgb = scale_rgb > 0.0;
                let has_occ = scale_occ > 0.0 && t.mask.is_some();
                if has_rgb || has_occ {
                    let mut gr = d_rgb;
                    gr.data.iter_mut().for_each(|v| *v *= if has_rgb { scale_rgb } else { 0.0 });
                    let mut go = d_occ;
                    go.data.iter_mut().for_each(|v| *v *= if has_occ { scale_occ } else { 0.0 });
                    let part = render_backward(&vol, &t.poses, &rays, &self.cube, &self.render, &gr, &go)?;
                    g.add_assign(&part);
                }
                for (acc, s) in d_sigma
                    .iter_mut()
                    .zip(init_loss_sigma_grad(&t.poses, &sigma, self.init_threshold))
                {
                    *acc += w.w_init * s / n_t;
                }
            }
        }

        if let Some(reference) = self.geo_reference {
            b.geo = geometry_reg_loss(&vol, reference)?;
            if let Some(g) = grad.as_mut() {
                add_geo_grad(&vol, reference, w.w_geo, g);
            }
        }
        if let Some(g) = grad.as_mut() {
            add_sigma_grad(&vol, &d_sigma, g);
        }

        b.total = w.w_rec * b.rec + w.w_bkg * b.bkg + w.w_eq * b.eq + w.w_proj * b.proj + w.w_init * b.init + w.w_geo * b.geo;
        let raw = match grad {
            Some(g) => Some(params.chain(&g)?),
            None => None,
        };
        Ok((b, raw))
    }

    fn image_terms(
        &self,
        vol: &CanonicalVolume,
        rays: &[Ray],
        t: &TargetView,
    ) -> Result<(f64, f64, Image, Image), LossError> {
        let (w, h) = (self.cam.width, self.cam.height);
        let (rgb, occ) = render_color_occupancy(vol, &t.poses, rays, w, h, &self.cube, &self.render)?;
        let (rec, d_rgb) = pyramid_reconstruction_grad(&rgb, &t.image, &self.pyramid)?;
        let (bkg, d_occ) = match &t.mask {
            Some(m) => background_loss_grad(&occ, m)?,
            None => (0.0, Image::zeros(w, h, 1)),
        };
        Ok((rec, bkg, d_rgb, d_occ))
    }
}

fn add_geo_grad(vol: &CanonicalVolume, reference: &CanonicalVolume, weight: f64, g: &mut GridGradient) {
    let sign = |d: f64| if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
    let nd = vol.density.data().len() as f64;
    for (gi, (a, r)) in g.density.iter_mut().zip(vol.density.data().iter().zip(reference.density.data())) {
        *gi += weight * sign(a - r) / nd;
    }
    let nl = vol.lbs_logits.data().len() as f64;
    for (gi, (a, r)) in g
        .lbs_logits
        .iter_mut()
        .zip(vol.lbs_logits.data().iter().zip(reference.lbs_logits.data()))
    {
        *gi += weight * sign(a - r) / nl;
    }
}

/// Pushes `d loss / d sigma_p` through the part mean densities.
fn add_sigma_grad(vol: &CanonicalVolume, d_sigma: &[f64], g: &mut GridGradient) {
    if d_sigma.iter().all(|&v| v == 0.0) {
        return;
    }
    let n = vol.n_parts();
    let count = vol.density.voxel_count() as f64;
    let mut w = vec![0.0; n];
    for v in 0..vol.density.voxel_count() {
        let logits = &vol.lbs_logits.data()[v * n..(v + 1) * n];
        softmax_into(logits, &mut w);
        let d = vol.density.data()[v];
        let mix: f64 = d_sigma.iter().zip(&w).map(|(a, b)| a * b).sum();
        g.density[v] += mix / count;
        for k in 0..n {
            g.lbs_logits[v * n + k] += d / count * w[k] * (d_sigma[k] - mix);
        }
    }
}

/// Gradient of the weighted loss with respect to raw volume parameters for
/// a single target view.
pub fn grad_render_loss(
    params: &VolumeParams,
    poses: &PartPoseSet,
    cam: &PinholeCamera,
    cube: &RenderCube,
    cfg: &RenderConfig,
    target: &Image,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Vec<f64>), LossError> {
    let mut obj = Objective::new(*cam, *cube, *cfg);
    obj.weights = *weights;
    obj.loss_and_grad(params, &[TargetView::new(target.clone(), poses.clone())])
}
