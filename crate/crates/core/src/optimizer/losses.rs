//! Loss terms and the image operators they need.

use crate::geometry::{RigidTransform, Vec2};
use crate::image::Image;
use crate::skinning::PartPoseSet;
use crate::volume::{softmax_into, CanonicalVolume};
use nalgebra::{Matrix2, Matrix2x3, Vector2};

use super::LossError;

/// 2x3 affine map acting on pixel coordinates.
pub type Affine2 = Matrix2x3<f64>;

/// Default resolution pyramid of the reconstruction loss.
pub const DEFAULT_PYRAMID: [usize; 4] = [1, 2, 4, 8];

/// Density threshold below which a part is considered empty.
pub const INIT_DENSITY_THRESHOLD: f64 = 0.01;

/// Clamp applied to occupancy before taking logarithms.
pub const OCCUPANCY_CLAMP: f64 = 1e-6;

pub fn apply_affine(a: &Affine2, p: &Vec2) -> Vec2 {
    a.fixed_view::<2, 2>(0, 0) * p + a.column(2)
}

pub fn invert_affine(a: &Affine2) -> Result<Affine2, LossError> {
    let m: Matrix2<f64> = a.fixed_view::<2, 2>(0, 0).into_owned();
    let det = m.determinant();
    if !(det.abs() > 1e-12) {
        return Err(LossError::SingularAffine(det));
    }
    let inv = m.try_inverse().ok_or(LossError::SingularAffine(det))?;
    let t: Vector2<f64> = -(inv * a.column(2));
    Ok(Affine2::new(inv[(0, 0)], inv[(0, 1)], t.x, inv[(1, 0)], inv[(1, 1)], t.y))
}

/// Box-filter mean over `factor x factor` blocks.
pub fn downsample(img: &Image, factor: usize) -> Result<Image, LossError> {
    if factor == 0 || !factor.is_power_of_two() {
        return Err(LossError::InvalidFactor(factor));
    }
    if img.width % factor != 0 || img.height % factor != 0 {
        return Err(LossError::IndivisibleSize {
            width: img.width,
            height: img.height,
            factor,
        });
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let (w, h, c) = (img.width / factor, img.height / factor, img.channels);
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = Image::zeros(w, h, c);
    for y in 0..img.height {
        for x in 0..img.width {
            for ch in 0..c {
                let i = out.index(x / factor, y / factor, ch);
                out.data[i] += img.get(x, y, ch);
            }
        }
    }
    out.data.iter_mut().for_each(|v| *v *= norm);
    Ok(out)
}

fn check_shapes(a: &Image, b: &Image) -> Result<(), LossError> {
    if !a.same_shape(b) {
        return Err(LossError::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    Ok(())
}

#[inline]
fn l1_sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sum over pyramid levels of the mean absolute difference of the
/// downsampled images.
pub fn pyramid_reconstruction_loss(pred: &Image, target: &Image, levels: &[usize]) -> Result<f64, LossError> {
    check_shapes(pred, target)?;
    let mut total = 0.0;
    for &f in levels {
        let a = downsample(pred, f)?;
        let b = downsample(target, f)?;
        total += a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data.len() as f64;
    }
    Ok(total)
}

/// Loss value and its gradient with respect to `pred`.
pub fn pyramid_reconstruction_grad(
    pred: &Image,
    target: &Image,
    levels: &[usize],
) -> Result<(f64, Image), LossError> {
    check_shapes(pred, target)?;
    let mut grad = Image::zeros(pred.width, pred.height, pred.channels);
    let mut total = 0.0;
    for &f in levels {
        let a = downsample(pred, f)?;
        let b = downsample(target, f)?;
        let n = a.data.len() as f64;
        let scale = 1.0 / (n * (f * f) as f64);
        total += a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / n;
        for y in 0..pred.height {
            for x in 0..pred.width {
                for c in 0..pred.channels {
                    let i = a.index(x / f, y / f, c);
                    let gi = grad.index(x, y, c);
                    grad.data[gi] += scale * l1_sign(a.data[i] - b.data[i]);
                }
            }
        }
    }
    Ok((total, grad))
}

/// Binary cross-entropy pushing occupancy towards the foreground `1 - B`.
pub fn background_loss(occupancy: &Image, mask: &Image) -> Result<f64, LossError> {
    Ok(background_loss_grad(occupancy, mask)?.0)
}

pub fn background_loss_grad(occupancy: &Image, mask: &Image) -> Result<(f64, Image), LossError> {
    check_shapes(occupancy, mask)?;
    let n = occupancy.data.len() as f64;
    let mut grad = Image::zeros(occupancy.width, occupancy.height, occupancy.channels);
    let mut total = 0.0;
    for (i, (&o, &b)) in occupancy.data.iter().zip(&mask.data).enumerate() {
        let oc = o.clamp(OCCUPANCY_CLAMP, 1.0 - OCCUPANCY_CLAMP);
        total -= (1.0 - b) * oc.ln() + b * (1.0 - oc).ln();
        if o > OCCUPANCY_CLAMP && o < 1.0 - OCCUPANCY_CLAMP {
            grad.data[i] = -((1.0 - b) / oc - b / (1.0 - oc)) / n;
        }
    }
    Ok((total / n, grad))
}

/// Mean absolute coordinate difference between affinely moved keypoints and
/// the keypoints detected on the warped image.
pub fn equivariance_loss(k_orig: &[Vec2], k_warped: &[Vec2], a: &Affine2) -> Result<f64, LossError> {
    if k_orig.len() != k_warped.len() {
        return Err(LossError::ShapeMismatch(format!(
            "{} vs {} keypoints",
            k_orig.len(),
            k_warped.len()
        )));
    }
    if k_orig.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = k_orig
        .iter()
        .zip(k_warped)
        .map(|(p, q)| {
            let d = apply_affine(a, p) - q;
            d.x.abs() + d.y.abs()
        })
        .sum();
    Ok(total / (2 * k_orig.len()) as f64)
}

/// Resamples `img` so that `out(A p) = img(p)`; bilinear, zero outside.
/// Coordinates are continuous pixel positions with pixel centers at `k + 0.5`.
pub fn warp_affine(img: &Image, a: &Affine2) -> Result<Image, LossError> {
    let inv = invert_affine(a)?;
    let mut out = Image::zeros(img.width, img.height, img.channels);
    let (w, h) = (img.width as i64, img.height as i64);
    for y in 0..img.height {
        for x in 0..img.width {
            let src = apply_affine(&inv, &Vec2::new(x as f64 + 0.5, y as f64 + 0.5));
            let qx = src.x - 0.5;
            let qy = src.y - 0.5;
            let x0 = qx.floor();
            let y0 = qy.floor();
            let fx = qx - x0;
            let fy = qy - y0;
            let (x0, y0) = (x0 as i64, y0 as i64);
            for c in 0..img.channels {
                let mut acc = 0.0;
                for (dx, dy, wgt) in [
                    (0, 0, (1.0 - fx) * (1.0 - fy)),
                    (1, 0, fx * (1.0 - fy)),
                    (0, 1, (1.0 - fx) * fy),
                    (1, 1, fx * fy),
                ] {
                    if wgt == 0.0 {
                        continue;
                    }
                    let (sx, sy) = (x0 + dx, y0 + dy);
                    if sx >= 0 && sy >= 0 && sx < w && sy < h {
                        acc += wgt * img.get(sx as usize, sy as usize, c);
                    }
                }
                out.set(x, y, c, acc);
            }
        }
    }
    Ok(out)
}

/// Mean over voxels of density times each part's canonical weight.
pub fn part_mean_density(vol: &CanonicalVolume) -> Vec<f64> {
    let n = vol.n_parts();
    let count = vol.density.voxel_count();
    let mut sigma = vec![0.0; n];
    let mut w = vec![0.0; n];
    for v in 0..count {
        softmax_into(&vol.lbs_logits.data()[v * n..(v + 1) * n], &mut w);
        let d = vol.density.data()[v];
        for p in 0..n {
            sigma[p] += d * w[p];
        }
    }
    sigma.iter_mut().for_each(|s| *s /= count as f64);
    sigma
}

/// Index of the densest part (first on ties).
pub fn densest_part(sigma: &[f64]) -> usize {
    sigma
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (p, &s)| if s > best.1 { (p, s) } else { best })
        .0
}

/// Pose each part is pulled towards: the densest part's pose, or the
/// identity for a single part.
fn init_anchor(poses: &PartPoseSet, sigma: &[f64]) -> RigidTransform {
    if poses.len() == 1 {
        RigidTransform::identity()
    } else {
        poses.poses[densest_part(sigma)]
    }
}

/// Hinge pulling parts with little density towards the densest part.
pub fn init_loss(poses: &PartPoseSet, sigma: &[f64], threshold: f64) -> f64 {
    let anchor = init_anchor(poses, sigma);
    poses
        .poses
        .iter()
        .zip(sigma)
        .map(|(t, &s)| (threshold - s).max(0.0) * t.l1_distance(&anchor))
        .sum()
}

/// `d init_loss / d sigma_p`, treating the densest-part choice as fixed.
pub fn init_loss_sigma_grad(poses: &PartPoseSet, sigma: &[f64], threshold: f64) -> Vec<f64> {
    let anchor = init_anchor(poses, sigma);
    poses
        .poses
        .iter()
        .zip(sigma)
        .map(|(t, &s)| if threshold - s > 0.0 { -t.l1_distance(&anchor) } else { 0.0 })
        .collect()
}

/// Keeps density and part logits close to a reference volume.
pub fn geometry_reg_loss(vol: &CanonicalVolume, reference: &CanonicalVolume) -> Result<f64, LossError> {
    if vol.density.data().len() != reference.density.data().len()
        || vol.lbs_logits.data().len() != reference.lbs_logits.data().len()
    {
        return Err(LossError::ShapeMismatch(format!(
            "volume {}^3 x {} parts vs reference {}^3 x {} parts",
            vol.size(),
            vol.n_parts(),
            reference.size(),
            reference.n_parts()
        )));
    }
    let mean_abs = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    Ok(mean_abs(vol.density.data(), reference.density.data())
        + mean_abs(vol.lbs_logits.data(), reference.lbs_logits.data()))
}
