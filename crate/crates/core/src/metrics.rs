//! Evaluation metrics: depth correlation, novel-view consistency, depth
//! alignment, keypoint lifting and part-distance filtering.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{rot_y, wrap_angle, PinholeCamera, RigidTransform, Vec2, Vec3};
use crate::image::Image;
use crate::optimizer::{apply_affine, Affine2};
use crate::skinning::PartPoseSet;
use crate::volume::RenderCube;

/// Half-size of the keypoint cross, as a fraction of the image size.
pub const CROSS_OFFSET: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("keypoint {index} at ({x:.2}, {y:.2}) is outside the image")]
    KeypointOutOfBounds { index: usize, x: f64, y: f64 },
    #[error("depth at keypoint {index} is not finite")]
    NonFiniteDepth { index: usize },
    #[error("part {part} in frame {frame} sits at the camera origin")]
    DegenerateDistance { frame: usize, part: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Shape or pose code produced by an external estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeVector {
    values: Vec<f64>,
}

impl CodeVector {
    pub fn new(values: Vec<f64>) -> Result<Self, MetricsError> {
        if values.is_empty() {
            return Err(MetricsError::Invalid("empty code vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MetricsError::Invalid("non-finite code entry".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-frame part poses with a fixed part count.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    frames: Vec<PartPoseSet>,
}

impl PoseSequence {
    pub fn new(frames: Vec<PartPoseSet>) -> Result<Self, MetricsError> {
        if let Some(first) = frames.first() {
            if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.len() != first.len()) {
                return Err(MetricsError::ShapeMismatch(format!(
                    "frame {i} has {} parts, frame 0 has {}",
                    f.len(),
                    first.len()
                )));
            }
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[PartPoseSet] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<PartPoseSet> {
        self.frames
    }

    pub fn n_parts(&self) -> usize {
        self.frames.first().map_or(0, |f| f.len())
    }
}

/// Sample Pearson correlation over entries where `mask` is true.
pub fn pearson(a: &[f64], b: &[f64], mask: Option<&[bool]>) -> Result<f64, MetricsError> {
    if a.len() != b.len() || mask.is_some_and(|m| m.len() != a.len()) {
        return Err(MetricsError::ShapeMismatch(format!("{} vs {} values", a.len(), b.len())));
    }
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    let idx: Vec<usize> = (0..a.len()).filter(|&i| keep(i)).collect();
    if idx.len() < 2 {
        return Err(MetricsError::DegenerateVariance(format!("{} samples", idx.len())));
    }
    let n = idx.len() as f64;
    let ma = idx.iter().map(|&i| a[i]).sum::<f64>() / n;
    let mb = idx.iter().map(|&i| b[i]).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &i in &idx {
        let (da, db) = (a[i] - ma, b[i] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa <= 1e-300 || sbb <= 1e-300 {
        return Err(MetricsError::DegenerateVariance("constant input".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation between two depth maps over foreground pixels
/// (`mask` nonzero).
pub fn depth_pearson(pred: &Image, reference: &Image, mask: Option<&Image>) -> Result<f64, MetricsError> {
    if !pred.same_shape(reference) || mask.is_some_and(|m| !m.same_shape(pred)) {
        return Err(MetricsError::ShapeMismatch("depth maps differ in shape".into()));
    }
    let m: Option<Vec<bool>> = mask.map(|m| m.data.iter().map(|&v| v > 0.5).collect());
    pearson(&pred.data, &reference.data, m.as_deref())
}

/// Yaw deviation `|theta_d - (theta_c + theta_r)|` with the difference
/// wrapped to `(-pi, pi]`.
pub fn ayd(theta_d: f64, theta_r: f64, theta_c: f64) -> f64 {
    wrap_angle(theta_d - (theta_c + theta_r)).abs()
}

fn mean_abs_code_diff(a: &CodeVector, b: &CodeVector) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::ShapeMismatch(format!("codes of length {} and {}", a.len(), b.len())));
    }
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Average shape-code consistency.
pub fn asc(c_s: &CodeVector, c_r: &CodeVector) -> Result<f64, MetricsError> {
    mean_abs_code_diff(c_s, c_r)
}

/// Average pose-code consistency.
pub fn apc(c_d: &CodeVector, c_r: &CodeVector) -> Result<f64, MetricsError> {
    mean_abs_code_diff(c_d, c_r)
}

/// Scale and shift mapping `d_hat` onto `d` in the least-squares sense.
pub fn depth_affine_alignment(d: &[f64], d_hat: &[f64]) -> Result<(f64, f64), MetricsError> {
    if d.len() != d_hat.len() {
        return Err(MetricsError::ShapeMismatch(format!("{} vs {} values", d.len(), d_hat.len())));
    }
    if d.is_empty() {
        return Err(MetricsError::DegenerateVariance("no samples".into()));
    }
    let n = d.len() as f64;
    let m = d.iter().sum::<f64>() / n;
    let mh = d_hat.iter().sum::<f64>() / n;
    let (mut cov, mut var) = (0.0, 0.0);
    for (x, y) in d.iter().zip(d_hat) {
        cov += (x - m) * (y - mh);
        var += (y - mh) * (y - mh);
    }
    cov /= n;
    var /= n;
    if !(var > 1e-12) {
        return Err(MetricsError::DegenerateVariance(format!("Var(d_hat) = {var:e}")));
    }
    let scale = cov / var;
    Ok((scale, m - scale * mh))
}

/// Least-squares 2D affine map taking `src` onto `dst`.
pub fn fit_affine_2d(src: &[Vec2], dst: &[Vec2]) -> Result<Affine2, MetricsError> {
    if src.len() != dst.len() {
        return Err(MetricsError::ShapeMismatch(format!("{} vs {} points", src.len(), dst.len())));
    }
    if src.len() < 3 {
        return Err(MetricsError::DegenerateConfiguration(format!("{} points (need >= 3)", src.len())));
    }
    let k = src.len();
    let design = DMatrix::from_fn(k, 3, |i, j| match j {
        0 => src[i].x,
        1 => src[i].y,
        _ => 1.0,
    });
    let svd = design.svd(true, true);
    let sv = &svd.singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 1e-10 * smax.max(1.0)) {
        return Err(MetricsError::DegenerateConfiguration("source points are collinear".into()));
    }
    let mut a = Affine2::zeros();
    for row in 0..2 {
        let rhs = DVector::from_iterator(k, dst.iter().map(|p| p[row]));
        let sol = svd
            .solve(&rhs, 0.0)
            .map_err(|e| MetricsError::DegenerateConfiguration(e.to_string()))?;
        for j in 0..3 {
            a[(row, j)] = sol[j];
        }
    }
    Ok(a)
}

/// Center plus four points offset by `CROSS_OFFSET` of the image size.
pub fn keypoint_cross(center: &Vec2, cam: &PinholeCamera) -> [Vec2; 5] {
    let dx = CROSS_OFFSET * cam.width as f64;
    let dy = CROSS_OFFSET * cam.height as f64;
    [
        *center,
        center + Vec2::new(dx, 0.0),
        center - Vec2::new(dx, 0.0),
        center + Vec2::new(0.0, dy),
        center - Vec2::new(0.0, dy),
    ]
}

/// Affine maps approximating how the neighbourhood of each keypoint moves
/// when the object is turned by `yaw` about the rendering-cube center.
/// `depth` holds distances along unit camera rays.
pub fn lift_keypoints_novel_view(
    centers: &[Vec2],
    depth: &Image,
    cam: &PinholeCamera,
    cube: &RenderCube,
    yaw: f64,
) -> Result<Vec<Affine2>, MetricsError> {
    if depth.width != cam.width || depth.height != cam.height || depth.channels != 1 {
        return Err(MetricsError::ShapeMismatch("depth map does not match the camera".into()));
    }
    let turn = RigidTransform::about_point(rot_y(yaw), cube.center());
    let mut out = Vec::with_capacity(centers.len());
    for (index, c) in centers.iter().enumerate() {
        let cross = keypoint_cross(c, cam);
        let mut moved = [Vec2::zeros(); 5];
        for (k, p) in cross.iter().enumerate() {
            let (x, y) = (p.x.floor(), p.y.floor());
            if !(x >= 0.0 && y >= 0.0 && x < cam.width as f64 && y < cam.height as f64) {
                return Err(MetricsError::KeypointOutOfBounds { index, x: p.x, y: p.y });
            }
            let d = depth.get(x as usize, y as usize, 0);
            if !d.is_finite() {
                return Err(MetricsError::NonFiniteDepth { index });
            }
            let world: Vec3 = cam.ray_direction(p) * d;
            moved[k] = cam
                .project_point(&turn.apply(&world))
                .map_err(|e| MetricsError::DegenerateConfiguration(e.to_string()))?;
        }
        out.push(fit_affine_2d(&cross, &moved)?);
    }
    Ok(out)
}

/// Moves keypoints with the lifted affine maps (each map applied to its own
/// center).
pub fn apply_lifted(centers: &[Vec2], maps: &[Affine2]) -> Vec<Vec2> {
    centers.iter().zip(maps).map(|(c, a)| apply_affine(a, c)).collect()
}

/// Rescales each part's translation so that its transformed cube center
/// keeps the same distance from the camera in every frame.
pub fn filter_part_distances(seq: &PoseSequence, cube: &RenderCube) -> Result<PoseSequence, MetricsError> {
    let n_parts = seq.n_parts();
    let center = cube.center();
    let mut frames = seq.frames.clone();
    for p in 0..n_parts {
        let mut dists = Vec::with_capacity(frames.len());
        for (f, frame) in seq.frames.iter().enumerate() {
            let d = frame.poses[p].apply(&center).norm();
            if !(d > 1e-9) {
                return Err(MetricsError::DegenerateDistance { frame: f, part: p });
            }
            dists.push(d);
        }
        let target = if dists.iter().all(|&d| d == dists[0]) {
            dists[0]
        } else {
            dists.iter().sum::<f64>() / dists.len() as f64
        };
        for (frame, &d) in frames.iter_mut().zip(&dists) {
            let scale = target / d;
            if scale == 1.0 {
                continue;
            }
            let pose = frame.poses[p];
            let c = pose.apply(&center);
            let t = pose.translation() + c * (scale - 1.0);
            frame.poses[p] = pose.with_translation(t);
        }
    }
    Ok(PoseSequence { frames })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
    pub n: usize,
}

/// Writes `metric,value,n` rows.
pub fn write_metric_rows<W: Write>(mut out: W, rows: &[MetricRow]) -> std::io::Result<()> {
    writeln!(out, "metric,value,n")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.metric, r.value, r.n)?;
    }
    Ok(())
}
