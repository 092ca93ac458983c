//! EPnP pose recovery from 2D/3D keypoint correspondences.
//!
//! The 3D points are expressed as barycentric combinations of four control
//! points (centroid plus principal axes; three for planar sets). Projection
//! equations make the camera-frame control points a null vector of a
//! `2N x 12` system. Candidates built from the one, two and three smallest
//! right singular vectors are scaled with the inter-control-point distances,
//! refined by Gauss-Newton, aligned rigidly to the canonical points, and the
//! one with the lowest reprojection error wins.
//!
//! The returned transform maps canonical keypoints into the camera frame,
//! which is the part pose consumed by skinning.

use crate::geometry::{GeometryError, Mat3, PinholeCamera, RigidTransform, Vec2, Vec3};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use thiserror::Error;

pub const MIN_CORRESPONDENCES: usize = 6;

/// Default step (pixels) of the finite-difference pose Jacobian.
pub const DEFAULT_FD_STEP: f64 = 1e-3;

const GAUSS_NEWTON_ITERATIONS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnpError {
    #[error("need at least {MIN_CORRESPONDENCES} correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("{k3d} 3D points but {k2d} 2D points")]
    LengthMismatch { k3d: usize, k2d: usize },
    #[error("non-finite keypoint at row {0}")]
    NonFinite(usize),
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("no solution places the points in front of the camera")]
    BehindCamera,
    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Paired canonical 3D keypoints and their pixel observations.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointCorrespondence {
    pub k3d: Vec<Vec3>,
    pub k2d: Vec<Vec2>,
}

impl KeypointCorrespondence {
    pub fn new(k3d: Vec<Vec3>, k2d: Vec<Vec2>) -> Result<Self, PnpError> {
        if k3d.len() != k2d.len() {
            return Err(PnpError::LengthMismatch {
                k3d: k3d.len(),
                k2d: k2d.len(),
            });
        }
        if k3d.len() < MIN_CORRESPONDENCES {
            return Err(PnpError::TooFewPoints(k3d.len()));
        }
        for (i, (a, b)) in k3d.iter().zip(&k2d).enumerate() {
            if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
                return Err(PnpError::NonFinite(i));
            }
        }
        Ok(Self { k3d, k2d })
    }

    /// Observations synthesized by projecting `pose * k3d`.
    pub fn synthesize(
        k3d: Vec<Vec3>,
        pose: &RigidTransform,
        cam: &PinholeCamera,
    ) -> Result<Self, PnpError> {
        let cam_pts: Vec<Vec3> = k3d.iter().map(|p| pose.apply(p)).collect();
        let k2d = cam.project(&cam_pts)?;
        Self::new(k3d, k2d)
    }

    pub fn len(&self) -> usize {
        self.k3d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k3d.is_empty()
    }
}

/// Regular `n^3` grid spanning `[center - half, center + half]^3`.
pub fn keypoint_grid(center: Vec3, half: f64, n: usize) -> Vec<Vec3> {
    let mut pts = Vec::with_capacity(n * n * n);
    let step = |k: usize| {
        if n == 1 {
            0.0
        } else {
            -half + 2.0 * half * k as f64 / (n - 1) as f64
        }
    };
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                pts.push(center + Vec3::new(step(x), step(y), step(z)));
            }
        }
    }
    pts
}

/// Mean L1 pixel distance between observations and reprojected points.
pub fn reprojection_error(
    corr: &KeypointCorrespondence,
    pose: &RigidTransform,
    cam: &PinholeCamera,
) -> Result<f64, PnpError> {
    let mut total = 0.0;
    for (index, (p, obs)) in corr.k3d.iter().zip(&corr.k2d).enumerate() {
        let pc = pose.apply(p);
        let uv = cam
            .project_point(&pc)
            .map_err(|_| GeometryError::PointBehindCamera { index, z: pc.z })?;
        total += (uv.x - obs.x).abs() + (uv.y - obs.y).abs();
    }
    Ok(total / corr.len() as f64)
}

struct ControlFrame {
    /// World control points (centroid first).
    points: Vec<Vec3>,
    /// Barycentric coordinates of every input point, one row per point.
    alphas: Vec<Vec<f64>>,
}

fn control_frame(points: &[Vec3]) -> Result<ControlFrame, PnpError> {
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let mut cov = Mat3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let largest = eig.eigenvalues[order[0]];
    if !(largest > 0.0) {
        return Err(PnpError::DegenerateConfiguration("all 3D points coincide".into()));
    }
    if eig.eigenvalues[order[1]] < 1e-9 * largest {
        return Err(PnpError::DegenerateConfiguration("3D points are collinear".into()));
    }
    let planar = eig.eigenvalues[order[2]] < 1e-9 * largest;
    let axes = if planar { 2 } else { 3 };
    let mut ctrl = vec![centroid];
    let mut basis = Vec::with_capacity(axes);
    for &k in order.iter().take(axes) {
        let axis: Vec3 = eig.eigenvectors.column(k).into_owned() * eig.eigenvalues[k].sqrt();
        basis.push(axis);
        ctrl.push(centroid + axis);
    }
    // principal axes are orthogonal, so coefficients are plain projections
    let alphas = points
        .iter()
        .map(|p| {
            let d = p - centroid;
            let coeffs: Vec<f64> = basis.iter().map(|b| d.dot(b) / b.norm_squared()).collect();
            let mut row = Vec::with_capacity(axes + 1);
            row.push(1.0 - coeffs.iter().sum::<f64>());
            row.extend(coeffs);
            row
        })
        .collect();
    Ok(ControlFrame {
        points: ctrl,
        alphas,
    })
}

/// Squared pairwise distances of control points and the matching quadratic
/// forms of the null-space vectors.
struct DistanceSystem {
    /// `dots[pair][k][l] = d_k . d_l` with `d_k` the pair difference of null vector `k`.
    dots: Vec<Vec<Vec<f64>>>,
    rho: Vec<f64>,
}

impl DistanceSystem {
    fn new(ctrl: &[Vec3], null: &[DVector<f64>]) -> Self {
        let nc = ctrl.len();
        let mut dots = Vec::new();
        let mut rho = Vec::new();
        for i in 0..nc {
            for j in (i + 1)..nc {
                rho.push((ctrl[i] - ctrl[j]).norm_squared());
                let diffs: Vec<Vec3> = null
                    .iter()
                    .map(|v| {
                        Vec3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2])
                            - Vec3::new(v[3 * j], v[3 * j + 1], v[3 * j + 2])
                    })
                    .collect();
                let k = diffs.len();
                let mut m = vec![vec![0.0; k]; k];
                for a in 0..k {
                    for b in 0..k {
                        m[a][b] = diffs[a].dot(&diffs[b]);
                    }
                }
                dots.push(m);
            }
        }
        Self { dots, rho }
    }

    fn pairs(&self) -> usize {
        self.rho.len()
    }

    /// Linearized solve for `n_vec` betas via products `beta_k beta_l`.
    fn initial_betas(&self, n_vec: usize) -> Option<Vec<f64>> {
        match n_vec {
            1 => {
                let mut num = 0.0;
                let mut den = 0.0;
                for (m, &r) in self.dots.iter().zip(&self.rho) {
                    let d = m[0][0].sqrt();
                    num += d * r.sqrt();
                    den += d * d;
                }
                (den > 0.0).then(|| vec![num / den])
            }
            2 | 3 => {
                let products: Vec<(usize, usize)> = (0..n_vec)
                    .flat_map(|k| (k..n_vec).map(move |l| (k, l)))
                    .collect();
                if products.len() > self.pairs() {
                    return None;
                }
                let l = DMatrix::from_fn(self.pairs(), products.len(), |r, c| {
                    let (k, q) = products[c];
                    if k == q {
                        self.dots[r][k][k]
                    } else {
                        2.0 * self.dots[r][k][q]
                    }
                });
                let rho = DVector::from_column_slice(&self.rho);
                let sol = l.svd(true, true).solve(&rho, 1e-14).ok()?;
                let prod = |k: usize, q: usize| {
                    let idx = products.iter().position(|&p| p == (k.min(q), k.max(q))).unwrap();
                    sol[idx]
                };
                let b0 = prod(0, 0).abs().sqrt();
                let mut betas = vec![b0];
                for k in 1..n_vec {
                    let mag = prod(k, k).abs().sqrt();
                    let sign = if prod(0, k) * prod(0, 0).signum() >= 0.0 { 1.0 } else { -1.0 };
                    betas.push(sign * mag);
                }
                Some(betas)
            }
            _ => None,
        }
    }

    fn residuals(&self, betas: &[f64]) -> Vec<f64> {
        self.dots
            .iter()
            .zip(&self.rho)
            .map(|(m, r)| {
                let mut acc = 0.0;
                for (k, bk) in betas.iter().enumerate() {
                    for (l, bl) in betas.iter().enumerate() {
                        acc += bk * bl * m[k][l];
                    }
                }
                acc - r
            })
            .collect()
    }

    fn gauss_newton(&self, betas: &mut [f64]) {
        let k = betas.len();
        for _ in 0..GAUSS_NEWTON_ITERATIONS {
            let r = DVector::from_vec(self.residuals(betas));
            let j = DMatrix::from_fn(self.pairs(), k, |row, a| {
                2.0 * (0..k).map(|b| self.dots[row][a][b] * betas[b]).sum::<f64>()
            });
            let Ok(step) = j.svd(true, true).solve(&(-r), 1e-14) else { break };
            for (b, s) in betas.iter_mut().zip(step.iter()) {
                *b += s;
            }
            if step.norm() < 1e-15 * (1.0 + betas.iter().map(|b| b * b).sum::<f64>().sqrt()) {
                break;
            }
        }
    }
}

/// Closed-form rotation and translation minimizing `sum |R a_i + t - b_i|^2`.
pub fn rigid_align(a: &[Vec3], b: &[Vec3]) -> Result<RigidTransform, PnpError> {
    let n = a.len() as f64;
    let ca = a.iter().fold(Vec3::zeros(), |s, p| s + p) / n;
    let cb = b.iter().fold(Vec3::zeros(), |s, p| s + p) / n;
    let mut h = Mat3::zeros();
    for (pa, pb) in a.iter().zip(b) {
        h += (pb - cb) * (pa - ca).transpose();
    }
    let svd = h.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(PnpError::DegenerateConfiguration("alignment SVD failed".into()));
    };
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    // re-orthonormalize away rounding before the invariant check
    let r = nalgebra::Rotation3::from_matrix(&r).into_inner();
    Ok(RigidTransform::new(r, cb - r * ca)?)
}

/// Recovers the transform mapping `corr.k3d` into the camera frame.
pub fn solve_epnp(corr: &KeypointCorrespondence, cam: &PinholeCamera) -> Result<RigidTransform, PnpError> {
    cam.validate()?;
    if corr.len() < MIN_CORRESPONDENCES {
        return Err(PnpError::TooFewPoints(corr.len()));
    }
    let frame = control_frame(&corr.k3d)?;
    let nc = frame.points.len();
    let f = cam.focal();
    let pp = cam.principal_point();
    let n = corr.len();
    let mut m = DMatrix::<f64>::zeros(2 * n, 3 * nc);
    for (i, (alpha, uv)) in frame.alphas.iter().zip(&corr.k2d).enumerate() {
        let u = (uv.x - pp.x) / f;
        let v = (uv.y - pp.y) / f;
        for (j, &a) in alpha.iter().enumerate() {
            m[(2 * i, 3 * j)] = a;
            m[(2 * i, 3 * j + 2)] = -u * a;
            m[(2 * i + 1, 3 * j + 1)] = a;
            m[(2 * i + 1, 3 * j + 2)] = -v * a;
        }
    }
    let svd = m.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| PnpError::DegenerateConfiguration("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let n_null = if nc == 4 { 4 } else { 3 };
    let null: Vec<DVector<f64>> = order
        .iter()
        .take(n_null)
        .map(|&r| v_t.row(r).transpose())
        .collect();
    let system = DistanceSystem::new(&frame.points, &null);

    let mut best: Option<(f64, RigidTransform)> = None;
    let mut last_err = PnpError::DegenerateConfiguration("no candidate solution".into());
    let max_vectors = if nc == 4 { 3 } else { 2 };
    for n_vec in 1..=max_vectors {
        let Some(init) = system.initial_betas(n_vec) else { continue };
        // refine over as many null vectors as the distance constraints allow
        let refine_dim = if nc == 4 { 4 } else { n_vec };
        let mut betas = vec![0.0; refine_dim.max(n_vec)];
        betas[..n_vec].copy_from_slice(&init);
        system.gauss_newton(&mut betas);
        match candidate_pose(&frame, &null, &betas, corr) {
            Ok(pose) => {
                let err = reprojection_error(corr, &pose, cam).unwrap_or(f64::INFINITY);
                if best.as_ref().map_or(true, |(e, _)| err < *e) {
                    best = Some((err, pose));
                }
            }
            Err(e) => last_err = e,
        }
    }
    best.map(|(_, p)| p).ok_or(last_err)
}

fn candidate_pose(
    frame: &ControlFrame,
    null: &[DVector<f64>],
    betas: &[f64],
    corr: &KeypointCorrespondence,
) -> Result<RigidTransform, PnpError> {
    let nc = frame.points.len();
    let mut ctrl_cam = vec![Vec3::zeros(); nc];
    for (k, b) in betas.iter().enumerate() {
        for (j, c) in ctrl_cam.iter_mut().enumerate() {
            *c += *b * Vec3::new(null[k][3 * j], null[k][3 * j + 1], null[k][3 * j + 2]);
        }
    }
    let mut cam_pts: Vec<Vec3> = frame
        .alphas
        .iter()
        .map(|a| a.iter().zip(&ctrl_cam).fold(Vec3::zeros(), |s, (w, c)| s + *w * c))
        .collect();
    let mean_z = cam_pts.iter().map(|p| p.z).sum::<f64>() / cam_pts.len() as f64;
    if mean_z == 0.0 || !mean_z.is_finite() {
        return Err(PnpError::BehindCamera);
    }
    if mean_z < 0.0 {
        cam_pts.iter_mut().for_each(|p| *p = -*p);
    }
    rigid_align(&corr.k3d, &cam_pts)
}

/// Central-difference sensitivity of the recovered pose to every pixel
/// coordinate. Rows are `(axis-angle of R R0^T, t - t0)`; column `2i + a`
/// perturbs coordinate `a` of observation `i`.
pub fn pose_jacobian_fd(
    corr: &KeypointCorrespondence,
    cam: &PinholeCamera,
    eps: f64,
) -> Result<DMatrix<f64>, PnpError> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(PnpError::InvalidStep(eps));
    }
    let base = solve_epnp(corr, cam)?;
    let n = corr.len();
    let columns: Vec<Result<[f64; 6], PnpError>> = (0..2 * n)
        .into_par_iter()
        .map(|col| {
            let solve_shifted = |delta: f64| {
                let mut c = corr.clone();
                c.k2d[col / 2][col % 2] += delta;
                solve_epnp(&c, cam).map(|p| pose_delta(&base, &p))
            };
            let plus = solve_shifted(eps)?;
            let minus = solve_shifted(-eps)?;
            let mut out = [0.0; 6];
            for r in 0..6 {
                out[r] = (plus[r] - minus[r]) / (2.0 * eps);
            }
            Ok(out)
        })
        .collect();
    let mut jac = DMatrix::zeros(6, 2 * n);
    for (col, c) in columns.into_iter().enumerate() {
        let c = c?;
        for r in 0..6 {
            jac[(r, col)] = c[r];
        }
    }
    Ok(jac)
}

/// Six-vector offset of `pose` from `base`: rotation log of `R R0^T` and the
/// translation difference.
pub fn pose_delta(base: &RigidTransform, pose: &RigidTransform) -> [f64; 6] {
    let rel = RigidTransform::from_rotation(
        nalgebra::Rotation3::from_matrix_unchecked(pose.rotation() * base.rotation().transpose()),
        Vec3::zeros(),
    );
    let w = rel.rotation_log();
    let dt = pose.translation() - base.translation();
    [w.x, w.y, w.z, dt.x, dt.y, dt.z]
}

/// Geodesic angle between two rotations.
pub fn rotation_angle_between(a: &Mat3, b: &Mat3) -> f64 {
    let r = a.transpose() * b;
    ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
}
