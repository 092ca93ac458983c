use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use volanim::geometry::{invert_transform, rot_x, rot_y, rot_z, PinholeCamera, RigidTransform, Vec3};
use volanim::pnp::{keypoint_grid, solve_epnp, KeypointCorrespondence};
use volanim::render::{render, RenderConfig};
use volanim::skinning::{inverse_lbs_weights, PartPoseSet};
use volanim::volume::{CanonicalVolume, RenderCube, VoxelGrid};

fn pose_strategy() -> impl Strategy<Value = RigidTransform> {
    let a = -1.0f64..1.0;
    (a.clone(), a.clone(), a, -0.5f64..0.5, -0.5f64..0.5, 9.8f64..11.2).prop_map(|(y, p, r, tx, ty, tz)| {
        RigidTransform::new(rot_y(y) * rot_x(p) * rot_z(r), Vec3::new(tx, ty, tz)).unwrap()
    })
}

fn random_volume(size: usize, n_parts: usize, seed: u64) -> CanonicalVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next = move || rng.random::<f64>();
    let mut vol = CanonicalVolume::empty(size, n_parts);
    vol.density = VoxelGrid::from_fn(size, 1, |_, _, _, _| 8.0 * next());
    vol.rgb = VoxelGrid::from_fn(size, 3, |_, _, _, _| next());
    vol.lbs_logits = VoxelGrid::from_fn(size, n_parts, |_, _, _, _| 4.0 * next() - 2.0);
    vol
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn epnp_ignores_point_order(pose in pose_strategy(), shift in 0usize..125) {
        let cam = PinholeCamera::square(128);
        let grid = keypoint_grid(Vec3::zeros(), 0.25, 5);
        let corr = KeypointCorrespondence::synthesize(grid, &pose, &cam).unwrap();
        let mut k3d = corr.k3d.clone();
        let mut k2d = corr.k2d.clone();
        k3d.rotate_left(shift);
        k2d.rotate_left(shift);
        k3d.reverse();
        k2d.reverse();
        let a = solve_epnp(&corr, &cam).unwrap();
        let b = solve_epnp(&KeypointCorrespondence::new(k3d, k2d).unwrap(), &cam).unwrap();
        prop_assert!((a.rotation() - b.rotation()).abs().max() < 1e-8);
        prop_assert!((a.translation() - b.translation()).norm() < 1e-8);
    }

    #[test]
    fn double_inverse_is_identity(pose in pose_strategy()) {
        let back = invert_transform(&invert_transform(&pose));
        prop_assert!((back.rotation() - pose.rotation()).abs().max() < 1e-12);
        prop_assert!((back.translation() - pose.translation()).norm() < 1e-12);
    }

    #[test]
    fn ray_weights_and_transmittance_sum_to_one(seed in any::<u64>(), yaw in -0.5f64..0.5) {
        let vol = random_volume(6, 2, seed);
        let cube = RenderCube::default();
        let poses = PartPoseSet::new(vec![
            RigidTransform::about_point(rot_y(yaw), cube.center()),
            RigidTransform::from_translation(Vec3::new(0.05, 0.0, 0.0)),
        ]);
        let cfg = RenderConfig { n_samples: 24, jitter: true, density_noise_sigma: 0.5, seed, ..RenderConfig::default() };
        let out = render(&vol, &poses, &PinholeCamera::square(12), &cube, &cfg).unwrap();
        for (o, t) in out.occupancy.data.iter().zip(&out.transmittance.data) {
            prop_assert!((o + t - 1.0).abs() < 1e-9);
            prop_assert!(*o >= 0.0 && *t >= 0.0);
        }
        prop_assert!(out.rgb.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn inverse_weights_form_a_simplex(
        seed in any::<u64>(),
        x in -0.9f64..0.9,
        y in -0.9f64..0.9,
        z in 9.6f64..11.4,
    ) {
        let vol = random_volume(6, 3, seed);
        let cube = RenderCube::default();
        let poses = PartPoseSet::new(vec![
            RigidTransform::identity(),
            RigidTransform::from_translation(Vec3::new(0.1, 0.0, 0.0)),
            RigidTransform::about_point(rot_x(0.2), cube.center()),
        ]);
        if let Some(w) = inverse_lbs_weights(&Vec3::new(x, y, z), &poses, &vol, &cube) {
            prop_assert_eq!(w.len(), 3);
            prop_assert!(w.iter().all(|&v| v >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
