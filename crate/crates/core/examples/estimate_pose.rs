//! Recovers part poses from noisy keypoint projections with EPnP and
//! reports the error against the generating pose.
//!
//!     cargo run --release --example estimate_pose

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use volanim::pnp::{reprojection_error, rotation_angle_between, solve_epnp, KeypointCorrespondence};
use volanim::scene_io::{synth_scene, SynthSpec};
use volanim::Vec2;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = synth_scene(3, &SynthSpec::default())?;
    let track = scene.pose_track.as_ref().expect("synthetic scenes carry a track");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noise = Normal::new(0.0, 0.5)?;

    println!("frame,part,rot_err_rad,trans_err,reproj_px");
    for (f, frame) in track.iter().enumerate() {
        for (p, truth) in frame.poses.iter().enumerate() {
            let clean = KeypointCorrespondence::synthesize(scene.keypoints[p].clone(), truth, &scene.camera)?;
            let noisy: Vec<Vec2> = clean
                .k2d
                .iter()
                .map(|q| q + Vec2::new(noise.sample(&mut rng), noise.sample(&mut rng)))
                .collect();
            let corr = KeypointCorrespondence::new(clean.k3d.clone(), noisy)?;
            let est = solve_epnp(&corr, &scene.camera)?;
            println!(
                "{f},{p},{:.2e},{:.2e},{:.3}",
                rotation_angle_between(est.rotation(), truth.rotation()),
                (est.translation() - truth.translation()).norm(),
                reprojection_error(&corr, &est, &scene.camera)?
            );
        }
    }
    Ok(())
}
