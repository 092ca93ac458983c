//! Deforms canonical points of a two-part scene with linear blend skinning
//! and maps them back with the inverse weights.
//!
//!     cargo run --release --example skinning_roundtrip

use volanim::geometry::{rot_y, RigidTransform, Vec3};
use volanim::scene_io::{synth_scene, SynthSpec};
use volanim::skinning::{deform_to_canonical, lbs_forward, PartPoseSet};
use volanim::volume::lbs_weights_canonical;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = synth_scene(5, &SynthSpec { blobs: 2, ..SynthSpec::default() })?;
    let cube = scene.cube;
    // part 0 slides left, part 1 turns about its own center and slides right
    let anchor = scene.keypoints[1].iter().sum::<Vec3>() / scene.keypoints[1].len() as f64;
    let poses = PartPoseSet::new(vec![
        RigidTransform::from_translation(Vec3::new(-0.12, 0.0, 0.0)),
        RigidTransform::from_translation(Vec3::new(0.12, 0.0, 0.0)).compose(&RigidTransform::about_point(rot_y(0.1), anchor)),
    ]);

    let (mut worst, mut tested, mut empty, mut seam) = (0.0f64, 0, 0, 0);
    let n = 10;
    for k in 0..n * n * n {
        let t = |i: usize| -0.8 + 1.6 * i as f64 / (n - 1) as f64;
        let tex = Vec3::new(t(k % n), t((k / n) % n), t(k / (n * n)));
        let x_c = cube.texture_to_world(&tex);
        let w = lbs_weights_canonical(&scene.volume, &tex);
        // voxels on the seam between parts blend both transforms
        if w.iter().all(|&v| v < 1.0 - 1e-12) {
            seam += 1;
            continue;
        }
        let x_d = lbs_forward(&x_c, &w, &poses);
        match deform_to_canonical(&x_d, &poses, &scene.volume, &cube) {
            Some(back) => {
                worst = worst.max((back - x_c).norm());
                tested += 1;
            }
            None => empty += 1,
        }
    }
    println!("{tested} probes mapped back, {empty} landed in empty space, {seam} on the seam, worst error {worst:.2e}");
    Ok(())
}
