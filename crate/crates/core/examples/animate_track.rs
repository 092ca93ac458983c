//! Renders a synthetic pose track from a novel viewpoint, with per-part
//! distance filtering, and writes one PPM per frame.
//!
//!     cargo run --release --example animate_track -- [out_dir]

use std::path::PathBuf;

use volanim::geometry::rot_y;
use volanim::metrics::{filter_part_distances, PoseSequence};
use volanim::render::{render, RenderConfig};
use volanim::scene_io::{synth_scene, write_image, SynthSpec};
use volanim::RigidTransform;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("volanim"));
    std::fs::create_dir_all(&out)?;

    let scene = synth_scene(21, &SynthSpec { frames: 6, ..SynthSpec::default() })?;
    let track = PoseSequence::new(scene.pose_track.clone().expect("synthetic scenes carry a track"))?;
    let filtered = filter_part_distances(&track, &scene.cube)?;
    let turn = RigidTransform::about_point(rot_y(0.35), scene.cube.center());
    let cfg = RenderConfig { n_samples: 96, ..RenderConfig::default() };

    for (f, (raw, poses)) in track.frames().iter().zip(filtered.frames()).enumerate() {
        let frame = render(&scene.volume, &poses.premultiply(&turn), &scene.camera, &scene.cube, &cfg)?;
        let path = out.join(format!("anim.{f:04}.ppm"));
        write_image(&frame.rgb, &path)?;
        let dist = |set: &volanim::PartPoseSet| {
            set.poses
                .iter()
                .map(|p| format!("{:.4}", p.apply(&scene.cube.center()).norm()))
                .collect::<Vec<_>>()
                .join(", ")
        };
        println!("frame {f}: part distances [{}] -> [{}], {}", dist(raw), dist(poses), path.display());
    }
    Ok(())
}
