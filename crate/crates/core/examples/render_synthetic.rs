//! Synthesizes a two-part scene, renders one frame of its pose track and
//! writes color, depth, occupancy and part maps.
//!
//!     cargo run --release --example render_synthetic -- [out_dir]

use std::path::PathBuf;

use volanim::render::{render, RenderConfig};
use volanim::scene_io::{synth_scene, write_depth, write_image, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("volanim"));
    std::fs::create_dir_all(&out)?;

    let scene = synth_scene(42, &SynthSpec::default())?;
    let poses = &scene.pose_track.as_ref().expect("synthetic scenes carry a track")[2];
    let frame = render(&scene.volume, poses, &scene.camera, &scene.cube, &RenderConfig::default())?;

    write_image(&frame.rgb, &out.join("frame.rgb.ppm"))?;
    write_depth(&frame.depth, &out.join("frame.depth.pfm"))?;
    write_depth(&frame.occupancy, &out.join("frame.occ.pfm"))?;
    for p in 0..scene.n_parts() {
        write_depth(&frame.parts.channel(p), &out.join(format!("frame.parts.{p}.pfm")))?;
    }

    let covered = frame.occupancy.data.iter().filter(|&&o| o > 0.5).count();
    println!(
        "{}x{} frame, {} of {} pixels covered, wrote {}",
        scene.camera.width,
        scene.camera.height,
        covered,
        frame.occupancy.data.len(),
        out.display()
    );
    Ok(())
}
