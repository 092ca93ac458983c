//! Evaluation toolkit on a rendered depth map: Pearson correlation against a
//! distorted estimate, closed-form depth alignment, keypoint lifting for a
//! novel view, and yaw/code consistency scores.
//!
//!     cargo run --release --example novel_view_metrics

use volanim::metrics::{apc, asc, ayd, depth_affine_alignment, depth_pearson, lift_keypoints_novel_view, CodeVector};
use volanim::optimizer::apply_affine;
use volanim::render::{render, RenderConfig};
use volanim::scene_io::{synth_scene, SynthSpec};
use volanim::{Image, PartPoseSet, Vec2};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = synth_scene(9, &SynthSpec { n_parts: 1, ..SynthSpec::default() })?;
    let out = render(&scene.volume, &PartPoseSet::identity(1), &scene.camera, &scene.cube, &RenderConfig::default())?;
    let mask = Image::from_fn(out.occupancy.width, out.occupancy.height, 1, |x, y, _| {
        (out.occupancy.get(x, y, 0) > 0.9) as u8 as f64
    });

    // an "off-the-shelf" estimate: rescaled depth with a small wobble
    let estimate = Image::from_fn(out.depth.width, out.depth.height, 1, |x, y, _| {
        0.3 * out.depth.get(x, y, 0) + 0.01 * ((x * 13 + y * 7) % 5) as f64
    });
    println!("pearson(depth, estimate) = {:.4}", depth_pearson(&out.depth, &estimate, Some(&mask))?);

    let fg: Vec<usize> = (0..mask.data.len()).filter(|&i| mask.data[i] > 0.5).collect();
    let d: Vec<f64> = fg.iter().map(|&i| out.depth.data[i]).collect();
    let dh: Vec<f64> = fg.iter().map(|&i| 0.5 * out.depth.data[i] - 2.0).collect();
    let (scale, shift) = depth_affine_alignment(&d, &dh)?;
    println!("depth alignment: scale {scale:.6}, shift {shift:.6}");

    let centers = [Vec2::new(24.5, 30.5), Vec2::new(36.5, 34.5)];
    let maps = lift_keypoints_novel_view(&centers, &out.depth, &scene.camera, &scene.cube, 0.3)?;
    for (c, a) in centers.iter().zip(&maps) {
        let moved = apply_affine(a, c);
        println!("keypoint ({:.1}, {:.1}) -> ({:.2}, {:.2})", c.x, c.y, moved.x, moved.y);
    }

    println!("AYD = {:.3}", ayd(0.52, 0.2, 0.3));
    let shape_a = CodeVector::new(vec![0.1, 0.4, -0.3, 0.8])?;
    let shape_b = CodeVector::new(vec![0.0, 0.5, -0.2, 0.9])?;
    println!("ASC = {:.3}, APC = {:.3}", asc(&shape_a, &shape_b)?, apc(&shape_b, &shape_a)?);
    Ok(())
}
