//! Fits a randomly initialized 16^3 volume to five rendered views of a
//! synthetic object and checks a held-out view.
//!
//!     cargo run --release --example invert_scene -- [steps]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use volanim::geometry::rot_y;
use volanim::image::psnr;
use volanim::optimizer::{invert_scene_with, InversionConfig, TargetView};
use volanim::render::{make_rays, render_color_occupancy, RenderConfig};
use volanim::scene_io::{synth_scene, SynthSpec};
use volanim::{CanonicalVolume, PartPoseSet, PinholeCamera, RigidTransform, VoxelGrid};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(400);
    let size = 32;
    let truth = synth_scene(7, &SynthSpec { n_parts: 1, image_size: size, ..SynthSpec::default() })?;
    let cam = PinholeCamera::square(size);
    let cube = truth.cube;
    let render_cfg = RenderConfig { n_samples: 64, ..RenderConfig::default() };
    let rays = make_rays(&cam);
    let pose = |yaw: f64| PartPoseSet::new(vec![RigidTransform::about_point(rot_y(yaw), cube.center())]);
    let view = |vol: &CanonicalVolume, yaw: f64| {
        render_color_occupancy(vol, &pose(yaw), &rays, size, size, &cube, &render_cfg).map(|(rgb, _)| rgb)
    };

    let mut targets = Vec::new();
    for yaw in [-0.4, -0.2, 0.0, 0.2, 0.4] {
        targets.push(TargetView::new(view(&truth.volume, yaw)?, pose(yaw)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut init = CanonicalVolume::empty(16, 1);
    init.density = VoxelGrid::from_fn(16, 1, |_, _, _, _| rng.random_range(0.0..1.0));
    init.rgb = VoxelGrid::from_fn(16, 3, |_, _, _, _| rng.random_range(0.3..0.7));
    init.bg_color = truth.volume.bg_color;

    let cfg = InversionConfig {
        steps,
        lr: 5e-2,
        lr_decay_every: (steps / 4).max(1),
        exploration_until: steps / 2,
        render: render_cfg,
        ..InversionConfig::default()
    };
    let fitted = invert_scene_with(&targets, &init, &cam, &cube, &cfg, None, |r| {
        if r.step % 50 == 0 {
            println!("step {:5}  loss {:.5}", r.step, r.loss.total);
        }
    })?;

    let held = view(&truth.volume, 0.3)?;
    println!("held-out PSNR: init {:.2} dB, fitted {:.2} dB", psnr(&view(&init, 0.3)?, &held), psnr(&view(&fitted.volume, 0.3)?, &held));
    Ok(())
}
