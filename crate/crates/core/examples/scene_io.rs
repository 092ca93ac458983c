//! Saves a synthetic scene as a JSON manifest plus raw f32 grids, loads it
//! back and checks the round trip.
//!
//!     cargo run --release --example scene_io -- [out_dir]

use std::path::PathBuf;

use volanim::scene_io::{load_scene, read_depth, synth_scene, write_depth, PartLayout, SynthSpec};
use volanim::Image;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("volanim"));
    std::fs::create_dir_all(&out)?;

    let spec = SynthSpec { size: 24, n_parts: 3, blobs: 6, layout: PartLayout::Soft, ..SynthSpec::default() };
    let scene = synth_scene(17, &spec)?;
    let path = out.join("demo.scene.json");
    volanim::scene_io::save_scene(&scene, &path)?;
    let back = load_scene(&path)?;
    println!("scene round trip exact: {}", back == scene);

    let map = Image::from_fn(8, 4, 1, |x, y, _| (x as f32 * 0.3 - y as f32) as f64);
    let pfm = out.join("demo.pfm");
    write_depth(&map, &pfm)?;
    println!("PFM round trip exact: {}", read_depth(&pfm)? == map);
    println!("files in {}", out.display());
    Ok(())
}
