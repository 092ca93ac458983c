//! Scene persistence, image files, JSON interchange and synthetic scenes.
//!
//! A scene is a JSON manifest plus three sibling grid files of raw
//! little-endian `f32` values in `[z][y][x][c]` order. Grid values go
//! through `f32`, so round trips are exact for `f32`-representable volumes
//! (everything `synth_scene` produces).

mod images;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{PinholeCamera, RigidTransform, Vec2, Vec3};
use crate::optimizer::TargetView;
use crate::skinning::PartPoseSet;
use crate::volume::{CanonicalVolume, RenderCube, VoxelGrid};

pub use images::{
    decode_pfm, decode_ppm, encode_pfm, encode_ppm, read_depth, read_image, to_byte, write_depth, write_image,
};
pub use synth::{synth_scene, PartLayout, SynthSpec, ONE_HOT_LOGIT};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("grid file {file} holds {got} bytes, expected {expected}")]
    GridSizeMismatch { file: String, expected: usize, got: usize },
    #[error("non-finite pixel value")]
    NonFinite,
    #[error("image format: {0}")]
    Format(String),
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> SceneError {
    SceneError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A canonical volume with its rendering setup, shared canonical keypoints
/// and an optional ground-truth pose track.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub volume: CanonicalVolume,
    pub cube: RenderCube,
    pub camera: PinholeCamera,
    /// One keypoint set per part, world units.
    pub keypoints: Vec<Vec<Vec3>>,
    pub pose_track: Option<Vec<PartPoseSet>>,
}

impl Scene {
    pub fn n_parts(&self) -> usize {
        self.volume.n_parts()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::InvalidScene(m));
        if self.keypoints.len() != self.n_parts() {
            return bad(format!("{} keypoint sets for {} parts", self.keypoints.len(), self.n_parts()));
        }
        for (p, set) in self.keypoints.iter().enumerate() {
            if let Some(k) = set.iter().position(|q| !self.cube.contains(q)) {
                return bad(format!("keypoint {k} of part {p} lies outside the rendering cube"));
            }
        }
        if let Some(track) = &self.pose_track {
            if let Some(f) = track.iter().position(|t| t.len() != self.n_parts()) {
                return bad(format!("pose track frame {f} has the wrong part count"));
            }
        }
        self.cube
            .validate()
            .map_err(|e| SceneError::InvalidScene(e.to_string()))?;
        self.camera
            .validate()
            .map_err(|e| SceneError::InvalidScene(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GridFiles {
    density: String,
    rgb: String,
    lbs_logits: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    size: usize,
    n_parts: usize,
    cube: RenderCube,
    camera: PinholeCamera,
    bg_color: [f64; 3],
    bg_density: f64,
    grids: GridFiles,
    keypoints: Vec<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pose_track: Option<Vec<Vec<[[f64; 4]; 3]>>>,
}

/// `dir/name.scene.json` -> `name`.
fn scene_stem(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let name = name.strip_suffix(".json").unwrap_or(&name);
    let name = name.strip_suffix(".scene").unwrap_or(name);
    if name.is_empty() {
        "scene".to_string()
    } else {
        name.to_string()
    }
}

fn grid_bytes(grid: &VoxelGrid) -> Vec<u8> {
    grid.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

pub fn poses_to_rows(poses: &PartPoseSet) -> Vec<[[f64; 4]; 3]> {
    poses.to_rows()
}

pub fn poses_from_rows(rows: &[[[f64; 4]; 3]]) -> Result<PartPoseSet, SceneError> {
    let poses = rows
        .iter()
        .map(RigidTransform::from_rows)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| SceneError::MalformedManifest(e.to_string()))?;
    Ok(PartPoseSet::new(poses))
}

pub fn save_scene(scene: &Scene, path: &Path) -> Result<(), SceneError> {
    scene.validate()?;
    let stem = scene_stem(path);
    let dir = path.parent().unwrap_or(Path::new(""));
    let grids = GridFiles {
        density: format!("{stem}.density.f32"),
        rgb: format!("{stem}.rgb.f32"),
        lbs_logits: format!("{stem}.lbs.f32"),
    };
    let vol = &scene.volume;
    for (name, grid) in [(&grids.density, &vol.density), (&grids.rgb, &vol.rgb), (&grids.lbs_logits, &vol.lbs_logits)] {
        let p = dir.join(name);
        fs::write(&p, grid_bytes(grid)).map_err(|e| io_err(&p, e))?;
    }
    let manifest = Manifest {
        size: vol.size(),
        n_parts: vol.n_parts(),
        cube: scene.cube,
        camera: scene.camera,
        bg_color: vol.bg_color,
        bg_density: vol.bg_density,
        grids,
        keypoints: scene
            .keypoints
            .iter()
            .map(|set| set.iter().map(|p| [p.x, p.y, p.z]).collect())
            .collect(),
        pose_track: scene.pose_track.as_ref().map(|t| t.iter().map(poses_to_rows).collect()),
    };
    write_json(path, &manifest)
}

fn read_grid(dir: &Path, name: &str, size: usize, channels: usize) -> Result<VoxelGrid, SceneError> {
    let p = dir.join(name);
    let bytes = fs::read(&p).map_err(|e| io_err(&p, e))?;
    let expected = size * size * size * channels * 4;
    if bytes.len() != expected {
        return Err(SceneError::GridSizeMismatch {
            file: name.to_string(),
            expected,
            got: bytes.len(),
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    VoxelGrid::from_data(size, channels, data).map_err(|e| SceneError::MalformedManifest(e.to_string()))
}

pub fn load_scene(path: &Path) -> Result<Scene, SceneError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| SceneError::MalformedManifest(e.to_string()))?;
    if m.size == 0 || m.n_parts == 0 {
        return Err(SceneError::MalformedManifest("size and n_parts must be >= 1".into()));
    }
    let dir = path.parent().unwrap_or(Path::new(""));
    let density = read_grid(dir, &m.grids.density, m.size, 1)?;
    let rgb = read_grid(dir, &m.grids.rgb, m.size, 3)?;
    let lbs = read_grid(dir, &m.grids.lbs_logits, m.size, m.n_parts)?;
    let volume = CanonicalVolume::new(density, rgb, lbs, m.bg_color, m.bg_density)
        .map_err(|e| SceneError::MalformedManifest(e.to_string()))?;
    let pose_track = match m.pose_track {
        Some(t) => Some(t.iter().map(|f| poses_from_rows(f)).collect::<Result<Vec<_>, _>>()?),
        None => None,
    };
    let scene = Scene {
        volume,
        cube: m.cube,
        camera: m.camera,
        keypoints: m
            .keypoints
            .iter()
            .map(|set| set.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect())
            .collect(),
        pose_track,
    };
    scene
        .validate()
        .map_err(|e| SceneError::MalformedManifest(e.to_string()))?;
    Ok(scene)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, SceneError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| SceneError::MalformedManifest(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SceneError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| SceneError::MalformedManifest(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

/// Per-frame part poses, each a row-major 3x4 matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackFile {
    pub frames: Vec<Vec<[[f64; 4]; 3]>>,
}

impl TrackFile {
    pub fn from_track(track: &[PartPoseSet]) -> Self {
        Self {
            frames: track.iter().map(poses_to_rows).collect(),
        }
    }

    pub fn to_track(&self) -> Result<Vec<PartPoseSet>, SceneError> {
        self.frames.iter().map(|f| poses_from_rows(f)).collect()
    }
}

/// Detected 2D keypoints, one list per part, in pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoints2dFile {
    pub parts: Vec<Vec<[f64; 2]>>,
}

impl Keypoints2dFile {
    pub fn from_points(parts: &[Vec<Vec2>]) -> Self {
        Self {
            parts: parts.iter().map(|s| s.iter().map(|p| [p.x, p.y]).collect()).collect(),
        }
    }

    pub fn to_points(&self) -> Vec<Vec<Vec2>> {
        self.parts
            .iter()
            .map(|s| s.iter().map(|p| Vec2::new(p[0], p[1])).collect())
            .collect()
    }
}

/// Entry of `targets.json`: file names relative to the targets directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEntry {
    pub image: String,
    pub poses: Vec<[[f64; 4]; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetsFile {
    pub views: Vec<TargetEntry>,
}

pub const TARGETS_FILE: &str = "targets.json";

/// Writes `targets.json` plus one PPM per view (and a PFM per mask).
pub fn save_targets(dir: &Path, views: &[TargetView]) -> Result<(), SceneError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut entries = Vec::with_capacity(views.len());
    for (i, v) in views.iter().enumerate() {
        let image = format!("view{i}.ppm");
        write_image(&v.image, &dir.join(&image))?;
        let mask = match &v.mask {
            Some(m) => {
                let name = format!("view{i}.mask.pfm");
                write_depth(m, &dir.join(&name))?;
                Some(name)
            }
            None => None,
        };
        entries.push(TargetEntry {
            image,
            poses: v.poses.to_rows(),
            mask,
        });
    }
    write_json(&dir.join(TARGETS_FILE), &TargetsFile { views: entries })
}

pub fn load_targets(dir: &Path) -> Result<Vec<TargetView>, SceneError> {
    let file: TargetsFile = read_json(&dir.join(TARGETS_FILE))?;
    file.views
        .iter()
        .map(|e| {
            let mut view = TargetView::new(read_image(&dir.join(&e.image))?, poses_from_rows(&e.poses)?);
            if let Some(m) = &e.mask {
                view.mask = Some(read_depth(&dir.join(m))?);
            }
            Ok(view)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;

    fn sample_scene() -> Scene {
        synth_scene(
            3,
            &SynthSpec {
                size: 8,
                ..SynthSpec::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn scene_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.scene.json");
        let scene = sample_scene();
        save_scene(&scene, &path).unwrap();
        assert!(dir.path().join("toy.density.f32").exists());
        assert_eq!(load_scene(&path).unwrap(), scene);
    }

    #[test]
    fn grid_size_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.scene.json");
        save_scene(&sample_scene(), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap().replace("\"size\": 8", "\"size\": 64");
        fs::write(&path, text).unwrap();
        assert!(matches!(load_scene(&path), Err(SceneError::GridSizeMismatch { .. })));
    }

    #[test]
    fn missing_grid_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.scene.json");
        save_scene(&sample_scene(), &path).unwrap();
        fs::remove_file(dir.path().join("toy.rgb.f32")).unwrap();
        let err = load_scene(&path).unwrap_err();
        assert!(matches!(err, SceneError::Io { .. }));
        assert!(err.to_string().contains("toy.rgb.f32"));
    }

    #[test]
    fn malformed_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.scene.json");
        fs::write(&path, "{\"size\": 4}").unwrap();
        assert!(matches!(load_scene(&path), Err(SceneError::MalformedManifest(_))));
    }

    #[test]
    fn targets_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(4, 4, 3, |x, y, c| ((x + y + c) % 4) as f64 / 3.0);
        let mask = Image::from_fn(4, 4, 1, |x, _, _| (x % 2) as f64);
        let view = TargetView::new(img.clone(), PartPoseSet::identity(2)).with_mask(mask.clone());
        save_targets(dir.path(), &[view]).unwrap();
        let back = load_targets(dir.path()).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].image, img);
        assert_eq!(back[0].mask.as_ref().unwrap(), &mask);
        assert_eq!(back[0].poses, PartPoseSet::identity(2));
    }

    #[test]
    fn track_file_round_trip() {
        let scene = sample_scene();
        let track = scene.pose_track.unwrap();
        let file = TrackFile::from_track(&track);
        let text = serde_json::to_string(&file).unwrap();
        let back: TrackFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_track().unwrap(), track);
    }
}
