use std::path::Path;
use std::process::{Command, Output};

use volanim::optimizer::TargetView;
use volanim::render::{render, RenderConfig};
use volanim::scene_io::{load_scene, read_json, save_targets, write_json, Keypoints2dFile, TrackFile};
use volanim::skinning::PosesFile;

fn volanim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_volanim"))
        .args(args)
        .output()
        .expect("spawn volanim")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn synth(dir: &Path) -> std::path::PathBuf {
    let scene = dir.join("scene.json");
    let out = volanim(&["synth", "--seed", "3", "--size", "8", "--image-size", "24", "--frames", "2", "--out", s(&scene)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    scene
}

#[test]
fn render_then_compare_depth_with_itself() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path());
    let prefix = dir.path().join("view");
    let out = volanim(&["render", "--scene", s(&scene), "--out-prefix", s(&prefix), "--samples", "32"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for suffix in ["rgb.ppm", "depth.pfm", "occ.pfm", "parts.0.pfm", "parts.1.pfm"] {
        assert!(dir.path().join(format!("view.{suffix}")).exists(), "missing {suffix}");
    }

    let depth = dir.path().join("view.depth.pfm");
    let out = volanim(&["metrics", "--kind", "pearson", "--pred", s(&depth), "--ref", s(&depth)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("metric,value,n"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "pearson");
    assert!((row[1].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(row[2], "576");
}

#[test]
fn estimate_pose_recovers_projected_keypoints() {
    let dir = tempfile::tempdir().unwrap();
    let scene_path = synth(dir.path());
    let scene = load_scene(&scene_path).unwrap();
    let truth = &scene.pose_track.as_ref().unwrap()[1];
    let parts: Vec<_> = scene
        .keypoints
        .iter()
        .zip(&truth.poses)
        .map(|(k, p)| scene.camera.project(&k.iter().map(|x| p.apply(x)).collect::<Vec<_>>()).unwrap())
        .collect();
    let kp = dir.path().join("kp.json");
    write_json(&kp, &Keypoints2dFile::from_points(&parts)).unwrap();
    let poses = dir.path().join("poses.json");
    let out = volanim(&["estimate-pose", "--scene", s(&scene_path), "--keypoints", s(&kp), "--out", s(&poses)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let errors: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(errors.len(), 2);
    assert!(errors.iter().all(|&e| e < 1e-6), "{errors:?}");

    let est: PosesFile = read_json(&poses).unwrap();
    for (rows, pose) in est.poses.iter().zip(&truth.poses) {
        let want = pose.to_rows();
        for (a, b) in rows.iter().flatten().zip(want.iter().flatten()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn animate_writes_one_set_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth(dir.path());
    let track = dir.path().join("track.json");
    let frames = load_scene(&scene).unwrap().pose_track.unwrap();
    write_json(&track, &TrackFile::from_track(&frames)).unwrap();
    let prefix = dir.path().join("anim");
    let out = volanim(&[
        "animate",
        "--scene",
        s(&scene),
        "--driving-poses",
        s(&track),
        "--novel-yaw",
        "-0.3",
        "--filter-distances",
        "--samples",
        "16",
        "--out-prefix",
        s(&prefix),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("anim.0000.rgb.ppm").exists());
    assert!(dir.path().join("anim.0001.depth.pfm").exists());
    assert!(!dir.path().join("anim.0002.rgb.ppm").exists());
}

#[test]
fn invert_runs_and_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let scene_path = synth(dir.path());
    let scene = load_scene(&scene_path).unwrap();
    let cfg = RenderConfig { n_samples: 16, ..RenderConfig::default() };
    let views: Vec<TargetView> = scene
        .pose_track
        .as_ref()
        .unwrap()
        .iter()
        .map(|p| {
            let out = render(&scene.volume, p, &scene.camera, &scene.cube, &cfg).unwrap();
            TargetView::new(out.rgb, p.clone())
        })
        .collect();
    let targets = dir.path().join("targets");
    save_targets(&targets, &views).unwrap();
    let fitted = dir.path().join("fitted.json");
    let trace = dir.path().join("trace.csv");
    let out = volanim(&[
        "--threads",
        "2",
        "invert",
        "--targets",
        s(&targets),
        "--init",
        s(&scene_path),
        "--steps",
        "3",
        "--samples",
        "16",
        "--out",
        s(&fitted),
        "--trace",
        s(&trace),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(load_scene(&fitted).unwrap().volume.size(), 8);
    let csv = std::fs::read_to_string(&trace).unwrap();
    assert!(csv.starts_with("step,total,rec,bkg,eq,proj,init,geo\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn metrics_accept_json_arrays() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    write_json(&a, &vec![0.5, 1.0, -0.5]).unwrap();
    write_json(&b, &vec![0.0, 1.0, 0.5]).unwrap();
    let out = volanim(&["metrics", "--kind", "asc", "--pred", s(&a), "--ref", s(&b)]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "metric,value,n\nasc,0.5,3\n");
}

#[test]
fn usage_and_runtime_errors_have_distinct_codes() {
    assert_eq!(volanim(&["render", "--bogus"]).status.code(), Some(1));
    assert_eq!(volanim(&["--help"]).status.code(), Some(0));
    let out = volanim(&["render", "--scene", "/nonexistent/scene.json", "--out-prefix", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scene.json"));
}
