//! Browser bindings for the interactive demo page. Each operation takes and
//! returns JSON strings so the page needs no generated TypeScript glue.

use gravicap::ballistics::{
    gravity_from_angles, recover_trajectory, simulate_track, BallisticParams, DofMode,
    RecoverySetup, GRAVITY_MAGNITUDE,
};
use gravicap::camera::CameraIntrinsics;
use gravicap::energy::EnergyOptions;
use gravicap::episodes::{detect_switches, DEFAULT_VELOCITY_THRESHOLD, DEFAULT_WINDOW};
use gravicap::metrics::compute_metrics;
use gravicap::skeleton::BonePriorTable;
use gravicap::solver::{solve_scene_with_options, SolveConfig};
use gravicap::synth::{generate, NoiseSpec, SceneSpec};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

fn err_json(message: impl std::fmt::Display) -> String {
    serde_json::json!({ "error": message.to_string() }).to_string()
}

// ---------------------------------------------------------------------------
// Toss lab: simulate one ballistic episode and recover it.
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct TossParams {
    #[serde(default = "default_focal")]
    focal: f64,
    #[serde(default)]
    tilt_alpha: f64,
    #[serde(default)]
    tilt_beta: f64,
    #[serde(default = "default_depth")]
    depth: f64,
    #[serde(default = "default_frames")]
    frames: usize,
    #[serde(default)]
    noise_px: f64,
    #[serde(default = "default_mode")]
    mode: String,
    #[serde(default)]
    seed: u64,
}

fn default_focal() -> f64 {
    1200.0
}
fn default_depth() -> f64 {
    4.0
}
fn default_frames() -> usize {
    30
}
fn default_mode() -> String {
    "9dof".into()
}

#[derive(Serialize)]
struct TossResult {
    observed: Vec<[f64; 2]>,
    reprojected: Vec<[f64; 2]>,
    true3d: Vec<[f64; 3]>,
    recovered3d: Vec<[f64; 3]>,
    gravity_true: [f64; 3],
    gravity_recovered: [f64; 3],
    gravity_cosine: f64,
    focal_recovered: Option<f64>,
    position_error_mm: f64,
    fz_ambiguity: bool,
    iterations: usize,
}

/// Simulates a toss, degrades it with pixel noise and recovers the ballistic
/// parameters in the requested mode.
#[wasm_bindgen]
pub fn toss_lab(params_json: &str) -> String {
    let params: TossParams = match serde_json::from_str(params_json) {
        Ok(p) => p,
        Err(e) => return err_json(e),
    };
    let Some(mode) = DofMode::parse(&params.mode) else {
        return err_json(format!("unknown mode '{}'", params.mode));
    };
    let k = match CameraIntrinsics::new(params.focal, 600.0, 438.5) {
        Ok(k) => k.with_image_size(1200.0, 877.0),
        Err(e) => return err_json(e),
    };
    let gravity = gravity_from_angles(params.tilt_alpha, params.tilt_beta);
    let frames = params.frames.clamp(6, 120);
    let duration = frames as f64 / 30.0;
    // toss from lower-left to lower-right of the view, apex mid-flight
    let b0 = Vector3::new(-0.8, 0.5, params.depth.max(1.0));
    let u = Vector3::new(1.6 / duration, -0.5 * GRAVITY_MAGNITUDE * duration, 0.0)
        + Vector3::new(0.0, -0.2, 0.0);
    let truth = BallisticParams { b0, u, g: gravity };
    let track = match simulate_track(&truth, &k, frames, 30.0, params.noise_px, params.seed) {
        Ok(t) => t,
        Err(e) => return err_json(e),
    };
    let mut setup = RecoverySetup::new(mode);
    setup.principal = k.c;
    setup.image_size = Some((1200.0, 877.0));
    if !mode.estimates_focal() {
        setup.focal = Some(k.f);
    }
    if !mode.estimates_gravity() {
        setup.gravity = Some(gravity);
    }
    let rec = match recover_trajectory(&track, &setup) {
        Ok(r) => r,
        Err(e) => return err_json(e),
    };
    let mut reprojected = Vec::with_capacity(frames);
    let mut true3d = Vec::with_capacity(frames);
    let mut recovered3d = Vec::with_capacity(frames);
    let mut pos_err = 0.0;
    let focal_used = rec.focal.unwrap_or(k.f);
    for i in 0..frames {
        let t = i as f64 / 30.0;
        let tp = truth.position_at(t);
        let rp = rec.params.position_at(t);
        true3d.push([tp.x, tp.y, tp.z]);
        recovered3d.push([rp.x, rp.y, rp.z]);
        pos_err += (tp - rp).norm();
        if rp.z > 0.0 {
            reprojected.push([
                focal_used * rp.x / rp.z + k.c.x,
                focal_used * rp.y / rp.z + k.c.y,
            ]);
        }
    }
    let cosine = rec.params.g.dot(&gravity) / (rec.params.g.norm() * gravity.norm());
    let result = TossResult {
        observed: track.points.iter().map(|p| [p.x, p.y]).collect(),
        reprojected,
        true3d,
        recovered3d,
        gravity_true: [gravity.x, gravity.y, gravity.z],
        gravity_recovered: [rec.params.g.x, rec.params.g.y, rec.params.g.z],
        gravity_cosine: cosine,
        focal_recovered: rec.focal,
        position_error_mm: 1000.0 * pos_err / frames as f64,
        fz_ambiguity: rec.report.fz_ambiguity,
        iterations: rec.report.iterations,
    };
    serde_json::to_string(&result).unwrap_or_else(err_json)
}

// ---------------------------------------------------------------------------
// Episode switches: juggling chain + sliding-window detection.
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct SegmentParams {
    #[serde(default = "default_episodes")]
    episodes: usize,
    #[serde(default)]
    noise_px: f64,
    #[serde(default)]
    seed: u64,
}

fn default_episodes() -> usize {
    3
}

#[derive(Serialize)]
struct SegmentResult {
    track2d: Vec<[f64; 2]>,
    detected_switches: Vec<usize>,
    true_seams: Vec<usize>,
    windows: Vec<[usize; 2]>,
}

/// Generates a juggling chain and runs the episode-switch detector on its
/// 2D track.
#[wasm_bindgen]
pub fn segment_demo(params_json: &str) -> String {
    let params: SegmentParams = match serde_json::from_str(params_json) {
        Ok(p) => p,
        Err(e) => return err_json(e),
    };
    let spec = SceneSpec::chain(params.episodes.clamp(2, 6), params.seed).with_noise(NoiseSpec {
        track_px: params.noise_px,
        ..NoiseSpec::default()
    });
    let scene = match generate(&spec) {
        Ok(s) => s,
        Err(e) => return err_json(e),
    };
    let detected = match detect_switches(&scene.object, DEFAULT_WINDOW, DEFAULT_VELOCITY_THRESHOLD)
    {
        Ok(d) => d,
        Err(e) => return err_json(e),
    };
    let result = SegmentResult {
        track2d: scene
            .object
            .iter()
            .map(|p| p.map(|v| [v.x, v.y]).unwrap_or([f64::NAN, f64::NAN]))
            .collect(),
        detected_switches: detected,
        true_seams: scene.episodes.windows(2).map(|w| w[1].start).collect(),
        windows: scene.episodes.iter().map(|w| [w.start, w.end]).collect(),
    };
    serde_json::to_string(&result).unwrap_or_else(err_json)
}

// ---------------------------------------------------------------------------
// Joint solve: one-person scene, root trajectory before/after.
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct JointParams {
    #[serde(default = "default_pose_noise")]
    pose_noise_mm: f64,
    #[serde(default = "default_track_noise")]
    track_noise_px: f64,
    #[serde(default = "default_mode")]
    mode: String,
    #[serde(default)]
    seed: u64,
}

fn default_pose_noise() -> f64 {
    10.0
}
fn default_track_noise() -> f64 {
    1.0
}

#[derive(Serialize)]
struct JointResult {
    root_true: Vec<[f64; 3]>,
    root_initial: Vec<[f64; 3]>,
    root_solved: Vec<[f64; 3]>,
    object_track2d: Vec<[f64; 2]>,
    object_solved3d: Vec<Option<[f64; 3]>>,
    joints2d: Vec<Vec<[f64; 2]>>,
    mpe_root_mm: f64,
    bone_mae_mm: f64,
    gravity_cosine: f64,
    object_mpe_mm: f64,
    focal: f64,
    iterations: usize,
}

/// Runs the full joint optimization on a synthetic one-person scene and
/// reports true / initial / solved root trajectories plus the metric scores.
#[wasm_bindgen]
pub fn joint_solve_demo(params_json: &str) -> String {
    let params: JointParams = match serde_json::from_str(params_json) {
        Ok(p) => p,
        Err(e) => return err_json(e),
    };
    let Some(mode) = DofMode::parse(&params.mode) else {
        return err_json(format!("unknown mode '{}'", params.mode));
    };
    let spec = SceneSpec::single_episode(params.seed).with_noise(NoiseSpec {
        pose_mm: params.pose_noise_mm.clamp(0.0, 150.0),
        track_px: params.track_noise_px.clamp(0.0, 150.0),
        joints2d_px: 0.0,
        root_mm: 30.0,
    });
    let scene = match generate(&spec) {
        Ok(s) => s,
        Err(e) => return err_json(e),
    };
    let gt = scene.ground_truth.clone().unwrap();
    let options = EnergyOptions {
        bone_prior: BonePriorTable(gt.persons[0].bone_lengths.clone()),
        ..EnergyOptions::default()
    };
    let config = SolveConfig::with_mode(mode);
    let (solution, report) = match solve_scene_with_options(&scene, &config, &options) {
        Ok(r) => r,
        Err(e) => return err_json(e),
    };
    let metrics = match compute_metrics(&solution, &scene) {
        Ok(m) => m,
        Err(e) => return err_json(e),
    };
    let object_solved3d = (0..scene.n_frames())
        .map(|frame| {
            scene.episodes.iter().position(|w| w.contains(frame)).map(|e| {
                let t = (frame - scene.episodes[e].start) as f64 / scene.frame_rate;
                let b = solution.episodes[e].position_at(t);
                [b.x, b.y, b.z]
            })
        })
        .collect();
    let result = JointResult {
        root_true: gt.persons[0].root.iter().map(|r| [r.x, r.y, r.z]).collect(),
        root_initial: scene.persons[0]
            .init_root
            .as_ref()
            .unwrap()
            .iter()
            .map(|r| [r.x, r.y, r.z])
            .collect(),
        root_solved: solution.persons[0]
            .root_translation
            .iter()
            .map(|r| [r.x, r.y, r.z])
            .collect(),
        object_track2d: scene
            .object
            .iter()
            .map(|p| p.map(|v| [v.x, v.y]).unwrap_or([f64::NAN, f64::NAN]))
            .collect(),
        object_solved3d,
        joints2d: scene.persons[0]
            .joints2d
            .iter()
            .map(|frame| {
                frame
                    .iter()
                    .map(|j| j.map(|v| [v.x, v.y]).unwrap_or([f64::NAN, f64::NAN]))
                    .collect()
            })
            .collect(),
        mpe_root_mm: metrics.mpe_root_mm,
        bone_mae_mm: metrics.bone_mae_mm,
        gravity_cosine: metrics.gravity_cosine,
        object_mpe_mm: metrics.object_mpe_mm,
        focal: solution.focal,
        iterations: report.iterations,
    };
    serde_json::to_string(&result).unwrap_or_else(err_json)
}
