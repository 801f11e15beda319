//! Synthetic scene generation: ground-truth humans, contact-consistent object
//! flights, projected observations and seeded noise.
//!
//! Scenes are built so the ground truth satisfies every constraint exactly:
//! the object sits in the throwing hand until release, each flight starts at
//! the release joint and lands in the catch joint, and consecutive episodes
//! share their seam frame. Chains alternate long lobs with quick low tosses so
//! the velocity magnitude jumps at every switch (it stays smooth at apexes).

use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ballistics::{BallisticParams, DofMode, GRAVITY_MAGNITUDE};
use crate::camera::project;
use crate::energy::{EnergyOptions, Weights};
use crate::scene::{
    ContactEvent, ContactSide, FlightWindow, GroundTruth, Person, PersonGroundTruth, Scene,
    SceneCamera, DEFAULT_IMAGE_SIZE,
};
use crate::skeleton::{BoneLengths, BonePriorTable, Joint, SkeletonTopology, NUM_BONES, NUM_JOINTS};
use crate::solver::{solve_scene_with_options, SolveConfig};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible scene spec: {0}")]
    SpecInfeasible(String),
    #[error("generation failed: {0}")]
    Internal(String),
}

/// Gaussian degradation applied to the observations, mirroring the two noise
/// axes of the sensitivity study (3D pose noise in mm, 2D track noise in px).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Per-axis noise on the root-relative kinematic 3D joints, millimeters.
    pub pose_mm: f64,
    /// Per-axis noise on the 2D object track, pixels.
    pub track_px: f64,
    /// Optional per-axis noise on the 2D joints, pixels (default off).
    pub joints2d_px: f64,
    /// Jitter of the ingested absolute root estimates, millimeters.
    pub root_mm: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            pose_mm: 0.0,
            track_px: 0.0,
            joints2d_px: 0.0,
            root_mm: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonSpec {
    /// True bone lengths in meters.
    pub bone_lengths: Vec<f64>,
    /// Pelvis position in the camera frame.
    pub root: Vector3<f64>,
    /// Amplitude of the smooth root sway, meters.
    pub sway: f64,
}

impl PersonSpec {
    pub fn standing_at(root: Vector3<f64>) -> Self {
        Self {
            bone_lengths: default_adult_lengths(),
            root,
            sway: 0.015,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub release_frame: usize,
    pub release_person: usize,
    pub release_joint: usize,
    pub catch_frame: usize,
    pub catch_person: usize,
    pub catch_joint: usize,
}

/// Full description of a synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub focal: f64,
    pub principal: Vector2<f64>,
    pub image_size: (f64, f64),
    pub frame_rate: f64,
    pub n_frames: usize,
    /// True gravity; any norm, rescaled to 9.81 during generation.
    pub gravity: Vector3<f64>,
    pub persons: Vec<PersonSpec>,
    pub episodes: Vec<EpisodeSpec>,
    pub noise: NoiseSpec,
    /// Scale factor between the kinematic source units and meters, emulating
    /// canonical-skeleton pose estimators.
    pub kin_scale: f64,
    /// Additional compression of the kinematic z-components, emulating the
    /// systematic depth foreshortening of monocular pose estimators (1 = none).
    pub kin_depth_scale: f64,
    pub seed: u64,
}

impl SceneSpec {
    fn base(seed: u64) -> Self {
        Self {
            focal: 1200.0,
            principal: Vector2::new(600.0, 438.5),
            image_size: DEFAULT_IMAGE_SIZE,
            frame_rate: 30.0,
            n_frames: 0,
            gravity: Vector3::new(0.0, GRAVITY_MAGNITUDE, 0.0),
            persons: Vec::new(),
            episodes: Vec::new(),
            noise: NoiseSpec::default(),
            kin_scale: 0.85,
            kin_depth_scale: 1.0,
            seed,
        }
    }

    /// One person lobbing the object from the right to the left hand:
    /// 5 holding frames, a 40-frame flight, 5 holding frames. The long arc
    /// keeps the gravity direction well observable in the estimating modes.
    pub fn single_episode(seed: u64) -> Self {
        let mut spec = Self::base(seed);
        spec.n_frames = 50;
        spec.persons = vec![PersonSpec::standing_at(Vector3::new(0.0, 0.25, 3.0))];
        spec.episodes = vec![EpisodeSpec {
            release_frame: 5,
            release_person: 0,
            release_joint: Joint::RWrist as usize,
            catch_frame: 45,
            catch_person: 0,
            catch_joint: Joint::LWrist as usize,
        }];
        spec
    }

    /// One person juggling between both hands: contiguous episodes sharing
    /// their seam frames, alternating slow lobs (30 frames) and quick tosses
    /// (12 frames) so every switch carries a large speed change.
    pub fn chain(n_episodes: usize, seed: u64) -> Self {
        let mut spec = Self::base(seed);
        spec.persons = vec![PersonSpec::standing_at(Vector3::new(0.0, 0.25, 4.0))];
        let mut frame = 3;
        let mut from = Joint::RWrist as usize;
        for e in 0..n_episodes {
            let duration = if e % 2 == 0 { 30 } else { 12 };
            let to = if from == Joint::RWrist as usize {
                Joint::LWrist as usize
            } else {
                Joint::RWrist as usize
            };
            spec.episodes.push(EpisodeSpec {
                release_frame: frame,
                release_person: 0,
                release_joint: from,
                catch_frame: frame + duration,
                catch_person: 0,
                catch_joint: to,
            });
            frame += duration;
            from = to;
        }
        spec.n_frames = frame + 4;
        spec
    }

    /// Two persons throwing the object back and forth; a quick low toss
    /// between the receiver's hands separates consecutive long throws.
    pub fn two_person(n_throws: usize, seed: u64) -> Self {
        let mut spec = Self::base(seed);
        spec.persons = vec![
            PersonSpec::standing_at(Vector3::new(-0.85, 0.25, 4.0)),
            PersonSpec::standing_at(Vector3::new(0.85, 0.25, 4.0)),
        ];
        let mut frame = 3;
        let mut thrower = 0usize;
        for t in 0..n_throws {
            let receiver = 1 - thrower;
            spec.episodes.push(EpisodeSpec {
                release_frame: frame,
                release_person: thrower,
                release_joint: Joint::RWrist as usize,
                catch_frame: frame + 24,
                catch_person: receiver,
                catch_joint: Joint::LWrist as usize,
            });
            frame += 24;
            if t + 1 < n_throws {
                // hand the object to the receiver's throwing hand
                spec.episodes.push(EpisodeSpec {
                    release_frame: frame,
                    release_person: receiver,
                    release_joint: Joint::LWrist as usize,
                    catch_frame: frame + 8,
                    catch_person: receiver,
                    catch_joint: Joint::RWrist as usize,
                });
                frame += 8;
            }
            thrower = receiver;
        }
        spec.n_frames = frame + 4;
        spec
    }

    pub fn with_noise(mut self, noise: NoiseSpec) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_gravity_tilt(mut self, alpha: f64, beta: f64) -> Self {
        self.gravity = crate::ballistics::gravity_from_angles(alpha, beta);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Plausible adult bone lengths (meters) in crate bone order.
pub fn default_adult_lengths() -> Vec<f64> {
    vec![
        0.11, 0.41, 0.43, // right leg: hip offset, thigh, shin
        0.11, 0.41, 0.43, // left leg
        0.47, 0.11, 0.15, // pelvis->thorax, thorax->neck, neck->head_top
        0.17, 0.28, 0.25, // right arm: clavicle, upper arm, forearm
        0.17, 0.28, 0.25, // left arm
    ]
}

/// Unit bone directions of the standing pose, crate bone order. Arms are bent
/// forward so the wrists sit in front of the chest.
fn stance_directions() -> [Vector3<f64>; NUM_BONES] {
    let d = |x: f64, y: f64, z: f64| Vector3::new(x, y, z).normalize();
    [
        d(-1.0, 0.15, 0.0),    // pelvis -> r_hip
        d(-0.18, 1.0, 0.08),   // r_hip -> r_knee
        d(0.05, 1.0, -0.06),   // r_knee -> r_ankle
        d(1.0, 0.15, 0.0),     // pelvis -> l_hip
        d(0.18, 1.0, 0.08),    // l_hip -> l_knee
        d(-0.05, 1.0, -0.06),  // l_knee -> l_ankle
        d(0.0, -1.0, 0.04),    // pelvis -> thorax
        d(0.0, -1.0, -0.02),   // thorax -> upper_neck
        d(0.02, -1.0, 0.0),    // upper_neck -> head_top
        d(-1.0, 0.12, 0.0),    // thorax -> r_shoulder
        d(-0.85, 0.65, 0.12),  // r_shoulder -> r_elbow (elbows out)
        d(-0.25, 0.55, -0.75), // r_elbow -> r_wrist (raised forward)
        d(1.0, 0.12, 0.0),     // thorax -> l_shoulder
        d(0.85, 0.65, 0.12),   // l_shoulder -> l_elbow
        d(0.25, 0.55, -0.75),  // l_elbow -> l_wrist
    ]
}

fn smooth_sway(amplitude: f64, t: f64) -> Vector3<f64> {
    amplitude
        * Vector3::new(
            (2.0 * std::f64::consts::PI * 0.31 * t).sin(),
            0.5 * (2.0 * std::f64::consts::PI * 0.17 * t + 1.0).sin(),
            0.35 * (2.0 * std::f64::consts::PI * 0.23 * t + 2.0).sin(),
        )
}

/// Generates the observed scene with an embedded ground-truth block.
pub fn generate(spec: &SceneSpec) -> Result<Scene, SynthError> {
    if spec.n_frames < 3 {
        return Err(SynthError::SpecInfeasible("need at least 3 frames".into()));
    }
    if spec.persons.is_empty() {
        return Err(SynthError::SpecInfeasible("need at least one person".into()));
    }
    if !(spec.kin_scale > 0.0) || !(spec.kin_depth_scale > 0.0) {
        return Err(SynthError::SpecInfeasible("kinematic scales must be positive".into()));
    }
    let gravity = spec.gravity / spec.gravity.norm() * GRAVITY_MAGNITUDE;
    let topology = SkeletonTopology::mpii16();
    let dirs = stance_directions();
    let k = crate::camera::CameraIntrinsics {
        f: spec.focal,
        c: spec.principal,
        image_size: Some(spec.image_size),
    };
    let n = spec.n_frames;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Ground-truth poses: fixed stance on a softly swaying root.
    let mut gt_rootrel: Vec<Vec<Vector3<f64>>> = Vec::with_capacity(spec.persons.len());
    let mut gt_roots: Vec<Vec<Vector3<f64>>> = Vec::with_capacity(spec.persons.len());
    let mut gt_poses: Vec<Vec<Vec<Vector3<f64>>>> = Vec::with_capacity(spec.persons.len());
    for person in &spec.persons {
        let lengths = BoneLengths::new(person.bone_lengths.clone())
            .map_err(|e| SynthError::SpecInfeasible(e.to_string()))?;
        let mut rel = vec![Vector3::zeros(); NUM_JOINTS];
        for (b, bone) in topology.bones.iter().enumerate() {
            rel[bone.child] = rel[bone.parent] + lengths.0[b] * dirs[b];
        }
        let mut roots = Vec::with_capacity(n);
        let mut poses = Vec::with_capacity(n);
        for i in 0..n {
            let t = i as f64 / spec.frame_rate;
            let root = person.root + smooth_sway(person.sway, t);
            let pose: Vec<Vector3<f64>> = rel.iter().map(|j| root + j).collect();
            for (jj, p) in pose.iter().enumerate() {
                if p.z <= 0.1 {
                    return Err(SynthError::SpecInfeasible(format!(
                        "joint {jj} behind the camera at frame {i}"
                    )));
                }
            }
            roots.push(root);
            poses.push(pose);
        }
        gt_rootrel.push(rel);
        gt_roots.push(roots);
        gt_poses.push(poses);
    }

    // Episode parameters: each flight starts at the release joint and is
    // solved to land exactly in the catch joint.
    let mut windows = Vec::with_capacity(spec.episodes.len());
    let mut contacts = Vec::new();
    let mut gt_params = Vec::with_capacity(spec.episodes.len());
    let mut prev_catch: Option<usize> = None;
    for (e, ep) in spec.episodes.iter().enumerate() {
        if ep.catch_frame <= ep.release_frame || ep.catch_frame >= n {
            return Err(SynthError::SpecInfeasible(format!(
                "episode {e}: bad frames [{}, {}]",
                ep.release_frame, ep.catch_frame
            )));
        }
        if let Some(pc) = prev_catch {
            if ep.release_frame < pc {
                return Err(SynthError::SpecInfeasible(format!(
                    "episode {e} overlaps its predecessor"
                )));
            }
        }
        prev_catch = Some(ep.catch_frame);
        let release_pos = gt_poses[ep.release_person][ep.release_frame][ep.release_joint];
        let catch_pos = gt_poses[ep.catch_person][ep.catch_frame][ep.catch_joint];
        let flight_t = (ep.catch_frame - ep.release_frame) as f64 / spec.frame_rate;
        let u = (catch_pos - release_pos - gravity * (0.5 * flight_t * flight_t)) / flight_t;
        gt_params.push(BallisticParams {
            b0: release_pos,
            u,
            g: gravity,
        });
        windows.push(FlightWindow {
            start: ep.release_frame,
            end: ep.catch_frame,
        });
        contacts.push(ContactEvent {
            frame: ep.release_frame,
            joint: ep.release_joint,
            person: ep.release_person,
            side: ContactSide::Release,
        });
        contacts.push(ContactEvent {
            frame: ep.catch_frame,
            joint: ep.catch_joint,
            person: ep.catch_person,
            side: ContactSide::Catch,
        });
    }

    // Object 3D: ballistic during flights, in the carrying hand otherwise.
    let mut object3d: Vec<Option<Vector3<f64>>> = vec![None; n];
    for (e, ep) in spec.episodes.iter().enumerate() {
        for frame in ep.release_frame..=ep.catch_frame {
            let t = (frame - ep.release_frame) as f64 / spec.frame_rate;
            object3d[frame] = Some(gt_params[e].position_at(t));
        }
    }
    for frame in 0..n {
        if object3d[frame].is_some() {
            continue;
        }
        // carried by the nearest enclosing contact joint
        let carrier = spec
            .episodes
            .iter()
            .rev()
            .find(|ep| ep.catch_frame <= frame)
            .map(|ep| (ep.catch_person, ep.catch_joint))
            .or_else(|| {
                spec.episodes
                    .iter()
                    .find(|ep| ep.release_frame >= frame)
                    .map(|ep| (ep.release_person, ep.release_joint))
            });
        let Some((p, j)) = carrier else {
            return Err(SynthError::SpecInfeasible(format!(
                "frame {frame} is neither flight nor holding"
            )));
        };
        object3d[frame] = Some(gt_poses[p][frame][j]);
    }

    // Observations.
    let pose_noise = Normal::new(0.0, (spec.noise.pose_mm / 1000.0).max(0.0))
        .map_err(|e| SynthError::Internal(e.to_string()))?;
    let track_noise = Normal::new(0.0, spec.noise.track_px.max(0.0))
        .map_err(|e| SynthError::Internal(e.to_string()))?;
    let joint2d_noise = Normal::new(0.0, spec.noise.joints2d_px.max(0.0))
        .map_err(|e| SynthError::Internal(e.to_string()))?;
    let root_noise = Normal::new(0.0, (spec.noise.root_mm / 1000.0).max(0.0))
        .map_err(|e| SynthError::Internal(e.to_string()))?;

    let mut persons = Vec::with_capacity(spec.persons.len());
    for (p, _) in spec.persons.iter().enumerate() {
        let mut joints2d = Vec::with_capacity(n);
        let mut kin = Vec::with_capacity(n);
        let mut init_root = Vec::with_capacity(n);
        for i in 0..n {
            let mut frame2d = Vec::with_capacity(NUM_JOINTS);
            for j in 0..NUM_JOINTS {
                let proj = project(&gt_poses[p][i][j], &k)
                    .map_err(|e| SynthError::SpecInfeasible(e.to_string()))?;
                let noisy = if spec.noise.joints2d_px > 0.0 {
                    Vector2::new(
                        proj.x + joint2d_noise.sample(&mut rng),
                        proj.y + joint2d_noise.sample(&mut rng),
                    )
                } else {
                    proj
                };
                frame2d.push(Some(noisy));
            }
            joints2d.push(frame2d);

            let mut pose = Vec::with_capacity(NUM_JOINTS);
            for j in 0..NUM_JOINTS {
                let mut v = gt_rootrel[p][j] * spec.kin_scale;
                v.z *= spec.kin_depth_scale;
                if j != topology.root() && spec.noise.pose_mm > 0.0 {
                    v += Vector3::new(
                        pose_noise.sample(&mut rng),
                        pose_noise.sample(&mut rng),
                        pose_noise.sample(&mut rng),
                    );
                }
                pose.push(v);
            }
            kin.push(pose);

            let mut root = gt_roots[p][i];
            if spec.noise.root_mm > 0.0 {
                root += Vector3::new(
                    root_noise.sample(&mut rng),
                    root_noise.sample(&mut rng),
                    root_noise.sample(&mut rng),
                );
            }
            init_root.push(root);
        }
        persons.push(Person {
            joints2d,
            kin,
            init_root: Some(init_root),
        });
    }

    let mut object = Vec::with_capacity(n);
    for pos in object3d.iter().map(|p| p.expect("object position defined everywhere")) {
        let proj =
            project(&pos, &k).map_err(|e| SynthError::SpecInfeasible(e.to_string()))?;
        let noisy = if spec.noise.track_px > 0.0 {
            Vector2::new(
                proj.x + track_noise.sample(&mut rng),
                proj.y + track_noise.sample(&mut rng),
            )
        } else {
            proj
        };
        object.push(Some(noisy));
    }

    let scene = Scene {
        camera: SceneCamera {
            focal: Some(spec.focal),
            principal: spec.principal,
            image_size: Some(spec.image_size),
        },
        frame_rate: spec.frame_rate,
        known_gravity: Some(gravity),
        persons,
        object,
        episodes: windows,
        contacts,
        ground_truth: Some(GroundTruth {
            gravity,
            focal: spec.focal,
            episodes: gt_params,
            object3d,
            persons: (0..spec.persons.len())
                .map(|p| PersonGroundTruth {
                    bone_lengths: spec.persons[p].bone_lengths.clone(),
                    root: gt_roots[p].clone(),
                    poses3d: gt_poses[p].clone(),
                })
                .collect(),
        }),
    };
    scene
        .validate()
        .map_err(|e| SynthError::SpecInfeasible(e.to_string()))?;
    Ok(scene)
}

/// Which observation stream a sweep row degrades.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    Pose,
    Object,
}

impl NoiseFamily {
    pub fn name(self) -> &'static str {
        match self {
            NoiseFamily::Pose => "pose",
            NoiseFamily::Object => "object",
        }
    }
}

/// One sweep row: root-translation MPE (mm) per noise level, averaged over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub family: NoiseFamily,
    pub mode: DofMode,
    /// (sigma, mean root MPE in mm); the first entry is the sigma = 0 baseline.
    pub cells: Vec<(f64, f64)>,
}

/// Noise-sensitivity sweep over (family, mode, sigma) cells. Each cell
/// averages the root MPE of a full joint solve over the given seeds; cells
/// run in parallel when the `parallel` feature is enabled.
pub fn noise_sweep(
    base: &SceneSpec,
    sigmas_pose: &[f64],
    sigmas_track: &[f64],
    modes: &[DofMode],
    seeds: &[u64],
) -> Result<Vec<SweepRow>, SynthError> {
    let mut cells: Vec<(NoiseFamily, DofMode, f64)> = Vec::new();
    for &mode in modes {
        for &sigma in std::iter::once(&0.0).chain(sigmas_pose) {
            cells.push((NoiseFamily::Pose, mode, sigma));
        }
    }
    for &mode in modes {
        for &sigma in std::iter::once(&0.0).chain(sigmas_track) {
            cells.push((NoiseFamily::Object, mode, sigma));
        }
    }

    let eval_cell = |&(family, mode, sigma): &(NoiseFamily, DofMode, f64)| -> Result<f64, SynthError> {
        let mut total = 0.0;
        for &seed in seeds {
            let noise = match family {
                NoiseFamily::Pose => NoiseSpec {
                    pose_mm: sigma,
                    root_mm: 30.0,
                    ..NoiseSpec::default()
                },
                NoiseFamily::Object => NoiseSpec {
                    track_px: sigma,
                    root_mm: 30.0,
                    ..NoiseSpec::default()
                },
            };
            let spec = base.clone().with_noise(noise).with_seed(seed);
            let scene = generate(&spec)?;
            let gt = scene.ground_truth.as_ref().unwrap();
            let options = EnergyOptions {
                bone_prior: BonePriorTable(gt.persons[0].bone_lengths.clone()),
                ..EnergyOptions::default()
            };
            let config = SolveConfig {
                mode,
                weights: Weights::default(),
                ..SolveConfig::default()
            };
            let (solution, _) = solve_scene_with_options(&scene, &config, &options)
                .map_err(|e| SynthError::Internal(e.to_string()))?;
            total += crate::metrics::root_mpe_mm(&solution, &scene)
                .map_err(|e| SynthError::Internal(e.to_string()))?;
        }
        Ok(total / seeds.len() as f64)
    };

    #[cfg(feature = "parallel")]
    let results: Result<Vec<f64>, SynthError> = {
        use rayon::prelude::*;
        cells.par_iter().map(eval_cell).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Result<Vec<f64>, SynthError> = cells.iter().map(eval_cell).collect();
    let results = results?;

    let mut rows: Vec<SweepRow> = Vec::new();
    for ((family, mode, sigma), mpe) in cells.into_iter().zip(results) {
        match rows
            .iter_mut()
            .find(|r| r.family == family && r.mode == mode)
        {
            Some(row) => row.cells.push((sigma, mpe)),
            None => rows.push(SweepRow {
                family,
                mode,
                cells: vec![(sigma, mpe)],
            }),
        }
    }
    Ok(rows)
}
