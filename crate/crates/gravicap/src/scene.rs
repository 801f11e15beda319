//! Scene container, on-disk schema and the solution type.
//!
//! A scene bundles everything one solve consumes: camera parameters, per-person
//! 2D joints and kinematic 3D poses, the object's 2D track, flight windows,
//! contact annotations and an optional ground-truth block for evaluation.
//! Files are self-describing JSON documents tagged with a schema version.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

use crate::ballistics::{BallisticParams, DofMode, ObservationTrack};
use crate::skeleton::{joint_index, SkeletonError, JOINT_NAMES, NUM_JOINTS};

pub const SCENE_SCHEMA: &str = "gravicap-scene/1";
pub const SOLUTION_SCHEMA: &str = "gravicap-solution/1";

/// Default image size of the recording setup this schema mirrors.
pub const DEFAULT_IMAGE_SIZE: (f64, f64) = (1200.0, 877.0);

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("schema error in '{field}': expected {expected}, found {found}")]
    Schema {
        field: String,
        expected: String,
        found: String,
    },
    #[error("inconsistent scene: {0}")]
    InconsistentScene(String),
    #[error("contact at frame {frame} lies outside every flight window")]
    ContactOutsideEpisode { frame: usize },
    #[error("contacts and switches disagree: {0}")]
    ContactSwitchMismatch(String),
    #[error("ground truth misaligned with solution: {0}")]
    MisalignedGroundTruth(String),
    #[error("skeleton: {0}")]
    Skeleton(#[from] SkeletonError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Camera block of a scene. `focal` is the known focal length where available;
/// modes that estimate f ignore it and start from max(width, height).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneCamera {
    pub focal: Option<f64>,
    pub principal: Vector2<f64>,
    pub image_size: Option<(f64, f64)>,
}

impl SceneCamera {
    pub fn intrinsics(&self) -> Result<crate::camera::CameraIntrinsics, SceneError> {
        let f = self.focal.ok_or_else(|| SceneError::InconsistentScene(
            "this operation needs a known focal length in the camera block".into(),
        ))?;
        Ok(crate::camera::CameraIntrinsics {
            f,
            c: self.principal,
            image_size: self.image_size,
        })
    }
}

/// Which end of a flight a contact annotates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactSide {
    Release,
    Catch,
}

/// The object coincides with joint `joint` of person `person` at `frame`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContactEvent {
    pub frame: usize,
    pub joint: usize,
    pub person: usize,
    pub side: ContactSide,
}

/// One free-flight window, frames inclusive. Adjacent windows may share a
/// boundary frame (instant re-throw).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlightWindow {
    pub start: usize,
    pub end: usize,
}

impl FlightWindow {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn contains(&self, frame: usize) -> bool {
        frame >= self.start && frame <= self.end
    }
}

/// Per-person observations: 2D joints (pixels, missing allowed) and
/// root-relative kinematic 3D poses in the source estimator's units.
#[derive(Debug, Clone, PartialEq)]
pub struct Person {
    pub joints2d: Vec<Vec<Option<Vector2<f64>>>>,
    pub kin: Vec<Vec<Vector3<f64>>>,
    /// Absolute root estimate per frame, used to initialize root translations.
    pub init_root: Option<Vec<Vector3<f64>>>,
}

/// Ground truth for evaluation; everything in meters, camera frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub gravity: Vector3<f64>,
    pub focal: f64,
    pub episodes: Vec<BallisticParams>,
    /// Object position per frame (flight frames; None elsewhere is allowed).
    pub object3d: Vec<Option<Vector3<f64>>>,
    pub persons: Vec<PersonGroundTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonGroundTruth {
    pub bone_lengths: Vec<f64>,
    pub root: Vec<Vector3<f64>>,
    /// Global joint positions per frame.
    pub poses3d: Vec<Vec<Vector3<f64>>>,
}

/// A validated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub camera: SceneCamera,
    pub frame_rate: f64,
    /// Known gravity vector (norm 9.81) for the modes that take it as input.
    pub known_gravity: Option<Vector3<f64>>,
    pub persons: Vec<Person>,
    /// Full-sequence object track; None marks missing detections.
    pub object: Vec<Option<Vector2<f64>>>,
    pub episodes: Vec<FlightWindow>,
    pub contacts: Vec<ContactEvent>,
    pub ground_truth: Option<GroundTruth>,
}

impl Scene {
    pub fn n_frames(&self) -> usize {
        self.object.len()
    }

    /// Checks every cross-stream invariant; called on every load.
    pub fn validate(&self) -> Result<(), SceneError> {
        let n = self.n_frames();
        if !(self.frame_rate > 0.0) {
            return Err(SceneError::InconsistentScene(format!(
                "frame rate must be positive, got {}",
                self.frame_rate
            )));
        }
        if let Some(g) = self.known_gravity {
            let norm = g.norm();
            if (norm - crate::ballistics::GRAVITY_MAGNITUDE).abs() > 1e-6 {
                return Err(SceneError::InconsistentScene(format!(
                    "known gravity must have norm 9.81, got {norm}"
                )));
            }
        }
        for (p, person) in self.persons.iter().enumerate() {
            if person.joints2d.len() != n || person.kin.len() != n {
                return Err(SceneError::InconsistentScene(format!(
                    "person {p}: {} 2D frames / {} kinematic frames vs {} object frames",
                    person.joints2d.len(),
                    person.kin.len(),
                    n
                )));
            }
            for (i, (j2, kin)) in person.joints2d.iter().zip(person.kin.iter()).enumerate() {
                if j2.len() != NUM_JOINTS || kin.len() != NUM_JOINTS {
                    return Err(SceneError::InconsistentScene(format!(
                        "person {p} frame {i}: expected {NUM_JOINTS} joints"
                    )));
                }
            }
            if let Some(roots) = &person.init_root {
                if roots.len() != n {
                    return Err(SceneError::InconsistentScene(format!(
                        "person {p}: init_root has {} frames, expected {n}",
                        roots.len()
                    )));
                }
            }
        }
        let mut prev_end = None;
        for (e, w) in self.episodes.iter().enumerate() {
            if w.end < w.start || w.end >= n {
                return Err(SceneError::InconsistentScene(format!(
                    "episode {e}: window [{}, {}] out of range (n = {n})",
                    w.start, w.end
                )));
            }
            if w.len() < 3 {
                return Err(SceneError::InconsistentScene(format!(
                    "episode {e}: window shorter than 3 frames"
                )));
            }
            if let Some(pe) = prev_end {
                if w.start < pe {
                    return Err(SceneError::InconsistentScene(format!(
                        "episode {e} overlaps its predecessor"
                    )));
                }
            }
            prev_end = Some(w.end);
        }
        for c in &self.contacts {
            if c.person >= self.persons.len() {
                return Err(SceneError::InconsistentScene(format!(
                    "contact at frame {} names person {} of {}",
                    c.frame,
                    c.person,
                    self.persons.len()
                )));
            }
            if c.joint >= NUM_JOINTS {
                return Err(SceneError::InconsistentScene(format!(
                    "contact at frame {} names joint {}",
                    c.frame, c.joint
                )));
            }
            if c.frame >= n {
                return Err(SceneError::InconsistentScene(format!(
                    "contact frame {} beyond sequence length {n}",
                    c.frame
                )));
            }
        }
        if let Some(gt) = &self.ground_truth {
            if gt.object3d.len() != n {
                return Err(SceneError::InconsistentScene(
                    "ground-truth object trajectory length mismatch".into(),
                ));
            }
            if gt.persons.len() != self.persons.len() {
                return Err(SceneError::InconsistentScene(
                    "ground-truth person count mismatch".into(),
                ));
            }
            for (p, gtp) in gt.persons.iter().enumerate() {
                if gtp.root.len() != n || gtp.poses3d.len() != n {
                    return Err(SceneError::InconsistentScene(format!(
                        "ground truth person {p} frame counts mismatch"
                    )));
                }
                if gtp.bone_lengths.len() != NUM_JOINTS - 1 {
                    return Err(SceneError::InconsistentScene(format!(
                        "ground truth person {p} has {} bone lengths",
                        gtp.bone_lengths.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Known gravity for 6/7 DoF solves.
    pub fn known_gravity(&self) -> Result<Vector3<f64>, SceneError> {
        self.known_gravity.ok_or_else(|| {
            SceneError::InconsistentScene(
                "mode takes gravity as an input but the scene has no known_gravity".into(),
            )
        })
    }

    /// Observation-track view of one episode; frame indices are relative to
    /// the window start, missing detections carry a false validity flag.
    pub fn episode_track(&self, episode: usize) -> Result<ObservationTrack, SceneError> {
        let w = self
            .episodes
            .get(episode)
            .ok_or_else(|| SceneError::InconsistentScene(format!("no episode {episode}")))?;
        let mut points = Vec::with_capacity(w.len());
        let mut indices = Vec::with_capacity(w.len());
        let mut validity = Vec::with_capacity(w.len());
        for frame in w.start..=w.end {
            indices.push((frame - w.start) as i64);
            match self.object[frame] {
                Some(p) => {
                    points.push(p);
                    validity.push(true);
                }
                None => {
                    points.push(Vector2::zeros());
                    validity.push(false);
                }
            }
        }
        ObservationTrack::with_validity(points, indices, self.frame_rate, validity)
            .map_err(|e| SceneError::InconsistentScene(e.to_string()))
    }

    /// Subtracts the pelvis from every kinematic pose so downstream code can
    /// rely on root-relative inputs regardless of the source convention.
    pub fn normalize_kin_to_root_relative(&mut self) {
        let root = crate::skeleton::Joint::Pelvis as usize;
        for person in &mut self.persons {
            for pose in &mut person.kin {
                let r = pose[root];
                for j in pose.iter_mut() {
                    *j -= r;
                }
            }
        }
    }

    pub fn to_json(&self) -> Result<String, SceneError> {
        Ok(serde_json::to_string_pretty(&SceneFile::from_scene(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let file: SceneFile = serde_json::from_str(text)?;
        file.into_scene()
    }

    pub fn save(&self, path: &Path) -> Result<(), SceneError> {
        atomic_write(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Result of a joint scene solve, written as `gravicap-solution/1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub schema: String,
    pub mode: DofMode,
    pub episodes: Vec<BallisticParams>,
    /// Shared gravity vector, norm 9.81.
    pub gravity: Vector3<f64>,
    /// Focal length in pixels (estimated or the known input).
    pub focal: f64,
    pub persons: Vec<PersonSolution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonSolution {
    /// Bone lengths in meters, crate bone order.
    pub bone_lengths: Vec<f64>,
    /// Corrective root translation per frame, meters.
    pub root_translation: Vec<Vector3<f64>>,
}

impl Solution {
    pub fn to_json(&self) -> Result<String, SceneError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let sol: Solution = serde_json::from_str(text)?;
        if sol.schema != SOLUTION_SCHEMA {
            return Err(SceneError::Schema {
                field: "schema".into(),
                expected: SOLUTION_SCHEMA.into(),
                found: sol.schema,
            });
        }
        Ok(sol)
    }

    pub fn save(&self, path: &Path) -> Result<(), SceneError> {
        atomic_write(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Write-temp-then-rename so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), SceneError> {
    let tmp = path.with_extension("tmp.partial");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// On-disk representation. Joints are keyed by MPII name in contact records;
// unknown names are load-time errors.
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SceneFile {
    schema: String,
    camera: SceneCamera,
    frame_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    known_gravity: Option<Vector3<f64>>,
    persons: Vec<PersonFile>,
    object: ObjectFile,
    #[serde(default)]
    episodes: Vec<FlightWindow>,
    #[serde(default)]
    contacts: Vec<ContactFile>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    ground_truth: Option<GroundTruth>,
}

#[derive(Serialize, Deserialize)]
struct PersonFile {
    joints2d: Vec<Vec<Option<[f64; 2]>>>,
    kin3d: Vec<Vec<[f64; 3]>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    init_root: Option<Vec<[f64; 3]>>,
}

#[derive(Serialize, Deserialize)]
struct ObjectFile {
    track2d: Vec<Option<[f64; 2]>>,
}

#[derive(Serialize, Deserialize)]
struct ContactFile {
    frame: usize,
    joint: String,
    person: usize,
    side: ContactSide,
}

impl SceneFile {
    fn from_scene(scene: &Scene) -> Self {
        Self {
            schema: SCENE_SCHEMA.into(),
            camera: scene.camera.clone(),
            frame_rate: scene.frame_rate,
            known_gravity: scene.known_gravity,
            persons: scene
                .persons
                .iter()
                .map(|p| PersonFile {
                    joints2d: p
                        .joints2d
                        .iter()
                        .map(|f| f.iter().map(|j| j.map(|v| [v.x, v.y])).collect())
                        .collect(),
                    kin3d: p
                        .kin
                        .iter()
                        .map(|f| f.iter().map(|v| [v.x, v.y, v.z]).collect())
                        .collect(),
                    init_root: p
                        .init_root
                        .as_ref()
                        .map(|roots| roots.iter().map(|v| [v.x, v.y, v.z]).collect()),
                })
                .collect(),
            object: ObjectFile {
                track2d: scene
                    .object
                    .iter()
                    .map(|p| p.map(|v| [v.x, v.y]))
                    .collect(),
            },
            episodes: scene.episodes.clone(),
            contacts: scene
                .contacts
                .iter()
                .map(|c| ContactFile {
                    frame: c.frame,
                    joint: JOINT_NAMES[c.joint].to_string(),
                    person: c.person,
                    side: c.side,
                })
                .collect(),
            ground_truth: scene.ground_truth.clone(),
        }
    }

    fn into_scene(self) -> Result<Scene, SceneError> {
        if self.schema != SCENE_SCHEMA {
            return Err(SceneError::Schema {
                field: "schema".into(),
                expected: SCENE_SCHEMA.into(),
                found: self.schema,
            });
        }
        let contacts = self
            .contacts
            .into_iter()
            .map(|c| {
                let joint = joint_index(&c.joint).map_err(|_| SceneError::Schema {
                    field: "contacts.joint".into(),
                    expected: "an MPII joint name".into(),
                    found: c.joint.clone(),
                })?;
                Ok(ContactEvent {
                    frame: c.frame,
                    joint,
                    person: c.person,
                    side: c.side,
                })
            })
            .collect::<Result<Vec<_>, SceneError>>()?;
        let mut scene = Scene {
            camera: self.camera,
            frame_rate: self.frame_rate,
            known_gravity: self.known_gravity,
            persons: self
                .persons
                .into_iter()
                .map(|p| Person {
                    joints2d: p
                        .joints2d
                        .into_iter()
                        .map(|f| {
                            f.into_iter()
                                .map(|j| j.map(|v| Vector2::new(v[0], v[1])))
                                .collect()
                        })
                        .collect(),
                    kin: p
                        .kin3d
                        .into_iter()
                        .map(|f| {
                            f.into_iter()
                                .map(|v| Vector3::new(v[0], v[1], v[2]))
                                .collect()
                        })
                        .collect(),
                    init_root: p.init_root.map(|roots| {
                        roots
                            .into_iter()
                            .map(|v| Vector3::new(v[0], v[1], v[2]))
                            .collect()
                    }),
                })
                .collect(),
            object: self
                .object
                .track2d
                .into_iter()
                .map(|p| p.map(|v| Vector2::new(v[0], v[1])))
                .collect(),
            episodes: self.episodes,
            contacts,
            ground_truth: self.ground_truth,
        };
        scene.validate()?;
        scene.normalize_kin_to_root_relative();
        Ok(scene)
    }
}
