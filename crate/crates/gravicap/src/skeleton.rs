//! K=16 joint kinematic model (MPII convention), the bone re-lengthening
//! operator, bone-length priors/symmetry and height estimation.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

/// Number of joints of the MPII skeleton.
pub const NUM_JOINTS: usize = 16;
/// Number of bones of a tree over [`NUM_JOINTS`] joints.
pub const NUM_BONES: usize = NUM_JOINTS - 1;

/// Head-top/heel correction applied on top of the pixel-span height formula
/// (2D joint sets typically end at head centre and ankles).
pub const HEIGHT_CORRECTION: f64 = 1.17;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkeletonError {
    #[error("bone ending at joint {joint} ({name}) has zero length in the input pose")]
    ZeroLengthBone { joint: usize, name: String },
    #[error("expected {expected} joints, got {got}")]
    WrongJointCount { expected: usize, got: usize },
    #[error("unknown joint name '{0}'")]
    UnknownJoint(String),
    #[error("bone lengths must all be positive")]
    NonPositiveBoneLength,
    #[error("input must be positive: {0}")]
    NonPositiveInput(&'static str),
}

/// MPII-16 joint indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(usize)]
pub enum Joint {
    RAnkle = 0,
    RKnee = 1,
    RHip = 2,
    LHip = 3,
    LKnee = 4,
    LAnkle = 5,
    Pelvis = 6,
    Thorax = 7,
    UpperNeck = 8,
    HeadTop = 9,
    RWrist = 10,
    RElbow = 11,
    RShoulder = 12,
    LShoulder = 13,
    LElbow = 14,
    LWrist = 15,
}

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "r_ankle",
    "r_knee",
    "r_hip",
    "l_hip",
    "l_knee",
    "l_ankle",
    "pelvis",
    "thorax",
    "upper_neck",
    "head_top",
    "r_wrist",
    "r_elbow",
    "r_shoulder",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
];

pub fn joint_index(name: &str) -> Result<usize, SkeletonError> {
    JOINT_NAMES
        .iter()
        .position(|n| *n == name)
        .ok_or_else(|| SkeletonError::UnknownJoint(name.to_string()))
}

/// Kinematic tree over the MPII-16 joints: parent map, bone order, symmetric
/// bone pairs and the torso joint set.
#[derive(Debug, Clone)]
pub struct SkeletonTopology {
    /// parent[j] is None for the root (pelvis).
    pub parent: [Option<usize>; NUM_JOINTS],
    /// Bones in a fixed order; bone k connects `parent(child)` to `child`.
    /// Bone lengths everywhere in this crate follow this order.
    pub bones: [BoneSpec; NUM_BONES],
    /// Indices into `bones` of mirrored (left, right) pairs.
    pub symmetric_pairs: Vec<(usize, usize)>,
    /// Pelvis, spine (mapped to the MPII thorax), neck and both shoulders.
    pub torso_joints: Vec<usize>,
    /// Joints ordered so every parent precedes its children.
    traversal: [usize; NUM_JOINTS],
}

#[derive(Debug, Clone, Copy)]
pub struct BoneSpec {
    pub child: usize,
    pub parent: usize,
}

impl SkeletonTopology {
    /// The MPII 2D-pose skeleton rooted at the pelvis.
    pub fn mpii16() -> Self {
        use Joint::*;
        let edges: [(Joint, Joint); NUM_BONES] = [
            // (parent, child)
            (Pelvis, RHip),
            (RHip, RKnee),
            (RKnee, RAnkle),
            (Pelvis, LHip),
            (LHip, LKnee),
            (LKnee, LAnkle),
            (Pelvis, Thorax),
            (Thorax, UpperNeck),
            (UpperNeck, HeadTop),
            (Thorax, RShoulder),
            (RShoulder, RElbow),
            (RElbow, RWrist),
            (Thorax, LShoulder),
            (LShoulder, LElbow),
            (LElbow, LWrist),
        ];
        let mut parent = [None; NUM_JOINTS];
        let mut bones = [BoneSpec {
            child: 0,
            parent: 0,
        }; NUM_BONES];
        for (k, (p, c)) in edges.iter().enumerate() {
            parent[*c as usize] = Some(*p as usize);
            bones[k] = BoneSpec {
                child: *c as usize,
                parent: *p as usize,
            };
        }
        // The edge list above is already parent-before-child.
        let mut traversal = [0usize; NUM_JOINTS];
        traversal[0] = Pelvis as usize;
        for (k, bone) in bones.iter().enumerate() {
            traversal[k + 1] = bone.child;
        }
        let symmetric_pairs = vec![
            (0, 3), // hips
            (1, 4), // thighs
            (2, 5), // shins
            (9, 12), // clavicles
            (10, 13), // upper arms
            (11, 14), // forearms
        ];
        let torso_joints = vec![
            Pelvis as usize,
            Thorax as usize,
            UpperNeck as usize,
            RShoulder as usize,
            LShoulder as usize,
        ];
        Self {
            parent,
            bones,
            symmetric_pairs,
            torso_joints,
            traversal,
        }
    }

    pub fn root(&self) -> usize {
        Joint::Pelvis as usize
    }

    /// Bone index (into `bones`) whose child is `joint`, if any.
    pub fn bone_of_child(&self, joint: usize) -> Option<usize> {
        self.bones.iter().position(|b| b.child == joint)
    }

    /// Bone name, keyed by its child joint.
    pub fn bone_name(&self, bone: usize) -> &'static str {
        JOINT_NAMES[self.bones[bone].child]
    }

    /// Bone indices on the path from the root to `joint`.
    pub fn bones_to_root(&self, joint: usize) -> Vec<usize> {
        let mut path = Vec::new();
        let mut j = joint;
        while let Some(p) = self.parent[j] {
            path.push(self.bone_of_child(j).expect("non-root joint has a bone"));
            j = p;
        }
        path.reverse();
        path
    }

    /// Bone lengths of a root-relative pose, in that pose's own units.
    pub fn measure_bone_lengths(&self, pose: &[Vector3<f64>]) -> Result<BoneLengths, SkeletonError> {
        check_joint_count(pose)?;
        let mut l = [0.0; NUM_BONES];
        for (k, b) in self.bones.iter().enumerate() {
            l[k] = (pose[b.child] - pose[b.parent]).norm();
        }
        BoneLengths::new(l.to_vec())
    }
}

fn check_joint_count(pose: &[Vector3<f64>]) -> Result<(), SkeletonError> {
    if pose.len() != NUM_JOINTS {
        return Err(SkeletonError::WrongJointCount {
            expected: NUM_JOINTS,
            got: pose.len(),
        });
    }
    Ok(())
}

/// The K-1 bone lengths in meters, ordered like [`SkeletonTopology::bones`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoneLengths(pub Vec<f64>);

impl BoneLengths {
    pub fn new(l: Vec<f64>) -> Result<Self, SkeletonError> {
        if l.len() != NUM_BONES {
            return Err(SkeletonError::WrongJointCount {
                expected: NUM_BONES,
                got: l.len(),
            });
        }
        if l.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(SkeletonError::NonPositiveBoneLength);
        }
        Ok(Self(l))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Mean bone lengths used as a prior; configuration, never hard-coded into solves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BonePriorTable(pub Vec<f64>);

impl BonePriorTable {
    /// Plausible adult means shipped with the crate (see `data/default_bone_priors.json`).
    pub fn default_table() -> Self {
        let text = include_str!("../data/default_bone_priors.json");
        Self::from_json(text, &SkeletonTopology::mpii16()).expect("bundled prior table is valid")
    }

    /// Parses `{ "bone_name": meters, ... }`, keyed by each bone's child joint.
    pub fn from_json(text: &str, topology: &SkeletonTopology) -> Result<Self, SkeletonError> {
        let map: HashMap<String, f64> = serde_json::from_str(text)
            .map_err(|_| SkeletonError::UnknownJoint("malformed prior table".into()))?;
        let mut l = Vec::with_capacity(NUM_BONES);
        for k in 0..NUM_BONES {
            let name = topology.bone_name(k);
            let v = map
                .get(name)
                .copied()
                .ok_or_else(|| SkeletonError::UnknownJoint(name.to_string()))?;
            if !(v.is_finite() && v > 0.0) {
                return Err(SkeletonError::NonPositiveBoneLength);
            }
            l.push(v);
        }
        Ok(Self(l))
    }
}

/// Re-lengthens the bones of a root-relative pose to `lengths` while keeping
/// every bone's unit direction, traversing the tree from the root.
///
/// The root stays at the origin; the output bone lengths equal `lengths` exactly.
pub fn apply_scale(
    kin_pose: &[Vector3<f64>],
    topology: &SkeletonTopology,
    lengths: &BoneLengths,
) -> Result<Vec<Vector3<f64>>, SkeletonError> {
    let dirs = bone_directions(kin_pose, topology)?;
    let mut out = vec![Vector3::zeros(); NUM_JOINTS];
    for &j in &topology.traversal {
        if let Some(p) = topology.parent[j] {
            let k = topology.bone_of_child(j).unwrap();
            out[j] = out[p] + lengths.0[k] * dirs[k];
        }
    }
    Ok(out)
}

/// Unit direction of every bone of a root-relative pose (parent -> child).
pub fn bone_directions(
    kin_pose: &[Vector3<f64>],
    topology: &SkeletonTopology,
) -> Result<Vec<Vector3<f64>>, SkeletonError> {
    check_joint_count(kin_pose)?;
    let mut dirs = vec![Vector3::zeros(); NUM_BONES];
    for (k, b) in topology.bones.iter().enumerate() {
        let d = kin_pose[b.child] - kin_pose[b.parent];
        let n = d.norm();
        if n < 1e-12 {
            return Err(SkeletonError::ZeroLengthBone {
                joint: b.child,
                name: JOINT_NAMES[b.child].to_string(),
            });
        }
        dirs[k] = d / n;
    }
    Ok(dirs)
}

/// Residuals l_k - l̄_k against a prior table (squared by the solver).
pub fn bone_prior_residuals(lengths: &BoneLengths, table: &BonePriorTable) -> Vec<f64> {
    lengths
        .0
        .iter()
        .zip(table.0.iter())
        .map(|(l, m)| l - m)
        .collect()
}

/// One residual l_i - l_j per mirrored bone pair.
pub fn symmetry_residuals(lengths: &BoneLengths, topology: &SkeletonTopology) -> Vec<f64> {
    topology
        .symmetric_pairs
        .iter()
        .map(|&(i, j)| lengths.0[i] - lengths.0[j])
        .collect()
}

/// Metric height from the pixel head-heel span, the root depth and the focal
/// length: `1.17 * t_z * h_px / f`. The 1.17 factor compensates 2D joint sets
/// that end at the head centre and ankles rather than head top and heels.
pub fn estimate_height(h_px: f64, t_z: f64, f: f64) -> Result<f64, SkeletonError> {
    if !(h_px > 0.0) {
        return Err(SkeletonError::NonPositiveInput("h_px"));
    }
    if !(t_z > 0.0) {
        return Err(SkeletonError::NonPositiveInput("t_z"));
    }
    if !(f > 0.0) {
        return Err(SkeletonError::NonPositiveInput("f"));
    }
    Ok(HEIGHT_CORRECTION * t_z * h_px / f)
}
