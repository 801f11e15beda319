//! Evaluation metrics against a scene's ground-truth block: root MPE,
//! root-relative MPJPE, bone-length MAE, gravity cosine similarity, object
//! MPE over flight frames and the second-difference smoothness error.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::scene::{Scene, SceneError, Solution};
use crate::skeleton::{apply_scale, estimate_height, BoneLengths, Joint, SkeletonTopology};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean position error of the root translation, millimeters.
    pub mpe_root_mm: f64,
    /// Root-relative mean per-joint position error, millimeters.
    pub mpjpe_mm: f64,
    /// Mean absolute bone-length error, millimeters.
    pub bone_mae_mm: f64,
    /// Cosine similarity between estimated and true gravity direction.
    pub gravity_cosine: f64,
    /// Mean object position error over flight frames, millimeters.
    pub object_mpe_mm: f64,
    /// Mean second-difference norm of the solved 3D joints, mm per frame^2.
    pub e_smooth: f64,
}

/// Global joint positions implied by a solution: scaled kinematic poses plus
/// the solved root translations, per person and frame.
pub fn solved_global_poses(
    solution: &Solution,
    scene: &Scene,
) -> Result<Vec<Vec<Vec<Vector3<f64>>>>, SceneError> {
    let topology = SkeletonTopology::mpii16();
    let mut all = Vec::with_capacity(solution.persons.len());
    for (p, person) in solution.persons.iter().enumerate() {
        let lengths = BoneLengths::new(person.bone_lengths.clone())?;
        let mut frames = Vec::with_capacity(scene.n_frames());
        for (i, kin) in scene.persons[p].kin.iter().enumerate() {
            let scaled = apply_scale(kin, &topology, &lengths)?;
            let t = person.root_translation[i];
            frames.push(scaled.into_iter().map(|j| j + t).collect());
        }
        all.push(frames);
    }
    Ok(all)
}

/// Mean Euclidean norm of second-order temporal differences, in mm/frame^2.
/// Zero for constant-velocity trajectories.
pub fn e_smooth_mm(poses: &[Vec<Vector3<f64>>]) -> f64 {
    if poses.len() < 3 {
        return 0.0;
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 1..poses.len() - 1 {
        for j in 0..poses[i].len() {
            let second = poses[i + 1][j] - 2.0 * poses[i][j] + poses[i - 1][j];
            total += second.norm();
            count += 1;
        }
    }
    1000.0 * total / count as f64
}

/// Root-translation MPE in millimeters against the ground truth.
pub fn root_mpe_mm(solution: &Solution, scene: &Scene) -> Result<f64, SceneError> {
    let gt = ground_truth(scene)?;
    check_alignment(solution, scene)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, person) in solution.persons.iter().enumerate() {
        for (est, truth) in person.root_translation.iter().zip(gt.persons[p].root.iter()) {
            total += (est - truth).norm();
            count += 1;
        }
    }
    Ok(1000.0 * total / count.max(1) as f64)
}

fn ground_truth(scene: &Scene) -> Result<&crate::scene::GroundTruth, SceneError> {
    scene.ground_truth.as_ref().ok_or_else(|| {
        SceneError::MisalignedGroundTruth("scene carries no ground-truth block".into())
    })
}

fn check_alignment(solution: &Solution, scene: &Scene) -> Result<(), SceneError> {
    let gt = ground_truth(scene)?;
    if solution.persons.len() != gt.persons.len() {
        return Err(SceneError::MisalignedGroundTruth(format!(
            "{} solved persons vs {} in the ground truth",
            solution.persons.len(),
            gt.persons.len()
        )));
    }
    for (p, person) in solution.persons.iter().enumerate() {
        if person.root_translation.len() != gt.persons[p].root.len() {
            return Err(SceneError::MisalignedGroundTruth(format!(
                "person {p}: {} solved frames vs {} ground-truth frames",
                person.root_translation.len(),
                gt.persons[p].root.len()
            )));
        }
    }
    if solution.episodes.len() != scene.episodes.len() {
        return Err(SceneError::MisalignedGroundTruth(format!(
            "{} solved episodes vs {} scene windows",
            solution.episodes.len(),
            scene.episodes.len()
        )));
    }
    Ok(())
}

/// Full metric report of a solution against the scene's ground truth.
pub fn compute_metrics(solution: &Solution, scene: &Scene) -> Result<MetricsReport, SceneError> {
    let gt = ground_truth(scene)?;
    check_alignment(solution, scene)?;

    let mpe_root_mm = root_mpe_mm(solution, scene)?;

    let solved = solved_global_poses(solution, scene)?;
    let root = Joint::Pelvis as usize;
    let mut mpjpe = 0.0;
    let mut mpjpe_n = 0usize;
    for (p, frames) in solved.iter().enumerate() {
        for (i, pose) in frames.iter().enumerate() {
            let gt_pose = &gt.persons[p].poses3d[i];
            let gt_root = gt_pose[root];
            let est_root = pose[root];
            for j in 0..pose.len() {
                mpjpe += ((pose[j] - est_root) - (gt_pose[j] - gt_root)).norm();
                mpjpe_n += 1;
            }
        }
    }

    let mut mae = 0.0;
    let mut mae_n = 0usize;
    for (p, person) in solution.persons.iter().enumerate() {
        for (est, truth) in person.bone_lengths.iter().zip(gt.persons[p].bone_lengths.iter()) {
            mae += (est - truth).abs();
            mae_n += 1;
        }
    }

    let gravity_cosine =
        solution.gravity.dot(&gt.gravity) / (solution.gravity.norm() * gt.gravity.norm());

    let mut obj = 0.0;
    let mut obj_n = 0usize;
    for (e, window) in scene.episodes.iter().enumerate() {
        let params = &solution.episodes[e];
        for frame in window.start..=window.end {
            let Some(truth) = gt.object3d[frame] else {
                continue;
            };
            let t = (frame - window.start) as f64 / scene.frame_rate;
            obj += (params.position_at(t) - truth).norm();
            obj_n += 1;
        }
    }

    let e_smooth = if solved.is_empty() {
        0.0
    } else {
        solved.iter().map(|frames| e_smooth_mm(frames)).sum::<f64>() / solved.len() as f64
    };

    Ok(MetricsReport {
        mpe_root_mm,
        mpjpe_mm: 1000.0 * mpjpe / mpjpe_n.max(1) as f64,
        bone_mae_mm: 1000.0 * mae / mae_n.max(1) as f64,
        gravity_cosine,
        object_mpe_mm: 1000.0 * obj / obj_n.max(1) as f64,
        e_smooth,
    })
}

/// Per-person height estimates from the solved root depth and the observed
/// head-to-ankle pixel span, median over frames where the subject stands
/// upright (vertical span at least twice the horizontal span).
pub fn estimate_person_heights(solution: &Solution, scene: &Scene) -> Vec<Option<f64>> {
    let head = Joint::HeadTop as usize;
    let ankles = [Joint::RAnkle as usize, Joint::LAnkle as usize];
    solution
        .persons
        .iter()
        .enumerate()
        .map(|(p, person)| {
            let mut estimates: Vec<f64> = Vec::new();
            for (i, joints) in scene.persons[p].joints2d.iter().enumerate() {
                let Some(head2d) = joints[head] else { continue };
                let (Some(a0), Some(a1)) = (joints[ankles[0]], joints[ankles[1]]) else {
                    continue;
                };
                let ankle_y = 0.5 * (a0.y + a1.y);
                let h_px = (ankle_y - head2d.y).abs();
                let xs: Vec<f64> = joints.iter().flatten().map(|j| j.x).collect();
                let width = xs.iter().cloned().fold(f64::MIN, f64::max)
                    - xs.iter().cloned().fold(f64::MAX, f64::min);
                if h_px < 1.2 * width {
                    continue; // not upright enough
                }
                let t_z = person.root_translation[i].z;
                if let Ok(h) = estimate_height(h_px, t_z, solution.focal) {
                    estimates.push(h);
                }
            }
            if estimates.is_empty() {
                return None;
            }
            estimates.sort_by(|a, b| a.partial_cmp(b).unwrap());
            Some(estimates[estimates.len() / 2])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    #[test]
    fn constant_velocity_has_zero_smoothness_error() {
        let poses: Vec<Vec<Vector3<f64>>> = (0..10)
            .map(|i| {
                (0..16)
                    .map(|j| Vector3::new(i as f64 * 0.1 + j as f64, 0.5 * i as f64, 2.0))
                    .collect()
            })
            .collect();
        assert_relative_eq!(e_smooth_mm(&poses), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn jitter_increases_smoothness_error() {
        let clean: Vec<Vec<Vector3<f64>>> = (0..10)
            .map(|i| vec![Vector3::new(i as f64 * 0.1, 0.0, 2.0); 16])
            .collect();
        let mut jittered = clean.clone();
        for (i, frame) in jittered.iter_mut().enumerate() {
            let eps = if i % 2 == 0 { 0.01 } else { -0.01 };
            for j in frame.iter_mut() {
                j.y += eps;
            }
        }
        assert!(e_smooth_mm(&jittered) > e_smooth_mm(&clean) + 1.0);
    }

    #[test]
    fn identical_solution_scores_zero_errors() {
        let scene = crate::synth::generate(&crate::synth::SceneSpec::single_episode(2)).unwrap();
        let gt = scene.ground_truth.clone().unwrap();
        let solution = Solution {
            schema: crate::scene::SOLUTION_SCHEMA.into(),
            mode: crate::ballistics::DofMode::NineDof,
            episodes: gt.episodes.clone(),
            gravity: gt.gravity,
            focal: gt.focal,
            persons: vec![crate::scene::PersonSolution {
                bone_lengths: gt.persons[0].bone_lengths.clone(),
                root_translation: gt.persons[0].root.clone(),
            }],
        };
        // kinematic inputs at unit scale so apply_scale reproduces the truth
        let mut clean = scene.clone();
        clean.persons[0].kin = gt.persons[0]
            .poses3d
            .iter()
            .zip(gt.persons[0].root.iter())
            .map(|(pose, root)| pose.iter().map(|j| j - root).collect())
            .collect();
        let report = compute_metrics(&solution, &clean).unwrap();
        assert!(report.mpe_root_mm < 1e-9);
        assert!(report.mpjpe_mm < 1e-9);
        assert!(report.bone_mae_mm < 1e-9);
        assert_relative_eq!(report.gravity_cosine, 1.0, epsilon = 1e-12);
        assert!(report.object_mpe_mm < 1e-9);
    }

    #[test]
    fn constant_root_shift_gives_exact_mpe() {
        let scene = crate::synth::generate(&crate::synth::SceneSpec::single_episode(2)).unwrap();
        let gt = scene.ground_truth.clone().unwrap();
        let shifted: Vec<Vector3<f64>> = gt.persons[0]
            .root
            .iter()
            .map(|r| r + Vector3::new(0.030, 0.040, 0.0))
            .collect();
        let solution = Solution {
            schema: crate::scene::SOLUTION_SCHEMA.into(),
            mode: crate::ballistics::DofMode::NineDof,
            episodes: gt.episodes.clone(),
            gravity: gt.gravity,
            focal: gt.focal,
            persons: vec![crate::scene::PersonSolution {
                bone_lengths: gt.persons[0].bone_lengths.clone(),
                root_translation: shifted,
            }],
        };
        let mpe = root_mpe_mm(&solution, &scene).unwrap();
        assert_relative_eq!(mpe, 50.0, max_relative = 1e-9);
    }

    #[test]
    fn rotated_gravity_cosine_matches_hand_trigonometry() {
        let scene = crate::synth::generate(&crate::synth::SceneSpec::single_episode(2)).unwrap();
        let gt = scene.ground_truth.clone().unwrap();
        let ten_deg = 10.0_f64.to_radians();
        let rotated = crate::ballistics::gravity_from_angles(ten_deg, 0.0);
        let solution = Solution {
            schema: crate::scene::SOLUTION_SCHEMA.into(),
            mode: crate::ballistics::DofMode::NineDof,
            episodes: gt.episodes.clone(),
            gravity: rotated,
            focal: gt.focal,
            persons: vec![crate::scene::PersonSolution {
                bone_lengths: gt.persons[0].bone_lengths.clone(),
                root_translation: gt.persons[0].root.clone(),
            }],
        };
        let report = compute_metrics(&solution, &scene).unwrap();
        assert_relative_eq!(report.gravity_cosine, ten_deg.cos(), epsilon = 1e-9);
    }

    #[test]
    fn missing_ground_truth_is_an_error() {
        let mut scene =
            crate::synth::generate(&crate::synth::SceneSpec::single_episode(2)).unwrap();
        let gt = scene.ground_truth.clone().unwrap();
        scene.ground_truth = None;
        let solution = Solution {
            schema: crate::scene::SOLUTION_SCHEMA.into(),
            mode: crate::ballistics::DofMode::NineDof,
            episodes: gt.episodes.clone(),
            gravity: gt.gravity,
            focal: gt.focal,
            persons: vec![crate::scene::PersonSolution {
                bone_lengths: gt.persons[0].bone_lengths.clone(),
                root_translation: gt.persons[0].root.clone(),
            }],
        };
        assert!(matches!(
            compute_metrics(&solution, &scene),
            Err(SceneError::MisalignedGroundTruth(_))
        ));
    }
}
