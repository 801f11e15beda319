//! Property tests of the geometric invariants.

use gravicap::ballistics::{gravity_from_angles, GRAVITY_MAGNITUDE};
use gravicap::camera::{backproject_ray, project, CameraIntrinsics};
use gravicap::skeleton::{apply_scale, bone_directions, BoneLengths, SkeletonTopology, NUM_BONES};
use nalgebra::Vector3;
use proptest::prelude::*;

fn intrinsics_strategy() -> impl Strategy<Value = CameraIntrinsics> {
    (200.0f64..4000.0, -200.0f64..1400.0, -200.0f64..1000.0)
        .prop_map(|(f, cx, cy)| CameraIntrinsics::new(f, cx, cy).unwrap())
}

fn point_strategy() -> impl Strategy<Value = Vector3<f64>> {
    (-5.0f64..5.0, -5.0f64..5.0, 0.05f64..50.0).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

proptest! {
    #[test]
    fn backprojection_round_trips(p in point_strategy(), k in intrinsics_strategy()) {
        let q = project(&p, &k).unwrap();
        let ray = backproject_ray(&q, &k);
        let rebuilt = ray * (p.z / ray.z);
        prop_assert!((rebuilt - p).norm() <= 1e-9 * p.norm().max(1.0));
    }

    #[test]
    fn projection_is_scale_invariant(p in point_strategy(), k in intrinsics_strategy(), s in 0.01f64..100.0) {
        let a = project(&p, &k).unwrap();
        let b = project(&(p * s), &k).unwrap();
        prop_assert!((a - b).norm() < 1e-6 * (1.0 + a.norm()));
    }

    #[test]
    fn gravity_chart_keeps_norm(alpha in -1.5f64..1.5, beta in -3.0f64..3.0) {
        let g = gravity_from_angles(alpha, beta);
        prop_assert!((g.norm() - GRAVITY_MAGNITUDE).abs() < 1e-12);
    }

    #[test]
    fn rescaled_bones_preserve_directions(
        seed_lengths in proptest::collection::vec(0.05f64..0.8, NUM_BONES),
        target_lengths in proptest::collection::vec(0.05f64..0.8, NUM_BONES),
        wiggle in proptest::collection::vec(-0.3f64..0.3, 3 * NUM_BONES),
    ) {
        let topo = SkeletonTopology::mpii16();
        // build a random but valid tree embedding
        let mut pose = vec![Vector3::zeros(); 16];
        for (k, bone) in topo.bones.iter().enumerate() {
            let dir = Vector3::new(
                wiggle[3 * k] + 0.1,
                wiggle[3 * k + 1] + 1.0,
                wiggle[3 * k + 2],
            )
            .normalize();
            pose[bone.child] = pose[bone.parent] + seed_lengths[k] * dir;
        }
        let lengths = BoneLengths::new(target_lengths).unwrap();
        let out = apply_scale(&pose, &topo, &lengths).unwrap();
        // exact lengths, exact directions
        let dirs_in = bone_directions(&pose, &topo).unwrap();
        let dirs_out = bone_directions(&out, &topo).unwrap();
        for (k, bone) in topo.bones.iter().enumerate() {
            let len = (out[bone.child] - out[bone.parent]).norm();
            prop_assert!((len - lengths.0[k]).abs() < 1e-12);
            prop_assert!(dirs_in[k].dot(&dirs_out[k]) > 1.0 - 1e-12);
        }
        // idempotence
        let twice = apply_scale(&out, &topo, &lengths).unwrap();
        for (a, b) in out.iter().zip(twice.iter()) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn scene_json_round_trip(seed in 0u64..500, pose_mm in 0.0f64..20.0, track_px in 0.0f64..3.0) {
        let spec = gravicap::synth::SceneSpec::single_episode(seed).with_noise(
            gravicap::synth::NoiseSpec {
                pose_mm,
                track_px,
                joints2d_px: 0.0,
                root_mm: 10.0,
            },
        );
        let scene = gravicap::synth::generate(&spec).unwrap();
        let text = scene.to_json().unwrap();
        let back = gravicap::Scene::from_json(&text).unwrap();
        prop_assert_eq!(scene, back);
    }
}
