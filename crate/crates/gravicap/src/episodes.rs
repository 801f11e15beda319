//! Free-flight episode boundaries: sliding-window switch detection on 2D
//! object tracks and assembly of multi-episode scenes.
//!
//! A switch (catch / re-throw) inverts the 2D velocity direction like a
//! ballistic apex does, but unlike an apex it also changes the velocity
//! magnitude abruptly; the magnitude threshold separates the two.

use nalgebra::Vector2;
use thiserror::Error;

use crate::scene::{ContactEvent, ContactSide, FlightWindow, SceneError};

pub const DEFAULT_WINDOW: usize = 5;
pub const DEFAULT_VELOCITY_THRESHOLD: f64 = 10.0; // px per frame

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EpisodesError {
    #[error("track of {got} frames is shorter than the {window}-frame window")]
    TrackTooShort { got: usize, window: usize },
}

/// Flight windows plus the switch frames that separated them.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSegmentation {
    pub windows: Vec<FlightWindow>,
    pub switch_frames: Vec<usize>,
}

/// Scans the 2D track with a sliding window and reports episode-switch frames.
///
/// Within each window the mean velocity of the first half must oppose the
/// second half (angle above 90 degrees and a sign flip of the dominant
/// component), and the magnitude change across the inversion must exceed
/// `velocity_threshold` pixels per frame. Windows touching missing detections
/// or extending past the track ends are skipped.
pub fn detect_switches(
    track2d: &[Option<Vector2<f64>>],
    window: usize,
    velocity_threshold: f64,
) -> Result<Vec<usize>, EpisodesError> {
    let window = window.max(3);
    if track2d.len() < window {
        return Err(EpisodesError::TrackTooShort {
            got: track2d.len(),
            window,
        });
    }
    let half = (window - 1) / 2;
    let mut candidates: Vec<(usize, f64)> = Vec::new();
    'outer: for start in 0..=(track2d.len() - window) {
        let mut diffs = Vec::with_capacity(window - 1);
        for j in 0..window - 1 {
            match (track2d[start + j], track2d[start + j + 1]) {
                (Some(a), Some(b)) => diffs.push(b - a),
                _ => continue 'outer,
            }
        }
        let first = mean(&diffs[..half]);
        let second = mean(&diffs[half..]);
        if first.dot(&second) >= 0.0 {
            continue; // angle <= 90 degrees
        }
        // dominant velocity component must flip sign
        let dom = if (first.x.abs() + second.x.abs()) >= (first.y.abs() + second.y.abs()) {
            0
        } else {
            1
        };
        if first[dom] * second[dom] >= 0.0 {
            continue;
        }
        let mag_change = (second.norm() - first.norm()).abs();
        if mag_change > velocity_threshold {
            candidates.push((start + half, mag_change));
        }
    }
    // merge adjacent candidate runs, keeping the strongest of each
    let radius = (window / 2).max(1);
    let mut switches = Vec::new();
    let mut i = 0;
    while i < candidates.len() {
        let mut best = candidates[i];
        let mut j = i + 1;
        while j < candidates.len() && candidates[j].0 - candidates[j - 1].0 <= radius {
            if candidates[j].1 > best.1 {
                best = candidates[j];
            }
            j += 1;
        }
        switches.push(best.0);
        i = j;
    }
    Ok(switches)
}

fn mean(vs: &[Vector2<f64>]) -> Vector2<f64> {
    vs.iter().sum::<Vector2<f64>>() / vs.len() as f64
}

/// Builds the flight windows of a multi-episode scene. Annotated release/catch
/// pairs always take priority; detected switches bound the remaining windows.
///
/// Contacts must alternate release-before-catch; a catch annotated before its
/// release is a [`SceneError::ContactSwitchMismatch`].
pub fn build_multi_episode(
    track2d: &[Option<Vector2<f64>>],
    switches: &[usize],
    contacts: &[ContactEvent],
) -> Result<EpisodeSegmentation, SceneError> {
    let mut sorted: Vec<&ContactEvent> = contacts.iter().collect();
    // a shared seam frame carries a catch and the next release: catch first
    sorted.sort_by_key(|c| (c.frame, matches!(c.side, ContactSide::Release)));

    let mut windows = Vec::new();
    if sorted.is_empty() {
        // detection-only input: windows between consecutive switches
        let first = first_valid(track2d);
        let last = last_valid(track2d);
        if let (Some(first), Some(last)) = (first, last) {
            let mut bounds = vec![first];
            bounds.extend(switches.iter().copied().filter(|s| *s > first && *s < last));
            bounds.push(last);
            for pair in bounds.windows(2) {
                if pair[1] - pair[0] + 1 >= 3 {
                    windows.push(FlightWindow {
                        start: pair[0],
                        end: pair[1],
                    });
                }
            }
        }
    } else {
        let mut open: Option<&ContactEvent> = None;
        for c in sorted {
            match (c.side, open) {
                (ContactSide::Release, None) => open = Some(c),
                (ContactSide::Release, Some(prev)) => {
                    return Err(SceneError::ContactSwitchMismatch(format!(
                        "release at frame {} before the release at frame {} was caught",
                        c.frame, prev.frame
                    )))
                }
                (ContactSide::Catch, Some(rel)) => {
                    if c.frame <= rel.frame {
                        return Err(SceneError::ContactSwitchMismatch(format!(
                            "catch at frame {} not after release at frame {}",
                            c.frame, rel.frame
                        )));
                    }
                    windows.push(FlightWindow {
                        start: rel.frame,
                        end: c.frame,
                    });
                    open = None;
                }
                (ContactSide::Catch, None) => {
                    return Err(SceneError::ContactSwitchMismatch(format!(
                        "catch at frame {} without a preceding release",
                        c.frame
                    )))
                }
            }
        }
        if let Some(rel) = open {
            // release without catch: close the window at the last valid frame
            if let Some(last) = last_valid(track2d) {
                if last > rel.frame + 1 {
                    windows.push(FlightWindow {
                        start: rel.frame,
                        end: last,
                    });
                }
            }
        }
    }

    Ok(EpisodeSegmentation {
        windows,
        switch_frames: switches.to_vec(),
    })
}

fn first_valid(track: &[Option<Vector2<f64>>]) -> Option<usize> {
    track.iter().position(|p| p.is_some())
}

fn last_valid(track: &[Option<Vector2<f64>>]) -> Option<usize> {
    track.iter().rposition(|p| p.is_some())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ballistics::{simulate_track, BallisticParams, GRAVITY_MAGNITUDE};
    use crate::camera::CameraIntrinsics;
    use nalgebra::Vector3;

    fn camera() -> CameraIntrinsics {
        CameraIntrinsics::new(1200.0, 600.0, 438.5).unwrap()
    }

    fn as_options(points: &[Vector2<f64>]) -> Vec<Option<Vector2<f64>>> {
        points.iter().copied().map(Some).collect()
    }

    #[test]
    fn clean_parabola_has_no_switches() {
        // toss with an apex well inside the window
        let p = BallisticParams::new(
            Vector3::new(-0.5, 0.5, 4.0),
            Vector3::new(1.0, -4.0, 0.0),
            Vector3::new(0.0, GRAVITY_MAGNITUDE, 0.0),
        )
        .unwrap();
        let track = simulate_track(&p, &camera(), 30, 30.0, 0.0, 0).unwrap();
        let switches =
            detect_switches(&as_options(&track.points), DEFAULT_WINDOW, DEFAULT_VELOCITY_THRESHOLD)
                .unwrap();
        assert!(switches.is_empty(), "apex misdetected: {switches:?}");
    }

    #[test]
    fn straight_line_has_no_switches() {
        let points: Vec<_> = (0..40)
            .map(|i| Vector2::new(10.0 + 15.0 * i as f64, 200.0 + 3.0 * i as f64))
            .collect();
        let switches =
            detect_switches(&as_options(&points), DEFAULT_WINDOW, DEFAULT_VELOCITY_THRESHOLD)
                .unwrap();
        assert!(switches.is_empty());
    }

    #[test]
    fn instantaneous_rethrow_is_detected_within_one_frame() {
        // fast downward motion caught at frame 40 and tossed back up slowly
        let mut points = Vec::new();
        for i in 0..=40 {
            points.push(Vector2::new(400.0 + 2.0 * i as f64, 100.0 + 14.0 * i as f64));
        }
        for i in 1..=30 {
            points.push(Vector2::new(480.0 + 2.0 * i as f64, 660.0 - 2.5 * i as f64));
        }
        let switches =
            detect_switches(&as_options(&points), DEFAULT_WINDOW, DEFAULT_VELOCITY_THRESHOLD)
                .unwrap();
        assert_eq!(switches.len(), 1, "switches: {switches:?}");
        assert!((switches[0] as i64 - 40).abs() <= 1, "at {}", switches[0]);
    }

    #[test]
    fn segmentation_is_translation_invariant() {
        let mut points = Vec::new();
        for i in 0..=40 {
            points.push(Vector2::new(400.0 + 2.0 * i as f64, 100.0 + 14.0 * i as f64));
        }
        for i in 1..=30 {
            points.push(Vector2::new(480.0 + 2.0 * i as f64, 660.0 - 2.5 * i as f64));
        }
        let shifted: Vec<_> = points
            .iter()
            .map(|p| p + Vector2::new(123.0, -77.0))
            .collect();
        let a = detect_switches(&as_options(&points), DEFAULT_WINDOW, DEFAULT_VELOCITY_THRESHOLD)
            .unwrap();
        let b = detect_switches(&as_options(&shifted), DEFAULT_WINDOW, DEFAULT_VELOCITY_THRESHOLD)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn short_track_is_an_error() {
        let points = vec![Some(Vector2::new(0.0, 0.0)); 3];
        assert!(matches!(
            detect_switches(&points, 5, 10.0),
            Err(EpisodesError::TrackTooShort { .. })
        ));
    }

    #[test]
    fn annotated_contacts_override_detection() {
        use crate::skeleton::Joint;
        let track = vec![Some(Vector2::new(0.0, 0.0)); 50];
        let contacts = vec![
            ContactEvent {
                frame: 10,
                joint: Joint::RWrist as usize,
                person: 0,
                side: ContactSide::Release,
            },
            ContactEvent {
                frame: 30,
                joint: Joint::LWrist as usize,
                person: 0,
                side: ContactSide::Catch,
            },
        ];
        let seg = build_multi_episode(&track, &[22], &contacts).unwrap();
        assert_eq!(seg.windows, vec![FlightWindow { start: 10, end: 30 }]);
    }

    #[test]
    fn detection_only_windows_come_from_switches() {
        let track = vec![Some(Vector2::new(0.0, 0.0)); 50];
        let seg = build_multi_episode(&track, &[20], &[]).unwrap();
        assert_eq!(
            seg.windows,
            vec![
                FlightWindow { start: 0, end: 20 },
                FlightWindow { start: 20, end: 49 }
            ]
        );
    }

    #[test]
    fn catch_before_release_is_rejected() {
        use crate::skeleton::Joint;
        let track = vec![Some(Vector2::new(0.0, 0.0)); 50];
        let contacts = vec![
            ContactEvent {
                frame: 30,
                joint: Joint::RWrist as usize,
                person: 0,
                side: ContactSide::Release,
            },
            ContactEvent {
                frame: 10,
                joint: Joint::LWrist as usize,
                person: 0,
                side: ContactSide::Catch,
            },
        ];
        assert!(matches!(
            build_multi_episode(&track, &[], &contacts),
            Err(SceneError::ContactSwitchMismatch(_))
        ));
    }
}
