//! Residual blocks of the joint objective and their assembly into one
//! stacked weighted residual vector.
//!
//! The objective is `E = E_p + lb*E_b + lc*E_c + lm*E_m + ls*E_s + lco*E_co
//! + lbl*E_bl`. Every block is scaled by the square root of its weight, so a
//! least-squares solver minimizing the squared norm of the stacked vector
//! minimizes the weighted sum verbatim. Zero-weight blocks contribute no rows.
//!
//! Residual conventions:
//! - reprojection rows are `observed - projected`, in pixels;
//! - contact and continuity rows are 3D differences in meters;
//! - bone prior/symmetry rows are scalar differences in meters.

use nalgebra::{DMatrix, DVector, Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ballistics::{
    angles_from_gravity, gravity_angle_jacobian, gravity_from_angles, BallisticParams, DofMode,
    FOCAL_SCALE, GRAVITY_MAGNITUDE,
};
use crate::camera::{projection_jacobian_point, CameraIntrinsics};
use crate::scene::{ContactSide, Scene, SceneError, Solution, PersonSolution};
use crate::skeleton::{
    bone_directions, BonePriorTable, BoneLengths, SkeletonTopology, NUM_BONES, NUM_JOINTS,
};
use crate::solver::{LeastSquares, NormalEqs, TermEnergy};

/// Default number of points sampled along each object-to-torso vector.
pub const DEFAULT_EM_SAMPLES: usize = 5;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("{term} hit non-positive depth at frame {frame}, joint {joint}")]
    NonPositiveDepth {
        term: EnergyTerm,
        frame: usize,
        joint: usize,
    },
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// The seven terms of the joint objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnergyTerm {
    Ep,
    Eb,
    Ec,
    Em,
    Es,
    Eco,
    Ebl,
}

impl EnergyTerm {
    pub const ALL: [EnergyTerm; 7] = [
        EnergyTerm::Ep,
        EnergyTerm::Eb,
        EnergyTerm::Ec,
        EnergyTerm::Em,
        EnergyTerm::Es,
        EnergyTerm::Eco,
        EnergyTerm::Ebl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnergyTerm::Ep => "E_p",
            EnergyTerm::Eb => "E_b",
            EnergyTerm::Ec => "E_c",
            EnergyTerm::Em => "E_m",
            EnergyTerm::Es => "E_s",
            EnergyTerm::Eco => "E_co",
            EnergyTerm::Ebl => "E_bl",
        }
    }
}

impl std::fmt::Display for EnergyTerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Balancing weights of Eq-style joint objective; the pose term is the
/// reference scale and fixed at 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub lambda_b: f64,
    pub lambda_c: f64,
    pub lambda_m: f64,
    pub lambda_s: f64,
    pub lambda_co: f64,
    pub lambda_bl: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            lambda_b: 1.0,
            lambda_c: 0.1,
            lambda_m: 0.5,
            lambda_s: 0.01,
            lambda_co: 0.1,
            lambda_bl: 0.1,
        }
    }
}

impl Weights {
    pub fn of(&self, term: EnergyTerm) -> f64 {
        match term {
            EnergyTerm::Ep => 1.0,
            EnergyTerm::Eb => self.lambda_b,
            EnergyTerm::Ec => self.lambda_c,
            EnergyTerm::Em => self.lambda_m,
            EnergyTerm::Es => self.lambda_s,
            EnergyTerm::Eco => self.lambda_co,
            EnergyTerm::Ebl => self.lambda_bl,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let all = [
            self.lambda_b,
            self.lambda_c,
            self.lambda_m,
            self.lambda_s,
            self.lambda_co,
            self.lambda_bl,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(SceneError::InconsistentScene(
                "energy weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Extra assembly knobs beyond the weights.
#[derive(Debug, Clone)]
pub struct EnergyOptions {
    /// Sample count M of the mutual localisation term.
    pub em_samples: usize,
    pub bone_prior: BonePriorTable,
}

impl Default for EnergyOptions {
    fn default() -> Self {
        Self {
            em_samples: DEFAULT_EM_SAMPLES,
            bone_prior: BonePriorTable::default_table(),
        }
    }
}

/// Maps parameter-vector slices to model quantities.
///
/// Order: per-episode (b0, u) blocks, then the two gravity angles (modes that
/// estimate gravity), then the focal length in kilopixels (modes that estimate
/// f), then per person the bone lengths followed by all root translations.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterLayout {
    pub n_episodes: usize,
    pub n_persons: usize,
    pub n_frames: usize,
    pub gravity_offset: Option<usize>,
    pub focal_offset: Option<usize>,
    persons_offset: usize,
    pub len: usize,
    /// Unknown count in the paper-style bookkeeping where the gravity vector
    /// counts as three unknowns (its norm being a constraint rather than a
    /// parametrisation): 3N + K + 9 for one person and one episode when both
    /// gravity and f are estimated.
    pub nominal_unknowns: usize,
}

impl ParameterLayout {
    fn new(n_episodes: usize, n_persons: usize, n_frames: usize, mode: DofMode) -> Self {
        let mut len = 6 * n_episodes;
        let gravity_offset = mode.estimates_gravity().then_some(len);
        if mode.estimates_gravity() {
            len += 2;
        }
        let focal_offset = mode.estimates_focal().then_some(len);
        if mode.estimates_focal() {
            len += 1;
        }
        let persons_offset = len;
        len += n_persons * (NUM_BONES + 3 * n_frames);
        let nominal_unknowns = 6 * n_episodes
            + if mode.estimates_gravity() { 3 } else { 0 }
            + if mode.estimates_focal() { 1 } else { 0 }
            + n_persons * (NUM_BONES + 3 * n_frames);
        Self {
            n_episodes,
            n_persons,
            n_frames,
            gravity_offset,
            focal_offset,
            persons_offset,
            len,
            nominal_unknowns,
        }
    }

    pub fn episode_offset(&self, episode: usize) -> usize {
        6 * episode
    }

    pub fn bones_offset(&self, person: usize) -> usize {
        self.persons_offset + person * (NUM_BONES + 3 * self.n_frames)
    }

    pub fn t_corr_offset(&self, person: usize, frame: usize) -> usize {
        self.bones_offset(person) + NUM_BONES + 3 * frame
    }

    /// Overwrites one episode's (b0, u) block (warm starts use this).
    pub fn write_episode(&self, x: &mut DVector<f64>, episode: usize, params: &BallisticParams) {
        let o = self.episode_offset(episode);
        for a in 0..3 {
            x[o + a] = params.b0[a];
            x[o + 3 + a] = params.u[a];
        }
    }
}

struct PersonData {
    /// Per frame, unit bone directions of the kinematic pose.
    dirs: Vec<Vec<Vector3<f64>>>,
    joints2d: Vec<Vec<Option<Vector2<f64>>>>,
    init_lengths: Vec<f64>,
    init_root: Option<Vec<Vector3<f64>>>,
}

struct EpisodeData {
    start: usize,
    end: usize,
    /// (global frame, local time, observation) of the valid track points.
    obs: Vec<(usize, f64, Vector2<f64>)>,
}

struct ContactData {
    episode: usize,
    /// Local time of the contact inside its episode.
    t: f64,
    frame: usize,
    joint: usize,
    person: usize,
}

/// Assembled joint objective over a validated scene.
pub struct EnergyModel {
    mode: DofMode,
    weights: Weights,
    em_samples: usize,
    frame_rate: f64,
    principal: Vector2<f64>,
    /// Known focal length for modes that take f as input.
    fixed_focal: f64,
    /// Start value of f for modes that estimate it.
    init_focal: f64,
    fixed_gravity: Vector3<f64>,
    topology: SkeletonTopology,
    /// Bone index paths from the root, per joint.
    support: Vec<Vec<usize>>,
    prior: BonePriorTable,
    persons: Vec<PersonData>,
    episodes: Vec<EpisodeData>,
    contacts: Vec<ContactData>,
    layout: ParameterLayout,
}

struct State {
    episodes: Vec<(Vector3<f64>, Vector3<f64>)>,
    gravity: Vector3<f64>,
    dg: Option<(Vector3<f64>, Vector3<f64>)>,
    focal: f64,
    lengths: Vec<Vec<f64>>,
}

/// Receives rows during a scan. `frame`/`joint` are usize::MAX where a row has
/// no frame or joint attached.
trait RowSink {
    fn wants_derivatives(&self) -> bool;
    fn row(
        &mut self,
        term: EnergyTerm,
        weighted_value: f64,
        entries: &[(usize, f64)],
        frame: usize,
        joint: usize,
    );
}

impl EnergyModel {
    pub fn new(scene: &Scene, weights: &Weights, mode: DofMode) -> Result<Self, SceneError> {
        Self::with_options(scene, weights, mode, &EnergyOptions::default())
    }

    pub fn with_options(
        scene: &Scene,
        weights: &Weights,
        mode: DofMode,
        options: &EnergyOptions,
    ) -> Result<Self, SceneError> {
        scene.validate()?;
        weights.validate()?;
        if options.em_samples == 0 {
            return Err(SceneError::InconsistentScene(
                "the mutual localisation term needs at least one sample".into(),
            ));
        }
        let topology = SkeletonTopology::mpii16();
        let n_frames = scene.n_frames();

        let fixed_focal = if mode.estimates_focal() {
            0.0
        } else {
            scene.camera.focal.ok_or_else(|| {
                SceneError::InconsistentScene(format!(
                    "mode {mode} takes the focal length as input but the camera block has none"
                ))
            })?
        };
        let init_focal = match scene.camera.image_size {
            Some((w, h)) => w.max(h),
            None => scene.camera.focal.unwrap_or(0.0),
        };
        if mode.estimates_focal() && !(init_focal > 0.0) {
            return Err(SceneError::InconsistentScene(
                "estimating f needs an image size (or known focal) to initialize from".into(),
            ));
        }

        let fixed_gravity = if mode.estimates_gravity() {
            Vector3::new(0.0, GRAVITY_MAGNITUDE, 0.0)
        } else {
            scene.known_gravity()?
        };

        let mut persons = Vec::with_capacity(scene.persons.len());
        for (p, person) in scene.persons.iter().enumerate() {
            let mut dirs = Vec::with_capacity(n_frames);
            let mut mean_lengths = vec![0.0; NUM_BONES];
            for (i, kin) in person.kin.iter().enumerate() {
                let d = bone_directions(kin, &topology).map_err(|e| {
                    SceneError::InconsistentScene(format!("person {p} frame {i}: {e}"))
                })?;
                for (k, bone) in topology.bones.iter().enumerate() {
                    mean_lengths[k] += (kin[bone.child] - kin[bone.parent]).norm();
                }
                dirs.push(d);
            }
            for l in &mut mean_lengths {
                *l /= n_frames as f64;
            }
            persons.push(PersonData {
                dirs,
                joints2d: person.joints2d.clone(),
                init_lengths: mean_lengths,
                init_root: person.init_root.clone(),
            });
        }

        let mut episodes = Vec::with_capacity(scene.episodes.len());
        for w in &scene.episodes {
            let mut obs = Vec::new();
            for frame in w.start..=w.end {
                if let Some(p) = scene.object[frame] {
                    obs.push((frame, (frame - w.start) as f64 / scene.frame_rate, p));
                }
            }
            episodes.push(EpisodeData {
                start: w.start,
                end: w.end,
                obs,
            });
        }

        let mut contacts = Vec::with_capacity(scene.contacts.len());
        for c in &scene.contacts {
            let episode = route_contact(scene, c.frame, c.side)
                .ok_or(SceneError::ContactOutsideEpisode { frame: c.frame })?;
            let w = &scene.episodes[episode];
            contacts.push(ContactData {
                episode,
                t: (c.frame - w.start) as f64 / scene.frame_rate,
                frame: c.frame,
                joint: c.joint,
                person: c.person,
            });
        }

        let support = (0..NUM_JOINTS)
            .map(|j| topology.bones_to_root(j))
            .collect();

        let layout = ParameterLayout::new(episodes.len(), persons.len(), n_frames, mode);
        Ok(Self {
            mode,
            weights: *weights,
            em_samples: options.em_samples,
            frame_rate: scene.frame_rate,
            principal: scene.camera.principal,
            fixed_focal,
            init_focal,
            fixed_gravity,
            topology,
            support,
            prior: options.bone_prior.clone(),
            persons,
            episodes,
            contacts,
            layout,
        })
    }

    pub fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    pub fn mode(&self) -> DofMode {
        self.mode
    }

    /// Focal length the solve starts from (and uses throughout when f is known).
    pub fn initial_focal(&self) -> f64 {
        if self.mode.estimates_focal() {
            self.init_focal
        } else {
            self.fixed_focal
        }
    }

    fn unpack(&self, x: &DVector<f64>) -> State {
        let episodes = (0..self.layout.n_episodes)
            .map(|e| {
                let o = self.layout.episode_offset(e);
                (
                    Vector3::new(x[o], x[o + 1], x[o + 2]),
                    Vector3::new(x[o + 3], x[o + 4], x[o + 5]),
                )
            })
            .collect();
        let (gravity, dg) = match self.layout.gravity_offset {
            Some(o) => (
                gravity_from_angles(x[o], x[o + 1]),
                Some(gravity_angle_jacobian(x[o], x[o + 1])),
            ),
            None => (self.fixed_gravity, None),
        };
        let focal = match self.layout.focal_offset {
            Some(o) => x[o] / FOCAL_SCALE,
            None => self.fixed_focal,
        };
        let lengths = (0..self.layout.n_persons)
            .map(|p| {
                let o = self.layout.bones_offset(p);
                (0..NUM_BONES).map(|k| x[o + k]).collect()
            })
            .collect();
        State {
            episodes,
            gravity,
            dg,
            focal,
            lengths,
        }
    }

    fn t_corr(&self, x: &DVector<f64>, person: usize, frame: usize) -> Vector3<f64> {
        let o = self.layout.t_corr_offset(person, frame);
        Vector3::new(x[o], x[o + 1], x[o + 2])
    }

    /// Global position of one joint: scaled root-relative pose plus the root
    /// translation. Linear in the bone lengths (directions are data).
    fn joint_position(
        &self,
        x: &DVector<f64>,
        state: &State,
        person: usize,
        frame: usize,
        joint: usize,
    ) -> Vector3<f64> {
        let mut p = self.t_corr(x, person, frame);
        let dirs = &self.persons[person].dirs[frame];
        for &b in &self.support[joint] {
            p += state.lengths[person][b] * dirs[b];
        }
        p
    }

    fn ballistic_position(&self, state: &State, episode: usize, t: f64) -> Vector3<f64> {
        let (b0, u) = state.episodes[episode];
        b0 + u * t + state.gravity * (0.5 * t * t)
    }

    /// Walks every residual row in the fixed term order E_p, E_b, E_c, E_m,
    /// E_s, E_co, E_bl. Rows of zero-weight terms are skipped entirely.
    fn scan(&self, x: &DVector<f64>, sink: &mut dyn RowSink) {
        let state = self.unpack(x);
        let wd = sink.wants_derivatives();
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(32);

        // E_p: reprojection of every valid 2D joint, all frames.
        for (p, person) in self.persons.iter().enumerate() {
            for frame in 0..self.layout.n_frames {
                for joint in 0..NUM_JOINTS {
                    let Some(obs) = person.joints2d[frame][joint] else {
                        continue;
                    };
                    let pos = self.joint_position(x, &state, p, frame, joint);
                    self.reprojection_rows(
                        EnergyTerm::Ep,
                        1.0,
                        &pos,
                        &obs,
                        &state,
                        ReprojDeps {
                            point_weight: 1.0,
                            person: Some((p, frame, joint)),
                            episode: None,
                            t: 0.0,
                        },
                        wd,
                        &mut entries,
                        sink,
                        frame,
                        joint,
                    );
                }
            }
        }

        // E_b: object reprojection per episode.
        if self.weights.lambda_b > 0.0 {
            let sw = self.weights.lambda_b.sqrt();
            for (e, ep) in self.episodes.iter().enumerate() {
                for &(frame, t, obs) in &ep.obs {
                    let pos = self.ballistic_position(&state, e, t);
                    self.reprojection_rows(
                        EnergyTerm::Eb,
                        sw,
                        &pos,
                        &obs,
                        &state,
                        ReprojDeps {
                            point_weight: 1.0,
                            person: None,
                            episode: Some(e),
                            t,
                        },
                        wd,
                        &mut entries,
                        sink,
                        frame,
                        usize::MAX,
                    );
                }
            }
        }

        // E_c: joint/object coincidence at annotated contacts, meters.
        if self.weights.lambda_c > 0.0 {
            let sw = self.weights.lambda_c.sqrt();
            for c in &self.contacts {
                let joint_pos = self.joint_position(x, &state, c.person, c.frame, c.joint);
                let obj_pos = self.ballistic_position(&state, c.episode, c.t);
                let diff = joint_pos - obj_pos;
                let eo = self.layout.episode_offset(c.episode);
                let to = self.layout.t_corr_offset(c.person, c.frame);
                let bo = self.layout.bones_offset(c.person);
                let dirs = &self.persons[c.person].dirs[c.frame];
                let half_t2 = 0.5 * c.t * c.t;
                for axis in 0..3 {
                    entries.clear();
                    if wd {
                        entries.push((to + axis, 1.0));
                        for &b in &self.support[c.joint] {
                            entries.push((bo + b, dirs[b][axis]));
                        }
                        entries.push((eo + axis, -1.0));
                        entries.push((eo + 3 + axis, -c.t));
                        if let Some((dga, dgb)) = state.dg {
                            let go = self.layout.gravity_offset.unwrap();
                            entries.push((go, -half_t2 * dga[axis]));
                            entries.push((go + 1, -half_t2 * dgb[axis]));
                        }
                        for e in entries.iter_mut() {
                            e.1 *= sw;
                        }
                    }
                    sink.row(EnergyTerm::Ec, sw * diff[axis], &entries, c.frame, c.joint);
                }
            }
        }

        // E_m: points sampled along the 3D object-to-torso vectors must
        // reproject onto the observed 2D object-to-joint segments. The 3D
        // sample at fraction kappa projects onto the observed segment at the
        // depth-weighted fraction w_B = kappa z_B / ((1-kappa) z_P + kappa
        // z_B), which makes each sample row the blend
        //     w_P (p - proj(P)) + w_B (b - proj(B)),
        // exactly zero on a consistent scene and equal to the object/joint
        // reprojection at the endpoints.
        if self.weights.lambda_m > 0.0 && !self.persons.is_empty() {
            let sw = self.weights.lambda_m.sqrt();
            let m_max = self.em_samples;
            for (e, ep) in self.episodes.iter().enumerate() {
                for &(frame, t, obj2d) in &ep.obs {
                    let obj3d = self.ballistic_position(&state, e, t);
                    for (p, person) in self.persons.iter().enumerate() {
                        for &joint in &self.topology.torso_joints {
                            let Some(p2d) = person.joints2d[frame][joint] else {
                                continue;
                            };
                            let joint_pos = self.joint_position(x, &state, p, frame, joint);
                            if joint_pos.z <= 0.0 || obj3d.z <= 0.0 {
                                for _ in 0..2 * m_max {
                                    sink.row(EnergyTerm::Em, f64::NAN, &[], frame, joint);
                                }
                                continue;
                            }
                            self.em_samples_rows(
                                &state,
                                sw,
                                (p, frame, joint),
                                (e, t),
                                (&joint_pos, &obj3d),
                                (&p2d, &obj2d),
                                wd,
                                &mut entries,
                                sink,
                            );
                        }
                    }
                }
            }
        }

        // E_s: left-right bone symmetry.
        if self.weights.lambda_s > 0.0 {
            let sw = self.weights.lambda_s.sqrt();
            for p in 0..self.layout.n_persons {
                let bo = self.layout.bones_offset(p);
                for &(i, j) in &self.topology.symmetric_pairs {
                    entries.clear();
                    if wd {
                        entries.push((bo + i, sw));
                        entries.push((bo + j, -sw));
                    }
                    let v = state.lengths[p][i] - state.lengths[p][j];
                    sink.row(EnergyTerm::Es, sw * v, &entries, usize::MAX, usize::MAX);
                }
            }
        }

        // E_co: seam continuity between adjacent episodes, meters.
        if self.weights.lambda_co > 0.0 && self.episodes.len() >= 2 {
            let sw = self.weights.lambda_co.sqrt();
            for e in 1..self.episodes.len() {
                let prev = &self.episodes[e - 1];
                // last position of the previous episode vs the current b0
                let t_end = (prev.end - prev.start) as f64 / self.frame_rate;
                let last = self.ballistic_position(&state, e - 1, t_end);
                let (b0_cur, _) = state.episodes[e];
                let diff = last - b0_cur;
                let eo_prev = self.layout.episode_offset(e - 1);
                let eo_cur = self.layout.episode_offset(e);
                let half_t2 = 0.5 * t_end * t_end;
                for axis in 0..3 {
                    entries.clear();
                    if wd {
                        entries.push((eo_prev + axis, sw));
                        entries.push((eo_prev + 3 + axis, sw * t_end));
                        if let Some((dga, dgb)) = state.dg {
                            let go = self.layout.gravity_offset.unwrap();
                            entries.push((go, sw * half_t2 * dga[axis]));
                            entries.push((go + 1, sw * half_t2 * dgb[axis]));
                        }
                        entries.push((eo_cur + axis, -sw));
                    }
                    sink.row(EnergyTerm::Eco, sw * diff[axis], &entries, usize::MAX, usize::MAX);
                }
            }
        }

        // E_bl: bone-length prior.
        if self.weights.lambda_bl > 0.0 {
            let sw = self.weights.lambda_bl.sqrt();
            for p in 0..self.layout.n_persons {
                let bo = self.layout.bones_offset(p);
                for k in 0..NUM_BONES {
                    entries.clear();
                    if wd {
                        entries.push((bo + k, sw));
                    }
                    let v = state.lengths[p][k] - self.prior.0[k];
                    sink.row(EnergyTerm::Ebl, sw * v, &entries, usize::MAX, usize::MAX);
                }
            }
        }
    }

    /// Emits the 2 * M localisation rows of one (frame, torso joint) pair.
    ///
    /// The 3D sample at fraction kappa is taken at the point of the P-to-B
    /// segment whose projection divides the projected segment at kappa; its
    /// reprojection error against the observed segment point then reduces
    /// identically to the convex blend `(1-kappa) (p - proj(P)) + kappa (b -
    /// proj(B))`, which is what gets emitted. Zero on a consistent scene, and
    /// the kappa = 1 sample equals the object reprojection row exactly.
    #[allow(clippy::too_many_arguments)]
    fn em_samples_rows(
        &self,
        state: &State,
        sqrt_weight: f64,
        (person, frame, joint): (usize, usize, usize),
        (episode, t): (usize, f64),
        (joint_pos, obj_pos): (&Vector3<f64>, &Vector3<f64>),
        (p2d, obj2d): (&Vector2<f64>, &Vector2<f64>),
        wants_derivatives: bool,
        entries: &mut Vec<(usize, f64)>,
        sink: &mut dyn RowSink,
    ) {
        let proj_p = Vector2::new(
            state.focal * joint_pos.x / joint_pos.z + self.principal.x,
            state.focal * joint_pos.y / joint_pos.z + self.principal.y,
        );
        let proj_b = Vector2::new(
            state.focal * obj_pos.x / obj_pos.z + self.principal.x,
            state.focal * obj_pos.y / obj_pos.z + self.principal.y,
        );
        let r_p = p2d - proj_p;
        let r_b = obj2d - proj_b;

        // per-row derivative entries of the two endpoint residuals
        let mut jrows: [Vec<(usize, f64)>; 2] = [Vec::new(), Vec::new()];
        let mut orows: [Vec<(usize, f64)>; 2] = [Vec::new(), Vec::new()];
        if wants_derivatives {
            let dproj_p = projection_jacobian_point(joint_pos, state.focal);
            let dproj_b = projection_jacobian_point(obj_pos, state.focal);
            let to = self.layout.t_corr_offset(person, frame);
            let bo = self.layout.bones_offset(person);
            let dirs = &self.persons[person].dirs[frame];
            let eo = self.layout.episode_offset(episode);
            let half_t2 = 0.5 * t * t;
            for row in 0..2 {
                let drow = dproj_p.row(row);
                for axis in 0..3 {
                    jrows[row].push((to + axis, -drow[axis]));
                }
                for &b in &self.support[joint] {
                    let d = dirs[b];
                    jrows[row].push((bo + b, -(drow[0] * d.x + drow[1] * d.y + drow[2] * d.z)));
                }
                let orow = dproj_b.row(row);
                for axis in 0..3 {
                    orows[row].push((eo + axis, -orow[axis]));
                    orows[row].push((eo + 3 + axis, -orow[axis] * t));
                }
                if let Some((dga, dgb)) = state.dg {
                    let go = self.layout.gravity_offset.unwrap();
                    let da = orow[0] * dga.x + orow[1] * dga.y + orow[2] * dga.z;
                    let db = orow[0] * dgb.x + orow[1] * dgb.y + orow[2] * dgb.z;
                    orows[row].push((go, -half_t2 * da));
                    orows[row].push((go + 1, -half_t2 * db));
                }
                if let Some(fo) = self.layout.focal_offset {
                    let p_ax = if row == 0 { joint_pos.x } else { joint_pos.y };
                    let b_ax = if row == 0 { obj_pos.x } else { obj_pos.y };
                    jrows[row].push((fo, -(p_ax / joint_pos.z) / FOCAL_SCALE));
                    orows[row].push((fo, -(b_ax / obj_pos.z) / FOCAL_SCALE));
                }
            }
        }

        for m in 1..=self.em_samples {
            let kappa = m as f64 / self.em_samples as f64;
            let w_p = 1.0 - kappa;
            for row in 0..2 {
                let (rp, rb) = if row == 0 { (r_p.x, r_b.x) } else { (r_p.y, r_b.y) };
                let value = w_p * rp + kappa * rb;
                entries.clear();
                if wants_derivatives {
                    for &(c, d) in &jrows[row] {
                        entries.push((c, sqrt_weight * w_p * d));
                    }
                    for &(c, d) in &orows[row] {
                        entries.push((c, sqrt_weight * kappa * d));
                    }
                }
                sink.row(EnergyTerm::Em, sqrt_weight * value, entries, frame, joint);
            }
        }
    }

    /// Emits the two reprojection rows `observed - projected(point)`.
    #[allow(clippy::too_many_arguments)]
    fn reprojection_rows(
        &self,
        term: EnergyTerm,
        sqrt_weight: f64,
        point: &Vector3<f64>,
        observed: &Vector2<f64>,
        state: &State,
        deps: ReprojDeps,
        wants_derivatives: bool,
        entries: &mut Vec<(usize, f64)>,
        sink: &mut dyn RowSink,
        frame: usize,
        joint: usize,
    ) {
        if point.z <= 0.0 {
            sink.row(term, f64::NAN, &[], frame, joint);
            sink.row(term, f64::NAN, &[], frame, joint);
            return;
        }
        let proj = Vector2::new(
            state.focal * point.x / point.z + self.principal.x,
            state.focal * point.y / point.z + self.principal.y,
        );
        let value = observed - proj;
        if !wants_derivatives {
            sink.row(term, sqrt_weight * value.x, &[], frame, joint);
            sink.row(term, sqrt_weight * value.y, &[], frame, joint);
            return;
        }
        let dproj: Matrix2x3<f64> = projection_jacobian_point(point, state.focal);
        for row in 0..2 {
            entries.clear();
            let drow = dproj.row(row);
            // residual = obs - proj: chain through -d(proj)/d(point)
            if let Some((p, frame, joint)) = deps.person {
                let w = deps.point_weight;
                if w != 0.0 {
                    let to = self.layout.t_corr_offset(p, frame);
                    for axis in 0..3 {
                        entries.push((to + axis, -sqrt_weight * w * drow[axis]));
                    }
                    let bo = self.layout.bones_offset(p);
                    let dirs = &self.persons[p].dirs[frame];
                    for &b in &self.support[joint] {
                        let d = dirs[b];
                        let dd = drow[0] * d.x + drow[1] * d.y + drow[2] * d.z;
                        entries.push((bo + b, -sqrt_weight * w * dd));
                    }
                }
            }
            if let Some(e) = deps.episode {
                let w = 1.0 - deps.person.map(|_| deps.point_weight).unwrap_or(0.0);
                if w != 0.0 {
                    let eo = self.layout.episode_offset(e);
                    let t = deps.t;
                    let half_t2 = 0.5 * t * t;
                    for axis in 0..3 {
                        entries.push((eo + axis, -sqrt_weight * w * drow[axis]));
                        entries.push((eo + 3 + axis, -sqrt_weight * w * drow[axis] * t));
                    }
                    if let Some((dga, dgb)) = state.dg {
                        let go = self.layout.gravity_offset.unwrap();
                        let da = drow[0] * dga.x + drow[1] * dga.y + drow[2] * dga.z;
                        let db = drow[0] * dgb.x + drow[1] * dgb.y + drow[2] * dgb.z;
                        entries.push((go, -sqrt_weight * w * half_t2 * da));
                        entries.push((go + 1, -sqrt_weight * w * half_t2 * db));
                    }
                }
            }
            if let Some(fo) = self.layout.focal_offset {
                let df = if row == 0 {
                    point.x / point.z
                } else {
                    point.y / point.z
                };
                entries.push((fo, -sqrt_weight * df / FOCAL_SCALE));
            }
            let v = if row == 0 { value.x } else { value.y };
            sink.row(term, sqrt_weight * v, entries, frame, joint);
        }
    }

    /// Unweighted residual vector of one term; errors carry the offending
    /// frame and joint when a model point falls behind the camera.
    pub fn term_residuals(
        &self,
        term: EnergyTerm,
        x: &DVector<f64>,
    ) -> Result<DVector<f64>, EnergyError> {
        struct Collect {
            term: EnergyTerm,
            sqrt_weight: f64,
            values: Vec<f64>,
            bad: Option<(usize, usize)>,
        }
        impl RowSink for Collect {
            fn wants_derivatives(&self) -> bool {
                false
            }
            fn row(&mut self, term: EnergyTerm, v: f64, _: &[(usize, f64)], frame: usize, joint: usize) {
                if term == self.term {
                    if v.is_nan() && self.bad.is_none() {
                        self.bad = Some((frame, joint));
                    }
                    self.values.push(v / self.sqrt_weight);
                }
            }
        }
        let w = self.weights.of(term);
        if w == 0.0 {
            return Ok(DVector::zeros(0));
        }
        let mut sink = Collect {
            term,
            sqrt_weight: w.sqrt(),
            values: Vec::new(),
            bad: None,
        };
        self.scan(x, &mut sink);
        if let Some((frame, joint)) = sink.bad {
            return Err(EnergyError::NonPositiveDepth { term, frame, joint });
        }
        Ok(DVector::from_vec(sink.values))
    }

    /// Weighted and unweighted energy of every term at `x`.
    pub fn term_energies(&self, x: &DVector<f64>) -> Vec<TermEnergy> {
        struct Acc {
            sums: [f64; 7],
        }
        impl RowSink for Acc {
            fn wants_derivatives(&self) -> bool {
                false
            }
            fn row(&mut self, term: EnergyTerm, v: f64, _: &[(usize, f64)], _: usize, _: usize) {
                let i = EnergyTerm::ALL.iter().position(|t| *t == term).unwrap();
                self.sums[i] += v * v;
            }
        }
        let mut acc = Acc { sums: [0.0; 7] };
        self.scan(x, &mut acc);
        EnergyTerm::ALL
            .iter()
            .enumerate()
            .map(|(i, &term)| {
                let weighted = acc.sums[i];
                let w = self.weights.of(term);
                TermEnergy {
                    term,
                    unweighted: if w > 0.0 { weighted / w } else { 0.0 },
                    weighted,
                }
            })
            .collect()
    }

    /// Initial parameter vector per the documented defaults. Episode blocks
    /// are rough backprojection guesses here; the scene solve overwrites them
    /// with trajectory-only warm starts.
    pub fn initial_params(&self) -> Result<DVector<f64>, SceneError> {
        let mut x = DVector::zeros(self.layout.len);
        let focal0 = self.initial_focal();
        let k = CameraIntrinsics {
            f: focal0,
            c: self.principal,
            image_size: None,
        };
        for (e, ep) in self.episodes.iter().enumerate() {
            let obs: Vec<(f64, Vector2<f64>)> =
                ep.obs.iter().map(|&(_, t, p)| (t, p)).collect();
            if obs.is_empty() {
                continue;
            }
            let (b0, u) = crate::ballistics::default_episode_init(&obs, &self.principal, focal0);
            let o = self.layout.episode_offset(e);
            for a in 0..3 {
                x[o + a] = b0[a];
                x[o + 3 + a] = u[a];
            }
        }
        if let Some(go) = self.layout.gravity_offset {
            let (alpha, beta) = angles_from_gravity(&Vector3::new(0.0, GRAVITY_MAGNITUDE, 0.0));
            x[go] = alpha;
            x[go + 1] = beta;
        }
        if let Some(fo) = self.layout.focal_offset {
            x[fo] = focal0 * FOCAL_SCALE;
        }
        for (p, person) in self.persons.iter().enumerate() {
            let bo = self.layout.bones_offset(p);
            for (kb, l) in person.init_lengths.iter().enumerate() {
                x[bo + kb] = *l;
            }
            let lengths = BoneLengths::new(person.init_lengths.clone())
                .map_err(|e| SceneError::InconsistentScene(e.to_string()))?;
            let mut last = Vector3::new(0.0, 0.0, 4.0);
            for frame in 0..self.layout.n_frames {
                let t = match &person.init_root {
                    Some(roots) => roots[frame],
                    None => self
                        .depth_matched_root(p, frame, &lengths, &k)
                        .unwrap_or(last),
                };
                let o = self.layout.t_corr_offset(p, frame);
                x[o] = t.x;
                x[o + 1] = t.y;
                x[o + 2] = t.z;
                last = t;
            }
        }
        Ok(x)
    }

    /// Root translation whose depth makes the scaled pose's torso span match
    /// the observed 2D span, laterally placed on the pelvis viewing ray.
    fn depth_matched_root(
        &self,
        person: usize,
        frame: usize,
        lengths: &BoneLengths,
        k: &CameraIntrinsics,
    ) -> Option<Vector3<f64>> {
        let dirs = &self.persons[person].dirs[frame];
        let joints2d = &self.persons[person].joints2d[frame];
        // scaled root-relative positions of the torso joints
        let mut scaled = vec![Vector3::zeros(); NUM_JOINTS];
        for &j in &self.topology.torso_joints {
            let mut p = Vector3::zeros();
            for &b in &self.support[j] {
                p += lengths.0[b] * dirs[b];
            }
            scaled[j] = p;
        }
        let mut ratios = Vec::new();
        let tj = &self.topology.torso_joints;
        for i in 0..tj.len() {
            for j in i + 1..tj.len() {
                let (a, b) = (tj[i], tj[j]);
                let (Some(pa), Some(pb)) = (joints2d[a], joints2d[b]) else {
                    continue;
                };
                let px = (pa - pb).norm();
                let met = (scaled[a] - scaled[b]).norm();
                if px > 1.0 && met > 1e-6 {
                    ratios.push(k.f * met / px);
                }
            }
        }
        if ratios.is_empty() {
            return None;
        }
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let depth = ratios[ratios.len() / 2];
        let pelvis2d = joints2d[self.topology.root()]?;
        Some(crate::camera::backproject_at_depth(&pelvis2d, k, depth))
    }

    /// Near-singularity of the normal matrix along the joint focal/depth
    /// scaling direction; only meaningful when f is estimated.
    pub fn focal_depth_ambiguity(&self, x: &DVector<f64>) -> bool {
        let Some(fo) = self.layout.focal_offset else {
            return false;
        };
        let eqs = self.normal_equations(x);
        let mut v = DVector::zeros(x.len());
        v[fo] = x[fo];
        for e in 0..self.layout.n_episodes {
            let o = self.layout.episode_offset(e);
            v[o + 2] = x[o + 2];
            v[o + 5] = x[o + 5];
        }
        for p in 0..self.layout.n_persons {
            for frame in 0..self.layout.n_frames {
                let o = self.layout.t_corr_offset(p, frame);
                v[o + 2] = x[o + 2];
            }
        }
        let norm = v.norm();
        if norm == 0.0 {
            return true;
        }
        v /= norm;
        let curvature = (&eqs.jtj * &v).dot(&v);
        let mut diag = 0.0;
        for i in 0..x.len() {
            diag += eqs.jtj[(i, i)] * v[i] * v[i];
        }
        diag > 0.0 && curvature / diag < crate::ballistics::FZ_AMBIGUITY_THRESHOLD
    }

    /// Packs the solved parameter vector into a [`Solution`].
    pub fn solution(&self, x: &DVector<f64>) -> Solution {
        let state = self.unpack(x);
        Solution {
            schema: crate::scene::SOLUTION_SCHEMA.into(),
            mode: self.mode,
            episodes: state
                .episodes
                .iter()
                .map(|&(b0, u)| BallisticParams {
                    b0,
                    u,
                    g: state.gravity,
                })
                .collect(),
            gravity: state.gravity,
            focal: state.focal,
            persons: (0..self.layout.n_persons)
                .map(|p| PersonSolution {
                    bone_lengths: state.lengths[p].clone(),
                    root_translation: (0..self.layout.n_frames)
                        .map(|frame| self.t_corr(x, p, frame))
                        .collect(),
                })
                .collect(),
        }
    }
}

struct ReprojDeps {
    /// Weight of the person-side point in the chain rule (1 for pure joint
    /// reprojection, 1-kappa for localisation samples).
    point_weight: f64,
    person: Option<(usize, usize, usize)>,
    episode: Option<usize>,
    t: f64,
}

/// Central finite-difference Jacobian of a problem's stacked residuals,
/// with the step scaled per parameter. Test oracle for the analytic rows.
pub fn finite_difference_jacobian<P: LeastSquares>(
    problem: &P,
    x: &DVector<f64>,
    base_step: f64,
) -> DMatrix<f64> {
    let m = problem.residuals(x).len();
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    for c in 0..n {
        let h = base_step * (1.0 + x[c].abs());
        let mut hi = x.clone();
        hi[c] += h;
        let mut lo = x.clone();
        lo[c] -= h;
        let d = (problem.residuals(&hi) - problem.residuals(&lo)) / (2.0 * h);
        jac.set_column(c, &d);
    }
    jac
}

fn route_contact(scene: &Scene, frame: usize, side: ContactSide) -> Option<usize> {
    // boundary-exact match first: releases open a window, catches close one
    for (e, w) in scene.episodes.iter().enumerate() {
        match side {
            ContactSide::Release if w.start == frame => return Some(e),
            ContactSide::Catch if w.end == frame => return Some(e),
            _ => {}
        }
    }
    scene.episodes.iter().position(|w| w.contains(frame))
}

impl LeastSquares for EnergyModel {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        struct Collect(Vec<f64>);
        impl RowSink for Collect {
            fn wants_derivatives(&self) -> bool {
                false
            }
            fn row(&mut self, _: EnergyTerm, v: f64, _: &[(usize, f64)], _: usize, _: usize) {
                self.0.push(v);
            }
        }
        let mut sink = Collect(Vec::new());
        self.scan(x, &mut sink);
        DVector::from_vec(sink.0)
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        struct Dense {
            rows: Vec<Vec<(usize, f64)>>,
        }
        impl RowSink for Dense {
            fn wants_derivatives(&self) -> bool {
                true
            }
            fn row(&mut self, _: EnergyTerm, _: f64, entries: &[(usize, f64)], _: usize, _: usize) {
                self.rows.push(entries.to_vec());
            }
        }
        let mut sink = Dense { rows: Vec::new() };
        self.scan(x, &mut sink);
        let mut jac = DMatrix::zeros(sink.rows.len(), self.layout.len);
        for (r, row) in sink.rows.iter().enumerate() {
            for &(c, d) in row {
                jac[(r, c)] += d;
            }
        }
        jac
    }

    fn cost(&self, x: &DVector<f64>) -> f64 {
        struct Sum(f64);
        impl RowSink for Sum {
            fn wants_derivatives(&self) -> bool {
                false
            }
            fn row(&mut self, _: EnergyTerm, v: f64, _: &[(usize, f64)], _: usize, _: usize) {
                self.0 += v * v;
            }
        }
        let mut sink = Sum(0.0);
        self.scan(x, &mut sink);
        sink.0
    }

    /// Sparse accumulation of the normal equations: every row touches only a
    /// handful of parameters, so `J^T J` is built in O(rows * nnz^2) without
    /// ever materializing the dense Jacobian.
    fn normal_equations(&self, x: &DVector<f64>) -> NormalEqs {
        struct Acc {
            jtj: DMatrix<f64>,
            jtr: DVector<f64>,
            cost: f64,
        }
        impl RowSink for Acc {
            fn wants_derivatives(&self) -> bool {
                true
            }
            fn row(&mut self, _: EnergyTerm, v: f64, entries: &[(usize, f64)], _: usize, _: usize) {
                self.cost += v * v;
                for (i, &(ci, di)) in entries.iter().enumerate() {
                    self.jtr[ci] += di * v;
                    let d_ii = di * di;
                    self.jtj[(ci, ci)] += d_ii;
                    for &(cj, dj) in &entries[i + 1..] {
                        let d = di * dj;
                        self.jtj[(ci, cj)] += d;
                        self.jtj[(cj, ci)] += d;
                    }
                }
            }
        }
        let mut acc = Acc {
            jtj: DMatrix::zeros(self.layout.len, self.layout.len),
            jtr: DVector::zeros(self.layout.len),
            cost: 0.0,
        };
        self.scan(x, &mut acc);
        NormalEqs {
            jtj: acc.jtj,
            jtr: acc.jtr,
            cost: acc.cost,
        }
    }
}
