//! Projectile forward model, closed-form small-N solution and object-only
//! trajectory recovery from 2D observations.
//!
//! A free-flight episode is parametrised by the initial position `b0`, the
//! initial velocity `u` and the gravity vector `g`, with `|g| = 9.81 m/s^2`
//! always. In the estimating modes the gravity direction is expressed through
//! two rotation angles about the camera x- and z-axes applied to straight-down
//! (0, 1, 0), which keeps the norm constraint exact at every iterate.

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{
    backproject_ray, project, projection_jacobian_focal, projection_jacobian_point,
    CameraIntrinsics, Point3D,
};
use crate::solver::{minimize, LeastSquares, SolveConfig, SolveReport};

/// Standard gravity magnitude in m/s^2.
pub const GRAVITY_MAGNITUDE: f64 = 9.81;

/// Focal lengths enter the parameter vector in kilopixels so their scale
/// matches meters and radians.
pub const FOCAL_SCALE: f64 = 1e-3;

/// Assumed depth (meters) of the first observation when no better
/// initialization is available.
pub const DEFAULT_INIT_DEPTH: f64 = 5.0;

/// Normalized curvature below which the focal/depth direction of the normal
/// matrix counts as unobservable (see [`TrajectoryRecovery::report`]).
pub const FZ_AMBIGUITY_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BallisticsError {
    #[error("mode {mode:?} needs at least {required} valid observations, got {got}")]
    InsufficientObservations {
        mode: DofMode,
        required: usize,
        got: usize,
    },
    #[error("closed-form solve needs exactly 3 valid observations, got {0}")]
    NotExactlyThree(usize),
    #[error("observation geometry is rank-deficient")]
    SingularConfiguration,
    #[error("simulated object behind the camera at frame {frame} (z = {z})")]
    ObjectBehindCamera { frame: usize, z: f64 },
    #[error("invalid track: {0}")]
    InvalidTrack(String),
    #[error("gravity vector must have norm 9.81 m/s^2, got {0}")]
    InvalidGravity(f64),
    #[error("mode {0:?} requires {1}")]
    MissingInput(DofMode, &'static str),
    #[error("initial parameters are infeasible (object behind camera)")]
    InfeasibleStart,
}

/// Operational modes: which unknowns the trajectory solve estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DofMode {
    /// Unknowns u, b0; gravity vector and focal length are inputs.
    #[serde(rename = "6dof")]
    SixDof,
    /// Unknowns u, b0, f; gravity vector is an input.
    #[serde(rename = "7dof")]
    SevenDof,
    /// Unknowns u, b0, gravity direction; focal length is an input.
    #[serde(rename = "9dof")]
    NineDof,
    /// Unknowns u, b0, gravity direction and f.
    #[serde(rename = "10dof")]
    TenDof,
}

impl DofMode {
    pub fn estimates_focal(self) -> bool {
        matches!(self, DofMode::SevenDof | DofMode::TenDof)
    }

    pub fn estimates_gravity(self) -> bool {
        matches!(self, DofMode::NineDof | DofMode::TenDof)
    }

    /// Solvability threshold on the number of valid observations.
    pub fn min_observations(self) -> usize {
        match self {
            DofMode::SixDof => 3,
            DofMode::SevenDof => 4,
            DofMode::NineDof => 5,
            DofMode::TenDof => 6,
        }
    }

    /// Number of trajectory unknowns in the mode's name.
    pub fn trajectory_unknowns(self) -> usize {
        match self {
            DofMode::SixDof => 6,
            DofMode::SevenDof => 7,
            DofMode::NineDof => 9,
            DofMode::TenDof => 10,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DofMode::SixDof => "6dof",
            DofMode::SevenDof => "7dof",
            DofMode::NineDof => "9dof",
            DofMode::TenDof => "10dof",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "6dof" | "6" => Some(DofMode::SixDof),
            "7dof" | "7" => Some(DofMode::SevenDof),
            "9dof" | "9" => Some(DofMode::NineDof),
            "10dof" | "10" => Some(DofMode::TenDof),
            _ => None,
        }
    }
}

impl std::fmt::Display for DofMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameters of one free-flight episode, camera frame, meters and seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallisticParams {
    /// Initial position at the episode's local time origin.
    pub b0: Vector3<f64>,
    /// Initial velocity in m/s.
    pub u: Vector3<f64>,
    /// Gravity vector in m/s^2; norm 9.81.
    pub g: Vector3<f64>,
}

impl BallisticParams {
    pub fn new(b0: Vector3<f64>, u: Vector3<f64>, g: Vector3<f64>) -> Result<Self, BallisticsError> {
        let norm = g.norm();
        if (norm - GRAVITY_MAGNITUDE).abs() > 1e-6 {
            return Err(BallisticsError::InvalidGravity(norm));
        }
        Ok(Self { b0, u, g })
    }

    /// Position at `t` seconds after the episode start: `b0 + u t + g t^2 / 2`.
    pub fn position_at(&self, t: f64) -> Point3D {
        self.b0 + self.u * t + self.g * (0.5 * t * t)
    }
}

/// Ordered 2D observations of one flight, with per-point validity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationTrack {
    /// Object centres in pixels.
    pub points: Vec<Vector2<f64>>,
    /// Frame indices relative to the flight start; strictly increasing.
    pub frame_indices: Vec<i64>,
    /// Frame rate in Hz.
    pub frame_rate: f64,
    /// Valid observations contribute residuals; the rest are dropped.
    pub validity: Vec<bool>,
}

impl ObservationTrack {
    pub fn new(
        points: Vec<Vector2<f64>>,
        frame_indices: Vec<i64>,
        frame_rate: f64,
    ) -> Result<Self, BallisticsError> {
        let validity = vec![true; points.len()];
        Self::with_validity(points, frame_indices, frame_rate, validity)
    }

    pub fn with_validity(
        points: Vec<Vector2<f64>>,
        frame_indices: Vec<i64>,
        frame_rate: f64,
        validity: Vec<bool>,
    ) -> Result<Self, BallisticsError> {
        if !(frame_rate > 0.0) {
            return Err(BallisticsError::InvalidTrack(format!(
                "frame rate must be positive, got {frame_rate}"
            )));
        }
        if points.len() != frame_indices.len() || points.len() != validity.len() {
            return Err(BallisticsError::InvalidTrack(
                "points, frame indices and validity must have equal length".into(),
            ));
        }
        if frame_indices.windows(2).any(|w| w[1] <= w[0]) {
            return Err(BallisticsError::InvalidTrack(
                "frame indices must be strictly increasing".into(),
            ));
        }
        if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(BallisticsError::InvalidTrack(
                "observations must be finite".into(),
            ));
        }
        Ok(Self {
            points,
            frame_indices,
            frame_rate,
            validity,
        })
    }

    /// Time stamp of observation `i` in seconds: `frame_index / frame_rate`.
    pub fn time(&self, i: usize) -> f64 {
        self.frame_indices[i] as f64 / self.frame_rate
    }

    pub fn valid_count(&self) -> usize {
        self.validity.iter().filter(|v| **v).count()
    }

    /// (time, observation) pairs of the valid points.
    pub fn valid_observations(&self) -> impl Iterator<Item = (f64, Vector2<f64>)> + '_ {
        (0..self.points.len())
            .filter(|i| self.validity[*i])
            .map(|i| (self.time(i), self.points[i]))
    }
}

/// Gravity vector from two tilt angles: `alpha` rotates straight-down gravity
/// towards +z (about the x-axis), `beta` then rotates about the z-axis.
pub fn gravity_from_angles(alpha: f64, beta: f64) -> Vector3<f64> {
    GRAVITY_MAGNITUDE
        * Vector3::new(
            -beta.sin() * alpha.cos(),
            beta.cos() * alpha.cos(),
            alpha.sin(),
        )
}

/// Partial derivatives of [`gravity_from_angles`] w.r.t. both angles.
pub fn gravity_angle_jacobian(alpha: f64, beta: f64) -> (Vector3<f64>, Vector3<f64>) {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    let d_alpha = GRAVITY_MAGNITUDE * Vector3::new(sb * sa, -cb * sa, ca);
    let d_beta = GRAVITY_MAGNITUDE * Vector3::new(-cb * ca, -sb * ca, 0.0);
    (d_alpha, d_beta)
}

/// Angles reproducing the direction of `g` via [`gravity_from_angles`].
/// Degenerate only for gravity along the optical axis, where `beta` is
/// arbitrary and taken as 0.
pub fn angles_from_gravity(g: &Vector3<f64>) -> (f64, f64) {
    let d = g / g.norm();
    let alpha = d.z.clamp(-1.0, 1.0).asin();
    let ca = (1.0 - d.z * d.z).sqrt();
    if ca < 1e-12 {
        (alpha, 0.0)
    } else {
        (alpha, (-d.x).atan2(d.y))
    }
}

/// Everything [`recover_trajectory`] needs besides the track itself.
#[derive(Debug, Clone)]
pub struct RecoverySetup {
    pub mode: DofMode,
    /// Full gravity vector. Required input for 6/7 DoF (validated against the
    /// 9.81 norm); optional direction initialization for 9/10 DoF.
    pub gravity: Option<Vector3<f64>>,
    /// Focal length in pixels. Required input for 6/9 DoF; optional
    /// initialization for 7/10 DoF.
    pub focal: Option<f64>,
    /// Principal point in pixels.
    pub principal: Vector2<f64>,
    /// Image size; when f is unknown and no focal init is given, f starts at
    /// max(width, height).
    pub image_size: Option<(f64, f64)>,
    /// Optional (b0, u) initialization override.
    pub init: Option<BallisticParams>,
    pub config: SolveConfig,
}

impl RecoverySetup {
    pub fn new(mode: DofMode) -> Self {
        Self {
            mode,
            gravity: None,
            focal: None,
            principal: Vector2::zeros(),
            image_size: None,
            init: None,
            config: SolveConfig::with_mode(mode),
        }
    }
}

/// Result of [`recover_trajectory`].
#[derive(Debug, Clone)]
pub struct TrajectoryRecovery {
    pub params: BallisticParams,
    /// Estimated focal length in pixels when the mode includes it.
    pub focal: Option<f64>,
    pub report: SolveReport,
}

struct TrajectoryProblem {
    times: Vec<f64>,
    obs: Vec<Vector2<f64>>,
    principal: Vector2<f64>,
    mode: DofMode,
    fixed_gravity: Vector3<f64>,
    fixed_focal: f64,
}

struct TrajectoryVars {
    b0: Vector3<f64>,
    u: Vector3<f64>,
    g: Vector3<f64>,
    dg: Option<(Vector3<f64>, Vector3<f64>)>,
    focal: f64,
}

impl TrajectoryProblem {
    fn param_len(&self) -> usize {
        6 + if self.mode.estimates_gravity() { 2 } else { 0 }
            + if self.mode.estimates_focal() { 1 } else { 0 }
    }

    fn angle_offset(&self) -> usize {
        6
    }

    fn focal_offset(&self) -> usize {
        6 + if self.mode.estimates_gravity() { 2 } else { 0 }
    }

    fn unpack(&self, x: &DVector<f64>) -> TrajectoryVars {
        let b0 = Vector3::new(x[0], x[1], x[2]);
        let u = Vector3::new(x[3], x[4], x[5]);
        let (g, dg) = if self.mode.estimates_gravity() {
            let o = self.angle_offset();
            (
                gravity_from_angles(x[o], x[o + 1]),
                Some(gravity_angle_jacobian(x[o], x[o + 1])),
            )
        } else {
            (self.fixed_gravity, None)
        };
        let focal = if self.mode.estimates_focal() {
            x[self.focal_offset()] / FOCAL_SCALE
        } else {
            self.fixed_focal
        };
        TrajectoryVars { b0, u, g, dg, focal }
    }

    fn pack(&self, params: &BallisticParams, focal: f64) -> DVector<f64> {
        let mut x = DVector::zeros(self.param_len());
        for a in 0..3 {
            x[a] = params.b0[a];
            x[3 + a] = params.u[a];
        }
        if self.mode.estimates_gravity() {
            let (alpha, beta) = angles_from_gravity(&params.g);
            x[self.angle_offset()] = alpha;
            x[self.angle_offset() + 1] = beta;
        }
        if self.mode.estimates_focal() {
            x[self.focal_offset()] = focal * FOCAL_SCALE;
        }
        x
    }
}

impl LeastSquares for TrajectoryProblem {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let v = self.unpack(x);
        let mut r = DVector::zeros(2 * self.times.len());
        for (i, (&t, ob)) in self.times.iter().zip(self.obs.iter()).enumerate() {
            let p = v.b0 + v.u * t + v.g * (0.5 * t * t);
            if p.z <= 0.0 {
                r[2 * i] = f64::NAN;
                r[2 * i + 1] = f64::NAN;
                continue;
            }
            let proj = Vector2::new(
                v.focal * p.x / p.z + self.principal.x,
                v.focal * p.y / p.z + self.principal.y,
            );
            r[2 * i] = ob.x - proj.x;
            r[2 * i + 1] = ob.y - proj.y;
        }
        r
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let v = self.unpack(x);
        let n = self.param_len();
        let mut jac = DMatrix::zeros(2 * self.times.len(), n);
        for (i, &t) in self.times.iter().enumerate() {
            let p = v.b0 + v.u * t + v.g * (0.5 * t * t);
            if p.z <= 0.0 {
                continue;
            }
            let dproj = projection_jacobian_point(&p, v.focal);
            // residual = obs - proj, so rows carry -d(proj)
            for axis in 0..3 {
                let col = dproj.column(axis);
                jac[(2 * i, axis)] = -col[0];
                jac[(2 * i + 1, axis)] = -col[1];
                jac[(2 * i, 3 + axis)] = -col[0] * t;
                jac[(2 * i + 1, 3 + axis)] = -col[1] * t;
            }
            if let Some((dga, dgb)) = v.dg {
                let o = self.angle_offset();
                let half_t2 = 0.5 * t * t;
                let da = dproj * (dga * half_t2);
                let db = dproj * (dgb * half_t2);
                jac[(2 * i, o)] = -da.x;
                jac[(2 * i + 1, o)] = -da.y;
                jac[(2 * i, o + 1)] = -db.x;
                jac[(2 * i + 1, o + 1)] = -db.y;
            }
            if self.mode.estimates_focal() {
                let df = projection_jacobian_focal(&p) / FOCAL_SCALE;
                let o = self.focal_offset();
                jac[(2 * i, o)] = -df.x;
                jac[(2 * i + 1, o)] = -df.y;
            }
        }
        jac
    }
}

/// Builds the linear system obtained by clearing the projection denominators:
/// rows `(x_i - c_x) Z_i - f X_i = 0` and the y analogue, with the ballistic
/// parametrisation substituted. Unknown order (X0, Y0, Z0, ux, uy, uz).
fn cleared_system(
    observations: &[(f64, Vector2<f64>)],
    principal: &Vector2<f64>,
    focal: f64,
    g: &Vector3<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = observations.len();
    let mut a = DMatrix::zeros(2 * n, 6);
    let mut rhs = DVector::zeros(2 * n);
    for (i, (t, ob)) in observations.iter().enumerate() {
        let half_t2 = 0.5 * t * t;
        let dx = ob.x - principal.x;
        let dy = ob.y - principal.y;
        // x row: -f X0 + dx Z0 - f t ux + dx t uz = half_t2 (f gx - dx gz)
        a[(2 * i, 0)] = -focal;
        a[(2 * i, 2)] = dx;
        a[(2 * i, 3)] = -focal * t;
        a[(2 * i, 5)] = dx * t;
        rhs[2 * i] = half_t2 * (focal * g.x - dx * g.z);
        // y row
        a[(2 * i + 1, 1)] = -focal;
        a[(2 * i + 1, 2)] = dy;
        a[(2 * i + 1, 4)] = -focal * t;
        a[(2 * i + 1, 5)] = dy * t;
        rhs[2 * i + 1] = half_t2 * (focal * g.y - dy * g.z);
    }
    (a, rhs)
}

fn solve_cleared(
    observations: &[(f64, Vector2<f64>)],
    principal: &Vector2<f64>,
    focal: f64,
    g: &Vector3<f64>,
) -> Result<(Vector3<f64>, Vector3<f64>), BallisticsError> {
    let (a, rhs) = cleared_system(observations, principal, focal, g);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin / smax < 1e-12 {
        return Err(BallisticsError::SingularConfiguration);
    }
    let sol = svd
        .solve(&rhs, 0.0)
        .map_err(|_| BallisticsError::SingularConfiguration)?;
    Ok((
        Vector3::new(sol[0], sol[1], sol[2]),
        Vector3::new(sol[3], sol[4], sol[5]),
    ))
}

/// Exact (b0, u) from exactly three observations with gravity and focal
/// length known: the unique solution of the cleared 6x6 linear system.
pub fn solve_closed_form_6dof(
    track: &ObservationTrack,
    k: &CameraIntrinsics,
    g: &Vector3<f64>,
) -> Result<BallisticParams, BallisticsError> {
    let valid: Vec<_> = track.valid_observations().collect();
    if valid.len() != 3 {
        return Err(BallisticsError::NotExactlyThree(valid.len()));
    }
    let norm = g.norm();
    if (norm - GRAVITY_MAGNITUDE).abs() > 1e-6 {
        return Err(BallisticsError::InvalidGravity(norm));
    }
    let (b0, u) = solve_cleared(&valid, &k.c, k.f, g)?;
    BallisticParams::new(b0, u, *g)
}

/// Documented default initialization: first observation backprojected to an
/// assumed 5 m depth and a finite-difference velocity from the first three
/// backprojected points.
pub(crate) fn default_episode_init(
    observations: &[(f64, Vector2<f64>)],
    principal: &Vector2<f64>,
    focal: f64,
) -> (Vector3<f64>, Vector3<f64>) {
    let k = CameraIntrinsics {
        f: focal,
        c: *principal,
        image_size: None,
    };
    let pts: Vec<Vector3<f64>> = observations
        .iter()
        .take(3)
        .map(|(_, ob)| backproject_ray(ob, &k) * DEFAULT_INIT_DEPTH)
        .collect();
    if pts.is_empty() {
        return (Vector3::new(0.0, 0.0, DEFAULT_INIT_DEPTH), Vector3::zeros());
    }
    let b0 = pts[0];
    let mut u = Vector3::zeros();
    if pts.len() >= 3 {
        let (t0, t1, t2) = (observations[0].0, observations[1].0, observations[2].0);
        u = 0.5 * ((pts[1] - pts[0]) / (t1 - t0) + (pts[2] - pts[1]) / (t2 - t1));
    } else if pts.len() == 2 {
        u = (pts[1] - pts[0]) / (observations[1].0 - observations[0].0);
    }
    (b0, u)
}

/// Recovers trajectory parameters (and optionally the focal length and
/// gravity direction) by minimising the reprojection objective over the
/// mode's unknown set. Units of the result are meters and m/s.
pub fn recover_trajectory(
    track: &ObservationTrack,
    setup: &RecoverySetup,
) -> Result<TrajectoryRecovery, BallisticsError> {
    let mode = setup.mode;
    let valid: Vec<_> = track.valid_observations().collect();
    if valid.len() < mode.min_observations() {
        return Err(BallisticsError::InsufficientObservations {
            mode,
            required: mode.min_observations(),
            got: valid.len(),
        });
    }

    let focal0 = match setup.focal {
        Some(f) if f > 0.0 => f,
        _ if !mode.estimates_focal() => {
            return Err(BallisticsError::MissingInput(mode, "a known focal length"))
        }
        _ => match setup.image_size {
            Some((w, h)) => w.max(h),
            None => {
                return Err(BallisticsError::MissingInput(
                    mode,
                    "a focal initialization or image size",
                ))
            }
        },
    };

    let gravity0 = match setup.gravity {
        Some(g) => {
            if mode.estimates_gravity() {
                // direction init only; rescale to the exact magnitude
                g / g.norm() * GRAVITY_MAGNITUDE
            } else {
                let norm = g.norm();
                if (norm - GRAVITY_MAGNITUDE).abs() > 1e-6 {
                    return Err(BallisticsError::InvalidGravity(norm));
                }
                g
            }
        }
        None if mode.estimates_gravity() => Vector3::new(0.0, GRAVITY_MAGNITUDE, 0.0),
        None => return Err(BallisticsError::MissingInput(mode, "a gravity vector")),
    };

    let problem = TrajectoryProblem {
        times: valid.iter().map(|(t, _)| *t).collect(),
        obs: valid.iter().map(|(_, ob)| *ob).collect(),
        principal: setup.principal,
        mode,
        fixed_gravity: gravity0,
        fixed_focal: focal0,
    };

    // (b0, u) start: caller override, else the cleared linear solve at the
    // initial (g, f), else the documented backprojection default. Heavy
    // observation noise can make a candidate start infeasible (trajectory
    // crossing behind the camera); fall through to the next one.
    let mut candidates: Vec<(Vector3<f64>, Vector3<f64>)> = Vec::new();
    if let Some(p) = &setup.init {
        candidates.push((p.b0, p.u));
    } else {
        if let Ok(linear) = solve_cleared(&valid, &setup.principal, focal0, &gravity0) {
            candidates.push(linear);
        }
        let fallback = default_episode_init(&valid, &setup.principal, focal0);
        candidates.push(fallback);
        candidates.push((fallback.0, Vector3::zeros()));
    }
    let x0 = candidates
        .into_iter()
        .map(|(b0, u)| {
            problem.pack(
                &BallisticParams {
                    b0,
                    u,
                    g: gravity0,
                },
                focal0,
            )
        })
        .find(|x0| problem.cost(x0).is_finite())
        .ok_or(BallisticsError::InfeasibleStart)?;

    let (x, mut report) =
        minimize(&problem, x0, &setup.config).map_err(|_| BallisticsError::InfeasibleStart)?;
    let vars = problem.unpack(&x);
    if mode.estimates_focal() {
        report.fz_ambiguity = focal_depth_flag(&problem, &x);
    }
    Ok(TrajectoryRecovery {
        params: BallisticParams {
            b0: vars.b0,
            u: vars.u,
            g: vars.g,
        },
        focal: mode.estimates_focal().then_some(vars.focal),
        report,
    })
}

/// Normalized curvature of the objective along the focal/depth scaling
/// family. Near zero means the solve returned one point of an ambiguous
/// continuum.
///
/// With a fixed gravity vector (7 DoF) the family is `f -> s f, Z0 -> s Z0,
/// uz -> s uz`, exact only when the motion has no depth component. When the
/// gravity direction is also free (10 DoF) the family extends to a retilted
/// gravity and an overall rescale that restores the 9.81 norm; it preserves
/// every projection exactly, so object-only solves in this mode always sit on
/// an ambiguous family and external scale anchors (such as a human with a
/// bone-length prior) are required to pin f.
fn focal_depth_flag(problem: &TrajectoryProblem, x: &DVector<f64>) -> bool {
    let eqs = problem.normal_equations(x);
    let vars = problem.unpack(x);
    let mut v = DVector::zeros(x.len());
    // d lambda / d s at s = 1 of the norm-restoring rescale
    let c = if problem.mode.estimates_gravity() {
        (vars.g.z / GRAVITY_MAGNITUDE).powi(2)
    } else {
        0.0
    };
    v[0] = -x[0] * c;
    v[1] = -x[1] * c;
    v[2] = x[2] * (1.0 - c);
    v[3] = -x[3] * c;
    v[4] = -x[4] * c;
    v[5] = x[5] * (1.0 - c);
    v[problem.focal_offset()] = x[problem.focal_offset()];
    if problem.mode.estimates_gravity() {
        let o = problem.angle_offset();
        let dg = Vector3::new(-vars.g.x * c, -vars.g.y * c, vars.g.z * (1.0 - c));
        let (dga, dgb) = gravity_angle_jacobian(x[o], x[o + 1]);
        let na = dga.norm_squared();
        let nb = dgb.norm_squared();
        if na > 1e-12 {
            v[o] = dg.dot(&dga) / na;
        }
        if nb > 1e-12 {
            v[o + 1] = dg.dot(&dgb) / nb;
        }
    }
    let norm = v.norm();
    if norm == 0.0 {
        return true;
    }
    v /= norm;
    let curvature = (&eqs.jtj * &v).dot(&v);
    let mut diag_scale = 0.0;
    for i in 0..x.len() {
        diag_scale += eqs.jtj[(i, i)] * v[i] * v[i];
    }
    if diag_scale <= 0.0 {
        return true;
    }
    curvature / diag_scale < FZ_AMBIGUITY_THRESHOLD
}

/// Projects a ground-truth trajectory into an [`ObservationTrack`], optionally
/// degraded with seeded Gaussian pixel noise. Deterministic for a fixed seed;
/// zero noise yields exact projections.
pub fn simulate_track(
    params: &BallisticParams,
    k: &CameraIntrinsics,
    frames: usize,
    frame_rate: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<ObservationTrack, BallisticsError> {
    if !(frame_rate > 0.0) {
        return Err(BallisticsError::InvalidTrack("frame rate must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_sigma.max(0.0))
        .map_err(|e| BallisticsError::InvalidTrack(e.to_string()))?;
    let mut points = Vec::with_capacity(frames);
    let mut indices = Vec::with_capacity(frames);
    for i in 0..frames {
        let t = i as f64 / frame_rate;
        let p = params.position_at(t);
        let proj = project(&p, k).map_err(|_| BallisticsError::ObjectBehindCamera {
            frame: i,
            z: p.z,
        })?;
        let noisy = if noise_sigma > 0.0 {
            Vector2::new(proj.x + normal.sample(&mut rng), proj.y + normal.sample(&mut rng))
        } else {
            proj
        };
        points.push(noisy);
        indices.push(i as i64);
    }
    ObservationTrack::new(points, indices, frame_rate)
}
