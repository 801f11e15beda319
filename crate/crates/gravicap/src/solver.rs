//! Damped nonlinear least-squares core (Levenberg-Marquardt) and the staged
//! scene solve built on top of it.
//!
//! The solver minimizes `||r(x)||^2` through the normal equations
//! `(J^T J + mu * D) dx = -J^T r` with multiplicative damping of the diagonal.
//! Problems can either expose a dense Jacobian or accumulate `J^T J` and
//! `J^T r` directly from sparse residual rows (the scene energy does the
//! latter; see [`crate::energy`]).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::ballistics::{self, DofMode, RecoverySetup};
use crate::energy::{EnergyModel, EnergyOptions, EnergyTerm, Weights};
use crate::scene::{Scene, SceneError, Solution};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("residual vector is not finite at the initial parameters")]
    NonFiniteResidual { params: DVector<f64> },
    #[error("scene error: {0}")]
    Scene(#[from] SceneError),
    #[error("ballistics error during warm start: {0}")]
    WarmStart(#[from] ballistics::BallisticsError),
}

/// How a minimization run terminated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convergence {
    /// `||J^T r||_inf` fell below the gradient tolerance.
    GradientTolerance,
    /// The accepted step became smaller than the step tolerance.
    StepTolerance,
    /// Iteration cap reached; reported, not fatal. The best parameters so far
    /// and the final residual are still returned.
    IterationCap,
    /// Damping grew past its ceiling without finding an acceptable step.
    Stalled,
}

impl Convergence {
    pub fn converged(&self) -> bool {
        matches!(self, Convergence::GradientTolerance | Convergence::StepTolerance)
    }
}

/// Solver configuration: operational mode, energy weights and LM hyperparameters.
#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub mode: DofMode,
    pub weights: Weights,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub initial_damping: f64,
    pub damping_increase: f64,
    pub damping_decrease: f64,
    /// Seed for any stochastic restart; the default strategy is deterministic.
    pub seed: u64,
    /// Record every accepted iterate in the report (tests use this to audit
    /// per-iterate invariants).
    pub keep_iterates: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            mode: DofMode::NineDof,
            weights: Weights::default(),
            max_iterations: 200,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-10,
            initial_damping: 1e-3,
            damping_increase: 10.0,
            damping_decrease: 10.0,
            seed: 0,
            keep_iterates: false,
        }
    }
}

impl SolveConfig {
    pub fn with_mode(mode: DofMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.max_iterations < 1
            || !(self.gradient_tolerance > 0.0)
            || !(self.step_tolerance > 0.0)
            || !(self.initial_damping > 0.0)
        {
            return Err(SceneError::InconsistentScene(
                "solver tolerances must be positive and max_iterations >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One energy term's value at the solution, unweighted and weighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermEnergy {
    pub term: EnergyTerm,
    pub unweighted: f64,
    pub weighted: f64,
}

/// Outcome report of a minimization or scene solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Final objective `||r||^2` (the weighted sum of energies).
    pub objective: f64,
    /// Per-term energies; empty for raw [`minimize`] calls.
    pub term_energies: Vec<TermEnergy>,
    /// Number of accepted steps.
    pub iterations: usize,
    pub status: Convergence,
    /// Raised when the focal length is an unknown and the focal/depth
    /// direction of the normal matrix is near-singular (fronto-parallel
    /// motion makes f and depth jointly unobservable).
    pub fz_ambiguity: bool,
    pub wall_time: std::time::Duration,
    /// `||J^T r||_inf` at the final parameters.
    pub gradient_norm: f64,
    /// Accepted iterates (including the start point) when
    /// [`SolveConfig::keep_iterates`] is set.
    pub iterates: Option<Vec<DVector<f64>>>,
}

/// Normal-equation view of a least-squares problem at a point.
pub struct NormalEqs {
    pub jtj: DMatrix<f64>,
    pub jtr: DVector<f64>,
    pub cost: f64,
}

/// A nonlinear least-squares problem. Implementors provide residuals and a
/// Jacobian; `normal_equations` has a dense default and may be overridden
/// with a sparse accumulation.
pub trait LeastSquares {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;

    fn cost(&self, x: &DVector<f64>) -> f64 {
        self.residuals(x).norm_squared()
    }

    fn normal_equations(&self, x: &DVector<f64>) -> NormalEqs {
        let r = self.residuals(x);
        let j = self.jacobian(x);
        NormalEqs {
            jtj: j.transpose() * &j,
            jtr: j.transpose() * &r,
            cost: r.norm_squared(),
        }
    }
}

struct FnProblem<R, J> {
    residual_fn: R,
    jacobian_fn: J,
}

impl<R, J> LeastSquares for FnProblem<R, J>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.residual_fn)(x)
    }
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.jacobian_fn)(x)
    }
}

/// Minimizes `||r(x)||^2` given residual and Jacobian closures.
pub fn minimize_fn<R, J>(
    residual_fn: R,
    jacobian_fn: J,
    x0: DVector<f64>,
    config: &SolveConfig,
) -> Result<(DVector<f64>, SolveReport), SolverError>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    minimize(
        &FnProblem {
            residual_fn,
            jacobian_fn,
        },
        x0,
        config,
    )
}

const DAMPING_FLOOR: f64 = 1e-15;
const DAMPING_CEILING: f64 = 1e15;

fn now() -> Option<std::time::Instant> {
    // Instant is unavailable on wasm32-unknown-unknown.
    #[cfg(target_arch = "wasm32")]
    {
        None
    }
    #[cfg(not(target_arch = "wasm32"))]
    {
        Some(std::time::Instant::now())
    }
}

fn elapsed(start: Option<std::time::Instant>) -> std::time::Duration {
    start.map(|s| s.elapsed()).unwrap_or_default()
}

/// Levenberg-Marquardt with multiplicative diagonal damping.
///
/// The objective is monotone non-increasing across accepted steps. Rejected
/// trial steps raise the damping and do not move the parameters, so the run
/// is deterministic for identical inputs and configuration.
pub fn minimize<P: LeastSquares>(
    problem: &P,
    x0: DVector<f64>,
    config: &SolveConfig,
) -> Result<(DVector<f64>, SolveReport), SolverError> {
    let start = now();
    let mut x = x0;
    let mut eqs = problem.normal_equations(&x);
    if !eqs.cost.is_finite() {
        return Err(SolverError::NonFiniteResidual { params: x });
    }
    let mut iterates = config.keep_iterates.then(|| vec![x.clone()]);
    let mut mu = config.initial_damping;
    let mut accepted = 0usize;
    let mut status = Convergence::IterationCap;

    for _ in 0..config.max_iterations {
        let grad_norm = eqs.jtr.amax();
        if grad_norm < config.gradient_tolerance {
            status = Convergence::GradientTolerance;
            break;
        }
        // Damped system (J^T J + mu * D) dx = -J^T r with D = diag(J^T J)
        // floored away from zero so unconstrained directions stay solvable.
        let n = x.len();
        let mut damped = eqs.jtj.clone();
        for i in 0..n {
            let d = eqs.jtj[(i, i)].max(1e-12);
            damped[(i, i)] += mu * d;
        }
        let step = match damped.cholesky() {
            Some(chol) => chol.solve(&(-&eqs.jtr)),
            None => {
                mu *= config.damping_increase;
                if mu > DAMPING_CEILING {
                    status = Convergence::Stalled;
                    break;
                }
                continue;
            }
        };
        let trial = &x + &step;
        let trial_cost = problem.cost(&trial);
        if trial_cost.is_finite() && trial_cost < eqs.cost {
            let step_small = step.norm() <= config.step_tolerance * (x.norm() + config.step_tolerance);
            x = trial;
            eqs = problem.normal_equations(&x);
            accepted += 1;
            mu = (mu / config.damping_decrease).max(DAMPING_FLOOR);
            if let Some(hist) = iterates.as_mut() {
                hist.push(x.clone());
            }
            if step_small {
                status = Convergence::StepTolerance;
                break;
            }
        } else {
            mu *= config.damping_increase;
            if mu > DAMPING_CEILING {
                status = Convergence::Stalled;
                break;
            }
        }
    }

    if status == Convergence::IterationCap && eqs.jtr.amax() < config.gradient_tolerance {
        status = Convergence::GradientTolerance;
    }

    let report = SolveReport {
        objective: eqs.cost,
        term_energies: Vec::new(),
        iterations: accepted,
        status,
        fz_ambiguity: false,
        wall_time: elapsed(start),
        gradient_norm: eqs.jtr.amax(),
        iterates,
    };
    Ok((x, report))
}

/// Result of the joint scene optimization.
pub type SceneSolve = (Solution, SolveReport);

/// Runs the joint optimization of all energy terms over a validated scene.
///
/// Warm start: per-episode trajectory-only solves initialize each episode's
/// initial position and velocity (with gravity and focal length at their
/// mode-dependent initial values); bone lengths start from the kinematic
/// poses' own bone lengths; root translations start from the ingested
/// absolute roots when present, else from a depth matching the 2D torso span.
/// The final solve is joint over every unknown simultaneously.
pub fn solve_scene(scene: &Scene, config: &SolveConfig) -> Result<SceneSolve, SolverError> {
    solve_scene_with_options(scene, config, &EnergyOptions::default())
}

/// [`solve_scene`] with explicit assembly options (bone prior table, sample
/// count of the localisation term).
pub fn solve_scene_with_options(
    scene: &Scene,
    config: &SolveConfig,
    options: &EnergyOptions,
) -> Result<SceneSolve, SolverError> {
    let start = now();
    config.validate()?;
    let model = EnergyModel::with_options(scene, &config.weights, config.mode, options)?;
    let mut x0 = model.initial_params()?;

    // Warm start of (b0, u) per episode from the object observations alone,
    // with gravity and focal length held at their mode-dependent start values.
    let mode_known_g = matches!(config.mode, DofMode::SixDof | DofMode::SevenDof);
    for e in 0..scene.episodes.len() {
        let track = scene.episode_track(e)?;
        let setup = RecoverySetup {
            mode: DofMode::SixDof,
            gravity: if mode_known_g {
                Some(scene.known_gravity()?)
            } else {
                // estimating modes start from straight-down gravity
                Some(nalgebra::Vector3::new(0.0, ballistics::GRAVITY_MAGNITUDE, 0.0))
            },
            focal: Some(model.initial_focal()),
            principal: scene.camera.principal,
            image_size: scene.camera.image_size,
            init: None,
            config: SolveConfig {
                mode: DofMode::SixDof,
                max_iterations: 50,
                keep_iterates: false,
                ..config.clone()
            },
        };
        if let Ok(recovery) = ballistics::recover_trajectory(&track, &setup) {
            model.layout().write_episode(&mut x0, e, &recovery.params);
        }
    }

    let (x, mut report) = minimize(&model, x0, config)?;
    report.term_energies = model.term_energies(&x);
    report.fz_ambiguity = model.focal_depth_ambiguity(&x);
    report.wall_time = elapsed(start);
    let solution = model.solution(&x);
    Ok((solution, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quad_problem() -> (
        impl Fn(&DVector<f64>) -> DVector<f64>,
        impl Fn(&DVector<f64>) -> DMatrix<f64>,
        DVector<f64>,
    ) {
        // r = A x - b, an overdetermined linear system
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.5, -2.0, 1.0]);
        let b = DVector::from_row_slice(&[1.0, 0.0, 2.0, -1.0]);
        let sol = (a.transpose() * &a)
            .cholesky()
            .unwrap()
            .solve(&(a.transpose() * &b));
        let a2 = a.clone();
        (
            move |x: &DVector<f64>| &a * x - &b,
            move |_: &DVector<f64>| a2.clone(),
            sol,
        )
    }

    #[test]
    fn linear_problem_converges_in_three_iterations() {
        let (rf, jf, expected) = quad_problem();
        let cfg = SolveConfig::default();
        let (x, report) = minimize_fn(rf, jf, DVector::zeros(2), &cfg).unwrap();
        assert!(report.iterations <= 3, "iterations = {}", report.iterations);
        assert!((x - expected).norm() < 1e-10);
    }

    #[test]
    fn rosenbrock_reaches_unit_minimum() {
        let rf = |x: &DVector<f64>| {
            DVector::from_row_slice(&[1.0 - x[0], 10.0 * (x[1] - x[0] * x[0])])
        };
        let jf = |x: &DVector<f64>| {
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, -20.0 * x[0], 10.0])
        };
        let cfg = SolveConfig::default();
        let (x, report) = minimize_fn(rf, jf, DVector::from_row_slice(&[-1.2, 1.0]), &cfg).unwrap();
        assert!(report.status.converged());
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-6);
        assert_relative_eq!(x[1], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn already_optimal_start_terminates_immediately() {
        let (rf, jf, expected) = quad_problem();
        let cfg = SolveConfig::default();
        let (_, report) = minimize_fn(rf, jf, expected, &cfg).unwrap();
        assert!(report.iterations <= 1);
        assert_eq!(report.status, Convergence::GradientTolerance);
    }

    #[test]
    fn objective_monotone_over_accepted_iterates() {
        let rf = |x: &DVector<f64>| {
            DVector::from_row_slice(&[1.0 - x[0], 10.0 * (x[1] - x[0] * x[0])])
        };
        let jf = |x: &DVector<f64>| {
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, -20.0 * x[0], 10.0])
        };
        let cfg = SolveConfig {
            keep_iterates: true,
            ..SolveConfig::default()
        };
        let (_, report) = minimize_fn(rf, jf, DVector::from_row_slice(&[-1.2, 1.0]), &cfg).unwrap();
        let iterates = report.iterates.unwrap();
        let costs: Vec<f64> = iterates
            .iter()
            .map(|x| rf(x).norm_squared())
            .collect();
        for w in costs.windows(2) {
            assert!(w[1] < w[0] + 1e-15, "objective increased: {w:?}");
        }
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let rf = |x: &DVector<f64>| DVector::from_row_slice(&[(x[0] as f64).sqrt()]);
        let jf = |x: &DVector<f64>| DMatrix::from_row_slice(1, 1, &[0.5 / (x[0] as f64).sqrt()]);
        let cfg = SolveConfig::default();
        let err = minimize_fn(rf, jf, DVector::from_row_slice(&[-1.0]), &cfg).unwrap_err();
        assert!(matches!(err, SolverError::NonFiniteResidual { .. }));
    }

    #[test]
    fn identical_inputs_give_bitwise_identical_results() {
        let rf = |x: &DVector<f64>| {
            DVector::from_row_slice(&[1.0 - x[0], 10.0 * (x[1] - x[0] * x[0])])
        };
        let jf = |x: &DVector<f64>| {
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, -20.0 * x[0], 10.0])
        };
        let cfg = SolveConfig::default();
        let (x1, _) = minimize_fn(rf, jf, DVector::from_row_slice(&[-1.2, 1.0]), &cfg).unwrap();
        let (x2, _) = minimize_fn(rf, jf, DVector::from_row_slice(&[-1.2, 1.0]), &cfg).unwrap();
        assert_eq!(x1.as_slice(), x2.as_slice());
    }
}
