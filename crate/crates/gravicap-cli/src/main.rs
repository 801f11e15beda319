//! Command line interface: synthetic scene generation, episode segmentation,
//! the joint solve, evaluation against ground truth, the noise-sensitivity
//! sweep and height estimation.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gravicap::ballistics::DofMode;
use gravicap::energy::{EnergyOptions, Weights};
use gravicap::episodes::{build_multi_episode, detect_switches};
use gravicap::metrics::{compute_metrics, estimate_person_heights, solved_global_poses};
use gravicap::scene::atomic_write;
use gravicap::skeleton::BonePriorTable;
use gravicap::solver::{solve_scene_with_options, SolveConfig};
use gravicap::synth::{generate, noise_sweep, NoiseSpec, SceneSpec};
use gravicap::{Scene, Solution};

#[derive(Parser)]
#[command(
    name = "gravicap",
    about = "Metric 3D human-object reconstruction from monocular ballistic observations",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene file with embedded ground truth.
    Synth(SynthArgs),
    /// Detect free-flight episode windows in a scene's 2D object track.
    Segment(SegmentArgs),
    /// Run the joint optimization over a scene and write a solution file.
    Solve(SolveArgs),
    /// Evaluate a solution against a scene's ground-truth block.
    Eval(EvalArgs),
    /// Noise-sensitivity sweep: root MPE per (family, mode, sigma) cell.
    Sweep(SweepArgs),
    /// Estimate subject heights from a solution and the observed 2D joints.
    Height(HeightArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    SingleEpisode,
    Chain,
    TwoPerson,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene family to generate.
    #[arg(long, value_enum, default_value = "single-episode")]
    preset: Preset,
    /// Episodes (chain / two-person presets).
    #[arg(long, default_value_t = 3)]
    episodes: usize,
    /// 3D pose noise on the kinematic inputs, millimeters per axis.
    #[arg(long, default_value_t = 0.0)]
    noise_pose_mm: f64,
    /// 2D object track noise, pixels per axis.
    #[arg(long, default_value_t = 0.0)]
    noise_track_px: f64,
    /// 2D joint noise, pixels per axis.
    #[arg(long, default_value_t = 0.0)]
    noise_joints2d_px: f64,
    /// Jitter of the ingested absolute roots, millimeters per axis.
    #[arg(long, default_value_t = 0.0)]
    noise_root_mm: f64,
    /// Gravity tilt towards the camera axis, radians.
    #[arg(long, default_value_t = 0.0)]
    tilt_alpha: f64,
    /// Gravity tilt about the camera axis, radians.
    #[arg(long, default_value_t = 0.0)]
    tilt_beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Full scene spec as JSON (overrides the preset flags).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Sliding window length in frames.
    #[arg(long, default_value_t = gravicap::episodes::DEFAULT_WINDOW)]
    window: usize,
    /// Velocity-magnitude change threshold, pixels per frame.
    #[arg(long, default_value_t = gravicap::episodes::DEFAULT_VELOCITY_THRESHOLD)]
    threshold: f64,
    /// Optional CSV output (start_frame,end_frame per window).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Operational mode: 6dof, 7dof, 9dof or 10dof.
    #[arg(long, default_value = "9dof", value_parser = parse_mode)]
    mode: DofMode,
    /// Energy weights as k=v pairs (keys b, c, m, s, co, bl), e.g.
    /// "b=1.0,c=0.1,m=0.5,s=0.01,co=0.1,bl=0.1".
    #[arg(long, default_value = "default", value_parser = parse_weights)]
    weights: Weights,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    /// Gradient tolerance of the solver.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Bone prior table (JSON map bone name -> meters); bundled defaults
    /// otherwise.
    #[arg(long)]
    prior: Option<PathBuf>,
    /// Samples per object-to-torso vector in the localisation term.
    #[arg(long, default_value_t = gravicap::energy::DEFAULT_EM_SAMPLES)]
    em_samples: usize,
    #[arg(long)]
    out: PathBuf,
    /// Optional per-frame trajectory CSV for external plotting.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    solution: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    /// Optional metrics CSV output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Seeds per cell.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value = "6dof,7dof,10dof")]
    modes: String,
    #[arg(long, default_value = "10,30,50,100")]
    sigmas_pose: String,
    #[arg(long, default_value = "10,30,50,100")]
    sigmas_track: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HeightArgs {
    #[arg(long)]
    solution: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    /// Optional CSV output (person,height_m).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<DofMode, String> {
    DofMode::parse(s).ok_or_else(|| format!("unknown mode '{s}' (expected 6dof, 7dof, 9dof or 10dof)"))
}

fn parse_weights(s: &str) -> Result<Weights, String> {
    let mut w = Weights::default();
    if s == "default" {
        return Ok(w);
    }
    for pair in s.split(',') {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| format!("weight '{pair}' is not k=v"))?;
        let value: f64 = value
            .parse()
            .map_err(|_| format!("weight value '{value}' is not a number"))?;
        match key.trim() {
            "b" => w.lambda_b = value,
            "c" => w.lambda_c = value,
            "m" => w.lambda_m = value,
            "s" => w.lambda_s = value,
            "co" => w.lambda_co = value,
            "bl" => w.lambda_bl = value,
            other => return Err(format!("unknown weight key '{other}'")),
        }
    }
    Ok(w)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => synth(args),
        Command::Segment(args) => segment(args),
        Command::Solve(args) => solve(args),
        Command::Eval(args) => eval(args),
        Command::Sweep(args) => sweep(args),
        Command::Height(args) => height(args),
    }
}

fn synth(args: SynthArgs) -> Result<()> {
    let spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading spec {}", path.display()))?;
            serde_json::from_str::<SceneSpec>(&text).context("parsing scene spec")?
        }
        None => {
            let mut spec = match args.preset {
                Preset::SingleEpisode => SceneSpec::single_episode(args.seed),
                Preset::Chain => SceneSpec::chain(args.episodes, args.seed),
                Preset::TwoPerson => SceneSpec::two_person(args.episodes, args.seed),
            };
            spec = spec.with_noise(NoiseSpec {
                pose_mm: args.noise_pose_mm,
                track_px: args.noise_track_px,
                joints2d_px: args.noise_joints2d_px,
                root_mm: args.noise_root_mm,
            });
            if args.tilt_alpha != 0.0 || args.tilt_beta != 0.0 {
                spec = spec.with_gravity_tilt(args.tilt_alpha, args.tilt_beta);
            }
            spec
        }
    };
    let scene = generate(&spec)?;
    scene.save(&args.out)?;
    println!(
        "wrote {} ({} frames, {} persons, {} episodes)",
        args.out.display(),
        scene.n_frames(),
        scene.persons.len(),
        scene.episodes.len()
    );
    Ok(())
}

fn segment(args: SegmentArgs) -> Result<()> {
    let scene = Scene::load(&args.scene)?;
    let switches = detect_switches(&scene.object, args.window, args.threshold)?;
    let segmentation = build_multi_episode(&scene.object, &switches, &scene.contacts)?;
    println!("switch frames: {:?}", segmentation.switch_frames);
    for (i, w) in segmentation.windows.iter().enumerate() {
        println!("episode {i}: frames [{}, {}]", w.start, w.end);
    }
    if let Some(out) = args.out {
        let mut csv = String::from("episode,start_frame,end_frame\n");
        for (i, w) in segmentation.windows.iter().enumerate() {
            csv.push_str(&format!("{i},{},{}\n", w.start, w.end));
        }
        atomic_write(&out, csv.as_bytes())?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn solve(args: SolveArgs) -> Result<()> {
    let scene = Scene::load(&args.scene)?;
    let prior = match &args.prior {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading prior table {}", path.display()))?;
            BonePriorTable::from_json(&text, &gravicap::SkeletonTopology::mpii16())
                .map_err(|e| anyhow!("prior table: {e}"))?
        }
        None => BonePriorTable::default_table(),
    };
    let options = EnergyOptions {
        em_samples: args.em_samples,
        bone_prior: prior,
    };
    let config = SolveConfig {
        mode: args.mode,
        weights: args.weights,
        max_iterations: args.max_iters,
        gradient_tolerance: args.tol,
        seed: args.seed,
        ..SolveConfig::default()
    };
    let (solution, report) = solve_scene_with_options(&scene, &config, &options)?;
    solution.save(&args.out)?;
    println!(
        "mode {} | objective {:.6e} | {} iterations | {:?} | {:.1} ms",
        args.mode,
        report.objective,
        report.iterations,
        report.status,
        report.wall_time.as_secs_f64() * 1000.0
    );
    for t in &report.term_energies {
        println!("  {:>5}: unweighted {:14.6e}  weighted {:14.6e}", t.term, t.unweighted, t.weighted);
    }
    if report.fz_ambiguity {
        println!("  note: focal/depth direction is near-singular (f/Z ambiguity)");
    }
    println!(
        "gravity [{:.4}, {:.4}, {:.4}] m/s^2 | focal {:.2} px",
        solution.gravity.x, solution.gravity.y, solution.gravity.z, solution.focal
    );
    println!("wrote {}", args.out.display());
    if let Some(plot) = args.plot {
        write_plot_csv(&plot, &scene, &solution)?;
        println!("wrote {}", plot.display());
    }
    Ok(())
}

/// Per-frame trajectories for external plotting: observed 2D object, solved
/// 3D object and its reprojection, plus each person's solved root.
fn write_plot_csv(path: &PathBuf, scene: &Scene, solution: &Solution) -> Result<()> {
    let mut csv = String::from("frame,obs_x_px,obs_y_px,object_x_m,object_y_m,object_z_m,reproj_x_px,reproj_y_px");
    for p in 0..solution.persons.len() {
        csv.push_str(&format!(",root{p}_x_m,root{p}_y_m,root{p}_z_m"));
    }
    csv.push('\n');
    let c = scene.camera.principal;
    for frame in 0..scene.n_frames() {
        let obs = scene.object[frame];
        let episode = scene.episodes.iter().position(|w| w.contains(frame));
        let mut row = format!("{frame}");
        match obs {
            Some(o) => row.push_str(&format!(",{},{}", o.x, o.y)),
            None => row.push_str(",,"),
        }
        match episode {
            Some(e) => {
                let t = (frame - scene.episodes[e].start) as f64 / scene.frame_rate;
                let b = solution.episodes[e].position_at(t);
                row.push_str(&format!(",{},{},{}", b.x, b.y, b.z));
                if b.z > 0.0 {
                    let u = solution.focal * b.x / b.z + c.x;
                    let v = solution.focal * b.y / b.z + c.y;
                    row.push_str(&format!(",{u},{v}"));
                } else {
                    row.push_str(",,");
                }
            }
            None => row.push_str(",,,,,"),
        }
        for person in &solution.persons {
            let r = person.root_translation[frame];
            row.push_str(&format!(",{},{},{}", r.x, r.y, r.z));
        }
        row.push('\n');
        csv.push_str(&row);
    }
    atomic_write(path, csv.as_bytes())?;
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let scene = Scene::load(&args.scene)?;
    let solution = Solution::load(&args.solution)?;
    let report = compute_metrics(&solution, &scene)?;
    println!("metric                         value");
    println!("root MPE             {:12.3} mm", report.mpe_root_mm);
    println!("MPJPE (root-rel.)    {:12.3} mm", report.mpjpe_mm);
    println!("bone length MAE      {:12.3} mm", report.bone_mae_mm);
    println!("gravity cosine       {:12.6}", report.gravity_cosine);
    println!("object MPE           {:12.3} mm", report.object_mpe_mm);
    println!("e_smooth             {:12.3} mm/frame^2", report.e_smooth);
    if let Some(out) = args.out {
        let csv = format!(
            "mpe_root_mm,mpjpe_mm,bone_mae_mm,gravity_cosine,object_mpe_mm,e_smooth_mm_per_frame2\n{},{},{},{},{},{}\n",
            report.mpe_root_mm,
            report.mpjpe_mm,
            report.bone_mae_mm,
            report.gravity_cosine,
            report.object_mpe_mm,
            report.e_smooth
        );
        atomic_write(&out, csv.as_bytes())?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let parse_list = |s: &str| -> Result<Vec<f64>> {
        s.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| anyhow!("bad sigma '{v}'")))
            .collect()
    };
    let modes: Vec<DofMode> = args
        .modes
        .split(',')
        .map(|m| parse_mode(m.trim()).map_err(|e| anyhow!(e)))
        .collect::<Result<_>>()?;
    let sigmas_pose = parse_list(&args.sigmas_pose)?;
    let sigmas_track = parse_list(&args.sigmas_track)?;
    if args.seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let seeds: Vec<u64> = (0..args.seeds).collect();
    let base = SceneSpec::single_episode(0);
    let rows = noise_sweep(&base, &sigmas_pose, &sigmas_track, &modes, &seeds)?;
    // wide layout: one row per (family, mode), sigma = 0 baseline first
    let mut csv = String::from("family,mode");
    if let Some(first) = rows.first() {
        for (sigma, _) in &first.cells {
            csv.push_str(&format!(",mpe_mm_sigma_{sigma}"));
        }
    }
    csv.push('\n');
    for row in &rows {
        csv.push_str(&format!("{},{}", row.family.name(), row.mode));
        for (_, mpe) in &row.cells {
            csv.push_str(&format!(",{mpe:.3}"));
        }
        csv.push('\n');
    }
    atomic_write(&args.out, csv.as_bytes())?;
    println!(
        "wrote {} ({} rows x {} sigma cells, {} seeds per cell)",
        args.out.display(),
        rows.len(),
        rows.first().map(|r| r.cells.len()).unwrap_or(0),
        args.seeds
    );
    Ok(())
}

fn height(args: HeightArgs) -> Result<()> {
    let scene = Scene::load(&args.scene)?;
    let solution = Solution::load(&args.solution)?;
    if solution.persons.len() != scene.persons.len() {
        bail!(
            "solution has {} persons, scene has {}",
            solution.persons.len(),
            scene.persons.len()
        );
    }
    // sanity: the solution must reproduce valid global poses
    let _ = solved_global_poses(&solution, &scene)?;
    let heights = estimate_person_heights(&solution, &scene);
    let mut csv = String::from("person,height_m\n");
    for (p, h) in heights.iter().enumerate() {
        match h {
            Some(h) => {
                println!("person {p}: estimated height {h:.3} m");
                csv.push_str(&format!("{p},{h:.4}\n"));
            }
            None => {
                println!("person {p}: no upright frames with the required joints");
                csv.push_str(&format!("{p},\n"));
            }
        }
    }
    if let Some(out) = args.out {
        atomic_write(&out, csv.as_bytes())?;
        println!("wrote {}", out.display());
    }
    Ok(())
}
