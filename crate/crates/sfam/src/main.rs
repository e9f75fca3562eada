use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sfam::cli_io::{
    load_shape, load_skeleton, run_pipeline, save_shape, save_skeleton, save_sweep_table,
    save_tracks, RunConfig,
};
use sfam::error::Result;
use sfam::evaluation::{evaluate, noise_sweep};
use sfam::model::center_frames;
use sfam::synth::{
    add_2d_noise, generate_articulated_sequence, human_like_spec, orthographic_project,
    perturb_bone_lengths,
};

#[derive(Parser)]
#[command(name = "sfam", version, about = "3D articulated structure from 2D point tracks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Solver and windowing flags shared by every reconstruction-driven command;
/// each one overrides the corresponding config-file field when set.
#[derive(Args, Clone)]
struct SolverFlags {
    /// Seed for all randomized steps
    #[arg(long)]
    seed: Option<u64>,
    /// Reconstruction window length in frames
    #[arg(long)]
    window: Option<usize>,
    /// Bone-length prior weight
    #[arg(long)]
    beta: Option<f64>,
    /// Shape basis cardinality K (auto-selected when omitted)
    #[arg(long)]
    rank: Option<usize>,
}

impl SolverFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(seed) = self.seed {
            cfg.solver.seed = seed;
        }
        if let Some(window) = self.window {
            cfg.window_size = window;
        }
        if let Some(beta) = self.beta {
            cfg.solver.beta = beta;
        }
        if let Some(rank) = self.rank {
            cfg.solver.k = Some(rank);
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct 3D joint positions from a 2D tracks file
    Reconstruct {
        /// 2D tracks CSV (frame,joint,x,y)
        #[arg(long)]
        tracks: PathBuf,
        /// Skeleton TOML (joints + [[bones]])
        #[arg(long)]
        skeleton: PathBuf,
        /// Optional ground-truth 3D CSV for a metrics report
        #[arg(long)]
        gt: Option<PathBuf>,
        /// TOML run configuration; flags override its fields
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Generate a synthetic articulated scene (tracks, skeleton, ground truth)
    Synth {
        /// Number of frames
        #[arg(long, default_value_t = 100)]
        frames: usize,
        /// Standard deviation of 2D Gaussian track noise, in image units
        #[arg(long, default_value_t = 0.0)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "scene")]
        out: PathBuf,
    },
    /// Compare a reconstructed 3D sequence against ground truth
    Eval {
        /// Estimated 3D CSV (frame,joint,x,y,z)
        #[arg(long)]
        estimate: PathBuf,
        /// Ground-truth 3D CSV
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        skeleton: PathBuf,
        /// Where to write report.json
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
    /// Reconstruction error across 2D noise levels on a synthetic scene
    NoiseSweep {
        /// Comma-separated noise standard deviations in image units
        #[arg(long, value_delimiter = ',', default_value = "0,5,10,20")]
        sigmas: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        frames: usize,
        #[arg(long, default_value = "noise_sweep.csv")]
        out: PathBuf,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Reconstruction error across bone-length perturbation levels
    BoneSweep {
        /// Comma-separated length perturbation standard deviations
        /// (fractions of the unit-sum normalized lengths)
        #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.15,0.3")]
        sigmas: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        frames: usize,
        #[arg(long, default_value = "bone_sweep.csv")]
        out: PathBuf,
        #[command(flatten)]
        solver: SolverFlags,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Reconstruct {
            tracks,
            skeleton,
            gt,
            config,
            out,
            solver,
        } => {
            let mut cfg = match config {
                Some(path) => RunConfig::from_toml_file(&path)?,
                None => RunConfig::default(),
            };
            cfg.tracks_path = tracks;
            cfg.skeleton_path = skeleton;
            if gt.is_some() {
                cfg.ground_truth_path = gt;
            }
            cfg.output_dir = out;
            solver.apply(&mut cfg);

            let output = run_pipeline(&cfg)?;
            let converged = output.window_diagnostics.iter().filter(|d| d.converged).count();
            println!(
                "reconstructed {} frames × {} joints in {} window(s) ({} converged) -> {}",
                output.shape.frames(),
                output.shape.joints(),
                output.window_diagnostics.len(),
                converged,
                cfg.output_dir.display()
            );
            if let Some(report) = &output.report {
                println!(
                    "E3D = {:.4} image units, normalized e3D = {:.6}",
                    report.e3d_mm, report.e3d_normalized
                );
            }
            Ok(())
        }
        Command::Synth {
            frames,
            noise_sigma,
            seed,
            out,
        } => {
            let spec = human_like_spec(frames, seed);
            let (shape, cameras) = generate_articulated_sequence(&spec)?;
            let clean = orthographic_project(&shape, &cameras)?;
            let tracks = add_2d_noise(&clean, noise_sigma, seed.wrapping_add(1))?;

            std::fs::create_dir_all(&out)?;
            save_tracks(&out.join("tracks.csv"), &tracks)?;
            save_skeleton(&out.join("skeleton.toml"), &spec.skeleton)?;
            save_shape(&out.join("gt.csv"), &shape)?;
            println!(
                "wrote {frames}-frame scene ({} joints, noise sigma {noise_sigma}) -> {}",
                spec.skeleton.joint_count(),
                out.display()
            );
            Ok(())
        }
        Command::Eval {
            estimate,
            gt,
            skeleton,
            out,
        } => {
            let est = center_frames(&load_shape(&estimate)?);
            let gt_shape = center_frames(&load_shape(&gt)?);
            let skel = load_skeleton(&skeleton)?;
            let report = evaluate(&est, &gt_shape, &skel)?;
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| sfam::Error::SchemaError(format!("report serialization: {e}")))?;
            std::fs::write(&out, &json)?;
            println!(
                "E3D = {:.4} image units, normalized e3D = {:.6} -> {}",
                report.e3d_mm,
                report.e3d_normalized,
                out.display()
            );
            Ok(())
        }
        Command::NoiseSweep {
            sigmas,
            frames,
            out,
            solver,
        } => {
            let seed = solver.seed.unwrap_or(0);
            let spec = human_like_spec(frames, seed);
            let (shape, cameras) = generate_articulated_sequence(&spec)?;
            let clean = orthographic_project(&shape, &cameras)?;
            let gt = center_frames(&shape);

            let mut cfg = RunConfig::default();
            solver.apply(&mut cfg);
            let rows = noise_sweep(&sigmas, |sigma| {
                let w = add_2d_noise(&clean, sigma, seed.wrapping_add(1))?;
                let (rec, _) =
                    sfam::cli_io::reconstruct_sequence(&w, &spec.skeleton, &cfg.solver, cfg.window_size)?;
                Ok(evaluate(&rec, &gt, &spec.skeleton)?.e3d_mm)
            })?;
            for row in &rows {
                println!("sigma {:>8.3}: E3D = {:.4}", row.sigma, row.e3d);
            }
            save_sweep_table(&out, &rows)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::BoneSweep {
            sigmas,
            frames,
            out,
            solver,
        } => {
            let seed = solver.seed.unwrap_or(0);
            let spec = human_like_spec(frames, seed);
            let (shape, cameras) = generate_articulated_sequence(&spec)?;
            let w = orthographic_project(&shape, &cameras)?;
            let gt = center_frames(&shape);

            let mut cfg = RunConfig::default();
            solver.apply(&mut cfg);
            let rows = noise_sweep(&sigmas, |sigma| {
                let lengths = perturb_bone_lengths(&spec.skeleton.lengths(), sigma, seed.wrapping_add(2))?;
                let skel = spec.skeleton.with_lengths(&lengths)?;
                let (rec, _) =
                    sfam::cli_io::reconstruct_sequence(&w, &skel, &cfg.solver, cfg.window_size)?;
                Ok(evaluate(&rec, &gt, &spec.skeleton)?.e3d_mm)
            })?;
            for row in &rows {
                println!("sigma {:>8.3}: E3D = {:.4}", row.sigma, row.e3d);
            }
            save_sweep_table(&out, &rows)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}
