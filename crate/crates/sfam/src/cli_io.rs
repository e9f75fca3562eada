//! File formats, run configuration and the sliding-window orchestration
//! tying camera recovery, shape initialization and the alternating solver
//! together.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::articulated_solver::{
    initialize_shape, reconstruct_window, Diagnostics, SolverConfig,
};
use crate::camera_recovery::{
    assemble_g, recover_camera_poses, recover_q_triplet, select_rank, solve_fk, svd_initialize,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvaluationReport};
use crate::model::{center_frames, MeasurementMatrix, ShapeSequence, Skeleton, SkeletonRaw};

/// Top-level run configuration; mirrors the CLI flags and the `--config`
/// file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Consecutive non-overlapping reconstruction windows of this many
    /// frames; a short final remainder is merged into the previous window.
    pub window_size: usize,
    pub solver: SolverConfig,
    pub tracks_path: PathBuf,
    pub skeleton_path: PathBuf,
    pub ground_truth_path: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            window_size: 200,
            solver: SolverConfig::default(),
            tracks_path: PathBuf::from("tracks.csv"),
            skeleton_path: PathBuf::from("skeleton.toml"),
            ground_truth_path: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 2 {
            return Err(Error::Config(format!(
                "window size must be ≥ 2, got {}",
                self.window_size
            )));
        }
        self.solver.validate()
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.span().map(|s| text[..s.start].lines().count()).unwrap_or(0),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_f64(path: &Path, line: usize, field: &str, raw: &str) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|_| Error::Parse {
        path: path.display().to_string(),
        line,
        message: format!("non-numeric {field} value {raw:?}"),
    })
}

fn parse_usize(path: &Path, line: usize, field: &str, raw: &str) -> Result<usize> {
    raw.trim().parse::<usize>().map_err(|_| Error::Parse {
        path: path.display().to_string(),
        line,
        message: format!("non-integer {field} value {raw:?}"),
    })
}

/// Parses the dense `frame,joint,x,...` observation table common to tracks
/// (2 coordinates) and ground truth (3 coordinates).
fn load_observation_table(path: &Path, coords: usize) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, h)) => h.trim(),
        None => {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: 1,
                message: "empty file".into(),
            })
        }
    };
    let expected_header = match coords {
        2 => "frame,joint,x,y",
        _ => "frame,joint,x,y,z",
    };
    if header != expected_header {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: format!("expected header {expected_header:?}, got {header:?}"),
        });
    }

    let mut rows = Vec::new();
    let mut max_frame = 0usize;
    let mut max_joint = 0usize;
    for (idx, raw_line) in lines {
        let line_no = idx + 1;
        let trimmed = raw_line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 2 + coords {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: line_no,
                message: format!("expected {} fields, got {}", 2 + coords, fields.len()),
            });
        }
        let frame = parse_usize(path, line_no, "frame", fields[0])?;
        let joint = parse_usize(path, line_no, "joint", fields[1])?;
        let mut values = Vec::with_capacity(coords);
        for (c, name) in ["x", "y", "z"].iter().take(coords).enumerate() {
            let v = parse_f64(path, line_no, name, fields[2 + c])?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: line_no,
                    message: format!("non-finite {name} value"),
                });
            }
            values.push(v);
        }
        max_frame = max_frame.max(frame);
        max_joint = max_joint.max(joint);
        rows.push((frame, joint, values));
    }
    if rows.is_empty() {
        return Err(Error::SchemaError(format!(
            "{}: no observations",
            path.display()
        )));
    }

    let t_count = max_frame + 1;
    let n = max_joint + 1;
    if rows.len() != t_count * n {
        return Err(Error::SchemaError(format!(
            "{}: expected dense {t_count}×{n} = {} observations, got {}",
            path.display(),
            t_count * n,
            rows.len()
        )));
    }
    let mut filled = vec![false; t_count * n];
    let mut data = DMatrix::zeros(coords * t_count, n);
    for (frame, joint, values) in rows {
        let slot = frame * n + joint;
        if filled[slot] {
            return Err(Error::SchemaError(format!(
                "{}: duplicate observation for frame {frame}, joint {joint}",
                path.display()
            )));
        }
        filled[slot] = true;
        for (c, v) in values.into_iter().enumerate() {
            data[(coords * frame + c, joint)] = v;
        }
    }
    Ok(data)
}

/// Loads a dense 2D tracks file and registers every frame to its centroid.
pub fn load_tracks(path: &Path) -> Result<MeasurementMatrix> {
    MeasurementMatrix::from_raw(load_observation_table(path, 2)?)
}

/// Writes the registered observations in the tracks format.
pub fn save_tracks(path: &Path, w: &MeasurementMatrix) -> Result<()> {
    let mut out = String::from("frame,joint,x,y\n");
    for t in 0..w.frames() {
        let frame = w.frame(t);
        for j in 0..w.joints() {
            out.push_str(&format!("{t},{j},{},{}\n", frame[(0, j)], frame[(1, j)]));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Loads a 3D joint sequence (`frame,joint,x,y,z`).
pub fn load_shape(path: &Path) -> Result<ShapeSequence> {
    ShapeSequence::new(load_observation_table(path, 3)?)
}

pub fn save_shape(path: &Path, s: &ShapeSequence) -> Result<()> {
    let mut out = String::from("frame,joint,x,y,z\n");
    for t in 0..s.frames() {
        let frame = s.frame(t);
        for j in 0..s.joints() {
            out.push_str(&format!(
                "{t},{j},{},{},{}\n",
                frame[(0, j)],
                frame[(1, j)],
                frame[(2, j)]
            ));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Loads a skeleton document; lengths are normalized to unit sum on load.
pub fn load_skeleton(path: &Path) -> Result<Skeleton> {
    let text = fs::read_to_string(path)?;
    let raw: SkeletonRaw = toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.span().map(|s| text[..s.start].lines().count()).unwrap_or(0),
        message: e.message().to_string(),
    })?;
    Skeleton::try_from(raw)
}

pub fn save_skeleton(path: &Path, skeleton: &Skeleton) -> Result<()> {
    let raw = SkeletonRaw::from(skeleton.clone());
    let text = toml::to_string_pretty(&raw)
        .map_err(|e| Error::SchemaError(format!("skeleton serialization: {e}")))?;
    fs::write(path, text)?;
    Ok(())
}

/// Consecutive non-overlapping windows; a final remainder shorter than 2
/// frames is merged into the previous window.
pub fn partition_windows(frames: usize, window_size: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < frames {
        let len = window_size.min(frames - start);
        out.push((start, len));
        start += len;
    }
    if out.len() > 1 {
        if let Some(&(_, last_len)) = out.last() {
            if last_len < 2 {
                out.pop();
                let (s, l) = out.pop().unwrap();
                out.push((s, l + last_len));
            }
        }
    }
    out
}

fn stage<T>(window: usize, name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Pipeline {
        window,
        stage: name,
        source: Box::new(e),
    })
}

/// Runs camera recovery, shape initialization and the alternating solver on
/// every window, concatenating the per-frame 3D output. Each output frame is
/// centered on its 3D centroid (the translation gauge of registered
/// orthography).
pub fn reconstruct_sequence(
    w: &MeasurementMatrix,
    skeleton: &Skeleton,
    solver: &SolverConfig,
    window_size: usize,
) -> Result<(ShapeSequence, Vec<Diagnostics>)> {
    if window_size < 2 {
        return Err(Error::Config(format!(
            "window size must be ≥ 2, got {window_size}"
        )));
    }
    let windows = partition_windows(w.frames(), window_size);
    let mut data = DMatrix::zeros(3 * w.frames(), w.joints());
    let mut diagnostics = Vec::with_capacity(windows.len());

    for (wi, &(start, len)) in windows.iter().enumerate() {
        let w_win = stage(wi, "window", w.window(start, len))?;
        let k_cap = ((2 * len).min(w.joints()) / 3).max(1);
        let k = solver
            .k
            .unwrap_or_else(|| select_rank(&w_win))
            .clamp(1, k_cap);
        let init = stage(wi, "svd_initialize", svd_initialize(&w_win, k))?;
        let g = assemble_g(&init);
        let (f, _) = stage(wi, "solve_fk", solve_fk(&g, k, solver.seed))?;
        let q = stage(wi, "recover_q_triplet", recover_q_triplet(&f))?;
        let rec = stage(wi, "recover_camera_poses", recover_camera_poses(&init, &q))?;
        let c: Vec<f64> = (0..len).map(|t| rec.coefficients[(t, 0)]).collect();
        let s0 = stage(
            wi,
            "initialize_shape",
            initialize_shape(&w_win, &rec.poses, &c, k),
        )?;
        let (s, diag) = stage(
            wi,
            "reconstruct_window",
            reconstruct_window(&w_win, &rec.poses, skeleton, solver, &s0),
        )?;
        let centered = center_frames(&s);
        data.rows_mut(3 * start, 3 * len).copy_from(centered.data());
        diagnostics.push(diag);
    }
    Ok((ShapeSequence::new(data)?, diagnostics))
}

/// Everything one pipeline run produces.
#[derive(Debug)]
pub struct PipelineOutput {
    pub shape: ShapeSequence,
    pub window_diagnostics: Vec<Diagnostics>,
    pub report: Option<EvaluationReport>,
}

/// Full run: load inputs, reconstruct, optionally evaluate against ground
/// truth, and write all artifacts to the output directory.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let w = load_tracks(&cfg.tracks_path)?;
    let skeleton = load_skeleton(&cfg.skeleton_path)?;
    if skeleton.joint_count() != w.joints() {
        return Err(Error::SchemaError(format!(
            "skeleton has {} joints but tracks have {}",
            skeleton.joint_count(),
            w.joints()
        )));
    }
    let (shape, diagnostics) = reconstruct_sequence(&w, &skeleton, &cfg.solver, cfg.window_size)?;

    let report = match &cfg.ground_truth_path {
        Some(path) => {
            let gt = load_shape(path)?;
            if gt.frames() != shape.frames() || gt.joints() != shape.joints() {
                return Err(Error::SchemaError(format!(
                    "ground truth is {}×{} frames×joints, reconstruction is {}×{}",
                    gt.frames(),
                    gt.joints(),
                    shape.frames(),
                    shape.joints()
                )));
            }
            // both sides in the per-frame-centered gauge
            Some(evaluate(&shape, &center_frames(&gt), &skeleton)?)
        }
        None => None,
    };

    write_artifacts(cfg, &shape, &diagnostics, report.as_ref())?;
    Ok(PipelineOutput {
        shape,
        window_diagnostics: diagnostics,
        report,
    })
}

fn write_artifacts(
    cfg: &RunConfig,
    shape: &ShapeSequence,
    diagnostics: &[Diagnostics],
    report: Option<&EvaluationReport>,
) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir)?;
    save_shape(&cfg.output_dir.join("shape.csv"), shape)?;

    let diag_json = serde_json::to_string_pretty(diagnostics)
        .map_err(|e| Error::SchemaError(format!("diagnostics serialization: {e}")))?;
    fs::write(cfg.output_dir.join("diagnostics.json"), diag_json)?;

    // flat per-iteration table for plotting
    let mut table = String::from("window,iteration,mu,objective,reprojection,bone_std\n");
    for (wi, diag) in diagnostics.iter().enumerate() {
        for rec in &diag.iterations {
            table.push_str(&format!(
                "{wi},{},{},{},{},{}\n",
                rec.iteration, rec.mu, rec.objective, rec.reprojection_error, rec.bone_length_std
            ));
        }
    }
    fs::write(cfg.output_dir.join("convergence.csv"), table)?;

    if let Some(report) = report {
        let json = serde_json::to_string_pretty(report)
            .map_err(|e| Error::SchemaError(format!("report serialization: {e}")))?;
        fs::write(cfg.output_dir.join("report.json"), json)?;
    }
    Ok(())
}

/// Writes a `sigma,e3d` plot-data table.
pub fn save_sweep_table(path: &Path, rows: &[crate::evaluation::SweepRow]) -> Result<()> {
    let mut out = String::from("sigma,e3d\n");
    for row in rows {
        out.push_str(&format!("{},{}\n", row.sigma, row.e3d));
    }
    fs::write(path, out)?;
    Ok(())
}
