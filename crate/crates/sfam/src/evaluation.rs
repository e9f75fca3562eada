//! Metrics and experiment analysis: rigid alignment, mean 3D error, its
//! variance-normalized counterpart, bone-length statistics and sweeps.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{bone_distances, ShapeSequence, Skeleton};

/// Rigid transform G(x) = R·x + t aligning an estimate to ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub reflection_used: bool,
}

impl AlignmentTransform {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// Full metric record of one reconstruction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub e3d_mm: f64,
    pub e3d_normalized: f64,
    pub per_bone_mean: Vec<f64>,
    pub per_bone_std: Vec<f64>,
    pub per_frame_error: Vec<f64>,
    pub reflection_used: bool,
}

fn joint_vec(s: &ShapeSequence, t: usize, j: usize) -> Vector3<f64> {
    Vector3::new(
        s.data()[(3 * t, j)],
        s.data()[(3 * t + 1, j)],
        s.data()[(3 * t + 2, j)],
    )
}

/// Single orthogonal-Procrustes transform over all frames jointly.
pub fn rigid_align(
    s_est: &ShapeSequence,
    s_gt: &ShapeSequence,
    allow_reflection: bool,
) -> Result<AlignmentTransform> {
    if s_est.frames() != s_gt.frames() || s_est.joints() != s_gt.joints() {
        return Err(Error::Shape(format!(
            "alignment needs identical dimensions: {}×{} vs {}×{}",
            s_est.frames(),
            s_est.joints(),
            s_gt.frames(),
            s_gt.joints()
        )));
    }
    let t_count = s_est.frames();
    let n = s_est.joints();
    let total = (t_count * n) as f64;

    let mut mean_est = Vector3::zeros();
    let mut mean_gt = Vector3::zeros();
    for t in 0..t_count {
        for j in 0..n {
            mean_est += joint_vec(s_est, t, j);
            mean_gt += joint_vec(s_gt, t, j);
        }
    }
    mean_est /= total;
    mean_gt /= total;

    let mut spread = 0.0f64;
    let mut h = Matrix3::zeros();
    for t in 0..t_count {
        for j in 0..n {
            let p = joint_vec(s_est, t, j) - mean_est;
            let q = joint_vec(s_gt, t, j) - mean_gt;
            spread = spread.max(p.norm()).max(q.norm());
            h += p * q.transpose();
        }
    }
    if spread < 1e-12 {
        return Err(Error::AlignmentUndefined(
            "all points coincident; rotation is unconstrained".into(),
        ));
    }

    let svd = h.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let v = v_t.transpose();

    let build = |d3: f64| -> AlignmentTransform {
        let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d3));
        let rotation = v * d * u.transpose();
        AlignmentTransform {
            rotation,
            translation: mean_gt - rotation * mean_est,
            reflection_used: rotation.determinant() < 0.0,
        }
    };

    let unconstrained = build(1.0);
    let rotation_only = if unconstrained.rotation.determinant() < 0.0 {
        build(-1.0)
    } else {
        unconstrained.clone()
    };
    if !allow_reflection {
        return Ok(rotation_only);
    }
    // better of the two determinant branches
    let res = |tr: &AlignmentTransform| -> f64 {
        let mut acc = 0.0;
        for t in 0..t_count {
            for j in 0..n {
                acc += (joint_vec(s_gt, t, j) - tr.apply(&joint_vec(s_est, t, j))).norm_squared();
            }
        }
        acc
    };
    if res(&unconstrained) <= res(&rotation_only) {
        Ok(unconstrained)
    } else {
        Ok(rotation_only)
    }
}

/// Mean per-joint Euclidean distance after alignment (mm when inputs are mm).
pub fn error_3d(
    s_est: &ShapeSequence,
    s_gt: &ShapeSequence,
    transform: &AlignmentTransform,
) -> Result<f64> {
    if s_est.frames() != s_gt.frames() || s_est.joints() != s_gt.joints() {
        return Err(Error::Shape("dimension mismatch".into()));
    }
    let t_count = s_est.frames();
    let n = s_est.joints();
    let mut acc = 0.0;
    for t in 0..t_count {
        for j in 0..n {
            acc += (joint_vec(s_gt, t, j) - transform.apply(&joint_vec(s_est, t, j))).norm();
        }
    }
    Ok(acc / (t_count * n) as f64)
}

/// Per-frame joint errors after alignment.
pub fn per_frame_error(
    s_est: &ShapeSequence,
    s_gt: &ShapeSequence,
    transform: &AlignmentTransform,
) -> Result<Vec<f64>> {
    let t_count = s_est.frames();
    let n = s_est.joints();
    let mut out = Vec::with_capacity(t_count);
    for t in 0..t_count {
        let mut acc = 0.0;
        for j in 0..n {
            acc += (joint_vec(s_gt, t, j) - transform.apply(&joint_vec(s_est, t, j))).norm();
        }
        out.push(acc / n as f64);
    }
    Ok(out)
}

/// Variance-normalized mean squared 3D error. The normalizer σ is the mean
/// over frames and axes of the per-frame coordinate variance of the
/// ground-truth cloud.
pub fn normalized_error_3d(
    s_est: &ShapeSequence,
    s_gt: &ShapeSequence,
    transform: &AlignmentTransform,
) -> Result<f64> {
    if s_est.frames() != s_gt.frames() || s_est.joints() != s_gt.joints() {
        return Err(Error::Shape("dimension mismatch".into()));
    }
    let t_count = s_est.frames();
    let n = s_est.joints();
    let nf = n as f64;

    let mut sigma = 0.0;
    for t in 0..t_count {
        for axis in 0..3 {
            let mut mean = 0.0;
            for j in 0..n {
                mean += s_gt.data()[(3 * t + axis, j)];
            }
            mean /= nf;
            let mut var = 0.0;
            for j in 0..n {
                let d = s_gt.data()[(3 * t + axis, j)] - mean;
                var += d * d;
            }
            sigma += var / nf;
        }
    }
    sigma /= 3.0 * t_count as f64;
    if sigma < 1e-12 {
        return Err(Error::DegenerateNormalization(format!(
            "per-axis variance {sigma:.3e} too small"
        )));
    }

    let mut acc = 0.0;
    for t in 0..t_count {
        for j in 0..n {
            acc += (joint_vec(s_gt, t, j) - transform.apply(&joint_vec(s_est, t, j)))
                .norm_squared();
        }
    }
    Ok(acc / (sigma * (t_count * n) as f64))
}

/// Per-bone mean and population standard deviation of distances over frames.
pub fn bone_length_stats(s: &ShapeSequence, skeleton: &Skeleton) -> Result<(Vec<f64>, Vec<f64>)> {
    let b_count = skeleton.bone_count();
    let t_count = s.frames();
    let mut sums = vec![0.0; b_count];
    let mut sq_sums = vec![0.0; b_count];
    for t in 0..t_count {
        let d = bone_distances(&s.frame(t), skeleton)?;
        for (b, v) in d.iter().enumerate() {
            sums[b] += v;
            sq_sums[b] += v * v;
        }
    }
    let tf = t_count as f64;
    let means: Vec<f64> = sums.iter().map(|s| s / tf).collect();
    let stds: Vec<f64> = means
        .iter()
        .zip(&sq_sums)
        .map(|(m, sq)| (sq / tf - m * m).max(0.0).sqrt())
        .collect();
    Ok((means, stds))
}

/// Builds the full metric record for one estimate/ground-truth pair.
pub fn evaluate(
    s_est: &ShapeSequence,
    s_gt: &ShapeSequence,
    skeleton: &Skeleton,
) -> Result<EvaluationReport> {
    let transform = rigid_align(s_est, s_gt, true)?;
    let (per_bone_mean, per_bone_std) = bone_length_stats(s_est, skeleton)?;
    Ok(EvaluationReport {
        e3d_mm: error_3d(s_est, s_gt, &transform)?,
        e3d_normalized: normalized_error_3d(s_est, s_gt, &transform)?,
        per_bone_mean,
        per_bone_std,
        per_frame_error: per_frame_error(s_est, s_gt, &transform)?,
        reflection_used: transform.reflection_used,
    })
}

/// One row of a robustness sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub e3d: f64,
}

/// Runs one full reconstruct-and-evaluate pass per sigma, rows sorted by
/// sigma; solver failures propagate with the offending sigma recorded.
pub fn noise_sweep<F>(sigmas: &[f64], mut run: F) -> Result<Vec<SweepRow>>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut sorted = sigmas.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut rows = Vec::with_capacity(sorted.len());
    for sigma in sorted {
        let e3d = run(sigma).map_err(|e| match e {
            Error::SolverAbort { message, diagnostics } => Error::SolverAbort {
                message: format!("sigma {sigma}: {message}"),
                diagnostics,
            },
            other => other,
        })?;
        rows.push(SweepRow { sigma, e3d });
    }
    Ok(rows)
}
