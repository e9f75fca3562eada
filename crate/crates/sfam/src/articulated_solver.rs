//! The core alternating optimization: a fixed-point continuation step on the
//! low-rank shape subproblem and a Levenberg–Marquardt step on the
//! bone-length prior subproblem, iterated until the shape stabilizes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    bone_distances, rearrange_shape_inverse, CameraPoses, MeasurementMatrix, ShapeSequence,
    Skeleton,
};

/// Parameters of the alternating solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Weight of the bone-length prior.
    pub beta: f64,
    /// Initial nuclear-norm threshold scale.
    pub mu0: f64,
    /// Geometric decay of the threshold per outer iteration.
    pub rho: f64,
    /// Gradient step length of the shape subproblem.
    pub tau: f64,
    /// Basis cardinality; `None` selects it from singular-value energy.
    pub k: Option<usize>,
    /// Outer iteration cap.
    pub outer_max: usize,
    /// Relative Frobenius change of the shape that stops the outer loop.
    pub outer_tol: f64,
    /// Levenberg–Marquardt iterations per outer step.
    pub lm_max_inner: usize,
    /// Initial Levenberg–Marquardt damping.
    pub lm_lambda0: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            beta: 1.5,
            mu0: 1.0,
            rho: 0.25,
            tau: 0.2,
            k: None,
            outer_max: 100,
            outer_tol: 1e-5,
            lm_max_inner: 20,
            lm_lambda0: 1e-3,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) {
            return Err(Error::Config(format!("beta must be ≥ 0, got {}", self.beta)));
        }
        if !(self.mu0 > 0.0) {
            return Err(Error::Config(format!("mu0 must be > 0, got {}", self.mu0)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!(
                "rho must be in (0, 1), got {}",
                self.rho
            )));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.outer_max == 0 || self.lm_max_inner == 0 {
            return Err(Error::Config("iteration caps must be positive".into()));
        }
        Ok(())
    }
}

/// The auxiliary structure variable of the bone-prior subproblem; same 3T×N
/// layout as [`ShapeSequence`].
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryShape {
    data: DMatrix<f64>,
    frames: usize,
    joints: usize,
}

impl AuxiliaryShape {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        let (rows, joints) = data.shape();
        if rows == 0 || rows % 3 != 0 {
            return Err(Error::Shape(format!(
                "auxiliary shape row count must be a positive multiple of 3, got {rows}"
            )));
        }
        Ok(Self {
            frames: rows / 3,
            joints,
            data,
        })
    }

    pub fn from_shape(s: &ShapeSequence) -> Self {
        Self {
            data: s.data().clone(),
            frames: s.frames(),
            joints: s.joints(),
        }
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn frame(&self, t: usize) -> DMatrix<f64> {
        self.data.rows(3 * t, 3).into_owned()
    }
}

/// Global structure scale multiplying the normalized bone lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleEstimate(f64);

impl ScaleEstimate {
    pub fn new(s: f64) -> Result<Self> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::DegenerateStructure(format!(
                "structure scale must be positive and finite, got {s}"
            )));
        }
        Ok(Self(s))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// Per-iteration scalars of the outer loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub mu: f64,
    /// Combined objective: μ‖S#‖_* + (β/2)E_BL(A) + ½‖W−RS‖²_F + ½‖A−S‖²_F.
    pub objective: f64,
    /// ‖W − RS‖_F.
    pub reprojection_error: f64,
    /// Mean over bones of the per-bone length standard deviation.
    pub bone_length_std: f64,
    /// ‖S_new − S_old‖_F / ‖S_old‖_F.
    pub relative_change: f64,
}

/// Full diagnostics of one window reconstruction.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct Diagnostics {
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    pub scale: f64,
    /// Frames whose 2D observations are collinear (second singular value of
    /// the registered frame below 1e-9); flagged, not repaired.
    pub degenerate_frames: Vec<usize>,
    pub final_reprojection_relative: f64,
}

/// Minimum-norm rank-3K shape fit of W = RS by alternating least squares on
/// the coefficient and basis factors of the rearranged shape.
///
/// The coefficient matrix starts from the recovered dominant column, with
/// higher columns seeded by cosine modulation to break the rank-1 symmetry.
pub fn initialize_shape(
    w: &MeasurementMatrix,
    cameras: &CameraPoses,
    dominant_coefficients: &[f64],
    k: usize,
) -> Result<ShapeSequence> {
    let t_count = w.frames();
    let n = w.joints();
    if cameras.frames() != t_count || dominant_coefficients.len() != t_count {
        return Err(Error::Shape(format!(
            "frame mismatch: W has {t_count}, cameras {}, coefficients {}",
            cameras.frames(),
            dominant_coefficients.len()
        )));
    }
    if k == 0 {
        return Err(Error::Config("basis cardinality must be ≥ 1".into()));
    }

    // coefficient init: dominant column as recovered, extras cosine-modulated
    let c_scale = {
        let m = dominant_coefficients
            .iter()
            .map(|c| c.abs())
            .sum::<f64>()
            / t_count as f64;
        if m > 1e-12 {
            m
        } else {
            1.0
        }
    };
    let mut c = DMatrix::zeros(t_count, k);
    for t in 0..t_count {
        let c0 = if dominant_coefficients[t].abs() > 1e-12 {
            dominant_coefficients[t]
        } else {
            c_scale
        };
        c[(t, 0)] = c0;
        for j in 1..k {
            c[(t, j)] = c0
                * 0.3
                * (std::f64::consts::PI * j as f64 * (t as f64 + 0.5) / t_count as f64).cos();
        }
    }

    let w_norm = w.data().norm().max(f64::MIN_POSITIVE);
    let mut b_sharp = DMatrix::zeros(k, 3 * n);
    let mut last_res = f64::INFINITY;
    for _ in 0..200 {
        b_sharp = solve_basis_given_coefficients(w, cameras, &c)?;
        c = solve_coefficients_given_basis(w, cameras, &b_sharp)?;
        let s = shape_from_factors(&c, &b_sharp)?;
        let res = (w.data() - cameras.project(&s)?).norm() / w_norm;
        if last_res - res < 1e-12 {
            break;
        }
        last_res = res;
    }
    shape_from_factors(&c, &b_sharp)
}

fn shape_from_factors(c: &DMatrix<f64>, b_sharp: &DMatrix<f64>) -> Result<ShapeSequence> {
    let s_sharp = c * b_sharp;
    ShapeSequence::new(rearrange_shape_inverse(&s_sharp)?)
}

/// Per-joint damped least squares for the basis given fixed coefficients.
fn solve_basis_given_coefficients(
    w: &MeasurementMatrix,
    cameras: &CameraPoses,
    c: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let t_count = w.frames();
    let n = w.joints();
    let k = c.ncols();
    let d = 3 * k;

    // M = R(C ⊗ I₃): rows 2t..2t+2, columns [k*3 .. k*3+3) = c_tk · R_t
    let mut m = DMatrix::zeros(2 * t_count, d);
    for t in 0..t_count {
        let r = &cameras.blocks()[t];
        for kk in 0..k {
            for row in 0..2 {
                for col in 0..3 {
                    m[(2 * t + row, 3 * kk + col)] = c[(t, kk)] * r[(row, col)];
                }
            }
        }
    }
    let normal = m.transpose() * &m;
    let rhs = m.transpose() * w.data();
    let x = solve_spd_with_fallback(&normal, &rhs)?;

    // x is 3K×N with per-basis (x, y, z) blocks; rearrange to K×3N
    let mut b_sharp = DMatrix::zeros(k, 3 * n);
    for kk in 0..k {
        for dd in 0..3 {
            for j in 0..n {
                b_sharp[(kk, dd * n + j)] = x[(3 * kk + dd, j)];
            }
        }
    }
    Ok(b_sharp)
}

/// Per-frame damped least squares for the coefficients given a fixed basis.
fn solve_coefficients_given_basis(
    w: &MeasurementMatrix,
    cameras: &CameraPoses,
    b_sharp: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let t_count = w.frames();
    let n = w.joints();
    let k = b_sharp.nrows();

    // per-basis 3×N slices
    let mut basis = Vec::with_capacity(k);
    for kk in 0..k {
        let mut b = DMatrix::zeros(3, n);
        for dd in 0..3 {
            for j in 0..n {
                b[(dd, j)] = b_sharp[(kk, dd * n + j)];
            }
        }
        basis.push(b);
    }

    let mut c = DMatrix::zeros(t_count, k);
    for t in 0..t_count {
        let r = &cameras.blocks()[t];
        let mut design = DMatrix::zeros(2 * n, k);
        for (kk, b) in basis.iter().enumerate() {
            let proj = r * b;
            for j in 0..n {
                design[(2 * j, kk)] = proj[(0, j)];
                design[(2 * j + 1, kk)] = proj[(1, j)];
            }
        }
        let mut target = DVector::zeros(2 * n);
        let frame = w.frame(t);
        for j in 0..n {
            target[2 * j] = frame[(0, j)];
            target[2 * j + 1] = frame[(1, j)];
        }
        let normal = design.transpose() * &design;
        let rhs = design.transpose() * target;
        let sol = solve_spd_with_fallback(&normal, &DMatrix::from_column_slice(k, 1, rhs.as_slice()))?;
        for kk in 0..k {
            c[(t, kk)] = sol[(kk, 0)];
        }
    }
    Ok(c)
}

/// Cholesky solve of a (near-)SPD normal system, with Tikhonov damping 1e-8
/// escalating on failure.
fn solve_spd_with_fallback(normal: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = normal.nrows();
    let scale = (normal.trace() / d as f64).max(f64::MIN_POSITIVE);
    if let Some(chol) = normal.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    let mut damping = 1e-8 * scale;
    for _ in 0..12 {
        let mut damped = normal.clone();
        for i in 0..d {
            damped[(i, i)] += damping;
        }
        if let Some(chol) = damped.cholesky() {
            return Ok(chol.solve(rhs));
        }
        damping *= 10.0;
    }
    Err(Error::Numeric("normal equations not solvable".into()))
}

/// Mean over frames of the summed bone distances of S; makes s·L_b an
/// image-unit target length.
pub fn estimate_scale(s: &ShapeSequence, skeleton: &Skeleton) -> Result<ScaleEstimate> {
    let mut total = 0.0;
    for t in 0..s.frames() {
        let d = bone_distances(&s.frame(t), skeleton)?;
        total += d.iter().sum::<f64>();
    }
    ScaleEstimate::new(total / s.frames() as f64)
}

/// Σ_t Σ_b (D_b^t − s·L_b)².
pub fn bone_energy(a: &AuxiliaryShape, skeleton: &Skeleton, s: ScaleEstimate) -> Result<f64> {
    let lengths = skeleton.lengths();
    let mut e = 0.0;
    for t in 0..a.frames() {
        let d = bone_distances(&a.frame(t), skeleton)?;
        for (b, dist) in d.iter().enumerate() {
            let diff = dist - s.value() * lengths[b];
            e += diff * diff;
        }
    }
    Ok(e)
}

/// Stacked residuals whose squared 2-norm equals the bone-prior subproblem
/// objective: BT bone residuals √(β/2)·(D_b^t − s·L_b), then 3TN proximal
/// residuals √(1/2)·(A − S), frame-major.
pub fn residual_vector(
    a: &AuxiliaryShape,
    s: &ShapeSequence,
    skeleton: &Skeleton,
    cfg: &SolverConfig,
    scale: ScaleEstimate,
) -> Result<DVector<f64>> {
    let t_count = a.frames();
    let n = a.joints();
    if s.frames() != t_count || s.joints() != n {
        return Err(Error::Shape("auxiliary/shape dimension mismatch".into()));
    }
    let b_count = skeleton.bone_count();
    let lengths = skeleton.lengths();
    let bone_w = (cfg.beta / 2.0).sqrt();
    let prox_w = 0.5f64.sqrt();

    let mut out = DVector::zeros(b_count * t_count + 3 * t_count * n);
    let mut idx = 0;
    for t in 0..t_count {
        let d = bone_distances(&a.frame(t), skeleton)?;
        for (b, dist) in d.iter().enumerate() {
            out[idx] = bone_w * (dist - scale.value() * lengths[b]);
            idx += 1;
        }
    }
    for t in 0..t_count {
        for dd in 0..3 {
            for j in 0..n {
                out[idx] = prox_w * (a.data()[(3 * t + dd, j)] - s.data()[(3 * t + dd, j)]);
                idx += 1;
            }
        }
    }
    Ok(out)
}

/// The subproblem objective (β/2)E_BL(A) + ½‖A − S‖²_F for one frame.
fn frame_cost(
    x: &DVector<f64>,
    s_frame: &DVector<f64>,
    skeleton: &Skeleton,
    beta: f64,
    scale: f64,
) -> f64 {
    let lengths = skeleton.lengths();
    let mut cost = 0.0;
    for (b, bone) in skeleton.bones().iter().enumerate() {
        let (pa, pc) = (3 * bone.parent, 3 * bone.child);
        let dx = x[pa] - x[pc];
        let dy = x[pa + 1] - x[pc + 1];
        let dz = x[pa + 2] - x[pc + 2];
        let dist = (dx * dx + dy * dy + dz * dz).sqrt();
        let diff = dist - scale * lengths[b];
        cost += beta / 2.0 * diff * diff;
    }
    cost + 0.5 * (x - s_frame).norm_squared()
}

/// Levenberg–Marquardt on the bone-prior subproblem. The bone residuals of a
/// frame touch only that frame's joints and the proximal rows are diagonal,
/// so the damped normal equations decouple per frame.
pub fn lm_solve_a(
    s: &ShapeSequence,
    skeleton: &Skeleton,
    cfg: &SolverConfig,
    scale: ScaleEstimate,
    a_init: Option<&AuxiliaryShape>,
) -> Result<AuxiliaryShape> {
    let t_count = s.frames();
    let n = s.joints();
    let beta = cfg.beta;
    let lengths = skeleton.lengths();
    let mut out = match a_init {
        Some(a) => {
            if a.frames() != t_count || a.joints() != n {
                return Err(Error::Shape("auxiliary init dimension mismatch".into()));
            }
            a.data().clone()
        }
        None => s.data().clone(),
    };

    for t in 0..t_count {
        // frame unknowns as per-joint (x, y, z) blocks
        let mut x = DVector::zeros(3 * n);
        let mut s_frame = DVector::zeros(3 * n);
        for j in 0..n {
            for dd in 0..3 {
                x[3 * j + dd] = out[(3 * t + dd, j)];
                s_frame[3 * j + dd] = s.data()[(3 * t + dd, j)];
            }
        }

        let mut lambda = cfg.lm_lambda0;
        let mut cost = frame_cost(&x, &s_frame, skeleton, beta, scale.value());
        for _ in 0..cfg.lm_max_inner {
            // assemble JᵀJ and JᵀF in place
            let mut jtj = DMatrix::zeros(3 * n, 3 * n);
            for i in 0..3 * n {
                jtj[(i, i)] = 0.5;
            }
            let mut jtf = (&x - &s_frame) * 0.5;
            for (b, bone) in skeleton.bones().iter().enumerate() {
                let (pa, pc) = (3 * bone.parent, 3 * bone.child);
                let u = nalgebra::Vector3::new(
                    x[pa] - x[pc],
                    x[pa + 1] - x[pc + 1],
                    x[pa + 2] - x[pc + 2],
                );
                let dist = u.norm();
                let diff = dist - scale.value() * lengths[b];
                if dist < 1e-12 {
                    continue; // direction undefined; residual has no gradient here
                }
                let dir = u / dist;
                let w = beta / 2.0;
                for r in 0..3 {
                    jtf[pa + r] += w * diff * dir[r];
                    jtf[pc + r] -= w * diff * dir[r];
                    for cidx in 0..3 {
                        let v = w * dir[r] * dir[cidx];
                        jtj[(pa + r, pa + cidx)] += v;
                        jtj[(pc + r, pc + cidx)] += v;
                        jtj[(pa + r, pc + cidx)] -= v;
                        jtj[(pc + r, pa + cidx)] -= v;
                    }
                }
            }
            if jtf.iter().any(|v| !v.is_finite()) || jtj.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("non-finite Jacobian in LM step".into()));
            }

            // damped solve with internal λ escalation on failure/rejection
            let mut stepped = false;
            for _ in 0..12 {
                let mut damped = jtj.clone();
                for i in 0..3 * n {
                    damped[(i, i)] += lambda;
                }
                let delta = match damped.cholesky() {
                    Some(chol) => chol.solve(&(-&jtf)),
                    None => {
                        lambda *= 10.0;
                        continue;
                    }
                };
                let cand = &x + &delta;
                let cand_cost = frame_cost(&cand, &s_frame, skeleton, beta, scale.value());
                if cand_cost <= cost {
                    x = cand;
                    cost = cand_cost;
                    lambda = (lambda / 10.0).max(1e-15);
                    stepped = delta.norm() >= 1e-10 * (1.0 + x.norm());
                    if !stepped {
                        stepped = false; // converged: step too small
                    } else {
                        stepped = true;
                    }
                    break;
                }
                lambda *= 10.0;
            }
            if !stepped {
                break;
            }
        }

        for j in 0..n {
            for dd in 0..3 {
                out[(3 * t + dd, j)] = x[3 * j + dd];
            }
        }
    }
    AuxiliaryShape::new(out)
}

/// Gradient of ½(‖W − RS‖²_F + ‖A − S‖²_F) with respect to the rearranged
/// shape, returned in the T×3N layout.
pub fn fpc_gradient(
    s: &ShapeSequence,
    a: &AuxiliaryShape,
    w: &MeasurementMatrix,
    cameras: &CameraPoses,
) -> Result<DMatrix<f64>> {
    let t_count = s.frames();
    let n = s.joints();
    if a.frames() != t_count || a.joints() != n || w.frames() != t_count || w.joints() != n {
        return Err(Error::Shape("gradient input dimension mismatch".into()));
    }
    if cameras.frames() != t_count {
        return Err(Error::Shape("camera count mismatch".into()));
    }
    let mut grad = DMatrix::zeros(t_count, 3 * n);
    for t in 0..t_count {
        let r = &cameras.blocks()[t];
        let s_t = s.frame(t);
        let g_t = r.transpose() * (r * &s_t - w.frame(t)) + (&s_t - a.frame(t));
        for dd in 0..3 {
            for j in 0..n {
                grad[(t, dd * n + j)] = g_t[(dd, j)];
            }
        }
    }
    Ok(grad)
}

/// Matrix shrinkage: soft-thresholds the singular values of Y by ν.
pub fn shrinkage(y: &DMatrix<f64>, nu: f64) -> Result<DMatrix<f64>> {
    if !(nu >= 0.0) {
        return Err(Error::Config(format!("shrinkage threshold must be ≥ 0, got {nu}")));
    }
    if nu == 0.0 {
        return Ok(y.clone());
    }
    let svd = y.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested Vᵀ");
    let r = svd.singular_values.len();
    let mut out = DMatrix::zeros(y.nrows(), y.ncols());
    for i in 0..r {
        let s = (svd.singular_values[i] - nu).max(0.0);
        if s > 0.0 {
            out += u.column(i) * v_t.row(i) * s;
        }
    }
    Ok(out)
}

/// Nuclear norm: sum of singular values.
pub fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.iter().sum()
}

fn mean_bone_std(s: &ShapeSequence, skeleton: &Skeleton) -> Result<f64> {
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
    let mut total = 0.0;
    for b in 0..b_count {
        let mean = sums[b] / tf;
        let var = (sq_sums[b] / tf - mean * mean).max(0.0);
        total += var.sqrt();
    }
    Ok(total / b_count as f64)
}

fn detect_degenerate_frames(w: &MeasurementMatrix) -> Vec<usize> {
    let mut out = Vec::new();
    for t in 0..w.frames() {
        let svals = w.frame(t).svd(false, false).singular_values;
        if svals.len() < 2 || svals[1] < 1e-9 {
            out.push(t);
        }
    }
    out
}

/// Runs the alternating loop from an initial shape until the relative shape
/// change drops below `outer_tol` or the iteration cap is reached.
pub fn reconstruct_window(
    w: &MeasurementMatrix,
    cameras: &CameraPoses,
    skeleton: &Skeleton,
    cfg: &SolverConfig,
    s0: &ShapeSequence,
) -> Result<(ShapeSequence, Diagnostics)> {
    cfg.validate()?;
    if skeleton.joint_count() != w.joints() {
        return Err(Error::SkeletonMismatch(format!(
            "skeleton has {} joints, measurements have {}",
            skeleton.joint_count(),
            w.joints()
        )));
    }
    let scale = estimate_scale(s0, skeleton)?;
    let mut diag = Diagnostics {
        scale: scale.value(),
        degenerate_frames: detect_degenerate_frames(w),
        ..Default::default()
    };

    let w_norm = w.data().norm().max(f64::MIN_POSITIVE);
    let mut s = s0.clone();
    let mut a = AuxiliaryShape::from_shape(&s);
    let mut best_objective = f64::INFINITY;

    for j in 0..cfg.outer_max {
        let mu = cfg.mu0 * cfg.rho.powi(j as i32);

        a = lm_solve_a(&s, skeleton, cfg, scale, Some(&a))?;
        let grad = fpc_gradient(&s, &a, w, cameras)?;
        let y = s.rearranged() - grad * cfg.tau;
        let s_new_sharp = shrinkage(&y, cfg.tau * mu)?;
        let s_new = ShapeSequence::from_rearranged(&s_new_sharp)?;

        let old_norm = s.data().norm().max(f64::MIN_POSITIVE);
        let rel_change = (s_new.data() - s.data()).norm() / old_norm;
        s = s_new;

        let reproj = (w.data() - cameras.project(&s)?).norm();
        let prox = (a.data() - s.data()).norm_squared();
        let objective = mu * nuclear_norm(&s.rearranged())
            + cfg.beta / 2.0 * bone_energy(&a, skeleton, scale)?
            + 0.5 * reproj * reproj
            + 0.5 * prox;
        diag.iterations.push(IterationRecord {
            iteration: j,
            mu,
            objective,
            reprojection_error: reproj,
            bone_length_std: mean_bone_std(&s, skeleton)?,
            relative_change: rel_change,
        });

        best_objective = best_objective.min(objective);
        if objective > 10.0 * best_objective && j > 2 {
            diag.final_reprojection_relative = reproj / w_norm;
            return Err(Error::SolverAbort {
                message: format!(
                    "objective diverged at iteration {j}: {objective:.6e} vs best {best_objective:.6e}"
                ),
                diagnostics: Box::new(diag),
            });
        }
        if rel_change < cfg.outer_tol {
            diag.converged = true;
            break;
        }
    }

    diag.final_reprojection_relative =
        (w.data() - cameras.project(&s)?).norm() / w_norm;
    Ok((s, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera_recovery::{
        assemble_g, recover_camera_poses, recover_q_triplet, solve_fk, svd_initialize,
    };
    use crate::model::{rearrange_shape, Bone};
    use approx::assert_relative_eq;
    use nalgebra::Matrix2x3;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn chain_skeleton(n: usize) -> Skeleton {
        let bones = (0..n - 1)
            .map(|i| Bone { parent: i, child: i + 1, length: 1.0 })
            .collect();
        Skeleton::new(n, bones).unwrap()
    }

    fn random_shape(rng: &mut StdRng, t: usize, n: usize) -> ShapeSequence {
        ShapeSequence::new(DMatrix::from_fn(3 * t, n, |_, _| rng.gen_range(-2.0..2.0))).unwrap()
    }

    #[test]
    fn estimate_scale_constant_and_mean() {
        let skel = chain_skeleton(2);
        // one bone of length 5 in both frames
        let data = DMatrix::from_row_slice(
            6,
            2,
            &[0.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 0.0],
        );
        let s = ShapeSequence::new(data).unwrap();
        assert_relative_eq!(estimate_scale(&s, &skel).unwrap().value(), 5.0);

        let data = DMatrix::from_row_slice(
            6,
            2,
            &[0.0, 4.0, 0.0, 0.0, 0.0, 0.0, 0.0, 6.0, 0.0, 0.0, 0.0, 0.0],
        );
        let s = ShapeSequence::new(data).unwrap();
        assert_relative_eq!(estimate_scale(&s, &skel).unwrap().value(), 5.0);
    }

    #[test]
    fn estimate_scale_matches_double_loop_oracle() {
        let mut rng = StdRng::seed_from_u64(23);
        let skel = chain_skeleton(5);
        let s = random_shape(&mut rng, 4, 5);
        let mut total = 0.0;
        for t in 0..4 {
            let f = s.frame(t);
            for b in skel.bones() {
                let mut sq = 0.0;
                for d in 0..3 {
                    let diff = f[(d, b.parent)] - f[(d, b.child)];
                    sq += diff * diff;
                }
                total += sq.sqrt();
            }
        }
        assert_relative_eq!(
            estimate_scale(&s, &skel).unwrap().value(),
            total / 4.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn bone_energy_cases() {
        let skel = chain_skeleton(2);
        let scale = ScaleEstimate::new(1.0).unwrap();
        // D = 1 = s·L everywhere → zero energy
        let data = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let a = AuxiliaryShape::new(data).unwrap();
        assert_relative_eq!(bone_energy(&a, &skel, scale).unwrap(), 0.0);

        // D = 2, s·L = 1 → 1.0
        let data = DMatrix::from_row_slice(3, 2, &[0.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        let a = AuxiliaryShape::new(data).unwrap();
        assert_relative_eq!(bone_energy(&a, &skel, scale).unwrap(), 1.0);
    }

    #[test]
    fn bone_energy_matches_brute_force() {
        let mut rng = StdRng::seed_from_u64(29);
        let skel = chain_skeleton(6);
        let s = random_shape(&mut rng, 5, 6);
        let a = AuxiliaryShape::from_shape(&s);
        let scale = ScaleEstimate::new(2.5).unwrap();
        let mut expected = 0.0;
        for t in 0..5 {
            let d = bone_distances(&a.frame(t), &skel).unwrap();
            for (b, bone) in skel.bones().iter().enumerate() {
                let _ = bone;
                let diff = d[b] - 2.5 * skel.lengths()[b];
                expected += diff * diff;
            }
        }
        assert_relative_eq!(
            bone_energy(&a, &skel, scale).unwrap(),
            expected,
            max_relative = 1e-12
        );
    }

    #[test]
    fn residual_vector_zero_at_satisfied_constraints() {
        let skel = chain_skeleton(2);
        let cfg = SolverConfig::default();
        let data = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let s = ShapeSequence::new(data).unwrap();
        let a = AuxiliaryShape::from_shape(&s);
        let scale = ScaleEstimate::new(1.0).unwrap();
        let r = residual_vector(&a, &s, &skel, &cfg, scale).unwrap();
        assert!(r.norm() < 1e-14);
    }

    #[test]
    fn residual_vector_beta_zero_annihilates_bone_terms() {
        let mut rng = StdRng::seed_from_u64(31);
        let skel = chain_skeleton(4);
        let s = random_shape(&mut rng, 3, 4);
        let a = AuxiliaryShape::from_shape(&random_shape(&mut rng, 3, 4));
        let cfg = SolverConfig { beta: 0.0, ..Default::default() };
        let scale = ScaleEstimate::new(1.0).unwrap();
        let r = residual_vector(&a, &s, &skel, &cfg, scale).unwrap();
        let bt = skel.bone_count() * 3;
        for i in 0..bt {
            assert_eq!(r[i], 0.0);
        }
    }

    #[test]
    fn residual_norm_equals_objective() {
        let mut rng = StdRng::seed_from_u64(37);
        let skel = chain_skeleton(5);
        let s = random_shape(&mut rng, 4, 5);
        let a = AuxiliaryShape::from_shape(&random_shape(&mut rng, 4, 5));
        let cfg = SolverConfig::default();
        let scale = ScaleEstimate::new(1.7).unwrap();
        let r = residual_vector(&a, &s, &skel, &cfg, scale).unwrap();
        let objective = cfg.beta / 2.0 * bone_energy(&a, &skel, scale).unwrap()
            + 0.5 * (a.data() - s.data()).norm_squared();
        assert_relative_eq!(r.norm_squared(), objective, max_relative = 1e-12);
    }

    #[test]
    fn lm_beta_zero_returns_s() {
        let mut rng = StdRng::seed_from_u64(41);
        let skel = chain_skeleton(4);
        let s = random_shape(&mut rng, 3, 4);
        let cfg = SolverConfig { beta: 0.0, ..Default::default() };
        let scale = ScaleEstimate::new(1.0).unwrap();
        let a = lm_solve_a(&s, &skel, &cfg, scale, None).unwrap();
        assert_eq!(a.data(), s.data());
    }

    #[test]
    fn lm_at_global_minimum_stays_put() {
        let skel = chain_skeleton(3);
        // chain with both bones at exactly s·L = 0.5
        let data = DMatrix::from_row_slice(3, 3, &[0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let s = ShapeSequence::new(data).unwrap();
        let cfg = SolverConfig::default();
        let scale = ScaleEstimate::new(1.0).unwrap();
        let a = lm_solve_a(&s, &skel, &cfg, scale, None).unwrap();
        let obj = cfg.beta / 2.0 * bone_energy(&a, &skel, scale).unwrap()
            + 0.5 * (a.data() - s.data()).norm_squared();
        assert!(obj < 1e-12);
    }

    #[test]
    fn lm_single_bone_matches_golden_section_oracle() {
        // one bone along x, D0 = 2, target s·L = 1, β = 1.5: the minimizer
        // keeps both joints on the segment axis; parameterize by the
        // half-distance r and search the 1-D objective directly
        let skel = chain_skeleton(2);
        let data = DMatrix::from_row_slice(3, 2, &[-1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let s = ShapeSequence::new(data).unwrap();
        let cfg = SolverConfig { lm_max_inner: 200, ..Default::default() };
        let scale = ScaleEstimate::new(1.0).unwrap();
        let a = lm_solve_a(&s, &skel, &cfg, scale, None).unwrap();

        // golden-section on f(r) = β/2 (2r − 1)² + ½·2(r − 1)²
        let f = |r: f64| 1.5 / 2.0 * (2.0 * r - 1.0).powi(2) + (r - 1.0).powi(2);
        let (mut lo, mut hi) = (0.0f64, 2.0f64);
        let phi = (5.0f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let m1 = hi - phi * (hi - lo);
            let m2 = lo + phi * (hi - lo);
            if f(m1) < f(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let r_opt = (lo + hi) / 2.0;
        let half_dist = (a.data()[(0, 1)] - a.data()[(0, 0)]) / 2.0;
        assert_relative_eq!(half_dist, r_opt, epsilon = 1e-6);
        // off-axis coordinates stay zero
        for row in 1..3 {
            for j in 0..2 {
                assert!(a.data()[(row, j)].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lm_never_increases_objective() {
        let mut rng = StdRng::seed_from_u64(43);
        let skel = chain_skeleton(6);
        let cfg = SolverConfig::default();
        for _ in 0..50 {
            let s = random_shape(&mut rng, 2, 6);
            let a0 = AuxiliaryShape::from_shape(&random_shape(&mut rng, 2, 6));
            let scale = ScaleEstimate::new(rng.gen_range(0.5..3.0)).unwrap();
            let obj = |a: &AuxiliaryShape| {
                cfg.beta / 2.0 * bone_energy(a, &skel, scale).unwrap()
                    + 0.5 * (a.data() - s.data()).norm_squared()
            };
            let before = obj(&a0);
            let a = lm_solve_a(&s, &skel, &cfg, scale, Some(&a0)).unwrap();
            let after = obj(&a);
            assert!(after <= before + 1e-12, "{after} > {before}");
        }
    }

    #[test]
    fn fpc_gradient_zero_at_stationary_point() {
        let mut rng = StdRng::seed_from_u64(47);
        let s = random_shape(&mut rng, 3, 5);
        let blocks: Vec<Matrix2x3<f64>> = (0..3)
            .map(|_| Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0))
            .collect();
        let cameras = CameraPoses::new(blocks).unwrap();
        // W = RS exactly; register via raw constructor on projected data
        let w_raw = cameras.project(&s).unwrap();
        // centroid registration shifts W; shift S accordingly to keep W = RS
        let mut s_c = s.data().clone();
        for t in 0..3 {
            let frame = s_c.rows(3 * t, 3).into_owned();
            let n = frame.ncols() as f64;
            for d in 0..3 {
                let mean = frame.row(d).sum() / n;
                for j in 0..frame.ncols() {
                    s_c[(3 * t + d, j)] -= mean;
                }
            }
        }
        let s = ShapeSequence::new(s_c).unwrap();
        let w = MeasurementMatrix::from_raw(w_raw).unwrap();
        let a = AuxiliaryShape::from_shape(&s);
        let g = fpc_gradient(&s, &a, &w, &cameras).unwrap();
        assert!(g.norm() < 1e-10, "gradient norm {}", g.norm());
    }

    #[test]
    fn fpc_gradient_matches_central_differences() {
        let mut rng = StdRng::seed_from_u64(53);
        for _ in 0..20 {
            let t_count = 2;
            let n = 4;
            let s = random_shape(&mut rng, t_count, n);
            let a = AuxiliaryShape::from_shape(&random_shape(&mut rng, t_count, n));
            let raw = DMatrix::from_fn(2 * t_count, n, |_, _| rng.gen_range(-1.0..1.0));
            let w = MeasurementMatrix::from_raw(raw).unwrap();
            let blocks: Vec<Matrix2x3<f64>> = (0..t_count)
                .map(|t| {
                    let angle = 0.3 * t as f64 + rng.gen_range(-0.1..0.1);
                    Matrix2x3::new(
                        angle.cos(), 0.0, angle.sin(),
                        0.0, 1.0, 0.0,
                    )
                })
                .collect();
            let cameras = CameraPoses::new(blocks).unwrap();

            let objective = |s_sharp: &DMatrix<f64>| -> f64 {
                let s_m = ShapeSequence::from_rearranged(s_sharp).unwrap();
                let reproj = (w.data() - cameras.project(&s_m).unwrap()).norm_squared();
                let prox = (a.data() - s_m.data()).norm_squared();
                0.5 * (reproj + prox)
            };

            let grad = fpc_gradient(&s, &a, &w, &cameras).unwrap();
            let s_sharp = s.rearranged();
            let h = 1e-6;
            for _ in 0..10 {
                let i = rng.gen_range(0..t_count);
                let j = rng.gen_range(0..3 * n);
                let mut plus = s_sharp.clone();
                plus[(i, j)] += h;
                let mut minus = s_sharp.clone();
                minus[(i, j)] -= h;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let g = grad[(i, j)];
                let denom = fd.abs().max(g.abs()).max(1e-6);
                assert!(
                    (fd - g).abs() / denom < 1e-4,
                    "finite difference {fd} vs gradient {g}"
                );
            }
        }
    }

    #[test]
    fn fpc_gradient_without_cameras_is_proximal() {
        // R = 0 blocks are not valid CameraPoses; check the decoupling
        // algebraically instead: gradient minus data term equals S − A
        let mut rng = StdRng::seed_from_u64(59);
        let s = random_shape(&mut rng, 2, 3);
        let a = AuxiliaryShape::from_shape(&random_shape(&mut rng, 2, 3));
        let blocks: Vec<Matrix2x3<f64>> = (0..2)
            .map(|_| Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0))
            .collect();
        let cameras = CameraPoses::new(blocks).unwrap();
        let raw = DMatrix::from_fn(4, 3, |_, _| rng.gen_range(-1.0..1.0));
        let w = MeasurementMatrix::from_raw(raw).unwrap();
        let grad = fpc_gradient(&s, &a, &w, &cameras).unwrap();
        // subtract the data-term part computed independently
        let mut expected = DMatrix::zeros(2, 9);
        for t in 0..2 {
            let r = &cameras.blocks()[t];
            let data_part = r.transpose() * (r * s.frame(t) - w.frame(t));
            let prox_part = s.frame(t) - a.frame(t);
            let total = data_part + prox_part;
            for d in 0..3 {
                for j in 0..3 {
                    expected[(t, d * 3 + j)] = total[(d, j)];
                }
            }
        }
        assert_relative_eq!(grad, expected, epsilon = 1e-12);
    }

    #[test]
    fn shrinkage_identity_and_diagonal() {
        let mut rng = StdRng::seed_from_u64(61);
        let y = DMatrix::from_fn(4, 6, |_, _| rng.gen_range(-1.0..1.0));
        assert_eq!(shrinkage(&y, 0.0).unwrap(), y);

        let y = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let out = shrinkage(&y, 2.0).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert_relative_eq!(out, expected, epsilon = 1e-12);
    }

    #[test]
    fn shrinkage_matches_decomposition_oracle() {
        let mut rng = StdRng::seed_from_u64(67);
        let y = DMatrix::from_fn(5, 12, |_, _| rng.gen_range(-3.0..3.0));
        let nu = 0.7;
        let out = shrinkage(&y, nu).unwrap();
        // oracle: full decomposition, threshold, reassemble
        let svd = y.clone().svd(true, true);
        let mut sigma = DMatrix::zeros(5, 12);
        for i in 0..svd.singular_values.len() {
            sigma[(i, i)] = (svd.singular_values[i] - nu).max(0.0);
        }
        let mut u_full = DMatrix::zeros(5, 5);
        u_full.view_mut((0, 0), (5, 5)).copy_from(svd.u.as_ref().unwrap());
        let mut vt_full = DMatrix::zeros(12, 12);
        vt_full
            .view_mut((0, 0), (5, 12))
            .copy_from(svd.v_t.as_ref().unwrap());
        let expected = svd.u.as_ref().unwrap()
            * DMatrix::from_fn(5, 5, |i, j| if i == j { sigma[(i, i)] } else { 0.0 })
            * svd.v_t.as_ref().unwrap();
        for (a, b) in out.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn shrinkage_is_nuclear_prox() {
        // prox inequality: ν‖P‖_* + ½‖P − Y‖² ≤ ν‖Z‖_* + ½‖Z − Y‖² for all Z
        let mut rng = StdRng::seed_from_u64(71);
        let y = DMatrix::from_fn(4, 7, |_, _| rng.gen_range(-2.0..2.0));
        let nu = 0.5;
        let p = shrinkage(&y, nu).unwrap();
        let lhs = nu * nuclear_norm(&p) + 0.5 * (&p - &y).norm_squared();
        for _ in 0..30 {
            let z = DMatrix::from_fn(4, 7, |_, _| rng.gen_range(-2.0..2.0));
            let rhs = nu * nuclear_norm(&z) + 0.5 * (&z - &y).norm_squared();
            assert!(lhs <= rhs + 1e-10);
        }
    }

    #[test]
    fn initialize_shape_rigid_scene_reprojects() {
        let (w, _, _) = crate::camera_recovery::tests::rigid_scene(30, 10, 73);
        let init = svd_initialize(&w, 1).unwrap();
        let g = assemble_g(&init);
        let (f, _) = solve_fk(&g, 1, 0).unwrap();
        let q = recover_q_triplet(&f).unwrap();
        let rec = recover_camera_poses(&init, &q).unwrap();
        let c: Vec<f64> = (0..30).map(|t| rec.coefficients[(t, 0)]).collect();
        let s0 = initialize_shape(&w, &rec.poses, &c, 1).unwrap();
        let rel = (w.data() - rec.poses.project(&s0).unwrap()).norm() / w.data().norm();
        assert!(rel < 1e-8, "reprojection residual {rel}");
    }

    #[test]
    fn initialize_shape_recovers_ground_truth_up_to_gauge() {
        let (w, cams_gt, shape_gt) = crate::camera_recovery::tests::rigid_scene(30, 10, 79);
        // true cameras and unit coefficients: the fit must reproduce the
        // rigid ground-truth shape in every frame (gauge already fixed by R)
        let c = vec![1.0; 30];
        let s0 = initialize_shape(&w, &cams_gt, &c, 1).unwrap();
        for t in 0..30 {
            let f = s0.frame(t);
            let direct = (&f - &shape_gt).norm();
            // depth reflection would show as a z-flip; rigid rotating scenes
            // pin it through the data term, so expect a direct match
            assert!(direct < 1e-6, "frame {t} deviation {direct}");
        }
    }

    #[test]
    fn initialize_shape_single_frame_matches_normal_equations_oracle() {
        let mut rng = StdRng::seed_from_u64(83);
        let n = 6;
        let r = Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        let cameras = CameraPoses::new(vec![r]).unwrap();
        let raw = DMatrix::from_fn(2, n, |_, _| rng.gen_range(-1.0..1.0));
        let w = MeasurementMatrix::from_raw(raw).unwrap();
        let s0 = initialize_shape(&w, &cameras, &[1.0], 1).unwrap();
        // oracle: per-joint minimum-norm solution x = Rᵀ(RRᵀ)⁻¹ w_j
        let rrt_inv = (r * r.transpose()).try_inverse().unwrap();
        for j in 0..n {
            let w_j = nalgebra::Vector2::new(w.frame(0)[(0, j)], w.frame(0)[(1, j)]);
            let x = r.transpose() * rrt_inv * w_j;
            for d in 0..3 {
                assert!((s0.frame(0)[(d, j)] - x[d]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn reconstruct_window_rigid_scene() {
        let (w, _, shape_gt) = crate::camera_recovery::tests::rigid_scene(40, 10, 89);
        let init = svd_initialize(&w, 1).unwrap();
        let g = assemble_g(&init);
        let (f, _) = solve_fk(&g, 1, 0).unwrap();
        let q = recover_q_triplet(&f).unwrap();
        let rec = recover_camera_poses(&init, &q).unwrap();
        let c: Vec<f64> = (0..40).map(|t| rec.coefficients[(t, 0)]).collect();
        let s0 = initialize_shape(&w, &rec.poses, &c, 1).unwrap();

        // rigid distance pairs as the skeleton
        let bones = vec![
            Bone { parent: 0, child: 1, length: 1.0 },
            Bone { parent: 1, child: 2, length: 1.0 },
            Bone { parent: 2, child: 3, length: 1.0 },
            Bone { parent: 3, child: 4, length: 1.0 },
        ];
        let mut raw_lengths = Vec::new();
        for b in &bones {
            raw_lengths.push((shape_gt.column(b.parent) - shape_gt.column(b.child)).norm());
        }
        let skel = Skeleton::new(10, bones).unwrap().with_lengths(&raw_lengths).unwrap();

        let cfg = SolverConfig::default();
        let (s, diag) = reconstruct_window(&w, &rec.poses, &skel, &cfg, &s0).unwrap();
        assert!(diag.final_reprojection_relative < 0.02);

        // gauge-aligned 3D error below 1% of the structure diameter
        let gt = {
            let mut data = DMatrix::zeros(120, 10);
            for t in 0..40 {
                data.rows_mut(3 * t, 3).copy_from(&shape_gt);
            }
            ShapeSequence::new(data).unwrap()
        };
        let transform = crate::evaluation::rigid_align(&s, &gt, true).unwrap();
        let e3d = crate::evaluation::error_3d(&s, &gt, &transform).unwrap();
        let diameter = structure_diameter(&shape_gt);
        assert!(
            e3d < 0.01 * diameter,
            "E3D {e3d} vs 1% of diameter {diameter}"
        );
    }

    fn structure_diameter(frame: &DMatrix<f64>) -> f64 {
        let n = frame.ncols();
        let mut d = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                d = d.max((frame.column(i) - frame.column(j)).norm());
            }
        }
        d
    }

    #[test]
    fn mu_schedule_is_exact_geometric() {
        let (w, _, _) = crate::camera_recovery::tests::rigid_scene(10, 8, 97);
        let init = svd_initialize(&w, 1).unwrap();
        let g = assemble_g(&init);
        let (f, _) = solve_fk(&g, 1, 0).unwrap();
        let q = recover_q_triplet(&f).unwrap();
        let rec = recover_camera_poses(&init, &q).unwrap();
        let c: Vec<f64> = (0..10).map(|t| rec.coefficients[(t, 0)]).collect();
        let s0 = initialize_shape(&w, &rec.poses, &c, 1).unwrap();
        let skel = chain_skeleton(8);
        let cfg = SolverConfig { outer_max: 12, outer_tol: 0.0, ..Default::default() };
        let (_, diag) = reconstruct_window(&w, &rec.poses, &skel, &cfg, &s0).unwrap();
        for rec in &diag.iterations {
            assert_eq!(rec.mu, cfg.mu0 * cfg.rho.powi(rec.iteration as i32));
        }
    }

    #[test]
    fn beta_zero_matches_pure_fpc_trajectory() {
        let (w, _, _) = crate::camera_recovery::tests::rigid_scene(15, 8, 101);
        let init = svd_initialize(&w, 1).unwrap();
        let g = assemble_g(&init);
        let (f, _) = solve_fk(&g, 1, 0).unwrap();
        let q = recover_q_triplet(&f).unwrap();
        let rec = recover_camera_poses(&init, &q).unwrap();
        let c: Vec<f64> = (0..15).map(|t| rec.coefficients[(t, 0)]).collect();
        let s0 = initialize_shape(&w, &rec.poses, &c, 1).unwrap();
        let skel = chain_skeleton(8);
        let cfg = SolverConfig { beta: 0.0, outer_max: 20, outer_tol: 0.0, ..Default::default() };
        let (s, _) = reconstruct_window(&w, &rec.poses, &skel, &cfg, &s0).unwrap();

        // manual pure-FPC trajectory with A = S each step
        let mut s_ref = s0.clone();
        for j in 0..20 {
            let mu = cfg.mu0 * cfg.rho.powi(j);
            let a = AuxiliaryShape::from_shape(&s_ref);
            let grad = fpc_gradient(&s_ref, &a, &w, &rec.poses).unwrap();
            let y = s_ref.rearranged() - grad * cfg.tau;
            let shrunk = shrinkage(&y, cfg.tau * mu).unwrap();
            s_ref = ShapeSequence::from_rearranged(&shrunk).unwrap();
        }
        assert_relative_eq!(s.data(), s_ref.data(), epsilon = 1e-9);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        assert!(SolverConfig { beta: -1.0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { rho: 1.0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { mu0: 0.0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { tau: -0.1, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn rearrange_consistency_with_gradient_layout() {
        // gradient and rearranged shape share the same T×3N indexing
        let mut rng = StdRng::seed_from_u64(103);
        let s = random_shape(&mut rng, 2, 3);
        let sharp = rearrange_shape(s.data()).unwrap();
        assert_eq!(sharp.shape(), (2, 9));
    }
}
