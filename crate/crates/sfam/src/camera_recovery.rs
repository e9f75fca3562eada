//! Recovery of per-frame orthographic pose-projection blocks from the
//! measurement matrix: rank-3K factorization, orthonormality constraints on
//! the corrective Gram matrix, and polar extraction of the camera rows.

use nalgebra::{DMatrix, DVector, Matrix2x3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{CameraPoses, MeasurementMatrix};

/// Rank-3K truncated factorization W ≅ M′B′ with the singular-value scale
/// split evenly between the factors.
#[derive(Debug, Clone)]
pub struct FactorizationInit {
    m_prime: DMatrix<f64>,
    b_prime: DMatrix<f64>,
    k: usize,
    /// Relative Frobenius residual of the rank truncation.
    residual: f64,
}

impl FactorizationInit {
    pub fn m_prime(&self) -> &DMatrix<f64> {
        &self.m_prime
    }

    pub fn b_prime(&self) -> &DMatrix<f64> {
        &self.b_prime
    }

    pub fn basis_cardinality(&self) -> usize {
        self.k
    }

    pub fn truncation_residual(&self) -> f64 {
        self.residual
    }

    /// Row pair 2t, 2t+1 of M′ as a 2×3K matrix.
    pub fn frame_block(&self, t: usize) -> DMatrix<f64> {
        self.m_prime.rows(2 * t, 2).into_owned()
    }

    pub fn frames(&self) -> usize {
        self.m_prime.nrows() / 2
    }
}

/// Symmetric PSD rank-≤3 unit-norm target F = Q_kQ_kᵀ of the orthonormality
/// constraint system.
#[derive(Debug, Clone)]
pub struct GramTarget {
    f: DMatrix<f64>,
}

impl GramTarget {
    /// Validates symmetry, positive semidefiniteness, the rank-3 bound and
    /// unit Frobenius norm.
    pub fn new(f: DMatrix<f64>) -> Result<Self> {
        if f.nrows() != f.ncols() {
            return Err(Error::Shape("Gram target must be square".into()));
        }
        let asym = (&f - f.transpose()).norm();
        if asym >= 1e-10 {
            return Err(Error::InvalidInput(format!(
                "Gram target not symmetric (deviation {asym:.3e})"
            )));
        }
        let mut eigs = sorted_eigenvalues(&f);
        let trace = f.trace();
        if let Some(&min) = eigs.last() {
            if min < -1e-9 * trace.abs().max(1.0) {
                return Err(Error::InvalidInput(format!(
                    "Gram target not PSD (min eigenvalue {min:.3e})"
                )));
            }
        }
        if eigs.len() > 3 && eigs[3] > 1e-6 * eigs[0].max(f64::MIN_POSITIVE) {
            return Err(Error::RankViolation(format!(
                "Gram target rank exceeds 3 (4th eigenvalue {:.3e} vs largest {:.3e})",
                eigs[3], eigs[0]
            )));
        }
        let norm = f.norm();
        if (norm - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidInput(format!(
                "Gram target must have unit Frobenius norm, got {norm}"
            )));
        }
        eigs.truncate(3);
        Ok(Self { f })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.f
    }
}

/// Convergence record of the constrained IST solve.
#[derive(Debug, Clone)]
pub struct IstReport {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Basis cardinality from the singular spectrum of W: the K whose triplet
/// boundary shows the largest relative drop σ_3K/σ_3K+1. A cumulative-energy
/// rule is fragile under observation noise (the flat noise floor pushes K to
/// the dimensional cap), while the dominant spectral gap stays put.
/// Clamped to [1, 12] and to the dimensional bound 3K ≤ min(2T, N).
pub fn select_rank(w: &MeasurementMatrix) -> usize {
    let svals = w.data().clone().svd(false, false).singular_values;
    let k_dim_max = (w.frames() * 2).min(w.joints()) / 3;
    let k_max = k_dim_max.clamp(1, 12);
    let mut best_k = 1;
    let mut best_gap = 0.0f64;
    for k in 1..=k_max {
        if 3 * k >= svals.len() {
            break;
        }
        let hi = svals[3 * k - 1];
        let lo = svals[3 * k].max(f64::MIN_POSITIVE);
        // boundaries inside the numerical-zero tail carry no information
        if hi <= 1e-10 * svals[0] {
            break;
        }
        let gap = hi / lo;
        if gap > best_gap {
            best_gap = gap;
            best_k = k;
        }
    }
    best_k
}

/// Rank-3K truncated factorization of the registered measurement matrix.
pub fn svd_initialize(w: &MeasurementMatrix, k: usize) -> Result<FactorizationInit> {
    let rank = 3 * k;
    let (rows, cols) = w.data().shape();
    if k == 0 || rank > rows.min(cols) {
        return Err(Error::Config(format!(
            "basis cardinality K={k} needs 3K ≤ min(2T, N) = {}",
            rows.min(cols)
        )));
    }
    let w_norm = w.data().norm();
    if w_norm <= 0.0 {
        return Err(Error::DegenerateInput(
            "zero measurement matrix has no factorization".into(),
        ));
    }
    let svd = w.data().clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested Vᵀ");
    let mut m_prime = DMatrix::zeros(rows, rank);
    let mut b_prime = DMatrix::zeros(rank, cols);
    for i in 0..rank {
        let s_sqrt = svd.singular_values[i].max(0.0).sqrt();
        m_prime.set_column(i, &(u.column(i) * s_sqrt));
        b_prime.set_row(i, &(v_t.row(i) * s_sqrt));
    }
    let discarded: f64 = svd
        .singular_values
        .iter()
        .skip(rank)
        .map(|s| s * s)
        .sum::<f64>()
        .sqrt();
    Ok(FactorizationInit {
        m_prime,
        b_prime,
        k,
        residual: discarded / w_norm,
    })
}

/// Stacks the per-frame orthonormality constraints on F into a 2T×9K² matrix
/// G with G·vec(F) = 0 for any admissible Gram target.
///
/// Row 2t encodes the equal-norm difference constraint of the two camera
/// rows, row 2t+1 the cross-term constraint. vec is column-major.
pub fn assemble_g(init: &FactorizationInit) -> DMatrix<f64> {
    let d = 3 * init.basis_cardinality();
    let t_count = init.frames();
    let mut g = DMatrix::zeros(2 * t_count, d * d);
    for t in 0..t_count {
        let block = init.frame_block(t);
        let a = block.row(0);
        let b = block.row(1);
        for j in 0..d {
            for i in 0..d {
                let col = j * d + i;
                g[(2 * t, col)] = a[i] * a[j] - b[i] * b[j];
                g[(2 * t + 1, col)] = a[i] * b[j];
            }
        }
    }
    g
}

fn sorted_eigenvalues(f: &DMatrix<f64>) -> Vec<f64> {
    let sym = (f + f.transpose()) * 0.5;
    let mut eigs: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().copied().collect();
    eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    eigs
}

/// Symmetrize, clamp negative eigenvalues, keep the 3 largest, renormalize
/// to unit Frobenius norm. Returns None for a numerically zero matrix.
fn project_rank3_psd_unit(f: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let d = f.nrows();
    let sym = (f + f.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut out = DMatrix::zeros(d, d);
    for &i in order.iter().take(3) {
        let lambda = eig.eigenvalues[i].max(0.0);
        if lambda > 0.0 {
            let v = eig.eigenvectors.column(i);
            out += v * v.transpose() * lambda;
        }
    }
    let norm = out.norm();
    if norm <= 1e-300 {
        return None;
    }
    Some(out / norm)
}

fn seeded_unit_rank3_psd(d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = DMatrix::from_fn(d, 3.min(d), |_, _| rng.gen_range(-1.0..1.0));
    let f = &q * q.transpose();
    project_rank3_psd_unit(&f).expect("random Gram is nonzero")
}

/// Minimizes ‖G vec(F)‖² over unit-norm symmetric PSD rank-≤3 matrices by
/// projected gradient (IST) with a monotone backtracking step.
///
/// The start point is the deterministic sign-fixed smallest eigenvector of
/// GᵀG; `seed` only matters for the degenerate G = 0 case.
pub fn solve_fk(g: &DMatrix<f64>, k: usize, seed: u64) -> Result<(GramTarget, IstReport)> {
    let d = 3 * k;
    if g.ncols() != d * d {
        return Err(Error::Shape(format!(
            "constraint matrix has {} columns, expected {}",
            g.ncols(),
            d * d
        )));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("constraint matrix not finite".into()));
    }
    let g_norm = g.norm();
    if g_norm <= 0.0 {
        let f = seeded_unit_rank3_psd(d, seed);
        let target = GramTarget::new(f)?;
        return Ok((
            target,
            IstReport {
                iterations: 0,
                residual: 0.0,
                converged: true,
            },
        ));
    }

    let gtg = g.transpose() * g;
    let eig = gtg.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..d * d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let sigma_max_sq = eig.eigenvalues[order[0]].max(f64::MIN_POSITIVE);

    // start from the null-space direction, sign-fixed to nonnegative trace
    let smallest = eig.eigenvectors.column(*order.last().unwrap());
    let mut f0 = DMatrix::from_column_slice(d, d, smallest.as_slice());
    if f0.trace() < 0.0 {
        f0 = -f0;
    }
    let mut f = project_rank3_psd_unit(&f0).unwrap_or_else(|| seeded_unit_rank3_psd(d, seed));

    let residual_of = |f: &DMatrix<f64>| -> f64 {
        let x = DVector::from_column_slice(f.as_slice());
        (g * x).norm_squared()
    };
    let mut res = residual_of(&f);
    let mut step = 1.0 / sigma_max_sq;
    let max_iters = 500;
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..max_iters {
        iterations += 1;
        let x = DVector::from_column_slice(f.as_slice());
        let grad_vec = &gtg * x;
        let grad = DMatrix::from_column_slice(d, d, grad_vec.as_slice());

        let mut accepted = false;
        let mut local_step = step;
        for _ in 0..40 {
            let cand = &f - &grad * local_step;
            if let Some(proj) = project_rank3_psd_unit(&cand) {
                let cand_res = residual_of(&proj);
                if cand_res <= res {
                    let rel_change = (res - cand_res) / res.max(f64::MIN_POSITIVE);
                    f = proj;
                    res = cand_res;
                    step = local_step;
                    accepted = true;
                    if rel_change < 1e-9 {
                        converged = true;
                    }
                    break;
                }
            }
            local_step *= 0.5;
        }
        if !accepted || converged {
            converged = true;
            break;
        }
    }

    let target = GramTarget::new(f)?;
    Ok((
        target,
        IstReport {
            iterations,
            residual: res.sqrt(),
            converged,
        },
    ))
}

/// Factorizes F into Q_k with Q_kQ_kᵀ = F via the eigenvalue square root.
/// Always returns exactly 3 columns, zero-padded below rank 3.
pub fn recover_q_triplet(f: &GramTarget) -> Result<DMatrix<f64>> {
    let d = f.matrix().nrows();
    let eig = f.matrix().clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let largest = eig.eigenvalues[order[0]].max(0.0);
    if d > 3 {
        let fourth = eig.eigenvalues[order[3]];
        if fourth > 1e-6 * largest.max(f64::MIN_POSITIVE) {
            return Err(Error::RankViolation(format!(
                "Gram matrix has more than 3 significant eigenvalues ({fourth:.3e})"
            )));
        }
    }
    let mut q = DMatrix::zeros(d, 3);
    for (col, &i) in order.iter().take(3).enumerate() {
        let mut lambda = eig.eigenvalues[i].max(0.0);
        // numerical rank truncation: keep zero-padding exact below rank 3
        if lambda < 1e-12 * largest {
            lambda = 0.0;
        }
        q.set_column(col, &(eig.eigenvectors.column(i) * lambda.sqrt()));
    }
    Ok(q)
}

/// Per-frame camera recovery outcome.
#[derive(Debug, Clone)]
pub struct CameraRecovery {
    pub poses: CameraPoses,
    /// Signed per-frame, per-basis coefficients c_tk (T×K).
    pub coefficients: DMatrix<f64>,
    /// Frames whose coefficient magnitude collapsed; their pose was copied
    /// from the previous frame.
    pub degenerate_frames: Vec<usize>,
}

/// Extracts orthonormal pose blocks from M′Q_k by polar projection, with the
/// per-frame sign chosen by temporal continuity.
///
/// Only the dominant triplet determines the poses; the remaining columns of
/// the coefficient matrix are filled by a deflated bilinear least-squares
/// pass on the factorization residual.
pub fn recover_camera_poses(
    init: &FactorizationInit,
    q_k: &DMatrix<f64>,
) -> Result<CameraRecovery> {
    let d = 3 * init.basis_cardinality();
    if q_k.nrows() != d || q_k.ncols() != 3 {
        return Err(Error::Shape(format!(
            "corrective triplet must be {d}×3, got {}×{}",
            q_k.nrows(),
            q_k.ncols()
        )));
    }
    let t_count = init.frames();
    let mut blocks: Vec<Matrix2x3<f64>> = Vec::with_capacity(t_count);
    let mut coeffs = DMatrix::zeros(t_count, init.basis_cardinality());
    let mut degenerate = Vec::new();

    for t in 0..t_count {
        let p = init.frame_block(t) * q_k;
        let c_mag = (p.row(0).norm() + p.row(1).norm()) / 2.0;
        if c_mag < 1e-12 {
            degenerate.push(t);
            let prev = blocks
                .last()
                .copied()
                .unwrap_or_else(|| Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0));
            blocks.push(prev);
            coeffs[(t, 0)] = 0.0;
            continue;
        }
        let svd = p.clone().svd(true, true);
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested Vᵀ");
        let mut r = Matrix2x3::from_iterator((u * v_t).iter().copied());
        let mut c = c_mag;
        if let Some(prev) = blocks.last() {
            if (-r - prev).norm() < (r - prev).norm() {
                r = -r;
                c = -c;
            }
        }
        blocks.push(r);
        coeffs[(t, 0)] = c;
    }

    if init.basis_cardinality() > 1 {
        fill_remaining_coefficients(init, &blocks, &mut coeffs);
    }

    Ok(CameraRecovery {
        poses: CameraPoses::new(blocks)?,
        coefficients: coeffs,
        degenerate_frames: degenerate,
    })
}

/// Deflated bilinear least squares for c_tk, k ≥ 2: alternately solve the
/// column triplet Q_k and the per-frame scalars from M′Q_k = c_tk·R_t, after
/// orthogonalizing each new triplet against the ones already found.
fn fill_remaining_coefficients(
    init: &FactorizationInit,
    blocks: &[Matrix2x3<f64>],
    coeffs: &mut DMatrix<f64>,
) {
    let d = 3 * init.basis_cardinality();
    let t_count = init.frames();
    let k_count = init.basis_cardinality();

    // normal matrix Σ_t M'_tᵀ M'_t is shared across k
    let mut normal = DMatrix::zeros(d, d);
    for t in 0..t_count {
        let block = init.frame_block(t);
        normal += block.transpose() * &block;
    }
    for i in 0..d {
        normal[(i, i)] += 1e-10;
    }
    let chol = match normal.clone().cholesky() {
        Some(c) => c,
        None => return,
    };

    let mut found: Vec<DVector<f64>> = Vec::new();
    for k in 1..k_count {
        // deterministic start orthogonal to earlier triplets in vec space
        let mut c: DVector<f64> = DVector::from_fn(t_count, |t, _| {
            (std::f64::consts::PI * (k as f64) * (t as f64 + 0.5) / t_count as f64).cos()
        });
        let mut q = DMatrix::zeros(d, 3);
        for _ in 0..15 {
            // solve Q_k given c
            let mut rhs = DMatrix::zeros(d, 3);
            for t in 0..t_count {
                let block = init.frame_block(t);
                rhs += block.transpose() * blocks[t] * c[t];
            }
            q = chol.solve(&rhs);
            // deflate against previously found triplets
            let mut qv = DVector::from_column_slice(q.as_slice());
            for f in &found {
                let proj = qv.dot(f) / f.norm_squared().max(f64::MIN_POSITIVE);
                qv -= f * proj;
            }
            q = DMatrix::from_column_slice(d, 3, qv.as_slice());
            // solve c given Q_k
            for t in 0..t_count {
                let p = init.frame_block(t) * &q;
                let p_fixed = Matrix2x3::from_iterator(p.iter().copied());
                c[t] = blocks[t].dot(&p_fixed) / 2.0;
            }
        }
        found.push(DVector::from_column_slice(q.as_slice()));
        for t in 0..t_count {
            coeffs[(t, k)] = c[t];
        }
    }
}
