//! Domain types and structure-level primitives: measurement matrices,
//! skeletons, shape sequences and the stacked/rearranged shape views.

use nalgebra::{DMatrix, Matrix2x3, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One rigid segment between two joints, with a unit-sum normalized length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bone {
    pub parent: usize,
    pub child: usize,
    /// Normalized length, dimensionless; all lengths of a skeleton sum to 1.
    pub length: f64,
}

/// A set of bones over `joint_count` joints.
///
/// Bones are arbitrary joint pairs; a kinematic tree is not required here
/// (the synthetic generator does require one for forward kinematics).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SkeletonRaw", into = "SkeletonRaw")]
pub struct Skeleton {
    joint_count: usize,
    bones: Vec<Bone>,
}

/// On-disk form of a skeleton; validated on conversion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkeletonRaw {
    pub joints: usize,
    pub bones: Vec<Bone>,
}

impl TryFrom<SkeletonRaw> for Skeleton {
    type Error = Error;

    fn try_from(raw: SkeletonRaw) -> Result<Self> {
        Skeleton::new(raw.joints, raw.bones)
    }
}

impl From<Skeleton> for SkeletonRaw {
    fn from(s: Skeleton) -> Self {
        SkeletonRaw {
            joints: s.joint_count,
            bones: s.bones,
        }
    }
}

impl Skeleton {
    /// Builds a skeleton from raw (possibly unnormalized) bone lengths,
    /// validating indices, duplicates and positivity.
    pub fn new(joint_count: usize, bones: Vec<Bone>) -> Result<Self> {
        if bones.is_empty() {
            return Err(Error::InvalidSkeleton("no bones".into()));
        }
        let mut offenders = Vec::new();
        for (i, b) in bones.iter().enumerate() {
            if b.parent >= joint_count || b.child >= joint_count {
                offenders.push(format!("bone {i}: joint index out of range"));
            }
            if b.parent == b.child {
                offenders.push(format!("bone {i}: parent == child"));
            }
            if !(b.length > 0.0) || !b.length.is_finite() {
                offenders.push(format!("bone {i}: non-positive length"));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for (i, b) in bones.iter().enumerate() {
            let key = (b.parent.min(b.child), b.parent.max(b.child));
            if !seen.insert(key) {
                offenders.push(format!("bone {i}: duplicate joint pair"));
            }
        }
        if !offenders.is_empty() {
            return Err(Error::InvalidSkeleton(offenders.join("; ")));
        }
        let raw: Vec<f64> = bones.iter().map(|b| b.length).collect();
        let norm = normalize_lengths(&raw)?;
        let bones = bones
            .into_iter()
            .zip(norm)
            .map(|(b, length)| Bone { length, ..b })
            .collect();
        Ok(Self { joint_count, bones })
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn bones(&self) -> &[Bone] {
        &self.bones
    }

    pub fn bone_count(&self) -> usize {
        self.bones.len()
    }

    /// Normalized target lengths, in bone order.
    pub fn lengths(&self) -> Vec<f64> {
        self.bones.iter().map(|b| b.length).collect()
    }

    /// Same bone topology with new raw lengths (re-normalized on build).
    pub fn with_lengths(&self, raw: &[f64]) -> Result<Self> {
        if raw.len() != self.bones.len() {
            return Err(Error::InvalidSkeleton(format!(
                "expected {} lengths, got {}",
                self.bones.len(),
                raw.len()
            )));
        }
        let bones = self
            .bones
            .iter()
            .zip(raw)
            .map(|(b, &length)| Bone { length, ..*b })
            .collect();
        Self::new(self.joint_count, bones)
    }
}

/// Stacked per-frame 2D joint observations, 2T×N, centroid-registered.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementMatrix {
    data: DMatrix<f64>,
    frames: usize,
    joints: usize,
    centroids: Vec<Vector2<f64>>,
}

impl MeasurementMatrix {
    /// Registers every frame of a raw 2T×N stack to its centroid.
    pub fn from_raw(raw: DMatrix<f64>) -> Result<Self> {
        let (rows, joints) = raw.shape();
        if rows == 0 || rows % 2 != 0 {
            return Err(Error::Shape(format!(
                "measurement matrix must have an even, positive row count, got {rows}"
            )));
        }
        if joints < 2 {
            return Err(Error::Shape(format!(
                "need at least 2 joints, got {joints}"
            )));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "measurement matrix contains non-finite entries".into(),
            ));
        }
        let frames = rows / 2;
        let mut data = raw;
        let mut centroids = Vec::with_capacity(frames);
        for t in 0..frames {
            let frame = data.rows(2 * t, 2).into_owned();
            let (registered, centroid) = register_to_centroid(&frame)?;
            data.rows_mut(2 * t, 2).copy_from(&registered);
            centroids.push(centroid);
        }
        Ok(Self {
            data,
            frames,
            joints,
            centroids,
        })
    }

    /// Wraps an already-registered stack, recomputing (near-zero) centroids.
    pub fn from_registered(data: DMatrix<f64>) -> Result<Self> {
        Self::from_raw(data)
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

    pub fn centroids(&self) -> &[Vector2<f64>] {
        &self.centroids
    }

    /// The registered 2×N observation block of frame `t`.
    pub fn frame(&self, t: usize) -> DMatrix<f64> {
        self.data.rows(2 * t, 2).into_owned()
    }

    /// A new matrix covering frames `[start, start+len)`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.frames || len == 0 {
            return Err(Error::Shape(format!(
                "window [{start}, {}) out of range for {} frames",
                start + len,
                self.frames
            )));
        }
        Ok(Self {
            data: self.data.rows(2 * start, 2 * len).into_owned(),
            frames: len,
            joints: self.joints,
            centroids: self.centroids[start..start + len].to_vec(),
        })
    }
}

/// Recovered 3D joints, 3T×N (x, y, z rows stacked per frame).
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSequence {
    data: DMatrix<f64>,
    frames: usize,
    joints: usize,
}

impl ShapeSequence {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        let (rows, joints) = data.shape();
        if rows == 0 || rows % 3 != 0 {
            return Err(Error::Shape(format!(
                "shape sequence row count must be a positive multiple of 3, got {rows}"
            )));
        }
        Ok(Self {
            frames: rows / 3,
            joints,
            data,
        })
    }

    /// Builds from the rearranged T×3N view.
    pub fn from_rearranged(rearranged: &DMatrix<f64>) -> Result<Self> {
        Self::new(rearrange_shape_inverse(rearranged)?)
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

    /// The 3×N joint block of frame `t`.
    pub fn frame(&self, t: usize) -> DMatrix<f64> {
        self.data.rows(3 * t, 3).into_owned()
    }

    /// The T×3N rearranged view, materialized on demand.
    pub fn rearranged(&self) -> DMatrix<f64> {
        rearrange_shape(&self.data).expect("3T×N by construction")
    }

    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.frames || len == 0 {
            return Err(Error::Shape(format!(
                "window [{start}, {}) out of range for {} frames",
                start + len,
                self.frames
            )));
        }
        Self::new(self.data.rows(3 * start, 3 * len).into_owned())
    }
}

/// Per-frame orthographic pose-projection blocks with orthonormal rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPoses {
    blocks: Vec<Matrix2x3<f64>>,
}

impl CameraPoses {
    /// Validates ‖R_t R_tᵀ − I₂‖_F < 1e-6 for every block.
    pub fn new(blocks: Vec<Matrix2x3<f64>>) -> Result<Self> {
        for (t, r) in blocks.iter().enumerate() {
            let gram = r * r.transpose();
            let dev = (gram - nalgebra::Matrix2::identity()).norm();
            if dev >= 1e-6 {
                return Err(Error::InvalidInput(format!(
                    "camera block {t} rows not orthonormal (deviation {dev:.3e})"
                )));
            }
        }
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[Matrix2x3<f64>] {
        &self.blocks
    }

    pub fn frames(&self) -> usize {
        self.blocks.len()
    }

    /// Projects a shape sequence frame-by-frame: W_t = R_t S_t (unregistered).
    pub fn project(&self, shape: &ShapeSequence) -> Result<DMatrix<f64>> {
        if shape.frames() != self.frames() {
            return Err(Error::Shape(format!(
                "{} camera blocks vs {} shape frames",
                self.frames(),
                shape.frames()
            )));
        }
        let n = shape.joints();
        let mut w = DMatrix::zeros(2 * self.frames(), n);
        for (t, r) in self.blocks.iter().enumerate() {
            let proj = r * shape.frame(t);
            w.rows_mut(2 * t, 2).copy_from(&proj);
        }
        Ok(w)
    }

    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.blocks.len() || len == 0 {
            return Err(Error::Shape("camera window out of range".into()));
        }
        Ok(Self {
            blocks: self.blocks[start..start + len].to_vec(),
        })
    }
}

/// Subtracts the per-row mean of a 2×N frame; returns the registered frame
/// and the removed centroid.
pub fn register_to_centroid(frame: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vector2<f64>)> {
    if frame.nrows() != 2 || frame.ncols() == 0 {
        return Err(Error::Shape(format!(
            "expected 2×N frame with N ≥ 1, got {}×{}",
            frame.nrows(),
            frame.ncols()
        )));
    }
    if frame.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("frame contains non-finite entries".into()));
    }
    let n = frame.ncols() as f64;
    let centroid = Vector2::new(frame.row(0).sum() / n, frame.row(1).sum() / n);
    let mut out = frame.clone();
    for j in 0..frame.ncols() {
        out[(0, j)] -= centroid.x;
        out[(1, j)] -= centroid.y;
    }
    Ok((out, centroid))
}

/// Rearranges a stacked 3T×N shape into the T×3N view
/// `[X_t1…X_tN, Y_t1…Y_tN, Z_t1…Z_tN]` per row.
pub fn rearrange_shape(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (rows, n) = s.shape();
    if rows % 3 != 0 {
        return Err(Error::Shape(format!(
            "row count {rows} not divisible by 3"
        )));
    }
    let t_count = rows / 3;
    let mut out = DMatrix::zeros(t_count, 3 * n);
    for t in 0..t_count {
        for d in 0..3 {
            for j in 0..n {
                out[(t, d * n + j)] = s[(3 * t + d, j)];
            }
        }
    }
    Ok(out)
}

/// Inverse of [`rearrange_shape`]: T×3N back to 3T×N.
pub fn rearrange_shape_inverse(s_sharp: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (t_count, cols) = s_sharp.shape();
    if cols % 3 != 0 {
        return Err(Error::Shape(format!(
            "column count {cols} not divisible by 3"
        )));
    }
    let n = cols / 3;
    let mut out = DMatrix::zeros(3 * t_count, n);
    for t in 0..t_count {
        for d in 0..3 {
            for j in 0..n {
                out[(3 * t + d, j)] = s_sharp[(t, d * n + j)];
            }
        }
    }
    Ok(out)
}

/// Removes each frame's 3D centroid. Per-frame translation is unobservable
/// under centroid-registered orthography, so comparisons happen in this
/// gauge.
pub fn center_frames(s: &ShapeSequence) -> ShapeSequence {
    let mut data = s.data().clone();
    let n = s.joints() as f64;
    for t in 0..s.frames() {
        for d in 0..3 {
            let mean = data.row(3 * t + d).sum() / n;
            for j in 0..s.joints() {
                data[(3 * t + d, j)] -= mean;
            }
        }
    }
    ShapeSequence::new(data).expect("same dimensions")
}

/// Euclidean distance between the two joints of each bone in a 3×N frame.
pub fn bone_distances(frame: &DMatrix<f64>, skeleton: &Skeleton) -> Result<Vec<f64>> {
    let n = frame.ncols();
    if frame.nrows() != 3 {
        return Err(Error::Shape(format!(
            "expected 3×N frame, got {}×{}",
            frame.nrows(),
            n
        )));
    }
    skeleton
        .bones()
        .iter()
        .map(|b| {
            if b.parent >= n || b.child >= n {
                return Err(Error::SkeletonMismatch(format!(
                    "bone ({}, {}) out of range for {n} joints",
                    b.parent, b.child
                )));
            }
            let d = frame.column(b.parent) - frame.column(b.child);
            Ok(d.norm())
        })
        .collect()
}

/// Scales raw positive lengths to unit sum, preserving proportions.
pub fn normalize_lengths(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::InvalidSkeleton("no lengths to normalize".into()));
    }
    if raw.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidSkeleton(
            "all raw lengths must be positive and finite".into(),
        ));
    }
    let sum: f64 = raw.iter().sum();
    if sum <= 0.0 {
        return Err(Error::InvalidSkeleton("length sum is zero".into()));
    }
    Ok(raw.iter().map(|v| v / sum).collect())
}
