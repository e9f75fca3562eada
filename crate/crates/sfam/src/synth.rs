//! Ground-truth scene factory: articulated 3D motion via forward kinematics,
//! orbiting orthographic cameras, projections and controlled perturbations.

use nalgebra::{DMatrix, Matrix2x3, Rotation3, Unit, UnitVector3, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    normalize_lengths, Bone, CameraPoses, MeasurementMatrix, ShapeSequence, Skeleton,
};

/// Sinusoidal joint-angle trajectory of one bone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoneMotion {
    /// Peak angle in radians; must lie in (−π, π).
    pub amplitude: f64,
    /// Cycles over the whole sequence.
    pub frequency: f64,
    /// Phase offset in radians.
    pub phase: f64,
    /// Rotation axis in the parent frame; seeded default when absent.
    pub axis: Option<[f64; 3]>,
    /// Bone rest direction in the parent frame; seeded default when absent.
    pub rest_direction: Option<[f64; 3]>,
}

impl BoneMotion {
    pub fn still() -> Self {
        Self {
            amplitude: 0.0,
            frequency: 0.0,
            phase: 0.0,
            axis: None,
            rest_direction: None,
        }
    }
}

/// Linear 3D root trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RootPath {
    pub start: [f64; 3],
    pub velocity_per_frame: [f64; 3],
}

/// Orbiting orthographic camera: rotation about a fixed axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraOrbit {
    pub axis: [f64; 3],
    /// Radians per frame.
    pub angular_speed: f64,
    pub initial_angle: f64,
}

impl Default for CameraOrbit {
    fn default() -> Self {
        Self {
            axis: [0.1, 1.0, 0.2],
            angular_speed: 0.05,
            initial_angle: 0.0,
        }
    }
}

/// Full specification of a synthetic articulated scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MotionSpec {
    pub skeleton: Skeleton,
    pub frames: usize,
    /// Image-unit scale multiplying the normalized bone lengths.
    pub scale: f64,
    pub bone_motions: Vec<BoneMotion>,
    pub root: RootPath,
    pub camera: CameraOrbit,
    pub seed: u64,
}

impl MotionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::UnsupportedSpec(format!(
                "need at least 2 frames, got {}",
                self.frames
            )));
        }
        if self.bone_motions.len() != self.skeleton.bone_count() {
            return Err(Error::UnsupportedSpec(format!(
                "{} bone motions for {} bones",
                self.bone_motions.len(),
                self.skeleton.bone_count()
            )));
        }
        for (b, m) in self.bone_motions.iter().enumerate() {
            if m.amplitude.abs() >= std::f64::consts::PI {
                return Err(Error::UnsupportedSpec(format!(
                    "bone {b}: amplitude {} outside (−π, π)",
                    m.amplitude
                )));
            }
        }
        if !(self.scale > 0.0) {
            return Err(Error::UnsupportedSpec("scale must be positive".into()));
        }
        Ok(())
    }
}

/// Tree order of the skeleton: root joint and bones sorted so that every
/// parent is positioned before its children.
struct TreeOrder {
    root: usize,
    /// Bone indices in breadth-first order from the root.
    bone_order: Vec<usize>,
}

fn tree_order(skeleton: &Skeleton) -> Result<TreeOrder> {
    let n = skeleton.joint_count();
    let mut in_degree = vec![0usize; n];
    for b in skeleton.bones() {
        in_degree[b.child] += 1;
    }
    let roots: Vec<usize> = (0..n)
        .filter(|&j| {
            in_degree[j] == 0
                && skeleton
                    .bones()
                    .iter()
                    .any(|b| b.parent == j || b.child == j)
        })
        .collect();
    if in_degree.iter().any(|&d| d > 1) {
        return Err(Error::UnsupportedSpec(
            "skeleton is not a tree: a joint has multiple parents".into(),
        ));
    }
    if roots.len() != 1 {
        return Err(Error::UnsupportedSpec(format!(
            "skeleton is not a tree: found {} root joints",
            roots.len()
        )));
    }
    let root = roots[0];
    let mut visited_joints = vec![false; n];
    visited_joints[root] = true;
    let mut bone_order = Vec::with_capacity(skeleton.bone_count());
    let mut frontier = vec![root];
    while let Some(j) = frontier.pop() {
        for (bi, b) in skeleton.bones().iter().enumerate() {
            if b.parent == j && !visited_joints[b.child] {
                visited_joints[b.child] = true;
                bone_order.push(bi);
                frontier.push(b.child);
            }
        }
    }
    if bone_order.len() != skeleton.bone_count() {
        return Err(Error::UnsupportedSpec(
            "skeleton is not a tree: not all joints reachable from the root".into(),
        ));
    }
    Ok(TreeOrder { root, bone_order })
}

fn seeded_direction(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        if v.norm() > 1e-3 {
            return v.normalize();
        }
    }
}

/// Forward-kinematic articulated motion with per-bone sinusoidal rotations
/// about fixed local axes. Bone lengths stay exactly constant over time.
pub fn generate_articulated_sequence(spec: &MotionSpec) -> Result<(ShapeSequence, CameraPoses)> {
    spec.validate()?;
    let order = tree_order(&spec.skeleton)?;
    let n = spec.skeleton.joint_count();
    let t_count = spec.frames;

    // resolve per-bone axes and rest directions deterministically
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut axes: Vec<UnitVector3<f64>> = Vec::with_capacity(spec.skeleton.bone_count());
    let mut rests: Vec<Vector3<f64>> = Vec::with_capacity(spec.skeleton.bone_count());
    for m in &spec.bone_motions {
        let axis = match m.axis {
            Some(a) => {
                let v = Vector3::from_column_slice(&a);
                if v.norm() < 1e-9 {
                    return Err(Error::UnsupportedSpec("zero rotation axis".into()));
                }
                Unit::new_normalize(v)
            }
            None => Unit::new_normalize(seeded_direction(&mut rng)),
        };
        let rest = match m.rest_direction {
            Some(r) => {
                let v = Vector3::from_column_slice(&r);
                if v.norm() < 1e-9 {
                    return Err(Error::UnsupportedSpec("zero rest direction".into()));
                }
                v.normalize()
            }
            None => seeded_direction(&mut rng),
        };
        axes.push(axis);
        rests.push(rest);
    }

    let lengths = spec.skeleton.lengths();
    let mut data = DMatrix::zeros(3 * t_count, n);
    for t in 0..t_count {
        let tf = t as f64;
        let mut pos = vec![Vector3::zeros(); n];
        let mut cum_rot = vec![Rotation3::identity(); n];
        pos[order.root] = Vector3::new(
            spec.root.start[0] + spec.root.velocity_per_frame[0] * tf,
            spec.root.start[1] + spec.root.velocity_per_frame[1] * tf,
            spec.root.start[2] + spec.root.velocity_per_frame[2] * tf,
        );
        for &bi in &order.bone_order {
            let bone = spec.skeleton.bones()[bi];
            let m = &spec.bone_motions[bi];
            let angle = m.amplitude
                * (2.0 * std::f64::consts::PI * m.frequency * tf / t_count as f64 + m.phase)
                    .sin();
            let local = Rotation3::from_axis_angle(&axes[bi], angle);
            let rot = cum_rot[bone.parent] * local;
            pos[bone.child] = pos[bone.parent] + rot * (rests[bi] * spec.scale * lengths[bi]);
            cum_rot[bone.child] = rot;
        }
        for j in 0..n {
            for d in 0..3 {
                data[(3 * t + d, j)] = pos[j][d];
            }
        }
    }

    let cam_axis = Unit::new_normalize(Vector3::from_column_slice(&spec.camera.axis));
    let blocks: Vec<Matrix2x3<f64>> = (0..t_count)
        .map(|t| {
            let angle = spec.camera.initial_angle + spec.camera.angular_speed * t as f64;
            let m = Rotation3::from_axis_angle(&cam_axis, angle);
            let m = m.matrix();
            Matrix2x3::new(
                m[(0, 0)], m[(0, 1)], m[(0, 2)],
                m[(1, 0)], m[(1, 1)], m[(1, 2)],
            )
        })
        .collect();

    Ok((ShapeSequence::new(data)?, CameraPoses::new(blocks)?))
}

/// W_t = R_t S_t per frame, centroid-registered.
pub fn orthographic_project(
    s_gt: &ShapeSequence,
    r_gt: &CameraPoses,
) -> Result<MeasurementMatrix> {
    MeasurementMatrix::from_raw(r_gt.project(s_gt)?)
}

/// Adds i.i.d. zero-mean Gaussian noise elementwise, then re-registers.
pub fn add_2d_noise(w: &MeasurementMatrix, sigma: f64, seed: u64) -> Result<MeasurementMatrix> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidInput(format!("noise sigma must be ≥ 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(w.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let mut data = w.data().clone();
    for v in data.iter_mut() {
        *v += normal.sample(&mut rng);
    }
    MeasurementMatrix::from_raw(data)
}

/// Gaussian perturbation of raw bone lengths, clamped to ≥ 10% of the
/// original value and re-normalized to unit sum.
pub fn perturb_bone_lengths(lengths: &[f64], sigma: f64, seed: u64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "perturbation sigma must be ≥ 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return normalize_lengths(lengths);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let perturbed: Vec<f64> = lengths
        .iter()
        .map(|&l| (l + normal.sample(&mut rng)).max(0.1 * l))
        .collect();
    normalize_lengths(&perturbed)
}

/// A ready-made 12-joint walking figure: torso/neck/head chain, two arms,
/// two legs (11 bones), moderate sinusoidal joint swings with legs and arms
/// in counter-phase, sized for a ~1000-unit image.
pub fn human_like_spec(frames: usize, seed: u64) -> MotionSpec {
    use std::f64::consts::PI;

    // 0 pelvis, 1 chest, 2 neck, 3 head, 4/5 left elbow/wrist,
    // 6/7 right elbow/wrist, 8/9 left knee/ankle, 10/11 right knee/ankle
    let bones = vec![
        Bone { parent: 0, child: 1, length: 0.30 },
        Bone { parent: 1, child: 2, length: 0.10 },
        Bone { parent: 2, child: 3, length: 0.12 },
        Bone { parent: 2, child: 4, length: 0.20 },
        Bone { parent: 4, child: 5, length: 0.18 },
        Bone { parent: 2, child: 6, length: 0.20 },
        Bone { parent: 6, child: 7, length: 0.18 },
        Bone { parent: 0, child: 8, length: 0.28 },
        Bone { parent: 8, child: 9, length: 0.26 },
        Bone { parent: 0, child: 10, length: 0.28 },
        Bone { parent: 10, child: 11, length: 0.26 },
    ];
    let skeleton = Skeleton::new(12, bones).expect("well-formed figure");

    let swing = |amplitude: f64, phase: f64, rest: [f64; 3]| BoneMotion {
        amplitude,
        frequency: 1.0,
        phase,
        axis: Some([1.0, 0.0, 0.15]),
        rest_direction: Some(rest),
    };
    let bone_motions = vec![
        BoneMotion {
            amplitude: 0.03,
            frequency: 2.0,
            phase: 0.0,
            axis: Some([1.0, 0.0, 0.0]),
            rest_direction: Some([0.0, 1.0, 0.0]),
        },
        BoneMotion {
            amplitude: 0.02,
            frequency: 2.0,
            phase: 0.4,
            axis: Some([1.0, 0.0, 0.0]),
            rest_direction: Some([0.0, 1.0, 0.0]),
        },
        BoneMotion {
            amplitude: 0.04,
            frequency: 1.0,
            phase: 0.9,
            axis: Some([0.3, 0.0, 1.0]),
            rest_direction: Some([0.0, 1.0, 0.0]),
        },
        swing(0.15, PI, [-0.90, -0.35, 0.10]),
        swing(0.14, PI + 0.5, [-0.55, -0.80, 0.05]),
        swing(0.15, 0.0, [0.90, -0.35, -0.10]),
        swing(0.14, 0.5, [0.55, -0.80, -0.05]),
        swing(0.17, 0.0, [-0.22, -1.0, 0.05]),
        swing(0.15, -0.7, [-0.05, -1.0, 0.12]),
        swing(0.17, PI, [0.22, -1.0, -0.05]),
        swing(0.15, PI - 0.7, [0.05, -1.0, -0.12]),
    ];

    MotionSpec {
        skeleton,
        frames,
        scale: 1000.0,
        bone_motions,
        root: RootPath::default(),
        camera: CameraOrbit::default(),
        seed,
    }
}
