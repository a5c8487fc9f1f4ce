//! Skeleton, forward kinematics and linear blend skinning.
//!
//! Bone transforms `G_b` map canonical (rest) space to posed world space, so
//! an identity pose yields identity transforms. Skinning blends the 3x4
//! affine matrices linearly; the inverse warp inverts that blend per point.

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion};

use crate::error::{Error, Result};
use crate::math::{nearest_rotation, Point3, Vec3};

/// Blends with a condition estimate above this are rejected.
pub const MAX_WARP_CONDITION: f64 = 1e6;

/// Default blend-weight blending radius.
pub const DEFAULT_BLEND_RADIUS: f64 = 0.075;

#[derive(Clone, Debug, PartialEq)]
pub struct Bone {
    pub name: String,
    pub parent: Option<usize>,
    /// Rest-pose head (joint) position in canonical space.
    pub head: Point3,
    /// End of the bone segment, used for skinning-weight falloff.
    pub tail: Point3,
    /// Rest-pose orientation of the bone frame.
    pub orientation: UnitQuaternion<f64>,
}

impl Bone {
    pub fn new(name: impl Into<String>, parent: Option<usize>, head: Point3, tail: Point3) -> Self {
        Bone {
            name: name.into(),
            parent,
            head,
            tail,
            orientation: UnitQuaternion::identity(),
        }
    }

    fn rest_frame(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.head.coords), self.orientation)
    }
}

/// A topologically sorted bone hierarchy with a single root.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    bones: Vec<Bone>,
}

impl Skeleton {
    pub fn new(bones: Vec<Bone>) -> Result<Self> {
        if bones.is_empty() {
            return Err(Error::Config("skeleton has no bones".into()));
        }
        let mut roots = 0;
        for (i, bone) in bones.iter().enumerate() {
            match bone.parent {
                None => roots += 1,
                Some(p) if p >= i => {
                    return Err(Error::Config(format!(
                        "bone {i} ({}) has parent {p}; parents must precede children",
                        bone.name
                    )))
                }
                Some(_) => {}
            }
        }
        if roots != 1 {
            return Err(Error::Config(format!(
                "skeleton must have exactly one root, found {roots}"
            )));
        }
        Ok(Skeleton { bones })
    }

    /// Single root bone at the origin.
    pub fn single() -> Self {
        Skeleton::new(vec![Bone::new("root", None, Point3::origin(), Point3::origin())]).expect("valid")
    }

    pub fn bones(&self) -> &[Bone] {
        &self.bones
    }

    pub fn len(&self) -> usize {
        self.bones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bones.is_empty()
    }

    /// Rest-pose segment of bone `b` in canonical space.
    pub fn segment(&self, b: usize) -> (Point3, Point3) {
        (self.bones[b].head, self.bones[b].tail)
    }
}

/// Joint parameters for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub frame: usize,
    pub root_translation: Vec3,
    /// Local rotation of each bone about its head, in the bone's rest frame.
    pub rotations: Vec<UnitQuaternion<f64>>,
}

impl Pose {
    pub fn identity(bones: usize) -> Self {
        Pose {
            frame: 0,
            root_translation: Vec3::zeros(),
            rotations: vec![UnitQuaternion::identity(); bones],
        }
    }

    /// Builds a pose from raw `[w, x, y, z]` quaternions, which must be unit
    /// length within 1e-9.
    pub fn from_raw(frame: usize, root_translation: Vec3, quats: &[[f64; 4]]) -> Result<Self> {
        let mut rotations = Vec::with_capacity(quats.len());
        for (i, q) in quats.iter().enumerate() {
            let quat = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
            let norm = quat.norm();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("rotation {i} is not unit length (|q| = {norm})")));
            }
            rotations.push(UnitQuaternion::new_unchecked(quat));
        }
        Ok(Pose {
            frame,
            root_translation,
            rotations,
        })
    }

    pub fn with_rotation(mut self, bone: usize, axis: Vec3, angle: f64) -> Self {
        self.rotations[bone] = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        self
    }

    pub fn with_translation(mut self, t: Vec3) -> Self {
        self.root_translation = t;
        self
    }

    pub fn is_identity(&self) -> bool {
        self.root_translation == Vec3::zeros() && self.rotations.iter().all(|q| q.angle() == 0.0)
    }
}

/// Per-bone rigid skinning transforms `G_b`.
#[derive(Clone, Debug)]
pub struct BoneTransforms {
    isometries: Vec<Isometry3<f64>>,
    linear: Vec<Matrix3<f64>>,
    translation: Vec<Vec3>,
}

impl BoneTransforms {
    pub fn from_isometries(isometries: Vec<Isometry3<f64>>) -> Self {
        let linear = isometries
            .iter()
            .map(|iso| *iso.rotation.to_rotation_matrix().matrix())
            .collect();
        let translation = isometries.iter().map(|iso| iso.translation.vector).collect();
        BoneTransforms {
            isometries,
            linear,
            translation,
        }
    }

    pub fn identity(bones: usize) -> Self {
        Self::from_isometries(vec![Isometry3::identity(); bones])
    }

    pub fn len(&self) -> usize {
        self.isometries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.isometries.is_empty()
    }

    pub fn get(&self, b: usize) -> &Isometry3<f64> {
        &self.isometries[b]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Isometry3<f64>> {
        self.isometries.iter()
    }

    /// Linear blend `Σ w_b G_b` as a (matrix, translation) pair.
    pub fn blend(&self, w: &WeightVector) -> Result<(Matrix3<f64>, Vec3)> {
        if w.len() != self.len() {
            return Err(Error::Config(format!(
                "weight vector has {} entries for {} bones",
                w.len(),
                self.len()
            )));
        }
        let mut m = Matrix3::zeros();
        let mut t = Vec3::zeros();
        for (b, &wb) in w.as_slice().iter().enumerate() {
            if wb != 0.0 {
                m += self.linear[b] * wb;
                t += self.translation[b] * wb;
            }
        }
        Ok((m, t))
    }
}

/// Forward kinematics: composes rest frames and local rotations root to leaf
/// and returns `G_b = P_b · B_b⁻¹`, where `B_b` is the rest frame and `P_b`
/// the posed frame of bone `b`.
pub fn pose_transforms(skeleton: &Skeleton, pose: &Pose) -> Result<BoneTransforms> {
    if pose.rotations.len() != skeleton.len() {
        return Err(Error::Config(format!(
            "pose has {} rotations for {} bones",
            pose.rotations.len(),
            skeleton.len()
        )));
    }
    let mut posed: Vec<Isometry3<f64>> = Vec::with_capacity(skeleton.len());
    let mut skinning = Vec::with_capacity(skeleton.len());
    for (b, bone) in skeleton.bones().iter().enumerate() {
        let rest = bone.rest_frame();
        let local = Isometry3::from_parts(Translation3::identity(), pose.rotations[b]);
        let frame = match bone.parent {
            None => Translation3::from(pose.root_translation) * rest * local,
            Some(p) => {
                let parent_rest = skeleton.bones()[p].rest_frame();
                posed[p] * (parent_rest.inverse() * rest) * local
            }
        };
        skinning.push(frame * rest.inverse());
        posed.push(frame);
    }
    Ok(BoneTransforms::from_isometries(skinning))
}

/// Non-negative per-bone weights summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Config("empty weight vector".into()));
        }
        if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::Config(format!("negative or non-finite weight in {w:?}")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("weights sum to {sum}, expected 1")));
        }
        Ok(WeightVector(w))
    }

    /// All weight on bone `b`.
    pub fn one_hot(bones: usize, b: usize) -> Self {
        let mut w = vec![0.0; bones];
        w[b] = 1.0;
        WeightVector(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Softmax blend of neighbour weight vectors.
///
/// `distances[k]` and `weights.row(k)` describe the k-th neighbour. Logits are
/// `-|d_k| / (2 R_w²)`; see [`crate::knn::KnnResult`] for the producer.
pub fn blend_weight_rows<'a>(
    distances: &[f64],
    rows: impl IntoIterator<Item = &'a [f64]>,
    bones: usize,
    radius: f64,
) -> Result<WeightVector> {
    if distances.is_empty() {
        return Err(Error::EmptyNeighborhood);
    }
    let scale = 1.0 / (2.0 * radius * radius);
    let max_logit = distances
        .iter()
        .map(|d| -d.abs() * scale)
        .fold(f64::NEG_INFINITY, f64::max);
    let soft: Vec<f64> = distances.iter().map(|d| (-d.abs() * scale - max_logit).exp()).collect();
    let total: f64 = soft.iter().sum();
    let mut w = vec![0.0; bones];
    for (s, row) in soft.iter().zip(rows) {
        let a = s / total;
        for (acc, &v) in w.iter_mut().zip(row) {
            *acc += a * v;
        }
    }
    // renormalise away rounding so downstream invariants hold tightly
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    Ok(WeightVector(w))
}

/// Result of inverse skinning one world point.
#[derive(Clone, Debug)]
pub struct Warp {
    /// Canonical position `x′ = T_world · x`.
    pub canonical: Point3,
    /// Linear block of `T_world = (Σ w_b G_b)⁻¹`.
    pub linear: Matrix3<f64>,
    /// Frobenius condition estimate of the blended matrix, 1 for rigid blends.
    pub condition: f64,
}

impl Warp {
    /// Rotation component of `T_world` (polar factor of its linear block).
    pub fn rotation(&self) -> Rotation3<f64> {
        nearest_rotation(&self.linear)
    }
}

fn invert_blend(m: &Matrix3<f64>) -> Result<(Matrix3<f64>, f64)> {
    let inv = m.try_inverse().ok_or(Error::DegenerateWarp {
        condition: f64::INFINITY,
    })?;
    let condition = m.norm() * inv.norm() / 3.0;
    if !condition.is_finite() || condition > MAX_WARP_CONDITION {
        return Err(Error::DegenerateWarp { condition });
    }
    Ok((inv, condition))
}

/// Maps a world point into canonical space with blended bone transforms.
pub fn inverse_warp(x: &Point3, w: &WeightVector, transforms: &BoneTransforms) -> Result<Warp> {
    let (m, t) = transforms.blend(w)?;
    let (inv, condition) = invert_blend(&m)?;
    Ok(Warp {
        canonical: Point3::from(inv * (x.coords - t)),
        linear: inv,
        condition,
    })
}

/// Forward linear blend skinning of a canonical point.
pub fn forward_skin_point(x_can: &Point3, w: &WeightVector, transforms: &BoneTransforms) -> Result<Point3> {
    let (m, t) = transforms.blend(w)?;
    invert_blend(&m)?;
    Ok(Point3::from(m * x_can.coords + t))
}

/// Rotates a canonical normal to world space: `(R_world)⁻¹ · n`.
pub fn rotate_normal_to_world(n_can: &Vec3, r_world: &Rotation3<f64>) -> Result<Vec3> {
    let len = n_can.norm();
    if !(len > 1e-12) || !len.is_finite() {
        return Err(Error::InvalidNormal(format!("length {len}")));
    }
    Ok((r_world.inverse() * n_can).normalize())
}
