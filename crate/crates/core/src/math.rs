//! Small geometric helpers shared across modules.

use nalgebra::{Matrix3, Rotation3};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Point3 = nalgebra::Point3<f64>;

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3>) -> Self {
        let mut bb = Aabb::empty();
        for p in points {
            bb.grow(p);
        }
        bb
    }

    pub fn grow(&mut self, p: &Point3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|i| self.min[i] > self.max[i])
    }

    pub fn inflated(&self, pad: f64) -> Self {
        let v = Vec3::repeat(pad);
        Aabb {
            min: self.min - v,
            max: self.max + v,
        }
    }

    pub fn center(&self) -> Point3 {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }
}

/// Nearest rotation to `m` in the Frobenius sense (orthogonal polar factor).
///
/// A reflection in the SVD is folded into the smallest singular direction so
/// the result always has determinant +1.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Rotation3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        // singular values come out sorted descending
        let mut u_fixed = u;
        u_fixed.column_mut(2).neg_mut();
        r = u_fixed * v_t;
    }
    Rotation3::from_matrix_unchecked(r)
}

/// Three-valued sign: -1, 0 or +1.
pub fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Angle between two vectors in degrees.
pub fn angle_deg(a: &Vec3, b: &Vec3) -> f64 {
    let c = a.dot(b) / (a.norm() * b.norm());
    c.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Any unit vector perpendicular to `n`.
pub fn any_perpendicular(n: &Vec3) -> Vec3 {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    n.cross(&helper).normalize()
}

/// Closest point parameter on segment `a`-`b` to `p`, clamped to [0, 1].
pub fn segment_param(p: &Point3, a: &Point3, b: &Point3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return 0.0;
    }
    ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
}

pub fn segment_distance(p: &Point3, a: &Point3, b: &Point3) -> f64 {
    let t = segment_param(p, a, b);
    (p - (a + (b - a) * t)).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;

    #[test]
    fn nearest_rotation_of_rotation_is_itself() {
        let q = UnitQuaternion::from_euler_angles(0.3, -1.1, 2.0);
        let m = *q.to_rotation_matrix().matrix();
        let r = nearest_rotation(&m);
        assert!((r.matrix() - m).amax() < 1e-12);
    }

    #[test]
    fn nearest_rotation_of_scaled_rotation() {
        let q = UnitQuaternion::from_euler_angles(0.7, 0.2, -0.4);
        let m = *q.to_rotation_matrix().matrix() * 0.3;
        let r = nearest_rotation(&m);
        assert!((r.matrix() - q.to_rotation_matrix().matrix()).amax() < 1e-12);
        assert!((r.matrix().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nearest_rotation_never_reflects() {
        let m = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, -0.5));
        let r = nearest_rotation(&m);
        assert!((r.matrix().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn segment_distance_cases() {
        let a = Point3::origin();
        let b = Point3::new(1.0, 0.0, 0.0);
        assert!((segment_distance(&Point3::new(0.5, 2.0, 0.0), &a, &b) - 2.0).abs() < 1e-15);
        assert!((segment_distance(&Point3::new(-3.0, 4.0, 0.0), &a, &b) - 5.0).abs() < 1e-15);
        assert!((segment_distance(&Point3::new(0.2, 0.0, 0.0), &a, &a) - 0.2).abs() < 1e-15);
    }
}
