//! Exact signed distance primitives.

use crate::math::{segment_param, Point3, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Sphere {
        center: Point3,
        radius: f64,
    },
    Capsule {
        a: Point3,
        b: Point3,
        radius: f64,
    },
    /// Axis-aligned box with outer half extents and rounded edges.
    RoundedBox {
        center: Point3,
        half_extents: Vec3,
        rounding: f64,
    },
}

impl Shape {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            Shape::Sphere { radius, .. } if !(*radius > 0.0) => Err(format!("sphere radius {radius}")),
            Shape::Capsule { radius, .. } if !(*radius > 0.0) => Err(format!("capsule radius {radius}")),
            Shape::Capsule { a, b, .. } if a == b => Err("capsule endpoints coincide".into()),
            Shape::RoundedBox {
                half_extents, rounding, ..
            } => {
                if half_extents.iter().any(|h| !(*h > 0.0)) {
                    Err(format!("box half extents {half_extents:?}"))
                } else if !(*rounding > 0.0) || half_extents.iter().any(|h| *rounding > *h) {
                    Err(format!("box rounding {rounding} must be in (0, min half extent]"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn distance(&self, p: &Point3) -> f64 {
        match self {
            Shape::Sphere { center, radius } => (p - center).norm() - radius,
            Shape::Capsule { a, b, radius } => {
                let t = segment_param(p, a, b);
                (p - (a + (b - a) * t)).norm() - radius
            }
            Shape::RoundedBox {
                center,
                half_extents,
                rounding,
            } => {
                let q = (p - center).abs() - half_extents + Vec3::repeat(*rounding);
                let outside = q.sup(&Vec3::zeros()).norm();
                let inside = q.max().min(0.0);
                outside + inside - rounding
            }
        }
    }

    /// Analytic gradient. Returns a zero vector where the gradient is
    /// undefined (sphere centre, capsule axis).
    pub fn gradient(&self, p: &Point3) -> Vec3 {
        let safe = |v: Vec3| {
            let n = v.norm();
            if n > 0.0 {
                v / n
            } else {
                Vec3::zeros()
            }
        };
        match self {
            Shape::Sphere { center, .. } => safe(p - center),
            Shape::Capsule { a, b, .. } => {
                let t = segment_param(p, a, b);
                safe(p - (a + (b - a) * t))
            }
            Shape::RoundedBox {
                center,
                half_extents,
                rounding,
            } => {
                let d = p - center;
                let q = d.abs() - half_extents + Vec3::repeat(*rounding);
                let signs = d.map(|v| if v < 0.0 { -1.0 } else { 1.0 });
                if q.iter().any(|&v| v > 0.0) {
                    safe(q.sup(&Vec3::zeros()).component_mul(&signs))
                } else {
                    let axis = q.imax();
                    let mut g = Vec3::zeros();
                    g[axis] = signs[axis];
                    g
                }
            }
        }
    }

    /// Surface area, used to split sample budgets.
    pub fn area(&self) -> f64 {
        use std::f64::consts::PI;
        match self {
            Shape::Sphere { radius, .. } => 4.0 * PI * radius * radius,
            Shape::Capsule { a, b, radius } => 2.0 * PI * radius * (b - a).norm() + 4.0 * PI * radius * radius,
            Shape::RoundedBox {
                half_extents, rounding, ..
            } => {
                let e = (half_extents - Vec3::repeat(*rounding)) * 2.0;
                2.0 * (e.x * e.y + e.y * e.z + e.z * e.x)
                    + 2.0 * PI * rounding * (e.x + e.y + e.z)
                    + 4.0 * PI * rounding * rounding
            }
        }
    }
}

/// Polynomial smooth minimum; never exceeds `min(a, b)` and undershoots it
/// by at most `k / 4`.
pub fn smooth_min(a: f64, b: f64, k: f64) -> f64 {
    let h = (k - (a - b).abs()).max(0.0) / k;
    a.min(b) - h * h * k * 0.25
}
