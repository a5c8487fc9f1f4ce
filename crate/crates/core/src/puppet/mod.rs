//! Canonical-space geometry of the articulated puppet.
//!
//! The puppet is a union of analytic primitives, each owned by one bone and
//! carrying a constant material. It exposes a scalar field with a gradient,
//! which is everything the distance query needs from a canonical SDF.

mod shape;
mod template;

pub use shape::{smooth_min, Shape};
pub use template::{bake_template, pose_template, PosedCloud, TemplateCloud};

use crate::error::{Error, Result};
use crate::math::{angle_deg, Point3, Vec3};
use crate::rig::{Pose, Skeleton};
use crate::shade::Material;

/// Step for central-difference gradients.
pub const GRADIENT_STEP: f64 = 1e-4;

/// Analytic and finite-difference gradients disagreeing by more than this
/// mark a gradient singularity.
const SINGULAR_ANGLE_DEG: f64 = 5.0;

#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalPrimitive {
    pub shape: Shape,
    pub bone: usize,
    pub material: Material,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CombineRule {
    HardMin,
    /// Polynomial smooth minimum with blend width `k`; approximate SDF.
    SmoothMin {
        k: f64,
    },
}

/// Pose-dependent canonical displacement.
#[derive(Clone, Debug, PartialEq)]
pub enum DisplacementField {
    Zero,
    /// Smooth bump of at most `amplitude` along `direction`, confined to a
    /// ball of `radius` around `center` and scaled by how far `bone` is
    /// rotated from rest (saturating at a quarter turn). Vanishes at the
    /// identity pose.
    Bulge {
        amplitude: f64,
        center: Point3,
        radius: f64,
        direction: Vec3,
        bone: usize,
    },
}

impl DisplacementField {
    pub fn amplitude(&self) -> f64 {
        match self {
            DisplacementField::Zero => 0.0,
            DisplacementField::Bulge { amplitude, .. } => *amplitude,
        }
    }

    /// Offset added to a warped canonical point.
    pub fn offset(&self, pose: &Pose, x: &Point3) -> Vec3 {
        match self {
            DisplacementField::Zero => Vec3::zeros(),
            DisplacementField::Bulge {
                amplitude,
                center,
                radius,
                direction,
                bone,
            } => {
                let activation = pose
                    .rotations
                    .get(*bone)
                    .map(|q| (q.angle() / std::f64::consts::FRAC_PI_2).min(1.0))
                    .unwrap_or(0.0);
                if activation == 0.0 {
                    return Vec3::zeros();
                }
                let r = (x - center).norm() / radius;
                if r >= 1.0 {
                    return Vec3::zeros();
                }
                let falloff = (1.0 - r * r).powi(2);
                direction.normalize() * (amplitude * activation * falloff)
            }
        }
    }
}

/// Gradient of the canonical field with a singularity flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gradient {
    pub direction: Vec3,
    pub singular: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PuppetScene {
    pub skeleton: Skeleton,
    pub primitives: Vec<CanonicalPrimitive>,
    pub combine: CombineRule,
    pub displacement: DisplacementField,
}

impl PuppetScene {
    pub fn new(
        skeleton: Skeleton,
        primitives: Vec<CanonicalPrimitive>,
        combine: CombineRule,
        displacement: DisplacementField,
    ) -> Result<Self> {
        if primitives.is_empty() {
            return Err(Error::Config("scene has no primitives".into()));
        }
        for (i, prim) in primitives.iter().enumerate() {
            prim.shape
                .validate()
                .map_err(|m| Error::Config(format!("primitive {i}: {m}")))?;
            if prim.bone >= skeleton.len() {
                return Err(Error::Config(format!(
                    "primitive {i} references bone {} of {}",
                    prim.bone,
                    skeleton.len()
                )));
            }
            prim.material
                .validate()
                .map_err(|m| Error::Config(format!("primitive {i}: {m}")))?;
        }
        if let CombineRule::SmoothMin { k } = combine {
            if !(k > 0.0) {
                return Err(Error::Config(format!("smooth-min k must be positive, got {k}")));
            }
        }
        match &displacement {
            DisplacementField::Zero => {}
            DisplacementField::Bulge {
                amplitude,
                radius,
                direction,
                bone,
                ..
            } => {
                if !(*amplitude >= 0.0 && *amplitude < 0.05) {
                    return Err(Error::Config(format!(
                        "displacement amplitude {amplitude} outside [0, 0.05)"
                    )));
                }
                if !(*radius > 0.0) || direction.norm() == 0.0 || *bone >= skeleton.len() {
                    return Err(Error::Config("malformed bulge displacement".into()));
                }
            }
        }
        Ok(PuppetScene {
            skeleton,
            primitives,
            combine,
            displacement,
        })
    }

    /// Whether the combined field is an exact SDF.
    pub fn is_exact(&self) -> bool {
        matches!(self.combine, CombineRule::HardMin)
    }

    /// Canonical signed distance `S(x″)`.
    pub fn canonical_sdf(&self, x: &Point3) -> f64 {
        let mut iter = self.primitives.iter().map(|p| p.shape.distance(x));
        let first = iter.next().expect("non-empty");
        match self.combine {
            CombineRule::HardMin => iter.fold(first, f64::min),
            CombineRule::SmoothMin { k } => iter.fold(first, |a, b| smooth_min(a, b, k)),
        }
    }

    fn nearest_primitive(&self, x: &Point3) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, p) in self.primitives.iter().enumerate() {
            let d = p.shape.distance(x);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    /// Central-difference gradient of the combined field (unnormalised).
    pub fn gradient_fd(&self, x: &Point3, h: f64) -> Vec3 {
        let mut g = Vec3::zeros();
        for axis in 0..3 {
            let mut e = Vec3::zeros();
            e[axis] = h;
            g[axis] = (self.canonical_sdf(&(x + e)) - self.canonical_sdf(&(x - e))) / (2.0 * h);
        }
        g
    }

    /// Unit gradient of `S`. Analytic for hard-min scenes (gradient of the
    /// closest primitive); central differences otherwise. Points where the
    /// analytic and difference gradients disagree are flagged singular.
    pub fn canonical_gradient(&self, x: &Point3) -> Gradient {
        let fd = self.gradient_fd(x, GRADIENT_STEP);
        match self.combine {
            CombineRule::HardMin => {
                let (i, _) = self.nearest_primitive(x);
                let analytic = self.primitives[i].shape.gradient(x);
                if analytic == Vec3::zeros() {
                    let singular = fd.norm() < 1e-6;
                    let direction = if singular { Vec3::zeros() } else { fd.normalize() };
                    return Gradient {
                        direction,
                        singular: true,
                    };
                }
                let singular = fd.norm() < 0.5 || angle_deg(&analytic, &fd) > SINGULAR_ANGLE_DEG;
                Gradient {
                    direction: analytic,
                    singular,
                }
            }
            CombineRule::SmoothMin { .. } => {
                let n = fd.norm();
                if n < 1e-6 {
                    Gradient {
                        direction: Vec3::zeros(),
                        singular: true,
                    }
                } else {
                    Gradient {
                        direction: fd / n,
                        singular: false,
                    }
                }
            }
        }
    }

    /// Material of the primitive nearest by unsigned distance; ties go to
    /// the lower primitive index.
    pub fn material_at(&self, x: &Point3) -> Material {
        let mut best = (0, f64::INFINITY);
        for (i, p) in self.primitives.iter().enumerate() {
            let d = p.shape.distance(x).abs();
            if d < best.1 {
                best = (i, d);
            }
        }
        self.primitives[best.0].material
    }

    /// Displacement `F_Δx(Θ, x′)`.
    pub fn displacement(&self, pose: &Pose, x: &Point3) -> Vec3 {
        self.displacement.offset(pose, x)
    }

    /// Skinning weight of each bone at a canonical point: Gaussian falloff
    /// of the distance to each bone segment, normalised.
    pub fn falloff_weights(&self, x: &Point3, sigma: f64) -> Vec<f64> {
        let d2: Vec<f64> = (0..self.skeleton.len())
            .map(|b| {
                let (a, t) = self.skeleton.segment(b);
                crate::math::segment_distance(x, &a, &t).powi(2)
            })
            .collect();
        let min = d2.iter().copied().fold(f64::INFINITY, f64::min);
        let mut w: Vec<f64> = d2.iter().map(|d| (-(d - min) / (2.0 * sigma * sigma)).exp()).collect();
        let sum: f64 = w.iter().sum();
        for v in &mut w {
            *v /= sum;
        }
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::rig::Bone;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mat(v: f64) -> Material {
        Material::new([v, v, v], 0.5).unwrap()
    }

    fn two_spheres() -> PuppetScene {
        PuppetScene::new(
            Skeleton::single(),
            vec![
                CanonicalPrimitive {
                    shape: Shape::Sphere {
                        center: Point3::new(-1.0, 0.0, 0.0),
                        radius: 0.5,
                    },
                    bone: 0,
                    material: mat(0.2),
                },
                CanonicalPrimitive {
                    shape: Shape::Sphere {
                        center: Point3::new(1.0, 0.0, 0.0),
                        radius: 0.3,
                    },
                    bone: 0,
                    material: mat(0.7),
                },
            ],
            CombineRule::HardMin,
            DisplacementField::Zero,
        )
        .unwrap()
    }

    #[test]
    fn single_sphere_sdf() {
        let scene = fixtures::sphere_scene(0.5, mat(0.5));
        assert_eq!(scene.canonical_sdf(&Point3::new(1.0, 0.0, 0.0)), 0.5);
        assert_eq!(scene.canonical_sdf(&Point3::origin()), -0.5);
        let g = scene.canonical_gradient(&Point3::new(1.0, 0.0, 0.0));
        assert_eq!(g.direction, Vec3::x());
        assert!(!g.singular);
        assert!(scene.canonical_gradient(&Point3::origin()).singular);
    }

    #[test]
    fn disjoint_spheres_match_dense_surface_oracle() {
        let scene = two_spheres();
        // oracle: brute-force min distance to dense Fibonacci samples of both spheres
        let mut samples = Vec::new();
        for (c, r) in [(Point3::new(-1.0, 0.0, 0.0), 0.5), (Point3::new(1.0, 0.0, 0.0), 0.3)] {
            for d in crate::puppet::template::fibonacci_sphere(20_000) {
                samples.push(c + d * r);
            }
        }
        let oracle = |p: &Point3| samples.iter().map(|s| (p - s).norm()).fold(f64::INFINITY, f64::min);
        // equidistant from both surfaces: x such that |x+1|-0.5 = |1-x|-0.3 => x = 0.1
        let p = Point3::new(0.1, 0.0, 0.0);
        assert!((scene.canonical_sdf(&p) - 0.6).abs() < 1e-12);
        assert!((oracle(&p) - 0.6).abs() < 1e-3);
        let q = Point3::new(0.2, 0.7, -0.3);
        assert!((scene.canonical_sdf(&q) - oracle(&q)).abs() < 5e-3);
    }

    #[test]
    fn material_lookup() {
        let scene = two_spheres();
        assert_eq!(scene.material_at(&Point3::new(1.3, 0.0, 0.0)), mat(0.7));
        assert_eq!(scene.material_at(&Point3::new(-1.5, 0.0, 0.0)), mat(0.2));
        // equidistant point resolves to primitive 0
        assert_eq!(scene.material_at(&Point3::new(0.1, 0.0, 0.0)), mat(0.2));
        let single = fixtures::sphere_scene(0.5, mat(0.4));
        assert_eq!(single.material_at(&Point3::new(3.0, 2.0, 1.0)), mat(0.4));
    }

    #[test]
    fn gradient_agrees_with_differences_near_surface() {
        let scene = fixtures::bent_arm_scene();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        while checked < 500 {
            let p = Point3::new(
                rng.random_range(-0.2..1.4),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            );
            if scene.canonical_sdf(&p).abs() > 0.05 {
                continue;
            }
            let g = scene.canonical_gradient(&p);
            if g.singular {
                continue;
            }
            let fd = scene.gradient_fd(&p, 1e-5);
            assert!(angle_deg(&g.direction, &fd) < 0.5);
            checked += 1;
        }
    }

    #[test]
    fn eikonal_property_holds_for_hard_min() {
        let scene = fixtures::bent_arm_scene();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 10_000 {
            let p = Point3::new(
                rng.random_range(-0.4..1.6),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            );
            if scene.canonical_gradient(&p).singular {
                continue;
            }
            let fd = scene.gradient_fd(&p, 1e-5);
            assert!((fd.norm() - 1.0).abs() < 1e-3, "{p:?}: {}", fd.norm());
            checked += 1;
        }
    }

    #[test]
    fn displacement_cases() {
        let scene = fixtures::bent_arm_scene();
        let rest = Pose::identity(2);
        assert_eq!(scene.displacement(&rest, &Point3::new(0.6, 0.1, 0.0)), Vec3::zeros());

        let bulge = DisplacementField::Bulge {
            amplitude: 0.02,
            center: Point3::new(0.6, 0.0, 0.0),
            radius: 0.3,
            direction: Vec3::new(0.0, 1.0, 1.0),
            bone: 1,
        };
        assert_eq!(bulge.offset(&rest, &Point3::new(0.6, 0.0, 0.0)), Vec3::zeros());
        let bent = fixtures::bent_pose();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut max: f64 = 0.0;
        for _ in 0..10_000 {
            let p = Point3::new(
                rng.random_range(0.2..1.0),
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
            );
            let o = bulge.offset(&bent, &p);
            assert!(o.norm() <= 0.02 + 1e-15);
            max = max.max(o.norm());
        }
        assert!(max > 0.015);
    }

    #[test]
    fn scene_validation() {
        let prim = |shape| CanonicalPrimitive {
            shape,
            bone: 0,
            material: mat(0.5),
        };
        let bad_radius = PuppetScene::new(
            Skeleton::single(),
            vec![prim(Shape::Sphere {
                center: Point3::origin(),
                radius: 0.0,
            })],
            CombineRule::HardMin,
            DisplacementField::Zero,
        );
        assert!(bad_radius.is_err());
        let degenerate_capsule = PuppetScene::new(
            Skeleton::single(),
            vec![prim(Shape::Capsule {
                a: Point3::origin(),
                b: Point3::origin(),
                radius: 0.1,
            })],
            CombineRule::HardMin,
            DisplacementField::Zero,
        );
        assert!(degenerate_capsule.is_err());
        let big_bulge = PuppetScene::new(
            Skeleton::single(),
            vec![prim(Shape::Sphere {
                center: Point3::origin(),
                radius: 0.5,
            })],
            CombineRule::HardMin,
            DisplacementField::Bulge {
                amplitude: 0.06,
                center: Point3::origin(),
                radius: 0.2,
                direction: Vec3::x(),
                bone: 0,
            },
        );
        assert!(big_bulge.is_err());
        let missing_bone = PuppetScene::new(
            Skeleton::new(vec![Bone::new("r", None, Point3::origin(), Point3::origin())]).unwrap(),
            vec![CanonicalPrimitive {
                bone: 3,
                ..prim(Shape::Sphere {
                    center: Point3::origin(),
                    radius: 0.5,
                })
            }],
            CombineRule::HardMin,
            DisplacementField::Zero,
        );
        assert!(missing_bone.is_err());
    }

    #[test]
    fn smooth_min_stays_within_k_of_hard_min() {
        let mut scene = fixtures::bent_arm_scene();
        let hard = scene.clone();
        scene.combine = CombineRule::SmoothMin { k: 0.05 };
        assert!(!scene.is_exact());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let p = Point3::new(
                rng.random_range(-0.4..1.6),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            );
            let (s, h) = (scene.canonical_sdf(&p), hard.canonical_sdf(&p));
            assert!(s <= h && h - s <= 0.05);
        }
    }

    #[test]
    fn falloff_weights_single_bone() {
        let scene = fixtures::sphere_scene(0.5, mat(0.5));
        assert_eq!(scene.falloff_weights(&Point3::new(0.3, 0.1, 0.0), 0.1), vec![1.0]);
    }
}
