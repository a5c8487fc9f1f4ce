//! Small reference scenes shared by tests, benchmarks and the CLI.

use std::f64::consts::FRAC_PI_2;

use crate::math::{Point3, Vec3};
use crate::puppet::{CanonicalPrimitive, CombineRule, DisplacementField, PuppetScene, Shape};
use crate::rig::{Bone, Pose, Skeleton};
use crate::shade::Material;

/// Single sphere owned by a single root bone.
pub fn sphere_scene(radius: f64, material: Material) -> PuppetScene {
    PuppetScene::new(
        Skeleton::single(),
        vec![CanonicalPrimitive {
            shape: Shape::Sphere {
                center: Point3::origin(),
                radius,
            },
            bone: 0,
            material,
        }],
        CombineRule::HardMin,
        DisplacementField::Zero,
    )
    .expect("valid sphere scene")
}

pub fn arm_skeleton() -> Skeleton {
    Skeleton::new(vec![
        Bone::new("upper", None, Point3::origin(), Point3::new(0.6, 0.0, 0.0)),
        Bone::new("lower", Some(0), Point3::new(0.6, 0.0, 0.0), Point3::new(1.2, 0.0, 0.0)),
    ])
    .expect("valid arm")
}

/// Two capsules of radius 0.12 along a two-bone chain on the x axis.
pub fn bent_arm_scene() -> PuppetScene {
    PuppetScene::new(
        arm_skeleton(),
        vec![
            CanonicalPrimitive {
                shape: Shape::Capsule {
                    a: Point3::origin(),
                    b: Point3::new(0.6, 0.0, 0.0),
                    radius: 0.12,
                },
                bone: 0,
                material: Material {
                    albedo: [0.7, 0.3, 0.2],
                    roughness: 0.4,
                },
            },
            CanonicalPrimitive {
                shape: Shape::Capsule {
                    a: Point3::new(0.6, 0.0, 0.0),
                    b: Point3::new(1.2, 0.0, 0.0),
                    radius: 0.12,
                },
                bone: 1,
                material: Material {
                    albedo: [0.2, 0.4, 0.7],
                    roughness: 0.6,
                },
            },
        ],
        CombineRule::HardMin,
        DisplacementField::Zero,
    )
    .expect("valid arm scene")
}

/// Elbow bent by a quarter turn about +z.
pub fn bent_pose() -> Pose {
    Pose::identity(2).with_rotation(1, Vec3::z(), FRAC_PI_2)
}

/// Sphere of radius 0.3 whose centre hovers 0.5 above the top of a thin
/// ground slab; the slab top is the plane z = 0.
pub fn sphere_over_ground() -> PuppetScene {
    let grey = Material {
        albedo: [0.5; 3],
        roughness: 0.8,
    };
    PuppetScene::new(
        Skeleton::single(),
        vec![
            CanonicalPrimitive {
                shape: Shape::RoundedBox {
                    center: Point3::new(0.0, 0.0, -0.05),
                    half_extents: Vec3::new(0.6, 0.6, 0.05),
                    rounding: 0.02,
                },
                bone: 0,
                material: grey,
            },
            CanonicalPrimitive {
                shape: Shape::Sphere {
                    center: Point3::new(0.0, 0.0, 0.5),
                    radius: 0.3,
                },
                bone: 0,
                material: grey,
            },
        ],
        CombineRule::HardMin,
        DisplacementField::Zero,
    )
    .expect("valid ground scene")
}
