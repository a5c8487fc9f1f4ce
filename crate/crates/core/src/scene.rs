//! JSON scene and animation files.
//!
//! A scene file holds the skeleton, named materials, primitives, the combine
//! rule, the displacement field, the template density and an optional list
//! of poses. Rotations are written either as `{"quat": [w, x, y, z]}` or as
//! `{"axis": [x, y, z], "degrees": a}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{Quaternion, Unit, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Point3, Vec3};
use crate::puppet::{CanonicalPrimitive, CombineRule, DisplacementField, PuppetScene, Shape};
use crate::rig::{Bone, Pose, Skeleton};
use crate::shade::Material;

pub const DEFAULT_TEMPLATE_SAMPLES: usize = 2000;

/// Quaternions further than this from unit length are rejected rather than
/// renormalised.
const QUAT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RotationSpec {
    Quat { quat: [f64; 4] },
    AxisAngle { axis: [f64; 3], degrees: f64 },
}

impl RotationSpec {
    pub fn to_quaternion(&self) -> std::result::Result<UnitQuaternion<f64>, String> {
        match self {
            RotationSpec::Quat { quat } => {
                let q = Quaternion::new(quat[0], quat[1], quat[2], quat[3]);
                let n = q.norm();
                if !n.is_finite() || (n - 1.0).abs() > QUAT_TOLERANCE {
                    return Err(format!("quaternion {quat:?} has norm {n}"));
                }
                Ok(UnitQuaternion::from_quaternion(q))
            }
            RotationSpec::AxisAngle { axis, degrees } => {
                let a = Vec3::from(*axis);
                if !(a.norm() > 0.0) || !degrees.is_finite() {
                    return Err(format!("bad axis-angle {axis:?} / {degrees}"));
                }
                Ok(UnitQuaternion::from_axis_angle(
                    &Unit::new_normalize(a),
                    degrees.to_radians(),
                ))
            }
        }
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>) -> Self {
        RotationSpec::Quat {
            quat: [q.w, q.i, q.j, q.k],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoneSpec {
    pub name: String,
    #[serde(default)]
    pub parent: Option<usize>,
    pub head: [f64; 3],
    pub tail: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<RotationSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ShapeSpec {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    Capsule {
        a: [f64; 3],
        b: [f64; 3],
        radius: f64,
    },
    RoundedBox {
        center: [f64; 3],
        half_extents: [f64; 3],
        rounding: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveSpec {
    #[serde(flatten)]
    pub shape: ShapeSpec,
    pub bone: usize,
    pub material: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CombineSpec {
    HardMin,
    SmoothMin { k: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DisplacementSpec {
    Zero,
    Bulge {
        amplitude: f64,
        center: [f64; 3],
        radius: f64,
        direction: [f64; 3],
        bone: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoneRotation {
    pub bone: usize,
    #[serde(flatten)]
    pub rotation: RotationSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<usize>,
    #[serde(default)]
    pub root_translation: [f64; 3],
    /// Bones not listed stay at rest.
    #[serde(default)]
    pub rotations: Vec<BoneRotation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub skeleton: Vec<BoneSpec>,
    pub materials: BTreeMap<String, Material>,
    pub primitives: Vec<PrimitiveSpec>,
    #[serde(default = "default_combine")]
    pub combine: CombineSpec,
    #[serde(default = "default_displacement")]
    pub displacement: DisplacementSpec,
    #[serde(default = "default_samples")]
    pub template_samples: usize,
    #[serde(default)]
    pub poses: Vec<PoseSpec>,
}

fn default_combine() -> CombineSpec {
    CombineSpec::HardMin
}

fn default_displacement() -> DisplacementSpec {
    DisplacementSpec::Zero
}

fn default_samples() -> usize {
    DEFAULT_TEMPLATE_SAMPLES
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnimationFile {
    pub frames: Vec<PoseSpec>,
}

/// A parsed scene with its template density and poses.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedScene {
    pub scene: PuppetScene,
    pub template_samples: usize,
    /// Always non-empty; a file without poses yields the rest pose.
    pub poses: Vec<Pose>,
}

fn p3(a: [f64; 3]) -> Point3 {
    Point3::from(a)
}

fn arr(p: &Point3) -> [f64; 3] {
    [p.x, p.y, p.z]
}

pub fn pose_from_spec(spec: &PoseSpec, index: usize, bones: usize) -> std::result::Result<Pose, String> {
    let mut pose = Pose::identity(bones).with_translation(Vec3::from(spec.root_translation));
    pose.frame = spec.frame.unwrap_or(index);
    for r in &spec.rotations {
        if r.bone >= bones {
            return Err(format!("rotation for bone {} of {bones}", r.bone));
        }
        pose.rotations[r.bone] = r.rotation.to_quaternion()?;
    }
    Ok(pose)
}

pub fn pose_to_spec(pose: &Pose) -> PoseSpec {
    PoseSpec {
        frame: Some(pose.frame),
        root_translation: pose.root_translation.into(),
        rotations: pose
            .rotations
            .iter()
            .enumerate()
            .filter(|(_, q)| **q != UnitQuaternion::identity())
            .map(|(bone, q)| BoneRotation {
                bone,
                rotation: RotationSpec::from_quaternion(q),
            })
            .collect(),
    }
}

impl SceneFile {
    pub fn build(&self) -> std::result::Result<LoadedScene, String> {
        let mut bones = Vec::with_capacity(self.skeleton.len());
        for b in &self.skeleton {
            let mut bone = Bone::new(b.name.clone(), b.parent, p3(b.head), p3(b.tail));
            if let Some(o) = &b.orientation {
                bone.orientation = o.to_quaternion().map_err(|e| format!("bone {}: {e}", b.name))?;
            }
            bones.push(bone);
        }
        let skeleton = Skeleton::new(bones).map_err(|e| e.to_string())?;
        let mut primitives = Vec::with_capacity(self.primitives.len());
        for (i, p) in self.primitives.iter().enumerate() {
            let material = *self
                .materials
                .get(&p.material)
                .ok_or_else(|| format!("primitive {i} uses unknown material {:?}", p.material))?;
            let shape = match p.shape {
                ShapeSpec::Sphere { center, radius } => Shape::Sphere {
                    center: p3(center),
                    radius,
                },
                ShapeSpec::Capsule { a, b, radius } => Shape::Capsule {
                    a: p3(a),
                    b: p3(b),
                    radius,
                },
                ShapeSpec::RoundedBox {
                    center,
                    half_extents,
                    rounding,
                } => Shape::RoundedBox {
                    center: p3(center),
                    half_extents: Vec3::from(half_extents),
                    rounding,
                },
            };
            primitives.push(CanonicalPrimitive {
                shape,
                bone: p.bone,
                material,
            });
        }
        let combine = match self.combine {
            CombineSpec::HardMin => CombineRule::HardMin,
            CombineSpec::SmoothMin { k } => CombineRule::SmoothMin { k },
        };
        let displacement = match self.displacement {
            DisplacementSpec::Zero => DisplacementField::Zero,
            DisplacementSpec::Bulge {
                amplitude,
                center,
                radius,
                direction,
                bone,
            } => DisplacementField::Bulge {
                amplitude,
                center: p3(center),
                radius,
                direction: Vec3::from(direction),
                bone,
            },
        };
        let n = skeleton.len();
        let scene = PuppetScene::new(skeleton, primitives, combine, displacement).map_err(|e| e.to_string())?;
        let mut poses = self
            .poses
            .iter()
            .enumerate()
            .map(|(i, p)| pose_from_spec(p, i, n).map_err(|e| format!("pose {i}: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if poses.is_empty() {
            poses.push(Pose::identity(n));
        }
        Ok(LoadedScene {
            scene,
            template_samples: self.template_samples,
            poses,
        })
    }

    /// Inverse of [`SceneFile::build`]; materials are named `m0`, `m1`, ...
    /// in order of first use.
    pub fn from_scene(scene: &PuppetScene, template_samples: usize, poses: &[Pose]) -> Self {
        let skeleton = scene
            .skeleton
            .bones()
            .iter()
            .map(|b| BoneSpec {
                name: b.name.clone(),
                parent: b.parent,
                head: arr(&b.head),
                tail: arr(&b.tail),
                orientation: (b.orientation != UnitQuaternion::identity())
                    .then(|| RotationSpec::from_quaternion(&b.orientation)),
            })
            .collect();
        let mut materials: Vec<Material> = Vec::new();
        let mut primitives = Vec::new();
        for p in &scene.primitives {
            let idx = materials.iter().position(|m| *m == p.material).unwrap_or_else(|| {
                materials.push(p.material);
                materials.len() - 1
            });
            let shape = match &p.shape {
                Shape::Sphere { center, radius } => ShapeSpec::Sphere {
                    center: arr(center),
                    radius: *radius,
                },
                Shape::Capsule { a, b, radius } => ShapeSpec::Capsule {
                    a: arr(a),
                    b: arr(b),
                    radius: *radius,
                },
                Shape::RoundedBox {
                    center,
                    half_extents,
                    rounding,
                } => ShapeSpec::RoundedBox {
                    center: arr(center),
                    half_extents: (*half_extents).into(),
                    rounding: *rounding,
                },
            };
            primitives.push(PrimitiveSpec {
                shape,
                bone: p.bone,
                material: format!("m{idx}"),
            });
        }
        let combine = match scene.combine {
            CombineRule::HardMin => CombineSpec::HardMin,
            CombineRule::SmoothMin { k } => CombineSpec::SmoothMin { k },
        };
        let displacement = match &scene.displacement {
            DisplacementField::Zero => DisplacementSpec::Zero,
            DisplacementField::Bulge {
                amplitude,
                center,
                radius,
                direction,
                bone,
            } => DisplacementSpec::Bulge {
                amplitude: *amplitude,
                center: arr(center),
                radius: *radius,
                direction: (*direction).into(),
                bone: *bone,
            },
        };
        SceneFile {
            skeleton,
            materials: materials
                .into_iter()
                .enumerate()
                .map(|(i, m)| (format!("m{i}"), m))
                .collect(),
            primitives,
            combine,
            displacement,
            template_samples,
            poses: poses.iter().map(pose_to_spec).collect(),
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn parse_scene(text: &str, path: &Path) -> Result<LoadedScene> {
    let file: SceneFile = serde_json::from_str(text).map_err(|e| Error::json(path, e))?;
    file.build()
        .map_err(|m| Error::Config(format!("{}: {m}", path.display())))
}

pub fn load_scene(path: &Path) -> Result<LoadedScene> {
    parse_scene(&read_text(path)?, path)
}

pub fn save_scene(path: &Path, file: &SceneFile) -> Result<()> {
    let text = serde_json::to_string_pretty(file).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Reads an animation file; every frame must match the skeleton's bone
/// count.
pub fn load_animation(path: &Path, bones: usize) -> Result<Vec<Pose>> {
    let file: AnimationFile = serde_json::from_str(&read_text(path)?).map_err(|e| Error::json(path, e))?;
    if file.frames.is_empty() {
        return Err(Error::Config(format!("{}: animation has no frames", path.display())));
    }
    file.frames
        .iter()
        .enumerate()
        .map(|(i, p)| {
            pose_from_spec(p, i, bones).map_err(|m| Error::Config(format!("{}: frame {i}: {m}", path.display())))
        })
        .collect()
}

pub fn save_animation(path: &Path, poses: &[Pose]) -> Result<()> {
    let file = AnimationFile {
        frames: poses.iter().map(pose_to_spec).collect(),
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    const ARM: &str = r#"{
      "skeleton": [
        {"name": "upper", "parent": null, "head": [0, 0, 0], "tail": [0.6, 0, 0]},
        {"name": "lower", "parent": 0, "head": [0.6, 0, 0], "tail": [1.2, 0, 0]}
      ],
      "materials": {
        "red": {"albedo": [0.7, 0.3, 0.2], "roughness": 0.4},
        "blue": {"albedo": [0.2, 0.4, 0.7], "roughness": 0.6}
      },
      "primitives": [
        {"kind": "capsule", "a": [0, 0, 0], "b": [0.6, 0, 0], "radius": 0.12, "bone": 0, "material": "red"},
        {"kind": "capsule", "a": [0.6, 0, 0], "b": [1.2, 0, 0], "radius": 0.12, "bone": 1, "material": "blue"}
      ],
      "poses": [
        {},
        {"rotations": [{"bone": 1, "axis": [0, 0, 1], "degrees": 90}]}
      ]
    }"#;

    #[test]
    fn parses_the_arm() {
        let loaded = parse_scene(ARM, Path::new("arm.json")).unwrap();
        assert_eq!(loaded.scene, fixtures::bent_arm_scene());
        assert_eq!(loaded.template_samples, DEFAULT_TEMPLATE_SAMPLES);
        assert_eq!(loaded.poses.len(), 2);
        assert!(loaded.poses[0].is_identity());
        let bent = fixtures::bent_pose();
        assert!(loaded.poses[1].rotations[1].angle_to(&bent.rotations[1]) < 1e-12);
        assert_eq!(loaded.poses[1].frame, 1);
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let mut scene = fixtures::sphere_over_ground();
        scene.combine = CombineRule::SmoothMin { k: 0.02 };
        scene.displacement = DisplacementField::Bulge {
            amplitude: 0.02,
            center: Point3::new(0.0, 0.0, 0.5),
            radius: 0.2,
            direction: Vec3::z(),
            bone: 0,
        };
        let poses = vec![Pose::identity(1).with_rotation(0, Vec3::new(1.0, 2.0, 3.0), 0.7)];
        save_scene(&path, &SceneFile::from_scene(&scene, 500, &poses)).unwrap();
        let back = load_scene(&path).unwrap();
        assert_eq!(back.scene, scene);
        assert_eq!(back.template_samples, 500);
        assert!(back.poses[0].rotations[0].angle_to(&poses[0].rotations[0]) < 1e-12);

        let anim = dir.path().join("a.json");
        let frames = vec![Pose::identity(2), fixtures::bent_pose()];
        save_animation(&anim, &frames).unwrap();
        let read = load_animation(&anim, 2).unwrap();
        assert_eq!(read.len(), 2);
        assert!(read[1].rotations[1].angle_to(&frames[1].rotations[1]) < 1e-12);
        assert!(matches!(load_animation(&anim, 1), Err(Error::Config(_))));
    }

    #[test]
    fn errors_carry_context() {
        let p = Path::new("bad.json");
        match parse_scene("{\n  \"skeleton\": [,]\n}", p) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        let unknown = ARM.replace("\"material\": \"blue\"", "\"material\": \"green\"");
        match parse_scene(&unknown, p) {
            Err(Error::Config(m)) => assert!(m.contains("green")),
            other => panic!("{other:?}"),
        }
        let bad_quat = ARM.replace("\"axis\": [0, 0, 1], \"degrees\": 90", "\"quat\": [1, 1, 0, 0]");
        assert!(matches!(parse_scene(&bad_quat, p), Err(Error::Config(_))));
        let bad_bone = ARM.replace("{\"bone\": 1,", "{\"bone\": 7,");
        assert!(matches!(parse_scene(&bad_bone, p), Err(Error::Config(_))));
        assert!(matches!(
            load_scene(Path::new("/nonexistent/x.json")),
            Err(Error::Io { .. })
        ));
    }
}
