//! Surface point cloud standing in for a parametric body template.

use log::warn;

use super::{CombineRule, PuppetScene, Shape};
use crate::error::{Error, Result};
use crate::math::{any_perpendicular, nearest_rotation, Aabb, Point3, Vec3};
use crate::rig::BoneTransforms;

/// Width of the bone-distance skinning falloff.
pub const WEIGHT_SIGMA: f64 = 0.1;

/// Points farther than this from the combined zero set are discarded.
const ON_SURFACE_TOL: f64 = 1e-4;

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

/// Area-parametrised surface piece: `(u, v)` in the unit square to a point.
type Piece = Box<dyn Fn(f64, f64) -> Vec3>;

/// Canonical surface samples with normals and skinning weights.
#[derive(Clone, Debug)]
pub struct TemplateCloud {
    positions: Vec<Point3>,
    normals: Vec<Vec3>,
    weights: Vec<f64>,
    primitive: Vec<usize>,
    bones: usize,
}

impl TemplateCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn bones(&self) -> usize {
        self.bones
    }

    pub fn positions(&self) -> &[Point3] {
        &self.positions
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn position(&self, i: usize) -> &Point3 {
        &self.positions[i]
    }

    pub fn weights(&self, i: usize) -> &[f64] {
        &self.weights[i * self.bones..(i + 1) * self.bones]
    }

    pub fn primitive(&self, i: usize) -> usize {
        self.primitive[i]
    }
}

/// Fibonacci lattice on the unit sphere.
pub(crate) fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = i as f64 * GOLDEN_ANGLE;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

fn halton(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Splits `n` samples proportionally to `areas` (largest remainder).
fn apportion(n: usize, areas: &[f64]) -> Vec<usize> {
    let total: f64 = areas.iter().sum();
    let exact: Vec<f64> = areas.iter().map(|a| a / total * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rem: Vec<(usize, f64)> = exact.iter().enumerate().map(|(i, e)| (i, e - e.floor())).collect();
    rem.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let missing = n - counts.iter().sum::<usize>();
    for (i, _) in rem.into_iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

/// Quasi-uniform samples on the surface of one primitive.
fn sample_shape(shape: &Shape, n: usize) -> Vec<Point3> {
    match shape {
        Shape::Sphere { center, radius } => fibonacci_sphere(n).into_iter().map(|d| center + d * *radius).collect(),
        Shape::Capsule { a, b, radius } => {
            let axis = b - a;
            let len = axis.norm();
            let w = axis / len;
            let u = any_perpendicular(&w);
            let v = w.cross(&u);
            let counts = apportion(n, &[2.0 * len, 2.0 * radius, 2.0 * radius]);
            let mut out = Vec::with_capacity(n);
            for i in 0..counts[0] {
                let h = (i as f64 + 0.5) / counts[0] as f64;
                let phi = i as f64 * GOLDEN_ANGLE;
                out.push(a + w * (h * len) + (u * phi.cos() + v * phi.sin()) * *radius);
            }
            for (cap, center, dir) in [(counts[1], a, -w), (counts[2], b, w)] {
                for i in 0..cap {
                    let c = 1.0 - (i as f64 + 0.5) / cap as f64;
                    let s = (1.0 - c * c).max(0.0).sqrt();
                    let phi = i as f64 * GOLDEN_ANGLE;
                    out.push(center + (dir * c + (u * phi.cos() + v * phi.sin()) * s) * *radius);
                }
            }
            out
        }
        Shape::RoundedBox {
            center,
            half_extents,
            rounding,
        } => {
            let r = *rounding;
            let e = half_extents - Vec3::repeat(r);
            // pieces: 6 faces, 12 edges, 8 corners
            let mut pieces: Vec<(f64, Piece)> = Vec::new();
            for i in 0..3 {
                let (j, k) = ((i + 1) % 3, (i + 2) % 3);
                for s in [-1.0, 1.0] {
                    pieces.push((
                        4.0 * e[j] * e[k],
                        Box::new(move |p, q| {
                            let mut x = Vec3::zeros();
                            x[i] = s * (e[i] + r);
                            x[j] = (2.0 * p - 1.0) * e[j];
                            x[k] = (2.0 * q - 1.0) * e[k];
                            x
                        }),
                    ));
                }
            }
            for i in 0..3 {
                let (j, k) = ((i + 1) % 3, (i + 2) % 3);
                for sj in [-1.0, 1.0] {
                    for sk in [-1.0, 1.0] {
                        pieces.push((
                            std::f64::consts::PI * r * e[i],
                            Box::new(move |p, q| {
                                let phi = q * std::f64::consts::FRAC_PI_2;
                                let mut x = Vec3::zeros();
                                x[i] = (2.0 * p - 1.0) * e[i];
                                x[j] = sj * (e[j] + r * phi.cos());
                                x[k] = sk * (e[k] + r * phi.sin());
                                x
                            }),
                        ));
                    }
                }
            }
            for corner in 0..8 {
                let s = Vec3::new(
                    if corner & 1 == 0 { -1.0 } else { 1.0 },
                    if corner & 2 == 0 { -1.0 } else { 1.0 },
                    if corner & 4 == 0 { -1.0 } else { 1.0 },
                );
                pieces.push((
                    std::f64::consts::FRAC_PI_2 * r * r,
                    Box::new(move |p, q| {
                        let z = p;
                        let rho = (1.0 - z * z).max(0.0).sqrt();
                        let phi = q * std::f64::consts::FRAC_PI_2;
                        let d = Vec3::new(rho * phi.cos(), rho * phi.sin(), z);
                        (e + d * r).component_mul(&s)
                    }),
                ));
            }
            let areas: Vec<f64> = pieces.iter().map(|p| p.0).collect();
            let counts = apportion(n, &areas);
            let mut out = Vec::with_capacity(n);
            for ((_, f), count) in pieces.iter().zip(counts) {
                for i in 0..count {
                    out.push(center + f(halton(i + 1, 2), halton(i + 1, 3)));
                }
            }
            out
        }
    }
}

/// Projects `p` onto the combined zero set. Returns `None` for points
/// swallowed by other primitives.
fn project(scene: &PuppetScene, p: Point3) -> Option<Point3> {
    match scene.combine {
        CombineRule::HardMin => (scene.canonical_sdf(&p).abs() < ON_SURFACE_TOL).then_some(p),
        CombineRule::SmoothMin { k } => {
            let mut q = p;
            for _ in 0..20 {
                let d = scene.canonical_sdf(&q);
                if d.abs() < 1e-7 {
                    break;
                }
                let g = scene.gradient_fd(&q, 1e-6);
                let g2 = g.norm_squared();
                if g2 < 1e-12 {
                    return None;
                }
                q -= g * (d / g2);
            }
            (scene.canonical_sdf(&q).abs() < ON_SURFACE_TOL && (q - p).norm() < k).then_some(q)
        }
    }
}

/// Samples every primitive surface, keeps points on the combined zero set
/// and attaches normals and bone-falloff skinning weights.
pub fn bake_template(scene: &PuppetScene, samples_per_primitive: usize) -> Result<TemplateCloud> {
    if samples_per_primitive < 100 {
        return Err(Error::Config(format!(
            "samples_per_primitive must be at least 100, got {samples_per_primitive}"
        )));
    }
    let bones = scene.skeleton.len();
    let mut cloud = TemplateCloud {
        positions: Vec::new(),
        normals: Vec::new(),
        weights: Vec::new(),
        primitive: Vec::new(),
        bones,
    };
    for (id, prim) in scene.primitives.iter().enumerate() {
        let before = cloud.len();
        for p in sample_shape(&prim.shape, samples_per_primitive) {
            let Some(p) = project(scene, p) else { continue };
            let g = scene.canonical_gradient(&p);
            if g.direction == Vec3::zeros() {
                continue;
            }
            cloud.positions.push(p);
            cloud.normals.push(g.direction);
            cloud.weights.extend(scene.falloff_weights(&p, WEIGHT_SIGMA));
            cloud.primitive.push(id);
        }
        if cloud.len() == before {
            warn!("primitive {id} is fully swallowed by its neighbours; no template points");
        }
    }
    if cloud.is_empty() {
        return Err(Error::Config("template cloud is empty".into()));
    }
    if cloud.len() < 1000 {
        warn!("template cloud has only {} points", cloud.len());
    }
    Ok(cloud)
}

/// Template points skinned into world space.
#[derive(Clone, Debug)]
pub struct PosedCloud {
    positions: Vec<Point3>,
    normals: Vec<Vec3>,
    /// Template index of each posed point.
    source: Vec<usize>,
    dropped: usize,
    aabb: Aabb,
}

impl PosedCloud {
    pub fn from_parts(positions: Vec<Point3>, normals: Vec<Vec3>, source: Vec<usize>) -> Self {
        let aabb = Aabb::from_points(&positions);
        PosedCloud {
            positions,
            normals,
            source,
            dropped: 0,
            aabb,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point3] {
        &self.positions
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn source(&self, i: usize) -> usize {
        self.source[i]
    }

    /// Points removed because their skinning blend was degenerate.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn aabb(&self) -> &Aabb {
        &self.aabb
    }
}

/// Forward-skins every template point; normals are rotated by the nearest
/// rotation of the blended transform.
pub fn pose_template(cloud: &TemplateCloud, transforms: &BoneTransforms) -> Result<PosedCloud> {
    if transforms.len() != cloud.bones() {
        return Err(Error::Config(format!(
            "template has {} bones, transforms have {}",
            cloud.bones(),
            transforms.len()
        )));
    }
    let mut positions = Vec::with_capacity(cloud.len());
    let mut normals = Vec::with_capacity(cloud.len());
    let mut source = Vec::with_capacity(cloud.len());
    let mut dropped = 0;
    for i in 0..cloud.len() {
        let w = crate::rig::WeightVector::new(cloud.weights(i).to_vec())?;
        let (m, t) = transforms.blend(&w)?;
        let invertible = m
            .try_inverse()
            .map(|inv| m.norm() * inv.norm() / 3.0 <= crate::rig::MAX_WARP_CONDITION)
            .unwrap_or(false);
        if !invertible {
            dropped += 1;
            continue;
        }
        positions.push(Point3::from(m * cloud.positions[i].coords + t));
        normals.push((nearest_rotation(&m) * cloud.normals[i]).normalize());
        source.push(i);
    }
    if dropped > 0 {
        warn!("{dropped} template points dropped by degenerate skinning blends");
    }
    let aabb = Aabb::from_points(&positions);
    Ok(PosedCloud {
        positions,
        normals,
        source,
        dropped,
        aabb,
    })
}
