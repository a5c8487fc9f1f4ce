//! Hierarchical distance query: coarse signed KNN distance in world space,
//! refined near the surface by the canonical SDF of the inverse-warped
//! point.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use log::warn;
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn::{gs_knn, KdTree, KnnResult, DEFAULT_K};
use crate::math::{nearest_rotation, Aabb, Point3, Vec3};
use crate::puppet::{bake_template, pose_template, PosedCloud, PuppetScene, TemplateCloud};
use crate::rig::{inverse_warp, pose_transforms, rotate_normal_to_world, BoneTransforms, Pose};

/// Residual below which a point counts as on the surface.
pub const SURFACE_TOLERANCE: f64 = 5e-3;

const NORMAL_JITTER: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HdqConfig {
    /// Coarse distance above which the fine field is skipped.
    pub cutoff: f64,
    /// Blend scale `T_d` of the smooth blend.
    pub blend_scale: f64,
    /// Cutoff used while tracing visibility rays.
    pub vis_cutoff: f64,
    pub k: usize,
    /// Canonical distance threshold of the geodesic neighbour filter.
    pub geodesic_threshold: f64,
    pub blend_radius: f64,
}

impl Default for HdqConfig {
    fn default() -> Self {
        HdqConfig {
            cutoff: 0.1,
            blend_scale: 0.1,
            vis_cutoff: 0.025,
            k: DEFAULT_K,
            geodesic_threshold: 0.1,
            blend_radius: crate::rig::DEFAULT_BLEND_RADIUS,
        }
    }
}

impl HdqConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cutoff", self.cutoff),
            ("blend_scale", self.blend_scale),
            ("vis_cutoff", self.vis_cutoff),
            ("geodesic_threshold", self.geodesic_threshold),
            ("blend_radius", self.blend_radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.vis_cutoff > self.cutoff {
            return Err(Error::Config(format!(
                "vis_cutoff {} exceeds cutoff {}",
                self.vis_cutoff, self.cutoff
            )));
        }
        Ok(())
    }
}

/// Which distance field a trace runs on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldVariant {
    Full,
    /// KNN mean only.
    CoarseOnly,
    /// Canonical SDF of the warped point everywhere, never the coarse mean.
    FineOnly,
}

/// Smooth blend of fine and coarse distance.
pub fn blend(d_fine: f64, d_coarse: f64, t_d: f64) -> f64 {
    d_fine * (1.0 - d_fine / t_d) + d_coarse * (d_fine / t_d)
}

/// Result of one distance evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceSample {
    pub d_coarse: f64,
    pub d_fine: Option<f64>,
    pub blended: f64,
    /// Canonical correspondence `x″` (after displacement).
    pub canonical: Option<Point3>,
    /// Linear block of the inverse blend `T_world`.
    pub warp_linear: Option<Matrix3<f64>>,
    pub degenerate_warp: bool,
}

impl DistanceSample {
    pub fn fine_evaluated(&self) -> bool {
        self.d_fine.is_some()
    }

    /// Rotation component of `T_world`, when the fine field was evaluated.
    pub fn rotation(&self) -> Option<nalgebra::Rotation3<f64>> {
        self.warp_linear.as_ref().map(nearest_rotation)
    }
}

impl fmt::Display for DistanceSample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "d_coarse: {}", self.d_coarse)?;
        match self.d_fine {
            Some(d) => writeln!(f, "d_fine: {d}")?,
            None => writeln!(f, "d_fine: none")?,
        }
        writeln!(f, "d_blended: {}", self.blended)?;
        match self.canonical {
            Some(c) => writeln!(f, "canonical: {} {} {}", c.x, c.y, c.z)?,
            None => writeln!(f, "canonical: none")?,
        }
        match self.rotation() {
            Some(r) => {
                let m = r.matrix();
                writeln!(
                    f,
                    "r_world: {} {} {} {} {} {} {} {} {}",
                    m[(0, 0)],
                    m[(0, 1)],
                    m[(0, 2)],
                    m[(1, 0)],
                    m[(1, 1)],
                    m[(1, 2)],
                    m[(2, 0)],
                    m[(2, 1)],
                    m[(2, 2)]
                )?;
            }
            None => writeln!(f, "r_world: none")?,
        }
        writeln!(f, "fine_evaluated: {}", self.fine_evaluated())?;
        write!(f, "degenerate_warp: {}", self.degenerate_warp)
    }
}

/// Canonical scene plus its baked template cloud.
#[derive(Clone, Debug)]
pub struct Avatar {
    pub scene: PuppetScene,
    pub template: TemplateCloud,
}

impl Avatar {
    pub fn new(scene: PuppetScene, samples_per_primitive: usize) -> Result<Self> {
        let template = bake_template(&scene, samples_per_primitive)?;
        Ok(Avatar { scene, template })
    }

    /// Poses the template and builds the spatial index for one frame.
    pub fn pose(&self, pose: &Pose) -> Result<PosedAvatar<'_>> {
        let transforms = pose_transforms(&self.scene.skeleton, pose)?;
        let cloud = pose_template(&self.template, &transforms)?;
        if cloud.is_empty() {
            return Err(Error::Invariant("every template point was dropped".into()));
        }
        let index = KdTree::build(cloud.positions())?;
        Ok(PosedAvatar {
            avatar: self,
            pose: pose.clone(),
            transforms,
            cloud,
            index,
            queries: AtomicU64::new(0),
            fine_evals: AtomicU64::new(0),
        })
    }
}

/// Per-frame query state: posed cloud, its index and the bone transforms.
#[derive(Debug)]
pub struct PosedAvatar<'a> {
    avatar: &'a Avatar,
    pose: Pose,
    transforms: BoneTransforms,
    cloud: PosedCloud,
    index: KdTree,
    queries: AtomicU64,
    fine_evals: AtomicU64,
}

impl<'a> PosedAvatar<'a> {
    pub fn avatar(&self) -> &'a Avatar {
        self.avatar
    }

    pub fn scene(&self) -> &'a PuppetScene {
        &self.avatar.scene
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }

    pub fn transforms(&self) -> &BoneTransforms {
        &self.transforms
    }

    pub fn cloud(&self) -> &PosedCloud {
        &self.cloud
    }

    pub fn aabb(&self) -> &Aabb {
        self.cloud.aabb()
    }

    /// Number of distance queries answered so far.
    pub fn query_count(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    /// Number of canonical SDF evaluations so far.
    pub fn fine_count(&self) -> u64 {
        self.fine_evals.load(Ordering::Relaxed)
    }

    pub fn reset_counters(&self) {
        self.queries.store(0, Ordering::Relaxed);
        self.fine_evals.store(0, Ordering::Relaxed);
    }

    pub fn knn(&self, x: &Point3, cfg: &HdqConfig) -> KnnResult {
        if self.cloud.len() < cfg.k {
            warn!("posed cloud has {} points, fewer than k = {}", self.cloud.len(), cfg.k);
        }
        gs_knn(
            x,
            &self.index,
            &self.cloud,
            &self.avatar.template,
            cfg.k,
            cfg.geodesic_threshold,
        )
    }

    /// Warps `x` into canonical space and evaluates the canonical SDF there.
    fn fine(&self, x: &Point3, knn: &KnnResult, cfg: &HdqConfig) -> Result<(f64, Point3, Matrix3<f64>)> {
        let w = knn.blend_weights(&self.avatar.template, cfg.blend_radius)?;
        let warp = inverse_warp(x, &w, &self.transforms)?;
        let scene = &self.avatar.scene;
        let x2 = warp.canonical + scene.displacement(&self.pose, &warp.canonical);
        self.fine_evals.fetch_add(1, Ordering::Relaxed);
        Ok((scene.canonical_sdf(&x2), x2, warp.linear))
    }

    /// Full hierarchical query. `cutoff` overrides `cfg.cutoff`.
    pub fn query(&self, x: &Point3, cfg: &HdqConfig, cutoff: Option<f64>) -> DistanceSample {
        self.queries.fetch_add(1, Ordering::Relaxed);
        let knn = self.knn(x, cfg);
        let d_coarse = knn.coarse_distance();
        let coarse = DistanceSample {
            d_coarse,
            d_fine: None,
            blended: d_coarse,
            canonical: None,
            warp_linear: None,
            degenerate_warp: false,
        };
        if d_coarse > cutoff.unwrap_or(cfg.cutoff) {
            return coarse;
        }
        match self.fine(x, &knn, cfg) {
            Ok((d_fine, x2, linear)) => DistanceSample {
                d_fine: Some(d_fine),
                blended: blend(d_fine, d_coarse, cfg.blend_scale),
                canonical: Some(x2),
                warp_linear: Some(linear),
                ..coarse
            },
            Err(_) => DistanceSample {
                degenerate_warp: true,
                ..coarse
            },
        }
    }

    /// Scalar distance of the chosen field variant.
    pub fn distance(&self, x: &Point3, variant: FieldVariant, cfg: &HdqConfig, cutoff: Option<f64>) -> f64 {
        match variant {
            FieldVariant::Full => self.query(x, cfg, cutoff).blended,
            FieldVariant::CoarseOnly => {
                self.queries.fetch_add(1, Ordering::Relaxed);
                self.knn(x, cfg).coarse_distance()
            }
            FieldVariant::FineOnly => {
                self.queries.fetch_add(1, Ordering::Relaxed);
                let knn = self.knn(x, cfg);
                match self.fine(x, &knn, cfg) {
                    Ok((d, _, _)) => d,
                    Err(_) => knn.coarse_distance(),
                }
            }
        }
    }

    fn normal_once(&self, x: &Point3, cfg: &HdqConfig) -> Result<(Vec3, bool)> {
        let s = self.query(x, cfg, None);
        let (Some(x2), Some(r)) = (s.canonical, s.rotation()) else {
            return Err(Error::NotOnSurface {
                residual: s.blended.abs(),
            });
        };
        if s.blended.abs() >= SURFACE_TOLERANCE {
            return Err(Error::NotOnSurface {
                residual: s.blended.abs(),
            });
        }
        let g = self.avatar.scene.canonical_gradient(&x2);
        if g.direction == Vec3::zeros() {
            return Ok((Vec3::zeros(), true));
        }
        Ok((rotate_normal_to_world(&g.direction, &r)?, g.singular))
    }

    /// World-space surface normal `R_world⁻¹ · ∇S(x″)`. A singular gradient
    /// is retried once at a jittered position.
    pub fn surface_normal(&self, x_s: &Point3, cfg: &HdqConfig) -> Result<Vec3> {
        let (n, singular) = self.normal_once(x_s, cfg)?;
        if !singular {
            return Ok(n);
        }
        let jittered = x_s + Vec3::repeat(NORMAL_JITTER / 3f64.sqrt());
        match self.normal_once(&jittered, cfg) {
            Ok((m, _)) if m != Vec3::zeros() => Ok(m),
            _ if n != Vec3::zeros() => Ok(n),
            _ => Err(Error::InvalidNormal("singular canonical gradient".into())),
        }
    }
}

/// Dense forward-skinned surface samples used as a distance oracle.
#[derive(Debug)]
pub struct DenseSurface {
    cloud: PosedCloud,
    index: KdTree,
    /// Largest nearest-neighbour gap estimate between samples.
    pub spacing: f64,
}

impl DenseSurface {
    /// Samples at least `min_points` canonical surface points and skins
    /// them with the same falloff weights as the template.
    pub fn new(scene: &PuppetScene, pose: &Pose, min_points: usize) -> Result<Self> {
        let per = min_points.div_ceil(scene.primitives.len()).max(100);
        let template = bake_template(scene, per)?;
        let transforms = pose_transforms(&scene.skeleton, pose)?;
        let cloud = pose_template(&template, &transforms)?;
        let index = KdTree::build(cloud.positions())?;
        let area: f64 = scene.primitives.iter().map(|p| p.shape.area()).sum();
        let spacing = (area / per as f64).sqrt();
        Ok(DenseSurface { cloud, index, spacing })
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    /// Distance to the nearest sample, signed by that sample's normal.
    pub fn distance(&self, x: &Point3) -> f64 {
        let (i, d2) = self.index.knn(x, 1)[0];
        let v = self.cloud.positions()[i];
        let d = d2.sqrt();
        if (x - v).dot(&self.cloud.normals()[i]) < 0.0 {
            -d
        } else {
            d
        }
    }
}
