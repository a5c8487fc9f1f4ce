//! Sphere tracing on the hierarchical field: surface intersection, soft and
//! hard shadow-ray visibility, a Monte-Carlo area-light reference and a
//! dense ray-march baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hdq::{FieldVariant, HdqConfig, PosedAvatar, SURFACE_TOLERANCE};
use crate::math::{any_perpendicular, sign, Aabb, Point3, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Point3,
    pub direction: Vec3,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn new(origin: Point3, direction: Vec3, near: f64, far: f64) -> Result<Self> {
        if ((direction.norm() - 1.0).abs() > 1e-9) || !(0.0 <= near && near < far) {
            return Err(Error::Config(format!(
                "invalid ray: |d| = {}, near = {near}, far = {far}",
                direction.norm()
            )));
        }
        Ok(Ray {
            origin,
            direction,
            near,
            far,
        })
    }

    pub fn at(&self, t: f64) -> Point3 {
        self.origin + self.direction * t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceConfig {
    /// Surface intersection steps.
    pub steps: usize,
    pub offset: f64,
    /// Soft visibility steps.
    pub vis_steps: usize,
    pub vis_near: f64,
    pub vis_far: f64,
    pub hit_threshold: f64,
    pub aabb_pad: f64,
    /// Samples of the dense ray-march baseline.
    pub dense_samples: usize,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            steps: 16,
            offset: 0.02,
            vis_steps: 4,
            vis_near: 0.01,
            vis_far: 10.0,
            hit_threshold: SURFACE_TOLERANCE,
            aabb_pad: 0.15,
            dense_samples: 128,
        }
    }
}

impl TraceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.vis_steps == 0 || self.dense_samples < 2 {
            return Err(Error::Config("step counts must be at least 1".into()));
        }
        if !(self.offset >= 0.0) {
            return Err(Error::Config(format!(
                "offset must be non-negative, got {}",
                self.offset
            )));
        }
        if !(0.0 <= self.vis_near && self.vis_near < self.vis_far) {
            return Err(Error::Config("visibility near/far out of order".into()));
        }
        if !(self.hit_threshold > 0.0) || !(self.aabb_pad >= 0.0) {
            return Err(Error::Config("hit threshold and pad must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of one intersection trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub hit: bool,
    /// Depth of the intersection; `far` on a miss.
    pub t: f64,
    /// Depth the tracer settled on, kept on misses for diagnostics.
    pub t_trace: f64,
    /// `origin + t_trace · direction`.
    pub position: Point3,
    /// `|d(position)|` of the traced field.
    pub residual: f64,
    pub canonical: Option<Point3>,
    pub steps: usize,
}

/// Slab test against `aabb` inflated by `pad`. The entry depth is clamped
/// to zero for origins inside the box.
pub fn ray_aabb(origin: &Point3, direction: &Vec3, aabb: &Aabb, pad: f64) -> Option<(f64, f64)> {
    if aabb.is_empty() {
        return None;
    }
    let b = aabb.inflated(pad);
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for i in 0..3 {
        if direction[i] == 0.0 {
            if origin[i] < b.min[i] || origin[i] > b.max[i] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / direction[i];
        let (mut a, mut c) = ((b.min[i] - origin[i]) * inv, (b.max[i] - origin[i]) * inv);
        if a > c {
            std::mem::swap(&mut a, &mut c);
        }
        t0 = t0.max(a);
        t1 = t1.min(c);
        if t0 > t1 {
            return None;
        }
    }
    Some((t0, t1))
}

/// Intersection sphere tracing over an arbitrary distance field. Tracks the
/// closest distance seen and, on a sign change between consecutive samples,
/// interpolates the crossing linearly. Returns `(t_s, steps)`.
///
/// The step is `d1 + offset` while outside and plain `d1` once inside, so a
/// sample that lands past the surface walks back toward it. Adding the
/// offset inside as well parks the march at `d1 = -offset`, and the closest
/// distance bookkeeping then reports that parked point.
pub fn sphere_trace(ray: &Ray, steps: usize, offset: f64, mut field: impl FnMut(&Point3) -> f64) -> (f64, usize) {
    let mut t = ray.near;
    let mut t_s = ray.far;
    let mut d1 = f64::INFINITY;
    let mut d_c = f64::INFINITY;
    let mut d_t = f64::INFINITY;
    let mut used = 0;
    for _ in 0..steps {
        let d0 = d1;
        d1 = field(&ray.at(t));
        used += 1;
        if d1.abs() < d_c {
            d_c = d1.abs();
            t_s = t;
        }
        // d_t is still infinite on the first step; there is nothing to interpolate
        if d_t.is_finite() && sign(d0) != sign(d1) {
            t_s = t - d_t * d1.abs() / (d0.abs() + d1.abs());
        }
        d_t = if d1 > 0.0 { d1 + offset } else { d1 };
        t = (t + d_t).clamp(ray.near, ray.far);
    }
    (t_s, used)
}

fn finish_hit(ray: &Ray, t_s: f64, steps: usize, residual: f64, threshold: f64, canonical: Option<Point3>) -> Hit {
    let hit = residual <= threshold;
    Hit {
        hit,
        t: if hit { t_s } else { ray.far },
        t_trace: t_s,
        position: ray.at(t_s),
        residual,
        canonical: if hit { canonical } else { None },
        steps,
    }
}

/// Traces a camera ray on the given field variant. The ray's near/far
/// should come from [`ray_aabb`].
pub fn intersect(
    ray: &Ray,
    avatar: &PosedAvatar<'_>,
    variant: FieldVariant,
    hdq: &HdqConfig,
    cfg: &TraceConfig,
) -> Hit {
    let (t_s, steps) = sphere_trace(ray, cfg.steps, cfg.offset, |x| avatar.distance(x, variant, hdq, None));
    let x = ray.at(t_s);
    let (residual, canonical) = match variant {
        FieldVariant::Full => {
            let s = avatar.query(&x, hdq, None);
            (s.blended.abs(), s.canonical)
        }
        _ => (avatar.distance(&x, variant, hdq, None).abs(), None),
    };
    finish_hit(ray, t_s, steps, residual, cfg.hit_threshold, canonical)
}

/// Casts a camera ray: bounding-box clip, then [`intersect`]. Rays missing
/// the box return a miss with `t = far`.
pub fn cast(
    origin: &Point3,
    direction: &Vec3,
    avatar: &PosedAvatar<'_>,
    variant: FieldVariant,
    hdq: &HdqConfig,
    cfg: &TraceConfig,
) -> Option<Hit> {
    let (near, far) = ray_aabb(origin, direction, avatar.aabb(), cfg.aabb_pad)?;
    let ray = Ray {
        origin: *origin,
        direction: *direction,
        near,
        far,
    };
    Some(intersect(&ray, avatar, variant, hdq, cfg))
}

/// Shadow-ray origin verified to lie on the surface.
pub struct ShadowOrigin<'s, 'a> {
    avatar: &'s PosedAvatar<'a>,
    origin: Point3,
    hdq: HdqConfig,
    cfg: TraceConfig,
}

impl<'s, 'a> ShadowOrigin<'s, 'a> {
    pub fn new(avatar: &'s PosedAvatar<'a>, x_s: &Point3, hdq: &HdqConfig, cfg: &TraceConfig) -> Result<Self> {
        let residual = avatar.query(x_s, hdq, None).blended.abs();
        if residual > cfg.hit_threshold {
            return Err(Error::NotOnSurface { residual });
        }
        Ok(Self::unchecked(avatar, x_s, hdq, cfg))
    }

    /// Skips the on-surface check (for variants whose hits are judged by
    /// another field).
    pub fn unchecked(avatar: &'s PosedAvatar<'a>, x_s: &Point3, hdq: &HdqConfig, cfg: &TraceConfig) -> Self {
        ShadowOrigin {
            avatar,
            origin: *x_s,
            hdq: *hdq,
            cfg: *cfg,
        }
    }

    fn vis_distance(&self, t: f64, w: &Vec3) -> f64 {
        self.avatar.distance(
            &(self.origin + w * t),
            FieldVariant::Full,
            &self.hdq,
            Some(self.hdq.vis_cutoff),
        )
    }

    /// Distance-field soft visibility toward a light of solid angle `a`.
    pub fn soft(&self, w: &Vec3, a: f64) -> f64 {
        let c = &self.cfg;
        let r_s = (a / std::f64::consts::PI).sqrt();
        let mut t = c.vis_near;
        let mut p: f64 = 1.0;
        for _ in 0..c.vis_steps {
            let d1 = self.vis_distance(t, w);
            p = p.min(d1.max(0.0) / (2.0 * t * r_s));
            t = (t + d1 + c.offset).clamp(c.vis_near, c.vis_far);
        }
        p
    }

    /// Binary visibility: 1 when the shadow trace reaches `vis_far` without
    /// ever meeting a non-positive distance.
    pub fn hard(&self, w: &Vec3) -> f64 {
        let c = &self.cfg;
        let mut t = c.vis_near;
        for _ in 0..c.steps {
            let d1 = self.vis_distance(t, w);
            if d1 <= 0.0 {
                return 0.0;
            }
            t = (t + d1 + c.offset).clamp(c.vis_near, c.vis_far);
            if t >= c.vis_far {
                return 1.0;
            }
        }
        0.0
    }

    /// Dense-march visibility: occluded if any of the uniform samples up to
    /// the bounding-box exit is inside the fine-only field.
    pub fn dense(&self, w: &Vec3) -> f64 {
        let c = &self.cfg;
        let far = ray_aabb(&self.origin, w, self.avatar.aabb(), c.aabb_pad)
            .map(|(_, t1)| t1)
            .unwrap_or(c.vis_near);
        if far <= c.vis_near {
            return 1.0;
        }
        let n = c.dense_samples;
        for i in 0..n {
            let t = c.vis_near + (far - c.vis_near) * i as f64 / (n - 1) as f64;
            if self
                .avatar
                .distance(&(self.origin + w * t), FieldVariant::FineOnly, &self.hdq, None)
                <= 0.0
            {
                return 0.0;
            }
        }
        1.0
    }
}

pub fn soft_visibility(
    avatar: &PosedAvatar<'_>,
    x_s: &Point3,
    w: &Vec3,
    a: f64,
    hdq: &HdqConfig,
    cfg: &TraceConfig,
) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::Config(format!("light solid angle must be positive, got {a}")));
    }
    Ok(ShadowOrigin::new(avatar, x_s, hdq, cfg)?.soft(w, a))
}

pub fn hard_visibility(
    avatar: &PosedAvatar<'_>,
    x_s: &Point3,
    w: &Vec3,
    hdq: &HdqConfig,
    cfg: &TraceConfig,
) -> Result<f64> {
    Ok(ShadowOrigin::new(avatar, x_s, hdq, cfg)?.hard(w))
}

/// Distance below which the Monte-Carlo marcher counts a ray as blocked.
const MC_EPSILON: f64 = 1e-4;
const MC_MAX_STEPS: usize = 4096;

/// Uniformly samples directions in the cone of solid angle `a` around `w`.
pub fn sample_cap(w: &Vec3, a: f64, rng: &mut impl Rng) -> Vec3 {
    let cos_max = (1.0 - a / (2.0 * std::f64::consts::PI)).max(-1.0);
    let cos_t = 1.0 - rng.random::<f64>() * (1.0 - cos_max);
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let phi = 2.0 * std::f64::consts::PI * rng.random::<f64>();
    let u = any_perpendicular(w);
    let v = w.cross(&u);
    (w * cos_t + (u * phi.cos() + v * phi.sin()) * sin_t).normalize()
}

/// Fraction of `samples` rays toward the light cap that escape to
/// `vis_far`. Each ray is marched conservatively with the full field until
/// it escapes or comes within `1e-4` of a surface.
#[allow(clippy::too_many_arguments)]
pub fn mc_area_visibility_oracle(
    avatar: &PosedAvatar<'_>,
    x_s: &Point3,
    w: &Vec3,
    a: f64,
    samples: usize,
    seed: u64,
    hdq: &HdqConfig,
    cfg: &TraceConfig,
) -> Result<f64> {
    ShadowOrigin::new(avatar, x_s, hdq, cfg)?;
    if samples == 0 {
        return Err(Error::Config("oracle needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut visible = 0usize;
    for _ in 0..samples {
        let dir = sample_cap(w, a, &mut rng);
        let mut t = cfg.vis_near;
        let mut escaped = false;
        for _ in 0..MC_MAX_STEPS {
            let d = avatar.distance(&(x_s + dir * t), FieldVariant::Full, hdq, None);
            if d < MC_EPSILON {
                break;
            }
            t += d;
            if t >= cfg.vis_far {
                escaped = true;
                break;
            }
        }
        if escaped {
            visible += 1;
        }
    }
    Ok(visible as f64 / samples as f64)
}

/// Uniform ray march with bisection at the first inside sample, on the
/// fine-only field.
pub fn dense_march(ray: &Ray, avatar: &PosedAvatar<'_>, hdq: &HdqConfig, cfg: &TraceConfig) -> Hit {
    let field = |t: f64| avatar.distance(&ray.at(t), FieldVariant::FineOnly, hdq, None);
    let n = cfg.dense_samples;
    let dt = (ray.far - ray.near) / (n - 1) as f64;
    let mut prev = (ray.near, field(ray.near));
    let mut crossing = None;
    if prev.1 <= 0.0 {
        crossing = Some((ray.near, ray.near));
    }
    let mut steps = 1;
    if crossing.is_none() {
        for i in 1..n {
            let t = ray.near + dt * i as f64;
            let d = field(t);
            steps += 1;
            if d <= 0.0 {
                crossing = Some((prev.0, t));
                break;
            }
            prev = (t, d);
        }
    }
    let t_s = match crossing {
        None => ray.far,
        Some((mut lo, mut hi)) => {
            for _ in 0..30 {
                let mid = 0.5 * (lo + hi);
                if field(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                steps += 1;
            }
            0.5 * (lo + hi)
        }
    };
    let residual = field(t_s).abs();
    finish_hit(ray, t_s, steps, residual, cfg.hit_threshold, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::hdq::Avatar;
    use crate::rig::Pose;
    use crate::shade::Material;

    fn sphere() -> Avatar {
        Avatar::new(fixtures::sphere_scene(0.5, Material::new([0.5; 3], 0.5).unwrap()), 4000).unwrap()
    }

    #[test]
    fn slab_cases() {
        let b = Aabb {
            min: Point3::new(-1.0, -1.0, -1.0),
            max: Point3::new(1.0, 1.0, 1.0),
        };
        let (n, f) = ray_aabb(&Point3::new(-5.0, 0.0, 0.0), &Vec3::x(), &b, 0.0).unwrap();
        assert!((n - 4.0).abs() < 1e-15 && (f - 6.0).abs() < 1e-15);
        assert!(ray_aabb(&Point3::new(-5.0, 2.0, 0.0), &Vec3::x(), &b, 0.0).is_none());
        let (n, f) = ray_aabb(&Point3::origin(), &Vec3::y(), &b, 0.15).unwrap();
        assert_eq!(n, 0.0);
        assert!((f - 1.15).abs() < 1e-15);
        assert!(ray_aabb(&Point3::new(0.0, 0.0, 5.0), &Vec3::z(), &b, 0.0).is_none());
    }

    #[test]
    fn ray_validation() {
        assert!(Ray::new(Point3::origin(), Vec3::new(1.0, 1.0, 0.0), 0.0, 1.0).is_err());
        assert!(Ray::new(Point3::origin(), Vec3::x(), 1.0, 1.0).is_err());
        assert!(Ray::new(Point3::origin(), Vec3::x(), 0.0, 1.0).is_ok());
    }

    #[test]
    fn exact_sphere_trace_matches_analytic_intersection() {
        let ray = Ray::new(Point3::new(2.0, 0.0, 0.0), -Vec3::x(), 0.0, 4.0).unwrap();
        let (t, steps) = sphere_trace(&ray, 16, 0.02, |p| p.coords.norm() - 0.5);
        assert_eq!(steps, 16);
        assert!((t - 1.5).abs() < 1e-3);
    }

    #[test]
    fn hdq_sphere_hit_and_miss() {
        let avatar = sphere();
        let posed = avatar.pose(&Pose::identity(1)).unwrap();
        let (hdq, cfg) = (HdqConfig::default(), TraceConfig::default());
        let hit = cast(
            &Point3::new(2.0, 0.0, 0.0),
            &-Vec3::x(),
            &posed,
            FieldVariant::Full,
            &hdq,
            &cfg,
        )
        .unwrap();
        assert!(hit.hit);
        assert!((hit.t - 1.5).abs() < 1e-3, "{}", hit.t);
        assert!(hit.residual <= cfg.hit_threshold);
        // a ray clipping only the padded box corner misses the sphere
        let dir = Vec3::new(-1.0, 0.0, 0.0);
        let origin = Point3::new(2.0, 0.6, 0.6);
        let h = cast(&origin, &dir, &posed, FieldVariant::Full, &hdq, &cfg).unwrap();
        assert!(!h.hit);
        let (_, far) = ray_aabb(&origin, &dir, posed.aabb(), cfg.aabb_pad).unwrap();
        assert_eq!(h.t, far);
        assert!(cast(
            &Point3::new(2.0, 3.0, 0.0),
            &dir,
            &posed,
            FieldVariant::Full,
            &hdq,
            &cfg
        )
        .is_none());
    }

    #[test]
    fn traces_are_deterministic() {
        let avatar = Avatar::new(fixtures::bent_arm_scene(), 1000).unwrap();
        let posed = avatar.pose(&fixtures::bent_pose()).unwrap();
        let (hdq, cfg) = (HdqConfig::default(), TraceConfig::default());
        let o = Point3::new(0.3, 0.3, 2.0);
        let d = (Point3::new(0.6, 0.4, 0.0) - o).normalize();
        let a = cast(&o, &d, &posed, FieldVariant::Full, &hdq, &cfg).unwrap();
        let b = cast(&o, &d, &posed, FieldVariant::Full, &hdq, &cfg).unwrap();
        assert!(a.hit, "{a:?}");
        assert_eq!(a.t.to_bits(), b.t.to_bits());
        assert_eq!(a, b);
    }

    #[test]
    fn visibility_on_isolated_sphere() {
        let avatar = sphere();
        let posed = avatar.pose(&Pose::identity(1)).unwrap();
        let (hdq, cfg) = (HdqConfig::default(), TraceConfig::default());
        let top = Point3::new(0.0, 0.0, 0.5);
        assert_eq!(
            soft_visibility(&posed, &top, &Vec3::z(), 0.05, &hdq, &cfg).unwrap(),
            1.0
        );
        assert_eq!(hard_visibility(&posed, &top, &Vec3::z(), &hdq, &cfg).unwrap(), 1.0);
        // straight into the body
        assert_eq!(
            soft_visibility(&posed, &top, &-Vec3::z(), 0.05, &hdq, &cfg).unwrap(),
            0.0
        );
        assert_eq!(hard_visibility(&posed, &top, &-Vec3::z(), &hdq, &cfg).unwrap(), 0.0);
        assert!(matches!(
            soft_visibility(&posed, &Point3::new(0.0, 0.0, 0.7), &Vec3::z(), 0.05, &hdq, &cfg),
            Err(Error::NotOnSurface { .. })
        ));
        assert_eq!(
            mc_area_visibility_oracle(&posed, &top, &Vec3::z(), 0.05, 256, 1, &hdq, &cfg).unwrap(),
            1.0
        );
        assert_eq!(
            mc_area_visibility_oracle(&posed, &top, &-Vec3::z(), 0.05, 256, 1, &hdq, &cfg).unwrap(),
            0.0
        );
    }

    #[test]
    fn cap_samples_stay_inside_the_cone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = Vec3::new(0.3, -0.5, 0.8).normalize();
        let a = 0.2;
        let cos_max = 1.0 - a / (2.0 * std::f64::consts::PI);
        let mut mean = Vec3::zeros();
        for _ in 0..2000 {
            let d = sample_cap(&w, a, &mut rng);
            assert!((d.norm() - 1.0).abs() < 1e-12);
            assert!(d.dot(&w) >= cos_max - 1e-12);
            mean += d;
        }
        assert!(crate::math::angle_deg(&mean, &w) < 0.5);
    }

    #[test]
    fn dense_march_finds_sphere() {
        let avatar = sphere();
        let posed = avatar.pose(&Pose::identity(1)).unwrap();
        let (hdq, cfg) = (HdqConfig::default(), TraceConfig::default());
        let ray = Ray::new(Point3::new(2.0, 0.0, 0.0), -Vec3::x(), 0.0, 4.0).unwrap();
        let h = dense_march(&ray, &posed, &hdq, &cfg);
        assert!(h.hit);
        assert!((h.t - 1.5).abs() < 1e-6);
        let miss = Ray::new(Point3::new(2.0, 0.7, 0.0), -Vec3::x(), 0.0, 4.0).unwrap();
        assert!(!dense_march(&miss, &posed, &hdq, &cfg).hit);
    }
}
