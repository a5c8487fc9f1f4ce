//! Light probe, microfacet BRDF and the discrete rendering sum.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Point3, Vec3};

pub const PROBE_ROWS: usize = 16;
pub const PROBE_COLS: usize = 32;
pub const PROBE_TEXELS: usize = PROBE_ROWS * PROBE_COLS;

/// Fixed Fresnel reflectance at normal incidence.
pub const F0: f64 = 0.04;

/// Constant BRDF used by the visibility render mode.
pub const UNIFORM_BRDF: f64 = 0.8;

pub type Rgb = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub albedo: Rgb,
    pub roughness: f64,
}

impl Material {
    pub fn new(albedo: Rgb, roughness: f64) -> Result<Self> {
        let m = Material { albedo, roughness };
        m.validate().map_err(Error::Config)?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.albedo.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(format!("albedo {:?} outside [0, 1]", self.albedo));
        }
        if !(self.roughness > 0.0 && self.roughness <= 1.0) {
            return Err(format!("roughness {} outside (0, 1]", self.roughness));
        }
        Ok(())
    }
}

/// Direction and solid angle of one probe texel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Texel {
    pub direction: Vec3,
    pub solid_angle: f64,
}

/// Equirectangular texel centre with +z at the zenith. The solid angle is
/// the exact area of the texel's latitude band cell, so the 512 cells tile
/// the sphere.
pub fn texel_direction(row: usize, col: usize, rows: usize, cols: usize) -> Result<Texel> {
    if row >= rows || col >= cols {
        return Err(Error::IndexOutOfRange { row, col, rows, cols });
    }
    let theta = PI * (row as f64 + 0.5) / rows as f64;
    let phi = 2.0 * PI * (col as f64 + 0.5) / cols as f64;
    let top = PI * row as f64 / rows as f64;
    let bottom = PI * (row + 1) as f64 / rows as f64;
    Ok(Texel {
        direction: Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()),
        solid_angle: 2.0 * PI / cols as f64 * (top.cos() - bottom.cos()),
    })
}

/// The 512 texels of the standard probe, row-major.
pub fn probe_texels() -> &'static [Texel] {
    static TEXELS: OnceLock<Vec<Texel>> = OnceLock::new();
    TEXELS.get_or_init(|| {
        (0..PROBE_ROWS)
            .flat_map(|r| (0..PROBE_COLS).map(move |c| (r, c)))
            .map(|(r, c)| texel_direction(r, c, PROBE_ROWS, PROBE_COLS).expect("in range"))
            .collect()
    })
}

/// 16x32 linear radiance map.
#[derive(Clone, Debug, PartialEq)]
pub struct LightProbe {
    texels: Vec<Rgb>,
}

impl LightProbe {
    pub fn uniform(value: Rgb) -> Self {
        LightProbe {
            texels: vec![value; PROBE_TEXELS],
        }
    }

    pub fn black() -> Self {
        Self::uniform([0.0; 3])
    }

    pub fn from_texels(texels: Vec<Rgb>) -> Result<Self> {
        if texels.len() != PROBE_TEXELS {
            return Err(Error::Config(format!(
                "probe needs {PROBE_TEXELS} texels, got {}",
                texels.len()
            )));
        }
        if texels.iter().flatten().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("probe radiance must be finite and non-negative".into()));
        }
        Ok(LightProbe { texels })
    }

    pub fn texels(&self) -> &[Rgb] {
        &self.texels
    }

    pub fn get(&self, row: usize, col: usize) -> Rgb {
        self.texels[row * PROBE_COLS + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: Rgb) {
        self.texels[row * PROBE_COLS + col] = value;
    }

    pub fn scaled(&self, c: f64) -> Self {
        LightProbe {
            texels: self.texels.iter().map(|t| t.map(|v| v * c)).collect(),
        }
    }
}

/// Which reflectance model the shading sum uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BrdfKind {
    #[default]
    Full,
    /// Lambertian term only (specular disabled).
    DiffuseOnly,
    /// Constant [`UNIFORM_BRDF`] in every channel.
    Uniform,
}

fn ggx_d(n_h: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    let denom = n_h * n_h * (a2 - 1.0) + 1.0;
    a2 / (PI * denom * denom)
}

fn smith_g1(n_v: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    2.0 * n_v / (n_v + (a2 + (1.0 - a2) * n_v * n_v).sqrt())
}

fn schlick(h_v: f64) -> f64 {
    F0 + (1.0 - F0) * (1.0 - h_v).clamp(0.0, 1.0).powi(5)
}

/// Diffuse plus GGX specular. Zero when either direction is below the
/// horizon of `n`.
pub fn brdf_eval(mat: &Material, kind: BrdfKind, n: &Vec3, wi: &Vec3, wo: &Vec3) -> Rgb {
    let n_l = n.dot(wi);
    let n_v = n.dot(wo);
    if n_l <= 0.0 || n_v <= 0.0 {
        return [0.0; 3];
    }
    match kind {
        BrdfKind::Uniform => [UNIFORM_BRDF; 3],
        BrdfKind::DiffuseOnly => mat.albedo.map(|a| a / PI),
        BrdfKind::Full => {
            let h = (wi + wo).normalize();
            let alpha = mat.roughness * mat.roughness;
            let d = ggx_d(n.dot(&h).max(0.0), alpha);
            let g = smith_g1(n_l, alpha) * smith_g1(n_v, alpha);
            let spec = schlick(h.dot(wo)) * d * g / (4.0 * n_l * n_v);
            mat.albedo.map(|a| a / PI + spec)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShadingPoint {
    pub position: Point3,
    pub normal: Vec3,
    /// Unit direction toward the camera.
    pub outgoing: Vec3,
    pub material: Material,
}

/// Per-texel transfer weights `R_s · V · max(n·ω, 0) · Δω`, one RGB triple
/// per texel. `vis` is called with `(ω_i, Δω_i)` only for texels above the
/// horizon.
pub fn transfer_row(point: &ShadingPoint, kind: BrdfKind, mut vis: impl FnMut(&Vec3, f64) -> f64) -> Vec<Rgb> {
    probe_texels()
        .iter()
        .map(|t| {
            let cos = point.normal.dot(&t.direction);
            if cos <= 0.0 {
                return [0.0; 3];
            }
            let f = brdf_eval(&point.material, kind, &point.normal, &t.direction, &point.outgoing);
            if f == [0.0; 3] {
                return f;
            }
            let v = vis(&t.direction, t.solid_angle);
            f.map(|c| c * v * cos * t.solid_angle)
        })
        .collect()
}

/// Applies a transfer row to a probe.
pub fn apply_row(row: &[Rgb], probe: &LightProbe) -> Rgb {
    let mut out = [0.0; 3];
    for (r, l) in row.iter().zip(probe.texels()) {
        for c in 0..3 {
            out[c] += r[c] * l[c];
        }
    }
    out
}

/// Discrete rendering sum over the probe texels.
pub fn shade(point: &ShadingPoint, probe: &LightProbe, kind: BrdfKind, vis: impl FnMut(&Vec3, f64) -> f64) -> Rgb {
    apply_row(&transfer_row(point, kind, vis), probe)
}

/// Depth offsets of the material samples around `t_s`: evenly spread over
/// `[t_s - t_step, t_s + t_step]` at cell centres, so one sample sits at
/// `t_s` itself.
pub fn material_sample_offsets(samples: usize, t_step: f64) -> Vec<f64> {
    (0..samples)
        .map(|n| (2.0 * (n as f64 + 0.5) / samples as f64 - 1.0) * t_step)
        .collect()
}

/// Uniform average of materials looked up at depths around the hit.
/// `lookup` maps a depth along the ray to a material, or `None` when no
/// canonical correspondence exists there; `fallback` is used if every
/// lookup fails.
pub fn sample_material(
    t_s: f64,
    samples: usize,
    t_step: f64,
    fallback: Material,
    mut lookup: impl FnMut(f64) -> Option<Material>,
) -> Material {
    let mut albedo = [0.0; 3];
    let mut roughness = 0.0;
    let mut count = 0usize;
    for dt in material_sample_offsets(samples.max(1), t_step) {
        if let Some(m) = lookup(t_s + dt) {
            for (acc, v) in albedo.iter_mut().zip(m.albedo) {
                *acc += v;
            }
            roughness += m.roughness;
            count += 1;
        }
    }
    if count == 0 {
        return fallback;
    }
    let inv = 1.0 / count as f64;
    Material {
        albedo: albedo.map(|a| (a * inv).clamp(0.0, 1.0)),
        roughness: (roughness * inv).clamp(f64::MIN_POSITIVE, 1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
        loop {
            let v = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 0.1 && n <= 1.0 {
                return v / n;
            }
        }
    }

    #[test]
    fn solid_angles_close_to_four_pi() {
        let total: f64 = probe_texels().iter().map(|t| t.solid_angle).sum();
        assert!((total - 4.0 * PI).abs() / (4.0 * PI) < 1e-12);
        // the midpoint sinθ rule converges to the same total
        let riemann: f64 = (0..PROBE_ROWS)
            .map(|r| {
                let theta = PI * (r as f64 + 0.5) / 16.0;
                32.0 * (PI / 16.0) * (2.0 * PI / 32.0) * theta.sin()
            })
            .sum();
        assert!((riemann - 4.0 * PI).abs() / (4.0 * PI) < 2e-3);
    }

    #[test]
    fn texel_layout() {
        let t = texel_direction(0, 0, 16, 32).unwrap();
        assert!((t.direction.z - (PI / 32.0).cos()).abs() < 1e-15);
        for col in 0..16 {
            let a = texel_direction(5, col, 16, 32).unwrap().direction;
            let b = texel_direction(5, col + 16, 16, 32).unwrap().direction;
            assert!((a.x + b.x).abs() < 1e-12 && (a.y + b.y).abs() < 1e-12);
            assert!((a.z - b.z).abs() < 1e-15);
        }
        assert!(matches!(
            texel_direction(16, 0, 16, 32),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(texel_direction(0, 32, 16, 32).is_err());
    }

    #[test]
    fn material_validation() {
        assert!(Material::new([0.5; 3], 0.0).is_err());
        assert!(Material::new([1.2, 0.0, 0.0], 0.5).is_err());
        assert!(Material::new([0.0, 1.0, 0.3], 1.0).is_ok());
    }

    #[test]
    fn diffuse_hook_is_lambertian() {
        let m = Material::new([0.2, 0.5, 0.9], 1.0).unwrap();
        let n = Vec3::z();
        let f = brdf_eval(&m, BrdfKind::DiffuseOnly, &n, &Vec3::new(0.6, 0.0, 0.8), &n);
        assert_eq!(f, [0.2 / PI, 0.5 / PI, 0.9 / PI]);
    }

    #[test]
    fn normal_incidence_matches_scalar_ggx() {
        // independent evaluation: D = 1/(π α²), G = 1, F = F0 at normal incidence
        let m = Material::new([0.3; 3], 0.5).unwrap();
        let n = Vec3::z();
        let f = brdf_eval(&m, BrdfKind::Full, &n, &n, &n);
        let alpha: f64 = 0.25;
        let d = 1.0 / (PI * alpha * alpha);
        let expected = 0.3 / PI + 0.04 * d * 1.0 / 4.0;
        assert!((f[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn reciprocity_and_non_negativity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let m = Material::new([rng.random(), rng.random(), rng.random()], rng.random_range(0.01..=1.0)).unwrap();
            let n = random_unit(&mut rng);
            let a = random_unit(&mut rng);
            let b = random_unit(&mut rng);
            let f = brdf_eval(&m, BrdfKind::Full, &n, &a, &b);
            let g = brdf_eval(&m, BrdfKind::Full, &n, &b, &a);
            for c in 0..3 {
                assert!(f[c] >= 0.0);
                assert!((f[c] - g[c]).abs() <= 1e-9 * f[c].abs().max(1.0));
            }
        }
    }

    #[test]
    fn below_horizon_is_zero() {
        let m = Material::new([0.5; 3], 0.5).unwrap();
        let n = Vec3::z();
        assert_eq!(brdf_eval(&m, BrdfKind::Full, &n, &-n, &n), [0.0; 3]);
        assert_eq!(
            brdf_eval(&m, BrdfKind::Uniform, &n, &n, &Vec3::new(1.0, 0.0, -0.1).normalize()),
            [0.0; 3]
        );
    }

    fn diffuse_point(n: Vec3, albedo: f64) -> ShadingPoint {
        ShadingPoint {
            position: Point3::origin(),
            normal: n,
            outgoing: n,
            material: Material::new([albedo; 3], 1.0).unwrap(),
        }
    }

    #[test]
    fn black_probe_gives_black() {
        let p = diffuse_point(Vec3::z(), 0.5);
        assert_eq!(shade(&p, &LightProbe::black(), BrdfKind::Full, |_, _| 1.0), [0.0; 3]);
    }

    #[test]
    fn furnace_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let n = random_unit(&mut rng);
            let p = diffuse_point(n, 0.5);
            let lo = shade(&p, &LightProbe::uniform([1.0; 3]), BrdfKind::DiffuseOnly, |_, _| 1.0);
            for c in lo {
                assert!((c - 0.5).abs() <= 0.02, "{n:?} -> {c}");
            }
        }
    }

    #[test]
    fn single_texel_term() {
        let p = diffuse_point(Vec3::new(0.2, 0.1, 0.9).normalize(), 0.5);
        let mut probe = LightProbe::black();
        probe.set(2, 7, [2.0, 1.0, 0.5]);
        let t = texel_direction(2, 7, 16, 32).unwrap();
        let f = brdf_eval(&p.material, BrdfKind::Full, &p.normal, &t.direction, &p.outgoing);
        let cos = p.normal.dot(&t.direction);
        let lo = shade(&p, &probe, BrdfKind::Full, |_, _| 1.0);
        for (c, l) in [2.0, 1.0, 0.5].iter().enumerate() {
            assert!((lo[c] - l * f[c] * cos * t.solid_angle).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_in_probe_and_horizon_skips_visibility() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let random_probe = |rng: &mut ChaCha8Rng| {
            LightProbe::from_texels(
                (0..PROBE_TEXELS)
                    .map(|_| [rng.random(), rng.random(), rng.random()])
                    .collect(),
            )
            .unwrap()
        };
        let p1 = random_probe(&mut rng);
        let p2 = random_probe(&mut rng);
        let sum = LightProbe::from_texels(
            p1.texels()
                .iter()
                .zip(p2.texels())
                .map(|(a, b)| [a[0] + b[0], a[1] + b[1], a[2] + b[2]])
                .collect(),
        )
        .unwrap();
        let point = ShadingPoint {
            position: Point3::origin(),
            normal: Vec3::new(0.3, -0.2, 0.9).normalize(),
            outgoing: Vec3::new(0.0, 0.5, 0.8).normalize(),
            material: Material::new([0.6, 0.4, 0.2], 0.3).unwrap(),
        };
        let mut calls = 0;
        let mut below = 0;
        let vis = |w: &Vec3, _a: f64| {
            calls += 1;
            if point.normal.dot(w) <= 0.0 {
                below += 1;
            }
            0.5 + 0.5 * w.x.abs()
        };
        let row = transfer_row(&point, BrdfKind::Full, vis);
        assert_eq!(below, 0);
        assert!(calls > 0);
        let a = apply_row(&row, &p1);
        let b = apply_row(&row, &p2);
        let s = apply_row(&row, &sum);
        let scaled = apply_row(&row, &p1.scaled(3.0));
        for c in 0..3 {
            assert!((s[c] - a[c] - b[c]).abs() < 1e-9);
            assert!((scaled[c] - 3.0 * a[c]).abs() < 1e-9);
        }
    }

    #[test]
    fn material_sampling() {
        assert_eq!(material_sample_offsets(1, 0.005), vec![0.0]);
        let three = material_sample_offsets(3, 0.005);
        assert!((three[0] + 0.005 * 2.0 / 3.0).abs() < 1e-18 && three[1] == 0.0);
        let a = Material::new([0.2; 3], 0.5).unwrap();
        let b = Material::new([0.8; 3], 0.5).unwrap();
        assert_eq!(sample_material(1.0, 3, 0.005, a, |_| Some(b)), b);
        assert_eq!(sample_material(1.0, 1, 0.005, a, |t| (t == 1.0).then_some(b)), b);
        // boundary at t = 1.0: samples before are a, samples at or after are b
        let mixed = sample_material(1.0, 4, 0.005, a, |t| Some(if t < 1.0 { a } else { b }));
        assert!((mixed.albedo[0] - 0.5).abs() < 1e-12);
        assert_eq!(sample_material(1.0, 3, 0.005, a, |_| None), a);
    }
}
