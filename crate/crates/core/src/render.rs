//! Per-pixel render pipeline, frame assembly, ablation and timing harness.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::hdq::{FieldVariant, HdqConfig, PosedAvatar};
use crate::imageio::Image;
use crate::math::{Point3, Vec3};
use crate::shade::{
    apply_row, sample_material, shade, transfer_row, BrdfKind, LightProbe, Material, Rgb, ShadingPoint,
};
use crate::stats::{mean, median};
use crate::trace::{cast, dense_march, ray_aabb, Hit, Ray, ShadowOrigin, TraceConfig};

pub const TILE: usize = 16;
pub const DEFAULT_MATERIAL_SAMPLES: usize = 3;
pub const MATERIAL_STEP: f64 = 0.005;

/// Step of the finite-difference normal used when the analytic normal is
/// unavailable.
const FD_STEP: f64 = 1e-4;
/// Minimum `n·ω_o` after bending a back-facing normal toward the viewer.
const MIN_FACING: f64 = 1e-3;

macro_rules! kebab_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($name::$variant => $text),+ })
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!(
                        "unknown {} {other:?}; expected one of: {}",
                        stringify!($name).to_lowercase(),
                        [$($text),+].join(", ")
                    )),
                }
            }
        }
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Relit,
    Albedo,
    Normal,
    /// Shading with the constant BRDF, showing light visibility.
    VisibilityUniform,
    /// White diffuse surface under a uniform unit probe.
    Ambient,
}

kebab_enum!(Mode {
    Relit => "relit",
    Albedo => "albedo",
    Normal => "normal",
    VisibilityUniform => "visibility-uniform",
    Ambient => "ambient",
});

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Visibility {
    #[default]
    Soft,
    Hard,
    None,
    /// `max(n·ω, 0)` stand-in that never traces.
    Local,
    /// Uniform samples on the fine-only field.
    Dense,
}

kebab_enum!(Visibility {
    Soft => "soft",
    Hard => "hard",
    None => "none",
    Local => "local",
    Dense => "dense",
});

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Full,
    CoarseOnly,
    FineOnly,
    DenseMarch,
}

kebab_enum!(Variant {
    Full => "full",
    CoarseOnly => "coarse-only",
    FineOnly => "fine-only",
    DenseMarch => "dense-march",
});

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::CoarseOnly,
        Variant::FineOnly,
        Variant::DenseMarch,
    ];

    fn field(self) -> FieldVariant {
        match self {
            Variant::Full => FieldVariant::Full,
            Variant::CoarseOnly => FieldVariant::CoarseOnly,
            Variant::FineOnly | Variant::DenseMarch => FieldVariant::FineOnly,
        }
    }
}

/// Everything the per-pixel pipeline needs besides geometry and camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub mode: Mode,
    pub vis: Visibility,
    pub variant: Variant,
    /// Overrides the mode's BRDF in relit mode.
    pub brdf: Option<BrdfKind>,
    pub trace: TraceConfig,
    pub hdq: HdqConfig,
    pub material_samples: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            mode: Mode::Relit,
            vis: Visibility::Soft,
            variant: Variant::Full,
            brdf: None,
            trace: TraceConfig::default(),
            hdq: HdqConfig::default(),
            material_samples: DEFAULT_MATERIAL_SAMPLES,
        }
    }
}

impl RenderOptions {
    pub fn validate(&self) -> Result<()> {
        self.trace.validate()?;
        self.hdq.validate()?;
        if self.material_samples == 0 {
            return Err(Error::Config("material_samples must be at least 1".into()));
        }
        match (self.variant, self.vis) {
            (Variant::DenseMarch, Visibility::Soft | Visibility::Hard) => Err(Error::Config(format!(
                "visibility {} needs the distance query; dense-march supports dense, local or none",
                self.vis
            ))),
            (v, Visibility::Dense) if v != Variant::DenseMarch => Err(Error::Config(format!(
                "dense visibility belongs to the dense-march variant, not {v}"
            ))),
            _ => Ok(()),
        }
    }

    /// The same options retargeted to `variant`, swapping visibility
    /// between the traced and the dense kind as needed.
    pub fn for_variant(&self, variant: Variant) -> Self {
        let vis = match (variant, self.vis) {
            (Variant::DenseMarch, Visibility::Soft | Visibility::Hard) => Visibility::Dense,
            (v, Visibility::Dense) if v != Variant::DenseMarch => Visibility::Soft,
            (_, vis) => vis,
        };
        RenderOptions { variant, vis, ..*self }
    }

    fn relit_brdf(&self) -> BrdfKind {
        self.brdf.unwrap_or(BrdfKind::Full)
    }
}

/// Shading inputs recovered for one camera ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfacePoint {
    pub hit: Hit,
    pub shading: ShadingPoint,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pixel {
    Background,
    /// The ray hit but a later stage failed; drawn as background.
    Failed,
    Shaded(Rgb),
}

/// Traces one ray with the chosen variant; `None` when the ray leaves the
/// bounding box or misses.
pub fn trace_ray(posed: &PosedAvatar<'_>, origin: &Point3, dir: &Vec3, opts: &RenderOptions) -> Option<Hit> {
    match opts.variant {
        Variant::DenseMarch => {
            let (near, far) = ray_aabb(origin, dir, posed.aabb(), opts.trace.aabb_pad)?;
            let ray = Ray {
                origin: *origin,
                direction: *dir,
                near,
                far,
            };
            Some(dense_march(&ray, posed, &opts.hdq, &opts.trace))
        }
        v => cast(origin, dir, posed, v.field(), &opts.hdq, &opts.trace),
    }
}

fn fd_normal(posed: &PosedAvatar<'_>, x: &Point3, opts: &RenderOptions) -> Option<Vec3> {
    let field = opts.variant.field();
    let mut g = Vec3::zeros();
    for i in 0..3 {
        let mut e = Vec3::zeros();
        e[i] = FD_STEP;
        g[i] = posed.distance(&(x + e), field, &opts.hdq, None) - posed.distance(&(x - e), field, &opts.hdq, None);
    }
    let n = g.norm();
    (n > 0.0 && n.is_finite()).then(|| g / n)
}

fn facing(n: Vec3, wo: &Vec3) -> Vec3 {
    let c = n.dot(wo);
    if c >= MIN_FACING {
        return n;
    }
    (n + wo * (MIN_FACING - c)).normalize()
}

/// Intersection, normal and material for one camera ray. `Ok(None)` is
/// background; `Err` a failed pixel.
pub fn surface_point(
    posed: &PosedAvatar<'_>,
    origin: &Point3,
    dir: &Vec3,
    opts: &RenderOptions,
) -> Result<Option<SurfacePoint>> {
    let Some(hit) = trace_ray(posed, origin, dir, opts) else {
        return Ok(None);
    };
    if !hit.hit {
        return Ok(None);
    }
    let x = hit.position;
    let normal = match opts.variant {
        Variant::Full => posed
            .surface_normal(&x, &opts.hdq)
            .ok()
            .or_else(|| fd_normal(posed, &x, opts)),
        _ => fd_normal(posed, &x, opts),
    }
    .ok_or_else(|| Error::InvalidNormal(format!("no normal at {x:?}")))?;
    let outgoing = -dir;
    let scene = posed.scene();
    let fallback = hit
        .canonical
        .or_else(|| posed.query(&x, &opts.hdq, None).canonical)
        .map(|c| scene.material_at(&c))
        .unwrap_or(scene.primitives[0].material);
    let material = sample_material(hit.t, opts.material_samples, MATERIAL_STEP, fallback, |t| {
        posed
            .query(&(origin + dir * t), &opts.hdq, None)
            .canonical
            .map(|c| scene.material_at(&c))
    });
    Ok(Some(SurfacePoint {
        hit,
        shading: ShadingPoint {
            position: x,
            normal: facing(normal, &outgoing),
            outgoing,
            material,
        },
    }))
}

fn visibility_fn<'v>(
    posed: &'v PosedAvatar<'_>,
    point: &ShadingPoint,
    opts: &RenderOptions,
) -> impl FnMut(&Vec3, f64) -> f64 + 'v {
    let shadow = ShadowOrigin::unchecked(posed, &point.position, &opts.hdq, &opts.trace);
    let (kind, n) = (opts.vis, point.normal);
    move |w: &Vec3, a: f64| match kind {
        Visibility::Soft => shadow.soft(w, a),
        Visibility::Hard => shadow.hard(w),
        Visibility::None => 1.0,
        Visibility::Local => n.dot(w).max(0.0),
        Visibility::Dense => shadow.dense(w),
    }
}

/// Relit-mode transfer row of a shaded surface point.
pub fn point_transfer(posed: &PosedAvatar<'_>, point: &ShadingPoint, opts: &RenderOptions) -> Vec<Rgb> {
    transfer_row(point, opts.relit_brdf(), visibility_fn(posed, point, opts))
}

/// Relit-mode transfer row of pixel `(px, py)`; `None` for background.
pub fn pixel_transfer(
    posed: &PosedAvatar<'_>,
    camera: &Camera,
    px: usize,
    py: usize,
    opts: &RenderOptions,
) -> Result<Option<Vec<Rgb>>> {
    let dir = camera.direction(px, py);
    Ok(surface_point(posed, &camera.position, &dir, opts)?.map(|s| point_transfer(posed, &s.shading, opts)))
}

/// Full-precision value of one pixel.
pub fn render_pixel(
    posed: &PosedAvatar<'_>,
    camera: &Camera,
    probe: &LightProbe,
    px: usize,
    py: usize,
    opts: &RenderOptions,
) -> Pixel {
    let dir = camera.direction(px, py);
    let s = match surface_point(posed, &camera.position, &dir, opts) {
        Ok(Some(s)) => s,
        Ok(None) => return Pixel::Background,
        Err(_) => return Pixel::Failed,
    };
    let p = s.shading;
    let color = match opts.mode {
        Mode::Albedo => p.material.albedo,
        Mode::Normal => [p.normal.x, p.normal.y, p.normal.z].map(|c| 0.5 * (c + 1.0)),
        Mode::Relit => apply_row(&point_transfer(posed, &p, opts), probe),
        Mode::VisibilityUniform => shade(&p, probe, BrdfKind::Uniform, visibility_fn(posed, &p, opts)),
        Mode::Ambient => {
            let white = ShadingPoint {
                material: Material {
                    albedo: [1.0; 3],
                    ..p.material
                },
                ..p
            };
            shade(
                &white,
                &LightProbe::uniform([1.0; 3]),
                BrdfKind::DiffuseOnly,
                visibility_fn(posed, &p, opts),
            )
        }
    };
    Pixel::Shaded(color)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FrameStats {
    pub shaded: usize,
    pub background: usize,
    pub failed: usize,
    pub seconds: f64,
}

/// Linear colour plus a coverage mask (1 on shaded pixels).
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub color: Image,
    pub coverage: Image,
    pub stats: FrameStats,
}

fn tiles(width: usize, height: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in (0..height).step_by(TILE) {
        for x in (0..width).step_by(TILE) {
            out.push((x, y));
        }
    }
    out
}

/// Renders one frame on the current rayon pool. Every pixel is computed
/// independently, so the result does not depend on the worker count.
pub fn render_frame(
    posed: &PosedAvatar<'_>,
    camera: &Camera,
    probe: &LightProbe,
    opts: &RenderOptions,
) -> Result<Frame> {
    opts.validate()?;
    camera.validate()?;
    let start = Instant::now();
    let (w, h) = (camera.width, camera.height);
    let rendered: Vec<((usize, usize), Vec<Pixel>)> = tiles(w, h)
        .into_par_iter()
        .map(|(x0, y0)| {
            let mut px = Vec::with_capacity(TILE * TILE);
            for y in y0..(y0 + TILE).min(h) {
                for x in x0..(x0 + TILE).min(w) {
                    px.push(render_pixel(posed, camera, probe, x, y, opts));
                }
            }
            ((x0, y0), px)
        })
        .collect();
    let mut color = Image::new(w, h, 3);
    let mut coverage = Image::new(w, h, 1);
    let mut stats = FrameStats::default();
    for ((x0, y0), pixels) in rendered {
        let tw = (x0 + TILE).min(w) - x0;
        for (i, p) in pixels.into_iter().enumerate() {
            let (x, y) = (x0 + i % tw, y0 + i / tw);
            match p {
                Pixel::Background => stats.background += 1,
                Pixel::Failed => stats.failed += 1,
                Pixel::Shaded(c) => {
                    if c.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Invariant(format!("non-finite radiance at pixel ({x}, {y})")));
                    }
                    stats.shaded += 1;
                    color.pixel_mut(x, y).copy_from_slice(&c.map(|v| v as f32));
                    coverage.pixel_mut(x, y)[0] = 1.0;
                }
            }
        }
    }
    stats.seconds = start.elapsed().as_secs_f64();
    Ok(Frame { color, coverage, stats })
}

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Mean residual `|d̃|` of the reference full field at the point each
/// configuration's tracer settles on, over the rays the reference full
/// trace hits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualStats {
    pub mean: f64,
    pub rays: usize,
    /// Rays the traced configuration itself reports as hits.
    pub variant_hits: usize,
}

pub fn trace_residuals(
    posed: &PosedAvatar<'_>,
    camera: &Camera,
    opts: &RenderOptions,
    reference: &HdqConfig,
) -> ResidualStats {
    let full = RenderOptions {
        hdq: *reference,
        ..opts.for_variant(Variant::Full)
    };
    let same = full == *opts;
    let per_pixel: Vec<Option<(f64, bool)>> = (0..camera.width * camera.height)
        .into_par_iter()
        .map(|i| {
            let dir = camera.direction(i % camera.width, i / camera.width);
            let r = trace_ray(posed, &camera.position, &dir, &full)?;
            if !r.hit {
                return None;
            }
            if same {
                return Some((r.residual, true));
            }
            let h = trace_ray(posed, &camera.position, &dir, opts)?;
            Some((posed.query(&h.position, reference, None).blended.abs(), h.hit))
        })
        .collect();
    let hits: Vec<(f64, bool)> = per_pixel.into_iter().flatten().collect();
    let residuals: Vec<f64> = hits.iter().map(|h| h.0).collect();
    ResidualStats {
        mean: mean(&residuals),
        rays: residuals.len(),
        variant_hits: hits.iter().filter(|h| h.1).count(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub residual: f64,
    pub rays: usize,
    pub seconds: f64,
}

/// Residual and frame time of every variant on one posed frame.
pub fn ablate(
    posed: &PosedAvatar<'_>,
    camera: &Camera,
    probe: &LightProbe,
    opts: &RenderOptions,
) -> Result<Vec<AblationRow>> {
    Variant::ALL
        .iter()
        .map(|&v| {
            let o = opts.for_variant(v);
            let r = trace_residuals(posed, camera, &o, &opts.hdq);
            let frame = render_frame(posed, camera, probe, &o)?;
            Ok(AblationRow {
                variant: v,
                residual: r.mean,
                rays: r.rays,
                seconds: frame.stats.seconds,
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,residual,seconds\n");
    for r in rows {
        s += &format!("{},{:.6e},{:.6}\n", r.variant, r.residual, r.seconds);
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingRow {
    pub label: String,
    pub median: f64,
    pub min: f64,
    pub runs: usize,
}

/// Frame times of several configurations. Repetitions run round-robin so
/// slow drift in machine load spreads evenly over the configurations.
fn time_interleaved(
    posed: &PosedAvatar<'_>,
    camera: &Camera,
    probe: &LightProbe,
    configs: &[RenderOptions],
    repetitions: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut times = vec![Vec::new(); configs.len()];
    for _ in 0..repetitions.max(1) {
        for (t, o) in times.iter_mut().zip(configs) {
            t.push(render_frame(posed, camera, probe, o)?.stats.seconds);
        }
    }
    Ok(times)
}

fn timing_row(label: String, times: &[f64]) -> TimingRow {
    TimingRow {
        label,
        median: median(times),
        min: times.iter().cloned().fold(f64::INFINITY, f64::min),
        runs: times.len(),
    }
}

/// Median and minimum frame time per variant.
pub fn bench(
    posed: &PosedAvatar<'_>,
    camera: &Camera,
    probe: &LightProbe,
    opts: &RenderOptions,
    variants: &[Variant],
    repetitions: usize,
) -> Result<Vec<TimingRow>> {
    let configs: Vec<RenderOptions> = variants.iter().map(|&v| opts.for_variant(v)).collect();
    let times = time_interleaved(posed, camera, probe, &configs, repetitions)?;
    Ok(variants
        .iter()
        .zip(&times)
        .map(|(v, t)| timing_row(v.to_string(), t))
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub cutoff: f64,
    pub timing: TimingRow,
    pub residual: f64,
    /// Canonical SDF evaluations in one frame.
    pub fine_evaluations: u64,
}

pub const CUTOFF_SWEEP: [f64; 4] = [0.01, 0.05, 0.1, 0.5];

/// Frame time and full-variant residual as the coarse cutoff varies. The
/// visibility cutoff is lowered with it where it would exceed the cutoff.
pub fn cutoff_sweep(
    posed: &PosedAvatar<'_>,
    camera: &Camera,
    probe: &LightProbe,
    opts: &RenderOptions,
    cutoffs: &[f64],
    repetitions: usize,
) -> Result<Vec<SweepRow>> {
    let configs: Vec<RenderOptions> = cutoffs
        .iter()
        .map(|&cutoff| RenderOptions {
            hdq: HdqConfig {
                cutoff,
                vis_cutoff: opts.hdq.vis_cutoff.min(cutoff),
                ..opts.hdq
            },
            ..opts.for_variant(Variant::Full)
        })
        .collect();
    let times = time_interleaved(posed, camera, probe, &configs, repetitions)?;
    configs
        .iter()
        .zip(&times)
        .map(|(o, t)| {
            posed.reset_counters();
            render_frame(posed, camera, probe, o)?;
            let fine_evaluations = posed.fine_count();
            Ok(SweepRow {
                cutoff: o.hdq.cutoff,
                timing: timing_row(format!("cutoff={}", o.hdq.cutoff), t),
                residual: trace_residuals(posed, camera, o, &opts.hdq).mean,
                fine_evaluations,
            })
        })
        .collect()
}

pub fn timing_csv(rows: &[TimingRow]) -> String {
    let mut s = String::from("label,median_seconds,min_seconds,runs\n");
    for r in rows {
        s += &format!("{},{:.6},{:.6},{}\n", r.label, r.median, r.min, r.runs);
    }
    s
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("cutoff,median_seconds,min_seconds,residual,fine_evaluations\n");
    for r in rows {
        s += &format!(
            "{},{:.6},{:.6},{:.6e},{}\n",
            r.cutoff, r.timing.median, r.timing.min, r.residual, r.fine_evaluations
        );
    }
    s
}

/// Path of the coverage image written next to a PFM colour image.
pub fn coverage_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("frame");
    output.with_file_name(format!("{stem}.coverage.pfm"))
}

/// Writes a frame by extension: `.pfm` (plus coverage), `.hdr` or `.png`.
pub fn write_frame(path: &Path, frame: &Frame, gamma: bool) -> Result<()> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "pfm" => {
            crate::imageio::write_pfm(path, &frame.color)?;
            crate::imageio::write_pfm(&coverage_path(path), &frame.coverage)
        }
        "hdr" => crate::imageio::write_hdr(path, &frame.color),
        "png" => crate::imageio::write_png(path, &frame.color, gamma),
        other => Err(Error::Config(format!(
            "{}: unsupported output extension {other:?} (pfm, hdr or png)",
            path.display()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::hdq::Avatar;
    use crate::rig::Pose;

    fn sphere_camera(size: usize) -> Camera {
        Camera::new(
            Point3::new(0.0, -3.0, 0.0),
            Point3::origin(),
            Vec3::z(),
            30.0,
            size,
            size,
        )
        .unwrap()
    }

    fn unit_sphere() -> Avatar {
        let grey = Material::new([0.5; 3], 0.5).unwrap();
        Avatar::new(fixtures::sphere_scene(1.0, grey), 2000).unwrap()
    }

    #[test]
    fn option_parsing() {
        assert_eq!("visibility-uniform".parse::<Mode>().unwrap(), Mode::VisibilityUniform);
        assert_eq!("coarse-only".parse::<Variant>().unwrap(), Variant::CoarseOnly);
        assert!("sharp".parse::<Visibility>().unwrap_err().contains("soft"));
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        let bad = RenderOptions {
            variant: Variant::DenseMarch,
            ..RenderOptions::default()
        };
        assert!(bad.validate().is_err());
        assert!(bad.for_variant(Variant::DenseMarch).validate().is_ok());
        assert_eq!(bad.for_variant(Variant::DenseMarch).vis, Visibility::Dense);
        let bad = RenderOptions {
            vis: Visibility::Dense,
            ..RenderOptions::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn camera_facing_away_renders_background() {
        let avatar = unit_sphere();
        let posed = avatar.pose(&Pose::identity(1)).unwrap();
        let cam = Camera::new(
            Point3::new(0.0, -3.0, 0.0),
            Point3::new(0.0, -6.0, 0.0),
            Vec3::z(),
            40.0,
            16,
            16,
        )
        .unwrap();
        let f = render_frame(&posed, &cam, &LightProbe::uniform([1.0; 3]), &RenderOptions::default()).unwrap();
        assert_eq!(f.stats.background, 256);
        assert!(f.color.data.iter().all(|&v| v == 0.0));
        assert!(f.coverage.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normal_mode_centre_faces_camera() {
        let avatar = unit_sphere();
        let posed = avatar.pose(&Pose::identity(1)).unwrap();
        let cam = sphere_camera(17);
        let opts = RenderOptions {
            mode: Mode::Normal,
            ..RenderOptions::default()
        };
        match render_pixel(&posed, &cam, &LightProbe::black(), 8, 8, &opts) {
            Pixel::Shaded(c) => {
                let n = Vec3::new(2.0 * c[0] - 1.0, 2.0 * c[1] - 1.0, 2.0 * c[2] - 1.0);
                assert!(crate::math::angle_deg(&n, &-Vec3::y()) < 1.0, "{n:?}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn relit_pixel_equals_transfer_row_dot_probe() {
        let avatar = Avatar::new(fixtures::bent_arm_scene(), 1000).unwrap();
        let posed = avatar.pose(&fixtures::bent_pose()).unwrap();
        let cam = Camera::new(
            Point3::new(0.4, 0.2, 2.0),
            Point3::new(0.4, 0.2, 0.0),
            Vec3::y(),
            35.0,
            16,
            16,
        )
        .unwrap();
        let probe = LightProbe::uniform([0.3, 0.6, 1.2]);
        let opts = RenderOptions::default();
        let mut checked = 0;
        for (x, y) in [(8, 8), (10, 5), (3, 12)] {
            let Some(row) = pixel_transfer(&posed, &cam, x, y, &opts).unwrap() else {
                continue;
            };
            let Pixel::Shaded(c) = render_pixel(&posed, &cam, &probe, x, y, &opts) else {
                panic!()
            };
            let d = apply_row(&row, &probe);
            for k in 0..3 {
                assert!((c[k] - d[k]).abs() <= 1e-9);
            }
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn thread_count_does_not_change_pixels() {
        let avatar = Avatar::new(fixtures::bent_arm_scene(), 500).unwrap();
        let posed = avatar.pose(&fixtures::bent_pose()).unwrap();
        let cam = Camera::new(
            Point3::new(0.4, 0.2, 2.0),
            Point3::new(0.4, 0.2, 0.0),
            Vec3::y(),
            35.0,
            24,
            20,
        )
        .unwrap();
        let probe = LightProbe::uniform([1.0; 3]);
        let opts = RenderOptions {
            vis: Visibility::Hard,
            ..RenderOptions::default()
        };
        let one = with_threads(1, || render_frame(&posed, &cam, &probe, &opts))
            .unwrap()
            .unwrap();
        let four = with_threads(4, || render_frame(&posed, &cam, &probe, &opts))
            .unwrap()
            .unwrap();
        assert!(one.stats.shaded > 0);
        let bits = |f: &Frame| f.color.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&one), bits(&four));
        assert_eq!(one.coverage, four.coverage);
    }

    #[test]
    fn writes_by_extension() {
        let dir = tempfile::tempdir().unwrap();
        let mut frame = Frame {
            color: Image::new(16, 16, 3),
            coverage: Image::new(16, 16, 1),
            stats: FrameStats::default(),
        };
        frame.coverage.data[3] = 1.0;
        let p = dir.path().join("out.pfm");
        write_frame(&p, &frame, false).unwrap();
        assert_eq!(crate::imageio::read_pfm(&coverage_path(&p)).unwrap(), frame.coverage);
        write_frame(&dir.path().join("out.png"), &frame, true).unwrap();
        write_frame(&dir.path().join("out.hdr"), &frame, true).unwrap();
        assert!(matches!(
            write_frame(&dir.path().join("out.exr"), &frame, true),
            Err(Error::Config(_))
        ));
    }
}
