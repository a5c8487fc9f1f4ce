//! Config files and flag overrides.

use std::path::{Path, PathBuf};

use clap::Args;
use log::info;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use hdq_core::camera::Camera;
use hdq_core::hdq::HdqConfig;
use hdq_core::imageio::read_probe;
use hdq_core::render::{Mode, RenderOptions, Variant, Visibility, DEFAULT_MATERIAL_SAMPLES};
use hdq_core::rig::Pose;
use hdq_core::scene::{load_animation, load_scene, LoadedScene};
use hdq_core::shade::{BrdfKind, LightProbe};
use hdq_core::trace::TraceConfig;
use hdq_core::{Error, Result};

fn default_material_samples() -> usize {
    DEFAULT_MATERIAL_SAMPLES
}

/// Render, ablate and bench configuration. Relative paths resolve against
/// the directory holding the config file.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    pub scene: PathBuf,
    /// Pose sequence replacing the poses stored in the scene file.
    #[serde(default)]
    pub animation: Option<PathBuf>,
    #[serde(default)]
    pub pose_frame: Option<usize>,
    pub camera: Camera,
    /// Defaults to a uniform probe of 1.
    #[serde(default)]
    pub probe: Option<PathBuf>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub vis: Visibility,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub brdf: Option<BrdfKind>,
    /// `{frame}` in the name renders every pose.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub gamma: bool,
    #[serde(default)]
    pub trace: TraceConfig,
    #[serde(default)]
    pub hdq: HdqConfig,
    #[serde(default = "default_material_samples")]
    pub material_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewSpec {
    #[serde(default)]
    pub pose_frame: usize,
    pub camera: Camera,
    pub image: PathBuf,
}

/// Probe-fit configuration: one scene, several posed views with their
/// rendered images.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub scene: PathBuf,
    #[serde(default)]
    pub animation: Option<PathBuf>,
    pub views: Vec<ViewSpec>,
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Hit pixels kept per view.
    #[serde(default)]
    pub max_pixels: Option<usize>,
    #[serde(default)]
    pub vis: Visibility,
    #[serde(default)]
    pub brdf: Option<BrdfKind>,
    #[serde(default)]
    pub trace: TraceConfig,
    #[serde(default)]
    pub hdq: HdqConfig,
    #[serde(default = "default_material_samples")]
    pub material_samples: usize,
    pub output: PathBuf,
    #[serde(default)]
    pub report: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
}

pub fn parse_kebab<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

/// Command-line overrides shared by render, ablate and bench.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    #[arg(long, value_parser = parse_kebab::<Mode>)]
    pub mode: Option<Mode>,
    #[arg(long, value_parser = parse_kebab::<Variant>)]
    pub variant: Option<Variant>,
    #[arg(long, value_parser = parse_kebab::<Visibility>)]
    pub vis: Option<Visibility>,
    #[arg(long, value_parser = parse_kebab::<BrdfKind>)]
    pub brdf: Option<BrdfKind>,
    /// Sphere-tracing steps.
    #[arg(long)]
    pub nst: Option<usize>,
    /// Coarse cutoff of the distance query.
    #[arg(long)]
    pub cutoff: Option<f64>,
    #[arg(long)]
    pub probe: Option<PathBuf>,
    #[arg(long)]
    pub pose_frame: Option<usize>,
    #[arg(long, env = "HDQ_THREADS")]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub gamma: bool,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Lowers the visibility cutoff when a smaller coarse cutoff is requested.
fn set_cutoff(hdq: &mut HdqConfig, cutoff: f64) {
    hdq.cutoff = cutoff;
    if hdq.vis_cutoff > cutoff {
        info!("visibility cutoff lowered from {} to {cutoff}", hdq.vis_cutoff);
        hdq.vis_cutoff = cutoff;
    }
}

impl RenderConfig {
    /// Reads a config file, resolves its paths and applies `o`.
    pub fn load(path: &Path, o: &Overrides) -> Result<Self> {
        let mut cfg: RenderConfig = read_json(path)?;
        let dir = config_dir(path);
        cfg.scene = resolve(&dir, &cfg.scene);
        cfg.animation = cfg.animation.map(|p| resolve(&dir, &p));
        cfg.probe = cfg.probe.map(|p| resolve(&dir, &p));
        cfg.output = cfg.output.map(|p| resolve(&dir, &p));
        cfg.apply(o);
        cfg.camera.validate()?;
        cfg.options().validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, o: &Overrides) {
        if let Some(m) = o.mode {
            self.mode = m;
        }
        if let Some(v) = o.variant {
            self.variant = v;
        }
        match o.vis {
            Some(v) => self.vis = v,
            None if o.variant.is_some() => self.vis = self.options().for_variant(self.variant).vis,
            None => {}
        }
        if o.brdf.is_some() {
            self.brdf = o.brdf;
        }
        if let Some(n) = o.nst {
            self.trace.steps = n;
        }
        if let Some(c) = o.cutoff {
            set_cutoff(&mut self.hdq, c);
        }
        if o.probe.is_some() {
            self.probe = o.probe.clone();
        }
        if o.pose_frame.is_some() {
            self.pose_frame = o.pose_frame;
        }
        if o.threads.is_some() {
            self.threads = o.threads;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if o.output.is_some() {
            self.output = o.output.clone();
        }
        self.gamma |= o.gamma;
    }

    pub fn options(&self) -> RenderOptions {
        RenderOptions {
            mode: self.mode,
            vis: self.vis,
            variant: self.variant,
            brdf: self.brdf,
            trace: self.trace,
            hdq: self.hdq,
            material_samples: self.material_samples,
        }
    }

    pub fn probe(&self) -> Result<LightProbe> {
        match &self.probe {
            Some(p) => read_probe(p),
            None => Ok(LightProbe::uniform([1.0; 3])),
        }
    }
}

impl FitConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: FitConfig = read_json(path)?;
        let dir = config_dir(path);
        cfg.scene = resolve(&dir, &cfg.scene);
        cfg.animation = cfg.animation.map(|p| resolve(&dir, &p));
        cfg.output = resolve(&dir, &cfg.output);
        cfg.report = cfg.report.map(|p| resolve(&dir, &p));
        for v in cfg.views.iter_mut() {
            v.image = resolve(&dir, &v.image);
            v.camera.validate()?;
        }
        if cfg.views.is_empty() {
            return Err(Error::Config(format!("{}: no views", path.display())));
        }
        Ok(cfg)
    }

    pub fn options(&self) -> RenderOptions {
        RenderOptions {
            mode: Mode::Relit,
            vis: self.vis,
            variant: Variant::Full,
            brdf: self.brdf,
            trace: self.trace,
            hdq: self.hdq,
            material_samples: self.material_samples,
        }
    }
}

/// Scene plus the pose list, taken from the animation file when given.
pub fn load_posed_scene(scene: &Path, animation: Option<&Path>) -> Result<LoadedScene> {
    let mut loaded = load_scene(scene)?;
    if let Some(a) = animation {
        loaded.poses = load_animation(a, loaded.scene.skeleton.len())?;
    }
    Ok(loaded)
}

pub fn select_pose(poses: &[Pose], frame: usize) -> Result<&Pose> {
    poses.get(frame).ok_or_else(|| {
        Error::Config(format!(
            "pose frame {frame} out of range; {} poses available",
            poses.len()
        ))
    })
}
