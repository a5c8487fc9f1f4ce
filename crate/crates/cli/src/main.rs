//! `hdq`: render, ablate, benchmark and probe-fit skinned SDF scenes.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use hdq_core::camera::Camera;
use hdq_core::hdq::{Avatar, HdqConfig};
use hdq_core::imageio::{read_pfm, write_probe};
use hdq_core::probefit::{collect_observations, fit_probe, View, DEFAULT_LAMBDA};
use hdq_core::render::{
    ablate, ablation_csv, bench, cutoff_sweep, render_frame, sweep_csv, timing_csv, with_threads, write_frame,
    TimingRow, Variant, CUTOFF_SWEEP,
};
use hdq_core::{Error, Point3, Result};

use config::{load_posed_scene, parse_kebab, read_json, select_pose, FitConfig, Overrides, RenderConfig};

#[derive(Parser, Debug)]
#[command(
    name = "hdq",
    version,
    about = "Skinned SDF renderer with hierarchical distance queries"
)]
struct Cli {
    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render one frame, or every pose when the output name contains {frame}.
    Render {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Residual and frame time of every field variant.
    Ablate {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Median and minimum frame times per variant.
    Bench(BenchArgs),
    /// Fit a light probe to rendered views.
    FitProbe {
        config: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        max_pixels: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "HDQ_THREADS")]
        threads: Option<usize>,
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Distance-query debugging.
    Hdq {
        #[command(subcommand)]
        command: HdqCommand,
    },
}

#[derive(Args, Debug)]
struct BenchArgs {
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    /// Comma-separated variants to time.
    #[arg(long, value_delimiter = ',', value_parser = parse_kebab::<Variant>, default_value = "full,dense-march")]
    variants: Vec<Variant>,
    /// Also time the full variant over a range of coarse cutoffs.
    #[arg(long)]
    sweep: bool,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    sweep_csv: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum HdqCommand {
    /// Print the distance sample at a world point.
    Probe {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        animation: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        pose_frame: usize,
        #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"], allow_negative_numbers = true, required = true)]
        point: Vec<f64>,
        /// JSON file with distance-query settings.
        #[arg(long)]
        hdq: Option<PathBuf>,
        #[arg(long)]
        cutoff: Option<f64>,
        /// Also print the signed neighbours.
        #[arg(long)]
        dump_knn: bool,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::NoObservations(_) => 2,
        Error::Io { .. } | Error::Format { .. } => 3,
        _ => 4,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn threaded<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        Some(0) => Err(Error::Config("thread count must be at least 1".into())),
        Some(n) => with_threads(n, f)?,
        None => f(),
    }
}

fn frame_path(template: &Path, frame: usize) -> PathBuf {
    PathBuf::from(template.to_string_lossy().replace("{frame}", &format!("{frame:04}")))
}

fn render(path: &Path, overrides: &Overrides) -> Result<()> {
    let cfg = RenderConfig::load(path, overrides)?;
    let output = cfg
        .output
        .clone()
        .ok_or_else(|| Error::Config("no output path in the config or on the command line".into()))?;
    let loaded = load_posed_scene(&cfg.scene, cfg.animation.as_deref())?;
    let all = output.to_string_lossy().contains("{frame}");
    let frames: Vec<usize> = if all {
        (0..loaded.poses.len()).collect()
    } else {
        vec![cfg.pose_frame.unwrap_or(0)]
    };
    let probe = cfg.probe()?;
    let opts = cfg.options();
    let avatar = Avatar::new(loaded.scene, loaded.template_samples)?;
    threaded(cfg.threads, || {
        for &f in &frames {
            let posed = avatar.pose(select_pose(&loaded.poses, f)?)?;
            let frame = render_frame(&posed, &cfg.camera, &probe, &opts)?;
            let out = if all { frame_path(&output, f) } else { output.clone() };
            write_frame(&out, &frame, cfg.gamma)?;
            let s = frame.stats;
            println!(
                "{}: frame {f}, {} shaded, {} background, {} failed, {:.3}s",
                out.display(),
                s.shaded,
                s.background,
                s.failed,
                s.seconds
            );
            if s.failed > 0 {
                warn!("{} pixels failed to trace and were left as background", s.failed);
            }
        }
        Ok(())
    })
}

fn posed_setup(cfg: &RenderConfig) -> Result<(Avatar, hdq_core::rig::Pose)> {
    let loaded = load_posed_scene(&cfg.scene, cfg.animation.as_deref())?;
    let pose = select_pose(&loaded.poses, cfg.pose_frame.unwrap_or(0))?.clone();
    Ok((Avatar::new(loaded.scene, loaded.template_samples)?, pose))
}

fn run_ablate(path: &Path, overrides: &Overrides, csv: Option<&Path>) -> Result<()> {
    let cfg = RenderConfig::load(path, overrides)?;
    let (avatar, pose) = posed_setup(&cfg)?;
    let posed = avatar.pose(&pose)?;
    let probe = cfg.probe()?;
    let rows = threaded(cfg.threads, || ablate(&posed, &cfg.camera, &probe, &cfg.options()))?;
    println!("{:<12} {:>12} {:>8} {:>10}", "variant", "residual", "rays", "seconds");
    for r in &rows {
        println!(
            "{:<12} {:>12.4e} {:>8} {:>10.3}",
            r.variant.to_string(),
            r.residual,
            r.rays,
            r.seconds
        );
    }
    if let Some(p) = csv {
        write_text(p, &ablation_csv(&rows))?;
    }
    Ok(())
}

fn print_timings(rows: &[TimingRow]) {
    println!("{:<16} {:>10} {:>10} {:>5}", "label", "median", "min", "runs");
    for r in rows {
        println!("{:<16} {:>10.4} {:>10.4} {:>5}", r.label, r.median, r.min, r.runs);
    }
}

fn run_bench(a: &BenchArgs) -> Result<()> {
    if a.repetitions == 0 {
        return Err(Error::Config("repetitions must be at least 1".into()));
    }
    let cfg = RenderConfig::load(&a.config, &a.overrides)?;
    let (avatar, pose) = posed_setup(&cfg)?;
    let posed = avatar.pose(&pose)?;
    let probe = cfg.probe()?;
    let opts = cfg.options();
    threaded(cfg.threads, || {
        let rows = bench(&posed, &cfg.camera, &probe, &opts, &a.variants, a.repetitions)?;
        print_timings(&rows);
        let find = |v: Variant| rows.iter().find(|r| r.label == v.to_string());
        if let (Some(full), Some(dense)) = (find(Variant::Full), find(Variant::DenseMarch)) {
            println!("dense-march / full median ratio {:.2}", dense.median / full.median);
        }
        if let Some(p) = &a.csv {
            write_text(p, &timing_csv(&rows))?;
        }
        if a.sweep {
            let sweep = cutoff_sweep(&posed, &cfg.camera, &probe, &opts, &CUTOFF_SWEEP, a.repetitions)?;
            println!(
                "{:<8} {:>10} {:>10} {:>12} {:>10}",
                "cutoff", "median", "min", "residual", "fine"
            );
            for r in &sweep {
                println!(
                    "{:<8} {:>10.4} {:>10.4} {:>12.4e} {:>10}",
                    r.cutoff, r.timing.median, r.timing.min, r.residual, r.fine_evaluations
                );
            }
            if let Some(p) = &a.sweep_csv {
                write_text(p, &sweep_csv(&sweep))?;
            }
        }
        Ok(())
    })
}

#[allow(clippy::too_many_arguments)]
fn run_fit(
    path: &Path,
    lambda: Option<f64>,
    max_pixels: Option<usize>,
    seed: Option<u64>,
    threads: Option<usize>,
    output: Option<&Path>,
    report: Option<&Path>,
) -> Result<()> {
    let cfg = FitConfig::load(path)?;
    let loaded = load_posed_scene(&cfg.scene, cfg.animation.as_deref())?;
    let avatar = Avatar::new(loaded.scene, loaded.template_samples)?;
    let images = cfg
        .views
        .iter()
        .map(|v| read_pfm(&v.image))
        .collect::<Result<Vec<_>>>()?;
    let posed = cfg
        .views
        .iter()
        .map(|v| avatar.pose(select_pose(&loaded.poses, v.pose_frame)?))
        .collect::<Result<Vec<_>>>()?;
    let cameras: Vec<&Camera> = cfg.views.iter().map(|v| &v.camera).collect();
    let views: Vec<View> = (0..cfg.views.len())
        .map(|i| View {
            posed: &posed[i],
            camera: cameras[i],
            image: &images[i],
            frame: i,
        })
        .collect();
    let lambda = lambda.or(cfg.lambda).unwrap_or(DEFAULT_LAMBDA);
    let max_px = max_pixels.or(cfg.max_pixels).unwrap_or(usize::MAX);
    let seed = seed.unwrap_or(cfg.seed);
    let opts = cfg.options();
    let fit = threaded(threads.or(cfg.threads), || {
        let obs = collect_observations(&views, &opts, max_px, seed)?;
        info!("{} observations from {} views", obs.len(), views.len());
        fit_probe(&obs, lambda)
    })?;
    let out = output.map(Path::to_path_buf).unwrap_or(cfg.output.clone());
    write_probe(&out, &fit.probe)?;
    let text = fit.to_text();
    match report.map(Path::to_path_buf).or(cfg.report.clone()) {
        Some(p) => write_text(&p, &text)?,
        None => print!("{text}"),
    }
    let r = fit.residual_rms;
    println!(
        "{}: {} observations, residual {:.3e} {:.3e} {:.3e}, condition {:.3e}",
        out.display(),
        fit.observations,
        r[0],
        r[1],
        r[2],
        fit.condition
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_hdq_probe(
    scene: &Path,
    animation: Option<&Path>,
    pose_frame: usize,
    point: &[f64],
    hdq: Option<&Path>,
    cutoff: Option<f64>,
    dump_knn: bool,
) -> Result<()> {
    let loaded = load_posed_scene(scene, animation)?;
    let pose = select_pose(&loaded.poses, pose_frame)?.clone();
    let mut cfg: HdqConfig = match hdq {
        Some(p) => read_json(p)?,
        None => HdqConfig::default(),
    };
    if let Some(c) = cutoff {
        cfg.cutoff = c;
        cfg.vis_cutoff = cfg.vis_cutoff.min(c);
    }
    cfg.validate()?;
    let avatar = Avatar::new(loaded.scene, loaded.template_samples)?;
    let posed = avatar.pose(&pose)?;
    let x = Point3::new(point[0], point[1], point[2]);
    println!("{}", posed.query(&x, &cfg, None));
    if dump_knn {
        for (i, n) in posed.knn(&x, &cfg).neighbors.iter().enumerate() {
            println!(
                "knn {i}: index {} template {} d {} p {} {} {} n {} {} {} c {} {} {} replaced {}",
                n.index,
                n.template,
                n.distance,
                n.position.x,
                n.position.y,
                n.position.z,
                n.normal.x,
                n.normal.y,
                n.normal.z,
                n.canonical.x,
                n.canonical.y,
                n.canonical.z,
                n.replaced
            );
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Render { config, overrides } => render(&config, &overrides),
        Command::Ablate { config, overrides, csv } => run_ablate(&config, &overrides, csv.as_deref()),
        Command::Bench(a) => run_bench(&a),
        Command::FitProbe {
            config,
            lambda,
            max_pixels,
            seed,
            threads,
            output,
            report,
        } => run_fit(
            &config,
            lambda,
            max_pixels,
            seed,
            threads,
            output.as_deref(),
            report.as_deref(),
        ),
        Command::Hdq {
            command:
                HdqCommand::Probe {
                    scene,
                    animation,
                    pose_frame,
                    point,
                    hdq,
                    cutoff,
                    dump_knn,
                },
        } => run_hdq_probe(
            &scene,
            animation.as_deref(),
            pose_frame,
            &point,
            hdq.as_deref(),
            cutoff,
            dump_knn,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
