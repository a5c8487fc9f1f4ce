//! Light-probe estimation from rendered observations.
//!
//! Shading is linear in the probe, so each observed pixel contributes one
//! linear equation `row · L = target` per channel. The probe is the ridge
//! least-squares solution of the stacked system, with negative texels
//! clamped to zero afterwards.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::hdq::PosedAvatar;
use crate::imageio::Image;
use crate::render::{point_transfer, surface_point, RenderOptions};
use crate::shade::{apply_row, LightProbe, Rgb, PROBE_COLS, PROBE_ROWS, PROBE_TEXELS};

pub const DEFAULT_LAMBDA: f64 = 1e-4;

/// Texels whose transfer weight reaches this fraction of the best covered
/// texel's weight count as observed.
pub const COVERAGE_THRESHOLD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    /// Per-texel transfer weights, [`PROBE_TEXELS`] entries.
    pub row: Vec<Rgb>,
    pub target: Rgb,
    pub frame: usize,
    pub pixel: (usize, usize),
}

/// One rendered view: geometry, camera and the observed image.
pub struct View<'v, 'a> {
    pub posed: &'v PosedAvatar<'a>,
    pub camera: &'v Camera,
    pub image: &'v Image,
    pub frame: usize,
}

/// Builds observations from every view. At most `max_px` hit pixels per
/// view are kept, chosen by a seeded shuffle.
pub fn collect_observations(
    views: &[View<'_, '_>],
    opts: &RenderOptions,
    max_px: usize,
    seed: u64,
) -> Result<Vec<Observation>> {
    opts.validate()?;
    let mut out = Vec::new();
    for (v, view) in views.iter().enumerate() {
        let cam = view.camera;
        if view.image.width != cam.width || view.image.height != cam.height {
            return Err(Error::Config(format!(
                "view {v}: image is {}x{} but the camera is {}x{}",
                view.image.width, view.image.height, cam.width, cam.height
            )));
        }
        let mut hits: Vec<_> = (0..cam.width * cam.height)
            .into_par_iter()
            .filter_map(|i| {
                let (x, y) = (i % cam.width, i / cam.width);
                let dir = cam.direction(x, y);
                match surface_point(view.posed, &cam.position, &dir, opts) {
                    Ok(Some(s)) => Some(((x, y), s.shading)),
                    _ => None,
                }
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(v as u64));
        hits.shuffle(&mut rng);
        hits.truncate(max_px);
        let rows: Vec<Observation> = hits
            .par_iter()
            .map(|((x, y), point)| Observation {
                row: point_transfer(view.posed, point, opts),
                target: view.image.rgb(*x, *y),
                frame: view.frame,
                pixel: (*x, *y),
            })
            .collect();
        out.extend(rows);
    }
    if out.is_empty() {
        return Err(Error::NoObservations("no camera ray hit the surface".into()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub probe: LightProbe,
    pub lambda: f64,
    pub observations: usize,
    /// RMS of `row · L − target` per channel for the fitted probe.
    pub residual_rms: Rgb,
    /// Largest over channels of the normal matrix's eigenvalue ratio.
    pub condition: f64,
    /// Share of the total transfer weight falling on each texel.
    pub coverage: Vec<f64>,
    /// Texels set to zero by the non-negativity clamp.
    pub clamped: usize,
    pub seconds: f64,
}

impl FitReport {
    /// Coverage divided by the largest texel coverage.
    pub fn relative_coverage(&self) -> Vec<f64> {
        let max = self.coverage.iter().cloned().fold(0.0, f64::max);
        if max == 0.0 {
            return vec![0.0; self.coverage.len()];
        }
        self.coverage.iter().map(|c| c / max).collect()
    }

    pub fn observed_texels(&self) -> usize {
        self.relative_coverage()
            .iter()
            .filter(|&&c| c >= COVERAGE_THRESHOLD)
            .count()
    }

    /// Plain-text report: summary lines, then the coverage grid in percent.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let r = self.residual_rms;
        let _ = writeln!(s, "observations {}", self.observations);
        let _ = writeln!(s, "lambda {:e}", self.lambda);
        let _ = writeln!(s, "residual_rms {:.6e} {:.6e} {:.6e}", r[0], r[1], r[2]);
        let _ = writeln!(s, "condition {:.6e}", self.condition);
        let _ = writeln!(s, "clamped_texels {}", self.clamped);
        let _ = writeln!(s, "observed_texels {}", self.observed_texels());
        let _ = writeln!(s, "solve_seconds {:.3}", self.seconds);
        let _ = writeln!(s, "coverage_percent");
        for row in self.coverage.chunks(PROBE_COLS) {
            let line: Vec<String> = row.iter().map(|c| format!("{:.2}", 100.0 * c)).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }
}

fn check_rows(observations: &[Observation]) -> Result<()> {
    for (i, o) in observations.iter().enumerate() {
        if o.row.len() != PROBE_TEXELS {
            return Err(Error::Invariant(format!(
                "observation {i} has {} texel weights, expected {PROBE_TEXELS}",
                o.row.len()
            )));
        }
        if o.row.iter().flatten().chain(&o.target).any(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!("observation {i} is not finite")));
        }
        if o.row.iter().flatten().any(|&v| v < 0.0) {
            return Err(Error::Invariant(format!(
                "observation {i} has a negative transfer weight"
            )));
        }
    }
    Ok(())
}

/// Ridge least squares per channel via the normal equations.
pub fn fit_probe(observations: &[Observation], lambda: f64) -> Result<FitReport> {
    if observations.is_empty() {
        return Err(Error::NoObservations("probe fit needs at least one observation".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!(
            "ridge weight must be non-negative, got {lambda}"
        )));
    }
    check_rows(observations)?;
    let start = Instant::now();
    let n = observations.len();
    let mut texels = vec![[0.0; 3]; PROBE_TEXELS];
    let mut condition: f64 = 0.0;
    for c in 0..3 {
        let a = DMatrix::from_fn(n, PROBE_TEXELS, |i, j| observations[i].row[j][c]);
        let b = DVector::from_iterator(n, observations.iter().map(|o| o.target[c]));
        let mut normal = a.tr_mul(&a);
        for j in 0..PROBE_TEXELS {
            normal[(j, j)] += lambda;
        }
        let rhs = a.tr_mul(&b);
        let eig = normal.clone().symmetric_eigenvalues();
        let (lo, hi) = eig
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
        condition = condition.max(if lo > 0.0 { hi / lo } else { f64::INFINITY });
        let chol = normal
            .cholesky()
            .ok_or_else(|| Error::Solver(format!("channel {c}: normal matrix is not positive definite")))?;
        let x = chol.solve(&rhs);
        for (t, v) in texels.iter_mut().zip(x.iter()) {
            t[c] = *v;
        }
    }
    let mut clamped = 0;
    for t in texels.iter_mut() {
        if t.iter().any(|&v| v < 0.0) {
            clamped += 1;
        }
        for v in t.iter_mut() {
            *v = v.max(0.0);
        }
    }
    let probe = LightProbe::from_texels(texels)?;
    let mut coverage = vec![0.0; PROBE_TEXELS];
    for o in observations {
        for (cov, w) in coverage.iter_mut().zip(&o.row) {
            *cov += w[0] + w[1] + w[2];
        }
    }
    let total: f64 = coverage.iter().sum();
    if total > 0.0 {
        coverage.iter_mut().for_each(|c| *c /= total);
    }
    let residual_rms = reconstruction_error(&probe, observations)?;
    Ok(FitReport {
        probe,
        lambda,
        observations: n,
        residual_rms,
        condition,
        coverage,
        clamped,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Per-channel RMS of `row · L − target`.
pub fn reconstruction_error(probe: &LightProbe, observations: &[Observation]) -> Result<Rgb> {
    if observations.is_empty() {
        return Err(Error::NoObservations("reconstruction error of an empty set".into()));
    }
    let mut sum = [0.0; 3];
    for o in observations {
        let p = apply_row(&o.row, probe);
        for c in 0..3 {
            sum[c] += (p[c] - o.target[c]).powi(2);
        }
    }
    Ok(sum.map(|s| (s / observations.len() as f64).sqrt()))
}

/// Relative RMS error of `fitted` against `truth` over texels whose
/// coverage is at least `threshold`.
pub fn relative_texel_error(fitted: &LightProbe, truth: &LightProbe, coverage: &[f64], threshold: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for ((f, t), cov) in fitted.texels().iter().zip(truth.texels()).zip(coverage) {
        if *cov >= threshold {
            for c in 0..3 {
                num += (f[c] - t[c]).powi(2);
                den += t[c] * t[c];
            }
        }
    }
    (num / den).sqrt()
}

/// Probe texel `(row, col)` of a flat texel index.
pub fn texel_coords(index: usize) -> (usize, usize) {
    debug_assert!(index < PROBE_ROWS * PROBE_COLS);
    (index / PROBE_COLS, index % PROBE_COLS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_probe(rng: &mut ChaCha8Rng) -> LightProbe {
        LightProbe::from_texels((0..PROBE_TEXELS).map(|_| [0.5 + rng.random::<f64>(); 3]).collect()).unwrap()
    }

    /// Rows touching only the first `span` texels, as a partially observed
    /// sphere of directions would.
    fn synthetic(n: usize, span: usize, probe: &LightProbe, noise: f64, seed: u64) -> Vec<Observation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let row: Vec<Rgb> = (0..PROBE_TEXELS)
                    .map(|j| {
                        if j < span {
                            [rng.random::<f64>() * 0.1; 3]
                        } else {
                            [0.0; 3]
                        }
                    })
                    .collect();
                let mut target = apply_row(&row, probe);
                for t in target.iter_mut() {
                    *t += noise * (rng.random::<f64>() - 0.5);
                }
                Observation {
                    row,
                    target,
                    frame: 0,
                    pixel: (i, 0),
                }
            })
            .collect()
    }

    #[test]
    fn zero_targets_fit_zero() {
        let obs = synthetic(50, 512, &LightProbe::black(), 0.0, 1);
        let r = fit_probe(&obs, DEFAULT_LAMBDA).unwrap();
        assert!(r.probe.texels().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn single_observation_ridge_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth = random_probe(&mut rng);
        let obs = synthetic(1, 512, &truth, 0.0, 4);
        let r = fit_probe(&obs, DEFAULT_LAMBDA).unwrap();
        // minimum-norm ridge: L = rᵀ b / (‖r‖² + λ), residual = λ b / (‖r‖² + λ)
        let norm2: f64 = obs[0].row.iter().map(|w| w[0] * w[0]).sum();
        let b = obs[0].target[0];
        let expected = DEFAULT_LAMBDA * b / (norm2 + DEFAULT_LAMBDA);
        assert!((r.residual_rms[0] - expected).abs() <= 1e-9 * b);
        assert!(r.residual_rms[0] <= 1e-3 * b);
        for (j, t) in r.probe.texels().iter().enumerate() {
            assert!((t[0] - obs[0].row[j][0] * b / (norm2 + DEFAULT_LAMBDA)).abs() < 1e-9);
        }
    }

    #[test]
    fn unobserved_texels_are_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = random_probe(&mut rng);
        let obs = synthetic(300, 200, &truth, 0.0, 6);
        let r = fit_probe(&obs, DEFAULT_LAMBDA).unwrap();
        assert!(r.probe.texels()[200..].iter().flatten().all(|&v| v == 0.0));
        assert!(r.coverage[200..].iter().all(|&c| c == 0.0));
        assert!((r.coverage.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(r.observed_texels(), 200);
        assert!(relative_texel_error(&r.probe, &truth, &r.relative_coverage(), COVERAGE_THRESHOLD) < 0.01);
    }

    #[test]
    fn scale_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let truth = random_probe(&mut rng);
        let obs = synthetic(120, 512, &truth, 0.05, 8);
        let base = fit_probe(&obs, DEFAULT_LAMBDA).unwrap();
        for c in [0.5, 3.0] {
            let scaled: Vec<Observation> = obs
                .iter()
                .map(|o| Observation {
                    target: o.target.map(|t| t * c),
                    ..o.clone()
                })
                .collect();
            let r = fit_probe(&scaled, DEFAULT_LAMBDA).unwrap();
            for (a, b) in r.probe.texels().iter().zip(base.probe.texels()) {
                for k in 0..3 {
                    assert!((a[k] - c * b[k]).abs() <= 1e-9 * (1.0 + c * b[k].abs()));
                }
            }
        }
    }

    #[test]
    fn reconstruction_error_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let truth = random_probe(&mut rng);
        let obs = synthetic(40, 512, &truth, 0.0, 10);
        assert!(reconstruction_error(&truth, &obs).unwrap().iter().all(|&e| e <= 1e-9));
        // doubling the probe misses by exactly the rendered values
        let doubled = reconstruction_error(&truth.scaled(2.0), &obs).unwrap();
        let rendered: f64 = (obs.iter().map(|o| o.target[1].powi(2)).sum::<f64>() / obs.len() as f64).sqrt();
        assert!((doubled[1] - rendered).abs() <= 1e-9 * rendered);
        let other = random_probe(&mut rng);
        let e = reconstruction_error(&other, &obs).unwrap();
        assert!(e.iter().all(|&v| v >= 0.0));
        assert!(reconstruction_error(&truth, &[]).is_err());
    }

    #[test]
    fn refit_on_subset_is_no_worse_there() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let truth =
            LightProbe::from_texels((0..PROBE_TEXELS).map(|_| [5.0 + rng.random::<f64>(); 3]).collect()).unwrap();
        let obs = synthetic(700, 512, &truth, 0.02, 12);
        let full = fit_probe(&obs, DEFAULT_LAMBDA).unwrap();
        assert_eq!(full.clamped, 0);
        for keep in [650, 600, 560] {
            let subset = &obs[..keep];
            let refit = fit_probe(subset, DEFAULT_LAMBDA).unwrap();
            let old = reconstruction_error(&full.probe, subset).unwrap();
            let new = reconstruction_error(&refit.probe, subset).unwrap();
            for c in 0..3 {
                assert!(new[c] <= old[c] + 1e-9, "{keep}: {} > {}", new[c], old[c]);
            }
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(fit_probe(&[], 1e-4), Err(Error::NoObservations(_))));
        let obs = synthetic(3, 512, &LightProbe::uniform([1.0; 3]), 0.0, 13);
        assert!(matches!(fit_probe(&obs, 0.0), Err(Error::Solver(_))));
        let mut bad = obs.clone();
        bad[0].row.pop();
        assert!(matches!(fit_probe(&bad, 1e-4), Err(Error::Invariant(_))));
        let report = fit_probe(&obs, 1e-4).unwrap();
        let text = report.to_text();
        assert!(text.starts_with("observations 3\n"));
        assert_eq!(text.lines().count(), 8 + PROBE_ROWS);
    }
}
