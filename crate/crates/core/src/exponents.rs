//! Ensemble estimators for the top Lyapunov exponent and the moment Lyapunov
//! exponent `Lambda(p) = -lim (1/t) log E |D phi^t v|^{-p}`.
//!
//! Every path runs its own velocity realisation with a handful of tracers.
//! After burn-in the measured window is cut into equal time batches and the
//! log-stretch increment of each tracer over each batch is kept, so that
//! `lambda_1` and the whole `Lambda(p)` curve are computed from one shared
//! set of samples.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{FlowSpec, DEFAULT_BLOWUP_BOUND};
use crate::error::{Error, Result};
use crate::lagrangian::TracerBundle;
use crate::rng::PathRng;

/// Ensemble layout and measurement window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub n_paths: usize,
    pub tracers_per_path: usize,
    pub dt: f64,
    pub horizon: f64,
    /// Defaults to 20% of the horizon.
    pub burn_in: Option<f64>,
    pub n_batches: usize,
    pub seed: u64,
    pub blowup_bound: f64,
    pub p_max: f64,
    /// Largest tolerated share of a single sample in the `Lambda(p)` average.
    pub degeneracy_threshold: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            n_paths: 64,
            tracers_per_path: 8,
            dt: 1e-3,
            horizon: 200.0,
            burn_in: None,
            n_batches: 8,
            seed: 1,
            blowup_bound: DEFAULT_BLOWUP_BOUND,
            p_max: 0.5,
            degeneracy_threshold: 0.01,
        }
    }
}

impl EnsembleConfig {
    pub fn burn_in(&self) -> f64 {
        self.burn_in.unwrap_or(0.2 * self.horizon)
    }

    fn total_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    fn burn_steps(&self) -> usize {
        (self.burn_in() / self.dt).round() as usize
    }

    /// Step indices delimiting the measurement batches.
    fn batch_edges(&self) -> Vec<usize> {
        let burn = self.burn_steps();
        let measured = self.total_steps() - burn;
        (0..=self.n_batches)
            .map(|b| burn + b * measured / self.n_batches)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.into()));
        if self.n_paths == 0 || self.tracers_per_path == 0 {
            return bad("ensemble needs at least one path and one tracer");
        }
        if !(self.dt > 0.0) || !(self.horizon > self.dt) || !self.horizon.is_finite() {
            return bad("need 0 < dt < horizon");
        }
        let burn = self.burn_in();
        if !(burn >= 0.0) || !(burn < self.horizon) {
            return bad("burn-in must lie in [0, horizon)");
        }
        if self.n_batches == 0 || self.total_steps() - self.burn_steps() < self.n_batches {
            return bad("measurement window shorter than the number of batches");
        }
        if !(self.p_max > 0.0) {
            return bad("p_max must be positive");
        }
        if !(self.degeneracy_threshold > 0.0 && self.degeneracy_threshold <= 1.0) {
            return bad("degeneracy threshold must lie in (0, 1]");
        }
        Ok(())
    }

    /// Length of the measurement window actually simulated.
    pub fn measured_time(&self) -> f64 {
        (self.total_steps() - self.burn_steps()) as f64 * self.dt
    }
}

/// Log-stretch increments of every tracer of one path, batch-major per tracer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSamples {
    pub path: u64,
    pub increments: Vec<Vec<f64>>,
}

/// Initial tracers of a path: uniform positions and uniform directions.
pub fn initial_tracers(seed: u64, path: u64, count: usize) -> Vec<TracerBundle> {
    let mut rng = PathRng::tracers(seed, path);
    (0..count)
        .map(|_| {
            let x = [rng.random_range(-PI..PI), rng.random_range(-PI..PI)];
            TracerBundle::at_angle(x, rng.random_range(0.0..PI))
        })
        .collect()
}

/// Simulate path `path` and record its tracers' batch increments.
pub fn run_path(flow: &FlowSpec, cfg: &EnsembleConfig, path: u64) -> Result<PathSamples> {
    let mut source = flow.source(cfg.dt, cfg.seed, path, cfg.blowup_bound)?;
    let mut tracers = initial_tracers(cfg.seed, path, cfg.tracers_per_path);
    let edges = cfg.batch_edges();
    let mut increments = vec![Vec::with_capacity(cfg.n_batches); tracers.len()];
    let mut marks: Vec<f64> = vec![0.0; tracers.len()];
    let mut next_edge = 0;
    for step in 0..=cfg.total_steps() {
        if next_edge < edges.len() && step == edges[next_edge] {
            for (i, b) in tracers.iter().enumerate() {
                if next_edge > 0 {
                    increments[i].push(b.rho - marks[i]);
                }
                marks[i] = b.rho;
            }
            next_edge += 1;
        }
        if step == cfg.total_steps() {
            break;
        }
        let ev = source.current().evaluator();
        for b in tracers.iter_mut() {
            b.step(&ev, cfg.dt);
        }
        source.advance()?;
    }
    Ok(PathSamples { path, increments })
}

/// Shared log-stretch samples of a whole ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StretchSamples {
    pub config: EnsembleConfig,
    pub paths: Vec<PathSamples>,
}

/// Run all paths in parallel; results are kept in path order.
pub fn sample_stretches(flow: &FlowSpec, cfg: &EnsembleConfig) -> Result<StretchSamples> {
    flow.validate()?;
    cfg.validate()?;
    let paths = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|p| run_path(flow, cfg, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(StretchSamples {
        config: cfg.clone(),
        paths,
    })
}

/// A point estimate with its standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub t_final: f64,
    pub burn_in: f64,
    /// Largest normalised weight in the exponential average, when there is one.
    pub max_weight: Option<f64>,
    pub degenerate: bool,
}

/// JSON record written for each estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub p: Option<f64>,
    pub value: f64,
    pub stderr: f64,
    pub n_paths: usize,
    #[serde(rename = "T")]
    pub t: f64,
    pub burn_in: f64,
    pub seed: u64,
    pub model_hash: String,
}

impl ExponentEstimate {
    pub fn record(&self, p: Option<f64>, seed: u64, model_hash: &str) -> EstimateRecord {
        EstimateRecord {
            p,
            value: self.value,
            stderr: self.stderr,
            n_paths: self.n_paths,
            t: self.t_final,
            burn_in: self.burn_in,
            seed,
            model_hash: model_hash.to_string(),
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean; zero for a single value.
fn stderr_of_mean(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// `log mean exp(a_i)` and the largest normalised weight.
fn log_mean_exp(a: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let m = a.clone().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut n = 0usize;
    for x in a {
        total += (x - m).exp();
        n += 1;
    }
    (m + (total / n as f64).ln(), 1.0 / total)
}

impl StretchSamples {
    pub fn n_samples(&self) -> usize {
        self.paths.iter().map(|p| p.increments.len()).sum()
    }

    fn totals(&self) -> impl Iterator<Item = f64> + Clone + '_ {
        self.paths
            .iter()
            .flat_map(|p| p.increments.iter().map(|inc| inc.iter().sum::<f64>()))
    }

    fn batch(&self, b: usize) -> impl Iterator<Item = f64> + Clone + '_ {
        self.paths
            .iter()
            .flat_map(move |p| p.increments.iter().map(move |inc| inc[b]))
    }

    fn base_estimate(&self, value: f64, stderr: f64) -> ExponentEstimate {
        ExponentEstimate {
            value,
            stderr,
            n_paths: self.paths.len(),
            t_final: self.config.horizon,
            burn_in: self.config.burn_in(),
            max_weight: None,
            degenerate: false,
        }
    }

    /// Path-averaged growth rate; stderr from the spread across paths.
    pub fn lambda1(&self) -> ExponentEstimate {
        let window = self.config.measured_time();
        let per_path: Vec<f64> = self
            .paths
            .iter()
            .map(|p| {
                let s: Vec<f64> = p.increments.iter().map(|inc| inc.iter().sum::<f64>() / window).collect();
                mean(&s)
            })
            .collect();
        self.base_estimate(mean(&per_path), stderr_of_mean(&per_path))
    }

    /// Log-mean-exp estimate of `Lambda(p)`; stderr from time-batch means.
    pub fn moment(&self, p: f64) -> Result<ExponentEstimate> {
        if !(p.abs() <= self.config.p_max) {
            return Err(Error::InvalidParameter(format!(
                "|p| = {} exceeds p_max = {}",
                p.abs(),
                self.config.p_max
            )));
        }
        let window = self.config.measured_time();
        let (lme, max_weight) = log_mean_exp(self.totals().map(|r| -p * r));
        // `+ 0.0` turns the `-0` of p = 0 into `0`
        let value = -lme / window + 0.0;
        let nb = self.config.n_batches;
        let tau = window / nb as f64;
        let batch_values: Vec<f64> = (0..nb)
            .map(|b| -log_mean_exp(self.batch(b).map(|r| -p * r)).0 / tau)
            .collect();
        let mut est = self.base_estimate(value, stderr_of_mean(&batch_values));
        est.max_weight = Some(max_weight);
        est.degenerate = max_weight > self.config.degeneracy_threshold;
        if est.degenerate {
            log::warn!(
                "Lambda({p}): one sample carries {:.3} of the total weight (threshold {})",
                max_weight,
                self.config.degeneracy_threshold
            );
        }
        Ok(est)
    }

    pub fn moment_curve(&self, p_grid: &[f64]) -> Result<MomentCurve> {
        check_grid(p_grid)?;
        let lambda_of_p = p_grid.iter().map(|&p| self.moment(p)).collect::<Result<Vec<_>>>()?;
        Ok(MomentCurve {
            p_grid: p_grid.to_vec(),
            lambda_of_p,
        })
    }
}

fn check_grid(p_grid: &[f64]) -> Result<()> {
    if p_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter("p grid must be strictly increasing".into()));
    }
    if !p_grid.contains(&0.0) {
        return Err(Error::InvalidParameter("p grid must contain 0".into()));
    }
    Ok(())
}

/// Symmetric grid `-p_max, ..., p_max` with spacing `step`, exact at 0.
/// Points are rounded to 12 decimals so `6 * 0.05` prints as `0.3`.
pub fn symmetric_grid(p_max: f64, step: f64) -> Vec<f64> {
    let n = (p_max / step).round() as i64;
    (-n..=n).map(|i| (i as f64 * step * 1e12).round() / 1e12 + 0.0).collect()
}

pub fn estimate_lambda1(flow: &FlowSpec, cfg: &EnsembleConfig) -> Result<ExponentEstimate> {
    Ok(sample_stretches(flow, cfg)?.lambda1())
}

pub fn estimate_moment_lyap(flow: &FlowSpec, p: f64, cfg: &EnsembleConfig) -> Result<ExponentEstimate> {
    sample_stretches(flow, cfg)?.moment(p)
}

pub fn moment_curve(flow: &FlowSpec, p_grid: &[f64], cfg: &EnsembleConfig) -> Result<MomentCurve> {
    check_grid(p_grid)?;
    sample_stretches(flow, cfg)?.moment_curve(p_grid)
}

/// `Lambda(p)` over a grid, all points sharing one sample set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentCurve {
    pub p_grid: Vec<f64>,
    pub lambda_of_p: Vec<ExponentEstimate>,
}

impl MomentCurve {
    pub fn at(&self, p: f64) -> Option<&ExponentEstimate> {
        self.p_grid
            .iter()
            .position(|&q| (q - p).abs() < 1e-12)
            .map(|i| &self.lambda_of_p[i])
    }

    /// Second differences with stderr `sqrt(s_{i-1}^2 + 4 s_i^2 + s_{i+1}^2)`.
    pub fn second_differences(&self) -> Vec<(f64, f64, f64)> {
        let l = &self.lambda_of_p;
        (1..l.len().saturating_sub(1))
            .map(|i| {
                let d = l[i - 1].value - 2.0 * l[i].value + l[i + 1].value;
                let s = (l[i - 1].stderr.powi(2) + 4.0 * l[i].stderr.powi(2) + l[i + 1].stderr.powi(2)).sqrt();
                (self.p_grid[i], d, s)
            })
            .collect()
    }

    /// `(Lambda(h) - Lambda(-h)) / 2h` and its propagated stderr.
    pub fn central_slope(&self, h: f64) -> Option<(f64, f64)> {
        let a = self.at(h)?;
        let b = self.at(-h)?;
        Some((
            (a.value - b.value) / (2.0 * h),
            a.stderr.hypot(b.stderr) / (2.0 * h),
        ))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "p,lambda,stderr")?;
        for (p, e) in self.p_grid.iter().zip(&self.lambda_of_p) {
            writeln!(out, "{},{},{}", p, e.value, e.stderr)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{SpectralField, WaveIndex};

    fn small_cfg() -> EnsembleConfig {
        EnsembleConfig {
            n_paths: 4,
            tracers_per_path: 3,
            dt: 0.05,
            horizon: 20.0,
            ..Default::default()
        }
    }

    fn synthetic(increments: Vec<Vec<Vec<f64>>>, cfg: EnsembleConfig) -> StretchSamples {
        StretchSamples {
            config: cfg,
            paths: increments
                .into_iter()
                .enumerate()
                .map(|(i, inc)| PathSamples {
                    path: i as u64,
                    increments: inc,
                })
                .collect(),
        }
    }

    #[test]
    fn batch_edges_cover_the_window() {
        let cfg = small_cfg();
        let e = cfg.batch_edges();
        assert_eq!(e.len(), 9);
        assert_eq!(e[0], 80);
        assert_eq!(*e.last().unwrap(), 400);
        assert!((cfg.measured_time() - 16.0).abs() < 1e-12);
    }

    #[test]
    fn frozen_zero_gives_zero_exponents() {
        let flow = FlowSpec::Frozen(SpectralField::zeros(3).unwrap());
        let s = sample_stretches(&flow, &small_cfg()).unwrap();
        assert_eq!(s.lambda1().value, 0.0);
        for p in [-0.5, -0.1, 0.0, 0.3] {
            assert_eq!(s.moment(p).unwrap().value, 0.0);
        }
    }

    #[test]
    fn p_zero_is_exactly_zero() {
        let cfg = small_cfg();
        let s = synthetic(vec![vec![vec![0.3; 8], vec![-1.2; 8]], vec![vec![2.0; 8]]], cfg);
        let e = s.moment(0.0).unwrap();
        assert_eq!(e.value, 0.0);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn moment_matches_direct_formula() {
        let cfg = small_cfg();
        let rho = [[0.5, 1.0], [2.0, -0.25]];
        let inc: Vec<Vec<Vec<f64>>> = rho
            .iter()
            .map(|path| path.iter().map(|&r| vec![r / 8.0; 8]).collect())
            .collect();
        let s = synthetic(inc, cfg.clone());
        let p = 0.3;
        let direct = -(rho.iter().flatten().map(|r| (-p * r).exp()).sum::<f64>() / 4.0).ln() / cfg.measured_time();
        assert!((s.moment(p).unwrap().value - direct).abs() < 1e-14);
        let l1 = (0.75 + 0.875) / 2.0 / cfg.measured_time();
        assert!((s.lambda1().value - l1).abs() < 1e-14);
        // Jensen: Lambda(p) <= p lambda_1 on the sample itself
        assert!(s.moment(p).unwrap().value <= p * s.lambda1().value);
    }

    #[test]
    fn p_outside_range_is_rejected() {
        let s = synthetic(vec![vec![vec![0.0; 8]]], small_cfg());
        assert!(s.moment(0.6).is_err());
    }

    #[test]
    fn degenerate_weights_are_flagged() {
        let cfg = small_cfg();
        let s = synthetic(vec![vec![vec![0.0; 8], vec![-10.0; 8]]], cfg);
        let e = s.moment(0.5).unwrap();
        assert!(e.degenerate);
        assert!(e.max_weight.unwrap() > 0.99);
    }

    #[test]
    fn steady_shear_has_no_exponential_growth() {
        let u = SpectralField::single(4, WaveIndex::new(1, 0).unwrap(), 3.0).unwrap();
        let cfg = EnsembleConfig {
            n_paths: 2,
            tracers_per_path: 4,
            dt: 0.05,
            horizon: 200.0,
            ..Default::default()
        };
        let est = estimate_lambda1(&FlowSpec::Frozen(u), &cfg).unwrap();
        assert!(est.value.abs() < 0.05, "{}", est.value);
    }

    #[test]
    fn grid_checks() {
        let g = symmetric_grid(0.3, 0.05);
        assert_eq!(g.len(), 13);
        assert_eq!(g[6], 0.0);
        assert_eq!((g[0], g[12]), (-0.3, 0.3));
        assert!(g[6].is_sign_positive());
        assert!(check_grid(&g).is_ok());
        assert!(check_grid(&[0.1, 0.2]).is_err());
        assert!(check_grid(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn estimates_are_deterministic() {
        let model = crate::dynamics::FluidModel {
            kind: crate::dynamics::ModelKind::GalerkinNse,
            nu: 0.05,
            trunc: 3,
            noise: crate::dynamics::NoiseSpec::white(2.5, crate::dynamics::NoiseSpec::low_modes(2)),
        };
        let flow = FlowSpec::model(model);
        let cfg = EnsembleConfig {
            horizon: 2.0,
            dt: 0.01,
            n_paths: 3,
            ..Default::default()
        };
        let a = sample_stretches(&flow, &cfg).unwrap();
        let b = sample_stretches(&flow, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
