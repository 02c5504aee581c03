//! Passive-scalar mixing diagnostics from a grid of Lagrangian particles.
//!
//! Scalars are expanded in the real orthonormal basis `e^_k = c2 sin(k.x)` for
//! `k` in the upper half-lattice and `e^_k = c2 cos(k.x)` for its mirror. A
//! uniform `n x n` particle grid turns every integral against the advected
//! scalar into a change of variables,
//!
//! ```text
//! int f(x) g(phi^t x) dx       ~ h^2 sum_j f(x_j) g(phi^t x_j)
//! int e^_k(x) g_t(x) dx        ~ h^2 sum_j e^_k(phi^t x_j) g(x_j)
//! ```
//!
//! which is exact at `t = 0` for trigonometric integrands below the grid's
//! Nyquist limit. The quadrature floor is estimated by repeating each sum on
//! the every-other-point subgrid.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{FlowSpec, VelocitySource, DEFAULT_BLOWUP_BOUND};
use crate::error::{Error, Result};
use crate::lagrangian::{flow_step_with, wrap_point};
use crate::spectral::{index_of, mode_count, phase_table, positive_count, wave_at, FieldEvaluator, Point, SpectralField, WaveIndex, C2};

/// Points whose magnitude is below this multiple of the floor are not fitted.
pub const FLOOR_MARGIN: f64 = 10.0;

/// Basis function `e^_k` of the scalar expansion.
pub fn scalar_basis(k: WaveIndex, x: Point) -> f64 {
    let [k1, k2] = k.k();
    let phase = k1 as f64 * x[0] + k2 as f64 * x[1];
    if k.is_positive() {
        C2 * phase.sin()
    } else {
        C2 * phase.cos()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarMode {
    pub k: WaveIndex,
    pub coeff: f64,
}

/// Mean-zero trigonometric scalar with finite support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScalarSpec {
    pub modes: Vec<ScalarMode>,
}

impl ScalarSpec {
    pub fn mode(k1: i32, k2: i32) -> Result<Self> {
        Ok(Self {
            modes: vec![ScalarMode {
                k: WaveIndex::new(k1, k2)?,
                coeff: 1.0,
            }],
        })
    }

    pub fn eval(&self, x: Point) -> f64 {
        self.modes.iter().map(|m| m.coeff * scalar_basis(m.k, x)).sum()
    }

    /// Largest `|k|_inf` in the support.
    pub fn bandwidth(&self) -> usize {
        self.modes.iter().map(|m| m.k.sup_norm()).max().unwrap_or(0)
    }

    pub fn l2_norm(&self) -> f64 {
        let mut dense = vec![0.0; mode_count(self.bandwidth().max(1))];
        for m in &self.modes {
            if let Some(i) = index_of(m.k, self.bandwidth().max(1)) {
                dense[i] += m.coeff;
            }
        }
        dense.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// `(sum |k|^{2s} g_k^2)^{1/2}`.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        self.modes
            .iter()
            .map(|m| m.k.norm_sq().powf(s) * m.coeff * m.coeff)
            .sum::<f64>()
            .sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::InvalidParameter("scalar needs at least one mode".into()));
        }
        Ok(())
    }
}

fn nyquist(grid: usize, bandwidth: usize) -> Result<()> {
    // the subgrid used for the floor estimate must resolve the bandwidth too
    if 2 * bandwidth >= grid {
        Err(Error::Nyquist { grid, bandwidth })
    } else {
        Ok(())
    }
}

/// Particles started on the uniform grid `x_ij = -pi + (i + 1/2, j + 1/2) h`.
#[derive(Clone, Debug)]
pub struct ParticleGrid {
    n: usize,
    initial: Vec<Point>,
    current: Vec<Point>,
    t: f64,
}

impl ParticleGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 4 || n % 2 != 0 {
            return Err(Error::InvalidParameter(format!("particle grid size {n} must be even and >= 4")));
        }
        let h = 2.0 * PI / n as f64;
        let initial: Vec<Point> = (0..n * n)
            .map(|idx| {
                let (i, j) = (idx / n, idx % n);
                [-PI + (i as f64 + 0.5) * h, -PI + (j as f64 + 0.5) * h]
            })
            .collect();
        Ok(Self {
            n,
            current: initial.clone(),
            initial,
            t: 0.0,
        })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn initial(&self) -> &[Point] {
        &self.initial
    }

    pub fn current(&self) -> &[Point] {
        &self.current
    }

    fn on_subgrid(&self, idx: usize) -> bool {
        (idx / self.n) % 2 == 0 && (idx % self.n) % 2 == 0
    }

    fn weight(&self) -> f64 {
        let h = 2.0 * PI / self.n as f64;
        h * h
    }

    /// Advance every particle by one frozen-field RK4 step.
    pub fn advance(&mut self, ev: &FieldEvaluator, dt: f64) {
        self.current
            .par_chunks_mut(1024)
            .for_each(|chunk| {
                for x in chunk {
                    *x = flow_step_with(ev, *x, dt);
                }
            });
        self.t += dt;
    }

    /// Grid sum of `a(initial_j) b(current_j)` and its subgrid counterpart.
    fn pair_sum(&self, a: impl Fn(Point) -> f64 + Sync, b: impl Fn(Point) -> f64 + Sync) -> (f64, f64) {
        let partial: Vec<(f64, f64)> = self
            .initial
            .par_chunks(1024)
            .zip(self.current.par_chunks(1024))
            .enumerate()
            .map(|(c, (x0, x))| {
                let mut full = 0.0;
                let mut sub = 0.0;
                for (i, (p0, p)) in x0.iter().zip(x).enumerate() {
                    let v = a(*p0) * b(*p);
                    full += v;
                    if self.on_subgrid(c * 1024 + i) {
                        sub += v;
                    }
                }
                (full, sub)
            })
            .collect();
        let (full, sub) = partial.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
        let w = self.weight();
        (full * w, sub * 4.0 * w)
    }

    /// `int f(x) g(phi^t x) dx` and the floor estimate `|full - subgrid|`.
    pub fn correlation(&self, f: &ScalarSpec, g: &ScalarSpec) -> Result<(f64, f64)> {
        nyquist(self.n, f.bandwidth() + g.bandwidth())?;
        let (full, sub) = self.pair_sum(|x| f.eval(x), |x| g.eval(x));
        Ok((full, (full - sub).abs()))
    }
}

/// Coefficients of an advected scalar over `|k|_inf <= k_max` in the
/// canonical mode order (sheet 1 = sine on the upper half-lattice).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarSpectrum {
    pub k_max: usize,
    pub t: f64,
    pub coeffs: Vec<f64>,
}

/// Truncated `H^{-s}` norm and whether the outer shell carries more than 1%.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegSobolev {
    pub value: f64,
    pub truncated: bool,
}

impl ScalarSpectrum {
    pub fn get(&self, k: WaveIndex) -> Option<f64> {
        index_of(k, self.k_max).map(|i| self.coeffs[i])
    }

    pub fn l2_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    pub fn write_csv<W: Write>(&self, mut out: W, header: bool) -> std::io::Result<()> {
        if header {
            writeln!(out, "k1,k2,sheet,coeff,t")?;
        }
        for (i, c) in self.coeffs.iter().enumerate() {
            let m = wave_at(i, self.k_max);
            let [k1, k2] = m.k();
            writeln!(out, "{},{},{},{},{}", k1, k2, m.sheet(), c, self.t)?;
        }
        Ok(())
    }
}

/// `(sum_{0<|k|_inf<=K} |k|^{-2s} g_k^2)^{1/2}`; `s = 0` gives the l2 norm.
pub fn neg_sobolev_norm(spectrum: &ScalarSpectrum, s: f64) -> Result<NegSobolev> {
    if !(s >= 0.0) || !s.is_finite() {
        return Err(Error::InvalidParameter(format!("Sobolev index {s} must be finite and >= 0")));
    }
    let mut total = 0.0;
    let mut shell = 0.0;
    for (i, c) in spectrum.coeffs.iter().enumerate() {
        let m = wave_at(i, spectrum.k_max);
        let term = m.norm_sq().powf(-s) * c * c;
        total += term;
        if m.sup_norm() == spectrum.k_max {
            shell += term;
        }
    }
    Ok(NegSobolev {
        value: total.sqrt(),
        truncated: total > 0.0 && shell > 0.01 * total,
    })
}

/// Full-grid and subgrid spectra of the scalar `g` pushed forward by the
/// particle flow.
pub fn scalar_spectrum_pair(g: &ScalarSpec, particles: &ParticleGrid, k_max: usize) -> Result<(ScalarSpectrum, ScalarSpectrum)> {
    if k_max == 0 {
        return Err(Error::BadTruncation(0));
    }
    nyquist(particles.n, k_max + g.bandwidth())?;
    let count = positive_count(k_max);
    let chunk = 2048;
    let partial: Vec<(Vec<f64>, Vec<f64>)> = particles
        .initial
        .par_chunks(chunk)
        .zip(particles.current.par_chunks(chunk))
        .enumerate()
        .map(|(c, (y0, x))| {
            let mut full = vec![0.0; 2 * count];
            let mut sub = vec![0.0; 2 * count];
            for (i, (p0, p)) in y0.iter().zip(x).enumerate() {
                let w = g.eval(*p0);
                if w == 0.0 {
                    continue;
                }
                let on_sub = particles.on_subgrid(c * chunk + i);
                let t1 = phase_table(p[0], k_max);
                let t2 = phase_table(p[1], k_max);
                for j in 0..count {
                    let k = wave_at(2 * j, k_max).k();
                    let (c1, s1) = t1[k[0].unsigned_abs() as usize];
                    let s1 = if k[0] < 0 { -s1 } else { s1 };
                    let (c2, s2) = t2[k[1] as usize];
                    let cos = c1 * c2 - s1 * s2;
                    let sin = s1 * c2 + c1 * s2;
                    full[2 * j] += w * sin;
                    full[2 * j + 1] += w * cos;
                    if on_sub {
                        sub[2 * j] += w * sin;
                        sub[2 * j + 1] += w * cos;
                    }
                }
            }
            (full, sub)
        })
        .collect();
    let mut full = vec![0.0; 2 * count];
    let mut sub = vec![0.0; 2 * count];
    for (f, s) in &partial {
        for i in 0..full.len() {
            full[i] += f[i];
            sub[i] += s[i];
        }
    }
    let w = particles.weight() * C2;
    let make = |v: Vec<f64>, scale: f64| ScalarSpectrum {
        k_max,
        t: particles.t,
        coeffs: v.into_iter().map(|c| c * scale).collect(),
    };
    Ok((make(full, w), make(sub, 4.0 * w)))
}

pub fn scalar_spectrum(g: &ScalarSpec, particles: &ParticleGrid, k_max: usize) -> Result<ScalarSpectrum> {
    Ok(scalar_spectrum_pair(g, particles, k_max)?.0)
}

/// Descriptor attached to every series.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub observable: String,
    pub seed: u64,
    pub model: String,
}

/// Timestamped observable with optional per-point floor estimates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecaySeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub floors: Option<Vec<f64>>,
    pub meta: SeriesMeta,
}

impl DecaySeries {
    pub fn new(meta: SeriesMeta) -> Self {
        Self {
            meta,
            ..Default::default()
        }
    }

    pub fn from_values(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let s = Self {
            times,
            values,
            ..Default::default()
        };
        s.validate()?;
        Ok(s)
    }

    pub fn push(&mut self, t: f64, value: f64, floor: Option<f64>) {
        self.times.push(t);
        self.values.push(value);
        if let Some(f) = floor {
            // floors are kept monotone in time
            let floors = self.floors.get_or_insert_with(Vec::new);
            let prev = floors.last().copied().unwrap_or(0.0);
            floors.push(f.max(prev));
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.values.len() {
            return Err(Error::InvalidParameter("series times and values differ in length".into()));
        }
        if self.times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParameter("series times must be increasing".into()));
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,value")?;
        for (t, v) in self.times.iter().zip(&self.values) {
            writeln!(out, "{t},{v}")?;
        }
        Ok(())
    }
}

/// Least-squares fit `log|v| = log D - gamma t` over a window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub gamma_hat: f64,
    #[serde(rename = "D_hat")]
    pub d_hat: f64,
    pub r_squared: f64,
    pub window: [f64; 2],
    /// Largest floor estimate inside the window, zero when none was recorded.
    pub floor: f64,
    pub n_points: usize,
    pub dropped_zeros: usize,
    pub dropped_below_floor: usize,
}

pub fn fit_decay_rate(series: &DecaySeries, window: [f64; 2]) -> Result<DecayFit> {
    series.validate()?;
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    let mut zeros = 0;
    let mut below = 0;
    let mut floor: f64 = 0.0;
    for (i, (&t, &v)) in series.times.iter().zip(&series.values).enumerate() {
        if t < window[0] || t > window[1] {
            continue;
        }
        let fl = series.floors.as_ref().map_or(0.0, |f| f[i]);
        floor = floor.max(fl);
        if v == 0.0 {
            zeros += 1;
            continue;
        }
        if v.abs() < FLOOR_MARGIN * fl {
            below += 1;
            continue;
        }
        ts.push(t);
        ys.push(v.abs().ln());
    }
    if zeros > 0 {
        log::warn!("{}: dropped {zeros} zero values from the fit", series.meta.observable);
    }
    if ts.len() < 5 {
        return Err(Error::TooFewPoints(ts.len()));
    }
    // shifting by the first value makes a constant series give slope 0 exactly
    let y0 = ys[0];
    let n = ts.len() as f64;
    let tbar = ts.iter().sum::<f64>() / n;
    let ybar = ys.iter().map(|y| y - y0).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (t, y) in ts.iter().zip(&ys) {
        let dx = t - tbar;
        let dy = (y - y0) - ybar;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = y0 + ybar - slope * tbar;
    let ss_res: f64 = ts
        .iter()
        .zip(&ys)
        .map(|(t, y)| {
            let r = y - (intercept + slope * t);
            r * r
        })
        .sum();
    let r_squared = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    Ok(DecayFit {
        gamma_hat: -slope,
        d_hat: intercept.exp(),
        r_squared,
        window,
        floor,
        n_points: ts.len(),
        dropped_zeros: zeros,
        dropped_below_floor: below,
    })
}

/// Velocity fields recorded during a run, one every `stride` steps.
#[derive(Clone, Debug)]
pub struct VelocityHistory {
    pub dt: f64,
    pub stride: usize,
    pub snapshots: Vec<SpectralField>,
}

impl VelocityHistory {
    /// Follow the characteristic through `x` at time `steps * dt` back to time 0
    /// with RK4 steps of the reversed frozen fields, giving `(phi^t)^{-1}(x)`.
    pub fn backtrack(&self, x: Point, steps: usize) -> Point {
        let evs: Vec<FieldEvaluator> = self.snapshots.iter().map(|u| u.evaluator()).collect();
        self.backtrack_with(&evs, x, steps)
    }

    fn backtrack_with(&self, evs: &[FieldEvaluator], x: Point, steps: usize) -> Point {
        let mut x = x;
        for s in (0..steps).rev() {
            let ev = &evs[(s / self.stride).min(evs.len() - 1)];
            x = flow_step_with(ev, x, -self.dt);
        }
        x
    }

    /// `g((phi^t)^{-1} x)` on the uniform `n x n` grid, row-major in `x1`.
    pub fn pullback_on_grid(&self, g: &ScalarSpec, n: usize, steps: usize) -> Vec<f64> {
        let evs: Vec<FieldEvaluator> = self.snapshots.iter().map(|u| u.evaluator()).collect();
        let grid = ParticleGrid::new(n).expect("valid grid");
        grid.initial
            .par_iter()
            .map(|&x| g.eval(self.backtrack_with(&evs, x, steps)))
            .collect()
    }
}

/// Settings of one quenched mixing run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixingConfig {
    pub grid: usize,
    pub dt: f64,
    /// Time measured from the release of the particles.
    pub horizon: f64,
    /// Velocity evolution before the particles are released.
    pub spin_up: f64,
    pub sample_interval: f64,
    pub k_max: usize,
    pub sobolev: Vec<f64>,
    pub seed: u64,
    pub blowup_bound: f64,
    pub keep_spectra: bool,
    /// Record every `stride`-th velocity field for backtracking.
    pub history_stride: Option<usize>,
}

impl Default for MixingConfig {
    fn default() -> Self {
        Self {
            grid: 256,
            dt: 1e-3,
            horizon: 12.0,
            spin_up: 20.0,
            sample_interval: 0.25,
            k_max: 32,
            sobolev: vec![0.5, 1.0],
            seed: 1,
            blowup_bound: DEFAULT_BLOWUP_BOUND,
            keep_spectra: false,
            history_stride: None,
        }
    }
}

impl MixingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.dt > 0.0) || !(self.horizon > self.dt) || !self.horizon.is_finite() {
            return bad("need 0 < dt < horizon".into());
        }
        if !(self.spin_up >= 0.0) {
            return bad("spin-up must be >= 0".into());
        }
        if !(self.sample_interval >= self.dt) {
            return bad("sample interval must be at least dt".into());
        }
        if self.sobolev.iter().any(|&s| !(s >= 0.0)) {
            return bad("Sobolev indices must be >= 0".into());
        }
        if self.history_stride == Some(0) {
            return bad("history stride must be positive".into());
        }
        ParticleGrid::new(self.grid)?;
        Ok(())
    }

    fn sample_every(&self) -> usize {
        ((self.sample_interval / self.dt).round() as usize).max(1)
    }

    fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// A correlation observable `int f (g o phi^t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationPair {
    pub label: String,
    pub f: ScalarSpec,
    pub g: ScalarSpec,
}

/// Everything a quenched run measures.
#[derive(Clone, Debug)]
pub struct QuenchedOutput {
    pub correlations: Vec<DecaySeries>,
    /// One series per Sobolev index, for the advected scalar.
    pub neg_sobolev: Vec<DecaySeries>,
    /// Set when any `H^{-s}` value was flagged as truncation-limited.
    pub truncated: bool,
    pub spectra: Vec<ScalarSpectrum>,
    pub history: Option<VelocityHistory>,
}

/// One velocity realisation (seed `cfg.seed`, path 0) shared by all particles.
pub fn quenched_run(
    flow: &FlowSpec,
    cfg: &MixingConfig,
    pairs: &[CorrelationPair],
    scalar: Option<&ScalarSpec>,
    model_tag: &str,
) -> Result<QuenchedOutput> {
    flow.validate()?;
    cfg.validate()?;
    for p in pairs {
        p.f.validate()?;
        p.g.validate()?;
        nyquist(cfg.grid, p.f.bandwidth() + p.g.bandwidth())?;
    }
    if let Some(g) = scalar {
        g.validate()?;
        nyquist(cfg.grid, cfg.k_max + g.bandwidth())?;
    }
    let mut source = flow.source(cfg.dt, cfg.seed, 0, cfg.blowup_bound)?;
    let spin_steps = (cfg.spin_up / cfg.dt).round() as usize;
    for _ in 0..spin_steps {
        source.advance()?;
    }
    let mut particles = ParticleGrid::new(cfg.grid)?;
    let meta = |observable: String| SeriesMeta {
        observable,
        seed: cfg.seed,
        model: model_tag.to_string(),
    };
    let mut out = QuenchedOutput {
        correlations: pairs.iter().map(|p| DecaySeries::new(meta(format!("correlation:{}", p.label)))).collect(),
        neg_sobolev: cfg.sobolev.iter().map(|s| DecaySeries::new(meta(format!("H^-{s}")))).collect(),
        truncated: false,
        spectra: Vec::new(),
        history: cfg.history_stride.map(|stride| VelocityHistory {
            dt: cfg.dt,
            stride,
            snapshots: Vec::new(),
        }),
    };
    let every = cfg.sample_every();
    for step in 0..=cfg.steps() {
        if step % every == 0 {
            measure(&particles, cfg, pairs, scalar, &mut out)?;
        }
        if step == cfg.steps() {
            break;
        }
        if let Some(h) = out.history.as_mut() {
            if step % h.stride == 0 {
                h.snapshots.push(source.current().clone());
            }
        }
        let ev = source.current().evaluator();
        particles.advance(&ev, cfg.dt);
        source.advance()?;
    }
    Ok(out)
}

fn measure(
    particles: &ParticleGrid,
    cfg: &MixingConfig,
    pairs: &[CorrelationPair],
    scalar: Option<&ScalarSpec>,
    out: &mut QuenchedOutput,
) -> Result<()> {
    let t = particles.time();
    for (p, series) in pairs.iter().zip(out.correlations.iter_mut()) {
        let (c, floor) = particles.correlation(&p.f, &p.g)?;
        series.push(t, c, Some(floor));
    }
    if let Some(g) = scalar {
        let (full, sub) = scalar_spectrum_pair(g, particles, cfg.k_max)?;
        for (&s, series) in cfg.sobolev.iter().zip(out.neg_sobolev.iter_mut()) {
            let a = neg_sobolev_norm(&full, s)?;
            let b = neg_sobolev_norm(&sub, s)?;
            out.truncated |= a.truncated;
            series.push(t, a.value, Some((a.value - b.value).abs()));
        }
        if cfg.keep_spectra {
            out.spectra.push(full);
        }
    }
    Ok(())
}

/// Mean over seeds of the squared correlation, sampled as in [`quenched_run`].
pub fn annealed_correlation(flow: &FlowSpec, cfg: &MixingConfig, pair: &CorrelationPair, seeds: &[u64]) -> Result<DecaySeries> {
    if seeds.is_empty() {
        return Err(Error::InvalidParameter("annealed average needs at least one seed".into()));
    }
    let mut acc: Option<DecaySeries> = None;
    for &seed in seeds {
        let c = MixingConfig {
            seed,
            history_stride: None,
            keep_spectra: false,
            ..cfg.clone()
        };
        let run = quenched_run(flow, &c, std::slice::from_ref(pair), None, "")?;
        let series = &run.correlations[0];
        let acc = acc.get_or_insert_with(|| DecaySeries {
            times: series.times.clone(),
            values: vec![0.0; series.len()],
            floors: None,
            meta: SeriesMeta {
                observable: format!("annealed:{}", pair.label),
                seed: seeds[0],
                model: String::new(),
            },
        });
        for (a, v) in acc.values.iter_mut().zip(&series.values) {
            *a += v * v / seeds.len() as f64;
        }
    }
    Ok(acc.expect("at least one seed"))
}

/// Release particles into the frozen or live flow and return positions after
/// `steps` steps; used by tests and the two-point experiment.
pub fn advect_points(source: &mut dyn VelocitySource, points: &mut [Point], steps: usize) -> Result<()> {
    for _ in 0..steps {
        let ev = source.current().evaluator();
        for x in points.iter_mut() {
            *x = flow_step_with(&ev, *x, source.dt());
        }
        source.advance()?;
    }
    for x in points.iter_mut() {
        *x = wrap_point(*x);
    }
    Ok(())
}
