//! Experiment configuration: one TOML file, every key optional except the
//! experiment name. Unknown keys are errors, reported with line and column.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use torus_mix::dynamics::{FlowSpec, FluidModel, ModelKind, NoiseKind, NoiseSpec, DEFAULT_BLOWUP_BOUND};
use torus_mix::exponents::{symmetric_grid, EnsembleConfig};
use torus_mix::mixing::{CorrelationPair, MixingConfig, ScalarMode, ScalarSpec};
use torus_mix::spectral::{SpectralField, WaveIndex};
use torus_mix::tower::TowerSpec;

use crate::error::RunError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Simulate,
    Lyapunov,
    MomentCurve,
    Mixing,
    TwoPoint,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Lyapunov => "lyapunov",
            Experiment::MomentCurve => "moment-curve",
            Experiment::Mixing => "mixing",
            Experiment::TwoPoint => "two-point",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub model: ModelConfig,
    pub initial: Option<InitialConfig>,
    pub tracers: Option<Tracers>,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub mixing: MixingSection,
    #[serde(default)]
    pub two_point: TwoPointSection,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_seed() -> u64 {
    1
}
fn default_dt() -> f64 {
    1e-3
}
fn default_horizon() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    Stokes,
    GalerkinNse,
    OuTowerNse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelName,
    pub nu: f64,
    pub trunc: usize,
    /// OU-tower model only: include the Galerkin nonlinearity.
    pub nonlinear: bool,
    pub blowup_bound: f64,
    pub noise: NoiseConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelName::GalerkinNse,
            nu: 0.05,
            trunc: 8,
            nonlinear: true,
            blowup_bound: DEFAULT_BLOWUP_BOUND,
            noise: NoiseConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseName {
    White,
    OuTower,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub alpha: f64,
    /// Force every mode with `|k|_inf <= active_radius` (ignored when `active` is set).
    pub active_radius: usize,
    pub active: Option<Vec<[i32; 2]>>,
    pub kind: NoiseName,
    pub tower_depth: usize,
    pub damping: Option<Vec<f64>>,
    pub gamma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            alpha: 2.5,
            active_radius: 2,
            active: None,
            kind: NoiseName::White,
            tower_depth: 1,
            damping: None,
            gamma: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    /// Snapshot CSV `k1,k2,sheet,coeff`, relative to the config file.
    pub file: Option<PathBuf>,
    pub modes: Option<Vec<ScalarMode>>,
    /// Hold the initial field fixed instead of evolving the model.
    #[serde(default)]
    pub frozen: bool,
}

/// `tracers = 8` or `tracers = { grid = 256 }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Tracers {
    Count(usize),
    Grid { grid: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub paths: usize,
    pub burn_in: Option<f64>,
    pub batches: usize,
    pub p_max: f64,
    pub degeneracy_threshold: f64,
    /// Explicit grid; otherwise `-p_range..=p_range` in steps of `p_step`.
    pub p_grid: Option<Vec<f64>>,
    pub p_range: f64,
    pub p_step: f64,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            paths: 64,
            burn_in: None,
            batches: 8,
            p_max: 0.5,
            degeneracy_threshold: 0.01,
            p_grid: None,
            p_range: 0.3,
            p_step: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairConfig {
    pub label: String,
    pub f: ScalarSpec,
    pub g: ScalarSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixingSection {
    pub spin_up: f64,
    pub sample_interval: f64,
    pub k_max: usize,
    pub sobolev: Vec<f64>,
    pub fit_window: [f64; 2],
    pub pairs: Vec<PairConfig>,
    /// Scalar whose `H^{-s}` norms are tracked; `[]` disables spectra.
    pub scalar: ScalarSpec,
    pub keep_spectra: bool,
    pub annealed_seeds: Vec<u64>,
}

impl Default for MixingSection {
    fn default() -> Self {
        let e10 = ScalarSpec::mode(1, 0).expect("valid mode");
        Self {
            spin_up: 20.0,
            sample_interval: 0.25,
            k_max: 32,
            sobolev: vec![0.5, 1.0],
            fit_window: [2.0, 12.0],
            pairs: vec![PairConfig {
                label: "e10-e10".into(),
                f: e10.clone(),
                g: e10.clone(),
            }],
            scalar: e10,
            keep_spectra: false,
            annealed_seeds: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoPointSection {
    pub separation: f64,
    pub sample_interval: f64,
}

impl Default for TwoPointSection {
    fn default() -> Self {
        Self {
            separation: 1e-3,
            sample_interval: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub checkpoint_every: u64,
    /// Spacing of the energy and tracer rows written by `simulate`.
    pub sample_interval: f64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            checkpoint_every: 10_000,
            sample_interval: 0.1,
        }
    }
}

/// A parsed config together with the bytes it came from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub path: PathBuf,
    pub hash: String,
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn load(path: &Path) -> Result<LoadedConfig, RunError> {
    let bytes = fs::read(path).map_err(|e| RunError::Io(format!("reading {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| RunError::Config(format!("{}: config is not valid UTF-8", path.display())))?;
    let config: ExperimentConfig =
        toml::from_str(&text).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
    let loaded = LoadedConfig {
        config,
        path: path.to_path_buf(),
        hash: hash_bytes(&bytes),
    };
    loaded.config.validate()?;
    Ok(loaded)
}

fn bad(msg: impl Into<String>) -> RunError {
    RunError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(bad(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon > self.dt) || !self.horizon.is_finite() {
            return Err(bad(format!("horizon {} must exceed dt {}", self.horizon, self.dt)));
        }
        if self.output.checkpoint_every == 0 {
            return Err(bad("output.checkpoint_every must be positive"));
        }
        if !(self.output.sample_interval > 0.0) {
            return Err(bad("output.sample_interval must be positive"));
        }
        self.model()?.validate().map_err(|e| bad(format!("model: {e}")))?;
        match self.experiment {
            Experiment::Mixing => {
                self.grid()?;
                self.mixing_config()?.validate().map_err(|e| bad(format!("mixing: {e}")))?;
            }
            _ => {
                self.tracer_count()?;
            }
        }
        if matches!(self.experiment, Experiment::Lyapunov | Experiment::MomentCurve) {
            self.ensemble_config()?.validate().map_err(|e| bad(format!("ensemble: {e}")))?;
            self.p_grid()?;
        }
        if self.experiment == Experiment::TwoPoint && !(self.two_point.separation > 0.0) {
            return Err(bad("two_point.separation must be positive"));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<FluidModel, RunError> {
        let m = &self.model;
        let n = &m.noise;
        let active = match &n.active {
            Some(list) => list
                .iter()
                .map(|&k| WaveIndex::try_from(k).map_err(|e| bad(format!("model.noise.active: {e}"))))
                .collect::<Result<Vec<_>, _>>()?,
            None => NoiseSpec::low_modes(n.active_radius),
        };
        let kind = match n.kind {
            NoiseName::White => NoiseKind::White,
            NoiseName::OuTower => {
                let mut t = TowerSpec::chain(n.tower_depth);
                if let Some(d) = &n.damping {
                    t.damping = d.clone();
                }
                t.gamma = n.gamma;
                NoiseKind::OuTower(t)
            }
        };
        let kind_model = match m.kind {
            ModelName::Stokes => ModelKind::Stokes,
            ModelName::GalerkinNse => ModelKind::GalerkinNse,
            ModelName::OuTowerNse => ModelKind::OuTowerNse { nonlinear: m.nonlinear },
        };
        Ok(FluidModel {
            kind: kind_model,
            nu: m.nu,
            trunc: m.trunc,
            noise: NoiseSpec {
                alpha: n.alpha,
                active,
                kind,
            },
        })
    }

    /// Velocity description including the initial field. Relative snapshot
    /// paths are resolved against `base`.
    pub fn flow(&self, base: &Path) -> Result<FlowSpec, RunError> {
        let model = self.model()?;
        let initial = match &self.initial {
            None => None,
            Some(init) => Some(self.initial_field(init, base, model.trunc)?),
        };
        let frozen = self.initial.as_ref().is_some_and(|i| i.frozen);
        let flow = if frozen {
            FlowSpec::Frozen(initial.expect("frozen implies an initial field"))
        } else {
            FlowSpec::Model { model, initial }
        };
        flow.validate().map_err(|e| bad(format!("initial: {e}")))?;
        Ok(flow)
    }

    fn initial_field(&self, init: &InitialConfig, base: &Path, trunc: usize) -> Result<SpectralField, RunError> {
        match (&init.file, &init.modes) {
            (Some(_), Some(_)) => Err(bad("initial: give either `file` or `modes`, not both")),
            (None, None) => Err(bad("initial: needs `file` or `modes`")),
            (Some(file), None) => {
                let path = base.join(file);
                let f = fs::File::open(&path).map_err(|e| RunError::Io(format!("reading {}: {e}", path.display())))?;
                let u = SpectralField::read_csv(std::io::BufReader::new(f))
                    .map_err(|e| bad(format!("initial field {}: {e}", path.display())))?;
                if u.trunc() > trunc {
                    return Err(bad(format!("initial field has modes beyond truncation {trunc}")));
                }
                let mut out = SpectralField::zeros(trunc).map_err(|e| bad(e.to_string()))?;
                for (m, c) in u.modes() {
                    out.set(m, c).map_err(|e| bad(e.to_string()))?;
                }
                Ok(out)
            }
            (None, Some(modes)) => {
                let mut u = SpectralField::zeros(trunc).map_err(|e| bad(e.to_string()))?;
                for m in modes {
                    u.set(m.k, u.get(m.k) + m.coeff).map_err(|e| bad(format!("initial.modes: {e}")))?;
                }
                Ok(u)
            }
        }
    }

    pub fn tracer_count(&self) -> Result<usize, RunError> {
        match &self.tracers {
            None => Ok(match self.experiment {
                Experiment::Simulate => 0,
                _ => 1,
            }),
            Some(Tracers::Count(c)) => {
                if *c == 0 && self.experiment != Experiment::Simulate {
                    Err(bad("tracers must be at least 1 for this experiment"))
                } else {
                    Ok(*c)
                }
            }
            Some(Tracers::Grid { .. }) => Err(bad(format!(
                "experiment {} takes a tracer count, not a grid",
                self.experiment.name()
            ))),
        }
    }

    pub fn grid(&self) -> Result<usize, RunError> {
        match &self.tracers {
            None => Ok(256),
            Some(Tracers::Grid { grid }) => Ok(*grid),
            Some(Tracers::Count(_)) => Err(bad("mixing takes `tracers = { grid = n }`")),
        }
    }

    pub fn ensemble_config(&self) -> Result<EnsembleConfig, RunError> {
        let e = &self.ensemble;
        Ok(EnsembleConfig {
            n_paths: e.paths,
            tracers_per_path: self.tracer_count()?,
            dt: self.dt,
            horizon: self.horizon,
            burn_in: e.burn_in,
            n_batches: e.batches,
            seed: self.seed,
            blowup_bound: self.model.blowup_bound,
            p_max: e.p_max,
            degeneracy_threshold: e.degeneracy_threshold,
        })
    }

    pub fn p_grid(&self) -> Result<Vec<f64>, RunError> {
        let e = &self.ensemble;
        let grid = match &e.p_grid {
            Some(g) => g.clone(),
            None => {
                if !(e.p_step > 0.0) || !(e.p_range >= 0.0) {
                    return Err(bad("ensemble.p_step must be positive and p_range >= 0"));
                }
                symmetric_grid(e.p_range, e.p_step)
            }
        };
        if grid.windows(2).any(|w| !(w[0] < w[1])) || !grid.contains(&0.0) {
            return Err(bad("ensemble.p_grid must be strictly increasing and contain 0"));
        }
        if grid.iter().any(|p| p.abs() > e.p_max) {
            return Err(bad(format!("ensemble.p_grid exceeds p_max = {}", e.p_max)));
        }
        Ok(grid)
    }

    pub fn mixing_config(&self) -> Result<MixingConfig, RunError> {
        let m = &self.mixing;
        Ok(MixingConfig {
            grid: self.grid()?,
            dt: self.dt,
            horizon: self.horizon,
            spin_up: m.spin_up,
            sample_interval: m.sample_interval,
            k_max: m.k_max,
            sobolev: m.sobolev.clone(),
            seed: self.seed,
            blowup_bound: self.model.blowup_bound,
            keep_spectra: m.keep_spectra,
            history_stride: None,
        })
    }

    pub fn pairs(&self) -> Vec<CorrelationPair> {
        self.mixing
            .pairs
            .iter()
            .map(|p| CorrelationPair {
                label: p.label.clone(),
                f: p.f.clone(),
                g: p.g.clone(),
            })
            .collect()
    }
}
