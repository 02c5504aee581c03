//! Forcing models and time integrators for the Stokes, Galerkin
//! Navier-Stokes and OU-tower systems.
//!
//! Linear viscous decay and additive noise are always integrated exactly
//! (per-mode OU transitions). The Galerkin system uses a Strang splitting:
//! half a step of exact OU, a full Heun (RK2) step of `dc/dt = -B(c, c)`, and
//! another half step of exact OU.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonlinear::GalerkinKernel;
use crate::rng::{PathRng, RngState};
use crate::spectral::{index_of, mode_count, wave_at, SpectralField, WaveIndex};
use crate::tower::{OuTowerState, TowerPropagator, TowerSpec};

/// Default bound on `|u|_L2` before a run is declared blown up.
pub const DEFAULT_BLOWUP_BOUND: f64 = 1e3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    OuTower(TowerSpec),
}

/// Forcing `Q`: `q_m = |k|^{-alpha}` on the active set, zero elsewhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub alpha: f64,
    pub active: Vec<WaveIndex>,
    pub kind: NoiseKind,
}

impl NoiseSpec {
    pub fn white(alpha: f64, active: Vec<WaveIndex>) -> Self {
        Self {
            alpha,
            active,
            kind: NoiseKind::White,
        }
    }

    /// Every mode with `|k|_inf <= radius`, in canonical order.
    pub fn low_modes(radius: usize) -> Vec<WaveIndex> {
        if radius == 0 {
            return Vec::new();
        }
        (0..mode_count(radius)).map(|i| wave_at(i, radius)).collect()
    }

    pub fn amplitude(&self, m: WaveIndex) -> f64 {
        if self.active.contains(&m) {
            m.norm().powf(-self.alpha)
        } else {
            0.0
        }
    }

    /// `sum_m q_m^2`, the energy injection rate.
    pub fn forcing_power(&self) -> f64 {
        self.active.iter().map(|m| m.norm().powf(-2.0 * self.alpha)).sum()
    }

    /// Every mode with `|k|_inf <= 2` is forced.
    pub fn covers_low_modes(&self) -> bool {
        Self::low_modes(2).iter().all(|m| self.active.contains(m))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Stokes,
    GalerkinNse,
    /// OU-tower forced system; `nonlinear` selects `X = B` (true) or `X = 0`.
    OuTowerNse { nonlinear: bool },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluidModel {
    pub kind: ModelKind,
    pub nu: f64,
    pub trunc: usize,
    pub noise: NoiseSpec,
}

impl FluidModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(Error::InvalidModel(format!("viscosity must be positive, got {}", self.nu)));
        }
        if self.trunc == 0 || self.trunc > crate::spectral::MAX_TRUNC {
            return Err(Error::BadTruncation(self.trunc));
        }
        if !(self.noise.alpha > 0.0) || !self.noise.alpha.is_finite() {
            return Err(Error::InvalidModel(format!(
                "noise decay exponent must be positive, got {}",
                self.noise.alpha
            )));
        }
        for (i, m) in self.noise.active.iter().enumerate() {
            if m.sup_norm() > self.trunc {
                let [a, b] = m.k();
                return Err(Error::OutsideTruncation(a, b, self.trunc));
            }
            if self.noise.active[..i].contains(m) {
                let [a, b] = m.k();
                return Err(Error::InvalidModel(format!("mode ({a}, {b}) listed twice in active set")));
            }
        }
        match (&self.kind, &self.noise.kind) {
            (ModelKind::Stokes, NoiseKind::White) => Ok(()),
            (ModelKind::GalerkinNse, NoiseKind::White) => {
                if self.trunc < 3 {
                    Err(Error::InvalidModel(format!(
                        "Galerkin Navier-Stokes needs N >= 3, got {}",
                        self.trunc
                    )))
                } else {
                    Ok(())
                }
            }
            (ModelKind::OuTowerNse { .. }, NoiseKind::OuTower(t)) => t.validate(),
            (kind, noise) => Err(Error::InvalidModel(format!(
                "model {kind:?} is incompatible with noise {noise:?}"
            ))),
        }
    }

    pub fn tower_spec(&self) -> Result<&TowerSpec> {
        match &self.noise.kind {
            NoiseKind::OuTower(t) => Ok(t),
            NoiseKind::White => Err(Error::InvalidModel("model has no OU tower".into())),
        }
    }

    /// Stationary variance `q_m^2 / (2 nu |k|^2)` of a Stokes mode.
    pub fn stokes_variance(&self, m: WaveIndex) -> f64 {
        let q = self.noise.amplitude(m);
        q * q / (2.0 * self.nu * m.norm_sq())
    }
}

/// Independent Gaussians `q_m N(0, dt)` on the active modes.
pub fn sample_white_increment<R: Rng + ?Sized>(
    noise: &NoiseSpec,
    trunc: usize,
    dt: f64,
    rng: &mut R,
) -> Result<SpectralField> {
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter(format!("time step must be >= 0, got {dt}")));
    }
    let mut inc = SpectralField::zeros(trunc)?;
    let sd = dt.sqrt();
    for &m in &noise.active {
        let [a, b] = m.k();
        let i = index_of(m, trunc).ok_or(Error::OutsideTruncation(a, b, trunc))?;
        let z: f64 = rng.sample(StandardNormal);
        inc.coeffs_mut()[i] = noise.amplitude(m) * sd * z;
    }
    Ok(inc)
}

/// Exact OU transition `c <- e^{-nu |k|^2 h} c + xi` for every mode.
#[derive(Clone, Debug)]
pub struct OuPropagator {
    h: f64,
    decay: Vec<f64>,
    active: Vec<usize>,
    std: Vec<f64>,
}

impl OuPropagator {
    pub fn new(model: &FluidModel, h: f64) -> Result<Self> {
        let n = model.trunc;
        let decay = (0..mode_count(n))
            .map(|i| (-model.nu * wave_at(i, n).norm_sq() * h).exp())
            .collect();
        let mut active = Vec::with_capacity(model.noise.active.len());
        let mut std = Vec::with_capacity(model.noise.active.len());
        for &m in &model.noise.active {
            let [a, b] = m.k();
            active.push(index_of(m, n).ok_or(Error::OutsideTruncation(a, b, n))?);
            let q = model.noise.amplitude(m);
            let rate = model.nu * m.norm_sq();
            std.push((q * q * -(-2.0 * rate * h).exp_m1() / (2.0 * rate)).sqrt());
        }
        Ok(Self { h, decay, active, std })
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    /// Coefficient slots of the forced modes, in active-set order.
    pub fn active_slots(&self) -> &[usize] {
        &self.active
    }

    pub fn innovation_std(&self) -> &[f64] {
        &self.std
    }

    pub fn decay(&self) -> &[f64] {
        &self.decay
    }

    /// Draw the additive innovations for one transition.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.std.iter().map(|s| {
            let z: f64 = rng.sample(StandardNormal);
            s * z
        }));
    }

    pub fn apply(&self, coeffs: &mut [f64], innovations: &[f64]) {
        for (c, d) in coeffs.iter_mut().zip(&self.decay) {
            *c *= d;
        }
        for (&i, xi) in self.active.iter().zip(innovations) {
            coeffs[i] += xi;
        }
    }
}

/// Velocity plus the auxiliary chain when the model has one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityState {
    pub field: SpectralField,
    pub tower: Option<OuTowerState>,
}

impl VelocityState {
    pub fn new(model: &FluidModel, field: SpectralField) -> Result<Self> {
        if field.trunc() != model.trunc {
            return Err(Error::InvalidParameter(format!(
                "initial field truncation {} differs from model truncation {}",
                field.trunc(),
                model.trunc
            )));
        }
        let tower = match model.kind {
            ModelKind::OuTowerNse { .. } => Some(OuTowerState::for_model(model)?),
            _ => None,
        };
        Ok(Self { field, tower })
    }

    pub fn zeros(model: &FluidModel) -> Result<Self> {
        Self::new(model, SpectralField::zeros(model.trunc)?)
    }
}

#[derive(Clone, Debug)]
enum Scheme {
    Stokes {
        full: OuPropagator,
    },
    Galerkin {
        half: OuPropagator,
        kernel: GalerkinKernel,
    },
    LinearTower {
        full: TowerPropagator,
    },
    NonlinearTower {
        half: TowerPropagator,
        kernel: GalerkinKernel,
    },
}

/// One-step map for a fixed model and time step.
#[derive(Clone, Debug)]
pub struct Integrator {
    model: FluidModel,
    dt: f64,
    scheme: Scheme,
    blowup_bound: f64,
    work: Workspace,
}

#[derive(Clone, Debug)]
struct Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    stage: Vec<f64>,
    amps: Vec<(f64, f64)>,
    xi: Vec<f64>,
}

impl Workspace {
    /// Heun step of `dc/dt = -B(c, c)` over `dt`.
    fn nonlinear_substep(&mut self, kernel: &GalerkinKernel, dt: f64, c: &mut [f64]) {
        kernel.apply_into(c, &mut self.k1, &mut self.amps);
        for ((s, &ci), &k) in self.stage.iter_mut().zip(c.iter()).zip(&self.k1) {
            *s = ci - dt * k;
        }
        kernel.apply_into(&self.stage, &mut self.k2, &mut self.amps);
        for ((ci, &a), &b) in c.iter_mut().zip(&self.k1).zip(&self.k2) {
            *ci -= 0.5 * dt * (a + b);
        }
    }
}

impl Integrator {
    pub fn new(model: &FluidModel, dt: f64) -> Result<Self> {
        model.validate()?;
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
        }
        let scheme = match model.kind {
            ModelKind::Stokes => Scheme::Stokes {
                full: OuPropagator::new(model, dt)?,
            },
            ModelKind::GalerkinNse => Scheme::Galerkin {
                half: OuPropagator::new(model, 0.5 * dt)?,
                kernel: GalerkinKernel::new(model.trunc),
            },
            ModelKind::OuTowerNse { nonlinear: false } => Scheme::LinearTower {
                full: TowerPropagator::new(model, dt)?,
            },
            ModelKind::OuTowerNse { nonlinear: true } => Scheme::NonlinearTower {
                half: TowerPropagator::new(model, 0.5 * dt)?,
                kernel: GalerkinKernel::new(model.trunc),
            },
        };
        let len = mode_count(model.trunc);
        Ok(Self {
            model: model.clone(),
            dt,
            scheme,
            blowup_bound: DEFAULT_BLOWUP_BOUND,
            work: Workspace {
                k1: vec![0.0; len],
                k2: vec![0.0; len],
                stage: vec![0.0; len],
                amps: Vec::new(),
                xi: Vec::new(),
            },
        })
    }

    pub fn with_blowup_bound(mut self, bound: f64) -> Self {
        self.blowup_bound = bound;
        self
    }

    pub fn model(&self) -> &FluidModel {
        &self.model
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn blowup_bound(&self) -> f64 {
        self.blowup_bound
    }

    /// Galerkin Strang step with caller-supplied OU innovations for the two
    /// half steps. Used to couple runs at different step sizes.
    pub fn galerkin_step_with(&mut self, u: &mut SpectralField, first: &[f64], second: &[f64]) -> Result<()> {
        match &self.scheme {
            Scheme::Galerkin { half, kernel } => {
                half.apply(u.coeffs_mut(), first);
                self.work.nonlinear_substep(kernel, self.dt, u.coeffs_mut());
                half.apply(u.coeffs_mut(), second);
                Ok(())
            }
            _ => Err(Error::InvalidModel("galerkin_step_with needs a Galerkin model".into())),
        }
    }

    /// Propagator for one Galerkin half step, if the scheme has one.
    pub fn half_propagator(&self) -> Option<&OuPropagator> {
        match &self.scheme {
            Scheme::Galerkin { half, .. } => Some(half),
            _ => None,
        }
    }

    pub fn step<R: Rng + ?Sized>(&mut self, state: &mut VelocityState, rng: &mut R) -> Result<()> {
        let dt = self.dt;
        let work = &mut self.work;
        let u = state.field.coeffs_mut();
        match &self.scheme {
            Scheme::Stokes { full } => {
                full.draw(rng, &mut work.xi);
                full.apply(u, &work.xi);
            }
            Scheme::Galerkin { half, kernel } => {
                half.draw(rng, &mut work.xi);
                half.apply(u, &work.xi);
                work.nonlinear_substep(kernel, dt, u);
                half.draw(rng, &mut work.xi);
                half.apply(u, &work.xi);
            }
            Scheme::LinearTower { full } => {
                let tower = state.tower.as_mut().ok_or_else(missing_tower)?;
                full.apply(u, tower, rng);
            }
            Scheme::NonlinearTower { half, kernel } => {
                let tower = state.tower.as_mut().ok_or_else(missing_tower)?;
                half.apply(u, tower, rng);
                work.nonlinear_substep(kernel, dt, u);
                half.apply(u, tower, rng);
            }
        }
        Ok(())
    }

    /// `Err(BlowUp)` when `|u|_L2` exceeds the bound or is not finite.
    pub fn check_bound(&self, u: &SpectralField, t: f64) -> Result<()> {
        let norm = u.l2_norm();
        if !(norm <= self.blowup_bound) {
            return Err(Error::BlowUp {
                t,
                norm,
                bound: self.blowup_bound,
            });
        }
        Ok(())
    }
}

fn missing_tower() -> Error {
    Error::InvalidModel("OU tower model stepped without tower state".into())
}

fn expect_kind(model: &FluidModel, ok: bool, name: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidModel(format!("{name} called with model kind {:?}", model.kind)))
    }
}

pub fn step_stokes<R: Rng + ?Sized>(
    u: &SpectralField,
    model: &FluidModel,
    dt: f64,
    rng: &mut R,
) -> Result<SpectralField> {
    expect_kind(model, model.kind == ModelKind::Stokes, "step_stokes")?;
    let mut state = VelocityState::new(model, u.clone())?;
    Integrator::new(model, dt)?.step(&mut state, rng)?;
    Ok(state.field)
}

pub fn step_galerkin_nse<R: Rng + ?Sized>(
    u: &SpectralField,
    model: &FluidModel,
    dt: f64,
    rng: &mut R,
) -> Result<SpectralField> {
    expect_kind(model, model.kind == ModelKind::GalerkinNse, "step_galerkin_nse")?;
    let mut state = VelocityState::new(model, u.clone())?;
    let mut integ = Integrator::new(model, dt)?;
    integ.step(&mut state, rng)?;
    integ.check_bound(&state.field, dt)?;
    Ok(state.field)
}

pub fn step_ou_tower<R: Rng + ?Sized>(
    u: &SpectralField,
    tower: &OuTowerState,
    model: &FluidModel,
    dt: f64,
    rng: &mut R,
) -> Result<(SpectralField, OuTowerState)> {
    expect_kind(
        model,
        matches!(model.kind, ModelKind::OuTowerNse { .. }),
        "step_ou_tower",
    )?;
    let mut state = VelocityState {
        field: u.clone(),
        tower: Some(tower.clone()),
    };
    Integrator::new(model, dt)?.step(&mut state, rng)?;
    Ok((state.field, state.tower.expect("tower state kept")))
}

/// A velocity path consumed step by step by tracer integrators. `current()`
/// is the field held frozen over `[time(), time() + dt()]`.
pub trait VelocitySource {
    fn current(&self) -> &SpectralField;
    fn advance(&mut self) -> Result<()>;
    fn time(&self) -> f64;
    fn dt(&self) -> f64;
}

/// Seeded trajectory of one fluid model.
#[derive(Clone, Debug)]
pub struct Simulator {
    integrator: Integrator,
    state: VelocityState,
    rng: PathRng,
    steps: u64,
}

/// Everything needed to continue a [`Simulator`] bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatorCheckpoint {
    pub steps: u64,
    pub state: VelocityState,
    pub rng: RngState,
}

impl Simulator {
    pub fn new(model: &FluidModel, dt: f64, initial: SpectralField, rng: PathRng) -> Result<Self> {
        let state = VelocityState::new(model, initial)?;
        Ok(Self {
            integrator: Integrator::new(model, dt)?,
            state,
            rng,
            steps: 0,
        })
    }

    pub fn with_blowup_bound(mut self, bound: f64) -> Self {
        self.integrator = self.integrator.with_blowup_bound(bound);
        self
    }

    pub fn state(&self) -> &VelocityState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut VelocityState {
        &mut self.state
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn model(&self) -> &FluidModel {
        self.integrator.model()
    }

    pub fn checkpoint(&self) -> SimulatorCheckpoint {
        SimulatorCheckpoint {
            steps: self.steps,
            state: self.state.clone(),
            rng: self.rng.state(),
        }
    }

    pub fn restore(model: &FluidModel, dt: f64, cp: SimulatorCheckpoint) -> Result<Self> {
        if cp.state.field.trunc() != model.trunc {
            return Err(Error::InvalidParameter("checkpoint truncation differs from model".into()));
        }
        Ok(Self {
            integrator: Integrator::new(model, dt)?,
            state: cp.state,
            rng: PathRng::restore(cp.rng),
            steps: cp.steps,
        })
    }
}

impl VelocitySource for Simulator {
    fn current(&self) -> &SpectralField {
        &self.state.field
    }

    fn advance(&mut self) -> Result<()> {
        self.integrator.step(&mut self.state, &mut self.rng)?;
        self.steps += 1;
        let t = self.time();
        self.integrator.check_bound(&self.state.field, t)
    }

    fn time(&self) -> f64 {
        self.steps as f64 * self.integrator.dt()
    }

    fn dt(&self) -> f64 {
        self.integrator.dt()
    }
}

/// A velocity field held constant in time.
#[derive(Clone, Debug)]
pub struct FrozenVelocity {
    field: SpectralField,
    dt: f64,
    steps: u64,
}

impl FrozenVelocity {
    pub fn new(field: SpectralField, dt: f64) -> Self {
        Self { field, dt, steps: 0 }
    }
}

impl VelocitySource for FrozenVelocity {
    fn current(&self) -> &SpectralField {
        &self.field
    }

    fn advance(&mut self) -> Result<()> {
        self.steps += 1;
        Ok(())
    }

    fn time(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    fn dt(&self) -> f64 {
        self.dt
    }
}

/// Either a fluid model driven by its own noise or a frozen field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowSpec {
    Model {
        model: FluidModel,
        initial: Option<SpectralField>,
    },
    Frozen(SpectralField),
}

impl FlowSpec {
    pub fn model(model: FluidModel) -> Self {
        FlowSpec::Model { model, initial: None }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FlowSpec::Model { model, initial } => {
                model.validate()?;
                if let Some(u) = initial {
                    if u.trunc() != model.trunc {
                        return Err(Error::InvalidParameter(
                            "initial field truncation differs from model".into(),
                        ));
                    }
                }
                Ok(())
            }
            FlowSpec::Frozen(_) => Ok(()),
        }
    }

    /// Build the velocity path for ensemble member `path`.
    pub fn source(&self, dt: f64, seed: u64, path: u64, blowup_bound: f64) -> Result<Box<dyn VelocitySource + Send>> {
        match self {
            FlowSpec::Model { model, initial } => {
                let u0 = match initial {
                    Some(u) => u.clone(),
                    None => SpectralField::zeros(model.trunc)?,
                };
                let sim = Simulator::new(model, dt, u0, PathRng::velocity(seed, path))?
                    .with_blowup_bound(blowup_bound);
                Ok(Box::new(sim))
            }
            FlowSpec::Frozen(u) => Ok(Box::new(FrozenVelocity::new(u.clone(), dt))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn wi(a: i32, b: i32) -> WaveIndex {
        WaveIndex::new(a, b).unwrap()
    }

    fn stokes(nu: f64, radius: usize, trunc: usize) -> FluidModel {
        FluidModel {
            kind: ModelKind::Stokes,
            nu,
            trunc,
            noise: NoiseSpec::white(2.5, NoiseSpec::low_modes(radius)),
        }
    }

    #[test]
    fn low_modes_cover_the_box() {
        let m = NoiseSpec::low_modes(2);
        assert_eq!(m.len(), 24);
        assert!(NoiseSpec::white(1.0, m).covers_low_modes());
        assert!(!NoiseSpec::white(1.0, NoiseSpec::low_modes(1)).covers_low_modes());
    }

    #[test]
    fn white_increment_zero_step_is_zero() {
        let noise = NoiseSpec::white(2.5, NoiseSpec::low_modes(2));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inc = sample_white_increment(&noise, 4, 0.0, &mut rng).unwrap();
        assert!(inc.coeffs().iter().all(|&c| c == 0.0));
        assert!(sample_white_increment(&noise, 4, -1e-3, &mut rng).is_err());
    }

    #[test]
    fn white_increment_variance_and_support() {
        let noise = NoiseSpec::white(2.5, vec![wi(1, 0), wi(2, 1)]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dt = 0.01;
        let draws = 100_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let inc = sample_white_increment(&noise, 3, dt, &mut rng).unwrap();
            let c = inc.get(wi(1, 0));
            acc += c * c;
            for (m, c) in inc.modes() {
                if m != wi(1, 0) && m != wi(2, 1) {
                    assert_eq!(c, 0.0);
                }
            }
        }
        let var = acc / draws as f64;
        let expected = 1.0 * dt;
        assert!((var / expected - 1.0).abs() < 0.05, "{var} vs {expected}");
    }

    #[test]
    fn model_validation() {
        let mut m = stokes(1.0, 2, 4);
        assert!(m.validate().is_ok());
        m.noise.active.push(wi(5, 0));
        assert!(m.validate().is_err());
        let mut g = stokes(1.0, 2, 2);
        g.kind = ModelKind::GalerkinNse;
        assert!(g.validate().is_err());
        g.trunc = 3;
        assert!(g.validate().is_ok());
        g.nu = 0.0;
        assert!(g.validate().is_err());
        let mut t = stokes(1.0, 1, 3);
        t.kind = ModelKind::OuTowerNse { nonlinear: false };
        assert!(t.validate().is_err());
        t.noise.kind = NoiseKind::OuTower(TowerSpec::chain(1));
        assert!(t.validate().is_ok());
    }

    #[test]
    fn unforced_stokes_modes_decay_exactly() {
        let model = stokes(0.7, 1, 3);
        let m = wi(2, 3);
        let c0 = 1.3;
        let mut u = SpectralField::single(3, m, c0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dt = 0.05;
        for _ in 0..20 {
            u = step_stokes(&u, &model, dt, &mut rng).unwrap();
        }
        let expected = (-0.7 * 13.0 * 1.0f64).exp() * c0;
        assert!((u.get(m) - expected).abs() < 1e-14 * expected.abs().max(1e-300));
    }

    #[test]
    fn same_seed_same_trajectory() {
        let model = stokes(1.0, 2, 3);
        let run = || {
            let mut sim = Simulator::new(&model, 0.01, SpectralField::zeros(3).unwrap(), PathRng::velocity(9, 0)).unwrap();
            for _ in 0..100 {
                sim.advance().unwrap();
            }
            sim.current().clone()
        };
        let a = run();
        let b = run();
        assert!(a.coeffs().iter().zip(b.coeffs()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn noiseless_galerkin_shear_decays_viscously() {
        let model = FluidModel {
            kind: ModelKind::GalerkinNse,
            nu: 0.1,
            trunc: 4,
            noise: NoiseSpec::white(2.5, Vec::new()),
        };
        let m = wi(0, 2);
        let mut u = SpectralField::single(4, m, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            u = step_galerkin_nse(&u, &model, 0.01, &mut rng).unwrap();
        }
        let expected = 2.0 * (-0.1 * 4.0 * 1.0f64).exp();
        assert!((u.get(m) - expected).abs() < 1e-13);
        assert!(u.l2_norm() - u.get(m).abs() < 1e-13);
    }

    #[test]
    fn blowup_is_reported() {
        let model = FluidModel {
            kind: ModelKind::GalerkinNse,
            nu: 0.1,
            trunc: 3,
            noise: NoiseSpec::white(2.5, Vec::new()),
        };
        let u = SpectralField::single(3, wi(1, 1), 10.0).unwrap();
        let mut sim = Simulator::new(&model, 0.01, u, PathRng::velocity(0, 0))
            .unwrap()
            .with_blowup_bound(1.0);
        assert!(matches!(sim.advance(), Err(Error::BlowUp { .. })));
    }

    #[test]
    fn checkpoint_restore_is_bitwise() {
        let model = FluidModel {
            kind: ModelKind::GalerkinNse,
            nu: 0.05,
            trunc: 4,
            noise: NoiseSpec::white(2.5, NoiseSpec::low_modes(2)),
        };
        let u0 = SpectralField::zeros(4).unwrap();
        let mut a = Simulator::new(&model, 0.01, u0, PathRng::velocity(3, 1)).unwrap();
        for _ in 0..50 {
            a.advance().unwrap();
        }
        let cp = a.checkpoint();
        let mut b = Simulator::restore(&model, 0.01, cp).unwrap();
        for _ in 0..50 {
            a.advance().unwrap();
            b.advance().unwrap();
        }
        assert_eq!(a.current(), b.current());
        assert_eq!(b.steps(), 100);
    }

    #[test]
    fn step_functions_check_model_kind() {
        let model = stokes(1.0, 1, 3);
        let u = SpectralField::zeros(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(step_galerkin_nse(&u, &model, 0.01, &mut rng).is_err());
        let tower = OuTowerState::zeros(0, 0);
        assert!(step_ou_tower(&u, &tower, &model, 0.01, &mut rng).is_err());
    }
}
