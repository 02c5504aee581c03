//! OU tower forcing: each forced mode carries a chain of linearly damped
//! auxiliary processes,
//!
//! ```text
//! d u_m      = (-nu |k|^2 u_m + q_m Z^0) dt
//! d Z^l      = (-a_l Z^l + Z^{l+1}) dt        0 <= l < n
//! d Z^n      = -a_n Z^n dt + gamma dW^m
//! ```
//!
//! The linear system for `(u_m, Z^0, ..., Z^n)` is propagated exactly: the
//! transition matrix is `exp(G h)` and the innovation covariance comes from
//! Van Loan's block-exponential construction.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::FluidModel;
use crate::error::{Error, Result};
use crate::spectral::{index_of, mode_count, wave_at};

/// Deepest supported chain.
pub const MAX_DEPTH: usize = 30;

/// Shape and rates of the auxiliary chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TowerSpec {
    /// Chain length `n`; levels `Z^0..=Z^n`.
    pub depth: usize,
    /// Damping `a_l` per level, length `depth + 1`.
    pub damping: Vec<f64>,
    /// White-noise amplitude at the bottom level.
    pub gamma: f64,
}

impl TowerSpec {
    /// Default chain with damping `l + 1` at level `l`.
    pub fn chain(depth: usize) -> Self {
        Self {
            depth,
            damping: (0..=depth).map(|l| (l + 1) as f64).collect(),
            gamma: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.damping.len() != self.depth + 1 {
            return Err(Error::InvalidModel(format!(
                "tower of depth {} needs {} damping rates, got {}",
                self.depth,
                self.depth + 1,
                self.damping.len()
            )));
        }
        if self.damping.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(Error::InvalidModel("tower damping rates must be positive".into()));
        }
        if self.depth > MAX_DEPTH {
            return Err(Error::InvalidModel(format!(
                "tower depth {} exceeds the supported maximum {MAX_DEPTH}",
                self.depth
            )));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidModel("tower noise amplitude must be >= 0".into()));
        }
        Ok(())
    }
}

/// Auxiliary chain values, `depth + 1` entries per forced mode in the order of
/// the model's active set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuTowerState {
    depth: usize,
    levels: Vec<f64>,
}

impl OuTowerState {
    pub fn zeros(depth: usize, active_modes: usize) -> Self {
        Self {
            depth,
            levels: vec![0.0; (depth + 1) * active_modes],
        }
    }

    pub fn for_model(model: &FluidModel) -> Result<Self> {
        let spec = model.tower_spec()?;
        Ok(Self::zeros(spec.depth, model.noise.active.len()))
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn levels_mut(&mut self) -> &mut [f64] {
        &mut self.levels
    }

    /// `Z^{m, level}` for the `active`-th forced mode.
    pub fn get(&self, active: usize, level: usize) -> f64 {
        self.levels[active * (self.depth + 1) + level]
    }

    pub fn set(&mut self, active: usize, level: usize, value: f64) {
        self.levels[active * (self.depth + 1) + level] = value;
    }
}

#[derive(Clone, Debug)]
struct TowerMode {
    coeff: usize,
    transition: Vec<f64>,
    factor: Vec<f64>,
}

/// Exact transition of `(u, Z)` over a fixed step `h` with the nonlinearity off.
#[derive(Clone, Debug)]
pub struct TowerPropagator {
    dim: usize,
    modes: Vec<TowerMode>,
    passive: Vec<(usize, f64)>,
}

impl TowerPropagator {
    pub fn new(model: &FluidModel, h: f64) -> Result<Self> {
        let spec = model.tower_spec()?;
        let dim = spec.depth + 2;
        let n = model.trunc;
        let mut forced = vec![false; mode_count(n)];
        let mut modes = Vec::with_capacity(model.noise.active.len());
        for &m in &model.noise.active {
            let coeff = index_of(m, n).ok_or_else(|| {
                let [a, b] = m.k();
                Error::OutsideTruncation(a, b, n)
            })?;
            forced[coeff] = true;
            let q = model.noise.amplitude(m);
            let mut gen = DMatrix::<f64>::zeros(dim, dim);
            gen[(0, 0)] = -model.nu * m.norm_sq();
            gen[(0, 1)] = q;
            for l in 0..=spec.depth {
                gen[(l + 1, l + 1)] = -spec.damping[l];
                if l < spec.depth {
                    gen[(l + 1, l + 2)] = 1.0;
                }
            }
            let transition = (&gen * h).exp();
            let factor = innovation_factor(&gen, dim, spec.gamma, h);
            modes.push(TowerMode {
                coeff,
                transition: transition.transpose().as_slice().to_vec(),
                factor: factor.transpose().as_slice().to_vec(),
            });
        }
        let passive = (0..mode_count(n))
            .filter(|&i| !forced[i])
            .map(|i| (i, (-model.nu * wave_at(i, n).norm_sq() * h).exp()))
            .collect();
        Ok(Self { dim, modes, passive })
    }

    pub fn apply<R: Rng + ?Sized>(&self, u: &mut [f64], tower: &mut OuTowerState, rng: &mut R) {
        for &(i, d) in &self.passive {
            u[i] *= d;
        }
        let dim = self.dim;
        let depth = dim - 2;
        let mut y = [0.0f64; 32];
        let mut xi = [0.0f64; 32];
        let mut out = [0.0f64; 32];
        for (a, mode) in self.modes.iter().enumerate() {
            y[0] = u[mode.coeff];
            y[1..dim].copy_from_slice(&tower.levels[a * (depth + 1)..(a + 1) * (depth + 1)]);
            for x in xi.iter_mut().take(dim) {
                *x = rng.sample(StandardNormal);
            }
            for r in 0..dim {
                let row_t = &mode.transition[r * dim..(r + 1) * dim];
                let row_f = &mode.factor[r * dim..(r + 1) * dim];
                let mut acc = 0.0;
                for c in 0..dim {
                    acc += row_t[c] * y[c] + row_f[c] * xi[c];
                }
                out[r] = acc;
            }
            u[mode.coeff] = out[0];
            tower.levels[a * (depth + 1)..(a + 1) * (depth + 1)].copy_from_slice(&out[1..dim]);
        }
    }
}

/// Factor `L` with `L L^T = int_0^h e^{Gs} b b^T e^{G^T s} ds`, `b = gamma e_last`.
fn innovation_factor(gen: &DMatrix<f64>, dim: usize, gamma: f64, h: f64) -> DMatrix<f64> {
    let mut block = DMatrix::<f64>::zeros(2 * dim, 2 * dim);
    for r in 0..dim {
        for c in 0..dim {
            block[(r, c)] = -gen[(r, c)] * h;
            block[(dim + r, dim + c)] = gen[(c, r)] * h;
        }
    }
    block[(dim - 1, 2 * dim - 1)] = gamma * gamma * h;
    let e = block.exp();
    let f = e.view((dim, dim), (dim, dim)).transpose();
    let g12 = e.view((0, dim), (dim, dim)).into_owned();
    let cov = &f * g12;
    let sym = (&cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut factor = eig.eigenvectors.clone();
    for (c, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        for r in 0..dim {
            factor[(r, c)] *= s;
        }
    }
    factor
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_defaults() {
        let t = TowerSpec::chain(2);
        assert_eq!(t.damping, vec![1.0, 2.0, 3.0]);
        assert!(t.validate().is_ok());
        let bad = TowerSpec {
            depth: 2,
            damping: vec![1.0],
            gamma: 1.0,
        };
        assert!(bad.validate().is_err());
    }

    /// Scalar OU `dZ = -a Z dt + g dW` has innovation variance `g^2 (1 - e^{-2ah}) / (2a)`.
    #[test]
    fn van_loan_matches_scalar_ou() {
        let a = 1.7;
        let g = 0.6;
        let h = 0.3;
        let mut gen = DMatrix::<f64>::zeros(2, 2);
        gen[(0, 0)] = -0.5;
        gen[(1, 1)] = -a;
        let f = innovation_factor(&gen, 2, g, h);
        let cov = &f * f.transpose();
        let expected = g * g * (1.0 - (-2.0 * a * h).exp()) / (2.0 * a);
        assert!((cov[(1, 1)] - expected).abs() < 1e-12);
        assert!(cov[(0, 0)].abs() < 1e-14 && cov[(0, 1)].abs() < 1e-14);
    }
}
