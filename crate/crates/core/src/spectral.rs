//! Divergence-free real Fourier basis on the torus `(-pi, pi]^2`.
//!
//! For `k` in the upper half-lattice `Z2+` (`k2 > 0`, or `k2 == 0` and
//! `k1 > 0`) the basis fields are
//!
//! ```text
//! e_k(x)  = c2 * gamma_k * sin(k . x)
//! e_-k(x) = c2 * gamma_-k * cos(k . x),   gamma_k = k_perp / |k|,  gamma_-k = -gamma_k
//! ```
//!
//! with `k_perp = (-k2, k1)` and `c2 = sqrt(2) / (2 pi)`, which makes the family
//! orthonormal in `L2`. Since `curl e_k` has `L2` norm `|k|`, the enstrophy
//! norm of a field is `sqrt(sum |k|^2 c_k^2)`.
//!
//! # Canonical mode order
//!
//! Coefficients of a field truncated at `|k|_inf <= N` live in a dense vector
//! of length `2 * 2N(N+1)`. The half-lattice `Z2+` is walked row by row:
//! first `k2 = 0, k1 = 1..=N`, then for each `k2 = 1..=N` the row
//! `k1 = -N..=N`. The `j`-th half-lattice wave vector `k` owns slot `2j`
//! (the sine mode `e_k`) and slot `2j + 1` (the cosine mode `e_-k`).

use std::f64::consts::{PI, SQRT_2};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalisation `sqrt(2) (2 pi)^{-1}` of the two-dimensional basis.
pub const C2: f64 = SQRT_2 / (2.0 * PI);

/// Largest supported Galerkin cutoff.
pub const MAX_TRUNC: usize = 64;

/// Default Sobolev index of the `H^sigma` factor in the Lyapunov weight.
pub const DEFAULT_SIGMA: f64 = 4.0;

pub type Point = [f64; 2];

/// A basis label `m = (k, i)`. In two dimensions the sheet index `i` is always 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "[i32; 2]", into = "[i32; 2]")]
pub struct WaveIndex {
    k: [i32; 2],
}

impl TryFrom<[i32; 2]> for WaveIndex {
    type Error = Error;

    fn try_from(k: [i32; 2]) -> Result<Self> {
        WaveIndex::new(k[0], k[1])
    }
}

impl From<WaveIndex> for [i32; 2] {
    fn from(m: WaveIndex) -> Self {
        m.k
    }
}

impl WaveIndex {
    pub fn new(k1: i32, k2: i32) -> Result<Self> {
        if k1 == 0 && k2 == 0 {
            return Err(Error::ZeroWaveIndex);
        }
        Ok(Self { k: [k1, k2] })
    }

    pub fn k(&self) -> [i32; 2] {
        self.k
    }

    pub fn sheet(&self) -> u8 {
        1
    }

    /// Membership in the half-lattice `Z2+`.
    pub fn is_positive(&self) -> bool {
        self.k[1] > 0 || (self.k[1] == 0 && self.k[0] > 0)
    }

    pub fn neg(&self) -> Self {
        Self {
            k: [-self.k[0], -self.k[1]],
        }
    }

    pub fn norm_sq(&self) -> f64 {
        let [a, b] = self.k;
        (a as f64) * (a as f64) + (b as f64) * (b as f64)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn sup_norm(&self) -> usize {
        self.k[0].unsigned_abs().max(self.k[1].unsigned_abs()) as usize
    }

    /// Unit polarisation vector `k_perp / |k|`; odd in `k`.
    pub fn gamma(&self) -> [f64; 2] {
        let n = self.norm();
        [-(self.k[1] as f64) / n, self.k[0] as f64 / n]
    }
}

/// Evaluate the basis field `e_m` at `x`.
pub fn basis_eval(m: WaveIndex, x: Point) -> [f64; 2] {
    let [k1, k2] = m.k();
    let phase = k1 as f64 * x[0] + k2 as f64 * x[1];
    let g = m.gamma();
    let s = if m.is_positive() { phase.sin() } else { phase.cos() };
    [C2 * g[0] * s, C2 * g[1] * s]
}

/// Number of half-lattice wave vectors with `|k|_inf <= n`.
pub fn positive_count(n: usize) -> usize {
    2 * n * (n + 1)
}

/// Length of the dense coefficient vector at truncation `n`.
pub fn mode_count(n: usize) -> usize {
    2 * positive_count(n)
}

fn positive_slot(k: [i32; 2], n: usize) -> usize {
    let n = n as i32;
    if k[1] == 0 {
        (k[0] - 1) as usize
    } else {
        (n + (k[1] - 1) * (2 * n + 1) + (k[0] + n)) as usize
    }
}

fn positive_from_slot(j: usize, n: usize) -> [i32; 2] {
    if j < n {
        [j as i32 + 1, 0]
    } else {
        let r = j - n;
        let w = 2 * n + 1;
        [(r % w) as i32 - n as i32, (r / w) as i32 + 1]
    }
}

/// Slot of `m` in the canonical coefficient vector at truncation `n`.
pub fn index_of(m: WaveIndex, n: usize) -> Option<usize> {
    if m.sup_norm() > n {
        return None;
    }
    if m.is_positive() {
        Some(2 * positive_slot(m.k, n))
    } else {
        Some(2 * positive_slot(m.neg().k, n) + 1)
    }
}

/// Inverse of [`index_of`].
pub fn wave_at(idx: usize, n: usize) -> WaveIndex {
    let k = positive_from_slot(idx / 2, n);
    let m = WaveIndex { k };
    if idx % 2 == 0 {
        m
    } else {
        m.neg()
    }
}

fn check_trunc(n: usize) -> Result<()> {
    if n == 0 || n > MAX_TRUNC {
        return Err(Error::BadTruncation(n));
    }
    Ok(())
}

/// Requested derivative order for [`SpectralField::eval_point`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    Value,
    Jacobian,
    Hessian,
}

/// Result of a point evaluation. `Jacobian[i][j] = d_j u_i`,
/// `Hessian[i][j][l] = d_j d_l u_i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PointEval {
    Value([f64; 2]),
    Jacobian([[f64; 2]; 2]),
    Hessian([[[f64; 2]; 2]; 2]),
}

/// Truncated divergence-free velocity field in the `e_m` basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralField {
    trunc: usize,
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn zeros(trunc: usize) -> Result<Self> {
        check_trunc(trunc)?;
        Ok(Self {
            trunc,
            coeffs: vec![0.0; mode_count(trunc)],
        })
    }

    pub fn from_coeffs(trunc: usize, coeffs: Vec<f64>) -> Result<Self> {
        check_trunc(trunc)?;
        if coeffs.len() != mode_count(trunc) {
            return Err(Error::CoefficientLength {
                expected: mode_count(trunc),
                got: coeffs.len(),
            });
        }
        Ok(Self { trunc, coeffs })
    }

    /// Build a field by evaluating `f` on every mode in canonical order.
    pub fn from_fn(trunc: usize, mut f: impl FnMut(WaveIndex) -> f64) -> Result<Self> {
        check_trunc(trunc)?;
        let coeffs = (0..mode_count(trunc)).map(|i| f(wave_at(i, trunc))).collect();
        Ok(Self { trunc, coeffs })
    }

    /// `amplitude * e_m`.
    pub fn single(trunc: usize, m: WaveIndex, amplitude: f64) -> Result<Self> {
        let mut u = Self::zeros(trunc)?;
        u.set(m, amplitude)?;
        Ok(u)
    }

    pub fn trunc(&self) -> usize {
        self.trunc
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn get(&self, m: WaveIndex) -> f64 {
        index_of(m, self.trunc).map_or(0.0, |i| self.coeffs[i])
    }

    pub fn set(&mut self, m: WaveIndex, value: f64) -> Result<()> {
        let [k1, k2] = m.k();
        let i = index_of(m, self.trunc).ok_or(Error::OutsideTruncation(k1, k2, self.trunc))?;
        self.coeffs[i] = value;
        Ok(())
    }

    pub fn modes(&self) -> impl Iterator<Item = (WaveIndex, f64)> + '_ {
        let n = self.trunc;
        self.coeffs.iter().enumerate().map(move |(i, &c)| (wave_at(i, n), c))
    }

    /// `L2` inner product; both fields must share a truncation.
    pub fn inner(&self, other: &SpectralField) -> f64 {
        debug_assert_eq!(self.trunc, other.trunc);
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// `(sum_m |k|^{2s} c_m^2)^{1/2}`.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        self.modes()
            .map(|(m, c)| m.norm_sq().powf(s) * c * c)
            .sum::<f64>()
            .sqrt()
    }

    /// The `W` norm, `|curl u|_L2`.
    pub fn enstrophy_norm(&self) -> f64 {
        self.modes()
            .map(|(m, c)| m.norm_sq() * c * c)
            .sum::<f64>()
            .sqrt()
    }

    /// `(1 + |u|_{H^sigma}^2)^beta * exp(eta |u|_W^2)`, evaluated in log space.
    pub fn lyap_weight(&self, params: LyapWeightParams, sigma: f64) -> LyapWeight {
        let h = self.sobolev_norm(sigma);
        let w = self.enstrophy_norm();
        let log_value = params.beta * (h * h).ln_1p() + params.eta * w * w;
        if log_value >= f64::MAX.ln() {
            LyapWeight {
                log_value,
                value: f64::MAX,
                saturated: true,
            }
        } else {
            LyapWeight {
                log_value,
                value: log_value.exp(),
                saturated: false,
            }
        }
    }

    /// Precompute the per-mode data needed for repeated point evaluations.
    pub fn evaluator(&self) -> FieldEvaluator {
        FieldEvaluator::new(self)
    }

    pub fn eval_point(&self, x: Point, order: Order) -> PointEval {
        let ev = self.evaluator();
        match order {
            Order::Value => PointEval::Value(ev.velocity(x)),
            Order::Jacobian => PointEval::Jacobian(ev.velocity_jacobian(x).1),
            Order::Hessian => PointEval::Hessian(ev.hessian(x)),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.coeffs.iter_mut().for_each(|c| *c *= factor);
    }

    /// `self += factor * other`.
    pub fn axpy(&mut self, factor: f64, other: &SpectralField) {
        debug_assert_eq!(self.trunc, other.trunc);
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += factor * b;
        }
    }

    /// Write the snapshot as CSV `k1,k2,sheet,coeff` in canonical order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "k1,k2,sheet,coeff")?;
        for (m, c) in self.modes() {
            let [k1, k2] = m.k();
            writeln!(out, "{},{},{},{}", k1, k2, m.sheet(), c)?;
        }
        Ok(())
    }

    /// Read a snapshot written by [`SpectralField::write_csv`]. Rows may come in
    /// any order; the truncation is the largest `|k|_inf` present.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::InvalidParameter(e.to_string()))?;
            let line = line.trim();
            if lineno == 0 || line.is_empty() {
                continue;
            }
            let bad = || Error::InvalidParameter(format!("snapshot line {}: {line:?}", lineno + 1));
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(bad());
            }
            let k1: i32 = fields[0].trim().parse().map_err(|_| bad())?;
            let k2: i32 = fields[1].trim().parse().map_err(|_| bad())?;
            let c: f64 = fields[3].trim().parse().map_err(|_| bad())?;
            rows.push((WaveIndex::new(k1, k2)?, c));
        }
        let n = rows.iter().map(|(m, _)| m.sup_norm()).max().unwrap_or(0);
        let mut u = Self::zeros(n)?;
        for (m, c) in rows {
            u.set(m, c)?;
        }
        Ok(u)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapWeightParams {
    beta: f64,
    eta: f64,
}

impl LyapWeightParams {
    pub fn new(beta: f64, eta: f64) -> Result<Self> {
        if !(beta >= 0.0) || !(eta > 0.0) || !beta.is_finite() || !eta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "Lyapunov weight needs beta >= 0 and eta > 0, got beta = {beta}, eta = {eta}"
            )));
        }
        Ok(Self { beta, eta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LyapWeight {
    pub log_value: f64,
    pub value: f64,
    /// Set when `value` would overflow; `value` is then `f64::MAX`.
    pub saturated: bool,
}

#[derive(Clone, Copy, Debug)]
struct Term {
    k1: i32,
    k2: usize,
    kf: [f64; 2],
    g: [f64; 2],
    a: f64,
    b: f64,
}

/// Trigonometric point evaluator for one field. Zero modes are dropped.
#[derive(Clone, Debug)]
pub struct FieldEvaluator {
    max_k: usize,
    terms: Vec<Term>,
}

type PhaseTable = [(f64, f64); MAX_TRUNC + 1];

/// `(cos(j x), sin(j x))` for `j = 0..=n` by angle addition.
pub(crate) fn phase_table(x: f64, n: usize) -> PhaseTable {
    let mut t = [(1.0, 0.0); MAX_TRUNC + 1];
    if n == 0 {
        return t;
    }
    let (s, c) = x.sin_cos();
    t[1] = (c, s);
    for j in 2..=n {
        let (cp, sp) = t[j - 1];
        t[j] = (cp * c - sp * s, sp * c + cp * s);
    }
    t
}

impl FieldEvaluator {
    fn new(u: &SpectralField) -> Self {
        let n = u.trunc;
        let mut terms = Vec::new();
        let mut max_k = 0;
        for j in 0..positive_count(n) {
            let a = u.coeffs[2 * j];
            let b = u.coeffs[2 * j + 1];
            if a == 0.0 && b == 0.0 {
                continue;
            }
            let k = positive_from_slot(j, n);
            let m = WaveIndex { k };
            let g = m.gamma();
            max_k = max_k.max(m.sup_norm());
            terms.push(Term {
                k1: k[0],
                k2: k[1] as usize,
                kf: [k[0] as f64, k[1] as f64],
                g: [C2 * g[0], C2 * g[1]],
                a,
                b,
            });
        }
        Self { max_k, terms }
    }

    fn tables(&self, x: Point) -> (PhaseTable, PhaseTable) {
        (phase_table(x[0], self.max_k), phase_table(x[1], self.max_k))
    }

    #[inline]
    fn phase(t1: &PhaseTable, t2: &PhaseTable, term: &Term) -> (f64, f64) {
        let (c1, s1) = t1[term.k1.unsigned_abs() as usize];
        let s1 = if term.k1 < 0 { -s1 } else { s1 };
        let (c2, s2) = t2[term.k2];
        (c1 * c2 - s1 * s2, s1 * c2 + c1 * s2)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn velocity(&self, x: Point) -> [f64; 2] {
        let (t1, t2) = self.tables(x);
        let mut u = [0.0; 2];
        for term in &self.terms {
            let (c, s) = Self::phase(&t1, &t2, term);
            let v = term.a * s - term.b * c;
            u[0] += term.g[0] * v;
            u[1] += term.g[1] * v;
        }
        u
    }

    pub fn velocity_jacobian(&self, x: Point) -> ([f64; 2], [[f64; 2]; 2]) {
        let (t1, t2) = self.tables(x);
        let mut u = [0.0; 2];
        let mut du = [[0.0; 2]; 2];
        for term in &self.terms {
            let (c, s) = Self::phase(&t1, &t2, term);
            let v = term.a * s - term.b * c;
            let d = term.a * c + term.b * s;
            for i in 0..2 {
                u[i] += term.g[i] * v;
                let gd = term.g[i] * d;
                du[i][0] += gd * term.kf[0];
                du[i][1] += gd * term.kf[1];
            }
        }
        (u, du)
    }

    pub fn hessian(&self, x: Point) -> [[[f64; 2]; 2]; 2] {
        let (t1, t2) = self.tables(x);
        let mut h = [[[0.0; 2]; 2]; 2];
        for term in &self.terms {
            let (c, s) = Self::phase(&t1, &t2, term);
            let v = term.a * s - term.b * c;
            for (i, hi) in h.iter_mut().enumerate() {
                for (j, hij) in hi.iter_mut().enumerate() {
                    for (l, hijl) in hij.iter_mut().enumerate() {
                        *hijl -= term.g[i] * term.kf[j] * term.kf[l] * v;
                    }
                }
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(n: usize, seed: u64) -> SpectralField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = SpectralField::from_fn(n, |m| rng.random_range(-1.0..1.0) / m.norm_sq()).unwrap();
        let norm = u.l2_norm();
        u.scale(1.0 / norm);
        u
    }

    #[test]
    fn enumeration_round_trips() {
        for n in 1..6 {
            let mut seen = vec![false; mode_count(n)];
            for i in 0..mode_count(n) {
                let m = wave_at(i, n);
                assert!(m.sup_norm() <= n);
                assert_eq!(index_of(m, n), Some(i));
                assert!(!seen[i]);
                seen[i] = true;
                assert_eq!(m.is_positive(), i % 2 == 0);
            }
            assert_eq!(mode_count(n), (2 * n + 1).pow(2) - 1);
        }
    }

    #[test]
    fn rejects_zero_mode() {
        assert_eq!(WaveIndex::new(0, 0), Err(Error::ZeroWaveIndex));
    }

    #[test]
    fn gamma_is_odd_and_perpendicular() {
        let m = WaveIndex::new(3, -2).unwrap();
        let g = m.gamma();
        let gn = m.neg().gamma();
        assert_eq!(g, [-gn[0], -gn[1]]);
        assert!((g[0] * 3.0 + g[1] * -2.0).abs() < 1e-15);
        assert!((g[0].hypot(g[1]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn basis_eval_examples() {
        let m = WaveIndex::new(1, 0).unwrap();
        let v = basis_eval(m, [PI / 2.0, 0.0]);
        assert!(v[0].abs() < 1e-16);
        assert!((v[1] - SQRT_2 / (2.0 * PI)).abs() < 1e-15);
        assert_eq!(basis_eval(m, [0.0, 0.0]), [0.0, 0.0]);
    }

    #[test]
    fn basis_is_divergence_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let k1 = rng.random_range(-5..=5);
            let k2 = rng.random_range(-5..=5);
            let Ok(m) = WaveIndex::new(k1, k2) else { continue };
            let u = SpectralField::single(5, m, 1.0).unwrap();
            let ev = u.evaluator();
            for _ in 0..100 {
                let x = [rng.random_range(-PI..PI), rng.random_range(-PI..PI)];
                let (_, du) = ev.velocity_jacobian(x);
                assert!((du[0][0] + du[1][1]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn evaluator_matches_basis_sum() {
        let u = random_field(4, 11);
        let ev = u.evaluator();
        let x = [0.3, -1.7];
        let direct = u.modes().fold([0.0, 0.0], |acc, (m, c)| {
            let e = basis_eval(m, x);
            [acc[0] + c * e[0], acc[1] + c * e[1]]
        });
        let v = ev.velocity(x);
        assert!((v[0] - direct[0]).abs() < 1e-14 && (v[1] - direct[1]).abs() < 1e-14);
    }

    #[test]
    fn zero_field_evaluates_to_zero() {
        let u = SpectralField::zeros(3).unwrap();
        assert_eq!(u.eval_point([0.4, 0.1], Order::Value), PointEval::Value([0.0; 2]));
        assert_eq!(
            u.eval_point([0.4, 0.1], Order::Jacobian),
            PointEval::Jacobian([[0.0; 2]; 2])
        );
    }

    #[test]
    fn shear_jacobian_is_analytic() {
        let a = 0.7;
        let u = SpectralField::single(3, WaveIndex::new(1, 0).unwrap(), a).unwrap();
        for x in [[0.0, 0.0], [1.1, -0.4], [-2.5, 3.0]] {
            let PointEval::Jacobian(j) = u.eval_point(x, Order::Jacobian) else { unreachable!() };
            let expected = [[0.0, 0.0], [a * C2 * x[0].cos(), 0.0]];
            for i in 0..2 {
                for l in 0..2 {
                    assert!((j[i][l] - expected[i][l]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..5 {
            let u = random_field(6, seed);
            let ev = u.evaluator();
            for _ in 0..20 {
                let x = [rng.random_range(-PI..PI), rng.random_range(-PI..PI)];
                let (_, du) = ev.velocity_jacobian(x);
                for j in 0..2 {
                    let mut xp = x;
                    let mut xm = x;
                    xp[j] += h;
                    xm[j] -= h;
                    let up = ev.velocity(xp);
                    let um = ev.velocity(xm);
                    for i in 0..2 {
                        let fd = (up[i] - um[i]) / (2.0 * h);
                        assert!((fd - du[i][j]).abs() < 1e-6, "fd {fd} vs {}", du[i][j]);
                    }
                }
            }
        }
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let h = 1e-5;
        let u = random_field(5, 21);
        let ev = u.evaluator();
        let x = [0.9, -0.2];
        let hess = ev.hessian(x);
        for l in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[l] += h;
            xm[l] -= h;
            let (_, jp) = ev.velocity_jacobian(xp);
            let (_, jm) = ev.velocity_jacobian(xm);
            for i in 0..2 {
                for j in 0..2 {
                    let fd = (jp[i][j] - jm[i][j]) / (2.0 * h);
                    assert!((fd - hess[i][j][l]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn norm_examples() {
        let e10 = SpectralField::single(3, WaveIndex::new(1, 0).unwrap(), 1.0).unwrap();
        for s in [-2.0, 0.0, 0.5, 3.0] {
            assert!((e10.sobolev_norm(s) - 1.0).abs() < 1e-15);
        }
        let a = -1.5;
        let e20 = SpectralField::single(3, WaveIndex::new(2, 0).unwrap(), a).unwrap();
        for s in [0.0, 1.0, 2.5] {
            assert!((e20.sobolev_norm(s) - a.abs() * 2f64.powf(s)).abs() < 1e-12);
        }
        assert!((e20.enstrophy_norm() - 2.0 * a.abs()).abs() < 1e-15);
    }

    /// `|curl e_k|_L2 = |k|`, checked by quadrature of the analytic curl.
    #[test]
    fn enstrophy_of_basis_mode_is_wavenumber() {
        let n = 32;
        let hgrid = 2.0 * PI / n as f64;
        for (k1, k2) in [(1, 0), (2, -3), (0, 4), (-1, -1)] {
            let m = WaveIndex::new(k1, k2).unwrap();
            let u = SpectralField::single(4, m, 1.0).unwrap();
            let ev = u.evaluator();
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let x = [-PI + i as f64 * hgrid, -PI + j as f64 * hgrid];
                    let (_, du) = ev.velocity_jacobian(x);
                    let curl = du[1][0] - du[0][1];
                    acc += curl * curl;
                }
            }
            let curl_norm = (acc * hgrid * hgrid).sqrt();
            assert!((curl_norm - m.norm()).abs() < 1e-10);
            assert!((u.enstrophy_norm() - m.norm()).abs() < 1e-14);
        }
    }

    #[test]
    fn lyap_weight_examples() {
        let p = LyapWeightParams::new(1.5, 0.1).unwrap();
        let zero = SpectralField::zeros(3).unwrap();
        let w = zero.lyap_weight(p, DEFAULT_SIGMA);
        assert_eq!(w.value, 1.0);
        assert!(!w.saturated);

        let u = random_field(3, 2);
        let p0 = LyapWeightParams::new(0.0, 0.3).unwrap();
        let w0 = u.lyap_weight(p0, DEFAULT_SIGMA);
        let ens = u.enstrophy_norm();
        assert!((w0.value - (0.3 * ens * ens).exp()).abs() < 1e-12 * w0.value);

        let mut last = 0.0;
        for beta in [0.0, 0.5, 1.0, 2.0] {
            let v = u.lyap_weight(LyapWeightParams::new(beta, 0.3).unwrap(), 2.0).value;
            assert!(v > last);
            last = v;
        }
        let mut last = 0.0;
        for eta in [0.01, 0.1, 1.0] {
            let v = u.lyap_weight(LyapWeightParams::new(1.0, eta).unwrap(), 2.0).value;
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn lyap_weight_saturates() {
        let mut u = random_field(3, 4);
        u.scale(1e4);
        let w = u.lyap_weight(LyapWeightParams::new(1.0, 1.0).unwrap(), DEFAULT_SIGMA);
        assert!(w.saturated);
        assert_eq!(w.value, f64::MAX);
        assert!(w.log_value.is_finite());
    }

    #[test]
    fn lyap_weight_params_validate() {
        assert!(LyapWeightParams::new(-0.1, 1.0).is_err());
        assert!(LyapWeightParams::new(0.0, 0.0).is_err());
        assert!(LyapWeightParams::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let u = random_field(4, 9);
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let back = SpectralField::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, u);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k1,k2,sheet,coeff\n1,0,1,"));
    }

    #[test]
    fn rejects_out_of_range_modes() {
        let mut u = SpectralField::zeros(2).unwrap();
        assert!(u.set(WaveIndex::new(3, 0).unwrap(), 1.0).is_err());
        assert_eq!(u.get(WaveIndex::new(3, 0).unwrap()), 0.0);
        assert!(SpectralField::zeros(0).is_err());
        assert!(SpectralField::from_coeffs(2, vec![0.0; 3]).is_err());
    }
}
