//! Galerkin-projected advection term `Pi_N B(u, u)` by direct triad summation.
//!
//! Coefficients of `u` are mapped to complex amplitudes `z_k` with
//! `u_hat(k) = gamma_k z_k` and `omega_hat(k) = i |k| z_k`. The curl of
//! `B(u, u)` is `u . grad omega`, whose Fourier coefficient at `k` is
//!
//! ```text
//! n_hat(k) = - sum_{p + q = k} (p x q) |q| / |p| z_p z_q
//! ```
//!
//! and the amplitude of `B` at `k` is `n_hat(k) / (i |k|)`. Unordered pairs
//! `{p, q}` are summed once with the symmetrised weight
//! `-(p x q) (|q|^2 - |p|^2) / (|p| |q|)`.

use crate::spectral::{positive_count, SpectralField, WaveIndex, C2};

#[derive(Clone, Copy, Debug)]
struct Triad {
    p: u32,
    q: u32,
    w: f64,
}

/// Precomputed triad table for one truncation.
#[derive(Clone, Debug)]
pub struct GalerkinKernel {
    trunc: usize,
    /// `rows[j]..rows[j+1]` indexes the triads feeding half-lattice slot `j`.
    rows: Vec<usize>,
    triads: Vec<Triad>,
    /// `2 / (c2 |k|)` per half-lattice slot.
    out_scale: Vec<f64>,
}

fn box_index(k: [i32; 2], n: usize) -> usize {
    let w = 2 * n as i32 + 1;
    ((k[0] + n as i32) * w + (k[1] + n as i32)) as usize
}

impl GalerkinKernel {
    pub fn new(trunc: usize) -> Self {
        let n = trunc as i32;
        let count = positive_count(trunc);
        let mut rows = Vec::with_capacity(count + 1);
        let mut triads = Vec::new();
        let mut out_scale = Vec::with_capacity(count);
        rows.push(0);
        for j in 0..count {
            let km = crate::spectral::wave_at(2 * j, trunc);
            let k = km.k();
            for p1 in -n..=n {
                for p2 in -n..=n {
                    let q = [k[0] - p1, k[1] - p2];
                    if q[0].abs() > n || q[1].abs() > n {
                        continue;
                    }
                    if (p1 == 0 && p2 == 0) || (q[0] == 0 && q[1] == 0) {
                        continue;
                    }
                    let pi = box_index([p1, p2], trunc);
                    let qi = box_index(q, trunc);
                    // each unordered pair once
                    if pi >= qi {
                        continue;
                    }
                    let cross = (p1 * q[1] - p2 * q[0]) as f64;
                    let pp = (p1 * p1 + p2 * p2) as f64;
                    let qq = (q[0] * q[0] + q[1] * q[1]) as f64;
                    if cross == 0.0 || pp == qq {
                        continue;
                    }
                    let w = -cross * (qq - pp) / (pp * qq).sqrt();
                    triads.push(Triad {
                        p: pi as u32,
                        q: qi as u32,
                        w,
                    });
                }
            }
            rows.push(triads.len());
            out_scale.push(2.0 / (C2 * km.norm()));
        }
        Self {
            trunc,
            rows,
            triads,
            out_scale,
        }
    }

    pub fn trunc(&self) -> usize {
        self.trunc
    }

    pub fn triad_count(&self) -> usize {
        self.triads.len()
    }

    /// Complex amplitudes on the full `(2N+1)^2` box, `z_-k = -conj(z_k)`.
    fn amplitudes(&self, coeffs: &[f64], z: &mut Vec<(f64, f64)>) {
        let n = self.trunc;
        let w = 2 * n + 1;
        z.clear();
        z.resize(w * w, (0.0, 0.0));
        let half = -0.5 * C2;
        for j in 0..positive_count(n) {
            let a = coeffs[2 * j];
            let b = coeffs[2 * j + 1];
            let k = crate::spectral::wave_at(2 * j, n).k();
            let zk = (half * b, half * a);
            z[box_index(k, n)] = zk;
            z[box_index([-k[0], -k[1]], n)] = (-zk.0, zk.1);
        }
    }

    /// Write the coefficients of `Pi_N B(u, u)` into `out`.
    pub fn apply_into(&self, u: &[f64], out: &mut [f64], scratch: &mut Vec<(f64, f64)>) {
        self.amplitudes(u, scratch);
        let z = &scratch[..];
        for j in 0..self.out_scale.len() {
            let mut re = 0.0;
            let mut im = 0.0;
            for t in &self.triads[self.rows[j]..self.rows[j + 1]] {
                let (pr, pi) = z[t.p as usize];
                let (qr, qi) = z[t.q as usize];
                re += t.w * (pr * qr - pi * qi);
                im += t.w * (pr * qi + pi * qr);
            }
            let s = self.out_scale[j];
            out[2 * j] = s * re;
            out[2 * j + 1] = -s * im;
        }
    }

    pub fn apply(&self, u: &SpectralField) -> SpectralField {
        assert_eq!(u.trunc(), self.trunc, "kernel truncation mismatch");
        let mut out = SpectralField::zeros(self.trunc).expect("valid truncation");
        let mut scratch = Vec::new();
        self.apply_into(u.coeffs(), out.coeffs_mut(), &mut scratch);
        out
    }
}

/// One-off evaluation of `Pi_N B(u, u)`; integrators keep a [`GalerkinKernel`].
pub fn galerkin_nonlinearity(u: &SpectralField) -> SpectralField {
    GalerkinKernel::new(u.trunc()).apply(u)
}

/// `true` for shear modes `k = (k1, 0)` or `(0, k2)`.
pub fn is_shear(m: WaveIndex) -> bool {
    let [a, b] = m.k();
    a == 0 || b == 0
}
