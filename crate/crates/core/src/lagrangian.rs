//! Tracers, tangent directions and tracer pairs advected by a velocity path.
//!
//! The velocity is held frozen over each solver step: a tracer step over
//! `[t, t + dt]` uses the field the integrator produced at `t`, and only then
//! is the velocity advanced. All ODEs below are integrated with classical RK4.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{FieldEvaluator, Point, SpectralField};

const TAU: f64 = 2.0 * PI;

/// Pairs closer than this are treated as coincident.
pub const COINCIDENCE_TOL: f64 = 1e-13;

/// Map a coordinate into `(-pi, pi]`.
pub fn wrap(x: f64) -> f64 {
    if x > -PI && x <= PI {
        return x;
    }
    let r = (x + PI).rem_euclid(TAU) - PI;
    if r == -PI {
        PI
    } else {
        r
    }
}

pub fn wrap_point(x: Point) -> Point {
    [wrap(x[0]), wrap(x[1])]
}

/// Minimal-norm representative of `y - x` modulo `2 pi Z^2`.
pub fn shortest_displacement(x: Point, y: Point) -> [f64; 2] {
    [wrap(y[0] - x[0]), wrap(y[1] - x[1])]
}

fn add(x: Point, h: f64, k: [f64; 2]) -> Point {
    [x[0] + h * k[0], x[1] + h * k[1]]
}

fn mat_vec(a: &[[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

fn rk4_combine(k: [[f64; 2]; 4]) -> [f64; 2] {
    [
        (k[0][0] + 2.0 * k[1][0] + 2.0 * k[2][0] + k[3][0]) / 6.0,
        (k[0][1] + 2.0 * k[1][1] + 2.0 * k[2][1] + k[3][1]) / 6.0,
    ]
}

/// One RK4 step of `x' = u(x)`, unwrapped.
fn flow_rk4(ev: &FieldEvaluator, x: Point, dt: f64) -> Point {
    let k1 = ev.velocity(x);
    let k2 = ev.velocity(add(x, 0.5 * dt, k1));
    let k3 = ev.velocity(add(x, 0.5 * dt, k2));
    let k4 = ev.velocity(add(x, dt, k3));
    add(x, dt, rk4_combine([k1, k2, k3, k4]))
}

/// Advance a tracer by `dt` in the frozen field and wrap it to the torus.
pub fn flow_step_with(ev: &FieldEvaluator, x: Point, dt: f64) -> Point {
    if ev.is_zero() {
        return x;
    }
    wrap_point(flow_rk4(ev, x, dt))
}

pub fn flow_step(x: Point, u: &SpectralField, dt: f64) -> Point {
    flow_step_with(&u.evaluator(), x, dt)
}

/// Representative of `{v, -v}` whose first nonzero component is positive.
pub fn canonical_direction(v: [f64; 2]) -> [f64; 2] {
    if v[0] < 0.0 || (v[0] == 0.0 && v[1] < 0.0) {
        [-v[0], -v[1]]
    } else {
        v
    }
}

/// Tracer position, projective tangent direction and accumulated log-stretch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracerBundle {
    pub x: Point,
    pub v: [f64; 2],
    pub rho: f64,
}

impl TracerBundle {
    /// Normalises `v` and wraps `x`; `v` must be nonzero.
    pub fn new(x: Point, v: [f64; 2]) -> Result<Self> {
        let n = v[0].hypot(v[1]);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidParameter("tangent direction must be a nonzero vector".into()));
        }
        Ok(Self {
            x: wrap_point(x),
            v: canonical_direction([v[0] / n, v[1] / n]),
            rho: 0.0,
        })
    }

    /// Tracer at `x` with direction at angle `theta`.
    pub fn at_angle(x: Point, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self::new(x, [c, s]).expect("unit vector")
    }

    /// One RK4 step of the joint `(x, v, rho)` system.
    pub fn step(&mut self, ev: &FieldEvaluator, dt: f64) {
        if ev.is_zero() {
            return;
        }
        // state: x (2), v (2), rho (1)
        let rhs = |x: Point, v: [f64; 2]| -> ([f64; 2], [f64; 2], f64) {
            let (u, du) = ev.velocity_jacobian(x);
            let a = mat_vec(&du, v);
            let h = v[0] * a[0] + v[1] * a[1];
            (u, [a[0] - h * v[0], a[1] - h * v[1]], h)
        };
        let (x0, v0) = (self.x, self.v);
        let (kx1, kv1, kr1) = rhs(x0, v0);
        let (kx2, kv2, kr2) = rhs(add(x0, 0.5 * dt, kx1), add(v0, 0.5 * dt, kv1));
        let (kx3, kv3, kr3) = rhs(add(x0, 0.5 * dt, kx2), add(v0, 0.5 * dt, kv2));
        let (kx4, kv4, kr4) = rhs(add(x0, dt, kx3), add(v0, dt, kv3));
        let x = add(x0, dt, rk4_combine([kx1, kx2, kx3, kx4]));
        let v = add(v0, dt, rk4_combine([kv1, kv2, kv3, kv4]));
        let n = v[0].hypot(v[1]);
        self.x = wrap_point(x);
        self.v = canonical_direction([v[0] / n, v[1] / n]);
        self.rho += dt * (kr1 + 2.0 * kr2 + 2.0 * kr3 + kr4) / 6.0;
    }
}

pub fn projective_step(b: TracerBundle, u: &SpectralField, dt: f64) -> TracerBundle {
    let mut out = b;
    out.step(&u.evaluator(), dt);
    out
}

/// Tracer carrying the full 2x2 tangent matrix `D_x phi^t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TangentFlow {
    pub x: Point,
    /// `jac[i][j] = d phi_i / d x_j`.
    pub jac: [[f64; 2]; 2],
}

impl TangentFlow {
    pub fn new(x: Point) -> Self {
        Self {
            x: wrap_point(x),
            jac: [[1.0, 0.0], [0.0, 1.0]],
        }
    }

    /// RK4 step of `x' = u(x)`, `J' = Du(x) J`.
    pub fn step(&mut self, ev: &FieldEvaluator, dt: f64) {
        if ev.is_zero() {
            return;
        }
        let rhs = |x: Point, j: [[f64; 2]; 2]| -> ([f64; 2], [[f64; 2]; 2]) {
            let (u, du) = ev.velocity_jacobian(x);
            let mut dj = [[0.0; 2]; 2];
            for r in 0..2 {
                for c in 0..2 {
                    dj[r][c] = du[r][0] * j[0][c] + du[r][1] * j[1][c];
                }
            }
            (u, dj)
        };
        let madd = |j: [[f64; 2]; 2], h: f64, k: [[f64; 2]; 2]| {
            [
                [j[0][0] + h * k[0][0], j[0][1] + h * k[0][1]],
                [j[1][0] + h * k[1][0], j[1][1] + h * k[1][1]],
            ]
        };
        let (x0, j0) = (self.x, self.jac);
        let (kx1, kj1) = rhs(x0, j0);
        let (kx2, kj2) = rhs(add(x0, 0.5 * dt, kx1), madd(j0, 0.5 * dt, kj1));
        let (kx3, kj3) = rhs(add(x0, 0.5 * dt, kx2), madd(j0, 0.5 * dt, kj2));
        let (kx4, kj4) = rhs(add(x0, dt, kx3), madd(j0, dt, kj3));
        self.x = wrap_point(add(x0, dt, rk4_combine([kx1, kx2, kx3, kx4])));
        for r in 0..2 {
            for c in 0..2 {
                self.jac[r][c] += dt * (kj1[r][c] + 2.0 * kj2[r][c] + 2.0 * kj3[r][c] + kj4[r][c]) / 6.0;
            }
        }
    }

    pub fn det(&self) -> f64 {
        self.jac[0][0] * self.jac[1][1] - self.jac[0][1] * self.jac[1][0]
    }

    pub fn apply(&self, w: [f64; 2]) -> [f64; 2] {
        mat_vec(&self.jac, w)
    }
}

/// Two tracers in the same velocity realisation, off the diagonal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPointState {
    pub x: Point,
    pub y: Point,
    pub w: [f64; 2],
}

impl TwoPointState {
    pub fn new(x: Point, y: Point) -> Result<Self> {
        let x = wrap_point(x);
        let y = wrap_point(y);
        let w = shortest_displacement(x, y);
        let d = w[0].hypot(w[1]);
        if d < COINCIDENCE_TOL {
            return Err(Error::DegenerateTwoPoint(d));
        }
        Ok(Self { x, y, w })
    }

    pub fn distance(&self) -> f64 {
        self.w[0].hypot(self.w[1])
    }

    pub fn step(&mut self, ev: &FieldEvaluator, dt: f64) -> Result<()> {
        *self = Self::new(flow_step_with(ev, self.x, dt), flow_step_with(ev, self.y, dt))?;
        Ok(())
    }
}

pub fn two_point_step(s: TwoPointState, u: &SpectralField, dt: f64) -> Result<TwoPointState> {
    let mut out = s;
    out.step(&u.evaluator(), dt)?;
    Ok(out)
}

/// Writes tracer rows `t,x1,x2,v1,v2,rho`.
pub struct TracerCsv<W: Write> {
    out: W,
}

impl<W: Write> TracerCsv<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "t,x1,x2,v1,v2,rho")?;
        Ok(Self { out })
    }

    /// Continue a file that already has its header.
    pub fn resume(out: W) -> Self {
        Self { out }
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }

    pub fn row(&mut self, t: f64, b: &TracerBundle) -> std::io::Result<()> {
        writeln!(
            self.out,
            "{},{},{},{},{},{}",
            t, b.x[0], b.x[1], b.v[0], b.v[1], b.rho
        )
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}
