use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use torus_mix::dynamics::{FluidModel, Integrator, ModelKind, NoiseSpec, VelocityState};
use torus_mix::lagrangian::{shortest_displacement, wrap_point, TangentFlow, TracerBundle};
use torus_mix::nonlinear::galerkin_nonlinearity;
use torus_mix::spectral::{basis_eval, mode_count, wave_at, SpectralField, WaveIndex};

fn random_field(n: usize, seed: u64) -> SpectralField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = SpectralField::from_fn(n, |m| rng.random_range(-1.0..1.0) / m.norm()).unwrap();
    let norm = u.l2_norm();
    u.scale(1.0 / norm);
    u
}

fn grid_points(n: usize) -> impl Iterator<Item = [f64; 2]> {
    let h = 2.0 * PI / n as f64;
    (0..n * n).map(move |i| [-PI + (i / n) as f64 * h, -PI + (i % n) as f64 * h])
}

#[test]
fn parseval_on_a_64_grid() {
    let h = 2.0 * PI / 64.0;
    for n in [2, 5, 8] {
        let u = random_field(n, n as u64);
        let ev = u.evaluator();
        let quad: f64 = grid_points(64)
            .map(|x| {
                let v = ev.velocity(x);
                v[0] * v[0] + v[1] * v[1]
            })
            .sum::<f64>()
            * h
            * h;
        assert!((quad - u.l2_norm().powi(2)).abs() < 1e-8, "N={n}: {quad}");
    }
}

#[test]
fn basis_is_orthonormal() {
    let n = 4;
    let h = 2.0 * PI / 64.0;
    let pts: Vec<[f64; 2]> = grid_points(64).collect();
    let values: Vec<Vec<[f64; 2]>> = (0..mode_count(n))
        .map(|i| pts.iter().map(|&x| basis_eval(wave_at(i, n), x)).collect())
        .collect();
    for a in 0..values.len() {
        for b in a..values.len() {
            let ip: f64 = values[a]
                .iter()
                .zip(&values[b])
                .map(|(p, q)| p[0] * q[0] + p[1] * q[1])
                .sum::<f64>()
                * h
                * h;
            let expected = if a == b { 1.0 } else { 0.0 };
            assert!((ip - expected).abs() < 1e-8, "{:?} {:?}: {ip}", wave_at(a, n), wave_at(b, n));
        }
    }
}

#[test]
fn fields_are_divergence_free_and_mean_zero() {
    let u = random_field(6, 1);
    let ev = u.evaluator();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let x = [rng.random_range(-PI..PI), rng.random_range(-PI..PI)];
        let (_, du) = ev.velocity_jacobian(x);
        assert!((du[0][0] + du[1][1]).abs() < 1e-13);
    }
    let mut mean = [0.0; 2];
    for x in grid_points(32) {
        let v = ev.velocity(x);
        mean[0] += v[0];
        mean[1] += v[1];
    }
    assert!(mean[0].abs() < 1e-11 && mean[1].abs() < 1e-11);
}

#[test]
fn inviscid_unforced_galerkin_conserves_energy() {
    let model = FluidModel {
        kind: ModelKind::GalerkinNse,
        nu: 1e-300,
        trunc: 6,
        noise: NoiseSpec::white(2.5, Vec::new()),
    };
    let u0 = random_field(6, 4);
    let e0 = u0.l2_norm();
    let mut state = VelocityState::new(&model, u0).unwrap();
    let mut integ = Integrator::new(&model, 1e-4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..10_000 {
        integ.step(&mut state, &mut rng).unwrap();
    }
    let drift = (state.field.l2_norm() - e0).abs();
    assert!(drift < 1e-6, "drift {drift}");
    // the field did move
    assert!(galerkin_nonlinearity(&state.field).l2_norm() > 1e-3);
}

#[test]
fn unit_direction_and_volume_over_unit_time() {
    let u = random_field(8, 2);
    let ev = u.evaluator();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..8 {
        let x = [rng.random_range(-PI..PI), rng.random_range(-PI..PI)];
        let mut b = TracerBundle::at_angle(x, rng.random_range(0.0..PI));
        let mut tf = TangentFlow::new(x);
        for _ in 0..1000 {
            b.step(&ev, 1e-3);
            tf.step(&ev, 1e-3);
            assert!((b.v[0].hypot(b.v[1]) - 1.0).abs() <= 1e-10);
        }
        assert!((tf.det() - 1.0).abs() <= 1e-4);
    }
}

proptest! {
    #[test]
    fn nonlinearity_is_energy_neutral(seed in any::<u64>(), n in 3usize..=8) {
        let u = random_field(n, seed);
        let b = galerkin_nonlinearity(&u);
        prop_assert!(u.inner(&b).abs() <= 1e-12);
    }

    #[test]
    fn sobolev_norm_axioms(seed in any::<u64>(), s in -2.0f64..3.0, a in -5.0f64..5.0) {
        let u = random_field(4, seed);
        let v = random_field(4, seed.wrapping_add(1));
        let mut w = u.clone();
        w.axpy(1.0, &v);
        prop_assert!(w.sobolev_norm(s) <= u.sobolev_norm(s) + v.sobolev_norm(s) + 1e-12);
        let mut au = u.clone();
        au.scale(a);
        prop_assert!((au.sobolev_norm(s) - a.abs() * u.sobolev_norm(s)).abs() <= 1e-12 * (1.0 + a.abs() * u.sobolev_norm(s)));
    }

    #[test]
    fn displacement_is_minimal(x1 in -10.0f64..10.0, x2 in -10.0f64..10.0, y1 in -10.0f64..10.0, y2 in -10.0f64..10.0) {
        let x = wrap_point([x1, x2]);
        let y = wrap_point([y1, y2]);
        let w = shortest_displacement(x, y);
        prop_assert!(w[0].abs() <= PI && w[1].abs() <= PI);
        for i in 0..2 {
            let k = (y[i] - x[i] - w[i]) / (2.0 * PI);
            prop_assert!((k - k.round()).abs() < 1e-9);
        }
        prop_assert_eq!(shortest_displacement(x, y), w);
    }

    #[test]
    fn basis_fields_are_divergence_free(k1 in -6i32..=6, k2 in -6i32..=6, x1 in -PI..PI, x2 in -PI..PI) {
        prop_assume!(k1 != 0 || k2 != 0);
        let m = WaveIndex::new(k1, k2).unwrap();
        let u = SpectralField::single(6, m, 1.0).unwrap();
        let (v, du) = u.evaluator().velocity_jacobian([x1, x2]);
        prop_assert!((du[0][0] + du[1][1]).abs() < 1e-13);
        let e = basis_eval(m, [x1, x2]);
        prop_assert!((v[0] - e[0]).abs() < 1e-14 && (v[1] - e[1]).abs() < 1e-14);
    }
}
