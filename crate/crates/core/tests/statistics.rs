use torus_mix::dynamics::{FluidModel, Integrator, ModelKind, NoiseKind, NoiseSpec, VelocityState};
use torus_mix::rng::PathRng;
use torus_mix::spectral::{SpectralField, WaveIndex};
use torus_mix::tower::{OuTowerState, TowerSpec};

fn wi(a: i32, b: i32) -> WaveIndex {
    WaveIndex::new(a, b).unwrap()
}

fn sample_variance(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

#[test]
fn stokes_modes_reach_their_stationary_variance() {
    let model = FluidModel {
        kind: ModelKind::Stokes,
        nu: 1.0,
        trunc: 3,
        noise: NoiseSpec::white(2.5, NoiseSpec::low_modes(2)),
    };
    let probes = [wi(1, 0), wi(-1, 1), wi(2, 1), wi(3, 0)];
    let mut samples = vec![Vec::new(); probes.len()];
    let mut state = VelocityState::zeros(&model).unwrap();
    // exact in distribution, so a coarse step only thins the samples
    let mut integ = Integrator::new(&model, 0.5).unwrap();
    let mut rng = PathRng::velocity(17, 0);
    for step in 0..100_020 {
        integ.step(&mut state, &mut rng).unwrap();
        if step >= 20 {
            for (s, &m) in samples.iter_mut().zip(&probes) {
                s.push(state.field.get(m));
            }
        }
    }
    for (s, &m) in samples.iter().zip(&probes) {
        let expected = model.stokes_variance(m);
        if expected == 0.0 {
            assert!(s.iter().all(|&c| c == 0.0));
            continue;
        }
        let v = sample_variance(s);
        assert!((v / expected - 1.0).abs() < 0.05, "{m:?}: {v} vs {expected}");
    }
}

fn tower_model(depth: usize, gamma: f64) -> FluidModel {
    let mut tower = TowerSpec::chain(depth);
    tower.gamma = gamma;
    FluidModel {
        kind: ModelKind::OuTowerNse { nonlinear: false },
        nu: 0.05,
        trunc: 3,
        noise: NoiseSpec {
            alpha: 2.5,
            active: vec![wi(1, 0)],
            kind: NoiseKind::OuTower(tower),
        },
    }
}

#[test]
fn depth_zero_chain_has_unit_half_variance() {
    let model = tower_model(0, 1.0);
    let mut state = VelocityState::zeros(&model).unwrap();
    let mut integ = Integrator::new(&model, 1.0).unwrap();
    let mut rng = PathRng::velocity(3, 0);
    let mut z = Vec::new();
    for step in 0..100_010 {
        integ.step(&mut state, &mut rng).unwrap();
        if step >= 10 {
            z.push(state.tower.as_ref().unwrap().get(0, 0));
        }
    }
    let v = sample_variance(&z);
    assert!((v / 0.5 - 1.0).abs() < 0.05, "variance {v}");
}

/// `u' = -a u + q Z0`, `Z0' = -Z0 + Z1`, `Z1' = -2 Z1` integrated by hand.
fn depth_one_solution(a: f64, q: f64, u0: f64, z0: f64, z1: f64, t: f64) -> f64 {
    // Z0(s) = (z0 + z1) e^{-s} - z1 e^{-2s}
    let conv = |b: f64| ((-b * t).exp() - (-a * t).exp()) / (a - b);
    (-a * t).exp() * u0 + q * ((z0 + z1) * conv(1.0) - z1 * conv(2.0))
}

#[test]
fn linear_chain_matches_closed_form() {
    let model = tower_model(1, 0.0);
    let m = wi(1, 0);
    let mut field = SpectralField::zeros(3).unwrap();
    field.set(m, 0.4).unwrap();
    let mut tower = OuTowerState::zeros(1, 1);
    tower.set(0, 0, 0.7);
    tower.set(0, 1, -1.3);
    let mut state = VelocityState {
        field,
        tower: Some(tower),
    };
    let dt = 1e-3;
    let mut integ = Integrator::new(&model, dt).unwrap();
    let mut rng = PathRng::velocity(0, 0);
    let a = model.nu * m.norm_sq();
    let q = model.noise.amplitude(m);
    for step in 1..=1000 {
        integ.step(&mut state, &mut rng).unwrap();
        let exact = depth_one_solution(a, q, 0.4, 0.7, -1.3, step as f64 * dt);
        assert!((state.field.get(m) - exact).abs() < 1e-4, "t={}", step as f64 * dt);
    }
}

#[test]
fn silent_tower_leaves_pure_viscous_decay() {
    let model = tower_model(2, 0.0);
    let u0 = SpectralField::from_fn(3, |m| 1.0 / m.norm()).unwrap();
    let mut state = VelocityState::new(&model, u0.clone()).unwrap();
    let mut integ = Integrator::new(&model, 0.01).unwrap();
    let mut rng = PathRng::velocity(0, 0);
    for _ in 0..100 {
        integ.step(&mut state, &mut rng).unwrap();
    }
    for (m, c) in state.field.modes() {
        let exact = u0.get(m) * (-model.nu * m.norm_sq()).exp();
        assert!((c - exact).abs() < 1e-12);
    }
}

/// `E |u_1|^2` at `dt` and `dt/2` with the Brownian increments shared.
#[test]
fn halving_the_step_changes_mean_energy_by_under_two_percent() {
    let model = FluidModel {
        kind: ModelKind::GalerkinNse,
        nu: 0.05,
        trunc: 6,
        noise: NoiseSpec::white(2.5, NoiseSpec::low_modes(2)),
    };
    let dt = 0.01;
    let mut coarse = Integrator::new(&model, dt).unwrap();
    let mut fine = Integrator::new(&model, dt / 2.0).unwrap();
    let quarter = fine.half_propagator().unwrap().clone();
    let d: Vec<f64> = quarter.active_slots().iter().map(|&i| quarter.decay()[i]).collect();
    let paths = 200;
    let (mut e_coarse, mut e_fine) = (0.0, 0.0);
    let mut xi: [Vec<f64>; 4] = Default::default();
    for p in 0..paths {
        let mut rng = PathRng::velocity(5, p);
        let mut uc = SpectralField::zeros(6).unwrap();
        let mut uf = uc.clone();
        for _ in 0..100 {
            for x in xi.iter_mut() {
                quarter.draw(&mut rng, x);
            }
            fine.galerkin_step_with(&mut uf, &xi[0], &xi[1]).unwrap();
            fine.galerkin_step_with(&mut uf, &xi[2], &xi[3]).unwrap();
            let first: Vec<f64> = (0..d.len()).map(|j| d[j] * xi[0][j] + xi[1][j]).collect();
            let second: Vec<f64> = (0..d.len()).map(|j| d[j] * xi[2][j] + xi[3][j]).collect();
            coarse.galerkin_step_with(&mut uc, &first, &second).unwrap();
        }
        e_coarse += uc.l2_norm().powi(2) / paths as f64;
        e_fine += uf.l2_norm().powi(2) / paths as f64;
    }
    let rel = (e_coarse - e_fine).abs() / e_fine;
    assert!(rel < 0.02, "coarse {e_coarse} fine {e_fine}");
}
