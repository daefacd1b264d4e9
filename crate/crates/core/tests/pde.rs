use layerlab::chain::{default_grid_points, AnsatzFields, ChainModel, LayerConfig};
use layerlab::grid::GridFunction;
use layerlab::heteroclinic::ConnectionOptions;
use layerlab::pde::*;
use layerlab::potential::Potential;
use layerlab::reduction::{solve_bifurcation, BifurcationOptions};
use layerlab::tracking::ProjectOptions;
use layerlab::Error;
use std::f64::consts::PI;

fn cosine(n: usize, eps: f64, base: f64, amp: f64, k: f64) -> GridFunction {
    GridFunction::from_fn(n, 1, eps, |x, out| out[0] = base + amp * (2.0 * PI * k * x).cos())
}

#[test]
fn minima_are_exact_fixed_points() {
    let pot = Potential::double_well();
    let u = GridFunction::from_fn(256, 1, 0.05, |_, out| out[0] = 1.0);
    let out = run(&pot, u.clone(), &PdeOptions::default(), &RunOptions { t_end: 5.0, ..Default::default() }, &mut [])
        .unwrap();
    // exact up to rounding in the periodic solves
    assert!(out.state.u.sub(&u).max_abs() < 1e-13);
    assert_eq!(out.exit, ExitReason::Completed);
}

#[test]
fn linear_decay_rate_of_a_plateau_mode() {
    // u = 1 + d cos(2 pi k x) decays like exp(-lambda t) with the discrete symbol
    let pot = Potential::double_well();
    let (n, eps, k, d) = (128, 0.05, 3.0, 1e-7);
    let u = cosine(n, eps, 1.0, d, k);
    let h = 1.0 / n as f64;
    let symbol = 4.0 / (h * h) * (PI * k * h).sin().powi(2);
    let lambda = 2.0 + eps * eps * symbol;
    let opts = PdeOptions { dt: Some(0.01), ..Default::default() };
    let out = run(&pot, u, &opts, &RunOptions { t_end: 1.0, ..Default::default() }, &mut []).unwrap();
    let amp = 2.0 * out.state.u.values().iter().enumerate().map(|(i, v)| (v - 1.0) * (2.0 * PI * k * i as f64 * h).cos()).sum::<f64>() / n as f64;
    let expected = d * (-lambda).exp();
    assert!((amp / expected - 1.0).abs() < 1e-3, "{amp:e} vs {expected:e}");
}

#[test]
fn energy_never_increases_and_dissipates_at_the_right_rate() {
    let pot = Potential::double_well();
    let (n, eps) = (512, 0.04);
    let u = GridFunction::from_fn(n, 1, eps, |x, out| {
        out[0] = 0.3 * (2.0 * PI * x).sin() + 0.2 * (6.0 * PI * x + 0.4).cos() - 0.05
    });
    let every = 0.01;
    let opts = PdeOptions { dt: Some(1e-3), ..Default::default() };
    let mut snaps = Recorder::default();
    let out = run(&pot, u, &opts, &RunOptions { t_end: 2.0, snapshot_every: every, ..Default::default() }, &mut [&mut snaps])
        .unwrap();
    assert!(out.max_energy_increase <= 1e-12);
    assert!(out.energies.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12));
    // dJ/dt = -|u_t|^2 at the midpoint of two snapshots
    for i in (10..snaps.states.len() - 1).step_by(37) {
        let (a, b) = (&snaps.states[i], &snaps.states[i + 1]);
        let rate = (b.1.energy(&pot) - a.1.energy(&pot)) / (b.0 - a.0);
        let mut mid = a.1.clone();
        mid.axpy(1.0, &b.1);
        mid.scale(0.5);
        let ut = mid.discrete_residual(&pot).norm();
        assert!((rate + ut * ut).abs() < 1e-3 * ut * ut, "t={} {rate:e} vs {:e}", a.0, -ut * ut);
    }
}

#[derive(Default)]
struct Recorder {
    states: Vec<(f64, GridFunction)>,
}

impl Observer for Recorder {
    fn observe(&mut self, state: &PdeState) -> layerlab::Result<Control> {
        self.states.push((state.t, state.u.clone()));
        Ok(Control::Continue)
    }
}

#[test]
fn oversized_steps_are_halved() {
    let pot = Potential::double_well();
    let u = cosine(256, 0.05, 0.0, 0.9, 2.0);
    let opts = PdeOptions { dt: Some(20.0), ..Default::default() };
    let out = run(&pot, u, &opts, &RunOptions { t_end: 40.0, snapshot_every: 40.0, ..Default::default() }, &mut []).unwrap();
    assert!(out.rejected > 0);
    assert!(out.max_energy_increase <= 1e-12);

    let u = cosine(256, 0.05, 0.0, 0.9, 2.0);
    let opts = PdeOptions { dt: Some(20.0), min_dt: 15.0, ..Default::default() };
    let err = run(&pot, u, &opts, &RunOptions { t_end: 40.0, snapshot_every: 40.0, ..Default::default() }, &mut []);
    assert!(matches!(err, Err(Error::Stiffness { .. })));
}

#[test]
fn snapshot_times_are_exact() {
    let pot = Potential::double_well();
    let u = cosine(128, 0.05, 0.1, 0.5, 1.0);
    let opts = PdeOptions { dt: Some(0.013), ..Default::default() };
    let out = run(&pot, u, &opts, &RunOptions { t_end: 0.5, snapshot_every: 0.1, keep_snapshots: true, ..Default::default() }, &mut [])
        .unwrap();
    let times: Vec<f64> = out.snapshots.iter().map(|s| s.0).collect();
    let want = [0.0, 0.1, 0.2, 0.30000000000000004, 0.4, 0.5];
    assert_eq!(times.len(), want.len());
    for (a, b) in times.iter().zip(want) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn stationary_layers_do_not_drift() {
    let chain = ChainModel::assemble(&Potential::double_well(), &[0, 1], &ConnectionOptions::default()).unwrap();
    let b = solve_bifurcation(&chain, 0.05, &BifurcationOptions::default()).unwrap();
    let u0 = b.u.clone();
    let out = run(chain.potential(), u0.clone(), &PdeOptions::default(), &RunOptions { t_end: 1.0, ..Default::default() }, &mut [])
        .unwrap();
    assert!(out.state.u.sub(&u0).max_abs() < 1e-6);
}

#[test]
fn layer_observer_reports_collision() {
    let chain = ChainModel::assemble(&Potential::double_well(), &[0, 1], &ConnectionOptions::default()).unwrap();
    let eps = 0.05;
    let rho = chain.default_rho();
    let cfg = LayerConfig::from_gaps(0.2, &[0.25, 0.75], eps, rho).unwrap();
    let u = AnsatzFields::new(&chain, &cfg, default_grid_points(eps, 2)).unwrap().u;
    let mut obs = LayerObserver::new(&chain, Some(cfg), rho, ProjectOptions::default());
    let out = run(chain.potential(), u, &PdeOptions::default(), &RunOptions { t_end: 1e4, snapshot_every: 1.0, ..Default::default() }, &mut [&mut obs])
        .unwrap();
    assert!(matches!(&out.exit, ExitReason::Stopped(why) if why.contains("gap 0")), "{:?}", out.exit);
    let tr = obs.trajectory();
    assert!(tr.samples.windows(2).take(20).all(|w| w[1].gaps[0] < w[0].gaps[0]));
}

#[test]
fn bad_inputs() {
    let pot = Potential::double_well();
    let u = GridFunction::zeros(2, 1, 0.05);
    assert!(matches!(Stepper::new(&pot, &u, &PdeOptions::default()), Err(Error::InvalidInput(_))));
    let u = GridFunction::zeros(64, 2, 0.05);
    assert!(matches!(Stepper::new(&pot, &u, &PdeOptions::default()), Err(Error::InvalidInput(_))));
    let mut u = GridFunction::zeros(64, 1, 0.05);
    u.values_mut()[3] = f64::NAN;
    assert!(matches!(Stepper::new(&pot, &u, &PdeOptions::default()), Err(Error::NonFinite(_))));
}
