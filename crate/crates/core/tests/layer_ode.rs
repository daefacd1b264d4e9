use layerlab::chain::{default_grid_points, AnsatzFields, ChainModel, LayerConfig};
use layerlab::heteroclinic::ConnectionOptions;
use layerlab::layer_ode::*;
use layerlab::potential::Potential;
use proptest::prelude::*;
use std::sync::OnceLock;

const SQRT2: f64 = std::f64::consts::SQRT_2;

fn double_chain() -> ChainModel {
    static C: OnceLock<ChainModel> = OnceLock::new();
    C.get_or_init(|| ChainModel::assemble(&Potential::double_well(), &[0, 1], &ConnectionOptions::default()).unwrap())
        .clone()
}

fn triple_chain() -> ChainModel {
    static C: OnceLock<ChainModel> = OnceLock::new();
    C.get_or_init(|| ChainModel::assemble(&Potential::triple_well(), &[0, 1, 2, 1], &ConnectionOptions::default()).unwrap())
        .clone()
}

fn dihedral_chain() -> ChainModel {
    static C: OnceLock<ChainModel> = OnceLock::new();
    C.get_or_init(|| {
        ChainModel::assemble(&Potential::dihedral(3, 8.0).unwrap(), &[0, 1, 2], &ConnectionOptions::default()).unwrap()
    })
    .clone()
}

fn cfg(gaps: &[f64], eps: f64, rho: f64) -> LayerConfig {
    LayerConfig::from_gaps(0.1, gaps, eps, rho).unwrap()
}

#[test]
fn equal_gaps_are_stationary() {
    let chain = double_chain();
    let v = rhs(&chain, &cfg(&[0.5, 0.5], 0.05, 0.05)).unwrap();
    let scale = 0.1 / chain.qbar2[0] * chain.k[0] * (-SQRT2 * 10.0).exp();
    assert!(v.iter().all(|x| x.abs() < 1e-9 * scale));
}

#[test]
fn two_layer_hand_value() {
    let chain = double_chain();
    let eps = 0.05;
    let v = rhs(&chain, &cfg(&[0.4, 0.6], eps, 0.05)).unwrap();
    let (e1, e2) = ((-SQRT2 * 0.4 / eps).exp(), (-SQRT2 * 0.6 / eps).exp());
    let hand = 2.0 * eps / (2.0 * SQRT2 / 3.0) * 8.0 * (e2 - e1);
    assert!((v[0] - hand).abs() < 1e-3 * hand.abs());
    // the short plateau (gap 0) closes from both sides
    assert!(v[0] < 0.0 && v[1] > 0.0);
}

#[test]
fn outside_admissible_set_is_rejected() {
    let chain = double_chain();
    assert!(matches!(rhs(&chain, &cfg(&[0.02, 0.98], 0.05, 0.1)), Err(layerlab::Error::Domain(_))));
}

fn fd_gradient(chain: &ChainModel, c: &LayerConfig) -> Vec<f64> {
    let d = 1e-5 * c.eps;
    (0..c.len())
        .map(|j| {
            let mut p = c.clone();
            let mut m = c.clone();
            p.xi[j] += d;
            m.xi[j] -= d;
            let ip = reduced_energy(chain, &p).unwrap().interaction;
            let im = reduced_energy(chain, &m).unwrap().interaction;
            (ip - im) / (2.0 * d)
        })
        .collect()
}

fn check_gradient_identity(chain: &ChainModel, c: &LayerConfig) -> f64 {
    let grad = fd_gradient(chain, c);
    let v = rhs(chain, c).unwrap();
    let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    (0..c.len()).map(|j| (chain.qbar2[j] * v[j] + grad[j]).abs()).fold(0.0, f64::max) / scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn gradient_structure_double(g in 0.15f64..0.85, eps in 0.02f64..0.08) {
        let chain = double_chain();
        let err = check_gradient_identity(&chain, &cfg(&[g, 1.0 - g], eps, 0.05));
        prop_assert!(err < 1e-6, "relative error {err:e}");
    }

    #[test]
    fn gradient_structure_triple(w in proptest::collection::vec(0.5f64..1.5, 4), eps in 0.02f64..0.06) {
        let chain = triple_chain();
        let err = check_gradient_identity(&chain, &cfg(&w, eps, 0.02));
        prop_assert!(err < 1e-6, "relative error {err:e}");
    }

    #[test]
    fn gradient_structure_dihedral(w in proptest::collection::vec(0.5f64..1.5, 3), eps in 0.02f64..0.08) {
        let chain = dihedral_chain();
        let err = check_gradient_identity(&chain, &cfg(&w, eps, 0.05));
        prop_assert!(err < 1e-6, "relative error {err:e}");
    }
}

#[test]
fn energy_limits_and_unsupported_case() {
    let chain = double_chain();
    let e = reduced_energy(&chain, &cfg(&[0.5, 0.5], 0.01, 0.05)).unwrap();
    assert_eq!(e.base, 0.01 * (chain.qbar2[0] + chain.qbar2[1]));
    assert!(e.interaction.abs() < 1e-30);
    let mut bent = chain.connections.clone();
    bent[1].right.z = vec![0.5];
    let bent = ChainModel::from_connections(chain.potential(), &chain.sequence, bent).unwrap();
    assert!(matches!(reduced_energy(&bent, &cfg(&[0.5, 0.5], 0.05, 0.05)), Err(layerlab::Error::Unsupported(_))));
}

#[test]
fn reduced_energy_tracks_ansatz_energy() {
    let chain = double_chain();
    let eps = 0.02;
    let c = cfg(&[0.5, 0.5], eps, 0.05);
    let j0 = reduced_energy(&chain, &c).unwrap().total();
    let ju = AnsatzFields::new(&chain, &c, default_grid_points(eps, 2)).unwrap().u.energy(chain.potential());
    assert!((j0 - ju).abs() < 0.1 * ju);
}

#[test]
fn repulsive_stationary_point_is_a_minimum_of_j0() {
    let chain = dihedral_chain();
    let eps = 0.05;
    let third = 1.0 / 3.0;
    let energy = |g: [f64; 3]| reduced_energy(&chain, &cfg(&g, eps, 0.05)).unwrap().interaction;
    let d = 1e-3;
    // second differences along two independent directions of the simplex
    for dir in [[1.0, -1.0, 0.0], [1.0, 1.0, -2.0]] {
        let p = [third + d * dir[0], third + d * dir[1], third + d * dir[2]];
        let m = [third - d * dir[0], third - d * dir[1], third - d * dir[2]];
        let second = energy(p) - 2.0 * energy([third; 3]) + energy(m);
        assert!(second > 0.0);
    }
}

#[test]
fn stationary_trajectory_stays_put() {
    let chain = double_chain();
    let c = cfg(&[0.5, 0.5], 0.05, 0.05);
    let tr = integrate(&chain, &c, 1e4, &OdeOptions::default()).unwrap();
    assert!(!tr.collided);
    let last = tr.states.last().unwrap();
    for j in 0..2 {
        assert!((last.xi[j] - c.xi[j]).abs() < 1e-12);
    }
}

#[test]
fn attraction_ends_in_collision_and_energy_decreases() {
    let chain = double_chain();
    let c = cfg(&[0.3, 0.7], 0.05, chain.default_rho());
    let tr = integrate(&chain, &c, 1e6, &OdeOptions::default()).unwrap();
    assert!(tr.collided);
    assert_eq!(tr.collision_gap, Some(0));
    let last = tr.states.last().unwrap();
    assert!((last.gaps[0] - chain.default_rho() / chain.mu[0]).abs() < 1e-6);
    let energies: Vec<f64> = tr.states.iter().map(|s| s.energy.unwrap().interaction).collect();
    assert!(energies.windows(2).all(|w| w[1] <= w[0] + 1e-14 * w[0].abs()));
    assert!(tr.states.windows(2).all(|w| w[1].gaps[0] < w[0].gaps[0]));
}

#[test]
fn doubling_couplings_halves_the_time() {
    let chain = double_chain();
    let c = cfg(&[0.3, 0.7], 0.05, chain.default_rho());
    let t1 = integrate(&chain, &c, 1e6, &OdeOptions::default()).unwrap().states.last().unwrap().t;
    let mut fast = chain.clone();
    fast.k.iter_mut().for_each(|k| *k *= 2.0);
    let t2 = integrate(&fast, &c, 1e6, &OdeOptions::default()).unwrap().states.last().unwrap().t;
    assert!((t2 / t1 - 0.5).abs() < 1e-6, "{t1} {t2}");
}

#[test]
fn output_times_are_hit_exactly() {
    let chain = double_chain();
    let c = cfg(&[0.35, 0.65], 0.05, chain.default_rho());
    let times = [0.0, 1.0, 2.5, 10.0];
    let tr = integrate_at(&chain, &c, &times, &OdeOptions::default()).unwrap();
    let got: Vec<f64> = tr.states.iter().map(|s| s.t).collect();
    assert_eq!(got, times.to_vec());
}

#[test]
fn triple_well_mixed_signs() {
    let chain = triple_chain();
    let c = cfg(&[0.3, 0.2, 0.3, 0.2], 0.03, 0.02);
    let v = rhs(&chain, &c).unwrap();
    let gap_rate: Vec<f64> = (0..4).map(|j| v[j] - v[(j + 3) % 4]).collect();
    // repulsion at the 0-plateaus (gaps 1 and 3), those gaps grow
    assert!(gap_rate[1] > 0.0 && gap_rate[3] > 0.0);
}
