use layerlab::heteroclinic::{connection_spectrum, solve_connection, ConnectionOptions, Heteroclinic};
use layerlab::potential::Potential;

const SQRT2: f64 = std::f64::consts::SQRT_2;

fn solve(pot: &Potential, a: f64, b: f64, l: f64, n: usize) -> Heteroclinic {
    let opts = ConnectionOptions { half_length: Some(l), points: n, ..Default::default() };
    solve_connection(pot, &[a], &[b], &opts).unwrap()
}

// -1 -> 0 connection of the triple well with max|u'| at s = 0:
// u = -(1 + E)^(-1/2), E = exp(sqrt2 (s + ln2/sqrt2)); the speed peaks where E = 2.
fn triple_exact(s: f64) -> f64 {
    let e = (SQRT2 * s + 2f64.ln()).exp();
    -1.0 / (1.0 + e).sqrt()
}

#[test]
fn triple_well_action_and_tails() {
    let pot = Potential::triple_well();
    let het = solve(&pot, -1.0, 0.0, 16.0, 4096);
    assert!((het.action - SQRT2 / 8.0).abs() < 1e-6, "action {}", het.action);
    assert!((het.right.mu_fit - 1.0 / SQRT2).abs() < 1e-3 / SQRT2);
    assert!((het.left.mu_fit - SQRT2).abs() < 1e-3 * SQRT2);
    assert_eq!(het.right.direction(), vec![-1.0]);
    // u ~ -exp(-s/sqrt2) * (1/sqrt(E-factor)) : amplitude 1/sqrt2 after the phase shift
    assert!((het.right.kbar - 2f64.powf(-0.5)).abs() < 1e-3, "kbar {}", het.right.kbar);
    let mut err: f64 = 0.0;
    for i in (0..het.points()).step_by(7) {
        err = err.max((het.node(i)[0] - triple_exact(het.s(i))).abs());
    }
    assert!(err < 2e-5, "profile error {err:e}");

    let up = solve(&pot, 0.0, 1.0, 16.0, 4096);
    assert_eq!(up.left.direction(), vec![1.0]);
}

#[test]
fn reversal_symmetry() {
    let pot = Potential::triple_well();
    let fwd = solve(&pot, -1.0, 0.0, 16.0, 2048);
    let back = solve(&pot, 0.0, -1.0, 16.0, 2048);
    let rev = fwd.reversed();
    let mut diff: f64 = 0.0;
    for i in 0..back.points() {
        diff = diff.max((back.node(i)[0] - rev.node(i)[0]).abs());
    }
    assert!(diff <= 2.0 * 1e-10, "reversal mismatch {diff:e}");
}

#[test]
fn action_converges_at_second_order() {
    let pot = Potential::double_well();
    let exact = 2.0 * SQRT2 / 3.0;
    let q: Vec<f64> = [1025, 2049, 4097].iter().map(|&n| solve(&pot, -1.0, 1.0, 12.0, n).action).collect();
    let ratio = (q[0] - exact) / (q[1] - exact);
    assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    let ratio = (q[1] - exact) / (q[2] - exact);
    assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");

    let pot = Potential::triple_well();
    let q: Vec<f64> = [1025, 2049, 4097].iter().map(|&n| solve(&pot, -1.0, 0.0, 16.0, n).action).collect();
    let limit = (4.0 * q[2] - q[1]) / 3.0;
    let ratio = (q[1] - limit) / (q[2] - limit);
    assert!((3.5..=4.5).contains(&ratio), "triple-well ratio {ratio}");
}

#[test]
fn equipartition_defect_is_second_order() {
    let pot = Potential::double_well();
    let a = solve(&pot, -1.0, 1.0, 12.0, 1025).diagnostics.equipartition;
    let b = solve(&pot, -1.0, 1.0, 12.0, 2049).diagnostics.equipartition;
    assert!((3.5..=4.5).contains(&(a / b)), "ratio {}", a / b);
}

#[test]
fn minimiser_beats_seed_path() {
    for (pot, a, b) in [(Potential::double_well(), -1.0, 1.0), (Potential::triple_well(), 0.0, 1.0)] {
        let het = solve(&pot, a, b, 16.0, 2048);
        assert!(het.action <= het.diagnostics.seed_action);
    }
}

#[test]
fn zero_mode_is_simple() {
    let pot = Potential::double_well();
    let het = solve(&pot, -1.0, 1.0, 12.0, 4096);
    let spec = connection_spectrum(&pot, &het, 3).unwrap();
    assert!(spec.values[0].abs() < 1e-4, "lambda1 {}", spec.values[0]);
    assert!(spec.alignment > 0.999);
    assert!(spec.values[1] > 0.0);
    assert!(spec.values[1] / spec.values[0].abs() > 100.0);
    // the bound state of -d^2 + 3 tanh^2 - 1 sits at 3/2
    assert!((spec.values[1] - 1.5).abs() < 1e-3);
}

#[test]
fn spectrum_scales_with_potential() {
    let pot = Potential::double_well();
    let het = solve(&pot, -1.0, 1.0, 12.0, 2048);
    let spec = connection_spectrum(&pot, &het, 3).unwrap();
    let pot4 = pot.scaled(4.0);
    let het4 = solve(&pot4, -1.0, 1.0, 6.0, 2048);
    let spec4 = connection_spectrum(&pot4, &het4, 3).unwrap();
    for i in 0..het.points() {
        assert!((het.node(i)[0] - het4.node(i)[0]).abs() < 1e-9);
    }
    for k in 1..3 {
        assert!((spec4.values[k] - 4.0 * spec.values[k]).abs() < 1e-8 * spec4.values[k]);
    }
    assert!(spec4.values[0].abs() < 1e-4);
}

#[test]
fn dihedral_connection_leaves_tangentially() {
    let pot = Potential::dihedral(3, 8.0).unwrap();
    let a = pot.minima()[0].clone();
    let b = pot.minima()[1].clone();
    let het = solve_connection(&pot, &a, &b, &ConnectionOptions::default()).unwrap();
    assert!(het.left.angle_deg < 5.0 && het.right.angle_deg < 5.0);
    assert!((het.left.mu - 18f64.sqrt()).abs() < 1e-12);
    assert!(het.left.rate_mismatch < 1e-3, "{}", het.left.rate_mismatch);
    // tangential direction at 1 is (0, 1)
    assert!(het.left.z[0].abs() < 1e-9 && (het.left.z[1] - 1.0).abs() < 1e-9);
    assert!(het.diagnostics.newton_residual < 1e-10);
}

#[test]
fn runtime_of_reference_connection() {
    let start = std::time::Instant::now();
    solve(&Potential::double_well(), -1.0, 1.0, 12.0, 4096);
    assert!(start.elapsed().as_secs_f64() < 1.0);
}
