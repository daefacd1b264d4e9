use layerlab::chain::{c0, default_grid_points, AnsatzFields, ChainModel, LayerConfig};
use layerlab::heteroclinic::ConnectionOptions;
use layerlab::potential::Potential;
use layerlab::reduction::*;
use layerlab::Error;
use std::sync::OnceLock;

fn double_chain() -> ChainModel {
    static C: OnceLock<ChainModel> = OnceLock::new();
    C.get_or_init(|| ChainModel::assemble(&Potential::double_well(), &[0, 1], &ConnectionOptions::default()).unwrap())
        .clone()
}

fn cfg(gaps: &[f64], eps: f64) -> LayerConfig {
    LayerConfig::from_gaps(0.2, gaps, eps, 0.01).unwrap()
}

fn correction(chain: &ChainModel, c: &LayerConfig) -> (ReductionResult, SpectralData) {
    let n = default_grid_points(c.eps, chain.len());
    orthogonal_correction(chain, c, n, &SpectrumOptions::default(), &CorrectionOptions::default()).unwrap()
}

#[test]
fn operator_is_the_derivative_of_the_residual() {
    let chain = double_chain();
    let c = cfg(&[0.4, 0.6], 0.05);
    let n = default_grid_points(0.05, 2);
    let u = AnsatzFields::new(&chain, &c, n).unwrap().u;
    let pot = chain.potential();
    let op = linearized_operator(pot, &u);
    let mut v = u.clone();
    for (i, x) in v.values_mut().iter_mut().enumerate() {
        *x = (0.37 * i as f64).sin();
    }
    let d = 1e-6;
    let mut up = u.clone();
    up.axpy(d, &v);
    let mut um = u.clone();
    um.axpy(-d, &v);
    let fd = um.discrete_residual(pot).sub(&up.discrete_residual(pot));
    let mut lv = vec![0.0; v.values().len()];
    op.apply(v.values(), &mut lv);
    let err = fd.values().iter().zip(&lv).map(|(a, b)| (a / (2.0 * d) - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-5 * op.norm_inf(), "{err:e}");
}

#[test]
fn slow_space_structure() {
    let chain = double_chain();
    let c = cfg(&[0.3, 0.7], 0.05);
    let n = default_grid_points(0.05, 2);
    let (fields, spec) = linearized_spectrum(&chain, &c, n, &SpectrumOptions::default()).unwrap();
    assert_eq!(spec.slow_count(), 2);
    assert!(spec.residuals.iter().all(|&r| r < 1e-12 * spec.operator_norm));
    assert!(spec.values[..2].iter().all(|v| v.abs() < 1e-2));
    assert!(spec.fast_bottom() > 1.0);
    assert!(spec.gap_ratio > 100.0);
    assert!(spec.alignment.iter().all(|&a| a > 0.999));
    // the slow basis is orthonormal and spans the slow eigenvectors
    for i in 0..2 {
        for j in 0..2 {
            let g = spec.slow_basis[i].inner(&spec.slow_basis[j]);
            assert!((g - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
        let mut rest = spec.vectors[i].clone();
        for p in &spec.slow_basis {
            rest.axpy(-spec.vectors[i].inner(p), p);
        }
        assert!(rest.norm() < 1e-10);
    }
    // eta is the distance from the normalised tangent
    for j in 0..2 {
        let mut t = fields.tangents[j].clone();
        t.scale(1.0 / fields.tangent_norms[j]);
        assert!((spec.slow_basis[j].sub(&t).norm() - spec.eta[j]).abs() < 1e-14);
    }
}

#[test]
fn correction_invariants() {
    let chain = double_chain();
    for gaps in [[0.3, 0.7], [0.4, 0.6]] {
        let c = cfg(&gaps, 0.05);
        let (r, spec) = correction(&chain, &c);
        let vn = r.v.norm();
        for p in &spec.slow_basis {
            assert!(r.v.inner(p).abs() < 1e-10 * vn.max(1e-300));
        }
        assert!(r.v_norm_w12 <= r.fast_bound, "{} > {}", r.v_norm_w12, r.fast_bound);
        assert!(r.trace.windows(2).all(|w| w[1] < w[0]));
        // F(u + v) lies in the slow space with coordinates c
        let mut rest = r.u.discrete_residual(chain.potential());
        for (cj, p) in r.c.iter().zip(&spec.slow_basis) {
            rest.axpy(-cj, p);
        }
        assert!(rest.norm() < 1e-10, "{:e}", rest.norm());
    }
}

#[test]
fn bifurcation_vector_against_reduced_formulas() {
    let chain = double_chain();
    for (gaps, eps) in [([0.3, 0.7], 0.05), ([0.4, 0.6], 0.03)] {
        let c = cfg(&gaps, eps);
        let (r, _) = correction(&chain, &c);
        let c0 = c0(&chain, &c).unwrap();
        let scale = c0[0].abs();
        for j in 0..2 {
            assert!((r.c[j] - r.cbar[j]).abs() < 0.02 * scale, "{:?} {:?}", r.c, r.cbar);
            assert!((r.c[j] - c0[j]).abs() < 0.02 * scale, "{:?} {c0:?}", r.c);
        }
        let weighted: f64 = r.c.iter().enumerate().map(|(j, cj)| chain.qbar(j) * cj).sum();
        let total: f64 = r.c.iter().enumerate().map(|(j, cj)| (chain.qbar(j) * cj).abs()).sum();
        assert!(weighted.abs() < 0.05 * total);
        assert!(r.noise.iter().all(|&e| e < 1e-3 * scale));
    }
}

#[test]
fn leading_spacing_is_the_zero_of_c0() {
    let chain = ChainModel::assemble(&Potential::skewed_double_well(1.0), &[0, 1], &ConnectionOptions::default()).unwrap();
    let (lead, delta) = leading_spacing(&chain);
    assert!((lead.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    assert!(delta.iter().sum::<f64>().abs() < 1e-12);
    assert!((lead[0] / lead[1] - chain.mu[1] / chain.mu[0]).abs() < 1e-12);
    let eps = 0.05;
    let gaps: Vec<f64> = lead.iter().zip(&delta).map(|(l, d)| l + eps * d).collect();
    let at = LayerConfig::from_gaps(0.1, &gaps, eps, 0.01).unwrap();
    let c = c0(&chain, &at).unwrap();
    // compare against one of the two cancelling terms
    let term = 2.0 * eps.sqrt() / chain.qbar(0) * chain.k[0] * (-chain.mu[0] * gaps[0] / eps).exp();
    assert!(c.iter().all(|x| x.abs() < 1e-12 * term), "{c:?} vs {term:e}");
}

#[test]
fn bifurcation_root_is_stationary() {
    let chain = double_chain();
    let opts = BifurcationOptions::default();
    let b = solve_bifurcation(&chain, 0.05, &opts).unwrap();
    assert!(b.c_resolved);
    for g in &b.gaps_star {
        assert!((g - 0.5).abs() < 1e-3);
    }
    assert!(b.stationary_residual < 1e-10, "{:e}", b.stationary_residual);
    // the stationary profile does not move under the discrete residual
    let f = b.u.discrete_residual(chain.potential());
    assert!(f.max_abs() < 1e-9);
}

#[test]
fn refusal_and_indeterminate_chains() {
    let tw = ChainModel::assemble(&Potential::triple_well(), &[0, 1, 2, 1], &ConnectionOptions::default()).unwrap();
    assert!(matches!(solve_bifurcation(&tw, 0.05, &BifurcationOptions::default()), Err(Error::Refused(_))));
    let chain = double_chain();
    let mut bent = chain.connections.clone();
    bent[1].right.z = vec![0.5];
    let bent = ChainModel::from_connections(chain.potential(), &chain.sequence, bent).unwrap();
    assert!(matches!(solve_bifurcation(&bent, 0.05, &BifurcationOptions::default()), Err(Error::Refused(_))));
}

#[test]
fn gram_schmidt_reproduces_orthonormal_tangents() {
    // well separated layers: the slow basis is the tangent pair itself
    let chain = double_chain();
    let c = cfg(&[0.5, 0.5], 0.03);
    let n = default_grid_points(0.03, 2);
    let (fields, spec) = linearized_spectrum(&chain, &c, n, &SpectrumOptions::default()).unwrap();
    let (phi, eta, cond) = slow_basis_gram_schmidt(&fields.tangents, &spec.vectors[..2]);
    assert!(cond < 1.01);
    assert!(eta.iter().all(|&e| e < 1e-4));
    assert!((phi[0].inner(&phi[1])).abs() < 1e-14);
}
