//! Cyclic chains of minima a_0 .. a_{N-1} joined by heteroclinic connections,
//! with the interface constants that drive the reduced dynamics.
//!
//! Indexing is zero-based and cyclic. Layer j sits at xi_j and carries the
//! connection a_j -> a_{j+1}; the plateau at a_j lies between xi_{j-1} and xi_j,
//! so gap j is xi_j - xi_{j-1} (with xi_{-1} = xi_{N-1} - 1).

mod ansatz;
mod config;

pub use ansatz::{
    c0, cbar, interaction_bracket, tail_products, velocities_from_c, AnsatzFields, TailProducts, IMAGES, MIN_POINTS_PER_EPS,
};
pub use config::{default_grid_points, LayerConfig};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::heteroclinic::{solve_connection, ConnectionOptions, Heteroclinic};
use crate::potential::Potential;

/// |z- . z+| above this counts as parallel (5 degrees).
pub const H4_COS: f64 = 0.996_194_698_091_745_5;

#[derive(Clone, Debug)]
pub struct ChainModel {
    pot: Potential,
    /// Indices into `pot.minima()`.
    pub sequence: Vec<usize>,
    pub minima: Vec<Vec<f64>>,
    /// connections[j]: a_j -> a_{j+1}.
    pub connections: Vec<Heteroclinic>,
    /// Rate leaving a_j along connection j.
    pub mu_minus: Vec<f64>,
    /// Rate arriving at a_j along connection j-1.
    pub mu_plus: Vec<f64>,
    pub mu: Vec<f64>,
    /// Left-tail amplitude of connection j.
    pub kbar_minus: Vec<f64>,
    /// Right-tail amplitude of connection j-1.
    pub kbar_plus: Vec<f64>,
    /// Raw z_j^- . z_j^+ (signed tail directions).
    pub varsigma_raw: Vec<f64>,
    /// Snapped to +-1 when H4 holds, otherwise equal to the raw product.
    pub varsigma: Vec<f64>,
    pub k_minus: Vec<f64>,
    pub k_plus: Vec<f64>,
    pub k: Vec<f64>,
    pub qbar2: Vec<f64>,
    pub h4: bool,
}

/// Existence check for periodic layered solutions.
#[derive(Clone, Debug, Serialize)]
pub struct Existence {
    /// None when H4 fails and the criterion does not apply.
    pub exists: Option<bool>,
    pub reason: String,
    pub varsigma: Vec<f64>,
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9 * (1.0 + x.abs()))
}

fn apply(r: &[f64], v: &[f64]) -> Vec<f64> {
    let m = v.len();
    (0..m).map(|i| (0..m).map(|j| r[i * m + j] * v[j]).sum()).collect()
}

/// Reuses computed connections: reversal first, then potential symmetries
/// (optionally combined with reversal), so symmetric chains stay exactly symmetric.
fn from_cache(pot: &Potential, cache: &[Heteroclinic], from: &[f64], to: &[f64]) -> Option<Heteroclinic> {
    for het in cache {
        if close(&het.a_minus, from) && close(&het.a_plus, to) {
            return Some(het.clone());
        }
    }
    for het in cache {
        if close(&het.a_minus, to) && close(&het.a_plus, from) {
            return Some(het.reversed());
        }
    }
    for r in pot.symmetries() {
        for het in cache {
            let (am, ap) = (apply(&r, &het.a_minus), apply(&r, &het.a_plus));
            if close(&am, from) && close(&ap, to) {
                return Some(het.transformed(&r));
            }
            if close(&am, to) && close(&ap, from) {
                return Some(het.transformed(&r).reversed());
            }
        }
    }
    None
}

impl ChainModel {
    /// Solves (or reuses) every connection of the cyclic sequence.
    pub fn assemble(pot: &Potential, sequence: &[usize], opts: &ConnectionOptions) -> Result<Self> {
        Self::assemble_with(pot, sequence, opts, Vec::new())
    }

    /// Like `assemble`, seeding the cache with precomputed connections.
    pub fn assemble_with(
        pot: &Potential,
        sequence: &[usize],
        opts: &ConnectionOptions,
        mut cache: Vec<Heteroclinic>,
    ) -> Result<Self> {
        let minima = Self::check_sequence(pot, sequence)?;
        let n = minima.len();
        let mut connections = Vec::with_capacity(n);
        for j in 0..n {
            let (from, to) = (&minima[j], &minima[(j + 1) % n]);
            let het = match from_cache(pot, &cache, from, to) {
                Some(h) => h,
                None => {
                    log::info!("solving connection {:?} -> {:?}", from, to);
                    let h = solve_connection(pot, from, to, opts)?;
                    cache.push(h.clone());
                    h
                }
            };
            connections.push(het);
        }
        Self::from_connections(pot, sequence, connections)
    }

    fn check_sequence(pot: &Potential, sequence: &[usize]) -> Result<Vec<Vec<f64>>> {
        if sequence.len() < 2 {
            return Err(Error::InvalidInput("a chain needs at least two interfaces".into()));
        }
        let n = sequence.len();
        for (j, &i) in sequence.iter().enumerate() {
            if i >= pot.minima().len() {
                return Err(Error::InvalidInput(format!("chain entry {i} is not a minimum index")));
            }
            if i == sequence[(j + 1) % n] {
                return Err(Error::InvalidInput(format!("consecutive chain entries {j} and {} coincide", (j + 1) % n)));
            }
        }
        Ok(sequence.iter().map(|&i| pot.minima()[i].clone()).collect())
    }

    /// Builds the constants from connections[j]: a_j -> a_{j+1}.
    pub fn from_connections(pot: &Potential, sequence: &[usize], connections: Vec<Heteroclinic>) -> Result<Self> {
        let minima = Self::check_sequence(pot, sequence)?;
        let n = minima.len();
        if connections.len() != n {
            return Err(Error::InvalidInput(format!("{} connections for a chain of {n}", connections.len())));
        }
        for (j, het) in connections.iter().enumerate() {
            if !close(&het.a_minus, &minima[j]) || !close(&het.a_plus, &minima[(j + 1) % n]) {
                return Err(Error::InvalidInput(format!(
                    "connection {j} joins {:?} -> {:?}, expected {:?} -> {:?}",
                    het.a_minus,
                    het.a_plus,
                    minima[j],
                    minima[(j + 1) % n]
                )));
            }
        }
        let prev = |j: usize| (j + n - 1) % n;
        let mu_minus: Vec<f64> = (0..n).map(|j| connections[j].left.mu).collect();
        let mu_plus: Vec<f64> = (0..n).map(|j| connections[prev(j)].right.mu).collect();
        let mu: Vec<f64> = (0..n).map(|j| 0.5 * (mu_minus[j] + mu_plus[j])).collect();
        let kbar_minus: Vec<f64> = (0..n).map(|j| connections[j].left.kbar).collect();
        let kbar_plus: Vec<f64> = (0..n).map(|j| connections[prev(j)].right.kbar).collect();
        let varsigma_raw: Vec<f64> = (0..n)
            .map(|j| {
                let zm = connections[j].left.direction();
                let zp = connections[prev(j)].right.direction();
                crate::linalg::dot(&zm, &zp)
            })
            .collect();
        let h4 = varsigma_raw.iter().all(|s| s.abs() > H4_COS);
        let varsigma = if h4 { varsigma_raw.iter().map(|s| s.signum()).collect() } else { varsigma_raw.clone() };
        if !h4 {
            log::warn!("H4 fails: tail direction products {varsigma_raw:?}");
        }
        let kk: Vec<f64> = (0..n).map(|j| kbar_minus[j] * kbar_plus[j]).collect();
        let k_minus = (0..n).map(|j| mu_minus[j] * mu[j] * kk[j]).collect();
        let k_plus = (0..n).map(|j| mu_plus[j] * mu[j] * kk[j]).collect();
        let k = (0..n).map(|j| mu[j] * mu[j] * kk[j]).collect();
        let qbar2 = connections.iter().map(|c| c.qbar2()).collect();
        Ok(Self {
            pot: pot.clone(),
            sequence: sequence.to_vec(),
            minima,
            connections,
            mu_minus,
            mu_plus,
            mu,
            kbar_minus,
            kbar_plus,
            varsigma_raw,
            varsigma,
            k_minus,
            k_plus,
            k,
            qbar2,
            h4,
        })
    }

    pub fn potential(&self) -> &Potential {
        &self.pot
    }

    pub fn len(&self) -> usize {
        self.minima.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minima.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.pot.dim()
    }

    pub fn qbar(&self, j: usize) -> f64 {
        self.qbar2[j].sqrt()
    }

    pub fn mu_min(&self) -> f64 {
        self.mu.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// 0.1 mu_min / N: a tenth of the rate-weighted equal spacing.
    pub fn default_rho(&self) -> f64 {
        0.1 * self.mu_min() / self.len() as f64
    }

    /// All varsigma_j equal (cyclically) under H4.
    pub fn existence_condition(&self) -> Existence {
        let varsigma = self.varsigma.clone();
        if !self.h4 {
            return Existence {
                exists: None,
                reason: format!(
                    "indeterminate: tail directions are not parallel at every minimum (z-.z+ = {:?})",
                    self.varsigma_raw
                ),
                varsigma,
            };
        }
        let n = self.len();
        match (0..n).find(|&j| varsigma[j] != varsigma[(j + 1) % n]) {
            None => Existence {
                exists: Some(true),
                reason: format!("all varsigma equal to {:+}", varsigma[0]),
                varsigma,
            },
            Some(j) => Existence {
                exists: Some(false),
                reason: format!(
                    "varsigma_{j} = {:+} differs from varsigma_{} = {:+}",
                    varsigma[j],
                    (j + 1) % n,
                    varsigma[(j + 1) % n]
                ),
                varsigma,
            },
        }
    }
}
