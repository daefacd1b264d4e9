use serde::Serialize;

use super::ChainModel;
use crate::error::{Error, Result};

/// Layer positions xi_0 < .. < xi_{N-1} < xi_0 + 1 with eps and the margin rho.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerConfig {
    pub xi: Vec<f64>,
    pub eps: f64,
    pub rho: f64,
}

/// N * ceil(64 / (eps N)): at least 64 points per eps and a multiple of N.
pub fn default_grid_points(eps: f64, n_layers: usize) -> usize {
    let n = n_layers.max(1);
    n * (64.0 / (eps * n as f64)).ceil() as usize
}

impl LayerConfig {
    /// Positions are stored as given; xi_0 is not forced into [0, 1) so that
    /// tracked layers can drift across the origin without relabelling.
    pub fn new(xi: Vec<f64>, eps: f64, rho: f64) -> Result<Self> {
        if xi.is_empty() || xi.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("layer positions must be finite and nonempty".into()));
        }
        if !(eps > 0.0) || !(rho > 0.0) {
            return Err(Error::InvalidInput(format!("eps={eps} and rho={rho} must be positive")));
        }
        let cfg = Self { xi, eps, rho };
        if cfg.gaps().iter().any(|&g| g <= 0.0) {
            return Err(Error::Domain(format!("layer positions {:?} are not cyclically ordered", cfg.xi)));
        }
        Ok(cfg)
    }

    /// xi_j = xi_0 + g_1 + .. + g_j; gaps are normalised to sum to one.
    pub fn from_gaps(xi0: f64, gaps: &[f64], eps: f64, rho: f64) -> Result<Self> {
        if gaps.len() < 2 || gaps.iter().any(|&g| !(g > 0.0)) {
            return Err(Error::InvalidInput(format!("gaps {gaps:?} must be positive")));
        }
        let total: f64 = gaps.iter().sum();
        let mut xi = Vec::with_capacity(gaps.len());
        let mut x = xi0;
        xi.push(x);
        for g in &gaps[1..] {
            x += g / total;
            xi.push(x);
        }
        Self::new(xi, eps, rho)
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    /// gap j = xi_j - xi_{j-1}, gap 0 wrapping through xi_{N-1} - 1.
    pub fn gaps(&self) -> Vec<f64> {
        let n = self.xi.len();
        (0..n)
            .map(|j| if j == 0 { self.xi[0] - (self.xi[n - 1] - 1.0) } else { self.xi[j] - self.xi[j - 1] })
            .collect()
    }

    pub fn min_gap(&self) -> f64 {
        self.gaps().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Same layers, shifted by s.
    pub fn translated(&self, s: f64) -> Self {
        Self { xi: self.xi.iter().map(|x| x + s).collect(), ..self.clone() }
    }

    /// Margins gap_j - rho / mu_j; all positive inside the admissible set.
    pub fn margins(&self, chain: &ChainModel) -> Vec<f64> {
        self.gaps().iter().zip(&chain.mu).map(|(g, mu)| g - self.rho / mu).collect()
    }

    pub fn validate(&self, chain: &ChainModel) -> Result<()> {
        if self.len() != chain.len() {
            return Err(Error::InvalidInput(format!("{} layer positions for a chain of {}", self.len(), chain.len())));
        }
        if self.xi.windows(2).any(|w| w[1] <= w[0]) || self.xi[self.len() - 1] - self.xi[0] >= 1.0 {
            return Err(Error::Domain(format!("layer positions {:?} are not cyclically ordered", self.xi)));
        }
        let margins = self.margins(chain);
        if let Some(j) = margins.iter().position(|&d| d <= 0.0) {
            return Err(Error::Domain(format!(
                "gap {j} = {:.6} is not above rho/mu_{j} = {:.6}",
                self.gaps()[j],
                self.rho / chain.mu[j]
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaps_wrap_and_sum_to_one() {
        let cfg = LayerConfig::from_gaps(0.1, &[0.3, 0.2, 0.5], 0.05, 0.01).unwrap();
        let g = cfg.gaps();
        assert!((g[0] - 0.3).abs() < 1e-15 && (g[1] - 0.2).abs() < 1e-15);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(LayerConfig::new(vec![0.5, 0.2], 0.05, 0.01).is_err());
    }

    #[test]
    fn grid_points_are_multiples_of_n() {
        assert_eq!(default_grid_points(0.05, 2), 1280);
        assert_eq!(default_grid_points(0.05, 3) % 3, 0);
        assert!(default_grid_points(0.03, 4) as f64 * 0.03 >= 64.0);
    }
}
