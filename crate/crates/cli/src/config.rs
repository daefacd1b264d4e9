//! TOML run configuration. Every table rejects unknown keys; defaults are
//! filled in on load so that serialising a `RunConfig` gives the resolved form.

use std::path::PathBuf;

use layerlab::potential::Potential;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds the potential spot check and the eigensolver start vectors.
    #[serde(default)]
    pub seed: u64,
    pub potential: PotentialConfig,
    pub chain: ChainConfig,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub experiment: Experiment,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialConfig {
    DoubleWell {
        #[serde(default = "one")]
        scale: f64,
    },
    TripleWell {
        #[serde(default = "one")]
        scale: f64,
    },
    SkewedDoubleWell {
        #[serde(default = "one")]
        beta: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    Dihedral {
        k: u32,
        #[serde(default = "default_anisotropy")]
        anisotropy: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// Scalar W(u) = sum c_i u^i with the listed minima.
    Polynomial {
        coefficients: Vec<f64>,
        minima: Vec<f64>,
        #[serde(default = "one")]
        scale: f64,
    },
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    /// Indices into the potential's list of minima, read cyclically.
    pub sequence: Vec<usize>,
    /// Directory with `layer_<j>.csv` connection files; `<out>/connections` if unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub connections: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    /// Admissibility margin; 0.1 mu_min / N when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    /// Grid points on [0, 1); at least 64 per eps and divisible by N when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Half length of the connection interval; chosen from the tail decay when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_length: Option<f64>,
    #[serde(default = "default_connection_points")]
    pub connection_points: usize,
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_projection_tol")]
    pub projection_tol: f64,
    #[serde(default = "default_ode_rtol")]
    pub ode_rtol: f64,
    #[serde(default = "default_ode_atol")]
    pub ode_atol: f64,
    /// Initial PDE time step; diffusion and reaction limits when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "default_min_dt")]
    pub min_dt: f64,
    #[serde(default = "default_energy_slack")]
    pub energy_slack: f64,
    #[serde(default = "default_regrow_after")]
    pub regrow_after: usize,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            eps: default_eps(),
            rho: None,
            n: None,
            half_length: None,
            connection_points: default_connection_points(),
            newton_tol: default_newton_tol(),
            projection_tol: default_projection_tol(),
            ode_rtol: default_ode_rtol(),
            ode_atol: default_ode_atol(),
            dt: None,
            min_dt: default_min_dt(),
            energy_slack: default_energy_slack(),
            regrow_after: default_regrow_after(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    /// Position of layer 0.
    #[serde(default = "default_xi0")]
    pub xi0: f64,
    /// Initial gaps (normalised to sum to one); equal spacing when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaps: Option<Vec<f64>>,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: f64,
    /// `compare` scores samples whose gaps all exceed this.
    #[serde(default = "default_window_gap")]
    pub window_gap: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

impl Default for Experiment {
    fn default() -> Self {
        Self {
            xi0: default_xi0(),
            gaps: None,
            t_end: default_t_end(),
            snapshot_every: default_snapshot_every(),
            window_gap: default_window_gap(),
            max_steps: default_max_steps(),
        }
    }
}

fn one() -> f64 {
    1.0
}
fn default_anisotropy() -> f64 {
    8.0
}
fn default_eps() -> Vec<f64> {
    vec![0.05]
}
fn default_connection_points() -> usize {
    4096
}
fn default_newton_tol() -> f64 {
    1e-10
}
fn default_projection_tol() -> f64 {
    1e-9
}
fn default_ode_rtol() -> f64 {
    1e-10
}
fn default_ode_atol() -> f64 {
    1e-13
}
fn default_min_dt() -> f64 {
    1e-12
}
fn default_energy_slack() -> f64 {
    1e-12
}
fn default_regrow_after() -> usize {
    20
}
fn default_xi0() -> f64 {
    0.2
}
fn default_t_end() -> f64 {
    100.0
}
fn default_snapshot_every() -> f64 {
    1.0
}
fn default_window_gap() -> f64 {
    0.25
}
fn default_max_steps() -> usize {
    10_000_000
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), String> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(format!("{name} must be positive and finite, got {v}"))
            }
        };
        let nl = self.chain.sequence.len();
        if nl < 2 {
            return Err("chain.sequence needs at least two entries".into());
        }
        let num = &self.numerics;
        if num.eps.is_empty() {
            return Err("numerics.eps must list at least one value".into());
        }
        for &e in &num.eps {
            positive("numerics.eps", e)?;
        }
        let mut sorted = num.eps.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err("numerics.eps has repeated values".into());
        }
        if let Some(r) = num.rho {
            positive("numerics.rho", r)?;
        }
        if let Some(n) = num.n {
            if n < 3 * nl {
                return Err(format!("numerics.n = {n} is too small for {nl} layers"));
            }
        }
        if let Some(l) = num.half_length {
            positive("numerics.half_length", l)?;
        }
        if let Some(dt) = num.dt {
            positive("numerics.dt", dt)?;
        }
        for (name, v) in [
            ("numerics.newton_tol", num.newton_tol),
            ("numerics.projection_tol", num.projection_tol),
            ("numerics.ode_rtol", num.ode_rtol),
            ("numerics.ode_atol", num.ode_atol),
            ("numerics.min_dt", num.min_dt),
            ("numerics.energy_slack", num.energy_slack),
        ] {
            positive(name, v)?;
        }
        if num.connection_points < 64 {
            return Err("numerics.connection_points must be at least 64".into());
        }
        let ex = &self.experiment;
        if !ex.xi0.is_finite() {
            return Err("experiment.xi0 must be finite".into());
        }
        if let Some(g) = &ex.gaps {
            if g.len() != nl {
                return Err(format!("experiment.gaps has {} entries for {nl} layers", g.len()));
            }
            for &v in g {
                positive("experiment.gaps", v)?;
            }
        }
        if !(ex.t_end.is_finite() && ex.t_end >= 0.0) {
            return Err("experiment.t_end must be nonnegative".into());
        }
        positive("experiment.snapshot_every", ex.snapshot_every)?;
        if !(ex.window_gap.is_finite() && ex.window_gap >= 0.0) {
            return Err("experiment.window_gap must be nonnegative".into());
        }
        match &self.potential {
            PotentialConfig::DoubleWell { scale } | PotentialConfig::TripleWell { scale } => positive("potential.scale", *scale),
            PotentialConfig::SkewedDoubleWell { beta, scale } => {
                positive("potential.scale", *scale)?;
                if beta.is_finite() {
                    Ok(())
                } else {
                    Err("potential.beta must be finite".into())
                }
            }
            PotentialConfig::Dihedral { anisotropy, scale, .. } => {
                positive("potential.scale", *scale)?;
                positive("potential.anisotropy", *anisotropy)
            }
            PotentialConfig::Polynomial { scale, .. } => positive("potential.scale", *scale),
        }
    }

    pub fn build_potential(&self) -> layerlab::Result<Potential> {
        let (pot, scale) = match &self.potential {
            PotentialConfig::DoubleWell { scale } => (Potential::double_well(), *scale),
            PotentialConfig::TripleWell { scale } => (Potential::triple_well(), *scale),
            PotentialConfig::SkewedDoubleWell { beta, scale } => (Potential::skewed_double_well(*beta), *scale),
            PotentialConfig::Dihedral { k, anisotropy, scale } => (Potential::dihedral(*k, *anisotropy)?, *scale),
            PotentialConfig::Polynomial { coefficients, minima, scale } => {
                (Potential::polynomial(coefficients.clone(), minima.clone())?, *scale)
            }
        };
        Ok(if scale == 1.0 { pot } else { pot.scaled(scale) })
    }

    /// The resolved configuration as TOML, without header.
    pub fn resolved_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.resolved_toml().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[potential]\nfamily = \"double_well\"\n[chain]\nsequence = [0, 1]\n";

    #[test]
    fn defaults_resolve_and_round_trip() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.numerics.eps, vec![0.05]);
        let again = RunConfig::parse(&cfg.resolved_toml()).unwrap();
        assert_eq!(again.resolved_toml(), cfg.resolved_toml());
        assert_eq!(again.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse(&format!("{MINIMAL}[numerics]\nepsilon = [0.1]\n")).is_err());
        assert!(RunConfig::parse("[potential]\nfamily = \"double_well\"\nbeta = 2.0\n[chain]\nsequence = [0, 1]\n").is_err());
        assert!(RunConfig::parse(&format!("colour = 1\n{MINIMAL}")).is_err());
    }

    #[test]
    fn missing_blocks_and_bad_values() {
        assert!(RunConfig::parse("[chain]\nsequence = [0, 1]\n").is_err());
        assert!(RunConfig::parse(&format!("{MINIMAL}[numerics]\neps = []\n")).is_err());
        assert!(RunConfig::parse(&format!("{MINIMAL}[experiment]\ngaps = [0.5]\n")).is_err());
        assert!(RunConfig::parse(&format!("{MINIMAL}[numerics]\neps = [0.05, -0.1]\n")).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::parse(MINIMAL).unwrap();
        let b = RunConfig::parse(&format!("{MINIMAL}[numerics]\neps = [0.04]\n")).unwrap();
        assert_ne!(a.hash(), b.hash());
        // spelling out a default changes nothing
        let c = RunConfig::parse(&format!("{MINIMAL}[numerics]\neps = [0.05]\n")).unwrap();
        assert_eq!(a.hash(), c.hash());
    }
}
