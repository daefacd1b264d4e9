use std::path::PathBuf;

use layerlab::chain::Existence;
use serde_json::{json, Value};

/// Exit codes: 2 configuration, 3 numerical failure, 4 refused by the existence condition.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    MissingArtifact { path: PathBuf, producer: &'static str },
    Refused { message: String, existence: Option<Existence> },
    Numerical(layerlab::Error),
    Io(std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::MissingArtifact { .. } => 2,
            CliError::Refused { .. } => 4,
            CliError::Numerical(_) | CliError::Io(_) => 3,
        }
    }

    pub fn to_json(&self) -> Value {
        let mut v = match self {
            CliError::Config(m) => json!({ "error": "config", "message": m }),
            CliError::MissingArtifact { path, producer } => json!({
                "error": "missing_artifact",
                "message": format!("{} not found; run `layerlab {producer}` with this config first", path.display()),
                "path": path.display().to_string(),
                "producer": producer,
            }),
            CliError::Refused { message, existence } => json!({
                "error": "refused",
                "message": message,
                "existence": existence,
            }),
            CliError::Numerical(e) => json!({ "error": "numerical", "kind": kind(e), "message": e.to_string() }),
            CliError::Io(e) => json!({ "error": "io", "message": e.to_string() }),
        };
        v["exit_code"] = json!(self.exit_code());
        v
    }
}

fn kind(e: &layerlab::Error) -> &'static str {
    use layerlab::Error::*;
    match e {
        InvalidInput(_) => "invalid_input",
        NonFinite(_) => "non_finite",
        NotAMinimum { .. } => "not_a_minimum",
        H2Violation { .. } => "h2_violation",
        IncreaseL { .. } => "increase_half_length",
        NoConnection { .. } => "no_connection",
        Domain(_) => "domain",
        Resolution { .. } => "resolution",
        EigenNonConvergence { .. } => "eigen_non_convergence",
        Singular(_) => "singular",
        Divergence { .. } => "divergence",
        NewtonFailure { .. } => "newton_failure",
        Refused(_) => "refused",
        Unsupported(_) => "unsupported",
        OutOfNeighborhood(_) => "out_of_neighborhood",
        Stiffness { .. } => "stiffness",
        Incomplete(_) => "incomplete",
        Format(_) => "format",
        Io(_) => "io",
    }
}

impl From<layerlab::Error> for CliError {
    fn from(e: layerlab::Error) -> Self {
        match e {
            layerlab::Error::InvalidInput(m) | layerlab::Error::Format(m) => CliError::Config(m),
            layerlab::Error::Refused(m) => CliError::Refused { message: m, existence: None },
            layerlab::Error::Io(e) => CliError::Io(e),
            e => CliError::Numerical(e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}
