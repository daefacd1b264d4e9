//! Artifact writers. Every file starts with the tool version, the resolved
//! config hash and the grid it was computed on; nothing time-dependent is written.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
    pub hash: String,
    pub gnuplot: bool,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    layerlab: &'a str,
    config_hash: &'a str,
    grid: &'a str,
    report: &'a T,
}

impl Context {
    pub fn new(config: RunConfig, out: PathBuf, gnuplot: bool) -> Self {
        let hash = config.hash();
        Self { config, out, hash, gnuplot }
    }

    pub fn header(&self, grid: &str) -> String {
        format!("# layerlab {VERSION} config_hash={} grid: {grid}\n", self.hash)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn write_resolved_config(&self) -> Result<(), CliError> {
        let text = format!("{}{}", self.header("none"), self.config.resolved_toml());
        write(&self.path("config.resolved.toml"), &text)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, grid: &str, report: &T) -> Result<(), CliError> {
        let env = Envelope { layerlab: VERSION, config_hash: &self.hash, grid, report };
        let mut text = serde_json::to_string_pretty(&env).expect("report serialises");
        text.push('\n');
        write(&self.path(name), &text)
    }

    /// Writes `name` (a .csv) and, with --emit-gnuplot, a plot script beside it.
    pub fn write_csv(&self, name: &str, grid: &str, columns: &[String], rows: &[Vec<f64>]) -> Result<(), CliError> {
        let mut text = self.header(grid);
        text.push_str(&columns.join(","));
        text.push('\n');
        for row in rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        write(&self.path(name), &text)?;
        if self.gnuplot {
            self.write_gnuplot(name, columns)?;
        }
        Ok(())
    }

    fn write_gnuplot(&self, name: &str, columns: &[String]) -> Result<(), CliError> {
        let stem = name.trim_end_matches(".csv");
        let mut gp = format!("# layerlab {VERSION} config_hash={}\n", self.hash);
        let _ = writeln!(gp, "set datafile separator ','");
        let _ = writeln!(gp, "set key autotitle columnhead");
        let _ = writeln!(gp, "set xlabel '{}'", columns[0]);
        let _ = writeln!(gp, "plot for [i=2:{}] '{name}' using 1:i with lines", columns.len());
        let _ = writeln!(gp, "pause mouse close");
        write(&self.path(&format!("{stem}.gp")), &gp)
    }
}

pub fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Output key for one eps of a sweep, e.g. `eps0.05`.
pub fn eps_key(eps: f64) -> String {
    format!("eps{eps}")
}

pub fn indexed(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|j| format!("{prefix}{j}")).collect()
}

/// Reads a CSV written by `write_csv`: `#` lines, a column row, numeric rows.
pub fn read_csv(path: &Path, producer: &'static str) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    if !path.exists() {
        return Err(CliError::MissingArtifact { path: path.to_path_buf(), producer });
    }
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let bad = |what: String| CliError::Config(format!("{}: {what}", path.display()));
    let columns: Vec<String> = lines.next().ok_or_else(|| bad("no column row".into()))?.split(',').map(String::from).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row: Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        let row = row.map_err(|_| bad(format!("non-numeric row {}", i + 1)))?;
        if row.len() != columns.len() {
            return Err(bad(format!("row {} has {} cells for {} columns", i + 1, row.len(), columns.len())));
        }
        rows.push(row);
    }
    Ok((columns, rows))
}
