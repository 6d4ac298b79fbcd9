//! Scenario-driven front end for `blockade-core`.
//!
//! Every command reads a scenario file, writes plain CSV and text outputs into
//! one directory and returns the path of its summary file.
//!
//! Exit codes: 0 success, 1 other failure (I/O, invalid physics input),
//! 2 scenario or data parse error, 3 integration failure, 4 optimizer or fit
//! below threshold under `--strict`, 5 uninvertible tomography point set.

pub mod fit;
pub mod grape;
pub mod scenario;
pub mod simulate;
pub mod tomo;

use std::fmt;
use std::path::{Path, PathBuf};

pub use scenario::Scenario;

/// Environment variable naming the base output directory.
pub const OUT_ENV: &str = "BLOCKADE_LAB_OUT";

#[derive(Debug)]
pub enum CliError {
    Parse(String),
    Integration(String),
    NotConverged(String),
    Uninvertible(String),
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failure(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Integration(_) => 3,
            CliError::NotConverged(_) => 4,
            CliError::Uninvertible(_) => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Parse(m) => write!(f, "parse error: {m}"),
            CliError::Integration(m) => write!(f, "integration failure: {m}"),
            CliError::NotConverged(m) => write!(f, "not converged: {m}"),
            CliError::Uninvertible(m) => write!(f, "uninvertible point set: {m}"),
            CliError::Failure(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<blockade_core::Error> for CliError {
    fn from(e: blockade_core::Error) -> Self {
        use blockade_core::Error as E;
        match e {
            E::Parse(_) => CliError::Parse(e.to_string()),
            E::Integration { .. } => CliError::Integration(e.to_string()),
            E::Uninvertible(_) => CliError::Uninvertible(e.to_string()),
            other => CliError::Failure(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub jobs: usize,
    pub out: Option<PathBuf>,
    pub strict: bool,
    /// GRAPE step-count override.
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TomoStep {
    Design,
    Simulate,
    Reconstruct,
}

/// `--out`, else `$BLOCKADE_LAB_OUT/<name>`, else `out/<name>`; created if
/// missing.
pub fn output_dir(opts: &RunOptions, name: &str) -> Result<PathBuf, CliError> {
    let dir = match &opts.out {
        Some(d) => d.clone(),
        None => match std::env::var_os(OUT_ENV) {
            Some(base) if !base.is_empty() => PathBuf::from(base).join(name),
            _ => PathBuf::from("out").join(name),
        },
    };
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Ordered `key = value` lines.
#[derive(Debug, Default)]
pub struct Summary {
    lines: Vec<(String, String)>,
}

impl Summary {
    pub fn put(&mut self, key: impl Into<String>, value: impl fmt::Display) {
        self.lines.push((key.into(), value.to_string()));
    }

    pub fn num(&mut self, key: impl Into<String>, value: f64) {
        self.put(key, format!("{value:.10e}"));
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text: String = self.lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Value of `key` in a summary file written by [`Summary`].
pub fn read_summary_value(text: &str, key: &str) -> Option<String> {
    text.lines().find_map(|l| {
        let (k, v) = l.split_once(" = ")?;
        (k == key).then(|| v.to_string())
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)?;
    Ok(())
}

pub fn run_simulate(scenario: &Path, opts: &RunOptions) -> Result<PathBuf, CliError> {
    simulate::command(&Scenario::load(scenario)?, opts)
}

pub fn run_grape(scenario: &Path, opts: &RunOptions) -> Result<PathBuf, CliError> {
    grape::command(&Scenario::load(scenario)?, opts)
}

pub fn run_tomo(step: TomoStep, scenario: &Path, opts: &RunOptions) -> Result<PathBuf, CliError> {
    tomo::command(step, &Scenario::load(scenario)?, opts)
}

pub fn run_fit(scenario: &Path, opts: &RunOptions) -> Result<PathBuf, CliError> {
    fit::command(&Scenario::load(scenario)?, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_round_trip() {
        let dir = std::env::temp_dir().join(format!("blockade-lab-summary-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("s.txt");
        let mut s = Summary::default();
        s.put("name", "x");
        s.num("value", 0.125);
        s.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "name = x\nvalue = 1.2500000000e-1\n");
        assert_eq!(read_summary_value(&text, "value").as_deref(), Some("1.2500000000e-1"));
        assert_eq!(read_summary_value(&text, "missing"), None);
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn exit_codes() {
        let codes: Vec<i32> = [
            CliError::Failure(String::new()),
            CliError::Parse(String::new()),
            CliError::Integration(String::new()),
            CliError::NotConverged(String::new()),
            CliError::Uninvertible(String::new()),
        ]
        .iter()
        .map(CliError::exit_code)
        .collect();
        assert_eq!(codes, [1, 2, 3, 4, 5]);
    }
}
