//! Scenario files (TOML).
//!
//! Relative paths inside a scenario resolve against the scenario's directory.
//! Keys carry their unit (`*_hz`, `*_us`, `*_rad`); frequencies are ordinary
//! frequencies and become angular frequencies on load.

use crate::CliError;
use blockade_core::config::load_device;
use blockade_core::DeviceParams;
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub device: Option<String>,
    pub seed: Option<u64>,
    pub layout: Option<LayoutCfg>,
    pub blockade: Option<BlockadeCfg>,
    pub drive: Option<DriveCfg>,
    #[serde(default)]
    pub channels: ChannelsCfg,
    #[serde(default)]
    pub output: OutputCfg,
    pub target: Option<TargetCfg>,
    pub grape: Option<GrapeCfg>,
    pub tomography: Option<TomoCfg>,
    pub fit: Option<FitCfg>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutCfg {
    /// Device modes to simulate, in layout order.
    pub modes: Vec<String>,
    pub truncation: Vec<usize>,
    #[serde(default = "two")]
    pub transmon_levels: usize,
}

fn two() -> usize {
    2
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockadeCfg {
    /// Driven modes; every layout mode when absent.
    pub modes: Option<Vec<String>>,
    pub n0: usize,
    pub omega_hz: f64,
    /// Blockade drive offset from the transmon; the mean shift of the `n0`
    /// photon states of the driven modes when absent.
    pub detuning_hz: Option<f64>,
    #[serde(default)]
    pub frame: Frame,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    #[default]
    Bare,
    Dressed,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveCfg {
    pub duration_us: f64,
    /// Piecewise-constant slots for constant drives.
    #[serde(default = "one")]
    pub steps: usize,
    /// One real amplitude per driven mode.
    pub amplitude_hz: Option<Vec<f64>>,
    pub phase_rad: Option<Vec<f64>>,
    /// Pulse CSV (`time,re(ch),im(ch),...`, amplitudes in rad/s); one
    /// channel per driven mode. Overrides the constant amplitudes.
    pub pulse_file: Option<String>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelsCfg {
    pub enabled: bool,
}

impl Default for ChannelsCfg {
    fn default() -> Self {
        Self { enabled: true }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputCfg {
    /// Evenly spaced sample times including both ends.
    pub samples: usize,
}

impl Default for OutputCfg {
    fn default() -> Self {
        Self { samples: 101 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
pub enum TargetCfg {
    /// Fock state of the layout modes, transmon in `|g>`.
    Fock { occupations: Vec<usize> },
    /// W state over the layout modes with the best phases.
    W,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum GrapeModel {
    /// Dressed-ground qudit below the blockaded level.
    #[default]
    Reduced,
    /// Transmon and cavity mode with the blockade drive in the drift.
    Full,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum GrapeMethod {
    #[default]
    ProjectedGradient,
    Lbfgs,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrapeCfg {
    #[serde(default)]
    pub model: GrapeModel,
    /// Prepare this Fock level from vacuum.
    pub target_fock: Option<usize>,
    /// `"shift"`: the cyclic qudit shift `|k> -> |k+1 mod n0>`.
    pub gate: Option<String>,
    pub duration_us: f64,
    pub steps: usize,
    pub cap_hz: f64,
    #[serde(default)]
    pub method: GrapeMethod,
    #[serde(default = "one")]
    pub restarts: usize,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_target")]
    pub target_fidelity: f64,
    /// `--strict` fails below this closed-system fidelity.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub exact_stark: bool,
    #[serde(default = "yes")]
    pub kerr: bool,
    /// Penalty weight on the levels at and above `n0` (full model).
    pub forbid_weight: Option<f64>,
    #[serde(default = "yes")]
    pub open: bool,
    #[serde(default = "yes")]
    pub bandlimit: bool,
}

fn default_iterations() -> usize {
    1000
}

fn default_target() -> f64 {
    0.999
}

fn default_threshold() -> f64 {
    0.99
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomoCfg {
    /// Reconstruction truncation per mode.
    pub dims: Vec<usize>,
    /// Displacements per mode.
    pub points: usize,
    /// One angle per mode; a single-mode set may list several.
    pub angles_rad: Vec<f64>,
    #[serde(default)]
    pub form: Option<String>,
    #[serde(default)]
    pub noise_sigma: f64,
    pub proposals: Option<usize>,
    pub point_set: Option<String>,
    pub record: Option<String>,
    pub state: Option<StateCfg>,
    /// Reference for the fidelity report; the simulated state when absent.
    pub target: Option<StateCfg>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
pub enum StateCfg {
    Vacuum,
    Fock { occupations: Vec<usize> },
    /// Cavity density matrix in the plain-text matrix format.
    File { path: String, dims: Vec<usize> },
    /// Final cavity state of a `simulate` scenario.
    Scenario { path: String },
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    Ramsey,
    CavityRamsey,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitCfg {
    pub model: FitKind,
    /// CSV with columns `t,y` or `t,alpha,y`; `t` in seconds.
    pub data: String,
    pub kerr_range_hz: Option<f64>,
}

/// A parsed scenario together with its location.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub path: PathBuf,
    pub dir: PathBuf,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        let file: ScenarioFile =
            toml::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let s = Self { file, path: path.to_path_buf(), dir };
        s.check_files()?;
        Ok(s)
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn check_files(&self) -> Result<(), CliError> {
        let f = &self.file;
        let mut refs: Vec<(&str, &String)> = Vec::new();
        if let Some(d) = &f.device {
            refs.push(("device", d));
        }
        if let Some(p) = f.drive.as_ref().and_then(|d| d.pulse_file.as_ref()) {
            refs.push(("drive.pulse_file", p));
        }
        if let Some(fit) = &f.fit {
            refs.push(("fit.data", &fit.data));
        }
        if let Some(t) = &f.tomography {
            for s in [&t.state, &t.target].into_iter().flatten() {
                match s {
                    StateCfg::File { path, .. } | StateCfg::Scenario { path } => refs.push(("tomography state", path)),
                    _ => {}
                }
            }
        }
        for (key, rel) in refs {
            let p = self.resolve(rel);
            if !p.is_file() {
                return Err(CliError::Parse(format!("{key}: file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn seed(&self, flag: Option<u64>) -> Result<u64, CliError> {
        flag.or(self.file.seed)
            .ok_or_else(|| CliError::Parse("key `seed` is required for stochastic steps".into()))
    }

    pub fn device(&self) -> Result<DeviceParams, CliError> {
        let rel = self.file.device.as_ref().ok_or_else(|| CliError::Parse("missing key `device`".into()))?;
        let p = self.resolve(rel);
        let text = std::fs::read_to_string(&p).map_err(|e| CliError::Parse(format!("{}: {e}", p.display())))?;
        load_device(&text).map_err(|e| CliError::Parse(format!("{}: {e}", p.display())))
    }

    pub fn layout(&self) -> Result<&LayoutCfg, CliError> {
        let l = self.file.layout.as_ref().ok_or_else(|| CliError::Parse("missing table [layout]".into()))?;
        if l.modes.is_empty() || l.modes.len() != l.truncation.len() {
            return Err(CliError::Parse("layout.modes and layout.truncation must be non-empty and equally long".into()));
        }
        Ok(l)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ScenarioFile, toml::de::Error> {
        toml::from_str(text)
    }

    #[test]
    fn defaults() {
        let f = parse("name = \"x\"\n[layout]\nmodes = [\"m\"]\ntruncation = [4]\n[drive]\nduration_us = 1.0\n").unwrap();
        assert_eq!(f.layout.unwrap().transmon_levels, 2);
        assert_eq!(f.drive.unwrap().steps, 1);
        assert!(f.channels.enabled);
        assert_eq!(f.output.samples, 101);
    }

    #[test]
    fn tagged_tables() {
        let f = parse("name = \"x\"\n[target]\nkind = \"fock\"\noccupations = [1, 0]\n").unwrap();
        assert!(matches!(f.target, Some(TargetCfg::Fock { ref occupations }) if occupations == &[1, 0]));
        let f = parse("name = \"x\"\n[blockade]\nn0 = 2\nomega_hz = 1.0\nframe = \"dressed\"\n").unwrap();
        assert_eq!(f.blockade.unwrap().frame, Frame::Dressed);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(parse("name = \"x\"\nsed = 1\n").is_err());
        assert!(parse("name = \"x\"\n[layout]\nmodes = []\ntruncation = []\nextra = 1\n").is_err());
        assert!(parse("name = \"x\"\n[target]\nkind = \"bell\"\n").is_err());
    }

    #[test]
    fn seed_precedence() {
        let s = Scenario { file: parse("name = \"x\"\nseed = 4\n").unwrap(), path: PathBuf::new(), dir: PathBuf::new() };
        assert_eq!(s.seed(None).unwrap(), 4);
        assert_eq!(s.seed(Some(9)).unwrap(), 9);
        let s = Scenario { file: parse("name = \"x\"\n").unwrap(), ..s };
        assert_eq!(s.seed(None).unwrap_err().exit_code(), 2);
    }
}
