//! Device parameter files (TOML).
//!
//! Keys carry their unit: `*_hz` values are ordinary frequencies and are
//! converted to angular frequency on load, `*_us` values are microseconds.
//!
//! ```toml
//! [transmon]
//! omega_hz = 4.99e9
//! t1_us = 86.0
//! t2_us = 58.0
//! nth = 0.012
//!
//! [[modes]]
//! name = "mode3"
//! omega_hz = 6.223e9
//! chi_hz = -1.136e6
//! kerr_hz = -9.0e3
//! t1_us = 2000.0
//! t2_us = 2500.0
//!
//! [[cross_kerr]]
//! modes = ["mode3", "mode4"]
//! k_hz = -2.0e3
//! ```

use crate::hamiltonian::DeviceParams;
use crate::{Error, Result, TWO_PI};
use nalgebra::DMatrix;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransmonConfig {
    pub omega_hz: f64,
    pub t1_us: f64,
    pub t2_us: f64,
    #[serde(default)]
    pub nth: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub name: String,
    pub omega_hz: f64,
    pub chi_hz: f64,
    #[serde(default)]
    pub kerr_hz: f64,
    pub t1_us: f64,
    #[serde(default)]
    pub t2_us: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossKerrConfig {
    pub modes: [String; 2],
    pub k_hz: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub transmon: TransmonConfig,
    pub modes: Vec<ModeConfig>,
    #[serde(default)]
    pub cross_kerr: Vec<CrossKerrConfig>,
}

impl DeviceConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn mode_index(&self, name: &str) -> Result<usize> {
        self.modes
            .iter()
            .position(|m| m.name == name)
            .ok_or_else(|| Error::Parse(format!("unknown mode {name:?}")))
    }

    pub fn to_params(&self) -> Result<DeviceParams<f64>> {
        let n = self.modes.len();
        if n == 0 {
            return Err(Error::Parse("device needs at least one mode".into()));
        }
        let mut cross = DMatrix::zeros(n, n);
        for ck in &self.cross_kerr {
            let a = self.mode_index(&ck.modes[0])?;
            let b = self.mode_index(&ck.modes[1])?;
            if a == b {
                return Err(Error::Parse(format!("cross-Kerr pair {:?} names one mode twice", ck.modes)));
            }
            cross[(a, b)] = TWO_PI * ck.k_hz;
            cross[(b, a)] = TWO_PI * ck.k_hz;
        }
        let p = DeviceParams {
            omega_q: TWO_PI * self.transmon.omega_hz,
            omega_m: self.modes.iter().map(|m| TWO_PI * m.omega_hz).collect(),
            chi_m: self.modes.iter().map(|m| TWO_PI * m.chi_hz).collect(),
            kerr_m: self.modes.iter().map(|m| TWO_PI * m.kerr_hz).collect(),
            cross_kerr: cross,
            t1_q: self.transmon.t1_us * 1e-6,
            t2_q: self.transmon.t2_us * 1e-6,
            nth_q: self.transmon.nth,
            t1_m: self.modes.iter().map(|m| m.t1_us * 1e-6).collect(),
            t2_m: self.modes.iter().map(|m| m.t2_us.unwrap_or(2.0 * m.t1_us) * 1e-6).collect(),
            mode_names: self.modes.iter().map(|m| m.name.clone()).collect(),
        };
        p.validate()?;
        Ok(p)
    }
}

pub fn load_device(text: &str) -> Result<DeviceParams<f64>> {
    DeviceConfig::parse(text)?.to_params()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[transmon]
omega_hz = 4.99e9
t1_us = 86.0
t2_us = 58.0
nth = 0.012

[[modes]]
name = "a"
omega_hz = 6.0e9
chi_hz = -1.0e6
kerr_hz = -5.0e3
t1_us = 2000.0

[[modes]]
name = "b"
omega_hz = 6.5e9
chi_hz = -1.2e6
t1_us = 1500.0

[[cross_kerr]]
modes = ["a", "b"]
k_hz = -2.0e3
"#;

    #[test]
    fn converts_units() {
        let p = load_device(SAMPLE).unwrap();
        assert!((p.chi_m[0] - TWO_PI * -1.0e6).abs() < 1e-6);
        assert!((p.t1_q - 86e-6).abs() < 1e-15);
        assert_eq!(p.cross_kerr[(0, 1)], p.cross_kerr[(1, 0)]);
        assert!((p.cross_kerr[(1, 0)] - TWO_PI * -2.0e3).abs() < 1e-9);
        assert_eq!(p.mode_names, vec!["a", "b"]);
    }

    #[test]
    fn reports_bad_keys() {
        let err = load_device(&SAMPLE.replace("chi_hz = -1.0e6", "chi = -1.0e6")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("chi"), "{msg}");
        assert!(load_device(&SAMPLE.replace("t2_us = 58.0", "t2_us = 580.0")).is_err());
        assert!(load_device(&SAMPLE.replace("[\"a\", \"b\"]", "[\"a\", \"z\"]")).is_err());
    }
}
