//! Sectioned key-value configuration. Every key is optional; omitted keys
//! take the defaults below, which reproduce the reference runs.
//!
//! ```toml
//! [zeno2]
//! half_difference = 2.0
//! periods = [0.001, 0.05]
//! ```

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if let Some(field) = &self.field {
            write!(f, "`{field}`: ")?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DephasingSection {
    pub atom_count: usize,
    pub center_frequency: f64,
    pub fwhm: f64,
    pub replicas: usize,
    pub seed: u64,
    pub t_start: f64,
    pub t_stop: f64,
    pub points: usize,
    pub histogram_atoms: usize,
    pub histogram_bins: usize,
}

impl Default for DephasingSection {
    fn default() -> Self {
        DephasingSection {
            atom_count: 100,
            center_frequency: 100.0,
            fwhm: 10.0,
            replicas: 10_000,
            seed: 0x5eed_2024,
            t_start: 0.0,
            t_stop: 0.5,
            points: 201,
            histogram_atoms: 9,
            histogram_bins: 60,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Zeno2Section {
    pub half_difference: f64,
    pub common_offset: f64,
    pub periods: Vec<f64>,
    pub photon_number: usize,
    /// Fixed run length; when absent each run lasts until the closed-form
    /// survival reaches `min_survival`.
    pub final_time: Option<f64>,
    pub min_survival: f64,
    pub max_points: usize,
}

impl Default for Zeno2Section {
    fn default() -> Self {
        Zeno2Section {
            half_difference: 2.0,
            common_offset: 0.0,
            periods: vec![0.001, 0.05],
            photon_number: 12,
            final_time: None,
            min_survival: 0.1,
            max_points: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Zeno4Section {
    pub splittings: [f64; 2],
    pub periods: Vec<f64>,
    pub final_time: Option<f64>,
    pub min_survival: f64,
    pub max_points: usize,
    pub leakage_photons: Vec<usize>,
    pub leakage_couplings: Vec<f64>,
}

impl Default for Zeno4Section {
    fn default() -> Self {
        Zeno4Section {
            splittings: [2.0, 2.0],
            periods: vec![0.05],
            final_time: None,
            min_survival: 0.1,
            max_points: 500,
            leakage_photons: vec![1, 2, 4, 8],
            leakage_couplings: vec![1.0, 2.0, 3.5],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Perturbative,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadoutSection {
    /// Values of `omega_clock t_f`, one trace each.
    pub clock_phases: Vec<f64>,
    pub laser_detuning: f64,
    pub laser_amplitude: f64,
    pub coupling: f64,
    pub emission_cutoff: usize,
    pub t_stop: f64,
    pub points: usize,
    pub fit_periods: f64,
    pub model: Model,
}

impl Default for ReadoutSection {
    fn default() -> Self {
        ReadoutSection {
            clock_phases: vec![0.0, PI],
            laser_detuning: 10.0,
            laser_amplitude: 1.0,
            coupling: 2.0,
            emission_cutoff: 2,
            t_stop: 2.0,
            points: 401,
            fit_periods: 2.0,
            model: Model::Perturbative,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AllanSection {
    pub fwhm: f64,
    pub carrier: f64,
    pub cycle_time: f64,
    pub atom_counts: Vec<f64>,
    pub averaging_times: Vec<f64>,
}

impl Default for AllanSection {
    fn default() -> Self {
        AllanSection {
            fwhm: 1.0,
            carrier: 1e9,
            cycle_time: 1.0,
            atom_counts: vec![1.0, 2.0, 9.0, 100.0],
            averaging_times: vec![1.0, 4.0, 100.0],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub dephasing: DephasingSection,
    pub zeno2: Zeno2Section,
    pub zeno4: Zeno4Section,
    pub readout: ReadoutSection,
    pub allan: AllanSection,
}

/// 1-based line of byte `offset`.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line where `key` is assigned inside `[section]`, if it is.
pub fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
        } else if current == section {
            let lhs = line.split('=').next().unwrap_or("").trim();
            if lhs == key {
                return Some(i + 1);
            }
        }
    }
    None
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let config: Config = toml::from_str(text).map_err(|e| ConfigError {
            line: e.span().map(|s| line_of(text, s.start)),
            field: None,
            message: e.message().trim().to_string(),
        })?;
        config.validate(text)?;
        Ok(config)
    }

    /// Range and consistency checks, reported against the line of the key.
    pub fn validate(&self, text: &str) -> Result<(), ConfigError> {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        let all_pos = |xs: &[f64]| !xs.is_empty() && xs.iter().all(|&x| pos(x));
        let (d, z2, z4, r, a) = (
            &self.dephasing,
            &self.zeno2,
            &self.zeno4,
            &self.readout,
            &self.allan,
        );
        #[rustfmt::skip]
        let checks = [
            ("dephasing", "atom_count", d.atom_count > 0, "must be at least 1"),
            ("dephasing", "center_frequency", pos(d.center_frequency), "must be positive"),
            ("dephasing", "fwhm", pos(d.fwhm), "must be positive"),
            ("dephasing", "replicas", d.replicas > 1, "must be at least 2"),
            ("dephasing", "t_start", d.t_start >= 0.0, "must be non-negative"),
            ("dephasing", "t_stop", d.t_stop.is_finite() && d.t_stop > d.t_start, "must exceed t_start"),
            ("dephasing", "points", d.points >= 2, "must be at least 2"),
            ("dephasing", "histogram_atoms", d.histogram_atoms > 0, "must be at least 1"),
            ("dephasing", "histogram_bins", d.histogram_bins > 0, "must be at least 1"),
            ("zeno2", "half_difference", z2.half_difference.is_finite(), "must be finite"),
            ("zeno2", "common_offset", z2.common_offset.is_finite(), "must be finite"),
            ("zeno2", "periods", all_pos(&z2.periods), "must list positive values"),
            ("zeno2", "photon_number", z2.photon_number > 0, "must be at least 1"),
            ("zeno2", "final_time", z2.final_time.is_none_or(pos), "must be positive"),
            ("zeno2", "min_survival", z2.min_survival > 0.0 && z2.min_survival < 1.0, "must lie in (0, 1)"),
            ("zeno2", "max_points", z2.max_points >= 2, "must be at least 2"),
            ("zeno4", "splittings", z4.splittings.iter().all(|x| x.is_finite()), "must be finite"),
            ("zeno4", "periods", all_pos(&z4.periods), "must list positive values"),
            ("zeno4", "final_time", z4.final_time.is_none_or(pos), "must be positive"),
            ("zeno4", "min_survival", z4.min_survival > 0.0 && z4.min_survival < 1.0, "must lie in (0, 1)"),
            ("zeno4", "max_points", z4.max_points >= 2, "must be at least 2"),
            ("zeno4", "leakage_photons", z4.leakage_photons.iter().all(|&n| n > 0), "must be at least 1"),
            ("zeno4", "leakage_couplings", z4.leakage_couplings.iter().all(|&g| pos(g)), "must be positive"),
            ("readout", "clock_phases", !r.clock_phases.is_empty() && r.clock_phases.iter().all(|&x| x.is_finite() && x >= 0.0), "must list non-negative values"),
            ("readout", "laser_detuning", r.laser_detuning.is_finite() && r.laser_detuning != 0.0, "must be nonzero"),
            ("readout", "laser_amplitude", r.laser_amplitude.is_finite() && r.laser_amplitude >= 0.0, "must be non-negative"),
            ("readout", "coupling", pos(r.coupling), "must be positive"),
            ("readout", "emission_cutoff", r.emission_cutoff >= 1, "must be at least 1"),
            ("readout", "t_stop", pos(r.t_stop), "must be positive"),
            ("readout", "points", r.points >= 2, "must be at least 2"),
            ("readout", "fit_periods", pos(r.fit_periods), "must be positive"),
            ("allan", "fwhm", pos(a.fwhm), "must be positive"),
            ("allan", "carrier", pos(a.carrier), "must be positive"),
            ("allan", "cycle_time", pos(a.cycle_time), "must be positive"),
            ("allan", "atom_counts", all_pos(&a.atom_counts), "must list positive values"),
            ("allan", "averaging_times", all_pos(&a.averaging_times), "must list positive values"),
        ];
        match checks.iter().find(|c| !c.2) {
            None => Ok(()),
            Some(&(section, key, _, message)) => Err(ConfigError {
                line: locate(text, section, key),
                field: Some(format!("{section}.{key}")),
                message: message.to_string(),
            }),
        }
    }

    /// Canonical text of one section, as written to the manifest.
    pub fn section_text(&self, section: &str) -> String {
        let rendered = match section {
            "dephasing" => toml::to_string(&self.dephasing),
            "zeno2" => toml::to_string(&self.zeno2),
            "zeno4" => toml::to_string(&self.zeno4),
            "readout" => toml::to_string(&self.readout),
            "allan" => toml::to_string(&self.allan),
            _ => return String::new(),
        };
        format!(
            "[{section}]\n{}",
            rendered.expect("config sections serialize")
        )
    }
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
    }

    #[test]
    fn canonical_section_parses_back() {
        let c = Config::default();
        for s in ["dephasing", "zeno2", "zeno4", "readout", "allan"] {
            let text = c.section_text(s);
            assert_eq!(Config::parse(&text).unwrap(), c, "{s}");
        }
    }

    #[test]
    fn errors_carry_lines() {
        let e =
            Config::parse("[zeno2]\nhalf_difference = 2.0\nperiods = [0.01, -1.0]\n").unwrap_err();
        assert_eq!(e.line, Some(3));
        assert_eq!(e.field.as_deref(), Some("zeno2.periods"));
        let e = Config::parse("[allan]\n\nbogus = 1\n").unwrap_err();
        assert_eq!(e.line, Some(3));
        let e = Config::parse("[readout]\nmodel = \"exact\"\n").unwrap_err();
        assert_eq!(e.line, Some(2));
        let e = Config::parse("[dephasing]\nfwhm = \"ten\"\n").unwrap_err();
        assert_eq!(e.line, Some(2));
    }
}
