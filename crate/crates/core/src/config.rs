//! Run configuration: built-in defaults, overlaid by an optional TOML file,
//! overlaid by `key.path=value` overrides. Unknown keys are errors at every
//! level.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::activations::{ActivationSpec, Family};
use crate::analysis;
use crate::error::{EspError, Result};
use crate::esp::EspTestSpec;
use crate::reservoir::{InputDistribution, ReservoirConfig};
use crate::sweep::SweepGrid;

/// Single pair-test settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EspSection {
    pub activation: ActivationSpec,
    pub n: usize,
    pub rho: f64,
    pub leak: f64,
    pub density: f64,
    pub input_scaling: f64,
    pub input_dim: usize,
    pub distribution: InputDistribution,
    pub horizon: usize,
    pub extended_horizon: usize,
    pub extend: bool,
    pub threshold: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for EspSection {
    fn default() -> Self {
        let r = ReservoirConfig::default();
        let e = EspTestSpec::new(ActivationSpec::Tanh);
        EspSection {
            activation: ActivationSpec::Tanh,
            n: r.n,
            rho: r.rho_target,
            leak: r.leak,
            density: r.density,
            input_scaling: r.input_scaling,
            input_dim: r.input_dim,
            distribution: e.distribution,
            horizon: e.horizon,
            extended_horizon: e.extended_horizon,
            extend: e.extend,
            threshold: e.threshold,
            trials: e.trials,
            seed: 0,
        }
    }
}

impl EspSection {
    pub fn to_spec(&self) -> EspTestSpec {
        EspTestSpec {
            reservoir: ReservoirConfig {
                n: self.n,
                rho_target: self.rho,
                leak: self.leak,
                density: self.density,
                input_scaling: self.input_scaling,
                input_dim: self.input_dim,
                seed: self.seed,
            },
            activation: self.activation,
            distribution: self.distribution,
            horizon: self.horizon,
            extended_horizon: self.extended_horizon,
            extend: self.extend,
            threshold: self.threshold,
            trials: self.trials,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LipschitzSection {
    pub activations: Vec<ActivationSpec>,
    pub epsilon: f64,
    pub samples: usize,
    pub domain: [f64; 2],
    pub seed: u64,
}

impl Default for LipschitzSection {
    fn default() -> Self {
        LipschitzSection {
            activations: Family::ALL
                .into_iter()
                .filter(|f| *f != Family::Brownian)
                .map(ActivationSpec::new)
                .collect(),
            epsilon: analysis::DEFAULT_EPSILON,
            samples: analysis::DEFAULT_SAMPLES,
            domain: [analysis::DEFAULT_DOMAIN.0, analysis::DEFAULT_DOMAIN.1],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralSection {
    pub n: usize,
    pub rho: f64,
    pub density: f64,
    pub seed: u64,
}

impl Default for SpectralSection {
    fn default() -> Self {
        SpectralSection {
            n: 500,
            rho: 10.0,
            density: ReservoirConfig::default().density,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleInit {
    Exhaustive,
    Random,
}

/// Attractor enumeration for a small leak-free quantized reservoir.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub activation: ActivationSpec,
    pub n: usize,
    pub rho: f64,
    pub density: f64,
    pub input_scaling: f64,
    /// Scalar inputs repeated periodically.
    pub input_cycle: Vec<f64>,
    pub init: OracleInit,
    pub random_inits: usize,
    pub budget: usize,
    pub seed: u64,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection {
            activation: ActivationSpec::new(Family::MandelbrotDiscrete),
            n: 4,
            rho: 0.95,
            density: 1.0,
            input_scaling: 1.0,
            input_cycle: vec![0.5, -0.5],
            init: OracleInit::Random,
            random_inits: 200,
            budget: 1_000_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurvesSection {
    pub activations: Vec<ActivationSpec>,
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    /// Seeds the Brownian curve's noise.
    pub seed: u64,
}

impl Default for CurvesSection {
    fn default() -> Self {
        CurvesSection {
            activations: Family::ALL.into_iter().map(ActivationSpec::new).collect(),
            lo: -3.0,
            hi: 3.0,
            points: 10_001,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub esp: EspSection,
    pub sweep: SweepGrid,
    pub scaling: SweepGrid,
    pub extreme_rho: SweepGrid,
    pub lipschitz: LipschitzSection,
    pub spectral: SpectralSection,
    pub oracle: OracleSection,
    pub curves: CurvesSection,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            esp: EspSection::default(),
            sweep: SweepGrid::default(),
            scaling: SweepGrid::scaling_default(),
            extreme_rho: SweepGrid::extreme_rho_default(),
            lipschitz: LipschitzSection::default(),
            spectral: SpectralSection::default(),
            oracle: OracleSection::default(),
            curves: CurvesSection::default(),
        }
    }
}

fn parse_err(what: impl Into<String>, reason: impl ToString) -> EspError {
    EspError::Parse {
        what: what.into(),
        reason: reason.to_string(),
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses an override value as TOML; anything that is not valid TOML is
/// taken as a bare string, so `esp.activation=tanh` works unquoted.
fn parse_value(raw: &str) -> toml::Value {
    let raw = raw.trim();
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| parse_err("override", format!("expected key=value, got `{assignment}`")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(parse_err("override", format!("malformed key `{path}`")));
    }
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut cursor = table;
    for key in parents {
        cursor = match cursor.get_mut(*key) {
            Some(toml::Value::Table(t)) => t,
            _ => {
                return Err(parse_err(
                    "override",
                    format!("unknown config section `{key}` in `{path}`"),
                ))
            }
        };
    }
    if !cursor.contains_key(*last) {
        return Err(parse_err("override", format!("unknown config key `{path}`")));
    }
    cursor.insert(last.to_string(), parse_value(raw));
    Ok(())
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::load_layers(Some(text), &[])
    }

    /// Defaults, then `file_text`, then each `key=value` override in order.
    pub fn load_layers(file_text: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut table =
            toml::Table::try_from(Config::default()).map_err(|e| parse_err("default config", e))?;
        if let Some(text) = file_text {
            let overlay: toml::Table = toml::from_str(text).map_err(|e| parse_err("config file", e))?;
            merge(&mut table, overlay);
        }
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        toml::Value::Table(table)
            .try_into::<Config>()
            .map_err(|e| parse_err("config", e))
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = path
            .map(|p| std::fs::read_to_string(p).map_err(|e| EspError::io(p, e)))
            .transpose()?;
        Self::load_layers(text.as_deref(), overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
