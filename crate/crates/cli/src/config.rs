//! Experiment configuration: TOML file, `--set` overrides and defaults.
//!
//! ```toml
//! [network]
//! macro_density = 1e-4
//! pico_density = 5e-4
//! macro_pathloss = 4.0
//! pico_pathloss = 4.0
//! power_ratio_db = 10.0
//! macro_antennas = 8
//! pico_antennas = 4
//! user_density = 0.01
//! bias_db = 5.0
//! bandwidth = 1e7
//! in_dof = 4
//!
//! [experiment]
//! engine = "analytic-mla"
//! taus = [1e5, 1e6]
//! seed = 1
//! ```
//!
//! Every dB key has a linear twin without the `_db` suffix; giving both is
//! an error.

use std::path::{Path, PathBuf};

use hetnet_core::association::NetworkConfig;
use hetnet_core::simulator::{Fidelity, SchemeVariant};
use hetnet_core::special_math::TierParams;
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration field `{}`: {}", self.field, self.reason)
    }
}

fn bad(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    #[serde(default)]
    network: RawNetwork,
    #[serde(default)]
    experiment: RawExperiment,
}

const NETWORK_KEYS: &[&str] = &[
    "macro_density",
    "pico_density",
    "macro_pathloss",
    "pico_pathloss",
    "power_ratio",
    "power_ratio_db",
    "macro_antennas",
    "pico_antennas",
    "user_density",
    "bias",
    "bias_db",
    "bandwidth",
    "in_dof",
    "load_shape",
    "load_mean_factor",
];

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    macro_density: Option<f64>,
    pico_density: Option<f64>,
    macro_pathloss: Option<f64>,
    pico_pathloss: Option<f64>,
    power_ratio: Option<f64>,
    power_ratio_db: Option<f64>,
    macro_antennas: Option<usize>,
    pico_antennas: Option<usize>,
    user_density: Option<f64>,
    bias: Option<f64>,
    bias_db: Option<f64>,
    bandwidth: Option<f64>,
    in_dof: Option<usize>,
    load_shape: Option<f64>,
    load_mean_factor: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    engine: Option<String>,
    taus: Option<Vec<f64>>,
    bias_grid_db: Option<Vec<f64>>,
    trials: Option<usize>,
    seed: Option<u64>,
    fidelity: Option<String>,
    scheme: Option<String>,
    abs_fraction: Option<f64>,
    abs_iterations: Option<usize>,
    tolerance: Option<f64>,
    dump: Option<bool>,
    out_dir: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EngineChoice {
    AnalyticMla,
    AnalyticExact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeChoice {
    In,
    Abs,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub network: NetworkConfig,
    pub engine: EngineChoice,
    pub taus: Vec<f64>,
    pub bias_grid_db: Vec<f64>,
    pub trials: usize,
    pub seed: Option<u64>,
    pub fidelity: Fidelity,
    pub scheme: SchemeChoice,
    pub abs_fraction: f64,
    pub abs_iterations: Option<usize>,
    pub tolerance: f64,
    pub dump: bool,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// Seed, required by every Monte Carlo run.
    pub fn seed(&self) -> Result<u64, ConfigError> {
        self.seed
            .ok_or_else(|| bad("seed", "required for Monte Carlo runs (use --seed or experiment.seed)"))
    }

    pub fn variant(&self) -> SchemeVariant {
        match self.scheme {
            SchemeChoice::In => SchemeVariant::In(self.network.in_dof),
            SchemeChoice::Abs => SchemeVariant::Abs(self.abs_fraction),
        }
    }
}

fn db(v: f64) -> f64 {
    10f64.powf(v / 10.0)
}

fn pick_scale(linear: Option<f64>, in_db: Option<f64>, name: &str, default_db: f64) -> Result<f64, ConfigError> {
    match (linear, in_db) {
        (Some(_), Some(_)) => Err(bad(name, format!("give either `{name}` or `{name}_db`, not both"))),
        (Some(v), None) => Ok(v),
        (None, Some(d)) => Ok(db(d)),
        (None, None) => Ok(db(default_db)),
    }
}

/// Parse the right-hand side of `--set key=value` as a TOML value, falling
/// back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| bad(assignment, "overrides take the form key=value"))?;
    let key = key.trim();
    let (section, name) = match key.split_once('.') {
        Some((s, n)) => (s.to_string(), n.to_string()),
        None if NETWORK_KEYS.contains(&key) => ("network".to_string(), key.to_string()),
        None => ("experiment".to_string(), key.to_string()),
    };
    let table = doc
        .entry(section.clone())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        .as_table_mut()
        .ok_or_else(|| bad(&section, "is not a table"))?;
    table.insert(name, parse_value(value.trim()));
    Ok(())
}

/// Field name from a serde error such as "unknown field `foo`".
fn field_of(err: &str) -> String {
    err.split('`').nth(1).unwrap_or("config").to_string()
}

/// Load the configuration file (if any), apply overrides and validate.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| bad("config", format!("{}: {e}", p.display())))?;
            text.parse::<toml::Table>().map_err(|e| bad("config", e.to_string()))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let raw: RawFile = toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| {
        let msg = e.to_string();
        bad(&field_of(&msg), msg.trim().to_string())
    })?;
    build(raw)
}

fn build(raw: RawFile) -> Result<ExperimentConfig, ConfigError> {
    let n = raw.network;
    let power = pick_scale(n.power_ratio, n.power_ratio_db, "power_ratio", 10.0)?;
    let bias = pick_scale(n.bias, n.bias_db, "bias", 5.0)?;
    let macro_tier = TierParams {
        density: n.macro_density.unwrap_or(1e-4),
        pathloss: n.macro_pathloss.unwrap_or(4.0),
        power,
        antennas: n.macro_antennas.unwrap_or(8),
    };
    let pico_tier = TierParams {
        density: n.pico_density.unwrap_or(5e-4),
        pathloss: n.pico_pathloss.unwrap_or(4.0),
        power: 1.0,
        antennas: n.pico_antennas.unwrap_or(4),
    };
    let mut network = NetworkConfig::new(
        macro_tier,
        pico_tier,
        n.user_density.unwrap_or(0.01),
        bias,
        n.bandwidth.unwrap_or(1e7),
        n.in_dof.unwrap_or(4),
    );
    if let Some(v) = n.load_shape {
        network.load_shape = v;
    }
    if let Some(v) = n.load_mean_factor {
        network.load_mean_factor = v;
    }
    network.validate().map_err(|e| match e {
        hetnet_core::Error::Config { field, reason } => bad(&field, reason),
        other => bad("network", other.to_string()),
    })?;

    let e = raw.experiment;
    let engine = match e.engine.as_deref().unwrap_or("analytic-mla") {
        "analytic-mla" => EngineChoice::AnalyticMla,
        "analytic-exact" => EngineChoice::AnalyticExact,
        "monte-carlo" => EngineChoice::MonteCarlo,
        other => {
            return Err(bad(
                "engine",
                format!("`{other}` is not one of analytic-mla, analytic-exact, monte-carlo"),
            ))
        }
    };
    let fidelity = match e.fidelity.as_deref().unwrap_or("fast") {
        "fast" => Fidelity::Fast,
        "full" => Fidelity::Full,
        other => return Err(bad("fidelity", format!("`{other}` is not one of fast, full"))),
    };
    let scheme = match e.scheme.as_deref().unwrap_or("in") {
        "in" => SchemeChoice::In,
        "abs" => SchemeChoice::Abs,
        other => return Err(bad("scheme", format!("`{other}` is not one of in, abs"))),
    };
    let taus = e.taus.unwrap_or_else(|| vec![1e5, 2e5, 5e5, 1e6, 2e6, 5e6]);
    if taus.is_empty() || taus.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(bad("taus", "must be a non-empty list of positive rates"));
    }
    let bias_grid_db = e
        .bias_grid_db
        .unwrap_or_else(|| (0..=8).map(|i| 3.0 * i as f64).collect());
    if bias_grid_db.is_empty() || bias_grid_db.iter().any(|&b| !(b >= 0.0 && b.is_finite())) {
        return Err(bad("bias_grid_db", "must be a non-empty list of values >= 0 dB"));
    }
    let trials = e.trials.unwrap_or(10_000);
    if trials == 0 {
        return Err(bad("trials", "must be at least 1"));
    }
    let abs_fraction = e.abs_fraction.unwrap_or(0.1);
    if !(abs_fraction > 0.0 && abs_fraction < 1.0) {
        return Err(bad("abs_fraction", "must lie in (0, 1)"));
    }
    if e.abs_iterations == Some(0) {
        return Err(bad("abs_iterations", "must be at least 1"));
    }
    let tolerance = e.tolerance.unwrap_or(0.03);
    if !(tolerance > 0.0) {
        return Err(bad("tolerance", "must be positive"));
    }
    Ok(ExperimentConfig {
        network,
        engine,
        taus,
        bias_grid_db,
        trials,
        seed: e.seed,
        fidelity,
        scheme,
        abs_fraction,
        abs_iterations: e.abs_iterations,
        tolerance,
        dump: e.dump.unwrap_or(false),
        out_dir: PathBuf::from(e.out_dir.unwrap_or_else(|| "out".to_string())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = load(None, &[]).unwrap();
        assert_eq!(c.network.macro_tier.antennas, 8);
        assert!((c.network.macro_tier.power - 10.0).abs() < 1e-12);
        assert_eq!(c.seed, None);
        assert!(c.seed().is_err());
    }

    #[test]
    fn overrides_accept_bare_and_dotted_keys() {
        let sets = ["bias_db=10".to_string(), "experiment.taus=[1e3, 1e4]".to_string(), "engine=monte-carlo".to_string()];
        let c = load(None, &sets).unwrap();
        assert!((c.network.bias - 10.0).abs() < 1e-12);
        assert_eq!(c.taus, vec![1e3, 1e4]);
        assert_eq!(c.engine, EngineChoice::MonteCarlo);
    }

    #[test]
    fn db_and_linear_twins_conflict() {
        let err = load(None, &["bias=2".into(), "bias_db=3".into()]).unwrap_err();
        assert_eq!(err.field, "bias");
    }

    #[test]
    fn errors_name_the_field() {
        assert_eq!(load(None, &["in_dof=8".into()]).unwrap_err().field, "in_dof");
        assert_eq!(load(None, &["network.colour=1".into()]).unwrap_err().field, "colour");
        assert_eq!(load(None, &["fidelity=slow".into()]).unwrap_err().field, "fidelity");
        assert_eq!(load(None, &["taus=[]".into()]).unwrap_err().field, "taus");
    }
}
