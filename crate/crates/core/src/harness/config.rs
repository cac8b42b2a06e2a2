//! Run configuration: TOML-backed experiment descriptions with per-method
//! learner settings.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::dgp::Scenario;
use crate::error::{Error, Result};

pub const KNOWN_METHODS: [&str; 13] = [
    "ols",
    "rsr",
    "plm_rbf",
    "plm_gp",
    "gsem",
    "spatial_plus",
    "svc",
    "flex_rbf",
    "flex_gp",
    "flex_forest",
    "dml_rbf",
    "dml_forest",
    "dml_crossfit",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    /// Attach bootstrap confidence intervals to every replicate.
    #[serde(default)]
    pub bootstrap: bool,
    pub k_spatial: Option<usize>,
    pub k_joint: Option<usize>,
    pub trees: Option<usize>,
    pub leaf_min: Option<usize>,
    /// Fixed smoothing penalties injected by the bootstrap to reuse the
    /// full-data GCV selection; not part of the config file.
    #[serde(skip)]
    pub fixed_primary_lambda: Option<f64>,
    #[serde(skip)]
    pub fixed_exposure_lambda: Option<f64>,
}

impl MethodSpec {
    pub fn named(name: &str) -> Self {
        MethodSpec {
            name: name.to_string(),
            bootstrap: false,
            k_spatial: None,
            k_joint: None,
            trees: None,
            leaf_min: None,
            fixed_primary_lambda: None,
            fixed_exposure_lambda: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CrossfitSettings {
    /// Fit-ball radius.
    pub q: f64,
    /// Minimum fit/eval separation.
    pub r: f64,
    pub folds: usize,
    #[serde(default)]
    pub size_weighted: bool,
}

impl Default for CrossfitSettings {
    fn default() -> Self {
        CrossfitSettings {
            q: 0.8,
            r: 0.0,
            folds: 5,
            size_weighted: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BootstrapSettings {
    pub resamples: usize,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        BootstrapSettings {
            resamples: crate::inference::DEFAULT_BOOTSTRAP_RESAMPLES,
        }
    }
}

fn default_delta() -> f64 {
    1.0
}

fn default_oracle_n() -> usize {
    crate::dgp::DEFAULT_ORACLE_N
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenarios: Vec<String>,
    pub sample_sizes: Vec<usize>,
    /// Replicates per sample size, aligned with `sample_sizes`.
    pub replicates: Vec<usize>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub master_seed: u64,
    #[serde(default = "default_oracle_n")]
    pub oracle_n: usize,
    #[serde(default)]
    pub bootstrap: BootstrapSettings,
    #[serde(default)]
    pub crossfit: CrossfitSettings,
    pub output: Option<String>,
    /// Optional locally covariant outcome noise added in every scenario.
    pub spatial_noise_radius: Option<f64>,
    pub spatial_noise_sd: Option<f64>,
    #[serde(rename = "method")]
    pub methods: Vec<MethodSpec>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::Config("no scenarios listed".into()));
        }
        for s in &self.scenarios {
            s.parse::<Scenario>()
                .map_err(|_| Error::Config(format!("unknown scenario: {s}")))?;
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.len() != self.replicates.len() {
            return Err(Error::Config(
                "sample_sizes and replicates must be non-empty and aligned".into(),
            ));
        }
        if self.replicates.iter().any(|&r| r == 0) {
            return Err(Error::Config("replicates must be >= 1".into()));
        }
        if !self.delta.is_finite() {
            return Err(Error::Config("delta must be finite".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods listed".into()));
        }
        for m in &self.methods {
            if !KNOWN_METHODS.contains(&m.name.as_str()) {
                return Err(Error::Config(format!("unknown method: {}", m.name)));
            }
        }
        match (self.spatial_noise_radius, self.spatial_noise_sd) {
            (Some(r), _) if r <= 0.0 => {
                return Err(Error::Config("spatial_noise_radius must be positive".into()))
            }
            (None, Some(_)) => {
                return Err(Error::Config(
                    "spatial_noise_sd requires spatial_noise_radius".into(),
                ))
            }
            _ => {}
        }
        Ok(())
    }
}

/// FNV-1a, used to fold strings into seed material.
fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Per-replicate seed: a stable hash of (master_seed, scenario, n,
/// replicate index), so any scheduling order reproduces the same streams.
pub fn replicate_seed(master: u64, scenario: Scenario, n: usize, replicate: usize) -> u64 {
    let mut h = splitmix(master);
    h = splitmix(h ^ fnv1a(scenario.as_str()));
    h = splitmix(h ^ n as u64);
    splitmix(h ^ replicate as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
scenarios = ["linear"]
sample_sizes = [1000]
replicates = [10]
master_seed = 42

[[method]]
name = "ols"
"#;

    #[test]
    fn minimal_config_parses() {
        let c = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.delta, 1.0);
        assert_eq!(c.bootstrap.resamples, 120);
        assert_eq!(c.methods.len(), 1);
    }

    #[test]
    fn unknown_method_rejected() {
        let text = MINIMAL.replace("\"ols\"", "\"olz\"");
        assert!(matches!(
            RunConfig::from_toml_str(&text),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn unknown_scenario_rejected() {
        let text = MINIMAL.replace("\"linear\"", "\"banana\"");
        assert!(matches!(
            RunConfig::from_toml_str(&text),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn misaligned_replicates_rejected() {
        let text = MINIMAL.replace("replicates = [10]", "replicates = [10, 20]");
        assert!(RunConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn replicate_seeds_distinct_and_stable() {
        let a = replicate_seed(1, Scenario::Linear, 1000, 0);
        let b = replicate_seed(1, Scenario::Linear, 1000, 1);
        let c = replicate_seed(1, Scenario::Simple, 1000, 0);
        let d = replicate_seed(2, Scenario::Linear, 1000, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        assert_eq!(a, replicate_seed(1, Scenario::Linear, 1000, 0));
    }
}
