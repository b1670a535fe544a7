//! Pipeline configuration: thresholds, CPW defaults, and fit options.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use crate::jsonout::Json;

/// Environment variable consulted when `--config` is absent.
pub const CONFIG_ENV_VAR: &str = "FLIPCHIP_CONFIG";

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Top-chip substrate thickness subtracted from measured heights (µm).
    pub substrate_thickness_um: f64,
    /// Height separating bottom-chip and top-chip clusters (µm).
    pub step_threshold_um: f64,
    /// Column-median jump that marks an artifact scan (µm).
    pub mask_threshold_um: f64,
    pub cpw: CpwDefaults,
    pub fit: FitOptions,
    /// Default output directory when `--out` is absent.
    pub out_dir: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpwDefaults {
    pub eps_substrate: f64,
    pub h_substrate_um: f64,
    pub d_um: f64,
    pub eps_superstrate: f64,
    pub h_superstrate_um: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    /// Fit resonator groups separately per facing in reports.
    pub per_facing: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            substrate_thickness_um: 525.2,
            step_threshold_um: 400.0,
            mask_threshold_um: 2.0,
            cpw: CpwDefaults::default(),
            fit: FitOptions::default(),
            out_dir: None,
        }
    }
}

impl Default for CpwDefaults {
    fn default() -> Self {
        Self {
            eps_substrate: 11.45,
            h_substrate_um: 525.0,
            d_um: 10.0,
            eps_superstrate: 11.45,
            h_superstrate_um: 525.0,
        }
    }
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { per_facing: true }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: PipelineConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    /// Resolve from an explicit path, the `FLIPCHIP_CONFIG` environment
    /// variable, or built-in defaults, in that order.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        if let Some(path) = explicit {
            return Self::load(path);
        }
        if let Ok(env_path) = std::env::var(CONFIG_ENV_VAR) {
            if !env_path.trim().is_empty() {
                return Self::load(Path::new(&env_path));
            }
        }
        Ok(Self::default())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("substrate_thickness_um", self.substrate_thickness_um),
            ("step_threshold_um", self.step_threshold_um),
            ("mask_threshold_um", self.mask_threshold_um),
            ("cpw.eps_substrate", self.cpw.eps_substrate),
            ("cpw.h_substrate_um", self.cpw.h_substrate_um),
            ("cpw.d_um", self.cpw.d_um),
            ("cpw.eps_superstrate", self.cpw.eps_superstrate),
            ("cpw.h_superstrate_um", self.cpw.h_superstrate_um),
        ] {
            if !(value > 0.0) {
                bail!("config field {name} must be > 0, got {value}");
            }
        }
        Ok(())
    }

    /// Deterministic JSON image of the configuration, embedded in reports.
    pub fn to_json(&self) -> Json {
        Json::obj(vec![
            ("substrate_thickness_um", Json::Num(self.substrate_thickness_um)),
            ("step_threshold_um", Json::Num(self.step_threshold_um)),
            ("mask_threshold_um", Json::Num(self.mask_threshold_um)),
            (
                "cpw",
                Json::obj(vec![
                    ("eps_substrate", Json::Num(self.cpw.eps_substrate)),
                    ("h_substrate_um", Json::Num(self.cpw.h_substrate_um)),
                    ("d_um", Json::Num(self.cpw.d_um)),
                    ("eps_superstrate", Json::Num(self.cpw.eps_superstrate)),
                    ("h_superstrate_um", Json::Num(self.cpw.h_superstrate_um)),
                ]),
            ),
            (
                "fit",
                Json::obj(vec![("per_facing", Json::Bool(self.fit.per_facing))]),
            ),
        ])
    }
}
