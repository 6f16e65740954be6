//! Experiment configuration: JSON schema, defaults and validation with
//! dotted field paths in every message.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use weakkam::Model;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: Model,
    #[serde(default)]
    pub grid: GridBlock,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub sweep: SweepBlock,
    #[serde(default)]
    pub stochastic: StochasticBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridBlock {
    pub nx: usize,
    pub nt: usize,
}

impl Default for GridBlock {
    fn default() -> Self {
        Self { nx: 400, nt: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Numerics {
    pub vmax: f64,
    pub cell_tol: f64,
    pub barrier_tol: f64,
    pub shoot_tol: f64,
    pub slope_tol: f64,
    /// Root seeds for Monte Carlo replicates. Empty means a single run with
    /// `stochastic.seed`.
    pub seeds: Vec<u64>,
    pub grid_tol: f64,
    pub aubry_tol: f64,
    pub karp_limit: usize,
    pub max_periods: usize,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            vmax: 4.0,
            cell_tol: 1e-8,
            barrier_tol: 1e-9,
            shoot_tol: 1e-10,
            slope_tol: 0.15,
            seeds: vec![],
            grid_tol: 0.01,
            aubry_tol: 0.01,
            karp_limit: 512,
            max_periods: 4000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepBlock {
    pub eps_list: Vec<f64>,
    /// ε of the standalone `viscous` command; the first sweep value if unset.
    pub viscous_epsilon: Option<f64>,
}

impl Default for SweepBlock {
    fn default() -> Self {
        Self { eps_list: vec![0.02, 0.01, 0.005, 0.0025], viscous_epsilon: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StochasticBlock {
    /// Paths per Lax probe.
    pub n_paths: usize,
    /// Paths per ε in the exit-time study.
    pub exit_paths: usize,
    /// Step ceiling of the exit-time study.
    pub dt: f64,
    pub lax_dt: f64,
    pub delta: f64,
    /// Exit-time cap.
    pub kappa: f64,
    /// Lax horizon.
    pub lax_kappa: f64,
    pub seed: u64,
    pub eps_list: Vec<f64>,
    pub lax_epsilon: f64,
    pub lax_tol: f64,
    pub probes: Vec<f64>,
    /// Band around the orbit where the barrier drift is trusted.
    pub drift_radius: f64,
}

impl Default for StochasticBlock {
    fn default() -> Self {
        Self {
            n_paths: 20000,
            exit_paths: 2000,
            dt: 0.005,
            lax_dt: 0.002,
            delta: 0.26,
            kappa: 400.0,
            lax_kappa: 2.0,
            seed: 7,
            eps_list: vec![0.08, 0.04, 0.02],
            lax_epsilon: 0.02,
            lax_tol: 0.02,
            probes: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            drift_radius: 0.45,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub directory: String,
    pub formats: Vec<String>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { directory: "out".into(), formats: vec!["csv".into(), "json".into()] }
    }
}

impl OutputBlock {
    pub fn wants(&self, format: &str) -> bool {
        self.formats.iter().any(|f| f == format)
    }
}

/// A configuration problem located at a dotted field path.
#[derive(Debug, thiserror::Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

fn bad(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { path: path.into(), message: message.into() }
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(path, format!("must be positive and finite, got {v}")))
    }
}

fn decreasing(path: &str, list: &[f64]) -> Result<(), ConfigError> {
    if list.is_empty() {
        return Err(bad(path, "must not be empty"));
    }
    for (i, &e) in list.iter().enumerate() {
        positive(&format!("{path}[{i}]"), e)?;
    }
    if let Some(i) = list.windows(2).position(|w| !(w[1] < w[0])) {
        return Err(bad(path, format!("must be strictly decreasing ({} then {})", list[i], list[i + 1])));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Parses JSON; schema errors carry the path of the offending field.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError { path: if path == "." { "config".into() } else { path }, message: e.into_inner().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate().map_err(|e| bad("model", e.to_string()))?;
        if self.grid.nx < 8 {
            return Err(bad("grid.nx", format!("needs at least 8 nodes, got {}", self.grid.nx)));
        }
        if self.grid.nt < 2 {
            return Err(bad("grid.nt", format!("needs at least 2 layers, got {}", self.grid.nt)));
        }
        let n = &self.numerics;
        for (path, v) in [
            ("numerics.vmax", n.vmax),
            ("numerics.cell_tol", n.cell_tol),
            ("numerics.barrier_tol", n.barrier_tol),
            ("numerics.shoot_tol", n.shoot_tol),
            ("numerics.slope_tol", n.slope_tol),
            ("numerics.grid_tol", n.grid_tol),
            ("numerics.aubry_tol", n.aubry_tol),
        ] {
            positive(path, v)?;
        }
        if n.max_periods == 0 {
            return Err(bad("numerics.max_periods", "must be positive"));
        }
        decreasing("sweep.eps_list", &self.sweep.eps_list)?;
        if let Some(e) = self.sweep.viscous_epsilon {
            positive("sweep.viscous_epsilon", e)?;
        }
        let s = &self.stochastic;
        if s.n_paths < 2 {
            return Err(bad("stochastic.n_paths", "needs at least 2 paths"));
        }
        if s.exit_paths < 2 {
            return Err(bad("stochastic.exit_paths", "needs at least 2 paths"));
        }
        for (path, v) in [
            ("stochastic.dt", s.dt),
            ("stochastic.lax_dt", s.lax_dt),
            ("stochastic.delta", s.delta),
            ("stochastic.kappa", s.kappa),
            ("stochastic.lax_kappa", s.lax_kappa),
            ("stochastic.lax_epsilon", s.lax_epsilon),
            ("stochastic.lax_tol", s.lax_tol),
            ("stochastic.drift_radius", s.drift_radius),
        ] {
            positive(path, v)?;
        }
        if s.delta >= 0.5 {
            return Err(bad("stochastic.delta", "the tube must not wrap the circle (delta < 1/2)"));
        }
        decreasing("stochastic.eps_list", &s.eps_list)?;
        if s.probes.is_empty() {
            return Err(bad("stochastic.probes", "must not be empty"));
        }
        if let Some(i) = s.probes.iter().position(|p| !p.is_finite()) {
            return Err(bad(&format!("stochastic.probes[{i}]"), "must be finite"));
        }
        if self.output.directory.is_empty() {
            return Err(bad("output.directory", "must not be empty"));
        }
        if let Some(i) = self.output.formats.iter().position(|f| f != "csv" && f != "json") {
            return Err(bad(&format!("output.formats[{i}]"), format!("unknown format {:?}", self.output.formats[i])));
        }
        Ok(())
    }

    /// Root seeds of the Monte Carlo stage.
    pub fn seeds(&self) -> Vec<u64> {
        if self.numerics.seeds.is_empty() {
            vec![self.stochastic.seed]
        } else {
            self.numerics.seeds.clone()
        }
    }

    pub fn override_seed(&mut self, seed: u64) {
        self.stochastic.seed = seed;
        self.numerics.seeds.clear();
    }

    /// Short SHA-256 of everything that affects results (the output block
    /// is left out).
    pub fn hash(&self) -> String {
        let body = serde_json::json!({
            "model": self.model,
            "grid": self.grid,
            "numerics": self.numerics,
            "sweep": self.sweep,
            "stochastic": self.stochastic,
        });
        let digest = Sha256::digest(serde_json::to_vec(&body).expect("config serializes"));
        hex::encode(&digest[..8])
    }
}
