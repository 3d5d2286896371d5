use std::path::{Path, PathBuf};

use fasnoma_core::ao::AoOptions;
use fasnoma_core::geometry::{PlacementRegion, SystemParams};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    FasNoma,
    Fpa,
    Rpa,
    OmaFas,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::FasNoma, Method::Fpa, Method::Rpa, Method::OmaFas];

    pub fn name(self) -> &'static str {
        match self {
            Method::FasNoma => "fas-noma",
            Method::Fpa => "fpa",
            Method::Rpa => "rpa",
            Method::OmaFas => "oma-fas",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// The swept quantity. Exactly one axis per experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    PowerRatioDb(Vec<f64>),
    AntennaCount(Vec<usize>),
}

impl Sweep {
    pub fn axis(&self) -> &'static str {
        match self {
            Sweep::PowerRatioDb(_) => "power_ratio_db",
            Sweep::AntennaCount(_) => "antenna_count",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Sweep::PowerRatioDb(v) => v.len(),
            Sweep::AntennaCount(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, i: usize) -> f64 {
        match self {
            Sweep::PowerRatioDb(v) => v[i],
            Sweep::AntennaCount(v) => v[i] as f64,
        }
    }
}

/// Overrides applied on top of the simulation defaults. Lengths are in
/// wavelengths; the power ratio is the only dB quantity and is converted
/// here.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    pub num_antennas: Option<usize>,
    pub power_ratio_db: Option<f64>,
    pub rate_threshold: Option<f64>,
    pub num_tx_paths: Option<usize>,
    pub num_rx_paths: Option<usize>,
    pub region_side: Option<f64>,
    pub min_spacing: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_outer: usize,
    /// Outer stop threshold on the secrecy-rate gain, bps/Hz.
    pub tolerance: f64,
    /// Position sweeps per alternation.
    pub position_sweeps: usize,
    pub rpa_draws: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let ao = AoOptions::default();
        Self {
            max_outer: ao.max_outer,
            tolerance: ao.tolerance,
            position_sweeps: ao.position.max_sweeps,
            rpa_draws: 1,
        }
    }
}

impl SolverConfig {
    pub fn ao_options(&self) -> AoOptions {
        let mut opts = AoOptions { max_outer: self.max_outer, tolerance: self.tolerance, ..AoOptions::default() };
        opts.position.max_sweeps = self.position_sweeps;
        opts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub base_seed: u64,
    pub num_trials: usize,
    pub methods: Vec<Method>,
    pub sweep: Sweep,
    #[serde(default)]
    pub params: ParamOverrides,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(BenchError::Config(msg));
        if self.num_trials == 0 {
            return bad("num_trials must be at least 1".into());
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        if self.sweep.is_empty() {
            return bad(format!("sweep over {} has no values", self.sweep.axis()));
        }
        if let Sweep::PowerRatioDb(v) = &self.sweep {
            if let Some(x) = v.iter().find(|x| !x.is_finite()) {
                return bad(format!("power ratio {x} dB is not finite"));
            }
        }
        if self.solver.max_outer == 0 || self.solver.position_sweeps == 0 || self.solver.rpa_draws == 0 {
            return bad("solver counts must be positive".into());
        }
        for i in 0..self.sweep.len() {
            self.params_at(i)?;
        }
        Ok(())
    }

    /// System parameters at one sweep point.
    pub fn params_at(&self, sweep_index: usize) -> Result<SystemParams> {
        let o = &self.params;
        let (m, db) = match &self.sweep {
            Sweep::PowerRatioDb(v) => (o.num_antennas.unwrap_or(4), v[sweep_index]),
            Sweep::AntennaCount(v) => (v[sweep_index], o.power_ratio_db.unwrap_or(10.0)),
        };
        let mut p = SystemParams::defaults(m, db);
        if let Some(r) = o.rate_threshold {
            p.rate_threshold = r;
        }
        if let Some(l) = o.num_tx_paths {
            p.num_tx_paths = l;
        }
        if let Some(l) = o.num_rx_paths {
            p.num_rx_paths_cu = l;
            p.num_rx_paths_ceu = l;
        }
        if let Some(side) = o.region_side {
            p.region = PlacementRegion::square(side * p.wavelength).map_err(|e| BenchError::Config(e.to_string()))?;
        }
        if let Some(d) = o.min_spacing {
            p.min_spacing = d * p.wavelength;
        }
        p.validate().map_err(|e| BenchError::Config(format!("sweep point {sweep_index}: {e}")))?;
        Ok(p)
    }
}
