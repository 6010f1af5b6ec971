//! TOML run configuration. Every section is optional and falls back to the
//! library defaults; unknown keys are rejected.

use std::path::Path;

use munidex_core::backtest::{DEFAULT_BASELINE_PORTFOLIOS, DEFAULT_FRACTION, DEFAULT_UNIVERSE_SIZE};
use munidex_core::econometrics::HedonicConfig;
use munidex_core::forecaster::{ModelConfig, VOLATILITY_FLOOR};
use munidex_core::signals::TRAILING_WINDOW;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlit::ColumnMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_areas: usize,
    pub first_year: i32,
    pub n_years: usize,
    pub intensity: usize,
    pub sigma: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = munidex_core::synth::SynthSpec::default();
        Self {
            n_areas: s.n_areas,
            first_year: s.first_year,
            n_years: s.n_years,
            intensity: s.intensity,
            sigma: s.sigma,
        }
    }
}

impl SynthSection {
    pub fn spec(&self, seed: u64) -> munidex_core::synth::SynthSpec {
        munidex_core::synth::SynthSpec {
            n_areas: self.n_areas,
            first_year: self.first_year,
            n_years: self.n_years,
            intensity: self.intensity,
            sigma: self.sigma,
            seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestSection {
    pub universe_size: usize,
    pub fraction: f64,
    pub baseline_portfolios: usize,
    /// Years of factor history compounded into the ranking signal; 0 ranks
    /// on the signal file as given.
    pub signal_window: u32,
}

impl Default for BacktestSection {
    fn default() -> Self {
        Self {
            universe_size: DEFAULT_UNIVERSE_SIZE,
            fraction: DEFAULT_FRACTION,
            baseline_portfolios: DEFAULT_BASELINE_PORTFOLIOS,
            signal_window: TRAILING_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecasterSection {
    pub model: ModelConfig,
    pub neighbors: usize,
    /// Own features repeated for each neighbour.
    pub neighbor_features: Vec<String>,
    pub allow_short_windows: bool,
    /// Latest anchor years held out for testing.
    pub test_years: usize,
    pub volatility_floor: f64,
}

impl Default for ForecasterSection {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            neighbors: 5,
            neighbor_features: vec!["annual_return".into(), "taxable_income_growth".into()],
            allow_short_windows: false,
            test_years: 2,
            volatility_floor: VOLATILITY_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthSection,
    pub columns: ColumnMap,
    pub hedonic: HedonicConfig,
    pub backtest: BacktestSection,
    pub forecaster: ForecasterSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Parsed configuration plus the verbatim text, or defaults when no path
    /// is given.
    pub fn load(path: Option<&Path>) -> Result<(Self, Option<String>)> {
        match path {
            None => Ok((Self::default(), None)),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Ok((Self::from_toml(&text)?, Some(text)))
            }
        }
    }
}
