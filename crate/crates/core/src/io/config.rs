use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::format::{read_with_header, write_with_header};
use crate::dupire::{MarketFrame, OptionKind, OptionQuote};
use crate::error::{Error, Result};
use crate::mc::{SimConfig, StrikeMaturityGrid, TIME_SNAP};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketSection {
    pub spot: f64,
    pub rate: f64,
    pub kind: OptionKind,
    /// Largest strike; taken from the quotes when absent.
    pub k_max: Option<f64>,
    /// Largest maturity; taken from the quotes when absent.
    pub t_max: Option<f64>,
}

impl Default for MarketSection {
    fn default() -> Self {
        MarketSection {
            spot: 1000.0,
            rate: 0.04,
            kind: OptionKind::Call,
            k_max: None,
            t_max: None,
        }
    }
}

impl MarketSection {
    /// Frame for a calibration on `quotes`, honoring explicit bounds.
    pub fn frame_for(&self, quotes: &[OptionQuote]) -> Result<MarketFrame> {
        let derived = MarketFrame::from_quotes(self.spot, self.rate, self.kind, quotes)?;
        MarketFrame::new(
            self.spot,
            self.rate,
            self.k_max.unwrap_or(derived.k_max),
            self.t_max.unwrap_or(derived.t_max),
            self.kind,
        )
    }
}

/// Strike/maturity rectangle and the size of the quote mesh on it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub maturities: usize,
    pub strikes: usize,
    pub strike_range: [f64; 2],
    pub maturity_range: [f64; 2],
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            maturities: 10,
            strikes: 20,
            strike_range: [500.0, 3000.0],
            maturity_range: [0.3, 1.5],
        }
    }
}

impl GridSection {
    pub fn quote_grid(&self) -> Result<StrikeMaturityGrid> {
        self.grid_of(self.maturities, self.strikes)
    }

    pub fn grid_of(&self, maturities: usize, strikes: usize) -> Result<StrikeMaturityGrid> {
        StrikeMaturityGrid::linspace(
            maturities,
            strikes,
            (self.strike_range[0], self.strike_range[1]),
            (self.maturity_range[0], self.maturity_range[1]),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reference {
    /// Synthetic run: compare against the closed-form test volatility.
    #[default]
    Exact,
    /// Market data: no reference surface.
    None,
}

impl std::str::FromStr for Reference {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Ok(Reference::Exact),
            "none" => Ok(Reference::None),
            other => Err(Error::InvalidConfig(format!("unknown reference {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub maturities: usize,
    pub strikes: usize,
    pub paths: usize,
    pub seed: u64,
    pub reference: Reference,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            maturities: 256,
            strikes: 256,
            paths: 100_000,
            seed: 1_000_003,
            reference: Reference::Exact,
        }
    }
}

/// One document that fully determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub market: MarketSection,
    pub grid: GridSection,
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            output_dir: PathBuf::from("volcal-out"),
            market: MarketSection::default(),
            grid: GridSection::default(),
            sim: SimConfig::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let m = &self.market;
        if !(m.spot.is_finite() && m.spot > 0.0) {
            return Err(Error::InvalidConfig(format!("spot must be positive, got {}", m.spot)));
        }
        if !(m.rate.is_finite() && m.rate >= 0.0) {
            return Err(Error::InvalidConfig(format!("rate must be non-negative, got {}", m.rate)));
        }
        for (name, v) in [("k_max", m.k_max), ("t_max", m.t_max)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
                }
            }
        }
        self.grid.quote_grid()?;
        if self.eval.maturities == 0 || self.eval.strikes == 0 || self.eval.paths == 0 {
            return Err(Error::InvalidConfig("evaluation grid and path count must be positive".into()));
        }
        self.sim.validate()?;
        if self.grid.maturity_range[1] > self.sim.horizon + TIME_SNAP {
            return Err(Error::InvalidConfig(format!(
                "grid maturities reach {} beyond the simulation horizon {}",
                self.grid.maturity_range[1], self.sim.horizon
            )));
        }
        self.train.validate()
    }

    /// SHA-256 of the canonical TOML form.
    pub fn fingerprint(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::from_toml(&read_with_header(path, "config")?)
}

pub fn save_config(path: &Path, config: &ExperimentConfig) -> Result<()> {
    write_with_header(path, &config.to_toml()?)
}
