//! Run configuration shared by every pipeline stage.
//!
//! One TOML file describes the windows, the teacher and coarse search
//! grids, pool construction, student training, the observed data, and every
//! random seed. See `configs/` in the repository for annotated examples.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::{window_lengths, IngestOptions};
use crate::error::{Error, Result};
use crate::pool::PoolConfig;
use crate::seir::DEFAULT_DT;
use crate::student::{Normalization, TrainConfig};
use crate::teacher::{CalibrateOptions, ChoiceIndex, GridConfig, ParameterGrid};

/// Either calendar dates or explicit lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub cal_start: Option<NaiveDate>,
    pub cal_end: Option<NaiveDate>,
    pub proj_end: Option<NaiveDate>,
    pub calibration_len: Option<usize>,
    pub projection_len: Option<usize>,
}

impl WindowConfig {
    /// `(calibration_len, projection_len)`.
    pub fn lengths(&self) -> Result<(usize, usize)> {
        match (self.cal_start, self.cal_end, self.proj_end) {
            (Some(a), Some(b), Some(c)) => {
                let lens = window_lengths(a, b, c)?;
                for (given, derived, name) in [
                    (self.calibration_len, lens.0, "calibration_len"),
                    (self.projection_len, lens.1, "projection_len"),
                ] {
                    if given.is_some_and(|g| g != derived) {
                        return Err(Error::config(format!(
                            "{name} = {} disagrees with the dates ({derived} days)",
                            given.unwrap_or_default()
                        )));
                    }
                }
                Ok(lens)
            }
            (None, None, None) => match (self.calibration_len, self.projection_len) {
                (Some(c), Some(p)) if c > 0 && p > 0 => Ok((c, p)),
                _ => Err(Error::config("window lengths must both be positive")),
            },
            _ => Err(Error::config(
                "give all of cal_start, cal_end, proj_end or none of them",
            )),
        }
    }
}

/// A sampled search over one grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub grid: GridConfig,
    pub n_samples: usize,
    #[serde(default = "one")]
    pub workers: usize,
}

impl SearchConfig {
    pub fn grid(&self) -> Result<ParameterGrid> {
        ParameterGrid::from_config(&self.grid)
    }

    pub fn calibrate_options(&self, dt: f64) -> CalibrateOptions {
        CalibrateOptions {
            dt,
            workers: self.workers,
            ..CalibrateOptions::default()
        }
    }
}

fn one() -> usize {
    1
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSection {
    pub n_queries: usize,
    pub n_mixed: usize,
    #[serde(default = "two")]
    pub k: usize,
    #[serde(default = "unit")]
    pub concentration: f64,
}

fn two() -> usize {
    2
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// Number of pool pairs drawn for training.
    pub subset_size: usize,
    /// Population used to scale series before they reach the network.
    pub normalization_scale: f64,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_decay_epochs")]
    pub lr_decay_epochs: Vec<usize>,
    #[serde(default = "default_decay_factor")]
    pub lr_decay_factor: f64,
}

fn default_batch() -> usize {
    TrainConfig::default().batch_size
}
fn default_lr() -> f64 {
    TrainConfig::default().learning_rate
}
fn default_wd() -> f64 {
    TrainConfig::default().weight_decay
}
fn default_epochs() -> usize {
    TrainConfig::default().epochs
}
fn default_decay_epochs() -> Vec<usize> {
    TrainConfig::default().lr_decay_epochs
}
fn default_decay_factor() -> f64 {
    TrainConfig::default().lr_decay_factor
}

/// Observed case data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: PathBuf,
    pub region: String,
    #[serde(default)]
    pub max_dip_fraction: Option<f64>,
    #[serde(default)]
    pub smoothing_window: Option<usize>,
}

impl DataSection {
    pub fn ingest_options(&self) -> IngestOptions {
        let d = IngestOptions::default();
        IngestOptions {
            max_dip_fraction: self.max_dip_fraction.unwrap_or(d.max_dip_fraction),
            smoothing_window: self.smoothing_window,
        }
    }
}

/// Observations generated by the teacher itself from one grid key, in
/// place of real data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    /// Teacher-grid choice indices `[population, ic, beta, sigma, gamma]`,
    /// one entry per community.
    pub truth: Vec<[u32; 5]>,
}

impl SyntheticSection {
    pub fn indices(&self) -> Vec<ChoiceIndex> {
        self.truth
            .iter()
            .map(|a| ChoiceIndex::from_array(*a))
            .collect()
    }
}

/// Every source of randomness in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub teacher: u64,
    pub coarse: u64,
    pub pool: u64,
    pub subset: u64,
    pub init: u64,
    pub shuffle: u64,
}

impl Seeds {
    /// Distinct named seeds derived from one experiment seed.
    pub fn derived(seed: u64) -> Self {
        let base = seed.wrapping_mul(1_000);
        Seeds {
            teacher: base + 1,
            coarse: base + 2,
            pool: base + 3,
            subset: base + 4,
            init: base + 5,
            shuffle: base + 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub windows: WindowConfig,
    pub teacher: SearchConfig,
    #[serde(default)]
    pub coarse: Option<SearchConfig>,
    pub pool: PoolSection,
    pub train: TrainSection,
    #[serde(default)]
    pub data: Option<DataSection>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSection>,
    pub seeds: Seeds,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative data paths are resolved
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = RunConfig::from_toml_str(&text)?;
        if let (Some(data), Some(dir)) = (cfg.data.as_mut(), path.parent()) {
            if data.path.is_relative() {
                data.path = dir.join(&data.path);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.windows.lengths()?;
        self.teacher.grid()?;
        if self.teacher.n_samples == 0 {
            return Err(Error::config("teacher.n_samples must be positive"));
        }
        if let Some(c) = &self.coarse {
            c.grid()?;
            if c.n_samples == 0 {
                return Err(Error::config("coarse.n_samples must be positive"));
            }
        }
        if self.pool.k < 2 || self.pool.n_queries < self.pool.k {
            return Err(Error::config("pool needs k >= 2 and n_queries >= k"));
        }
        if self.train.subset_size == 0
            || self.train.subset_size > self.pool.n_queries + self.pool.n_mixed
        {
            return Err(Error::config("train.subset_size must be in 1..=pool size"));
        }
        if !(self.train.normalization_scale.is_finite() && self.train.normalization_scale > 0.0) {
            return Err(Error::config("train.normalization_scale must be positive"));
        }
        if let Some(syn) = &self.synthetic {
            self.teacher.grid()?.key(&syn.indices())?;
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config("dt must be positive"));
        }
        self.train_config().validate()
    }

    pub fn pool_config(&self) -> PoolConfig {
        PoolConfig {
            n_queries: self.pool.n_queries,
            n_mixed: self.pool.n_mixed,
            k: self.pool.k,
            concentration: self.pool.concentration,
            seed: self.seeds.pool,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            epochs: t.epochs,
            lr_decay_epochs: t.lr_decay_epochs.clone(),
            lr_decay_factor: t.lr_decay_factor,
            seed: self.seeds.shuffle,
            ..TrainConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [windows]
        cal_start = "2020-04-06"
        cal_end = "2020-08-23"
        proj_end = "2020-09-13"

        [teacher]
        n_samples = 100
        [teacher.grid]
        n_communities = 2
        populations = { min = 1e3, max = 5e5, count = 3, spacing = "log" }
        seed_cases = 10
        beta = [0.1, 0.3]
        sigma = { min = 0.0714, max = 0.5, count = 3 }
        gamma = [0.1]

        [pool]
        n_queries = 10
        n_mixed = 20

        [train]
        subset_size = 16
        normalization_scale = 1e6

        [seeds]
        teacher = 1
        coarse = 2
        pool = 3
        subset = 4
        init = 5
        shuffle = 6
    "#;

    #[test]
    fn parses_minimal_config_with_defaults() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.windows.lengths().unwrap(), (140, 21));
        assert_eq!(cfg.pool.k, 2);
        assert_eq!(cfg.teacher.workers, 1);
        let t = cfg.train_config();
        assert_eq!((t.batch_size, t.epochs, t.learning_rate), (128, 300, 0.1));
        assert_eq!(t.seed, 6);
        assert_eq!(
            cfg.teacher.grid().unwrap().size().per_community,
            3 * 2 * 2 * 3
        );
    }

    #[test]
    fn rejects_inconsistent_configs() {
        let bad = MINIMAL.replace("subset_size = 16", "subset_size = 31");
        assert!(RunConfig::from_toml_str(&bad).is_err());
        let bad = MINIMAL.replace("proj_end = \"2020-09-13\"", "proj_end = \"2020-08-01\"");
        assert!(RunConfig::from_toml_str(&bad).is_err());
        let bad = MINIMAL.replace("n_mixed = 20", "n_mixed = 20\nbogus = 1");
        assert!(matches!(
            RunConfig::from_toml_str(&bad),
            Err(Error::Toml(_))
        ));
    }

    #[test]
    fn explicit_lengths() {
        let w = WindowConfig {
            cal_start: None,
            cal_end: None,
            proj_end: None,
            calibration_len: Some(28),
            projection_len: Some(7),
        };
        assert_eq!(w.lengths().unwrap(), (28, 7));
        let partial = WindowConfig {
            cal_start: NaiveDate::from_ymd_opt(2020, 1, 1),
            ..w
        };
        assert!(partial.lengths().is_err());
    }
}
