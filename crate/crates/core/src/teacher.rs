//! The mixture-SEIR teacher: a discrete parameter grid over community
//! boundary conditions, initial conditions and ODE coefficients, uniform
//! scenario sampling, and minimum-MSE calibration against an observed
//! incidence series.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seir::{self, CommunityParams, Trajectory, DEFAULT_DT};

/// Initial seeding of a community, in persons. Whatever remains of the
/// community population starts susceptible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcChoice {
    #[serde(default)]
    pub exposed: f64,
    #[serde(default)]
    pub infectious: f64,
    #[serde(default)]
    pub recovered: f64,
}

impl IcChoice {
    pub const UNSEEDED: IcChoice = IcChoice {
        exposed: 0.0,
        infectious: 0.0,
        recovered: 0.0,
    };

    /// `E0 = 5c`, `I0 = c` where `c` is the reported case count one week
    /// before the calibration window opens.
    pub fn seeded(cases: f64) -> Self {
        IcChoice {
            exposed: 5.0 * cases,
            infectious: cases,
            recovered: 0.0,
        }
    }

    fn seeded_total(&self) -> f64 {
        self.exposed + self.infectious + self.recovered
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    #[default]
    Linear,
    Log,
}

/// A list of choices, given either explicitly or as an evenly spaced range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Choices {
    List(Vec<f64>),
    Range {
        min: f64,
        max: f64,
        count: usize,
        #[serde(default)]
        spacing: Spacing,
    },
}

impl Choices {
    pub fn values(&self) -> Result<Vec<f64>> {
        match *self {
            Choices::List(ref v) => Ok(v.clone()),
            Choices::Range {
                min,
                max,
                count,
                spacing,
            } => {
                if count == 0 {
                    return Err(Error::config("range count must be at least 1"));
                }
                if !(min.is_finite() && max.is_finite() && min <= max) {
                    return Err(Error::config(format!("bad range [{min}, {max}]")));
                }
                if count == 1 {
                    return Ok(vec![min]);
                }
                let steps = (count - 1) as f64;
                match spacing {
                    Spacing::Linear => Ok((0..count)
                        .map(|k| min + (max - min) * k as f64 / steps)
                        .collect()),
                    Spacing::Log => {
                        if min <= 0.0 {
                            return Err(Error::config("log-spaced range needs min > 0"));
                        }
                        let (a, b) = (min.ln(), max.ln());
                        Ok((0..count)
                            .map(|k| (a + (b - a) * k as f64 / steps).exp())
                            .collect())
                    }
                }
            }
        }
    }
}

/// Deserializable description of a [`ParameterGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub n_communities: usize,
    pub populations: Choices,
    /// Explicit initial conditions. Ignored when `seed_cases` is set.
    #[serde(default)]
    pub initial_conditions: Vec<IcChoice>,
    /// Shorthand for `[unseeded, seeded(seed_cases)]`.
    #[serde(default)]
    pub seed_cases: Option<f64>,
    pub beta: Choices,
    pub sigma: Choices,
    pub gamma: Choices,
}

/// Discrete search space of the teacher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterGrid {
    pub n_communities: usize,
    pub populations: Vec<f64>,
    pub initial_conditions: Vec<IcChoice>,
    pub betas: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub gammas: Vec<f64>,
}

/// Choice indices that select one community out of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChoiceIndex {
    pub population: u32,
    pub ic: u32,
    pub beta: u32,
    pub sigma: u32,
    pub gamma: u32,
}

impl ChoiceIndex {
    pub fn as_array(&self) -> [u32; 5] {
        [self.population, self.ic, self.beta, self.sigma, self.gamma]
    }

    pub fn from_array(a: [u32; 5]) -> Self {
        ChoiceIndex {
            population: a[0],
            ic: a[1],
            beta: a[2],
            sigma: a[3],
            gamma: a[4],
        }
    }
}

/// A full scenario: one parameter set per community, plus the grid indices
/// that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioKey {
    pub communities: Vec<CommunityParams>,
    pub grid_indices: Vec<ChoiceIndex>,
}

impl ScenarioKey {
    pub fn len(&self) -> usize {
        self.communities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.communities.is_empty()
    }
}

/// Scenario counts of a grid. The full ensemble count is kept as `log10`
/// and, when it fits, exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSize {
    pub per_community: u64,
    pub n_communities: usize,
    pub total_log10: f64,
    pub total_exact: Option<u128>,
}

impl std::fmt::Display for GridSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} per community, {}^{} = 10^{:.3} total",
            self.per_community, self.per_community, self.n_communities, self.total_log10
        )
    }
}

impl ParameterGrid {
    pub fn from_config(cfg: &GridConfig) -> Result<Self> {
        let initial_conditions = match cfg.seed_cases {
            Some(c) => vec![IcChoice::UNSEEDED, IcChoice::seeded(c)],
            None => cfg.initial_conditions.clone(),
        };
        let grid = ParameterGrid {
            n_communities: cfg.n_communities,
            populations: cfg.populations.values()?,
            initial_conditions,
            betas: cfg.beta.values()?,
            sigmas: cfg.sigma.values()?,
            gammas: cfg.gamma.values()?,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_communities < 1 {
            return Err(Error::config("n_communities must be at least 1"));
        }
        let lists: [(&str, &[f64]); 4] = [
            ("populations", &self.populations),
            ("beta", &self.betas),
            ("sigma", &self.sigmas),
            ("gamma", &self.gammas),
        ];
        for (name, values) in lists {
            if values.is_empty() {
                return Err(Error::config(format!("{name} choice list is empty")));
            }
            if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return Err(Error::config(format!(
                    "{name} choices must be positive, got {v}"
                )));
            }
        }
        if self.initial_conditions.is_empty() {
            return Err(Error::config("initial condition choice list is empty"));
        }
        let smallest = self
            .populations
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        for ic in &self.initial_conditions {
            let parts = [ic.exposed, ic.infectious, ic.recovered];
            if parts.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::config(format!("bad initial condition {ic:?}")));
            }
            if ic.seeded_total() > smallest {
                return Err(Error::config(format!(
                    "initial condition {ic:?} exceeds the smallest population {smallest}"
                )));
            }
        }
        Ok(())
    }

    pub fn size(&self) -> GridSize {
        let per_community = (self.populations.len()
            * self.initial_conditions.len()
            * self.betas.len()
            * self.sigmas.len()
            * self.gammas.len()) as u64;
        GridSize {
            per_community,
            n_communities: self.n_communities,
            total_log10: self.n_communities as f64 * (per_community as f64).log10(),
            total_exact: u128::from(per_community).checked_pow(self.n_communities as u32),
        }
    }

    fn dims(&self) -> [usize; 5] {
        [
            self.populations.len(),
            self.initial_conditions.len(),
            self.betas.len(),
            self.sigmas.len(),
            self.gammas.len(),
        ]
    }

    pub fn community(&self, idx: ChoiceIndex) -> Result<CommunityParams> {
        let dims = self.dims();
        for (i, (&k, &d)) in idx.as_array().iter().zip(&dims).enumerate() {
            if k as usize >= d {
                return Err(Error::config(format!(
                    "choice index {k} out of range for dimension {i} (size {d})"
                )));
            }
        }
        let ic = self.initial_conditions[idx.ic as usize];
        CommunityParams::seeded(
            self.populations[idx.population as usize],
            ic.exposed,
            ic.infectious,
            ic.recovered,
            self.betas[idx.beta as usize],
            self.sigmas[idx.sigma as usize],
            self.gammas[idx.gamma as usize],
        )
    }

    pub fn key(&self, indices: &[ChoiceIndex]) -> Result<ScenarioKey> {
        if indices.len() != self.n_communities {
            return Err(Error::config(format!(
                "key has {} communities, grid expects {}",
                indices.len(),
                self.n_communities
            )));
        }
        Ok(ScenarioKey {
            communities: indices
                .iter()
                .map(|&i| self.community(i))
                .collect::<Result<_>>()?,
            grid_indices: indices.to_vec(),
        })
    }

    fn draw_key(&self, rng: &mut impl Rng) -> ScenarioKey {
        let dims = self.dims();
        let indices: Vec<ChoiceIndex> = (0..self.n_communities)
            .map(|_| {
                let mut a = [0u32; 5];
                for (slot, &d) in a.iter_mut().zip(&dims) {
                    *slot = rng.random_range(0..d as u32);
                }
                ChoiceIndex::from_array(a)
            })
            .collect();
        // indices are in range by construction and the grid is validated
        self.key(&indices).expect("sampled key is in range")
    }
}

/// Draws `n` keys uniformly (with replacement), one independent choice per
/// dimension per community.
pub fn sample_scenarios(grid: &ParameterGrid, n: usize, seed: u64) -> Result<Vec<ScenarioKey>> {
    if n < 1 {
        return Err(Error::config("sample count must be at least 1"));
    }
    grid.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| grid.draw_key(&mut rng)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrateOptions {
    pub dt: f64,
    /// Worker threads; 1 runs on the calling thread.
    pub workers: usize,
    /// Keys per work unit.
    pub chunk_size: usize,
}

impl Default for CalibrateOptions {
    fn default() -> Self {
        CalibrateOptions {
            dt: DEFAULT_DT,
            workers: 1,
            chunk_size: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub best_key: ScenarioKey,
    /// Position of `best_key` in the candidate list.
    pub best_index: usize,
    pub fit_mse: f64,
    pub fitted_trajectory: Trajectory,
    pub scenarios_evaluated: usize,
    pub calibration_len: usize,
    pub projection_len: usize,
    pub wall_time_secs: f64,
}

impl CalibrationResult {
    /// Fitted daily incidence over calibration + projection.
    pub fn incidence(&self) -> &[f64] {
        &self.fitted_trajectory.incidence
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Best {
    mse: f64,
    index: usize,
}

impl Best {
    const NONE: Best = Best {
        mse: f64::INFINITY,
        index: usize::MAX,
    };

    fn pick(self, other: Best) -> Best {
        match self
            .mse
            .total_cmp(&other.mse)
            .then(self.index.cmp(&other.index))
        {
            std::cmp::Ordering::Greater => other,
            _ => self,
        }
    }
}

fn mse_prefix(sim: &[f64], obs: &[f64]) -> f64 {
    let sum: f64 = sim.iter().zip(obs).map(|(a, b)| (a - b) * (a - b)).sum();
    sum / obs.len() as f64
}

fn best_in_chunk(
    keys: &[ScenarioKey],
    offset: usize,
    observation: &[f64],
    horizon: usize,
    dt: f64,
) -> Best {
    let mut buf = vec![0.0; horizon];
    let mut best = Best::NONE;
    for (j, key) in keys.iter().enumerate() {
        if seir::mixture_incidence_into(&key.communities, dt, &mut buf).is_err() {
            continue;
        }
        let mse = mse_prefix(&buf[..observation.len()], observation);
        if mse.is_nan() {
            continue;
        }
        best = best.pick(Best {
            mse,
            index: offset + j,
        });
    }
    best
}

/// Picks the candidate whose simulated incidence has the lowest MSE against
/// `observation` over the calibration window, then returns its trajectory
/// through the projection window. Ties go to the lowest candidate index.
pub fn calibrate(
    observation: &[f64],
    keys: &[ScenarioKey],
    calibration_len: usize,
    projection_len: usize,
    opts: &CalibrateOptions,
) -> Result<CalibrationResult> {
    let start = Instant::now();
    Error::check_len(
        calibration_len,
        observation.len(),
        "observation vs calibration window",
    )?;
    if calibration_len == 0 {
        return Err(Error::config("calibration window must be non-empty"));
    }
    if keys.is_empty() {
        return Err(Error::config("no candidate scenarios"));
    }
    let horizon = calibration_len + projection_len;
    let chunk = opts.chunk_size.max(1);
    let sweep = || {
        keys.par_chunks(chunk)
            .enumerate()
            .map(|(c, ks)| best_in_chunk(ks, c * chunk, observation, horizon, opts.dt))
            .reduce(|| Best::NONE, Best::pick)
    };
    let best = if opts.workers <= 1 {
        keys.chunks(chunk)
            .enumerate()
            .map(|(c, ks)| best_in_chunk(ks, c * chunk, observation, horizon, opts.dt))
            .fold(Best::NONE, Best::pick)
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.workers)
            .build()
            .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?
            .install(sweep)
    };
    if best.index == usize::MAX {
        return Err(Error::InvalidState(
            "every candidate scenario failed to simulate".into(),
        ));
    }
    let best_key = keys[best.index].clone();
    let fitted_trajectory = seir::simulate_mixture(&best_key.communities, horizon, opts.dt)?;
    Ok(CalibrationResult {
        best_key,
        best_index: best.index,
        fit_mse: best.mse,
        fitted_trajectory,
        scenarios_evaluated: keys.len(),
        calibration_len,
        projection_len,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Sampled-search forecast: draw `n_samples` keys and calibrate over them.
/// The recorded wall time covers sampling and search.
pub fn forecast(
    observation: &[f64],
    grid: &ParameterGrid,
    n_samples: usize,
    seed: u64,
    projection_len: usize,
    opts: &CalibrateOptions,
) -> Result<CalibrationResult> {
    let start = Instant::now();
    let keys = sample_scenarios(grid, n_samples, seed)?;
    let mut result = calibrate(observation, &keys, observation.len(), projection_len, opts)?;
    result.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(result)
}
