//! Teacher queries and sequence mixup.
//!
//! A query runs the teacher on one scenario key and returns the simulated
//! incidence over the calibration window (the observation) together with
//! the same run extended through the projection window (the projection).
//! Mixup forms convex combinations of query pairs, applying the same
//! weights to observation and projection. Since transmission is normalized
//! by community population, a `w`-weighted community is itself an SEIR
//! community of size `w * N`, so every mixed pair is again an exact mixture
//! trajectory.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seir::{self, Trajectory};
use crate::teacher::{sample_scenarios, ChoiceIndex, ParameterGrid, ScenarioKey};

pub const WEIGHT_SUM_TOL: f64 = 1e-12;

const POOL_MAGIC: &[u8; 8] = b"EDPOOL\0\0";
const POOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Query {
        grid_indices: Vec<ChoiceIndex>,
    },
    Mixup {
        parents: Vec<u64>,
        weights: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequencePair {
    /// Incidence over the calibration window.
    pub observation: Vec<f64>,
    /// Incidence over calibration + projection.
    pub projection: Vec<f64>,
    pub provenance: Provenance,
}

impl SequencePair {
    pub fn calibration_len(&self) -> usize {
        self.observation.len()
    }
}

/// Convex mixing weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixWeights(Vec<f64>);

impl MixWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::config("mix weights are empty"));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::config(format!(
                "mix weight {w} is negative or non-finite"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::config(format!(
                "mix weights sum to {sum}, expected 1"
            )));
        }
        Ok(MixWeights(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Runs the teacher on one key.
pub fn query_by_key(
    key: &ScenarioKey,
    calibration_len: usize,
    projection_len: usize,
    dt: f64,
) -> Result<SequencePair> {
    if calibration_len == 0 {
        return Err(Error::config("calibration window must be non-empty"));
    }
    let mut projection = vec![0.0; calibration_len + projection_len];
    seir::mixture_incidence_into(&key.communities, dt, &mut projection)?;
    Ok(SequencePair {
        observation: projection[..calibration_len].to_vec(),
        projection,
        provenance: Provenance::Query {
            grid_indices: key.grid_indices.clone(),
        },
    })
}

/// Per-community trajectories behind a query, for checks that need the
/// compartment states rather than only the aggregate incidence.
pub fn query_components(
    key: &ScenarioKey,
    calibration_len: usize,
    projection_len: usize,
    dt: f64,
) -> Result<Vec<Trajectory>> {
    seir::simulate_components(&key.communities, calibration_len + projection_len, dt)
}

fn combine(series: &[&[f64]], w: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; series[0].len()];
    for (s, &wi) in series.iter().zip(w) {
        for (o, x) in out.iter_mut().zip(s.iter()) {
            *o += wi * x;
        }
    }
    out
}

/// Elementwise convex combination of `parents`, identical for observation
/// and projection. Each parent comes with its pool id for provenance.
pub fn mixup(parents: &[(u64, &SequencePair)], w: &MixWeights) -> Result<SequencePair> {
    Error::check_len(parents.len(), w.len(), "mixup parents vs weights")?;
    MixWeights::new(w.0.clone())?;
    let first = parents[0].1;
    for (_, p) in parents {
        Error::check_len(
            first.observation.len(),
            p.observation.len(),
            "mixup observation",
        )?;
        Error::check_len(
            first.projection.len(),
            p.projection.len(),
            "mixup projection",
        )?;
    }
    let obs: Vec<&[f64]> = parents
        .iter()
        .map(|(_, p)| p.observation.as_slice())
        .collect();
    let proj: Vec<&[f64]> = parents
        .iter()
        .map(|(_, p)| p.projection.as_slice())
        .collect();
    Ok(SequencePair {
        observation: combine(&obs, w.as_slice()),
        projection: combine(&proj, w.as_slice()),
        provenance: Provenance::Mixup {
            parents: parents.iter().map(|(id, _)| *id).collect(),
            weights: w.0.clone(),
        },
    })
}

fn dirichlet(k: usize, concentration: f64, rng: &mut ChaCha8Rng) -> Result<MixWeights> {
    if k < 2 {
        return Err(Error::config(format!(
            "need at least 2 mixing parents, got {k}"
        )));
    }
    let gamma = Gamma::new(concentration, 1.0)
        .map_err(|e| Error::config(format!("bad Dirichlet concentration {concentration}: {e}")))?;
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if !(sum > 0.0 && sum.is_finite()) {
        // all draws underflowed; only reachable for tiny concentrations
        return MixWeights::new(vec![1.0 / k as f64; k]);
    }
    let mut w: Vec<f64> = draws.iter().map(|x| x / sum).collect();
    // push the rounding residue onto the largest weight
    let residue = 1.0 - w.iter().sum::<f64>();
    let imax = (0..k).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap_or(0);
    w[imax] += residue;
    MixWeights::new(w)
}

/// One draw from a symmetric Dirichlet(concentration) over `k` parents.
pub fn sample_weights(k: usize, concentration: f64, seed: u64) -> Result<MixWeights> {
    dirichlet(k, concentration, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub n_queries: usize,
    pub n_mixed: usize,
    #[serde(default = "default_parents")]
    pub k: usize,
    #[serde(default = "default_concentration")]
    pub concentration: f64,
    pub seed: u64,
}

fn default_parents() -> usize {
    2
}

fn default_concentration() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    pub calibration_len: usize,
    pub projection_len: usize,
    /// Query pairs first, then mixed pairs. A pair's id is its position.
    pub pairs: Vec<SequencePair>,
}

/// Queries the teacher on `n_queries` sampled keys, then adds `n_mixed`
/// convex combinations of `k` distinct query pairs each.
pub fn build_pool(
    grid: &ParameterGrid,
    cfg: &PoolConfig,
    calibration_len: usize,
    projection_len: usize,
    dt: f64,
) -> Result<Pool> {
    if cfg.k < 2 {
        return Err(Error::config(format!(
            "need at least 2 mixing parents, got {}",
            cfg.k
        )));
    }
    if cfg.n_queries < cfg.k {
        return Err(Error::config(format!(
            "{} queries cannot supply {} distinct parents",
            cfg.n_queries, cfg.k
        )));
    }
    let keys = sample_scenarios(grid, cfg.n_queries, cfg.seed)?;
    let queries: Vec<SequencePair> = keys
        .par_iter()
        .map(|key| query_by_key(key, calibration_len, projection_len, dt))
        .collect::<Result<_>>()?;
    let mixed: Vec<SequencePair> = (0..cfg.n_mixed)
        .into_par_iter()
        .map(|m| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(1 + m as u64);
            let picks = index::sample(&mut rng, cfg.n_queries, cfg.k);
            let w = dirichlet(cfg.k, cfg.concentration, &mut rng)?;
            let parents: Vec<(u64, &SequencePair)> =
                picks.iter().map(|i| (i as u64, &queries[i])).collect();
            mixup(&parents, &w)
        })
        .collect::<Result<_>>()?;
    let mut pairs = queries;
    pairs.extend(mixed);
    Ok(Pool {
        calibration_len,
        projection_len,
        pairs,
    })
}

impl Pool {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Uniform random subset without replacement, kept in pool order.
    pub fn subset(&self, n: usize, seed: u64) -> Result<Vec<&SequencePair>> {
        if n == 0 || n > self.pairs.len() {
            return Err(Error::config(format!(
                "subset size {n} must be in 1..={}",
                self.pairs.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picks = index::sample(&mut rng, self.pairs.len(), n).into_vec();
        picks.sort_unstable();
        Ok(picks.into_iter().map(|i| &self.pairs[i]).collect())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Little-endian layout:
    ///
    /// ```text
    /// magic "EDPOOL\0\0" | version u32 | calibration_len u32 | projection_len u32 | count u64
    /// per record:
    ///   kind u8 (0 = query, 1 = mixup)
    ///   query: n u32, n x [population, ic, beta, sigma, gamma] u32
    ///   mixup: k u32, k x (parent id u64, weight f64)
    ///   observation  calibration_len x f64
    ///   projection   (calibration_len + projection_len) x f64
    /// ```
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(POOL_MAGIC)?;
        w.write_u32::<LittleEndian>(POOL_VERSION)?;
        w.write_u32::<LittleEndian>(self.calibration_len as u32)?;
        w.write_u32::<LittleEndian>(self.projection_len as u32)?;
        w.write_u64::<LittleEndian>(self.pairs.len() as u64)?;
        for p in &self.pairs {
            Error::check_len(
                self.calibration_len,
                p.observation.len(),
                "pool observation",
            )?;
            Error::check_len(
                self.calibration_len + self.projection_len,
                p.projection.len(),
                "pool projection",
            )?;
            match &p.provenance {
                Provenance::Query { grid_indices } => {
                    w.write_u8(0)?;
                    w.write_u32::<LittleEndian>(grid_indices.len() as u32)?;
                    for idx in grid_indices {
                        for v in idx.as_array() {
                            w.write_u32::<LittleEndian>(v)?;
                        }
                    }
                }
                Provenance::Mixup { parents, weights } => {
                    w.write_u8(1)?;
                    w.write_u32::<LittleEndian>(parents.len() as u32)?;
                    for (id, wt) in parents.iter().zip(weights) {
                        w.write_u64::<LittleEndian>(*id)?;
                        w.write_f64::<LittleEndian>(*wt)?;
                    }
                }
            }
            for x in p.observation.iter().chain(&p.projection) {
                w.write_f64::<LittleEndian>(*x)?;
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Pool> {
        let mut r = BufReader::new(File::open(path)?);
        Pool::read_from(&mut r).map_err(|e| match e {
            Error::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
                Error::format(path, "truncated pool file")
            }
            Error::Format { reason, .. } => Error::format(path, reason),
            other => other,
        })
    }

    pub fn read_from(r: &mut impl Read) -> Result<Pool> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != POOL_MAGIC {
            return Err(Error::format("<pool>", "bad magic"));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != POOL_VERSION {
            return Err(Error::format(
                "<pool>",
                format!("unsupported version {version}"),
            ));
        }
        let cal = r.read_u32::<LittleEndian>()? as usize;
        let proj = r.read_u32::<LittleEndian>()? as usize;
        let count = r.read_u64::<LittleEndian>()? as usize;
        let read_vec = |r: &mut dyn Read, n: usize| -> Result<Vec<f64>> {
            let mut v = vec![0.0; n];
            r.read_f64_into::<LittleEndian>(&mut v)?;
            Ok(v)
        };
        let mut pairs = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let provenance = match r.read_u8()? {
                0 => {
                    let n = r.read_u32::<LittleEndian>()? as usize;
                    let mut grid_indices = Vec::with_capacity(n);
                    for _ in 0..n {
                        let mut a = [0u32; 5];
                        r.read_u32_into::<LittleEndian>(&mut a)?;
                        grid_indices.push(ChoiceIndex::from_array(a));
                    }
                    Provenance::Query { grid_indices }
                }
                1 => {
                    let k = r.read_u32::<LittleEndian>()? as usize;
                    let mut parents = Vec::with_capacity(k);
                    let mut weights = Vec::with_capacity(k);
                    for _ in 0..k {
                        parents.push(r.read_u64::<LittleEndian>()?);
                        weights.push(r.read_f64::<LittleEndian>()?);
                    }
                    Provenance::Mixup { parents, weights }
                }
                other => {
                    return Err(Error::format(
                        "<pool>",
                        format!("unknown record kind {other}"),
                    ))
                }
            };
            let observation = read_vec(r, cal)?;
            let projection = read_vec(r, cal + proj)?;
            pairs.push(SequencePair {
                observation,
                projection,
                provenance,
            });
        }
        Ok(Pool {
            calibration_len: cal,
            projection_len: proj,
            pairs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::teacher::{Choices, GridConfig, Spacing};
    use proptest::prelude::*;

    fn grid() -> ParameterGrid {
        ParameterGrid::from_config(&GridConfig {
            n_communities: 2,
            populations: Choices::Range {
                min: 1e3,
                max: 1e5,
                count: 3,
                spacing: Spacing::Log,
            },
            initial_conditions: vec![],
            seed_cases: Some(5.0),
            beta: Choices::List(vec![0.2, 0.5, 0.9]),
            sigma: Choices::List(vec![0.2, 0.4]),
            gamma: Choices::List(vec![0.1, 0.2]),
        })
        .unwrap()
    }

    fn pair(obs: &[f64], proj: &[f64]) -> SequencePair {
        SequencePair {
            observation: obs.to_vec(),
            projection: proj.to_vec(),
            provenance: Provenance::Query {
                grid_indices: vec![],
            },
        }
    }

    #[test]
    fn weights_must_be_convex() {
        assert!(MixWeights::new(vec![0.5, 0.5]).is_ok());
        assert!(MixWeights::new(vec![0.5, 0.6]).is_err());
        assert!(MixWeights::new(vec![1.5, -0.5]).is_err());
        assert!(MixWeights::new(vec![]).is_err());
    }

    #[test]
    fn identity_and_duplicate_mixing() {
        let a = pair(&[1.0, 2.0], &[1.0, 2.0, 3.0]);
        let b = pair(&[7.0, 5.0], &[7.0, 5.0, 0.5]);
        let m = mixup(
            &[(0, &a), (1, &b)],
            &MixWeights::new(vec![1.0, 0.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(m.observation, a.observation);
        assert_eq!(m.projection, a.projection);
        assert_eq!(
            m.provenance,
            Provenance::Mixup {
                parents: vec![0, 1],
                weights: vec![1.0, 0.0]
            }
        );

        let d = mixup(
            &[(0, &b), (0, &b)],
            &MixWeights::new(vec![0.5, 0.5]).unwrap(),
        )
        .unwrap();
        assert_eq!(d.observation, b.observation);
        assert_eq!(d.projection, b.projection);
    }

    #[test]
    fn mixup_rejects_mismatches() {
        let a = pair(&[1.0, 2.0], &[1.0, 2.0, 3.0]);
        let short = pair(&[1.0], &[1.0, 2.0]);
        let w = MixWeights::new(vec![0.5, 0.5]).unwrap();
        assert!(mixup(&[(0, &a), (1, &short)], &w).is_err());
        assert!(mixup(&[(0, &a)], &w).is_err());
    }

    #[test]
    fn query_is_prefix_consistent_and_zero_seed_is_zero() {
        let g = grid();
        let zero = ChoiceIndex::from_array([1, 0, 2, 1, 0]);
        let key = g.key(&[zero, zero]).unwrap();
        let q = query_by_key(&key, 20, 5, 1.0).unwrap();
        assert!(q.observation.iter().chain(&q.projection).all(|&x| x == 0.0));

        let seeded = ChoiceIndex::from_array([1, 1, 2, 1, 0]);
        let key = g.key(&[seeded, zero]).unwrap();
        let q = query_by_key(&key, 20, 5, 1.0).unwrap();
        assert_eq!(q.projection.len(), 25);
        assert_eq!(&q.projection[..20], q.observation.as_slice());
        let full = seir::simulate_mixture(&key.communities, 25, 1.0).unwrap();
        assert_eq!(q.projection, full.incidence);
    }

    #[test]
    fn weights_need_two_parents_and_are_reproducible() {
        assert!(sample_weights(1, 1.0, 0).is_err());
        assert!(sample_weights(2, 0.0, 0).is_err());
        let a = sample_weights(3, 1.0, 42).unwrap();
        assert_eq!(a, sample_weights(3, 1.0, 42).unwrap());
        assert!((a.as_slice().iter().sum::<f64>() - 1.0).abs() <= WEIGHT_SUM_TOL);
    }

    #[test]
    fn large_concentration_approaches_uniform() {
        let w = sample_weights(4, 1e8, 3).unwrap();
        for x in w.as_slice() {
            assert!((x - 0.25).abs() < 1e-3);
        }
    }

    #[test]
    fn dirichlet_mean_is_one_half_for_two_parents() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 10_000;
        let mean = (0..n)
            .map(|_| dirichlet(2, 1.0, &mut rng).unwrap().as_slice()[0])
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean = {mean}");
    }

    #[test]
    fn pool_sizes_and_passthrough() {
        let g = grid();
        let cfg = PoolConfig {
            n_queries: 6,
            n_mixed: 0,
            k: 2,
            concentration: 1.0,
            seed: 1,
        };
        let pool = build_pool(&g, &cfg, 15, 4, 1.0).unwrap();
        assert_eq!(pool.len(), 6);
        assert!(pool
            .pairs
            .iter()
            .all(|p| matches!(p.provenance, Provenance::Query { .. })));

        let cfg = PoolConfig { n_mixed: 11, ..cfg };
        let pool = build_pool(&g, &cfg, 15, 4, 1.0).unwrap();
        assert_eq!(pool.len(), 17);

        let bad = PoolConfig {
            n_queries: 2,
            k: 3,
            ..cfg
        };
        assert!(build_pool(&g, &bad, 15, 4, 1.0).is_err());
    }

    #[test]
    fn pool_file_round_trip_and_corruption() {
        let g = grid();
        let cfg = PoolConfig {
            n_queries: 5,
            n_mixed: 7,
            k: 3,
            concentration: 0.7,
            seed: 9,
        };
        let pool = build_pool(&g, &cfg, 12, 3, 1.0).unwrap();
        let mut bytes = Vec::new();
        pool.write_to(&mut bytes).unwrap();
        let back = Pool::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, pool);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Pool::read_from(&mut bad.as_slice()),
            Err(Error::Format { .. })
        ));
        let truncated = &bytes[..bytes.len() - 3];
        assert!(Pool::read_from(&mut &truncated[..]).is_err());
    }

    #[test]
    fn subset_is_deterministic_and_bounded() {
        let g = grid();
        let cfg = PoolConfig {
            n_queries: 5,
            n_mixed: 20,
            k: 2,
            concentration: 1.0,
            seed: 4,
        };
        let pool = build_pool(&g, &cfg, 10, 2, 1.0).unwrap();
        let a = pool.subset(8, 77).unwrap();
        let b = pool.subset(8, 77).unwrap();
        assert_eq!(a, b);
        assert!(pool.subset(0, 1).is_err());
        assert!(pool.subset(26, 1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn mixed_values_stay_within_parent_bounds(seed in 0u64..10_000, k in 2usize..4, conc in 0.2f64..5.0) {
            let g = grid();
            let cfg = PoolConfig { n_queries: 6, n_mixed: 10, k, concentration: conc, seed };
            let pool = build_pool(&g, &cfg, 30, 7, 1.0).unwrap();
            for p in &pool.pairs[6..] {
                let Provenance::Mixup { parents, .. } = &p.provenance else {
                    panic!("expected a mixed pair");
                };
                for (t, &v) in p.projection.iter().enumerate() {
                    let vals = parents.iter().map(|&i| pool.pairs[i as usize].projection[t]);
                    let lo = vals.clone().fold(f64::INFINITY, f64::min);
                    let hi = vals.fold(f64::NEG_INFINITY, f64::max);
                    let slack = 1e-12 * hi.abs().max(1.0);
                    prop_assert!(v >= lo - slack && v <= hi + slack);
                }
                prop_assert_eq!(&p.projection[..30], p.observation.as_slice());
            }
        }
    }
}
