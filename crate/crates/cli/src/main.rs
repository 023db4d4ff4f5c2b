//! `epidistill`: run each stage of the teacher/student pipeline from one
//! config file. Outputs land in a run directory together with a
//! `manifest.json` recording the config hash, seeds and overrides.
//!
//! Precedence: command-line flags override the config file, which overrides
//! built-in defaults.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use epidistill::config::{RunConfig, Seeds};
use epidistill::eval::{compare_models, Complexity, ModelForecast};
use epidistill::pipeline::{
    self, observed_series, run_benchmark, write_forecasts_csv, write_report, CHECKPOINT_FILE,
    FORECASTS_CSV, LOSS_FILE, POOL_FILE,
};
use epidistill::pool::{build_pool, Pool};
use epidistill::seir::{simulate_components, simulate_mixture, Trajectory};
use epidistill::student::{predict, train_student, write_loss_history, MlpModel, Normalization};
use epidistill::teacher::{forecast, sample_scenarios, ChoiceIndex, ParameterGrid};
use epidistill::{Error, Result};
use serde::{Deserialize, Serialize};

use manifest::Stage;

#[derive(Parser)]
#[command(
    name = "epidistill",
    version,
    about = "Mixture-SEIR teacher, sequence mixup and distilled student"
)]
struct Cli {
    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Directory receiving every output and the manifest.
    #[arg(short, long, default_value = "run")]
    run_dir: PathBuf,
    /// Replace every named seed with ones derived from this value.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario key and write its trajectory.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Choice indices per community, `pop,ic,beta,sigma,gamma` joined by
        /// `;`. Defaults to the config's synthetic truth.
        #[arg(long)]
        key: Option<String>,
        #[arg(long, value_enum, default_value_t = GridChoice::Teacher)]
        grid: GridChoice,
        /// Number of daily steps; defaults to calibration + projection.
        #[arg(long)]
        days: Option<usize>,
        /// Also write one trajectory file per community.
        #[arg(long)]
        components: bool,
    },
    /// Materialize the teacher and coarse grids and their sampled keys.
    BuildTeacherGrid {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        search: SearchOverrides,
    },
    /// Query the teacher and expand the pairs with mixup into a pool file.
    BuildPool {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_queries: Option<usize>,
        #[arg(long)]
        n_mixed: Option<usize>,
        /// Parents per mixed pair.
        #[arg(long)]
        k: Option<usize>,
        /// Dirichlet concentration of the mixing weights.
        #[arg(long)]
        concentration: Option<f64>,
    },
    /// Train the student on a subset of the pool.
    Train {
        #[command(flatten)]
        common: Common,
        /// Pool file; defaults to the one in the run directory.
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long)]
        subset_size: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        weight_decay: Option<f64>,
        #[arg(long, value_enum)]
        normalization: Option<NormalizationArg>,
    },
    /// Forecast the observed series with one model.
    Forecast {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        model: ModelChoice,
        /// Student checkpoint; defaults to the one in the run directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        search: SearchOverrides,
    },
    /// Compare the forecasts in the run directory against the observations.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
    /// Every stage in sequence: searches, pool, training, report.
    Run {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Clone, Default)]
struct SearchOverrides {
    /// Sampled scenarios for the search (teacher or coarse).
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GridChoice {
    Teacher,
    Coarse,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelChoice {
    Teacher,
    Student,
    Coarse,
}

impl ModelChoice {
    fn name(self) -> &'static str {
        match self {
            ModelChoice::Teacher => "teacher",
            ModelChoice::Student => "student",
            ModelChoice::Coarse => "coarse",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NormalizationArg {
    Population,
    Peak,
}

/// Loaded config plus the bookkeeping needed for the manifest.
struct Ctx {
    cfg: RunConfig,
    config_path: PathBuf,
    config_sha256: String,
    run_dir: PathBuf,
    overrides: Vec<String>,
}

impl Ctx {
    fn load(common: &Common) -> Result<Ctx> {
        let bytes = std::fs::read(&common.config).map_err(|e| {
            Error::config(format!(
                "cannot read config {}: {e}",
                common.config.display()
            ))
        })?;
        let mut cfg = RunConfig::load(&common.config)?;
        let mut overrides = Vec::new();
        if let Some(seed) = common.seed {
            cfg.seeds = Seeds::derived(seed);
            overrides.push(format!("seeds=derived({seed})"));
        }
        cfg.validate()?;
        std::fs::create_dir_all(&common.run_dir)?;
        Ok(Ctx {
            cfg,
            config_path: common.config.clone(),
            config_sha256: manifest::sha256_hex(&bytes),
            run_dir: common.run_dir.clone(),
            overrides,
        })
    }

    fn set<T: std::fmt::Display>(
        &mut self,
        name: &str,
        value: Option<T>,
        slot: impl FnOnce(&mut RunConfig, T),
    ) {
        if let Some(v) = value {
            self.overrides.push(format!("{name}={v}"));
            slot(&mut self.cfg, v);
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.run_dir.join(name)
    }

    fn finish(self, stage: &str, outputs: &[&str]) -> Result<()> {
        manifest::record(
            &self.run_dir,
            &self.config_path,
            &self.config_sha256,
            self.cfg.seeds,
            stage,
            Stage {
                overrides: self.overrides,
                outputs: outputs.iter().map(|s| s.to_string()).collect(),
            },
        )
    }
}

fn apply_search(ctx: &mut Ctx, grid: GridChoice, o: &SearchOverrides) -> Result<()> {
    let prefix = match grid {
        GridChoice::Teacher => "teacher",
        GridChoice::Coarse => "coarse",
    };
    if grid == GridChoice::Coarse
        && ctx.cfg.coarse.is_none()
        && (o.n_samples.is_some() || o.workers.is_some())
    {
        return Err(Error::config("config has no [coarse] section to override"));
    }
    ctx.set(
        &format!("{prefix}.n_samples"),
        o.n_samples,
        |c, v| match grid {
            GridChoice::Teacher => c.teacher.n_samples = v,
            GridChoice::Coarse => c.coarse.as_mut().expect("checked").n_samples = v,
        },
    );
    ctx.set(&format!("{prefix}.workers"), o.workers, |c, v| match grid {
        GridChoice::Teacher => c.teacher.workers = v,
        GridChoice::Coarse => c.coarse.as_mut().expect("checked").workers = v,
    });
    Ok(())
}

fn parse_key(spec: &str) -> Result<Vec<ChoiceIndex>> {
    spec.split(';')
        .map(|community| {
            let values: Vec<u32> = community
                .split(',')
                .map(|v| v.trim().parse::<u32>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::config(format!("bad key component in {community:?}: {e}")))?;
            let arr: [u32; 5] = values.try_into().map_err(|v: Vec<u32>| {
                Error::config(format!(
                    "each community needs 5 indices, got {} in {community:?}",
                    v.len()
                ))
            })?;
            Ok(ChoiceIndex::from_array(arr))
        })
        .collect()
}

fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    use std::io::Write;
    writeln!(w, "day,s,e,i,r,incidence")?;
    for (t, st) in traj.states.iter().enumerate() {
        let inc = traj
            .incidence
            .get(t)
            .map_or_else(String::new, |v| v.to_string());
        writeln!(w, "{t},{},{},{},{},{inc}", st.c.s, st.c.e, st.c.i, st.c.r)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_simulate(
    common: &Common,
    key: Option<&str>,
    grid: GridChoice,
    days: Option<usize>,
    components: bool,
) -> Result<()> {
    let ctx = Ctx::load(common)?;
    let cfg = &ctx.cfg;
    let g = match grid {
        GridChoice::Teacher => cfg.teacher.grid()?,
        GridChoice::Coarse => cfg
            .coarse
            .as_ref()
            .ok_or_else(|| Error::config("config has no [coarse] section"))?
            .grid()?,
    };
    let indices = match key {
        Some(k) => parse_key(k)?,
        None => cfg
            .synthetic
            .as_ref()
            .ok_or_else(|| Error::config("give --key or a [synthetic] truth in the config"))?
            .indices(),
    };
    let key = g.key(&indices)?;
    let horizon = match days {
        Some(d) => d,
        None => {
            let (c, p) = cfg.windows.lengths()?;
            c + p
        }
    };
    let mut outputs = vec!["trajectory.csv".to_string()];
    write_trajectory(
        &ctx.path("trajectory.csv"),
        &simulate_mixture(&key.communities, horizon, cfg.dt)?,
    )?;
    if components {
        for (k, traj) in simulate_components(&key.communities, horizon, cfg.dt)?
            .iter()
            .enumerate()
        {
            let name = format!("trajectory_community{k}.csv");
            write_trajectory(&ctx.path(&name), traj)?;
            outputs.push(name);
        }
    }
    println!("simulated {} communities for {horizon} days", key.len());
    let outputs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    ctx.finish("simulate", &outputs)
}

#[derive(Serialize)]
struct GridSummary {
    grid: ParameterGrid,
    size: String,
    per_community: u64,
    total_log10: f64,
    n_samples: usize,
    sample_seed: u64,
}

fn write_keys(path: &Path, grid: &ParameterGrid, n: usize, seed: u64) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header: Vec<String> = (0..grid.n_communities)
        .flat_map(|c| ["population", "ic", "beta", "sigma", "gamma"].map(|f| format!("c{c}_{f}")))
        .collect();
    writeln!(w, "index,{}", header.join(","))?;
    for (i, key) in sample_scenarios(grid, n, seed)?.iter().enumerate() {
        let cols: Vec<String> = key
            .grid_indices
            .iter()
            .flat_map(|c| c.as_array())
            .map(|v| v.to_string())
            .collect();
        writeln!(w, "{i},{}", cols.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_build_teacher_grid(common: &Common, search: &SearchOverrides) -> Result<()> {
    let mut ctx = Ctx::load(common)?;
    apply_search(&mut ctx, GridChoice::Teacher, search)?;
    let cfg = &ctx.cfg;
    let mut summaries = serde_json::Map::new();
    let mut outputs = vec!["grids.json".to_string()];
    let mut searches = vec![("teacher", &cfg.teacher, cfg.seeds.teacher)];
    if let Some(c) = &cfg.coarse {
        searches.push(("coarse", c, cfg.seeds.coarse));
    }
    for (name, s, seed) in searches {
        let grid = s.grid()?;
        let size = grid.size();
        println!("{name}: {size}; sampling {} scenarios", s.n_samples);
        let file = format!("{name}_keys.csv");
        write_keys(&ctx.path(&file), &grid, s.n_samples, seed)?;
        outputs.push(file);
        summaries.insert(
            name.to_string(),
            serde_json::to_value(GridSummary {
                size: size.to_string(),
                per_community: size.per_community,
                total_log10: size.total_log10,
                n_samples: s.n_samples,
                sample_seed: seed,
                grid,
            })?,
        );
    }
    std::fs::write(
        ctx.path("grids.json"),
        serde_json::to_string_pretty(&summaries)? + "\n",
    )?;
    let outputs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    ctx.finish("build-teacher-grid", &outputs)
}

fn cmd_build_pool(
    common: &Common,
    n_queries: Option<usize>,
    n_mixed: Option<usize>,
    k: Option<usize>,
    concentration: Option<f64>,
) -> Result<()> {
    let mut ctx = Ctx::load(common)?;
    ctx.set("pool.n_queries", n_queries, |c, v| c.pool.n_queries = v);
    ctx.set("pool.n_mixed", n_mixed, |c, v| c.pool.n_mixed = v);
    ctx.set("pool.k", k, |c, v| c.pool.k = v);
    ctx.set("pool.concentration", concentration, |c, v| {
        c.pool.concentration = v
    });
    ctx.cfg.validate()?;
    let cfg = &ctx.cfg;
    let (cal, proj) = cfg.windows.lengths()?;
    let t = Instant::now();
    let pool = build_pool(&cfg.teacher.grid()?, &cfg.pool_config(), cal, proj, cfg.dt)?;
    pool.write(&ctx.path(POOL_FILE))?;
    println!(
        "pool: {} pairs ({} queries, {} mixed) in {:.2}s",
        pool.len(),
        cfg.pool.n_queries,
        cfg.pool.n_mixed,
        t.elapsed().as_secs_f64()
    );
    ctx.finish("build-pool", &[POOL_FILE])
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    common: &Common,
    pool_path: Option<&Path>,
    subset_size: Option<usize>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    weight_decay: Option<f64>,
    normalization: Option<NormalizationArg>,
) -> Result<()> {
    let mut ctx = Ctx::load(common)?;
    ctx.set("train.subset_size", subset_size, |c, v| {
        c.train.subset_size = v
    });
    ctx.set("train.epochs", epochs, |c, v| c.train.epochs = v);
    ctx.set("train.batch_size", batch_size, |c, v| {
        c.train.batch_size = v
    });
    ctx.set("train.learning_rate", learning_rate, |c, v| {
        c.train.learning_rate = v
    });
    ctx.set("train.weight_decay", weight_decay, |c, v| {
        c.train.weight_decay = v
    });
    if let Some(n) = normalization {
        let (mode, name) = match n {
            NormalizationArg::Population => (Normalization::Population, "population"),
            NormalizationArg::Peak => (Normalization::Peak, "peak"),
        };
        ctx.set("train.normalization", Some(name), |c, _| {
            c.train.normalization = mode
        });
    }
    // decay epochs beyond a shortened run are dropped rather than rejected
    let epochs_total = ctx.cfg.train.epochs;
    ctx.cfg.train.lr_decay_epochs.retain(|&e| e < epochs_total);
    ctx.cfg.validate()?;

    let pool_path = pool_path.map_or_else(|| ctx.path(POOL_FILE), Path::to_path_buf);
    let pool = Pool::read(&pool_path)?;
    let (cal, proj) = ctx.cfg.windows.lengths()?;
    if pool.calibration_len != cal || pool.projection_len != proj {
        return Err(Error::config(format!(
            "pool windows {}+{} do not match the config's {cal}+{proj}",
            pool.calibration_len, pool.projection_len
        )));
    }
    let cfg = &ctx.cfg;
    let subset = pool.subset(cfg.train.subset_size, cfg.seeds.subset)?;
    let t = Instant::now();
    let out = train_student(
        &subset,
        &cfg.train_config(),
        cfg.train.normalization,
        cfg.train.normalization_scale,
        cfg.seeds.init,
    )?;
    out.model.save(&ctx.path(CHECKPOINT_FILE))?;
    write_loss_history(&ctx.path(LOSS_FILE), &cfg.train_config(), &out.loss_history)?;
    std::fs::write(
        ctx.path("train_config.json"),
        serde_json::to_string_pretty(&cfg.train_config())? + "\n",
    )?;
    println!(
        "trained on {} pairs for {} epochs in {:.2}s; final loss {:.6e}",
        subset.len(),
        cfg.train.epochs,
        t.elapsed().as_secs_f64(),
        out.loss_history.last().copied().unwrap_or(f64::NAN)
    );
    ctx.finish("train", &[CHECKPOINT_FILE, LOSS_FILE, "train_config.json"])
}

/// Timing and size of one forecast, kept apart from the forecast values.
#[derive(Debug, Serialize, Deserialize)]
struct ForecastInfo {
    model: String,
    complexity: Complexity,
    fit_mse: Option<f64>,
}

fn forecast_csv(model: &str) -> String {
    format!("forecast_{model}.csv")
}

fn forecast_info(model: &str) -> String {
    format!("forecast_{model}.json")
}

fn write_series(path: &Path, daily: &[f64]) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "day,incidence")?;
    for (t, v) in daily.iter().enumerate() {
        writeln!(w, "{t},{v}")?;
    }
    w.flush()?;
    Ok(())
}

fn read_series(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("day,incidence") {
        return Err(Error::format(path, "missing day,incidence header"));
    }
    lines
        .map(|line| {
            let (_, v) = line
                .split_once(',')
                .ok_or_else(|| Error::format(path, "expected day,incidence rows"))?;
            v.trim()
                .parse::<f64>()
                .map_err(|e| Error::format(path, e.to_string()))
        })
        .collect()
}

fn cmd_forecast(
    common: &Common,
    model: ModelChoice,
    checkpoint: Option<&Path>,
    search: &SearchOverrides,
) -> Result<()> {
    let mut ctx = Ctx::load(common)?;
    let grid_choice = if model == ModelChoice::Coarse {
        GridChoice::Coarse
    } else {
        GridChoice::Teacher
    };
    if model != ModelChoice::Student {
        apply_search(&mut ctx, grid_choice, search)?;
    }
    ctx.cfg.validate()?;
    let cfg = &ctx.cfg;
    let (cal, proj) = cfg.windows.lengths()?;
    let (observed, _) = observed_series(cfg)?;
    let obs_cal = &observed[..cal];
    let name = model.name();
    let mut outputs = vec![forecast_csv(name), forecast_info(name)];

    let (daily, info) = match model {
        ModelChoice::Student => {
            let path = checkpoint.map_or_else(|| ctx.path(CHECKPOINT_FILE), Path::to_path_buf);
            let m = MlpModel::load(&path)?;
            let t = Instant::now();
            let daily = predict(&m, obs_cal)?;
            let secs = t.elapsed().as_secs_f64();
            let info = ForecastInfo {
                model: name.into(),
                complexity: Complexity {
                    scenarios_simulated: 0,
                    wall_time_secs: secs,
                },
                fit_mse: None,
            };
            (daily, info)
        }
        ModelChoice::Teacher | ModelChoice::Coarse => {
            let (s, seed) = match model {
                ModelChoice::Teacher => (&cfg.teacher, cfg.seeds.teacher),
                _ => (
                    cfg.coarse
                        .as_ref()
                        .ok_or_else(|| Error::config("config has no [coarse] section"))?,
                    cfg.seeds.coarse,
                ),
            };
            let r = forecast(
                obs_cal,
                &s.grid()?,
                s.n_samples,
                seed,
                proj,
                &s.calibrate_options(cfg.dt),
            )?;
            let file = format!("calibration_{name}.json");
            r.write_json(&ctx.path(&file))?;
            outputs.push(file);
            let info = ForecastInfo {
                model: name.into(),
                complexity: Complexity {
                    scenarios_simulated: r.scenarios_evaluated as u64,
                    wall_time_secs: r.wall_time_secs,
                },
                fit_mse: Some(r.fit_mse),
            };
            (r.incidence().to_vec(), info)
        }
    };
    write_series(&ctx.path(&forecast_csv(name)), &daily)?;
    std::fs::write(
        ctx.path(&forecast_info(name)),
        serde_json::to_string_pretty(&info)? + "\n",
    )?;
    println!(
        "{name}: {} days forecast in {:.3e}s ({} scenarios simulated)",
        daily.len(),
        info.complexity.wall_time_secs,
        info.complexity.scenarios_simulated
    );
    let outputs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    ctx.finish("forecast", &outputs)
}

fn cmd_evaluate(common: &Common) -> Result<()> {
    let ctx = Ctx::load(common)?;
    let cfg = &ctx.cfg;
    let (cal, proj) = cfg.windows.lengths()?;
    let (observed, start) = observed_series(cfg)?;
    let mut forecasts = Vec::new();
    let mut complexity = serde_json::Map::new();
    for model in [
        ModelChoice::Teacher,
        ModelChoice::Student,
        ModelChoice::Coarse,
    ] {
        let path = ctx.path(&forecast_csv(model.name()));
        if !path.exists() {
            continue;
        }
        forecasts.push(ModelForecast {
            name: model.name().into(),
            daily: read_series(&path)?,
            complexity: None,
        });
        if let Ok(bytes) = std::fs::read(ctx.path(&forecast_info(model.name()))) {
            let info: ForecastInfo = serde_json::from_slice(&bytes)?;
            complexity.insert(model.name().into(), serde_json::to_value(info.complexity)?);
        }
    }
    if forecasts.is_empty() {
        return Err(Error::config(format!(
            "no forecast_*.csv files in {}; run `forecast` first",
            ctx.run_dir.display()
        )));
    }
    let report = compare_models(&observed, &forecasts, cal, proj, start)?;
    write_report(&ctx.run_dir, &report)?;
    write_forecasts_csv(&ctx.path(FORECASTS_CSV), Some(&observed), &forecasts)?;
    std::fs::write(
        ctx.path(pipeline::COMPLEXITY_JSON),
        serde_json::to_string_pretty(&complexity)? + "\n",
    )?;
    print!("{}", report.render_table());
    ctx.finish(
        "evaluate",
        &[
            pipeline::REPORT_TXT,
            pipeline::REPORT_CSV,
            pipeline::REPORT_JSON,
            pipeline::PLOT_CSV,
            FORECASTS_CSV,
            pipeline::COMPLEXITY_JSON,
        ],
    )
}

fn cmd_run(common: &Common) -> Result<()> {
    let ctx = Ctx::load(common)?;
    let (observed, start) = observed_series(&ctx.cfg)?;
    let out = run_benchmark(&ctx.cfg, &observed, start, Some(&ctx.run_dir))?;
    print!("{}", out.report.render_table());
    let t = out.timings;
    println!(
        "teacher search {:.3}s, coarse search {:.3}s, pool {:.3}s, training {:.3}s, student inference {:.2e}s",
        t.teacher_search, t.coarse_search, t.pool_build, t.student_train, t.student_inference
    );
    ctx.finish(
        "run",
        &[
            POOL_FILE,
            CHECKPOINT_FILE,
            LOSS_FILE,
            pipeline::REPORT_TXT,
            pipeline::REPORT_CSV,
            pipeline::REPORT_JSON,
            pipeline::PLOT_CSV,
            FORECASTS_CSV,
            pipeline::COMPLEXITY_JSON,
        ],
    )
}

/// 2 config, 3 data, 4 numerical divergence, 5 unreadable file format,
/// 1 anything else (I/O and the like).
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Toml(_) => 2,
        Error::Data(_) | Error::LengthMismatch { .. } | Error::Csv(_) => 3,
        Error::Divergence { .. } | Error::InvalidState(_) => 4,
        Error::Format { .. } => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Simulate {
            common,
            key,
            grid,
            days,
            components,
        } => cmd_simulate(common, key.as_deref(), *grid, *days, *components),
        Command::BuildTeacherGrid { common, search } => cmd_build_teacher_grid(common, search),
        Command::BuildPool {
            common,
            n_queries,
            n_mixed,
            k,
            concentration,
        } => cmd_build_pool(common, *n_queries, *n_mixed, *k, *concentration),
        Command::Train {
            common,
            pool,
            subset_size,
            epochs,
            batch_size,
            learning_rate,
            weight_decay,
            normalization,
        } => cmd_train(
            common,
            pool.as_deref(),
            *subset_size,
            *epochs,
            *batch_size,
            *learning_rate,
            *weight_decay,
            *normalization,
        ),
        Command::Forecast {
            common,
            model,
            checkpoint,
            search,
        } => cmd_forecast(common, *model, checkpoint.as_deref(), search),
        Command::Evaluate { common } => cmd_evaluate(common),
        Command::Run { common } => cmd_run(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
