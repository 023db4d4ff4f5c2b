//! End-to-end orchestration: teacher and coarse searches, pool
//! construction, student training, and the comparison report.

use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{ingest_csv, window};
use crate::error::{Error, Result};
use crate::eval::{compare_models, Complexity, EvalReport, ModelForecast};
use crate::pool::{build_pool, query_by_key, Pool};
use crate::student::{predict, train_student, write_loss_history, MlpModel};
use crate::teacher::{forecast, CalibrationResult, ChoiceIndex, ParameterGrid};

pub const POOL_FILE: &str = "pool.bin";
pub const CHECKPOINT_FILE: &str = "student.ckpt";
pub const LOSS_FILE: &str = "loss_history.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";
pub const PLOT_CSV: &str = "plot.csv";
pub const FORECASTS_CSV: &str = "forecasts.csv";
pub const COMPLEXITY_JSON: &str = "complexity.json";

/// Daily incidence of one grid scenario over calibration + projection, used
/// as a stand-in for real observations.
pub fn synthetic_truth(
    grid: &ParameterGrid,
    indices: &[ChoiceIndex],
    calibration_len: usize,
    projection_len: usize,
    dt: f64,
) -> Result<Vec<f64>> {
    let key = grid.key(indices)?;
    Ok(query_by_key(&key, calibration_len, projection_len, dt)?.projection)
}

/// The series a run is evaluated against, calibration followed by
/// projection, and its first date when it comes from real data. Real data
/// from `[data]` takes precedence over `[synthetic]`.
pub fn observed_series(cfg: &RunConfig) -> Result<(Vec<f64>, Option<NaiveDate>)> {
    let (cal, proj) = cfg.windows.lengths()?;
    if let Some(d) = &cfg.data {
        let w = &cfg.windows;
        let (Some(start), Some(end), Some(proj_end)) = (w.cal_start, w.cal_end, w.proj_end) else {
            return Err(Error::config(
                "[data] needs cal_start, cal_end and proj_end in [windows]",
            ));
        };
        let series = ingest_csv(&d.path, &d.region, &d.ingest_options())?;
        let win = window(&series, start, end, proj_end)?;
        let mut daily = win.calibration;
        daily.extend(win.projection);
        return Ok((daily, Some(start)));
    }
    if let Some(s) = &cfg.synthetic {
        let daily = synthetic_truth(&cfg.teacher.grid()?, &s.indices(), cal, proj, cfg.dt)?;
        return Ok((daily, cfg.windows.cal_start));
    }
    Err(Error::config("config has neither [data] nor [synthetic]"))
}

#[derive(Debug, Clone)]
pub struct Distilled {
    pub pool: Pool,
    pub model: MlpModel,
    pub loss_history: Vec<f64>,
    pub pool_secs: f64,
    pub train_secs: f64,
}

/// Builds the pool, draws the training subset and trains the student. When
/// `out_dir` is given, writes the pool, checkpoint and loss history there.
pub fn distill(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<Distilled> {
    let (cal, proj) = cfg.windows.lengths()?;
    let grid = cfg.teacher.grid()?;

    let t0 = Instant::now();
    let pool = build_pool(&grid, &cfg.pool_config(), cal, proj, cfg.dt)?;
    let pool_secs = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let subset = pool.subset(cfg.train.subset_size, cfg.seeds.subset)?;
    let outcome = train_student(
        &subset,
        &cfg.train_config(),
        cfg.train.normalization,
        cfg.train.normalization_scale,
        cfg.seeds.init,
    )?;
    let train_secs = t1.elapsed().as_secs_f64();

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        pool.write(&dir.join(POOL_FILE))?;
        outcome.model.save(&dir.join(CHECKPOINT_FILE))?;
        write_loss_history(
            &dir.join(LOSS_FILE),
            &cfg.train_config(),
            &outcome.loss_history,
        )?;
    }
    Ok(Distilled {
        pool,
        model: outcome.model,
        loss_history: outcome.loss_history,
        pool_secs,
        train_secs,
    })
}

/// Wall-clock seconds of each stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub teacher_search: f64,
    pub coarse_search: f64,
    pub pool_build: f64,
    pub student_train: f64,
    pub student_inference: f64,
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub report: EvalReport,
    pub teacher: CalibrationResult,
    pub coarse: Option<CalibrationResult>,
    pub student_daily: Vec<f64>,
    pub loss_history: Vec<f64>,
    pub timings: Timings,
    pub out_dir: Option<PathBuf>,
}

impl BenchmarkOutcome {
    pub fn projection_mape(&self, model: &str) -> Option<f64> {
        self.report.row(model).map(|r| r.projection.mape)
    }
}

/// Writes `day,observed,<model>...` daily forecasts.
pub fn write_forecasts_csv(
    path: &Path,
    observed: Option<&[f64]>,
    forecasts: &[ModelForecast],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["day".to_string()];
    if observed.is_some() {
        header.push("observed".into());
    }
    header.extend(forecasts.iter().map(|f| f.name.clone()));
    w.write_record(&header)?;
    let len = forecasts.first().map_or(0, |f| f.daily.len());
    for t in 0..len {
        let mut rec = vec![t.to_string()];
        if let Some(o) = observed {
            rec.push(o.get(t).map_or_else(String::new, |v| v.to_string()));
        }
        rec.extend(forecasts.iter().map(|f| f.daily[t].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the deterministic report files (text, CSV, JSON, plot data).
/// Complexity figures are excluded so that reruns are byte-identical.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(REPORT_TXT), report.render_table())?;
    report.write_csv(&dir.join(REPORT_CSV))?;
    report.write_json(&dir.join(REPORT_JSON))?;
    report.write_plot_csv(&dir.join(PLOT_CSV))?;
    Ok(())
}

/// Runs the full comparison against `observed` (daily, calibration followed
/// by projection): teacher search, coarse search (if configured), and the
/// distilled student.
pub fn run_benchmark(
    cfg: &RunConfig,
    observed: &[f64],
    cal_start: Option<NaiveDate>,
    out_dir: Option<&Path>,
) -> Result<BenchmarkOutcome> {
    let (cal, proj) = cfg.windows.lengths()?;
    Error::check_len(cal + proj, observed.len(), "observed series vs windows")?;
    let obs_cal = &observed[..cal];

    let teacher_grid = cfg.teacher.grid()?;
    let teacher = forecast(
        obs_cal,
        &teacher_grid,
        cfg.teacher.n_samples,
        cfg.seeds.teacher,
        proj,
        &cfg.teacher.calibrate_options(cfg.dt),
    )?;
    let coarse = match &cfg.coarse {
        Some(c) => Some(forecast(
            obs_cal,
            &c.grid()?,
            c.n_samples,
            cfg.seeds.coarse,
            proj,
            &c.calibrate_options(cfg.dt),
        )?),
        None => None,
    };

    let distilled = distill(cfg, out_dir)?;
    let t = Instant::now();
    let student_daily = predict(&distilled.model, obs_cal)?;
    let inference = t.elapsed().as_secs_f64();

    let mut forecasts = vec![
        ModelForecast {
            name: "teacher".into(),
            daily: teacher.incidence().to_vec(),
            complexity: None,
        },
        ModelForecast {
            name: "student".into(),
            daily: student_daily.clone(),
            complexity: None,
        },
    ];
    if let Some(c) = &coarse {
        forecasts.push(ModelForecast {
            name: "coarse".into(),
            daily: c.incidence().to_vec(),
            complexity: None,
        });
    }
    let report = compare_models(observed, &forecasts, cal, proj, cal_start)?;

    let timings = Timings {
        teacher_search: teacher.wall_time_secs,
        coarse_search: coarse.as_ref().map_or(0.0, |c| c.wall_time_secs),
        pool_build: distilled.pool_secs,
        student_train: distilled.train_secs,
        student_inference: inference,
    };
    if let Some(dir) = out_dir {
        write_report(dir, &report)?;
        write_forecasts_csv(&dir.join(FORECASTS_CSV), Some(observed), &forecasts)?;
        let complexity = vec![
            (
                "teacher",
                Complexity {
                    scenarios_simulated: cfg.teacher.n_samples as u64,
                    wall_time_secs: timings.teacher_search,
                },
            ),
            (
                "student",
                Complexity {
                    scenarios_simulated: cfg.pool.n_queries as u64,
                    wall_time_secs: timings.pool_build
                        + timings.student_train
                        + timings.student_inference,
                },
            ),
        ];
        let mut complexity: Vec<_> = complexity
            .into_iter()
            .map(|(n, c)| (n.to_string(), c))
            .collect();
        if let (Some(c), Some(cc)) = (&coarse, &cfg.coarse) {
            complexity.push((
                "coarse".into(),
                Complexity {
                    scenarios_simulated: cc.n_samples as u64,
                    wall_time_secs: c.wall_time_secs,
                },
            ));
        }
        let f = std::io::BufWriter::new(std::fs::File::create(dir.join(COMPLEXITY_JSON))?);
        serde_json::to_writer_pretty(
            f,
            &serde_json::json!({ "timings": timings, "models": complexity }),
        )?;
    }
    Ok(BenchmarkOutcome {
        report,
        teacher,
        coarse,
        student_daily,
        loss_history: distilled.loss_history,
        timings,
        out_dir: out_dir.map(Path::to_path_buf),
    })
}
