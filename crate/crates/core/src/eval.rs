//! Accuracy metrics and the teacher / student / coarse comparison report.
//!
//! All report metrics are computed on weekly sums: the calibration and
//! projection windows are aggregated separately, each from its own first
//! day.

use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::weekly_aggregate;
use crate::error::{Error, Result};

/// MAPE together with the number of zero observations that were skipped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mape {
    pub value: f64,
    pub excluded: usize,
}

/// Mean absolute percentage error, skipping zero observations.
pub fn mape_detailed(observed: &[f64], modeled: &[f64]) -> Result<Mape> {
    Error::check_len(observed.len(), modeled.len(), "mape observed vs modeled")?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for (o, m) in observed.iter().zip(modeled) {
        if *o == 0.0 {
            continue;
        }
        sum += ((o - m) / o).abs();
        used += 1;
    }
    if used == 0 {
        return Err(Error::data("MAPE undefined: every observed value is zero"));
    }
    Ok(Mape {
        value: sum / used as f64,
        excluded: observed.len() - used,
    })
}

pub fn mape(observed: &[f64], modeled: &[f64]) -> Result<f64> {
    mape_detailed(observed, modeled).map(|m| m.value)
}

pub fn rmse(observed: &[f64], modeled: &[f64]) -> Result<f64> {
    Error::check_len(observed.len(), modeled.len(), "rmse observed vs modeled")?;
    if observed.is_empty() {
        return Err(Error::data("RMSE of an empty series"));
    }
    let ss: f64 = observed
        .iter()
        .zip(modeled)
        .map(|(o, m)| (o - m) * (o - m))
        .sum();
    Ok((ss / observed.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Complexity {
    pub scenarios_simulated: u64,
    pub wall_time_secs: f64,
}

/// A model's daily forecast over calibration + projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelForecast {
    pub name: String,
    pub daily: Vec<f64>,
    pub complexity: Option<Complexity>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowMetrics {
    pub mape: f64,
    pub mape_excluded: usize,
    pub rmse: f64,
}

impl WindowMetrics {
    fn compute(observed: &[f64], modeled: &[f64]) -> Result<Self> {
        let m = mape_detailed(observed, modeled)?;
        Ok(WindowMetrics {
            mape: m.value,
            mape_excluded: m.excluded,
            rmse: rmse(observed, modeled)?,
        })
    }

    pub fn rmse_1e5(&self) -> f64 {
        self.rmse / 1e5
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model: String,
    pub calibration: WindowMetrics,
    pub projection: WindowMetrics,
    /// Absolute percentage error of each projection week (1, 2, ... weeks
    /// ahead); `None` where the observed week is zero.
    pub horizon_mape: Vec<Option<f64>>,
    pub complexity: Option<Complexity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklyCurves {
    pub observed_calibration: Vec<f64>,
    pub observed_projection: Vec<f64>,
    /// Per model, same order as `EvalReport::rows`.
    pub modeled_calibration: Vec<Vec<f64>>,
    pub modeled_projection: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub calibration_len: usize,
    pub projection_len: usize,
    pub cal_start: Option<NaiveDate>,
    pub rows: Vec<ModelRow>,
    pub weekly: WeeklyCurves,
}

/// Scores every forecast against `observed` (daily, calibration followed by
/// projection) on weekly sums.
pub fn compare_models(
    observed: &[f64],
    forecasts: &[ModelForecast],
    calibration_len: usize,
    projection_len: usize,
    cal_start: Option<NaiveDate>,
) -> Result<EvalReport> {
    let total = calibration_len + projection_len;
    Error::check_len(total, observed.len(), "observed series vs windows")?;
    if forecasts.is_empty() {
        return Err(Error::config("no forecasts to compare"));
    }
    let obs_cal = weekly_aggregate(&observed[..calibration_len])?;
    let obs_proj = weekly_aggregate(&observed[calibration_len..])?;
    let mut rows = Vec::with_capacity(forecasts.len());
    let mut modeled_calibration = Vec::with_capacity(forecasts.len());
    let mut modeled_projection = Vec::with_capacity(forecasts.len());
    for f in forecasts {
        if f.daily.len() != total {
            return Err(Error::data(format!(
                "forecast {:?} covers {} days, windows need {total}",
                f.name,
                f.daily.len()
            )));
        }
        let cal = weekly_aggregate(&f.daily[..calibration_len])?;
        let proj = weekly_aggregate(&f.daily[calibration_len..])?;
        let horizon_mape = obs_proj
            .iter()
            .zip(&proj)
            .map(|(o, m)| (*o != 0.0).then(|| ((o - m) / o).abs()))
            .collect();
        rows.push(ModelRow {
            model: f.name.clone(),
            calibration: WindowMetrics::compute(&obs_cal, &cal)?,
            projection: WindowMetrics::compute(&obs_proj, &proj)?,
            horizon_mape,
            complexity: f.complexity,
        });
        modeled_calibration.push(cal);
        modeled_projection.push(proj);
    }
    Ok(EvalReport {
        calibration_len,
        projection_len,
        cal_start,
        rows,
        weekly: WeeklyCurves {
            observed_calibration: obs_cal,
            observed_projection: obs_proj,
            modeled_calibration,
            modeled_projection,
        },
    })
}

impl EvalReport {
    pub fn row(&self, model: &str) -> Option<&ModelRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    /// Aligned text table: one row per model and metric, calibration and
    /// projection columns, then per-week projection MAPE and complexity.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# weekly metrics; calibration {} days, projection {} days; RMSE also in units of 1e5",
            self.calibration_len, self.projection_len
        );
        let _ = writeln!(
            s,
            "{:<10} {:<12} {:>12} {:>12}",
            "metric", "model", "calibration", "projection"
        );
        for (metric, get) in [
            (
                "MAPE",
                (|w: &WindowMetrics| w.mape) as fn(&WindowMetrics) -> f64,
            ),
            ("RMSE", |w: &WindowMetrics| w.rmse),
            ("RMSE(1e5)", |w: &WindowMetrics| w.rmse_1e5()),
        ] {
            for r in &self.rows {
                let _ = writeln!(
                    s,
                    "{:<10} {:<12} {:>12.4} {:>12.4}",
                    metric,
                    r.model,
                    get(&r.calibration),
                    get(&r.projection)
                );
            }
        }
        let _ = writeln!(s);
        let _ = write!(s, "{:<12}", "horizon");
        for r in &self.rows {
            let _ = write!(s, " {:>12}", r.model);
        }
        let _ = writeln!(s);
        for h in 0..self.weekly.observed_projection.len() {
            let _ = write!(s, "{:<12}", format!("{} week ahead", h + 1));
            for r in &self.rows {
                match r.horizon_mape[h] {
                    Some(v) => {
                        let _ = write!(s, " {v:>12.4}");
                    }
                    None => {
                        let _ = write!(s, " {:>12}", "n/a");
                    }
                }
            }
            let _ = writeln!(s);
        }
        if self.rows.iter().any(|r| r.complexity.is_some()) {
            let _ = writeln!(s);
            let _ = writeln!(s, "{:<12} {:>14} {:>14}", "model", "simulations", "time(s)");
            for r in &self.rows {
                if let Some(c) = r.complexity {
                    let _ = writeln!(
                        s,
                        "{:<12} {:>14} {:>14.4}",
                        r.model, c.scenarios_simulated, c.wall_time_secs
                    );
                }
            }
        }
        s
    }

    /// `model,window,mape,mape_excluded,rmse,rmse_1e5` with windows
    /// `calibration`, `projection` and `week_<h>`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "model",
            "window",
            "mape",
            "mape_excluded",
            "rmse",
            "rmse_1e5",
        ])?;
        for (i, r) in self.rows.iter().enumerate() {
            for (name, m) in [
                ("calibration", &r.calibration),
                ("projection", &r.projection),
            ] {
                w.write_record([
                    r.model.clone(),
                    name.to_string(),
                    m.mape.to_string(),
                    m.mape_excluded.to_string(),
                    m.rmse.to_string(),
                    m.rmse_1e5().to_string(),
                ])?;
            }
            for (h, v) in r.horizon_mape.iter().enumerate() {
                let err = (self.weekly.observed_projection[h]
                    - self.weekly.modeled_projection[i][h])
                    .abs();
                w.write_record([
                    r.model.clone(),
                    format!("week_{}", h + 1),
                    v.map_or_else(String::new, |x| x.to_string()),
                    usize::from(v.is_none()).to_string(),
                    err.to_string(),
                    (err / 1e5).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Plot data: `week_start,period,observed,<model>...`. Week starts are
    /// dates when the calibration start is known, day offsets otherwise.
    pub fn write_plot_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec![
            "week_start".to_string(),
            "period".to_string(),
            "observed".to_string(),
        ];
        header.extend(self.rows.iter().map(|r| r.model.clone()));
        w.write_record(&header)?;
        let label = |day: usize| match self.cal_start {
            Some(d) => (d + chrono::Days::new(day as u64)).to_string(),
            None => day.to_string(),
        };
        let periods = [
            (
                "calibration",
                0,
                &self.weekly.observed_calibration,
                &self.weekly.modeled_calibration,
            ),
            (
                "projection",
                self.calibration_len,
                &self.weekly.observed_projection,
                &self.weekly.modeled_projection,
            ),
        ];
        for (period, offset, observed, modeled) in periods {
            for (k, o) in observed.iter().enumerate() {
                let mut rec = vec![label(offset + 7 * k), period.to_string(), o.to_string()];
                rec.extend(modeled.iter().map(|m| m[k].to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }
}
