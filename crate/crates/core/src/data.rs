//! Reported-case ingestion: cumulative counts to daily incidence and 7-day
//! active cases, date windowing, and weekly aggregation.
//!
//! Two CSV layouts are accepted:
//!
//! * wide: one header row whose date columns look like `1/22/20` or
//!   `2020-01-22`, one row per region, cumulative counts in the date
//!   columns. Every row with a label cell equal to the region is summed, so
//!   a country split into provinces aggregates naturally.
//! * long: a header with `date`, `region` and `count` columns (any order).

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Days a reported case counts as active.
pub const ACTIVE_DAYS: usize = 7;

const DATE_FORMATS: [&str; 3] = ["%m/%d/%y", "%Y-%m-%d", "%m/%d/%Y"];

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    DATE_FORMATS
        .iter()
        .find_map(|f| NaiveDate::parse_from_str(s, f).ok())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Largest tolerated drop of the cumulative count, as a fraction of the
    /// previous value. Larger drops are rejected.
    pub max_dip_fraction: f64,
    /// Trailing moving-average window applied to daily counts.
    pub smoothing_window: Option<usize>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            max_dip_fraction: 0.25,
            smoothing_window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSeries {
    pub region: String,
    pub dates: Vec<NaiveDate>,
    pub cumulative: Vec<f64>,
    /// `cumulative[t] - cumulative[t-1]` clamped at zero; the first day is 0.
    pub daily_new: Vec<f64>,
    /// Sum of `daily_new` over the trailing 7 days.
    pub active: Vec<f64>,
    /// Days whose negative difference was clamped.
    pub clamped_days: usize,
}

/// Trailing `ACTIVE_DAYS` window sums (shorter at the start of the series).
pub fn active_cases(daily_new: &[f64]) -> Vec<f64> {
    (0..daily_new.len())
        .map(|t| {
            let lo = (t + 1).saturating_sub(ACTIVE_DAYS);
            daily_new[lo..=t].iter().sum()
        })
        .collect()
}

fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    (0..x.len())
        .map(|t| {
            let lo = (t + 1).saturating_sub(window);
            x[lo..=t].iter().sum::<f64>() / (t + 1 - lo) as f64
        })
        .collect()
}

impl CaseSeries {
    pub fn from_cumulative(
        region: &str,
        dates: Vec<NaiveDate>,
        cumulative: Vec<f64>,
        opts: &IngestOptions,
    ) -> Result<Self> {
        Error::check_len(dates.len(), cumulative.len(), "dates vs cumulative counts")?;
        if dates.is_empty() {
            return Err(Error::data(format!(
                "no observations for region {region:?}"
            )));
        }
        for w in dates.windows(2) {
            if w[1] != w[0] + chrono::Days::new(1) {
                return Err(Error::data(format!(
                    "dates are not contiguous: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if let Some(v) = cumulative.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::data(format!("bad cumulative count {v}")));
        }
        let mut daily_new = vec![0.0; cumulative.len()];
        let mut clamped_days = 0;
        for t in 1..cumulative.len() {
            let (prev, cur) = (cumulative[t - 1], cumulative[t]);
            if cur < prev {
                if prev - cur > opts.max_dip_fraction * prev {
                    return Err(Error::data(format!(
                        "cumulative count drops from {prev} to {cur} on {}",
                        dates[t]
                    )));
                }
                clamped_days += 1;
            } else {
                daily_new[t] = cur - prev;
            }
        }
        if clamped_days > 0 {
            log::warn!("{region}: clamped {clamped_days} negative daily differences to zero");
        }
        if let Some(w) = opts.smoothing_window {
            if w == 0 {
                return Err(Error::config("smoothing window must be positive"));
            }
            daily_new = moving_average(&daily_new, w);
        }
        let active = active_cases(&daily_new);
        Ok(CaseSeries {
            region: region.to_string(),
            dates,
            cumulative,
            daily_new,
            active,
            clamped_days,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    fn index_of(&self, date: NaiveDate) -> Result<usize> {
        let first = self.dates[0];
        let offset = (date - first).num_days();
        if offset < 0 || offset as usize >= self.dates.len() {
            return Err(Error::data(format!(
                "{date} is outside the series range {first}..={}",
                self.dates[self.dates.len() - 1]
            )));
        }
        Ok(offset as usize)
    }

    /// Weekly sums of `daily_new` starting at `anchor`; each entry carries
    /// the first date of its week.
    pub fn weekly(&self, anchor: NaiveDate) -> Result<Vec<(NaiveDate, f64)>> {
        let start = self.index_of(anchor)?;
        let sums = weekly_aggregate(&self.daily_new[start..])?;
        Ok(sums
            .into_iter()
            .enumerate()
            .map(|(w, v)| (self.dates[start + 7 * w], v))
            .collect())
    }

    /// Writes `date,daily_new,active,weekly_bucket`, with buckets counted in
    /// whole weeks from the first date.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["date", "daily_new", "active", "weekly_bucket"])?;
        for t in 0..self.len() {
            w.write_record([
                self.dates[t].to_string(),
                self.daily_new[t].to_string(),
                self.active[t].to_string(),
                (t / 7).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads cumulative counts for `region` from a wide or long CSV.
pub fn ingest_csv(path: &Path, region: &str, opts: &IngestOptions) -> Result<CaseSeries> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let header = rdr.headers()?.clone();
    let lower: Vec<String> = header
        .iter()
        .map(|h| h.trim().to_ascii_lowercase())
        .collect();
    let col = |name: &str| lower.iter().position(|h| h == name);
    let (dates, cumulative) = match (col("date"), col("region"), col("count")) {
        (Some(d), Some(r), Some(c)) => read_long(&mut rdr, region, d, r, c)?,
        _ => read_wide(&mut rdr, &header, region)?,
    };
    CaseSeries::from_cumulative(region, dates, cumulative, opts)
}

fn parse_count(s: &str) -> Result<f64> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(0.0);
    }
    s.parse::<f64>()
        .map_err(|_| Error::data(format!("cannot parse count {s:?}")))
}

fn read_wide(
    rdr: &mut csv::Reader<std::fs::File>,
    header: &csv::StringRecord,
    region: &str,
) -> Result<(Vec<NaiveDate>, Vec<f64>)> {
    let date_cols: Vec<(usize, NaiveDate)> = header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| parse_date(h).map(|d| (i, d)))
        .collect();
    if date_cols.is_empty() {
        return Err(Error::data(
            "header has no date columns and no date,region,count columns",
        ));
    }
    let label_cols: Vec<usize> = (0..header.len())
        .filter(|i| !date_cols.iter().any(|(j, _)| j == i))
        .collect();
    let mut totals = vec![0.0; date_cols.len()];
    let mut matched = false;
    for rec in rdr.records() {
        let rec = rec?;
        if !label_cols
            .iter()
            .any(|&i| rec.get(i).map(str::trim) == Some(region))
        {
            continue;
        }
        matched = true;
        for (slot, (i, _)) in totals.iter_mut().zip(&date_cols) {
            *slot += parse_count(rec.get(*i).unwrap_or(""))?;
        }
    }
    if !matched {
        return Err(Error::data(format!("region {region:?} not found")));
    }
    Ok((date_cols.into_iter().map(|(_, d)| d).collect(), totals))
}

fn read_long(
    rdr: &mut csv::Reader<std::fs::File>,
    region: &str,
    date_col: usize,
    region_col: usize,
    count_col: usize,
) -> Result<(Vec<NaiveDate>, Vec<f64>)> {
    let mut by_date = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.get(region_col).map(str::trim) != Some(region) {
            continue;
        }
        let raw = rec.get(date_col).unwrap_or("");
        let date =
            parse_date(raw).ok_or_else(|| Error::data(format!("cannot parse date {raw:?}")))?;
        let count = parse_count(rec.get(count_col).unwrap_or(""))?;
        if by_date.insert(date, count).is_some() {
            return Err(Error::data(format!("duplicate date {date} for {region:?}")));
        }
    }
    if by_date.is_empty() {
        return Err(Error::data(format!("region {region:?} not found")));
    }
    Ok(by_date.into_iter().unzip())
}

/// Calibration and projection slices of a daily series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Windows {
    pub cal_start: NaiveDate,
    pub calibration: Vec<f64>,
    pub projection: Vec<f64>,
}

/// Inclusive window lengths in days for `[cal_start, cal_end]` and
/// `(cal_end, proj_end]`.
pub fn window_lengths(
    cal_start: NaiveDate,
    cal_end: NaiveDate,
    proj_end: NaiveDate,
) -> Result<(usize, usize)> {
    if cal_end < cal_start {
        return Err(Error::config(format!(
            "calibration ends ({cal_end}) before it starts ({cal_start})"
        )));
    }
    if proj_end <= cal_end {
        return Err(Error::config(format!(
            "projection end {proj_end} must come after calibration end {cal_end}"
        )));
    }
    Ok((
        (cal_end - cal_start).num_days() as usize + 1,
        (proj_end - cal_end).num_days() as usize,
    ))
}

/// Slices `daily_new` into the calibration and projection windows.
pub fn window(
    series: &CaseSeries,
    cal_start: NaiveDate,
    cal_end: NaiveDate,
    proj_end: NaiveDate,
) -> Result<Windows> {
    let (cal_len, proj_len) = window_lengths(cal_start, cal_end, proj_end)?;
    let a = series.index_of(cal_start)?;
    series.index_of(proj_end)?;
    Ok(Windows {
        cal_start,
        calibration: series.daily_new[a..a + cal_len].to_vec(),
        projection: series.daily_new[a + cal_len..a + cal_len + proj_len].to_vec(),
    })
}

/// Non-overlapping 7-day sums from the start of `daily`; a trailing partial
/// week is dropped.
pub fn weekly_aggregate(daily: &[f64]) -> Result<Vec<f64>> {
    if daily.is_empty() {
        return Err(Error::data("cannot aggregate an empty series"));
    }
    let rem = daily.len() % 7;
    if rem != 0 {
        log::warn!("dropping a trailing partial week of {rem} days");
    }
    Ok(daily.chunks_exact(7).map(|w| w.iter().sum()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write as _;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
        (0..n)
            .map(|k| start + chrono::Days::new(k as u64))
            .collect()
    }

    #[test]
    fn differencing_and_clamping() {
        let opts = IngestOptions::default();
        let s = CaseSeries::from_cumulative(
            "X",
            days(d(2020, 4, 1), 3),
            vec![100.0, 150.0, 150.0],
            &opts,
        )
        .unwrap();
        assert_eq!(&s.daily_new[1..], &[50.0, 0.0]);

        let s = CaseSeries::from_cumulative("X", days(d(2020, 4, 1), 2), vec![100.0, 90.0], &opts)
            .unwrap();
        assert_eq!(s.daily_new[1], 0.0);
        assert_eq!(s.clamped_days, 1);

        let strict = IngestOptions {
            max_dip_fraction: 0.05,
            ..opts
        };
        assert!(CaseSeries::from_cumulative(
            "X",
            days(d(2020, 4, 1), 2),
            vec![100.0, 90.0],
            &strict
        )
        .is_err());
    }

    #[test]
    fn gaps_are_rejected() {
        let dates = vec![d(2020, 4, 1), d(2020, 4, 3)];
        assert!(
            CaseSeries::from_cumulative("X", dates, vec![1.0, 2.0], &IngestOptions::default())
                .is_err()
        );
    }

    #[test]
    fn constant_incidence_settles_at_seventy_active() {
        let active = active_cases(&[10.0; 14]);
        assert_eq!(&active[..7], &[10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0]);
        assert!(active[6..].iter().all(|&a| a == 70.0));
    }

    #[test]
    fn smoothing_is_trailing_mean() {
        assert_eq!(
            moving_average(&[3.0, 6.0, 9.0, 0.0], 2),
            vec![3.0, 4.5, 7.5, 4.5]
        );
    }

    #[test]
    fn paper_windows_are_140_and_21_days() {
        let (c, p) = window_lengths(d(2020, 4, 6), d(2020, 8, 23), d(2020, 9, 13)).unwrap();
        assert_eq!((c, p), (140, 21));
        assert!(window_lengths(d(2020, 4, 6), d(2020, 8, 23), d(2020, 8, 20)).is_err());
        let (c, _) = window_lengths(d(2020, 4, 6), d(2020, 4, 6), d(2020, 4, 7)).unwrap();
        assert_eq!(c, 1);
    }

    #[test]
    fn window_slices_and_range_errors() {
        let cum: Vec<f64> = (0..20).map(|k| (k * k) as f64).collect();
        let s = CaseSeries::from_cumulative(
            "X",
            days(d(2020, 1, 1), 20),
            cum,
            &IngestOptions::default(),
        )
        .unwrap();
        let w = window(&s, d(2020, 1, 3), d(2020, 1, 5), d(2020, 1, 7)).unwrap();
        assert_eq!(w.calibration, vec![3.0, 5.0, 7.0]);
        assert_eq!(w.projection, vec![9.0, 11.0]);
        assert!(window(&s, d(2019, 12, 31), d(2020, 1, 5), d(2020, 1, 7)).is_err());
        assert!(window(&s, d(2020, 1, 3), d(2020, 1, 5), d(2020, 1, 25)).is_err());
    }

    #[test]
    fn weekly_sums() {
        assert_eq!(weekly_aggregate(&[1.0; 14]).unwrap(), vec![7.0, 7.0]);
        assert_eq!(weekly_aggregate(&[1.0; 21]).unwrap().len(), 3);
        assert_eq!(weekly_aggregate(&[2.0; 10]).unwrap(), vec![14.0]);
        assert!(weekly_aggregate(&[]).is_err());
    }

    #[test]
    fn wide_and_long_ingestion() {
        let dir = tempfile::tempdir().unwrap();
        let wide = dir.path().join("wide.csv");
        let mut f = std::fs::File::create(&wide).unwrap();
        writeln!(
            f,
            "Province/State,Country/Region,Lat,Long,1/22/20,1/23/20,1/24/20"
        )
        .unwrap();
        writeln!(f, "A,Utopia,0,0,1,3,6").unwrap();
        writeln!(f, "B,Utopia,0,0,10,10,12").unwrap();
        writeln!(f, ",Elsewhere,0,0,5,5,5").unwrap();
        drop(f);
        let s = ingest_csv(&wide, "Utopia", &IngestOptions::default()).unwrap();
        assert_eq!(s.cumulative, vec![11.0, 13.0, 18.0]);
        assert_eq!(s.daily_new, vec![0.0, 2.0, 5.0]);
        assert_eq!(s.dates[0], d(2020, 1, 22));
        assert!(ingest_csv(&wide, "Atlantis", &IngestOptions::default()).is_err());
        assert_eq!(
            s,
            ingest_csv(&wide, "Utopia", &IngestOptions::default()).unwrap()
        );

        let long = dir.path().join("long.csv");
        std::fs::write(&long, "region,date,count\nUtopia,2020-01-23,13\nUtopia,2020-01-22,11\nOther,2020-01-22,4\nUtopia,2020-01-24,18\n").unwrap();
        let l = ingest_csv(&long, "Utopia", &IngestOptions::default()).unwrap();
        assert_eq!(l.daily_new, s.daily_new);

        let gap = dir.path().join("gap.csv");
        std::fs::write(&gap, "date,region,count\n2020-01-22,U,1\n2020-01-24,U,2\n").unwrap();
        assert!(matches!(
            ingest_csv(&gap, "U", &IngestOptions::default()),
            Err(Error::Data(_))
        ));
    }

    proptest! {
        #[test]
        fn weekly_preserves_sum_over_whole_weeks(v in proptest::collection::vec(0u32..10_000, 1..100)) {
            let daily: Vec<f64> = v.iter().map(|&x| x as f64).collect();
            let weeks = weekly_aggregate(&daily).unwrap();
            let whole = daily.len() / 7 * 7;
            prop_assert_eq!(weeks.iter().sum::<f64>(), daily[..whole].iter().sum::<f64>());
        }

        #[test]
        fn active_matches_naive_window(v in proptest::collection::vec(0u32..10_000, 1..60)) {
            let daily: Vec<f64> = v.iter().map(|&x| x as f64).collect();
            let active = active_cases(&daily);
            for (t, &a) in active.iter().enumerate() {
                let naive: u64 = v[t.saturating_sub(6)..=t].iter().map(|&x| x as u64).sum();
                prop_assert_eq!(a, naive as f64);
            }
        }
    }
}
