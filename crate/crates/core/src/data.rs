//! Ingestion and repair of regional hospital-load time series.
//!
//! Raw regional reports carry three observables per day: patients
//! under hospital care `H`, patients in intensive care `W` (both
//! prevalence levels) and cumulative deaths `D`. Reporting artifacts —
//! negative corrections, gaps and weekday batching — are repaired
//! before the series reach the filter.

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{abs, maxv, sqrt, Scalar};

/// One region's observation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ObservationSeries<T: Scalar> {
    pub region_id: String,
    /// Region population; zero when unknown.
    pub population: u64,
    /// Consecutive calendar days.
    pub dates: Vec<NaiveDate>,
    /// Daily hospital-care prevalence.
    pub h: Vec<Option<T>>,
    /// Daily intensive-care prevalence.
    pub w: Vec<Option<T>>,
    /// Cumulative reported deaths.
    pub d: Vec<Option<T>>,
}

impl<T: Scalar> ObservationSeries<T> {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Daily increments of the cumulative death series. The first
    /// entry is the first cumulative value itself; entries adjacent to
    /// a gap are missing.
    pub fn d_incidence(&self) -> Vec<Option<T>> {
        let mut out = Vec::with_capacity(self.len());
        for t in 0..self.len() {
            out.push(match (self.d.get(t).copied().flatten(), t) {
                (Some(v), 0) => Some(v),
                (Some(v), t) => self.d[t - 1].map(|p| v - p),
                (None, _) => None,
            });
        }
        out
    }

    /// Replace the cumulative death series by re-accumulating an
    /// incidence vector, preserving missingness.
    fn set_d_from_incidence(&mut self, inc: &[Option<T>]) {
        let mut acc = T::zero();
        for t in 0..self.len() {
            match inc[t] {
                Some(v) => {
                    acc += v;
                    self.d[t] = Some(acc);
                }
                None => self.d[t] = None,
            }
        }
    }

    fn check_aligned(&self, other: &Self) -> Result<()> {
        if self.dates != other.dates {
            return Err(Error::Misaligned(format!(
                "series {} and {} cover different dates",
                self.region_id, other.region_id
            )));
        }
        Ok(())
    }
}

/// Accounting of every repair performed on one region's series.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub region_id: String,
    /// Negative increments or levels reset to zero.
    pub repaired_negatives: usize,
    /// Interior missing values filled by linear interpolation.
    pub interpolated_gaps: usize,
    /// Values left as explicit missing markers.
    pub marked_missing: usize,
    /// Deficit mass that could not be absorbed by the preceding window.
    pub unabsorbed_deficit: f64,
    /// Mean maximum relative smoothing distortion; set after smoothing.
    pub d_smooth: Option<f64>,
}

// -------------------------------------------------------------------
// CSV ingestion

/// Parse a regional CSV with columns
/// `date, region, hospital, icu, dead_cumulative` and an optional
/// `population` column.
///
/// Returns one series per region (in order of first appearance) plus
/// warnings for sporadic bad rows. A date that goes backwards within a
/// region is a hard error naming the offending line; day gaps are
/// filled with missing markers and warned about.
pub fn parse_regional_csv<T: Scalar>(
    path: &Path,
) -> Result<(Vec<ObservationSeries<T>>, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::CsvHeader(e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let required = ["date", "region", "hospital", "icu", "dead_cumulative"];
    let mut idx = [0usize; 5];
    for (i, name) in required.iter().enumerate() {
        idx[i] = col(name)
            .ok_or_else(|| Error::CsvHeader(format!("missing required column {name}")))?;
    }
    let pop_idx = col("population");

    let mut order: Vec<String> = Vec::new();
    let mut series: std::collections::HashMap<String, ObservationSeries<T>> =
        std::collections::HashMap::new();
    let mut warnings = Vec::new();

    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                warnings.push(format!("skipped unreadable row: {e}"));
                continue;
            }
        };
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("");

        let date = match NaiveDate::parse_from_str(field(idx[0]), "%Y-%m-%d") {
            Ok(d) => d,
            Err(e) => {
                warnings.push(format!("line {line}: bad date {:?}: {e}", field(idx[0])));
                continue;
            }
        };
        let region = field(idx[1]).to_string();
        if region.is_empty() {
            warnings.push(format!("line {line}: empty region"));
            continue;
        }

        let parse_opt = |i: usize| -> std::result::Result<Option<T>, String> {
            let raw = field(i);
            if raw.is_empty() || raw.eq_ignore_ascii_case("na") {
                return Ok(None);
            }
            raw.parse::<f64>()
                .map(|v| Some(T::c(v)))
                .map_err(|e| format!("line {line}: bad number {raw:?}: {e}"))
        };
        let (h, w, d) = match (parse_opt(idx[2]), parse_opt(idx[3]), parse_opt(idx[4])) {
            (Ok(h), Ok(w), Ok(d)) => (h, w, d),
            (r1, r2, r3) => {
                for r in [r1, r2, r3] {
                    if let Err(e) = r {
                        warnings.push(e);
                    }
                }
                continue;
            }
        };
        let population = pop_idx
            .and_then(|i| field(i).parse::<u64>().ok())
            .unwrap_or(0);

        let s = series.entry(region.clone()).or_insert_with(|| {
            order.push(region.clone());
            ObservationSeries {
                region_id: region.clone(),
                population,
                dates: Vec::new(),
                h: Vec::new(),
                w: Vec::new(),
                d: Vec::new(),
            }
        });
        if population > 0 {
            s.population = population;
        }
        if let Some(&last) = s.dates.last() {
            if date <= last {
                return Err(Error::CsvRow {
                    line,
                    msg: format!("date {date} does not advance past {last} in region {region}"),
                });
            }
            let gap = (date - last).num_days() - 1;
            if gap > 0 {
                warnings.push(format!(
                    "region {region}: {gap} missing day(s) before {date} filled with markers"
                ));
                for k in 1..=gap {
                    s.dates.push(last + chrono::Duration::days(k));
                    s.h.push(None);
                    s.w.push(None);
                    s.d.push(None);
                }
            }
        }
        s.dates.push(date);
        s.h.push(h);
        s.w.push(w);
        s.d.push(d);
    }

    let out = order.into_iter().map(|r| series.remove(&r).unwrap()).collect();
    Ok((out, warnings))
}

/// Write series back to CSV with a provenance column describing the
/// processing stage (for example `raw`, `cleaned` or `smoothed`).
pub fn write_regional_csv<T: Scalar>(
    path: &Path,
    series: &[ObservationSeries<T>],
    provenance: &str,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer
        .write_record([
            "date",
            "region",
            "hospital",
            "icu",
            "dead_cumulative",
            "population",
            "provenance",
        ])
        .map_err(|e| Error::Data(e.to_string()))?;
    let fmt = |v: Option<T>| v.map(|x| x.to_f64_lossy().to_string()).unwrap_or_default();
    for s in series {
        for t in 0..s.len() {
            writer
                .write_record([
                    s.dates[t].to_string(),
                    s.region_id.clone(),
                    fmt(s.h[t]),
                    fmt(s.w[t]),
                    fmt(s.d[t]),
                    s.population.to_string(),
                    provenance.to_string(),
                ])
                .map_err(|e| Error::Data(e.to_string()))?;
        }
    }
    writer.flush()?;
    Ok(())
}

// -------------------------------------------------------------------
// Cleaning

/// Repair negative reports and interior gaps.
///
/// Negative daily increments of the cumulative death series are set to
/// zero and the deficit is subtracted from the preceding `kernel_width`
/// days with linearly decaying weights (nearest day heaviest, weight
/// proportional to `kernel_width - age`), flooring each day at zero.
/// Deficit that the window cannot absorb is reported, not
/// redistributed. Negative prevalence levels are clamped to zero.
/// Interior missing runs are linearly interpolated; leading and
/// trailing missing values stay marked.
pub fn clean_series<T: Scalar>(
    s: &ObservationSeries<T>,
    kernel_width: usize,
) -> (ObservationSeries<T>, CleaningReport) {
    let mut out = s.clone();
    let mut report = CleaningReport {
        region_id: s.region_id.clone(),
        ..CleaningReport::default()
    };

    for field in [&mut out.h, &mut out.w, &mut out.d] {
        interpolate_interior(field, &mut report);
    }

    // clamp negative prevalence levels
    for field in [&mut out.h, &mut out.w] {
        for v in field.iter_mut().flatten() {
            if *v < T::zero() {
                *v = T::zero();
                report.repaired_negatives += 1;
            }
        }
    }

    // repair negative death increments
    let mut inc = out.d_incidence();
    let mut unabsorbed = T::zero();
    for t in 0..inc.len() {
        let Some(v) = inc[t] else { continue };
        if v >= T::zero() {
            continue;
        }
        let mut deficit = -v;
        inc[t] = Some(T::zero());
        report.repaired_negatives += 1;

        // weights over available preceding days, nearest day age 0
        let window: Vec<usize> = (0..kernel_width)
            .filter_map(|age| t.checked_sub(age + 1))
            .take_while(|&j| inc[j].is_some())
            .collect();
        let norm: f64 = window
            .iter()
            .enumerate()
            .map(|(age, _)| (kernel_width - age) as f64)
            .sum();
        if norm > 0.0 {
            let total = deficit;
            for (age, &j) in window.iter().enumerate() {
                let share = total * T::c((kernel_width - age) as f64 / norm);
                let avail = inc[j].unwrap();
                let take = if share > avail { maxv(avail, T::zero()) } else { share };
                inc[j] = Some(avail - take);
                deficit -= take;
            }
        }
        unabsorbed += deficit;
    }
    report.unabsorbed_deficit = unabsorbed.to_f64_lossy();
    out.set_d_from_incidence(&inc);
    (out, report)
}

fn interpolate_interior<T: Scalar>(field: &mut [Option<T>], report: &mut CleaningReport) {
    let first = field.iter().position(Option::is_some);
    let last = field.iter().rposition(Option::is_some);
    let (Some(first), Some(last)) = (first, last) else {
        report.marked_missing += field.len();
        return;
    };
    report.marked_missing += first + (field.len() - 1 - last);
    let mut t = first;
    while t < last {
        if field[t + 1].is_some() {
            t += 1;
            continue;
        }
        let gap_end = (t + 1..=last).find(|&j| field[j].is_some()).unwrap();
        let a = field[t].unwrap();
        let b = field[gap_end].unwrap();
        let span = T::c((gap_end - t) as f64);
        for j in t + 1..gap_end {
            let frac = T::c((j - t) as f64) / span;
            field[j] = Some(a + (b - a) * frac);
            report.interpolated_gaps += 1;
        }
        t = gap_end;
    }
}

// -------------------------------------------------------------------
// Weekday-dampening smoother

/// Descending outlier thresholds used by default.
pub fn default_thresholds() -> Vec<f64> {
    (2..=10).rev().map(|k| k as f64).collect()
}

/// Remove batch-reporting spikes from the death increments.
///
/// For each threshold `k` in descending order, a day whose increment
/// exceeds `m + k sqrt(m)` — with `m` the trailing 28-day mean
/// increment — is cut back to that bound and the excess is spread over
/// the preceding seven days, proportionally to each day's deficit
/// below the local weekly mean, any remainder uniformly. Total mass is
/// preserved exactly; prevalence series pass through unchanged.
pub fn smooth_series<T: Scalar>(
    s: &ObservationSeries<T>,
    thresholds: &[f64],
) -> (ObservationSeries<T>, Vec<String>) {
    let mut warnings = Vec::new();
    if s.len() < 7 {
        warnings.push(format!(
            "region {}: series shorter than a week, smoothing skipped",
            s.region_id
        ));
        return (s.clone(), warnings);
    }
    for pair in thresholds.windows(2) {
        if pair[1] >= pair[0] {
            warnings.push("thresholds not strictly descending; using given order".into());
            break;
        }
    }

    let mut out = s.clone();
    let mut inc = out.d_incidence();
    for &k in thresholds {
        let k = T::c(k);
        // skip the first week: no redistribution window exists yet
        for t in 7..inc.len() {
            let Some(v) = inc[t] else { continue };
            let m = trailing_mean(&inc, t, 28);
            let Some(m) = m else { continue };
            let bound = m + k * sqrt(m);
            if v <= bound {
                continue;
            }
            let excess = v - bound;
            inc[t] = Some(bound);
            redistribute(&mut inc, t, excess);
        }
    }
    out.set_d_from_incidence(&inc);
    (out, warnings)
}

/// Mean of the up-to-`width` present increments strictly before `t`.
fn trailing_mean<T: Scalar>(inc: &[Option<T>], t: usize, width: usize) -> Option<T> {
    let lo = t.saturating_sub(width);
    let mut acc = T::zero();
    let mut n = 0usize;
    for v in inc[lo..t].iter().flatten() {
        acc += *v;
        n += 1;
    }
    (n > 0).then(|| acc / T::c(n as f64))
}

/// Spread `excess` over the seven days before `t`, proportionally to
/// each day's deficit below the weekly mean, capped at the deficit; the
/// remainder goes out uniformly so the total is conserved exactly.
fn redistribute<T: Scalar>(inc: &mut [Option<T>], t: usize, excess: T) {
    let window: Vec<usize> = (t - 7..t).filter(|&j| inc[j].is_some()).collect();
    if window.is_empty() {
        // nowhere to put it; keep mass on the flagged day
        inc[t] = Some(inc[t].unwrap() + excess);
        return;
    }
    let n = T::c(window.len() as f64);
    let mut mean = T::zero();
    for &j in &window {
        mean += inc[j].unwrap();
    }
    mean /= n;

    let deficits: Vec<T> = window
        .iter()
        .map(|&j| maxv(T::zero(), mean - inc[j].unwrap()))
        .collect();
    let total_deficit: T = deficits.iter().copied().fold(T::zero(), |a, b| a + b);

    let mut placed = T::zero();
    if total_deficit > T::zero() {
        for (&j, &d) in window.iter().zip(&deficits) {
            let share = excess * d / total_deficit;
            let add = if share > d { d } else { share };
            inc[j] = Some(inc[j].unwrap() + add);
            placed += add;
        }
    }
    // uniform remainder, with the last day absorbing rounding so the
    // window receives exactly the flagged excess
    let mut remainder = excess - placed;
    if remainder > T::zero() {
        let per = remainder / n;
        for (i, &j) in window.iter().enumerate() {
            let add = if i + 1 == window.len() { remainder } else { per };
            inc[j] = Some(inc[j].unwrap() + add);
            remainder -= add;
        }
    }
}

/// Mean maximum relative difference between a raw and a processed
/// series: `N_t^{-1} sum_t max_i |dX_i(t)| / max(1, |X_i(t)|)` over the
/// three observables, days where both values are present.
pub fn smoothing_distance<T: Scalar>(
    raw: &ObservationSeries<T>,
    smooth: &ObservationSeries<T>,
) -> Result<T> {
    raw.check_aligned(smooth)?;
    let one = T::one();
    let mut acc = T::zero();
    let n = raw.len();
    for t in 0..n {
        let mut worst = T::zero();
        for (a, b) in [
            (raw.h[t], smooth.h[t]),
            (raw.w[t], smooth.w[t]),
            (raw.d[t], smooth.d[t]),
        ] {
            if let (Some(a), Some(b)) = (a, b) {
                let rel = abs(b - a) / maxv(one, abs(a));
                worst = maxv(worst, rel);
            }
        }
        acc += worst;
    }
    if n == 0 {
        return Ok(T::zero());
    }
    Ok(acc / T::c(n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn day(o: i64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 4, 1).unwrap() + chrono::Duration::days(o)
    }

    fn series(d: &[f64]) -> ObservationSeries<f64> {
        let n = d.len();
        ObservationSeries {
            region_id: "test".into(),
            population: 1_000_000,
            dates: (0..n as i64).map(day).collect(),
            h: vec![Some(0.0); n],
            w: vec![Some(0.0); n],
            d: d.iter().map(|&v| Some(v)).collect(),
        }
    }

    #[test]
    fn parse_empty_file_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "date,region,hospital,icu,dead_cumulative\n").unwrap();
        let (out, warnings) = parse_regional_csv::<f64>(&path).unwrap();
        assert!(out.is_empty());
        assert!(warnings.is_empty());
    }

    #[test]
    fn parse_two_regions_three_days() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("two.csv");
        let mut body = String::from("date,region,hospital,icu,dead_cumulative\n");
        for t in 0..3 {
            body.push_str(&format!("2020-04-0{},north,{},1,{}\n", t + 1, 10 + t, t));
            body.push_str(&format!("2020-04-0{},south,{},0,{}\n", t + 1, 20 + t, 2 * t));
        }
        std::fs::write(&path, body).unwrap();
        let (out, warnings) = parse_regional_csv::<f64>(&path).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].region_id, "north");
        assert_eq!(out[1].region_id, "south");
        assert!(out.iter().all(|s| s.len() == 3));
        assert_eq!(out[1].h[2], Some(22.0));
    }

    #[test]
    fn parse_date_regression_is_hard_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "date,region,hospital,icu,dead_cumulative\n\
             2020-04-02,north,1,0,0\n\
             2020-04-01,north,1,0,0\n",
        )
        .unwrap();
        let err = parse_regional_csv::<f64>(&path).unwrap_err();
        match err {
            Error::CsvRow { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn parse_fills_day_gaps_with_markers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gap.csv");
        std::fs::write(
            &path,
            "date,region,hospital,icu,dead_cumulative\n\
             2020-04-01,north,1,0,0\n\
             2020-04-04,north,4,0,3\n",
        )
        .unwrap();
        let (out, warnings) = parse_regional_csv::<f64>(&path).unwrap();
        assert_eq!(out[0].len(), 4);
        assert_eq!(out[0].h[1], None);
        assert_eq!(out[0].h[3], Some(4.0));
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn clean_is_identity_on_clean_data() {
        let s = series(&[0.0, 1.0, 3.0, 6.0]);
        let (out, report) = clean_series(&s, 2);
        assert_eq!(out, s);
        assert_eq!(report.repaired_negatives, 0);
        assert_eq!(report.interpolated_gaps, 0);
        assert_eq!(report.unabsorbed_deficit, 0.0);
    }

    #[test]
    fn clean_negative_death_increment_hand_trace() {
        // increments [0, 5, -2]: the -2 becomes 0; 2/3 of the deficit
        // comes off the nearest day, the rest floors at the zero day
        let s = series(&[0.0, 5.0, 3.0]);
        let (out, report) = clean_series(&s, 2);
        let d: Vec<f64> = out.d.iter().map(|v| v.unwrap()).collect();
        assert_relative_eq!(d[0], 0.0);
        assert_relative_eq!(d[1], 5.0 - 4.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(d[2], d[1], epsilon = 1e-12);
        assert_eq!(report.repaired_negatives, 1);
        assert_relative_eq!(report.unabsorbed_deficit, 2.0 / 3.0, epsilon = 1e-12);
        // cumulative deaths are nondecreasing afterwards
        assert!(d.windows(2).all(|p| p[1] >= p[0]));
    }

    #[test]
    fn clean_all_missing_is_flagged_identity() {
        let mut s = series(&[0.0; 4]);
        s.h = vec![None; 4];
        s.w = vec![None; 4];
        s.d = vec![None; 4];
        let (out, report) = clean_series(&s, 7);
        assert_eq!(out, s);
        assert_eq!(report.marked_missing, 12);
    }

    #[test]
    fn clean_interpolates_interior_gap() {
        let mut s = series(&[0.0, 1.0, 2.0, 3.0]);
        s.h = vec![Some(10.0), None, None, Some(16.0)];
        let (out, report) = clean_series(&s, 7);
        assert_eq!(out.h, vec![Some(10.0), Some(12.0), Some(14.0), Some(16.0)]);
        assert_eq!(report.interpolated_gaps, 2);
    }

    #[test]
    fn smooth_constant_series_unchanged() {
        let d: Vec<f64> = (0..60).map(|t| 5.0 * (t + 1) as f64).collect();
        let s = series(&d);
        let (out, warnings) = smooth_series(&s, &default_thresholds());
        assert_eq!(out, s);
        assert!(warnings.is_empty());
    }

    #[test]
    fn smooth_single_spike_mass_conserved_and_bounded() {
        let mut inc: Vec<f64> = vec![5.0; 60];
        inc[40] = 100.0;
        let d: Vec<f64> = inc
            .iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect();
        let s = series(&d);
        let (out, _) = smooth_series(&s, &default_thresholds());
        let total_before = s.d.last().unwrap().unwrap();
        let total_after = out.d.last().unwrap().unwrap();
        assert_relative_eq!(total_before, total_after, epsilon = 1e-9);
        // flagged day now satisfies the tightest threshold against its
        // own trailing mean
        let new_inc = out.d_incidence();
        let m: f64 = new_inc[12..40].iter().map(|v| v.unwrap()).sum::<f64>() / 28.0;
        assert!(new_inc[40].unwrap() <= m + 2.0 * m.sqrt() + 1e-9);
    }

    #[test]
    fn smooth_reduces_weekday_variance() {
        // Monday batch reporting: six quiet days, one large dump
        let mut inc = Vec::new();
        for week in 0..10 {
            for wd in 0..7 {
                inc.push(if wd == 0 { 70.0 + week as f64 } else { 1.0 });
            }
        }
        let d: Vec<f64> = inc
            .iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect();
        let s = series(&d);
        let (out, _) = smooth_series(&s, &default_thresholds());
        let weekday_var = |inc: &[Option<f64>]| {
            let mut means = [0.0; 7];
            let mut counts = [0usize; 7];
            for (t, v) in inc.iter().enumerate() {
                means[t % 7] += v.unwrap();
                counts[t % 7] += 1;
            }
            for i in 0..7 {
                means[i] /= counts[i] as f64;
            }
            let grand = means.iter().sum::<f64>() / 7.0;
            means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / 7.0
        };
        let before = weekday_var(&s.d_incidence());
        let after = weekday_var(&out.d_incidence());
        assert!(after < before, "weekday variance {before} -> {after}");
        let total_before = s.d.last().unwrap().unwrap();
        let total_after = out.d.last().unwrap().unwrap();
        assert_relative_eq!(total_before, total_after, epsilon = 1e-9);
    }

    #[test]
    fn smooth_short_series_is_noop_with_warning() {
        let s = series(&[1.0, 2.0, 3.0]);
        let (out, warnings) = smooth_series(&s, &default_thresholds());
        assert_eq!(out, s);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn distance_identical_series_is_zero() {
        let s = series(&[0.0, 1.0, 2.0]);
        assert_eq!(smoothing_distance(&s, &s).unwrap(), 0.0);
    }

    #[test]
    fn distance_guard_denominator() {
        let mut a = series(&[0.0]);
        a.h = vec![Some(0.0)];
        let mut b = a.clone();
        b.h = vec![Some(2.0)];
        assert_relative_eq!(smoothing_distance(&a, &b).unwrap(), 2.0);
    }

    #[test]
    fn distance_matches_second_implementation_on_random_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.gen_range(5..40);
            let mut a = series(&vec![0.0; n]);
            let mut b = a.clone();
            for t in 0..n {
                a.h[t] = Some(rng.gen_range(0.0..50.0));
                a.w[t] = Some(rng.gen_range(0.0..20.0));
                a.d[t] = Some(rng.gen_range(0.0..200.0));
                b.h[t] = Some(rng.gen_range(0.0..50.0));
                b.w[t] = Some(rng.gen_range(0.0..20.0));
                b.d[t] = Some(rng.gen_range(0.0..200.0));
            }
            // independent literal transcription of the definition
            let mut expect = 0.0;
            for t in 0..n {
                let terms = [
                    (a.h[t].unwrap(), b.h[t].unwrap()),
                    (a.w[t].unwrap(), b.w[t].unwrap()),
                    (a.d[t].unwrap(), b.d[t].unwrap()),
                ];
                expect += terms
                    .iter()
                    .map(|&(x, y)| (y - x).abs() / f64::max(1.0, x.abs()))
                    .fold(0.0, f64::max);
            }
            expect /= n as f64;
            assert_relative_eq!(
                smoothing_distance(&a, &b).unwrap(),
                expect,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn distance_misaligned_dates_error() {
        let a = series(&[0.0, 1.0]);
        let mut b = a.clone();
        b.dates[1] = day(5);
        assert!(smoothing_distance(&a, &b).is_err());
    }

    #[test]
    fn csv_round_trip_with_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        let mut s = series(&[0.0, 2.0, 5.0]);
        s.h[1] = None;
        write_regional_csv(&path, &[s.clone()], "cleaned").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().next().unwrap().contains("provenance"));
        assert!(text.contains("cleaned"));
        let (back, _) = parse_regional_csv::<f64>(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].h, s.h);
        assert_eq!(back[0].d, s.d);
        assert_eq!(back[0].population, s.population);
    }
}
