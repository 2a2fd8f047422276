//! Posterior post-processing: hidden-state trajectories, death
//! decomposition, fatality-rate window summaries and forecast
//! scoring.

use chrono::NaiveDate;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::ObservationSeries;
use crate::error::{Error, Result};
use crate::kalman::{run_filter, NoiseConfig};
use crate::params::{derive_fractions, state, DynamicSchedule};
use crate::priors::{PriorSet, STATIC_NAMES};
use crate::sampler::PosteriorChain;
use crate::scalar::{sqrt, Scalar};

/// Pointwise summary of a scalar series across posterior samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SeriesStats<T: Scalar> {
    pub mean: Vec<T>,
    pub lo68: Vec<T>,
    pub hi68: Vec<T>,
    pub lo95: Vec<T>,
    pub hi95: Vec<T>,
}

fn summarize_rows<T: Scalar>(rows: &[Vec<T>]) -> SeriesStats<T> {
    let days = rows.first().map(|r| r.len()).unwrap_or(0);
    let n = rows.len();
    let mut stats = SeriesStats {
        mean: Vec::with_capacity(days),
        lo68: Vec::with_capacity(days),
        hi68: Vec::with_capacity(days),
        lo95: Vec::with_capacity(days),
        hi95: Vec::with_capacity(days),
    };
    for t in 0..days {
        let mut col: Vec<T> = rows.iter().map(|r| r[t]).collect();
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pick = |q: f64| col[((n - 1) as f64 * q).round() as usize];
        let mean = col.iter().copied().fold(T::zero(), |a, b| a + b) / T::c(n as f64);
        stats.mean.push(mean);
        stats.lo68.push(pick(0.16));
        stats.hi68.push(pick(0.84));
        stats.lo95.push(pick(0.025));
        stats.hi95.push(pick(0.975));
    }
    stats
}

/// Filtered posterior summaries of the latent epidemic.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct HiddenStateTrajectory<T: Scalar> {
    pub dates: Vec<NaiveDate>,
    /// One summary per model state, in state order.
    pub states: Vec<SeriesStats<T>>,
    /// Share of the population that has recovered.
    pub recovered_fraction: SeriesStats<T>,
    /// Daily inflow of new symptomatic cases.
    pub symptomatic_incidence: SeriesStats<T>,
}

/// Number of transmission windows encoded in a packed sample.
fn windows_of(sample: &DVector<impl Scalar>) -> Result<usize> {
    let n_static = STATIC_NAMES.len();
    if sample.len() < n_static + 2 || (sample.len() - n_static) % 2 != 0 {
        return Err(Error::DimensionMismatch(format!(
            "packed sample of length {} does not fit the layout",
            sample.len()
        )));
    }
    Ok((sample.len() - n_static) / 2)
}

/// Replay the filter for one packed sample; also returns the
/// schedule so callers can map days to windows.
fn replay<T: Scalar>(
    sample: &DVector<T>,
    priors: &PriorSet<T>,
    series: &ObservationSeries<T>,
    window_days: usize,
    noise: &NoiseConfig<T>,
) -> Result<(
    crate::params::ParameterVector<T>,
    DynamicSchedule<T>,
    Vec<crate::kalman::FilterState<T>>,
)> {
    let n_windows = windows_of(sample)?;
    let (p, r_t, ifr) = priors.unpack(sample, n_windows);
    let sched = DynamicSchedule::new(series.dates[0], series.len(), window_days, r_t, ifr)?;
    if sched.n_windows() != n_windows {
        return Err(Error::DimensionMismatch(format!(
            "sample encodes {n_windows} windows but the series needs {}",
            sched.n_windows()
        )));
    }
    let (states, _) = run_filter(&p, &sched, series, noise)?;
    Ok((p, sched, states))
}

/// Filtered hidden states across posterior samples.
///
/// Per sample the filter is replayed and the state means recorded;
/// symptomatic incidence is the daily inflow into the symptomatic
/// compartment, and the recovered fraction may be re-anchored by an
/// additive offset so that it passes through a known value on an
/// anchor date.
pub fn hidden_states<T: Scalar>(
    samples: &[DVector<T>],
    priors: &PriorSet<T>,
    series: &ObservationSeries<T>,
    window_days: usize,
    noise: &NoiseConfig<T>,
    recovered_anchor: Option<(NaiveDate, T)>,
) -> Result<HiddenStateTrajectory<T>> {
    if samples.is_empty() {
        return Err(Error::EmptyChain);
    }
    let anchor_idx = match recovered_anchor {
        Some((date, _)) => Some(
            series
                .dates
                .iter()
                .position(|&d| d == date)
                .ok_or_else(|| Error::Data(format!("anchor date {date} outside the series")))?,
        ),
        None => None,
    };
    let pop = T::c(series.population as f64);

    let days = series.len();
    let mut per_state: Vec<Vec<Vec<T>>> = vec![Vec::new(); state::DIM];
    let mut recovered: Vec<Vec<T>> = Vec::new();
    let mut incidence: Vec<Vec<T>> = Vec::new();
    for sample in samples {
        let (p, sched, states) = replay(sample, priors, series, window_days, noise)?;
        for i in 0..state::DIM {
            per_state[i].push(states.iter().map(|fs| fs.mean[i]).collect());
        }
        let mut rec: Vec<T> = states.iter().map(|fs| fs.mean[state::R] / pop).collect();
        if let (Some(idx), Some((_, frac))) = (anchor_idx, recovered_anchor) {
            let offset = frac - rec[idx];
            for v in rec.iter_mut() {
                *v += offset;
            }
        }
        recovered.push(rec);
        let inc: Vec<T> = (0..days)
            .map(|t| {
                let f = derive_fractions(&p, sched.ifr[sched.window_of_day(t)])?;
                Ok(p.sigma * f.f0 * states[t].mean[state::E])
            })
            .collect::<Result<_>>()?;
        incidence.push(inc);
    }

    Ok(HiddenStateTrajectory {
        dates: series.dates.clone(),
        states: per_state.iter().map(|rows| summarize_rows(rows)).collect(),
        recovered_fraction: summarize_rows(&recovered),
        symptomatic_incidence: summarize_rows(&incidence),
    })
}

/// Scalar posterior summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ScalarStats<T: Scalar> {
    pub mean: T,
    pub cri68: (T, T),
    pub cri95: (T, T),
}

fn summarize_scalar<T: Scalar>(values: &[T]) -> ScalarStats<T> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    let pick = |q: f64| v[((n - 1) as f64 * q).round() as usize];
    ScalarStats {
        mean: v.iter().copied().fold(T::zero(), |a, b| a + b) / T::c(n as f64),
        cri68: (pick(0.16), pick(0.84)),
        cri95: (pick(0.025), pick(0.975)),
    }
}

/// Cumulative deaths attributed to each source compartment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DeathDecomposition<T: Scalar> {
    pub from_symptomatic: ScalarStats<T>,
    pub from_hospital: ScalarStats<T>,
    pub from_intensive_care: ScalarStats<T>,
    /// Filtered cumulative-death increase over the period.
    pub filtered_total: ScalarStats<T>,
}

/// Accumulate the daily death inflows along the filtered trajectory:
/// the three channels together track the filtered cumulative deaths.
pub fn death_decomposition<T: Scalar>(
    samples: &[DVector<T>],
    priors: &PriorSet<T>,
    series: &ObservationSeries<T>,
    window_days: usize,
    noise: &NoiseConfig<T>,
) -> Result<DeathDecomposition<T>> {
    if samples.is_empty() {
        return Err(Error::EmptyChain);
    }
    let mut d_i = Vec::with_capacity(samples.len());
    let mut d_h = Vec::with_capacity(samples.len());
    let mut d_w = Vec::with_capacity(samples.len());
    let mut total = Vec::with_capacity(samples.len());
    for sample in samples {
        let (p, sched, states) = replay(sample, priors, series, window_days, noise)?;
        let mut acc = [T::zero(); 3];
        for t in 0..states.len().saturating_sub(1) {
            let f = derive_fractions(&p, sched.ifr[sched.window_of_day(t)])?;
            let m = &states[t].mean;
            acc[0] += p.gamma_i * f.f2d * m[state::I];
            acc[1] += p.gamma_h * f.f3d * m[state::H];
            acc[2] += p.gamma_w * f.f4 * m[state::W];
        }
        d_i.push(acc[0]);
        d_h.push(acc[1]);
        d_w.push(acc[2]);
        total.push(
            states.last().unwrap().mean[state::D] - states.first().unwrap().mean[state::D],
        );
    }
    Ok(DeathDecomposition {
        from_symptomatic: summarize_scalar(&d_i),
        from_hospital: summarize_scalar(&d_h),
        from_intensive_care: summarize_scalar(&d_w),
        filtered_total: summarize_scalar(&total),
    })
}

/// Bi-monthly infection-fatality summary with optional robustness
/// flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct IfrWindowSummary<T: Scalar> {
    /// Index of the first pooled window.
    pub window: usize,
    pub mean: T,
    pub cri68: (T, T),
    pub robust: Option<bool>,
    pub overlap: Option<bool>,
}

/// Pool adjacent fatality-rate windows into bi-monthly estimates;
/// when bootstrap chains are supplied, each estimate carries the
/// point-robustness and interval-overlap flags.
pub fn ifr_window_summary<T: Scalar>(
    samples: &[DVector<T>],
    boot_chains: Option<&[PosteriorChain<T>]>,
    boot_burn_in: usize,
    overlap_alpha: T,
) -> Result<Vec<IfrWindowSummary<T>>> {
    if samples.is_empty() {
        return Err(Error::EmptyChain);
    }
    let n_windows = windows_of(&samples[0])?;
    let n_static = STATIC_NAMES.len();
    let ifr_of = |s: &DVector<T>, w: usize| s[n_static + 2 * w + 1];
    let pooled_value = |s: &DVector<T>, pair_start: usize| {
        if pair_start + 1 < n_windows {
            (ifr_of(s, pair_start) + ifr_of(s, pair_start + 1)) / T::c(2.0)
        } else {
            ifr_of(s, pair_start)
        }
    };

    let mut out = Vec::new();
    let mut pair_start = 0usize;
    while pair_start < n_windows {
        let values: Vec<T> = samples.iter().map(|s| pooled_value(s, pair_start)).collect();
        let stats = summarize_scalar(&values);
        let (mut robust, mut overlap) = (None, None);
        if let Some(chains) = boot_chains {
            let mut boot_biases = Vec::with_capacity(chains.len());
            let mut pooled_boot: Vec<T> = Vec::new();
            for chain in chains {
                let boots: Vec<T> = chain
                    .samples_after(boot_burn_in)
                    .iter()
                    .map(|s| pooled_value(s, pair_start))
                    .collect();
                if boots.is_empty() {
                    return Err(Error::EmptyChain);
                }
                let m =
                    boots.iter().copied().fold(T::zero(), |a, b| a + b) / T::c(boots.len() as f64);
                boot_biases.push(m - stats.mean);
                pooled_boot.extend(boots);
            }
            let n = T::c(boot_biases.len() as f64);
            let rms_bias = sqrt(
                boot_biases
                    .iter()
                    .map(|b| *b * *b)
                    .fold(T::zero(), |a, b| a + b)
                    / n,
            );
            let boot_stats = summarize_scalar(&pooled_boot);
            robust = Some(crate::bootstrap::point_robustness(rms_bias, stats.cri68)?);
            overlap = Some(crate::bootstrap::interval_overlap_check(
                stats.cri68,
                boot_stats.cri68,
                overlap_alpha,
            )?);
        }
        out.push(IfrWindowSummary {
            window: pair_start,
            mean: stats.mean,
            cri68: stats.cri68,
            robust,
            overlap,
        });
        pair_start += 2;
    }
    Ok(out)
}

// -------------------------------------------------------------------
// Forecast scoring

/// A forecast of the three observables over a span of days, either as
/// interval summaries, an ensemble, or both.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Forecast<T: Scalar> {
    pub dates: Vec<NaiveDate>,
    /// Per-day mean of `[hospital, intensive care, cumulative dead]`.
    pub mean: Vec<[T; 3]>,
    pub lo68: Vec<[T; 3]>,
    pub hi68: Vec<[T; 3]>,
    pub lo95: Vec<[T; 3]>,
    pub hi95: Vec<[T; 3]>,
    /// Optional ensemble members per day.
    pub ensemble: Option<Vec<Vec<[T; 3]>>>,
}

/// Forecast quality over the overlap with the actuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ForecastScore<T: Scalar> {
    /// Share of observed values inside the stated intervals.
    pub coverage68: T,
    pub coverage95: T,
    /// Root mean square error over the forecast mean, normalized by
    /// the mean actual, per observable.
    pub nrmse: [T; 3],
    /// Mean multivariate energy score over days, when an ensemble is
    /// available.
    pub energy: Option<T>,
    pub n_days: usize,
}

fn norm3<T: Scalar>(a: &[T; 3], b: &[T; 3]) -> T {
    let mut s = T::zero();
    for i in 0..3 {
        let d = a[i] - b[i];
        s += d * d;
    }
    sqrt(s)
}

/// Energy score of one day's ensemble against the observed vector:
/// `mean ||X - y|| - 1/2 mean ||X - X'||` over all member pairs.
pub fn energy_score<T: Scalar>(members: &[[T; 3]], actual: &[T; 3]) -> T {
    let n = members.len();
    let nf = T::c(n as f64);
    let att = members
        .iter()
        .map(|m| norm3(m, actual))
        .fold(T::zero(), |a, b| a + b)
        / nf;
    let mut spread = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            spread += norm3(&members[i], &members[j]);
        }
    }
    att - spread * T::c(2.0) / (nf * nf) * T::c(0.5)
}

/// Score a forecast against observed data on the overlapping dates.
pub fn forecast_scores<T: Scalar>(
    forecast: &Forecast<T>,
    actuals: &ObservationSeries<T>,
) -> Result<ForecastScore<T>> {
    let mut n_days = 0usize;
    let mut in68 = 0usize;
    let mut in95 = 0usize;
    let mut checked = 0usize;
    let mut sq = [T::zero(); 3];
    let mut actual_sum = [T::zero(); 3];
    let mut energies: Vec<T> = Vec::new();

    for (fi, date) in forecast.dates.iter().enumerate() {
        let Some(ai) = actuals.dates.iter().position(|d| d == date) else {
            continue;
        };
        let y = [actuals.h[ai], actuals.w[ai], actuals.d[ai]];
        if y.iter().any(|v| v.is_none()) {
            continue;
        }
        let y = [y[0].unwrap(), y[1].unwrap(), y[2].unwrap()];
        n_days += 1;
        for k in 0..3 {
            checked += 1;
            if y[k] >= forecast.lo68[fi][k] && y[k] <= forecast.hi68[fi][k] {
                in68 += 1;
            }
            if y[k] >= forecast.lo95[fi][k] && y[k] <= forecast.hi95[fi][k] {
                in95 += 1;
            }
            let e = forecast.mean[fi][k] - y[k];
            sq[k] += e * e;
            actual_sum[k] += y[k];
        }
        if let Some(ens) = &forecast.ensemble {
            if !ens[fi].is_empty() {
                energies.push(energy_score(&ens[fi], &y));
            }
        }
    }
    if n_days == 0 {
        return Err(Error::Misaligned(
            "forecast and actuals share no complete dates".into(),
        ));
    }
    let nf = T::c(n_days as f64);
    let mut nrmse = [T::zero(); 3];
    for k in 0..3 {
        let mean_actual = actual_sum[k] / nf;
        if mean_actual == T::zero() {
            return Err(Error::Numerical(format!(
                "observable {k} has zero mean over the forecast span"
            )));
        }
        nrmse[k] = sqrt(sq[k] / nf) / mean_actual;
    }
    let cf = T::c(checked as f64);
    Ok(ForecastScore {
        coverage68: T::c(in68 as f64) / cf,
        coverage95: T::c(in95 as f64) / cf,
        nrmse,
        energy: (!energies.is_empty()).then(|| {
            energies.iter().copied().fold(T::zero(), |a, b| a + b)
                / T::c(energies.len() as f64)
        }),
        n_days,
    })
}

/// Write hidden-state summaries as tidy CSV:
/// `date, quantity, statistic, value`.
pub fn write_hidden_states_csv<T: Scalar>(
    path: &std::path::Path,
    traj: &HiddenStateTrajectory<T>,
) -> Result<()> {
    const STATE_NAMES: [&str; state::DIM] = [
        "symptomatic",
        "asymptomatic",
        "exposed",
        "infectious_pressure",
        "hospital",
        "intensive_care",
        "dead",
        "recovered",
    ];
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["date", "quantity", "statistic", "value"])?;
    let mut emit = |name: &str, stats: &SeriesStats<T>| -> Result<()> {
        for (t, date) in traj.dates.iter().enumerate() {
            for (stat, v) in [
                ("mean", stats.mean[t]),
                ("lo68", stats.lo68[t]),
                ("hi68", stats.hi68[t]),
                ("lo95", stats.lo95[t]),
                ("hi95", stats.hi95[t]),
            ] {
                w.write_record([
                    date.to_string(),
                    name.to_string(),
                    stat.to_string(),
                    v.to_f64_lossy().to_string(),
                ])?;
            }
        }
        Ok(())
    };
    for (i, name) in STATE_NAMES.iter().enumerate() {
        emit(name, &traj.states[i])?;
    }
    emit("recovered_fraction", &traj.recovered_fraction)?;
    emit("symptomatic_incidence", &traj.symptomatic_incidence)?;
    w.flush()?;
    Ok(())
}
