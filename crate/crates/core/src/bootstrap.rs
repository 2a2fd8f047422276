//! Parametric bootstrap: stochastic synthetic data at known
//! parameters, bias estimation against a reference posterior, and
//! robustness checks on credible intervals.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::ObservationSeries;
use crate::error::{Error, Result};
use crate::kalman::{measurement_noise, NoiseConfig, ObservationModel};
use crate::optimizer::BetaTrajectory;
use crate::params::{derive_fractions, state, DynamicSchedule, ParameterVector};
use crate::priors::STATIC_NAMES;
use crate::sampler::PosteriorChain;
use crate::scalar::{abs, exp, sqrt, Scalar};

/// One stochastic realization of the epidemic at known parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SyntheticDataset<T: Scalar> {
    pub series: ObservationSeries<T>,
    /// Latent daily states, including the noiseless accumulators.
    pub states: Vec<Vec<T>>,
    /// New exposures drawn each day.
    pub exposures: Vec<u64>,
    /// Death totals by source compartment `[I, H, W]`.
    pub deaths_by_source: [u64; 3],
    pub params: ParameterVector<T>,
    pub beta: BetaTrajectory<T>,
    pub seed: u64,
}

/// Draw a multinomial split of `n` trials over `probs` (which may sum
/// to less than one; the remainder stays put) by chained binomials.
fn multinomial<R: Rng>(rng: &mut R, n: u64, probs: &[f64]) -> Vec<u64> {
    let mut out = Vec::with_capacity(probs.len());
    let mut remaining = n;
    let mut mass_left = 1.0f64;
    for &p in probs {
        if remaining == 0 || p <= 0.0 || mass_left <= 0.0 {
            out.push(0);
            mass_left -= p;
            continue;
        }
        let cond = (p / mass_left).clamp(0.0, 1.0);
        let draw = rand_distr::Binomial::new(remaining, cond)
            .map(|b| b.sample(rng))
            .unwrap_or(0);
        out.push(draw);
        remaining -= draw;
        mass_left -= p;
    }
    out
}

/// Exit channels of one person compartment: total daily exit
/// probability `1 - exp(-rate)` split over destinations by the
/// branching weights.
struct Channel {
    source: usize,
    exit_prob: f64,
    targets: Vec<(usize, f64)>,
}

/// Simulate the epidemic day by day: competing compartment exits are
/// multinomial, new exposures are Poisson in the infectious pressure,
/// and the pressure itself follows its exact exponential update.
/// Observations receive Gaussian noise, are rounded, clamped at zero,
/// and the cumulative deaths kept monotone.
pub fn simulate_synthetic<T: Scalar>(
    p: &ParameterVector<T>,
    daily_beta: &BetaTrajectory<T>,
    ifr_schedule: &DynamicSchedule<T>,
    days: usize,
    init: &[T; state::DIM],
    noise: &NoiseConfig<T>,
    seed: u64,
) -> Result<SyntheticDataset<T>> {
    if daily_beta.beta.len() < days {
        return Err(Error::DimensionMismatch(format!(
            "daily rates cover {} days but {} were requested",
            daily_beta.beta.len(),
            days
        )));
    }
    for (i, v) in init.iter().enumerate() {
        let vf = v.to_f64_lossy();
        if *v < T::zero() || (i != state::PHI && (vf - vf.round()).abs() > 1e-9) {
            return Err(Error::InvalidParameter(
                "initial state must be nonnegative integer counts".into(),
            ));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs = ObservationModel::default();
    let start = daily_beta.dates[0];

    // person-compartment counts plus the real-valued pressure
    let mut counts = [0u64; state::DIM];
    for i in 0..state::DIM {
        if i != state::PHI {
            counts[i] = init[i].to_f64_lossy().round() as u64;
        }
    }
    let mut phi = init[state::PHI].to_f64_lossy();

    let decay = exp(-p.rho()).to_f64_lossy();
    let shed = 1.0 - decay;
    let theta_a = p.theta_a.to_f64_lossy();
    let theta_e = p.theta_e.to_f64_lossy();

    let fractions_of_day = |k: usize| {
        let w = ifr_schedule.window_of_day(k);
        derive_fractions(p, ifr_schedule.ifr[w])
    };

    let mut states = Vec::with_capacity(days + 1);
    let mut exposures = Vec::with_capacity(days);
    let mut deaths_by_source = [0u64; 3];
    let record =
        |counts: &[u64; state::DIM], phi: f64, states: &mut Vec<Vec<T>>| {
            let mut row = vec![T::zero(); state::DIM];
            for i in 0..state::DIM {
                row[i] = if i == state::PHI {
                    T::c(phi)
                } else {
                    T::c(counts[i] as f64)
                };
            }
            states.push(row);
        };
    record(&counts, phi, &mut states);

    for k in 0..days {
        let f = fractions_of_day(k)?;
        let ep = |rate: T| 1.0 - (-rate.to_f64_lossy()).exp();
        let fr = |x: T| x.to_f64_lossy();
        let channels = [
            Channel {
                source: state::E,
                exit_prob: ep(p.sigma),
                targets: vec![(state::I, fr(f.f0)), (state::A, 1.0 - fr(f.f0))],
            },
            Channel {
                source: state::A,
                exit_prob: ep(p.gamma_a),
                targets: vec![(state::I, fr(f.f1)), (state::R, 1.0 - fr(f.f1))],
            },
            Channel {
                source: state::I,
                exit_prob: ep(p.gamma_i),
                targets: vec![
                    (state::H, fr(f.f2)),
                    (state::D, fr(f.f2d)),
                    (state::R, 1.0 - fr(f.f2) - fr(f.f2d)),
                ],
            },
            Channel {
                source: state::H,
                exit_prob: ep(p.gamma_h),
                targets: vec![
                    (state::W, fr(f.f3)),
                    (state::D, fr(f.f3d)),
                    (state::R, 1.0 - fr(f.f3) - fr(f.f3d)),
                ],
            },
            Channel {
                source: state::W,
                exit_prob: ep(p.gamma_w),
                targets: vec![(state::H, 1.0 - fr(f.f4)), (state::D, fr(f.f4))],
            },
        ];

        // all flows are computed from the start-of-day state and
        // applied simultaneously
        let mut next = counts;
        for ch in &channels {
            let n = counts[ch.source];
            if n == 0 {
                continue;
            }
            let probs: Vec<f64> = ch
                .targets
                .iter()
                .map(|&(_, w)| (ch.exit_prob * w).max(0.0))
                .collect();
            let moved = multinomial(&mut rng, n, &probs);
            for (&(dest, _), &m) in ch.targets.iter().zip(&moved) {
                next[ch.source] -= m;
                next[dest] += m;
                if dest == state::D {
                    match ch.source {
                        state::I => deaths_by_source[0] += m,
                        state::H => deaths_by_source[1] += m,
                        state::W => deaths_by_source[2] += m,
                        _ => {}
                    }
                }
            }
        }
        let lambda = daily_beta.beta[k].to_f64_lossy() * phi;
        let new_exposed = if lambda > 0.0 {
            Poisson::new(lambda)
                .map(|d| d.sample(&mut rng) as u64)
                .unwrap_or(0)
        } else {
            0
        };
        next[state::E] += new_exposed;
        exposures.push(new_exposed);

        phi = decay * phi
            + shed
                * (counts[state::I] as f64
                    + theta_a * counts[state::A] as f64
                    + theta_e * counts[state::E] as f64);
        counts = next;
        record(&counts, phi, &mut states);
    }

    // noisy observations of the latent trajectory
    let mut h = Vec::with_capacity(days + 1);
    let mut w = Vec::with_capacity(days + 1);
    let mut d = Vec::with_capacity(days + 1);
    let gauss = |rng: &mut ChaCha8Rng| -> f64 {
        let u1: f64 = rng.gen_range(1e-300..1.0f64);
        let u2: f64 = rng.gen_range(0.0..1.0f64);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let mut d_floor = 0.0f64;
    for row in &states {
        let x = DVector::from_iterator(state::DIM, row.iter().copied());
        let r = measurement_noise(&x, &obs, noise);
        let noisy = |truth: T, var: T, g: f64| {
            (truth.to_f64_lossy() + var.to_f64_lossy().max(0.0).sqrt() * g)
                .round()
                .max(0.0)
        };
        let g0 = gauss(&mut rng);
        let g1 = gauss(&mut rng);
        let g2 = gauss(&mut rng);
        h.push(Some(T::c(noisy(row[state::H], r[(0, 0)], g0))));
        w.push(Some(T::c(noisy(row[state::W], r[(1, 1)], g1))));
        let dv = noisy(row[state::D], r[(2, 2)], g2).max(d_floor);
        d_floor = dv;
        d.push(Some(T::c(dv)));
    }

    let population: u64 = counts.iter().enumerate()
        .filter(|&(i, _)| i != state::PHI)
        .map(|(_, &c)| c)
        .sum::<u64>()
        .max(1);
    let series = ObservationSeries {
        region_id: "synthetic".into(),
        population,
        dates: (0..=days as i64)
            .map(|o| start + chrono::Duration::days(o))
            .collect(),
        h,
        w,
        d,
    };
    Ok(SyntheticDataset {
        series,
        states,
        exposures,
        deaths_by_source,
        params: *p,
        beta: daily_beta.clone(),
        seed,
    })
}

/// Truth sidecar written next to the synthetic CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TruthSidecar<T: Scalar> {
    pub params: ParameterVector<T>,
    pub beta: BetaTrajectory<T>,
    pub seed: u64,
}

/// Write the realization in the regular data schema plus a JSON truth
/// sidecar holding the generating parameters.
pub fn save_synthetic<T: Scalar>(
    csv_path: &std::path::Path,
    json_path: &std::path::Path,
    ds: &SyntheticDataset<T>,
) -> Result<()> {
    crate::data::write_regional_csv(csv_path, std::slice::from_ref(&ds.series), "synthetic")?;
    let sidecar = TruthSidecar {
        params: ds.params,
        beta: ds.beta.clone(),
        seed: ds.seed,
    };
    let file = std::fs::File::create(json_path)?;
    serde_json::to_writer_pretty(file, &sidecar)?;
    Ok(())
}

// -------------------------------------------------------------------
// Bias estimation

/// Names of the twelve reported dimensions: the ten static parameters
/// plus the time-averaged dynamic pair.
pub fn reported_names() -> Vec<String> {
    let mut names: Vec<String> = STATIC_NAMES.iter().map(|s| s.to_string()).collect();
    names.push("R_t".into());
    names.push("IFR".into());
    names
}

/// Collapse packed samples to the twelve reported dimensions, with
/// the window-varying pair averaged over windows.
pub fn reduce_samples<T: Scalar>(
    chain: &PosteriorChain<T>,
    burn_in: usize,
) -> Result<Vec<Vec<T>>> {
    let n_static = STATIC_NAMES.len();
    let samples = chain.samples_after(burn_in);
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        if s.len() < n_static + 2 || (s.len() - n_static) % 2 != 0 {
            return Err(Error::DimensionMismatch(format!(
                "packed sample of length {} does not fit the layout",
                s.len()
            )));
        }
        let n_windows = (s.len() - n_static) / 2;
        let mut row: Vec<T> = (0..n_static).map(|i| s[i]).collect();
        let norm = T::c(n_windows as f64);
        let mut r_sum = T::zero();
        let mut ifr_sum = T::zero();
        for w in 0..n_windows {
            r_sum += s[n_static + 2 * w];
            ifr_sum += s[n_static + 2 * w + 1];
        }
        row.push(r_sum / norm);
        row.push(ifr_sum / norm);
        out.push(row);
    }
    if out.is_empty() {
        return Err(Error::EmptyChain);
    }
    Ok(out)
}

fn column_mean<T: Scalar>(rows: &[Vec<T>]) -> Vec<T> {
    let d = rows[0].len();
    let n = T::c(rows.len() as f64);
    (0..d)
        .map(|j| rows.iter().map(|r| r[j]).fold(T::zero(), |a, b| a + b) / n)
        .collect()
}

fn column_sd<T: Scalar>(rows: &[Vec<T>], mean: &[T]) -> Vec<T> {
    let d = rows[0].len();
    let n = T::c(rows.len().max(2) as f64 - 1.0);
    (0..d)
        .map(|j| {
            sqrt(
                rows.iter()
                    .map(|r| (r[j] - mean[j]) * (r[j] - mean[j]))
                    .fold(T::zero(), |a, b| a + b)
                    / n,
            )
        })
        .collect()
}

fn column_quantiles<T: Scalar>(rows: &[Vec<T>], lo: f64, hi: f64) -> Vec<(T, T)> {
    let d = rows[0].len();
    (0..d)
        .map(|j| {
            let mut col: Vec<T> = rows.iter().map(|r| r[j]).collect();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let pick = |q: f64| col[((col.len() - 1) as f64 * q).round() as usize];
            (pick(lo), pick(hi))
        })
        .collect()
}

/// Bias of the bootstrap posteriors against the reference posterior.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BiasReport<T: Scalar> {
    pub names: Vec<String>,
    /// Per-replicate, per-dimension bias of the bootstrap mean.
    pub bias_per_replicate: Vec<Vec<T>>,
    /// Root mean square bias over replicates, per dimension.
    pub bias: Vec<T>,
    /// Reference posterior mean and standard deviation.
    pub mean: Vec<T>,
    pub sd: Vec<T>,
    /// 68% credible interval of the reference posterior.
    pub cri68: Vec<(T, T)>,
    /// Point-robustness flag per dimension (`true` = robust).
    pub robust: Vec<bool>,
    /// Interval-overlap flag per dimension against the pooled
    /// bootstrap interval.
    pub overlap: Vec<bool>,
    pub n_boot: usize,
}

/// Compare bootstrap chains re-fitted on synthetic data against the
/// reference chain; dynamic parameters enter as one time-averaged
/// dimension each.
pub fn bias_estimate<T: Scalar>(
    reference: &PosteriorChain<T>,
    boot_chains: &[PosteriorChain<T>],
    burn_in: usize,
    overlap_alpha: T,
) -> Result<BiasReport<T>> {
    if boot_chains.is_empty() {
        return Err(Error::EmptyChain);
    }
    let ref_rows = reduce_samples(reference, burn_in)?;
    let d = ref_rows[0].len();
    let mean = column_mean(&ref_rows);
    let sd = column_sd(&ref_rows, &mean);
    let cri68 = column_quantiles(&ref_rows, 0.16, 0.84);

    let mut bias_per_replicate: Vec<Vec<T>> = Vec::with_capacity(boot_chains.len());
    let mut pooled: Vec<Vec<T>> = Vec::new();
    let packed_len = reference.samples.first().map(|s| s.len());
    for chain in boot_chains {
        if chain.samples.first().map(|s| s.len()) != packed_len {
            return Err(Error::DimensionMismatch(
                "bootstrap chain dimension differs from reference".into(),
            ));
        }
        let rows = reduce_samples(chain, burn_in)?;
        let boot_mean = column_mean(&rows);
        bias_per_replicate.push((0..d).map(|j| boot_mean[j] - mean[j]).collect());
        pooled.extend(rows);
    }
    let n = T::c(boot_chains.len() as f64);
    let bias: Vec<T> = (0..d)
        .map(|j| {
            sqrt(
                bias_per_replicate
                    .iter()
                    .map(|b| b[j] * b[j])
                    .fold(T::zero(), |a, s| a + s)
                    / n,
            )
        })
        .collect();

    let boot_cri = column_quantiles(&pooled, 0.16, 0.84);
    let mut robust = Vec::with_capacity(d);
    let mut overlap = Vec::with_capacity(d);
    for j in 0..d {
        robust.push(point_robustness(bias[j], cri68[j])?);
        overlap.push(interval_overlap_check(cri68[j], boot_cri[j], overlap_alpha)?);
    }
    Ok(BiasReport {
        names: reported_names(),
        bias_per_replicate,
        bias,
        mean,
        sd,
        cri68,
        robust,
        overlap,
        n_boot: boot_chains.len(),
    })
}

/// A point estimate is robust when the bootstrap bias stays below
/// half the diameter of the 68% credible interval.
pub fn point_robustness<T: Scalar>(bias: T, cri68: (T, T)) -> Result<bool> {
    let diam = cri68.1 - cri68.0;
    if diam < T::zero() {
        return Err(Error::InvalidParameter(
            "credible interval is empty".into(),
        ));
    }
    Ok(abs(bias) < T::c(0.5) * diam)
}

/// Interval agreement: the intersection must cover at least a share
/// `alpha` of the union, the latter taken as the convex hull when the
/// intervals are disjoint. Zero-width inputs pass only when
/// identical.
pub fn interval_overlap_check<T: Scalar>(a: (T, T), b: (T, T), alpha: T) -> Result<bool> {
    if a.1 < a.0 || b.1 < b.0 {
        return Err(Error::InvalidParameter("empty interval".into()));
    }
    let a_width = a.1 - a.0;
    let b_width = b.1 - b.0;
    if a_width == T::zero() || b_width == T::zero() {
        return Ok(a == b);
    }
    let inter = crate::scalar::maxv(
        crate::scalar::minv(a.1, b.1) - crate::scalar::maxv(a.0, b.0),
        T::zero(),
    );
    let hull = crate::scalar::maxv(a.1, b.1) - crate::scalar::minv(a.0, b.0);
    Ok(inter >= alpha * hull)
}

/// Normalized spread, bias and total error of the reported
/// dimensions, with the per-region summary as the median.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BootstrapStats<T: Scalar> {
    pub names: Vec<String>,
    pub cov: Vec<T>,
    pub cob: Vec<T>,
    pub nrmse: Vec<T>,
    pub median_cov: T,
    pub median_cob: T,
    pub median_nrmse: T,
}

fn median<T: Scalar>(values: &[T]) -> T {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / T::c(2.0)
    }
}

/// Per-dimension `CoV = sd/mean`, `CoB = |bias|/mean` and
/// `NRMSE = sqrt(sd^2 + bias^2)/mean` from a reference chain and a
/// bias vector; the mean must be nonzero everywhere.
pub fn bootstrap_stats<T: Scalar>(
    reference: &PosteriorChain<T>,
    bias: &[T],
    burn_in: usize,
) -> Result<BootstrapStats<T>> {
    let rows = reduce_samples(reference, burn_in)?;
    let d = rows[0].len();
    if bias.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "bias has {} entries for {d} dimensions",
            bias.len()
        )));
    }
    let mean = column_mean(&rows);
    let sd = column_sd(&rows, &mean);
    let mut cov = Vec::with_capacity(d);
    let mut cob = Vec::with_capacity(d);
    let mut nrmse = Vec::with_capacity(d);
    for j in 0..d {
        if mean[j] == T::zero() {
            return Err(Error::Numerical(format!(
                "zero posterior mean in dimension {j}"
            )));
        }
        cov.push(sd[j] / mean[j]);
        cob.push(abs(bias[j]) / mean[j]);
        nrmse.push(sqrt(sd[j] * sd[j] + bias[j] * bias[j]) / mean[j]);
    }
    Ok(BootstrapStats {
        names: reported_names(),
        median_cov: median(&cov),
        median_cob: median(&cob),
        median_nrmse: median(&nrmse),
        cov,
        cob,
        nrmse,
    })
}
