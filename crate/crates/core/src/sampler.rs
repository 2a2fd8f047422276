//! Adaptive-Metropolis posterior sampling driven by the Kalman
//! marginal likelihood, with convergence diagnostics and posterior
//! summaries.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ObservationSeries;
use crate::error::{Error, Result};
use crate::kalman::{marginal_loglik, NoiseConfig};
use crate::params::DynamicSchedule;
use crate::priors::PriorSet;
use crate::scalar::{ln, powf, sqrt, Scalar};

/// Tuning constants of the adaptive Metropolis sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AmConfig<T: Scalar> {
    /// Initial proposal covariance is `c0_scale` times the identity.
    pub c0_scale: T,
    /// Accepted proposals before adaptation starts.
    pub t0: usize,
    /// Step scale; `None` selects `0.05 * 2.4^(2/d)`.
    pub s: Option<T>,
    /// Covariance regularizer added as `s * epsilon_reg * I`.
    pub epsilon_reg: T,
    pub n_chains: usize,
    /// Stored samples per chain, burn-in included.
    pub n_samples: usize,
    pub burn_in: usize,
    /// Iterations per stored sample; adaptation still sees every
    /// iteration.
    #[serde(default = "default_thin")]
    pub thin: usize,
}

fn default_thin() -> usize {
    1
}

impl<T: Scalar> Default for AmConfig<T> {
    fn default() -> Self {
        Self {
            c0_scale: T::c(0.001),
            t0: 10,
            s: None,
            epsilon_reg: T::c(1e-8),
            n_chains: 4,
            n_samples: 50_000,
            burn_in: 10_000,
            thin: 1,
        }
    }
}

impl<T: Scalar> AmConfig<T> {
    /// Effective step scale for dimension `d`.
    pub fn step_scale(&self, d: usize) -> T {
        self.s
            .unwrap_or_else(|| T::c(0.05) * powf(T::c(2.4), T::c(2.0 / d as f64)))
    }
}

/// One Metropolis chain: every stored point, its log posterior, the
/// acceptance flag of the move that produced it, and proposal
/// covariance checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PosteriorChain<T: Scalar> {
    pub samples: Vec<DVector<T>>,
    pub log_posterior: Vec<T>,
    pub accepted: Vec<bool>,
    /// `(iteration, proposal covariance)` snapshots.
    pub cov_checkpoints: Vec<(usize, DMatrix<T>)>,
    pub seed: u64,
    /// Proposals rejected because the likelihood evaluation failed.
    pub likelihood_failures: usize,
}

impl<T: Scalar> PosteriorChain<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.accepted.is_empty() {
            return 0.0;
        }
        self.accepted.iter().filter(|&&a| a).count() as f64 / self.accepted.len() as f64
    }

    /// Samples with the first `burn_in` dropped.
    pub fn samples_after(&self, burn_in: usize) -> &[DVector<T>] {
        &self.samples[burn_in.min(self.samples.len())..]
    }
}

/// Running mean and scatter over the chain trajectory, duplicates
/// included, updated one point at a time.
struct RunningCov<T: Scalar> {
    n: usize,
    mean: DVector<T>,
    m2: DMatrix<T>,
}

impl<T: Scalar> RunningCov<T> {
    fn new(d: usize) -> Self {
        Self {
            n: 0,
            mean: DVector::zeros(d),
            m2: DMatrix::zeros(d, d),
        }
    }

    fn push(&mut self, x: &DVector<T>) {
        self.n += 1;
        let delta = x - &self.mean;
        self.mean += &delta / T::c(self.n as f64);
        let delta2 = x - &self.mean;
        self.m2 += &delta * delta2.transpose();
    }

    fn cov(&self) -> Option<DMatrix<T>> {
        (self.n >= 2).then(|| &self.m2 / T::c((self.n - 1) as f64))
    }
}

/// Run one adaptive-Metropolis chain on an arbitrary log target.
///
/// The target returns the log density, `-inf` outside the support, or
/// an error for a failed evaluation (counted and treated as a
/// rejection). The proposal covariance is `c0_scale * I` until `t0`
/// proposals have been accepted and
/// `s * cov(trajectory) + s * epsilon_reg * I` afterwards.
pub fn am_run_core<T, F>(
    init: DVector<T>,
    mut log_target: F,
    cfg: &AmConfig<T>,
    seed: u64,
) -> Result<PosteriorChain<T>>
where
    T: Scalar,
    F: FnMut(&DVector<T>) -> Result<T>,
{
    let d = init.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = cfg.step_scale(d);

    let mut current = init;
    let mut lp = log_target(&current)?;
    if !lp.is_finite() {
        return Err(Error::InvalidParameter(
            "chain initial point has non-finite log target".into(),
        ));
    }

    let mut chain = PosteriorChain {
        samples: Vec::with_capacity(cfg.n_samples),
        log_posterior: Vec::with_capacity(cfg.n_samples),
        accepted: Vec::with_capacity(cfg.n_samples),
        cov_checkpoints: Vec::new(),
        seed,
        likelihood_failures: 0,
    };
    let mut stats = RunningCov::new(d);
    let mut accepted_total = 0usize;
    let c0 = DMatrix::identity(d, d) * cfg.c0_scale;
    chain.cov_checkpoints.push((0, c0.clone()));
    let mut adapting = false;

    let thin = cfg.thin.max(1);
    for it in 0..cfg.n_samples * thin {
        let proposal_cov = if accepted_total <= cfg.t0 {
            c0.clone()
        } else {
            let mut c = stats.cov().unwrap_or_else(|| c0.clone()) * s;
            for i in 0..d {
                c[(i, i)] += s * cfg.epsilon_reg;
            }
            if !adapting {
                adapting = true;
                chain.cov_checkpoints.push((it, c.clone()));
            }
            c
        };
        let chol = cholesky_regularized(&proposal_cov, s * cfg.epsilon_reg)?;

        let z = DVector::from_fn(d, |_, _| T::std_normal(&mut rng));
        let candidate = &current + &chol * z;

        let lp_new = match log_target(&candidate) {
            Ok(v) => v,
            Err(_) => {
                chain.likelihood_failures += 1;
                T::neg_infinity()
            }
        };
        let accept = if lp_new == T::neg_infinity() {
            false
        } else {
            let u: T = T::unit_open(&mut rng);
            ln(u) < lp_new - lp
        };
        if accept {
            current = candidate;
            lp = lp_new;
            accepted_total += 1;
        }
        if (it + 1) % thin == 0 {
            chain.samples.push(current.clone());
            chain.log_posterior.push(lp);
            chain.accepted.push(accept);
        }
        stats.push(&current);
    }
    if adapting {
        if let Some(c) = stats.cov() {
            let mut last = c * s;
            for i in 0..d {
                last[(i, i)] += s * cfg.epsilon_reg;
            }
            chain.cov_checkpoints.push((cfg.n_samples * thin, last));
        }
    }
    Ok(chain)
}

fn cholesky_regularized<T: Scalar>(
    c: &DMatrix<T>,
    bump: T,
) -> Result<DMatrix<T>> {
    let mut c = c.clone();
    let bump = if bump > T::zero() { bump } else { T::c(1e-12) };
    for _ in 0..6 {
        if let Some(ch) = c.clone().cholesky() {
            return Ok(ch.unpack().lower_triangle());
        }
        for i in 0..c.nrows() {
            c[(i, i)] += bump;
        }
    }
    Err(Error::Numerical(
        "proposal covariance is not positive definite".into(),
    ))
}

/// Run one chain on the posterior `prior * marginal likelihood` of a
/// series, with one dynamic window per `window_days` of data.
/// `init` may carry a warm-start point; the prior mean point is used
/// otherwise.
pub fn am_run<T: Scalar>(
    priors: &PriorSet<T>,
    series: &ObservationSeries<T>,
    window_days: usize,
    noise: &NoiseConfig<T>,
    cfg: &AmConfig<T>,
    init: Option<DVector<T>>,
    seed: u64,
) -> Result<PosteriorChain<T>> {
    let n_windows = series.len().div_ceil(window_days).max(1);
    let start = series
        .dates
        .first()
        .copied()
        .unwrap_or_else(|| chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap());
    let init = init.unwrap_or_else(|| priors.mean_point(n_windows));
    let target = |point: &DVector<T>| -> Result<T> {
        let lp = priors.logpdf(point, n_windows);
        if lp == T::neg_infinity() {
            return Ok(T::neg_infinity());
        }
        if series.is_empty() {
            return Ok(lp);
        }
        let (p, r_t, ifr) = priors.unpack(point, n_windows);
        let sched = DynamicSchedule::new(start, series.len(), window_days, r_t, ifr)?;
        Ok(lp + marginal_loglik(&p, &sched, series, noise)?)
    };
    am_run_core(init, target, cfg, seed)
}

/// Potential-scale-reduction factor of one coordinate across chains.
///
/// Chains must have equal length with burn-in already removed. Returns
/// `+inf` when the within-chain variance vanishes.
pub fn gelman_rubin<T: Scalar>(chains: &[&PosteriorChain<T>], dim: usize) -> Result<T> {
    if chains.len() < 2 {
        return Err(Error::InvalidParameter(
            "the diagnostic needs at least two chains".into(),
        ));
    }
    let n = chains[0].len();
    if n < 2 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::DimensionMismatch(
            "chains must share a common length of at least two".into(),
        ));
    }
    let m = chains.len();
    let nf = T::c(n as f64);
    let mut means = Vec::with_capacity(m);
    let mut vars = Vec::with_capacity(m);
    for c in chains {
        let mut mean = T::zero();
        for x in &c.samples {
            mean += x[dim];
        }
        mean /= nf;
        let mut var = T::zero();
        for x in &c.samples {
            let d = x[dim] - mean;
            var += d * d;
        }
        var /= T::c((n - 1) as f64);
        means.push(mean);
        vars.push(var);
    }
    let w = vars.iter().copied().fold(T::zero(), |a, b| a + b) / T::c(m as f64);
    if w == T::zero() {
        return Ok(T::infinity());
    }
    let grand = means.iter().copied().fold(T::zero(), |a, b| a + b) / T::c(m as f64);
    let mut b = T::zero();
    for mu in &means {
        let d = *mu - grand;
        b += d * d;
    }
    b *= nf / T::c((m - 1) as f64);
    let var_hat = (nf - T::one()) / nf * w + b / nf;
    Ok(sqrt(var_hat / w))
}

/// Per-dimension posterior location and spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DimensionSummary<T: Scalar> {
    pub name: String,
    pub mean: T,
    pub sd: T,
    pub ci68: (T, T),
    pub ci95: (T, T),
}

/// Summarize chains after burn-in: mean, standard deviation and
/// equal-tailed 68/95% credible intervals per dimension. Optional
/// per-chain weights (for example regional populations) pool the
/// chains by weighted resampling.
pub fn posterior_summary<T: Scalar>(
    chains: &[&PosteriorChain<T>],
    burn_in: usize,
    weights: Option<&[T]>,
    names: &dyn Fn(usize) -> String,
) -> Result<Vec<DimensionSummary<T>>> {
    if chains.is_empty() || chains.iter().all(|c| c.samples_after(burn_in).is_empty()) {
        return Err(Error::EmptyChain);
    }
    if let Some(w) = weights {
        if w.len() != chains.len() {
            return Err(Error::DimensionMismatch(
                "one weight per chain required".into(),
            ));
        }
    }
    let d = chains[0].samples[0].len();
    let mut out = Vec::with_capacity(d);
    for dim in 0..d {
        let mut pairs: Vec<(T, T)> = Vec::new();
        for (ci, c) in chains.iter().enumerate() {
            let retained = c.samples_after(burn_in);
            if retained.is_empty() {
                continue;
            }
            let w = weights.map(|w| w[ci]).unwrap_or(T::one()) / T::c(retained.len() as f64);
            for x in retained {
                pairs.push((x[dim], w));
            }
        }
        let total: T = pairs.iter().map(|p| p.1).fold(T::zero(), |a, b| a + b);
        let mut mean = T::zero();
        for &(v, w) in &pairs {
            mean += v * w;
        }
        mean /= total;
        let mut var = T::zero();
        for &(v, w) in &pairs {
            let dlt = v - mean;
            var += w * dlt * dlt;
        }
        var /= total;
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let quantile = |p: f64| -> T {
            let target = T::c(p) * total;
            let mut acc = T::zero();
            for &(v, w) in &pairs {
                acc += w;
                if acc >= target {
                    return v;
                }
            }
            pairs.last().unwrap().0
        };
        out.push(DimensionSummary {
            name: names(dim),
            mean,
            sd: sqrt(var),
            ci68: (quantile(0.16), quantile(0.84)),
            ci95: (quantile(0.025), quantile(0.975)),
        });
    }
    Ok(out)
}

// -------------------------------------------------------------------
// Persistence

/// Write a chain as columnar CSV: one row per retained sample with the
/// log posterior, acceptance flag and every coordinate.
pub fn save_chain_csv<T: Scalar>(
    path: &Path,
    chain: &PosteriorChain<T>,
    names: &dyn Fn(usize) -> String,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = chain.samples.first().map(|s| s.len()).unwrap_or(0);
    let mut header = vec!["log_posterior".to_string(), "accepted".to_string()];
    header.extend((0..d).map(names));
    w.write_record(&header)?;
    for i in 0..chain.len() {
        let mut row = vec![
            chain.log_posterior[i].to_f64_lossy().to_string(),
            (chain.accepted[i] as u8).to_string(),
        ];
        row.extend(chain.samples[i].iter().map(|v| v.to_f64_lossy().to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a chain written by [`save_chain_csv`]. Covariance checkpoints
/// are not persisted and come back empty.
pub fn load_chain_csv<T: Scalar>(path: &Path) -> Result<PosteriorChain<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let d = r
        .headers()
        .map_err(|e| Error::CsvHeader(e.to_string()))?
        .len()
        .checked_sub(2)
        .ok_or_else(|| Error::CsvHeader("chain file needs at least three columns".into()))?;
    let mut chain = PosteriorChain {
        samples: Vec::new(),
        log_posterior: Vec::new(),
        accepted: Vec::new(),
        cov_checkpoints: Vec::new(),
        seed: 0,
        likelihood_failures: 0,
    };
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |msg: String| Error::CsvRow { line, msg };
        let lp: f64 = rec[0].parse().map_err(|e| bad(format!("log posterior: {e}")))?;
        let acc: u8 = rec[1].parse().map_err(|e| bad(format!("accept flag: {e}")))?;
        let mut x = DVector::zeros(d);
        for i in 0..d {
            let v: f64 = rec[i + 2]
                .parse()
                .map_err(|e| bad(format!("coordinate {i}: {e}")))?;
            x[i] = T::c(v);
        }
        chain.samples.push(x);
        chain.log_posterior.push(T::c(lp));
        chain.accepted.push(acc != 0);
    }
    Ok(chain)
}

/// Companion metadata for a persisted chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ChainMeta<T: Scalar> {
    pub config: AmConfig<T>,
    pub seed: u64,
    pub acceptance_rate: f64,
    pub likelihood_failures: usize,
    /// Potential-scale-reduction factor per dimension, when several
    /// chains were run.
    pub gelman_rubin: Option<Vec<f64>>,
}

pub fn save_chain_meta<T: Scalar>(path: &Path, meta: &ChainMeta<T>) -> Result<()> {
    Ok(std::fs::write(path, serde_json::to_string_pretty(meta)?)?)
}
