//! Discrete-time Kalman filtering over the eight-state model: noise
//! assembly, eigenvector-based initialization, filtering, marginal
//! log-likelihood and multi-day prediction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::ObservationSeries;
use crate::error::{Error, Result};
use crate::model::{beta_from_r0, build_transition_matrix};
use crate::network::{network_phi_update, CommuteNetwork};
use crate::params::{derive_fractions, state, DynamicSchedule, ParameterVector};
use crate::scalar::{ln, maxv, Scalar};

/// Process- and measurement-noise scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct NoiseConfig<T: Scalar> {
    /// Relative variance of the rate uncertainty, per flow.
    pub epsilon: T,
    /// Constant diagonal noise added per flow endpoint.
    pub q_diag: T,
    /// Measurement-noise floors for (H, W, D).
    pub r0: [T; 3],
    /// State-proportional measurement-noise scales for (H, W, D).
    pub rd: [T; 3],
}

impl<T: Scalar> Default for NoiseConfig<T> {
    fn default() -> Self {
        let rd = T::c(0.001 * 0.001);
        Self {
            epsilon: T::c(0.05 * 0.05),
            q_diag: T::one(),
            r0: [T::one(); 3],
            rd: [rd; 3],
        }
    }
}

/// Selector of the observed state components, (H, W, D) by default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationModel {
    pub indices: Vec<usize>,
}

impl Default for ObservationModel {
    fn default() -> Self {
        Self {
            indices: vec![state::H, state::W, state::D],
        }
    }
}

impl ObservationModel {
    /// The full selector matrix, one unit row per observed component.
    pub fn matrix<T: Scalar>(&self, dim: usize) -> DMatrix<T> {
        let mut h = DMatrix::zeros(self.indices.len(), dim);
        for (r, &i) in self.indices.iter().enumerate() {
            h[(r, i)] = T::one();
        }
        h
    }
}

/// The filter's belief after `k` processed days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FilterState<T: Scalar> {
    pub mean: DVector<T>,
    pub cov: DMatrix<T>,
    pub loglik: T,
    pub k: usize,
}

fn clamp0<T: Scalar>(v: &DVector<T>) -> DVector<T> {
    v.map(|x| maxv(x, T::zero()))
}

fn symmetrize<T: Scalar>(m: &mut DMatrix<T>) {
    let half = T::c(0.5);
    for i in 0..m.nrows() {
        for j in 0..i {
            let v = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

// -------------------------------------------------------------------
// Noise assembly

/// Assemble the process-noise covariance from the flows encoded in the
/// off-diagonal entries of `F`, evaluated at `mean_state` (clamped at
/// zero elementwise).
///
/// Every flow contributes a relative-rate term `epsilon * flow^2` and
/// a constant `q_diag` to both endpoint diagonals. Flows between
/// person compartments additionally contribute the Poisson block
/// `[[flow, -flow], [-flow, flow]]`. Flows into the infectious
/// pressure carry no Poisson part, and the infection flow out of it
/// puts its Poisson mass on the destination diagonal only, since the
/// pressure is not a counted population.
pub fn assemble_process_noise<T: Scalar>(
    f: &DMatrix<T>,
    mean_state: &DVector<T>,
    cfg: &NoiseConfig<T>,
) -> DMatrix<T> {
    let n = f.nrows();
    let x = clamp0(mean_state);
    let mut q = DMatrix::zeros(n, n);
    for dst in 0..n {
        for src in 0..n {
            if dst == src || f[(dst, src)] == T::zero() {
                continue;
            }
            let flow = f[(dst, src)] * x[src];
            if dst == state::PHI {
                // shedding into the pressure: no Poisson part
            } else if src == state::PHI {
                q[(dst, dst)] += flow;
            } else {
                q[(src, src)] += flow;
                q[(dst, dst)] += flow;
                q[(src, dst)] -= flow;
                q[(dst, src)] -= flow;
            }
            let v = cfg.epsilon * flow * flow;
            q[(src, src)] += v + cfg.q_diag;
            q[(dst, dst)] += v + cfg.q_diag;
        }
    }
    symmetrize(&mut q);
    q
}

/// Diagonal measurement noise `r0 + rd * x_hat^2` per observed
/// component, evaluated at the predicted state.
pub fn measurement_noise<T: Scalar>(
    predicted: &DVector<T>,
    obs: &ObservationModel,
    cfg: &NoiseConfig<T>,
) -> DMatrix<T> {
    let m = obs.indices.len();
    let mut r = DMatrix::zeros(m, m);
    for (row, &i) in obs.indices.iter().enumerate() {
        let v = predicted[i];
        r[(row, row)] = cfg.r0[row.min(2)] + cfg.rd[row.min(2)] * v * v;
    }
    r
}

// -------------------------------------------------------------------
// Initialization

/// Dominating eigenvector of a nonnegative matrix by power iteration.
fn dominant_eigenvector<T: Scalar>(f: &DMatrix<T>) -> Result<DVector<T>> {
    let n = f.nrows();
    let mut v = DVector::from_element(n, T::one());
    let mut prev = v.clone();
    for _ in 0..10_000 {
        let mut next = f * &v;
        let norm = next.norm();
        if norm == T::zero() {
            return Err(Error::Numerical(
                "transition matrix annihilates the probe vector".into(),
            ));
        }
        next /= norm;
        // fix the sign so convergence is detectable
        if next.iter().fold(T::zero(), |a, &b| a + b) < T::zero() {
            next = -next;
        }
        prev = std::mem::replace(&mut v, next);
        if (&v - &prev).norm() < T::c(1e-14) {
            return Ok(v);
        }
    }
    // oscillation (complex pair): fall back to the elementwise modulus
    let mut v = v.map(crate::scalar::abs) + prev.map(crate::scalar::abs);
    let norm = v.norm();
    if norm == T::zero() {
        return Err(Error::Numerical("power iteration collapsed".into()));
    }
    v /= norm;
    Ok(v)
}

/// Initialize the filter from the first observation.
///
/// The cumulative states are removed, the dominating eigenvector `v`
/// of the reduced transition matrix is computed, and the initial
/// non-cumulative state solves `min_{x >= 0, alpha} |x - alpha v|^2`
/// subject to matching the observed prevalence components. The
/// cumulative death state starts at the observed value, recoveries at
/// zero. The initial covariance is diagonal with entries
/// `(0.25 mean_i)^2 + q_diag`.
pub fn init_state<T: Scalar>(
    f: &DMatrix<T>,
    obs: &ObservationModel,
    y0: &[T; 3],
    cfg: &NoiseConfig<T>,
) -> Result<FilterState<T>> {
    use state::*;
    if f.nrows() != DIM {
        return Err(Error::DimensionMismatch(
            "initialization expects the eight-state model".into(),
        ));
    }
    for v in y0 {
        if !v.is_finite() {
            return Err(Error::Data("non-finite initial observation".into()));
        }
    }
    let reduced: Vec<usize> = (0..DIM).filter(|&i| i != D && i != R).collect();
    let f_red = DMatrix::from_fn(reduced.len(), reduced.len(), |i, j| {
        f[(reduced[i], reduced[j])]
    });
    let v = dominant_eigenvector(&f_red)?;

    // positions of H and W inside the reduced ordering
    let rh = reduced.iter().position(|&i| i == H).unwrap();
    let rw = reduced.iter().position(|&i| i == W).unwrap();
    let (yh, yw, yd) = (
        maxv(y0[0], T::zero()),
        maxv(y0[1], T::zero()),
        maxv(y0[2], T::zero()),
    );
    let denom = v[rh] * v[rh] + v[rw] * v[rw];
    let alpha = if denom > T::zero() {
        maxv((yh * v[rh] + yw * v[rw]) / denom, T::zero())
    } else {
        T::zero()
    };

    let mut mean = DVector::zeros(DIM);
    for (ri, &i) in reduced.iter().enumerate() {
        mean[i] = maxv(alpha * v[ri], T::zero());
    }
    mean[H] = yh;
    mean[W] = yw;
    mean[D] = yd;
    mean[R] = T::zero();

    let quarter = T::c(0.25);
    let mut cov = DMatrix::zeros(DIM, DIM);
    for i in 0..DIM {
        let s = quarter * mean[i];
        cov[(i, i)] = s * s + cfg.q_diag;
    }
    let _ = obs;
    Ok(FilterState {
        mean,
        cov,
        loglik: T::zero(),
        k: 0,
    })
}

// -------------------------------------------------------------------
// Filtering

/// One predict/update cycle with explicitly supplied noise matrices.
///
/// `y` holds one optional value per observed component; missing
/// components drop the corresponding selector row. `r` must match the
/// full observation model.
pub fn filter_step_with<T: Scalar>(
    fs: &FilterState<T>,
    f: &DMatrix<T>,
    obs: &ObservationModel,
    y: &[Option<T>],
    q: &DMatrix<T>,
    r: &DMatrix<T>,
) -> Result<FilterState<T>> {
    let n = f.nrows();
    let mean_pred = f * &fs.mean;
    let mut cov_pred = f * &fs.cov * f.transpose() + q;
    symmetrize(&mut cov_pred);

    let present: Vec<usize> = (0..obs.indices.len()).filter(|&i| y[i].is_some()).collect();
    if present.is_empty() {
        return Ok(FilterState {
            mean: mean_pred,
            cov: cov_pred,
            loglik: fs.loglik,
            k: fs.k + 1,
        });
    }

    let m = present.len();
    let mut h = DMatrix::zeros(m, n);
    let mut innov = DVector::zeros(m);
    let mut r_sub = DMatrix::zeros(m, m);
    for (row, &pi) in present.iter().enumerate() {
        let si = obs.indices[pi];
        h[(row, si)] = T::one();
        innov[row] = y[pi].unwrap() - mean_pred[si];
        r_sub[(row, row)] = r[(pi, pi)];
    }

    let mut s = &h * &cov_pred * h.transpose() + &r_sub;
    symmetrize(&mut s);
    let chol = s
        .clone()
        .cholesky()
        .ok_or(Error::SingularInnovation { day: fs.k + 1 })?;
    let s_inv_innov = chol.solve(&innov);
    let gain = &cov_pred * h.transpose() * chol.inverse();

    let mean = &mean_pred + &gain * &innov;
    let ikh = DMatrix::identity(n, n) - &gain * &h;
    let mut cov = &ikh * &cov_pred * ikh.transpose() + &gain * &r_sub * gain.transpose();
    symmetrize(&mut cov);

    let ln2pi = T::c((2.0 * std::f64::consts::PI).ln());
    let mut logdet = T::zero();
    for i in 0..m {
        logdet += ln(chol.l_dirty()[(i, i)]);
    }
    logdet *= T::c(2.0);
    let half = T::c(0.5);
    let quad = innov.dot(&s_inv_innov);
    let loglik = fs.loglik - half * (T::c(m as f64) * ln2pi + logdet + quad);

    Ok(FilterState {
        mean,
        cov,
        loglik,
        k: fs.k + 1,
    })
}

/// One predict/update cycle with the model's state-dependent noise,
/// evaluated at the one-step-ahead predicted mean clamped at zero.
pub fn filter_step<T: Scalar>(
    fs: &FilterState<T>,
    f: &DMatrix<T>,
    obs: &ObservationModel,
    y: &[Option<T>],
    cfg: &NoiseConfig<T>,
) -> Result<FilterState<T>> {
    let mean_pred = clamp0(&(f * &fs.mean));
    let q = assemble_process_noise(f, &mean_pred, cfg);
    let r = measurement_noise(&mean_pred, obs, cfg);
    filter_step_with(fs, f, obs, y, &q, &r)
}

/// Replace the infectious-pressure means of co-filtered regions by the
/// commute-coupled update. Applied between predict and update when a
/// network is supplied; with no network, regions stay independent.
pub fn apply_network_coupling<T: Scalar>(
    states: &mut [FilterState<T>],
    net: &CommuteNetwork<T>,
) -> Result<()> {
    let phi = DVector::from_iterator(states.len(), states.iter().map(|s| s.mean[state::PHI]));
    let coupled = network_phi_update(&phi, net, &phi)?;
    for (s, v) in states.iter_mut().zip(coupled.iter()) {
        s.mean[state::PHI] = *v;
    }
    Ok(())
}

// -------------------------------------------------------------------
// Marginal likelihood over a series

/// Per-window transition matrices for a parameter point.
pub fn window_matrices<T: Scalar>(
    p: &ParameterVector<T>,
    sched: &DynamicSchedule<T>,
) -> Result<Vec<DMatrix<T>>> {
    (0..sched.n_windows())
        .map(|w| {
            let f = derive_fractions(p, sched.ifr[w])?;
            let beta = beta_from_r0(p, &f, sched.r_t[w]);
            Ok(build_transition_matrix(p, &f, beta))
        })
        .collect()
}

fn day_offset<T: Scalar>(sched: &DynamicSchedule<T>, date: chrono::NaiveDate) -> Result<usize> {
    let off = (date - sched.window_starts[0]).num_days();
    if off < 0 {
        return Err(Error::Misaligned(format!(
            "series day {date} precedes the schedule start"
        )));
    }
    Ok(off as usize)
}

/// Run the filter over a series, returning the belief after every day
/// (the first entry is the initialization) and the total marginal
/// log-likelihood.
pub fn run_filter<T: Scalar>(
    p: &ParameterVector<T>,
    sched: &DynamicSchedule<T>,
    series: &ObservationSeries<T>,
    cfg: &NoiseConfig<T>,
) -> Result<(Vec<FilterState<T>>, T)> {
    if series.is_empty() {
        return Ok((Vec::new(), T::zero()));
    }
    let obs = ObservationModel::default();
    let mats = window_matrices(p, sched)?;
    let w0 = sched.window_of_day(day_offset(sched, series.dates[0])?);
    let y0 = [
        series.h[0].unwrap_or(T::zero()),
        series.w[0].unwrap_or(T::zero()),
        series.d[0].unwrap_or(T::zero()),
    ];
    let mut fs = init_state(&mats[w0], &obs, &y0, cfg)?;
    let mut out = Vec::with_capacity(series.len());
    out.push(fs.clone());
    for t in 1..series.len() {
        let w = sched.window_of_day(day_offset(sched, series.dates[t])?);
        let y = [series.h[t], series.w[t], series.d[t]];
        fs = filter_step(&fs, &mats[w], &obs, &y, cfg)?;
        out.push(fs.clone());
    }
    let loglik = fs.loglik;
    Ok((out, loglik))
}

/// Marginal filter log-likelihood of a series under a parameter point
/// and dynamic schedule.
pub fn marginal_loglik<T: Scalar>(
    p: &ParameterVector<T>,
    sched: &DynamicSchedule<T>,
    series: &ObservationSeries<T>,
    cfg: &NoiseConfig<T>,
) -> Result<T> {
    run_filter(p, sched, series, cfg).map(|(_, ll)| ll)
}

// -------------------------------------------------------------------
// Prediction

/// Predictive mean and covariance of the observed components for each
/// of `horizon` days ahead, with no data correction inside the
/// horizon. `f_seq` supplies the per-day transition matrices; the last
/// one is reused past its end.
pub fn predict_ahead<T: Scalar>(
    fs: &FilterState<T>,
    f_seq: &[DMatrix<T>],
    horizon: usize,
    cfg: &NoiseConfig<T>,
) -> Result<Vec<(DVector<T>, DMatrix<T>)>> {
    if horizon == 0 || f_seq.is_empty() {
        return Err(Error::InvalidParameter(
            "prediction needs a horizon of at least one day and a transition matrix".into(),
        ));
    }
    let obs = ObservationModel::default();
    let h = obs.matrix::<T>(fs.mean.len());
    let mut mean = fs.mean.clone();
    let mut cov = fs.cov.clone();
    let mut out = Vec::with_capacity(horizon);
    for day in 0..horizon {
        let f = &f_seq[day.min(f_seq.len() - 1)];
        mean = clamp0(&(f * &mean));
        let q = assemble_process_noise(f, &mean, cfg);
        cov = f * &cov * f.transpose() + q;
        symmetrize(&mut cov);
        let r = measurement_noise(&mean, &obs, cfg);
        let mut s = &h * &cov * h.transpose() + r;
        symmetrize(&mut s);
        out.push((&h * &mean, s));
    }
    Ok(out)
}
