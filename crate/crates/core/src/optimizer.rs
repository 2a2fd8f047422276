//! Daily transmission-rate estimation by regularized mean-field
//! likelihood minimization over overlapping receding-horizon windows.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::ObservationSeries;
use crate::error::{Error, Result};
use crate::kalman::{
    assemble_process_noise, init_state, measurement_noise, NoiseConfig, ObservationModel,
};
use crate::model::{beta_from_r0, build_transition_matrix, r0_from_beta};
use crate::params::{derive_fractions, state, DynamicSchedule, FractionSet, ParameterVector};
use crate::scalar::{abs, exp, ln, maxv, minv, sqrt, Scalar};

/// Window layout and solver knobs for the receding-horizon scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct HorizonConfig<T: Scalar> {
    /// Days optimized per window.
    pub prediction_horizon: usize,
    /// Days kept from each window before advancing.
    pub step: usize,
    /// Fluctuation penalty; `None` balances the two cost terms at the
    /// initial iterate.
    pub c: Option<T>,
    /// First-order tolerance on the transformed gradient.
    pub tol: T,
    pub max_iters: usize,
    /// Bounds on the daily rate; `None` takes the image of the
    /// reproduction-number support `[0, 16]`.
    pub beta_bounds: Option<(T, T)>,
    /// Also optimize the initial state (off by default).
    pub optimize_x0: bool,
}

impl<T: Scalar> Default for HorizonConfig<T> {
    fn default() -> Self {
        Self {
            prediction_horizon: 150,
            step: 20,
            c: None,
            tol: T::c(1e-6),
            max_iters: 500,
            beta_bounds: None,
            optimize_x0: false,
        }
    }
}

/// A fitted daily transmission-rate path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BetaTrajectory<T: Scalar> {
    /// Day each rate acts on (the transition into the next day).
    pub dates: Vec<NaiveDate>,
    pub beta: Vec<T>,
    /// Pointwise reproduction numbers of `beta`.
    pub r_t: Vec<T>,
    pub objective: T,
    /// Regularization actually used.
    pub c: T,
    pub converged: bool,
}

/// One day's measurement context: which components are present, their
/// values, and the frozen innovation covariance factors.
#[derive(Debug, Clone)]
struct DayData<T: Scalar> {
    indices: Vec<usize>,
    z: DVector<T>,
    s_inv: DMatrix<T>,
    logdet: T,
}

/// The frozen optimization instance: maximum-likelihood parameters,
/// initial state, observations and precomputed innovation covariances.
#[derive(Debug, Clone)]
pub struct MeanfieldProblem<T: Scalar> {
    pub params: ParameterVector<T>,
    pub fractions: FractionSet<T>,
    pub x0: DVector<T>,
    pub dates: Vec<NaiveDate>,
    days: Vec<DayData<T>>,
    f_base: DMatrix<T>,
    /// Regularization chosen at build time.
    pub c: T,
}

impl<T: Scalar> MeanfieldProblem<T> {
    /// Number of optimized daily rates (series length minus one).
    pub fn n_days(&self) -> usize {
        self.days.len()
    }

    fn f_of_beta(&self, beta: T) -> DMatrix<T> {
        let mut f = self.f_base.clone();
        f[(state::E, state::PHI)] = beta;
        f
    }

    /// Freeze a problem from a posterior maximum-likelihood point.
    ///
    /// A full Kalman pass at the frozen parameters (with their
    /// windowed rates) supplies the innovation covariances, which are
    /// held fixed afterwards. The fractions are frozen at the
    /// schedule's time-averaged fatality rate. When no regularization
    /// is given, it is set so both cost terms match at the windowed
    /// initial iterate, against a nominal 1% day-to-day fluctuation.
    pub fn build(
        p: &ParameterVector<T>,
        sched: &DynamicSchedule<T>,
        series: &ObservationSeries<T>,
        noise: &NoiseConfig<T>,
        c: Option<T>,
    ) -> Result<Self> {
        if series.len() < 2 {
            return Err(Error::Data(
                "daily-rate estimation needs at least two days".into(),
            ));
        }
        let obs = ObservationModel::default();
        let frozen_f = derive_fractions(p, sched.mean_ifr())?;
        let f_base = build_transition_matrix(p, &frozen_f, T::zero());

        // filter pass capturing the innovation covariance of each day
        let mats = crate::kalman::window_matrices(p, sched)?;
        let day_window = |t: usize| -> usize {
            let off = (series.dates[t] - sched.window_starts[0]).num_days().max(0) as usize;
            sched.window_of_day(off)
        };
        let y0 = [
            series.h[0].unwrap_or(T::zero()),
            series.w[0].unwrap_or(T::zero()),
            series.d[0].unwrap_or(T::zero()),
        ];
        let mut fs = init_state(&mats[day_window(0)], &obs, &y0, noise)?;
        let x0 = fs.mean.clone();
        let mut days = Vec::with_capacity(series.len() - 1);
        for t in 1..series.len() {
            let f = &mats[day_window(t)];
            let mean_pred = (f * &fs.mean).map(|v| maxv(v, T::zero()));
            let q = assemble_process_noise(f, &mean_pred, noise);
            let r = measurement_noise(&mean_pred, &obs, noise);
            let cov_pred = f * &fs.cov * f.transpose() + q;

            let y = [series.h[t], series.w[t], series.d[t]];
            let present: Vec<usize> = (0..3).filter(|&i| y[i].is_some()).collect();
            let m = present.len();
            let mut z = DVector::zeros(m);
            let mut h = DMatrix::zeros(m, state::DIM);
            let mut r_sub = DMatrix::zeros(m, m);
            for (row, &pi) in present.iter().enumerate() {
                z[row] = y[pi].unwrap();
                h[(row, obs.indices[pi])] = T::one();
                r_sub[(row, row)] = r[(pi, pi)];
            }
            let s = &h * &cov_pred * h.transpose() + &r_sub;
            let chol = s.clone().cholesky().ok_or(Error::SingularInnovation { day: t })?;
            let mut logdet = T::zero();
            for i in 0..m {
                logdet += ln(chol.l_dirty()[(i, i)]);
            }
            logdet *= T::c(2.0);
            days.push(DayData {
                indices: present.iter().map(|&i| obs.indices[i]).collect(),
                z,
                s_inv: chol.inverse(),
                logdet,
            });

            let yopt = [y[0], y[1], y[2]];
            fs = crate::kalman::filter_step(&fs, f, &obs, &yopt, noise)?;
        }

        let mut problem = Self {
            params: *p,
            fractions: frozen_f,
            x0,
            dates: series.dates[..series.len() - 1].to_vec(),
            days,
            f_base,
            c: c.unwrap_or(T::zero()),
        };
        if c.is_none() {
            // balance the rate-dependent data misfit against the
            // fluctuation penalty at the windowed initial iterate; the
            // log-determinant normalizers are constant in the rates
            // and are excluded
            let init = problem.windowed_init(sched, series);
            let misfit = problem.quadratic_misfit(&init)?;
            let mean_beta =
                init.iter().copied().fold(T::zero(), |a, b| a + b) / T::c(init.len() as f64);
            let jitter = T::c(0.01) * mean_beta;
            let proxy = T::c(init.len().max(1) as f64) * jitter * jitter;
            problem.c = misfit / maxv(proxy, T::c(1e-12));
        }
        Ok(problem)
    }

    /// The frozen schedule's rates expanded to a per-day vector.
    pub fn windowed_init(
        &self,
        sched: &DynamicSchedule<T>,
        series: &ObservationSeries<T>,
    ) -> Vec<T> {
        (0..self.n_days())
            .map(|k| {
                let off = (series.dates[k] - sched.window_starts[0]).num_days().max(0) as usize;
                beta_from_r0(
                    &self.params,
                    &self.fractions,
                    sched.r_t[sched.window_of_day(off)],
                )
            })
            .collect()
    }

    /// Cost and gradient at a rate path, with an optional junction
    /// rate continuing a previous window.
    pub fn cost_and_grad(
        &self,
        b: &[T],
        junction: Option<T>,
    ) -> Result<(T, Vec<T>)> {
        self.cost_and_grad_with_c(b, junction, self.c)
    }

    fn cost_and_grad_with_c(
        &self,
        b: &[T],
        junction: Option<T>,
        c: T,
    ) -> Result<(T, Vec<T>)> {
        let k_total = b.len();
        if k_total != self.n_days() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} daily rates, got {}",
                self.n_days(),
                k_total
            )));
        }
        let half = T::c(0.5);
        let ln2pi = T::c((2.0 * std::f64::consts::PI).ln());

        // forward pass
        let mut xs = Vec::with_capacity(k_total + 1);
        xs.push(self.x0.clone());
        let mut cost = T::zero();
        let mut innovations = Vec::with_capacity(k_total);
        for k in 0..k_total {
            let f = self.f_of_beta(b[k]);
            let x = &f * &xs[k];
            let day = &self.days[k];
            let mut ytil = day.z.clone();
            for (row, &si) in day.indices.iter().enumerate() {
                ytil[row] -= x[si];
            }
            let s_inv_y = &day.s_inv * &ytil;
            cost += half
                * (ytil.dot(&s_inv_y) + day.logdet + T::c(day.indices.len() as f64) * ln2pi);
            innovations.push(s_inv_y);
            xs.push(x);
        }
        for k in 1..k_total {
            let d = b[k] - b[k - 1];
            cost += c * d * d;
        }
        if let Some(prev) = junction {
            let d = b[0] - prev;
            cost += c * d * d;
        }
        if !cost.is_finite() {
            return Ok((T::infinity(), vec![T::zero(); k_total]));
        }

        // adjoint pass: lambda[k] = d cost / d x_k for k = k_total..1
        let mut grad = vec![T::zero(); k_total];
        let mut lambda = DVector::<T>::zeros(state::DIM);
        for k in (0..k_total).rev() {
            // measurement gradient at x_{k+1}
            let day = &self.days[k];
            let mut g = DVector::<T>::zeros(state::DIM);
            for (row, &si) in day.indices.iter().enumerate() {
                g[si] -= innovations[k][row];
            }
            lambda += g;
            grad[k] = lambda[state::E] * xs[k][state::PHI];
            if k > 0 {
                let f = self.f_of_beta(b[k]);
                lambda = f.transpose() * lambda;
            }
        }
        let two = T::c(2.0);
        for k in 0..k_total {
            if k > 0 {
                grad[k] += two * c * (b[k] - b[k - 1]);
            }
            if k + 1 < k_total {
                grad[k] -= two * c * (b[k + 1] - b[k]);
            }
        }
        if let Some(prev) = junction {
            grad[0] += two * c * (b[0] - prev);
        }
        Ok((cost, grad))
    }

    /// Cost only.
    pub fn cost(&self, b: &[T], junction: Option<T>) -> Result<T> {
        self.cost_and_grad(b, junction).map(|(c, _)| c)
    }

    /// The rate-dependent quadratic part of the data term alone.
    fn quadratic_misfit(&self, b: &[T]) -> Result<T> {
        let mut x = self.x0.clone();
        let half = T::c(0.5);
        let mut misfit = T::zero();
        for k in 0..b.len() {
            x = self.f_of_beta(b[k]) * x;
            let day = &self.days[k];
            let mut ytil = day.z.clone();
            for (row, &si) in day.indices.iter().enumerate() {
                ytil[row] -= x[si];
            }
            misfit += half * ytil.dot(&(&day.s_inv * &ytil));
        }
        Ok(misfit)
    }

    /// Default rate bounds: the image of the reproduction-number
    /// support `[0, 16]`, floored away from zero for the transform.
    pub fn default_bounds(&self) -> (T, T) {
        let hi = beta_from_r0(&self.params, &self.fractions, T::c(16.0));
        (T::c(1e-8), hi)
    }
}

// -------------------------------------------------------------------
// Bounded quasi-Newton solver

/// Map an unconstrained value onto `(lo, hi)`.
fn to_box<T: Scalar>(u: T, lo: T, hi: T) -> T {
    let s = T::one() / (T::one() + exp(-u));
    lo + (hi - lo) * s
}

fn from_box<T: Scalar>(x: T, lo: T, hi: T) -> T {
    let eps = T::c(1e-12);
    let z = minv(maxv((x - lo) / (hi - lo), eps), T::one() - eps);
    ln(z / (T::one() - z))
}

fn box_jacobian<T: Scalar>(u: T, lo: T, hi: T) -> T {
    let s = T::one() / (T::one() + exp(-u));
    (hi - lo) * s * (T::one() - s)
}

struct LbfgsOutcome<T> {
    x: Vec<T>,
    value: T,
    converged: bool,
}

/// Limited-memory BFGS with backtracking line search on a smooth
/// unconstrained objective.
fn lbfgs<T, F>(mut eval: F, x0: Vec<T>, tol: T, max_iters: usize) -> Result<LbfgsOutcome<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<(T, Vec<T>)>,
{
    const MEMORY: usize = 10;
    let n = x0.len();
    let mut x = DVector::from_vec(x0);
    let (mut fx, g) = eval(x.as_slice())?;
    let mut g = DVector::from_vec(g);
    let mut s_hist: Vec<DVector<T>> = Vec::new();
    let mut y_hist: Vec<DVector<T>> = Vec::new();
    let mut converged = false;

    for _ in 0..max_iters {
        if g.amax() < tol {
            converged = true;
            break;
        }
        // two-loop recursion
        let mut q = g.clone();
        let m = s_hist.len();
        let mut alpha = vec![T::zero(); m];
        for i in (0..m).rev() {
            let rho = T::one() / y_hist[i].dot(&s_hist[i]);
            alpha[i] = rho * s_hist[i].dot(&q);
            q -= &y_hist[i] * alpha[i];
        }
        if m > 0 {
            let gamma = s_hist[m - 1].dot(&y_hist[m - 1]) / y_hist[m - 1].dot(&y_hist[m - 1]);
            q *= gamma;
        } else {
            // with no curvature information yet, take a unit-size step
            q *= T::one() / maxv(T::one(), g.amax());
        }
        for i in 0..m {
            let rho = T::one() / y_hist[i].dot(&s_hist[i]);
            let beta = rho * y_hist[i].dot(&q);
            q += &s_hist[i] * (alpha[i] - beta);
        }
        let dir = -q;
        let slope = g.dot(&dir);
        if slope >= T::zero() {
            // not a descent direction; restart the memory
            s_hist.clear();
            y_hist.clear();
            continue;
        }

        // backtracking Armijo search
        let mut step = T::one();
        let c1 = T::c(1e-4);
        let mut improved = false;
        for _ in 0..40 {
            let cand = &x + &dir * step;
            let (f_new, g_new) = eval(cand.as_slice())?;
            if f_new.is_finite() && f_new <= fx + c1 * step * slope {
                let s_vec = &cand - &x;
                let g_new = DVector::from_vec(g_new);
                let y_vec = &g_new - &g;
                if y_vec.dot(&s_vec) > T::c(1e-14) {
                    s_hist.push(s_vec);
                    y_hist.push(y_vec);
                    if s_hist.len() > MEMORY {
                        s_hist.remove(0);
                        y_hist.remove(0);
                    }
                }
                x = cand;
                fx = f_new;
                g = g_new;
                improved = true;
                break;
            }
            step *= T::c(0.5);
        }
        if !improved {
            break;
        }
        let _ = n;
    }
    Ok(LbfgsOutcome {
        x: x.iter().copied().collect(),
        value: fx,
        converged,
    })
}

// -------------------------------------------------------------------
// Window and receding-horizon drivers

/// Minimize the mean-field cost over one window of daily rates.
///
/// `junction` carries the last fixed rate of the previous window; the
/// fluctuation penalty then also spans that junction. Non-convergence
/// returns the best iterate with `converged = false`.
pub fn optimize_window<T: Scalar>(
    problem: &MeanfieldProblem<T>,
    init_b: &[T],
    junction: Option<T>,
    cfg: &HorizonConfig<T>,
) -> Result<BetaTrajectory<T>> {
    let (lo, hi) = cfg.beta_bounds.unwrap_or_else(|| problem.default_bounds());
    let k = init_b.len();
    if k != problem.n_days() {
        return Err(Error::DimensionMismatch(
            "initial rates must cover the whole problem".into(),
        ));
    }
    let n_x0 = if cfg.optimize_x0 { state::DIM } else { 0 };
    let mut u0: Vec<T> = init_b.iter().map(|&b| from_box(b, lo, hi)).collect();
    if cfg.optimize_x0 {
        // initial state enters through a square root to stay nonnegative
        u0.extend(problem.x0.iter().map(|&v| sqrt(maxv(v, T::zero()))));
    }

    let mut scratch = problem.clone();
    let eval = |u: &[T]| -> Result<(T, Vec<T>)> {
        let b: Vec<T> = u[..k].iter().map(|&ui| to_box(ui, lo, hi)).collect();
        if cfg.optimize_x0 {
            for i in 0..state::DIM {
                let r = u[k + i];
                scratch.x0[i] = r * r;
            }
        }
        let (cost, grad_b) = scratch.cost_and_grad(&b, junction)?;
        let mut grad = vec![T::zero(); u.len()];
        for i in 0..k {
            grad[i] = grad_b[i] * box_jacobian(u[i], lo, hi);
        }
        if cfg.optimize_x0 && cost.is_finite() {
            // one-sided differences for the eight initial-state slots
            let base = cost;
            for i in 0..state::DIM {
                let r = u[k + i];
                let h = T::c(1e-4) * maxv(abs(r), T::one());
                let mut x0_bump = scratch.x0.clone();
                x0_bump[i] = (r + h) * (r + h);
                let saved = std::mem::replace(&mut scratch.x0, x0_bump);
                let bumped = scratch.cost(&b, junction)?;
                scratch.x0 = saved;
                grad[k + i] = (bumped - base) / h;
            }
        }
        Ok((cost, grad))
    };

    let outcome = lbfgs(eval, u0, cfg.tol, cfg.max_iters)?;
    let beta: Vec<T> = outcome.x[..k].iter().map(|&u| to_box(u, lo, hi)).collect();
    let r_t = beta
        .iter()
        .map(|&b| r0_from_beta(&problem.params, &problem.fractions, b))
        .collect();
    let _ = n_x0;
    Ok(BetaTrajectory {
        dates: problem.dates.clone(),
        beta,
        r_t,
        objective: outcome.value,
        c: problem.c,
        converged: outcome.converged,
    })
}

/// Restrict a problem to the day range `[start, end)`.
fn slice_problem<T: Scalar>(
    problem: &MeanfieldProblem<T>,
    start: usize,
    end: usize,
    x_start: DVector<T>,
) -> MeanfieldProblem<T> {
    MeanfieldProblem {
        params: problem.params,
        fractions: problem.fractions,
        x0: x_start,
        dates: problem.dates[start..end].to_vec(),
        days: problem.days[start..end].to_vec(),
        f_base: problem.f_base.clone(),
        c: problem.c,
    }
}

/// Estimate the full daily rate path by overlapping windows: each
/// window of `prediction_horizon` days is solved, its first `step`
/// days are kept (the final window in full), and the state is rolled
/// forward to seed the next window.
pub fn optimize_receding<T: Scalar>(
    problem: &MeanfieldProblem<T>,
    init_b: &[T],
    cfg: &HorizonConfig<T>,
) -> Result<BetaTrajectory<T>> {
    if cfg.step == 0 || cfg.step > cfg.prediction_horizon {
        return Err(Error::InvalidParameter(
            "window step must lie in [1, prediction horizon]".into(),
        ));
    }
    let k_total = problem.n_days();
    if init_b.len() != k_total {
        return Err(Error::DimensionMismatch(
            "initial rates must cover the whole series".into(),
        ));
    }

    let mut beta = Vec::with_capacity(k_total);
    let mut x_start = problem.x0.clone();
    let mut start = 0usize;
    let mut objective = T::zero();
    let mut converged = true;
    while start < k_total {
        let end = (start + cfg.prediction_horizon).min(k_total);
        let sub = slice_problem(problem, start, end, x_start.clone());
        let junction = beta.last().copied();
        let window = optimize_window(&sub, &init_b[start..end], junction, cfg).map_err(|e| {
            Error::Numerical(format!("window starting at day {start} failed: {e}"))
        })?;
        converged &= window.converged;
        let keep = if end == k_total {
            end - start
        } else {
            cfg.step.min(end - start)
        };
        for k in 0..keep {
            let b = window.beta[k];
            beta.push(b);
            x_start = problem.f_of_beta(b) * x_start;
        }
        objective = window.objective;
        if end == k_total {
            break;
        }
        start += keep;
    }

    // report the objective of the full concatenated path
    let full_cost = problem.cost(&beta, None)?;
    let _ = objective;
    let r_t = beta
        .iter()
        .map(|&b| r0_from_beta(&problem.params, &problem.fractions, b))
        .collect();
    Ok(BetaTrajectory {
        dates: problem.dates.clone(),
        beta,
        r_t,
        objective: full_cost,
        c: problem.c,
        converged,
    })
}

/// Write a trajectory as CSV: `date, beta, r_t`.
pub fn write_beta_csv<T: Scalar>(path: &std::path::Path, traj: &BetaTrajectory<T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["date", "beta", "r_t"])?;
    for i in 0..traj.beta.len() {
        w.write_record([
            traj.dates[i].to_string(),
            traj.beta[i].to_f64_lossy().to_string(),
            traj.r_t[i].to_f64_lossy().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
