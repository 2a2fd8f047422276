//! Static model parameters, probabilistic fate fractions and the
//! piecewise-constant dynamic schedule.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{maxv, Scalar};

/// Fixed mortality risk from hospital care.
pub const HOSP_MORT: f64 = 0.1322;
/// Fixed mortality risk from intensive care.
pub const SIR_MORT: f64 = 0.2129;

/// State vector ordering `[I, A, E, phi, H, W, D, R]`.
pub mod state {
    pub const I: usize = 0;
    pub const A: usize = 1;
    pub const E: usize = 2;
    pub const PHI: usize = 3;
    pub const H: usize = 4;
    pub const W: usize = 5;
    pub const D: usize = 6;
    pub const R: usize = 7;
    pub const DIM: usize = 8;
}

/// The static rates, fractions and constants of the compartment model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ParameterVector<T: Scalar> {
    /// Latent-period exit rate (1/day).
    pub sigma: T,
    /// Symptomatic recovery rate (1/day).
    pub gamma_i: T,
    /// Asymptomatic recovery rate; tied to `gamma_i`.
    pub gamma_a: T,
    /// Hospital exit rate (1/day).
    pub gamma_h: T,
    /// Intensive-care exit rate (1/day).
    pub gamma_w: T,
    /// Fraction of exposed that become symptomatic (F0).
    pub e2i: T,
    /// Fraction of asymptomatic that turn symptomatic (F1, fixed 0).
    pub a2i: T,
    /// Fraction of symptomatic admitted to hospital (F2).
    pub hosp: T,
    /// Fraction of hospitalized moved to intensive care (F3).
    pub ic_hosp: T,
    /// Shedding scaling from exposed (dimensionless).
    pub theta_e: T,
    /// Shedding scaling from asymptomatic (dimensionless).
    pub theta_a: T,
    /// Infectious-pressure half-life (days).
    pub tau_half: T,
    /// Mortality risk from hospital care (fixed constant).
    pub hosp_mort: T,
    /// Mortality risk from intensive care (fixed constant).
    pub sir_mort: T,
}

impl<T: Scalar> ParameterVector<T> {
    /// Infectious-pressure decay rate, `log(2) / tau_half`.
    pub fn rho(&self) -> T {
        T::c(std::f64::consts::LN_2) / self.tau_half
    }

    /// Parameter point at the prior means; a convenient valid default.
    pub fn prior_means() -> Self {
        Self {
            sigma: T::c(1.0 / 6.2),
            gamma_i: T::c(1.0 / 7.0),
            gamma_a: T::c(1.0 / 7.0),
            gamma_h: T::c(1.0 / 8.9),
            gamma_w: T::c(1.0 / 12.2),
            e2i: T::c(0.75),
            a2i: T::zero(),
            hosp: T::c(0.033),
            ic_hosp: T::c(0.18),
            theta_e: T::one(),
            theta_a: T::one(),
            tau_half: T::c(6.5 / 24.0),
            hosp_mort: T::c(HOSP_MORT),
            sir_mort: T::c(SIR_MORT),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("sigma", self.sigma),
            ("gamma_I", self.gamma_i),
            ("gamma_A", self.gamma_a),
            ("gamma_H", self.gamma_h),
            ("gamma_W", self.gamma_w),
            ("tau_half", self.tau_half),
        ];
        for (name, r) in rates {
            if !(r > T::zero()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be strictly positive"
                )));
            }
        }
        let fracs = [
            ("E2I", self.e2i),
            ("A2I", self.a2i),
            ("HOSP", self.hosp),
            ("IC_HOSP", self.ic_hosp),
        ];
        for (name, f) in fracs {
            if f < T::zero() || f > T::one() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in [0, 1]"
                )));
            }
        }
        if self.gamma_a != self.gamma_i {
            return Err(Error::InvalidParameter(
                "gamma_A must equal gamma_I".into(),
            ));
        }
        if self.theta_e < T::zero() || self.theta_a < T::zero() {
            return Err(Error::InvalidParameter(
                "shedding scalings must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Probabilistic fates `[F0, F1, F2, F2d, F3, F3d, F4]` of individuals
/// in compartments with more than one exit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FractionSet<T: Scalar> {
    pub f0: T,
    pub f1: T,
    pub f2: T,
    pub f2d: T,
    pub f3: T,
    pub f3d: T,
    pub f4: T,
}

impl<T: Scalar> FractionSet<T> {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("F0", self.f0),
            ("F1", self.f1),
            ("F2", self.f2),
            ("F2d", self.f2d),
            ("F3", self.f3),
            ("F3d", self.f3d),
            ("F4", self.f4),
        ] {
            if f < T::zero() || f > T::one() {
                return Err(Error::InfeasibleFractions(format!(
                    "{name} outside [0, 1]"
                )));
            }
        }
        if self.f2 + self.f2d > T::one() {
            return Err(Error::InfeasibleFractions(
                "recovery fraction 1 - F2 - F2d negative".into(),
            ));
        }
        if self.f3 + self.f3d > T::one() {
            return Err(Error::InfeasibleFractions(
                "recovery fraction 1 - F3 - F3d negative".into(),
            ));
        }
        Ok(())
    }
}

/// Derive the fate fractions from a parameter point and an infection
/// fatality rate.
///
/// The death fraction out of `I` closes the total fatality budget: the
/// per-symptomatic death risk through the hospital chain is subtracted
/// from `IFR / E2I` and the remainder, clamped at zero, dies directly
/// from `I`.
pub fn derive_fractions<T: Scalar>(p: &ParameterVector<T>, ifr: T) -> Result<FractionSet<T>> {
    p.validate()?;
    if ifr < T::zero() || ifr > T::one() {
        return Err(Error::InvalidParameter("IFR must lie in [0, 1]".into()));
    }
    let one = T::one();
    let f3d = p.sir_mort * p.hosp_mort;
    let x = p.ic_hosp * (one - p.sir_mort);
    let chain = (p.hosp_mort + p.ic_hosp) * p.sir_mort * p.hosp / (one - x);
    let f2d = maxv(T::zero(), ifr / p.e2i - chain);
    let f = FractionSet {
        f0: p.e2i,
        f1: p.a2i,
        f2: p.hosp,
        f2d,
        f3: p.ic_hosp,
        f3d,
        f4: p.sir_mort,
    };
    f.validate()?;
    Ok(f)
}

/// Piecewise-constant dynamic parameters: one `(R_t, IFR)` pair per
/// four-week window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DynamicSchedule<T: Scalar> {
    /// Start date of each window, in increasing order.
    pub window_starts: Vec<NaiveDate>,
    /// Window length in days (28 by default).
    pub window_days: usize,
    pub r_t: Vec<T>,
    pub ifr: Vec<T>,
}

impl<T: Scalar> DynamicSchedule<T> {
    /// Build a schedule of consecutive windows covering `total_days`
    /// starting at `start`.
    pub fn new(
        start: NaiveDate,
        total_days: usize,
        window_days: usize,
        r_t: Vec<T>,
        ifr: Vec<T>,
    ) -> Result<Self> {
        let n = total_days.div_ceil(window_days);
        if r_t.len() != n || ifr.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "expected {n} windows, got {} R_t and {} IFR values",
                r_t.len(),
                ifr.len()
            )));
        }
        let window_starts = (0..n)
            .map(|i| start + chrono::Duration::days((i * window_days) as i64))
            .collect();
        Ok(Self {
            window_starts,
            window_days,
            r_t,
            ifr,
        })
    }

    pub fn n_windows(&self) -> usize {
        self.r_t.len()
    }

    /// Window index covering day offset `day` from the schedule start.
    pub fn window_of_day(&self, day: usize) -> usize {
        (day / self.window_days).min(self.n_windows() - 1)
    }

    /// Time-averaged `R_t` over the whole schedule.
    pub fn mean_r_t(&self) -> T {
        mean(&self.r_t)
    }

    /// Time-averaged IFR over the whole schedule.
    pub fn mean_ifr(&self) -> T {
        mean(&self.ifr)
    }
}

fn mean<T: Scalar>(xs: &[T]) -> T {
    let mut s = T::zero();
    for &x in xs {
        s += x;
    }
    s / T::c(xs.len() as f64)
}
