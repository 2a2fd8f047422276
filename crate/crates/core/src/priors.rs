//! Prior distributions for the static and dynamic parameters,
//! JSON (de)serialization, and the Monte Carlo construction of the
//! hospital-admission prior.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParameterVector, HOSP_MORT, SIR_MORT};
use crate::scalar::{exp, ln, ln_gamma, normal_cdf, sqrt, Scalar};

/// A univariate prior descriptor.
#[derive(Debug, Clone, PartialEq)]
pub enum Prior<T: Scalar> {
    /// Beta(a, b) scaled and shifted onto `[lower, upper]`.
    ScaledBeta { a: T, b: T, lower: T, upper: T },
    /// Lognormal with normal parameters `(mu, sigma)` truncated to
    /// `[0, upper]`.
    TruncLogNormal { mu: T, sigma: T, upper: T },
    Uniform { lower: T, upper: T },
    PointMass { value: T },
}

impl<T: Scalar> Prior<T> {
    pub fn support(&self) -> (T, T) {
        match *self {
            Prior::ScaledBeta { lower, upper, .. } => (lower, upper),
            Prior::TruncLogNormal { upper, .. } => (T::zero(), upper),
            Prior::Uniform { lower, upper } => (lower, upper),
            Prior::PointMass { value } => (value, value),
        }
    }

    pub fn mean(&self) -> T {
        match *self {
            Prior::ScaledBeta { a, b, lower, upper } => lower + (upper - lower) * a / (a + b),
            Prior::TruncLogNormal { mu, sigma, upper } => {
                // E[X | X <= U] for a lognormal
                let z = (ln(upper) - mu) / sigma;
                let m = exp(mu + sigma * sigma / T::c(2.0));
                m * normal_cdf(z - sigma) / normal_cdf(z)
            }
            Prior::Uniform { lower, upper } => (lower + upper) / T::c(2.0),
            Prior::PointMass { value } => value,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        match *self {
            Prior::ScaledBeta { a, b, lower, upper } => {
                lower + (upper - lower) * T::beta_draw(rng, a, b)
            }
            Prior::TruncLogNormal { mu, sigma, upper } => loop {
                let z = T::std_normal(rng);
                let x = exp(mu + sigma * z);
                if x <= upper {
                    break x;
                }
            },
            Prior::Uniform { lower, upper } => rng.gen_range(lower..upper),
            Prior::PointMass { value } => value,
        }
    }

    /// Log density; `-inf` outside the support.
    pub fn logpdf(&self, x: T) -> T {
        let (lo, hi) = self.support();
        match *self {
            Prior::PointMass { value } => {
                if x == value {
                    T::zero()
                } else {
                    T::neg_infinity()
                }
            }
            _ if x < lo || x > hi => T::neg_infinity(),
            Prior::ScaledBeta { a, b, lower, upper } => {
                let one = T::one();
                let w = upper - lower;
                let z = (x - lower) / w;
                if z <= T::zero() || z >= one {
                    // density endpoints: finite only for a,b >= 1
                    return T::neg_infinity();
                }
                (a - one) * ln(z) + (b - one) * ln(one - z) - ln_beta(a, b) - ln(w)
            }
            Prior::TruncLogNormal { mu, sigma, upper } => {
                if x <= T::zero() {
                    return T::neg_infinity();
                }
                let half = T::c(0.5);
                let ln2pi = T::c((2.0 * std::f64::consts::PI).ln());
                let d = (ln(x) - mu) / sigma;
                let norm = normal_cdf((ln(upper) - mu) / sigma);
                -ln(x) - ln(sigma) - half * ln2pi - half * d * d - ln(norm)
            }
            Prior::Uniform { lower, upper } => -ln(upper - lower),
        }
    }
}

fn ln_beta<T: Scalar>(a: T, b: T) -> T {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Canonical order of the inferred static parameters.
pub const STATIC_NAMES: [&str; 10] = [
    "sigma", "gamma_I", "gamma_H", "gamma_W", "E2I", "IC_HOSP", "HOSP", "theta_E", "theta_A",
    "tau_half",
];

/// Priors for the ten inferred static parameters plus the two dynamic
/// ones.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSet<T: Scalar> {
    /// Static priors keyed by [`STATIC_NAMES`], in that order.
    pub statics: Vec<Prior<T>>,
    /// Per-window reproduction number; the square of a truncated
    /// lognormal on the state-at-infection scale.
    pub r_t: Prior<T>,
    /// Per-window infection fatality rate.
    pub ifr: Prior<T>,
}

impl<T: Scalar> PriorSet<T> {
    /// The shipped default priors.
    pub fn default_priors() -> Self {
        let sb = |a: f64, b: f64, lo: f64, hi: f64| Prior::ScaledBeta {
            a: T::c(a),
            b: T::c(b),
            lower: T::c(lo),
            upper: T::c(hi),
        };
        PriorSet {
            statics: vec![
                sb(2.0, 2.6, 0.14, 0.19),      // sigma
                sb(2.0, 5.0, 0.1, 0.25),       // gamma_I
                sb(3.0, 3.0, 0.110, 0.114),    // gamma_H
                sb(2.0, 2.0, 0.072, 0.092),    // gamma_W
                sb(52.56, 17.85, 0.014, 1.0),  // E2I
                sb(2.0, 13.21, 0.065, 0.94),   // IC_HOSP
                sb(2.03, 8.28, 0.0, 0.17),     // HOSP
                sb(2.0, 2.0, 0.0, 2.0),        // theta_E
                sb(2.0, 2.0, 0.0, 2.0),        // theta_A
                Prior::Uniform {
                    lower: T::c(1.0 / 24.0),
                    upper: T::c(12.0 / 24.0),
                },
            ],
            // square of TruncLogNormal(log 1.3, 0.4, [0, 4])
            r_t: Prior::TruncLogNormal {
                mu: T::c(2.0 * 1.3f64.ln()),
                sigma: T::c(0.8),
                upper: T::c(16.0),
            },
            ifr: sb(2.0, 4.0, 0.0, 0.02),
        }
    }

    /// Full sampling dimension for `n_windows` dynamic windows.
    pub fn dim(&self, n_windows: usize) -> usize {
        self.statics.len() + 2 * n_windows
    }

    /// Prior for coordinate `i` of the packed vector.
    pub fn coordinate(&self, i: usize, _n_windows: usize) -> &Prior<T> {
        if i < self.statics.len() {
            &self.statics[i]
        } else if (i - self.statics.len()) % 2 == 0 {
            &self.r_t
        } else {
            &self.ifr
        }
    }

    pub fn coordinate_name(&self, i: usize) -> String {
        if i < STATIC_NAMES.len() {
            STATIC_NAMES[i].to_string()
        } else {
            let w = (i - STATIC_NAMES.len()) / 2;
            if (i - STATIC_NAMES.len()) % 2 == 0 {
                format!("R_t[{w}]")
            } else {
                format!("IFR[{w}]")
            }
        }
    }

    /// Joint log prior density of a packed point; `-inf` outside any
    /// support.
    pub fn logpdf(&self, point: &nalgebra::DVector<T>, n_windows: usize) -> T {
        let mut acc = T::zero();
        for i in 0..self.dim(n_windows) {
            let v = self.coordinate(i, n_windows).logpdf(point[i]);
            if v == T::neg_infinity() {
                return T::neg_infinity();
            }
            acc += v;
        }
        acc
    }

    /// Draw a packed parameter point from the prior. `R_t` coordinates
    /// are drawn as the square of the truncated-lognormal draw on the
    /// state-at-infection scale.
    pub fn sample<R: Rng + ?Sized>(&self, n_windows: usize, rng: &mut R) -> nalgebra::DVector<T> {
        let mut v = nalgebra::DVector::zeros(self.dim(n_windows));
        for (i, p) in self.statics.iter().enumerate() {
            v[i] = p.sample(rng);
        }
        for w in 0..n_windows {
            v[self.statics.len() + 2 * w] = self.sample_r_t(rng);
            v[self.statics.len() + 2 * w + 1] = self.ifr.sample(rng);
        }
        v
    }

    /// One reproduction-number draw, squared from the
    /// state-at-infection scale.
    pub fn sample_r_t<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        match self.r_t {
            Prior::TruncLogNormal { mu, sigma, upper } => {
                let half = T::c(0.5);
                let phi_prior = Prior::TruncLogNormal {
                    mu: half * mu,
                    sigma: half * sigma,
                    upper: sqrt(upper),
                };
                let x = phi_prior.sample(rng);
                x * x
            }
            ref other => other.sample(rng),
        }
    }

    /// Packed point at the prior means.
    pub fn mean_point(&self, n_windows: usize) -> nalgebra::DVector<T> {
        let mut v = nalgebra::DVector::zeros(self.dim(n_windows));
        for i in 0..self.dim(n_windows) {
            v[i] = self.coordinate(i, n_windows).mean();
        }
        v
    }

    /// Interpret a packed point as static parameters plus per-window
    /// `(R_t, IFR)` values.
    pub fn unpack(
        &self,
        point: &nalgebra::DVector<T>,
        n_windows: usize,
    ) -> (ParameterVector<T>, Vec<T>, Vec<T>) {
        let s = &self.statics;
        debug_assert_eq!(point.len(), self.dim(n_windows));
        let _ = s;
        let p = ParameterVector {
            sigma: point[0],
            gamma_i: point[1],
            gamma_a: point[1],
            gamma_h: point[2],
            gamma_w: point[3],
            e2i: point[4],
            a2i: T::zero(),
            hosp: point[6],
            ic_hosp: point[5],
            theta_e: point[7],
            theta_a: point[8],
            tau_half: point[9],
            hosp_mort: T::c(HOSP_MORT),
            sir_mort: T::c(SIR_MORT),
        };
        let base = self.statics.len();
        let r_t = (0..n_windows).map(|w| point[base + 2 * w]).collect();
        let ifr = (0..n_windows).map(|w| point[base + 2 * w + 1]).collect();
        (p, r_t, ifr)
    }
}

// -------------------------------------------------------------------
// JSON representation

#[derive(Serialize, Deserialize)]
struct PriorSpec {
    kind: String,
    params: Vec<f64>,
    lower: f64,
    upper: f64,
}

impl<T: Scalar> Prior<T> {
    fn to_spec(&self) -> PriorSpec {
        match *self {
            Prior::ScaledBeta { a, b, lower, upper } => PriorSpec {
                kind: "scaled-beta".into(),
                params: vec![a.to_f64_lossy(), b.to_f64_lossy()],
                lower: lower.to_f64_lossy(),
                upper: upper.to_f64_lossy(),
            },
            Prior::TruncLogNormal { mu, sigma, upper } => PriorSpec {
                kind: "truncated-lognormal".into(),
                params: vec![mu.to_f64_lossy(), sigma.to_f64_lossy()],
                lower: 0.0,
                upper: upper.to_f64_lossy(),
            },
            Prior::Uniform { lower, upper } => PriorSpec {
                kind: "uniform".into(),
                params: vec![],
                lower: lower.to_f64_lossy(),
                upper: upper.to_f64_lossy(),
            },
            Prior::PointMass { value } => PriorSpec {
                kind: "point-mass".into(),
                params: vec![value.to_f64_lossy()],
                lower: value.to_f64_lossy(),
                upper: value.to_f64_lossy(),
            },
        }
    }

    fn from_spec(s: &PriorSpec) -> Result<Self> {
        match s.kind.as_str() {
            "scaled-beta" => {
                if s.params.len() != 2 {
                    return Err(Error::InvalidParameter(
                        "scaled-beta needs params [a, b]".into(),
                    ));
                }
                Ok(Prior::ScaledBeta {
                    a: T::c(s.params[0]),
                    b: T::c(s.params[1]),
                    lower: T::c(s.lower),
                    upper: T::c(s.upper),
                })
            }
            "truncated-lognormal" => {
                if s.params.len() != 2 {
                    return Err(Error::InvalidParameter(
                        "truncated-lognormal needs params [mu, sigma]".into(),
                    ));
                }
                Ok(Prior::TruncLogNormal {
                    mu: T::c(s.params[0]),
                    sigma: T::c(s.params[1]),
                    upper: T::c(s.upper),
                })
            }
            "uniform" => Ok(Prior::Uniform {
                lower: T::c(s.lower),
                upper: T::c(s.upper),
            }),
            "point-mass" => Ok(Prior::PointMass {
                value: T::c(s.params.first().copied().unwrap_or(s.lower)),
            }),
            k => Err(Error::InvalidParameter(format!("unknown prior kind {k}"))),
        }
    }
}

impl<T: Scalar> PriorSet<T> {
    pub fn to_json(&self) -> Result<String> {
        let mut map = BTreeMap::new();
        for (name, p) in STATIC_NAMES.iter().zip(&self.statics) {
            map.insert(name.to_string(), p.to_spec());
        }
        map.insert("R_t".to_string(), self.r_t.to_spec());
        map.insert("IFR".to_string(), self.ifr.to_spec());
        Ok(serde_json::to_string_pretty(&map)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let map: BTreeMap<String, PriorSpec> = serde_json::from_str(json)?;
        let mut statics = Vec::with_capacity(STATIC_NAMES.len());
        for name in STATIC_NAMES {
            let spec = map.get(name).ok_or_else(|| {
                Error::InvalidParameter(format!("prior file is missing parameter {name}"))
            })?;
            statics.push(Prior::from_spec(spec)?);
        }
        let r_t = Prior::from_spec(map.get("R_t").ok_or_else(|| {
            Error::InvalidParameter("prior file is missing parameter R_t".into())
        })?)?;
        let ifr = Prior::from_spec(map.get("IFR").ok_or_else(|| {
            Error::InvalidParameter("prior file is missing parameter IFR".into())
        })?)?;
        Ok(PriorSet { statics, r_t, ifr })
    }
}

// -------------------------------------------------------------------
// Hospital-admission prior reconstruction

/// Monte Carlo reconstruction of the hospital-admission prior.
///
/// Samples the fatality budget closure
/// `HOSP = (IFR / E2I)(1 - x) / ((1 + q)^2 (HOSP_MORT + IC_HOSP) SIR_MORT)`
/// with `x = IC_HOSP (1 - SIR_MORT)` and `q` the ratio of
/// out-of-hospital to in-hospital mortality, then fits a scaled beta by
/// method of moments on the padded sample range.
pub fn derive_hosp_prior<T: Scalar>(n_samples: usize, rng: &mut impl Rng) -> Result<Prior<T>> {
    let defaults = PriorSet::<T>::default_priors();
    let ifr_prior = &defaults.ifr;
    let e2i_prior = &defaults.statics[4];
    let ic_prior = &defaults.statics[5];
    let i_hw_prior = Prior::ScaledBeta {
        a: T::c(2.0),
        b: T::c(2.0),
        lower: T::zero(),
        upper: T::c(2.0),
    };
    let hm = T::c(HOSP_MORT);
    let sm = T::c(SIR_MORT);
    let one = T::one();

    let mut samples = Vec::with_capacity(n_samples);
    while samples.len() < n_samples {
        let ifr = ifr_prior.sample(rng);
        let e2i = e2i_prior.sample(rng);
        let ic = ic_prior.sample(rng);
        let q = i_hw_prior.sample(rng);
        let x = ic * (one - sm);
        let denom = (one + q) * (one + q) * (hm + ic) * sm;
        if denom <= T::zero() || e2i <= T::zero() {
            continue; // resample
        }
        samples.push(ifr / e2i * (one - x) / denom);
    }
    fit_scaled_beta(&samples)
}

/// Method-of-moments scaled-beta fit on `[min, max]` padded by 1%.
pub fn fit_scaled_beta<T: Scalar>(samples: &[T]) -> Result<Prior<T>> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no samples to fit".into()));
    }
    let n = T::c(samples.len() as f64);
    let mut lo = samples[0];
    let mut hi = samples[0];
    let mut mean = T::zero();
    for &s in samples {
        lo = crate::scalar::minv(lo, s);
        hi = crate::scalar::maxv(hi, s);
        mean += s;
    }
    mean /= n;
    if hi == lo {
        return Ok(Prior::PointMass { value: mean });
    }
    let pad = T::c(0.01) * (hi - lo);
    let lo = lo - pad;
    let hi = hi + pad;
    let w = hi - lo;
    let mut m = T::zero();
    let mut v = T::zero();
    for &s in samples {
        let z = (s - lo) / w;
        m += z;
        v += z * z;
    }
    m /= n;
    v = v / n - m * m;
    let one = T::one();
    if v <= T::zero() {
        return Ok(Prior::PointMass { value: mean });
    }
    let k = m * (one - m) / v - one;
    if k <= T::zero() {
        return Err(Error::Numerical(
            "sample moments incompatible with a beta fit".into(),
        ));
    }
    Ok(Prior::ScaledBeta {
        a: m * k,
        b: (one - m) * k,
        lower: lo,
        upper: hi,
    })
}
