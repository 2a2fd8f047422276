//! Scalar abstraction for the numeric core.
//!
//! All model math is generic over [`Scalar`], implemented for `f32` and
//! `f64`. Sampling primitives are part of the trait so that generic code
//! does not need to thread `rand_distr` bounds around.

use nalgebra::RealField;
use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::distributions::uniform::SampleUniform;
use rand::Rng;
use rand_distr::Distribution;

pub trait Scalar:
    RealField
    + Float
    + FromPrimitive
    + ToPrimitive
    + SampleUniform
    + Default
    + Copy
    + Send
    + Sync
    + serde::Serialize
    + serde::de::DeserializeOwned
    + 'static
{
    /// Convert an `f64` constant, panicking on failure (constants are
    /// always representable).
    fn c(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("constant not representable")
    }

    fn to_f64_lossy(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("scalar not convertible to f64")
    }

    /// Draw from the standard normal distribution.
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Draw uniformly from the open unit interval (0, 1).
    fn unit_open<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Draw from a Beta(a, b) distribution on (0, 1).
    fn beta_draw<R: Rng + ?Sized>(rng: &mut R, a: Self, b: Self) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rand_distr::StandardNormal.sample(rng)
            }

            fn unit_open<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rand_distr::Open01.sample(rng)
            }

            fn beta_draw<R: Rng + ?Sized>(rng: &mut R, a: Self, b: Self) -> Self {
                rand_distr::Beta::new(a, b)
                    .expect("invalid beta shape parameters")
                    .sample(rng)
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

// Free-function wrappers that resolve the `RealField`/`Float` method
// ambiguity at call sites.

#[inline]
pub fn exp<T: Scalar>(x: T) -> T {
    Float::exp(x)
}

#[inline]
pub fn ln<T: Scalar>(x: T) -> T {
    Float::ln(x)
}

#[inline]
pub fn sqrt<T: Scalar>(x: T) -> T {
    Float::sqrt(x)
}

#[inline]
pub fn abs<T: Scalar>(x: T) -> T {
    Float::abs(x)
}

#[inline]
pub fn powi<T: Scalar>(x: T, n: i32) -> T {
    Float::powi(x, n)
}

#[inline]
pub fn powf<T: Scalar>(x: T, y: T) -> T {
    Float::powf(x, y)
}

#[inline]
pub fn maxv<T: Scalar>(a: T, b: T) -> T {
    Float::max(a, b)
}

#[inline]
pub fn minv<T: Scalar>(a: T, b: T) -> T {
    Float::min(a, b)
}

/// Natural log of the gamma function (Lanczos, g = 7, n = 9).
///
/// Accurate to about 1e-13 in double precision over the positive axis.
pub fn ln_gamma<T: Scalar>(x: T) -> T {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let half = T::c(0.5);
    let one = T::one();
    if x < half {
        // reflection formula
        let pi = T::c(std::f64::consts::PI);
        return ln(pi / Float::sin(pi * x)) - ln_gamma(one - x);
    }
    let x = x - one;
    let mut acc = T::c(COEF[0]);
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += T::c(c) / (x + T::c(i as f64));
    }
    let t = x + T::c(7.5);
    let ln_sqrt_2pi = T::c(0.918_938_533_204_672_7);
    ln_sqrt_2pi + (x + half) * ln(t) - t + ln(acc)
}

/// Standard normal CDF via Hart/West double-precision rational
/// approximation; relative error around 1e-15.
pub fn normal_cdf<T: Scalar>(x: T) -> T {
    let xf = x.to_f64_lossy();
    T::c(normal_cdf_f64(xf))
}

fn normal_cdf_f64(x: f64) -> f64 {
    let z = x.abs();
    if z > 37.0 {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    let e = (-z * z / 2.0).exp();
    let cum = if z < 7.071_067_811_865_475 {
        let n = ((((((3.52624965998911e-2 * z + 0.700383064443688) * z + 6.37396220353165)
            * z
            + 33.912866078383)
            * z
            + 112.079291497871)
            * z
            + 221.213596169931)
            * z
            + 220.206867912376)
            * e;
        let d = ((((((8.83883476483184e-2 * z + 1.75566716318264) * z + 16.064177579207)
            * z
            + 86.7807322029461)
            * z
            + 296.564248779674)
            * z
            + 637.333633378831)
            * z
            + 793.826512519948)
            * z
            + 440.413735824752;
        n / d
    } else {
        let b = z + 0.65;
        let b = z + 4.0 / b;
        let b = z + 3.0 / b;
        let b = z + 2.0 / b;
        let b = z + 1.0 / b;
        e / (b * 2.506_628_274_631_000_5)
    };
    if x > 0.0 {
        1.0 - cum
    } else {
        cum
    }
}
