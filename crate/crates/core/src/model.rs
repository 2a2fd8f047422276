//! Transition-matrix builder, reproduction-number maps and case
//! fatality risks for the eight-state compartment model.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::params::{state, FractionSet, ParameterVector};
use crate::scalar::{exp, sqrt, Scalar};

/// Daily state-update matrix `F` over `[I, A, E, phi, H, W, D, R]`.
///
/// The infectious-pressure equation is integrated exactly over the day,
/// so the shedding entries carry the factor `1 - exp(-rho)` with the
/// dimensionless scalings `theta_A`, `theta_E`. The `D` and `R` columns
/// are pure accumulators.
pub fn build_transition_matrix<T: Scalar>(
    p: &ParameterVector<T>,
    f: &FractionSet<T>,
    beta: T,
) -> DMatrix<T> {
    use state::*;
    let one = T::one();
    let decay = exp(-p.rho());
    let shed = one - decay;

    let mut m = DMatrix::<T>::zeros(DIM, DIM);
    m[(I, I)] = one - p.gamma_i;
    m[(I, A)] = p.gamma_a * f.f1;
    m[(I, E)] = p.sigma * f.f0;

    m[(A, A)] = one - p.gamma_a;
    m[(A, E)] = p.sigma * (one - f.f0);

    m[(E, E)] = one - p.sigma;
    m[(E, PHI)] = beta;

    m[(PHI, I)] = shed;
    m[(PHI, A)] = p.theta_a * shed;
    m[(PHI, E)] = p.theta_e * shed;
    m[(PHI, PHI)] = decay;

    m[(H, I)] = p.gamma_i * f.f2;
    m[(H, H)] = one - p.gamma_h;
    m[(H, W)] = p.gamma_w * (one - f.f4);

    m[(W, H)] = p.gamma_h * f.f3;
    m[(W, W)] = one - p.gamma_w;

    m[(D, I)] = p.gamma_i * f.f2d;
    m[(D, H)] = p.gamma_h * f.f3d;
    m[(D, W)] = p.gamma_w * f.f4;
    m[(D, D)] = one;

    m[(R, I)] = p.gamma_i * (one - f.f2 - f.f2d);
    m[(R, A)] = p.gamma_a * (one - f.f1);
    m[(R, H)] = p.gamma_h * (one - f.f3 - f.f3d);
    m[(R, R)] = one;

    m
}

/// Reproduction number from the infection rate by the next-generation
/// map.
pub fn r0_from_beta<T: Scalar>(p: &ParameterVector<T>, f: &FractionSet<T>, beta: T) -> T {
    beta * r0_factor(p, f)
}

/// Exact algebraic inverse of [`r0_from_beta`]; the map is linear in
/// `beta`.
pub fn beta_from_r0<T: Scalar>(p: &ParameterVector<T>, f: &FractionSet<T>, r0: T) -> T {
    r0 / r0_factor(p, f)
}

fn r0_factor<T: Scalar>(p: &ParameterVector<T>, f: &FractionSet<T>) -> T {
    let one = T::one();
    p.theta_e / p.sigma
        + (one - f.f0) * p.theta_a / p.gamma_a
        + (f.f0 + (one - f.f0) * f.f1) / p.gamma_i
}

/// Reproduction number under the state-at-infection reading of the
/// infectious pressure.
pub fn r0_phi<T: Scalar>(r0: T) -> T {
    sqrt(r0)
}

/// Compartment whose eventual death risk is requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfrCompartment {
    I,
    H,
    W,
}

/// Case fatality risk: probability of eventual death for an individual
/// currently in the given compartment.
///
/// Solves the fate system of the absorbing chain, where intensive care
/// exits back to hospital with share `1 - F4`:
/// `p_W = F4 + (1 - F4) p_H`, `p_H = F3d + F3 p_W`,
/// `p_I = F2d + F2 p_H`.
pub fn cfr<T: Scalar>(f: &FractionSet<T>, compartment: CfrCompartment) -> Result<T> {
    f.validate()?;
    let one = T::one();
    let loop_mass = f.f3 * (one - f.f4);
    if loop_mass >= one {
        return Err(Error::Numerical(
            "degenerate hospital/intensive-care loop: F3 (1 - F4) >= 1".into(),
        ));
    }
    let p_h = (f.f3d + f.f3 * f.f4) / (one - loop_mass);
    let p_w = f.f4 + (one - f.f4) * p_h;
    let p_i = f.f2d + f.f2 * p_h;
    Ok(match compartment {
        CfrCompartment::I => p_i,
        CfrCompartment::H => p_h,
        CfrCompartment::W => p_w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::derive_fractions;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn means() -> (ParameterVector<f64>, FractionSet<f64>) {
        let p = ParameterVector::prior_means();
        let f = derive_fractions(&p, 0.0067).unwrap();
        (p, f)
    }

    #[test]
    fn zero_beta_gives_isolated_e_row() {
        let (p, f) = means();
        let m = build_transition_matrix(&p, &f, 0.0);
        assert_eq!(m[(state::E, state::PHI)], 0.0);
        assert_relative_eq!(m[(state::E, state::E)], 1.0 - p.sigma);
        for j in [state::I, state::A, state::H, state::W, state::D, state::R] {
            assert_eq!(m[(state::E, j)], 0.0);
        }
    }

    #[test]
    fn fast_decay_limit_of_phi_row() {
        let (p, _) = means();
        let mut p = p;
        p.tau_half = 1e-12;
        let f = derive_fractions(&p, 0.0067).unwrap();
        let m = build_transition_matrix(&p, &f, 1.0);
        assert_relative_eq!(m[(state::PHI, state::I)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(m[(state::PHI, state::A)], p.theta_a, epsilon = 1e-12);
        assert_relative_eq!(m[(state::PHI, state::E)], p.theta_e, epsilon = 1e-12);
        assert_relative_eq!(m[(state::PHI, state::PHI)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn column_mass_balance() {
        // each person-compartment column distributes exactly unit mass
        // over the person compartments (phi entries excluded)
        let (p, f) = means();
        let m = build_transition_matrix(&p, &f, 0.7);
        for col in [state::I, state::A, state::E, state::H, state::W] {
            let mut sum = 0.0;
            for row in 0..state::DIM {
                if row != state::PHI {
                    sum += m[(row, col)];
                }
            }
            // column E feeds from phi, which is not mass
            let expected = 1.0;
            assert_relative_eq!(sum, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn r0_at_prior_means_is_13_2_per_beta() {
        let mut p = ParameterVector::<f64>::prior_means();
        p.sigma = 1.0 / 6.2;
        p.gamma_i = 1.0 / 7.0;
        p.gamma_a = p.gamma_i;
        p.theta_e = 1.0;
        p.theta_a = 1.0;
        let f = derive_fractions(&p, 0.0067).unwrap();
        assert_relative_eq!(r0_from_beta(&p, &f, 1.0), 13.2, epsilon = 1e-12);
        assert_eq!(r0_from_beta(&p, &f, 0.0), 0.0);
    }

    #[test]
    fn r0_reduces_to_sir_formula() {
        let mut p = ParameterVector::<f64>::prior_means();
        p.theta_e = 0.0;
        p.theta_a = 0.0;
        p.e2i = 1.0;
        let f = derive_fractions(&p, 0.0).unwrap();
        let beta = 0.35;
        assert_relative_eq!(r0_from_beta(&p, &f, beta), beta / p.gamma_i, epsilon = 1e-14);
    }

    #[test]
    fn beta_r0_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let mut p = ParameterVector::<f64>::prior_means();
            p.sigma = rng.gen_range(0.14..0.19);
            p.gamma_i = rng.gen_range(0.1..0.25);
            p.gamma_a = p.gamma_i;
            p.theta_e = rng.gen_range(0.0..2.0);
            p.theta_a = rng.gen_range(0.0..2.0);
            p.e2i = rng.gen_range(0.1..1.0);
            let f = derive_fractions(&p, rng.gen_range(0.0..0.02)).unwrap();
            let beta = rng.gen_range(0.01..2.0);
            let r0 = r0_from_beta(&p, &f, beta);
            assert_relative_eq!(beta_from_r0(&p, &f, r0), beta, epsilon = 1e-12);
        }
    }

    #[test]
    fn r0_phi_examples() {
        assert_eq!(r0_phi(0.0f64), 0.0);
        assert_eq!(r0_phi(1.0f64), 1.0);
        assert!((r0_phi(13.2f64) - 3.6332).abs() < 1e-4);
    }

    #[test]
    fn cfr_certain_death_from_w() {
        let f = FractionSet {
            f0: 0.75,
            f1: 0.0,
            f2: 0.03,
            f2d: 0.0,
            f3: 0.2,
            f3d: 0.0,
            f4: 1.0,
        };
        assert_eq!(cfr(&f, CfrCompartment::W).unwrap(), 1.0);
    }

    #[test]
    fn cfr_no_hospital_deaths() {
        let f = FractionSet {
            f0: 0.75,
            f1: 0.0,
            f2: 0.03,
            f2d: 0.0,
            f3: 0.0,
            f3d: 0.0,
            f4: 0.2,
        };
        assert_eq!(cfr(&f, CfrCompartment::H).unwrap(), 0.0);
    }

    /// Individual-level Monte Carlo walk through the fate chain.
    fn simulate_fate(f: &FractionSet<f64>, start: CfrCompartment, n: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut deaths = 0usize;
        for _ in 0..n {
            let mut at = start;
            loop {
                let u: f64 = rng.gen();
                match at {
                    CfrCompartment::I => {
                        if u < f.f2d {
                            deaths += 1;
                            break;
                        } else if u < f.f2d + f.f2 {
                            at = CfrCompartment::H;
                        } else {
                            break;
                        }
                    }
                    CfrCompartment::H => {
                        if u < f.f3d {
                            deaths += 1;
                            break;
                        } else if u < f.f3d + f.f3 {
                            at = CfrCompartment::W;
                        } else {
                            break;
                        }
                    }
                    CfrCompartment::W => {
                        if u < f.f4 {
                            deaths += 1;
                            break;
                        } else {
                            at = CfrCompartment::H;
                        }
                    }
                }
            }
        }
        deaths as f64 / n as f64
    }

    #[test]
    fn cfr_matches_monte_carlo_fates() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..5 {
            let f = FractionSet {
                f0: 0.75,
                f1: 0.0,
                f2: rng.gen_range(0.0..0.3),
                f2d: rng.gen_range(0.0..0.05),
                f3: rng.gen_range(0.0..0.4),
                f3d: rng.gen_range(0.0..0.2),
                f4: rng.gen_range(0.05..0.6),
            };
            let n = 1_000_000;
            for c in [CfrCompartment::I, CfrCompartment::H, CfrCompartment::W] {
                let exact = cfr(&f, c).unwrap();
                let mc = simulate_fate(&f, c, n, 100 + trial);
                let se = (exact * (1.0 - exact) / n as f64).sqrt().max(1e-9);
                assert!(
                    (mc - exact).abs() < 3.0 * se + 1e-6,
                    "trial {trial}: exact {exact} mc {mc}"
                );
            }
        }
    }

    #[test]
    fn cfr_monotone_in_f2_and_f2d() {
        let base = FractionSet {
            f0: 0.75,
            f1: 0.0,
            f2: 0.0,
            f2d: 0.0,
            f3: 0.2,
            f3d: 0.05,
            f4: 0.3,
        };
        let mut prev = -1.0;
        for i in 0..20 {
            let mut f = base;
            f.f2 = 0.02 * i as f64;
            let v = cfr(&f, CfrCompartment::I).unwrap();
            assert!(v >= prev);
            prev = v;
        }
        prev = -1.0;
        for i in 0..20 {
            let mut f = base;
            f.f2d = 0.02 * i as f64;
            let v = cfr(&f, CfrCompartment::I).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn cfr_rejects_degenerate_loop() {
        let f = FractionSet {
            f0: 0.75,
            f1: 0.0,
            f2: 0.03,
            f2d: 0.0,
            f3: 1.0,
            f3d: 0.0,
            f4: 0.0,
        };
        assert!(cfr(&f, CfrCompartment::H).is_err());
    }
}
