//! Acceptance gate: one test per release criterion, each printing a
//! single pass/fail line (run with `--nocapture` to see them).

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use epimon_core::bootstrap::{bias_estimate, bootstrap_stats, reduce_samples, simulate_synthetic};
use epimon_core::data::{default_thresholds, smooth_series, ObservationSeries};
use epimon_core::kalman::{
    assemble_process_noise, filter_step_with, init_state, measurement_noise, predict_ahead,
    run_filter, window_matrices, NoiseConfig, ObservationModel,
};
use epimon_core::model::{beta_from_r0, build_transition_matrix, cfr, r0_from_beta, CfrCompartment};
use epimon_core::optimizer::{optimize_receding, optimize_window, HorizonConfig, MeanfieldProblem};
use epimon_core::params::{derive_fractions, state, DynamicSchedule, ParameterVector};
use epimon_core::priors::{Prior, PriorSet};
use epimon_core::sampler::{am_run, gelman_rubin, AmConfig, PosteriorChain};

fn verdict(n: usize, desc: &str, ok: bool) {
    println!("criterion {n}: {} - {desc}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {desc}");
}

fn start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 4, 1).unwrap()
}

// -------------------------------------------------------------------
// 1. Likelihood oracle equivalence

#[test]
fn criterion_1_likelihood_matches_closed_form() {
    let t0 = std::time::Instant::now();
    let f = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.05, 0.95]);
    let q = DMatrix::from_row_slice(2, 2, &[0.3, 0.05, 0.05, 0.2]);
    let r = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.4]);
    let p0 = DMatrix::from_row_slice(2, 2, &[4.0, 0.5, 0.5, 2.0]);
    let m0 = DVector::from_row_slice(&[10.0, 5.0]);
    let obs = ObservationModel { indices: vec![0, 1] };
    let ys = [
        [10.5, 5.2],
        [10.1, 5.9],
        [9.4, 6.3],
        [9.9, 6.8],
        [9.0, 7.1],
    ];

    // run the filter over T = 5 days
    let mut fs = epimon_core::kalman::FilterState {
        mean: m0.clone(),
        cov: p0.clone(),
        loglik: 0.0,
        k: 0,
    };
    for y in &ys {
        fs = filter_step_with(&fs, &f, &obs, &[Some(y[0]), Some(y[1])], &q, &r).unwrap();
    }

    // closed-form joint density of the stacked observations
    let t = ys.len();
    let mut pow = vec![DMatrix::<f64>::identity(2, 2)];
    for k in 0..t {
        pow.push(&f * &pow[k]);
    }
    let mut mu = DVector::<f64>::zeros(2 * t);
    let mut sigma = DMatrix::<f64>::zeros(2 * t, 2 * t);
    for j in 1..=t {
        mu.rows_mut(2 * (j - 1), 2).copy_from(&(&pow[j] * &m0));
        for k in 1..=t {
            let mut block = &pow[j] * &p0 * pow[k].transpose();
            for i in 1..=j.min(k) {
                block += &pow[j - i] * &q * pow[k - i].transpose();
            }
            if j == k {
                block += &r;
            }
            sigma
                .view_mut((2 * (j - 1), 2 * (k - 1)), (2, 2))
                .copy_from(&block);
        }
    }
    let y_stack = DVector::from_iterator(2 * t, ys.iter().flatten().copied());
    let chol = sigma.clone().cholesky().unwrap();
    let resid = &y_stack - &mu;
    let quad = resid.dot(&chol.solve(&resid));
    let logdet: f64 = (0..2 * t).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>() * 2.0;
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let closed = -0.5 * (2.0 * t as f64 * ln2pi + logdet + quad);

    let ok = (fs.loglik - closed).abs() < 1e-8 && t0.elapsed().as_secs_f64() < 1.0;
    verdict(
        1,
        "filter marginal log-likelihood equals the closed-form joint normal density to 1e-8",
        ok,
    );
}

// -------------------------------------------------------------------
// 2. Reproduction-number formula

#[test]
fn criterion_2_reproduction_number_formula_and_round_trip() {
    let t0 = std::time::Instant::now();
    let p = ParameterVector::<f64>::prior_means();
    let f = derive_fractions(&p, 0.0067).unwrap();
    let factor_ok = (r0_from_beta(&p, &f, 1.0) - 13.2).abs() < 1e-12;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut trip_ok = true;
    for _ in 0..1000 {
        let ifr: f64 = rng.gen_range(0.001..0.02);
        let fr = derive_fractions(&p, ifr).unwrap();
        let beta: f64 = rng.gen_range(0.01..2.0);
        let back = beta_from_r0(&p, &fr, r0_from_beta(&p, &fr, beta));
        trip_ok &= (back - beta).abs() < 1e-12;
    }
    verdict(
        2,
        "reference-point reproduction number is 13.2 beta; round trip exact over 1000 draws",
        factor_ok && trip_ok && t0.elapsed().as_secs_f64() < 1.0,
    );
}

// -------------------------------------------------------------------
// Shared synthetic machinery for the inference criteria

/// Expand a windowed schedule into the daily-rate trajectory that the
/// simulator consumes.
fn daily_rates(
    p: &ParameterVector<f64>,
    sched: &DynamicSchedule<f64>,
    days: usize,
) -> epimon_core::optimizer::BetaTrajectory<f64> {
    epimon_core::optimizer::BetaTrajectory {
        dates: (0..days as i64)
            .map(|o| sched.window_starts[0] + chrono::Duration::days(o))
            .collect(),
        beta: (0..days)
            .map(|k| {
                let w = sched.window_of_day(k);
                let fr = derive_fractions(p, sched.ifr[w]).unwrap();
                beta_from_r0(p, &fr, sched.r_t[w])
            })
            .collect(),
        r_t: (0..days).map(|k| sched.r_t[sched.window_of_day(k)]).collect(),
        objective: 0.0,
        c: 0.0,
        converged: true,
    }
}

/// Simulated epidemic at a known truth point, returned with its
/// schedule and the packed truth vector.
fn simulated_truth(
    r_windows: &[f64],
    n_days: usize,
    seed: u64,
) -> (
    PriorSet<f64>,
    DVector<f64>,
    ObservationSeries<f64>,
    DynamicSchedule<f64>,
) {
    let priors = PriorSet::<f64>::default_priors();
    let n_windows = n_days.div_ceil(28);
    assert_eq!(r_windows.len(), n_windows);
    let mut truth = priors.mean_point(n_windows);
    for (w, r) in r_windows.iter().enumerate() {
        truth[10 + 2 * w] = *r;
    }
    let (p, r_t, ifr) = priors.unpack(&truth, n_windows);
    let sched = DynamicSchedule::new(start_date(), n_days, 28, r_t, ifr).unwrap();
    let daily = daily_rates(&p, &sched, n_days - 1);
    let mut init = [0.0; state::DIM];
    init[state::E] = 60.0;
    init[state::I] = 45.0;
    init[state::A] = 15.0;
    init[state::PHI] = 50.0;
    init[state::H] = 12.0;
    init[state::W] = 2.0;
    let ds = simulate_synthetic(
        &p,
        &daily,
        &sched,
        n_days - 1,
        &init,
        &NoiseConfig::default(),
        seed,
    )
    .unwrap();
    (priors, truth, ds.series, sched)
}

/// Wrap reduced 12-dimensional rows back into a chain for diagnostics.
fn reduced_chain(chain: &PosteriorChain<f64>, burn_in: usize) -> PosteriorChain<f64> {
    let rows = reduce_samples(chain, burn_in).unwrap();
    PosteriorChain {
        samples: rows
            .into_iter()
            .map(|r| DVector::from_vec(r))
            .collect(),
        log_posterior: vec![],
        accepted: vec![],
        cov_checkpoints: vec![],
        seed: chain.seed,
        likelihood_failures: 0,
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

// -------------------------------------------------------------------
// 3. Synthetic parameter recovery

#[test]
fn criterion_3_synthetic_parameter_recovery() {
    let r_windows = [1.6, 1.5, 1.3, 1.1, 0.95, 0.9, 1.0, 1.1, 1.05, 0.95, 0.9];
    let (priors, truth, series, _) = simulated_truth(&r_windows, 300, 33);

    // 20k stored samples per chain, thinned 10x so the slow
    // shedding-scaling ridge decorrelates within the budget; starts
    // are overdispersed around the truth
    let cfg = AmConfig {
        c0_scale: 1e-6,
        s: Some(2.38f64.powi(2) / 32.0),
        n_samples: 20_000,
        burn_in: 10_000,
        thin: 10,
        ..AmConfig::default()
    };
    let noise = NoiseConfig::default();
    let chains: Vec<PosteriorChain<f64>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..4u64)
            .map(|c| {
                let (priors, series, truth, cfg, noise) =
                    (&priors, &series, &truth, &cfg, &noise);
                scope.spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(900 + c);
                    let draw = priors.sample(truth.len() / 2 - 5, &mut rng);
                    let init = truth + (&draw - truth) * 0.1;
                    am_run(priors, series, 28, noise, cfg, Some(init), 300 + c).unwrap()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });

    // truth in the twelve reported dimensions
    let truth_chain = PosteriorChain {
        samples: vec![truth.clone(), truth.clone()],
        log_posterior: vec![],
        accepted: vec![],
        cov_checkpoints: vec![],
        seed: 0,
        likelihood_failures: 0,
    };
    let truth_reduced = reduce_samples(&truth_chain, 0).unwrap()[0].clone();

    let mut pooled: Vec<Vec<f64>> = Vec::new();
    for c in &chains {
        pooled.extend(reduce_samples(c, cfg.burn_in).unwrap());
    }
    let mut cover68 = 0;
    let mut cover95 = 0;
    for j in 0..12 {
        let mut col: Vec<f64> = pooled.iter().map(|r| r[j]).collect();
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let t = truth_reduced[j];
        if quantile(&col, 0.16) <= t && t <= quantile(&col, 0.84) {
            cover68 += 1;
        }
        if quantile(&col, 0.025) <= t && t <= quantile(&col, 0.975) {
            cover95 += 1;
        }
    }

    let reduced: Vec<PosteriorChain<f64>> =
        chains.iter().map(|c| reduced_chain(c, cfg.burn_in)).collect();
    let refs: Vec<&PosteriorChain<f64>> = reduced.iter().collect();
    let max_gr = (0..12)
        .map(|d| gelman_rubin(&refs, d).unwrap())
        .fold(0.0f64, f64::max);

    println!(
        "  recovery detail: 68% CrIs cover {cover68}/12, 95% cover {cover95}/12, max GR {max_gr:.4}"
    );
    verdict(
        3,
        "posterior recovers simulated truth (>=7/12 at 68%, >=10/12 at 95%, Gelman-Rubin < 1.1)",
        cover68 >= 7 && cover95 >= 10 && max_gr < 1.1,
    );
}

// -------------------------------------------------------------------
// 4. Daily transmission-rate recovery

#[test]
fn criterion_4_daily_rate_recovery() {
    let p = ParameterVector::<f64>::prior_means();
    let fr = derive_fractions(&p, 0.0067).unwrap();
    let days = 200usize;

    // piecewise-linear reproduction number with three segments
    let r_of_day = |k: usize| -> f64 {
        let k = k as f64;
        if k <= 80.0 {
            1.6 + (0.9 - 1.6) * k / 80.0
        } else if k <= 140.0 {
            0.9 + (1.2 - 0.9) * (k - 80.0) / 60.0
        } else {
            1.2 + (1.0 - 1.2) * (k - 140.0) / 59.0
        }
    };
    let beta_true: Vec<f64> = (0..days).map(|k| beta_from_r0(&p, &fr, r_of_day(k))).collect();

    let mut x0 = DVector::<f64>::zeros(8);
    x0[state::E] = 60.0;
    x0[state::I] = 45.0;
    x0[state::A] = 15.0;
    x0[state::PHI] = 50.0;
    x0[state::H] = 12.0;
    x0[state::W] = 2.0;
    let start = start_date();
    let mut x = x0.clone();
    let (mut h, mut w, mut d) = (vec![Some(x[state::H])], vec![Some(x[state::W])], vec![
        Some(x[state::D]),
    ]);
    for &b in &beta_true {
        x = build_transition_matrix(&p, &fr, b) * x;
        h.push(Some(x[state::H]));
        w.push(Some(x[state::W]));
        d.push(Some(x[state::D]));
    }
    let series = ObservationSeries {
        region_id: "synthetic".into(),
        population: 1_000_000,
        dates: (0..=days as i64).map(|o| start + chrono::Duration::days(o)).collect(),
        h,
        w,
        d,
    };

    let n_windows = series.len().div_ceil(28);
    let sched = DynamicSchedule::new(
        start,
        series.len(),
        28,
        vec![1.2; n_windows],
        vec![0.0067; n_windows],
    )
    .unwrap();
    let mut problem =
        MeanfieldProblem::build(&p, &sched, &series, &NoiseConfig::default(), Some(1.0)).unwrap();
    problem.x0 = x0;
    let init = problem.windowed_init(&sched, &series);

    let cfg = HorizonConfig {
        tol: 1e-6,
        max_iters: 2000,
        ..HorizonConfig::default()
    };
    let full = optimize_window(&problem, &init, None, &cfg).unwrap();
    let receding = optimize_receding(&problem, &init, &cfg).unwrap();

    // relative recovery on interior days, final 30 excluded
    let interior = 5..days - 30;
    let hits = interior
        .clone()
        .filter(|&k| ((receding.beta[k] - beta_true[k]) / beta_true[k]).abs() < 0.10)
        .count();
    let frac = hits as f64 / interior.len() as f64;
    let max_gap = interior
        .clone()
        .map(|k| ((receding.beta[k] - full.beta[k]) / full.beta[k]).abs())
        .fold(0.0f64, f64::max);
    println!(
        "  rate-recovery detail: within 10% on {:.1}% of interior days, windowed-vs-full max gap {:.2}%",
        100.0 * frac,
        100.0 * max_gap
    );
    verdict(
        4,
        "receding-horizon rates match a piecewise-linear truth (>=80% of interior days within 10%; windowed vs full < 5%)",
        frac >= 0.80 && max_gap < 0.05,
    );
}

// -------------------------------------------------------------------
// 5. Bootstrap self-consistency

#[test]
fn criterion_5_bootstrap_self_consistency() {
    let r_windows = [1.5, 1.3, 1.1, 1.0, 0.95, 0.9];
    let (priors, truth, series, _) = simulated_truth(&r_windows, 150, 55);
    let noise = NoiseConfig::default();
    let cfg = AmConfig {
        c0_scale: 1e-6,
        n_samples: 8_000,
        burn_in: 3_000,
        ..AmConfig::default()
    };
    let reference = am_run(&priors, &series, 28, &noise, &cfg, Some(truth), 500).unwrap();

    // synthetic truth for the replicates is the reference MMSE point
    let post = reference.samples_after(cfg.burn_in);
    let mut mmse = DVector::<f64>::zeros(post[0].len());
    for s in post {
        mmse += s;
    }
    mmse /= post.len() as f64;
    let n_windows = (mmse.len() - 10) / 2;
    let (p, r_t, ifr) = priors.unpack(&mmse, n_windows);
    let sched = DynamicSchedule::new(start_date(), series.len(), 28, r_t, ifr).unwrap();
    let daily = daily_rates(&p, &sched, series.len() - 1);
    let mut init = [0.0; state::DIM];
    init[state::E] = 60.0;
    init[state::I] = 45.0;
    init[state::A] = 15.0;
    init[state::PHI] = 50.0;
    init[state::H] = 12.0;
    init[state::W] = 2.0;

    let boots: Vec<PosteriorChain<f64>> = (0..3u64)
        .map(|i| {
            let ds = simulate_synthetic(
                &p,
                &daily,
                &sched,
                series.len() - 1,
                &init,
                &noise,
                600 + i,
            )
            .unwrap();
            am_run(&priors, &ds.series, 28, &noise, &cfg, Some(mmse.clone()), 700 + i).unwrap()
        })
        .collect();

    let bias = bias_estimate(&reference, &boots, cfg.burn_in, 0.5).unwrap();
    let stats = bootstrap_stats(&reference, &bias.bias, cfg.burn_in).unwrap();
    let pythagoras = (0..12)
        .map(|j| {
            (stats.nrmse[j] * stats.nrmse[j]
                - stats.cov[j] * stats.cov[j]
                - stats.cob[j] * stats.cob[j])
                .abs()
        })
        .fold(0.0f64, f64::max);
    println!(
        "  bootstrap detail: median CoB {:.2}%, Pythagorean residual {:.2e}",
        100.0 * stats.median_cob,
        pythagoras
    );
    verdict(
        5,
        "bootstrap bias is small against the reference posterior (median CoB < 6%; NRMSE^2 = CoV^2 + CoB^2 to 1e-12)",
        stats.median_cob < 0.06 && pythagoras < 1e-12,
    );
}

// -------------------------------------------------------------------
// 6. Forecast calibration

#[test]
fn criterion_6_forecast_calibration() {
    let p = ParameterVector::<f64>::prior_means();
    let n_days = 260usize;
    let n_windows = n_days.div_ceil(28);
    let sched = DynamicSchedule::new(
        start_date(),
        n_days,
        28,
        vec![1.05; n_windows],
        vec![0.0067; n_windows],
    )
    .unwrap();
    let noise = NoiseConfig::default();
    let mats = window_matrices(&p, &sched).unwrap();
    let f = &mats[0];
    let obs = ObservationModel::default();

    // latent truth follows the model's own state-space law: linear
    // dynamics plus state-dependent process and observation noise
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut gauss = |rng: &mut ChaCha8Rng| -> f64 {
        let u1: f64 = rng.gen_range(1e-12..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let mut x = DVector::<f64>::zeros(8);
    x[state::E] = 300.0;
    x[state::I] = 200.0;
    x[state::A] = 70.0;
    x[state::PHI] = 200.0;
    x[state::H] = 50.0;
    x[state::W] = 10.0;
    x[state::D] = 5.0;
    let mut latent = vec![x.clone()];
    for _ in 1..n_days {
        let pred = f * &x;
        let q = assemble_process_noise(f, &pred, &noise);
        let chol = (q + DMatrix::<f64>::identity(8, 8) * 1e-9).cholesky().unwrap();
        let xi = DVector::from_iterator(8, (0..8).map(|_| gauss(&mut rng)));
        x = (pred + chol.l() * xi).map(|v| v.max(0.0));
        latent.push(x.clone());
    }
    let mut series = ObservationSeries::<f64> {
        region_id: "synthetic".into(),
        population: 400_000,
        dates: (0..n_days as i64)
            .map(|o| start_date() + chrono::Duration::days(o))
            .collect(),
        h: vec![],
        w: vec![],
        d: vec![],
    };
    for xt in &latent {
        let r = measurement_noise(xt, &obs, &noise);
        series.h.push(Some(xt[state::H] + r[(0, 0)].sqrt() * gauss(&mut rng)));
        series.w.push(Some(xt[state::W] + r[(1, 1)].sqrt() * gauss(&mut rng)));
        series.d.push(Some(xt[state::D] + r[(2, 2)].sqrt() * gauss(&mut rng)));
    }

    // 25 weekly 7-day-ahead forecasts against the realized observations
    let mut hits68 = 0usize;
    let mut hits95 = 0usize;
    let mut total = 0usize;
    for week in 0..25 {
        let cut = 80 + 7 * week;
        let head = ObservationSeries {
            region_id: series.region_id.clone(),
            population: series.population,
            dates: series.dates[..cut].to_vec(),
            h: series.h[..cut].to_vec(),
            w: series.w[..cut].to_vec(),
            d: series.d[..cut].to_vec(),
        };
        let (states, _) = run_filter(&p, &sched, &head, &noise).unwrap();
        let preds = predict_ahead(states.last().unwrap(), &mats, 7, &noise).unwrap();
        for (day, (mean, s)) in preds.iter().enumerate() {
            let actual = [
                series.h[cut + day].unwrap(),
                series.w[cut + day].unwrap(),
                series.d[cut + day].unwrap(),
            ];
            for k in 0..3 {
                let sd = s[(k, k)].sqrt();
                let z = (actual[k] - mean[k]).abs() / sd;
                hits68 += usize::from(z <= 1.0);
                hits95 += usize::from(z <= 1.96);
                total += 1;
            }
        }
    }
    let c68 = hits68 as f64 / total as f64;
    let c95 = hits95 as f64 / total as f64;
    println!("  calibration detail: empirical coverage {:.1}% / {:.1}%", 100.0 * c68, 100.0 * c95);
    verdict(
        6,
        "weekly 7-day-ahead forecasts are calibrated (68% coverage in [50,85]; 95% in [85,100])",
        (0.50..=0.85).contains(&c68) && (0.85..=1.0).contains(&c95),
    );
}

// -------------------------------------------------------------------
// 7. Case-fatality plausibility

#[test]
fn criterion_7_case_fatality_plausibility() {
    let t0 = std::time::Instant::now();
    let mut p = ParameterVector::<f64>::prior_means();
    p.hosp = 0.038;
    p.ic_hosp = 0.112;
    let fr = derive_fractions(&p, 0.0067).unwrap();
    let cfr_h = cfr(&fr, CfrCompartment::H).unwrap();
    let cfr_w = cfr(&fr, CfrCompartment::W).unwrap();

    // Monte Carlo fate oracle: walk individuals through the absorbing
    // hospital / intensive-care chain and count deaths
    let n = 400_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut simulate_from = |start_w: bool| -> f64 {
        let mut deaths = 0usize;
        for _ in 0..n {
            let mut in_w = start_w;
            loop {
                if in_w {
                    if rng.gen_bool(fr.f4) {
                        deaths += 1;
                        break;
                    }
                    in_w = false;
                } else {
                    let u: f64 = rng.gen();
                    if u < fr.f3d {
                        deaths += 1;
                        break;
                    } else if u < fr.f3d + fr.f3 {
                        in_w = true;
                    } else {
                        break; // recovered
                    }
                }
            }
        }
        deaths as f64 / n as f64
    };
    let mc_h = simulate_from(false);
    let mc_w = simulate_from(true);
    let se = |q: f64| (q * (1.0 - q) / n as f64).sqrt();
    let oracle_ok =
        (cfr_h - mc_h).abs() < 3.0 * se(mc_h) && (cfr_w - mc_w).abs() < 3.0 * se(mc_w);

    println!(
        "  fatality detail: CFR_H {:.2}% (bracket 10-25%), CFR_W {:.2}% (bracket 25-45%), oracle {}",
        100.0 * cfr_h,
        100.0 * cfr_w,
        if oracle_ok { "agrees" } else { "disagrees" }
    );
    let ok = oracle_ok
        && (0.10..=0.25).contains(&cfr_h)
        && (0.25..=0.45).contains(&cfr_w)
        && t0.elapsed().as_secs_f64() < 60.0;
    verdict(
        7,
        "case-fatality risks sit in the plausibility brackets and match the Monte Carlo fate oracle",
        ok,
    );
}

// -------------------------------------------------------------------
// 8. Invariant battery

#[test]
fn criterion_8_invariant_battery() {
    let priors = PriorSet::<f64>::default_priors();
    let mut rng = ChaCha8Rng::seed_from_u64(8);

    // (a) person-mass conservation of the transition matrix
    let mut conservation = true;
    for _ in 0..200 {
        let point = priors.sample(1, &mut rng);
        let (p, r_t, ifr) = priors.unpack(&point, 1);
        let fr = match derive_fractions(&p, ifr[0]) {
            Ok(f) => f,
            Err(_) => continue, // infeasible corner of the prior box
        };
        let beta = beta_from_r0(&p, &fr, r_t[0]);
        let f = build_transition_matrix(&p, &fr, beta);
        for j in (0..8).filter(|&j| j != state::PHI) {
            let col: f64 = (0..8).filter(|&i| i != state::PHI).map(|i| f[(i, j)]).sum();
            conservation &= (col - 1.0).abs() < 1e-12;
        }
    }

    // (b) filter covariances stay positive semidefinite
    let p = ParameterVector::<f64>::prior_means();
    let n_days = 60;
    let sched = DynamicSchedule::new(
        start_date(),
        n_days,
        28,
        vec![1.2; 3],
        vec![0.0067; 3],
    )
    .unwrap();
    let daily = daily_rates(&p, &sched, n_days - 1);
    let mut init = [0.0; state::DIM];
    init[state::E] = 60.0;
    init[state::I] = 45.0;
    init[state::A] = 15.0;
    init[state::PHI] = 50.0;
    init[state::H] = 12.0;
    init[state::W] = 2.0;
    let noise = NoiseConfig::default();
    let ds = simulate_synthetic(&p, &daily, &sched, n_days - 1, &init, &noise, 80).unwrap();
    let (states, _) = run_filter(&p, &sched, &ds.series, &noise).unwrap();
    let psd = states.iter().all(|fs| {
        fs.cov
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .all(|&l| l > -1e-6)
    });

    // (c) the death smoother conserves total mortality
    let mut spiky = ds.series.clone();
    let n = spiky.len();
    if let Some(v) = spiky.d[n / 2].as_mut() {
        *v += 40.0; // reporting spike
    }
    for t in n / 2 + 1..n {
        let prev = spiky.d[t - 1].unwrap();
        if let Some(v) = spiky.d[t].as_mut() {
            *v = v.max(prev);
        }
    }
    let (smoothed, _) = smooth_series(&spiky, &default_thresholds());
    let mass_ok = (smoothed.d[n - 1].unwrap() - spiky.d[n - 1].unwrap()).abs() < 1e-9
        && smoothed
            .d
            .windows(2)
            .all(|w| w[1].unwrap() >= w[0].unwrap() - 1e-9);

    // (d) every prior density integrates to one over its support
    let mut normalized = true;
    let coords: Vec<&Prior<f64>> = priors
        .statics
        .iter()
        .chain([&priors.r_t, &priors.ifr])
        .collect();
    for prior in coords {
        let (lo, hi) = prior.support();
        if hi <= lo {
            continue; // point mass
        }
        let steps = 200_000usize;
        let hstep = (hi - lo) / steps as f64;
        let integral: f64 = (0..steps)
            .map(|i| {
                let x = lo + (i as f64 + 0.5) * hstep;
                prior.logpdf(x).exp() * hstep
            })
            .sum();
        normalized &= (integral - 1.0).abs() < 2e-3;
    }

    // (e) everything random is a pure function of its seed
    let cfg = AmConfig {
        c0_scale: 1e-6,
        n_samples: 300,
        burn_in: 0,
        ..AmConfig::default()
    };
    let short = ObservationSeries {
        region_id: ds.series.region_id.clone(),
        population: ds.series.population,
        dates: ds.series.dates[..40].to_vec(),
        h: ds.series.h[..40].to_vec(),
        w: ds.series.w[..40].to_vec(),
        d: ds.series.d[..40].to_vec(),
    };
    let run_a = am_run(&priors, &short, 28, &noise, &cfg, None, 99).unwrap();
    let run_b = am_run(&priors, &short, 28, &noise, &cfg, None, 99).unwrap();
    let sim_a = simulate_synthetic(&p, &daily, &sched, n_days - 1, &init, &noise, 81).unwrap();
    let sim_b = simulate_synthetic(&p, &daily, &sched, n_days - 1, &init, &noise, 81).unwrap();
    let deterministic = run_a.samples == run_b.samples && sim_a.series == sim_b.series;

    println!(
        "  invariant detail: conservation {conservation}, PSD {psd}, smoother mass {mass_ok}, priors normalized {normalized}, seeded determinism {deterministic}"
    );
    verdict(
        8,
        "invariant battery holds (conservation, PSD covariance, mass-conserving smoother, prior normalization, seed determinism)",
        conservation && psd && mass_ok && normalized && deterministic,
    );
}
