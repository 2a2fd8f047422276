//! Command-line front end: ingest, fit, predict, beta, bootstrap and
//! report subcommands over regional hospital-load data.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use epimon_core::analysis::{
    forecast_scores, hidden_states, Forecast, ForecastScore, HiddenStateTrajectory,
};
use epimon_core::bootstrap::{
    bias_estimate, bootstrap_stats, simulate_synthetic, BiasReport, BootstrapStats,
};
use epimon_core::data::{
    clean_series, default_thresholds, parse_regional_csv, smooth_series, smoothing_distance,
    write_regional_csv, CleaningReport, ObservationSeries,
};
use epimon_core::kalman::{
    init_state, predict_ahead, run_filter, window_matrices, NoiseConfig, ObservationModel,
};
use epimon_core::model::beta_from_r0;
use epimon_core::optimizer::{
    optimize_receding, write_beta_csv, BetaTrajectory, HorizonConfig, MeanfieldProblem,
};
use epimon_core::params::{derive_fractions, state, DynamicSchedule};
use epimon_core::priors::PriorSet;
use epimon_core::sampler::{
    am_run, gelman_rubin, load_chain_csv, posterior_summary, save_chain_csv, save_chain_meta,
    AmConfig, ChainMeta, DimensionSummary, PosteriorChain,
};

type Real = f64;

// -------------------------------------------------------------------
// Errors and exit codes

#[derive(Debug)]
struct CliError {
    code: i32,
    msg: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.msg)
    }
}

impl From<epimon_core::Error> for CliError {
    fn from(e: epimon_core::Error) -> Self {
        use epimon_core::Error as E;
        let code = match e {
            E::Numerical(_) | E::Singular(_) | E::SingularInnovation { .. } | E::EmptyChain => 1,
            _ => 2,
        };
        CliError {
            code,
            msg: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError {
            code: 2,
            msg: format!("io error: {e}"),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError {
            code: 2,
            msg: format!("json error: {e}"),
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError {
        code: 2,
        msg: msg.into(),
    }
}

type CliResult<T> = Result<T, CliError>;

// -------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    /// Transmission / fatality window length in days.
    window_days: usize,
    /// Width of the repair kernel in the cleaning pass.
    clean_kernel: usize,
    /// Spike-detection thresholds for the smoothing pass.
    thresholds: Vec<f64>,
    /// Restrict processing to these regions.
    regions: Option<Vec<String>>,
    /// Prior specification file; defaults baked in when absent.
    priors: Option<PathBuf>,
    am: AmConfig<Real>,
    horizon: HorizonConfig<Real>,
    noise: NoiseConfig<Real>,
    /// Bootstrap replicates.
    n_boot: usize,
    /// Posterior samples replayed for hidden-state summaries.
    hidden_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            window_days: 28,
            clean_kernel: 7,
            thresholds: default_thresholds(),
            regions: None,
            priors: None,
            am: AmConfig::default(),
            horizon: HorizonConfig::default(),
            noise: NoiseConfig::default(),
            n_boot: 3,
            hidden_samples: 50,
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> CliResult<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| usage(format!("invalid config {}: {e}", p.display())))
        }
    }
}

fn load_priors(cfg: &RunConfig) -> CliResult<PriorSet<Real>> {
    match &cfg.priors {
        None => Ok(PriorSet::default_priors()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| usage(format!("cannot read prior file {}: {e}", p.display())))?;
            Ok(PriorSet::from_json(&text)?)
        }
    }
}

// -------------------------------------------------------------------
// Command line

#[derive(Parser)]
#[command(name = "epimon", about = "Bayesian epidemic monitoring pipeline")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; all randomness derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for region-level parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    output_dir: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse, clean and smooth raw regional data.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Report what would be done without writing files.
        #[arg(long)]
        dry_run: bool,
    },
    /// Sample the posterior per region.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
        /// Directory with previous chains to continue from.
        #[arg(long)]
        warm_start: Option<PathBuf>,
    },
    /// Forecast the observables.
    Predict {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        chains_dir: PathBuf,
        #[arg(long, default_value_t = 7)]
        horizon: usize,
    },
    /// Estimate the daily transmission rate.
    Beta {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        chains_dir: PathBuf,
    },
    /// Parametric-bootstrap bias diagnostics.
    Bootstrap {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        chains_dir: PathBuf,
        #[arg(long)]
        n_boot: Option<usize>,
    },
    /// Bundle forecasts, reproduction numbers, hidden states and
    /// scores into one JSON per region.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        chains_dir: PathBuf,
        #[arg(long, default_value_t = 7)]
        horizon: usize,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e.msg);
        std::process::exit(e.code);
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = load_config(&cli.config)?;
    match &cli.cmd {
        Cmd::Ingest { input, dry_run } => cmd_ingest(&cli, &cfg, input, *dry_run),
        Cmd::Fit {
            input,
            chains,
            samples,
            burn_in,
            warm_start,
        } => {
            let mut cfg = cfg;
            if let Some(c) = chains {
                cfg.am.n_chains = *c;
            }
            if let Some(s) = samples {
                cfg.am.n_samples = *s;
            }
            if let Some(b) = burn_in {
                cfg.am.burn_in = *b;
            }
            cmd_fit(&cli, &cfg, input, warm_start.as_deref())
        }
        Cmd::Predict {
            input,
            chains_dir,
            horizon,
        } => cmd_predict(&cli, &cfg, input, chains_dir, *horizon),
        Cmd::Beta { input, chains_dir } => cmd_beta(&cli, &cfg, input, chains_dir),
        Cmd::Bootstrap {
            input,
            chains_dir,
            n_boot,
        } => {
            let mut cfg = cfg;
            if let Some(n) = n_boot {
                cfg.n_boot = *n;
            }
            cmd_bootstrap(&cli, &cfg, input, chains_dir)
        }
        Cmd::Report {
            input,
            chains_dir,
            horizon,
        } => cmd_report(&cli, &cfg, input, chains_dir, *horizon),
    }
}

// -------------------------------------------------------------------
// Shared plumbing

fn slug(region: &str) -> String {
    region
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '-'
            }
        })
        .collect()
}

/// Deterministic per-region, per-role seed stream.
fn derive_seed(master: u64, region: &str, role: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ master;
    for b in region.bytes().chain(role.to_le_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

/// Write bytes via a temporary file and rename, so failures never
/// leave partial artifacts.
fn atomic_write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Run a path-writing closure against a temporary file, then rename.
fn atomic_via<F>(path: &Path, f: F) -> CliResult<()>
where
    F: FnOnce(&Path) -> Result<(), epimon_core::Error>,
{
    let tmp = path.with_extension("tmp");
    f(&tmp)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn read_regions(
    input: &Path,
    cfg: &RunConfig,
) -> CliResult<(Vec<ObservationSeries<Real>>, Vec<String>)> {
    if !input.exists() {
        return Err(usage(format!("input file not found: {}", input.display())));
    }
    let (mut series, warnings) = parse_regional_csv::<Real>(input)?;
    if let Some(wanted) = &cfg.regions {
        series.retain(|s| wanted.iter().any(|w| w == &s.region_id));
        if series.is_empty() {
            return Err(usage("no requested region present in the input"));
        }
    }
    if series.is_empty() {
        return Err(usage("input contains no regions"));
    }
    Ok((series, warnings))
}

fn load_region_chains(
    chains_dir: &Path,
    region: &str,
) -> CliResult<(Vec<PosteriorChain<Real>>, ChainMeta<Real>)> {
    let meta_path = chains_dir.join(format!("{}.meta.json", slug(region)));
    let meta: ChainMeta<Real> = serde_json::from_str(
        &std::fs::read_to_string(&meta_path)
            .map_err(|e| usage(format!("cannot read {}: {e}", meta_path.display())))?,
    )?;
    let mut chains = Vec::new();
    loop {
        let p = chains_dir.join(format!("{}.chain{}.csv", slug(region), chains.len()));
        if !p.exists() {
            break;
        }
        chains.push(load_chain_csv(&p)?);
    }
    if chains.is_empty() {
        return Err(usage(format!(
            "no chain files for region {region} in {}",
            chains_dir.display()
        )));
    }
    Ok((chains, meta))
}

/// Pool post-burn-in samples from all chains.
fn pooled_samples(
    chains: &[PosteriorChain<Real>],
    burn_in: usize,
) -> CliResult<Vec<DVector<Real>>> {
    let mut out = Vec::new();
    for c in chains {
        out.extend_from_slice(c.samples_after(burn_in.min(c.len().saturating_sub(1))));
    }
    if out.is_empty() {
        return Err(CliError::from(epimon_core::Error::EmptyChain));
    }
    Ok(out)
}

fn mean_point(samples: &[DVector<Real>]) -> DVector<Real> {
    let mut acc = DVector::<Real>::zeros(samples[0].len());
    for s in samples {
        acc += s;
    }
    acc / samples.len() as Real
}

/// Schedule implied by a packed posterior point.
fn schedule_of(
    priors: &PriorSet<Real>,
    point: &DVector<Real>,
    series: &ObservationSeries<Real>,
    window_days: usize,
) -> CliResult<(
    epimon_core::params::ParameterVector<Real>,
    DynamicSchedule<Real>,
)> {
    let n_windows = (point.len() - 10) / 2;
    let (p, r_t, ifr) = priors.unpack(point, n_windows);
    let sched = DynamicSchedule::new(series.dates[0], series.len(), window_days, r_t, ifr)?;
    Ok((p, sched))
}

// -------------------------------------------------------------------
// ingest

#[derive(Serialize)]
struct IngestReport {
    region: String,
    warnings: Vec<String>,
    cleaning: CleaningReport,
}

fn cmd_ingest(cli: &Cli, cfg: &RunConfig, input: &Path, dry_run: bool) -> CliResult<()> {
    let (series, parse_warnings) = read_regions(input, cfg)?;
    let out_dir = cli.output_dir.join("ingest");
    if !dry_run {
        std::fs::create_dir_all(&out_dir)?;
    }

    let results: Vec<CliResult<(ObservationSeries<Real>, IngestReport)>> = series
        .par_iter()
        .map(|raw| {
            let (cleaned, mut report) = clean_series(raw, cfg.clean_kernel);
            let (smoothed, warnings) = smooth_series(&cleaned, &cfg.thresholds);
            report.d_smooth = Some(smoothing_distance(&cleaned, &smoothed)?);
            Ok((
                smoothed,
                IngestReport {
                    region: raw.region_id.clone(),
                    warnings,
                    cleaning: report,
                },
            ))
        })
        .collect();

    for warning in &parse_warnings {
        eprintln!("warning: {warning}");
    }
    for res in results {
        let (smoothed, report) = res?;
        let json = serde_json::to_string_pretty(&report)?;
        if dry_run {
            println!("{json}");
            continue;
        }
        let name = slug(&report.region);
        atomic_via(&out_dir.join(format!("{name}.csv")), |p| {
            write_regional_csv(p, std::slice::from_ref(&smoothed), "cleaned+smoothed")
        })?;
        atomic_write(&out_dir.join(format!("{name}.report.json")), json.as_bytes())?;
        println!("ingested {}", report.region);
    }
    Ok(())
}

// -------------------------------------------------------------------
// fit

fn cmd_fit(
    cli: &Cli,
    cfg: &RunConfig,
    input: &Path,
    warm_start: Option<&Path>,
) -> CliResult<()> {
    let (series, _) = read_regions(input, cfg)?;
    let priors = load_priors(cfg)?;
    let out_dir = cli.output_dir.join("chains");
    std::fs::create_dir_all(&out_dir)?;

    let jobs: Vec<(usize, usize)> = (0..series.len())
        .flat_map(|r| (0..cfg.am.n_chains).map(move |c| (r, c)))
        .collect();
    let results: Vec<CliResult<(usize, usize, PosteriorChain<Real>, usize)>> = jobs
        .par_iter()
        .map(|&(r, c)| {
            let s = &series[r];
            let seed = derive_seed(cli.seed, &s.region_id, c as u64);
            let mut am = cfg.am;
            let mut init = None;
            let mut effective_burn = am.burn_in;
            if let Some(dir) = warm_start {
                let prev = dir.join(format!("{}.chain{}.csv", slug(&s.region_id), c));
                if prev.exists() {
                    let chain = load_chain_csv::<Real>(&prev)?;
                    init = chain.samples.last().cloned();
                    effective_burn = am.burn_in / 5;
                    eprintln!(
                        "warm start for {} chain {c}: burn-in shortened from {} to {}",
                        s.region_id, am.burn_in, effective_burn
                    );
                }
            }
            am.burn_in = effective_burn;
            let chain = am_run(&priors, s, cfg.window_days, &cfg.noise, &am, init, seed)?;
            Ok((r, c, chain, effective_burn))
        })
        .collect();

    let mut per_region: BTreeMap<usize, Vec<(usize, PosteriorChain<Real>, usize)>> =
        BTreeMap::new();
    for res in results {
        let (r, c, chain, burn) = res?;
        per_region.entry(r).or_default().push((c, chain, burn));
    }
    for (r, mut chains) in per_region {
        chains.sort_by_key(|(c, _, _)| *c);
        let region = &series[r].region_id;
        let name = slug(region);
        let burn = chains[0].2;
        let refs: Vec<&PosteriorChain<Real>> = chains.iter().map(|(_, c, _)| c).collect();
        let dim = refs[0].samples.first().map(|s| s.len()).unwrap_or(0);
        let gr = if refs.len() > 1 && dim > 0 {
            let mut v = Vec::with_capacity(dim);
            for d in 0..dim {
                v.push(gelman_rubin(&refs, d)?);
            }
            Some(v)
        } else {
            None
        };
        for (c, chain, _) in &chains {
            atomic_via(&out_dir.join(format!("{name}.chain{c}.csv")), |p| {
                save_chain_csv(p, chain, &|i| priors.coordinate_name(i))
            })?;
        }
        let meta = ChainMeta {
            config: AmConfig {
                burn_in: burn,
                ..cfg.am
            },
            seed: cli.seed,
            acceptance_rate: chains
                .iter()
                .map(|(_, c, _)| c.acceptance_rate())
                .sum::<f64>()
                / chains.len() as f64,
            likelihood_failures: chains.iter().map(|(_, c, _)| c.likelihood_failures).sum(),
            gelman_rubin: gr,
        };
        atomic_via(&out_dir.join(format!("{name}.meta.json")), |p| {
            save_chain_meta(p, &meta)
        })?;
        println!("fitted {region}: {} chains", chains.len());
    }
    Ok(())
}

// -------------------------------------------------------------------
// predict

struct RegionPosterior {
    series: ObservationSeries<Real>,
    samples: Vec<DVector<Real>>,
    chains: Vec<PosteriorChain<Real>>,
    burn_in: usize,
}

fn load_posterior(
    cfg: &RunConfig,
    input: &Path,
    chains_dir: &Path,
) -> CliResult<Vec<RegionPosterior>> {
    let (series, _) = read_regions(input, cfg)?;
    series
        .into_iter()
        .map(|s| {
            let (chains, meta) = load_region_chains(chains_dir, &s.region_id)?;
            let samples = pooled_samples(&chains, meta.config.burn_in)?;
            Ok(RegionPosterior {
                series: s,
                samples,
                chains,
                burn_in: meta.config.burn_in,
            })
        })
        .collect()
}

/// Gaussian forecast of the observables from the filter state at the
/// end of the series.
fn gaussian_forecast(
    cfg: &RunConfig,
    priors: &PriorSet<Real>,
    point: &DVector<Real>,
    series: &ObservationSeries<Real>,
    horizon: usize,
) -> CliResult<Forecast<Real>> {
    let (p, sched) = schedule_of(priors, point, series, cfg.window_days)?;
    let (states, _) = run_filter(&p, &sched, series, &cfg.noise)?;
    let mats = window_matrices(&p, &sched)?;
    let last = states
        .last()
        .ok_or_else(|| usage("empty series cannot seed a forecast"))?;
    let preds = predict_ahead(last, &mats[sched.n_windows() - 1..], horizon, &cfg.noise)?;
    let last_date = *series.dates.last().unwrap();
    let mut fc = Forecast {
        dates: (1..=horizon as i64)
            .map(|o| last_date + chrono::Duration::days(o))
            .collect(),
        mean: Vec::new(),
        lo68: Vec::new(),
        hi68: Vec::new(),
        lo95: Vec::new(),
        hi95: Vec::new(),
        ensemble: None,
    };
    for (mean, cov) in preds {
        let m = [mean[0], mean[1], mean[2]];
        let sd = [cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt(), cov[(2, 2)].sqrt()];
        fc.mean.push(m);
        fc.lo68.push([m[0] - sd[0], m[1] - sd[1], m[2] - sd[2]]);
        fc.hi68.push([m[0] + sd[0], m[1] + sd[1], m[2] + sd[2]]);
        fc.lo95.push([
            m[0] - 1.96 * sd[0],
            m[1] - 1.96 * sd[1],
            m[2] - 1.96 * sd[2],
        ]);
        fc.hi95.push([
            m[0] + 1.96 * sd[0],
            m[1] + 1.96 * sd[1],
            m[2] + 1.96 * sd[2],
        ]);
    }
    Ok(fc)
}

fn write_forecast_csv(path: &Path, fc: &Forecast<Real>) -> Result<(), epimon_core::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "date",
        "observable",
        "mean",
        "lo68",
        "hi68",
        "lo95",
        "hi95",
    ])?;
    const OBS: [&str; 3] = ["hospital", "icu", "dead_cumulative"];
    for (i, date) in fc.dates.iter().enumerate() {
        for k in 0..3 {
            w.write_record([
                date.to_string(),
                OBS[k].to_string(),
                fc.mean[i][k].to_string(),
                fc.lo68[i][k].to_string(),
                fc.hi68[i][k].to_string(),
                fc.lo95[i][k].to_string(),
                fc.hi95[i][k].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_predict(
    cli: &Cli,
    cfg: &RunConfig,
    input: &Path,
    chains_dir: &Path,
    horizon: usize,
) -> CliResult<()> {
    if horizon == 0 {
        return Err(usage("horizon must be at least one day"));
    }
    let priors = load_priors(cfg)?;
    let out_dir = cli.output_dir.join("forecast");
    std::fs::create_dir_all(&out_dir)?;
    for rp in load_posterior(cfg, input, chains_dir)? {
        let point = mean_point(&rp.samples);
        let fc = gaussian_forecast(cfg, &priors, &point, &rp.series, horizon)?;
        let path = out_dir.join(format!("{}.forecast.csv", slug(&rp.series.region_id)));
        atomic_via(&path, |p| write_forecast_csv(p, &fc))?;
        println!("forecast written for {}", rp.series.region_id);
    }
    Ok(())
}

// -------------------------------------------------------------------
// beta

fn cmd_beta(cli: &Cli, cfg: &RunConfig, input: &Path, chains_dir: &Path) -> CliResult<()> {
    let priors = load_priors(cfg)?;
    let out_dir = cli.output_dir.join("beta");
    std::fs::create_dir_all(&out_dir)?;
    for rp in load_posterior(cfg, input, chains_dir)? {
        let point = mean_point(&rp.samples);
        let (p, sched) = schedule_of(&priors, &point, &rp.series, cfg.window_days)?;
        let problem =
            MeanfieldProblem::build(&p, &sched, &rp.series, &cfg.noise, cfg.horizon.c)?;
        let init = problem.windowed_init(&sched, &rp.series);
        let traj = optimize_receding(&problem, &init, &cfg.horizon)?;
        let path = out_dir.join(format!("{}.beta.csv", slug(&rp.series.region_id)));
        atomic_via(&path, |p| write_beta_csv(p, &traj))?;
        if !traj.converged {
            eprintln!(
                "warning: optimizer tolerance not reached for {}",
                rp.series.region_id
            );
        }
        println!("daily rates written for {}", rp.series.region_id);
    }
    Ok(())
}

// -------------------------------------------------------------------
// bootstrap

#[derive(Serialize)]
struct BootstrapArtifact {
    region: String,
    n_boot: usize,
    bias: BiasReport<Real>,
    stats: BootstrapStats<Real>,
}

fn cmd_bootstrap(
    cli: &Cli,
    cfg: &RunConfig,
    input: &Path,
    chains_dir: &Path,
) -> CliResult<()> {
    let priors = load_priors(cfg)?;
    let out_dir = cli.output_dir.join("bootstrap");
    std::fs::create_dir_all(&out_dir)?;
    for rp in load_posterior(cfg, input, chains_dir)? {
        let region = rp.series.region_id.clone();
        let point = mean_point(&rp.samples);
        let (p, sched) = schedule_of(&priors, &point, &rp.series, cfg.window_days)?;
        let fr = derive_fractions(&p, sched.mean_ifr())?;
        let days = rp.series.len() - 1;
        let daily = BetaTrajectory {
            dates: rp.series.dates[..days].to_vec(),
            beta: (0..days)
                .map(|k| beta_from_r0(&p, &fr, sched.r_t[sched.window_of_day(k)]))
                .collect(),
            r_t: (0..days)
                .map(|k| sched.r_t[sched.window_of_day(k)])
                .collect(),
            objective: 0.0,
            c: 0.0,
            converged: true,
        };
        // integer-rounded filter initialization seeds the simulator
        let mats = window_matrices(&p, &sched)?;
        let y0 = [
            rp.series.h[0].unwrap_or(0.0),
            rp.series.w[0].unwrap_or(0.0),
            rp.series.d[0].unwrap_or(0.0),
        ];
        let x0 = init_state(&mats[0], &ObservationModel::default(), &y0, &cfg.noise)?.mean;
        let mut init = [0.0; state::DIM];
        for i in 0..state::DIM {
            init[i] = if i == state::PHI {
                x0[i].max(0.0)
            } else {
                x0[i].max(0.0).round()
            };
        }

        let reps: Vec<CliResult<PosteriorChain<Real>>> = (0..cfg.n_boot)
            .into_par_iter()
            .map(|i| {
                let seed = derive_seed(cli.seed, &region, 10_000 + i as u64);
                let ds = simulate_synthetic(&p, &daily, &sched, days, &init, &cfg.noise, seed)?;
                Ok(am_run(
                    &priors,
                    &ds.series,
                    cfg.window_days,
                    &cfg.noise,
                    &cfg.am,
                    Some(point.clone()),
                    seed ^ 0x5bd1,
                )?)
            })
            .collect();
        let boot_chains: Vec<PosteriorChain<Real>> =
            reps.into_iter().collect::<CliResult<_>>()?;

        let reference = PosteriorChain {
            samples: rp.samples.clone(),
            log_posterior: vec![0.0; rp.samples.len()],
            accepted: vec![true; rp.samples.len()],
            cov_checkpoints: vec![],
            seed: cli.seed,
            likelihood_failures: 0,
        };
        let bias = bias_estimate(&reference, &boot_chains, rp.burn_in, 0.5)?;
        let stats = bootstrap_stats(&reference, &bias.bias, 0)?;
        let artifact = BootstrapArtifact {
            region: region.clone(),
            n_boot: cfg.n_boot,
            bias,
            stats,
        };
        let path = out_dir.join(format!("{}.bootstrap.json", slug(&region)));
        atomic_write(&path, serde_json::to_string_pretty(&artifact)?.as_bytes())?;
        println!("bootstrap diagnostics written for {region}");
    }
    Ok(())
}

// -------------------------------------------------------------------
// report

#[derive(Serialize)]
struct WindowRt {
    window: usize,
    start: NaiveDate,
    mean: Real,
    lo68: Real,
    hi68: Real,
}

#[derive(Serialize)]
struct RegionReport {
    region: String,
    posterior: Vec<DimensionSummary<Real>>,
    r_t: Vec<WindowRt>,
    hidden: HiddenStateTrajectory<Real>,
    forecast_dates: Vec<NaiveDate>,
    forecast_mean: Vec<[Real; 3]>,
    forecast_lo95: Vec<[Real; 3]>,
    forecast_hi95: Vec<[Real; 3]>,
    /// Backtest scores from predicting the final week of the data.
    scores: Option<ForecastScore<Real>>,
}

fn cmd_report(
    cli: &Cli,
    cfg: &RunConfig,
    input: &Path,
    chains_dir: &Path,
    horizon: usize,
) -> CliResult<()> {
    let priors = load_priors(cfg)?;
    let out_dir = cli.output_dir.join("report");
    std::fs::create_dir_all(&out_dir)?;
    for rp in load_posterior(cfg, input, chains_dir)? {
        let region = rp.series.region_id.clone();
        let refs: Vec<&PosteriorChain<Real>> = rp.chains.iter().collect();
        let names = |i: usize| priors.coordinate_name(i);
        let posterior = posterior_summary(&refs, rp.burn_in, None, &names)?;

        let point = mean_point(&rp.samples);
        let n_windows = (point.len() - 10) / 2;
        let (_, sched) = schedule_of(&priors, &point, &rp.series, cfg.window_days)?;
        let r_t = (0..n_windows)
            .map(|w| {
                let mut vals: Vec<Real> =
                    rp.samples.iter().map(|s| s[10 + 2 * w]).collect();
                vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let pick =
                    |q: f64| vals[((vals.len() - 1) as f64 * q).round() as usize];
                WindowRt {
                    window: w,
                    start: sched.window_starts[w],
                    mean: vals.iter().sum::<Real>() / vals.len() as Real,
                    lo68: pick(0.16),
                    hi68: pick(0.84),
                }
            })
            .collect();

        // thin the pooled samples for the filter replays
        let step = (rp.samples.len() / cfg.hidden_samples.max(1)).max(1);
        let thinned: Vec<DVector<Real>> =
            rp.samples.iter().step_by(step).cloned().collect();
        let hidden = hidden_states(
            &thinned,
            &priors,
            &rp.series,
            cfg.window_days,
            &cfg.noise,
            None,
        )?;

        let fc = gaussian_forecast(cfg, &priors, &point, &rp.series, horizon)?;

        // backtest: refilter without the final week, predict it, score
        let scores = if rp.series.len() > 7 {
            let head = ObservationSeries {
                region_id: rp.series.region_id.clone(),
                population: rp.series.population,
                dates: rp.series.dates[..rp.series.len() - 7].to_vec(),
                h: rp.series.h[..rp.series.len() - 7].to_vec(),
                w: rp.series.w[..rp.series.len() - 7].to_vec(),
                d: rp.series.d[..rp.series.len() - 7].to_vec(),
            };
            gaussian_forecast(cfg, &priors, &point, &head, 7)
                .and_then(|bfc| Ok(forecast_scores(&bfc, &rp.series)?))
                .ok()
        } else {
            None
        };

        let report = RegionReport {
            region: region.clone(),
            posterior,
            r_t,
            hidden,
            forecast_dates: fc.dates.clone(),
            forecast_mean: fc.mean.clone(),
            forecast_lo95: fc.lo95.clone(),
            forecast_hi95: fc.hi95.clone(),
            scores,
        };
        let path = out_dir.join(format!("{}.report.json", slug(&region)));
        atomic_write(&path, serde_json::to_string_pretty(&report)?.as_bytes())?;
        println!("report written for {region}");
    }
    Ok(())
}
