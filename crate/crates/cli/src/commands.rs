//! Subcommands. Each builds its traces in memory, then [`run`] writes them
//! with the manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;
use zenolock::dephasing::{self, DephasingError, EnsembleConfig, PhaseModel};
use zenolock::readout::{self, EmissionModel, ReadoutConfig, ReadoutError};
use zenolock::zeno_multilevel::{self as multi, FourLevelConfig, ThreeLevelConfig};
use zenolock::zeno_two_level::{self as two, TwoLevelConfig, ZenoError, CUTOFF_TOL};

use crate::config::{sha256_hex, Config, ConfigError, Model};
use crate::plot::render_svg;
use crate::trace::{format_number, TraceError, TraceRecord};

/// Largest `Delta tau` treated as perturbative.
pub const REGIME_LIMIT: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Subcommand {
    Dephasing,
    Zeno2,
    Zeno4,
    Readout,
    Allan,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Dephasing => "dephasing",
            Subcommand::Zeno2 => "zeno2",
            Subcommand::Zeno4 => "zeno4",
            Subcommand::Readout => "readout",
            Subcommand::Allan => "allan",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("out of regime: {}", .0.join("; "))]
    OutOfRegime(Vec<String>),
    #[error("cutoff overflow: {0}")]
    CutoffOverflow(String),
    #[error("{0}")]
    Failed(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::Failed(_) => 1,
            CliError::Config(_) => 2,
            CliError::OutOfRegime(_) => 3,
            CliError::CutoffOverflow(_) => 4,
        }
    }

    fn config(message: String) -> Self {
        CliError::Config(ConfigError {
            line: None,
            field: None,
            message,
        })
    }
}

impl From<DephasingError> for CliError {
    fn from(e: DephasingError) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<ZenoError> for CliError {
    fn from(e: ZenoError) -> Self {
        match e {
            ZenoError::InvalidConfig(_) | ZenoError::OutOfRegime { .. } => {
                CliError::config(e.to_string())
            }
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<ReadoutError> for CliError {
    fn from(e: ReadoutError) -> Self {
        match e {
            ReadoutError::InvalidConfig(_) => CliError::config(e.to_string()),
            ReadoutError::CutoffOverflow { .. } => CliError::CutoffOverflow(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        CliError::Failed(e.to_string())
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub subcommand: Subcommand,
    pub config_path: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub plots: bool,
    pub strict: bool,
}

/// Traces of one subcommand, plus the series worth plotting.
#[derive(Debug, Default)]
pub struct Outputs {
    pub traces: Vec<(TraceRecord, Vec<&'static str>)>,
    /// Out-of-regime warnings.
    pub flags: Vec<String>,
    pub stdout: String,
}

#[derive(Debug)]
pub struct Report {
    pub files: Vec<PathBuf>,
    pub flags: Vec<String>,
    pub stdout: String,
}

/// Resolved config, hash and seed stamped into every trace.
struct Stamp {
    hash: String,
    seed: u64,
}

impl Stamp {
    fn record(&self, name: &str, columns: &[&str]) -> TraceRecord {
        TraceRecord::new(name, columns)
            .with_meta("config_sha256", &self.hash)
            .with_meta("seed", self.seed)
    }
}

pub fn load_config(path: &Path) -> Result<Config, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(Config::parse(&text)?)
}

/// Loads the config, computes, writes CSVs (and SVGs) and the manifest.
/// With `strict`, regime warnings turn into an error after the files are
/// written.
pub fn run(opts: &RunOptions) -> Result<Report, CliError> {
    let mut config = load_config(&opts.config_path)?;
    if let Some(seed) = opts.seed {
        config.dephasing.seed = seed;
    }
    let section = opts.subcommand.name();
    let resolved = config.section_text(section);
    let stamp = Stamp {
        hash: sha256_hex(&resolved),
        seed: config.dephasing.seed,
    };
    let outputs = compute(opts.subcommand, &config, &stamp)?;

    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::Io { path, source }
    };
    fs::create_dir_all(&opts.out).map_err(io(&opts.out))?;
    let mut files = Vec::new();
    for (trace, series) in &outputs.traces {
        let path = opts.out.join(format!("{}.csv", trace.name));
        fs::write(&path, trace.to_csv_string()?).map_err(io(&path))?;
        files.push(path);
        if opts.plots && !series.is_empty() {
            let path = opts.out.join(format!("{}.svg", trace.name));
            fs::write(&path, render_svg(trace, series)).map_err(io(&path))?;
            files.push(path);
        }
    }
    let mut manifest = String::new();
    let _ = writeln!(manifest, "tool=zenolock {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(manifest, "subcommand={section}");
    let _ = writeln!(manifest, "config_path={}", opts.config_path.display());
    let _ = writeln!(manifest, "config_sha256={}", stamp.hash);
    let _ = writeln!(manifest, "seed={}", stamp.seed);
    let _ = writeln!(manifest, "output_dir={}", opts.out.display());
    let _ = writeln!(manifest, "emit_plots={}", opts.plots);
    let _ = writeln!(manifest, "strict={}", opts.strict);
    for flag in &outputs.flags {
        let _ = writeln!(manifest, "flag={flag}");
    }
    let _ = writeln!(manifest, "\n# resolved config\n{resolved}");
    let path = opts.out.join("manifest.txt");
    fs::write(&path, manifest).map_err(io(&path))?;
    files.push(path);

    if opts.strict && !outputs.flags.is_empty() {
        return Err(CliError::OutOfRegime(outputs.flags));
    }
    Ok(Report {
        files,
        flags: outputs.flags,
        stdout: outputs.stdout,
    })
}

fn compute(cmd: Subcommand, config: &Config, stamp: &Stamp) -> Result<Outputs, CliError> {
    match cmd {
        Subcommand::Dephasing => cmd_dephasing(config, stamp),
        Subcommand::Zeno2 => cmd_zeno2(config, stamp),
        Subcommand::Zeno4 => cmd_zeno4(config, stamp),
        Subcommand::Readout => cmd_readout(config, stamp),
        Subcommand::Allan => cmd_allan(config, stamp),
    }
}

fn gaussian(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// Columns `t, analytic_independent, analytic_locked, mc_independent,
/// mc_independent_se, mc_locked, mc_locked_se` and a histogram of single
/// frequencies against replica means.
fn cmd_dephasing(config: &Config, stamp: &Stamp) -> Result<Outputs, CliError> {
    let d = &config.dephasing;
    let ensemble = EnsembleConfig {
        atom_count: d.atom_count,
        center_frequency: d.center_frequency,
        fwhm: d.fwhm,
        seed: d.seed,
        time_grid: dephasing::uniform_grid(d.t_start, d.t_stop, d.points),
        replicas: d.replicas,
    };
    let sigma = ensemble.sigma()?;
    let f0 = d.center_frequency;
    let independent = dephasing::monte_carlo_mean_cos(&ensemble, PhaseModel::Independent)?;
    let locked = dephasing::monte_carlo_mean_cos(&ensemble, PhaseModel::Locked)?;

    let analytic_ind: Vec<f64> = ensemble
        .time_grid
        .iter()
        .map(|&t| dephasing::envelope_independent(t, sigma, f0))
        .collect();
    let analytic_lock: Vec<f64> = ensemble
        .time_grid
        .iter()
        .map(|&t| dephasing::envelope_locked(t, sigma, f0, d.atom_count))
        .collect();
    let fold = |v: &[f64]| {
        dephasing::estimate_e_folding_time(&ensemble.time_grid, v, f0).unwrap_or(f64::NAN)
    };
    let (fold_ind, fold_lock) = (fold(&independent.mean), fold(&locked.mean));
    let mut curves = stamp
        .record(
            "dephasing",
            &[
                "t",
                "analytic_independent",
                "analytic_locked",
                "mc_independent",
                "mc_independent_se",
                "mc_locked",
                "mc_locked_se",
            ],
        )
        .with_meta("atom_count", d.atom_count)
        .with_meta("replicas", d.replicas)
        .with_meta("sigma", format_number(sigma))
        .with_meta("e_folding_independent", format_number(fold_ind))
        .with_meta("e_folding_locked", format_number(fold_lock))
        .with_meta("e_folding_ratio", format_number(fold_lock / fold_ind));
    for (i, &t) in ensemble.time_grid.iter().enumerate() {
        curves.push(vec![
            t,
            analytic_ind[i],
            analytic_lock[i],
            independent.mean[i],
            independent.std_error[i],
            locked.mean[i],
            locked.std_error[i],
        ]);
    }

    let small = EnsembleConfig {
        atom_count: d.histogram_atoms,
        ..ensemble.clone()
    };
    let hist = dephasing::bandwidth_histogram(&small, d.histogram_bins)?;
    let narrowed = sigma / (d.histogram_atoms as f64).sqrt();
    let mut histogram = stamp
        .record(
            "histogram",
            &[
                "frequency",
                "individual",
                "mean",
                "individual_gaussian",
                "mean_gaussian",
            ],
        )
        .with_meta("atom_count", d.histogram_atoms)
        .with_meta("individual_std", format_number(hist.individual_std))
        .with_meta("mean_std", format_number(hist.mean_std))
        .with_meta("narrowing", format_number(hist.ratio()));
    for (i, c) in hist.individual.centers().into_iter().enumerate() {
        histogram.push(vec![
            c,
            hist.individual.density[i],
            hist.means.density[i],
            gaussian(c, f0, sigma),
            gaussian(c, f0, narrowed),
        ]);
    }
    Ok(Outputs {
        traces: vec![
            (
                curves,
                vec![
                    "analytic_independent",
                    "analytic_locked",
                    "mc_independent",
                    "mc_locked",
                ],
            ),
            (
                histogram,
                vec!["individual", "mean", "individual_gaussian", "mean_gaussian"],
            ),
        ],
        ..Outputs::default()
    })
}

/// Run length until the exponential closed form falls to `survival`, in
/// whole periods; 100 periods when the rate vanishes.
pub fn auto_final_time(rate: f64, period: f64, survival: f64) -> f64 {
    if rate <= 0.0 {
        return 100.0 * period;
    }
    let cycles = ((1.0 / survival).ln() / (rate * period * period))
        .ceil()
        .max(1.0);
    cycles * period
}

fn record_every(final_time: f64, period: f64, max_points: usize) -> usize {
    let cycles = (final_time / period).round().max(1.0) as usize;
    cycles.div_ceil(max_points - 1).max(1)
}

fn survival_record(
    stamp: &Stamp,
    name: &str,
    trace: &two::SurvivalTrace,
    extra: &[&str],
) -> TraceRecord {
    let mut columns = vec![
        "t",
        "p_success",
        "p_error_cycle",
        "analytic_exponential",
        "analytic_product",
    ];
    columns.extend_from_slice(extra);
    let mut rec = stamp.record(name, &columns).with_meta(
        "max_top_population",
        format_number(trace.max_top_population),
    );
    for i in 0..trace.times.len() {
        rec.push(vec![
            trace.times[i],
            trace.p_success[i],
            trace.p_error_per_cycle[i],
            trace.analytic_p_s[i],
            trace.analytic_product[i],
        ]);
    }
    rec
}

fn check_cutoff(name: &str, trace: &two::SurvivalTrace) -> Result<(), CliError> {
    if trace.is_valid() {
        Ok(())
    } else {
        Err(CliError::CutoffOverflow(format!(
            "{name}: top Fock population {} exceeds {CUTOFF_TOL}",
            trace.max_top_population
        )))
    }
}

fn period_label(prefix: &str, period: f64) -> String {
    format!("{prefix}_period_{}", format_number(period))
}

/// One survival trace per period, computed in parallel.
fn cmd_zeno2(config: &Config, stamp: &Stamp) -> Result<Outputs, CliError> {
    let z = &config.zeno2;
    let delta = z.half_difference;
    let runs: Vec<Result<(TraceRecord, Vec<String>), CliError>> = z
        .periods
        .par_iter()
        .map(|&period| {
            let final_time = z
                .final_time
                .unwrap_or_else(|| auto_final_time(delta * delta, period, z.min_survival));
            let mut c =
                TwoLevelConfig::with_period_and_photons(delta, period, final_time, z.photon_number);
            c.common_offset = z.common_offset;
            c.record_every = record_every(final_time, period, z.max_points);
            let name = period_label("zeno2", period);
            let trace = two::run_protocol(&c)?;
            check_cutoff(&name, &trace)?;
            let mut flags = Vec::new();
            let drift = (delta * c.free_interval).abs();
            if drift > REGIME_LIMIT {
                flags.push(format!(
                    "{name}: Delta tau = {drift} exceeds {REGIME_LIMIT}"
                ));
            }
            let ladder = c.coupling * (c.photon_number as f64).sqrt();
            if c.common_offset.abs() > 1e-2 * ladder {
                flags.push(format!(
                    "{name}: common offset not small against Omega sqrt(n) = {ladder}"
                ));
            }
            let rec = survival_record(stamp, &name, &trace, &[])
                .with_meta("half_difference", format_number(delta))
                .with_meta("period", format_number(period))
                .with_meta("free_interval", format_number(c.free_interval))
                .with_meta("measure_interval", format_number(c.measure_interval))
                .with_meta("coupling", format_number(c.coupling))
                .with_meta("photon_number", c.photon_number)
                .with_meta("out_of_regime", !flags.is_empty());
            Ok((rec, flags))
        })
        .collect();
    let mut out = Outputs::default();
    for r in runs {
        let (rec, flags) = r?;
        out.traces
            .push((rec, vec!["p_success", "analytic_exponential"]));
        out.flags.extend(flags);
    }
    Ok(out)
}

/// Four-level survival with the two-level closed form for comparison, and
/// the three- versus four-level leakage table.
fn cmd_zeno4(config: &Config, stamp: &Stamp) -> Result<Outputs, CliError> {
    let z = &config.zeno4;
    let [d1, d2] = z.splittings;
    let rate = 0.5 * (d1 * d1 + d2 * d2);
    let runs: Vec<Result<(TraceRecord, Vec<String>), CliError>> = z
        .periods
        .par_iter()
        .map(|&period| {
            let final_time = z
                .final_time
                .unwrap_or_else(|| auto_final_time(rate, period, z.min_survival));
            let mut c = FourLevelConfig::with_splittings(z.splittings, period, final_time);
            c.record_every = record_every(final_time, period, z.max_points);
            let name = period_label("zeno4", period);
            let (trace, state) = multi::run_four_level_protocol_with_state(&c)?;
            check_cutoff(&name, &trace)?;
            let mut flags = Vec::new();
            let drift = d1.abs().max(d2.abs()) * c.free_interval;
            if drift > REGIME_LIMIT {
                flags.push(format!(
                    "{name}: max Delta_k tau = {drift} exceeds {REGIME_LIMIT}"
                ));
            }
            let mut rec = survival_record(stamp, &name, &trace, &["two_level_analytic"])
                .with_meta(
                    "splittings",
                    format!("{},{}", format_number(d1), format_number(d2)),
                )
                .with_meta("period", format_number(period))
                .with_meta("free_interval", format_number(c.free_interval))
                .with_meta("measure_interval", format_number(c.measure_interval))
                .with_meta("coupling", format_number(c.coupling))
                .with_meta("photon_number", c.photon_number)
                .with_meta(
                    "cross_channel_population",
                    format_number(multi::cross_channel_population(&state)),
                )
                .with_meta("out_of_regime", !flags.is_empty());
            for (row, &t) in rec.rows.iter_mut().zip(&trace.times) {
                let two_level = two::ps_analytic(d1, c.free_interval, c.measure_interval, t)
                    .map(|f| f.exponential)
                    .unwrap_or(f64::NAN);
                row.push(two_level);
            }
            Ok((rec, flags))
        })
        .collect();
    let mut out = Outputs::default();
    for r in runs {
        let (rec, flags) = r?;
        out.traces.push((
            rec,
            vec!["p_success", "analytic_exponential", "two_level_analytic"],
        ));
        out.flags.extend(flags);
    }

    let grid: Vec<(usize, f64)> = z
        .leakage_photons
        .iter()
        .flat_map(|&n| z.leakage_couplings.iter().map(move |&g| (n, g)))
        .collect();
    let rows: Vec<Result<Vec<f64>, CliError>> = grid
        .par_iter()
        .map(|&(n, g)| {
            let tau_m = two::half_flop_time(g, n)?;
            let three = multi::three_level_leakage(&ThreeLevelConfig::resonant(g, n), n, tau_m)?;
            let mut four = FourLevelConfig::with_splittings([0.0, 0.0], 1.0, 1.0);
            four.coupling = g;
            four.photon_number = n;
            four.fock_cutoffs = [n + 2, n + 2];
            let four = multi::four_level_leakage(&four, n, tau_m)?;
            Ok(vec![n as f64, g, tau_m, three, four])
        })
        .collect();
    let mut leakage = stamp.record(
        "leakage",
        &[
            "photons",
            "coupling",
            "measure_interval",
            "three_level",
            "four_level",
        ],
    );
    for r in rows {
        leakage.push(r?);
    }
    out.traces.push((leakage, Vec::new()));
    Ok(out)
}

fn readout_config(config: &Config) -> ReadoutConfig {
    let r = &config.readout;
    ReadoutConfig {
        laser_detuning: r.laser_detuning,
        laser_amplitude: r.laser_amplitude,
        coupling: r.coupling,
        emission_cutoff: r.emission_cutoff,
        readout_times: dephasing::uniform_grid(0.0, r.t_stop, r.points),
        fit_periods: r.fit_periods,
        model: match r.model {
            Model::Perturbative => EmissionModel::Perturbative,
            Model::Full => EmissionModel::Full,
        },
        ..ReadoutConfig::default()
    }
}

/// One `t_r, quadrature` trace per clock phase and a fit summary. A trace
/// too small to fit gets NaN phase and frequency, flagged in metadata.
fn cmd_readout(config: &Config, stamp: &Stamp) -> Result<Outputs, CliError> {
    let base = readout_config(config);
    base.validate()?;
    let runs: Vec<Result<_, CliError>> = config
        .readout
        .clock_phases
        .par_iter()
        .map(|&phi| {
            let c = base.clone().with_clock_phase(phi);
            let (state, p) = readout::prepare_emitter(&c)?;
            let (quadrature, top) = readout::field_quadrature(&state, &c)?;
            let (phase, degenerate) = match readout::extract_phase(
                &c.readout_times,
                &quadrature,
                c.beat_frequency(),
                c.fit_window(),
            ) {
                Ok(phase) => (phase, false),
                Err(ReadoutError::DegenerateFit) => (f64::NAN, true),
                Err(e) => return Err(e.into()),
            };
            let frequency = if degenerate {
                f64::NAN
            } else {
                readout::zero_crossing_frequency(&c.readout_times, &quadrature)
            };
            Ok((phi, c, quadrature, p, top, phase, frequency, degenerate))
        })
        .collect();
    let mut out = Outputs::default();
    let mut fit = stamp.record(
        "readout_fit",
        &[
            "clock_phase",
            "elapsed_time",
            "fitted_phase",
            "phase_error",
            "fitted_frequency",
            "beat_frequency",
            "postselection_probability",
            "max_top_population",
        ],
    );
    let mut degenerate_phases = Vec::new();
    for (k, r) in runs.into_iter().enumerate() {
        let (phi, c, quadrature, p, top, phase, frequency, degenerate) = r?;
        let mut rec = stamp
            .record(&format!("readout_trace_{k}"), &["t_r", "quadrature"])
            .with_meta("clock_phase", format_number(phi))
            .with_meta("elapsed_time", format_number(c.elapsed_time))
            .with_meta("fitted_phase", format_number(phase))
            .with_meta("degenerate", degenerate)
            .with_meta("model", format!("{:?}", c.model).to_lowercase());
        for (&t, &x) in c.readout_times.iter().zip(&quadrature) {
            rec.push(vec![t, x]);
        }
        out.traces.push((rec, vec!["quadrature"]));
        if degenerate {
            degenerate_phases.push(format_number(phi));
        }
        fit.push(vec![
            phi,
            c.elapsed_time,
            phase,
            readout::wrap_phase(phase - phi),
            frequency,
            c.beat_frequency(),
            p,
            top,
        ]);
    }
    fit.metadata
        .insert("degenerate".into(), degenerate_phases.join(","));
    fit.metadata.insert(
        "effective_coupling".into(),
        format_number(base.effective_coupling()),
    );
    out.traces.push((fit, Vec::new()));
    Ok(out)
}

/// Allan deviation over the atom-count by averaging-time grid, next to a
/// single locked emitter with linewidth `Delta f / sqrt(N)`.
fn cmd_allan(config: &Config, stamp: &Stamp) -> Result<Outputs, CliError> {
    let a = &config.allan;
    let mut table = stamp.record(
        "allan",
        &[
            "atom_count",
            "averaging_time",
            "sigma_y",
            "sigma_y_narrowed_single",
            "narrowing",
        ],
    );
    let mut text = String::new();
    let _ = writeln!(
        text,
        "{:>10} {:>12} {:>14} {:>14} {:>10}",
        "N", "tau", "sigma_y", "narrowed", "factor"
    );
    for &n in &a.atom_counts {
        for &tau in &a.averaging_times {
            let p = dephasing::AllanParams {
                fwhm: a.fwhm,
                carrier: a.carrier,
                atom_count: n,
                cycle_time: a.cycle_time,
                averaging_time: tau,
            };
            let sigma = dephasing::allan_deviation(&p)?;
            let single = dephasing::allan_deviation(&dephasing::AllanParams {
                atom_count: 1.0,
                ..p
            })?;
            let narrowed = dephasing::allan_deviation(&dephasing::AllanParams {
                fwhm: a.fwhm / n.sqrt(),
                atom_count: 1.0,
                ..p
            })?;
            let factor = single / sigma;
            table.push(vec![n, tau, sigma, narrowed, factor]);
            let _ = writeln!(
                text,
                "{n:>10} {tau:>12} {sigma:>14.6e} {narrowed:>14.6e} {factor:>10.6}"
            );
        }
    }
    Ok(Outputs {
        traces: vec![(table, Vec::new())],
        flags: Vec::new(),
        stdout: text,
    })
}
