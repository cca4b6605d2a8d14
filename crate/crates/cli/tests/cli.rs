use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use proptest::prelude::*;
use zenolock_cli::{run, RunOptions, Subcommand, TraceRecord};

fn options(dir: &Path, sub: Subcommand, config: &str) -> RunOptions {
    let path = dir.join(format!("{}.toml", sub.name()));
    fs::write(&path, config).unwrap();
    RunOptions {
        subcommand: sub,
        config_path: path,
        out: dir.join(sub.name()),
        seed: None,
        plots: false,
        strict: false,
    }
}

fn load(path: PathBuf) -> TraceRecord {
    TraceRecord::parse_csv(fs::read(path).unwrap().as_slice()).unwrap()
}

fn binary(dir: &Path, args: &[&str], config: &str) -> i32 {
    let path = dir.join("bin.toml");
    fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_zenolock"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("bin_out"))
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

const SMALL_DEPHASING: &str = "[dephasing]\nreplicas = 400\npoints = 41\nt_stop = 0.2\n";

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(binary(d, &["allan"], ""), 0);
    assert_eq!(binary(d, &["allan"], "[allan]\nfwhm = -1.0\n"), 2);
    assert_eq!(binary(d, &["allan"], "[allan]\nunknown = 1\n"), 2);
    assert_eq!(binary(d, &["allan"], "[allan\n"), 2);
    let wide = "[zeno2]\nperiods = [0.2]\nfinal_time = 1.0\n";
    assert_eq!(binary(d, &["zeno2"], wide), 0);
    assert_eq!(binary(d, &["zeno2", "--strict"], wide), 3);
    let overflow = "[readout]\nmodel = \"full\"\nemission_cutoff = 1\n";
    assert_eq!(binary(d, &["readout"], overflow), 4);
    let missing = Command::new(env!("CARGO_BIN_EXE_zenolock"))
        .args(["allan", "--config", "/nonexistent/zenolock.toml", "--out"])
        .arg(d.join("x"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn bad_threads_variable_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    fs::write(&path, "").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_zenolock"))
        .args(["allan", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path().join("o"))
        .env("ZENOLOCK_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn out_of_regime_is_flagged_and_completes() {
    let dir = tempfile::tempdir().unwrap();
    let opts = options(
        dir.path(),
        Subcommand::Zeno2,
        "[zeno2]\nperiods = [0.2]\nfinal_time = 1.0\n",
    );
    let report = run(&opts).unwrap();
    assert_eq!(report.flags.len(), 1);
    let rec = load(opts.out.join("zeno2_period_0.2.csv"));
    assert_eq!(rec.metadata["out_of_regime"], "true");
    let manifest = fs::read_to_string(opts.out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("flag=zeno2_period_0.2"));
}

#[test]
fn every_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let configs = [
        (Subcommand::Dephasing, SMALL_DEPHASING),
        (
            Subcommand::Zeno2,
            "[zeno2]\nperiods = [0.05]\nfinal_time = 1.0\n",
        ),
        (Subcommand::Readout, ""),
        (Subcommand::Allan, ""),
    ];
    for (sub, config) in configs {
        let mut opts = options(dir.path(), sub, config);
        opts.plots = true;
        let report = run(&opts).unwrap();
        for file in report
            .files
            .iter()
            .filter(|f| f.extension().unwrap() == "csv")
        {
            let text = fs::read_to_string(file).unwrap();
            let rec = TraceRecord::parse_csv(text.as_bytes()).unwrap();
            assert_eq!(rec.to_csv_string().unwrap(), text, "{}", file.display());
        }
        assert!(report.files.iter().any(|f| f.ends_with("manifest.txt")));
    }
    assert!(dir.path().join("dephasing/dephasing.svg").exists());
    assert!(!dir.path().join("allan/allan.svg").exists());
}

#[test]
fn seed_is_reproducible_and_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let mut opts = options(dir.path(), Subcommand::Dephasing, SMALL_DEPHASING);
    let read = |o: &RunOptions| fs::read(o.out.join("dephasing.csv")).unwrap();
    opts.seed = Some(11);
    run(&opts).unwrap();
    let first = read(&opts);
    run(&opts).unwrap();
    assert_eq!(first, read(&opts));
    opts.seed = Some(12);
    run(&opts).unwrap();
    assert_ne!(first, read(&opts));
    let manifest = fs::read_to_string(opts.out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed=12\n"));
    assert!(manifest.contains("seed = 12\n"));
}

#[test]
fn dephasing_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let opts = options(
        dir.path(),
        Subcommand::Dephasing,
        &format!("{SMALL_DEPHASING}atom_count = 1\n"),
    );
    run(&opts).unwrap();
    let rec = load(opts.out.join("dephasing.csv"));
    let (a, b) = (
        rec.column("mc_independent").unwrap(),
        rec.column("mc_locked").unwrap(),
    );
    assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
    assert_eq!(
        rec.column("analytic_independent"),
        rec.column("analytic_locked")
    );
    let hist = load(opts.out.join("histogram.csv"));
    assert_eq!(hist.columns[0], "frequency");
    assert_eq!(hist.metadata["atom_count"], "9");
}

#[test]
fn zeno_presets() {
    let dir = tempfile::tempdir().unwrap();
    let opts = options(
        dir.path(),
        Subcommand::Zeno2,
        "[zeno2]\nhalf_difference = 0.0\nperiods = [0.05]\n",
    );
    run(&opts).unwrap();
    let rec = load(opts.out.join("zeno2_period_0.05.csv"));
    assert!(rec
        .column("p_success")
        .unwrap()
        .iter()
        .all(|p| (p - 1.0).abs() < 1e-10));
    assert!((rec.column("t").unwrap().last().unwrap() - 5.0).abs() < 1e-12);

    let opts = options(
        dir.path(),
        Subcommand::Zeno4,
        "[zeno4]\nsplittings = [1.5, 1.5]\nperiods = [0.05]\nfinal_time = 2.0\nleakage_photons = [2]\nleakage_couplings = [2.0]\n",
    );
    run(&opts).unwrap();
    let rec = load(opts.out.join("zeno4_period_0.05.csv"));
    let own = rec.column("analytic_exponential").unwrap();
    let two = rec.column("two_level_analytic").unwrap();
    assert!(own.iter().zip(&two).all(|(x, y)| (x - y).abs() < 1e-14));
    let numeric = rec.column("p_success").unwrap();
    assert!(numeric
        .iter()
        .zip(&two)
        .all(|(x, y)| (x / y - 1.0).abs() < 0.05));
    let leak = load(opts.out.join("leakage.csv"));
    assert_eq!(leak.rows.len(), 1);
    assert!(leak.rows[0][3] > 1e-6 && leak.rows[0][4] < 1e-12);
}

#[test]
fn readout_presets() {
    let dir = tempfile::tempdir().unwrap();
    let opts = options(dir.path(), Subcommand::Readout, "");
    run(&opts).unwrap();
    let fit = load(opts.out.join("readout_fit.csv"));
    for err in fit.column("phase_error").unwrap() {
        assert!(err.abs() < 0.05);
    }
    let a = load(opts.out.join("readout_trace_0.csv"))
        .column("quadrature")
        .unwrap();
    let b = load(opts.out.join("readout_trace_1.csv"))
        .column("quadrature")
        .unwrap();
    let scale = a.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    assert!(a.iter().zip(&b).all(|(x, y)| (x + y).abs() < 1e-9 * scale));

    let opts = options(
        dir.path(),
        Subcommand::Readout,
        "[readout]\nclock_phases = [0.0]\nlaser_amplitude = 0.0\n",
    );
    run(&opts).unwrap();
    let fit = load(opts.out.join("readout_fit.csv"));
    assert!(fit.column("fitted_phase").unwrap()[0].is_nan());
    assert_eq!(fit.metadata["degenerate"], "0.0");
    let trace = load(opts.out.join("readout_trace_0.csv"));
    assert!(trace
        .column("quadrature")
        .unwrap()
        .iter()
        .all(|&x| x == 0.0));
}

#[test]
fn allan_table() {
    let dir = tempfile::tempdir().unwrap();
    let opts = options(
        dir.path(),
        Subcommand::Allan,
        "[allan]\natom_counts = [100.0, 2.0]\naveraging_times = [100.0, 400.0]\n",
    );
    let report = run(&opts).unwrap();
    assert_eq!(report.stdout.lines().count(), 5);
    let rec = load(opts.out.join("allan.csv"));
    let sigma = rec.column("sigma_y").unwrap();
    assert!((sigma[0] - 1e-11).abs() < 1e-26);
    assert!((sigma[1] / sigma[0] - 0.5).abs() < 1e-15);
    assert!((rec.column("narrowing").unwrap()[2] - 2f64.sqrt()).abs() < 1e-15);
    let single = rec.column("sigma_y_narrowed_single").unwrap();
    assert!(single
        .iter()
        .zip(&sigma)
        .all(|(a, b)| (a / b - 1.0).abs() < 1e-15));
}

#[test]
fn config_errors_point_at_lines() {
    let dir = tempfile::tempdir().unwrap();
    let opts = options(
        dir.path(),
        Subcommand::Zeno2,
        "[zeno2]\n\nmin_survival = 1.5\n",
    );
    let err = run(&opts).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("line 3"), "{err}");
    assert!(err.to_string().contains("zeno2.min_survival"));
}

proptest! {
    #[test]
    fn traces_round_trip_bitwise(
        rows in prop::collection::vec(
            prop::collection::vec(
                prop_oneof![any::<f64>().prop_filter("no NaN", |x| !x.is_nan()), Just(f64::NAN)],
                3,
            ),
            0..20,
        ),
        key in "[a-z_]{1,8}",
        value in "[ -~]{0,20}",
    ) {
        let mut rec = TraceRecord::new("p", &["x", "y", "z"]).with_meta(&key, value.clone());
        rec.metadata.remove("name");
        rec.rows = rows;
        let text = rec.to_csv_string().unwrap();
        let back = TraceRecord::parse_csv(text.as_bytes()).unwrap();
        prop_assert_eq!(back, rec);
    }
}
