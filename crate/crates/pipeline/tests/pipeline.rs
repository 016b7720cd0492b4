//! Commands run through the library API: determinism, round trips and the
//! reference-scenario numbers.

use pcqd::bands::{compute_bands, PlaneWaveBasis};
use pcqd::cavity::solve_h1_modes;
use pcqd::crystal::kpath_gamma_m_k;
use pcqd::fit::simulate_scan;
use pcqd::tcspc::{expected_curve, sample_histogram};
use pcqd_pipeline::commands::{dip_centre, ra_tag};
use pcqd_pipeline::config::ExperimentConfig;
use pcqd_pipeline::formats::{FitReport, GapReport, GapStatus, HistogramMeta, ModesOutcome, ModesReport, ResultBundle, ScanMeta};
use pcqd_pipeline::io::{self, band_rows, field_rows, meta_path, parse_band_csv, parse_field_csv, read_json, to_json_bytes};
use pcqd_pipeline::{cmd_bands, cmd_fit, cmd_modes, cmd_reproduce_paper, cmd_simulate, PipelineError};
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::path::Path;

fn config(json: &str) -> ExperimentConfig {
    ExperimentConfig::from_json_str(json).unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

/// Re-reading a JSON file and writing it again gives the same bytes.
fn assert_json_round_trip<T: Serialize + DeserializeOwned + PartialEq + std::fmt::Debug>(path: &Path) -> T {
    let value: T = read_json(path).unwrap();
    assert_eq!(to_json_bytes(&value), std::fs::read(path).unwrap(), "{}", path.display());
    value
}

fn scenario() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::paper();
    cfg.simulation.seed = Some(11);
    cfg
}

#[test]
fn bands_sweep_is_deterministic_and_round_trips() {
    let cfg = config(r#"{"schema_version": 1, "crystal": {"hole_ratios": [0.0, 0.33, 0.42]}}"#);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let bundle = cmd_bands(&cfg, a.path()).unwrap();
    cmd_bands(&cfg, b.path()).unwrap();
    assert_eq!(files(a.path()), files(b.path()));
    assert_eq!(bundle.outputs.len(), 3 * 2 + 2);

    let gap = |ra: f64| -> GapReport { assert_json_round_trip(&a.path().join(format!("gap_{}.json", ra_tag(ra)))) };
    let empty = gap(0.0);
    assert_eq!(empty.status, GapStatus::NoGap);
    assert!(std::fs::read_to_string(a.path().join("gap_ra0.json")).unwrap().contains("\"no gap\""));
    let (small, large) = (gap(0.33).gap.unwrap(), gap(0.42).gap.unwrap());
    assert!(large.width > small.width);

    // the CSV reproduces the solver output exactly
    let lattice = cfg.lattice(0.33).unwrap();
    let path = kpath_gamma_m_k(cfg.bands.samples_per_segment).unwrap();
    let basis = PlaneWaveBasis::rhombic(&lattice, cfg.bands.plane_wave_cutoff);
    let bands = compute_bands(&lattice, &path, &basis, cfg.bands.n_bands).unwrap();
    let csv_path = a.path().join("bands_ra0.33.csv");
    let text = std::fs::read_to_string(&csv_path).unwrap();
    assert!(text.starts_with("k_index,k_frac_x,k_frac_y,arc_length,band_1,band_2,band_3,band_4,band_5,band_6\n"));
    assert_eq!(parse_band_csv(&csv_path, &text).unwrap(), band_rows(&bands));

    let bundle_back: ResultBundle = assert_json_round_trip(&a.path().join("bands.bundle.json"));
    assert_eq!(bundle_back, bundle);
    for out in &bundle.outputs {
        let bytes = std::fs::read(a.path().join(&out.path)).unwrap();
        assert_eq!(io::sha256_hex(&bytes), out.sha256);
    }
}

#[test]
fn modes_report_doublet_and_fields() {
    let cfg = config(
        r#"{"schema_version": 1, "crystal": {"hole_ratios": [0.37]},
            "cavity": {"supercell_size": 5, "export_fields": true}}"#,
    );
    let dir = tempfile::tempdir().unwrap();
    cmd_modes(&cfg, dir.path()).unwrap();
    let report: ModesReport = assert_json_round_trip(&dir.path().join("modes_ra0.37.json"));
    assert_eq!(report.outcome, ModesOutcome::Found);
    assert_eq!(report.doublets.len(), 1);
    let d = &report.doublets[0];
    assert!(d.splitting < 1e-3);
    assert!((0.5..=3.0).contains(&d.mode_volume));

    let solved = solve_h1_modes(&cfg.lattice(0.37).unwrap(), &cfg.h1()).unwrap();
    assert_eq!(solved.modes.len(), report.modes.len());
    for (entry, mode) in report.modes.iter().zip(&solved.modes) {
        let path = dir.path().join(entry.field_file.as_ref().unwrap());
        let rows = parse_field_csv(&path, &std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(rows, field_rows(&mode.field));
        let peak = rows.iter().map(|r| r.energy_density).fold(0.0, f64::max);
        assert_eq!(peak, 1.0);
    }
}

#[test]
fn empty_supercell_gap_is_a_structured_outcome() {
    let cfg = config(r#"{"schema_version": 1, "crystal": {"hole_ratios": [0.0]}, "cavity": {"supercell_size": 5}}"#);
    let dir = tempfile::tempdir().unwrap();
    let bundle = cmd_modes(&cfg, dir.path()).unwrap();
    let report: ModesReport = read_json(&dir.path().join("modes_ra0.json")).unwrap();
    assert_eq!(report.outcome, ModesOutcome::NoneFound);
    assert!(report.modes.is_empty() && report.bulk_gap.is_none());
    assert!(bundle.summary.iter().any(|l| l.contains("no in-gap modes")));
}

/// Slope of ln(counts) over bins well past the fast component.
fn tail_lifetime(counts: &[u64], bin_width: f64, from: f64, to: f64) -> f64 {
    let (mut sx, mut sy, mut sxx, mut sxy, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &c) in counts.iter().enumerate() {
        let t = (i as f64 + 0.5) * bin_width;
        if t > from && t < to && c > 0 {
            // weight by counts: variance of ln(c) is about 1/c
            let (w, y) = (c as f64, (c as f64).ln());
            sx += w * t;
            sy += w * y;
            sxx += w * t * t;
            sxy += w * t * y;
            n += w;
        }
    }
    -1.0 / ((n * sxy - sx * sy) / (n * sxx - sx * sx))
}

#[test]
fn simulate_writes_round_trippable_histogram_and_scan() {
    let cfg = scenario();
    let dir = tempfile::tempdir().unwrap();
    cmd_simulate(&cfg, dir.path()).unwrap();

    let csv = dir.path().join("histogram.csv");
    let (hist, meta) = io::read_histogram(&csv).unwrap();
    let _: HistogramMeta = assert_json_round_trip(&meta_path(&csv));
    assert_eq!(io::histogram_csv(&hist).as_bytes(), std::fs::read(&csv).unwrap());
    let model = cfg.decay_model().unwrap();
    let direct = sample_histogram(&expected_curve(&model, &cfg.irf(), &cfg.time_grid()), 100_000, 11).unwrap();
    assert_eq!(hist, direct);
    assert_eq!(meta.seed, Some(11));
    assert_eq!(meta.model.as_ref(), Some(&model));

    // slow component from the tail, past ten fast lifetimes
    let tau1 = tail_lifetime(&hist.counts, hist.bin_width, 1000.0 + 1500.0, 1000.0 + 5.0 * 1800.0);
    assert!((tau1 - 1800.0).abs() < 0.05 * 1800.0, "tail τ {tau1}");

    let scan_path = dir.path().join("scan.csv");
    let (scan, smeta) = io::read_scan(&scan_path).unwrap();
    let _: ScanMeta = assert_json_round_trip(&meta_path(&scan_path));
    let sc = cfg.simulation.spectral_scan.as_ref().unwrap();
    let direct = simulate_scan(
        &smeta.reference_tau0,
        &cfg.cavity_modes(),
        &sc.purcell,
        sc.alpha,
        &sc.wavelengths(),
        sc.rel_noise,
        smeta.truth.as_ref().unwrap().seed,
    )
    .unwrap();
    assert_eq!(scan, direct);
    assert!((dip_centre(&scan) - 1031.5).abs() <= 0.2, "dip at {}", dip_centre(&scan));
}

#[test]
fn simulate_rejects_missing_seed_and_zero_counts() {
    let dir = tempfile::tempdir().unwrap();
    let e = cmd_simulate(&ExperimentConfig::default(), dir.path()).unwrap_err();
    assert!(e.to_string().contains("simulation.seed"), "{e}");
    assert_eq!(e.exit_code(), pcqd_pipeline::error::EXIT_CONFIG);
    let e = ExperimentConfig::from_json_str(r#"{"schema_version": 1, "simulation": {"seed": 1, "total_counts": 0}}"#).unwrap_err();
    assert_eq!(e.path, "simulation.total_counts");
}

#[test]
fn fit_recovers_reference_numbers() {
    let cfg = scenario();
    let sim = tempfile::tempdir().unwrap();
    cmd_simulate(&cfg, sim.path()).unwrap();
    let out = tempfile::tempdir().unwrap();
    let inputs = vec![sim.path().join("histogram.csv"), sim.path().join("scan.csv")];
    let bundle = cmd_fit(&cfg, &inputs, out.path()).unwrap();
    assert_eq!(bundle.summary.len(), 3);

    let hist: FitReport = assert_json_round_trip(&out.path().join("histogram.fit.json"));
    let beta = hist.headline["beta"];
    assert!((beta - 0.92).abs() <= 0.02, "β {beta}");
    assert_eq!(hist.fits.len(), 2);

    let scan: FitReport = assert_json_round_trip(&out.path().join("scan.fit.json"));
    let ratio = scan.headline["ratio_1"];
    assert!((ratio - 19.0).abs() <= 4.0, "τ0/τ2 {ratio}");
    assert!((scan.headline["F_1"] - 56.0).abs() <= 10.0);
    for key in ["alpha", "tau_on_resonance_1", "beta_1"] {
        assert!(scan.headline.contains_key(key), "{key}");
    }

    // again into a fresh directory: identical bytes
    let again = tempfile::tempdir().unwrap();
    cmd_fit(&cfg, &inputs, again.path()).unwrap();
    assert_eq!(files(out.path()), files(again.path()));
}

#[test]
fn fit_failures_are_typed() {
    let cfg = scenario();
    let sim = tempfile::tempdir().unwrap();
    cmd_simulate(&cfg, sim.path()).unwrap();
    let out = tempfile::tempdir().unwrap();

    let e = cmd_fit(&cfg, &[], out.path()).unwrap_err();
    assert!(matches!(e, PipelineError::Usage(_)));

    // one iteration cannot converge; every file is still attempted
    let mut tight = cfg.clone();
    tight.fit.max_iterations = 1;
    let inputs = vec![sim.path().join("histogram.csv"), sim.path().join("scan.csv")];
    let e = cmd_fit(&tight, &inputs, out.path()).unwrap_err();
    assert!(matches!(e, PipelineError::FitNonConvergence { .. }), "{e}");
    assert_eq!(e.exit_code(), pcqd_pipeline::error::EXIT_FIT);
    assert!(out.path().join("fit.bundle.json").exists());

    let bad = sim.path().join("bad.csv");
    let mut text = std::fs::read_to_string(sim.path().join("histogram.csv")).unwrap();
    text = text.replacen("\n30,", "\n30.5,", 1);
    std::fs::write(&bad, text).unwrap();
    std::fs::copy(sim.path().join("histogram.meta.json"), meta_path(&bad)).unwrap();
    let e = cmd_fit(&cfg, &[bad], out.path()).unwrap_err();
    assert!(matches!(e, PipelineError::Input { line: Some(4), .. }), "{e}");
    assert_eq!(e.exit_code(), pcqd_pipeline::error::EXIT_IO);
}

#[test]
fn reproduce_paper_summary_is_deterministic() {
    let mut cfg = ExperimentConfig::paper();
    cfg.crystal.hole_ratios = vec![0.33, 0.37, 0.42];
    cfg.cavity.supercell_size = 5;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = cmd_reproduce_paper(&cfg, a.path()).unwrap();
    let second = cmd_reproduce_paper(&cfg, b.path()).unwrap();
    assert_eq!(first, second);
    assert_eq!(files(a.path()), files(b.path()));

    let lines: Vec<&String> = first.summary.iter().filter(|l| l.starts_with("criterion")).collect();
    assert_eq!(lines.len(), 10);
    for (i, line) in lines.iter().enumerate() {
        assert!(line.starts_with(&format!("criterion {:>2} ", i + 1)), "{line}");
    }
    let report: pcqd_pipeline::CriteriaReport = assert_json_round_trip(&a.path().join("criteria.json"));
    let failed: Vec<u32> = report.criteria.iter().filter(|c| !c.pass).map(|c| c.id).collect();
    // the effective-index crystal puts the gap centre below 1025 nm
    assert_eq!(failed, vec![5], "{lines:#?}");
}

#[test]
fn stage_failures_name_the_stage() {
    let mut cfg = ExperimentConfig::paper();
    cfg.bands.plane_wave_cutoff = 1;
    cfg.bands.n_bands = 20;
    let dir = tempfile::tempdir().unwrap();
    let e = cmd_reproduce_paper(&cfg, dir.path()).unwrap_err();
    assert!(e.to_string().starts_with("[bands]"), "{e}");
    assert_eq!(e.exit_code(), pcqd_pipeline::error::EXIT_SOLVER);
}
