//! The five subcommands. Each writes its files into an output directory and
//! returns a [`ResultBundle`] naming every file with its hash.

use crate::config::{DecayFitChoice, ExperimentConfig, SCHEMA_VERSION};
use crate::error::{ConfigError, PipelineError, Result};
use crate::formats::{
    scan_units, time_units, units, DoubletEntry, FitReport, GapEdges, GapReport, HistogramMeta,
    InputKind, ModeEntry, ModesOutcome, ModesReport, ResultBundle, ScanMeta, ScanTruth,
    SelectionSummary,
};
use crate::io::{
    band_csv, band_rows, field_csv, field_rows, histogram_csv, read_histogram, read_scan,
    read_text, scan_csv, sha256_hex, OutputDir, HISTOGRAM_HEADER, SCAN_HEADER,
};
use crate::reproduce;
use pcqd::bands::{compute_bands, find_te_gap, PlaneWaveBasis};
use pcqd::cavity::{mode_volume, solve_h1_modes, PeakRegion};
use pcqd::crystal::kpath_gamma_m_k;
use pcqd::fit::{
    fit_decay, fit_spectral_model, select_model_with, simulate_scan, FitError, FitResult,
    HistogramData, SpectralScan, Tau0Reference,
};
use pcqd::tcspc::{expected_curve, sample_histogram, TransientHistogram};
use rayon::prelude::*;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// File-name tag for a hole ratio, e.g. `ra0.37`.
pub fn ra_tag(hole_ratio: f64) -> String {
    format!("ra{hole_ratio}")
}

fn config_error(path: &str, message: impl Into<String>) -> PipelineError {
    PipelineError::Config(ConfigError {
        path: path.to_string(),
        message: message.into(),
    })
}

/// Writes the summary text and the bundle document, then returns the bundle.
fn finish(command: &str, config: &ExperimentConfig, mut dir: OutputDir, summary: Vec<String>) -> Result<ResultBundle> {
    let mut text = summary.join("\n");
    text.push('\n');
    dir.write(&format!("{command}.summary.txt"), text.as_bytes())?;
    let config_hash = config.hash();
    let run_id = sha256_hex(format!("{command}:{config_hash}").as_bytes())[..16].to_string();
    let bundle = ResultBundle {
        schema_version: SCHEMA_VERSION,
        run_id,
        command: command.to_string(),
        config_hash,
        seed: config.simulation.seed,
        outputs: dir.written().to_vec(),
        summary,
    };
    dir.write_json(&format!("{command}.bundle.json"), &bundle)?;
    Ok(bundle)
}

pub fn cmd_bands(config: &ExperimentConfig, out: &Path) -> Result<ResultBundle> {
    let mut dir = OutputDir::create(out)?;
    let mut summary = Vec::new();
    run_bands(config, &mut dir, &mut summary)?;
    finish("bands", config, dir, summary)
}

pub fn cmd_modes(config: &ExperimentConfig, out: &Path) -> Result<ResultBundle> {
    let mut dir = OutputDir::create(out)?;
    let mut summary = Vec::new();
    run_modes(config, &mut dir, &mut summary)?;
    finish("modes", config, dir, summary)
}

pub fn cmd_simulate(config: &ExperimentConfig, out: &Path) -> Result<ResultBundle> {
    let mut dir = OutputDir::create(out)?;
    let mut summary = Vec::new();
    run_simulate(config, &mut dir, &mut summary)?;
    finish("simulate", config, dir, summary)
}

/// Fits the given files, or `fit.inputs` from the config when none are
/// given. Every file is attempted; the first non-convergence is returned
/// after the successful reports are written.
pub fn cmd_fit(config: &ExperimentConfig, inputs: &[PathBuf], out: &Path) -> Result<ResultBundle> {
    let inputs = if inputs.is_empty() { &config.fit.inputs[..] } else { inputs };
    if inputs.is_empty() {
        return Err(PipelineError::Usage(
            "no input files: pass histogram or scan CSVs, or set fit.inputs".into(),
        ));
    }
    let mut dir = OutputDir::create(out)?;
    let mut summary = Vec::new();
    let failure = run_fit(config, inputs, &mut dir, &mut summary)?.1;
    let bundle = finish("fit", config, dir, summary)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(bundle),
    }
}

/// bands → modes → simulate → fit with the given (normally built-in)
/// config, then a pass/fail line per acceptance check.
pub fn cmd_reproduce_paper(config: &ExperimentConfig, out: &Path) -> Result<ResultBundle> {
    let mut dir = OutputDir::create(out)?;
    let mut summary = Vec::new();
    let gaps = run_bands(config, &mut dir, &mut summary).map_err(|e| e.in_stage("bands"))?;
    let modes = run_modes(config, &mut dir, &mut summary).map_err(|e| e.in_stage("modes"))?;
    let sim = run_simulate(config, &mut dir, &mut summary).map_err(|e| e.in_stage("simulate"))?;
    let reference = reproduce::simulate_reference(config, &mut dir, &mut summary).map_err(|e| e.in_stage("simulate"))?;
    let mut inputs = sim.histograms.clone();
    inputs.push(reference);
    inputs.extend(sim.scan.clone());
    let (fits, failure) = run_fit(config, &inputs, &mut dir, &mut summary).map_err(|e| e.in_stage("fit"))?;
    if let Some(e) = failure {
        return Err(e.in_stage("fit"));
    }
    let checks = reproduce::evaluate(config, &gaps, &modes, &fits).map_err(|e| e.in_stage("criteria"))?;
    summary.push(String::new());
    summary.extend(checks.iter().map(reproduce::Criterion::line));
    dir.write_json(
        "criteria.json",
        &reproduce::CriteriaReport {
            schema_version: SCHEMA_VERSION,
            criteria: checks,
        },
    )?;
    finish("reproduce-paper", config, dir, summary)
}

pub(crate) fn run_bands(config: &ExperimentConfig, dir: &mut OutputDir, summary: &mut Vec<String>) -> Result<Vec<GapReport>> {
    let eps = config.eps_background()?;
    let a = config.crystal.period_nm;
    let bc = &config.bands;
    let path = kpath_gamma_m_k(bc.samples_per_segment).map_err(|e| config_error("bands.samples_per_segment", e.to_string()))?;
    let mut table = String::from(
        "hole_ratio,status,lower_edge,upper_edge,midgap,relative_width,midgap_wavelength_nm\n",
    );
    let mut reports = Vec::new();
    summary.push(format!("bands: eps_background {eps:.4}, {} plane waves, a = {a} nm", (2 * bc.plane_wave_cutoff + 1).pow(2)));
    for &ra in &config.crystal.hole_ratios {
        let lattice = config.lattice(ra)?;
        let basis = PlaneWaveBasis::rhombic(&lattice, bc.plane_wave_cutoff);
        let bands = compute_bands(&lattice, &path, &basis, bc.n_bands)
            .map_err(|e| PipelineError::solver("bands", e))?;
        let outcome = find_te_gap(&bands).map_err(|e| PipelineError::solver("bands", e))?;
        let tag = ra_tag(ra);
        dir.write(&format!("bands_{tag}.csv"), band_csv(&band_rows(&bands)).as_bytes())?;
        let report = GapReport::new(&bands, &outcome, a, ra, eps, basis.len());
        dir.write_json(&format!("gap_{tag}.json"), &report)?;
        match &report.gap {
            Some(g) => {
                writeln!(
                    table,
                    "{ra},gap,{},{},{},{},{}",
                    g.lower_edge, g.upper_edge, g.midgap, g.relative_width, g.midgap_wavelength_nm
                )
                .unwrap();
                summary.push(format!(
                    "  r/a {ra}: TE gap a/λ {:.4}-{:.4}, midgap {:.1} nm, width {:.1}%",
                    g.lower_edge,
                    g.upper_edge,
                    g.midgap_wavelength_nm,
                    100.0 * g.relative_width
                ));
            }
            None => {
                writeln!(table, "{ra},no gap,,,,,").unwrap();
                summary.push(format!("  r/a {ra}: no gap"));
            }
        }
        reports.push(report);
    }
    dir.write("gap_table.csv", table.as_bytes())?;
    Ok(reports)
}

pub(crate) fn run_modes(config: &ExperimentConfig, dir: &mut OutputDir, summary: &mut Vec<String>) -> Result<Vec<ModesReport>> {
    let eps = config.eps_background()?;
    let a = config.crystal.period_nm;
    let cv = &config.cavity;
    let h1 = config.h1();
    let mut table = String::from("hole_ratio,wavelength_nm,frequency,gap_depth,splitting,mode_volume\n");
    let mut reports = Vec::new();
    summary.push(format!(
        "modes: {0}x{0} supercell, {1} bulk shells, V in (λ/n)³ with n = {2}",
        cv.supercell_size, cv.bulk_shells, cv.mode_index
    ));
    for &ra in &config.crystal.hole_ratios {
        let lattice = config.lattice(ra)?;
        let solved = solve_h1_modes(&lattice, &h1).map_err(|e| PipelineError::solver("modes", e))?;
        let tag = ra_tag(ra);
        let gap = solved.bulk_gap;
        let mut entries = Vec::with_capacity(solved.modes.len());
        for (i, m) in solved.modes.iter().enumerate() {
            let wavelength = m.wavelength(a);
            let volume = |region| {
                mode_volume(m, cv.vertical_height_nm, wavelength, cv.mode_index, region)
                    .map_err(|e| PipelineError::solver("modes", e))
            };
            let (mode_volume, mode_volume_global) = match cv.peak_region {
                PeakRegion::Dielectric => (volume(PeakRegion::Dielectric)?, volume(PeakRegion::Global)?),
                PeakRegion::Global => (volume(PeakRegion::Global)?, volume(PeakRegion::Global)?),
            };
            let field_file = if cv.export_fields {
                let name = format!("field_{tag}_mode{}.csv", i + 1);
                dir.write(&name, field_csv(&field_rows(&m.field)).as_bytes())?;
                Some(name)
            } else {
                None
            };
            entries.push(ModeEntry {
                index: i + 1,
                frequency: m.frequency,
                wavelength_nm: wavelength,
                parity: m.parity,
                multiplicity: m.multiplicity,
                gap_depth: gap.map(|g| (m.frequency - g.lower_edge) / g.width()),
                mode_volume,
                mode_volume_global,
                field_file,
            });
        }
        let doublets: Vec<DoubletEntry> = solved
            .dipole_doublets()
            .iter()
            .map(|[m1, m2]| {
                let index = |m| solved.modes.iter().position(|x| std::ptr::eq(x, m)).expect("mode from list");
                let (i1, i2) = (index(*m1), index(*m2));
                let f = 0.5 * (m1.frequency + m2.frequency);
                DoubletEntry {
                    modes: [i1 + 1, i2 + 1],
                    frequency: f,
                    wavelength_nm: a / f,
                    splitting: (m1.frequency - m2.frequency).abs() / f,
                    mode_volume: entries[i1].mode_volume,
                }
            })
            .collect();
        let outcome = if solved.is_empty() { ModesOutcome::NoneFound } else { ModesOutcome::Found };
        let report = ModesReport {
            schema_version: SCHEMA_VERSION,
            units: units(&[
                ("frequency", "a/lambda"),
                ("wavelength", "nm"),
                ("mode_volume", "(lambda/n)^3"),
                ("field", "normalised to max 1"),
                ("length", "nm"),
            ]),
            period_nm: a,
            hole_ratio: ra,
            eps_background: eps,
            basis_size: solved.basis_size,
            bulk_gap: gap.map(|g| GapEdges::new(&g, a)),
            outcome,
            modes: entries,
            doublets,
            vertical_height_nm: cv.vertical_height_nm,
            mode_index: cv.mode_index,
        };
        dir.write_json(&format!("modes_{tag}.json"), &report)?;
        match report.doublets.first() {
            Some(d) => {
                let depth = report.modes[d.modes[0] - 1].gap_depth;
                writeln!(
                    table,
                    "{ra},{},{},{},{},{}",
                    d.wavelength_nm,
                    d.frequency,
                    depth.map(|x| x.to_string()).unwrap_or_default(),
                    d.splitting,
                    d.mode_volume
                )
                .unwrap();
                summary.push(format!(
                    "  r/a {ra}: {} in-gap mode(s), {} dipole doublet(s); doublet at {:.1} nm (a/λ {:.4}), splitting {:.1e}, V {:.2}",
                    report.modes.len(),
                    report.doublets.len(),
                    d.wavelength_nm,
                    d.frequency,
                    d.splitting,
                    d.mode_volume
                ));
            }
            None => {
                writeln!(table, "{ra},,,,,").unwrap();
                let what = match outcome {
                    ModesOutcome::NoneFound => "no in-gap modes found".to_string(),
                    ModesOutcome::Found => format!("{} in-gap mode(s), no dipole doublet", report.modes.len()),
                };
                summary.push(format!("  r/a {ra}: {what}"));
            }
        }
        reports.push(report);
    }
    dir.write("modes_table.csv", table.as_bytes())?;
    Ok(reports)
}

#[derive(Debug, Clone, Default)]
pub(crate) struct SimulateOutputs {
    pub histograms: Vec<PathBuf>,
    pub scan: Option<PathBuf>,
}

/// Seed offset separating the scan noise from the photon draws.
const SCAN_SEED_OFFSET: u64 = 1;

pub(crate) fn run_simulate(config: &ExperimentConfig, dir: &mut OutputDir, summary: &mut Vec<String>) -> Result<SimulateOutputs> {
    let seed = config.seed()?;
    let sim = &config.simulation;
    let model = config
        .decay_model()
        .map_err(|e| config_error("simulation.decay", e))?;
    let curve = expected_curve(&model, &config.irf(), &config.time_grid());
    let hist = sample_histogram(&curve, sim.total_counts, seed)
        .map_err(|e| PipelineError::solver("simulate", e))?;
    let mut outputs = SimulateOutputs::default();
    outputs.histograms.push(write_histogram(dir, "histogram", &hist, seed, &model)?);
    let lifetimes: Vec<String> = model.components.iter().map(|c| format!("{} ps", c.lifetime)).collect();
    summary.push(format!(
        "simulate: {} signal photons over {} bins of {} ps, lifetimes {}, seed {seed}",
        sim.total_counts,
        sim.grid.bins,
        sim.grid.bin_width_ps,
        lifetimes.join(" + ")
    ));

    if let Some(sc) = &sim.spectral_scan {
        let modes = config.cavity_modes();
        if modes.is_empty() {
            return Err(config_error("modes", "a spectral scan needs at least one cavity mode"));
        }
        let tau0 = Tau0Reference::Constant(sc.tau0_ps);
        let scan_seed = seed.wrapping_add(SCAN_SEED_OFFSET);
        let scan = simulate_scan(&tau0, &modes, &sc.purcell, sc.alpha, &sc.wavelengths(), sc.rel_noise, scan_seed)
            .map_err(|e| PipelineError::solver("simulate", e))?;
        let meta = ScanMeta {
            schema_version: SCHEMA_VERSION,
            units: scan_units(),
            reference_tau0: tau0,
            modes: config.modes.clone(),
            truth: Some(ScanTruth {
                purcell: sc.purcell.clone(),
                alpha: sc.alpha,
                rel_noise: sc.rel_noise,
                seed: scan_seed,
            }),
        };
        let path = dir.write("scan.csv", scan_csv(&scan).as_bytes())?;
        dir.write_json("scan.meta.json", &meta)?;
        summary.push(format!(
            "  lifetime scan: {} points {}-{} nm, dip centre {:.2} nm",
            scan.points.len(),
            sc.start_nm,
            sc.stop_nm,
            dip_centre(&scan)
        ));
        outputs.scan = Some(path);
    }
    Ok(outputs)
}

pub(crate) fn write_histogram(
    dir: &mut OutputDir,
    stem: &str,
    hist: &TransientHistogram<f64>,
    seed: u64,
    model: &pcqd::tcspc::DecayModel<f64>,
) -> Result<PathBuf> {
    let meta = HistogramMeta {
        schema_version: SCHEMA_VERSION,
        units: time_units(),
        bin_width: hist.bin_width,
        t_start: hist.t_start,
        bins: hist.counts.len(),
        total_counts: hist.total_counts,
        irf_fwhm: hist.irf.fwhm,
        irf_t0: hist.irf.t0,
        seed: Some(seed),
        model: Some(model.clone()),
    };
    let path = dir.write(&format!("{stem}.csv"), histogram_csv(hist).as_bytes())?;
    dir.write_json(&format!("{stem}.meta.json"), &meta)?;
    Ok(path)
}

/// Centroid of the decay-rate excess above the median rate.
pub fn dip_centre(scan: &SpectralScan<f64>) -> f64 {
    let rates: Vec<f64> = scan.points.iter().map(|p| 1.0 / p.lifetime).collect();
    let mut sorted = rates.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let (num, den) = scan
        .points
        .iter()
        .zip(&rates)
        .map(|(p, r)| (p.wavelength, (r - median).max(0.0)))
        .fold((0.0, 0.0), |(n, d), (l, w)| (n + l * w, d + w));
    if den > 0.0 {
        num / den
    } else {
        f64::NAN
    }
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn input_kind(path: &Path) -> Result<InputKind> {
    let text = read_text(path)?;
    match text.lines().next().map(str::trim) {
        Some(HISTOGRAM_HEADER) => Ok(InputKind::Histogram),
        Some(SCAN_HEADER) => Ok(InputKind::Scan),
        other => Err(PipelineError::input(
            path,
            Some(1),
            format!(
                "unrecognised header '{}'; expected '{HISTOGRAM_HEADER}' or '{SCAN_HEADER}'",
                other.unwrap_or_default()
            ),
        )),
    }
}

fn headline(fit: &FitResult<f64>) -> BTreeMap<String, f64> {
    fit.parameters
        .iter()
        .chain(&fit.derived)
        .map(|p| (p.name.clone(), p.value))
        .collect()
}

fn fit_failure(path: &Path, e: FitError) -> PipelineError {
    match e {
        FitError::NoConvergence { .. } => PipelineError::FitNonConvergence {
            file: path.to_path_buf(),
            message: e.to_string(),
        },
        other => PipelineError::input(path, None, other),
    }
}

fn fit_histogram(config: &ExperimentConfig, path: &Path) -> Result<FitReport> {
    let (hist, _) = read_histogram(path)?;
    let data = HistogramData::from(&hist);
    let options = config.fit_options();
    let (selection, fits) = match config.fit.model {
        DecayFitChoice::Auto => {
            let s = select_model_with(&data, &options).map_err(|e| fit_failure(path, e))?;
            let summary = SelectionSummary {
                choice: s.choice,
                delta_deviance: s.delta_deviance,
                threshold: s.threshold,
            };
            let (chosen, other) = match s.choice {
                pcqd::fit::ModelChoice::Mono => (s.mono, s.bi),
                pcqd::fit::ModelChoice::Bi => (s.bi, s.mono),
            };
            (Some(summary), vec![chosen, other])
        }
        DecayFitChoice::Mono => (None, vec![fit_decay(&data, 1, &options).map_err(|e| fit_failure(path, e))?]),
        DecayFitChoice::Bi => (None, vec![fit_decay(&data, 2, &options).map_err(|e| fit_failure(path, e))?]),
    };
    Ok(FitReport {
        schema_version: SCHEMA_VERSION,
        units: time_units(),
        input: file_name(path),
        kind: InputKind::Histogram,
        selection,
        headline: headline(&fits[0]),
        fits,
    })
}

fn fit_scan(config: &ExperimentConfig, path: &Path) -> Result<FitReport> {
    let (mut scan, meta) = read_scan(path)?;
    let specs = if config.modes.is_empty() { &meta.modes } else { &config.modes };
    if specs.is_empty() {
        return Err(config_error("modes", format!("no cavity modes for scan {}", path.display())));
    }
    let modes = specs
        .iter()
        .enumerate()
        .map(|(i, m)| m.cavity().map_err(|e| config_error(&format!("modes[{i}]"), e)))
        .collect::<Result<Vec<_>>>()?;
    if let Some(t) = config.fit.tau0_ps {
        scan.reference_tau0 = Tau0Reference::Constant(t);
    }
    let fit = fit_spectral_model(&scan, &modes, &config.fit_options()).map_err(|e| fit_failure(path, e))?;
    Ok(FitReport {
        schema_version: SCHEMA_VERSION,
        units: scan_units(),
        input: file_name(path),
        kind: InputKind::Scan,
        selection: None,
        headline: headline(&fit),
        fits: vec![fit],
    })
}

fn describe(report: &FitReport) -> String {
    let h = &report.headline;
    let fit = &report.fits[0];
    let se = |name: &str| fit.std_error(name).map(|e| format!(" ± {e:.3}")).unwrap_or_default();
    match report.kind {
        InputKind::Histogram => {
            let choice = report
                .selection
                .as_ref()
                .map(|s| format!(" (Δdeviance {:.1})", s.delta_deviance))
                .unwrap_or_default();
            if let Some(beta) = h.get("beta") {
                format!(
                    "biexponential{choice}: τ_fast {:.1}{} ps, τ_slow {:.1}{} ps, β {:.4}{}",
                    h["tau_fast"],
                    se("tau_fast"),
                    h["tau_slow"],
                    se("tau_slow"),
                    beta,
                    se("beta")
                )
            } else {
                format!("monoexponential{choice}: τ {:.1}{} ps", h["tau"], se("tau"))
            }
        }
        InputKind::Scan => {
            let mut parts = Vec::new();
            let mut k = 1;
            while let Some(f) = h.get(&format!("F_{k}")) {
                parts.push(format!(
                    "F_{k} {f:.1}{}, τ2 {:.1} ps, τ0/τ2 {:.1}, β {:.3}",
                    se(&format!("F_{k}")),
                    h[&format!("tau_on_resonance_{k}")],
                    h[&format!("ratio_{k}")],
                    h[&format!("beta_{k}")]
                ));
                k += 1;
            }
            format!("spectral: α {:.3}{}; {}", h["alpha"], se("alpha"), parts.join("; "))
        }
    }
}

/// Fits every input (concurrently) and writes reports in input order.
/// Returns the reports plus the first per-file non-convergence, if any;
/// other errors abort immediately.
pub(crate) fn run_fit(
    config: &ExperimentConfig,
    inputs: &[PathBuf],
    dir: &mut OutputDir,
    summary: &mut Vec<String>,
) -> Result<(Vec<FitReport>, Option<PipelineError>)> {
    let results: Vec<Result<FitReport>> = inputs
        .par_iter()
        .map(|path| match input_kind(path)? {
            InputKind::Histogram => fit_histogram(config, path),
            InputKind::Scan => fit_scan(config, path),
        })
        .collect();
    summary.push(format!("fit: {} input file(s)", inputs.len()));
    let mut used = BTreeSet::new();
    let mut reports = Vec::new();
    let mut failure = None;
    for (path, result) in inputs.iter().zip(results) {
        let stem = path.file_stem().map_or("input".into(), |s| s.to_string_lossy().into_owned());
        let mut name = format!("{stem}.fit.json");
        let mut k = 2;
        while !used.insert(name.clone()) {
            name = format!("{stem}-{k}.fit.json");
            k += 1;
        }
        match result {
            Ok(report) => {
                dir.write_json(&name, &report)?;
                summary.push(format!("  {}: {}", file_name(path), describe(&report)));
                reports.push(report);
            }
            Err(e @ PipelineError::FitNonConvergence { .. }) => {
                summary.push(format!("  {}: FAILED, {e}", file_name(path)));
                failure.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    Ok((reports, failure))
}
