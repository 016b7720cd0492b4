//! Pass/fail checks of the full scenario against the published numbers.

use crate::commands::write_histogram;
use crate::config::ExperimentConfig;
use crate::error::{PipelineError, Result};
use crate::formats::{FitReport, GapReport, InputKind, ModesReport};
use crate::io::OutputDir;
use pcqd::bands::{compute_bands, PlaneWaveBasis};
use pcqd::crystal::kpath_gamma_m_k;
use pcqd::fit::{
    fit_spectral_model, select_model_with, simulate_scan, HistogramData, ModelChoice,
    Tau0Reference,
};
use pcqd::qed::{
    coupling_efficiency, enhanced_lifetime, lifetime_ratio, purcell_factor, CavityMode,
    EmitterCoupling,
};
use pcqd::tcspc::{
    expected_curve, sample_histogram, DecayModel, InstrumentResponse, TimeGrid,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub id: u32,
    pub name: String,
    pub computed: String,
    pub target: String,
    pub pass: bool,
}

impl Criterion {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {}  {}: {} (target {})",
            self.id,
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.computed,
            self.target
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaReport {
    pub schema_version: u32,
    pub criteria: Vec<Criterion>,
}

/// Uncoupled reference lifetime (ps): the scan's τ0, else the bulk value.
fn tau0_ps(config: &ExperimentConfig) -> f64 {
    config
        .simulation
        .spectral_scan
        .as_ref()
        .map_or(840.0, |s| s.tau0_ps)
}

const REFERENCE_SEED_OFFSET: u64 = 2;
/// Seeds per scenario in the Monte Carlo selection and scan checks.
const SELECTION_SEEDS: u64 = 100;
const SCAN_SEEDS: u64 = 50;

/// Monoexponential histogram at τ0, the uncoupled-emitter reference.
pub(crate) fn simulate_reference(config: &ExperimentConfig, dir: &mut OutputDir, summary: &mut Vec<String>) -> Result<PathBuf> {
    let seed = config.seed()?.wrapping_add(REFERENCE_SEED_OFFSET);
    let tau = tau0_ps(config);
    let model = DecayModel::mono(1.0 / tau, tau, config.simulation.decay.background)
        .map_err(|e| PipelineError::solver("simulate", e))?;
    let curve = expected_curve(&model, &config.irf(), &config.time_grid());
    let hist = sample_histogram(&curve, config.simulation.total_counts, seed)
        .map_err(|e| PipelineError::solver("simulate", e))?;
    summary.push(format!("  reference: monoexponential τ {tau} ps, seed {seed}"));
    write_histogram(dir, "histogram_reference", &hist, seed, &model)
}

fn check(id: u32, name: &str, computed: String, target: &str, pass: bool) -> Criterion {
    Criterion {
        id,
        name: name.to_string(),
        computed,
        target: target.to_string(),
        pass,
    }
}

fn qed_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::solver("criteria", e)
}

/// Largest relative deviation of the r/a = 0 bands from the folded light
/// line over the first five bands.
fn empty_lattice_error(config: &ExperimentConfig) -> Result<(f64, usize)> {
    let lattice = config.lattice(0.0)?;
    let path = kpath_gamma_m_k(11).map_err(qed_err)?;
    let basis = PlaneWaveBasis::rhombic(&lattice, config.bands.plane_wave_cutoff);
    let bands = compute_bands(&lattice, &path, &basis, 5).map_err(qed_err)?;
    let [b1, b2] = lattice.reciprocal_basis();
    let n = lattice.eps_background.sqrt();
    let a = lattice.period_a;
    let mut worst = 0.0_f64;
    for (p, row) in bands.points.iter().zip(&bands.frequencies) {
        let k = b1 * p.frac[0] + b2 * p.frac[1];
        let mut light: Vec<f64> = Vec::new();
        for m in -12..=12 {
            for l in -12..=12 {
                let q = k + b1 * f64::from(m) + b2 * f64::from(l);
                light.push(a * q.norm() / (2.0 * std::f64::consts::PI * n));
            }
        }
        light.sort_by(f64::total_cmp);
        for (f, exact) in row.iter().zip(&light) {
            let err = if *exact > 0.0 { (f - exact).abs() / exact } else { f.abs() };
            worst = worst.max(err);
        }
    }
    Ok((worst, bands.points.len()))
}

/// Largest relative deviation of the closed-form curve from a 0.1 ps
/// midpoint-rule convolution.
fn convolution_error() -> f64 {
    let tau = 800.0;
    let irf = InstrumentResponse { fwhm: 150.0, t0: 0.0 };
    let sigma = irf.sigma();
    let model = DecayModel::mono(1.0, tau, 0.0).expect("valid model");
    let grid = TimeGrid { t_start: -400.0, bin_width: 48.0, bins: 60 };
    let curve = expected_curve(&model, &irf, &grid);
    let h = 0.1;
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * sigma);
    grid.centers()
        .zip(&curve.signal)
        .map(|(t, &v)| {
            let steps = ((t.max(0.0) + 10.0 * sigma) / h) as usize;
            let brute: f64 = (0..steps)
                .map(|k| {
                    let s = (k as f64 + 0.5) * h;
                    let d = t - s;
                    h * (-s / tau).exp() * norm * (-d * d / (2.0 * sigma * sigma)).exp()
                })
                .sum();
            (v - brute).abs() / brute
        })
        .fold(0.0, f64::max)
}

fn near(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol
}

fn find_fit<'a>(fits: &'a [FitReport], input: &str) -> Option<&'a FitReport> {
    fits.iter().find(|f| f.input == input)
}

pub(crate) fn evaluate(
    config: &ExperimentConfig,
    gaps: &[GapReport],
    modes: &[ModesReport],
    fits: &[FitReport],
) -> Result<Vec<Criterion>> {
    let mut out = Vec::new();

    let fp = purcell_factor(2000.0, 1.5).map_err(qed_err)?;
    out.push(check(1, "Purcell factor F_p(Q=2000, V=1.5)", format!("{fp:.2}, published ~100"), "101.32 ± 0.01", near(fp, 101.32, 0.01)));

    let b1 = coupling_efficiency(150.0, 1800.0).map_err(qed_err)?;
    let b2 = coupling_efficiency(50.0, 1800.0).map_err(qed_err)?;
    out.push(check(
        2,
        "coupling efficiency β",
        format!("β(0.15, 1.8 ns) {b1:.4}, β(0.05, 1.8 ns) {b2:.4}"),
        "0.9167 and 0.9722 ± 0.0001",
        near(b1, 0.9167, 1e-4) && near(b2, 0.9722, 1e-4),
    ));

    let cavity = CavityMode::new(1031.5, 1950.0, 1.5).map_err(qed_err)?;
    let coupling = EmitterCoupling::new(1.0, 1031.5, 0.47).map_err(qed_err)?;
    let ratio = lifetime_ratio(56.0, &coupling, &cavity).map_err(qed_err)?;
    let tau2 = enhanced_lifetime(0.84, ratio).map_err(qed_err)?;
    out.push(check(
        3,
        "lifetime ratio at F=56, α=0.47, zero detuning",
        format!("τ0/τ2 {ratio:.2}, τ2 {tau2:.1} ps"),
        "19.1 (inside 19 ± 4), τ2 44 ± 1 ps",
        near(ratio, 19.1, 0.05) && near(ratio, 19.0, 4.0) && near(tau2, 44.0, 1.0),
    ));

    let (err, npts) = empty_lattice_error(config)?;
    out.push(check(
        4,
        "empty lattice vs folded light line",
        format!("max relative error {err:.1e} over {npts} k-points, 5 bands"),
        "≤ 1e-6 at ≥ 30 k-points",
        err <= 1e-6 && npts >= 30,
    ));

    let at = |ra: f64| gaps.iter().find(|g| (g.hole_ratio - ra).abs() < 1e-12);
    let c5 = match at(0.37).and_then(|g| g.gap) {
        Some(g) => check(
            5,
            "midgap wavelength at r/a = 0.37",
            format!("{:.1} nm (gap {:.0}-{:.0} nm)", g.midgap_wavelength_nm, g.wavelength_range_nm[0], g.wavelength_range_nm[1]),
            "1100 ± 75 nm",
            near(g.midgap_wavelength_nm, 1100.0, 75.0),
        ),
        None if at(0.37).is_some() => check(5, "midgap wavelength at r/a = 0.37", "no gap".into(), "1100 ± 75 nm", false),
        None => check(5, "midgap wavelength at r/a = 0.37", "r/a 0.37 not in sweep".into(), "1100 ± 75 nm", false),
    };
    out.push(c5);

    let mut sweep: Vec<&ModesReport> = modes.iter().collect();
    sweep.sort_by(|a, b| a.hole_ratio.total_cmp(&b.hole_ratio));
    let doublet_at = |ra: f64| {
        sweep
            .iter()
            .find(|m| (m.hole_ratio - ra).abs() < 1e-12)
            .map(|m| (m.doublets.len(), m.doublets.first().map(|d| d.splitting)))
    };
    let wavelengths: Vec<Option<f64>> = sweep.iter().map(|m| m.doublets.first().map(|d| d.wavelength_nm)).collect();
    let monotone = sweep.len() >= 2
        && wavelengths.iter().all(Option::is_some)
        && wavelengths.windows(2).all(|w| w[0] > w[1]);
    let listed: Vec<String> = sweep
        .iter()
        .zip(&wavelengths)
        .map(|(m, w)| match w {
            Some(w) => format!("{}: {w:.1}", m.hole_ratio),
            None => format!("{}: none", m.hole_ratio),
        })
        .collect();
    let (c6_text, single) = match doublet_at(0.37) {
        Some((n, split)) => (
            format!("{n} doublet(s) at r/a 0.37, splitting {:.1e}", split.unwrap_or(f64::NAN)),
            n == 1 && split.is_some_and(|s| s < 1e-3),
        ),
        None => ("r/a 0.37 not in sweep".to_string(), false),
    };
    out.push(check(
        6,
        "H1 dipole doublet",
        format!("{c6_text}; doublet λ (nm) by r/a {}", listed.join(", ")),
        "one doublet, splitting < 1e-3, λ rising as r/a falls",
        single && monotone,
    ));

    let conv = convolution_error();
    out.push(check(
        7,
        "reconvolution vs 0.1 ps quadrature (τ 800 ps, FWHM 150 ps)",
        format!("max relative error {conv:.1e}"),
        "≤ 1e-4",
        conv <= 1e-4,
    ));

    out.push(fit_round_trip(config, fits)?);
    out.push(scan_round_trip(config, fits)?);

    let substituted = out.iter().any(|c| c.id == 6) && out.iter().any(|c| c.id == 8) && out.iter().any(|c| c.id == 9);
    out.push(check(
        10,
        "substitutes for unavailable raw data",
        "criteria 8-9 checked by synthetic round trips, 6 by symmetry and monotonicity".into(),
        "substitute checks executed",
        substituted,
    ));
    Ok(out)
}

fn fit_round_trip(config: &ExperimentConfig, fits: &[FitReport]) -> Result<Criterion> {
    let mut lifetimes: Vec<f64> = config.simulation.decay.components.iter().map(|c| c.lifetime_ps).collect();
    lifetimes.sort_by(f64::total_cmp);
    let tau0 = tau0_ps(config);
    let missing = |name: &str| PipelineError::solver("criteria", format!("no fit report for {name}"));
    let mono = find_fit(fits, "histogram_reference.csv").ok_or_else(|| missing("histogram_reference.csv"))?;
    let bi = find_fit(fits, "histogram.csv").ok_or_else(|| missing("histogram.csv"))?;

    let tau_mono = mono.fits.iter().find(|f| f.parameter("tau").is_some()).map(|f| f.value("tau"));
    let mono_ok = tau_mono.is_some_and(|t| near(t, tau0, 0.03 * tau0));
    let (bi_ok, bi_text) = match (lifetimes.as_slice(), bi.fits.iter().find(|f| f.parameter("tau_slow").is_some())) {
        (&[fast, slow], Some(f)) => {
            let (tf, ts, beta) = (f.value("tau_fast"), f.value("tau_slow"), f.value("beta"));
            let expected_beta = 1.0 - fast / slow;
            (
                near(ts, slow, 0.05 * slow) && near(tf, fast, 0.2 * fast) && near(beta, expected_beta, 0.02),
                format!("τ_slow {ts:.0} ps, τ_fast {tf:.1} ps, β {beta:.3}"),
            )
        }
        _ => (false, "scenario is not biexponential".to_string()),
    };

    // selection rate over fresh seeds for both scenarios
    let seed = config.seed()?;
    let opts = config.fit_options();
    let irf = config.irf();
    let grid = config.time_grid();
    let bi_model = config.decay_model().map_err(qed_err)?;
    let mono_model = DecayModel::mono(1.0 / tau0, tau0, config.simulation.decay.background).map_err(qed_err)?;
    let counts = config.simulation.total_counts;
    let rate = |model: &DecayModel<f64>, truth: ModelChoice, offset: u64| -> Result<u64> {
        let curve = expected_curve(model, &irf, &grid);
        let hits = (0..SELECTION_SEEDS)
            .into_par_iter()
            .map(|i| {
                let h = sample_histogram(&curve, counts, seed.wrapping_add(offset + i)).map_err(qed_err)?;
                let s = select_model_with(&HistogramData::from(&h), &opts).map_err(qed_err)?;
                Ok(u64::from(s.choice == truth))
            })
            .collect::<Result<Vec<u64>>>()?;
        Ok(hits.iter().sum())
    };
    let expect_bi = if bi_model.components.len() == 2 { ModelChoice::Bi } else { ModelChoice::Mono };
    let mono_hits = rate(&mono_model, ModelChoice::Mono, 10_000)?;
    let bi_hits = rate(&bi_model, expect_bi, 20_000)?;
    let need = SELECTION_SEEDS * 95 / 100;
    let chosen_ok = mono.selection.as_ref().is_some_and(|s| s.choice == ModelChoice::Mono)
        && bi.selection.as_ref().is_some_and(|s| s.choice == expect_bi);

    Ok(check(
        8,
        "decay fit round trips",
        format!(
            "mono τ {} ps; {bi_text}; true model chosen mono {mono_hits}/{SELECTION_SEEDS}, bi {bi_hits}/{SELECTION_SEEDS}",
            tau_mono.map_or("n/a".into(), |t| format!("{t:.1}"))
        ),
        "τ0 within 3%, τ1 within 5%, τ2 within 20%, β 0.92 ± 0.02, selection ≥ 95%",
        mono_ok && bi_ok && chosen_ok && mono_hits >= need && bi_hits >= need,
    ))
}

fn scan_round_trip(config: &ExperimentConfig, fits: &[FitReport]) -> Result<Criterion> {
    let name = "lifetime scan fit (F=56, α=0.47, τ0=840 ps, 5% noise)";
    let target = "F within ±10, τ0/τ2 19 ± 4 in ≥ 90% of 50 seeds";
    let Some(sc) = &config.simulation.spectral_scan else {
        return Ok(check(9, name, "no spectral scan configured".into(), target, false));
    };
    let Some(report) = fits.iter().find(|f| f.kind == InputKind::Scan) else {
        return Ok(check(9, name, "no scan fit".into(), target, false));
    };
    let truth_f = sc.purcell.first().copied().unwrap_or(0.0);
    let ok = |f: f64, r: f64| near(f, truth_f, 10.0) && near(r, 19.0, 4.0);
    let h = &report.headline;
    let (f1, r1) = (h.get("F_1").copied().unwrap_or(f64::NAN), h.get("ratio_1").copied().unwrap_or(f64::NAN));

    let modes = config.cavity_modes();
    let tau0 = Tau0Reference::Constant(sc.tau0_ps);
    let wavelengths = sc.wavelengths();
    let opts = config.fit_options();
    let seed = config.seed()?;
    let hits: u64 = (0..SCAN_SEEDS)
        .into_par_iter()
        .map(|i| {
            let scan = simulate_scan(&tau0, &modes, &sc.purcell, sc.alpha, &wavelengths, sc.rel_noise, seed.wrapping_add(30_000 + i))
                .map_err(qed_err)?;
            Ok(match fit_spectral_model(&scan, &modes, &opts) {
                Ok(fit) => u64::from(ok(fit.value("F_1"), fit.value("ratio_1"))),
                Err(_) => 0,
            })
        })
        .collect::<Result<Vec<u64>>>()?
        .iter()
        .sum();
    Ok(check(
        9,
        name,
        format!("F {f1:.1}, τ0/τ2 {r1:.1} on the written scan; {hits}/{SCAN_SEEDS} seeds within tolerance"),
        target,
        ok(f1, r1) && hits * 10 >= SCAN_SEEDS * 9,
    ))
}
