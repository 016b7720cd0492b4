//! Experiment configuration: one JSON document, validated with field paths.

use crate::error::{ConfigError, PipelineError};
use pcqd::cavity::{H1Config, PeakRegion};
use pcqd::crystal::{SlabWaveguide, TriangularLattice};
use pcqd::fit::{FitOptions, Tau0Reference};
use pcqd::qed::CavityMode;
use pcqd::tcspc::{DecayComponent, DecayModel, InstrumentResponse, TimeGrid};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlabConfig {
    pub thickness_nm: f64,
    pub n_core: f64,
    pub n_clad: f64,
    /// Wavelength at which the effective index is evaluated.
    pub reference_wavelength_nm: f64,
}

impl Default for SlabConfig {
    fn default() -> Self {
        Self {
            thickness_nm: 400.0,
            n_core: 3.4,
            n_clad: 1.0,
            reference_wavelength_nm: 1050.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrystalConfig {
    pub period_nm: f64,
    /// Hole radius over period; every command sweeps this list.
    pub hole_ratios: Vec<f64>,
    pub slab: SlabConfig,
    /// Overrides the effective-index permittivity when set.
    pub eps_background: Option<f64>,
    pub eps_hole: f64,
}

impl Default for CrystalConfig {
    fn default() -> Self {
        Self {
            period_nm: 300.0,
            hole_ratios: vec![0.37],
            slab: SlabConfig::default(),
            eps_background: None,
            eps_hole: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BandsConfig {
    /// Rhombic plane-wave cutoff N, `(2N+1)²` waves.
    pub plane_wave_cutoff: usize,
    pub samples_per_segment: usize,
    pub n_bands: usize,
}

impl Default for BandsConfig {
    fn default() -> Self {
        Self {
            plane_wave_cutoff: 7,
            samples_per_segment: 11,
            n_bands: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CavityConfig {
    pub supercell_size: usize,
    pub bulk_shells: usize,
    pub grid_per_period: usize,
    pub gap_samples: usize,
    pub degeneracy_tol: f64,
    /// Slab height used for the mode volume (nm).
    pub vertical_height_nm: f64,
    /// Refractive index in the `(λ/n)³` unit.
    pub mode_index: f64,
    pub peak_region: PeakRegion,
    /// Write one field CSV per in-gap mode.
    pub export_fields: bool,
}

impl Default for CavityConfig {
    fn default() -> Self {
        let h1 = H1Config::default();
        Self {
            supercell_size: h1.supercell_size,
            bulk_shells: h1.bulk_shells,
            grid_per_period: h1.grid_per_period,
            gap_samples: h1.gap_samples,
            degeneracy_tol: h1.degeneracy_tol,
            vertical_height_nm: 400.0,
            mode_index: 3.4,
            peak_region: PeakRegion::Dielectric,
            export_fields: false,
        }
    }
}

/// Cavity mode given directly rather than solved for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub lambda_nm: f64,
    pub q: f64,
    pub v_mode: f64,
}

impl ModeSpec {
    pub fn cavity(&self) -> Result<CavityMode<f64>, String> {
        CavityMode::new(self.lambda_nm, self.q, self.v_mode).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub lifetime_ps: f64,
    /// Amplitude per bin at the excitation time; exclusive with
    /// `count_fraction`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    /// Share of the signal counts carried by this component.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecayConfig {
    pub components: Vec<ComponentSpec>,
    /// Counts per bin.
    pub background: f64,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self {
            components: vec![
                ComponentSpec {
                    lifetime_ps: 150.0,
                    amplitude: None,
                    count_fraction: Some(0.6),
                },
                ComponentSpec {
                    lifetime_ps: 1800.0,
                    amplitude: None,
                    count_fraction: Some(0.4),
                },
            ],
            background: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IrfConfig {
    pub fwhm_ps: f64,
    pub t0_ps: f64,
}

impl Default for IrfConfig {
    fn default() -> Self {
        Self {
            fwhm_ps: 150.0,
            t0_ps: 1000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t_start_ps: f64,
    pub bin_width_ps: f64,
    pub bins: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            t_start_ps: 0.0,
            bin_width_ps: 12.0,
            bins: 4096,
        }
    }
}

/// Lifetime-versus-wavelength scan generated from the rate model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub start_nm: f64,
    pub stop_nm: f64,
    pub step_nm: f64,
    /// One Purcell factor per entry of `modes`.
    pub purcell: Vec<f64>,
    pub alpha: f64,
    pub tau0_ps: f64,
    pub rel_noise: f64,
}

impl ScanConfig {
    pub fn wavelengths(&self) -> Vec<f64> {
        let n = ((self.stop_nm - self.start_nm) / self.step_nm + 1e-9).floor() as usize;
        (0..=n).map(|i| self.start_nm + i as f64 * self.step_nm).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    /// Required by every stochastic step.
    pub seed: Option<u64>,
    pub total_counts: u64,
    pub irf: IrfConfig,
    pub grid: GridConfig,
    pub decay: DecayConfig,
    pub spectral_scan: Option<ScanConfig>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            seed: None,
            total_counts: 100_000,
            irf: IrfConfig::default(),
            grid: GridConfig::default(),
            decay: DecayConfig::default(),
            spectral_scan: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayFitChoice {
    /// Fit both and keep the likelihood-ratio choice.
    Auto,
    Mono,
    Bi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub model: DecayFitChoice,
    pub max_iterations: usize,
    pub rel_tol: f64,
    pub grad_tol: f64,
    pub selection_threshold: f64,
    /// Histogram or scan CSV files; command-line paths take precedence.
    pub inputs: Vec<PathBuf>,
    /// Replaces the τ0 reference stored with a scan.
    pub tau0_ps: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        let o = FitOptions::default();
        Self {
            model: DecayFitChoice::Auto,
            max_iterations: o.max_iterations,
            rel_tol: o.rel_tol,
            grad_tol: o.grad_tol,
            selection_threshold: o.selection_threshold,
            inputs: Vec::new(),
            tau0_ps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub crystal: CrystalConfig,
    #[serde(default)]
    pub bands: BandsConfig,
    #[serde(default)]
    pub cavity: CavityConfig,
    /// Cavity modes used by scan generation and fitting.
    #[serde(default)]
    pub modes: Vec<ModeSpec>,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            crystal: CrystalConfig::default(),
            bands: BandsConfig::default(),
            cavity: CavityConfig::default(),
            modes: Vec::new(),
            simulation: SimulationConfig::default(),
            fit: FitConfig::default(),
            output_dir: None,
        }
    }
}

fn err(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        path: path.into(),
        message: message.into(),
    }
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(err(path, format!("must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    /// Built-in scenario with the reference device and measurement values.
    pub fn paper() -> Self {
        let mut cfg = Self::default();
        cfg.crystal.hole_ratios = vec![0.33, 0.36, 0.37, 0.39, 0.42];
        // M2 of the measured device; the solver does not reach 3D accuracy
        cfg.modes = vec![ModeSpec {
            lambda_nm: 1031.5,
            q: 1950.0,
            v_mode: 1.5,
        }];
        cfg.simulation.seed = Some(2006);
        cfg.simulation.spectral_scan = Some(ScanConfig {
            start_nm: 1023.5,
            stop_nm: 1039.5,
            step_nm: 0.25,
            purcell: vec![56.0],
            alpha: 0.47,
            tau0_ps: 840.0,
            rel_noise: 0.05,
        });
        cfg
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            err(if path == "." { String::new() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Ok(Self::from_json_str(&text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form. The output directory is not part
    /// of the experiment and is left out.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&Self {
            output_dir: None,
            ..self.clone()
        })
        .expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(err(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        let c = &self.crystal;
        positive("crystal.period_nm", c.period_nm)?;
        if c.hole_ratios.is_empty() {
            return Err(err("crystal.hole_ratios", "sweep list must not be empty"));
        }
        for (i, &r) in c.hole_ratios.iter().enumerate() {
            if !(0.0..0.5).contains(&r) {
                return Err(err(format!("crystal.hole_ratios[{i}]"), format!("must be in [0, 0.5), got {r}")));
            }
        }
        positive("crystal.slab.thickness_nm", c.slab.thickness_nm)?;
        positive("crystal.slab.reference_wavelength_nm", c.slab.reference_wavelength_nm)?;
        if !(c.slab.n_core > c.slab.n_clad && c.slab.n_clad >= 1.0) {
            return Err(err("crystal.slab", "need n_core > n_clad >= 1"));
        }
        if let Some(e) = c.eps_background {
            positive("crystal.eps_background", e)?;
        }
        positive("crystal.eps_hole", c.eps_hole)?;

        let b = &self.bands;
        if b.plane_wave_cutoff == 0 {
            return Err(err("bands.plane_wave_cutoff", "must be at least 1"));
        }
        if b.samples_per_segment < 2 {
            return Err(err("bands.samples_per_segment", "must be at least 2"));
        }
        if b.n_bands < 2 {
            return Err(err("bands.n_bands", "must be at least 2 to locate a gap"));
        }

        let cv = &self.cavity;
        if cv.supercell_size < 5 || cv.supercell_size.is_multiple_of(2) {
            return Err(err("cavity.supercell_size", "must be odd and at least 5"));
        }
        if cv.bulk_shells == 0 {
            return Err(err("cavity.bulk_shells", "must be at least 1"));
        }
        if cv.grid_per_period < 2 {
            return Err(err("cavity.grid_per_period", "must be at least 2"));
        }
        positive("cavity.degeneracy_tol", cv.degeneracy_tol)?;
        positive("cavity.vertical_height_nm", cv.vertical_height_nm)?;
        positive("cavity.mode_index", cv.mode_index)?;

        for (i, m) in self.modes.iter().enumerate() {
            m.cavity().map_err(|e| err(format!("modes[{i}]"), e))?;
        }

        let s = &self.simulation;
        if s.total_counts == 0 {
            return Err(err("simulation.total_counts", "must be positive"));
        }
        positive("simulation.irf.fwhm_ps", s.irf.fwhm_ps)?;
        positive("simulation.grid.bin_width_ps", s.grid.bin_width_ps)?;
        if s.grid.bins == 0 {
            return Err(err("simulation.grid.bins", "must be positive"));
        }
        if s.decay.components.is_empty() {
            return Err(err("simulation.decay.components", "must not be empty"));
        }
        for (i, comp) in s.decay.components.iter().enumerate() {
            let p = format!("simulation.decay.components[{i}]");
            positive(&format!("{p}.lifetime_ps"), comp.lifetime_ps)?;
            match (comp.amplitude, comp.count_fraction) {
                (Some(a), None) if a >= 0.0 => {}
                (None, Some(f)) if f >= 0.0 => {}
                (Some(_), Some(_)) => {
                    return Err(err(p, "give either amplitude or count_fraction, not both"))
                }
                (None, None) => return Err(err(p, "amplitude or count_fraction required")),
                _ => return Err(err(p, "amplitude and count_fraction must be non-negative")),
            }
        }
        let mixed = s.decay.components.iter().any(|c| c.amplitude.is_some())
            && s.decay.components.iter().any(|c| c.count_fraction.is_some());
        if mixed {
            return Err(err("simulation.decay.components", "use one weighting style for all components"));
        }
        if !(s.decay.background >= 0.0) {
            return Err(err("simulation.decay.background", "must be non-negative"));
        }
        self.decay_model()
            .map_err(|e| err("simulation.decay", e))?;
        if let Some(scan) = &s.spectral_scan {
            positive("simulation.spectral_scan.step_nm", scan.step_nm)?;
            positive("simulation.spectral_scan.tau0_ps", scan.tau0_ps)?;
            positive("simulation.spectral_scan.alpha", scan.alpha)?;
            if !(scan.stop_nm > scan.start_nm) {
                return Err(err("simulation.spectral_scan.stop_nm", "must exceed start_nm"));
            }
            if !(scan.rel_noise >= 0.0) {
                return Err(err("simulation.spectral_scan.rel_noise", "must be non-negative"));
            }
            if scan.purcell.len() != self.modes.len() {
                return Err(err(
                    "simulation.spectral_scan.purcell",
                    format!("need one value per mode ({} modes)", self.modes.len()),
                ));
            }
            if let Some(i) = scan.purcell.iter().position(|&f| !(f >= 0.0)) {
                return Err(err(format!("simulation.spectral_scan.purcell[{i}]"), "must be non-negative"));
            }
        }

        let f = &self.fit;
        if f.max_iterations == 0 {
            return Err(err("fit.max_iterations", "must be positive"));
        }
        positive("fit.rel_tol", f.rel_tol)?;
        positive("fit.grad_tol", f.grad_tol)?;
        if !(f.selection_threshold >= 0.0) {
            return Err(err("fit.selection_threshold", "must be non-negative"));
        }
        if let Some(t) = f.tau0_ps {
            positive("fit.tau0_ps", t)?;
        }
        Ok(())
    }

    /// Background permittivity: explicit override or slab effective index².
    pub fn eps_background(&self) -> Result<f64, PipelineError> {
        if let Some(e) = self.crystal.eps_background {
            return Ok(e);
        }
        let s = &self.crystal.slab;
        let slab = SlabWaveguide::new(s.thickness_nm, s.n_core, s.n_clad)
            .map_err(|e| PipelineError::solver("effective-index", e))?;
        let n = slab
            .effective_index(s.reference_wavelength_nm)
            .map_err(|e| PipelineError::solver("effective-index", e))?;
        Ok(n * n)
    }

    pub fn lattice(&self, hole_ratio: f64) -> Result<TriangularLattice<f64>, PipelineError> {
        TriangularLattice::new(
            self.crystal.period_nm,
            hole_ratio,
            self.eps_background()?,
            self.crystal.eps_hole,
        )
        .map_err(|e| PipelineError::Config(err("crystal", e.to_string())))
    }

    pub fn h1(&self) -> H1Config {
        let c = &self.cavity;
        H1Config {
            supercell_size: c.supercell_size,
            bulk_shells: c.bulk_shells,
            grid_per_period: c.grid_per_period,
            gap_samples: c.gap_samples,
            degeneracy_tol: c.degeneracy_tol,
        }
    }

    pub fn irf(&self) -> InstrumentResponse<f64> {
        let i = self.simulation.irf;
        InstrumentResponse {
            fwhm: i.fwhm_ps,
            t0: i.t0_ps,
        }
    }

    pub fn time_grid(&self) -> TimeGrid<f64> {
        let g = self.simulation.grid;
        TimeGrid {
            t_start: g.t_start_ps,
            bin_width: g.bin_width_ps,
            bins: g.bins,
        }
    }

    pub fn decay_model(&self) -> Result<DecayModel<f64>, String> {
        let d = &self.simulation.decay;
        let components = d
            .components
            .iter()
            .map(|c| DecayComponent {
                amplitude: c
                    .amplitude
                    .unwrap_or_else(|| c.count_fraction.unwrap_or(0.0) / c.lifetime_ps),
                lifetime: c.lifetime_ps,
            })
            .collect();
        DecayModel::new(components, d.background).map_err(|e| e.to_string())
    }

    pub fn seed(&self) -> Result<u64, PipelineError> {
        self.simulation.seed.ok_or_else(|| {
            PipelineError::Config(err("simulation.seed", "required for any stochastic step"))
        })
    }

    pub fn cavity_modes(&self) -> Vec<CavityMode<f64>> {
        self.modes
            .iter()
            .map(|m| m.cavity().expect("validated mode"))
            .collect()
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            max_iterations: self.fit.max_iterations,
            rel_tol: self.fit.rel_tol,
            grad_tol: self.fit.grad_tol,
            selection_threshold: self.fit.selection_threshold,
        }
    }

    pub fn scan_tau0(&self) -> Option<Tau0Reference<f64>> {
        self.simulation
            .spectral_scan
            .as_ref()
            .map(|s| Tau0Reference::Constant(s.tau0_ps))
    }
}
