//! JSON documents written by the commands. Every one carries
//! `schema_version` and a `units` map.

use crate::config::{ModeSpec, SCHEMA_VERSION};
use pcqd::bands::{BandGap, BandStructure, GapOutcome};
use pcqd::cavity::Parity;
use pcqd::fit::{FitResult, ModelChoice, Tau0Reference};
use pcqd::tcspc::DecayModel;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub type Units = BTreeMap<String, String>;

pub fn units(pairs: &[(&str, &str)]) -> Units {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GapStatus {
    #[serde(rename = "gap")]
    Gap,
    #[serde(rename = "no gap")]
    NoGap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapEdges {
    pub lower_edge: f64,
    pub upper_edge: f64,
    pub midgap: f64,
    pub width: f64,
    pub relative_width: f64,
    pub midgap_wavelength_nm: f64,
    /// Short and long wavelength edges.
    pub wavelength_range_nm: [f64; 2],
}

impl GapEdges {
    pub fn new(gap: &BandGap<f64>, period_nm: f64) -> Self {
        Self {
            lower_edge: gap.lower_edge,
            upper_edge: gap.upper_edge,
            midgap: gap.midgap,
            width: gap.width(),
            relative_width: gap.relative_width(),
            midgap_wavelength_nm: gap.midgap_wavelength(period_nm),
            wavelength_range_nm: [period_nm / gap.upper_edge, period_nm / gap.lower_edge],
        }
    }
}

/// TE gap between the first two bands for one hole size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub schema_version: u32,
    pub units: Units,
    pub period_nm: f64,
    pub hole_ratio: f64,
    pub eps_background: f64,
    pub plane_waves: usize,
    pub k_points: usize,
    pub status: GapStatus,
    pub gap: Option<GapEdges>,
    pub band1_max: f64,
    pub band2_min: f64,
}

impl GapReport {
    pub fn new(
        bands: &BandStructure<f64>,
        outcome: &GapOutcome<f64>,
        period_nm: f64,
        hole_ratio: f64,
        eps_background: f64,
        plane_waves: usize,
    ) -> Self {
        let band1_max = bands.band(0).fold(f64::NEG_INFINITY, f64::max);
        let band2_min = bands.band(1).fold(f64::INFINITY, f64::min);
        let gap = outcome.gap().map(|g| GapEdges::new(g, period_nm));
        Self {
            schema_version: SCHEMA_VERSION,
            units: units(&[
                ("frequency", "a/lambda"),
                ("length", "nm"),
                ("wavelength", "nm"),
            ]),
            period_nm,
            hole_ratio,
            eps_background,
            plane_waves,
            k_points: bands.points.len(),
            status: if gap.is_some() { GapStatus::Gap } else { GapStatus::NoGap },
            gap,
            band1_max,
            band2_min,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModesOutcome {
    #[serde(rename = "found")]
    Found,
    #[serde(rename = "none found")]
    NoneFound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeEntry {
    pub index: usize,
    pub frequency: f64,
    pub wavelength_nm: f64,
    pub parity: Parity,
    pub multiplicity: usize,
    /// Distance above the lower gap edge as a fraction of the gap width.
    pub gap_depth: Option<f64>,
    /// Normalised at the peak inside the dielectric, `(λ/n)³`.
    pub mode_volume: f64,
    /// Normalised at the global peak, `(λ/n)³`.
    pub mode_volume_global: f64,
    pub field_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoubletEntry {
    pub modes: [usize; 2],
    pub frequency: f64,
    pub wavelength_nm: f64,
    /// `|f1 − f2| / f`
    pub splitting: f64,
    pub mode_volume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModesReport {
    pub schema_version: u32,
    pub units: Units,
    pub period_nm: f64,
    pub hole_ratio: f64,
    pub eps_background: f64,
    pub basis_size: usize,
    pub bulk_gap: Option<GapEdges>,
    pub outcome: ModesOutcome,
    pub modes: Vec<ModeEntry>,
    pub doublets: Vec<DoubletEntry>,
    pub vertical_height_nm: f64,
    pub mode_index: f64,
}

/// Sidecar of a histogram CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramMeta {
    pub schema_version: u32,
    pub units: Units,
    pub bin_width: f64,
    pub t_start: f64,
    pub bins: usize,
    pub total_counts: u64,
    pub irf_fwhm: f64,
    pub irf_t0: f64,
    pub seed: Option<u64>,
    /// Generating model; amplitudes are per unit time before scaling to
    /// `total_counts`.
    pub model: Option<DecayModel<f64>>,
}

pub fn time_units() -> Units {
    units(&[("time", "ps"), ("counts", "photons per bin")])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanTruth {
    pub purcell: Vec<f64>,
    pub alpha: f64,
    pub rel_noise: f64,
    pub seed: u64,
}

/// Sidecar of a lifetime scan CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanMeta {
    pub schema_version: u32,
    pub units: Units,
    pub reference_tau0: Tau0Reference<f64>,
    pub modes: Vec<ModeSpec>,
    pub truth: Option<ScanTruth>,
}

pub fn scan_units() -> Units {
    units(&[("wavelength", "nm"), ("lifetime", "ps")])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    Histogram,
    Scan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub choice: ModelChoice,
    /// Deviance(mono) − deviance(bi).
    pub delta_deviance: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub units: Units,
    pub input: String,
    pub kind: InputKind,
    pub selection: Option<SelectionSummary>,
    /// The chosen fit first.
    pub fits: Vec<FitResult<f64>>,
    /// Key numbers of the chosen fit.
    pub headline: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

/// Record of one command run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub schema_version: u32,
    pub run_id: String,
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub outputs: Vec<OutputFile>,
    pub summary: Vec<String>,
}
