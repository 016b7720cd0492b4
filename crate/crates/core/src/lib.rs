//! Photonic-crystal cavity modelling and time-resolved emission analysis.
//!
//! Everything numeric is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below fix the double-precision types used by the pipeline.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bands;
pub mod cavity;
pub mod crystal;
pub mod fit;
pub mod qed;
pub mod scalar;
pub mod tcspc;

pub use scalar::Scalar;

pub type Lattice = crystal::TriangularLattice<f64>;
pub type Slab = crystal::SlabWaveguide<f64>;
pub type KPath = crystal::KPath<f64>;
pub type Bands = bands::BandStructure<f64>;
pub type Gap = bands::BandGap<f64>;
pub type H1Solution = cavity::H1Modes<f64>;
pub type ModeProfile = cavity::CavityModeProfile<f64>;
pub type Cavity = qed::CavityMode<f64>;
pub type Irf = tcspc::InstrumentResponse<f64>;
pub type Decay = tcspc::DecayModel<f64>;
pub type Grid = tcspc::TimeGrid<f64>;
pub type Histogram = tcspc::TransientHistogram<f64>;
pub type Fit = fit::FitResult<f64>;
pub type Scan = fit::SpectralScan<f64>;
