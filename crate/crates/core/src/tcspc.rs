//! Synthetic time-correlated single-photon counting.
//!
//! A decay `Σ A_i exp(−t/τ_i)` starting at the excitation time is convolved
//! with a Gaussian instrument response in closed form (exponentially modified
//! Gaussian), evaluated at bin centres, and sampled with multinomial photon
//! statistics plus Poisson background. The same response function backs the
//! reconvolution fits in [`crate::fit`].

use crate::scalar::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TcspcError {
    #[error("IRF FWHM must be positive, got {0}")]
    Fwhm(f64),
    #[error("decay model needs at least one component")]
    NoComponents,
    #[error("component {0}: amplitude must be >= 0 and lifetime > 0")]
    Component(usize),
    #[error("all amplitudes are zero")]
    ZeroAmplitude,
    #[error("lifetimes must be distinct when several components are present")]
    DuplicateLifetimes,
    #[error("background must be non-negative, got {0}")]
    Background(f64),
    #[error("time grid needs at least one bin of positive width")]
    Grid,
    #[error("total counts must be positive")]
    ZeroCounts,
    #[error("expected curve has no positive signal to sample")]
    EmptyCurve,
}

/// FWHM of a Gaussian in units of its standard deviation, `2√(2 ln 2)`.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstrumentResponse<T> {
    pub fwhm: T,
    /// Peak position (ps).
    pub t0: T,
}

impl<T: Scalar> InstrumentResponse<T> {
    pub fn new(fwhm: T, t0: T) -> Result<Self, TcspcError> {
        if !(fwhm > T::zero()) {
            return Err(TcspcError::Fwhm(fwhm.as_f64()));
        }
        Ok(Self { fwhm, t0 })
    }

    pub fn sigma(&self) -> T {
        self.fwhm / T::lit(FWHM_PER_SIGMA)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayComponent<T> {
    pub amplitude: T,
    /// ps
    pub lifetime: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayModel<T> {
    pub components: Vec<DecayComponent<T>>,
    /// Counts per bin.
    pub background: T,
}

impl<T: Scalar> DecayModel<T> {
    pub fn new(components: Vec<DecayComponent<T>>, background: T) -> Result<Self, TcspcError> {
        if components.is_empty() {
            return Err(TcspcError::NoComponents);
        }
        for (i, c) in components.iter().enumerate() {
            if !(c.amplitude >= T::zero() && c.lifetime > T::zero()) {
                return Err(TcspcError::Component(i));
            }
        }
        if components.iter().all(|c| c.amplitude == T::zero()) {
            return Err(TcspcError::ZeroAmplitude);
        }
        for (i, a) in components.iter().enumerate() {
            if components[i + 1..].iter().any(|b| b.lifetime == a.lifetime) {
                return Err(TcspcError::DuplicateLifetimes);
            }
        }
        if !(background >= T::zero()) {
            return Err(TcspcError::Background(background.as_f64()));
        }
        Ok(Self {
            components,
            background,
        })
    }

    pub fn mono(amplitude: T, lifetime: T, background: T) -> Result<Self, TcspcError> {
        Self::new(vec![DecayComponent { amplitude, lifetime }], background)
    }

    pub fn longest_lifetime(&self) -> T {
        self.components
            .iter()
            .fold(T::zero(), |m, c| m.max(c.lifetime))
    }
}

/// Uniform histogram binning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid<T> {
    pub t_start: T,
    pub bin_width: T,
    pub bins: usize,
}

impl<T: Scalar> TimeGrid<T> {
    pub fn new(t_start: T, bin_width: T, bins: usize) -> Result<Self, TcspcError> {
        if bins == 0 || !(bin_width > T::zero()) {
            return Err(TcspcError::Grid);
        }
        Ok(Self {
            t_start,
            bin_width,
            bins,
        })
    }

    pub fn center(&self, i: usize) -> T {
        self.t_start + (T::from_usize_lossy(i) + T::lit(0.5)) * self.bin_width
    }

    pub fn centers(&self) -> impl Iterator<Item = T> + '_ {
        (0..self.bins).map(|i| self.center(i))
    }

    pub fn t_end(&self) -> T {
        self.t_start + T::from_usize_lossy(self.bins) * self.bin_width
    }
}

impl Default for TimeGrid<f64> {
    /// 4096 bins of 12 ps.
    fn default() -> Self {
        Self {
            t_start: 0.0,
            bin_width: 12.0,
            bins: 4096,
        }
    }
}

/// Scaled complementary error function `exp(z²)·erfc(z)` for `z ≥ 5`, from
/// the Laplace continued fraction evaluated bottom-up.
fn erfcx_large<T: Scalar>(z: T) -> T {
    let mut t = z;
    for n in (1..=48).rev() {
        t = z + T::lit(n as f64 * 0.5) / t;
    }
    T::one() / (T::pi().sqrt() * t)
}

/// Unit-area Gaussian density.
fn gaussian<T: Scalar>(x: T, sigma: T) -> T {
    (-(x * x) / (T::lit(2.0) * sigma * sigma)).exp() / (T::two_pi().sqrt() * sigma)
}

/// Exponential decay `exp(−x/τ)·H(x)` convolved with a unit-area Gaussian of
/// width `sigma`, with its derivatives in `x` and `τ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Response<T> {
    pub value: T,
    pub d_dx: T,
    pub d_dtau: T,
}

pub fn component_response<T: Scalar>(x: T, tau: T, sigma: T) -> Response<T> {
    if sigma <= T::EPS * tau {
        let value = if x > T::zero() {
            (-x / tau).exp()
        } else if x == T::zero() {
            T::lit(0.5)
        } else {
            T::zero()
        };
        return Response {
            value,
            d_dx: -value / tau,
            d_dtau: value * x / (tau * tau),
        };
    }
    let s2 = sigma * sigma;
    let z = (s2 / tau - x) / (T::lit(2.0).sqrt() * sigma);
    let value = if z < T::lit(5.0) {
        T::lit(0.5) * (s2 / (T::lit(2.0) * tau * tau) - x / tau).exp() * z.erf_complement()
    } else {
        // exp(σ²/2τ² − x/τ − z²) = exp(−x²/2σ²)
        T::lit(0.5) * (-(x * x) / (T::lit(2.0) * s2)).exp() * erfcx_large(z)
    };
    let g = gaussian(x, sigma);
    Response {
        value,
        d_dx: g - value / tau,
        d_dtau: (value * (x - s2 / tau) + s2 * g) / (tau * tau),
    }
}

/// Per-bin model intensity at every bin centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedCurve<T> {
    pub grid: TimeGrid<T>,
    pub irf: InstrumentResponse<T>,
    /// Decay part without background.
    pub signal: Vec<T>,
    pub background: T,
}

impl<T: Scalar> ExpectedCurve<T> {
    pub fn values(&self) -> Vec<T> {
        self.signal.iter().map(|&s| s + self.background).collect()
    }
}

/// Decay sum convolved with the IRF, sampled at each bin centre, plus the
/// constant background.
pub fn expected_curve<T: Scalar>(
    model: &DecayModel<T>,
    irf: &InstrumentResponse<T>,
    grid: &TimeGrid<T>,
) -> ExpectedCurve<T> {
    let sigma = irf.sigma();
    let signal = grid
        .centers()
        .map(|t| {
            model.components.iter().fold(T::zero(), |acc, c| {
                acc + c.amplitude * component_response(t - irf.t0, c.lifetime, sigma).value
            })
        })
        .collect();
    ExpectedCurve {
        grid: *grid,
        irf: *irf,
        signal,
        background: model.background,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransientHistogram<T> {
    pub bin_width: T,
    pub t_start: T,
    pub counts: Vec<u64>,
    pub total_counts: u64,
    pub irf: InstrumentResponse<T>,
}

impl<T: Scalar> TransientHistogram<T> {
    pub fn new(
        grid: TimeGrid<T>,
        counts: Vec<u64>,
        irf: InstrumentResponse<T>,
    ) -> Result<Self, TcspcError> {
        if counts.len() != grid.bins {
            return Err(TcspcError::Grid);
        }
        Ok(Self {
            bin_width: grid.bin_width,
            t_start: grid.t_start,
            total_counts: counts.iter().sum(),
            counts,
            irf,
        })
    }

    pub fn grid(&self) -> TimeGrid<T> {
        TimeGrid {
            t_start: self.t_start,
            bin_width: self.bin_width,
            bins: self.counts.len(),
        }
    }

    pub fn counts_as_scalar(&self) -> Vec<T> {
        self.counts
            .iter()
            .map(|&c| T::from_u64(c).expect("count representable"))
            .collect()
    }
}

/// Draws `total_counts` signal photons from the normalised signal
/// (multinomial, via sequential binomials) and adds independent Poisson
/// background per bin. Deterministic for a fixed seed.
pub fn sample_histogram<T: Scalar>(
    curve: &ExpectedCurve<T>,
    total_counts: u64,
    seed: u64,
) -> Result<TransientHistogram<T>, TcspcError> {
    if total_counts == 0 {
        return Err(TcspcError::ZeroCounts);
    }
    let weights: Vec<f64> = curve
        .signal
        .iter()
        .map(|v| v.as_f64().max(0.0))
        .collect();
    let mut remaining_mass: f64 = weights.iter().sum();
    if !(remaining_mass > 0.0) || !remaining_mass.is_finite() {
        return Err(TcspcError::EmptyCurve);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut remaining = total_counts;
    let mut counts = Vec::with_capacity(weights.len());
    for &w in &weights {
        let drawn = if remaining == 0 || w == 0.0 {
            0
        } else if w >= remaining_mass {
            remaining
        } else {
            let p = (w / remaining_mass).clamp(0.0, 1.0);
            Binomial::new(remaining, p)
                .expect("valid binomial")
                .sample(&mut rng)
        };
        remaining -= drawn;
        remaining_mass -= w;
        counts.push(drawn);
    }
    // Floating-point leftovers land in the last non-empty bin.
    if remaining > 0 {
        if let Some(i) = weights.iter().rposition(|&w| w > 0.0) {
            counts[i] += remaining;
        }
    }
    let background = curve.background.as_f64();
    if background > 0.0 {
        let poisson = Poisson::new(background).expect("valid poisson rate");
        for c in counts.iter_mut() {
            *c += poisson.sample(&mut rng) as u64;
        }
    }
    TransientHistogram::new(curve.grid, counts, curve.irf)
}
