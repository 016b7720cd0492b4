//! Plane-wave expansion of the 2D TE master equation (magnetic field out of
//! plane) for inversion-symmetric periodic dielectrics.
//!
//! The operator is `Θ_GG' = η(G−G')·(k+G)·(k+G')`, where `η` is obtained by
//! inverting the truncated Toeplitz matrix of permittivity coefficients
//! (inverse rule). With circular holes centred on an inversion centre every
//! coefficient is real, so Θ is real symmetric and a real dense eigensolver
//! suffices.

use crate::crystal::{dielectric_fourier_at, KPath, KPoint, TriangularLattice};
use crate::scalar::{Scalar, Vec2};
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BandError {
    #[error("requested {requested} bands but the basis only has {available} plane waves")]
    TooManyBands { requested: usize, available: usize },
    #[error("need at least {0} bands")]
    TooFewBands(usize),
    #[error("permittivity matrix is singular or not positive definite")]
    SingularPermittivity,
    #[error("eigensolver did not converge at k-point {k_index} (frac {frac:?})")]
    NoConvergence { k_index: usize, frac: [f64; 2] },
    #[error("supercell size must be odd and at least 5, got {0}")]
    SupercellSize(usize),
    #[error("mode profile carries no field")]
    ZeroField,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// A periodic, inversion-symmetric permittivity described by its Fourier
/// series on its own reciprocal lattice.
pub trait PeriodicDielectric<T: Scalar>: Sync {
    /// Lattice period used to express frequencies as `a/λ`.
    fn period_a(&self) -> T;
    fn real_basis(&self) -> [Vec2<T>; 2];
    fn reciprocal_basis(&self) -> [Vec2<T>; 2];
    /// Coefficient at `m·b1 + n·b2`.
    fn eps_coefficient(&self, m: i32, n: i32) -> T;
    fn eps_at(&self, point: Vec2<T>) -> T;
}

impl<T: Scalar> PeriodicDielectric<T> for TriangularLattice<T> {
    fn period_a(&self) -> T {
        self.period_a
    }

    fn real_basis(&self) -> [Vec2<T>; 2] {
        TriangularLattice::real_basis(self)
    }

    fn reciprocal_basis(&self) -> [Vec2<T>; 2] {
        TriangularLattice::reciprocal_basis(self)
    }

    fn eps_coefficient(&self, m: i32, n: i32) -> T {
        let [b1, b2] = self.reciprocal_basis();
        dielectric_fourier_at(self, b1 * T::lit(m as f64) + b2 * T::lit(n as f64))
    }

    fn eps_at(&self, point: Vec2<T>) -> T {
        TriangularLattice::eps_at(self, point)
    }
}

/// Shape of the set of retained reciprocal vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    /// `|m|, |n| ≤ N`: `(2N+1)²` plane waves.
    Rhombic,
    /// Hexagonal shells `max(|m|, |n|, |m−n|) ≤ N`: `3N(N+1)+1` plane waves,
    /// invariant under the six-fold rotation of the triangular lattice.
    Hexagonal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneWaveBasis<T> {
    pub cutoff: usize,
    pub truncation: Truncation,
    pub indices: Vec<[i32; 2]>,
    pub g_vectors: Vec<Vec2<T>>,
}

impl<T: Scalar> PlaneWaveBasis<T> {
    pub fn new<S: PeriodicDielectric<T> + ?Sized>(
        structure: &S,
        cutoff: usize,
        truncation: Truncation,
    ) -> Self {
        let [b1, b2] = structure.reciprocal_basis();
        let n = cutoff as i32;
        let mut indices = Vec::new();
        for m in -n..=n {
            for k in -n..=n {
                let keep = match truncation {
                    Truncation::Rhombic => true,
                    Truncation::Hexagonal => (m - k).abs() <= n,
                };
                if keep {
                    indices.push([m, k]);
                }
            }
        }
        let g_vectors = indices
            .iter()
            .map(|&[m, k]| b1 * T::lit(m as f64) + b2 * T::lit(k as f64))
            .collect();
        Self {
            cutoff,
            truncation,
            indices,
            g_vectors,
        }
    }

    pub fn rhombic<S: PeriodicDielectric<T> + ?Sized>(structure: &S, cutoff: usize) -> Self {
        Self::new(structure, cutoff, Truncation::Rhombic)
    }

    pub fn hexagonal<S: PeriodicDielectric<T> + ?Sized>(structure: &S, cutoff: usize) -> Self {
        Self::new(structure, cutoff, Truncation::Hexagonal)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Position of `G = 0` in the basis.
    pub fn zero_index(&self) -> usize {
        self.indices
            .iter()
            .position(|&i| i == [0, 0])
            .expect("basis always contains G = 0")
    }

    /// Position of `−G` for every entry.
    pub fn negation_map(&self) -> Vec<usize> {
        let lookup: std::collections::HashMap<[i32; 2], usize> =
            self.indices.iter().enumerate().map(|(i, &g)| (g, i)).collect();
        self.indices
            .iter()
            .map(|&[m, n]| lookup[&[-m, -n]])
            .collect()
    }
}

/// Inverse-rule η table for one structure and basis; reusable across k.
#[derive(Debug, Clone)]
pub struct TeOperator<T: Scalar> {
    eta: DMatrix<T>,
    g_vectors: Vec<Vec2<T>>,
}

impl<T: Scalar> TeOperator<T> {
    pub fn new<S: PeriodicDielectric<T> + ?Sized>(
        structure: &S,
        basis: &PlaneWaveBasis<T>,
    ) -> Result<Self, BandError> {
        let idx = &basis.indices;
        let n = idx.len();
        let eps = DMatrix::from_fn(n, n, |i, j| {
            structure.eps_coefficient(idx[i][0] - idx[j][0], idx[i][1] - idx[j][1])
        });
        let eta = eps
            .cholesky()
            .ok_or(BandError::SingularPermittivity)?
            .inverse();
        Ok(Self {
            eta,
            g_vectors: basis.g_vectors.clone(),
        })
    }

    pub fn eta(&self) -> &DMatrix<T> {
        &self.eta
    }

    pub fn dim(&self) -> usize {
        self.g_vectors.len()
    }

    /// Θ at Bloch wavevector `k` (cartesian, 1/nm).
    pub fn at(&self, k: Vec2<T>) -> DMatrix<T> {
        let kg: Vec<Vec2<T>> = self.g_vectors.iter().map(|g| k + g).collect();
        let n = kg.len();
        let mut theta = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                let v = self.eta[(i, j)] * kg[i].dot(&kg[j]);
                theta[(i, j)] = v;
                theta[(j, i)] = v;
            }
        }
        theta
    }
}

pub fn build_te_operator<T: Scalar, S: PeriodicDielectric<T> + ?Sized>(
    structure: &S,
    k: Vec2<T>,
    basis: &PlaneWaveBasis<T>,
) -> Result<DMatrix<T>, BandError> {
    Ok(TeOperator::new(structure, basis)?.at(k))
}

/// Wraps fractional coordinates into [-1/2, 1/2) so that k and k + G build
/// the same truncated operator.
pub fn reduce_frac<T: Scalar>(frac: [T; 2]) -> [T; 2] {
    let half = T::lit(0.5);
    frac.map(|x| x - (x + half).floor())
}

/// Converts an eigenvalue `(ω/c)²` (1/nm²) to the normalised frequency `a/λ`.
pub fn eigenvalue_to_normalized<T: Scalar>(eigenvalue: T, period_a: T) -> T {
    period_a * eigenvalue.max(T::zero()).sqrt() / T::two_pi()
}

pub(crate) fn sorted_eigenvalues<T: Scalar>(
    theta: DMatrix<T>,
    k_index: usize,
    frac: [T; 2],
) -> Result<Vec<T>, BandError> {
    let n = theta.nrows();
    let eig = SymmetricEigen::try_new(theta, T::default_epsilon(), 60 * n.max(10)).ok_or(
        BandError::NoConvergence {
            k_index,
            frac: [frac[0].as_f64(), frac[1].as_f64()],
        },
    )?;
    let mut vals: Vec<T> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    Ok(vals)
}

/// Normalised frequencies `a/λ` along a k-path; rows are k-points, columns
/// are bands in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct BandStructure<T> {
    pub kpath: KPath<T>,
    pub points: Vec<KPoint<T>>,
    pub frequencies: Vec<Vec<T>>,
}

impl<T: Scalar> BandStructure<T> {
    pub fn n_bands(&self) -> usize {
        self.frequencies.first().map_or(0, Vec::len)
    }

    pub fn band(&self, index: usize) -> impl Iterator<Item = T> + '_ {
        self.frequencies.iter().map(move |row| row[index])
    }
}

pub fn compute_bands<T: Scalar, S: PeriodicDielectric<T> + ?Sized>(
    structure: &S,
    kpath: &KPath<T>,
    basis: &PlaneWaveBasis<T>,
    n_bands: usize,
) -> Result<BandStructure<T>, BandError> {
    if n_bands == 0 {
        return Err(BandError::TooFewBands(1));
    }
    if n_bands > basis.len() {
        return Err(BandError::TooManyBands {
            requested: n_bands,
            available: basis.len(),
        });
    }
    let op = TeOperator::new(structure, basis)?;
    let [b1, b2] = structure.reciprocal_basis();
    let points = kpath.sample();
    let a = structure.period_a();
    let frequencies = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let frac = reduce_frac(p.frac);
            let k = b1 * frac[0] + b2 * frac[1];
            let vals = sorted_eigenvalues(op.at(k), i, p.frac)?;
            Ok(vals
                .into_iter()
                .take(n_bands)
                .map(|v| eigenvalue_to_normalized(v, a))
                .collect())
        })
        .collect::<Result<Vec<Vec<T>>, BandError>>()?;
    Ok(BandStructure {
        kpath: kpath.clone(),
        points,
        frequencies,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandGap<T> {
    pub lower_edge: T,
    pub upper_edge: T,
    pub midgap: T,
}

impl<T: Scalar> BandGap<T> {
    pub fn width(&self) -> T {
        self.upper_edge - self.lower_edge
    }

    /// Gap-to-midgap ratio.
    pub fn relative_width(&self) -> T {
        self.width() / self.midgap
    }

    pub fn contains(&self, f: T) -> bool {
        f > self.lower_edge && f < self.upper_edge
    }

    /// Midgap wavelength in nm for lattice period `a` (nm).
    pub fn midgap_wavelength(&self, period_a: T) -> T {
        period_a / self.midgap
    }
}

/// Result of a gap search between bands 1 and 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GapOutcome<T> {
    Gap(BandGap<T>),
    /// Band 1 reaches at least as high as band 2 somewhere on the path.
    NoGap { band1_max: T, band2_min: T },
}

impl<T: Scalar> GapOutcome<T> {
    pub fn gap(&self) -> Option<&BandGap<T>> {
        match self {
            GapOutcome::Gap(g) => Some(g),
            GapOutcome::NoGap { .. } => None,
        }
    }
}

pub fn find_te_gap<T: Scalar>(bands: &BandStructure<T>) -> Result<GapOutcome<T>, BandError> {
    if bands.n_bands() < 2 {
        return Err(BandError::TooFewBands(2));
    }
    let lower = bands
        .band(0)
        .fold(T::min_value().expect("bounded"), |m, v| m.max(v));
    let upper = bands
        .band(1)
        .fold(T::max_value().expect("bounded"), |m, v| m.min(v));
    Ok(if lower < upper {
        GapOutcome::Gap(BandGap {
            lower_edge: lower,
            upper_edge: upper,
            midgap: (lower + upper) / T::lit(2.0),
        })
    } else {
        GapOutcome::NoGap {
            band1_max: lower,
            band2_min: upper,
        }
    })
}
