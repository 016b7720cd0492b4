//! Triangular-lattice photonic-crystal slab: geometry, reciprocal lattice,
//! analytic Fourier coefficients of the dielectric function, high-symmetry
//! k-paths and the slab effective index used to reduce the membrane to 2D.
//!
//! Conventions: real-space basis `a1 = (a, 0)`, `a2 = (a/2, a·√3/2)`, the
//! reciprocal basis is the exact dual (`b_i · a_j = 2π δ_ij`), and every
//! length is in nanometres.

use crate::scalar::{Scalar, Vec2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("lattice period must be positive, got {0}")]
    NonPositivePeriod(f64),
    #[error("hole ratio r/a must lie in [0, 0.5), got {0}")]
    HoleRatio(f64),
    #[error("permittivities must satisfy eps_background > eps_hole >= 1 (got {background}, {hole})")]
    Permittivity { background: f64, hole: f64 },
    #[error("slab thickness must be positive, got {0}")]
    NonPositiveThickness(f64),
    #[error("slab indices must satisfy n_core > n_clad >= 1 (got {core}, {clad})")]
    SlabIndex { core: f64, clad: f64 },
    #[error("wavelength must be positive, got {0}")]
    NonPositiveWavelength(f64),
    #[error("wavevector ({0}, {1}) is not on the reciprocal lattice")]
    OffLattice(f64, f64),
    #[error("k-path needs at least two vertices")]
    TooFewVertices,
    #[error("k-path vertex {label} lies outside [-1, 1]^2")]
    VertexOutOfRange { label: String },
    #[error("samples per segment must be at least 2, got {0}")]
    TooFewSamples(usize),
    #[error("no guided mode: dispersion equation has no root")]
    NoGuidedMode,
}

/// Relative tolerance (in units of |b1|) for reciprocal-lattice membership.
pub const RECIPROCAL_MEMBERSHIP_TOL: f64 = 1e-9;

/// Triangular lattice of circular holes in a uniform background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangularLattice<T> {
    pub period_a: T,
    pub hole_ratio: T,
    pub eps_background: T,
    pub eps_hole: T,
}

impl<T: Scalar> TriangularLattice<T> {
    pub fn new(
        period_a: T,
        hole_ratio: T,
        eps_background: T,
        eps_hole: T,
    ) -> Result<Self, GeometryError> {
        if !(period_a > T::zero()) {
            return Err(GeometryError::NonPositivePeriod(period_a.as_f64()));
        }
        if !(hole_ratio >= T::zero() && hole_ratio < T::lit(0.5)) {
            return Err(GeometryError::HoleRatio(hole_ratio.as_f64()));
        }
        if !(eps_background > eps_hole && eps_hole >= T::one()) {
            return Err(GeometryError::Permittivity {
                background: eps_background.as_f64(),
                hole: eps_hole.as_f64(),
            });
        }
        Ok(Self {
            period_a,
            hole_ratio,
            eps_background,
            eps_hole,
        })
    }

    /// Air holes in a background of the given refractive index.
    pub fn air_holes(period_a: T, hole_ratio: T, n_background: T) -> Result<Self, GeometryError> {
        Self::new(period_a, hole_ratio, n_background * n_background, T::one())
    }

    pub fn hole_radius(&self) -> T {
        self.hole_ratio * self.period_a
    }

    /// Area of the primitive cell, `a²·√3/2`.
    pub fn cell_area(&self) -> T {
        self.period_a * self.period_a * T::lit(3.0).sqrt() / T::lit(2.0)
    }

    /// Hole area fraction `f = (2π/√3)(r/a)²`.
    pub fn fill_fraction(&self) -> T {
        T::two_pi() / T::lit(3.0).sqrt() * self.hole_ratio * self.hole_ratio
    }

    pub fn real_basis(&self) -> [Vec2<T>; 2] {
        let a = self.period_a;
        let half = T::lit(0.5);
        [
            Vec2::new(a, T::zero()),
            Vec2::new(a * half, a * T::lit(3.0).sqrt() * half),
        ]
    }

    pub fn reciprocal_basis(&self) -> [Vec2<T>; 2] {
        reciprocal_basis(self)
    }

    /// Cartesian wavevector from fractional reciprocal coordinates.
    pub fn frac_to_cart(&self, frac: [T; 2]) -> Vec2<T> {
        let [b1, b2] = self.reciprocal_basis();
        b1 * frac[0] + b2 * frac[1]
    }

    /// Permittivity at a point in real space (holes centred on lattice sites).
    pub fn eps_at(&self, point: Vec2<T>) -> T {
        let [a1, a2] = self.real_basis();
        let (u, v) = fractional_coords(point, a1, a2);
        let r = self.hole_radius();
        if min_image_distance2(u - u.round(), v - v.round(), a1, a2) < r * r {
            self.eps_hole
        } else {
            self.eps_background
        }
    }
}

/// Fractional coordinates of `p` in the (non-orthogonal) basis `a1`, `a2`.
pub(crate) fn fractional_coords<T: Scalar>(p: Vec2<T>, a1: Vec2<T>, a2: Vec2<T>) -> (T, T) {
    let det = a1.x * a2.y - a1.y * a2.x;
    let u = (p.x * a2.y - p.y * a2.x) / det;
    let v = (a1.x * p.y - a1.y * p.x) / det;
    (u, v)
}

/// Squared distance to the nearest lattice site, given fractional offsets
/// already reduced to [-1/2, 1/2].
pub(crate) fn min_image_distance2<T: Scalar>(du: T, dv: T, a1: Vec2<T>, a2: Vec2<T>) -> T {
    let mut best = T::max_value().expect("bounded float");
    for i in -1..=1 {
        for j in -1..=1 {
            let d = a1 * (du + T::lit(i as f64)) + a2 * (dv + T::lit(j as f64));
            let d2 = d.norm_squared();
            if d2 < best {
                best = d2;
            }
        }
    }
    best
}

/// Dual basis of the triangular lattice: `b1 = (2π/a)(1, −1/√3)`,
/// `b2 = (2π/a)(0, 2/√3)`.
pub fn reciprocal_basis<T: Scalar>(lattice: &TriangularLattice<T>) -> [Vec2<T>; 2] {
    let scale = T::two_pi() / lattice.period_a;
    let s3 = T::lit(3.0).sqrt();
    [
        Vec2::new(scale, -scale / s3),
        Vec2::new(T::zero(), scale * T::lit(2.0) / s3),
    ]
}

/// Normalised form factor `2 J1(x)/x` of a disk, equal to 1 at `x = 0`.
pub(crate) fn disk_form_factor<T: Scalar>(x: T) -> T {
    if x.abs() < T::lit(1e-8) {
        T::one() - x * x / T::lit(8.0)
    } else {
        T::lit(2.0) * x.bessel_j1() / x
    }
}

/// Fourier coefficient of the permittivity at reciprocal-lattice vector `g`.
pub fn dielectric_fourier<T: Scalar>(
    lattice: &TriangularLattice<T>,
    g: Vec2<T>,
) -> Result<T, GeometryError> {
    let [b1, _] = reciprocal_basis(lattice);
    let [a1, a2] = lattice.real_basis();
    let m = g.dot(&a1) / T::two_pi();
    let n = g.dot(&a2) / T::two_pi();
    let [rb1, rb2] = reciprocal_basis(lattice);
    let nearest = rb1 * m.round() + rb2 * n.round();
    let tol = T::lit(RECIPROCAL_MEMBERSHIP_TOL) * b1.norm();
    if (g - nearest).norm() > tol {
        return Err(GeometryError::OffLattice(g.x.as_f64(), g.y.as_f64()));
    }
    Ok(dielectric_fourier_at(lattice, nearest))
}

/// Unchecked coefficient; `g` must be a reciprocal-lattice vector.
pub(crate) fn dielectric_fourier_at<T: Scalar>(lattice: &TriangularLattice<T>, g: Vec2<T>) -> T {
    let f = lattice.fill_fraction();
    let g_norm = g.norm();
    if g_norm == T::zero() {
        f * lattice.eps_hole + (T::one() - f) * lattice.eps_background
    } else {
        (lattice.eps_hole - lattice.eps_background) * f * disk_form_factor(g_norm * lattice.hole_radius())
    }
}

/// Labelled vertex of a k-path, in fractional reciprocal coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KVertex<T> {
    pub label: String,
    pub frac: [T; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KPath<T> {
    pub vertices: Vec<KVertex<T>>,
    pub samples_per_segment: usize,
}

/// Sampled point on a k-path. `arc_length` is in units of 2π/a.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KPoint<T> {
    pub frac: [T; 2],
    pub arc_length: T,
}

impl<T: Scalar> KPath<T> {
    pub fn new(vertices: Vec<KVertex<T>>, samples_per_segment: usize) -> Result<Self, GeometryError> {
        if vertices.len() < 2 {
            return Err(GeometryError::TooFewVertices);
        }
        if samples_per_segment < 2 {
            return Err(GeometryError::TooFewSamples(samples_per_segment));
        }
        for v in &vertices {
            if v.frac.iter().any(|c| c.abs() > T::one()) {
                return Err(GeometryError::VertexOutOfRange {
                    label: v.label.clone(),
                });
            }
        }
        Ok(Self {
            vertices,
            samples_per_segment,
        })
    }

    pub fn len(&self) -> usize {
        (self.vertices.len() - 1) * (self.samples_per_segment - 1) + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Points along the path; segment joins appear once.
    pub fn sample(&self) -> Vec<KPoint<T>> {
        // Unit-period lattice so arc length comes out in units of 2π/a.
        let unit = TriangularLattice {
            period_a: T::two_pi(),
            hole_ratio: T::zero(),
            eps_background: T::lit(2.0),
            eps_hole: T::one(),
        };
        let steps = self.samples_per_segment - 1;
        let mut out = Vec::with_capacity(self.len());
        let mut arc = T::zero();
        let mut prev: Option<Vec2<T>> = None;
        for (seg, pair) in self.vertices.windows(2).enumerate() {
            let (from, to) = (&pair[0], &pair[1]);
            let start = if seg == 0 { 0 } else { 1 };
            for s in start..=steps {
                let t = T::from_usize_lossy(s) / T::from_usize_lossy(steps);
                let frac = [
                    from.frac[0] + (to.frac[0] - from.frac[0]) * t,
                    from.frac[1] + (to.frac[1] - from.frac[1]) * t,
                ];
                let cart = unit.frac_to_cart(frac);
                if let Some(p) = prev {
                    arc += (cart - p).norm();
                }
                prev = Some(cart);
                out.push(KPoint {
                    frac,
                    arc_length: arc,
                });
            }
        }
        out
    }

    /// Indices into [`KPath::sample`] where each vertex lands.
    pub fn vertex_indices(&self) -> Vec<usize> {
        (0..self.vertices.len())
            .map(|i| i * (self.samples_per_segment - 1))
            .collect()
    }
}

/// Γ → M → K → Γ for the triangular lattice.
///
/// With the dual basis used here the two reciprocal vectors are 120° apart,
/// so the zone corner adjacent to `M = b1/2` is `K = (2 b1 + b2)/3`.
pub fn kpath_gamma_m_k<T: Scalar>(samples_per_segment: usize) -> Result<KPath<T>, GeometryError> {
    let third = T::one() / T::lit(3.0);
    let v = |label: &str, frac: [T; 2]| KVertex {
        label: label.to_string(),
        frac,
    };
    KPath::new(
        vec![
            v("Γ", [T::zero(), T::zero()]),
            v("M", [T::lit(0.5), T::zero()]),
            v("K", [third * T::lit(2.0), third]),
            v("Γ", [T::zero(), T::zero()]),
        ],
        samples_per_segment,
    )
}

/// Symmetric three-layer slab (cladding / core / cladding).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlabWaveguide<T> {
    pub thickness: T,
    pub n_core: T,
    pub n_clad: T,
}

impl<T: Scalar> SlabWaveguide<T> {
    pub fn new(thickness: T, n_core: T, n_clad: T) -> Result<Self, GeometryError> {
        if !(thickness > T::zero()) {
            return Err(GeometryError::NonPositiveThickness(thickness.as_f64()));
        }
        if !(n_core > n_clad && n_clad >= T::one()) {
            return Err(GeometryError::SlabIndex {
                core: n_core.as_f64(),
                clad: n_clad.as_f64(),
            });
        }
        Ok(Self {
            thickness,
            n_core,
            n_clad,
        })
    }

    pub fn effective_index(&self, wavelength: T) -> Result<T, GeometryError> {
        effective_index(self, wavelength)
    }
}

/// Effective index of the fundamental even TE mode of a symmetric slab.
///
/// Solves `u·tan(u) = w` with `u = κd/2`, `w = γd/2`, `u² + w² = V²`, written
/// as `u·sin(u) − w·cos(u) = 0` on `u ∈ (0, min(V, π/2))` where it is strictly
/// increasing. Safeguarded Newton keeps the iterate inside the bracket.
pub fn effective_index<T: Scalar>(slab: &SlabWaveguide<T>, wavelength: T) -> Result<T, GeometryError> {
    if !(wavelength > T::zero()) {
        return Err(GeometryError::NonPositiveWavelength(wavelength.as_f64()));
    }
    let k0 = T::two_pi() / wavelength;
    let half_d = slab.thickness / T::lit(2.0);
    let na2 = slab.n_core * slab.n_core - slab.n_clad * slab.n_clad;
    let v = k0 * half_d * na2.sqrt();
    let residual = |u: T| {
        let w = (v * v - u * u).max(T::zero()).sqrt();
        u * u.sin() - w * u.cos()
    };
    let derivative = |u: T| {
        let w = (v * v - u * u).max(T::zero()).sqrt();
        let (s, c) = (u.sin(), u.cos());
        let dw = if w > T::zero() { -u / w } else { T::zero() };
        s + u * c - dw * c + w * s
    };

    let mut lo = T::zero();
    let mut hi = v.min(T::frac_pi_2());
    if !(residual(lo) < T::zero() && residual(hi) > T::zero()) {
        return Err(GeometryError::NoGuidedMode);
    }
    let mut u = (lo + hi) / T::lit(2.0);
    let tol = T::EPS * T::lit(16.0);
    for _ in 0..200 {
        let r = residual(u);
        if r == T::zero() {
            break;
        }
        if r < T::zero() {
            lo = u;
        } else {
            hi = u;
        }
        let d = derivative(u);
        let newton = u - r / d;
        let next = if d > T::zero() && newton > lo && newton < hi {
            newton
        } else {
            (lo + hi) / T::lit(2.0)
        };
        let step = (next - u).abs();
        u = next;
        if step <= tol * (T::one() + u.abs()) || hi - lo <= tol {
            break;
        }
    }
    let kappa = u / half_d;
    let kappa_over_k0 = kappa / k0;
    let n_eff2 = slab.n_core * slab.n_core - kappa_over_k0 * kappa_over_k0;
    let n_eff = n_eff2.sqrt();
    if n_eff > slab.n_clad && n_eff < slab.n_core {
        Ok(n_eff)
    } else if n_eff >= slab.n_core {
        // u underflowed to 0 in the thick-slab limit
        Ok(slab.n_core - T::EPS * slab.n_core)
    } else {
        Ok(slab.n_clad + T::EPS * slab.n_clad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn lattice(a: f64, ra: f64) -> TriangularLattice<f64> {
        TriangularLattice::new(a, ra, 8.41, 1.0).unwrap()
    }

    #[test]
    fn reciprocal_magnitude_at_300nm() {
        let [b1, b2] = reciprocal_basis(&lattice(300.0, 0.3));
        let expect = 4.0 * PI / (3f64.sqrt() * 300.0);
        assert_relative_eq!(b1.norm(), expect, max_relative = 1e-14);
        assert_relative_eq!(b2.norm(), expect, max_relative = 1e-14);
        assert!((b1.norm() - 0.02418).abs() < 1e-5);
    }

    #[test]
    fn duality_identity() {
        for a in [1.0, 37.5, 300.0, 1e4] {
            let lat = lattice(a, 0.2);
            let [a1, a2] = lat.real_basis();
            let [b1, b2] = lat.reciprocal_basis();
            let two_pi = 2.0 * PI;
            assert!((b1.dot(&a1) - two_pi).abs() <= 1e-12 * two_pi);
            assert!((b2.dot(&a2) - two_pi).abs() <= 1e-12 * two_pi);
            assert!(b1.dot(&a2).abs() <= 1e-12 * two_pi);
            assert!(b2.dot(&a1).abs() <= 1e-12 * two_pi);
        }
    }

    #[test]
    fn reciprocal_vectors_span_sixty_degree_lines() {
        // Dual of a 60° basis is 120° apart; the lines they span meet at 60°.
        let [b1, b2] = reciprocal_basis(&lattice(300.0, 0.3));
        let cos = b1.dot(&b2) / (b1.norm() * b2.norm());
        assert_relative_eq!(cos, -0.5, epsilon = 1e-14);
        assert_relative_eq!(cos.abs().acos().to_degrees(), 60.0, epsilon = 1e-9);
    }

    #[test]
    fn fill_fraction_values() {
        let lat = lattice(300.0, 0.35);
        assert!((lat.fill_fraction() - 0.4444).abs() < 1e-4);
        assert!((lattice(300.0, 0.42).fill_fraction() - 0.640).abs() < 1e-3);
        assert!(lattice(300.0, 0.4999).fill_fraction() < 1.0);
    }

    #[test]
    fn zeroth_coefficient_is_average() {
        let lat = lattice(300.0, 0.35);
        let value = dielectric_fourier(&lat, Vec2::zeros()).unwrap();
        assert!((value - 5.117).abs() < 1e-3, "{value}");
    }

    #[test]
    fn zeroth_coefficient_matches_unit_cell_quadrature() {
        // Midpoint rule over the rhombic unit cell.
        let lat = lattice(300.0, 0.35);
        let [a1, a2] = lat.real_basis();
        let n = 800;
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                let p = a1 * ((i as f64 + 0.5) / n as f64) + a2 * ((j as f64 + 0.5) / n as f64);
                sum += lat.eps_at(p);
            }
        }
        let avg = sum / (n * n) as f64;
        let exact = dielectric_fourier(&lat, Vec2::zeros()).unwrap();
        assert!((avg - exact).abs() < 2e-3, "{avg} vs {exact}");
    }

    #[test]
    fn first_order_coefficient_matches_quadrature() {
        let lat = lattice(300.0, 0.3);
        let [a1, a2] = lat.real_basis();
        let [b1, _] = lat.reciprocal_basis();
        let n = 600;
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                let p = a1 * ((i as f64 + 0.5) / n as f64) + a2 * ((j as f64 + 0.5) / n as f64);
                // eps(r) e^{-i G.r}; imaginary part cancels for a centred hole
                sum += lat.eps_at(p) * (b1.dot(&p)).cos();
            }
        }
        let quad = sum / (n * n) as f64;
        let exact = dielectric_fourier(&lat, b1).unwrap();
        assert!((quad - exact).abs() < 5e-3, "{quad} vs {exact}");
    }

    #[test]
    fn bessel_zero_kills_coefficient() {
        // Pick r so that |G| r lands on the first zero of J1 for the
        // second shell, G = 2 b1 + b2 with |G| = √3 |b1|.
        let a = 300.0;
        let g = 3f64.sqrt() * 4.0 * PI / (3f64.sqrt() * a);
        let r = 3.831_705_970_207_512 / g;
        let lat = lattice(a, r / a);
        let [b1, b2] = lat.reciprocal_basis();
        assert!(dielectric_fourier(&lat, b1 * 2.0 + b2).unwrap().abs() < 1e-12);
        assert!(dielectric_fourier(&lat, b1).unwrap().abs() > 0.1);
    }

    #[test]
    fn no_hole_limit() {
        let lat = lattice(300.0, 0.0);
        let [b1, b2] = lat.reciprocal_basis();
        assert_eq!(dielectric_fourier(&lat, Vec2::zeros()).unwrap(), 8.41);
        assert_eq!(dielectric_fourier(&lat, b1 * 2.0 - b2).unwrap(), 0.0);
    }

    #[test]
    fn off_lattice_rejected() {
        let lat = lattice(300.0, 0.3);
        let [b1, _] = lat.reciprocal_basis();
        assert!(matches!(
            dielectric_fourier(&lat, b1 * 0.5),
            Err(GeometryError::OffLattice(..))
        ));
        assert!(dielectric_fourier(&lat, b1 * (1.0 + 1e-12)).is_ok());
    }

    #[test]
    fn inversion_symmetry_of_coefficients() {
        let lat = lattice(300.0, 0.37);
        let [b1, b2] = lat.reciprocal_basis();
        for m in -3..=3 {
            for n in -3..=3 {
                let g = b1 * m as f64 + b2 * n as f64;
                let plus = dielectric_fourier(&lat, g).unwrap();
                let minus = dielectric_fourier(&lat, -g).unwrap();
                assert!((plus - minus).abs() <= 1e-12 * plus.abs().max(1.0));
            }
        }
    }

    #[test]
    fn invalid_lattices_rejected() {
        assert!(TriangularLattice::new(0.0, 0.3, 9.0, 1.0).is_err());
        assert!(TriangularLattice::new(300.0, 0.5, 9.0, 1.0).is_err());
        assert!(TriangularLattice::new(300.0, -0.1, 9.0, 1.0).is_err());
        assert!(TriangularLattice::new(300.0, 0.3, 1.0, 1.0).is_err());
        assert!(TriangularLattice::new(300.0, 0.3, 9.0, 0.5).is_err());
    }

    #[test]
    fn kpath_counts_and_vertices() {
        let path = kpath_gamma_m_k::<f64>(2).unwrap();
        let pts = path.sample();
        assert_eq!(pts.len(), 4);
        assert_eq!(pts[0].frac, [0.0, 0.0]);
        assert_eq!(pts[1].frac, [0.5, 0.0]);
        assert_eq!(pts[3].frac, [0.0, 0.0]);
        let path = kpath_gamma_m_k::<f64>(10).unwrap();
        assert_eq!(path.sample().len(), 28);
        assert_eq!(path.len(), 28);
        assert!(kpath_gamma_m_k::<f64>(1).is_err());
    }

    #[test]
    fn kpath_vertices_are_high_symmetry_points() {
        let lat = lattice(1.0, 0.3);
        let path = kpath_gamma_m_k::<f64>(5).unwrap();
        let m = lat.frac_to_cart(path.vertices[1].frac);
        let k = lat.frac_to_cart(path.vertices[2].frac);
        assert_relative_eq!(m.norm(), 2.0 * PI / 3f64.sqrt(), max_relative = 1e-12);
        assert_relative_eq!(k.norm(), 4.0 * PI / 3.0, max_relative = 1e-12);
        // M -> K runs along the zone edge, perpendicular to M.
        assert!((k - m).dot(&m).abs() < 1e-12);
    }

    #[test]
    fn arc_length_strictly_increasing() {
        let pts = kpath_gamma_m_k::<f64>(17).unwrap().sample();
        assert!(pts.windows(2).all(|w| w[1].arc_length > w[0].arc_length));
    }

    /// Bisection on the original transcendental equation in n_eff, restricted
    /// to the branch where κd/2 < π/2 so tan has no pole in the bracket.
    fn bisection_neff(d: f64, n_core: f64, n_clad: f64, lambda: f64) -> f64 {
        let k0 = 2.0 * PI / lambda;
        let f = |n: f64| {
            let kappa = k0 * (n_core * n_core - n * n).sqrt();
            let gamma = k0 * (n * n - n_clad * n_clad).sqrt();
            (kappa * d / 2.0).tan() - gamma / kappa
        };
        let pole = (n_core * n_core - (PI / (k0 * d)).powi(2)).max(n_clad * n_clad).sqrt();
        let (mut lo, mut hi) = (pole.max(n_clad) + 1e-14, n_core - 1e-14);
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            // f decreases with n on this branch: tan term falls, γ/κ rises
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn effective_index_matches_bisection_oracle() {
        let slab = SlabWaveguide::new(400.0, 3.4, 1.0).unwrap();
        let oracle = bisection_neff(400.0, 3.4, 1.0, 1030.0);
        let n = effective_index(&slab, 1030.0).unwrap();
        assert!((n - oracle).abs() < 1e-8, "{n} vs {oracle}");
        assert!(n > 3.0 && n < 3.4);
    }

    #[test]
    fn effective_index_limits() {
        let lambda = 1000.0;
        let thick = SlabWaveguide::new(10.0 * lambda * 3.4, 3.4, 1.0).unwrap();
        let n: f64 = effective_index(&thick, lambda).unwrap();
        assert!((n - 3.4).abs() < 1e-3);
        let thin = SlabWaveguide::new(lambda / 100.0, 3.4, 1.0).unwrap();
        let n = effective_index(&thin, lambda).unwrap();
        assert!(n > 1.0 && n - 1.0 < 0.1, "{n}");
        let thinner = SlabWaveguide::new(lambda / 1000.0, 3.4, 1.0).unwrap();
        let n2 = effective_index(&thinner, lambda).unwrap();
        assert!(n2 > 1.0 && n2 - 1.0 < 1e-3, "{n2}");
    }

    #[test]
    fn effective_index_rejects_bad_wavelength() {
        let slab = SlabWaveguide::new(400.0, 3.4, 1.0).unwrap();
        assert!(effective_index(&slab, 0.0).is_err());
        assert!(SlabWaveguide::new(400.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn effective_index_monotone_over_grid() {
        let lambda = 1050.0;
        let mut prev_d = 0.0;
        for d in (1..=20).map(|i| 40.0 * i as f64) {
            let n = effective_index(&SlabWaveguide::new(d, 3.4, 1.0).unwrap(), lambda).unwrap();
            assert!(n > prev_d);
            prev_d = n;
        }
        let mut prev_n = 0.0;
        for core in (0..20).map(|i| 1.5 + 0.1 * i as f64) {
            let n = effective_index(&SlabWaveguide::new(400.0, core, 1.0).unwrap(), lambda).unwrap();
            assert!(n > prev_n);
            prev_n = n;
        }
    }

    #[test]
    fn single_precision_effective_index() {
        let slab = SlabWaveguide::new(400.0_f32, 3.4, 1.0).unwrap();
        let n32 = effective_index(&slab, 1030.0).unwrap();
        let n64 = effective_index(&SlabWaveguide::new(400.0, 3.4, 1.0).unwrap(), 1030.0).unwrap();
        assert!((n32 as f64 - n64).abs() < 1e-5);
    }
}
