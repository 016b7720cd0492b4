//! Weighted least-squares fit of lifetime against emission wavelength.
//!
//! `τ(λ) = τ0(λ) / [Σ_m (F_m/3)·L_m(λ) + α]`, with the cavity modes' centre
//! wavelengths and linewidths held fixed.

use super::lm::{self, Objective};
use super::{
    last_iterate, FitError, FitModel, FitOptions, FitParameter, FitResult, Goodness, Statistic,
};
use crate::qed::{lifetime_ratio_multimode, CavityMode, ModeTerm};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Uncoupled emitter lifetime as a function of wavelength (ps).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tau0Reference<T> {
    Constant(T),
    /// `(wavelength nm, lifetime ps)` pairs, wavelengths increasing; linear
    /// interpolation, held constant outside the table.
    Table(Vec<(T, T)>),
}

impl<T: Scalar> Tau0Reference<T> {
    pub fn at(&self, lambda: T) -> T {
        match self {
            Self::Constant(t) => *t,
            Self::Table(rows) => {
                let first = rows[0];
                let last = rows[rows.len() - 1];
                if lambda <= first.0 {
                    return first.1;
                }
                if lambda >= last.0 {
                    return last.1;
                }
                let i = rows.partition_point(|r| r.0 <= lambda);
                let (x0, y0) = rows[i - 1];
                let (x1, y1) = rows[i];
                y0 + (y1 - y0) * (lambda - x0) / (x1 - x0)
            }
        }
    }

    fn validate(&self) -> Result<(), FitError> {
        match self {
            Self::Constant(t) if *t > T::zero() => Ok(()),
            Self::Constant(_) => Err(FitError::InvalidScan("tau0 must be positive".into())),
            Self::Table(rows) => {
                if rows.is_empty() {
                    return Err(FitError::InvalidScan("empty tau0 table".into()));
                }
                if rows.iter().any(|r| !(r.1 > T::zero())) {
                    return Err(FitError::InvalidScan("tau0 table values must be positive".into()));
                }
                if rows.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                    return Err(FitError::InvalidScan(
                        "tau0 table wavelengths must increase".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralPoint<T> {
    /// nm
    pub wavelength: T,
    /// ps
    pub lifetime: T,
    /// ps; unit weight when absent.
    pub uncertainty: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralScan<T> {
    pub points: Vec<SpectralPoint<T>>,
    pub reference_tau0: Tau0Reference<T>,
}

impl<T: Scalar> SpectralScan<T> {
    pub fn new(points: Vec<SpectralPoint<T>>, reference_tau0: Tau0Reference<T>) -> Result<Self, FitError> {
        let scan = Self {
            points,
            reference_tau0,
        };
        scan.validate()?;
        Ok(scan)
    }

    pub fn validate(&self) -> Result<(), FitError> {
        if self.points.is_empty() {
            return Err(FitError::InvalidScan("no points".into()));
        }
        if self.points.windows(2).any(|w| !(w[1].wavelength > w[0].wavelength)) {
            return Err(FitError::InvalidScan("wavelengths must strictly increase".into()));
        }
        if self.points.iter().any(|p| !(p.lifetime > T::zero())) {
            return Err(FitError::InvalidScan("lifetimes must be positive".into()));
        }
        if self
            .points
            .iter()
            .any(|p| p.uncertainty.is_some_and(|u| !(u > T::zero())))
        {
            return Err(FitError::InvalidScan("uncertainties must be positive".into()));
        }
        self.reference_tau0.validate()
    }
}

fn terms<T: Scalar>(modes: &[CavityMode<T>], fps: &[T]) -> Vec<ModeTerm<T>> {
    modes
        .iter()
        .zip(fps)
        .map(|(&cavity, &fp)| ModeTerm { cavity, fp })
        .collect()
}

/// Model lifetime at `lambda`, built on the same rate expression used for
/// the lifetime ratio of a single emitter.
pub fn spectral_lifetime<T: Scalar>(
    tau0: &Tau0Reference<T>,
    modes: &[CavityMode<T>],
    fps: &[T],
    alpha: T,
    lambda: T,
) -> T {
    tau0.at(lambda) / lifetime_ratio_multimode(&terms(modes, fps), lambda, alpha)
}

struct SpectralObjective<'a, T: Scalar> {
    scan: &'a SpectralScan<T>,
    modes: &'a [CavityMode<T>],
    weights: Vec<T>,
}

impl<T: Scalar> SpectralObjective<'_, T> {
    fn m(&self) -> usize {
        self.modes.len()
    }

    /// Model values and their Jacobian in `[F.., α]`.
    fn model(&self, p: &DVector<T>) -> (Vec<T>, Vec<Vec<T>>) {
        let m = self.m();
        let fps: Vec<T> = (0..m).map(|i| p[i]).collect();
        let alpha = p[m];
        let three = T::lit(3.0);
        let mut values = Vec::with_capacity(self.scan.points.len());
        let mut jac = Vec::with_capacity(self.scan.points.len());
        for pt in &self.scan.points {
            let tau0 = self.scan.reference_tau0.at(pt.wavelength);
            let v = spectral_lifetime(&self.scan.reference_tau0, self.modes, &fps, alpha, pt.wavelength);
            // ∂(τ0/R)/∂x = −(τ0/R²)·∂R/∂x
            let s = -v * v / tau0;
            let mut row: Vec<T> = self
                .modes
                .iter()
                .map(|md| s * md.lorentzian(pt.wavelength) / three)
                .collect();
            row.push(s);
            values.push(v);
            jac.push(row);
        }
        (values, jac)
    }

    fn chi2(&self, values: &[T]) -> T {
        self.scan
            .points
            .iter()
            .zip(values)
            .zip(&self.weights)
            .fold(T::zero(), |acc, ((pt, &v), &w)| acc + w * (pt.lifetime - v) * (pt.lifetime - v))
    }

    fn information(&self, jac: &[Vec<T>]) -> DMatrix<T> {
        let n = self.m() + 1;
        let mut h = DMatrix::from_element(n, n, T::zero());
        for (row, &w) in jac.iter().zip(&self.weights) {
            for a in 0..n {
                for b in 0..n {
                    h[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        h
    }
}

impl<T: Scalar> Objective<T> for SpectralObjective<'_, T> {
    fn value(&self, p: &DVector<T>) -> Option<T> {
        let v = self.chi2(&self.model(p).0);
        v.is_finite().then_some(v)
    }

    fn evaluate(&self, p: &DVector<T>) -> Option<(T, DVector<T>, DMatrix<T>)> {
        let (values, jac) = self.model(p);
        let f = self.chi2(&values);
        if !f.is_finite() {
            return None;
        }
        let n = self.m() + 1;
        let two = T::lit(2.0);
        let mut g = DVector::from_element(n, T::zero());
        for ((pt, (&v, row)), &w) in self.scan.points.iter().zip(values.iter().zip(&jac)).zip(&self.weights) {
            for a in 0..n {
                g[a] -= two * w * (pt.lifetime - v) * row[a];
            }
        }
        Some((f, g, self.information(&jac) * two))
    }

    fn lower(&self) -> DVector<T> {
        let mut lo = DVector::from_element(self.m() + 1, T::zero());
        lo[self.m()] = T::lit(1e-9);
        lo
    }

    fn upper(&self) -> DVector<T> {
        DVector::from_element(self.m() + 1, T::INFINITY)
    }
}

/// Linear regression in rate space, `τ0/τ = α + Σ c_m L_m`, as a start.
fn rate_space_guess<T: Scalar>(scan: &SpectralScan<T>, modes: &[CavityMode<T>]) -> DVector<T> {
    let m = modes.len();
    let mut a = DMatrix::from_element(m + 1, m + 1, T::zero());
    let mut b = DVector::from_element(m + 1, T::zero());
    for pt in &scan.points {
        let z = scan.reference_tau0.at(pt.wavelength) / pt.lifetime;
        let w = match pt.uncertainty {
            Some(u) => {
                let sz = z * u / pt.lifetime;
                T::one() / (sz * sz)
            }
            None => T::one(),
        };
        let mut x: Vec<T> = modes.iter().map(|md| md.lorentzian(pt.wavelength)).collect();
        x.push(T::one());
        for r in 0..=m {
            b[r] += w * x[r] * z;
            for c in 0..=m {
                a[(r, c)] += w * x[r] * x[c];
            }
        }
    }
    let sol = a
        .svd(true, true)
        .solve(&b, T::lit(1e-12))
        .unwrap_or_else(|_| DVector::from_element(m + 1, T::one()));
    let mut p = DVector::from_element(m + 1, T::zero());
    for i in 0..m {
        p[i] = (sol[i] * T::lit(3.0)).max(T::zero());
    }
    p[m] = sol[m].max(T::lit(1e-3));
    p
}

fn check_coverage<T: Scalar>(scan: &SpectralScan<T>, modes: &[CavityMode<T>]) -> Result<(), FitError> {
    let lo = scan.points[0].wavelength;
    let hi = scan.points[scan.points.len() - 1].wavelength;
    for md in modes {
        let half_span = T::lit(1.5) * md.linewidth;
        let inside = scan
            .points
            .iter()
            .filter(|p| (p.wavelength - md.lambda_c).abs() <= half_span)
            .count();
        if lo > md.lambda_c - half_span || hi < md.lambda_c + half_span || inside < 3 {
            return Err(FitError::InsufficientCoverage {
                lambda_c: md.lambda_c.as_f64(),
            });
        }
    }
    Ok(())
}

fn propagated<T: Scalar>(grad: &[(usize, T)], cov: &DMatrix<T>) -> T {
    let mut v = T::zero();
    for &(i, gi) in grad {
        for &(j, gj) in grad {
            v += gi * gj * cov[(i, j)];
        }
    }
    v.max(T::zero()).sqrt()
}

/// Fits one Purcell factor per mode and a common residual rate `α`.
/// Reports on-resonance lifetime `τ0(λ_c)/(F/3 + α)`, the ratio `F/3 + α`
/// and `β = 1 − α/(F/3 + α)` per mode, plus the largest ratio.
pub fn fit_spectral_model<T: Scalar>(
    scan: &SpectralScan<T>,
    modes: &[CavityMode<T>],
    options: &FitOptions,
) -> Result<FitResult<T>, FitError> {
    scan.validate()?;
    if modes.is_empty() {
        return Err(FitError::NoModes);
    }
    check_coverage(scan, modes)?;
    let unit_weights = scan.points.iter().any(|p| p.uncertainty.is_none());
    let weights = scan
        .points
        .iter()
        .map(|p| match (unit_weights, p.uncertainty) {
            (false, Some(u)) => T::one() / (u * u),
            _ => T::one(),
        })
        .collect();
    let obj = SpectralObjective {
        scan,
        modes,
        weights,
    };
    let m = modes.len();
    let mut names: Vec<String> = (1..=m).map(|i| format!("F_{i}")).collect();
    names.push("alpha".into());

    let out = lm::minimize(&obj, rate_space_guess(scan, modes), options.lm()).ok_or(FitError::BadStart)?;
    let p = &out.params;
    if !out.converged {
        return Err(FitError::NoConvergence {
            iterations: out.iterations,
            last: last_iterate(&names, p.as_slice()),
        });
    }

    let n = scan.points.len();
    let dof = n.saturating_sub(m + 1).max(1);
    let reduced = out.value / T::from_usize_lossy(dof);
    let (_, jac) = obj.model(p);
    let (mut cov, identified) = lm::covariance(&obj.information(&jac));
    if unit_weights {
        cov *= reduced;
    }
    let parameters: Vec<FitParameter<T>> = (0..=m)
        .map(|i| FitParameter {
            name: names[i].clone(),
            value: p[i],
            std_error: identified[i].then(|| cov[(i, i)].max(T::zero()).sqrt()),
        })
        .collect();

    let three = T::lit(3.0);
    let alpha = p[m];
    let mut derived = Vec::new();
    let mut max_ratio: Option<(T, T)> = None;
    for (i, md) in modes.iter().enumerate() {
        let c = p[i] / three;
        let ratio = c + alpha;
        let ok = identified[i] && identified[m];
        let se_ratio = propagated(&[(i, T::one() / three), (m, T::one())], &cov);
        let tau0 = scan.reference_tau0.at(md.lambda_c);
        let tau2 = tau0 / ratio;
        let beta = c / ratio;
        let rr = ratio * ratio;
        let se_beta = propagated(&[(i, alpha / (three * rr)), (m, -c / rr)], &cov);
        let k = i + 1;
        derived.push(FitParameter {
            name: format!("ratio_{k}"),
            value: ratio,
            std_error: ok.then_some(se_ratio),
        });
        derived.push(FitParameter {
            name: format!("tau_on_resonance_{k}"),
            value: tau2,
            std_error: ok.then(|| tau2 / ratio * se_ratio),
        });
        derived.push(FitParameter {
            name: format!("beta_{k}"),
            value: beta,
            std_error: ok.then_some(se_beta),
        });
        if max_ratio.is_none_or(|(r, _)| ratio > r) {
            max_ratio = Some((ratio, se_ratio));
        }
    }
    if let Some((r, se)) = max_ratio {
        derived.push(FitParameter {
            name: "max_ratio".into(),
            value: r,
            std_error: Some(se),
        });
    }

    Ok(FitResult {
        model: FitModel::Spectral,
        parameters,
        derived,
        covariance: (0..=m).map(|r| (0..=m).map(|c| cov[(r, c)]).collect()).collect(),
        goodness: Goodness {
            statistic: Statistic::WeightedChiSquare,
            value: out.value,
            dof,
            reduced,
        },
        iterations: out.iterations,
        converged: out.converged,
        gradient_norm: out.gradient_norm,
        warnings: Vec::new(),
    })
}

/// Synthetic scan: model lifetimes with Gaussian relative noise; each point
/// carries `rel_noise × model` as its uncertainty.
pub fn simulate_scan<T: Scalar>(
    tau0: &Tau0Reference<T>,
    modes: &[CavityMode<T>],
    fps: &[T],
    alpha: T,
    wavelengths: &[T],
    rel_noise: T,
    seed: u64,
) -> Result<SpectralScan<T>, FitError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = wavelengths
        .iter()
        .map(|&lambda| {
            let v = spectral_lifetime(tau0, modes, fps, alpha, lambda);
            let z: f64 = StandardNormal.sample(&mut rng);
            let noisy = (v * (T::one() + rel_noise * T::lit(z))).max(v * T::lit(1e-3));
            SpectralPoint {
                wavelength: lambda,
                lifetime: noisy,
                uncertainty: (rel_noise > T::zero()).then(|| rel_noise * v),
            }
        })
        .collect();
    SpectralScan::new(points, tau0.clone())
}

/// Full width of the lifetime dip around mode `index` at half depth between
/// the on-resonance lifetime and the off-resonance level `τ0/α`.
pub fn dip_fwhm<T: Scalar>(
    tau0: &Tau0Reference<T>,
    modes: &[CavityMode<T>],
    fps: &[T],
    alpha: T,
    index: usize,
) -> Option<T> {
    let md = modes.get(index)?;
    let at = |l: T| spectral_lifetime(tau0, modes, fps, alpha, l);
    let bottom = at(md.lambda_c);
    let far = tau0.at(md.lambda_c) / alpha;
    let half = (bottom + far) / T::lit(2.0);
    if !(half > bottom) {
        return None;
    }
    let edge = |sign: T| -> Option<T> {
        let mut inner = T::zero();
        let mut outer = md.linewidth;
        let limit = md.linewidth * T::lit(1000.0);
        while at(md.lambda_c + sign * outer) < half {
            inner = outer;
            outer *= T::lit(2.0);
            if outer > limit {
                return None;
            }
        }
        for _ in 0..100 {
            let mid = (inner + outer) / T::lit(2.0);
            if at(md.lambda_c + sign * mid) < half {
                inner = mid;
            } else {
                outer = mid;
            }
        }
        Some((inner + outer) / T::lit(2.0))
    };
    Some(edge(T::one())? + edge(-T::one())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qed::{lifetime_ratio, EmitterCoupling};

    fn m2() -> CavityMode<f64> {
        CavityMode::new(1031.5, 1950.0, 1.5).unwrap()
    }

    fn grid(center: f64, half: f64, step: f64) -> Vec<f64> {
        let n = (2.0 * half / step).round() as usize;
        (0..=n).map(|i| center - half + i as f64 * step).collect()
    }

    #[test]
    fn tau0_table_interpolates() {
        let t = Tau0Reference::Table(vec![(1000.0, 800.0), (1040.0, 880.0)]);
        assert_eq!(t.at(1020.0), 840.0);
        assert_eq!(t.at(900.0), 800.0);
        assert_eq!(t.at(1100.0), 880.0);
        assert!(Tau0Reference::Table(vec![(1.0, 1.0), (1.0, 2.0)]).validate().is_err());
    }

    #[test]
    fn scan_validation() {
        let p = |w, t| SpectralPoint {
            wavelength: w,
            lifetime: t,
            uncertainty: None,
        };
        let tau0 = Tau0Reference::Constant(840.0);
        assert!(SpectralScan::new(vec![p(2.0, 1.0), p(1.0, 1.0)], tau0.clone()).is_err());
        assert!(SpectralScan::new(vec![p(1.0, 0.0)], tau0.clone()).is_err());
        assert!(SpectralScan::new(vec![p(1.0, 1.0), p(2.0, 1.0)], tau0).is_ok());
    }

    #[test]
    fn matches_single_emitter_ratio_exactly() {
        let md = m2();
        let tau0 = Tau0Reference::Constant(840.0);
        for lambda in grid(1031.5, 5.0, 0.37) {
            let coupling = EmitterCoupling::new(1.0, lambda, 0.47).unwrap();
            let ratio = lifetime_ratio(56.0, &coupling, &md).unwrap();
            assert_eq!(spectral_lifetime(&tau0, &[md], &[56.0], 0.47, lambda), 840.0 / ratio);
        }
    }

    #[test]
    fn noise_free_round_trip() {
        let md = m2();
        let tau0 = Tau0Reference::Constant(840.0);
        let scan = simulate_scan(&tau0, &[md], &[56.0], 0.47, &grid(1031.5, 8.0, 0.25), 0.0, 0).unwrap();
        let fit = fit_spectral_model(&scan, &[md], &FitOptions::default()).unwrap();
        assert!((fit.value("F_1") - 56.0).abs() < 1e-6);
        assert!((fit.value("alpha") - 0.47).abs() < 1e-8);
        let ratio = fit.value("ratio_1");
        assert!((ratio - (56.0 / 3.0 + 0.47)).abs() < 1e-6);
        assert!((fit.value("tau_on_resonance_1") - 840.0 / ratio).abs() < 1e-6);
    }

    #[test]
    fn noisy_round_trip() {
        let md = m2();
        let tau0 = Tau0Reference::Constant(840.0);
        let scan = simulate_scan(&tau0, &[md], &[56.0], 0.47, &grid(1031.5, 8.0, 0.25), 0.05, 17).unwrap();
        let fit = fit_spectral_model(&scan, &[md], &FitOptions::default()).unwrap();
        assert!((fit.value("F_1") - 56.0).abs() < 10.0);
        assert!((fit.value("tau_on_resonance_1") - 44.0).abs() < 8.0);
        assert!(fit.std_error("F_1").unwrap() > 0.0);
    }

    #[test]
    fn null_enhancement() {
        let md = m2();
        let tau0 = Tau0Reference::Constant(840.0);
        let scan = simulate_scan(&tau0, &[md], &[0.0], 0.47, &grid(1031.5, 8.0, 0.25), 0.05, 3).unwrap();
        let fit = fit_spectral_model(&scan, &[md], &FitOptions::default()).unwrap();
        let f = fit.value("F_1");
        let se = fit.std_error("F_1").unwrap();
        assert!(f >= 0.0 && f <= 2.0 * se + 1e-9, "{f} ± {se}");
        assert!((fit.value("alpha") - 0.47).abs() < 0.02);
    }

    #[test]
    fn coverage_is_enforced() {
        let md = m2();
        let tau0 = Tau0Reference::Constant(840.0);
        let scan = simulate_scan(&tau0, &[md], &[56.0], 0.47, &grid(1020.0, 5.0, 0.25), 0.0, 0).unwrap();
        assert!(matches!(
            fit_spectral_model(&scan, &[md], &FitOptions::default()),
            Err(FitError::InsufficientCoverage { .. })
        ));
        assert_eq!(
            fit_spectral_model(&scan, &[], &FitOptions::default()),
            Err(FitError::NoModes)
        );
    }

    #[test]
    fn two_modes() {
        let m1 = CavityMode::new(1025.4, 1500.0, 1.5).unwrap();
        let modes = [m1, m2()];
        let tau0 = Tau0Reference::Table(vec![(1015.0, 820.0), (1045.0, 860.0)]);
        let scan = simulate_scan(&tau0, &modes, &[30.0, 56.0], 0.47, &grid(1028.0, 10.0, 0.2), 0.0, 0).unwrap();
        let fit = fit_spectral_model(&scan, &modes, &FitOptions::default()).unwrap();
        assert!((fit.value("F_1") - 30.0).abs() < 1e-5);
        assert!((fit.value("F_2") - 56.0).abs() < 1e-5);
        assert!((fit.value("max_ratio") - (56.0 / 3.0 + 0.47)).abs() < 1e-6);
    }

    #[test]
    fn lifetime_dip_is_wider_than_the_mode() {
        let md = m2();
        let tau0 = Tau0Reference::Constant(840.0);
        let width = dip_fwhm(&tau0, &[md], &[56.0], 0.47, 0).unwrap();
        // closed form for one Lorentzian: Δλ·sqrt(F/(3α) + 1)
        let expect = md.linewidth * (56.0 / (3.0 * 0.47) + 1.0_f64).sqrt();
        assert!((width - expect).abs() < 1e-9 * expect);
        assert!(width > md.linewidth);

        // A resolution floor clips the measured minimum; the refit dip stays
        // wider than the cavity line.
        let mut scan = simulate_scan(&tau0, &[md], &[56.0], 0.47, &grid(1031.5, 8.0, 0.25), 0.0, 0).unwrap();
        for p in scan.points.iter_mut() {
            p.lifetime = p.lifetime.max(150.0);
        }
        let fit = fit_spectral_model(&scan, &[md], &FitOptions::default()).unwrap();
        let clipped = dip_fwhm(&tau0, &[md], &[fit.value("F_1")], fit.value("alpha"), 0).unwrap();
        assert!(clipped > md.linewidth);
    }
}
