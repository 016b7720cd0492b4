//! Weak-coupling cavity QED in closed form: Purcell factor, cavity linewidth
//! and photon lifetime, the detuning-dependent lifetime ratio, the
//! single-mode coupling efficiency β, and the enhanced lifetime.
//!
//! Wavelengths are in nm and times in ps unless a name says otherwise.

use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in nm/ps.
pub const SPEED_OF_LIGHT_NM_PER_PS: f64 = 299_792.458;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QedError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("Q factor must exceed 1, got {0}")]
    QFactor(f64),
    #[error("field ratio must lie in [0, 1], got {0}")]
    FieldRatio(f64),
    #[error("alpha must be non-negative, got {0}")]
    Alpha(f64),
    #[error("lifetimes must satisfy 0 < fast <= slow (got {fast}, {slow})")]
    LifetimeOrder { fast: f64, slow: f64 },
}

fn positive<T: Scalar>(name: &'static str, value: T) -> Result<T, QedError> {
    if value > T::zero() {
        Ok(value)
    } else {
        Err(QedError::NonPositive {
            name,
            value: value.as_f64(),
        })
    }
}

/// Resonant cavity mode. `linewidth` is always `lambda_c / q_factor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityMode<T> {
    pub lambda_c: T,
    pub q_factor: T,
    /// Mode volume in units of (λ/n)³.
    pub v_mode: T,
    pub linewidth: T,
}

impl<T: Scalar> CavityMode<T> {
    pub fn new(lambda_c: T, q_factor: T, v_mode: T) -> Result<Self, QedError> {
        positive("lambda_c", lambda_c)?;
        positive("v_mode", v_mode)?;
        if !(q_factor > T::one()) {
            return Err(QedError::QFactor(q_factor.as_f64()));
        }
        Ok(Self {
            lambda_c,
            q_factor,
            v_mode,
            linewidth: lambda_c / q_factor,
        })
    }

    pub fn purcell_factor(&self) -> T {
        purcell_factor_unchecked(self.q_factor, self.v_mode)
    }

    pub fn photon_lifetime(&self) -> T {
        self.q_factor * self.lambda_c / (T::two_pi() * T::lit(SPEED_OF_LIGHT_NM_PER_PS))
    }

    /// Unit-peak Lorentzian in emitter wavelength.
    pub fn lorentzian(&self, lambda_qd: T) -> T {
        let w2 = self.linewidth * self.linewidth;
        let d = self.lambda_c - lambda_qd;
        w2 / (w2 + T::lit(4.0) * d * d)
    }
}

/// Emitter placement and spectral position relative to a cavity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmitterCoupling<T> {
    /// `|E(r)|²/|E_max|²` at the emitter.
    pub field_ratio: T,
    pub lambda_qd: T,
    /// Residual decay rate into non-cavity modes, in units of the bulk rate.
    pub alpha: T,
}

impl<T: Scalar> EmitterCoupling<T> {
    pub fn new(field_ratio: T, lambda_qd: T, alpha: T) -> Result<Self, QedError> {
        if !(field_ratio >= T::zero() && field_ratio <= T::one()) {
            return Err(QedError::FieldRatio(field_ratio.as_f64()));
        }
        if !(alpha >= T::zero()) {
            return Err(QedError::Alpha(alpha.as_f64()));
        }
        positive("lambda_qd", lambda_qd)?;
        Ok(Self {
            field_ratio,
            lambda_qd,
            alpha,
        })
    }
}

fn purcell_factor_unchecked<T: Scalar>(q_factor: T, v_mode: T) -> T {
    T::lit(3.0) * q_factor / (T::lit(4.0) * T::pi() * T::pi() * v_mode)
}

/// `F_p = 3Q / (4π² V)` with V in (λ/n)³.
pub fn purcell_factor<T: Scalar>(q_factor: T, v_mode: T) -> Result<T, QedError> {
    positive("q_factor", q_factor)?;
    positive("v_mode", v_mode)?;
    Ok(purcell_factor_unchecked(q_factor, v_mode))
}

pub fn mode_linewidth<T: Scalar>(lambda_c: T, q_factor: T) -> Result<T, QedError> {
    Ok(positive("lambda_c", lambda_c)? / positive("q_factor", q_factor)?)
}

/// `τ_photon = Q/ω = Qλ/(2πc)` in ps.
pub fn photon_lifetime<T: Scalar>(lambda_c: T, q_factor: T) -> Result<T, QedError> {
    positive("lambda_c", lambda_c)?;
    positive("q_factor", q_factor)?;
    Ok(q_factor * lambda_c / (T::two_pi() * T::lit(SPEED_OF_LIGHT_NM_PER_PS)))
}

/// Spontaneous-emission rate relative to the homogeneous medium, `τ0/τ`:
///
/// `(1/3)·F·(|E|²/|E_max|²)·Δλ²/(Δλ² + 4(λ_c − λ_QD)²) + α`
pub fn lifetime_ratio<T: Scalar>(
    fp: T,
    coupling: &EmitterCoupling<T>,
    cavity: &CavityMode<T>,
) -> Result<T, QedError> {
    if !(fp >= T::zero()) {
        return Err(QedError::NonPositive {
            name: "fp",
            value: fp.as_f64(),
        });
    }
    Ok(fp / T::lit(3.0) * coupling.field_ratio * cavity.lorentzian(coupling.lambda_qd)
        + coupling.alpha)
}

/// One mode's contribution to a multi-mode lifetime ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeTerm<T> {
    pub cavity: CavityMode<T>,
    /// Purcell factor with the emitter field ratio already folded in.
    pub fp: T,
}

/// Sum of one Lorentzian term per mode plus a single residual `alpha`.
pub fn lifetime_ratio_multimode<T: Scalar>(terms: &[ModeTerm<T>], lambda_qd: T, alpha: T) -> T {
    terms.iter().fold(alpha, |acc, t| {
        acc + t.fp / T::lit(3.0) * t.cavity.lorentzian(lambda_qd)
    })
}

/// `β = 1 − τ_fast/τ_slow`.
pub fn coupling_efficiency<T: Scalar>(tau_fast: T, tau_slow: T) -> Result<T, QedError> {
    if !(tau_fast > T::zero() && tau_fast <= tau_slow) {
        return Err(QedError::LifetimeOrder {
            fast: tau_fast.as_f64(),
            slow: tau_slow.as_f64(),
        });
    }
    Ok(T::one() - tau_fast / tau_slow)
}

/// Enhanced lifetime in ps from `tau0` in ns and the ratio `τ0/τ`.
pub fn enhanced_lifetime<T: Scalar>(tau0_ns: T, ratio: T) -> Result<T, QedError> {
    positive("ratio", ratio)?;
    Ok(tau0_ns * T::lit(1000.0) / ratio)
}

/// Residual-mode rate implied by bulk and off-resonance lifetimes, `τ0/τ1`.
pub fn alpha_from_lifetimes<T: Scalar>(tau0: T, tau_off_resonance: T) -> Result<T, QedError> {
    Ok(positive("tau0", tau0)? / positive("tau_off_resonance", tau_off_resonance)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn mode(lambda: f64, q: f64) -> CavityMode<f64> {
        CavityMode::new(lambda, q, 1.5).unwrap()
    }

    #[test]
    fn purcell_examples() {
        assert!((purcell_factor::<f64>(2000.0, 1.5).unwrap() - 101.32).abs() < 0.01);
        assert_relative_eq!(
            purcell_factor(4.0 * PI * PI / 3.0, 1.0).unwrap(),
            1.0,
            max_relative = 1e-14
        );
        // 3·1950/(4π²·1.5) = 5850/59.218
        let by_hand = 5850.0 / (4.0 * PI * PI * 1.5);
        assert_relative_eq!(purcell_factor(1950.0, 1.5).unwrap(), by_hand, max_relative = 1e-14);
        assert!((by_hand - 98.8).abs() < 0.05);
        assert!(purcell_factor(0.0, 1.0).is_err());
        assert!(purcell_factor(10.0, -1.0).is_err());
    }

    #[test]
    fn purcell_scaling() {
        let base = purcell_factor(1000.0, 2.0).unwrap();
        assert_relative_eq!(purcell_factor(3000.0, 2.0).unwrap(), 3.0 * base, max_relative = 1e-14);
        assert_relative_eq!(purcell_factor(1000.0, 8.0).unwrap(), base / 4.0, max_relative = 1e-14);
    }

    #[test]
    fn linewidth_examples() {
        assert!((mode_linewidth::<f64>(1031.5, 1950.0).unwrap() - 0.529).abs() < 5e-4);
        assert_eq!(mode_linewidth::<f64>(1000.0, 1000.0).unwrap(), 1.0);
        assert!((mode_linewidth::<f64>(1025.4, 1500.0).unwrap() - 0.684).abs() < 5e-4);
        let m = mode(1031.5, 1950.0);
        assert_eq!(m.linewidth, 1031.5 / 1950.0);
    }

    #[test]
    fn photon_lifetime_examples() {
        let t = photon_lifetime::<f64>(1030.0, 2700.0).unwrap();
        assert!((t - 1.476).abs() < 1e-3, "{t}");
        let c = SPEED_OF_LIGHT_NM_PER_PS;
        assert_relative_eq!(photon_lifetime(c, 2.0 * PI).unwrap(), 1.0, max_relative = 1e-14);
        assert!((photon_lifetime::<f64>(1031.5, 1950.0).unwrap() - 1.068).abs() < 1e-3);
    }

    #[test]
    fn lifetime_ratio_on_resonance() {
        let cav = mode(1031.5, 1950.0);
        let alpha = 0.84 / 1.8;
        let c = EmitterCoupling::new(1.0, 1031.5, alpha).unwrap();
        let r = lifetime_ratio(56.0, &c, &cav).unwrap();
        assert_eq!(r, 56.0 / 3.0 + alpha);
        assert!((r - 19.1).abs() < 0.05);
        assert!((r - 19.0).abs() <= 4.0);
    }

    #[test]
    fn half_width_detuning_halves_lorentzian() {
        let cav = mode(1031.5, 1950.0);
        let c = EmitterCoupling::new(1.0, 1031.5 + cav.linewidth / 2.0, 0.0).unwrap();
        let r = lifetime_ratio(30.0, &c, &cav).unwrap();
        assert_relative_eq!(r, 5.0, max_relative = 1e-12);
    }

    #[test]
    fn uncoupled_emitter_gives_alpha() {
        let cav = mode(1031.5, 1950.0);
        let c = EmitterCoupling::new(0.0, 1031.5, 0.3).unwrap();
        for fp in [0.0, 1.0, 100.0] {
            assert_eq!(lifetime_ratio(fp, &c, &cav).unwrap(), 0.3);
        }
    }

    #[test]
    fn lifetime_ratio_decreases_with_detuning() {
        let cav = mode(1031.5, 1950.0);
        let alpha = 0.47;
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let d = i as f64 * 0.05;
            let c = EmitterCoupling::new(0.8, 1031.5 + d, alpha).unwrap();
            let r = lifetime_ratio(56.0, &c, &cav).unwrap();
            assert!(r < prev);
            prev = r;
            let c_neg = EmitterCoupling::new(0.8, 1031.5 - d, alpha).unwrap();
            assert_relative_eq!(lifetime_ratio(56.0, &c_neg, &cav).unwrap(), r, max_relative = 1e-12);
        }
        let far = EmitterCoupling::new(0.8, 1031.5 + 1e4, alpha).unwrap();
        assert!((lifetime_ratio(56.0, &far, &cav).unwrap() - alpha) < 1e-6);
    }

    #[test]
    fn multimode_reduces_to_single_mode() {
        let cav = mode(1031.5, 1950.0);
        let term = ModeTerm { cavity: cav, fp: 40.0 };
        for lq in [1029.0, 1031.0, 1031.5, 1033.2] {
            let c = EmitterCoupling::new(1.0, lq, 0.47).unwrap();
            assert_relative_eq!(
                lifetime_ratio_multimode(&[term], lq, 0.47),
                lifetime_ratio(40.0, &c, &cav).unwrap(),
                max_relative = 1e-14
            );
        }
        let m1 = ModeTerm { cavity: mode(1025.4, 1500.0), fp: 20.0 };
        let both = lifetime_ratio_multimode(&[m1, term], 1031.5, 0.47);
        assert!(both > lifetime_ratio_multimode(&[term], 1031.5, 0.47));
    }

    #[test]
    fn coupling_efficiency_examples() {
        assert!((coupling_efficiency::<f64>(0.15, 1.8).unwrap() - 0.9167).abs() < 1e-4);
        assert!((coupling_efficiency::<f64>(0.050, 1.8).unwrap() - 0.9722).abs() < 1e-4);
        assert_eq!(coupling_efficiency(1.8, 1.8).unwrap(), 0.0);
        assert!(coupling_efficiency(2.0, 1.8).is_err());
        assert!(coupling_efficiency(0.0, 1.8).is_err());
    }

    #[test]
    fn coupling_efficiency_scale_invariant() {
        let b = coupling_efficiency(0.15, 1.8).unwrap();
        for s in [1e-3, 0.5, 7.0, 1e3] {
            assert_relative_eq!(coupling_efficiency(0.15 * s, 1.8 * s).unwrap(), b, max_relative = 1e-12);
        }
    }

    #[test]
    fn enhanced_lifetime_examples() {
        assert!((enhanced_lifetime::<f64>(0.84, 19.0).unwrap() - 44.2).abs() < 0.05);
        assert_eq!(enhanced_lifetime::<f64>(0.84, 1.0).unwrap(), 840.0);
        assert!((enhanced_lifetime::<f64>(0.84, 5.6).unwrap() - 150.0).abs() < 1e-9);
        assert!(enhanced_lifetime(0.84, 0.0).is_err());
    }

    #[test]
    fn fitted_purcell_below_ideal_for_partial_field() {
        let ideal = purcell_factor(2000.0, 1.5).unwrap();
        // An emitter seeing only part of the peak field acts like a smaller F.
        for field in [0.2, 0.55, 1.0] {
            let effective = ideal * field;
            assert!(effective <= ideal);
        }
        assert!(56.0 <= ideal);
    }

    #[test]
    fn invalid_inputs() {
        assert!(CavityMode::new(1000.0, 1.0, 1.0).is_err());
        assert!(CavityMode::new(-1.0, 100.0, 1.0).is_err());
        assert!(EmitterCoupling::new(1.2, 1000.0, 0.0).is_err());
        assert!(EmitterCoupling::new(0.5, 1000.0, -0.1).is_err());
        assert_eq!(alpha_from_lifetimes(0.84, 1.8).unwrap(), 0.84 / 1.8);
    }

    #[test]
    fn single_precision_purcell() {
        let f: f32 = purcell_factor(2000.0_f32, 1.5).unwrap();
        assert!((f - 101.32).abs() < 0.01);
    }
}
