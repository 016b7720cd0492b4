//! Poisson maximum-likelihood reconvolution fits of decay histograms.

use super::lm::{self, Objective};
use super::{
    last_iterate, FitError, FitModel, FitOptions, FitParameter, FitResult, FitWarning, Goodness,
    Statistic,
};
use crate::qed::coupling_efficiency;
use crate::scalar::Scalar;
use crate::tcspc::{component_response, ExpectedCurve, InstrumentResponse, TimeGrid, TransientHistogram};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Counts to fit, as reals so that noise-free curves can be fitted too.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramData<T> {
    pub grid: TimeGrid<T>,
    pub irf: InstrumentResponse<T>,
    pub counts: Vec<T>,
    pub total_counts: u64,
}

impl<T: Scalar> From<&TransientHistogram<T>> for HistogramData<T> {
    fn from(h: &TransientHistogram<T>) -> Self {
        Self {
            grid: h.grid(),
            irf: h.irf,
            counts: h.counts_as_scalar(),
            total_counts: h.total_counts,
        }
    }
}

impl<T: Scalar> From<&ExpectedCurve<T>> for HistogramData<T> {
    fn from(c: &ExpectedCurve<T>) -> Self {
        let counts = c.values();
        let total = counts.iter().fold(T::zero(), |a, &b| a + b);
        Self {
            grid: c.grid,
            irf: c.irf,
            counts,
            total_counts: total.as_f64().round().max(0.0) as u64,
        }
    }
}

/// Fixed low-statistics limit below which fits carry a warning.
const LOW_STATISTICS: u64 = 1000;
/// Slow/fast lifetime ratio below which two components are not separable.
const MIN_LIFETIME_RATIO: f64 = 1.2;

/// Optimizer layout: `[ln τ_1..ln τ_k, A_1..A_k, t0 shift, background]`.
struct DecayObjective<'a, T: Scalar> {
    data: &'a HistogramData<T>,
    k: usize,
    sigma: T,
    centers: Vec<T>,
}

struct Evaluated<T> {
    mu: Vec<T>,
    /// Rows in natural parameters `[τ.., A.., shift, background]`.
    jac: Vec<Vec<T>>,
}

impl<'a, T: Scalar> DecayObjective<'a, T> {
    fn new(data: &'a HistogramData<T>, k: usize) -> Self {
        Self {
            data,
            k,
            sigma: data.irf.sigma(),
            centers: data.grid.centers().collect(),
        }
    }

    fn n_params(&self) -> usize {
        2 * self.k + 2
    }

    fn natural(&self, p: &DVector<T>) -> (Vec<T>, Vec<T>, T, T) {
        let taus = (0..self.k).map(|j| p[j].exp()).collect();
        let amps = (0..self.k).map(|j| p[self.k + j]).collect();
        (taus, amps, p[2 * self.k], p[2 * self.k + 1])
    }

    fn model(&self, p: &DVector<T>, with_jacobian: bool) -> Evaluated<T> {
        let (taus, amps, shift, bg) = self.natural(p);
        self.model_natural(&taus, &amps, shift, bg, with_jacobian)
    }

    /// Model intensity per bin, evaluated exactly as `expected_curve` does.
    fn model_natural(&self, taus: &[T], amps: &[T], shift: T, bg: T, with_jacobian: bool) -> Evaluated<T> {
        let t0 = self.data.irf.t0 + shift;
        let np = self.n_params();
        let mut mu = Vec::with_capacity(self.centers.len());
        let mut jac = Vec::new();
        for &t in &self.centers {
            let mut acc = T::zero();
            let mut row = if with_jacobian { vec![T::zero(); np] } else { Vec::new() };
            for j in 0..self.k {
                let r = component_response(t - t0, taus[j], self.sigma);
                acc += amps[j] * r.value;
                if with_jacobian {
                    row[j] = amps[j] * r.d_dtau;
                    row[self.k + j] = r.value;
                    row[2 * self.k] -= amps[j] * r.d_dx;
                }
            }
            if with_jacobian {
                row[2 * self.k + 1] = T::one();
                jac.push(row);
            }
            mu.push(acc + bg);
        }
        Evaluated { mu, jac }
    }

    fn deviance(&self, mu: &[T]) -> Option<T> {
        let two = T::lit(2.0);
        let mut d = T::zero();
        for (&y, &m) in self.data.counts.iter().zip(mu) {
            if y > T::zero() {
                if !(m > T::zero()) {
                    return None;
                }
                d += two * (y * (y / m).ln() - (y - m));
            } else {
                d += two * m;
            }
        }
        d.is_finite().then_some(d)
    }

    /// Expected information `Σ ∂μ ∂μᵀ / μ` in natural parameters.
    fn fisher(&self, ev: &Evaluated<T>) -> DMatrix<T> {
        let np = self.n_params();
        let mut f = DMatrix::from_element(np, np, T::zero());
        for (row, &m) in ev.jac.iter().zip(&ev.mu) {
            if m > T::lit(1e-12) {
                for a in 0..np {
                    let ra = row[a] / m;
                    for b in a..np {
                        f[(a, b)] += ra * row[b];
                    }
                }
            }
        }
        f.fill_lower_triangle_with_upper_triangle();
        f
    }
}

impl<T: Scalar> Objective<T> for DecayObjective<'_, T> {
    fn value(&self, p: &DVector<T>) -> Option<T> {
        self.deviance(&self.model(p, false).mu)
    }

    fn evaluate(&self, p: &DVector<T>) -> Option<(T, DVector<T>, DMatrix<T>)> {
        let mut ev = self.model(p, true);
        let d = self.deviance(&ev.mu)?;
        // chain rule to ln τ
        for row in ev.jac.iter_mut() {
            for j in 0..self.k {
                row[j] *= p[j].exp();
            }
        }
        let np = self.n_params();
        let two = T::lit(2.0);
        let mut g = DVector::from_element(np, T::zero());
        for ((row, &m), &y) in ev.jac.iter().zip(&ev.mu).zip(&self.data.counts) {
            let w = if m > T::zero() { T::one() - y / m } else { T::one() };
            for a in 0..np {
                g[a] += two * w * row[a];
            }
        }
        let h = self.fisher(&ev) * two;
        Some((d, g, h))
    }

    fn lower(&self) -> DVector<T> {
        let mut lo = DVector::from_element(self.n_params(), T::zero());
        // Components much narrower than the IRF are indistinguishable from
        // a scaled IRF; keep them from drifting towards zero lifetime.
        let tau_min = (self.data.irf.fwhm * T::lit(0.05)).ln();
        for j in 0..self.k {
            lo[j] = tau_min;
        }
        lo[2 * self.k] = -T::lit(2.0) * self.data.irf.fwhm;
        lo
    }

    fn upper(&self) -> DVector<T> {
        let span = self.data.grid.t_end() - self.data.grid.t_start;
        let mut hi = DVector::from_element(self.n_params(), T::INFINITY);
        for j in 0..self.k {
            hi[j] = (span * T::lit(100.0)).ln();
        }
        hi[2 * self.k] = T::lit(2.0) * self.data.irf.fwhm;
        hi
    }
}

fn background_guess<T: Scalar>(data: &HistogramData<T>) -> T {
    let cut = data.irf.t0 - T::lit(4.0) * data.irf.sigma();
    let n = data.counts.len();
    let pre: Vec<T> = data
        .grid
        .centers()
        .zip(&data.counts)
        .filter(|(t, _)| *t < cut)
        .map(|(_, &y)| y)
        .collect();
    let mean = |v: &[T]| v.iter().fold(T::zero(), |a, &b| a + b) / T::from_usize_lossy(v.len());
    let tail_len = (n / 20).max(1).min(n);
    let tail = mean(&data.counts[n - tail_len..]);
    if pre.len() >= 5 {
        mean(&pre).min(tail)
    } else {
        tail
    }
}

/// Lifetime from a weighted log-linear regression of background-subtracted
/// counts between `from` and `to`.
fn log_linear_lifetime<T: Scalar>(
    data: &HistogramData<T>,
    excess: &[T],
    bg: T,
    from: T,
    to: T,
) -> Option<T> {
    let floor = T::lit(2.0).max(T::lit(3.0) * (bg + T::one()).sqrt());
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) =
        (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
    let mut n = 0;
    for (t, &e) in data.grid.centers().zip(excess) {
        if t >= from && t <= to && e > floor {
            let y = e.ln();
            sw += e;
            sx += e * t;
            sy += e * y;
            sxx += e * t * t;
            sxy += e * t * y;
            n += 1;
        }
    }
    if n < 3 {
        return None;
    }
    let slope = (sw * sxy - sx * sy) / (sw * sxx - sx * sx);
    (slope < T::zero() && slope.is_finite()).then(|| -T::one() / slope)
}

/// Time at which the cumulative excess counts reach `fraction` of the total.
fn cumulative_time<T: Scalar>(data: &HistogramData<T>, excess: &[T], fraction: T) -> T {
    let total = excess.iter().fold(T::zero(), |a, &b| a + b.max(T::zero()));
    let mut acc = T::zero();
    for (t, &e) in data.grid.centers().zip(excess) {
        acc += e.max(T::zero());
        if acc >= fraction * total {
            return t;
        }
    }
    data.grid.t_end()
}

/// Non-negative amplitudes for fixed lifetimes from a weighted linear fit.
fn linear_amplitudes<T: Scalar>(data: &HistogramData<T>, taus: &[T], bg: T) -> Vec<T> {
    let k = taus.len();
    let sigma = data.irf.sigma();
    let mut a = DMatrix::from_element(k, k, T::zero());
    let mut b = DVector::from_element(k, T::zero());
    for (t, &y) in data.grid.centers().zip(&data.counts) {
        let w = T::one() / y.max(T::one());
        let g: Vec<T> = taus
            .iter()
            .map(|&tau| component_response(t - data.irf.t0, tau, sigma).value)
            .collect();
        for r in 0..k {
            b[r] += w * g[r] * (y - bg);
            for c in 0..k {
                a[(r, c)] += w * g[r] * g[c];
            }
        }
    }
    let sol = a
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&b))
        .unwrap_or_else(|| DVector::from_element(k, T::one()));
    let top = sol.iter().fold(T::zero(), |m, &v| m.max(v.abs())).max(T::one());
    sol.iter()
        .map(|&v| if v > T::zero() { v } else { top * T::lit(1e-3) })
        .collect()
}

fn start_vector<T: Scalar>(taus: &[T], amps: &[T], bg: T) -> DVector<T> {
    let k = taus.len();
    let mut p = DVector::from_element(2 * k + 2, T::zero());
    for j in 0..k {
        p[j] = taus[j].ln();
        p[k + j] = amps[j];
    }
    p[2 * k + 1] = bg;
    p
}

fn starting_points<T: Scalar>(data: &HistogramData<T>, k: usize) -> Vec<DVector<T>> {
    let bg = background_guess(data);
    let excess: Vec<T> = data.counts.iter().map(|&y| y - bg).collect();
    let span = data.grid.t_end() - data.grid.t_start;
    let peak = data
        .grid
        .centers()
        .zip(&data.counts)
        .fold((data.grid.t_start, T::zero()), |m, (t, &y)| if y > m.1 { (t, y) } else { m })
        .0;
    let end = data.grid.t_end();
    let fallback = span / T::lit(5.0);
    if k == 1 {
        let tau = log_linear_lifetime(data, &excess, bg, peak + data.irf.fwhm, end)
            .unwrap_or(fallback);
        let amps = linear_amplitudes(data, &[tau], bg);
        return vec![start_vector(&[tau], &amps, bg)];
    }
    let split = cumulative_time(data, &excess, T::lit(0.3));
    let late_from = cumulative_time(data, &excess, T::lit(0.7)).max(split);
    let slow = log_linear_lifetime(data, &excess, bg, late_from, end).unwrap_or(fallback);
    // Remove the extrapolated slow tail before looking at the early segment.
    let slow_amp = linear_amplitudes(data, &[slow], bg)[0];
    let sigma = data.irf.sigma();
    let early: Vec<T> = data
        .grid
        .centers()
        .zip(&excess)
        .map(|(t, &e)| e - slow_amp * component_response(t - data.irf.t0, slow, sigma).value)
        .collect();
    let mut fast_candidates = Vec::new();
    if let Some(f) = log_linear_lifetime(data, &early, bg, peak + data.irf.fwhm * T::lit(0.5), split.max(peak + data.irf.fwhm)) {
        if f * T::lit(MIN_LIFETIME_RATIO) < slow {
            fast_candidates.push(f);
        }
    }
    fast_candidates.push(slow / T::lit(5.0));
    fast_candidates.push(slow / T::lit(20.0));
    fast_candidates
        .into_iter()
        .map(|fast| {
            let taus = [fast, slow];
            let amps = linear_amplitudes(data, &taus, bg);
            start_vector(&taus, &amps, bg)
        })
        .collect()
}

fn names(k: usize) -> Vec<String> {
    let base: Vec<&str> = if k == 1 {
        vec!["tau", "amplitude"]
    } else {
        vec!["tau_fast", "amplitude_fast", "tau_slow", "amplitude_slow"]
    };
    base.into_iter()
        .chain(["t0_shift", "background"])
        .map(String::from)
        .collect()
}

/// Reconvolution fit with `components` exponentials (1 or 2), free IRF
/// shift and constant background, minimizing the Poisson deviance.
pub fn fit_decay<T: Scalar>(
    data: &HistogramData<T>,
    components: usize,
    options: &FitOptions,
) -> Result<FitResult<T>, FitError> {
    assert!(components == 1 || components == 2, "one or two components");
    if data.counts.len() != data.grid.bins {
        return Err(FitError::Shape);
    }
    if !data.counts.iter().any(|&y| y > T::zero()) {
        return Err(FitError::EmptyHistogram);
    }
    let k = components;
    let obj = DecayObjective::new(data, k);
    let mut best: Option<lm::LmOutcome<T>> = None;
    for start in starting_points(data, k) {
        let Some(out) = lm::minimize(&obj, start, options.lm()) else {
            continue;
        };
        let better = match &best {
            None => true,
            Some(b) => (out.converged && !b.converged) || (out.converged == b.converged && out.value < b.value),
        };
        if better {
            best = Some(out);
        }
    }
    let out = best.ok_or(FitError::BadStart)?;

    // Natural parameters, fast component first.
    let (mut taus, mut amps, shift, bg) = obj.natural(&out.params);
    if k == 2 && taus[0] > taus[1] {
        taus.swap(0, 1);
        amps.swap(0, 1);
    }
    let mut natural = Vec::with_capacity(2 * k + 2);
    for j in 0..k {
        natural.push(taus[j]);
        natural.push(amps[j]);
    }
    natural.push(shift);
    natural.push(bg);
    let names = names(k);
    if !out.converged {
        return Err(FitError::NoConvergence {
            iterations: out.iterations,
            last: last_iterate(&names, &natural),
        });
    }

    let ev = obj.model_natural(&taus, &amps, shift, bg, true);
    let fisher_native = obj.fisher(&ev);
    // native order [τ.., A.., shift, bg] → reported order [τ1, A1, τ2, A2, shift, bg]
    let order: Vec<usize> = (0..k).flat_map(|j| [j, k + j]).chain([2 * k, 2 * k + 1]).collect();
    let np = order.len();
    let fisher = DMatrix::from_fn(np, np, |r, c| fisher_native[(order[r], order[c])]);
    let (cov, identified) = lm::covariance(&fisher);

    let parameters: Vec<FitParameter<T>> = (0..np)
        .map(|i| FitParameter {
            name: names[i].clone(),
            value: natural[i],
            std_error: identified[i].then(|| cov[(i, i)].max(T::zero()).sqrt()),
        })
        .collect();

    let mut warnings = Vec::new();
    if data.total_counts < LOW_STATISTICS {
        warnings.push(FitWarning::LowStatistics {
            total_counts: data.total_counts,
        });
    }
    let lo = obj.lower();
    let hi = obj.upper();
    if shift <= lo[2 * k] || shift >= hi[2 * k] {
        warnings.push(FitWarning::AtBound {
            parameter: "t0_shift".into(),
        });
    }
    for j in 0..k {
        if amps[j] == T::zero() {
            warnings.push(FitWarning::AtBound {
                parameter: names[2 * j + 1].clone(),
            });
        }
    }
    let mut derived = Vec::new();
    if k == 2 {
        let separable = taus[1] >= T::lit(MIN_LIFETIME_RATIO) * taus[0]
            && amps.iter().all(|&a| a > T::zero());
        if !separable {
            warnings.push(FitWarning::Unidentifiable);
        }
        // β = 1 − τf/τs; ∂β/∂τf = −1/τs, ∂β/∂τs = τf/τs²
        if let Ok(beta) = coupling_efficiency(taus[0], taus[1]) {
            let grad = [-T::one() / taus[1], taus[0] / (taus[1] * taus[1])];
            let idx = [0, 2];
            let se = (identified[0] && identified[2]).then(|| {
                let mut v = T::zero();
                for a in 0..2 {
                    for b in 0..2 {
                        v += grad[a] * grad[b] * cov[(idx[a], idx[b])];
                    }
                }
                v.max(T::zero()).sqrt()
            });
            derived.push(FitParameter {
                name: "beta".into(),
                value: beta,
                std_error: se,
            });
        }
        let area_fast = amps[0] * taus[0];
        let area_slow = amps[1] * taus[1];
        let total = area_fast + area_slow;
        if total > T::zero() {
            derived.push(FitParameter {
                name: "fast_fraction".into(),
                value: area_fast / total,
                std_error: None,
            });
        }
    }

    let n = data.counts.len();
    let dof = n.saturating_sub(np).max(1);
    Ok(FitResult {
        model: if k == 1 {
            FitModel::Monoexponential
        } else {
            FitModel::Biexponential
        },
        parameters,
        derived,
        covariance: (0..np).map(|r| (0..np).map(|c| cov[(r, c)]).collect()).collect(),
        goodness: Goodness {
            statistic: Statistic::PoissonDeviance,
            value: out.value,
            dof,
            reduced: out.value / T::from_usize_lossy(dof),
        },
        iterations: out.iterations,
        converged: out.converged,
        gradient_norm: out.gradient_norm,
        warnings,
    })
}

pub fn fit_monoexponential<T: Scalar>(hist: &TransientHistogram<T>) -> Result<FitResult<T>, FitError> {
    fit_decay(&hist.into(), 1, &FitOptions::default())
}

/// Two-component fit; components are reported fast first.
pub fn fit_biexponential<T: Scalar>(hist: &TransientHistogram<T>) -> Result<FitResult<T>, FitError> {
    fit_decay(&hist.into(), 2, &FitOptions::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    Mono,
    Bi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSelection<T> {
    pub choice: ModelChoice,
    /// Deviance(mono) − deviance(bi).
    pub delta_deviance: T,
    pub threshold: T,
    pub mono: FitResult<T>,
    pub bi: FitResult<T>,
}

impl<T> ModelSelection<T> {
    pub fn chosen(&self) -> &FitResult<T> {
        match self.choice {
            ModelChoice::Mono => &self.mono,
            ModelChoice::Bi => &self.bi,
        }
    }
}

/// Likelihood-ratio choice between one and two components. Two are
/// preferred only when the deviance drops by more than the threshold and the
/// two-component fit is identifiable; ties go to one.
pub fn select_model_with<T: Scalar>(
    data: &HistogramData<T>,
    options: &FitOptions,
) -> Result<ModelSelection<T>, FitError> {
    let mono = fit_decay(data, 1, options)?;
    let bi = fit_decay(data, 2, options)?;
    let delta = mono.goodness.value - bi.goodness.value;
    let threshold = T::lit(options.selection_threshold);
    let choice = if delta > threshold && !bi.is_unidentifiable() {
        ModelChoice::Bi
    } else {
        ModelChoice::Mono
    };
    Ok(ModelSelection {
        choice,
        delta_deviance: delta,
        threshold,
        mono,
        bi,
    })
}

pub fn select_model<T: Scalar>(hist: &TransientHistogram<T>) -> Result<ModelSelection<T>, FitError> {
    select_model_with(&hist.into(), &FitOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tcspc::{expected_curve, sample_histogram, DecayComponent, DecayModel};

    fn irf() -> InstrumentResponse<f64> {
        InstrumentResponse::new(150.0, 1000.0).unwrap()
    }

    fn mono_hist(tau: f64, counts: u64, bg: f64, seed: u64) -> TransientHistogram<f64> {
        let model = DecayModel::mono(1.0, tau, bg).unwrap();
        let curve = expected_curve(&model, &irf(), &TimeGrid::default());
        sample_histogram(&curve, counts, seed).unwrap()
    }

    /// Fast component holds `fast_fraction` of the signal counts.
    fn bi_model(fast: f64, slow: f64, fast_fraction: f64, bg: f64) -> DecayModel<f64> {
        let a = fast_fraction / fast;
        let b = (1.0 - fast_fraction) / slow;
        DecayModel::new(
            vec![
                DecayComponent { amplitude: a, lifetime: fast },
                DecayComponent { amplitude: b, lifetime: slow },
            ],
            bg,
        )
        .unwrap()
    }

    fn bi_hist(fast: f64, slow: f64, counts: u64, seed: u64) -> TransientHistogram<f64> {
        let curve = expected_curve(&bi_model(fast, slow, 0.6, 0.0), &irf(), &TimeGrid::default());
        sample_histogram(&curve, counts, seed).unwrap()
    }

    #[test]
    fn objective_matches_generator_bit_for_bit() {
        let model = bi_model(150.0, 1800.0, 0.6, 2.5);
        let curve = expected_curve(&model, &irf(), &TimeGrid::default());
        let data = HistogramData::from(&curve);
        let obj = DecayObjective::new(&data, 2);
        let amps = [model.components[0].amplitude, model.components[1].amplitude];
        let ev = obj.model_natural(&[150.0, 1800.0], &amps, 0.0, 2.5, false);
        assert_eq!(ev.mu, curve.values());
    }

    #[test]
    fn mono_round_trip() {
        let h = mono_hist(840.0, 100_000, 0.0, 11);
        let fit = fit_monoexponential(&h).unwrap();
        assert!(fit.converged);
        assert!((fit.value("tau") - 840.0).abs() < 0.03 * 840.0);
        assert!(fit.std_error("tau").unwrap() > 0.0);
        assert_eq!(fit.goodness.statistic, Statistic::PoissonDeviance);
    }

    #[test]
    fn mono_round_trip_off_resonance_lifetime() {
        let h = mono_hist(1800.0, 100_000, 1.0, 5);
        let fit = fit_monoexponential(&h).unwrap();
        assert!((fit.value("tau") - 1800.0).abs() < 0.03 * 1800.0);
    }

    #[test]
    fn noise_free_recovery() {
        let model = DecayModel::mono(5000.0, 840.0, 3.0).unwrap();
        let curve = expected_curve(&model, &irf(), &TimeGrid::default());
        let fit = fit_decay(&HistogramData::from(&curve), 1, &FitOptions::default()).unwrap();
        assert!((fit.value("tau") / 840.0 - 1.0).abs() < 1e-4);
        assert!((fit.value("amplitude") / 5000.0 - 1.0).abs() < 1e-4);
        assert!((fit.value("background") / 3.0 - 1.0).abs() < 1e-4);
        assert!(fit.value("t0_shift").abs() < 1e-2);
    }

    #[test]
    fn bi_round_trip() {
        let h = bi_hist(150.0, 1800.0, 100_000, 3);
        let fit = fit_biexponential(&h).unwrap();
        assert!((fit.value("tau_slow") - 1800.0).abs() < 0.05 * 1800.0);
        assert!((fit.value("tau_fast") - 150.0).abs() < 0.2 * 150.0);
        assert!(!fit.is_unidentifiable());
        assert!(fit.value("tau_fast") < fit.value("tau_slow"));
        let beta = fit.value("beta");
        assert!((beta - (1.0 - 150.0 / 1800.0)).abs() < 0.02);
    }

    #[test]
    fn bi_nested_limit() {
        let h = mono_hist(1800.0, 100_000, 0.0, 9);
        let fit = fit_biexponential(&h).unwrap();
        let a = fit.value("amplitude_fast") * fit.value("tau_fast");
        let total = a + fit.value("amplitude_slow") * fit.value("tau_slow");
        // slow lifetime still recovered; fast part carries a negligible share
        assert!((fit.value("tau_slow") - 1800.0).abs() < 0.03 * 1800.0);
        let amp = fit.value("amplitude_fast");
        match fit.std_error("amplitude_fast") {
            Some(se) => assert!(amp <= 2.0 * se || a / total < 0.02, "{amp} ± {se}"),
            None => assert_eq!(amp, 0.0),
        }
    }

    #[test]
    fn resolution_floor_keeps_slow_component() {
        let h = bi_hist(44.0, 1800.0, 100_000, 21);
        let fit = fit_biexponential(&h).unwrap();
        assert!((fit.value("tau_slow") - 1800.0).abs() < 0.05 * 1800.0);
    }

    #[test]
    fn selection_on_noise_free_mono_is_mono() {
        let model = DecayModel::mono(2000.0, 840.0, 0.0).unwrap();
        let curve = expected_curve(&model, &irf(), &TimeGrid::default());
        let sel = select_model_with(&HistogramData::from(&curve), &FitOptions::default()).unwrap();
        assert_eq!(sel.choice, ModelChoice::Mono);
    }

    #[test]
    fn selection_on_single_histograms() {
        assert_eq!(select_model(&mono_hist(840.0, 100_000, 0.0, 1)).unwrap().choice, ModelChoice::Mono);
        assert_eq!(select_model(&bi_hist(150.0, 1800.0, 100_000, 1)).unwrap().choice, ModelChoice::Bi);
    }

    #[test]
    fn low_statistics_warning() {
        let h = mono_hist(840.0, 500, 0.0, 2);
        let fit = fit_monoexponential(&h).unwrap();
        assert!(fit.warnings.contains(&FitWarning::LowStatistics { total_counts: 500 }));
    }

    #[test]
    fn empty_histogram_rejected() {
        let h = TransientHistogram::new(TimeGrid::new(0.0, 12.0, 100).unwrap(), vec![0; 100], irf()).unwrap();
        assert_eq!(fit_monoexponential(&h), Err(FitError::EmptyHistogram));
    }

    #[test]
    fn iteration_cap_reports_last_iterate() {
        let h = mono_hist(840.0, 100_000, 0.0, 4);
        let opts = FitOptions {
            max_iterations: 1,
            ..FitOptions::default()
        };
        match fit_decay(&(&h).into(), 1, &opts) {
            Err(FitError::NoConvergence { iterations, last }) => {
                assert_eq!(iterations, 1);
                assert_eq!(last.len(), 4);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
