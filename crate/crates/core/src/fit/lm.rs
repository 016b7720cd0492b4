//! Bound-constrained Levenberg–Marquardt on a Gauss–Newton curvature.

use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};

/// Objective in optimizer coordinates. `evaluate` returns the value, its
/// gradient and a positive semi-definite curvature approximation.
pub(crate) trait Objective<T: Scalar> {
    fn value(&self, p: &DVector<T>) -> Option<T>;
    fn evaluate(&self, p: &DVector<T>) -> Option<(T, DVector<T>, DMatrix<T>)>;
    fn lower(&self) -> DVector<T>;
    fn upper(&self) -> DVector<T>;
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmSettings {
    pub max_iterations: usize,
    pub rel_tol: f64,
    pub grad_tol: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct LmOutcome<T: Scalar> {
    pub params: DVector<T>,
    pub value: T,
    pub iterations: usize,
    pub converged: bool,
    /// Square root of the Newton decrement `gᵀH⁻¹g` over free parameters.
    pub gradient_norm: T,
}

fn clamp<T: Scalar>(p: &mut DVector<T>, lo: &DVector<T>, hi: &DVector<T>) {
    for i in 0..p.len() {
        p[i] = p[i].max(lo[i]).min(hi[i]);
    }
}

/// Indices not pinned at a bound by a gradient pushing outward.
fn free_set<T: Scalar>(p: &DVector<T>, g: &DVector<T>, lo: &DVector<T>, hi: &DVector<T>) -> Vec<usize> {
    (0..p.len())
        .filter(|&i| !((p[i] <= lo[i] && g[i] > T::zero()) || (p[i] >= hi[i] && g[i] < T::zero())))
        .collect()
}

fn sub_system<T: Scalar>(h: &DMatrix<T>, g: &DVector<T>, idx: &[usize]) -> (DMatrix<T>, DVector<T>) {
    let n = idx.len();
    let hs = DMatrix::from_fn(n, n, |r, c| h[(idx[r], idx[c])]);
    let gs = DVector::from_fn(n, |r, _| g[idx[r]]);
    (hs, gs)
}

/// `gᵀH⁻¹g` restricted to the free set, with a tiny diagonal guard.
fn newton_decrement<T: Scalar>(h: &DMatrix<T>, g: &DVector<T>, idx: &[usize]) -> T {
    if idx.is_empty() {
        return T::zero();
    }
    let (mut hs, gs) = sub_system(h, g, idx);
    let max_diag = (0..hs.nrows()).fold(T::zero(), |m, i| m.max(hs[(i, i)]));
    for i in 0..hs.nrows() {
        hs[(i, i)] += T::lit(1e-14) * max_diag + T::MIN_POSITIVE;
    }
    match hs.cholesky() {
        Some(ch) => gs.dot(&ch.solve(&gs)).max(T::zero()),
        None => T::INFINITY,
    }
}

/// Newton decrement below which the observed Hessian replaces the
/// expected curvature.
const NEWTON_SWITCH: f64 = 1.0;

/// Hessian by central differences of the analytic gradient (one-sided at a
/// bound), symmetrized.
fn observed_hessian<T: Scalar, O: Objective<T>>(
    obj: &O,
    p: &DVector<T>,
    lo: &DVector<T>,
    hi: &DVector<T>,
) -> Option<DMatrix<T>> {
    let n = p.len();
    let mut hess = DMatrix::from_element(n, n, T::zero());
    for i in 0..n {
        let step = T::lit(1e-5) * p[i].abs().max(T::one());
        let mut up = p.clone();
        let mut down = p.clone();
        up[i] = (p[i] + step).min(hi[i]);
        down[i] = (p[i] - step).max(lo[i]);
        let width = up[i] - down[i];
        if !(width > T::zero()) {
            return None;
        }
        let gu = obj.evaluate(&up)?.1;
        let gd = obj.evaluate(&down)?.1;
        for r in 0..n {
            hess[(r, i)] = (gu[r] - gd[r]) / width;
        }
    }
    Some((&hess + hess.transpose()) * T::lit(0.5))
}

pub(crate) fn minimize<T: Scalar, O: Objective<T>>(
    obj: &O,
    start: DVector<T>,
    settings: LmSettings,
) -> Option<LmOutcome<T>> {
    let lo = obj.lower();
    let hi = obj.upper();
    let mut p = start;
    clamp(&mut p, &lo, &hi);
    let (mut f, mut g, mut h) = obj.evaluate(&p)?;
    let mut lambda = T::lit(1e-3);
    let rel_tol = T::lit(settings.rel_tol);
    let grad_tol = T::lit(settings.grad_tol);

    let mut iterations = 0;
    loop {
        let free = free_set(&p, &g, &lo, &hi);
        let decrement = newton_decrement(&h, &g, &free);
        if decrement < grad_tol {
            return Some(LmOutcome {
                params: p,
                value: f,
                iterations,
                converged: true,
                gradient_norm: decrement.sqrt(),
            });
        }
        if iterations >= settings.max_iterations {
            return Some(LmOutcome {
                params: p,
                value: f,
                iterations,
                converged: false,
                gradient_norm: decrement.sqrt(),
            });
        }
        iterations += 1;

        // Near the optimum, Fisher scoring converges only linearly along weakly
        // identified directions; the observed curvature restores Newton steps.
        let curvature = if decrement < T::lit(NEWTON_SWITCH) {
            observed_hessian(obj, &p, &lo, &hi)
                .filter(|ho| sub_system(ho, &g, &free).0.cholesky().is_some())
                .unwrap_or_else(|| h.clone())
        } else {
            h.clone()
        };
        let (hs, gs) = sub_system(&curvature, &g, &free);
        let max_diag = (0..hs.nrows()).fold(T::zero(), |m, i| m.max(hs[(i, i)]));
        let floor = T::lit(1e-12) * max_diag + T::MIN_POSITIVE;
        let mut accepted = None;
        while lambda < T::lit(1e16) {
            let mut a = hs.clone();
            for i in 0..a.nrows() {
                let d = a[(i, i)].max(floor);
                a[(i, i)] += lambda * d;
            }
            let Some(ch) = a.cholesky() else {
                lambda *= T::lit(10.0);
                continue;
            };
            let step = ch.solve(&(-gs.clone()));
            let mut trial = p.clone();
            for (k, &i) in free.iter().enumerate() {
                trial[i] += step[k];
            }
            clamp(&mut trial, &lo, &hi);
            match obj.value(&trial) {
                Some(ft) if ft <= f => {
                    accepted = Some(trial);
                    lambda = (lambda / T::lit(10.0)).max(T::lit(1e-12));
                    break;
                }
                _ => lambda *= T::lit(10.0),
            }
        }
        let Some(trial) = accepted else {
            // No descent possible: the current point is as good as the
            // curvature model allows.
            return Some(LmOutcome {
                params: p,
                value: f,
                iterations,
                converged: decrement < T::lit(1e-6),
                gradient_norm: decrement.sqrt(),
            });
        };
        let change = (0..p.len()).fold(T::zero(), |m, i| {
            m.max((trial[i] - p[i]).abs() / p[i].abs().max(T::one()))
        });
        p = trial;
        (f, g, h) = obj.evaluate(&p)?;
        if change < rel_tol {
            let free = free_set(&p, &g, &lo, &hi);
            return Some(LmOutcome {
                params: p,
                value: f,
                iterations,
                converged: true,
                gradient_norm: newton_decrement(&h, &g, &free).sqrt(),
            });
        }
    }
}

/// Covariance from a curvature matrix in natural parameters. Parameters
/// with no information (zero diagonal) get no row; the rest are inverted via
/// a scaled pseudo-inverse.
pub(crate) fn covariance<T: Scalar>(fisher: &DMatrix<T>) -> (DMatrix<T>, Vec<bool>) {
    let n = fisher.nrows();
    let identified: Vec<bool> = (0..n).map(|i| fisher[(i, i)] > T::zero()).collect();
    let idx: Vec<usize> = (0..n).filter(|&i| identified[i]).collect();
    let mut cov = DMatrix::from_element(n, n, T::zero());
    if idx.is_empty() {
        return (cov, identified);
    }
    let scale: Vec<T> = idx.iter().map(|&i| fisher[(i, i)].sqrt()).collect();
    let m = idx.len();
    let s = DMatrix::from_fn(m, m, |r, c| fisher[(idx[r], idx[c])] / (scale[r] * scale[c]));
    let eig = s.symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().fold(T::zero(), |a, &b| a.max(b));
    let mut inv = DMatrix::from_element(m, m, T::zero());
    for k in 0..m {
        let ev = eig.eigenvalues[k];
        if ev > T::lit(1e-12) * max_ev {
            let v = eig.eigenvectors.column(k);
            inv += v * v.transpose() / ev;
        }
    }
    for r in 0..m {
        for c in 0..m {
            cov[(idx[r], idx[c])] = inv[(r, c)] / (scale[r] * scale[c]);
        }
    }
    (cov, identified)
}
