//! Mono-exponential `(T2, M0)` least-squares fit.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::schedule::EchoSignal;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarFitResult {
    pub t2_ms: f64,
    pub m0: f64,
    /// Coefficient of determination of the fitted curve; NaN for a flat signal.
    pub r2: f64,
    pub iterations: usize,
}

const MAX_ITER: usize = 100;
const STEP_TOL: f64 = 1e-10;

fn cost(te: &[f64], s: &[f64], m0: f64, t2: f64) -> f64 {
    te.iter()
        .zip(s)
        .map(|(&t, &y)| (m0 * (-t / t2).exp() - y).powi(2))
        .sum()
}

/// Starting point: log-linear regression when every echo is positive,
/// otherwise the decay between the first two echoes.
pub fn initial_guess(signal: &EchoSignal) -> Result<(f64, f64)> {
    let (te, s) = (&signal.echo_times, &signal.amplitudes);
    if s.len() < 2 {
        return Err(param("a mono-exponential fit needs at least 2 echoes"));
    }
    if s.iter().all(|&v| v > 0.0) {
        let n = s.len() as f64;
        let ly: Vec<f64> = s.iter().map(|v| v.ln()).collect();
        let tm = te.iter().sum::<f64>() / n;
        let lm = ly.iter().sum::<f64>() / n;
        let sxy: f64 = te.iter().zip(&ly).map(|(t, l)| (t - tm) * (l - lm)).sum();
        let sxx: f64 = te.iter().map(|t| (t - tm).powi(2)).sum();
        let slope = sxy / sxx;
        if slope < 0.0 {
            let t2 = -1.0 / slope;
            return Ok(((lm - slope * tm).exp(), t2));
        }
    }
    let (t0, t1) = (te[0], te[1]);
    let (s0, s1) = (s[0], s[1]);
    let t2 = if s0 > 0.0 && s1 > 0.0 && s1 < s0 {
        (t1 - t0) / (s0 / s1).ln()
    } else {
        te[te.len() - 1]
    };
    let m0 = if s0 > 0.0 {
        s0 * (t0 / t2).exp()
    } else {
        s.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE)
    };
    Ok((m0, t2))
}

fn r_squared(te: &[f64], s: &[f64], m0: f64, t2: f64) -> f64 {
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    let tot: f64 = s.iter().map(|v| (v - mean).powi(2)).sum();
    if tot == 0.0 {
        return f64::NAN;
    }
    1.0 - cost(te, s, m0, t2) / tot
}

/// Least-squares fit of `M0 · exp(−TE / T2)`.
///
/// Levenberg–Marquardt from [`initial_guess`]; stops when the relative step
/// falls below 1e-10 or after 100 iterations.
pub fn fit_monoexponential(signal: &EchoSignal) -> Result<ScalarFitResult> {
    let (te, s) = (&signal.echo_times, &signal.amplitudes);
    let (mut m0, mut t2) = initial_guess(signal)?;
    let mut c = cost(te, s, m0, t2);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        // Gauss–Newton normal equations for (m0, t2)
        let (mut a11, mut a12, mut a22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&t, &y) in te.iter().zip(s) {
            let e = (-t / t2).exp();
            let r = m0 * e - y;
            let j1 = e;
            let j2 = m0 * e * t / (t2 * t2);
            a11 += j1 * j1;
            a12 += j1 * j2;
            a22 += j2 * j2;
            g1 += j1 * r;
            g2 += j2 * r;
        }
        let mut accepted = false;
        let mut small = false;
        while lambda < 1e16 {
            let b11 = a11 * (1.0 + lambda);
            let b22 = a22 * (1.0 + lambda);
            let det = b11 * b22 - a12 * a12;
            let d1 = -(b22 * g1 - a12 * g2) / det;
            let d2 = -(b11 * g2 - a12 * g1) / det;
            let (nm, nt) = (m0 + d1, t2 + d2);
            let rel = ((d1 / m0).powi(2) + (d2 / t2).powi(2)).sqrt();
            if nt > 0.0 && nm.is_finite() && nt.is_finite() {
                let nc = cost(te, s, nm, nt);
                if nc <= c {
                    m0 = nm;
                    t2 = nt;
                    c = nc;
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    small = rel < STEP_TOL;
                    break;
                }
            }
            if rel < STEP_TOL {
                // Even the smallest useful step cannot lower the cost.
                small = true;
                break;
            }
            lambda *= 10.0;
        }
        if small || !accepted {
            break;
        }
    }
    if !(t2.is_finite() && m0.is_finite() && t2 > 0.0 && m0 > 0.0) {
        return Err(Error::NonConvergence {
            iterations,
            best: vec![t2, m0],
        });
    }
    Ok(ScalarFitResult {
        t2_ms: t2,
        m0,
        r2: r_squared(te, s, m0, t2),
        iterations,
    })
}
