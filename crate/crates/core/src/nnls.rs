//! Tikhonov-regularized non-negative least squares.
//!
//! `min_{x ≥ 0} ‖A x − y‖² + λ ‖L x‖²` is solved as a plain NNLS problem on the
//! stacked system `[A; √λ L] x ≈ [y; 0]` with the Lawson–Hanson active-set
//! method.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::distribution::T2Distribution;
use crate::error::{dim, param, Error, Result};
use crate::kernel::DecayKernel;
use crate::linalg::lstsq_columns;
use crate::schedule::EchoSignal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RegOperator {
    #[default]
    Identity,
    SecondDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NnlsConfig {
    pub lambda: f64,
    pub reg_operator: RegOperator,
    /// Cap on active-set changes (additions plus removals).
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for NnlsConfig {
    fn default() -> Self {
        NnlsConfig {
            lambda: 0.05,
            reg_operator: RegOperator::Identity,
            max_iter: 1000,
            tol: 1e-8,
        }
    }
}

impl NnlsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(param(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.tol > 0.0) {
            return Err(param(format!("tol must be > 0, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Result of [`nnls_solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct NnlsFit {
    pub distribution: T2Distribution,
    /// `Σ x`, in the units of the input signal.
    pub m0: f64,
    /// Raw coefficients `x`, in the units of the input signal.
    pub coefficients: Vec<f64>,
    /// `‖K x − y‖`.
    pub residual_norm: f64,
    pub iterations: usize,
    /// KKT violation of the unit-scaled stacked problem; see [`kkt_violation`].
    pub kkt: f64,
}

/// Plain NNLS `min_{x ≥ 0} ‖A x − y‖²` (Lawson–Hanson).
///
/// Returns the solution and the number of active-set changes.
pub fn nnls(a: &Array2<f64>, y: &[f64], max_iter: usize, tol: f64) -> Result<(Vec<f64>, usize)> {
    if a.nrows() != y.len() {
        return Err(dim(format!("matrix has {} rows, data {}", a.nrows(), y.len())));
    }
    let cols: Vec<Vec<f64>> = a.columns().into_iter().map(|c| c.to_vec()).collect();
    lawson_hanson(&cols, y, max_iter, tol)
}

fn gradient_w(cols: &[Vec<f64>], y: &[f64], x: &[f64]) -> Vec<f64> {
    let mut r = y.to_vec();
    for (c, &xj) in cols.iter().zip(x) {
        if xj != 0.0 {
            for (ri, ci) in r.iter_mut().zip(c) {
                *ri -= ci * xj;
            }
        }
    }
    cols.iter()
        .map(|c| c.iter().zip(&r).map(|(a, b)| a * b).sum())
        .collect()
}

fn lawson_hanson(cols: &[Vec<f64>], y: &[f64], max_iter: usize, tol: f64) -> Result<(Vec<f64>, usize)> {
    let n = cols.len();
    let mut x = vec![0.0; n];
    let mut passive = vec![false; n];
    // Columns that could not join the passive set since x last changed.
    let mut blocked = vec![false; n];
    let mut iterations = 0usize;
    let solve_on = |passive: &[bool]| -> Option<Vec<f64>> {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let sub: Vec<Vec<f64>> = idx.iter().map(|&j| cols[j].clone()).collect();
        let zp = lstsq_columns(&sub, y)?;
        let mut z = vec![0.0; n];
        for (&j, v) in idx.iter().zip(zp) {
            z[j] = v;
        }
        Some(z)
    };
    loop {
        let w = gradient_w(cols, y, &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && !blocked[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(t) = candidate else {
            return Ok((x, iterations));
        };
        if iterations >= max_iter {
            return Err(Error::NonConvergence {
                iterations,
                best: x,
            });
        }
        iterations += 1;
        passive[t] = true;
        let Some(mut z) = solve_on(&passive) else {
            passive[t] = false;
            blocked[t] = true;
            continue;
        };
        if z[t] <= 0.0 {
            // Numerically the new column cannot help; skip it until x moves.
            passive[t] = false;
            blocked[t] = true;
            continue;
        }
        loop {
            if (0..n).all(|j| !passive[j] || z[j] > 0.0) {
                break;
            }
            if iterations >= max_iter {
                return Err(Error::NonConvergence {
                    iterations,
                    best: x,
                });
            }
            iterations += 1;
            let mut alpha = f64::INFINITY;
            for j in 0..n {
                if passive[j] && z[j] <= 0.0 {
                    alpha = alpha.min(x[j] / (x[j] - z[j]));
                }
            }
            for j in 0..n {
                x[j] += alpha * (z[j] - x[j]);
            }
            for j in 0..n {
                if passive[j] && x[j] <= tol * 1e-6 {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
            z = match solve_on(&passive) {
                Some(z) => z,
                None => {
                    return Err(Error::NonConvergence {
                        iterations,
                        best: x,
                    })
                }
            };
        }
        x = z;
        blocked.iter_mut().for_each(|b| *b = false);
    }
}

/// Largest KKT violation of `x` for `min_{x ≥ 0} ½‖A x − y‖²`.
///
/// With `g = Aᵀ(A x − y)`: on the zero set the violation is `max(−g, 0)`,
/// on the support it is `|g|`.
pub fn kkt_violation(a: &Array2<f64>, y: &[f64], x: &[f64]) -> f64 {
    let cols: Vec<Vec<f64>> = a.columns().into_iter().map(|c| c.to_vec()).collect();
    let w = gradient_w(&cols, y, x);
    x.iter()
        .zip(&w)
        .map(|(&xj, &wj)| if xj > 0.0 { wj.abs() } else { wj.max(0.0) })
        .fold(0.0, f64::max)
}

fn reg_rows(op: RegOperator, n: usize) -> Vec<Vec<f64>> {
    match op {
        RegOperator::Identity => (0..n)
            .map(|i| {
                let mut r = vec![0.0; n];
                r[i] = 1.0;
                r
            })
            .collect(),
        RegOperator::SecondDifference => (0..n.saturating_sub(2))
            .map(|i| {
                let mut r = vec![0.0; n];
                r[i] = 1.0;
                r[i + 1] = -2.0;
                r[i + 2] = 1.0;
                r
            })
            .collect(),
    }
}

/// Stacked system `[K; √λ L]` and `[y; 0]` for the unit-scaled data.
pub fn augmented_system(kernel: &DecayKernel, y: &[f64], config: &NnlsConfig) -> (Array2<f64>, Vec<f64>) {
    let k = kernel.matrix();
    let (m, n) = k.dim();
    let reg = if config.lambda > 0.0 {
        reg_rows(config.reg_operator, n)
    } else {
        Vec::new()
    };
    let s = config.lambda.sqrt();
    let mut a = Array2::zeros((m + reg.len(), n));
    a.slice_mut(ndarray::s![..m, ..]).assign(k);
    for (i, r) in reg.iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            a[(m + i, j)] = s * v;
        }
    }
    let mut b = y.to_vec();
    b.resize(m + reg.len(), 0.0);
    (a, b)
}

/// Scale that brings the signal to a unit first echo.
fn unit_scale(y: &[f64]) -> f64 {
    if y[0] > 0.0 {
        y[0]
    } else {
        y.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Regularized NNLS inversion of one decay curve.
///
/// The problem is solved on the signal divided by its first echo, so λ means
/// the same thing for every voxel; coefficients and `m0` are scaled back.
pub fn nnls_solve(signal: &EchoSignal, kernel: &DecayKernel, config: &NnlsConfig) -> Result<NnlsFit> {
    config.validate()?;
    if signal.len() != kernel.n_echoes() {
        return Err(dim(format!(
            "signal has {} echoes, kernel {}",
            signal.len(),
            kernel.n_echoes()
        )));
    }
    let te = &kernel.schedule().echo_times;
    if te.iter().zip(&signal.echo_times).any(|(a, b)| (a - b).abs() > 1e-9 * a.abs()) {
        return Err(dim("signal echo times differ from kernel schedule"));
    }
    let scale = unit_scale(&signal.amplitudes);
    if !(scale > 0.0) {
        return Err(Error::EmptySolution);
    }
    let y: Vec<f64> = signal.amplitudes.iter().map(|v| v / scale).collect();
    let (a, b) = augmented_system(kernel, &y, config);
    let (x, iterations) = match nnls(&a, &b, config.max_iter, config.tol) {
        Ok(r) => r,
        Err(Error::NonConvergence { iterations, best }) => {
            return Err(Error::NonConvergence {
                iterations,
                best: best.into_iter().map(|v| v * scale).collect(),
            })
        }
        Err(e) => return Err(e),
    };
    let total: f64 = x.iter().sum();
    if !(total > 0.0) {
        return Err(Error::EmptySolution);
    }
    let kkt = kkt_violation(&a, &b, &x);
    let fit = kernel.apply(&x);
    let residual_norm = fit
        .iter()
        .zip(&y)
        .map(|(f, v)| (f - v).powi(2))
        .sum::<f64>()
        .sqrt()
        * scale;
    let distribution = T2Distribution::from_unnormalized(kernel.grid(), x.clone())?;
    Ok(NnlsFit {
        distribution,
        m0: total * scale,
        coefficients: x.into_iter().map(|v| v * scale).collect(),
        residual_norm,
        iterations,
        kkt,
    })
}

/// Discrepancy-style choice of λ.
///
/// Returns the largest candidate whose data residual stays within 2% of the
/// unregularized residual, or the smallest candidate if none does.
pub fn choose_lambda(
    signal: &EchoSignal,
    kernel: &DecayKernel,
    candidates: &[f64],
    base: &NnlsConfig,
) -> Result<f64> {
    if candidates.is_empty() {
        return Err(param("no lambda candidates"));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let at = |lambda: f64| -> Result<f64> {
        let cfg = NnlsConfig {
            lambda,
            ..base.clone()
        };
        Ok(nnls_solve(signal, kernel, &cfg)?.residual_norm)
    };
    let r0 = at(0.0)?;
    let mut best = sorted[0];
    for &l in &sorted {
        if at(l)? <= 1.02 * r0 {
            best = l;
        }
    }
    Ok(best)
}
