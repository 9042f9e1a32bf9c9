//! T2 distributions and the metrics computed on them.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{dim, param, Error, Result};
use crate::grid::T2Grid;
use crate::io::{ensure_parent, fmt17, parse_f64};
use crate::kernel::{forward_signal, DecayKernel};
use crate::linalg::solve_square;
use crate::schedule::EchoSignal;

const NORM_TOL: f64 = 1e-9;

/// A normalized, non-negative probability vector over a [`T2Grid`].
#[derive(Debug, Clone)]
pub struct T2Distribution {
    weights: Vec<f64>,
    grid: Arc<T2Grid>,
}

impl PartialEq for T2Distribution {
    fn eq(&self, other: &Self) -> bool {
        self.is_on(&other.grid) && self.weights == other.weights
    }
}

impl T2Distribution {
    /// Wrap already-normalized weights.
    pub fn new(grid: &Arc<T2Grid>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(dim(format!(
                "{} weights for a {}-point grid",
                weights.len(),
                grid.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Contract("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(Error::Contract(format!("weights sum to {total}, not 1")));
        }
        Ok(T2Distribution {
            weights,
            grid: Arc::clone(grid),
        })
    }

    /// Normalize raw non-negative mass into a distribution.
    pub fn from_unnormalized(grid: &Arc<T2Grid>, mut weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Contract("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Contract("cannot normalize zero mass".into()));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        T2Distribution::new(grid, weights)
    }

    /// All mass at grid index `j`.
    pub fn dirac(grid: &Arc<T2Grid>, j: usize) -> Self {
        let mut w = vec![0.0; grid.len()];
        w[j] = 1.0;
        T2Distribution {
            weights: w,
            grid: Arc::clone(grid),
        }
    }

    pub fn uniform(grid: &Arc<T2Grid>) -> Self {
        let n = grid.len();
        T2Distribution {
            weights: vec![1.0 / n as f64; n],
            grid: Arc::clone(grid),
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn grid(&self) -> &Arc<T2Grid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// True when `grid` is (or equals) the grid this distribution lives on.
    pub fn is_on(&self, grid: &Arc<T2Grid>) -> bool {
        Arc::ptr_eq(&self.grid, grid) || *self.grid == **grid
    }

    pub fn cdf(&self) -> Vec<f64> {
        self.weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect()
    }

    /// Index of the largest weight (first one on ties).
    pub fn mode_index(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = i;
            }
        }
        best
    }

    /// Mass-weighted mean T2 in ms.
    pub fn mean_t2(&self) -> f64 {
        self.weights
            .iter()
            .zip(self.grid.values())
            .map(|(w, t)| w * t)
            .sum()
    }

    pub fn to_json(&self) -> DistributionJson {
        DistributionJson {
            grid_id: self.grid.id(),
            weights: self.weights.clone(),
        }
    }

    pub fn from_json(grid: &Arc<T2Grid>, json: &DistributionJson) -> Result<Self> {
        if json.grid_id != grid.id() {
            return Err(dim(format!(
                "distribution on grid `{}`, expected `{}`",
                json.grid_id,
                grid.id()
            )));
        }
        T2Distribution::new(grid, json.weights.clone())
    }
}

/// Serialized form of a distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionJson {
    pub grid_id: String,
    pub weights: Vec<f64>,
}

fn check_pair(p: &T2Distribution, q: &T2Distribution) -> Result<()> {
    if !p.is_on(&q.grid) {
        return Err(dim("distributions live on different grids"));
    }
    for d in [p, q] {
        let total: f64 = d.weights.iter().sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(Error::Contract(format!("distribution sums to {total}")));
        }
    }
    Ok(())
}

/// Wasserstein-1 distance in ms, integrating |CDF_p − CDF_q| over the linear T2 axis.
pub fn wasserstein1(p: &T2Distribution, q: &T2Distribution) -> Result<f64> {
    check_pair(p, q)?;
    Ok(w1_unchecked(p.weights(), q.weights(), p.grid.values()))
}

pub(crate) fn w1_unchecked(p: &[f64], q: &[f64], t2: &[f64]) -> f64 {
    let mut cp = 0.0;
    let mut cq = 0.0;
    let mut total = 0.0;
    for j in 0..t2.len() - 1 {
        cp += p[j];
        cq += q[j];
        total += (cp - cq).abs() * (t2[j + 1] - t2[j]);
    }
    total
}

/// Elementwise mean of distributions on a common grid, renormalized.
pub fn mean_distribution(ps: &[T2Distribution]) -> Result<T2Distribution> {
    let first = ps
        .first()
        .ok_or_else(|| param("cannot average an empty list of distributions"))?;
    let n = first.len();
    let mut acc = vec![0.0; n];
    for p in ps {
        if !p.is_on(&first.grid) {
            return Err(dim("distributions live on different grids"));
        }
        for (a, w) in acc.iter_mut().zip(&p.weights) {
            *a += w;
        }
    }
    let k = ps.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    T2Distribution::from_unnormalized(&first.grid, acc)
}

/// Two-component Gaussian summary of a distribution, reported in ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPair {
    pub short_mean: f64,
    pub short_std: f64,
    pub short_weight: f64,
    pub long_mean: f64,
    pub long_std: f64,
    pub long_weight: f64,
    pub residual_l2: f64,
}

/// One Gaussian on the log10(T2) axis.
#[derive(Debug, Clone, Copy)]
struct LogGauss {
    weight: f64,
    center: f64,
    width: f64,
}

impl LogGauss {
    /// Mean in ms and the delta-method std in ms.
    fn to_ms(self) -> (f64, f64) {
        let mean = 10f64.powf(self.center);
        (mean, mean * std::f64::consts::LN_10 * self.width)
    }
}

fn log_axis(grid: &T2Grid) -> (Vec<f64>, Vec<f64>) {
    let x: Vec<f64> = grid.values().iter().map(|t| t.log10()).collect();
    let edges = grid.cell_edges();
    let dx: Vec<f64> = edges.windows(2).map(|e| e[1].log10() - e[0].log10()).collect();
    (x, dx)
}

fn moments(x: &[f64], w: &[f64], floor: f64) -> LogGauss {
    let mass: f64 = w.iter().sum();
    let mean = x.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / mass;
    let var = x.iter().zip(w).map(|(x, w)| w * (x - mean).powi(2)).sum::<f64>() / mass;
    LogGauss {
        weight: mass,
        center: mean,
        width: var.sqrt().max(floor),
    }
}

/// Fit `w_s·N(μ_s,σ_s) + w_l·N(μ_l,σ_l)` to `p` on the log10(T2) axis.
///
/// Components are seeded at the largest peak below and at/above `split_ms`
/// and refined with damped Gauss–Newton. Means and stds are reported in ms
/// (std via `mean · ln 10 · σ_log10`); weights are component masses.
pub fn decompose_two_gaussians(p: &T2Distribution, split_ms: f64) -> Result<GaussianPair> {
    let grid = p.grid();
    let (lo, hi) = grid.bounds();
    if !(split_ms > lo && split_ms < hi) {
        return Err(param(format!("split {split_ms} ms outside grid bounds")));
    }
    let (x, dx) = log_axis(grid);
    let w = p.weights();
    let floor = 0.25 * dx.iter().cloned().fold(f64::INFINITY, f64::min);
    let below: Vec<usize> = (0..w.len()).filter(|&j| grid.values()[j] < split_ms).collect();
    let above: Vec<usize> = (0..w.len()).filter(|&j| grid.values()[j] >= split_ms).collect();
    let side_mass = |idx: &[usize]| idx.iter().map(|&j| w[j]).sum::<f64>();
    if side_mass(&below) <= 1e-12 || side_mass(&above) <= 1e-12 {
        let single = moments(&x, w, floor);
        let (m, s) = single.to_ms();
        return Err(Error::DegenerateDecomposition {
            reason: format!("no mass on one side of {split_ms} ms"),
            single: (m, s, single.weight),
        });
    }

    let seed = |idx: &[usize]| {
        let peak = *idx
            .iter()
            .max_by(|&&a, &&b| w[a].total_cmp(&w[b]))
            .expect("non-empty side");
        let xs: Vec<f64> = idx.iter().map(|&j| x[j]).collect();
        let ws: Vec<f64> = idx.iter().map(|&j| w[j]).collect();
        let m = moments(&xs, &ws, floor);
        LogGauss {
            weight: m.weight,
            center: x[peak],
            width: m.width,
        }
    };
    let mut comps = [seed(&below), seed(&above)];
    let residual_l2 = refine(&mut comps, &x, &dx, w, floor);

    comps.sort_by(|a, b| a.center.total_cmp(&b.center));
    let (sm, ss) = comps[0].to_ms();
    let (lm, ls) = comps[1].to_ms();
    let mut sw = comps[0].weight.max(0.0);
    let mut lw = comps[1].weight.max(0.0);
    if sw + lw > 1.0 {
        let t = sw + lw;
        sw /= t;
        lw /= t;
    }
    Ok(GaussianPair {
        short_mean: sm,
        short_std: ss,
        short_weight: sw,
        long_mean: lm,
        long_std: ls,
        long_weight: lw,
        residual_l2,
    })
}

fn gauss(x: f64, c: &LogGauss) -> f64 {
    let z = (x - c.center) / c.width;
    (-0.5 * z * z).exp() / (c.width * (2.0 * std::f64::consts::PI).sqrt())
}

fn residuals(comps: &[LogGauss; 2], x: &[f64], dx: &[f64], target: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(dx)
        .zip(target)
        .map(|((&xj, &d), &t)| comps.iter().map(|c| c.weight * gauss(xj, c) * d).sum::<f64>() - t)
        .collect()
}

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|r| r * r).sum()
}

/// Levenberg-damped Gauss–Newton on (weight, center, ln width) per component.
fn refine(comps: &mut [LogGauss; 2], x: &[f64], dx: &[f64], target: &[f64], floor: f64) -> f64 {
    let mut r = residuals(comps, x, dx, target);
    let mut cost = sq(&r);
    let mut damping = 1e-3;
    for _ in 0..200 {
        if cost == 0.0 {
            break;
        }
        // Jacobian rows: d r_j / d (w, c, ln s) for both components
        let jac: Vec<[f64; 6]> = x
            .iter()
            .zip(dx)
            .map(|(&xj, &d)| {
                let mut row = [0.0; 6];
                for (k, c) in comps.iter().enumerate() {
                    let g = gauss(xj, c) * d;
                    let z = (xj - c.center) / c.width;
                    row[3 * k] = g;
                    row[3 * k + 1] = c.weight * g * z / c.width;
                    row[3 * k + 2] = c.weight * g * (z * z - 1.0);
                }
                row
            })
            .collect();
        let mut jtj = vec![vec![0.0; 6]; 6];
        let mut jtr = vec![0.0; 6];
        for (row, &rj) in jac.iter().zip(&r) {
            for a in 0..6 {
                jtr[a] += row[a] * rj;
                for b in 0..6 {
                    jtj[a][b] += row[a] * row[b];
                }
            }
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut lhs = jtj.clone();
            for (a, row) in lhs.iter_mut().enumerate() {
                row[a] += damping * jtj[a][a].max(1e-30);
            }
            let Some(step) = solve_square(lhs, jtr.iter().map(|v| -v).collect()) else {
                damping *= 10.0;
                continue;
            };
            let mut trial = *comps;
            for (k, c) in trial.iter_mut().enumerate() {
                c.weight = (c.weight + step[3 * k]).max(0.0);
                c.center += step[3 * k + 1];
                c.width = (c.width.ln() + step[3 * k + 2]).exp().max(floor * 1e-3);
            }
            let tr = residuals(&trial, x, dx, target);
            let tc = sq(&tr);
            if tc < cost {
                let rel = (cost - tc) / cost;
                *comps = trial;
                r = tr;
                cost = tc;
                damping = (damping * 0.3).max(1e-12);
                improved = true;
                if rel < 1e-8 {
                    return cost.sqrt();
                }
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            break;
        }
    }
    cost.sqrt()
}

/// Coefficient of determination of `m0 · K p` against the measured signal.
pub fn fit_quality_r2(
    signal: &EchoSignal,
    kernel: &DecayKernel,
    p: &T2Distribution,
    m0: f64,
) -> Result<f64> {
    if signal.echo_times != kernel.schedule().echo_times {
        return Err(dim("signal echo times differ from the kernel schedule"));
    }
    let pred = forward_signal(kernel, p, m0)?;
    let n = signal.len() as f64;
    let mean = signal.amplitudes.iter().sum::<f64>() / n;
    let ss_tot: f64 = signal.amplitudes.iter().map(|s| (s - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedR2);
    }
    let ss_res: f64 = signal
        .amplitudes
        .iter()
        .zip(&pred.amplitudes)
        .map(|(s, f)| (s - f).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Write distributions as CSV rows `voxel_id, w_0, …, w_{N-1}`.
pub fn write_distributions_csv(
    path: &Path,
    rows: &[(String, T2Distribution)],
    n_t2: usize,
) -> Result<()> {
    ensure_parent(path)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = vec!["voxel_id".to_string()];
    header.extend((0..n_t2).map(|j| format!("w_{j}")));
    writeln!(w, "{}", header.join(","))?;
    for (id, p) in rows {
        let mut line = vec![id.clone()];
        line.extend(p.weights().iter().map(|&v| fmt17(v)));
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Read a CSV written by [`write_distributions_csv`].
pub fn read_distributions_csv(
    path: &Path,
    grid: &Arc<T2Grid>,
) -> Result<Vec<(String, T2Distribution)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or_default().to_string();
        let weights = rec
            .iter()
            .skip(1)
            .map(|f| parse_f64(f, path, i))
            .collect::<Result<Vec<_>>>()?;
        out.push((id, T2Distribution::new(grid, weights)?));
    }
    Ok(out)
}
