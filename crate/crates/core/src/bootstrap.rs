//! Inference-time echo-subset resampling and ensemble averaging.
//!
//! Each bootstrap member sees the first echo plus `m − 1` echoes drawn without
//! replacement from the rest of the train. Member `b` always draws from stream
//! `b` of the configured seed, so serial and parallel runs sample the same
//! subsets.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::distribution::{w1_unchecked, T2Distribution};
use crate::error::{param, Error, Result};
use crate::mlp::MlpModel;
use crate::rng::{derive_labeled, stream_rng, Rng};
use crate::scalar::fit_monoexponential;
use crate::schedule::EchoSignal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub b_iterations: usize,
    pub subset_size: usize,
    pub seed: u64,
    pub include_first_echo: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            b_iterations: 200,
            subset_size: 14,
            seed: 0,
            include_first_echo: true,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self, n_total: usize) -> Result<()> {
        if self.b_iterations == 0 {
            return Err(param("b_iterations must be >= 1"));
        }
        if self.subset_size < 2 || self.subset_size > n_total {
            return Err(param(format!(
                "subset size {} outside 2..={n_total}",
                self.subset_size
            )));
        }
        if !self.include_first_echo {
            return Err(param("subsets always include the first echo"));
        }
        Ok(())
    }

    /// Same settings with a different seed.
    pub fn reseeded(&self, seed: u64) -> Self {
        BootstrapConfig {
            seed,
            ..self.clone()
        }
    }
}

/// Sorted echo indices: 0 plus `m − 1` distinct draws from `1..n_total`.
pub fn sample_subset(n_total: usize, m: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if m < 2 || m > n_total {
        return Err(param(format!("subset size {m} outside 2..={n_total}")));
    }
    let mut idx: Vec<usize> = rand::seq::index::sample(rng, n_total - 1, m - 1)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    idx.push(0);
    idx.sort_unstable();
    Ok(idx)
}

/// Subset used by member `b`.
pub fn member_subset(config: &BootstrapConfig, n_total: usize, b: usize) -> Result<Vec<usize>> {
    let mut rng = stream_rng(derive_labeled(config.seed, "bootstrap"), b as u64);
    sample_subset(n_total, config.subset_size, &mut rng)
}

/// Neumaier-compensated weighted sum of rows.
fn compensated_mean(rows: &[(f64, Vec<f64>)]) -> Vec<f64> {
    let n = rows[0].1.len();
    let mut sum = vec![0.0; n];
    let mut comp = vec![0.0; n];
    for (w, r) in rows {
        for j in 0..n {
            let x = w * r[j];
            let t = sum[j] + x;
            if sum[j].abs() >= x.abs() {
                comp[j] += (sum[j] - t) + x;
            } else {
                comp[j] += (x - t) + sum[j];
            }
            sum[j] = t;
        }
    }
    sum.iter().zip(&comp).map(|(s, c)| s + c).collect()
}

/// Ensemble output with the spread of its members.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutput {
    pub distribution: T2Distribution,
    /// Every member's prediction, in member order.
    pub members: Vec<T2Distribution>,
    /// Standard deviation over members of W1(member, ensemble mean), in ms.
    pub member_spread: f64,
}

/// Average member predictions. Identical members are pooled first, so an
/// ensemble whose members all agree returns that prediction bit for bit.
fn aggregate(members: Vec<T2Distribution>) -> Result<EnsembleOutput> {
    let total = members.len() as f64;
    let mut groups: Vec<(usize, usize)> = Vec::new(); // (first index, count)
    for (i, m) in members.iter().enumerate() {
        match groups.iter_mut().find(|(j, _)| members[*j].weights() == m.weights()) {
            Some(g) => g.1 += 1,
            None => groups.push((i, 1)),
        }
    }
    let rows: Vec<(f64, Vec<f64>)> = groups
        .iter()
        .map(|&(i, c)| (c as f64 / total, members[i].weights().to_vec()))
        .collect();
    let grid = members[0].grid().clone();
    // A second normalization could move the last bit of an already normalized member.
    let distribution = match groups.as_slice() {
        [(i, _)] => members[*i].clone(),
        _ => T2Distribution::from_unnormalized(&grid, compensated_mean(&rows))?,
    };
    let d: Vec<f64> = members
        .iter()
        .map(|m| w1_unchecked(m.weights(), distribution.weights(), grid.values()))
        .collect();
    let mean = d.iter().sum::<f64>() / total;
    let member_spread = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / total).sqrt();
    Ok(EnsembleOutput {
        distribution,
        members,
        member_spread,
    })
}

/// Bootstrap ensemble prediction with per-member detail.
pub fn bootstrap_infer_detailed(
    signal: &EchoSignal,
    model: &MlpModel,
    config: &BootstrapConfig,
) -> Result<EnsembleOutput> {
    let n = signal.len();
    config.validate(n)?;
    if model.input_echoes() != config.subset_size {
        return Err(Error::Contract(format!(
            "model takes {} echoes but subsets have {}",
            model.input_echoes(),
            config.subset_size
        )));
    }
    let mut x = Array2::zeros((config.b_iterations, model.input_len()));
    for b in 0..config.b_iterations {
        let idx = member_subset(config, n, b)?;
        let row = model.input_row(&signal.subset(&idx))?;
        x.row_mut(b).assign(&ndarray::ArrayView1::from(&row));
    }
    let p = model.forward_batch(&x.view())?;
    let members = p
        .rows()
        .into_iter()
        .map(|r| T2Distribution::from_unnormalized(model.grid(), r.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    aggregate(members)
}

/// Mean of `B` subset predictions from a model trained for subsets of size `m`.
pub fn bootstrap_infer(signal: &EchoSignal, model: &MlpModel, config: &BootstrapConfig) -> Result<T2Distribution> {
    Ok(bootstrap_infer_detailed(signal, model, config)?.distribution)
}

/// Mean prediction of independently trained models on the full signal.
pub fn deep_ensemble_infer(signal: &EchoSignal, models: &[MlpModel]) -> Result<T2Distribution> {
    Ok(deep_ensemble_detailed(signal, models)?.distribution)
}

pub fn deep_ensemble_detailed(signal: &EchoSignal, models: &[MlpModel]) -> Result<EnsembleOutput> {
    let first = models.first().ok_or_else(|| param("empty ensemble"))?;
    for m in models {
        if m.variant() != first.variant() || m.input_echoes() != first.input_echoes() || m.grid() != first.grid() {
            return Err(Error::Contract("ensemble members differ in variant, input length or grid".into()));
        }
    }
    let members = models.iter().map(|m| m.predict(signal)).collect::<Result<Vec<_>>>()?;
    aggregate(members)
}

/// Averaged mono-exponential fit over echo subsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapScalarFit {
    pub t2_ms: f64,
    pub m0: f64,
    /// Standard deviation of the member T2 estimates.
    pub t2_member_std: f64,
    pub converged: usize,
    pub members: usize,
}

/// Fit every member subset and average T2 and M0 over the members that converged.
pub fn bootstrap_scalar_fit(signal: &EchoSignal, config: &BootstrapConfig) -> Result<BootstrapScalarFit> {
    let n = signal.len();
    config.validate(n)?;
    let mut t2 = Vec::with_capacity(config.b_iterations);
    let mut m0 = Vec::with_capacity(config.b_iterations);
    for b in 0..config.b_iterations {
        let idx = member_subset(config, n, b)?;
        if let Ok(f) = fit_monoexponential(&signal.subset(&idx)) {
            t2.push(f.t2_ms);
            m0.push(f.m0);
        }
    }
    if t2.is_empty() {
        return Err(Error::AggregateFailure(config.b_iterations));
    }
    let k = t2.len() as f64;
    let mean_t2 = t2.iter().sum::<f64>() / k;
    let sd = (t2.iter().map(|v| (v - mean_t2).powi(2)).sum::<f64>() / (k - 1.0).max(1.0)).sqrt();
    Ok(BootstrapScalarFit {
        t2_ms: mean_t2,
        m0: m0.iter().sum::<f64>() / k,
        t2_member_std: sd,
        converged: t2.len(),
        members: config.b_iterations,
    })
}
