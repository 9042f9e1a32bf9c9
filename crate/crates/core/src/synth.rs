//! Synthetic ground truth, forward simulation and noise.
//!
//! A truth is a Dirichlet-weighted mixture of Gaussian components in T2 (ms),
//! rendered onto the grid. Samples are drawn from independent per-sample
//! streams, so a dataset is identical however it is scheduled.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::T2Distribution;
use crate::error::{param, Error, Result};
use crate::grid::T2Grid;
use crate::io::{ensure_parent, fmt17, pair_stem, parse_f64, sha256_file, with_suffix};
use crate::kernel::{build_kernel, forward_signal};
use crate::rng::{derive_labeled, stream_rng, Rng};
use crate::schedule::{schedule_preset, AcquisitionSchedule, EchoSignal};

/// One tissue class: ranges for the mean and width of its T2 peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub label: String,
    pub t2_mean_range: (f64, f64),
    pub t2_std_range: (f64, f64),
}

impl ComponentSpec {
    pub fn new(label: &str, mean: (f64, f64), std: (f64, f64)) -> Self {
        ComponentSpec {
            label: label.to_string(),
            t2_mean_range: mean,
            t2_std_range: std,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("mean", self.t2_mean_range), ("std", self.t2_std_range)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(param(format!(
                    "component `{}`: {name} range ({lo}, {hi}) must satisfy 0 < low <= high",
                    self.label
                )));
            }
        }
        Ok(())
    }
}

/// The six component classes used for training data (ms).
pub fn default_component_table() -> Vec<ComponentSpec> {
    vec![
        ComponentSpec::new("Myelin", (15.0, 30.0), (0.1, 5.0)),
        ComponentSpec::new("IS", (50.0, 120.0), (0.1, 12.0)),
        ComponentSpec::new("ES", (50.0, 120.0), (0.1, 12.0)),
        ComponentSpec::new("GM", (60.0, 300.0), (0.1, 12.0)),
        ComponentSpec::new("Pathology", (300.0, 1000.0), (0.1, 5.0)),
        ComponentSpec::new("CSF", (1000.0, 2000.0), (0.1, 5.0)),
    ]
}

/// A drawn Gaussian peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub label: String,
    pub weight: f64,
    pub mean_ms: f64,
    pub std_ms: f64,
}

/// Weighted sum of Gaussian peaks, before discretization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub components: Vec<GaussianComponent>,
}

/// Standard normal mass between `a` and `b` (a ≤ b), accurate in both tails.
fn normal_mass(a: f64, b: f64) -> f64 {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    if a >= 0.0 {
        0.5 * (libm::erfc(a * r) - libm::erfc(b * r))
    } else if b <= 0.0 {
        0.5 * (libm::erfc(-b * r) - libm::erfc(-a * r))
    } else {
        1.0 - 0.5 * (libm::erfc(-a * r) + libm::erfc(b * r))
    }
}

impl Mixture {
    /// Discretize onto `grid`, integrating each peak over the grid cells.
    ///
    /// Peaks can be much narrower than a cell (std down to 0.1 ms), so point
    /// sampling of the density would miss them entirely. Mass falling outside
    /// the grid is dropped before normalization; a peak entirely outside lands
    /// on the nearest grid point.
    pub fn render(&self, grid: &Arc<T2Grid>) -> Result<T2Distribution> {
        let edges = grid.cell_edges();
        let mut w = vec![0.0; grid.len()];
        for c in &self.components {
            let mut mass: Vec<f64> = edges
                .windows(2)
                .map(|e| normal_mass((e[0] - c.mean_ms) / c.std_ms, (e[1] - c.mean_ms) / c.std_ms))
                .collect();
            let total: f64 = mass.iter().sum();
            if total > 0.0 {
                mass.iter_mut().for_each(|m| *m /= total);
            } else {
                mass[grid.nearest_index(c.mean_ms)] = 1.0;
            }
            for (wj, mj) in w.iter_mut().zip(&mass) {
                *wj += c.weight * mj;
            }
        }
        T2Distribution::from_unnormalized(grid, w)
    }

    pub fn total_weight(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }
}

fn uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Draw the mixture behind a random truth; see [`sample_truth`].
pub fn sample_mixture(components: &[ComponentSpec], rng: &mut Rng, active_k: usize) -> Result<Mixture> {
    if active_k == 0 || active_k > components.len() {
        return Err(param(format!(
            "active_k = {active_k} outside 1..={}",
            components.len()
        )));
    }
    for c in components {
        c.validate()?;
    }
    let mut chosen = rand::seq::index::sample(rng, components.len(), active_k).into_vec();
    chosen.sort_unstable();
    let mut drawn: Vec<GaussianComponent> = chosen
        .iter()
        .map(|&i| {
            let spec = &components[i];
            GaussianComponent {
                label: spec.label.clone(),
                weight: 0.0,
                mean_ms: uniform(rng, spec.t2_mean_range),
                std_ms: uniform(rng, spec.t2_std_range),
            }
        })
        .collect();
    // Symmetric Dirichlet(1): normalized unit exponentials.
    let e: Vec<f64> = (0..active_k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = e.iter().sum();
    for (c, ei) in drawn.iter_mut().zip(&e) {
        c.weight = ei / total;
    }
    Ok(Mixture { components: drawn })
}

/// Random ground-truth distribution with `active_k` distinct components.
///
/// Components are picked uniformly without replacement, means and widths
/// uniformly from their ranges, weights from a flat Dirichlet.
pub fn sample_truth(
    components: &[ComponentSpec],
    rng: &mut Rng,
    grid: &Arc<T2Grid>,
    active_k: usize,
) -> Result<T2Distribution> {
    sample_mixture(components, rng, active_k)?.render(grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModel {
    #[default]
    Gaussian,
    Rician,
}

impl std::str::FromStr for NoiseModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(NoiseModel::Gaussian),
            "rician" => Ok(NoiseModel::Rician),
            _ => Err(Error::Config(format!("unknown noise model `{s}`"))),
        }
    }
}

/// Noise level for a target SNR, referenced to the first echo.
pub fn noise_sigma(signal: &EchoSignal, snr: f64) -> Result<f64> {
    if !(snr > 0.0) {
        return Err(param(format!("snr must be positive, got {snr}")));
    }
    Ok(signal.amplitudes[0] / snr)
}

/// Add noise at `snr` (σ = s₀ / snr).
pub fn add_noise(signal: &EchoSignal, snr: f64, model: NoiseModel, rng: &mut Rng) -> Result<EchoSignal> {
    let sigma = noise_sigma(signal, snr)?;
    add_noise_sigma(signal, sigma, model, rng)
}

/// Add noise with an explicit standard deviation.
pub fn add_noise_sigma(signal: &EchoSignal, sigma: f64, model: NoiseModel, rng: &mut Rng) -> Result<EchoSignal> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(param(format!("noise sigma must be finite and >= 0, got {sigma}")));
    }
    if signal.amplitudes.iter().any(|&a| a < 0.0) {
        return Err(param("signal amplitudes must be non-negative"));
    }
    let mut draw = || -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        sigma * z
    };
    let amplitudes = signal
        .amplitudes
        .iter()
        .map(|&s| match model {
            NoiseModel::Gaussian => s + draw(),
            NoiseModel::Rician => {
                let (n1, n2) = (draw(), draw());
                ((s + n1).powi(2) + n2 * n2).sqrt()
            }
        })
        .collect();
    Ok(EchoSignal {
        echo_times: signal.echo_times.clone(),
        amplitudes,
    })
}

/// Settings for [`generate_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub schedule_preset: String,
    pub count: usize,
    pub snr_range: (f64, f64),
    pub alpha_range_deg: (f64, f64),
    pub m0_range: (f64, f64),
    pub active_k_range: (usize, usize),
    pub noise_model: NoiseModel,
    pub components: Vec<ComponentSpec>,
    pub grid: T2Grid,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            schedule_preset: "retest_7p9".into(),
            count: 50_000,
            snr_range: (10.0, 80.0),
            alpha_range_deg: (120.0, 180.0),
            m0_range: (0.8, 1.2),
            active_k_range: (1, 3),
            noise_model: NoiseModel::Gaussian,
            components: default_component_table(),
            grid: T2Grid::default_log(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        schedule_preset(&self.schedule_preset)?;
        let range_ok = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi && hi.is_finite();
        if !range_ok(self.snr_range) {
            return Err(Error::Config(format!("bad snr range {:?}", self.snr_range)));
        }
        if !range_ok(self.m0_range) {
            return Err(Error::Config(format!("bad m0 range {:?}", self.m0_range)));
        }
        let (a_lo, a_hi) = self.alpha_range_deg;
        if !(range_ok(self.alpha_range_deg) && a_hi <= 180.0) {
            return Err(Error::Config(format!("bad alpha range ({a_lo}, {a_hi})")));
        }
        let (k_lo, k_hi) = self.active_k_range;
        if !(k_lo >= 1 && k_lo <= k_hi && k_hi <= self.components.len()) {
            return Err(Error::Config(format!("bad active_k range ({k_lo}, {k_hi})")));
        }
        for c in &self.components {
            c.validate()?;
        }
        self.grid.validate()
    }

    pub fn schedule(&self) -> Result<AcquisitionSchedule> {
        schedule_preset(&self.schedule_preset)
    }
}

/// Where a sample's random numbers came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPath {
    pub master_seed: u64,
    pub stream: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub sample_id: u64,
    pub truth: T2Distribution,
    pub signal_clean: EchoSignal,
    pub signal_noisy: EchoSignal,
    pub snr: f64,
    pub alpha_deg: f64,
    pub m0: f64,
    pub active_k: usize,
    pub seed_path: SeedPath,
}

/// Noiseless and noisy signal of `truth` under `schedule` at refocusing angle `alpha_deg`.
pub fn simulate_pair(
    schedule: &AcquisitionSchedule,
    truth: &T2Distribution,
    alpha_deg: f64,
    m0: f64,
    snr: f64,
    model: NoiseModel,
    rng: &mut Rng,
) -> Result<(EchoSignal, EchoSignal)> {
    let kernel = build_kernel(&schedule.with_refocus(alpha_deg)?, truth.grid())?;
    let clean = forward_signal(&kernel, truth, m0)?;
    let noisy = add_noise(&clean, snr, model, rng)?;
    Ok((clean, noisy))
}

fn generate_one(
    config: &GenerationConfig,
    schedule: &AcquisitionSchedule,
    grid: &Arc<T2Grid>,
    master_seed: u64,
    id: u64,
) -> Result<SynthSample> {
    let mut rng = stream_rng(derive_labeled(master_seed, "synthgen"), id);
    let alpha_deg = uniform(&mut rng, config.alpha_range_deg);
    let snr = uniform(&mut rng, config.snr_range);
    let m0 = uniform(&mut rng, config.m0_range);
    let (k_lo, k_hi) = config.active_k_range;
    let active_k = rng.random_range(k_lo..=k_hi);
    let truth = sample_truth(&config.components, &mut rng, grid, active_k)?;
    let (signal_clean, signal_noisy) =
        simulate_pair(schedule, &truth, alpha_deg, m0, snr, config.noise_model, &mut rng)?;
    Ok(SynthSample {
        sample_id: id,
        truth,
        signal_clean,
        signal_noisy,
        snr,
        alpha_deg,
        m0,
        active_k,
        seed_path: SeedPath {
            master_seed,
            stream: id,
        },
    })
}

/// Samples `start..start + count` of the dataset defined by `config` and `master_seed`.
pub fn generate_range(
    config: &GenerationConfig,
    master_seed: u64,
    start: u64,
    count: usize,
) -> Result<Vec<SynthSample>> {
    config.validate()?;
    let schedule = config.schedule()?;
    let grid = Arc::new(config.grid.clone());
    (start..start + count as u64)
        .into_par_iter()
        .map(|id| generate_one(config, &schedule, &grid, master_seed, id))
        .collect()
}

/// Metadata stored next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub schedule: AcquisitionSchedule,
    pub grid: T2Grid,
    pub config: GenerationConfig,
    pub master_seed: u64,
    pub count: usize,
}

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub grid: Arc<T2Grid>,
    pub samples: Vec<SynthSample>,
}

/// Generate `config.count` i.i.d. samples.
pub fn generate_dataset(config: &GenerationConfig, master_seed: u64) -> Result<Dataset> {
    let samples = generate_range(config, master_seed, 0, config.count)?;
    Ok(Dataset {
        manifest: DatasetManifest {
            format_version: DATASET_FORMAT_VERSION,
            schedule: config.schedule()?,
            grid: config.grid.clone(),
            config: config.clone(),
            master_seed,
            count: config.count,
        },
        grid: Arc::new(config.grid.clone()),
        samples,
    })
}

fn csv_header(n_t2: usize, n_echo: usize) -> Vec<String> {
    let mut h: Vec<String> = ["sample_id", "alpha_deg", "snr", "m0", "active_k"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((0..n_t2).map(|j| format!("w_{j}")));
    h.extend((0..n_echo).map(|i| format!("s_{i}")));
    h.extend((0..n_echo).map(|i| format!("clean_{i}")));
    h
}

fn write_row<W: Write>(w: &mut csv::Writer<W>, s: &SynthSample) -> Result<()> {
    let mut rec = vec![
        s.sample_id.to_string(),
        fmt17(s.alpha_deg),
        fmt17(s.snr),
        fmt17(s.m0),
        s.active_k.to_string(),
    ];
    rec.extend(s.truth.weights().iter().map(|&v| fmt17(v)));
    rec.extend(s.signal_noisy.amplitudes.iter().map(|&v| fmt17(v)));
    rec.extend(s.signal_clean.amplitudes.iter().map(|&v| fmt17(v)));
    w.write_record(&rec)?;
    Ok(())
}

/// Paths of the manifest and body for a dataset stem.
pub fn dataset_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = pair_stem(path);
    (with_suffix(&stem, ".json"), with_suffix(&stem, ".csv"))
}

fn write_manifest(manifest: &DatasetManifest, json: &Path) -> Result<()> {
    ensure_parent(json)?;
    let mut f = BufWriter::new(File::create(json)?);
    serde_json::to_writer_pretty(&mut f, manifest)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

impl Dataset {
    /// Write `<stem>.json` and `<stem>.csv`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let (json, body) = dataset_paths(path);
        write_manifest(&self.manifest, &json)?;
        let mut w = csv::Writer::from_path(&body)?;
        w.write_record(csv_header(self.grid.len(), self.manifest.schedule.n_echoes()))?;
        for s in &self.samples {
            write_row(&mut w, s)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a dataset written by [`Dataset::write`] or [`write_dataset_streaming`].
    pub fn read(path: &Path) -> Result<Dataset> {
        let mut samples = Vec::new();
        let (manifest, grid) = read_dataset_each(path, |s| {
            samples.push(s);
            Ok(())
        })?;
        if samples.len() != manifest.count {
            return Err(Error::Corrupt {
                path: dataset_paths(path).1,
                reason: format!("manifest declares {} rows, found {}", manifest.count, samples.len()),
            });
        }
        Ok(Dataset {
            manifest,
            grid,
            samples,
        })
    }

    pub fn schedule(&self) -> &AcquisitionSchedule {
        &self.manifest.schedule
    }
}

/// Generate and write a dataset chunk by chunk; returns the CSV body hash.
pub fn write_dataset_streaming(config: &GenerationConfig, master_seed: u64, path: &Path) -> Result<String> {
    const CHUNK: usize = 4096;
    config.validate()?;
    let (json, body) = dataset_paths(path);
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        schedule: config.schedule()?,
        grid: config.grid.clone(),
        config: config.clone(),
        master_seed,
        count: config.count,
    };
    write_manifest(&manifest, &json)?;
    let mut w = csv::Writer::from_path(&body)?;
    w.write_record(csv_header(config.grid.len(), manifest.schedule.n_echoes()))?;
    let mut start = 0usize;
    while start < config.count {
        let n = CHUNK.min(config.count - start);
        for s in generate_range(config, master_seed, start as u64, n)? {
            write_row(&mut w, &s)?;
        }
        start += n;
    }
    w.flush()?;
    drop(w);
    sha256_file(&body)
}

/// Stream the rows of a dataset through `f` without holding them all.
pub fn read_dataset_each<F>(path: &Path, mut f: F) -> Result<(DatasetManifest, Arc<T2Grid>)>
where
    F: FnMut(SynthSample) -> Result<()>,
{
    let (json, body) = dataset_paths(path);
    let text = std::fs::read_to_string(&json)?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Corrupt {
        path: json.clone(),
        reason: e.to_string(),
    })?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Version {
            found: manifest.format_version,
            expected: DATASET_FORMAT_VERSION,
        });
    }
    let grid = Arc::new(manifest.grid.clone());
    let (n_t2, n_echo) = (grid.len(), manifest.schedule.n_echoes());
    let expected = csv_header(n_t2, n_echo);
    let mut r = csv::Reader::from_path(&body)?;
    let header: Vec<String> = r.headers()?.iter().map(|s| s.to_string()).collect();
    if header != expected {
        return Err(Error::Corrupt {
            path: body,
            reason: "unexpected CSV header".into(),
        });
    }
    let te = manifest.schedule.echo_times.clone();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |k: usize| parse_f64(&rec[k], &body, row);
        let int = |k: usize| {
            rec[k].trim().parse::<u64>().map_err(|e| Error::Corrupt {
                path: body.clone(),
                reason: format!("row {row}: {e}"),
            })
        };
        let weights = (0..n_t2).map(|j| num(5 + j)).collect::<Result<Vec<_>>>()?;
        let noisy = (0..n_echo).map(|i| num(5 + n_t2 + i)).collect::<Result<Vec<_>>>()?;
        let clean = (0..n_echo)
            .map(|i| num(5 + n_t2 + n_echo + i))
            .collect::<Result<Vec<_>>>()?;
        let sample_id = int(0)?;
        let truth = T2Distribution::new(&grid, weights).map_err(|e| Error::Corrupt {
            path: body.clone(),
            reason: format!("row {row}: {e}"),
        })?;
        f(SynthSample {
            sample_id,
            truth,
            signal_clean: EchoSignal::new(te.clone(), clean)?,
            signal_noisy: EchoSignal::new(te.clone(), noisy)?,
            alpha_deg: num(1)?,
            snr: num(2)?,
            m0: num(3)?,
            active_k: int(4)? as usize,
            seed_path: SeedPath {
                master_seed: manifest.master_seed,
                stream: sample_id,
            },
        })?;
    }
    Ok((manifest, grid))
}
