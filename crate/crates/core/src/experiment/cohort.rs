use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::config::{ExperimentConfig, ExperimentKind};
use crate::distribution::{mean_distribution, T2Distribution};
use crate::error::{Error, Result};
use crate::grid::T2Grid;
use crate::io::fmt17;
use crate::kernel::{build_kernel, forward_signal};
use crate::rng::{derive_labeled, derive_seed, stream_rng, Rng};
use crate::schedule::{AcquisitionSchedule, EchoSignal};
use crate::stats::{Group, Roi};
use crate::synth::{add_noise, sample_mixture, GaussianComponent, Mixture};

/// One acquisition of one ROI.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    /// Refocusing-angle offset applied to every voxel in this session.
    pub alpha_offset_deg: f64,
    pub gain: f64,
    /// Per-voxel refocusing angle actually simulated.
    pub alpha_deg: Vec<f64>,
    pub signals: Vec<EchoSignal>,
    /// ROI-average of the voxel truths.
    pub truth: T2Distribution,
}

/// Both sessions of one subject's ROI.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiData {
    pub subject: usize,
    pub subject_id: String,
    pub group: Option<Group>,
    pub roi: Roi,
    pub mixture: Mixture,
    pub sessions: [Session; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub schedule: AcquisitionSchedule,
    pub grid: Arc<T2Grid>,
    /// Ordered by subject, then by the configured ROI order.
    pub rois: Vec<RoiData>,
}

const SUBJECT: u64 = 1;
const ROI: u64 = 2;
const VOXEL: u64 = 3;

fn roi_code(r: Roi) -> u64 {
    match r {
        Roi::Body => 0,
        Roi::Tail => 1,
    }
}

fn uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn subject_id(i: usize) -> String {
    format!("s{i:02}")
}

pub fn subject_group(config: &ExperimentConfig, i: usize) -> Option<Group> {
    (config.experiment == ExperimentKind::GroupSeparation).then(|| {
        if i + config.cohort.n_cases >= config.cohort.n_subjects {
            Group::B
        } else {
            Group::A
        }
    })
}

/// Draw an ROI mixture with at least one component in the short/medium pool.
fn roi_mixture(config: &ExperimentConfig, rng: &mut Rng) -> Result<Mixture> {
    let c = &config.cohort;
    for _ in 0..1000 {
        let k = rng.random_range(c.active_k_range.0..=c.active_k_range.1);
        let m = sample_mixture(&config.components, rng, k)?;
        if m.components.iter().any(|g| g.mean_ms <= c.short_pool_max_ms) {
            return Ok(m);
        }
    }
    Err(Error::Config("could not draw a mixture with a short/medium component".into()))
}

/// Case-group change: move `fraction` of the signal out of the heaviest
/// short/medium component into a copy with mean and width scaled by `t2_shift`.
/// The copy is appended, so component `i < len` keeps its identity.
pub fn shifted_mixture(m: &Mixture, fraction: f64, t2_shift: f64, pool_max_ms: f64) -> Result<(Mixture, usize)> {
    let dom = m
        .components
        .iter()
        .enumerate()
        .filter(|(_, g)| g.mean_ms <= pool_max_ms)
        .max_by(|a, b| a.1.weight.total_cmp(&b.1.weight))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Config("mixture has no short/medium component".into()))?;
    let mut out = m.clone();
    let moved = fraction.min(out.components[dom].weight);
    out.components[dom].weight -= moved;
    let src = &m.components[dom];
    out.components.push(GaussianComponent {
        label: format!("{}_shifted", src.label),
        weight: moved,
        mean_ms: src.mean_ms * t2_shift,
        std_ms: src.std_ms * t2_shift,
    });
    Ok((out, dom))
}

/// Scale each component's mean and width by its voxel factor.
fn voxel_mixture(m: &Mixture, factors: &[f64]) -> Mixture {
    Mixture {
        components: m
            .components
            .iter()
            .zip(factors)
            .map(|(g, &f)| GaussianComponent {
                mean_ms: g.mean_ms * f,
                std_ms: g.std_ms * f,
                ..g.clone()
            })
            .collect(),
    }
}

struct SubjectDraw {
    alpha_center: f64,
    gain: f64,
    drift_alpha: f64,
    drift_gain: f64,
}

fn subject_draw(config: &ExperimentConfig, cohort_seed: u64, i: usize) -> SubjectDraw {
    let mut rng = stream_rng(derive_seed(cohort_seed, &[SUBJECT, i as u64]), 0);
    SubjectDraw {
        alpha_center: uniform(&mut rng, config.cohort.alpha_range_deg),
        gain: uniform(&mut rng, config.cohort.gain_range),
        drift_alpha: config.drift.alpha_std_deg * normal(&mut rng),
        drift_gain: uniform(&mut rng, config.drift.gain_range),
    }
}

fn clamp_alpha(a: f64) -> f64 {
    a.clamp(120.0, 180.0)
}

fn generate_roi(
    config: &ExperimentConfig,
    schedule: &AcquisitionSchedule,
    grid: &Arc<T2Grid>,
    cohort_seed: u64,
    subject: usize,
    roi: Roi,
) -> Result<RoiData> {
    let sd = subject_draw(config, cohort_seed, subject);
    let mut rng = stream_rng(derive_seed(cohort_seed, &[ROI, subject as u64, roi_code(roi)]), 0);
    let mixture = roi_mixture(config, &mut rng)?;
    let group = subject_group(config, subject);
    let (post, parent) = if group == Some(Group::B) {
        let e = &config.effect;
        let (m, dom) = shifted_mixture(&mixture, e.fraction, e.t2_shift, config.cohort.short_pool_max_ms)?;
        (m, Some(dom))
    } else {
        (mixture.clone(), None)
    };
    let offsets = [0.0, sd.drift_alpha];
    let gains = [sd.gain, sd.gain * sd.drift_gain];
    let c = &config.cohort;
    let voxel_seed = derive_seed(cohort_seed, &[VOXEL, subject as u64, roi_code(roi)]);
    let mut alpha = [Vec::new(), Vec::new()];
    let mut signals = [Vec::new(), Vec::new()];
    let mut truths = [Vec::new(), Vec::new()];
    for v in 0..c.voxels_per_roi {
        let mut vr = stream_rng(voxel_seed, v as u64);
        let mut factors: Vec<f64> = mixture
            .components
            .iter()
            .map(|_| (c.heterogeneity * normal(&mut vr)).exp())
            .collect();
        let base_alpha = sd.alpha_center + c.alpha_jitter_deg * normal(&mut vr);
        if let Some(dom) = parent {
            factors.push(factors[dom]);
        }
        let mixtures = [
            voxel_mixture(&mixture, &factors),
            voxel_mixture(&post, &factors),
        ];
        for s in 0..2 {
            let truth = mixtures[s].render(grid)?;
            let a = clamp_alpha(base_alpha + offsets[s]);
            let kernel = build_kernel(&schedule.with_refocus(a)?, grid)?;
            let clean = forward_signal(&kernel, &truth, gains[s])?;
            signals[s].push(add_noise(&clean, config.noise.snr, config.noise.model, &mut vr)?);
            alpha[s].push(a);
            truths[s].push(truth);
        }
    }
    let [a0, a1] = alpha;
    let [s0, s1] = signals;
    let session = |s: usize, alpha_deg: Vec<f64>, signals: Vec<EchoSignal>| -> Result<Session> {
        Ok(Session {
            alpha_offset_deg: offsets[s],
            gain: gains[s],
            alpha_deg,
            signals,
            truth: mean_distribution(&truths[s])?,
        })
    };
    Ok(RoiData {
        subject,
        subject_id: subject_id(subject),
        group,
        roi,
        mixture,
        sessions: [session(0, a0, s0)?, session(1, a1, s1)?],
    })
}

/// Synthetic cohort for `config`: one random tissue mixture per subject ROI,
/// scanned twice. Only group-B subjects of a group-separation config change
/// between sessions; everyone gets fresh noise and the configured drift.
///
/// Depends on `config.seed` only, never on the bootstrap seed.
pub fn generate_cohort(config: &ExperimentConfig) -> Result<Cohort> {
    config.validate()?;
    let schedule = config.schedule()?;
    let grid = Arc::new(config.grid.clone());
    let cohort_seed = derive_labeled(config.seed, "cohort");
    let jobs: Vec<(usize, Roi)> = (0..config.cohort.n_subjects)
        .flat_map(|s| config.cohort.rois.iter().map(move |&r| (s, r)))
        .collect();
    let rois = jobs
        .into_par_iter()
        .map(|(s, r)| generate_roi(config, &schedule, &grid, cohort_seed, s, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(Cohort { schedule, grid, rois })
}

/// Pre/post cohort with labelled groups.
pub fn generate_group_cohort(config: &ExperimentConfig) -> Result<Cohort> {
    if config.experiment != ExperimentKind::GroupSeparation {
        return Err(Error::Config(format!(
            "a group cohort needs a group_separation config, got {}",
            config.experiment
        )));
    }
    generate_cohort(config)
}

impl Cohort {
    /// Long-format CSV: one row per voxel and session.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::io::ensure_parent(path)?;
        let mut w = csv::Writer::from_path(path)?;
        let n = self.schedule.n_echoes();
        let mut header: Vec<String> = ["subject_id", "group", "roi", "session", "voxel", "alpha_deg", "gain"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((0..n).map(|i| format!("s_{i}")));
        w.write_record(&header)?;
        for r in &self.rois {
            for (s, sess) in r.sessions.iter().enumerate() {
                for (v, sig) in sess.signals.iter().enumerate() {
                    let mut rec = vec![
                        r.subject_id.clone(),
                        r.group.map(|g| g.to_string()).unwrap_or_default(),
                        r.roi.to_string(),
                        s.to_string(),
                        v.to_string(),
                        fmt17(sess.alpha_deg[v]),
                        fmt17(sess.gain),
                    ];
                    rec.extend(sig.amplitudes.iter().map(|&a| fmt17(a)));
                    w.write_record(&rec)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}
