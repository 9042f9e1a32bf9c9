use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cohort::{generate_cohort, Cohort, RoiData};
use super::config::{ExperimentConfig, ExperimentKind, Method};
use crate::bootstrap::{bootstrap_infer, bootstrap_scalar_fit, deep_ensemble_infer, BootstrapConfig};
use crate::distribution::{mean_distribution, wasserstein1, T2Distribution};
use crate::error::{Error, Result};
use crate::io::sha256_file;
use crate::kernel::build_kernel;
use crate::mlp::{MlpModel, Variant};
use crate::nnls::nnls_solve;
use crate::scalar::fit_monoexponential;
use crate::schedule::EchoSignal;
use crate::stats::{separation, summarize, Group, Roi, SeparationStats, Summary};

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Trained networks available to an experiment.
#[derive(Debug, Clone, Default)]
pub struct ModelSet {
    pub miml: Option<MlpModel>,
    /// Deep-ensemble members (the first is usually `miml` itself).
    pub miml_ensemble: Vec<MlpModel>,
    pub p2t2: Option<MlpModel>,
    /// Random-subset models keyed by subset size.
    pub p2t2_subset: BTreeMap<usize, MlpModel>,
    /// `(file name, sha256)` of every model loaded from disk.
    pub files: Vec<(String, String)>,
}

impl ModelSet {
    /// Load the conventional file names from `dir`: `miml.json`,
    /// `miml_e<k>.json` (extra ensemble members), `p2t2.json`, `p2t2_m<m>.json`.
    /// Missing files are skipped; methods that need them fail later.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut set = ModelSet::default();
        let mut names: Vec<String> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| n.ends_with(".json"))
            .collect();
        names.sort();
        let mut extra: Vec<(usize, MlpModel)> = Vec::new();
        for name in names {
            let stem = &name[..name.len() - 5];
            let path = dir.join(&name);
            let load = || -> Result<MlpModel> { MlpModel::load(&path) };
            if stem == "miml" {
                set.miml = Some(load()?);
            } else if stem == "p2t2" {
                set.p2t2 = Some(load()?);
            } else if let Some(k) = stem.strip_prefix("miml_e").and_then(|k| k.parse().ok()) {
                extra.push((k, load()?));
            } else if let Some(m) = stem.strip_prefix("p2t2_m").and_then(|m| m.parse().ok()) {
                set.p2t2_subset.insert(m, load()?);
            } else {
                continue;
            }
            set.files.push((name.clone(), sha256_file(&path)?));
        }
        extra.sort_by_key(|e| e.0);
        if let Some(m) = &set.miml {
            set.miml_ensemble.push(m.clone());
        }
        set.miml_ensemble.extend(extra.into_iter().map(|e| e.1));
        Ok(set)
    }

    fn require(&self, method: Method, subset: usize, n_echoes: usize) -> Result<()> {
        let missing = || Err(Error::MissingModel(method.to_string()));
        let check = |m: &MlpModel, v: Variant, echoes: usize| {
            if m.variant() != v || m.input_echoes() != echoes {
                Err(Error::Contract(format!(
                    "{method} needs a {v} model for {echoes} echoes, got {} for {}",
                    m.variant(),
                    m.input_echoes()
                )))
            } else {
                Ok(())
            }
        };
        match method {
            Method::Miml => match &self.miml {
                Some(m) => check(m, Variant::Miml, n_echoes),
                None => missing(),
            },
            Method::MimlEnsemble => {
                if self.miml_ensemble.is_empty() {
                    return missing();
                }
                self.miml_ensemble
                    .iter()
                    .try_for_each(|m| check(m, Variant::Miml, n_echoes))
            }
            Method::P2t2 => match &self.p2t2 {
                Some(m) => check(m, Variant::P2t2, n_echoes),
                None => missing(),
            },
            Method::P2t2Bootstrap => match self.p2t2_subset.get(&subset) {
                Some(m) => check(m, Variant::P2t2, subset),
                None => Err(Error::MissingModel(format!("{method} (m = {subset})"))),
            },
            Method::Nnls | Method::Scalar | Method::ScalarBootstrap => Ok(()),
        }
    }
}

/// One per-(subject, ROI) biomarker value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerRecord {
    pub subject_id: String,
    pub group: Option<Group>,
    pub roi: Roi,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedFailure {
    pub subject_id: String,
    pub roi: Roi,
    pub reason: String,
}

/// Biomarker values and summaries for one method (and one subset size in ablations).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    /// Method name, with `_t2` / `_m0` for the two scalar biomarkers.
    pub method: String,
    /// `w1_ms`, `delta_t2_ms` or `delta_m0`.
    pub biomarker: String,
    pub m: Option<usize>,
    pub values: Vec<BiomarkerRecord>,
    pub failures: Vec<RecordedFailure>,
    pub summary: Option<Summary>,
    /// Separation of group B from group A; group experiments only.
    pub stats: Option<SeparationStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format_version: u32,
    pub experiment: ExperimentKind,
    pub methods: Vec<MethodReport>,
}

impl ExperimentReport {
    pub fn get(&self, method: &str, m: Option<usize>) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == method && r.m == m)
    }
}

/// Wall-clock seconds per method; kept out of the reproducible outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub method: String,
    pub m: Option<usize>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub timings: Vec<Timing>,
    pub cohort: Cohort,
}

/// Per-session ROI summary produced by a method.
enum RoiEstimate {
    Distribution(T2Distribution),
    /// Mean T2 and M0 over the voxels whose fit converged.
    Scalar { t2_ms: f64, m0: f64 },
}

fn mean_scalars(fits: Vec<Option<(f64, f64)>>) -> Result<RoiEstimate> {
    let ok: Vec<(f64, f64)> = fits.into_iter().flatten().collect();
    if ok.is_empty() {
        return Err(Error::AggregateFailure(0));
    }
    let k = ok.len() as f64;
    Ok(RoiEstimate::Scalar {
        t2_ms: ok.iter().map(|f| f.0).sum::<f64>() / k,
        m0: ok.iter().map(|f| f.1).sum::<f64>() / k,
    })
}

fn estimate(
    method: Method,
    config: &ExperimentConfig,
    boot: &BootstrapConfig,
    models: &ModelSet,
    cohort: &Cohort,
    signals: &[EchoSignal],
) -> Result<RoiEstimate> {
    let dists = |f: &(dyn Fn(&EchoSignal) -> Result<T2Distribution> + Sync)| -> Result<RoiEstimate> {
        let ps = signals.par_iter().map(f).collect::<Result<Vec<_>>>()?;
        Ok(RoiEstimate::Distribution(mean_distribution(&ps)?))
    };
    match method {
        Method::Nnls => {
            // B1 is unknown to the fit: nominal refocusing angle.
            let kernel = build_kernel(&cohort.schedule, &cohort.grid)?;
            dists(&|s| Ok(nnls_solve(s, &kernel, &config.nnls)?.distribution))
        }
        Method::Miml => dists(&|s| models.miml.as_ref().expect("checked").predict(s)),
        Method::MimlEnsemble => dists(&|s| deep_ensemble_infer(s, &models.miml_ensemble)),
        Method::P2t2 => dists(&|s| models.p2t2.as_ref().expect("checked").predict(s)),
        Method::P2t2Bootstrap => {
            let model = &models.p2t2_subset[&boot.subset_size];
            dists(&|s| bootstrap_infer(s, model, boot))
        }
        Method::Scalar => mean_scalars(
            signals
                .par_iter()
                .map(|s| fit_monoexponential(s).ok().map(|f| (f.t2_ms, f.m0)))
                .collect(),
        ),
        Method::ScalarBootstrap => mean_scalars(
            signals
                .par_iter()
                .map(|s| bootstrap_scalar_fit(s, boot).ok().map(|f| (f.t2_ms, f.m0)))
                .collect(),
        ),
    }
}

/// Biomarkers of one ROI: W1 for distributions, |ΔT2| and |ΔM0| for scalars.
fn roi_biomarkers(a: &RoiEstimate, b: &RoiEstimate) -> Result<Vec<f64>> {
    match (a, b) {
        (RoiEstimate::Distribution(p), RoiEstimate::Distribution(q)) => Ok(vec![wasserstein1(p, q)?]),
        (RoiEstimate::Scalar { t2_ms: t0, m0: m0a }, RoiEstimate::Scalar { t2_ms: t1, m0: m0b }) => {
            Ok(vec![(t1 - t0).abs(), (m0b - m0a).abs()])
        }
        _ => unreachable!("both sessions use the same method"),
    }
}

fn report_names(method: Method) -> Vec<(String, &'static str)> {
    if method.is_scalar() {
        vec![
            (format!("{method}_t2"), "delta_t2_ms"),
            (format!("{method}_m0"), "delta_m0"),
        ]
    } else {
        vec![(method.to_string(), "w1_ms")]
    }
}

fn run_method(
    method: Method,
    m: Option<usize>,
    config: &ExperimentConfig,
    models: &ModelSet,
    cohort: &Cohort,
) -> Result<(Vec<MethodReport>, Timing)> {
    let start = Instant::now();
    let boot = match m {
        Some(m) => BootstrapConfig {
            subset_size: m,
            ..config.bootstrap.clone()
        },
        None => config.bootstrap.clone(),
    };
    let names = report_names(method);
    let mut reports: Vec<MethodReport> = names
        .iter()
        .map(|(name, biomarker)| MethodReport {
            method: name.clone(),
            biomarker: biomarker.to_string(),
            m,
            values: Vec::new(),
            failures: Vec::new(),
            summary: None,
            stats: None,
        })
        .collect();
    let one = |r: &RoiData| -> Result<Vec<f64>> {
        let a = estimate(method, config, &boot, models, cohort, &r.sessions[0].signals)?;
        let b = estimate(method, config, &boot, models, cohort, &r.sessions[1].signals)?;
        roi_biomarkers(&a, &b)
    };
    for r in &cohort.rois {
        match one(r) {
            Ok(vals) => {
                for (rep, value) in reports.iter_mut().zip(vals) {
                    rep.values.push(BiomarkerRecord {
                        subject_id: r.subject_id.clone(),
                        group: r.group,
                        roi: r.roi,
                        value,
                    });
                }
            }
            Err(e) => {
                for rep in reports.iter_mut() {
                    rep.failures.push(RecordedFailure {
                        subject_id: r.subject_id.clone(),
                        roi: r.roi,
                        reason: e.to_string(),
                    });
                }
            }
        }
    }
    for rep in reports.iter_mut() {
        finish(rep, config)?;
    }
    let timing = Timing {
        method: method.to_string(),
        m,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((reports, timing))
}

fn finish(rep: &mut MethodReport, config: &ExperimentConfig) -> Result<()> {
    let all: Vec<f64> = rep.values.iter().map(|v| v.value).collect();
    rep.summary = if all.is_empty() { None } else { Some(summarize(&all)?) };
    if config.experiment == ExperimentKind::GroupSeparation {
        let pick = |g| {
            rep.values
                .iter()
                .filter(|v| v.group == Some(g))
                .map(|v| v.value)
                .collect::<Vec<_>>()
        };
        let (a, b) = (pick(Group::A), pick(Group::B));
        if !a.is_empty() && !b.is_empty() {
            rep.stats = Some(separation(&a, &b, config.hellinger_bins, config.ks_mode)?);
        }
    }
    Ok(())
}

fn check_models(config: &ExperimentConfig, models: &ModelSet, subsets: &[usize]) -> Result<()> {
    let n = config.schedule()?.n_echoes();
    for &method in &config.methods {
        if method.uses_subsets() {
            for &m in subsets {
                models.require(method, m, n)?;
            }
        } else {
            models.require(method, config.bootstrap.subset_size, n)?;
        }
    }
    Ok(())
}

fn run_all(
    config: &ExperimentConfig,
    models: &ModelSet,
    cohort: Cohort,
    subsets: Option<&[usize]>,
) -> Result<ExperimentRun> {
    let mut methods = Vec::new();
    let mut timings = Vec::new();
    for &method in &config.methods {
        let ms: Vec<Option<usize>> = match subsets {
            Some(list) if method.uses_subsets() => list.iter().map(|&m| Some(m)).collect(),
            _ => vec![None],
        };
        for m in ms {
            let (reps, t) = run_method(method, m, config, models, &cohort)?;
            methods.extend(reps);
            timings.push(t);
        }
    }
    Ok(ExperimentRun {
        report: ExperimentReport {
            format_version: REPORT_FORMAT_VERSION,
            experiment: config.experiment,
            methods,
        },
        timings,
        cohort,
    })
}

/// Two scans of the same tissue per subject ROI; biomarker = distance between
/// the two ROI estimates.
pub fn run_test_retest(config: &ExperimentConfig, models: &ModelSet) -> Result<ExperimentRun> {
    expect_kind(config, ExperimentKind::TestRetest)?;
    check_models(config, models, &[config.bootstrap.subset_size])?;
    run_all(config, models, generate_cohort(config)?, None)
}

/// Pre/post scans with a case-group change; adds AUC, Hellinger and KS per method.
pub fn run_group_separation(config: &ExperimentConfig, models: &ModelSet) -> Result<ExperimentRun> {
    expect_kind(config, ExperimentKind::GroupSeparation)?;
    check_models(config, models, &[config.bootstrap.subset_size])?;
    run_all(config, models, super::cohort::generate_group_cohort(config)?, None)
}

/// Test–retest on one cohort for every subset size in `ablation_m`. Methods
/// that do not resample are run once, with `m` unset.
pub fn run_ablation(config: &ExperimentConfig, models: &ModelSet) -> Result<ExperimentRun> {
    expect_kind(config, ExperimentKind::Ablation)?;
    check_models(config, models, &config.ablation_m)?;
    run_all(config, models, generate_cohort(config)?, Some(&config.ablation_m))
}

pub fn run_experiment(config: &ExperimentConfig, models: &ModelSet) -> Result<ExperimentRun> {
    match config.experiment {
        ExperimentKind::TestRetest => run_test_retest(config, models),
        ExperimentKind::GroupSeparation => run_group_separation(config, models),
        ExperimentKind::Ablation => run_ablation(config, models),
    }
}

fn expect_kind(config: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    if config.experiment != kind {
        return Err(Error::Config(format!(
            "expected a {kind} config, got {}",
            config.experiment
        )));
    }
    config.validate()
}
