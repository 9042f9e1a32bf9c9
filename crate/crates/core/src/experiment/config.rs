use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bootstrap::BootstrapConfig;
use crate::error::{Error, Result};
use crate::grid::T2Grid;
use crate::nnls::NnlsConfig;
use crate::schedule::{schedule_preset, AcquisitionSchedule};
use crate::stats::{KsMode, Roi, DEFAULT_HELLINGER_BINS};
use crate::synth::{default_component_table, ComponentSpec, NoiseModel};

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    TestRetest,
    GroupSeparation,
    Ablation,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::TestRetest => "test_retest",
            ExperimentKind::GroupSeparation => "group_separation",
            ExperimentKind::Ablation => "ablation",
        })
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test_retest" | "test-retest" => Ok(ExperimentKind::TestRetest),
            "group_separation" | "group-sep" => Ok(ExperimentKind::GroupSeparation),
            "ablation" => Ok(ExperimentKind::Ablation),
            _ => Err(Error::Config(format!("unknown experiment `{s}`"))),
        }
    }
}

/// Estimators compared by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Nnls,
    Scalar,
    ScalarBootstrap,
    Miml,
    MimlEnsemble,
    P2t2,
    P2t2Bootstrap,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Nnls,
        Method::Scalar,
        Method::ScalarBootstrap,
        Method::Miml,
        Method::MimlEnsemble,
        Method::P2t2,
        Method::P2t2Bootstrap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Nnls => "nnls",
            Method::Scalar => "scalar",
            Method::ScalarBootstrap => "scalar_bootstrap",
            Method::Miml => "miml",
            Method::MimlEnsemble => "miml_ensemble",
            Method::P2t2 => "p2t2",
            Method::P2t2Bootstrap => "p2t2_bootstrap",
        }
    }

    /// Whether the result depends on the bootstrap subset size.
    pub fn uses_subsets(self) -> bool {
        matches!(self, Method::ScalarBootstrap | Method::P2t2Bootstrap)
    }

    pub fn is_scalar(self) -> bool {
        matches!(self, Method::Scalar | Method::ScalarBootstrap)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Shape and acquisition variability of a synthetic cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub n_subjects: usize,
    /// Subjects `n_subjects - n_cases ..` form group B; 0 outside group separation.
    pub n_cases: usize,
    pub voxels_per_roi: usize,
    pub rois: Vec<Roi>,
    /// Per-subject refocusing angle centre.
    pub alpha_range_deg: (f64, f64),
    /// Per-voxel standard deviation around the subject's angle.
    pub alpha_jitter_deg: f64,
    pub gain_range: (f64, f64),
    /// Log-normal spread of each component's T2 between voxels of one ROI.
    pub heterogeneity: f64,
    pub active_k_range: (usize, usize),
    /// Components with mean T2 at or below this form the short/medium pool.
    pub short_pool_max_ms: f64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            n_subjects: 7,
            n_cases: 0,
            voxels_per_roi: 100,
            rois: vec![Roi::Body, Roi::Tail],
            alpha_range_deg: (150.0, 180.0),
            alpha_jitter_deg: 2.0,
            gain_range: (0.9, 1.1),
            heterogeneity: 0.05,
            active_k_range: (2, 3),
            short_pool_max_ms: 300.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub snr: f64,
    pub model: NoiseModel,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            snr: 25.0,
            model: NoiseModel::Gaussian,
        }
    }
}

/// Acquisition changes between the two sessions of a subject (repositioning,
/// receiver gain), applied to everyone regardless of group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionDrift {
    /// Standard deviation of the second session's refocusing-angle offset.
    pub alpha_std_deg: f64,
    /// Range of the second session's multiplicative gain change.
    pub gain_range: (f64, f64),
}

impl Default for SessionDrift {
    fn default() -> Self {
        SessionDrift {
            alpha_std_deg: 0.0,
            gain_range: (1.0, 1.0),
        }
    }
}

/// Case-group change between the two sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EffectConfig {
    /// Signal fraction moved out of the dominant short/medium component.
    pub fraction: f64,
    /// Multiplier on the moved mass's T2 mean (and width).
    pub t2_shift: f64,
}

impl Default for EffectConfig {
    fn default() -> Self {
        EffectConfig {
            fraction: 0.15,
            t2_shift: 1.4,
        }
    }
}

/// Complete description of one experiment run. Read with [`ExperimentConfig::from_json`]
/// so that missing fields take the defaults of the named experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub experiment: ExperimentKind,
    pub schedule_preset: String,
    pub methods: Vec<Method>,
    pub cohort: CohortConfig,
    pub noise: NoiseConfig,
    pub drift: SessionDrift,
    pub effect: EffectConfig,
    pub bootstrap: BootstrapConfig,
    pub nnls: NnlsConfig,
    pub hellinger_bins: usize,
    pub ks_mode: KsMode,
    pub ablation_m: Vec<usize>,
    /// Cohort seed. Method randomness comes from `bootstrap.seed`.
    pub seed: u64,
    pub components: Vec<ComponentSpec>,
    pub grid: T2Grid,
}

impl ExperimentConfig {
    pub fn default_for(kind: ExperimentKind) -> Self {
        let mut c = ExperimentConfig {
            format_version: CONFIG_FORMAT_VERSION,
            experiment: kind,
            schedule_preset: "retest_7p9".into(),
            methods: vec![
                Method::Nnls,
                Method::Scalar,
                Method::Miml,
                Method::MimlEnsemble,
                Method::P2t2,
                Method::P2t2Bootstrap,
            ],
            cohort: CohortConfig::default(),
            noise: NoiseConfig::default(),
            drift: SessionDrift::default(),
            effect: EffectConfig::default(),
            bootstrap: BootstrapConfig {
                seed: 1,
                ..BootstrapConfig::default()
            },
            nnls: NnlsConfig::default(),
            hellinger_bins: DEFAULT_HELLINGER_BINS,
            ks_mode: KsMode::Auto,
            ablation_m: vec![14, 16, 20, 24],
            seed: 2024,
            components: default_component_table(),
            grid: T2Grid::default_log(),
        };
        match kind {
            ExperimentKind::TestRetest => {}
            ExperimentKind::GroupSeparation => {
                c.schedule_preset = "diabetes_7p74".into();
                c.methods = vec![
                    Method::Nnls,
                    Method::Scalar,
                    Method::ScalarBootstrap,
                    Method::Miml,
                    Method::MimlEnsemble,
                    Method::P2t2,
                    Method::P2t2Bootstrap,
                ];
                c.cohort.n_subjects = 8;
                c.cohort.n_cases = 4;
                c.drift = SessionDrift {
                    alpha_std_deg: 3.0,
                    gain_range: (0.9, 1.1),
                };
            }
            ExperimentKind::Ablation => c.methods = vec![Method::P2t2Bootstrap],
        }
        c
    }

    /// Parse a JSON config, filling absent fields from the defaults of its
    /// `experiment` (test–retest when that is absent too).
    pub fn from_json(text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text)?;
        let kind = match user.get("experiment") {
            Some(v) => serde_json::from_value(v.clone())?,
            None => ExperimentKind::TestRetest,
        };
        let mut merged = serde_json::to_value(Self::default_for(kind))?;
        merge(&mut merged, user);
        let config: ExperimentConfig = serde_json::from_value(merged)?;
        if config.format_version != CONFIG_FORMAT_VERSION {
            return Err(Error::Version {
                found: config.format_version,
                expected: CONFIG_FORMAT_VERSION,
            });
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn schedule(&self) -> Result<AcquisitionSchedule> {
        schedule_preset(&self.schedule_preset)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let n_echoes = self.schedule()?.n_echoes();
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        let c = &self.cohort;
        if c.n_subjects == 0 || c.voxels_per_roi == 0 || c.rois.is_empty() {
            return bad("cohort needs subjects, voxels and at least one roi".into());
        }
        let mut rois = c.rois.clone();
        rois.sort();
        rois.dedup();
        if rois.len() != c.rois.len() {
            return bad("duplicate roi".into());
        }
        match self.experiment {
            ExperimentKind::GroupSeparation => {
                if c.n_cases == 0 || c.n_cases >= c.n_subjects {
                    return bad(format!(
                        "group separation needs 1..{} cases, got {}",
                        c.n_subjects, c.n_cases
                    ));
                }
            }
            _ if c.n_cases != 0 => return bad("n_cases is only used by group separation".into()),
            _ => {}
        }
        let (a_lo, a_hi) = c.alpha_range_deg;
        if !(a_lo > 0.0 && a_lo <= a_hi && a_hi <= 180.0) {
            return bad(format!("bad cohort alpha range ({a_lo}, {a_hi})"));
        }
        let (g_lo, g_hi) = c.gain_range;
        if !(g_lo > 0.0 && g_lo <= g_hi && g_hi.is_finite()) {
            return bad(format!("bad cohort gain range ({g_lo}, {g_hi})"));
        }
        let (d_lo, d_hi) = self.drift.gain_range;
        if !(d_lo > 0.0 && d_lo <= d_hi && d_hi.is_finite()) {
            return bad(format!("bad drift gain range ({d_lo}, {d_hi})"));
        }
        if !(c.alpha_jitter_deg >= 0.0 && self.drift.alpha_std_deg >= 0.0 && c.heterogeneity >= 0.0) {
            return bad("spreads must be non-negative".into());
        }
        let (k_lo, k_hi) = c.active_k_range;
        if !(k_lo >= 1 && k_lo <= k_hi && k_hi <= self.components.len()) {
            return bad(format!("bad active_k range ({k_lo}, {k_hi})"));
        }
        if !self.components.iter().any(|s| s.t2_mean_range.0 <= c.short_pool_max_ms) {
            return bad("no component can fall in the short/medium pool".into());
        }
        if !(self.noise.snr > 0.0) {
            return bad(format!("snr must be positive, got {}", self.noise.snr));
        }
        let e = &self.effect;
        if !((0.0..=1.0).contains(&e.fraction) && e.t2_shift > 0.0 && e.t2_shift.is_finite()) {
            return bad(format!("invalid effect ({}, {})", e.fraction, e.t2_shift));
        }
        if self.hellinger_bins < 2 {
            return bad("hellinger_bins must be >= 2".into());
        }
        if self.methods.iter().any(|m| m.uses_subsets()) {
            self.bootstrap.validate(n_echoes)?;
        }
        if self.experiment == ExperimentKind::Ablation {
            if self.ablation_m.is_empty() {
                return bad("ablation_m must not be empty".into());
            }
            if let Some(m) = self.ablation_m.iter().find(|&&m| m < 2 || m > n_echoes) {
                return bad(format!("ablation subset size {m} outside 2..={n_echoes}"));
            }
        }
        for s in &self.components {
            s.validate()?;
        }
        self.nnls.validate()?;
        self.grid.validate()
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
