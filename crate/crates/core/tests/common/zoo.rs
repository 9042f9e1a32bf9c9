//! Full-size trained networks shared by the acceptance run, cached on disk.
//!
//! A model file is keyed by a hash of everything that determines its weights,
//! so changing a setting retrains only what it affects.

#![allow(dead_code)]

use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;
use t2boot::experiment::ModelSet;
use t2boot::io::{sha256_file, sha256_hex};
use t2boot::mlp::{train, MlpModel, SubsetMode, TrainConfig, Variant, MODEL_FORMAT_VERSION};
use t2boot::synth::{generate_dataset, Dataset, GenerationConfig};

pub const DATA_SEED: u64 = 11;
pub const SUBSETS: [usize; 4] = [14, 16, 20, 24];
pub const ENSEMBLE_EXTRA: u64 = 4;

#[derive(Serialize)]
struct Key<'a> {
    format: u32,
    generation: &'a GenerationConfig,
    data_seed: u64,
    variant: Variant,
    mode: SubsetMode,
    m: usize,
    train: &'a TrainConfig,
}

pub struct Spec {
    pub name: String,
    pub variant: Variant,
    pub mode: SubsetMode,
    pub m: usize,
    pub seed: u64,
}

pub fn specs() -> Vec<Spec> {
    let spec = |name: String, variant, mode, m, seed| Spec {
        name,
        variant,
        mode,
        m,
        seed,
    };
    let mut v = vec![
        spec("miml".into(), Variant::Miml, SubsetMode::Full, 32, 1),
        spec("p2t2".into(), Variant::P2t2, SubsetMode::Full, 32, 1),
    ];
    for m in SUBSETS {
        v.push(spec(format!("p2t2_m{m}"), Variant::P2t2, SubsetMode::RandomM, m, 1));
    }
    for k in 1..=ENSEMBLE_EXTRA {
        v.push(spec(format!("miml_e{k}"), Variant::Miml, SubsetMode::Full, 32, 1 + k));
    }
    v
}

pub fn cache_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-zoo")
}

pub struct Zoo {
    pub models: ModelSet,
    /// Seconds spent training each model in this process (0 when cached).
    pub train_seconds: Vec<(String, f64)>,
    /// Training seconds recorded when each model was first trained.
    pub recorded_seconds: Vec<(String, f64)>,
    pub generation: GenerationConfig,
}

pub fn training_data(generation: &GenerationConfig) -> Dataset {
    generate_dataset(generation, DATA_SEED).expect("training data")
}

/// Load every zoo model, training the missing ones.
pub fn zoo() -> Zoo {
    let generation = GenerationConfig::default();
    let dir = cache_dir();
    std::fs::create_dir_all(&dir).expect("cache dir");
    let mut data: Option<Dataset> = None;
    let mut set = ModelSet::default();
    let mut train_seconds = Vec::new();
    let mut recorded_seconds = Vec::new();
    let mut extra = Vec::new();
    for s in specs() {
        let tc = TrainConfig {
            seed: s.seed,
            ..TrainConfig::default()
        };
        let key = Key {
            format: MODEL_FORMAT_VERSION,
            generation: &generation,
            data_seed: DATA_SEED,
            variant: s.variant,
            mode: s.mode,
            m: s.m,
            train: &tc,
        };
        let hash = sha256_hex(serde_json::to_string(&key).unwrap().as_bytes());
        let path = dir.join(format!("{}-{}.json", s.name, &hash[..16]));
        let time_path = path.with_extension("seconds");
        let mut took = 0.0;
        let model = match MlpModel::load(&path) {
            Ok(m) => m,
            Err(_) => {
                let data = data.get_or_insert_with(|| {
                    eprintln!("acceptance: generating {} training samples", generation.count);
                    training_data(&generation)
                });
                eprintln!("acceptance: training {} ({} epochs)", s.name, tc.epochs);
                let t0 = Instant::now();
                let m = train(s.variant, data, s.mode, s.m, &tc).expect("training");
                took = t0.elapsed().as_secs_f64();
                eprintln!("acceptance: trained {} in {:.0} s", s.name, took);
                m.save(&path).expect("save model");
                std::fs::write(&time_path, format!("{took}")).expect("save timing");
                m
            }
        };
        train_seconds.push((s.name.clone(), took));
        let recorded = std::fs::read_to_string(&time_path)
            .ok()
            .and_then(|t| t.trim().parse().ok())
            .unwrap_or(f64::NAN);
        recorded_seconds.push((s.name.clone(), recorded));
        set.files.push((format!("{}.json", s.name), sha256_file(&path).unwrap()));
        match (s.variant, s.mode) {
            (Variant::Miml, _) if s.name == "miml" => set.miml = Some(model),
            (Variant::Miml, _) => extra.push(model),
            (Variant::P2t2, SubsetMode::Full) => set.p2t2 = Some(model),
            (Variant::P2t2, SubsetMode::RandomM) => {
                set.p2t2_subset.insert(s.m, model);
            }
        }
    }
    set.miml_ensemble = std::iter::once(set.miml.clone().unwrap()).chain(extra).collect();
    Zoo {
        models: set,
        train_seconds,
        recorded_seconds,
        generation,
    }
}
