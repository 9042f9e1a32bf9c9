use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{ExperimentReport, ExperimentRun, ModelSet};
use crate::error::{Error, Result};
use crate::io::{ensure_parent, fmt17, sha256_file};
use crate::rng::derive_labeled;
use crate::stats::{Group, Roi, SeparationStats, Summary};

pub const PLOTDATA_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FORMAT_VERSION: u32 = 1;

/// Columns of `biomarkers.csv`. `group` and `m` are empty when not applicable.
pub const PLOTDATA_COLUMNS: [&str; 6] = ["method", "subject", "roi", "group", "m", "biomarker"];

/// One row of the tidy plot-data table.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub method: String,
    pub subject: String,
    pub roi: Roi,
    pub group: Option<Group>,
    pub m: Option<usize>,
    pub biomarker: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSummaryEntry {
    pub method: String,
    pub biomarker: String,
    pub m: Option<usize>,
    pub n_values: usize,
    pub n_failures: usize,
    pub summary: Option<Summary>,
    pub stats: Option<SeparationStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSummary {
    pub format_version: u32,
    pub columns: Vec<String>,
    pub entries: Vec<PlotSummaryEntry>,
}

pub fn plot_rows(report: &ExperimentReport) -> Vec<PlotRow> {
    report
        .methods
        .iter()
        .flat_map(|r| {
            r.values.iter().map(move |v| PlotRow {
                method: r.method.clone(),
                subject: v.subject_id.clone(),
                roi: v.roi,
                group: v.group,
                m: r.m,
                biomarker: v.value,
            })
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Write `biomarkers.csv` and `summary.json` into `dir`; returns both paths.
pub fn export_plotdata(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join("biomarkers.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(PLOTDATA_COLUMNS)?;
    for row in plot_rows(report) {
        w.write_record([
            row.method,
            row.subject,
            row.roi.to_string(),
            row.group.map(|g| g.to_string()).unwrap_or_default(),
            row.m.map(|m| m.to_string()).unwrap_or_default(),
            fmt17(row.biomarker),
        ])?;
    }
    w.flush()?;
    let summary = PlotSummary {
        format_version: PLOTDATA_FORMAT_VERSION,
        columns: PLOTDATA_COLUMNS.iter().map(|s| s.to_string()).collect(),
        entries: report
            .methods
            .iter()
            .map(|r| PlotSummaryEntry {
                method: r.method.clone(),
                biomarker: r.biomarker.clone(),
                m: r.m,
                n_values: r.values.len(),
                n_failures: r.failures.len(),
                summary: r.summary,
                stats: r.stats.clone(),
            })
            .collect(),
    };
    let json_path = dir.join("summary.json");
    write_json(&json_path, &summary)?;
    Ok(vec![csv_path, json_path])
}

fn opt(s: &str) -> Option<&str> {
    if s.is_empty() {
        None
    } else {
        Some(s)
    }
}

pub fn read_plotdata_csv(path: &Path) -> Result<Vec<PlotRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let corrupt = |reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    if r.headers()?.iter().ne(PLOTDATA_COLUMNS) {
        return Err(corrupt("unexpected header".into()));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        out.push(PlotRow {
            method: rec[0].to_string(),
            subject: rec[1].to_string(),
            roi: rec[2].parse()?,
            group: opt(&rec[3]).map(str::parse).transpose()?,
            m: opt(&rec[4])
                .map(|s| s.parse::<usize>().map_err(|e| corrupt(format!("row {}: {e}", i + 1))))
                .transpose()?,
            biomarker: rec[5]
                .parse()
                .map_err(|e| corrupt(format!("row {}: {e}", i + 1)))?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub master: u64,
    pub cohort: u64,
    pub bootstrap: u64,
}

/// `manifest.json` of a run directory. `outputs` lists every reproducible
/// file; `reports/timing.json` is deliberately left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub code_version: String,
    pub config: ExperimentConfig,
    pub seeds: RunSeeds,
    pub models: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

fn digest(root: &Path, path: &Path) -> Result<FileDigest> {
    let rel = path
        .strip_prefix(root)
        .map_err(|_| Error::Config(format!("{} is outside the run directory", path.display())))?;
    Ok(FileDigest {
        path: rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/"),
        sha256: sha256_file(path)?,
    })
}

/// Write a finished run under `dir`: `datasets/`, `models/`, `reports/`,
/// `plotdata/`, then `manifest.json`.
pub fn write_run(dir: &Path, config: &ExperimentConfig, models: &ModelSet, run: &ExperimentRun) -> Result<RunManifest> {
    std::fs::create_dir_all(dir)?;
    let mut outputs = Vec::new();

    let cohort_csv = dir.join("datasets").join("cohort.csv");
    run.cohort.write_csv(&cohort_csv)?;
    outputs.push(cohort_csv);

    let models_index: Vec<FileDigest> = models
        .files
        .iter()
        .map(|(name, sha)| FileDigest {
            path: name.clone(),
            sha256: sha.clone(),
        })
        .collect();
    let index = dir.join("models").join("index.json");
    write_json(&index, &models_index)?;
    outputs.push(index);

    let report = dir.join("reports").join(format!("{}.json", config.experiment));
    write_json(&report, &run.report)?;
    outputs.push(report);
    write_json(&dir.join("reports").join("timing.json"), &run.timings)?;

    outputs.extend(export_plotdata(&run.report, &dir.join("plotdata"))?);

    let manifest = RunManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        seeds: RunSeeds {
            master: config.seed,
            cohort: derive_labeled(config.seed, "cohort"),
            bootstrap: config.bootstrap.seed,
        },
        models: models_index,
        outputs: outputs
            .iter()
            .map(|p| digest(dir, p))
            .collect::<Result<Vec<_>>>()?,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Recompute every declared digest; returns the paths that no longer match.
pub fn verify_run(dir: &Path) -> Result<Vec<String>> {
    let manifest: RunManifest = serde_json::from_reader(File::open(dir.join("manifest.json"))?)?;
    let mut bad = Vec::new();
    for f in &manifest.outputs {
        let path = dir.join(&f.path);
        if !path.exists() || sha256_file(&path)? != f.sha256 {
            bad.push(f.path.clone());
        }
    }
    Ok(bad)
}
