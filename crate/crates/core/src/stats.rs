//! Two-group separation statistics on scalar biomarkers.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Roi {
    Body,
    Tail,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::A => "A",
            Group::B => "B",
        })
    }
}

impl FromStr for Group {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" | "control" => Ok(Group::A),
            "B" | "b" | "case" => Ok(Group::B),
            _ => Err(param(format!("unknown group `{s}`"))),
        }
    }
}

impl fmt::Display for Roi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Roi::Body => "body",
            Roi::Tail => "tail",
        })
    }
}

impl FromStr for Roi {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "body" => Ok(Roi::Body),
            "tail" => Ok(Roi::Tail),
            _ => Err(param(format!("unknown roi `{s}`"))),
        }
    }
}

/// One biomarker value for one subject and region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerSample {
    pub group: Group,
    pub subject_id: String,
    pub roi: Roi,
    pub value: f64,
}

impl BiomarkerSample {
    pub fn validate(&self) -> Result<()> {
        if !self.value.is_finite() {
            return Err(param(format!("non-finite biomarker for subject {}", self.subject_id)));
        }
        Ok(())
    }
}

pub fn write_biomarkers(path: &Path, samples: &[BiomarkerSample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["group", "subject_id", "roi", "value"])?;
    for s in samples {
        w.write_record([
            s.group.to_string(),
            s.subject_id.clone(),
            s.roi.to_string(),
            format!("{:.16e}", s.value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `group,subject_id,roi,value` rows.
pub fn read_biomarkers(path: &Path) -> Result<Vec<BiomarkerSample>> {
    let mut r = csv::Reader::from_path(path)?;
    let corrupt = |reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != 4 {
            return Err(corrupt(format!("row {}: expected 4 fields", line + 1)));
        }
        let value: f64 = rec[3]
            .trim()
            .parse()
            .map_err(|_| corrupt(format!("row {}: bad value `{}`", line + 1, &rec[3])))?;
        let s = BiomarkerSample {
            group: rec[0].trim().parse()?,
            subject_id: rec[1].to_string(),
            roi: rec[2].trim().parse()?,
            value,
        };
        s.validate()?;
        out.push(s);
    }
    Ok(out)
}

fn check_groups(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(param("both groups must be non-empty"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(param("biomarker values must be finite"));
    }
    Ok(())
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Twice the Mann–Whitney count of `a < b` pairs, ties scoring one.
fn twice_u(a: &[f64], b: &[f64]) -> u64 {
    let b = sorted(b);
    a.iter()
        .map(|&x| {
            let le = b.partition_point(|&y| y <= x);
            let lt = b.partition_point(|&y| y < x);
            2 * (b.len() - le) as u64 + (le - lt) as u64
        })
        .sum()
}

/// Normalized Mann–Whitney U: `P(a < b) + ½ P(a = b)`. Above 0.5 when group
/// B tends to exceed group A.
pub fn auc(a: &[f64], b: &[f64]) -> Result<f64> {
    check_groups(a, b)?;
    let u = twice_u(a, b);
    let d = 2 * (a.len() * b.len()) as u64;
    // Evaluate the smaller side and complement so auc(a,b) + auc(b,a) == 1.
    Ok(if 2 * u <= d {
        u as f64 / d as f64
    } else {
        1.0 - (d - u) as f64 / d as f64
    })
}

pub const DEFAULT_HELLINGER_BINS: usize = 20;

/// Hellinger distance between equal-width histograms sharing the pooled range.
pub fn hellinger(a: &[f64], b: &[f64], bins: usize) -> Result<f64> {
    check_groups(a, b)?;
    if bins < 2 {
        return Err(param("hellinger needs at least 2 bins"));
    }
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return Ok(0.0);
    }
    let hist = |s: &[f64]| {
        let mut h = vec![0usize; bins];
        for &v in s {
            let k = ((v - lo) / (hi - lo) * bins as f64).floor() as usize;
            h[k.min(bins - 1)] += 1;
        }
        h.into_iter()
            .map(|c| c as f64 / s.len() as f64)
            .collect::<Vec<_>>()
    };
    let (p, q) = (hist(a), hist(b));
    let bc: f64 = p.iter().zip(&q).map(|(x, y)| (x * y).sqrt()).sum();
    Ok((1.0 - bc).max(0.0).sqrt().min(1.0))
}

/// How the KS p-value is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KsMode {
    /// Exact when both groups have at most [`KS_EXACT_MAX`] values.
    #[default]
    Auto,
    Exact,
    Asymptotic,
}

pub const KS_EXACT_MAX: usize = 10;

impl FromStr for KsMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(KsMode::Auto),
            "exact" => Ok(KsMode::Exact),
            "asymptotic" => Ok(KsMode::Asymptotic),
            _ => Err(param(format!("unknown ks mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d: f64,
    pub p_value: f64,
}

/// Sorted pooled sample as (value, from_a) plus the integer statistic
/// `na·nb·D`.
fn ks_lattice(a: &[f64], b: &[f64]) -> (Vec<(f64, bool)>, u64) {
    let mut pooled: Vec<(f64, bool)> = a
        .iter()
        .map(|&v| (v, true))
        .chain(b.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (na, nb) = (a.len() as i64, b.len() as i64);
    let (mut i, mut j, mut d) = (0i64, 0i64, 0u64);
    for (k, &(v, from_a)) in pooled.iter().enumerate() {
        if from_a {
            i += 1;
        } else {
            j += 1;
        }
        let block_end = pooled.get(k + 1).is_none_or(|n| n.0 != v);
        if block_end {
            d = d.max((i * nb - j * na).unsigned_abs());
        }
    }
    (pooled, d)
}

/// Permutation probability that the statistic reaches `d_obs`, by counting
/// lattice paths that stay strictly inside the band at every tie-block end.
fn ks_exact_p(pooled: &[(f64, bool)], na: usize, nb: usize, d_obs: u64) -> f64 {
    if d_obs == 0 {
        return 1.0;
    }
    let inside = |i: usize, j: usize| ((i * nb) as i64 - (j * na) as i64).unsigned_abs() < d_obs;
    // paths[i] = ways to reach (i, k - i) after k pooled values
    let mut paths = vec![0.0f64; na + 1];
    paths[0] = 1.0;
    for k in 0..pooled.len() {
        let mut next = vec![0.0f64; na + 1];
        for i in 0..=na.min(k) {
            let c = paths[i];
            if c == 0.0 {
                continue;
            }
            let j = k - i;
            if i < na {
                next[i + 1] += c;
            }
            if j < nb {
                next[i] += c;
            }
        }
        let block_end = pooled.get(k + 1).is_none_or(|n| n.0 != pooled[k].0);
        if block_end {
            for (i, c) in next.iter_mut().enumerate() {
                if k + 1 >= i && k + 1 - i <= nb && !inside(i, k + 1 - i) {
                    *c = 0.0;
                }
            }
        }
        paths = next;
    }
    let total = binomial(na + nb, na);
    (1.0 - paths[na] / total).clamp(0.0, 1.0)
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Kolmogorov survival function with the small-sample size correction.
pub fn ks_asymptotic_p(d: f64, na: usize, nb: usize) -> f64 {
    let ne = (na * nb) as f64 / (na + nb) as f64;
    let sq = ne.sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut p = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let term = 2.0 * (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        p += sign * term;
        if term < 1e-12 {
            return p.clamp(0.0, 1.0);
        }
        sign = -sign;
    }
    1.0
}

/// Two-sample Kolmogorov–Smirnov statistic and p-value.
pub fn ks_test(a: &[f64], b: &[f64], mode: KsMode) -> Result<KsResult> {
    check_groups(a, b)?;
    let (na, nb) = (a.len(), b.len());
    let (pooled, dint) = ks_lattice(a, b);
    let d = dint as f64 / (na * nb) as f64;
    let exact = match mode {
        KsMode::Exact => true,
        KsMode::Asymptotic => false,
        KsMode::Auto => na.max(nb) <= KS_EXACT_MAX,
    };
    let p_value = if exact {
        ks_exact_p(&pooled, na, nb, dint)
    } else {
        ks_asymptotic_p(d, na, nb)
    };
    Ok(KsResult { d, p_value })
}

/// Group separation summary for one biomarker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationStats {
    pub auc: f64,
    pub hellinger: f64,
    pub ks_d: f64,
    pub ks_p: f64,
    pub n_a: usize,
    pub n_b: usize,
}

pub fn separation(a: &[f64], b: &[f64], bins: usize, mode: KsMode) -> Result<SeparationStats> {
    let ks = ks_test(a, b, mode)?;
    Ok(SeparationStats {
        auc: auc(a, b)?,
        hellinger: hellinger(a, b, bins)?,
        ks_d: ks.d,
        ks_p: ks.p_value,
        n_a: a.len(),
        n_b: b.len(),
    })
}

/// Splits samples by group and computes [`separation`].
pub fn separation_of(samples: &[BiomarkerSample], bins: usize, mode: KsMode) -> Result<SeparationStats> {
    let pick = |g| {
        samples
            .iter()
            .filter(|s| s.group == g)
            .map(|s| s.value)
            .collect::<Vec<_>>()
    };
    separation(&pick(Group::A), &pick(Group::B), bins, mode)
}

/// Median and interquartile range (linear interpolation between order statistics).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub n: usize,
}

pub fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(param("cannot summarize an empty sample"));
    }
    let s = sorted(values);
    let (q1, q3) = (quantile_sorted(&s, 0.25), quantile_sorted(&s, 0.75));
    Ok(Summary {
        median: quantile_sorted(&s, 0.5),
        q1,
        q3,
        iqr: q3 - q1,
        n: s.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn trivial_cases() {
        assert_eq!(auc(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(auc(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap(), 0.5);
        let a = [0.3, 1.0, 2.5];
        assert_eq!(hellinger(&a, &a, 20).unwrap(), 0.0);
        assert_eq!(hellinger(&[0.0, 0.1], &[5.0, 5.1], 20).unwrap(), 1.0);
        assert_eq!(hellinger(&[2.0], &[2.0, 2.0], 20).unwrap(), 0.0);
        let ks = ks_test(&a, &a, KsMode::Auto).unwrap();
        assert_eq!((ks.d, ks.p_value), (0.0, 1.0));
        let ks = ks_test(&a, &a, KsMode::Asymptotic).unwrap();
        assert_eq!((ks.d, ks.p_value), (0.0, 1.0));
        let ks = ks_test(&[1.0, 2.0, 3.0], &[10.0, 11.0, 12.0], KsMode::Auto).unwrap();
        assert_eq!(ks.d, 1.0);
        // exact: only the two fully separated splits out of C(6,3) = 20
        assert!((ks.p_value - 0.1).abs() < 1e-15);
    }

    #[test]
    fn empty_groups_rejected() {
        assert!(auc(&[], &[1.0]).is_err());
        assert!(ks_test(&[1.0], &[], KsMode::Auto).is_err());
        assert!(hellinger(&[1.0], &[2.0], 1).is_err());
    }

    #[test]
    fn asymptotic_is_monotone_in_d() {
        let mut last = 1.0;
        for k in 0..=64 {
            let p = ks_asymptotic_p(k as f64 / 64.0, 8, 8);
            assert!(p <= last);
            last = p;
        }
    }

    #[test]
    fn exact_p_decreases_with_d() {
        let na = 6;
        let nb = 7;
        let pooled: Vec<(f64, bool)> = (0..13).map(|i| (i as f64, i % 2 == 0)).collect();
        let mut last = 1.0;
        for d in 0..=(na * nb) as u64 {
            let p = ks_exact_p(&pooled, na, nb, d);
            assert!(p <= last + 1e-15);
            last = p;
        }
        assert!(last > 0.0);
    }

    #[test]
    fn summary_quartiles() {
        let s = summarize(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!((s.median, s.q1, s.q3, s.iqr), (3.0, 2.0, 4.0, 2.0));
    }

    #[test]
    fn biomarker_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.csv");
        let rows = vec![
            BiomarkerSample {
                group: Group::A,
                subject_id: "s0".into(),
                roi: Roi::Body,
                value: 0.1 + 0.2,
            },
            BiomarkerSample {
                group: Group::B,
                subject_id: "s1".into(),
                roi: Roi::Tail,
                value: 1.0 / 3.0,
            },
        ];
        write_biomarkers(&path, &rows).unwrap();
        assert_eq!(read_biomarkers(&path).unwrap(), rows);
    }

    fn group() -> impl Strategy<Value = Vec<f64>> {
        // a coarse lattice so ties occur
        prop::collection::vec((-20i32..20).prop_map(|v| v as f64 * 0.5), 1..12)
    }

    proptest! {
        #[test]
        fn auc_antisymmetric(a in group(), b in group()) {
            prop_assert_eq!(auc(&a, &b).unwrap() + auc(&b, &a).unwrap(), 1.0);
        }

        #[test]
        fn rank_statistics_ignore_monotone_maps(a in group(), b in group()) {
            let f = |v: &Vec<f64>| v.iter().map(|x| (x * 0.3).exp() * 7.0 - 2.0).collect::<Vec<_>>();
            prop_assert_eq!(auc(&a, &b).unwrap(), auc(&f(&a), &f(&b)).unwrap());
            let k0 = ks_test(&a, &b, KsMode::Auto).unwrap();
            let k1 = ks_test(&f(&a), &f(&b), KsMode::Auto).unwrap();
            prop_assert_eq!(k0, k1);
        }

        #[test]
        fn hellinger_symmetric_and_bounded(a in group(), b in group(), bins in 2usize..40) {
            let h = hellinger(&a, &b, bins).unwrap();
            prop_assert_eq!(h.to_bits(), hellinger(&b, &a, bins).unwrap().to_bits());
            prop_assert!((0.0..=1.0).contains(&h));
        }

        #[test]
        fn ks_p_in_unit_interval(a in group(), b in group()) {
            for mode in [KsMode::Exact, KsMode::Asymptotic] {
                let k = ks_test(&a, &b, mode).unwrap();
                prop_assert!((0.0..=1.0).contains(&k.p_value));
                prop_assert!((0.0..=1.0).contains(&k.d));
            }
        }
    }
}
