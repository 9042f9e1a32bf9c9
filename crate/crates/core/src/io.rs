//! Small file-format helpers shared by the dataset, model and report writers.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Format with 17 significant digits, enough for an exact f64 round trip.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Replace the extension of `stem`, keeping any dots in the file name.
pub fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Strip a trailing `.csv` or `.json` so either file of a pair names the pair.
pub fn pair_stem(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") | Some("json") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

pub(crate) fn parse_f64(field: &str, path: &Path, row: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|e| Error::Corrupt {
        path: path.to_path_buf(),
        reason: format!("row {row}: `{field}`: {e}"),
    })
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn fmt17_round_trips(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let back: f64 = fmt17(x).parse().unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn pair_stem_strips_known_extensions() {
        assert_eq!(pair_stem(Path::new("a/b.csv")), PathBuf::from("a/b"));
        assert_eq!(pair_stem(Path::new("a/b.json")), PathBuf::from("a/b"));
        assert_eq!(pair_stem(Path::new("a/b")), PathBuf::from("a/b"));
        assert_eq!(with_suffix(Path::new("a/b.v1"), ".csv"), PathBuf::from("a/b.v1.csv"));
    }
}
