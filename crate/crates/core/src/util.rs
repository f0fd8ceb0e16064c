//! Small helpers shared by the stage writers.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

/// Formats a float with nine significant digits in scientific notation.
///
/// Output is stable across platforms, so stage files stay byte-identical
/// between runs.
pub fn fmt_sig9(value: f64) -> String {
    if value == 0.0 {
        // avoid "-0.00000000e0"
        return "0.00000000e0".to_string();
    }
    format!("{value:.8e}")
}

/// Fixed six-decimal formatting used for correlation cells.
pub fn fmt_fixed6(value: f64) -> String {
    let s = format!("{value:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory followed by a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let dir = dir.unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Population mean and standard deviation.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig9_has_nine_digits() {
        assert_eq!(fmt_sig9(2.0 / std::f64::consts::PI), "6.36619772e-1");
        assert_eq!(fmt_sig9(0.0), "0.00000000e0");
        assert_eq!(fmt_sig9(-0.0), "0.00000000e0");
        assert_eq!(fmt_sig9(1234.5), "1.23450000e3");
    }

    #[test]
    fn fixed6_never_prints_negative_zero() {
        assert_eq!(fmt_fixed6(-1e-9), "0.000000");
        assert_eq!(fmt_fixed6(-0.5), "-0.500000");
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
