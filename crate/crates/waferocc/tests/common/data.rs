//! Synthetic dataset and config-file builders shared across test targets.

use std::path::{Path, PathBuf};
use waferocc::wafer::{generate_synthetic, WaferLabel, WaferMap};

pub const DEFECT_PATTERNS: [WaferLabel; 5] = [
    WaferLabel::Center,
    WaferLabel::EdgeRing,
    WaferLabel::Scratch,
    WaferLabel::Donut,
    WaferLabel::Random,
];

pub fn none_maps(n: usize, seed: u64) -> Vec<WaferMap> {
    (0..n)
        .map(|i| generate_synthetic(WaferLabel::None, 64, 64, seed + i as u64, 0.05).unwrap())
        .collect()
}

/// `per` maps of each defect pattern.
pub fn defect_maps(per: usize, seed: u64) -> Vec<WaferMap> {
    let mut out = Vec::with_capacity(per * DEFECT_PATTERNS.len());
    for pattern in DEFECT_PATTERNS {
        for i in 0..per {
            out.push(generate_synthetic(pattern, 64, 64, seed + i as u64, 0.05).unwrap());
        }
    }
    out
}

/// Writes a key=value config file into `dir` and returns its path.
pub fn write_cfg(dir: &Path, name: &str, pairs: &[(&str, String)]) -> PathBuf {
    let mut text = String::new();
    for (k, v) in pairs {
        text.push_str(&format!("{k}={v}\n"));
    }
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}
