//! Shared helpers: seed streams, summary statistics, parameter checksums.

use sha2::{Digest, Sha256};

/// Derives an independent stream seed from a base seed and a stream index.
///
/// SplitMix64 finalizer over `base ^ (stream * odd constant)`; nearby
/// `(base, stream)` pairs map to well-separated outputs, so sub-RNGs seeded
/// this way do not share prefixes.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Percentile with linear interpolation between order statistics.
///
/// Uses the common "linear" convention: rank = q/100 * (n-1), fractional
/// ranks interpolate between the two neighbouring sorted values.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.len() == 1 {
        return sorted[0];
    }
    let rank = (q / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn mean(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "mean of empty slice");
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation (divides by n, not n-1).
pub fn population_std(values: &[f64]) -> f64 {
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    var.sqrt()
}

pub fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

/// SHA-256 hex digest of a parameter vector's little-endian byte image.
/// Bit-identical vectors and only those produce equal checksums.
pub fn param_checksum(params: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for p in params {
        hasher.update(p.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}
