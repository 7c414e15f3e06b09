//! Output naming and small format helpers shared by the subcommands.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use sce_core::mask::MaskId;
use sce_core::metrics::ScalarField;

/// Shortest-roundtrip float formatting; stable for byte-identical reruns.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Threshold value as a filename fragment: `1`, `2`, `0p5`.
pub fn fmt_tau(tau: f64) -> String {
    format!("{tau}").replace('.', "p").replace('-', "m")
}

pub fn mask_file_stem(id: MaskId) -> String {
    format!("run{:03}_cluster{:03}", id.run, id.cluster)
}

/// Parses `run###_cluster###` back into a mask id.
pub fn parse_mask_stem(stem: &str) -> Option<MaskId> {
    let rest = stem.strip_prefix("run")?;
    let (run, cluster) = rest.split_once("_cluster")?;
    Some(MaskId::new(run.parse().ok()?, cluster.parse().ok()?))
}

/// First 8 hex chars of the SHA-256 of the config text.
pub fn short_hash(text: &str) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(text.as_bytes());
    digest[..4].iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes a 16-bit PGM rendering of a score map with log scaling, for human
/// viewing of the heavy-tailed stacked values.
pub fn write_pgm16_log(field: &ScalarField, path: &Path) -> Result<()> {
    let max = field.values.iter().cloned().fold(0.0f64, f64::max);
    let denom = (1.0 + max).ln();
    let mut bytes = format!("P5\n{} {}\n65535\n", field.width, field.height).into_bytes();
    for &v in &field.values {
        let scaled = if denom > 0.0 {
            ((1.0 + v.max(0.0)).ln() / denom * 65535.0).round() as u16
        } else {
            0
        };
        bytes.extend_from_slice(&scaled.to_be_bytes());
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_and_mask_names() {
        assert_eq!(fmt_tau(1.0), "1");
        assert_eq!(fmt_tau(2.0), "2");
        assert_eq!(fmt_tau(1.5), "1p5");
        let id = MaskId::new(3, 12);
        assert_eq!(mask_file_stem(id), "run003_cluster012");
        assert_eq!(parse_mask_stem("run003_cluster012"), Some(id));
        assert_eq!(parse_mask_stem("nonsense"), None);
    }

    #[test]
    fn short_hash_is_stable() {
        assert_eq!(short_hash("a"), short_hash("a"));
        assert_ne!(short_hash("a"), short_hash("b"));
        assert_eq!(short_hash("x").len(), 8);
    }
}
