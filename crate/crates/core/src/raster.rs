//! Multi-channel raster images and the FRST file format.
//!
//! A [`FeatureRaster`] is a `width x height` grid of pixels where each pixel
//! carries a vector of `channels` real-valued features. Storage is
//! channel-major and row-major within a channel. Values are held as `f64` in
//! memory; the FRST format stores IEEE-754 binary32, so a load/save round
//! trip is the identity on any raster whose values are binary32-representable
//! (true for every raster that came from a file).
//!
//! FRST layout (little-endian): magic `FRST`, `u32` version (1), `u32` width,
//! `u32` height, `u32` channels, then `channels * height * width` binary32
//! values, channel-major, row-major within a channel. Channel names travel in
//! an optional sidecar text file `<path>.names`, one name per line.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

const MAGIC: &[u8; 4] = b"FRST";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: bad magic {found:?}, expected \"FRST\"")]
    BadMagic { path: PathBuf, found: [u8; 4] },
    #[error("{path}: unsupported FRST version {version}")]
    BadVersion { path: PathBuf, version: u32 },
    #[error("{path}: truncated payload: expected {expected} bytes after the header, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },
    #[error("{path}: non-finite value in channel {channel} at pixel {index}")]
    NonFiniteInFile {
        path: PathBuf,
        channel: usize,
        index: usize,
    },
    #[error("non-finite value in channel {channel} at pixel {index}")]
    NonFinite { channel: usize, index: usize },
    #[error("invalid raster dimensions {width}x{height}x{channels}")]
    BadDimensions {
        width: usize,
        height: usize,
        channels: usize,
    },
    #[error("data length {got} does not match {width}x{height}x{channels} = {expected}")]
    BadDataLength {
        got: usize,
        expected: usize,
        width: usize,
        height: usize,
        channels: usize,
    },
    #[error("{got} channel names supplied for {channels} channels")]
    BadNameCount { got: usize, channels: usize },
    #[error("{path}: sidecar lists {got} names for {channels} channels")]
    SidecarMismatch {
        path: PathBuf,
        got: usize,
        channels: usize,
    },
    #[error("channel {channel} ({name}) is constant and cannot be normalized")]
    DegenerateChannel { channel: usize, name: String },
    #[error("stats cover {stats_channels} channels but raster has {raster_channels}")]
    StatsMismatch {
        stats_channels: usize,
        raster_channels: usize,
    },
    #[error("no rasters supplied")]
    EmptyInput,
    #[error("rasters disagree on channel count: {a} vs {b}")]
    ChannelMismatch { a: usize, b: usize },
    #[error("raster dimensions exceed the format limit (u32)")]
    TooLarge,
}

fn io_err(path: &Path, source: io::Error) -> RasterError {
    RasterError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Grid of pixels carrying real-valued feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRaster {
    width: usize,
    height: usize,
    channels: usize,
    channel_names: Vec<String>,
    data: Vec<f64>,
}

impl FeatureRaster {
    /// Builds a raster, validating dimensions, data length, and finiteness.
    /// `names` defaults to `c0, c1, ...` when `None`.
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        names: Option<Vec<String>>,
        data: Vec<f64>,
    ) -> Result<Self, RasterError> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(RasterError::BadDimensions {
                width,
                height,
                channels,
            });
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or(RasterError::TooLarge)?;
        if data.len() != expected {
            return Err(RasterError::BadDataLength {
                got: data.len(),
                expected,
                width,
                height,
                channels,
            });
        }
        let pixels = width * height;
        for (i, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(RasterError::NonFinite {
                    channel: i / pixels,
                    index: i % pixels,
                });
            }
        }
        let channel_names = match names {
            Some(n) => {
                if n.len() != channels {
                    return Err(RasterError::BadNameCount {
                        got: n.len(),
                        channels,
                    });
                }
                n
            }
            None => default_names(channels),
        };
        Ok(Self {
            width,
            height,
            channels,
            channel_names,
            data,
        })
    }

    /// Single-channel raster, mainly for exporting per-pixel score maps.
    pub fn single_channel(
        width: usize,
        height: usize,
        name: &str,
        values: Vec<f64>,
    ) -> Result<Self, RasterError> {
        Self::new(width, height, 1, Some(vec![name.to_string()]), values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    /// All values, channel-major, row-major within a channel.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// One channel as a row-major slice of `width * height` values.
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.n_pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.channel(channel)[row * self.width + col]
    }
}

fn default_names(channels: usize) -> Vec<String> {
    (0..channels).map(|c| format!("c{c}")).collect()
}

fn names_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".names");
    PathBuf::from(s)
}

/// Reads a FRST raster. Values are bit-exactly the file's binary32 contents,
/// widened to `f64`.
pub fn load_raster(path: impl AsRef<Path>) -> Result<FeatureRaster, RasterError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() < HEADER_LEN {
        return Err(RasterError::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    if &bytes[0..4] != MAGIC {
        let mut found = [0u8; 4];
        found.copy_from_slice(&bytes[0..4]);
        return Err(RasterError::BadMagic {
            path: path.to_path_buf(),
            found,
        });
    }
    let read_u32 = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = read_u32(4);
    if version != VERSION {
        return Err(RasterError::BadVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let width = read_u32(8) as usize;
    let height = read_u32(12) as usize;
    let channels = read_u32(16) as usize;
    if width == 0 || height == 0 || channels == 0 {
        return Err(RasterError::BadDimensions {
            width,
            height,
            channels,
        });
    }
    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or(RasterError::TooLarge)?;
    let expected = (count as u64) * 4;
    let found = (bytes.len() - HEADER_LEN) as u64;
    if found < expected {
        return Err(RasterError::Truncated {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    let pixels = width * height;
    let mut data = Vec::with_capacity(count);
    for (i, chunk) in bytes[HEADER_LEN..HEADER_LEN + count * 4]
        .chunks_exact(4)
        .enumerate()
    {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(RasterError::NonFiniteInFile {
                path: path.to_path_buf(),
                channel: i / pixels,
                index: i % pixels,
            });
        }
        data.push(v as f64);
    }
    let names = load_names(path, channels)?;
    FeatureRaster::new(width, height, channels, names, data)
}

fn load_names(path: &Path, channels: usize) -> Result<Option<Vec<String>>, RasterError> {
    let sidecar = names_path(path);
    if !sidecar.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&sidecar).map_err(|e| io_err(&sidecar, e))?;
    let names: Vec<String> = text.lines().map(|l| l.trim().to_string()).collect();
    if names.len() != channels {
        return Err(RasterError::SidecarMismatch {
            path: sidecar,
            got: names.len(),
            channels,
        });
    }
    Ok(Some(names))
}

/// Writes a raster as FRST plus the `<path>.names` sidecar. Values are stored
/// as binary32; `f64` values outside binary32 precision are rounded.
pub fn save_raster(raster: &FeatureRaster, path: impl AsRef<Path>) -> Result<(), RasterError> {
    let path = path.as_ref();
    if raster.width > u32::MAX as usize
        || raster.height > u32::MAX as usize
        || raster.channels > u32::MAX as usize
    {
        return Err(RasterError::TooLarge);
    }
    let mut bytes = Vec::with_capacity(HEADER_LEN + raster.data.len() * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(raster.width as u32).to_le_bytes());
    bytes.extend_from_slice(&(raster.height as u32).to_le_bytes());
    bytes.extend_from_slice(&(raster.channels as u32).to_le_bytes());
    for v in &raster.data {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, &bytes).map_err(|e| io_err(path, e))?;
    let sidecar = names_path(path);
    let mut text = raster.channel_names.join("\n");
    text.push('\n');
    fs::write(&sidecar, text).map_err(|e| io_err(&sidecar, e))?;
    Ok(())
}

/// Per-channel location/scale removed by normalization; keeps the transform
/// invertible.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    means: Vec<f64>,
    scales: Vec<f64>,
    names: Vec<String>,
}

impl NormStats {
    pub fn channels(&self) -> usize {
        self.means.len()
    }

    pub fn mean(&self, c: usize) -> f64 {
        self.means[c]
    }

    /// Population standard deviation of channel `c`; always > 0.
    pub fn scale(&self, c: usize) -> f64 {
        self.scales[c]
    }
}

impl fmt::Display for NormStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in 0..self.channels() {
            writeln!(
                f,
                "{}: mean={} scale={}",
                self.names[c], self.means[c], self.scales[c]
            )?;
        }
        Ok(())
    }
}

/// Computes per-channel mean and population standard deviation over the
/// concatenated pixels of all supplied rasters.
pub fn norm_stats(rasters: &[&FeatureRaster]) -> Result<NormStats, RasterError> {
    let first = *rasters.first().ok_or(RasterError::EmptyInput)?;
    let channels = first.channels;
    for r in rasters {
        if r.channels != channels {
            return Err(RasterError::ChannelMismatch {
                a: channels,
                b: r.channels,
            });
        }
    }
    let mut means = Vec::with_capacity(channels);
    let mut scales = Vec::with_capacity(channels);
    for c in 0..channels {
        let n: usize = rasters.iter().map(|r| r.n_pixels()).sum();
        let sum: f64 = rasters.iter().flat_map(|r| r.channel(c)).sum();
        let mean = sum / n as f64;
        let ss: f64 = rasters
            .iter()
            .flat_map(|r| r.channel(c))
            .map(|v| (v - mean) * (v - mean))
            .sum();
        let var = ss / n as f64;
        if var == 0.0 {
            return Err(RasterError::DegenerateChannel {
                channel: c,
                name: first.channel_names[c].clone(),
            });
        }
        means.push(mean);
        scales.push(var.sqrt());
    }
    Ok(NormStats {
        means,
        scales,
        names: first.channel_names.clone(),
    })
}

/// Applies a z-score transform with precomputed stats. When `clip` is set,
/// values are clamped to `[-clip, clip]` after scaling.
pub fn apply_norm(
    raster: &FeatureRaster,
    stats: &NormStats,
    clip: Option<f64>,
) -> Result<FeatureRaster, RasterError> {
    if stats.channels() != raster.channels {
        return Err(RasterError::StatsMismatch {
            stats_channels: stats.channels(),
            raster_channels: raster.channels,
        });
    }
    let n = raster.n_pixels();
    let mut data = Vec::with_capacity(raster.data.len());
    for c in 0..raster.channels {
        let mean = stats.means[c];
        let inv = 1.0 / stats.scales[c];
        for v in raster.channel(c) {
            let mut z = (v - mean) * inv;
            if let Some(k) = clip {
                z = z.clamp(-k, k);
            }
            data.push(z);
        }
    }
    debug_assert_eq!(data.len(), raster.channels * n);
    FeatureRaster::new(
        raster.width,
        raster.height,
        raster.channels,
        Some(raster.channel_names.clone()),
        data,
    )
}

/// Per-channel z-score with population standard deviation. Returns the
/// normalized raster (each channel mean 0, deviation 1) and the removed stats.
pub fn normalize(raster: &FeatureRaster) -> Result<(FeatureRaster, NormStats), RasterError> {
    let stats = norm_stats(&[raster])?;
    let out = apply_norm(raster, &stats, None)?;
    Ok((out, stats))
}

/// Inverts [`apply_norm`] (without clipping).
pub fn denormalize(
    raster: &FeatureRaster,
    stats: &NormStats,
) -> Result<FeatureRaster, RasterError> {
    if stats.channels() != raster.channels {
        return Err(RasterError::StatsMismatch {
            stats_channels: stats.channels(),
            raster_channels: raster.channels,
        });
    }
    let mut data = Vec::with_capacity(raster.data.len());
    for c in 0..raster.channels {
        let mean = stats.means[c];
        let scale = stats.scales[c];
        for v in raster.channel(c) {
            data.push(v * scale + mean);
        }
    }
    FeatureRaster::new(
        raster.width,
        raster.height,
        raster.channels,
        Some(raster.channel_names.clone()),
        data,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frst_bytes(width: u32, height: u32, channels: u32, values: &[f32]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"FRST");
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&width.to_le_bytes());
        b.extend_from_slice(&height.to_le_bytes());
        b.extend_from_slice(&channels.to_le_bytes());
        for v in values {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn load_golden_4x2x1() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.frst");
        let values: Vec<f32> = (0..8).map(|v| v as f32).collect();
        fs::write(&path, frst_bytes(4, 2, 1, &values)).unwrap();
        let r = load_raster(&path).unwrap();
        assert_eq!((r.width(), r.height(), r.channels()), (4, 2, 1));
        assert_eq!(r.data(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(r.channel_names(), &["c0".to_string()]);
    }

    #[test]
    fn load_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.frst");
        let mut bytes = frst_bytes(1, 1, 1, &[0.0]);
        bytes[0..4].copy_from_slice(b"XXXX");
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_raster(&path),
            Err(RasterError::BadMagic { .. })
        ));
    }

    #[test]
    fn load_rejects_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.frst");
        // Declares 10x10x3 but carries only 100 floats.
        let values = vec![0.0f32; 100];
        fs::write(&path, frst_bytes(10, 10, 3, &values)).unwrap();
        match load_raster(&path) {
            Err(RasterError::Truncated {
                expected, found, ..
            }) => {
                assert_eq!(expected, 1200);
                assert_eq!(found, 400);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_non_finite() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.frst");
        fs::write(&path, frst_bytes(2, 1, 1, &[1.0, f32::NAN])).unwrap();
        assert!(matches!(
            load_raster(&path),
            Err(RasterError::NonFiniteInFile {
                channel: 0,
                index: 1,
                ..
            })
        ));
    }

    #[test]
    fn load_rejects_missing_file() {
        assert!(matches!(
            load_raster("/nonexistent/nowhere.frst"),
            Err(RasterError::Io { .. })
        ));
    }

    #[test]
    fn save_writes_header_plus_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.frst");
        let r = FeatureRaster::new(5, 4, 3, None, vec![1.5; 60]).unwrap();
        save_raster(&r, &path).unwrap();
        let len = fs::metadata(&path).unwrap().len();
        assert_eq!(len, 20 + 4 * 5 * 4 * 3);
    }

    #[test]
    fn save_to_empty_path_fails() {
        let r = FeatureRaster::new(1, 1, 1, None, vec![0.0]).unwrap();
        assert!(matches!(save_raster(&r, ""), Err(RasterError::Io { .. })));
    }

    #[test]
    fn sidecar_roundtrips_names() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("named.frst");
        let names = vec!["b_perp".to_string(), "j_par".to_string()];
        let r = FeatureRaster::new(2, 1, 2, Some(names.clone()), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        save_raster(&r, &path).unwrap();
        let back = load_raster(&path).unwrap();
        assert_eq!(back.channel_names(), names.as_slice());
    }

    #[test]
    fn sidecar_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.frst");
        fs::write(&path, frst_bytes(1, 1, 2, &[0.0, 1.0])).unwrap();
        fs::write(names_path(&path), "only_one\n").unwrap();
        assert!(matches!(
            load_raster(&path),
            Err(RasterError::SidecarMismatch { got: 1, .. })
        ));
    }

    #[test]
    fn normalize_golden_three_values() {
        let r = FeatureRaster::new(3, 1, 1, None, vec![1.0, 2.0, 3.0]).unwrap();
        let (out, stats) = normalize(&r).unwrap();
        let expected = 1.224_744_871_391_589_1;
        assert!((out.data()[0] + expected).abs() < 1e-12);
        assert!(out.data()[1].abs() < 1e-12);
        assert!((out.data()[2] - expected).abs() < 1e-12);
        assert!((stats.mean(0) - 2.0).abs() < 1e-12);
        assert!((stats.scale(0) - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn normalize_output_has_unit_stats() {
        let data: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin() * 5.0 + 3.0).collect();
        let r = FeatureRaster::new(100, 10, 1, None, data).unwrap();
        let (out, _) = normalize(&r).unwrap();
        let n = out.n_pixels() as f64;
        let mean: f64 = out.channel(0).iter().sum::<f64>() / n;
        let var: f64 = out.channel(0).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn normalize_is_idempotent() {
        let data: Vec<f64> = (0..64).map(|i| (i as f64).cos() * 2.5 - 1.0).collect();
        let r = FeatureRaster::new(8, 8, 1, None, data).unwrap();
        let (once, _) = normalize(&r).unwrap();
        let (twice, _) = normalize(&once).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_channel_is_rejected_by_name() {
        let names = vec!["flat".to_string()];
        let r = FeatureRaster::new(3, 1, 1, Some(names), vec![5.0, 5.0, 5.0]).unwrap();
        match normalize(&r) {
            Err(RasterError::DegenerateChannel { channel: 0, name }) => assert_eq!(name, "flat"),
            other => panic!("expected degenerate channel error, got {other:?}"),
        }
    }

    #[test]
    fn clipping_bounds_the_output() {
        let mut data = vec![0.0; 100];
        data[0] = 1000.0;
        let r = FeatureRaster::new(10, 10, 1, None, data).unwrap();
        let stats = norm_stats(&[&r]).unwrap();
        let out = apply_norm(&r, &stats, Some(3.0)).unwrap();
        assert!(out.data().iter().all(|v| v.abs() <= 3.0));
    }

    #[test]
    fn stats_over_multiple_rasters_match_concatenation() {
        let a = FeatureRaster::new(2, 2, 1, None, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = FeatureRaster::new(2, 1, 1, None, vec![10.0, 20.0]).unwrap();
        let joint = norm_stats(&[&a, &b]).unwrap();
        let concat =
            FeatureRaster::new(6, 1, 1, None, vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0]).unwrap();
        let direct = norm_stats(&[&concat]).unwrap();
        assert!((joint.mean(0) - direct.mean(0)).abs() < 1e-12);
        assert!((joint.scale(0) - direct.scale(0)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn save_load_roundtrip_is_identity(
            width in 1usize..9,
            height in 1usize..9,
            channels in 1usize..4,
            seed in any::<u32>(),
        ) {
            // Values on the binary32 grid, as the format stores them.
            let count = width * height * channels;
            let mut x = seed;
            let data: Vec<f64> = (0..count)
                .map(|_| {
                    x = x.wrapping_mul(1664525).wrapping_add(1013904223);
                    ((x as f32 / u32::MAX as f32) * 200.0 - 100.0) as f64
                })
                .collect();
            let r = FeatureRaster::new(width, height, channels, None, data).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("rt.frst");
            save_raster(&r, &path).unwrap();
            let back = load_raster(&path).unwrap();
            prop_assert_eq!(r, back);
        }

        #[test]
        fn denormalize_recovers_input(
            scale in 0.01f64..100.0,
            offset in -50.0f64..50.0,
        ) {
            let data: Vec<f64> = (0..32).map(|i| (i as f64 * 0.7).sin() * scale + offset).collect();
            let r = FeatureRaster::new(32, 1, 1, None, data).unwrap();
            let (norm, stats) = normalize(&r).unwrap();
            let back = denormalize(&norm, &stats).unwrap();
            for (a, b) in r.data().iter().zip(back.data()) {
                let tol = 1e-6 * a.abs().max(1.0);
                prop_assert!((a - b).abs() <= tol);
            }
        }
    }
}
