//! Boolean cluster masks and their pairwise overlap algebra.
//!
//! Masks are bit-packed, 64 pixels per word, because the stacking stage
//! performs O((sum of cluster counts)^2) pairwise comparisons on full-size
//! images. [`overlap_counts`] is the hot path: a single fused pass of
//! word-parallel population counts, bit-identical to summing the materialized
//! union/intersection/sum matrices.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::som::Labeling;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("mask dimensions differ: {a_width}x{a_height} vs {b_width}x{b_height}")]
    DimensionMismatch {
        a_width: usize,
        a_height: usize,
        b_width: usize,
        b_height: usize,
    },
    #[error("mask {id:?} has no set pixels")]
    EmptyMask { id: MaskId },
    #[error("masks do not partition the image: pixel {index} is covered {count} times")]
    NotAPartition { index: usize, count: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: bad magic {found:?}, expected \"MSK1\"")]
    BadMagic { path: PathBuf, found: [u8; 4] },
    #[error("{path}: truncated mask payload: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("invalid mask dimensions {width}x{height}")]
    BadDimensions { width: usize, height: usize },
    #[error("mask dimensions exceed the format limit (u32)")]
    TooLarge,
}

/// Identifies a mask by the clustering run that produced it and the cluster
/// index within that run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MaskId {
    pub run: usize,
    pub cluster: usize,
}

impl MaskId {
    pub fn new(run: usize, cluster: usize) -> Self {
        Self { run, cluster }
    }
}

/// Bit-packed boolean matrix. Row-major pixel order; bit `i % 64` of word
/// `i / 64` holds pixel `i`. Padding bits past `width * height` stay zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMatrix {
    width: usize,
    height: usize,
    words: Vec<u64>,
}

impl BitMatrix {
    pub fn zeros(width: usize, height: usize) -> Result<Self, MaskError> {
        if width == 0 || height == 0 {
            return Err(MaskError::BadDimensions { width, height });
        }
        let words = (width * height + 63) / 64;
        Ok(Self {
            width,
            height,
            words: vec![0; words],
        })
    }

    pub fn from_bits(width: usize, height: usize, bits: &[bool]) -> Result<Self, MaskError> {
        let mut m = Self::zeros(width, height)?;
        assert_eq!(bits.len(), width * height, "bit count must match dimensions");
        for (i, &b) in bits.iter().enumerate() {
            if b {
                m.set(i);
            }
        }
        Ok(m)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn set(&mut self, index: usize) {
        debug_assert!(index < self.len());
        self.words[index / 64] |= 1u64 << (index % 64);
    }

    pub fn get(&self, index: usize) -> bool {
        self.words[index / 64] >> (index % 64) & 1 == 1
    }

    pub fn get_rc(&self, row: usize, col: usize) -> bool {
        self.get(row * self.width + col)
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    /// Indices of set pixels, ascending.
    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let base = wi * 64;
            std::iter::successors(
                if w == 0 { None } else { Some(w) },
                |w| {
                    let next = w & (w - 1);
                    if next == 0 {
                        None
                    } else {
                        Some(next)
                    }
                },
            )
            .map(move |w| base + w.trailing_zeros() as usize)
        })
    }

    fn same_dims(&self, other: &Self) -> Result<(), MaskError> {
        if self.width != other.width || self.height != other.height {
            return Err(MaskError::DimensionMismatch {
                a_width: self.width,
                a_height: self.height,
                b_width: other.width,
                b_height: other.height,
            });
        }
        Ok(())
    }
}

/// Boolean mask of the pixels belonging to one cluster in one clustering run.
/// Never empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterMask {
    id: MaskId,
    grid: BitMatrix,
}

impl ClusterMask {
    pub fn new(id: MaskId, grid: BitMatrix) -> Result<Self, MaskError> {
        if grid.is_empty() {
            return Err(MaskError::EmptyMask { id });
        }
        Ok(Self { id, grid })
    }

    pub fn id(&self) -> MaskId {
        self.id
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn grid(&self) -> &BitMatrix {
        &self.grid
    }

    pub fn popcount(&self) -> u64 {
        self.grid.count_ones()
    }

    pub fn get(&self, index: usize) -> bool {
        self.grid.get(index)
    }
}

/// All cluster masks produced by one clustering run. The masks partition the
/// image: every pixel is set in exactly one of them.
#[derive(Debug, Clone)]
pub struct MaskSet {
    pub run: usize,
    pub masks: Vec<ClusterMask>,
}

/// Splits a labeling into one mask per cluster id. The output partitions the
/// image because every pixel carries exactly one label.
pub fn masks_from_labeling(labeling: &Labeling, run: usize) -> MaskSet {
    let width = labeling.width();
    let height = labeling.height();
    let mut grids: Vec<BitMatrix> = (0..labeling.n_clusters())
        .map(|_| BitMatrix::zeros(width, height).expect("labeling dimensions are valid"))
        .collect();
    for (i, &label) in labeling.labels().iter().enumerate() {
        grids[label as usize].set(i);
    }
    let masks = grids
        .into_iter()
        .enumerate()
        .map(|(cluster, grid)| ClusterMask {
            id: MaskId::new(run, cluster),
            grid,
        })
        .collect();
    MaskSet { run, masks }
}

/// Inverse of [`masks_from_labeling`]: rebuilds the per-pixel labeling from a
/// partitioning mask set.
pub fn labeling_from_masks(set: &MaskSet) -> Result<Labeling, MaskError> {
    let first = &set.masks[0];
    let (width, height) = (first.width(), first.height());
    let mut labels = vec![u32::MAX; width * height];
    for (cluster, mask) in set.masks.iter().enumerate() {
        first.grid.same_dims(&mask.grid)?;
        for i in mask.grid.iter_ones() {
            if labels[i] != u32::MAX {
                return Err(MaskError::NotAPartition { index: i, count: 2 });
            }
            labels[i] = cluster as u32;
        }
    }
    if let Some(index) = labels.iter().position(|&l| l == u32::MAX) {
        return Err(MaskError::NotAPartition { index, count: 0 });
    }
    Labeling::new(width, height, labels, set.masks.len())
        .map_err(|_| MaskError::NotAPartition { index: 0, count: 0 })
}

/// Pixel-wise union: zero only where both masks are zero.
pub fn mask_union(a: &ClusterMask, b: &ClusterMask) -> Result<BitMatrix, MaskError> {
    a.grid.same_dims(&b.grid)?;
    let words = a
        .grid
        .words
        .iter()
        .zip(&b.grid.words)
        .map(|(x, y)| x | y)
        .collect();
    Ok(BitMatrix {
        width: a.width(),
        height: a.height(),
        words,
    })
}

/// Pixel-wise intersection: one only where both masks are one.
pub fn mask_intersection(a: &ClusterMask, b: &ClusterMask) -> Result<BitMatrix, MaskError> {
    a.grid.same_dims(&b.grid)?;
    let words = a
        .grid
        .words
        .iter()
        .zip(&b.grid.words)
        .map(|(x, y)| x & y)
        .collect();
    Ok(BitMatrix {
        width: a.width(),
        height: a.height(),
        words,
    })
}

/// Pixel-wise sum with values in {0, 1, 2}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SumMatrix {
    pub width: usize,
    pub height: usize,
    pub values: Vec<u8>,
}

pub fn mask_sum(a: &ClusterMask, b: &ClusterMask) -> Result<SumMatrix, MaskError> {
    a.grid.same_dims(&b.grid)?;
    let values = (0..a.grid.len())
        .map(|i| a.get(i) as u8 + b.get(i) as u8)
        .collect();
    Ok(SumMatrix {
        width: a.width(),
        height: a.height(),
        values,
    })
}

/// Element sums of the union, intersection, and sum matrices of a mask pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverlapCounts {
    pub i_sum: u64,
    pub u_sum: u64,
    pub r_sum: u64,
}

/// Fused single-pass overlap counting; never materializes the matrices.
/// `r_sum = u_sum + i_sum` holds exactly because both sums count each common
/// pixel twice in the sum matrix.
pub fn overlap_counts(a: &ClusterMask, b: &ClusterMask) -> Result<OverlapCounts, MaskError> {
    a.grid.same_dims(&b.grid)?;
    let mut i_sum = 0u64;
    let mut u_sum = 0u64;
    for (x, y) in a.grid.words.iter().zip(&b.grid.words) {
        i_sum += (x & y).count_ones() as u64;
        u_sum += (x | y).count_ones() as u64;
    }
    Ok(OverlapCounts {
        i_sum,
        u_sum,
        r_sum: u_sum + i_sum,
    })
}

const MSK_MAGIC: &[u8; 4] = b"MSK1";

fn io_err(path: &Path, source: io::Error) -> MaskError {
    MaskError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `MSK1` format: magic, u32 width, u32 height (little-endian), then
/// `ceil(w*h/8)` bytes of row-major pixels, MSB-first within each byte.
pub fn write_msk(grid: &BitMatrix, path: impl AsRef<Path>) -> Result<(), MaskError> {
    let path = path.as_ref();
    if grid.width > u32::MAX as usize || grid.height > u32::MAX as usize {
        return Err(MaskError::TooLarge);
    }
    let n = grid.len();
    let mut bytes = Vec::with_capacity(12 + (n + 7) / 8);
    bytes.extend_from_slice(MSK_MAGIC);
    bytes.extend_from_slice(&(grid.width as u32).to_le_bytes());
    bytes.extend_from_slice(&(grid.height as u32).to_le_bytes());
    bytes.resize(12 + (n + 7) / 8, 0);
    for i in grid.iter_ones() {
        bytes[12 + i / 8] |= 0x80 >> (i % 8);
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn read_msk(path: impl AsRef<Path>) -> Result<BitMatrix, MaskError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() < 12 {
        return Err(MaskError::Truncated {
            path: path.to_path_buf(),
            expected: 12,
            found: bytes.len(),
        });
    }
    if &bytes[0..4] != MSK_MAGIC {
        let mut found = [0u8; 4];
        found.copy_from_slice(&bytes[0..4]);
        return Err(MaskError::BadMagic {
            path: path.to_path_buf(),
            found,
        });
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if width == 0 || height == 0 {
        return Err(MaskError::BadDimensions { width, height });
    }
    let n = width
        .checked_mul(height)
        .ok_or(MaskError::TooLarge)?;
    let expected = (n + 7) / 8;
    if bytes.len() - 12 < expected {
        return Err(MaskError::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() - 12,
        });
    }
    let mut grid = BitMatrix::zeros(width, height)?;
    for i in 0..n {
        if bytes[12 + i / 8] & (0x80 >> (i % 8)) != 0 {
            grid.set(i);
        }
    }
    Ok(grid)
}

/// Writes a PBM (P4) view for external viewers. Note PBM pads each row to a
/// byte boundary, unlike the flat MSK1 bitstream.
pub fn write_pbm(grid: &BitMatrix, path: impl AsRef<Path>) -> Result<(), MaskError> {
    let path = path.as_ref();
    let mut bytes = format!("P4\n{} {}\n", grid.width, grid.height).into_bytes();
    let row_bytes = (grid.width + 7) / 8;
    let data_start = bytes.len();
    bytes.resize(data_start + row_bytes * grid.height, 0);
    for row in 0..grid.height {
        for col in 0..grid.width {
            if grid.get_rc(row, col) {
                bytes[data_start + row * row_bytes + col / 8] |= 0x80 >> (col % 8);
            }
        }
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}
