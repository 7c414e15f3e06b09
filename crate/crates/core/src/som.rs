//! Rectangular Kohonen self-organizing maps.
//!
//! A map is a 2-D lattice of neurons, each carrying a weight vector in
//! feature space. Training repeatedly samples a pixel vector, finds the best
//! matching unit (nearest neuron, Euclidean), and pulls the BMU and its grid
//! neighborhood toward the sample. A trained map is converted into a pixel
//! labeling by grouping neurons with k-means and assigning every pixel the
//! group of its BMU.
//!
//! All stochastic steps are driven by seeded streams (see [`crate::rng`]):
//! identical configuration and data give bit-identical maps and labelings at
//! any worker count.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::raster::FeatureRaster;
use crate::rng::{self, tag};

/// Neighborhood weights below this bound leave a neuron unchanged.
pub const NEIGHBORHOOD_CUTOFF: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SomError {
    #[error("training data is empty")]
    EmptyData,
    #[error("vector length {got} does not match map dimensionality {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("map dimensions {rows}x{cols} are invalid")]
    BadMapDims { rows: usize, cols: usize },
    #[error("learning rates must satisfy 0 < alpha_final <= alpha0 < 1, got {alpha0} and {alpha_final}")]
    BadLearningRate { alpha0: f64, alpha_final: f64 },
    #[error("radii must satisfy 1 <= sigma_final <= sigma0, got {sigma0} and {sigma_final}")]
    BadRadius { sigma0: f64, sigma_final: f64 },
    #[error("iteration count must be at least 1")]
    BadIterations,
    #[error("join_k {join_k} outside 2..={max}")]
    BadJoinK { join_k: usize, max: usize },
    #[error("raster has {got} channels but the map expects {expected}")]
    ChannelMismatch { got: usize, expected: usize },
    #[error("labeling is invalid: {reason}")]
    BadLabeling { reason: String },
    #[error("rasters disagree on channel count: {a} vs {b}")]
    PixelChannelMismatch { a: usize, b: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: bad magic {found:?}, expected \"SOM1\"")]
    BadMagic { path: PathBuf, found: [u8; 4] },
    #[error("{path}: truncated map payload: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{path}: non-finite weight at index {index}")]
    NonFiniteWeight { path: PathBuf, index: usize },
}

/// Process parameters of one SOM run.
#[derive(Debug, Clone, PartialEq)]
pub struct SomConfig {
    pub map_rows: usize,
    pub map_cols: usize,
    /// Initial learning rate, in (0, 1).
    pub alpha0: f64,
    /// Final learning rate; the schedule decays linearly.
    pub alpha_final: f64,
    /// Initial neighborhood radius in grid units.
    pub sigma0: f64,
    /// Final neighborhood radius; linear decay.
    pub sigma_final: f64,
    /// Training steps.
    pub iterations: usize,
    /// Number of prototype clusters when joining neurons into labels.
    pub join_k: usize,
    pub seed: u64,
}

impl SomConfig {
    /// Config with customary defaults for a given lattice: alpha 0.6 -> 0.01,
    /// radius half the longer side -> 1, and the 500-steps-per-neuron
    /// training length.
    pub fn with_dims(map_rows: usize, map_cols: usize) -> Self {
        Self {
            map_rows,
            map_cols,
            alpha0: 0.6,
            alpha_final: 0.01,
            sigma0: (map_rows.max(map_cols) as f64 / 2.0).max(1.0),
            sigma_final: 1.0,
            iterations: Self::rule_of_thumb_iterations(map_rows, map_cols),
            join_k: 4,
            seed: 0,
        }
    }

    /// 500 times the neuron count.
    pub fn rule_of_thumb_iterations(map_rows: usize, map_cols: usize) -> usize {
        500 * map_rows * map_cols
    }

    pub fn neuron_count(&self) -> usize {
        self.map_rows * self.map_cols
    }

    pub fn validate(&self) -> Result<(), SomError> {
        if self.map_rows == 0 || self.map_cols == 0 {
            return Err(SomError::BadMapDims {
                rows: self.map_rows,
                cols: self.map_cols,
            });
        }
        if !(self.alpha_final > 0.0 && self.alpha_final <= self.alpha0 && self.alpha0 < 1.0) {
            return Err(SomError::BadLearningRate {
                alpha0: self.alpha0,
                alpha_final: self.alpha_final,
            });
        }
        if !(self.sigma_final >= 1.0 && self.sigma_final <= self.sigma0) {
            return Err(SomError::BadRadius {
                sigma0: self.sigma0,
                sigma_final: self.sigma_final,
            });
        }
        if self.iterations == 0 {
            return Err(SomError::BadIterations);
        }
        if self.join_k < 2 || self.join_k > self.neuron_count() {
            return Err(SomError::BadJoinK {
                join_k: self.join_k,
                max: self.neuron_count(),
            });
        }
        Ok(())
    }

    fn schedule_fraction(&self, t: usize) -> f64 {
        if self.iterations <= 1 {
            0.0
        } else {
            (t as f64 / (self.iterations - 1) as f64).clamp(0.0, 1.0)
        }
    }

    /// Learning rate at step `t`; linear decay alpha0 -> alpha_final.
    pub fn alpha_at(&self, t: usize) -> f64 {
        let f = self.schedule_fraction(t);
        self.alpha0 + (self.alpha_final - self.alpha0) * f
    }

    /// Neighborhood radius at step `t`; linear decay sigma0 -> sigma_final.
    pub fn sigma_at(&self, t: usize) -> f64 {
        let f = self.schedule_fraction(t);
        self.sigma0 + (self.sigma_final - self.sigma0) * f
    }
}

/// Pixel feature vectors in pixel-major layout, the SOM training input.
#[derive(Debug, Clone)]
pub struct PixelSet {
    dim: usize,
    values: Vec<f64>,
}

impl PixelSet {
    pub fn from_raster(raster: &FeatureRaster) -> Self {
        Self::from_rasters(&[raster]).expect("single raster cannot mismatch")
    }

    /// Concatenates the pixels of several rasters (snapshots) into one
    /// training set. All rasters must agree on channel count.
    pub fn from_rasters(rasters: &[&FeatureRaster]) -> Result<Self, SomError> {
        let first = rasters.first().ok_or(SomError::EmptyData)?;
        let dim = first.channels();
        let total: usize = rasters.iter().map(|r| r.n_pixels()).sum();
        let mut values = Vec::with_capacity(total * dim);
        for r in rasters {
            if r.channels() != dim {
                return Err(SomError::PixelChannelMismatch {
                    a: dim,
                    b: r.channels(),
                });
            }
            for p in 0..r.n_pixels() {
                for c in 0..dim {
                    values.push(r.channel(c)[p]);
                }
            }
        }
        Ok(Self { dim, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// 2-D lattice of neuron weight vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SomMap {
    rows: usize,
    cols: usize,
    dim: usize,
    weights: Vec<f64>,
}

impl SomMap {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn neuron_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn weight(&self, neuron: usize) -> &[f64] {
        &self.weights[neuron * self.dim..(neuron + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Grid coordinates (row, col) of a flat neuron index.
    pub fn grid_pos(&self, neuron: usize) -> (usize, usize) {
        (neuron / self.cols, neuron % self.cols)
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Initializes a map by sampling each weight coordinate uniformly from that
/// coordinate's range over the data. Deterministic given the config seed.
pub fn init_map(config: &SomConfig, data: &PixelSet) -> Result<SomMap, SomError> {
    if data.is_empty() {
        return Err(SomError::EmptyData);
    }
    let dim = data.dim();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for i in 0..data.len() {
        for (d, v) in data.row(i).iter().enumerate() {
            lo[d] = lo[d].min(*v);
            hi[d] = hi[d].max(*v);
        }
    }
    let mut rng = rng::stream(rng::derive_seed(config.seed, tag::INIT));
    let count = config.neuron_count();
    let mut weights = Vec::with_capacity(count * dim);
    for _ in 0..count {
        for d in 0..dim {
            weights.push(rng.gen_range(lo[d]..=hi[d]));
        }
    }
    Ok(SomMap {
        rows: config.map_rows,
        cols: config.map_cols,
        dim,
        weights,
    })
}

/// Best matching unit: the neuron with the smallest Euclidean distance to
/// `x`. Ties break toward the lowest flat index.
pub fn bmu(map: &SomMap, x: &[f64]) -> Result<usize, SomError> {
    if x.len() != map.dim {
        return Err(SomError::LengthMismatch {
            got: x.len(),
            expected: map.dim,
        });
    }
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for i in 0..map.neuron_count() {
        let d = squared_distance(x, map.weight(i));
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    Ok(best)
}

/// Gaussian neighborhood weight between the BMU `c` and neuron `i` at step
/// `t`: `exp(-g^2 / (2 sigma(t)^2))` with `g` the Euclidean grid distance.
/// Equals 1 when `i == c` and shrinks with the decaying radius.
pub fn neighborhood_weight(t: usize, c: usize, i: usize, config: &SomConfig) -> f64 {
    let sigma = config.sigma_at(t);
    let (cr, cc) = (c / config.map_cols, c % config.map_cols);
    let (ir, ic) = (i / config.map_cols, i % config.map_cols);
    let dr = cr as f64 - ir as f64;
    let dc = cc as f64 - ic as f64;
    let g2 = dr * dr + dc * dc;
    (-g2 / (2.0 * sigma * sigma)).exp()
}

/// One training update with a single sample: finds the BMU and pulls every
/// neuron with neighborhood weight at least [`NEIGHBORHOOD_CUTOFF`] toward
/// `x` by `alpha(t) * h`. Each updated coordinate stays inside the interval
/// spanned by its old value and the sample because `0 < alpha * h <= 1`.
/// Returns the BMU index.
pub fn train_step(
    map: &mut SomMap,
    x: &[f64],
    t: usize,
    config: &SomConfig,
) -> Result<usize, SomError> {
    let winner = bmu(map, x)?;
    let alpha = config.alpha_at(t);
    let sigma = config.sigma_at(t);
    // h >= cutoff is equivalent to g^2 <= 2 sigma^2 ln(1/cutoff).
    let g2_max = 2.0 * sigma * sigma * (1.0 / NEIGHBORHOOD_CUTOFF).ln();
    let (cr, cc) = (winner / map.cols, winner % map.cols);
    let dim = map.dim;
    for i in 0..map.neuron_count() {
        let (ir, ic) = (i / map.cols, i % map.cols);
        let dr = cr as f64 - ir as f64;
        let dc = cc as f64 - ic as f64;
        let g2 = dr * dr + dc * dc;
        if g2 > g2_max {
            continue;
        }
        let h = (-g2 / (2.0 * sigma * sigma)).exp();
        if h < NEIGHBORHOOD_CUTOFF {
            continue;
        }
        let eta = alpha * h;
        let w = &mut map.weights[i * dim..(i + 1) * dim];
        for (wv, xv) in w.iter_mut().zip(x) {
            *wv += eta * (*xv - *wv);
        }
    }
    Ok(winner)
}

/// Runs the full training schedule: `iterations` steps, each sampling one
/// pixel vector uniformly at random (seeded) and applying [`train_step`].
/// Steps are order-dependent, so training is sequential; distinct runs
/// parallelize at the ensemble level.
pub fn train(mut map: SomMap, data: &PixelSet, config: &SomConfig) -> Result<SomMap, SomError> {
    config.validate()?;
    if data.is_empty() {
        return Err(SomError::EmptyData);
    }
    let mut rng = rng::stream(rng::derive_seed(config.seed, tag::TRAIN));
    for t in 0..config.iterations {
        let pick = rng.gen_range(0..data.len());
        train_step(&mut map, data.row(pick), t, config)?;
    }
    Ok(map)
}

/// Mean Euclidean distance between each sample and its BMU.
pub fn quantization_error(map: &SomMap, data: &PixelSet) -> Result<f64, SomError> {
    if data.is_empty() {
        return Err(SomError::EmptyData);
    }
    let mut total = 0.0;
    for i in 0..data.len() {
        let x = data.row(i);
        let winner = bmu(map, x)?;
        total += squared_distance(x, map.weight(winner)).sqrt();
    }
    Ok(total / data.len() as f64)
}

/// Per-pixel cluster assignment. Labels are surjective onto
/// `0..n_clusters`.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeling {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    n_clusters: usize,
}

impl Labeling {
    pub fn new(
        width: usize,
        height: usize,
        labels: Vec<u32>,
        n_clusters: usize,
    ) -> Result<Self, SomError> {
        if labels.len() != width * height {
            return Err(SomError::BadLabeling {
                reason: format!(
                    "{} labels for {}x{} pixels",
                    labels.len(),
                    width,
                    height
                ),
            });
        }
        if n_clusters == 0 {
            return Err(SomError::BadLabeling {
                reason: "zero clusters".to_string(),
            });
        }
        let mut seen = vec![false; n_clusters];
        for &l in &labels {
            let l = l as usize;
            if l >= n_clusters {
                return Err(SomError::BadLabeling {
                    reason: format!("label {l} out of range for {n_clusters} clusters"),
                });
            }
            seen[l] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(SomError::BadLabeling {
                reason: "some cluster ids never occur".to_string(),
            });
        }
        Ok(Self {
            width,
            height,
            labels,
            n_clusters,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// Pixel count per cluster id.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_clusters];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// Plain k-means on a flat point set. Seeded Forgy initialization over
/// distinct points, nearest-centroid assignment with lowest-index
/// tie-breaking, empty clusters keep their previous centroid.
fn kmeans(
    points: &[f64],
    dim: usize,
    k: usize,
    iterations: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<usize> {
    let n = points.len() / dim;
    let point = |i: usize| &points[i * dim..(i + 1) * dim];

    // Exact-duplicate points cannot seed distinct centroids.
    let mut distinct: Vec<usize> = Vec::new();
    for i in 0..n {
        if !distinct.iter().any(|&j| point(j) == point(i)) {
            distinct.push(i);
        }
    }
    let k_eff = k.min(distinct.len());
    if k_eff < k {
        log::warn!(
            "joining reduced from {k} to {k_eff} clusters: only {} distinct prototype vectors",
            distinct.len()
        );
    }
    // Partial Fisher-Yates over the distinct points.
    for i in 0..k_eff {
        let j = rng.gen_range(i..distinct.len());
        distinct.swap(i, j);
    }
    let mut centroids: Vec<f64> = distinct[..k_eff]
        .iter()
        .flat_map(|&i| point(i).to_vec())
        .collect();
    let centroid = |cs: &[f64], c: usize| cs[c * dim..(c + 1) * dim].to_vec();

    let mut assignment = vec![0usize; n];
    for _ in 0..iterations {
        let mut changed = false;
        for i in 0..n {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k_eff {
                let d = squared_distance(point(i), &centroids[c * dim..(c + 1) * dim]);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k_eff * dim];
        let mut counts = vec![0usize; k_eff];
        for i in 0..n {
            let c = assignment[i];
            counts[c] += 1;
            for d in 0..dim {
                sums[c * dim + d] += point(i)[d];
            }
        }
        for c in 0..k_eff {
            if counts[c] == 0 {
                let keep = centroid(&centroids, c);
                sums[c * dim..(c + 1) * dim].copy_from_slice(&keep);
            } else {
                for d in 0..dim {
                    sums[c * dim + d] /= counts[c] as f64;
                }
            }
        }
        centroids = sums;
    }
    assignment
}

const KMEANS_ITERATIONS: usize = 50;

/// Converts a trained map into a pixel labeling: neurons are grouped into
/// `config.join_k` prototype clusters by seeded k-means, each pixel takes the
/// group of its BMU, and groups that own no pixels are compacted away. If the
/// map has fewer distinct weight vectors than `join_k`, the grouping is
/// reduced with a logged warning rather than failing.
pub fn label_pixels(
    map: &SomMap,
    raster: &FeatureRaster,
    config: &SomConfig,
) -> Result<Labeling, SomError> {
    if raster.channels() != map.dim {
        return Err(SomError::ChannelMismatch {
            got: raster.channels(),
            expected: map.dim,
        });
    }
    let mut rng = rng::stream(rng::derive_seed(config.seed, tag::JOIN));
    let groups = kmeans(
        &map.weights,
        map.dim,
        config.join_k.max(1),
        KMEANS_ITERATIONS,
        &mut rng,
    );
    let pixels = PixelSet::from_raster(raster);
    let raw: Vec<u32> = (0..pixels.len())
        .into_par_iter()
        .map(|p| {
            let winner = bmu(map, pixels.row(p)).expect("pixel dimensionality was checked");
            groups[winner] as u32
        })
        .collect();

    let group_count = groups.iter().max().map_or(1, |&g| g + 1);
    let mut used = vec![false; group_count];
    for &g in &raw {
        used[g as usize] = true;
    }
    let mut remap = vec![u32::MAX; group_count];
    let mut next = 0u32;
    for (g, &u) in used.iter().enumerate() {
        if u {
            remap[g] = next;
            next += 1;
        }
    }
    if (next as usize) < group_count {
        log::debug!(
            "{} of {} neuron groups own no pixels and were compacted away",
            group_count - next as usize,
            group_count
        );
    }
    let labels: Vec<u32> = raw.iter().map(|&g| remap[g as usize]).collect();
    Labeling::new(raster.width(), raster.height(), labels, next as usize)
}

const SOM_MAGIC: &[u8; 4] = b"SOM1";

fn io_err(path: &Path, source: io::Error) -> SomError {
    SomError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `SOM1` format: magic, u32 rows, cols, dim (little-endian), then
/// `rows*cols*dim` binary32 weights, neuron-major. Weights are stored at
/// binary32 precision.
pub fn write_som(map: &SomMap, path: impl AsRef<Path>) -> Result<(), SomError> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(16 + map.weights.len() * 4);
    bytes.extend_from_slice(SOM_MAGIC);
    bytes.extend_from_slice(&(map.rows as u32).to_le_bytes());
    bytes.extend_from_slice(&(map.cols as u32).to_le_bytes());
    bytes.extend_from_slice(&(map.dim as u32).to_le_bytes());
    for w in &map.weights {
        bytes.extend_from_slice(&(*w as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn read_som(path: impl AsRef<Path>) -> Result<SomMap, SomError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() < 16 {
        return Err(SomError::Truncated {
            path: path.to_path_buf(),
            expected: 16,
            found: bytes.len(),
        });
    }
    if &bytes[0..4] != SOM_MAGIC {
        let mut found = [0u8; 4];
        found.copy_from_slice(&bytes[0..4]);
        return Err(SomError::BadMagic {
            path: path.to_path_buf(),
            found,
        });
    }
    let read_u32 = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let rows = read_u32(4) as usize;
    let cols = read_u32(8) as usize;
    let dim = read_u32(12) as usize;
    if rows == 0 || cols == 0 {
        return Err(SomError::BadMapDims { rows, cols });
    }
    let count = rows * cols * dim;
    if bytes.len() - 16 < count * 4 {
        return Err(SomError::Truncated {
            path: path.to_path_buf(),
            expected: count * 4,
            found: bytes.len() - 16,
        });
    }
    let mut weights = Vec::with_capacity(count);
    for (i, chunk) in bytes[16..16 + count * 4].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(SomError::NonFiniteWeight {
                path: path.to_path_buf(),
                index: i,
            });
        }
        weights.push(v as f64);
    }
    Ok(SomMap {
        rows,
        cols,
        dim,
        weights,
    })
}

/// Writes a labeling as PGM (P5) with the cluster id as the gray level, plus
/// a `<path>.counts` sidecar with one `id count` line per cluster.
pub fn write_labeling_pgm(labeling: &Labeling, path: impl AsRef<Path>) -> Result<(), SomError> {
    let path = path.as_ref();
    let maxval = (labeling.n_clusters.saturating_sub(1)).max(1);
    let mut bytes = format!("P5\n{} {}\n{}\n", labeling.width, labeling.height, maxval).into_bytes();
    if maxval < 256 {
        bytes.extend(labeling.labels.iter().map(|&l| l as u8));
    } else {
        for &l in &labeling.labels {
            bytes.extend_from_slice(&(l as u16).to_be_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))?;

    let mut sidecar_path = path.as_os_str().to_os_string();
    sidecar_path.push(".counts");
    let mut text = String::new();
    for (id, count) in labeling.counts().iter().enumerate() {
        text.push_str(&format!("{id} {count}\n"));
    }
    fs::write(PathBuf::from(&sidecar_path), text)
        .map_err(|e| io_err(Path::new(&sidecar_path), e))
}
