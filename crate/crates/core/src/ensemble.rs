//! The full consensus pipeline: run independent SOM clusterings, stack every
//! mask against every mask from every other run, rank masks by their stacked
//! goodness, cut the ranking at the first sharp drop, and threshold the
//! stacked maps into consensus region-of-interest masks.
//!
//! Everything downstream of the per-run seeds is deterministic: runs execute
//! concurrently but derive their seeds from the master seed by index, and all
//! floating-point reductions happen in a fixed order, so identical inputs
//! give identical outputs at any worker count.

use rayon::prelude::*;
use thiserror::Error;

use crate::mask::{labeling_from_masks, masks_from_labeling, overlap_counts, ClusterMask, MaskError, MaskId, MaskSet};
use crate::metrics::{g_sum_matrix, pair_score, GsumResult, MetricParams, MetricsError, PairScore};
use crate::raster::FeatureRaster;
use crate::rng::derive_seed;
use crate::som::{init_map, label_pixels, train, PixelSet, SomConfig, SomError};

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("stacking requires >= 2 runs, got {0}")]
    TooFewRuns(usize),
    #[error("run {run}: {source}")]
    Run {
        run: usize,
        #[source]
        source: SomError,
    },
    #[error("invalid SOM config for run {run}: {source}")]
    RunConfig {
        run: usize,
        #[source]
        source: SomError,
    },
    #[error("duplicate run index {0} across mask sets")]
    DuplicateRun(usize),
    #[error("gap detection needs at least 2 ranked entries, got {0}")]
    TooFewRanked(usize),
    #[error("gap_delta must lie in (0, 1), got {0}")]
    BadGapDelta(f64),
    #[error("threshold must be positive, got {0}")]
    BadThreshold(f64),
    #[error("threshold {tau} leaves mask {base:?} empty: no pixel exceeds it")]
    EmptyThreshold { tau: f64, base: MaskId },
    #[error("no input rasters")]
    EmptyInput,
    #[error("raster dimensions differ: {a_width}x{a_height} vs {b_width}x{b_height}")]
    DimensionMismatch {
        a_width: usize,
        a_height: usize,
        b_width: usize,
        b_height: usize,
    },
    #[error("tau lists differ between the two ensembles")]
    TauMismatch,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

/// Configuration of a whole ensemble: the per-run SOM parameter grid plus the
/// stacking, ranking, and thresholding knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub master_seed: u64,
    /// One SOM config per run; seeds are overridden with
    /// `derive_seed(master_seed, run_index)`.
    pub run_configs: Vec<SomConfig>,
    /// Lower bound substituted for `q_U` in the goodness ratio.
    pub epsilon: f64,
    /// Upper bound on the goodness ratio.
    pub ratio_cap: f64,
    /// Relative drop that ends the ranked head, in (0, 1).
    pub gap_delta: f64,
    /// Contour cutoffs applied to each selected stacked map.
    pub thresholds: Vec<f64>,
}

impl EnsembleConfig {
    pub fn new(master_seed: u64, run_configs: Vec<SomConfig>) -> Self {
        Self {
            master_seed,
            run_configs,
            epsilon: 1e-6,
            ratio_cap: 1e6,
            gap_delta: 0.5,
            thresholds: vec![1.0, 2.0],
        }
    }

    pub fn metric_params(&self) -> MetricParams {
        MetricParams {
            epsilon: self.epsilon,
            ratio_cap: self.ratio_cap,
        }
    }

    pub fn validate(&self) -> Result<(), EnsembleError> {
        if self.run_configs.len() < 2 {
            return Err(EnsembleError::TooFewRuns(self.run_configs.len()));
        }
        for (run, cfg) in self.run_configs.iter().enumerate() {
            cfg.validate()
                .map_err(|source| EnsembleError::RunConfig { run, source })?;
        }
        if !(self.gap_delta > 0.0 && self.gap_delta < 1.0) {
            return Err(EnsembleError::BadGapDelta(self.gap_delta));
        }
        for &tau in &self.thresholds {
            if !(tau > 0.0) {
                return Err(EnsembleError::BadThreshold(tau));
            }
        }
        Ok(())
    }
}

fn run_one(
    run: usize,
    config: &EnsembleConfig,
    pixels: &PixelSet,
    rasters: &[&FeatureRaster],
) -> Result<Vec<MaskSet>, EnsembleError> {
    let mut cfg = config.run_configs[run].clone();
    cfg.seed = derive_seed(config.master_seed, run as u64);
    let wrap = |source| EnsembleError::Run { run, source };
    let map = init_map(&cfg, pixels).map_err(wrap)?;
    let map = train(map, pixels, &cfg).map_err(wrap)?;
    rasters
        .iter()
        .map(|raster| {
            let labeling = label_pixels(&map, raster, &cfg).map_err(wrap)?;
            Ok(masks_from_labeling(&labeling, run))
        })
        .collect()
}

/// Trains one SOM per run config (concurrently) on the raster and converts
/// each trained map into its cluster mask set. Output order follows the
/// config order; run `i` uses seed `derive_seed(master_seed, i)`.
pub fn run_ensemble(
    raster: &FeatureRaster,
    config: &EnsembleConfig,
) -> Result<Vec<MaskSet>, EnsembleError> {
    config.validate()?;
    let pixels = PixelSet::from_raster(raster);
    let per_run: Vec<Vec<MaskSet>> = (0..config.run_configs.len())
        .into_par_iter()
        .map(|run| run_one(run, config, &pixels, &[raster]))
        .collect::<Result<_, _>>()?;
    Ok(per_run.into_iter().map(|mut v| v.remove(0)).collect())
}

/// Multi-snapshot variant: trains each run on the concatenated pixels of all
/// snapshots, then labels every snapshot separately. Returns one mask-set
/// vector per snapshot, each ordered by run.
pub fn run_ensemble_stacked(
    rasters: &[&FeatureRaster],
    config: &EnsembleConfig,
) -> Result<Vec<Vec<MaskSet>>, EnsembleError> {
    config.validate()?;
    if rasters.is_empty() {
        return Err(EnsembleError::EmptyInput);
    }
    let pixels = PixelSet::from_rasters(rasters).map_err(|source| EnsembleError::Run {
        run: 0,
        source,
    })?;
    let per_run: Vec<Vec<MaskSet>> = (0..config.run_configs.len())
        .into_par_iter()
        .map(|run| run_one(run, config, &pixels, rasters))
        .collect::<Result<_, _>>()?;
    // Transpose [run][snapshot] to [snapshot][run].
    let n_snapshots = rasters.len();
    let mut out: Vec<Vec<MaskSet>> = (0..n_snapshots).map(|_| Vec::new()).collect();
    for run_sets in per_run {
        for (snap, set) in run_sets.into_iter().enumerate() {
            out[snap].push(set);
        }
    }
    Ok(out)
}

/// Rotates every mask set through the base role: each mask is stacked against
/// every mask from every other run. Returns one result per mask, ordered by
/// `(run, cluster)`. Base masks are processed concurrently; per-base
/// reductions run in fixed order, so the output is schedule-independent.
pub fn stack(
    mask_sets: &[MaskSet],
    params: &MetricParams,
) -> Result<Vec<GsumResult>, EnsembleError> {
    if mask_sets.len() < 2 {
        return Err(EnsembleError::TooFewRuns(mask_sets.len()));
    }
    let mut runs_seen = std::collections::BTreeSet::new();
    for set in mask_sets {
        if !runs_seen.insert(set.run) {
            return Err(EnsembleError::DuplicateRun(set.run));
        }
    }
    let all: Vec<&ClusterMask> = mask_sets.iter().flat_map(|s| s.masks.iter()).collect();
    let mut bases = all.clone();
    bases.sort_by_key(|m| m.id());
    bases
        .par_iter()
        .map(|base| {
            let others: Vec<&ClusterMask> = all
                .iter()
                .copied()
                .filter(|m| m.id().run != base.id().run)
                .collect();
            g_sum_matrix(base, &others, params).map_err(EnsembleError::from)
        })
        .collect()
}

/// Indices into `results` sorted by descending `g_scalar`; ties break by
/// ascending `(run, cluster)`.
pub fn rank(results: &[GsumResult]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..results.len()).collect();
    order.sort_by(|&a, &b| {
        results[b]
            .g_scalar
            .total_cmp(&results[a].g_scalar)
            .then_with(|| results[a].base.cmp(&results[b].base))
    });
    order
}

/// Finds the first sharp relative drop in a descending goodness sequence:
/// the smallest count `k` such that `g[k] < (1 - gap_delta) * g[k-1]`.
/// Entries past the cutoff are only weakly correlated with the rest of the
/// ensemble. Returns the sequence length when no such drop exists.
pub fn detect_gap(ranked_g: &[f64], gap_delta: f64) -> Result<usize, EnsembleError> {
    if ranked_g.len() < 2 {
        return Err(EnsembleError::TooFewRanked(ranked_g.len()));
    }
    if !(gap_delta > 0.0 && gap_delta < 1.0) {
        return Err(EnsembleError::BadGapDelta(gap_delta));
    }
    for i in 0..ranked_g.len() - 1 {
        if ranked_g[i + 1] < (1.0 - gap_delta) * ranked_g[i] {
            return Ok(i + 1);
        }
    }
    Ok(ranked_g.len())
}

/// Splits a descending goodness sequence into contiguous groups at every
/// relative drop larger than `gap_delta`. A heuristic aid for spotting masks
/// that detected the same structure; inspect the groups rather than trusting
/// them blindly.
pub fn group_by_gaps(ranked_g: &[f64], gap_delta: f64) -> Result<Vec<std::ops::Range<usize>>, EnsembleError> {
    if ranked_g.is_empty() {
        return Ok(Vec::new());
    }
    if !(gap_delta > 0.0 && gap_delta < 1.0) {
        return Err(EnsembleError::BadGapDelta(gap_delta));
    }
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 0..ranked_g.len() - 1 {
        if ranked_g[i + 1] < (1.0 - gap_delta) * ranked_g[i] {
            groups.push(start..i + 1);
            start = i + 1;
        }
    }
    groups.push(start..ranked_g.len());
    Ok(groups)
}

/// Quantizes a stacked goodness map back into a boolean mask: true where
/// `g_map > tau`. Fails if no pixel clears the threshold.
pub fn threshold_mask(result: &GsumResult, tau: f64) -> Result<ClusterMask, EnsembleError> {
    if !(tau > 0.0) {
        return Err(EnsembleError::BadThreshold(tau));
    }
    let mut grid = crate::mask::BitMatrix::zeros(result.g_map.width, result.g_map.height)?;
    for (i, &v) in result.g_map.values.iter().enumerate() {
        if v > tau {
            grid.set(i);
        }
    }
    ClusterMask::new(result.base, grid).map_err(|_| EnsembleError::EmptyThreshold {
        tau,
        base: result.base,
    })
}

/// One consensus region-of-interest mask: a selected base mask's stacked map
/// thresholded at `tau`.
#[derive(Debug, Clone)]
pub struct ConsensusMask {
    pub tau: f64,
    /// Index into [`SceOutput::results`].
    pub result_index: usize,
    pub mask: ClusterMask,
}

/// Everything the pipeline produces for one input raster.
#[derive(Debug, Clone)]
pub struct SceOutput {
    pub mask_sets: Vec<MaskSet>,
    /// One stacked result per mask, ordered by `(run, cluster)`.
    pub results: Vec<GsumResult>,
    /// Indices into `results`, best first.
    pub ranking: Vec<usize>,
    /// Ranks below this index are selected; the rest sit past the gap.
    pub cutoff_rank: usize,
    /// Consensus masks for every selected rank and configured threshold.
    /// Ranks whose map never clears a threshold are skipped with a notice.
    pub consensus: Vec<ConsensusMask>,
}

impl SceOutput {
    pub fn ranked_g(&self) -> Vec<f64> {
        self.ranking
            .iter()
            .map(|&i| self.results[i].g_scalar)
            .collect()
    }
}

/// Stacks, ranks, gap-cuts, and thresholds an already-computed set of mask
/// sets.
pub fn stack_and_rank(
    mask_sets: Vec<MaskSet>,
    config: &EnsembleConfig,
) -> Result<SceOutput, EnsembleError> {
    let params = config.metric_params();
    let results = stack(&mask_sets, &params)?;
    let ranking = rank(&results);
    let ranked_g: Vec<f64> = ranking.iter().map(|&i| results[i].g_scalar).collect();
    let cutoff_rank = detect_gap(&ranked_g, config.gap_delta)?;
    let mut consensus = Vec::new();
    for &result_index in &ranking[..cutoff_rank] {
        for &tau in &config.thresholds {
            match threshold_mask(&results[result_index], tau) {
                Ok(mask) => consensus.push(ConsensusMask {
                    tau,
                    result_index,
                    mask,
                }),
                Err(EnsembleError::EmptyThreshold { base, .. }) => {
                    log::info!("mask {base:?}: stacked map never exceeds tau={tau}, skipped");
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(SceOutput {
        mask_sets,
        results,
        ranking,
        cutoff_rank,
        consensus,
    })
}

/// The whole pipeline for one normalized raster.
pub fn run_sce(raster: &FeatureRaster, config: &EnsembleConfig) -> Result<SceOutput, EnsembleError> {
    let mask_sets = run_ensemble(raster, config)?;
    stack_and_rank(mask_sets, config)
}

/// Signal-strength scores of one mask pair across two ensembles.
#[derive(Debug, Clone, Copy)]
pub struct PairRow {
    pub a: MaskId,
    pub b: MaskId,
    pub score: PairScore,
}

/// All pairwise comparisons at one threshold.
#[derive(Debug, Clone)]
pub struct TauComparison {
    pub tau: f64,
    pub rows: Vec<PairRow>,
}

/// Cross-ensemble comparison table: consensus-vs-consensus per threshold,
/// plus the raw SOM-vs-SOM baseline across the two underlying run sets.
#[derive(Debug, Clone)]
pub struct EnsembleComparison {
    pub sce: Vec<TauComparison>,
    pub som: Vec<PairRow>,
}

impl EnsembleComparison {
    /// Median best-match signal strength over the consensus masks of both
    /// sides at the given threshold index.
    pub fn sce_median(&self, tau_index: usize) -> Option<f64> {
        best_match_median(&self.sce[tau_index].rows)
    }

    /// Median best-match signal strength over the raw SOM masks of both
    /// sides.
    pub fn som_median(&self) -> Option<f64> {
        best_match_median(&self.som)
    }
}

/// For every distinct mask on either side, its best signal strength against
/// the opposite side; returns the median of those best matches.
pub fn best_match_median(rows: &[PairRow]) -> Option<f64> {
    use std::collections::BTreeMap;
    if rows.is_empty() {
        return None;
    }
    let mut best_a: BTreeMap<MaskId, f64> = BTreeMap::new();
    let mut best_b: BTreeMap<MaskId, f64> = BTreeMap::new();
    for row in rows {
        let ba = best_a.entry(row.a).or_insert(0.0);
        *ba = ba.max(row.score.s_i);
        let bb = best_b.entry(row.b).or_insert(0.0);
        *bb = bb.max(row.score.s_i);
    }
    let mut values: Vec<f64> = best_a.values().chain(best_b.values()).copied().collect();
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

fn cross_scores(a: &[&ClusterMask], b: &[&ClusterMask]) -> Result<Vec<PairRow>, EnsembleError> {
    let params = MetricParams::default();
    let mut rows = Vec::with_capacity(a.len() * b.len());
    for ma in a {
        for mb in b {
            let counts = overlap_counts(ma, mb)?;
            let score = pair_score(&counts, &params)?;
            rows.push(PairRow {
                a: ma.id(),
                b: mb.id(),
                score,
            });
        }
    }
    Ok(rows)
}

fn check_dims(a: &ClusterMask, b: &ClusterMask) -> Result<(), EnsembleError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(EnsembleError::DimensionMismatch {
            a_width: a.width(),
            a_height: a.height(),
            b_width: b.width(),
            b_height: b.height(),
        });
    }
    Ok(())
}

/// Compares two ensembles given their consensus masks per threshold and their
/// raw per-run masks. The file-based CLI path feeds this directly.
pub fn compare_collections(
    a_consensus: &[(f64, Vec<ClusterMask>)],
    a_som: &[&ClusterMask],
    b_consensus: &[(f64, Vec<ClusterMask>)],
    b_som: &[&ClusterMask],
) -> Result<EnsembleComparison, EnsembleError> {
    if a_consensus.len() != b_consensus.len()
        || a_consensus
            .iter()
            .zip(b_consensus)
            .any(|((ta, _), (tb, _))| ta != tb)
    {
        return Err(EnsembleError::TauMismatch);
    }
    if let (Some(a), Some(b)) = (a_som.first(), b_som.first()) {
        check_dims(a, b)?;
    }
    let mut sce = Vec::with_capacity(a_consensus.len());
    for ((tau, a_masks), (_, b_masks)) in a_consensus.iter().zip(b_consensus) {
        if let (Some(a), Some(b)) = (a_masks.first(), b_masks.first()) {
            check_dims(a, b)?;
        }
        let a_refs: Vec<&ClusterMask> = a_masks.iter().collect();
        let b_refs: Vec<&ClusterMask> = b_masks.iter().collect();
        sce.push(TauComparison {
            tau: *tau,
            rows: cross_scores(&a_refs, &b_refs)?,
        });
    }
    let som = cross_scores(a_som, b_som)?;
    Ok(EnsembleComparison { sce, som })
}

/// Compares two pipeline outputs: re-thresholds each side's selected stacked
/// maps at every `tau` and scores all consensus pairs, plus the raw
/// SOM-vs-SOM baseline.
pub fn compare_ensembles(
    a: &SceOutput,
    b: &SceOutput,
    taus: &[f64],
) -> Result<EnsembleComparison, EnsembleError> {
    let collect = |out: &SceOutput| -> Result<Vec<(f64, Vec<ClusterMask>)>, EnsembleError> {
        taus.iter()
            .map(|&tau| {
                let mut masks = Vec::new();
                for &idx in &out.ranking[..out.cutoff_rank] {
                    match threshold_mask(&out.results[idx], tau) {
                        Ok(m) => masks.push(m),
                        Err(EnsembleError::EmptyThreshold { .. }) => {}
                        Err(e) => return Err(e),
                    }
                }
                Ok((tau, masks))
            })
            .collect()
    };
    let a_consensus = collect(a)?;
    let b_consensus = collect(b)?;
    let a_som: Vec<&ClusterMask> = a.mask_sets.iter().flat_map(|s| s.masks.iter()).collect();
    let b_som: Vec<&ClusterMask> = b.mask_sets.iter().flat_map(|s| s.masks.iter()).collect();
    compare_collections(&a_consensus, &a_som, &b_consensus, &b_som)
}

/// Rebuilds per-run labelings from mask sets, for exporting.
pub fn labelings_of(mask_sets: &[MaskSet]) -> Result<Vec<crate::som::Labeling>, EnsembleError> {
    mask_sets
        .iter()
        .map(|s| labeling_from_masks(s).map_err(EnsembleError::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::BitMatrix;
    use crate::metrics::ScalarField;
    use crate::som::Labeling;

    fn mask_from(bits: &[u8], run: usize, cluster: usize) -> ClusterMask {
        let bools: Vec<bool> = bits.iter().map(|&b| b != 0).collect();
        ClusterMask::new(
            MaskId::new(run, cluster),
            BitMatrix::from_bits(bits.len(), 1, &bools).unwrap(),
        )
        .unwrap()
    }

    fn set_from_labels(labels: &[u32], n: usize, run: usize) -> MaskSet {
        let labeling = Labeling::new(labels.len(), 1, labels.to_vec(), n).unwrap();
        masks_from_labeling(&labeling, run)
    }

    fn tiny_ensemble_config(runs: usize) -> EnsembleConfig {
        let run_configs = (0..runs)
            .map(|_| SomConfig {
                map_rows: 3,
                map_cols: 3,
                alpha0: 0.6,
                alpha_final: 0.05,
                sigma0: 1.5,
                sigma_final: 1.0,
                iterations: 60,
                join_k: 2,
                seed: 0,
            })
            .collect();
        EnsembleConfig::new(99, run_configs)
    }

    fn tiny_raster() -> FeatureRaster {
        let (raster, _) = crate::synth::generate(&crate::synth::SynthConfig {
            width: 16,
            height: 16,
            n_islands: 1,
            island_radius: (3.0, 3.0),
            n_sheets: 0,
            sheet_thickness: (1.0, 1.0),
            noise_sigma: 0.1,
            seed: 5,
        })
        .unwrap();
        let (norm, _) = crate::raster::normalize(&raster).unwrap();
        norm
    }

    #[test]
    fn stack_counts_follow_the_rotation_rule() {
        // Two runs with 2 and 3 masks.
        let sets = vec![
            set_from_labels(&[0, 0, 1, 1, 1, 0], 2, 0),
            set_from_labels(&[0, 1, 2, 2, 1, 0], 3, 1),
        ];
        let results = stack(&sets, &MetricParams::default()).unwrap();
        assert_eq!(results.len(), 5);
        for r in &results {
            let expected = if r.base.run == 0 { 3 } else { 2 };
            assert_eq!(r.comparisons, expected, "base {:?}", r.base);
        }
        let total: usize = results.iter().map(|r| r.comparisons).sum();
        // sum over bases of n_b * (total - n_b) = 2*3 + 3*2.
        assert_eq!(total, 12);
    }

    #[test]
    fn stack_requires_two_runs() {
        let sets = vec![set_from_labels(&[0, 1], 2, 0)];
        assert!(matches!(
            stack(&sets, &MetricParams::default()),
            Err(EnsembleError::TooFewRuns(1))
        ));
    }

    #[test]
    fn stack_rejects_duplicate_run_ids() {
        let sets = vec![
            set_from_labels(&[0, 1], 2, 3),
            set_from_labels(&[1, 0], 2, 3),
        ];
        assert!(matches!(
            stack(&sets, &MetricParams::default()),
            Err(EnsembleError::DuplicateRun(3))
        ));
    }

    #[test]
    fn stack_is_order_independent() {
        let sets = vec![
            set_from_labels(&[0, 0, 1, 1, 2, 2, 0, 1], 3, 0),
            set_from_labels(&[0, 1, 1, 0, 2, 2, 2, 0], 3, 1),
            set_from_labels(&[1, 1, 0, 0, 0, 1, 1, 0], 2, 2),
        ];
        let forward = stack(&sets, &MetricParams::default()).unwrap();
        let shuffled_sets = vec![sets[2].clone(), sets[0].clone(), sets[1].clone()];
        let shuffled = stack(&shuffled_sets, &MetricParams::default()).unwrap();
        assert_eq!(forward.len(), shuffled.len());
        for (a, b) in forward.iter().zip(&shuffled) {
            assert_eq!(a.base, b.base);
            assert_eq!(a.g_scalar.to_bits(), b.g_scalar.to_bits());
        }
    }

    #[test]
    fn rank_sorts_descending_with_id_ties() {
        let mk = |run, g| GsumResult {
            base: MaskId::new(run, 0),
            g_map: ScalarField::zeros(1, 1),
            g_scalar: g,
            comparisons: 1,
        };
        let results = vec![mk(0, 4.0), mk(1, 0.1), mk(2, 7.5)];
        assert_eq!(rank(&results), vec![2, 0, 1]);
        let equal = vec![mk(0, 1.0), mk(1, 1.0), mk(2, 1.0)];
        assert_eq!(rank(&equal), vec![0, 1, 2]);
    }

    #[test]
    fn detect_gap_examples() {
        assert_eq!(detect_gap(&[10.0, 9.5, 9.0, 0.5], 0.5).unwrap(), 3);
        assert_eq!(detect_gap(&[10.0, 1.0, 0.9], 0.5).unwrap(), 1);
        let geometric: Vec<f64> = (0..50).map(|i| 0.99f64.powi(i)).collect();
        assert_eq!(detect_gap(&geometric, 0.5).unwrap(), geometric.len());
        assert!(matches!(
            detect_gap(&[1.0], 0.5),
            Err(EnsembleError::TooFewRanked(1))
        ));
        assert!(matches!(
            detect_gap(&[1.0, 0.5], 1.5),
            Err(EnsembleError::BadGapDelta(_))
        ));
    }

    #[test]
    fn group_by_gaps_splits_at_drops() {
        let groups = group_by_gaps(&[10.0, 9.5, 9.0, 0.5, 0.4], 0.5).unwrap();
        assert_eq!(groups, vec![0..3, 3..5]);
        let one = group_by_gaps(&[5.0, 4.9], 0.5).unwrap();
        assert_eq!(one, vec![0..2]);
    }

    #[test]
    fn threshold_mask_golden_and_empty() {
        let base = mask_from(&[1, 1, 0, 0], 0, 0);
        let b1 = mask_from(&[0, 1, 1, 0], 1, 0);
        let b2 = mask_from(&[1, 1, 1, 0], 2, 0);
        let result = g_sum_matrix(&base, &[&b1, &b2], &MetricParams::default()).unwrap();
        // Summed ratios are 4.0 on pixels 0..3.
        let mask = threshold_mask(&result, 1.0).unwrap();
        assert_eq!(mask.popcount(), 3);
        assert!(mask.get(0) && mask.get(1) && mask.get(2) && !mask.get(3));
        match threshold_mask(&result, 100.0) {
            Err(EnsembleError::EmptyThreshold { tau, .. }) => assert_eq!(tau, 100.0),
            other => panic!("expected empty threshold error, got {other:?}"),
        }
        assert!(matches!(
            threshold_mask(&result, 0.0),
            Err(EnsembleError::BadThreshold(_))
        ));
    }

    #[test]
    fn threshold_masks_stay_inside_the_union_support() {
        let sets = vec![
            set_from_labels(&[0, 0, 1, 1, 2, 2, 0, 1], 3, 0),
            set_from_labels(&[0, 1, 1, 0, 2, 2, 2, 0], 3, 1),
        ];
        let results = stack(&sets, &MetricParams::default()).unwrap();
        for result in &results {
            let mask = match threshold_mask(result, 0.5) {
                Ok(m) => m,
                Err(_) => continue,
            };
            for px in mask.grid().iter_ones() {
                let base_or_other = sets
                    .iter()
                    .flat_map(|s| &s.masks)
                    .filter(|m| m.id() == result.base || m.id().run != result.base.run)
                    .any(|m| m.get(px));
                assert!(base_or_other, "pixel {px} outside the stacked support");
            }
        }
    }

    #[test]
    fn run_ensemble_is_deterministic_and_ordered() {
        let raster = tiny_raster();
        let config = tiny_ensemble_config(2);
        let a = run_ensemble(&raster, &config).unwrap();
        let b = run_ensemble(&raster, &config).unwrap();
        assert_eq!(a.len(), 2);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.run, y.run);
            assert_eq!(x.masks.len(), y.masks.len());
            for (ma, mb) in x.masks.iter().zip(&y.masks) {
                assert_eq!(ma, mb);
            }
        }
        assert_eq!(a[0].run, 0);
        assert_eq!(a[1].run, 1);
    }

    #[test]
    fn run_ensemble_needs_two_configs() {
        let raster = tiny_raster();
        let mut config = tiny_ensemble_config(2);
        config.run_configs.truncate(1);
        assert!(matches!(
            run_ensemble(&raster, &config),
            Err(EnsembleError::TooFewRuns(1))
        ));
    }

    #[test]
    fn paper_style_grid_yields_fifteen_sets() {
        let raster = tiny_raster();
        let mut run_configs = Vec::new();
        for alpha in [0.6, 0.7, 0.8] {
            for iterations in [20, 40, 60, 80, 100] {
                run_configs.push(SomConfig {
                    map_rows: 3,
                    map_cols: 2,
                    alpha0: alpha,
                    alpha_final: 0.01,
                    sigma0: 1.5,
                    sigma_final: 1.0,
                    iterations,
                    join_k: 2,
                    seed: 0,
                });
            }
        }
        let config = EnsembleConfig::new(1, run_configs);
        let sets = run_ensemble(&raster, &config).unwrap();
        assert_eq!(sets.len(), 15);
    }

    #[test]
    fn stacked_mode_labels_each_snapshot() {
        let raster_a = tiny_raster();
        let raster_b = tiny_raster();
        let config = tiny_ensemble_config(2);
        let per_snapshot = run_ensemble_stacked(&[&raster_a, &raster_b], &config).unwrap();
        assert_eq!(per_snapshot.len(), 2);
        for sets in &per_snapshot {
            assert_eq!(sets.len(), 2);
        }
        // Identical snapshots must give identical labelings.
        for (a, b) in per_snapshot[0].iter().zip(&per_snapshot[1]) {
            assert_eq!(a.masks.len(), b.masks.len());
            for (ma, mb) in a.masks.iter().zip(&b.masks) {
                assert_eq!(ma.grid(), mb.grid());
            }
        }
    }

    #[test]
    fn tiny_pipeline_matches_brute_force() {
        // stack() against a naive materialized implementation.
        let sets = vec![
            set_from_labels(&[0, 0, 1, 1, 2, 2, 0, 1], 3, 0),
            set_from_labels(&[0, 1, 1, 0, 2, 2, 2, 0], 3, 1),
            set_from_labels(&[1, 1, 0, 0, 0, 1, 1, 0], 2, 2),
        ];
        let params = MetricParams::default();
        let results = stack(&sets, &params).unwrap();
        for result in &results {
            let (oracle_map, oracle_scalar) = brute_force_gsum(&sets, result.base, &params);
            assert!((result.g_scalar - oracle_scalar).abs() <= 1e-9 * oracle_scalar.abs().max(1.0));
            for (got, want) in result.g_map.values.iter().zip(&oracle_map) {
                assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0));
            }
        }
    }

    fn brute_force_gsum(sets: &[MaskSet], base_id: MaskId, params: &MetricParams) -> (Vec<f64>, f64) {
        let all: Vec<&ClusterMask> = sets.iter().flat_map(|s| s.masks.iter()).collect();
        let base = all.iter().find(|m| m.id() == base_id).unwrap();
        let n = base.width() * base.height();
        let mut others: Vec<&&ClusterMask> =
            all.iter().filter(|m| m.id().run != base_id.run).collect();
        others.sort_by_key(|m| m.id());
        let mut g_map = vec![0.0f64; n];
        let mut g_scalar = 0.0f64;
        for other in others {
            let mut i_sum = 0u64;
            let mut u_sum = 0u64;
            let mut r_sum = 0u64;
            for px in 0..n {
                let (a, b) = (base.get(px), other.get(px));
                u_sum += (a || b) as u64;
                i_sum += (a && b) as u64;
                r_sum += a as u64 + b as u64;
            }
            let s = i_sum as f64 / u_sum as f64;
            let q = u_sum as f64 / r_sum as f64 - i_sum as f64 / r_sum as f64;
            let ratio = (s / q.max(params.epsilon)).min(params.ratio_cap);
            for px in 0..n {
                if base.get(px) || other.get(px) {
                    g_map[px] += ratio;
                }
            }
            g_scalar += ratio;
        }
        (g_map, g_scalar)
    }

    #[test]
    fn comparing_an_output_with_itself_gives_perfect_matches() {
        let raster = tiny_raster();
        let config = tiny_ensemble_config(3);
        let out = run_sce(&raster, &config).unwrap();
        assert!(!out.consensus.is_empty());
        let cmp = compare_ensembles(&out, &out, &[1.0]).unwrap();
        // Every mask on either side has an identical partner.
        use std::collections::BTreeMap;
        let mut best: BTreeMap<(bool, MaskId), f64> = BTreeMap::new();
        for row in cmp.sce[0].rows.iter() {
            let a = best.entry((false, row.a)).or_insert(0.0);
            *a = a.max(row.score.s_i);
            let b = best.entry((true, row.b)).or_insert(0.0);
            *b = b.max(row.score.s_i);
        }
        assert!(best.values().all(|&v| v == 1.0));
        assert_eq!(cmp.sce_median(0), Some(1.0));
        assert_eq!(cmp.som_median(), Some(1.0));
    }

    #[test]
    fn comparison_rejects_mismatched_dimensions() {
        let a = mask_from(&[1, 0, 1], 0, 0);
        let b = mask_from(&[1, 0], 0, 0);
        let err = compare_collections(
            &[(1.0, vec![a.clone()])],
            &[&a],
            &[(1.0, vec![b.clone()])],
            &[&b],
        );
        assert!(matches!(err, Err(EnsembleError::DimensionMismatch { .. })));
    }

    #[test]
    fn best_match_median_on_a_small_table() {
        let score = |s_i| PairScore {
            s_i,
            q_u: 0.0,
            dice: 0.0,
            ratio: 0.0,
        };
        let rows = vec![
            PairRow {
                a: MaskId::new(0, 0),
                b: MaskId::new(1, 0),
                score: score(0.9),
            },
            PairRow {
                a: MaskId::new(0, 0),
                b: MaskId::new(1, 1),
                score: score(0.2),
            },
            PairRow {
                a: MaskId::new(0, 1),
                b: MaskId::new(1, 0),
                score: score(0.4),
            },
            PairRow {
                a: MaskId::new(0, 1),
                b: MaskId::new(1, 1),
                score: score(0.3),
            },
        ];
        // Best per a-mask: 0.9, 0.4. Best per b-mask: 0.9, 0.3.
        // Sorted: 0.3 0.4 0.9 0.9 -> median 0.65.
        let median = best_match_median(&rows).unwrap();
        assert!((median - 0.65).abs() < 1e-12);
    }

    #[test]
    fn full_pipeline_is_deterministic_across_worker_counts() {
        let raster = tiny_raster();
        let config = tiny_ensemble_config(3);
        let run_with = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| run_sce(&raster, &config).unwrap())
        };
        let one = run_with(1);
        let four = run_with(4);
        assert_eq!(one.ranking, four.ranking);
        assert_eq!(one.cutoff_rank, four.cutoff_rank);
        for (a, b) in one.results.iter().zip(&four.results) {
            assert_eq!(a.base, b.base);
            assert_eq!(a.g_scalar.to_bits(), b.g_scalar.to_bits());
            for (x, y) in a.g_map.values.iter().zip(&b.g_map.values) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(one.consensus.len(), four.consensus.len());
        for (a, b) in one.consensus.iter().zip(&four.consensus) {
            assert_eq!(a.mask, b.mask);
        }
    }
}
