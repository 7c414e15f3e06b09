//! Similarity and goodness-of-fit metrics between cluster masks.
//!
//! For a mask pair with overlap counts `(i, u, r)`:
//!
//! * signal strength `s_I = i / u` — intersection over union, 1 for identical
//!   masks, 0 for disjoint ones;
//! * union quality `q_U = (u - i) / r` — normalized symmetric difference,
//!   0 for identical masks, 1 for disjoint ones;
//! * Dice coefficient `2i / r`, algebraically `1 - q_U`.
//!
//! The goodness of fit of a base mask against a mask from another run is the
//! ratio `s_I / q_U` painted on the union of the two masks. Summing those
//! matrices over every mask from every other run gives the per-pixel
//! stability map `g_map` and its scalar total `g_scalar`, which ranks masks.
//! `q_U` is zero for identical masks, so the ratio uses
//! `max(q_U, epsilon)` and is capped at `ratio_cap` to stay finite.

use thiserror::Error;

use crate::mask::{overlap_counts, ClusterMask, MaskError, MaskId, OverlapCounts};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty union: masks cannot both be empty")]
    ZeroUnion,
    #[error("empty sum: masks cannot both be empty")]
    ZeroSum,
    #[error("masks {a:?} and {b:?} come from the same run {run}")]
    SameRun { a: MaskId, b: MaskId, run: usize },
    #[error("no masks to compare against")]
    EmptyComparisonSet,
    #[error(transparent)]
    Mask(#[from] MaskError),
}

/// Singularity guards for the `s_I / q_U` ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricParams {
    /// Lower bound substituted for `q_U` before dividing.
    pub epsilon: f64,
    /// Upper bound on the ratio itself.
    pub ratio_cap: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            ratio_cap: 1e6,
        }
    }
}

/// Intersection-over-union of a mask pair, in `[0, 1]`.
pub fn signal_strength(counts: &OverlapCounts) -> Result<f64, MetricsError> {
    if counts.u_sum == 0 {
        return Err(MetricsError::ZeroUnion);
    }
    Ok(counts.i_sum as f64 / counts.u_sum as f64)
}

/// Normalized symmetric difference of a mask pair, in `[0, 1]`.
pub fn union_quality(counts: &OverlapCounts) -> Result<f64, MetricsError> {
    if counts.r_sum == 0 {
        return Err(MetricsError::ZeroSum);
    }
    Ok((counts.u_sum - counts.i_sum) as f64 / counts.r_sum as f64)
}

/// Dice coefficient of a mask pair; equals `1 - union_quality` exactly in
/// rational arithmetic.
pub fn dice(counts: &OverlapCounts) -> Result<f64, MetricsError> {
    if counts.r_sum == 0 {
        return Err(MetricsError::ZeroSum);
    }
    Ok(2.0 * counts.i_sum as f64 / counts.r_sum as f64)
}

/// All pairwise scores for one mask comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScore {
    pub s_i: f64,
    pub q_u: f64,
    pub dice: f64,
    /// `s_i / max(q_u, epsilon)`, capped at `ratio_cap`.
    pub ratio: f64,
}

pub fn pair_score(counts: &OverlapCounts, params: &MetricParams) -> Result<PairScore, MetricsError> {
    let s_i = signal_strength(counts)?;
    let q_u = union_quality(counts)?;
    let d = dice(counts)?;
    let ratio = (s_i / q_u.max(params.epsilon)).min(params.ratio_cap);
    Ok(PairScore {
        s_i,
        q_u,
        dice: d,
        ratio,
    })
}

/// Dense real-valued per-pixel field, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }
}

/// Goodness matrix of one mask pair: the capped ratio on the union support,
/// zero elsewhere. The masks must come from different runs.
pub fn g_matrix(
    a: &ClusterMask,
    b: &ClusterMask,
    params: &MetricParams,
) -> Result<ScalarField, MetricsError> {
    check_runs(a, b)?;
    let counts = overlap_counts(a, b)?;
    let score = pair_score(&counts, params)?;
    let mut field = ScalarField::zeros(a.width(), a.height());
    for (wi, (x, y)) in a.grid().words().iter().zip(b.grid().words()).enumerate() {
        let mut w = x | y;
        while w != 0 {
            let px = wi * 64 + w.trailing_zeros() as usize;
            field.values[px] = score.ratio;
            w &= w - 1;
        }
    }
    Ok(field)
}

fn check_runs(a: &ClusterMask, b: &ClusterMask) -> Result<(), MetricsError> {
    if a.id().run == b.id().run {
        return Err(MetricsError::SameRun {
            a: a.id(),
            b: b.id(),
            run: a.id().run,
        });
    }
    Ok(())
}

/// Stacked goodness of one base mask against every mask from every other run.
#[derive(Debug, Clone)]
pub struct GsumResult {
    pub base: MaskId,
    /// Sum of the per-pair goodness matrices.
    pub g_map: ScalarField,
    /// Sum of the per-pair ratios; the ranking key.
    pub g_scalar: f64,
    /// Number of masks compared against.
    pub comparisons: usize,
}

impl GsumResult {
    /// Display view scaled into `[0, 1]` by the map maximum.
    pub fn normalized_map(&self) -> ScalarField {
        let max = self.g_map.values.iter().cloned().fold(0.0f64, f64::max);
        let values = if max > 0.0 {
            self.g_map.values.iter().map(|v| v / max).collect()
        } else {
            self.g_map.values.clone()
        };
        ScalarField {
            width: self.g_map.width,
            height: self.g_map.height,
            values,
        }
    }
}

/// Per-pair ratios against `base`, in ascending `(run, cluster)` order of the
/// compared masks. The fixed order makes every downstream reduction
/// reproducible regardless of scheduling.
fn ordered_ratios<'a>(
    base: &ClusterMask,
    others: &[&'a ClusterMask],
    params: &MetricParams,
) -> Result<Vec<(&'a ClusterMask, f64)>, MetricsError> {
    if others.is_empty() {
        return Err(MetricsError::EmptyComparisonSet);
    }
    let mut order: Vec<&ClusterMask> = others.to_vec();
    order.sort_by_key(|m| m.id());
    let mut out = Vec::with_capacity(order.len());
    for other in order {
        check_runs(base, other)?;
        let counts = overlap_counts(base, other)?;
        let score = pair_score(&counts, params)?;
        out.push((other, score.ratio));
    }
    Ok(out)
}

/// Sums the goodness matrices of `base` against all of `others` and records
/// the scalar total and the comparison count.
pub fn g_sum_matrix(
    base: &ClusterMask,
    others: &[&ClusterMask],
    params: &MetricParams,
) -> Result<GsumResult, MetricsError> {
    let pairs = ordered_ratios(base, others, params)?;
    let mut g_scalar = 0.0;
    for (_, ratio) in &pairs {
        g_scalar += ratio;
    }
    let mut g_map = ScalarField::zeros(base.width(), base.height());
    // Pixels inside the base mask collect every ratio, i.e. exactly g_scalar;
    // pixels outside it collect only the ratios of masks covering them.
    for (other, ratio) in &pairs {
        for (wi, (o, b)) in other
            .grid()
            .words()
            .iter()
            .zip(base.grid().words())
            .enumerate()
        {
            let mut w = o & !b;
            while w != 0 {
                let px = wi * 64 + w.trailing_zeros() as usize;
                g_map.values[px] += ratio;
                w &= w - 1;
            }
        }
    }
    for px in base.grid().iter_ones() {
        g_map.values[px] = g_scalar;
    }
    Ok(GsumResult {
        base: base.id(),
        g_map,
        g_scalar,
        comparisons: pairs.len(),
    })
}

/// Scalar-only variant of [`g_sum_matrix`]; bit-identical to its `g_scalar`.
pub fn g_sum_scalar(
    base: &ClusterMask,
    others: &[&ClusterMask],
    params: &MetricParams,
) -> Result<f64, MetricsError> {
    let pairs = ordered_ratios(base, others, params)?;
    let mut g_scalar = 0.0;
    for (_, ratio) in &pairs {
        g_scalar += ratio;
    }
    Ok(g_scalar)
}
