//! Consensus segmentation of multi-channel raster images.
//!
//! Single-shot unsupervised clusterings of the same image rarely agree: map
//! size, learning rate, initialization, and sampling order all nudge the
//! resulting segments around. This crate stabilizes them by brute force.
//! It trains many independent self-organizing maps on the pixel feature
//! vectors, converts every run's clusters into boolean masks, and stacks
//! each mask against every mask from every other run using
//! intersection/union/sum overlap algebra. Masks that keep detecting the
//! same structure reinforce each other; one-off segments do not. The stacked
//! per-pixel goodness maps rank the masks, a sharp drop in the ranking
//! separates signal from noise, and thresholding the maps yields consensus
//! region-of-interest masks with per-pixel reliability values.
//!
//! The pipeline, end to end:
//!
//! 1. [`raster`] — load a multi-channel image and z-score its channels.
//! 2. [`som`] — train one SOM per parameter combination; label pixels by
//!    grouping neurons.
//! 3. [`mask`] — split each labeling into bit-packed cluster masks.
//! 4. [`metrics`] — score mask pairs (signal strength, union quality, Dice)
//!    and stack goodness maps.
//! 5. [`ensemble`] — orchestrate runs, rank masks, detect the signal/noise
//!    gap, threshold consensus masks, and compare independent ensembles.
//! 6. [`synth`] — generate ground-truthed synthetic rasters for testing.
//!
//! ```
//! use sce_core::ensemble::{run_sce, EnsembleConfig};
//! use sce_core::raster::normalize;
//! use sce_core::som::SomConfig;
//! use sce_core::synth::{generate, SynthConfig};
//!
//! let (raster, _truth) = generate(&SynthConfig {
//!     width: 24,
//!     height: 24,
//!     n_islands: 1,
//!     island_radius: (4.0, 4.0),
//!     n_sheets: 0,
//!     sheet_thickness: (1.0, 2.0),
//!     noise_sigma: 0.2,
//!     seed: 3,
//! })
//! .unwrap();
//! let (normalized, _stats) = normalize(&raster).unwrap();
//!
//! let runs = (0..3)
//!     .map(|_| SomConfig {
//!         iterations: 200,
//!         join_k: 2,
//!         ..SomConfig::with_dims(3, 3)
//!     })
//!     .collect();
//! let output = run_sce(&normalized, &EnsembleConfig::new(7, runs)).unwrap();
//! assert_eq!(output.results.len(), output.ranking.len());
//! assert!(output.cutoff_rank >= 1);
//! ```

pub mod ensemble;
pub mod mask;
pub mod metrics;
pub mod raster;
pub mod rng;
pub mod som;
pub mod synth;

pub use ensemble::{EnsembleConfig, SceOutput};
pub use mask::{ClusterMask, MaskId, MaskSet, OverlapCounts};
pub use metrics::{GsumResult, MetricParams, PairScore};
pub use raster::{FeatureRaster, NormStats};
pub use som::{Labeling, SomConfig, SomMap};
pub use synth::SynthConfig;
