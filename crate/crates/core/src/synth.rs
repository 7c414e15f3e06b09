//! Synthetic test rasters with pixel-level ground truth.
//!
//! Generates three-channel images carrying the structure taxonomy the
//! pipeline is meant to segment: a flat background medium, circular islands,
//! and thin sheets (dilated line segments). Channel plateaus are chosen so
//! the classes separate cleanly in feature space against unit-scale noise:
//!
//! | class      | c0    | c1    | c2   |
//! |------------|-------|-------|------|
//! | background | 0     | 0     | 0    |
//! | island     | +2    | +2    | 0    |
//! | sheet      | -2    | -2    | +2   |
//!
//! Ground-truth labels are background 0, island 1, sheet 2, with overlaps
//! resolved sheet-over-island; categories that end up empty are compacted
//! out so the labeling stays surjective.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::raster::FeatureRaster;
use crate::rng;
use crate::som::Labeling;

const PLACEMENT_ATTEMPTS: usize = 1000;
/// Sheet segment length as a fraction of the shorter image side.
const SHEET_LENGTH_FRAC: (f64, f64) = (0.3, 0.7);
const PLATEAUS: [[f64; 3]; 3] = [[0.0, 0.0, 0.0], [2.0, 2.0, 0.0], [-2.0, -2.0, 2.0]];
const CHANNEL_NAMES: [&str; 3] = ["b_perp", "j_par", "j_dot_e"];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid dimensions {width}x{height}")]
    BadDimensions { width: usize, height: usize },
    #[error("invalid range {lo}..{hi} for {what}")]
    BadRange { what: &'static str, lo: f64, hi: f64 },
    #[error("noise_sigma must be non-negative, got {0}")]
    BadNoise(f64),
    #[error("could not place {kind} {index} inside the raster after {attempts} attempts")]
    Placement {
        kind: &'static str,
        index: usize,
        attempts: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub n_islands: usize,
    /// Island radius range in pixels, inclusive.
    pub island_radius: (f64, f64),
    pub n_sheets: usize,
    /// Sheet thickness range in pixels, inclusive.
    pub sheet_thickness: (f64, f64),
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthConfig {
    fn validate(&self) -> Result<(), SynthError> {
        if self.width == 0 || self.height == 0 {
            return Err(SynthError::BadDimensions {
                width: self.width,
                height: self.height,
            });
        }
        let (rlo, rhi) = self.island_radius;
        if !(rlo >= 0.0 && rlo <= rhi) {
            return Err(SynthError::BadRange {
                what: "island radius",
                lo: rlo,
                hi: rhi,
            });
        }
        let (tlo, thi) = self.sheet_thickness;
        if !(tlo >= 0.0 && tlo <= thi) {
            return Err(SynthError::BadRange {
                what: "sheet thickness",
                lo: tlo,
                hi: thi,
            });
        }
        if self.noise_sigma < 0.0 {
            return Err(SynthError::BadNoise(self.noise_sigma));
        }
        Ok(())
    }
}

const BACKGROUND: u8 = 0;
const ISLAND: u8 = 1;
const SHEET: u8 = 2;

/// Generates a raster and its ground-truth labeling, deterministically from
/// the config seed. Values are quantized to binary32 so a saved copy loads
/// back bit-exactly.
pub fn generate(config: &SynthConfig) -> Result<(FeatureRaster, Labeling), SynthError> {
    config.validate()?;
    let (width, height) = (config.width, config.height);
    let mut rng = rng::stream(config.seed);
    let mut classes = vec![BACKGROUND; width * height];

    for index in 0..config.n_islands {
        let (cx, cy, radius) = place_island(config, &mut rng, index)?;
        let r_ceil = radius.ceil() as isize;
        let r2 = radius * radius;
        for dy in -r_ceil..=r_ceil {
            for dx in -r_ceil..=r_ceil {
                if (dx * dx + dy * dy) as f64 <= r2 {
                    let x = cx + dx;
                    let y = cy + dy;
                    classes[y as usize * width + x as usize] = ISLAND;
                }
            }
        }
    }

    for index in 0..config.n_sheets {
        let sheet = place_sheet(config, &mut rng, index)?;
        paint_sheet(&mut classes, width, &sheet);
    }

    let noise = if config.noise_sigma > 0.0 {
        Some(Normal::new(0.0, config.noise_sigma).expect("validated sigma"))
    } else {
        None
    };
    let mut data = Vec::with_capacity(width * height * 3);
    for c in 0..3 {
        for class in &classes {
            let mut v = PLATEAUS[*class as usize][c];
            if let Some(n) = &noise {
                v += n.sample(&mut rng);
            }
            data.push(v as f32 as f64);
        }
    }
    let names = CHANNEL_NAMES.iter().map(|s| s.to_string()).collect();
    let raster = FeatureRaster::new(width, height, 3, Some(names), data)
        .expect("generated data is finite and sized to the grid");

    // Compact away absent categories, keeping the background/island/sheet
    // order, so the labeling stays surjective.
    let mut present = [false; 3];
    for &c in &classes {
        present[c as usize] = true;
    }
    let mut remap = [0u32; 3];
    let mut next = 0u32;
    for (c, &p) in present.iter().enumerate() {
        if p {
            remap[c] = next;
            next += 1;
        }
    }
    let labels: Vec<u32> = classes.iter().map(|&c| remap[c as usize]).collect();
    let labeling = Labeling::new(width, height, labels, next as usize)
        .expect("compacted labels are surjective");
    Ok((raster, labeling))
}

fn place_island(
    config: &SynthConfig,
    rng: &mut rand_chacha::ChaCha8Rng,
    index: usize,
) -> Result<(isize, isize, f64), SynthError> {
    let (width, height) = (config.width as isize, config.height as isize);
    for _ in 0..PLACEMENT_ATTEMPTS {
        let radius = sample_range(rng, config.island_radius);
        let cx = rng.gen_range(0..width);
        let cy = rng.gen_range(0..height);
        let r = radius.ceil() as isize;
        if cx - r >= 0 && cx + r < width && cy - r >= 0 && cy + r < height {
            return Ok((cx, cy, radius));
        }
    }
    Err(SynthError::Placement {
        kind: "island",
        index,
        attempts: PLACEMENT_ATTEMPTS,
    })
}

struct Sheet {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    half_thickness: f64,
}

fn place_sheet(
    config: &SynthConfig,
    rng: &mut rand_chacha::ChaCha8Rng,
    index: usize,
) -> Result<Sheet, SynthError> {
    let (width, height) = (config.width as f64, config.height as f64);
    let side = width.min(height);
    for _ in 0..PLACEMENT_ATTEMPTS {
        let thickness = sample_range(rng, config.sheet_thickness);
        let length = sample_range(
            rng,
            (SHEET_LENGTH_FRAC.0 * side, SHEET_LENGTH_FRAC.1 * side),
        );
        let theta = rng.gen_range(0.0..std::f64::consts::PI);
        let cx = rng.gen_range(0.0..width);
        let cy = rng.gen_range(0.0..height);
        let (dx, dy) = (theta.cos() * length / 2.0, theta.sin() * length / 2.0);
        let sheet = Sheet {
            x1: cx - dx,
            y1: cy - dy,
            x2: cx + dx,
            y2: cy + dy,
            half_thickness: thickness / 2.0,
        };
        let pad = sheet.half_thickness;
        let in_bounds = |x: f64, y: f64| {
            x - pad >= 0.0 && x + pad <= width - 1.0 && y - pad >= 0.0 && y + pad <= height - 1.0
        };
        if in_bounds(sheet.x1, sheet.y1) && in_bounds(sheet.x2, sheet.y2) {
            return Ok(sheet);
        }
    }
    Err(SynthError::Placement {
        kind: "sheet",
        index,
        attempts: PLACEMENT_ATTEMPTS,
    })
}

fn sample_range(rng: &mut rand_chacha::ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

fn paint_sheet(classes: &mut [u8], width: usize, sheet: &Sheet) {
    let height = classes.len() / width;
    let pad = sheet.half_thickness.ceil() + 1.0;
    let x_lo = (sheet.x1.min(sheet.x2) - pad).max(0.0) as usize;
    let x_hi = ((sheet.x1.max(sheet.x2) + pad) as usize).min(width - 1);
    let y_lo = (sheet.y1.min(sheet.y2) - pad).max(0.0) as usize;
    let y_hi = ((sheet.y1.max(sheet.y2) + pad) as usize).min(height - 1);
    let h2 = sheet.half_thickness * sheet.half_thickness;
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            if segment_distance_sq(x as f64, y as f64, sheet) <= h2 {
                classes[y * width + x] = SHEET;
            }
        }
    }
}

fn segment_distance_sq(px: f64, py: f64, s: &Sheet) -> f64 {
    let (vx, vy) = (s.x2 - s.x1, s.y2 - s.y1);
    let (wx, wy) = (px - s.x1, py - s.y1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0)
    };
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    dx * dx + dy * dy
}
