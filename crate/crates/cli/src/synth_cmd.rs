//! `sce synth`: synthetic raster generation with ground truth.

use std::fs;
use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use sce_core::raster::save_raster;
use sce_core::som::write_labeling_pgm;
use sce_core::synth::{generate, SynthConfig};

pub struct SynthArgs {
    pub width: usize,
    pub height: usize,
    pub islands: usize,
    pub sheets: usize,
    pub noise: f64,
    pub seed: u64,
    pub island_radius: String,
    pub sheet_thickness: String,
    pub out: PathBuf,
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let config = SynthConfig {
        width: args.width,
        height: args.height,
        n_islands: args.islands,
        island_radius: parse_range(&args.island_radius, "--island-radius")?,
        n_sheets: args.sheets,
        sheet_thickness: parse_range(&args.sheet_thickness, "--sheet-thickness")?,
        noise_sigma: args.noise,
        seed: args.seed,
    };
    let (raster, truth) = generate(&config)?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let raster_path = args.out.join("raster.frst");
    save_raster(&raster, &raster_path)?;
    let truth_path = args.out.join("truth.pgm");
    write_labeling_pgm(&truth, &truth_path)?;
    println!(
        "wrote {} and {}",
        raster_path.display(),
        truth_path.display()
    );
    Ok(())
}

fn parse_range(value: &str, flag: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    let bad = || anyhow!("{flag} expects `min,max`, got {value:?}");
    match parts.as_slice() {
        [lo, hi] => Ok((
            lo.parse().map_err(|_| bad())?,
            hi.parse().map_err(|_| bad())?,
        )),
        [single] => {
            let v: f64 = single.parse().map_err(|_| bad())?;
            Ok((v, v))
        }
        _ => Err(bad()),
    }
}
