//! `sce run`: the full pipeline, input raster(s) to ranked consensus masks.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sce_core::ensemble::{
    group_by_gaps, labelings_of, run_ensemble, run_ensemble_stacked, stack_and_rank,
    EnsembleConfig, SceOutput,
};
use sce_core::mask::{write_msk, write_pbm, MaskSet};
use sce_core::raster::{apply_norm, load_raster, norm_stats, save_raster, FeatureRaster};
use sce_core::som::write_labeling_pgm;

use crate::config::{self, RunFileConfig};
use crate::manifest::RunManifest;
use crate::util::{fmt_f64, fmt_tau, mask_file_stem, short_hash, write_pgm16_log};

pub struct RunArgs {
    pub inputs: Vec<PathBuf>,
    pub config: PathBuf,
    pub seed: u64,
    pub out: PathBuf,
    pub export_pgm: bool,
    pub export_norm: bool,
}

pub fn cmd_run(args: &RunArgs) -> Result<()> {
    let config_text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))?;
    let file_config = config::parse(&config_text)?;
    let ensemble_config = file_config.to_ensemble_config(args.seed);
    ensemble_config.validate()?;

    let config_hash = short_hash(&config_text);
    let run_dir = args.out.join(format!("run_{}_{}", args.seed, config_hash));
    fs::create_dir_all(&run_dir)
        .with_context(|| format!("creating run directory {}", run_dir.display()))?;
    let mut manifest = RunManifest::new(args.seed, &config_hash);

    let rasters: Vec<FeatureRaster> = manifest.time_stage("load", || {
        args.inputs
            .iter()
            .map(|p| load_raster(p).with_context(|| format!("loading {}", p.display())))
            .collect()
    })?;

    let normalized: Vec<FeatureRaster> =
        manifest.time_stage("normalize", || normalize_inputs(&rasters, &file_config))?;

    let per_snapshot: Vec<Vec<MaskSet>> = manifest.time_stage("ensemble", || {
        if normalized.len() == 1 {
            Ok(vec![run_ensemble(&normalized[0], &ensemble_config)?])
        } else {
            let refs: Vec<&FeatureRaster> = normalized.iter().collect();
            Ok(run_ensemble_stacked(&refs, &ensemble_config)?)
        }
    })?;

    let multi = per_snapshot.len() > 1;
    for (snapshot, mask_sets) in per_snapshot.into_iter().enumerate() {
        let (dir, prefix) = if multi {
            let sub = format!("snap{snapshot:02}");
            let dir = run_dir.join(&sub);
            fs::create_dir_all(&dir)?;
            (dir, format!("{sub}/"))
        } else {
            (run_dir.clone(), String::new())
        };
        let stage = |name: &str| {
            if multi {
                format!("{name}[{snapshot}]")
            } else {
                name.to_string()
            }
        };
        let output = manifest.time_stage(&stage("stack"), || {
            Ok(stack_and_rank(mask_sets, &ensemble_config)?)
        })?;
        let files = manifest.time_stage(&stage("write"), || {
            write_snapshot_outputs(&output, &ensemble_config, &dir, &prefix, args)
        })?;
        for f in files {
            manifest.record(f);
        }
    }

    manifest.finish(&run_dir)?;
    println!("run complete: {}", run_dir.display());
    Ok(())
}

fn normalize_inputs(
    rasters: &[FeatureRaster],
    file_config: &RunFileConfig,
) -> Result<Vec<FeatureRaster>> {
    let clip = file_config.clip_sigma;
    if file_config.per_snapshot_norm {
        rasters
            .iter()
            .map(|r| {
                let stats = norm_stats(&[r])?;
                Ok(apply_norm(r, &stats, clip)?)
            })
            .collect()
    } else {
        let refs: Vec<&FeatureRaster> = rasters.iter().collect();
        let stats = norm_stats(&refs)?;
        rasters
            .iter()
            .map(|r| Ok(apply_norm(r, &stats, clip)?))
            .collect()
    }
}

/// Writes every artifact for one snapshot and returns the manifest-relative
/// paths, `prefix` included.
fn write_snapshot_outputs(
    output: &SceOutput,
    config: &EnsembleConfig,
    dir: &Path,
    prefix: &str,
    args: &RunArgs,
) -> Result<Vec<String>> {
    let mut written: Vec<String> = Vec::new();
    let mut record = |written: &mut Vec<String>, rel: String| {
        written.push(format!("{prefix}{rel}"));
    };

    for sub in ["masks", "labels", "gsum", "consensus"] {
        fs::create_dir_all(dir.join(sub))?;
    }

    // Raw per-run cluster masks.
    for set in &output.mask_sets {
        for mask in &set.masks {
            let rel = format!("masks/{}.msk", mask_file_stem(mask.id()));
            write_msk(mask.grid(), dir.join(&rel))?;
            record(&mut written, rel);
        }
    }

    // Per-run labelings as PGM plus counts sidecar.
    for (set, labeling) in output
        .mask_sets
        .iter()
        .zip(labelings_of(&output.mask_sets)?)
    {
        let rel = format!("labels/run{:03}.pgm", set.run);
        write_labeling_pgm(&labeling, dir.join(&rel))?;
        record(&mut written, format!("{rel}.counts"));
        record(&mut written, rel);
    }

    // Stacked goodness maps as single-channel rasters.
    for result in &output.results {
        let stem = mask_file_stem(result.base);
        let rel = format!("gsum/{stem}.frst");
        let raster = FeatureRaster::single_channel(
            result.g_map.width,
            result.g_map.height,
            "g_sum",
            result.g_map.values.clone(),
        )?;
        save_raster(&raster, dir.join(&rel))?;
        record(&mut written, format!("{rel}.names"));
        record(&mut written, rel);
        if args.export_pgm {
            let rel = format!("gsum/{stem}.pgm");
            write_pgm16_log(&result.g_map, &dir.join(&rel))?;
            record(&mut written, rel);
        }
        if args.export_norm {
            let rel = format!("gsum/{stem}_norm.frst");
            let norm = result.normalized_map();
            let raster =
                FeatureRaster::single_channel(norm.width, norm.height, "g_sum_norm", norm.values)?;
            save_raster(&raster, dir.join(&rel))?;
            record(&mut written, format!("{rel}.names"));
            record(&mut written, rel);
        }
    }

    // Consensus masks for every selected rank and threshold.
    for consensus in &output.consensus {
        let stem = format!(
            "tau{}_{}",
            fmt_tau(consensus.tau),
            mask_file_stem(consensus.mask.id())
        );
        let rel = format!("consensus/{stem}.msk");
        write_msk(consensus.mask.grid(), dir.join(&rel))?;
        record(&mut written, rel);
        let rel = format!("consensus/{stem}.pbm");
        write_pbm(consensus.mask.grid(), dir.join(&rel))?;
        record(&mut written, rel);
    }

    // Raw scores in (run, cluster) order.
    let mut scores = String::from("run,cluster,g_sum,comparisons\n");
    for result in &output.results {
        writeln!(
            scores,
            "{},{},{},{}",
            result.base.run,
            result.base.cluster,
            fmt_f64(result.g_scalar),
            result.comparisons
        )?;
    }
    fs::write(dir.join("scores.csv"), scores)?;
    record(&mut written, "scores.csv".to_string());

    // Ranked view with the gap cutoff applied.
    let mut rankings = String::from("run,cluster,g_sum,comparisons,rank,selected\n");
    for (rank, &idx) in output.ranking.iter().enumerate() {
        let result = &output.results[idx];
        writeln!(
            rankings,
            "{},{},{},{},{},{}",
            result.base.run,
            result.base.cluster,
            fmt_f64(result.g_scalar),
            result.comparisons,
            rank,
            rank < output.cutoff_rank
        )?;
    }
    fs::write(dir.join("rankings.csv"), rankings)?;
    record(&mut written, "rankings.csv".to_string());

    // Heuristic gap grouping of the ranked sequence.
    let ranked_g = output.ranked_g();
    let groups = group_by_gaps(&ranked_g, config.gap_delta)?;
    let mut text =
        String::from("# heuristic grouping: ranked masks split at relative g_sum drops\n");
    for (i, range) in groups.iter().enumerate() {
        let ids: Vec<String> = output.ranking[range.clone()]
            .iter()
            .map(|&idx| {
                let id = output.results[idx].base;
                format!("run{}:cluster{}", id.run, id.cluster)
            })
            .collect();
        writeln!(
            text,
            "group {} (ranks {}..{}): {}",
            i,
            range.start,
            range.end,
            ids.join(" ")
        )?;
    }
    fs::write(dir.join("groups.txt"), text)?;
    record(&mut written, "groups.txt".to_string());

    Ok(written)
}
