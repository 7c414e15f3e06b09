//! `sce compare`: pairwise cross-ensemble scores from two run directories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sce_core::ensemble::{compare_collections, EnsembleComparison, PairRow};
use sce_core::mask::{read_msk, ClusterMask, MaskId};

use crate::util::{fmt_f64, fmt_tau, parse_mask_stem};

pub struct CompareArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    pub tau: f64,
    pub out: PathBuf,
}

pub fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let (a_som, a_sce) = load_run_dir(&args.a, args.tau)?;
    let (b_som, b_sce) = load_run_dir(&args.b, args.tau)?;
    let a_refs: Vec<&ClusterMask> = a_som.iter().collect();
    let b_refs: Vec<&ClusterMask> = b_som.iter().collect();
    let comparison = compare_collections(
        &[(args.tau, a_sce)],
        &a_refs,
        &[(args.tau, b_sce)],
        &b_refs,
    )?;

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let sce_csv = args
        .out
        .join(format!("compare_sce_tau{}.csv", fmt_tau(args.tau)));
    fs::write(&sce_csv, rows_to_csv(&comparison.sce[0].rows))?;
    let som_csv = args.out.join("compare_som.csv");
    fs::write(&som_csv, rows_to_csv(&comparison.som))?;

    let summary = summarize(&comparison, args.tau);
    fs::write(args.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn rows_to_csv(rows: &[PairRow]) -> String {
    let mut text = String::from("a_run,a_cluster,b_run,b_cluster,s_i,q_u,dice\n");
    for row in rows {
        writeln!(
            text,
            "{},{},{},{},{},{},{}",
            row.a.run,
            row.a.cluster,
            row.b.run,
            row.b.cluster,
            fmt_f64(row.score.s_i),
            fmt_f64(row.score.q_u),
            fmt_f64(row.score.dice)
        )
        .expect("writing to a String cannot fail");
    }
    text
}

fn summarize(comparison: &EnsembleComparison, tau: f64) -> String {
    let sce = comparison.sce_median(0);
    let som = comparison.som_median();
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), fmt_f64);
    format!(
        "sce_best_match_median_tau{} = {}\nsom_best_match_median = {}\n",
        fmt_tau(tau),
        fmt(sce),
        fmt(som)
    )
}

/// Loads the raw SOM masks and the consensus masks for one threshold from a
/// run directory written by `sce run`.
fn load_run_dir(dir: &Path, tau: f64) -> Result<(Vec<ClusterMask>, Vec<ClusterMask>)> {
    let som = load_masks(&dir.join("masks"), |stem| parse_mask_stem(stem))
        .with_context(|| format!("loading SOM masks from {}", dir.display()))?;
    if som.is_empty() {
        bail!("{}: no SOM masks found (missing artifacts?)", dir.display());
    }
    let prefix = format!("tau{}_", fmt_tau(tau));
    let sce = load_masks(&dir.join("consensus"), |stem| {
        stem.strip_prefix(&prefix).and_then(parse_mask_stem)
    })
    .with_context(|| format!("loading consensus masks from {}", dir.display()))?;
    if sce.is_empty() {
        bail!(
            "{}: no consensus masks for tau={} (missing artifacts?)",
            dir.display(),
            tau
        );
    }
    Ok((som, sce))
}

fn load_masks(
    dir: &Path,
    parse_stem: impl Fn(&str) -> Option<MaskId>,
) -> Result<Vec<ClusterMask>> {
    if !dir.is_dir() {
        bail!("{} does not exist", dir.display());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| Ok(e?.path()))
        .collect::<Result<_>>()?;
    entries.sort();
    let mut masks = Vec::new();
    for path in entries {
        if path.extension().and_then(|e| e.to_str()) != Some("msk") {
            continue;
        }
        let stem = match path.file_stem().and_then(|s| s.to_str()) {
            Some(s) => s,
            None => continue,
        };
        let id = match parse_stem(stem) {
            Some(id) => id,
            None => continue,
        };
        let grid = read_msk(&path)?;
        masks.push(
            ClusterMask::new(id, grid)
                .with_context(|| format!("empty mask in {}", path.display()))?,
        );
    }
    Ok(masks)
}
