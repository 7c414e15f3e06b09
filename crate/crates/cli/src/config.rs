//! Flat `key = value` run configuration files.
//!
//! Minimal parsing surface on purpose: one assignment per line, `#` comments,
//! lists comma-separated. Every parse error names its line number.
//!
//! Recognized keys (all optional):
//!
//! ```text
//! map_rows = 15            # lattice rows (default 15)
//! map_cols = 10            # lattice cols (default 10)
//! alpha = 0.6,0.7,0.8      # initial learning rates (grid axis)
//! iterations = 10000,20000 # training steps (grid axis); default 500 * map size
//! alpha_final = 0.01
//! sigma0 = 5               # default max(map_rows, map_cols) / 2
//! sigma_final = 1
//! join_k = 3,4,5,6         # cluster counts, cycled across runs
//! epsilon = 1e-6
//! ratio_cap = 1e6
//! gap_delta = 0.5
//! thresholds = 1,2
//! clip_sigma = 4           # optional symmetric clipping after z-scoring
//! per_snapshot_norm = false
//! ```
//!
//! The run grid is every `alpha` crossed with every `iterations` value, in
//! that nesting order; `join_k` values cycle over the flattened grid.

use anyhow::{anyhow, bail, Result};
use sce_core::ensemble::EnsembleConfig;
use sce_core::som::SomConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunFileConfig {
    pub map_rows: usize,
    pub map_cols: usize,
    pub alphas: Vec<f64>,
    pub iterations: Option<Vec<usize>>,
    pub alpha_final: f64,
    pub sigma0: Option<f64>,
    pub sigma_final: f64,
    pub join_ks: Vec<usize>,
    pub epsilon: f64,
    pub ratio_cap: f64,
    pub gap_delta: f64,
    pub thresholds: Vec<f64>,
    pub clip_sigma: Option<f64>,
    pub per_snapshot_norm: bool,
}

impl Default for RunFileConfig {
    fn default() -> Self {
        Self {
            map_rows: 15,
            map_cols: 10,
            alphas: vec![0.6, 0.7, 0.8],
            iterations: None,
            alpha_final: 0.01,
            sigma0: None,
            sigma_final: 1.0,
            join_ks: vec![3, 4, 5, 6],
            epsilon: 1e-6,
            ratio_cap: 1e6,
            gap_delta: 0.5,
            thresholds: vec![1.0, 2.0],
            clip_sigma: None,
            per_snapshot_norm: false,
        }
    }
}

impl RunFileConfig {
    /// Expands the parameter grid into one `SomConfig` per run. Per-run seeds
    /// are derived later from the master seed.
    pub fn to_ensemble_config(&self, master_seed: u64) -> EnsembleConfig {
        let sigma0 = self
            .sigma0
            .unwrap_or(((self.map_rows.max(self.map_cols)) as f64 / 2.0).max(1.0));
        let iterations = self.iterations.clone().unwrap_or_else(|| {
            vec![SomConfig::rule_of_thumb_iterations(
                self.map_rows,
                self.map_cols,
            )]
        });
        let mut run_configs = Vec::with_capacity(self.alphas.len() * iterations.len());
        for &alpha0 in &self.alphas {
            for &t in &iterations {
                let join_k = self.join_ks[run_configs.len() % self.join_ks.len()];
                run_configs.push(SomConfig {
                    map_rows: self.map_rows,
                    map_cols: self.map_cols,
                    alpha0,
                    alpha_final: self.alpha_final,
                    sigma0,
                    sigma_final: self.sigma_final,
                    iterations: t,
                    join_k,
                    seed: 0,
                });
            }
        }
        EnsembleConfig {
            master_seed,
            run_configs,
            epsilon: self.epsilon,
            ratio_cap: self.ratio_cap,
            gap_delta: self.gap_delta,
            thresholds: self.thresholds.clone(),
        }
    }
}

pub fn parse(text: &str) -> Result<RunFileConfig> {
    let mut config = RunFileConfig::default();
    let mut seen: Vec<String> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {line_no}: expected `key = value`, got {raw:?}"))?;
        let key = key.trim();
        let value = value.trim();
        if seen.iter().any(|k| k == key) {
            bail!("config line {line_no}: duplicate key `{key}`");
        }
        seen.push(key.to_string());
        let err = |what: &str| anyhow!("config line {line_no}: invalid {what} for `{key}`: {value:?}");
        match key {
            "map_rows" => config.map_rows = value.parse().map_err(|_| err("count"))?,
            "map_cols" => config.map_cols = value.parse().map_err(|_| err("count"))?,
            "alpha" => config.alphas = parse_list(value).map_err(|_| err("number list"))?,
            "iterations" => {
                config.iterations = Some(parse_list(value).map_err(|_| err("count list"))?)
            }
            "alpha_final" => config.alpha_final = value.parse().map_err(|_| err("number"))?,
            "sigma0" => config.sigma0 = Some(value.parse().map_err(|_| err("number"))?),
            "sigma_final" => config.sigma_final = value.parse().map_err(|_| err("number"))?,
            "join_k" => config.join_ks = parse_list(value).map_err(|_| err("count list"))?,
            "epsilon" => config.epsilon = value.parse().map_err(|_| err("number"))?,
            "ratio_cap" => config.ratio_cap = value.parse().map_err(|_| err("number"))?,
            "gap_delta" => config.gap_delta = value.parse().map_err(|_| err("number"))?,
            "thresholds" => {
                config.thresholds = parse_list(value).map_err(|_| err("number list"))?
            }
            "clip_sigma" => config.clip_sigma = Some(value.parse().map_err(|_| err("number"))?),
            "per_snapshot_norm" => {
                config.per_snapshot_norm = value.parse().map_err(|_| err("boolean"))?
            }
            _ => bail!("config line {line_no}: unknown key `{key}`"),
        }
        if matches!(key, "alpha" | "iterations" | "join_k" | "thresholds")
            && list_is_empty(value)
        {
            bail!("config line {line_no}: empty list for `{key}`");
        }
    }
    Ok(config)
}

fn list_is_empty(value: &str) -> bool {
    value.split(',').all(|v| v.trim().is_empty())
}

fn parse_list<T: std::str::FromStr>(value: &str) -> Result<Vec<T>, T::Err> {
    value
        .split(',')
        .map(|v| v.trim())
        .filter(|v| !v.is_empty())
        .map(str::parse)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_style_grid_expands_to_fifteen_runs() {
        let text = "\
map_rows = 15
map_cols = 10
alpha = 0.6,0.7,0.8
iterations = 10000,20000,30000,40000,50000
join_k = 3,4,5,6
thresholds = 1,2
";
        let parsed = parse(text).unwrap();
        let config = parsed.to_ensemble_config(7);
        assert_eq!(config.run_configs.len(), 15);
        assert_eq!(config.master_seed, 7);
        assert!(config.validate().is_ok());
        // First axis alpha, second iterations.
        assert_eq!(config.run_configs[0].alpha0, 0.6);
        assert_eq!(config.run_configs[0].iterations, 10000);
        assert_eq!(config.run_configs[4].iterations, 50000);
        assert_eq!(config.run_configs[5].alpha0, 0.7);
        // join_k cycles 3,4,5,6,3,...
        assert_eq!(config.run_configs[0].join_k, 3);
        assert_eq!(config.run_configs[3].join_k, 6);
        assert_eq!(config.run_configs[4].join_k, 3);
    }

    #[test]
    fn defaults_follow_the_rule_of_thumb() {
        let parsed = parse("map_rows = 4\nmap_cols = 5\nalpha = 0.5,0.6\n").unwrap();
        let config = parsed.to_ensemble_config(0);
        assert_eq!(config.run_configs.len(), 2);
        assert_eq!(config.run_configs[0].iterations, 500 * 20);
        assert_eq!(config.run_configs[0].sigma0, 2.5);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let parsed = parse("# full grid\n\nmap_rows = 3 # trailing\nmap_cols = 2\n").unwrap();
        assert_eq!(parsed.map_rows, 3);
        assert_eq!(parsed.map_cols, 2);
    }

    #[test]
    fn errors_name_the_line() {
        let err = parse("map_rows = 3\nbogus_key = 1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = parse("\n\nalpha = fast\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let err = parse("map_rows = 3\nmap_rows = 4\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
        let err = parse("alpha = ,\n").unwrap_err();
        assert!(err.to_string().contains("empty list"), "{err}");
        let err = parse("map_rows 3\n").unwrap_err();
        assert!(err.to_string().contains("key = value"), "{err}");
    }
}
