//! Run parameters. Each value resolves as command-line flag, then config
//! file, then built-in default. The resolved form is what gets echoed into
//! output metadata.

use std::path::Path;

use anyhow::Context;
use clap::Args;
use qa_expert::coupled::{
    JointConfig, JointLambdas, DEFAULT_LAMBDA_S, DEFAULT_LAMBDA_T, DEFAULT_LAMBDA_W,
    DEFAULT_MAX_SWEEPS, DEFAULT_TOLERANCE,
};
use qa_expert::ingest::{BuildConfig, DEFAULT_BUCKET_BOUNDS};
use serde::{Deserialize, Serialize};

use crate::UsageError;

pub const DEFAULT_RANK: usize = 8;
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_K_LIST: [usize; 4] = [1, 3, 5, 10];

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestParams {
    /// Sample this many users (users-first) before building the snapshot.
    #[arg(long)]
    pub sample_users: Option<usize>,
    /// Lower bounds of the vote buckets after the first, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub vote_buckets: Option<Vec<i64>>,
    /// Subtree weight `s` of every internal tree node.
    #[arg(long)]
    pub tree_s: Option<f64>,
    /// Group weight `g` of every internal tree node.
    #[arg(long)]
    pub tree_g: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitParams {
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub lambda_x: Option<f64>,
    #[arg(long)]
    pub lambda_w: Option<f64>,
    #[arg(long)]
    pub lambda_s: Option<f64>,
    #[arg(long)]
    pub lambda_t: Option<f64>,
    /// Weight of the subsite coupling term; defaults to `--lambda-s`.
    #[arg(long)]
    pub lambda_site: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Relative objective improvement below which fitting stops.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalParams {
    /// Cutoffs, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub k_list: Option<Vec<usize>>,
}

/// Layout of a `--config` file: one optional table per command.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub ingest: IngestParams,
    #[serde(default)]
    pub fit: FitParams,
    #[serde(default)]
    pub evaluate: EvalParams,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub sample_users: Option<usize>,
    pub seed: u64,
    pub vote_buckets: Vec<i64>,
    pub tree_s: f64,
    pub tree_g: f64,
}

impl IngestConfig {
    pub fn resolve(flags: &IngestParams, file: &IngestParams) -> anyhow::Result<Self> {
        let tree_s = flags.tree_s.or(file.tree_s);
        let tree_g = flags.tree_g.or(file.tree_g);
        // Supplying one of (s, g) fixes the other.
        let (tree_s, tree_g) = match (tree_s, tree_g) {
            (Some(s), Some(g)) => (s, g),
            (Some(s), None) => (s, 1.0 - s),
            (None, Some(g)) => (1.0 - g, g),
            (None, None) => (0.5, 0.5),
        };
        let config = IngestConfig {
            sample_users: flags.sample_users.or(file.sample_users),
            seed: flags.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            vote_buckets: flags
                .vote_buckets
                .clone()
                .or_else(|| file.vote_buckets.clone())
                .unwrap_or_else(|| DEFAULT_BUCKET_BOUNDS.to_vec()),
            tree_s,
            tree_g,
        };
        if config.sample_users == Some(0) {
            return Err(UsageError("--sample-users must be at least 1".into()).into());
        }
        config
            .build_config()
            .validate()
            .map_err(|e| UsageError(e.to_string()))?;
        Ok(config)
    }

    pub fn build_config(&self) -> BuildConfig {
        BuildConfig {
            bucket_bounds: self.vote_buckets.clone(),
            tree_s: self.tree_s,
            tree_g: self.tree_g,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub rank: usize,
    pub lambda_x: f64,
    pub lambda_w: f64,
    pub lambda_s: f64,
    pub lambda_t: f64,
    pub lambda_site: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl FitConfig {
    pub fn resolve(flags: &FitParams, file: &FitParams) -> anyhow::Result<Self> {
        let lambda_s = flags.lambda_s.or(file.lambda_s).unwrap_or(DEFAULT_LAMBDA_S);
        let config = FitConfig {
            rank: flags.rank.or(file.rank).unwrap_or(DEFAULT_RANK),
            lambda_x: flags
                .lambda_x
                .or(file.lambda_x)
                .unwrap_or(qa_expert::als::DEFAULT_LAMBDA_X),
            lambda_w: flags.lambda_w.or(file.lambda_w).unwrap_or(DEFAULT_LAMBDA_W),
            lambda_s,
            lambda_t: flags.lambda_t.or(file.lambda_t).unwrap_or(DEFAULT_LAMBDA_T),
            lambda_site: flags.lambda_site.or(file.lambda_site).unwrap_or(lambda_s),
            max_iters: flags
                .max_iters
                .or(file.max_iters)
                .unwrap_or(DEFAULT_MAX_SWEEPS),
            tol: flags.tol.or(file.tol).unwrap_or(DEFAULT_TOLERANCE),
            seed: flags.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
        };
        config
            .joint_config()
            .validate()
            .map_err(|e| UsageError(e.to_string()))?;
        Ok(config)
    }

    pub fn joint_config(&self) -> JointConfig {
        JointConfig {
            rank: self.rank,
            max_sweeps: self.max_iters,
            tolerance: self.tol,
            lambdas: JointLambdas {
                x: self.lambda_x,
                w: self.lambda_w,
                s: self.lambda_s,
                t: self.lambda_t,
                site: self.lambda_site,
            },
            seed: self.seed,
            accelerate: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub k_list: Vec<usize>,
}

impl EvalConfig {
    pub fn resolve(flags: &EvalParams, file: &EvalParams) -> anyhow::Result<Self> {
        let k_list = flags
            .k_list
            .clone()
            .or_else(|| file.k_list.clone())
            .unwrap_or_else(|| DEFAULT_K_LIST.to_vec());
        if k_list.is_empty() || k_list.contains(&0) {
            return Err(UsageError("--k-list needs at least one cutoff, each >= 1".into()).into());
        }
        Ok(EvalConfig { k_list })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let file: ConfigFile = toml::from_str("[fit]\nrank = 4\nlambda_x = 0.5\n").unwrap();
        let flags = FitParams {
            rank: Some(2),
            ..FitParams::default()
        };
        let c = FitConfig::resolve(&flags, &file.fit).unwrap();
        assert_eq!(c.rank, 2);
        assert_eq!(c.lambda_x, 0.5);
        assert_eq!(c.lambda_t, DEFAULT_LAMBDA_T);
        assert_eq!(c.lambda_site, c.lambda_s);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(toml::from_str::<ConfigFile>("[fit]\nrnak = 4\n").is_err());
    }

    #[test]
    fn rank_zero_is_a_usage_error() {
        let flags = FitParams {
            rank: Some(0),
            ..FitParams::default()
        };
        let err = FitConfig::resolve(&flags, &FitParams::default()).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
    }

    #[test]
    fn one_tree_weight_fixes_the_other() {
        let flags = IngestParams {
            tree_s: Some(0.3),
            ..IngestParams::default()
        };
        let c = IngestConfig::resolve(&flags, &IngestParams::default()).unwrap();
        assert!((c.tree_g - 0.7).abs() < 1e-15);
    }
}
