//! Batch pipeline behind the `qa-expert` binary: ingest dumps into a
//! snapshot, fit the joint model, recommend experts and evaluate rankings.

pub mod config;
pub mod snapshot;

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::thread;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use qa_expert::coupled::{fit_joint, JointModel};
use qa_expert::eval::{evaluate, rank_experts, EvalReport};
use qa_expert::ingest::{
    build_inputs, parse_dump, reputation_scores, sample_dataset, QaDataset, UserId,
};
use qa_expert::io::{self as model_io, ModelMeta};
use serde::Serialize;

use config::{
    ConfigFile, EvalConfig, EvalParams, FitConfig, FitParams, IngestConfig, IngestParams,
};
use snapshot::Manifest;

pub const MODEL_FILE: &str = "model.txt";
pub const HISTORY_FILE: &str = "objective_history.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const REPORT_META_FILE: &str = "report.meta.json";
pub const THREADS_ENV: &str = "QA_EXPERT_THREADS";

/// Invalid arguments or configuration. The binary exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(
    name = "qa-expert",
    version,
    about = "Expert recommendation for Q&A sites via coupled tensor factorization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse site dumps into a dataset snapshot.
    Ingest(IngestArgs),
    /// Fit the joint model on a snapshot.
    Fit(FitArgs),
    /// Print the top experts for a topic.
    Recommend(RecommendArgs),
    /// Score a model against the snapshot's reputation ledger.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// `name=dir` where dir holds Posts.xml, Votes.xml and Users.xml. Repeatable.
    #[arg(long = "site", required = true)]
    pub sites: Vec<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// TOML file; its `[ingest]` table supplies defaults for the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub params: IngestParams,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub snapshot: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// TOML file; its `[fit]` table supplies defaults for the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub params: FitParams,
}

#[derive(Args, Debug)]
pub struct RecommendArgs {
    /// Model file written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub snapshot: PathBuf,
    /// `subsite/tag`, or a bare tag when it names exactly one topic.
    #[arg(long)]
    pub topic: String,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub snapshot: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// TOML file; its `[evaluate]` table supplies defaults for the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub params: EvalParams,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest(args) => {
            let m = cmd_ingest(&args)?;
            writeln!(
                out,
                "snapshot {} : {} questions, {} topics, {} answerers, {} nonzeros, hash {}",
                args.out_dir.display(),
                m.tables.questions.len(),
                m.tables.topics.len(),
                m.tables.answerers.len(),
                m.nnz,
                m.hash
            )?;
        }
        Command::Fit(args) => {
            let model = cmd_fit(&args)?;
            writeln!(
                out,
                "fitted {} sweeps, objective {}",
                model.objective_history.len() - 1,
                model.objective_history.last().copied().unwrap_or(f64::NAN)
            )?;
        }
        Command::Recommend(args) => {
            writeln!(out, "rank,user_id,score")?;
            for r in cmd_recommend(&args)? {
                writeln!(out, "{},{},{}", r.rank, r.user_id, r.score)?;
            }
        }
        Command::Evaluate(args) => {
            let report = cmd_evaluate(&args)?;
            writeln!(
                out,
                "evaluated {} rows, skipped {} topics, {} without signal",
                report.rows.len(),
                report.skipped_topics,
                report.no_signal_topics
            )?;
            for s in &report.summary {
                writeln!(
                    out,
                    "k={} precision={:.4} mrr={:.4}",
                    s.k, s.precision, s.mrr
                )?;
            }
        }
    }
    Ok(())
}

fn worker_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| thread::available_parallelism().map_or(1, |n| n.get()))
}

fn parse_site(spec: &str) -> anyhow::Result<(String, PathBuf)> {
    let (name, dir) = spec
        .split_once('=')
        .ok_or_else(|| UsageError(format!("--site expects name=dir, got {spec:?}")))?;
    if name.is_empty() || name.contains(['/', ',']) || name.contains(char::is_whitespace) {
        return Err(UsageError(format!(
            "site name {name:?} must be nonempty without '/', ',' or whitespace"
        ))
        .into());
    }
    Ok((name.to_string(), PathBuf::from(dir)))
}

fn load_sites(sites: &[(String, PathBuf)]) -> anyhow::Result<QaDataset> {
    let workers = worker_count();
    let mut parts = Vec::with_capacity(sites.len());
    for chunk in sites.chunks(workers) {
        let parsed: Vec<qa_expert::Result<QaDataset>> = thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|(name, dir)| {
                    s.spawn(move || {
                        parse_dump(
                            &dir.join("Posts.xml"),
                            &dir.join("Votes.xml"),
                            &dir.join("Users.xml"),
                            name,
                        )
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("parser thread panicked"))
                .collect()
        });
        for p in parsed {
            parts.push(p?);
        }
    }
    Ok(QaDataset::merge(parts)?)
}

/// Parses every site, optionally samples users, and writes the snapshot.
/// Output goes to a staging directory first so a failure leaves nothing
/// behind at `out_dir`.
pub fn cmd_ingest(args: &IngestArgs) -> anyhow::Result<Manifest> {
    let file = ConfigFile::load(args.config.as_deref())?;
    let config = IngestConfig::resolve(&args.params, &file.ingest)?;
    let sites = args
        .sites
        .iter()
        .map(|s| parse_site(s))
        .collect::<anyhow::Result<Vec<_>>>()?;

    let mut data = load_sites(&sites)?;
    if let Some(n) = config.sample_users {
        data = sample_dataset(data, n, config.seed)?;
    }
    let inputs = build_inputs(&data, &config.build_config())?;
    let ledger = reputation_scores(&data);

    let out = &args.out_dir;
    if out.exists() && !out.join(snapshot::MANIFEST).exists() {
        bail!(
            "{} exists and is not a snapshot; refusing to overwrite",
            out.display()
        );
    }
    let name = out
        .file_name()
        .ok_or_else(|| UsageError(format!("bad --out-dir {}", out.display())))?;
    let staging = out.with_file_name(format!(
        ".{}.partial-{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    if let Some(parent) = staging.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let _ = fs::remove_dir_all(&staging);
    let written = snapshot::write(
        &staging,
        &inputs,
        &ledger,
        &config,
        sites.into_iter().map(|s| s.0).collect(),
        data.warnings.clone(),
    )
    .and_then(|m| {
        if out.exists() {
            fs::remove_dir_all(out).with_context(|| format!("replacing {}", out.display()))?;
        }
        fs::rename(&staging, out)
            .with_context(|| format!("moving snapshot into {}", out.display()))?;
        Ok(m)
    });
    if written.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    written
}

fn model_meta(manifest: &Manifest, config: &FitConfig) -> anyhow::Result<ModelMeta> {
    Ok(ModelMeta {
        manifest_hash: Some(manifest.hash.clone()),
        config: Some(serde_json::to_string(config)?),
    })
}

pub fn history_csv(history: &[f64]) -> String {
    let mut out = String::from("sweep,objective\n");
    for (i, v) in history.iter().enumerate() {
        let _ = writeln!(out, "{i},{v:e}");
    }
    out
}

/// Fits the joint model and writes the model file and objective history.
/// On divergence the last finite state goes to `model.txt.diverged`.
pub fn cmd_fit(args: &FitArgs) -> anyhow::Result<JointModel> {
    let file = ConfigFile::load(args.config.as_deref())?;
    let config = FitConfig::resolve(&args.params, &file.fit)?;
    let snap = snapshot::read(&args.snapshot)?;
    let meta = model_meta(&snap.manifest, &config)?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;

    match fit_joint(
        &snap.tensor,
        &snap.site_membership,
        &snap.topic_membership,
        &snap.tree,
        &config.joint_config(),
    ) {
        Ok(model) => {
            snapshot::write_file(
                &args.out_dir.join(MODEL_FILE),
                &model_io::write_joint_model(&model, &meta),
            )?;
            snapshot::write_file(
                &args.out_dir.join(HISTORY_FILE),
                &history_csv(&model.objective_history),
            )?;
            Ok(model)
        }
        Err(qa_expert::Error::JointDiverged { sweep, last_finite }) => {
            let path = args.out_dir.join(format!("{MODEL_FILE}.diverged"));
            snapshot::write_file(&path, &model_io::write_joint_model(&last_finite, &meta))?;
            Err(anyhow!(
                "solver diverged at sweep {sweep}; last finite state saved to {}",
                path.display()
            ))
        }
        Err(e) => Err(e.into()),
    }
}

/// Loads a model and checks that it was fitted on `manifest`.
fn load_model(path: &Path, manifest: &Manifest) -> anyhow::Result<JointModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (model, meta) =
        model_io::read_joint_model(&text).with_context(|| format!("parsing {}", path.display()))?;
    match meta.manifest_hash {
        Some(h) if h == manifest.hash => Ok(model),
        Some(h) => Err(qa_expert::Error::Version(format!(
            "{} was fitted on snapshot {h}, but the snapshot has hash {}",
            path.display(),
            manifest.hash
        ))
        .into()),
        None => Err(qa_expert::Error::Version(format!(
            "{} records no snapshot hash",
            path.display()
        ))
        .into()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Recommendation {
    pub rank: usize,
    pub user_id: UserId,
    pub score: f64,
}

fn resolve_topic(topics: &[String], query: &str) -> anyhow::Result<usize> {
    if let Some(j) = topics.iter().position(|t| t == query) {
        return Ok(j);
    }
    if !query.contains('/') {
        let by_tag: Vec<usize> = (0..topics.len())
            .filter(|&j| {
                topics[j]
                    .split_once('/')
                    .is_some_and(|(_, tag)| tag == query)
            })
            .collect();
        if let [j] = by_tag[..] {
            return Ok(j);
        }
    }
    let near: Vec<&str> = topics
        .iter()
        .filter(|t| {
            t.starts_with(query)
                || t.split_once('/')
                    .is_some_and(|(_, tag)| tag.starts_with(query))
        })
        .map(String::as_str)
        .collect();
    if near.is_empty() {
        bail!("unknown topic {query:?}; no topic starts with it");
    }
    bail!("unknown topic {query:?}; did you mean: {}", near.join(", "))
}

pub fn cmd_recommend(args: &RecommendArgs) -> anyhow::Result<Vec<Recommendation>> {
    let manifest = snapshot::read_manifest(&args.snapshot)?;
    let model = load_model(&args.model, &manifest)?;
    let topic = resolve_topic(&manifest.tables.topics, &args.topic)?;
    let ranking = rank_experts(
        &model.cp,
        &manifest.tables.answerers,
        topic,
        args.k as usize,
    )?;
    Ok(ranking
        .entries
        .iter()
        .enumerate()
        .map(|(i, &(user_id, score))| Recommendation {
            rank: i + 1,
            user_id,
            score,
        })
        .collect())
}

#[derive(Serialize)]
struct ReportMeta<'a> {
    manifest_hash: &'a str,
    model_config: Option<serde_json::Value>,
    config: &'a EvalConfig,
    skipped_topics: usize,
    no_signal_topics: usize,
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> anyhow::Result<EvalReport> {
    let file = ConfigFile::load(args.config.as_deref())?;
    let config = EvalConfig::resolve(&args.params, &file.evaluate)?;
    let manifest = snapshot::read_manifest(&args.snapshot)?;
    let model = load_model(&args.model, &manifest)?;
    let ledger = snapshot::read_ledger(&args.snapshot)?;
    let report = evaluate(&model.cp, &manifest.tables, &ledger, &config.k_list)?;

    let text = fs::read_to_string(&args.model)?;
    let (_, meta) = model_io::read_joint_model(&text)?;
    let model_config = meta
        .config
        .as_deref()
        .map(serde_json::from_str)
        .transpose()?;
    let report_meta = ReportMeta {
        manifest_hash: &manifest.hash,
        model_config,
        config: &config,
        skipped_topics: report.skipped_topics,
        no_signal_topics: report.no_signal_topics,
    };
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    snapshot::write_file(&args.out_dir.join(REPORT_FILE), &report.to_csv())?;
    snapshot::write_file(
        &args.out_dir.join(REPORT_META_FILE),
        &(serde_json::to_string_pretty(&report_meta)? + "\n"),
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn site_specs() {
        assert_eq!(
            parse_site("a=/x/y").unwrap(),
            ("a".into(), PathBuf::from("/x/y"))
        );
        for bad in ["noequals", "=dir", "a/b=dir", "a b=dir"] {
            assert!(
                parse_site(bad)
                    .unwrap_err()
                    .downcast_ref::<UsageError>()
                    .is_some(),
                "{bad}"
            );
        }
    }

    #[test]
    fn topic_lookup() {
        let topics: Vec<String> = ["s/rust", "s/ruby", "t/rust", "t/go"]
            .map(String::from)
            .to_vec();
        assert_eq!(resolve_topic(&topics, "t/go").unwrap(), 3);
        assert_eq!(resolve_topic(&topics, "go").unwrap(), 3);
        let err = resolve_topic(&topics, "ru").unwrap_err().to_string();
        assert!(err.contains("s/rust") && err.contains("s/ruby") && err.contains("t/rust"));
        let err = resolve_topic(&topics, "rust").unwrap_err().to_string();
        assert!(err.contains("s/rust") && err.contains("t/rust"));
        assert!(resolve_topic(&topics, "zz").is_err());
    }

    #[test]
    fn history_is_one_row_per_entry() {
        let csv = history_csv(&[3.5, 1.25]);
        assert_eq!(csv, "sweep,objective\n0,3.5e0\n1,1.25e0\n");
    }
}
