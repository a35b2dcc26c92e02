//! On-disk dataset snapshot: the model inputs in their text formats, the
//! reputation ledger and a manifest holding the index tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use qa_expert::coupled::MembershipMatrix;
use qa_expert::ingest::{IndexTables, IngestWarnings, ModelInputs, ReputationLedger, UserId};
use qa_expert::io;
use qa_expert::tensor::SparseTensor4;
use qa_expert::tree::HierarchyTree;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::IngestConfig;

pub const FORMAT: &str = "qa-expert-snapshot/1";
pub const TENSOR: &str = "tensor.txt";
pub const SITE_MEMBERSHIP: &str = "site_membership.txt";
pub const TOPIC_MEMBERSHIP: &str = "topic_membership.txt";
pub const TREE: &str = "tree.txt";
pub const REPUTATION: &str = "reputation.csv";
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    /// SHA-256 over the index tables and every data file of the snapshot.
    pub hash: String,
    pub config: IngestConfig,
    pub sites: Vec<String>,
    pub warnings: IngestWarnings,
    pub skipped_downvote_casts: usize,
    pub skipped_unowned: usize,
    pub nnz: usize,
    pub tables: IndexTables,
}

pub struct Snapshot {
    pub manifest: Manifest,
    pub tensor: SparseTensor4,
    pub site_membership: MembershipMatrix,
    pub topic_membership: MembershipMatrix,
    pub tree: HierarchyTree,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn content_hash(tables: &IndexTables, files: &[(&str, &str)]) -> anyhow::Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(tables)?);
    for (name, body) in files {
        h.update(name.as_bytes());
        h.update((body.len() as u64).to_le_bytes());
        h.update(body.as_bytes());
    }
    Ok(hex(&h.finalize()))
}

pub fn write_reputation(ledger: &ReputationLedger) -> String {
    let mut out = String::from("user_id,topic,score\n");
    for (user, topic, score) in ledger.iter() {
        let _ = writeln!(out, "{user},{topic},{score}");
    }
    out
}

pub fn read_reputation(text: &str, path: &Path) -> anyhow::Result<ReputationLedger> {
    let mut scores = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let [user, topic, score] = fields[..] else {
            bail!("{}:{}: expected user_id,topic,score", path.display(), n + 1);
        };
        let parse = |v: &str| {
            v.parse::<i64>()
                .with_context(|| format!("{}:{}: bad integer {v:?}", path.display(), n + 1))
        };
        scores.push(((UserId(parse(user)?), topic.to_string()), parse(score)?));
    }
    Ok(ReputationLedger::from_scores(scores))
}

/// Writes a snapshot into `dir`, which must not exist yet.
pub fn write(
    dir: &Path,
    inputs: &ModelInputs,
    ledger: &ReputationLedger,
    config: &IngestConfig,
    sites: Vec<String>,
    warnings: IngestWarnings,
) -> anyhow::Result<Manifest> {
    let files = [
        (TENSOR, io::write_tensor(&inputs.tensor)),
        (
            SITE_MEMBERSHIP,
            io::write_membership(&inputs.site_membership),
        ),
        (
            TOPIC_MEMBERSHIP,
            io::write_membership(&inputs.topic_membership),
        ),
        (TREE, io::write_tree(&inputs.tree)),
        (REPUTATION, write_reputation(ledger)),
    ];
    let refs: Vec<(&str, &str)> = files.iter().map(|(n, b)| (*n, b.as_str())).collect();
    let manifest = Manifest {
        format: FORMAT.into(),
        hash: content_hash(&inputs.tables, &refs)?,
        config: config.clone(),
        sites,
        warnings,
        skipped_downvote_casts: ledger.skipped_downvote_casts,
        skipped_unowned: ledger.skipped_unowned,
        nnz: inputs.tensor.nnz(),
        tables: inputs.tables.clone(),
    };
    fs::create_dir(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, body) in &files {
        write_file(&dir.join(name), body)?;
    }
    write_file(
        &dir.join(MANIFEST),
        &(serde_json::to_string_pretty(&manifest)? + "\n"),
    )?;
    Ok(manifest)
}

pub fn write_file(path: &Path, body: &str) -> anyhow::Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn read_file(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn read_manifest(dir: &Path) -> anyhow::Result<Manifest> {
    let path = dir.join(MANIFEST);
    let manifest: Manifest = serde_json::from_str(&read_file(&path)?)
        .with_context(|| format!("parsing {}", path.display()))?;
    if manifest.format != FORMAT {
        return Err(qa_expert::Error::Version(format!(
            "{} has format {:?}, expected {FORMAT:?}",
            path.display(),
            manifest.format
        ))
        .into());
    }
    Ok(manifest)
}

fn parsed<T>(path: PathBuf, parse: impl FnOnce(&str) -> qa_expert::Result<T>) -> anyhow::Result<T> {
    let text = read_file(&path)?;
    parse(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn read(dir: &Path) -> anyhow::Result<Snapshot> {
    let manifest = read_manifest(dir)?;
    Ok(Snapshot {
        tensor: parsed(dir.join(TENSOR), io::read_tensor)?,
        site_membership: parsed(dir.join(SITE_MEMBERSHIP), io::read_membership)?,
        topic_membership: parsed(dir.join(TOPIC_MEMBERSHIP), io::read_membership)?,
        tree: parsed(dir.join(TREE), io::read_tree)?,
        manifest,
    })
}

pub fn read_ledger(dir: &Path) -> anyhow::Result<ReputationLedger> {
    let path = dir.join(REPUTATION);
    read_reputation(&read_file(&path)?, &path)
}
