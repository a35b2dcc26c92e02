//! Topic-conditioned expert ranking, count-based baselines and the
//! Precision@k / MRR harness.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::als::CpModel;
use crate::error::{Error, Result};
use crate::ingest::{IndexTables, PostKind, QaDataset, ReputationLedger, UserId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RankStatus {
    Ranked,
    /// The topic's factor row is zero, so every user scores 0.
    NoSignal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub topic: usize,
    /// Score descending, ties by ascending user id.
    pub entries: Vec<(UserId, f64)>,
    pub status: RankStatus,
}

impl RankedList {
    fn from_scores(topic: usize, mut entries: Vec<(UserId, f64)>, k: usize) -> Self {
        entries.sort_by(rank_order);
        entries.truncate(k);
        RankedList {
            topic,
            entries,
            status: RankStatus::Ranked,
        }
    }

    pub fn users(&self) -> impl Iterator<Item = UserId> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    /// 1-based position of `user`.
    pub fn position(&self, user: UserId) -> Option<usize> {
        self.users().position(|u| u == user).map(|p| p + 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn rank_order(a: &(UserId, f64), b: &(UserId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Scores every answerer by `Σ_r λ_r U2[topic, r] U4[l, r]` and returns the
/// top `k`.
pub fn rank_experts(
    model: &CpModel,
    answerers: &[UserId],
    topic: usize,
    k: usize,
) -> Result<RankedList> {
    let [_, topics, _, users] = model.dims();
    if k == 0 {
        return Err(Error::contract("k must be at least 1"));
    }
    if topic >= topics {
        return Err(Error::contract(format!(
            "topic {topic} out of range for {topics} topics"
        )));
    }
    if answerers.len() != users {
        return Err(Error::contract(format!(
            "{} answerer ids for a model with {users} experts",
            answerers.len()
        )));
    }
    let u2 = &model.factors()[1];
    let u4 = &model.factors()[3];
    let weights: Vec<f64> = model
        .norms()
        .iter()
        .zip(u2.row(topic))
        .map(|(n, u)| n * u)
        .collect();
    if weights.iter().all(|&w| w == 0.0) {
        return Ok(RankedList {
            topic,
            entries: Vec::new(),
            status: RankStatus::NoSignal,
        });
    }
    let scores = answerers
        .iter()
        .enumerate()
        .map(|(l, &u)| (u, u4.row(l).iter().zip(&weights).map(|(a, w)| a * w).sum()))
        .collect();
    Ok(RankedList::from_scores(topic, scores, k))
}

/// `(a - q) / sqrt(a + q)`, with `0` when both counts are zero.
pub fn z_score(a: i64, q: i64) -> Result<f64> {
    if a < 0 || q < 0 {
        return Err(Error::contract(format!(
            "counts must be nonnegative, got a={a}, q={q}"
        )));
    }
    if a + q == 0 {
        return Ok(0.0);
    }
    Ok((a - q) as f64 / ((a + q) as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    BestAnswerRatio,
    NumAnswers,
    ZScore,
}

#[derive(Default)]
struct TopicStats {
    answers: i64,
    accepted: i64,
    questions: i64,
}

/// Ranks the users who answered at least one question of `topics[topic]` by
/// a count statistic over that topic's questions.
pub fn baseline_rank(
    data: &QaDataset,
    topics: &[String],
    topic: usize,
    kind: BaselineKind,
    k: usize,
) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::contract("k must be at least 1"));
    }
    let name = topics.get(topic).ok_or_else(|| {
        Error::contract(format!(
            "topic {topic} out of range for {} topics",
            topics.len()
        ))
    })?;
    let in_topic = |q: &crate::ingest::Post| data.topic_names(q).iter().any(|t| t == name);

    let mut stats: BTreeMap<UserId, TopicStats> = BTreeMap::new();
    for post in data.posts() {
        let Some(owner) = post.owner else { continue };
        let q = data.governing_question(post);
        if !in_topic(q) {
            continue;
        }
        let s = stats.entry(owner).or_default();
        match (&post.kind, &q.kind) {
            (PostKind::Question { .. }, _) => s.questions += 1,
            (
                PostKind::Answer { .. },
                PostKind::Question {
                    accepted_answer, ..
                },
            ) => {
                s.answers += 1;
                if *accepted_answer == Some(post.id) {
                    s.accepted += 1;
                }
            }
            (PostKind::Answer { .. }, PostKind::Answer { .. }) => {
                unreachable!("governing question is a question")
            }
        }
    }
    let mut scores = Vec::new();
    for (user, s) in stats {
        if s.answers == 0 {
            continue;
        }
        let value = match kind {
            BaselineKind::BestAnswerRatio => s.accepted as f64 / s.answers as f64,
            BaselineKind::NumAnswers => s.answers as f64,
            BaselineKind::ZScore => z_score(s.answers, s.questions)?,
        };
        scores.push((user, value));
    }
    Ok(RankedList::from_scores(topic, scores, k))
}

/// `|top-k ∩ relevant| / min(k, |recommended|)`, and 0 for an empty list.
pub fn precision_at_k(
    recommended: &RankedList,
    relevant: &BTreeSet<UserId>,
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::contract("k must be at least 1"));
    }
    let denom = k.min(recommended.len());
    if denom == 0 {
        return Ok(0.0);
    }
    let hits = recommended
        .users()
        .take(k)
        .filter(|u| relevant.contains(u))
        .count();
    Ok(hits as f64 / denom as f64)
}

pub fn mean_reciprocal_rank(ranks: &[usize]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::contract("mean reciprocal rank of an empty list"));
    }
    if ranks.contains(&0) {
        return Err(Error::contract("ranks are 1-based"));
    }
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub topic: String,
    pub k: usize,
    pub precision: f64,
    /// Reciprocal rank of the ledger's top user in the model ranking, 0 when
    /// the model gives no signal for the topic.
    pub mrr: f64,
    pub n_candidates: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Per topic, then per k in the order requested.
    pub rows: Vec<ReportRow>,
    /// One row per k, averaged over evaluated topics, with topic `ALL`.
    pub summary: Vec<ReportRow>,
    /// Topics without any ledger entry among the answerers.
    pub skipped_topics: usize,
    pub no_signal_topics: usize,
}

impl EvalReport {
    pub fn all_skipped(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("topic,k,precision,mrr,n_candidates\n");
        for r in self.rows.iter().chain(&self.summary) {
            let _ = writeln!(
                out,
                "{},{},{:.10},{:.10},{}",
                r.topic, r.k, r.precision, r.mrr, r.n_candidates
            );
        }
        out
    }
}

/// Scores the model against the ledger. For each topic the relevant set at
/// cutoff `k` is the ledger's top-`k` answerers, and the MRR query targets the
/// ledger's top answerer.
pub fn evaluate(
    model: &CpModel,
    tables: &IndexTables,
    ledger: &ReputationLedger,
    k_list: &[usize],
) -> Result<EvalReport> {
    if k_list.is_empty() || k_list.contains(&0) {
        return Err(Error::contract("k list must be nonempty with every k >= 1"));
    }
    if model.dims()[1] != tables.topics.len() || model.dims()[3] != tables.answerers.len() {
        return Err(Error::Version(format!(
            "model dims {:?} do not match index tables ({} topics, {} answerers)",
            model.dims(),
            tables.topics.len(),
            tables.answerers.len()
        )));
    }
    let candidates: BTreeSet<UserId> = tables.answerers.iter().copied().collect();
    let mut report = EvalReport::default();
    let mut rr_all = Vec::new();
    let mut precision_all: Vec<Vec<f64>> = vec![Vec::new(); k_list.len()];
    let mut candidate_total = 0;

    for (j, name) in tables.topics.iter().enumerate() {
        let truth: Vec<UserId> = ledger
            .topic_ranking(name)
            .into_iter()
            .map(|(u, _)| u)
            .filter(|u| candidates.contains(u))
            .collect();
        if truth.is_empty() {
            report.skipped_topics += 1;
            continue;
        }
        let ranking = rank_experts(model, &tables.answerers, j, tables.answerers.len())?;
        if ranking.status == RankStatus::NoSignal {
            report.no_signal_topics += 1;
        }
        let rr = ranking.position(truth[0]).map_or(0.0, |p| 1.0 / p as f64);
        rr_all.push(rr);
        candidate_total += ranking.len();
        for (slot, &k) in k_list.iter().enumerate() {
            let relevant: BTreeSet<UserId> = truth.iter().take(k).copied().collect();
            let p = precision_at_k(&ranking, &relevant, k)?;
            precision_all[slot].push(p);
            report.rows.push(ReportRow {
                topic: name.clone(),
                k,
                precision: p,
                mrr: rr,
                n_candidates: ranking.len(),
            });
        }
    }
    if !rr_all.is_empty() {
        let mrr = rr_all.iter().sum::<f64>() / rr_all.len() as f64;
        for (slot, &k) in k_list.iter().enumerate() {
            let ps = &precision_all[slot];
            report.summary.push(ReportRow {
                topic: "ALL".into(),
                k,
                precision: ps.iter().sum::<f64>() / ps.len() as f64,
                mrr,
                n_candidates: candidate_total,
            });
        }
    }
    Ok(report)
}
