//! Q&A dump ingestion: parsing, user-first sampling, per-topic reputation
//! and assembly of the tensor, membership matrices and hierarchy tree.

mod build;
mod dump;
mod reputation;
mod sample;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use build::{
    answer_event_count, build_inputs, BuildConfig, IndexTables, ModelInputs, QuestionKey,
    DEFAULT_BUCKET_BOUNDS,
};
pub use dump::{parse_dump, parse_dump_str};
pub use reputation::{
    reputation_scores, ReputationLedger, RULE_ACCEPTED, RULE_ANSWER_UPVOTED, RULE_DOWNVOTED,
    RULE_DOWNVOTE_CAST, RULE_QUESTION_UPVOTED,
};
pub use sample::sample_dataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub i64);

impl std::fmt::Display for UserId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PostKind {
    Question {
        tags: Vec<String>,
        accepted_answer: Option<i64>,
    },
    Answer {
        parent: i64,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Post {
    /// Index into [`QaDataset::subsites`].
    pub subsite: usize,
    pub id: i64,
    pub kind: PostKind,
    /// `None` for posts whose owner was deleted.
    pub owner: Option<UserId>,
    pub score: i64,
}

impl Post {
    pub fn is_question(&self) -> bool {
        matches!(self.kind, PostKind::Question { .. })
    }

    pub fn tags(&self) -> &[String] {
        match &self.kind {
            PostKind::Question { tags, .. } => tags,
            PostKind::Answer { .. } => &[],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VoteKind {
    Upvote,
    Downvote,
    Accept,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Vote {
    pub subsite: usize,
    pub post_id: i64,
    pub voter: Option<UserId>,
    pub kind: VoteKind,
}

/// Counts of records dropped or adjusted while normalizing a dump.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestWarnings {
    /// Votes of a kind other than accept, upvote or downvote.
    pub ignored_vote_kinds: usize,
    /// Votes referencing posts absent from the dump.
    pub votes_on_missing_posts: usize,
    /// Accept votes that target something other than an answer.
    pub invalid_accepts: usize,
    /// Accepted-answer references to answers absent from the question.
    pub dangling_accepted_answers: usize,
    /// Posts that are neither questions nor answers.
    pub skipped_posts: usize,
    /// Set when sampling asked for more users than exist.
    pub sample_clamped: bool,
}

impl IngestWarnings {
    fn absorb(&mut self, other: &IngestWarnings) {
        self.ignored_vote_kinds += other.ignored_vote_kinds;
        self.votes_on_missing_posts += other.votes_on_missing_posts;
        self.invalid_accepts += other.invalid_accepts;
        self.dangling_accepted_answers += other.dangling_accepted_answers;
        self.skipped_posts += other.skipped_posts;
        self.sample_clamped |= other.sample_clamped;
    }
}

/// Normalized posts, votes and users from one or more subsites.
///
/// Posts are keyed by `(subsite index, post id)`. User ids form one table
/// shared across subsites.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QaDataset {
    subsites: Vec<String>,
    users: BTreeSet<UserId>,
    posts: BTreeMap<(usize, i64), Post>,
    votes: Vec<Vote>,
    pub warnings: IngestWarnings,
}

impl QaDataset {
    /// Assembles a dataset, checking that every answer's parent is a question
    /// of the same subsite, accepted answers belong to their question, and
    /// votes reference existing posts.
    pub fn from_parts(
        subsites: Vec<String>,
        users: impl IntoIterator<Item = UserId>,
        posts: impl IntoIterator<Item = Post>,
        votes: impl IntoIterator<Item = Vote>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for post in posts {
            if post.subsite >= subsites.len() {
                return Err(Error::Data(format!(
                    "post {} has unknown subsite {}",
                    post.id, post.subsite
                )));
            }
            let key = (post.subsite, post.id);
            if map.insert(key, post).is_some() {
                return Err(Error::Data(format!(
                    "duplicate post id {} in subsite {}",
                    key.1, subsites[key.0]
                )));
            }
        }
        let mut users: BTreeSet<UserId> = users.into_iter().collect();
        for post in map.values() {
            match &post.kind {
                PostKind::Answer { parent } => match map.get(&(post.subsite, *parent)) {
                    Some(p) if p.is_question() => {}
                    _ => {
                        return Err(Error::Data(format!(
                            "answer {} references missing question {parent}",
                            post.id
                        )))
                    }
                },
                PostKind::Question {
                    accepted_answer: Some(a),
                    ..
                } => match map.get(&(post.subsite, *a)) {
                    Some(Post {
                        kind: PostKind::Answer { parent },
                        ..
                    }) if *parent == post.id => {}
                    _ => {
                        return Err(Error::Data(format!(
                            "question {} accepts {a}, which is not one of its answers",
                            post.id
                        )))
                    }
                },
                PostKind::Question { .. } => {}
            }
            users.extend(post.owner);
        }
        let mut votes: Vec<Vote> = votes.into_iter().collect();
        for vote in &votes {
            if !map.contains_key(&(vote.subsite, vote.post_id)) {
                return Err(Error::Data(format!(
                    "vote references missing post {}",
                    vote.post_id
                )));
            }
            users.extend(vote.voter);
        }
        votes.sort();
        Ok(QaDataset {
            subsites,
            users,
            posts: map,
            votes,
            warnings: IngestWarnings::default(),
        })
    }

    /// Concatenates datasets from different subsites.
    pub fn merge(parts: impl IntoIterator<Item = QaDataset>) -> Result<Self> {
        let mut out = QaDataset::default();
        for part in parts {
            let offset = out.subsites.len();
            for name in &part.subsites {
                if out.subsites.contains(name) {
                    return Err(Error::Data(format!("subsite {name} appears twice")));
                }
            }
            out.subsites.extend(part.subsites);
            out.users.extend(part.users);
            for ((s, id), mut post) in part.posts {
                post.subsite += offset;
                out.posts.insert((s + offset, id), post);
            }
            out.votes.extend(part.votes.into_iter().map(|mut v| {
                v.subsite += offset;
                v
            }));
            out.warnings.absorb(&part.warnings);
        }
        out.votes.sort();
        Ok(out)
    }

    pub fn subsites(&self) -> &[String] {
        &self.subsites
    }

    pub fn users(&self) -> &BTreeSet<UserId> {
        &self.users
    }

    pub fn posts(&self) -> impl Iterator<Item = &Post> {
        self.posts.values()
    }

    pub fn post(&self, subsite: usize, id: i64) -> Option<&Post> {
        self.posts.get(&(subsite, id))
    }

    pub fn votes(&self) -> &[Vote] {
        &self.votes
    }

    pub fn questions(&self) -> impl Iterator<Item = &Post> {
        self.posts().filter(|p| p.is_question())
    }

    pub fn answers(&self) -> impl Iterator<Item = &Post> {
        self.posts().filter(|p| !p.is_question())
    }

    /// The question governing `post`: itself, or the parent of an answer.
    pub fn governing_question<'a>(&'a self, post: &'a Post) -> &'a Post {
        match post.kind {
            PostKind::Question { .. } => post,
            PostKind::Answer { parent } => &self.posts[&(post.subsite, parent)],
        }
    }

    /// Namespaced topic names `subsite/tag` attached to `question`.
    pub fn topic_names(&self, question: &Post) -> Vec<String> {
        question
            .tags()
            .iter()
            .map(|t| topic_name(&self.subsites[question.subsite], t))
            .collect()
    }

    /// All namespaced topics, ordered by subsite then tag.
    pub fn topics(&self) -> Vec<String> {
        let set: BTreeSet<(usize, &str)> = self
            .questions()
            .flat_map(|q| q.tags().iter().map(move |t| (q.subsite, t.as_str())))
            .collect();
        set.into_iter()
            .map(|(s, t)| topic_name(&self.subsites[s], t))
            .collect()
    }

    pub(crate) fn into_parts(
        self,
    ) -> (
        Vec<String>,
        BTreeSet<UserId>,
        BTreeMap<(usize, i64), Post>,
        Vec<Vote>,
        IngestWarnings,
    ) {
        (
            self.subsites,
            self.users,
            self.posts,
            self.votes,
            self.warnings,
        )
    }
}

pub fn topic_name(subsite: &str, tag: &str) -> String {
    format!("{subsite}/{tag}")
}
