use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{PostKind, QaDataset, UserId, VoteKind};

pub const RULE_ANSWER_UPVOTED: i64 = 10;
pub const RULE_QUESTION_UPVOTED: i64 = 5;
pub const RULE_DOWNVOTED: i64 = -2;
pub const RULE_DOWNVOTE_CAST: i64 = -1;
pub const RULE_ACCEPTED: i64 = 15;

/// Per-user, per-topic reputation. Topics are namespaced `subsite/tag`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReputationLedger {
    scores: BTreeMap<(UserId, String), i64>,
    /// Downvotes on answers whose voter is unknown.
    pub skipped_downvote_casts: usize,
    /// Events whose credited post has no owner.
    pub skipped_unowned: usize,
}

impl ReputationLedger {
    pub fn from_scores(scores: impl IntoIterator<Item = ((UserId, String), i64)>) -> Self {
        let mut ledger = ReputationLedger::default();
        for ((user, topic), delta) in scores {
            *ledger.scores.entry((user, topic)).or_default() += delta;
        }
        ledger
    }

    pub fn get(&self, user: UserId, topic: &str) -> Option<i64> {
        self.scores.get(&(user, topic.to_owned())).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    /// Entries ordered by user then topic.
    pub fn iter(&self) -> impl Iterator<Item = (UserId, &str, i64)> {
        self.scores.iter().map(|((u, t), s)| (*u, t.as_str(), *s))
    }

    /// Users with an entry for `topic`, by score descending then user id.
    pub fn topic_ranking(&self, topic: &str) -> Vec<(UserId, i64)> {
        let mut out: Vec<(UserId, i64)> = self
            .scores
            .iter()
            .filter(|((_, t), _)| t == topic)
            .map(|((u, _), s)| (*u, *s))
            .collect();
        out.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }

    /// Topics that have at least one entry, in ascending order.
    pub fn topics(&self) -> Vec<&str> {
        let mut t: Vec<&str> = self.scores.keys().map(|(_, t)| t.as_str()).collect();
        t.sort_unstable();
        t.dedup();
        t
    }

    fn credit(&mut self, user: UserId, topics: &[String], delta: i64) {
        for t in topics {
            *self.scores.entry((user, t.clone())).or_default() += delta;
        }
    }
}

/// Applies the five reputation rules. Every event is credited to the topics
/// of the governing question.
pub fn reputation_scores(data: &QaDataset) -> ReputationLedger {
    let mut ledger = ReputationLedger::default();
    for vote in data.votes() {
        let post = data
            .post(vote.subsite, vote.post_id)
            .expect("dataset votes reference existing posts");
        let topics = data.topic_names(data.governing_question(post));
        let is_answer = !post.is_question();
        let delta = match (vote.kind, is_answer) {
            (VoteKind::Upvote, true) => RULE_ANSWER_UPVOTED,
            (VoteKind::Upvote, false) => RULE_QUESTION_UPVOTED,
            (VoteKind::Downvote, _) => RULE_DOWNVOTED,
            // Credited once per question through its accepted answer below.
            (VoteKind::Accept, _) => continue,
        };
        match post.owner {
            Some(owner) => ledger.credit(owner, &topics, delta),
            None => ledger.skipped_unowned += 1,
        }
        if vote.kind == VoteKind::Downvote && is_answer {
            match vote.voter {
                Some(voter) => ledger.credit(voter, &topics, RULE_DOWNVOTE_CAST),
                None => ledger.skipped_downvote_casts += 1,
            }
        }
    }
    for question in data.questions() {
        if let PostKind::Question {
            accepted_answer: Some(a),
            ..
        } = question.kind
        {
            let topics = data.topic_names(question);
            match data.post(question.subsite, a).and_then(|p| p.owner) {
                Some(owner) => ledger.credit(owner, &topics, RULE_ACCEPTED),
                None => ledger.skipped_unowned += 1,
            }
        }
    }
    ledger
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::parse_dump_str;

    #[test]
    fn accepted_answer_with_two_upvotes() {
        let posts = r#"<posts>
            <row Id="1" PostTypeId="1" OwnerUserId="1" Tags="&lt;t&gt;" />
            <row Id="2" PostTypeId="2" ParentId="1" OwnerUserId="2" />
        </posts>"#;
        let votes = r#"<votes>
            <row PostId="2" VoteTypeId="2" /><row PostId="2" VoteTypeId="2" /><row PostId="2" VoteTypeId="1" />
        </votes>"#;
        let d = parse_dump_str(posts, votes, "", "s").unwrap();
        let l = reputation_scores(&d);
        assert_eq!(l.get(UserId(2), "s/t"), Some(35));
        assert_eq!(l.get(UserId(1), "s/t"), None);
    }

    #[test]
    fn question_up_and_down() {
        let posts =
            r#"<posts><row Id="1" PostTypeId="1" OwnerUserId="1" Tags="&lt;t&gt;" /></posts>"#;
        let votes =
            r#"<votes><row PostId="1" VoteTypeId="2" /><row PostId="1" VoteTypeId="3" /></votes>"#;
        let l = reputation_scores(&parse_dump_str(posts, votes, "", "s").unwrap());
        assert_eq!(l.get(UserId(1), "s/t"), Some(3));
    }

    #[test]
    fn downvoting_an_answer_costs_the_voter() {
        let posts = r#"<posts>
            <row Id="1" PostTypeId="1" OwnerUserId="1" Tags="&lt;t&gt;&lt;u&gt;" />
            <row Id="2" PostTypeId="2" ParentId="1" OwnerUserId="2" />
        </posts>"#;
        let votes = r#"<votes><row PostId="2" VoteTypeId="3" UserId="9" /><row PostId="2" VoteTypeId="3" /></votes>"#;
        let l = reputation_scores(&parse_dump_str(posts, votes, "", "s").unwrap());
        for t in ["s/t", "s/u"] {
            assert_eq!(l.get(UserId(9), t), Some(-1));
            assert_eq!(l.get(UserId(2), t), Some(-4));
        }
        assert_eq!(l.skipped_downvote_casts, 1);
    }

    #[test]
    fn ties_rank_by_user_id() {
        let l = ReputationLedger::from_scores([
            ((UserId(5), "t".to_string()), 3),
            ((UserId(2), "t".to_string()), 3),
            ((UserId(7), "t".to_string()), 9),
        ]);
        assert_eq!(
            l.topic_ranking("t"),
            vec![(UserId(7), 9), (UserId(2), 3), (UserId(5), 3)]
        );
    }
}
