//! Reader for the public dump layout: `Posts.xml`, `Votes.xml` and
//! `Users.xml`, each a sequence of `<row .../>` elements with attributes.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use quick_xml::events::Event;
use quick_xml::{Reader, XmlVersion};

use super::{IngestWarnings, Post, PostKind, QaDataset, UserId, Vote, VoteKind};
use crate::error::{Error, Result};

const POST_QUESTION: i64 = 1;
const POST_ANSWER: i64 = 2;
const VOTE_ACCEPTED: i64 = 1;
const VOTE_UP: i64 = 2;
const VOTE_DOWN: i64 = 3;

struct Row {
    line: usize,
    attrs: HashMap<String, String>,
}

struct RowSource<'a> {
    path: &'a Path,
}

impl RowSource<'_> {
    fn error(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    fn required(&self, row: &Row, key: &str) -> Result<i64> {
        self.optional(row, key)?
            .ok_or_else(|| self.error(row.line, format!("missing attribute {key}")))
    }

    fn optional(&self, row: &Row, key: &str) -> Result<Option<i64>> {
        row.attrs
            .get(key)
            .map(|v| {
                v.trim().parse::<i64>().map_err(|_| {
                    self.error(row.line, format!("attribute {key}={v:?} is not an integer"))
                })
            })
            .transpose()
    }

    fn rows(&self, text: &str) -> Result<Vec<Row>> {
        let mut reader = Reader::from_str(text);
        let mut lines = LineCounter::new(text);
        let mut rows = Vec::new();
        loop {
            let event = reader.read_event();
            match event {
                Err(e) => {
                    let line = lines.line_at(reader.error_position() as usize);
                    return Err(self.error(line, e.to_string()));
                }
                Ok(Event::Eof) => break,
                Ok(Event::Empty(e)) | Ok(Event::Start(e)) if e.name().as_ref() == "row" => {
                    let line = lines.line_at(reader.buffer_position() as usize);
                    let mut attrs = HashMap::new();
                    for attr in e.attributes() {
                        let attr = attr.map_err(|err| self.error(line, err.to_string()))?;
                        let key = attr.key.as_ref().to_owned();
                        let value = attr
                            .normalized_value(XmlVersion::Implicit1_0)
                            .map_err(|err| self.error(line, err.to_string()))?
                            .into_owned();
                        attrs.insert(key, value);
                    }
                    rows.push(Row { line, attrs });
                }
                Ok(_) => {}
            }
        }
        Ok(rows)
    }
}

/// Maps byte offsets to 1-based line numbers for monotonically increasing
/// offsets.
struct LineCounter<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
}

impl<'a> LineCounter<'a> {
    fn new(text: &'a str) -> Self {
        LineCounter {
            bytes: text.as_bytes(),
            pos: 0,
            line: 1,
        }
    }

    fn line_at(&mut self, offset: usize) -> usize {
        let offset = offset.min(self.bytes.len());
        if offset < self.pos {
            return 1 + self.bytes[..offset].iter().filter(|&&b| b == b'\n').count();
        }
        self.line += self.bytes[self.pos..offset]
            .iter()
            .filter(|&&b| b == b'\n')
            .count();
        self.pos = offset;
        self.line
    }
}

/// Splits `<a><b>` or `|a|b|` tag lists.
fn parse_tags(raw: &str) -> Vec<String> {
    raw.split(['<', '>', '|'])
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses one subsite's dump files into a normalized dataset.
pub fn parse_dump(
    posts_file: &Path,
    votes_file: &Path,
    users_file: &Path,
    subsite_name: &str,
) -> Result<QaDataset> {
    let posts = read(posts_file)?;
    let votes = read(votes_file)?;
    let users = read(users_file)?;
    parse_inner(
        (&posts, posts_file),
        (&votes, votes_file),
        (&users, users_file),
        subsite_name,
    )
}

/// [`parse_dump`] over in-memory documents.
pub fn parse_dump_str(
    posts: &str,
    votes: &str,
    users: &str,
    subsite_name: &str,
) -> Result<QaDataset> {
    parse_inner(
        (posts, &PathBuf::from("Posts.xml")),
        (votes, &PathBuf::from("Votes.xml")),
        (users, &PathBuf::from("Users.xml")),
        subsite_name,
    )
}

fn parse_inner(
    posts: (&str, &Path),
    votes: (&str, &Path),
    users: (&str, &Path),
    subsite_name: &str,
) -> Result<QaDataset> {
    let mut warnings = IngestWarnings::default();

    let src = RowSource { path: users.1 };
    let user_ids = src
        .rows(users.0)?
        .iter()
        .map(|row| src.required(row, "Id").map(UserId))
        .collect::<Result<Vec<_>>>()?;

    let src = RowSource { path: posts.1 };
    let mut post_map: BTreeMap<i64, Post> = BTreeMap::new();
    let mut explicit_score: HashMap<i64, bool> = HashMap::new();
    for row in src.rows(posts.0)? {
        let id = src.required(&row, "Id")?;
        let kind = match src.required(&row, "PostTypeId")? {
            POST_QUESTION => PostKind::Question {
                tags: row
                    .attrs
                    .get("Tags")
                    .map(|t| parse_tags(t))
                    .unwrap_or_default(),
                accepted_answer: src.optional(&row, "AcceptedAnswerId")?,
            },
            POST_ANSWER => PostKind::Answer {
                parent: src.required(&row, "ParentId")?,
            },
            _ => {
                warnings.skipped_posts += 1;
                continue;
            }
        };
        let score = src.optional(&row, "Score")?;
        explicit_score.insert(id, score.is_some());
        let post = Post {
            subsite: 0,
            id,
            kind,
            owner: src.optional(&row, "OwnerUserId")?.map(UserId),
            score: score.unwrap_or(0),
        };
        if post_map.insert(id, post).is_some() {
            return Err(Error::Data(format!(
                "duplicate post id {id} in {}",
                posts.1.display()
            )));
        }
    }

    let src = RowSource { path: votes.1 };
    let mut vote_list = Vec::new();
    for row in src.rows(votes.0)? {
        let post_id = src.required(&row, "PostId")?;
        let kind = match src.required(&row, "VoteTypeId")? {
            VOTE_ACCEPTED => VoteKind::Accept,
            VOTE_UP => VoteKind::Upvote,
            VOTE_DOWN => VoteKind::Downvote,
            _ => {
                warnings.ignored_vote_kinds += 1;
                continue;
            }
        };
        if !post_map.contains_key(&post_id) {
            warnings.votes_on_missing_posts += 1;
            continue;
        }
        vote_list.push(Vote {
            subsite: 0,
            post_id,
            voter: src.optional(&row, "UserId")?.map(UserId),
            kind,
        });
    }

    // Orphaned answers are left for QaDataset::from_parts to reject.
    let answer_parent: HashMap<i64, i64> = post_map
        .values()
        .filter_map(|p| match p.kind {
            PostKind::Answer { parent } => Some((p.id, parent)),
            PostKind::Question { .. } => None,
        })
        .collect();
    for post in post_map.values_mut() {
        if let PostKind::Question {
            accepted_answer, ..
        } = &mut post.kind
        {
            if let Some(a) = *accepted_answer {
                if answer_parent.get(&a) != Some(&post.id) {
                    *accepted_answer = None;
                    warnings.dangling_accepted_answers += 1;
                }
            }
        }
    }
    vote_list.retain(|v| {
        if v.kind != VoteKind::Accept {
            return true;
        }
        let Some(&parent) = answer_parent.get(&v.post_id) else {
            warnings.invalid_accepts += 1;
            return false;
        };
        if let Some(Post {
            kind: PostKind::Question {
                accepted_answer, ..
            },
            ..
        }) = post_map.get_mut(&parent)
        {
            accepted_answer.get_or_insert(v.post_id);
        }
        true
    });

    let mut derived: HashMap<i64, i64> = HashMap::new();
    for v in &vote_list {
        let delta = match v.kind {
            VoteKind::Upvote => 1,
            VoteKind::Downvote => -1,
            VoteKind::Accept => 0,
        };
        *derived.entry(v.post_id).or_default() += delta;
    }
    for post in post_map.values_mut() {
        if !explicit_score[&post.id] {
            post.score = derived.get(&post.id).copied().unwrap_or(0);
        }
    }

    let mut dataset = QaDataset::from_parts(
        vec![subsite_name.to_owned()],
        user_ids,
        post_map.into_values(),
        vote_list,
    )?;
    dataset.warnings = warnings;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tag_formats() {
        assert_eq!(parse_tags("<rust><c++>"), vec!["rust", "c++"]);
        assert_eq!(parse_tags("|rust|c++|"), vec!["rust", "c++"]);
        assert!(parse_tags("").is_empty());
    }

    #[test]
    fn empty_documents_give_empty_dataset() {
        let d = parse_dump_str("", "", "", "s").unwrap();
        assert_eq!(d.posts().count(), 0);
        assert!(d.votes().is_empty());
        assert!(d.users().is_empty());
    }

    #[test]
    fn malformed_xml_reports_line() {
        let posts = "<posts>\n  <row Id=\"1\" PostTypeId=\"1\" />\n  <row Id=\"2\n";
        match parse_dump_str(posts, "", "", "s") {
            Err(Error::Parse { line, .. }) => assert!(line >= 3, "line {line}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_integer_attribute_reports_line() {
        let posts = "<posts>\n<row Id=\"x\" PostTypeId=\"1\" />\n</posts>";
        match parse_dump_str(posts, "", "", "s") {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("Id"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_votes_are_counted() {
        let posts =
            r#"<posts><row Id="1" PostTypeId="1" OwnerUserId="1" Tags="&lt;a&gt;" /></posts>"#;
        let votes = r#"<votes><row Id="1" PostId="1" VoteTypeId="5" /><row Id="2" PostId="9" VoteTypeId="2" /></votes>"#;
        let d = parse_dump_str(posts, votes, "", "s").unwrap();
        assert_eq!(d.warnings.ignored_vote_kinds, 1);
        assert_eq!(d.warnings.votes_on_missing_posts, 1);
        assert_eq!(d.questions().next().unwrap().tags(), ["a"]);
    }

    #[test]
    fn missing_score_is_derived_from_votes() {
        let posts = r#"<posts><row Id="1" PostTypeId="1" OwnerUserId="1" /></posts>"#;
        let votes = r#"<votes><row PostId="1" VoteTypeId="2" /><row PostId="1" VoteTypeId="2" /><row PostId="1" VoteTypeId="3" /></votes>"#;
        let d = parse_dump_str(posts, votes, "", "s").unwrap();
        assert_eq!(d.post(0, 1).unwrap().score, 1);
    }

    #[test]
    fn accept_vote_sets_accepted_answer() {
        let posts = r#"<posts>
            <row Id="1" PostTypeId="1" OwnerUserId="1" Tags="|a|" />
            <row Id="2" PostTypeId="2" ParentId="1" OwnerUserId="2" />
        </posts>"#;
        let votes =
            r#"<votes><row PostId="2" VoteTypeId="1" /><row PostId="1" VoteTypeId="1" /></votes>"#;
        let d = parse_dump_str(posts, votes, "", "s").unwrap();
        assert_eq!(d.warnings.invalid_accepts, 1);
        match &d.post(0, 1).unwrap().kind {
            PostKind::Question {
                accepted_answer, ..
            } => assert_eq!(*accepted_answer, Some(2)),
            _ => unreachable!(),
        }
    }

    #[test]
    fn dangling_accepted_answer_is_dropped() {
        let posts = r#"<posts><row Id="1" PostTypeId="1" AcceptedAnswerId="7" /></posts>"#;
        let d = parse_dump_str(posts, "", "", "s").unwrap();
        assert_eq!(d.warnings.dangling_accepted_answers, 1);
    }

    #[test]
    fn duplicate_post_is_data_error() {
        let posts = r#"<posts><row Id="1" PostTypeId="1" /><row Id="1" PostTypeId="1" /></posts>"#;
        assert!(matches!(
            parse_dump_str(posts, "", "", "s"),
            Err(Error::Data(_))
        ));
    }
}
