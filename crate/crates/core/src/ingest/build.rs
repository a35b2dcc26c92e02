use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{topic_name, Post, PostKind, QaDataset, UserId};
use crate::coupled::MembershipMatrix;
use crate::error::{Error, Result};
use crate::tensor::SparseTensor4;
use crate::tree::{HierarchyTree, TreeBuilder};

/// Question-score thresholds. A score falls in the bucket equal to the number
/// of bounds it reaches, giving the bands `<0, 0, 1-2, 3-9, >=10`.
pub const DEFAULT_BUCKET_BOUNDS: [i64; 4] = [0, 1, 3, 10];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub bucket_bounds: Vec<i64>,
    /// `(s, g)` for every internal tree node.
    pub tree_s: f64,
    pub tree_g: f64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            bucket_bounds: DEFAULT_BUCKET_BOUNDS.to_vec(),
            tree_s: 0.5,
            tree_g: 0.5,
        }
    }
}

impl BuildConfig {
    pub fn buckets(&self) -> usize {
        self.bucket_bounds.len() + 1
    }

    pub fn bucket(&self, score: i64) -> usize {
        self.bucket_bounds.iter().filter(|&&b| b <= score).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bucket_bounds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract(
                "vote bucket bounds must be strictly increasing",
            ));
        }
        for (name, v) in [("tree s", self.tree_s), ("tree g", self.tree_g)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::contract(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        if (self.tree_s + self.tree_g - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!(
                "tree s + g must equal 1, got {} + {}",
                self.tree_s, self.tree_g
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QuestionKey {
    pub subsite: String,
    pub post_id: i64,
}

/// Maps every tensor and matrix index back to the entity it stands for.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexTables {
    /// Rows of the site membership matrix and level-1 tree nodes.
    pub subsites: Vec<String>,
    /// Mode 2 and rows of the topic membership matrix, as `subsite/tag`.
    pub topics: Vec<String>,
    /// Mode 1, in tree leaf order.
    pub questions: Vec<QuestionKey>,
    /// Mode 4 and the columns of both membership matrices.
    pub answerers: Vec<UserId>,
    pub bucket_bounds: Vec<i64>,
}

impl IndexTables {
    pub fn topic_index(&self, topic: &str) -> Option<usize> {
        self.topics.iter().position(|t| t == topic)
    }

    pub fn answerer_index(&self, user: UserId) -> Option<usize> {
        self.answerers.binary_search(&user).ok()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelInputs {
    pub tensor: SparseTensor4,
    pub site_membership: MembershipMatrix,
    pub topic_membership: MembershipMatrix,
    pub tree: HierarchyTree,
    pub tables: IndexTables,
}

/// Assembles the question x topic x vote-bucket x answerer tensor, the two
/// membership matrices and the subsite / topic / question tree.
///
/// Only tagged questions are indexed. Each owned answer to an indexed question
/// adds 1 at `(question, tag, bucket(question score), answerer)` for every tag
/// of the question. A question sits under the topic of its first tag.
pub fn build_inputs(data: &QaDataset, config: &BuildConfig) -> Result<ModelInputs> {
    config.validate()?;
    let names = data.subsites();

    let tagged: Vec<&Post> = data.questions().filter(|q| !q.tags().is_empty()).collect();
    if tagged.is_empty() {
        return Err(Error::EmptyInput("dataset has no tagged questions".into()));
    }

    let site_ids: BTreeSet<usize> = tagged.iter().map(|q| q.subsite).collect();
    let site_index: BTreeMap<usize, usize> =
        site_ids.iter().enumerate().map(|(i, &s)| (s, i)).collect();

    let topic_keys: BTreeSet<(usize, &str)> = tagged
        .iter()
        .flat_map(|q| q.tags().iter().map(move |t| (q.subsite, t.as_str())))
        .collect();
    let topic_index: BTreeMap<(usize, &str), usize> = topic_keys
        .iter()
        .enumerate()
        .map(|(i, &k)| (k, i))
        .collect();
    let topics: Vec<String> = topic_keys
        .iter()
        .map(|&(s, t)| topic_name(&names[s], t))
        .collect();

    let mut ordered: Vec<(usize, usize, i64)> = tagged
        .iter()
        .map(|q| {
            (
                q.subsite,
                topic_index[&(q.subsite, q.tags()[0].as_str())],
                q.id,
            )
        })
        .collect();
    ordered.sort_unstable();
    let question_row: BTreeMap<(usize, i64), usize> = ordered
        .iter()
        .enumerate()
        .map(|(row, &(s, _, id))| ((s, id), row))
        .collect();

    let events: Vec<(&Post, &Post, UserId)> = data
        .answers()
        .filter_map(|a| {
            let q = data.governing_question(a);
            let owner = a.owner?;
            question_row
                .contains_key(&(q.subsite, q.id))
                .then_some((a, q, owner))
        })
        .collect();
    let answerers: Vec<UserId> = events
        .iter()
        .map(|e| e.2)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if answerers.is_empty() {
        return Err(Error::EmptyInput(
            "no owned answers to tagged questions".into(),
        ));
    }
    let col = |u: UserId| answerers.binary_search(&u).expect("answerer indexed");

    let mut cells = Vec::new();
    let mut m_entries = Vec::new();
    let mut n_entries = Vec::new();
    for &(_, q, owner) in &events {
        let i = question_row[&(q.subsite, q.id)];
        let k = config.bucket(q.score);
        let l = col(owner);
        m_entries.push((site_index[&q.subsite], l));
        for tag in q.tags() {
            let j = topic_index[&(q.subsite, tag.as_str())];
            cells.push(([i, j, k, l], 1.0));
            n_entries.push((j, l));
        }
    }
    let dims = [
        ordered.len(),
        topics.len(),
        config.buckets(),
        answerers.len(),
    ];
    let tensor = SparseTensor4::new(dims, cells)?;
    let site_membership = MembershipMatrix::new(site_ids.len(), answerers.len(), m_entries)?;
    let topic_membership = MembershipMatrix::new(topics.len(), answerers.len(), n_entries)?;

    let mut b = TreeBuilder::new();
    let root = b.internal(None, config.tree_s, config.tree_g);
    let mut row = 0;
    for &site in &site_ids {
        let site_node = b.internal(Some(root), config.tree_s, config.tree_g);
        let mut current: Option<(usize, usize)> = None;
        for &(s, topic, _) in ordered.iter().filter(|o| o.0 == site) {
            debug_assert_eq!(s, site);
            let node = match current {
                Some((t, node)) if t == topic => node,
                _ => {
                    let node = b.internal(Some(site_node), config.tree_s, config.tree_g);
                    current = Some((topic, node));
                    node
                }
            };
            b.leaf(Some(node), row);
            row += 1;
        }
    }
    let tree = b.build()?;

    let tables = IndexTables {
        subsites: site_ids.iter().map(|&s| names[s].clone()).collect(),
        topics,
        questions: ordered
            .iter()
            .map(|&(s, _, id)| QuestionKey {
                subsite: names[s].clone(),
                post_id: id,
            })
            .collect(),
        answerers,
        bucket_bounds: config.bucket_bounds.clone(),
    };
    Ok(ModelInputs {
        tensor,
        site_membership,
        topic_membership,
        tree,
        tables,
    })
}

/// Number of owned answers to tagged questions, counted once per tag.
pub fn answer_event_count(data: &QaDataset) -> usize {
    data.answers()
        .filter(|a| a.owner.is_some())
        .map(|a| match data.governing_question(a).kind {
            PostKind::Question { ref tags, .. } => tags.len(),
            PostKind::Answer { .. } => 0,
        })
        .sum()
}
