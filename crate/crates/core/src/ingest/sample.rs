use std::collections::{BTreeSet, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Post, PostKind, QaDataset, UserId};
use crate::error::{Error, Result};

/// Samples `n_users` users uniformly without replacement and keeps their
/// posts, the answers to their questions, the questions they answered and
/// the votes on kept posts.
///
/// Users are drawn from the ascending user list with a ChaCha8 stream seeded
/// by `seed`. Asking for at least as many users as exist returns the dataset
/// unchanged, with `sample_clamped` set when the request exceeded it.
pub fn sample_dataset(data: QaDataset, n_users: usize, seed: u64) -> Result<QaDataset> {
    if n_users == 0 {
        return Err(Error::contract("n_users must be at least 1"));
    }
    let total = data.users().len();
    if n_users >= total {
        let mut data = data;
        data.warnings.sample_clamped |= n_users > total;
        return Ok(data);
    }

    let all: Vec<UserId> = data.users().iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampled: BTreeSet<UserId> = rand::seq::index::sample(&mut rng, all.len(), n_users)
        .into_iter()
        .map(|i| all[i])
        .collect();
    let owned = |p: &Post| p.owner.is_some_and(|u| sampled.contains(&u));

    let (subsites, _, posts, votes, warnings) = data.into_parts();

    let mut keep: HashSet<(usize, i64)> = HashSet::new();
    for (key, post) in &posts {
        match post.kind {
            PostKind::Question { .. } => {
                if owned(post) {
                    keep.insert(*key);
                }
            }
            PostKind::Answer { parent } => {
                let q = &posts[&(post.subsite, parent)];
                if owned(post) || owned(q) {
                    keep.insert(*key);
                    keep.insert((post.subsite, parent));
                }
            }
        }
    }

    let kept_posts: Vec<Post> = posts
        .iter()
        .filter(|(k, _)| keep.contains(k))
        .map(|(_, p)| {
            let mut p = p.clone();
            if let PostKind::Question {
                accepted_answer, ..
            } = &mut p.kind
            {
                if accepted_answer.is_some_and(|a| !keep.contains(&(p.subsite, a))) {
                    *accepted_answer = None;
                }
            }
            p
        })
        .collect();
    let kept_votes = votes
        .into_iter()
        .filter(|v| keep.contains(&(v.subsite, v.post_id)));

    let mut out = QaDataset::from_parts(subsites, [], kept_posts, kept_votes)?;
    out.users = sampled;
    out.warnings = warnings;
    Ok(out)
}
