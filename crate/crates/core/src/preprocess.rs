//! Rectification of user turns and edit-distance noise filtering.
//!
//! Every user turn is sent through a corrector; the Levenshtein distance
//! between the original and the corrected text measures how much had to be
//! rewritten. Interactions whose user turn needed a rewrite of at least
//! `threshold` code points are dropped as noise.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Interaction, Story, Turn, TurnKey};
use crate::providers::{CorrectorProvider, ProviderError};

pub const DEFAULT_EDIT_THRESHOLD: usize = 100;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("turn {0:?} has empty text")]
    EmptyTurn(TurnKey),
    #[error("no rectification for user turn {0:?}")]
    MissingRectification(TurnKey),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Edit distance over Unicode scalar values (insertions, deletions and
/// substitutions each cost 1).
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectifiedTurn {
    pub original: Turn,
    pub corrected_text: String,
    pub edit_distance: usize,
}

pub type RectificationMap = BTreeMap<TurnKey, RectifiedTurn>;

/// Corrects one turn. When the corrector claims determinism the call is
/// issued twice and the outputs compared.
pub fn rectify_turn(turn: &Turn, corrector: &dyn CorrectorProvider) -> Result<RectifiedTurn, PreprocessError> {
    if turn.text.is_empty() {
        return Err(PreprocessError::EmptyTurn(turn.key()));
    }
    let corrected = corrector.correct(&turn.text)?;
    if corrector.deterministic() && corrector.correct(&turn.text)? != corrected {
        return Err(ProviderError::NonDeterministic.into());
    }
    Ok(RectifiedTurn {
        edit_distance: levenshtein(&turn.text, &corrected),
        original: turn.clone(),
        corrected_text: corrected,
    })
}

/// Rectifies every user turn, with at most `parallelism` concurrent calls.
pub fn rectify_corpus(
    corpus: &Corpus,
    corrector: &dyn CorrectorProvider,
    parallelism: usize,
) -> Result<RectificationMap, PreprocessError> {
    let turns: Vec<&Turn> = corpus.stories.iter().flat_map(Story::user_turns).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| PreprocessError::Pool(e.to_string()))?;
    let rectified: Vec<RectifiedTurn> =
        pool.install(|| turns.par_iter().map(|t| rectify_turn(t, corrector)).collect::<Result<_, _>>())?;
    Ok(rectified.into_iter().map(|r| (r.original.key(), r)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub story_id: String,
    pub session_id: String,
    pub interaction_index: usize,
    pub user_turn_index: usize,
    pub edit_distance: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionLog {
    pub threshold: usize,
    pub before: usize,
    pub after: usize,
    pub excluded: Vec<Exclusion>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Filtered {
    pub corpus: Corpus,
    pub log: ExclusionLog,
    /// Rectifications of the retained turns, keyed by their new turn indices.
    pub rectified: RectificationMap,
}

/// Whether an interaction with this user-turn edit distance is dropped.
/// Uncorrected turns (distance 0) are always kept.
pub fn is_excluded(edit_distance: usize, threshold: usize) -> bool {
    edit_distance > 0 && edit_distance >= threshold
}

/// Drops interactions whose user turn has `edit_distance >= threshold` and
/// re-sequences interaction and turn indices within each story.
pub fn filter_by_edit_distance(
    corpus: &Corpus,
    rectified: &RectificationMap,
    threshold: usize,
) -> Result<Filtered, PreprocessError> {
    let mut excluded = Vec::new();
    let mut new_map = RectificationMap::new();
    let mut stories = Vec::with_capacity(corpus.stories.len());
    for story in &corpus.stories {
        let mut kept: Vec<Interaction> = Vec::with_capacity(story.len());
        for inter in &story.interactions {
            let key = inter.user_turn.key();
            let rect = rectified.get(&key).ok_or_else(|| PreprocessError::MissingRectification(key.clone()))?;
            if is_excluded(rect.edit_distance, threshold) {
                excluded.push(Exclusion {
                    story_id: story.story_id.clone(),
                    session_id: inter.session_id().to_string(),
                    interaction_index: inter.interaction_index,
                    user_turn_index: inter.user_turn.turn_index,
                    edit_distance: rect.edit_distance,
                    reason: format!("edit distance {} >= {threshold}", rect.edit_distance),
                });
                continue;
            }
            let k = kept.len();
            let mut user = inter.user_turn.clone();
            let mut ai = inter.ai_turn.clone();
            user.turn_index = 2 * k;
            ai.turn_index = 2 * k + 1;
            let mut rect = rect.clone();
            rect.original.turn_index = user.turn_index;
            new_map.insert(user.key(), rect);
            kept.push(Interaction { interaction_index: k, user_turn: user, ai_turn: ai });
        }
        stories.push(Story::new(story.story_id.clone(), story.dataset, story.genre, kept));
    }
    let out = Corpus { dataset: corpus.dataset, stories, provenance: corpus.provenance.clone() };
    let log = ExclusionLog {
        threshold,
        before: corpus.interaction_count(),
        after: out.interaction_count(),
        excluded,
    };
    Ok(Filtered { corpus: out, log, rectified: new_map })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Agent, Dataset, Genre};
    use crate::providers::{IdentityCorrector, ProviderResult, ReplaceCorrector};
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Full-matrix DP, kept separate from the two-row implementation.
    fn lev_matrix(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for i in 0..=a.len() {
            d[i][0] = i;
        }
        for j in 0..=b.len() {
            d[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
                d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
            }
        }
        d[a.len()][b.len()]
    }

    #[test]
    fn known_distances() {
        assert_eq!(levenshtein("abc", "abc"), 0);
        assert_eq!(levenshtein("", "abcd"), 4);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(lev_matrix("kitten", "sitting"), 3);
        // one code point each, several bytes
        assert_eq!(levenshtein("æøå", "aoa"), 3);
    }

    fn story(texts: &[&str]) -> Story {
        let inters = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Interaction {
                interaction_index: i,
                user_turn: Turn::new("s", format!("p{}", i / 2), 2 * i, Agent::User, *t),
                ai_turn: Turn::new("s", format!("p{}", i / 2), 2 * i + 1, Agent::Ai, "svar"),
            })
            .collect();
        Story::new("s", Dataset::Field, Genre::Unknown, inters)
    }

    #[test]
    fn rectify_with_stubs() {
        let t = Turn::new("s", "p", 0, Agent::User, "teh dragon");
        assert_eq!(rectify_turn(&t, &IdentityCorrector).unwrap().edit_distance, 0);
        let r = rectify_turn(&t, &ReplaceCorrector::new([("teh", "the")])).unwrap();
        assert_eq!(r.corrected_text, "the dragon");
        assert_eq!(r.edit_distance, 2);
        assert_eq!(lev_matrix("teh dragon", "the dragon"), 2);
    }

    struct Flipping(AtomicUsize);

    impl CorrectorProvider for Flipping {
        fn correct(&self, text: &str) -> ProviderResult<String> {
            Ok(format!("{text}{}", self.0.fetch_add(1, Ordering::SeqCst)))
        }
    }

    struct Down;

    impl CorrectorProvider for Down {
        fn correct(&self, _: &str) -> ProviderResult<String> {
            Err(ProviderError::Unavailable { attempts: vec!["timeout".into()] })
        }
    }

    #[test]
    fn rectify_errors() {
        let t = Turn::new("s", "p", 0, Agent::User, "abc");
        assert!(matches!(
            rectify_turn(&t, &Flipping(AtomicUsize::new(0))),
            Err(PreprocessError::Provider(ProviderError::NonDeterministic))
        ));
        assert!(matches!(
            rectify_turn(&t, &Down),
            Err(PreprocessError::Provider(ProviderError::Unavailable { .. }))
        ));
        let empty = Turn::new("s", "p", 0, Agent::User, "");
        assert!(matches!(rectify_turn(&empty, &IdentityCorrector), Err(PreprocessError::EmptyTurn(_))));
    }

    #[test]
    fn filter_resequences_and_logs() {
        let c = Corpus::new(Dataset::Field, vec![story(&["ok text", "zzz", "fine", "also ok"])]).unwrap();
        let corrector = ReplaceCorrector::new([("zzz", "a completely different sentence")]);
        let rect = rectify_corpus(&c, &corrector, 2).unwrap();
        let f = filter_by_edit_distance(&c, &rect, 10).unwrap();
        assert_eq!(f.log.before, 4);
        assert_eq!(f.log.after, 3);
        assert_eq!(f.log.excluded.len(), 1);
        assert_eq!(f.log.excluded[0].interaction_index, 1);
        let s = &f.corpus.stories[0];
        let idx: Vec<usize> = s.turns().map(|t| t.turn_index).collect();
        assert_eq!(idx, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(s.interactions[1].user_turn.text, "fine");
        assert!(crate::corpus::validate_corpus(&f.corpus).stories[0].alternation == 0);

        // idempotent
        let again = filter_by_edit_distance(&f.corpus, &f.rectified, 10).unwrap();
        assert_eq!(again.corpus, f.corpus);
        assert!(again.log.excluded.is_empty());

        // threshold 0 drops every corrected turn and nothing else
        let zero = filter_by_edit_distance(&c, &rect, 0).unwrap();
        assert_eq!(zero.log.after, 3);

        // nothing corrected: unchanged
        let ident = rectify_corpus(&c, &IdentityCorrector, 1).unwrap();
        let f = filter_by_edit_distance(&c, &ident, 100).unwrap();
        assert_eq!(f.corpus.stories, c.stories);
        assert!(f.log.excluded.is_empty());
    }

    #[test]
    fn missing_rectification() {
        let c = Corpus::new(Dataset::Field, vec![story(&["a"])]).unwrap();
        assert!(matches!(
            filter_by_edit_distance(&c, &RectificationMap::new(), 100),
            Err(PreprocessError::MissingRectification(_))
        ));
    }

    proptest! {
        #[test]
        fn symmetric(a in "[a-dæø ]{0,12}", b in "[a-dæø ]{0,12}") {
            prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
        }

        #[test]
        fn triangle(a in "[a-c]{0,10}", b in "[a-c]{0,10}", c in "[a-c]{0,10}") {
            prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
        }

        #[test]
        fn matches_full_matrix(a in "\\PC{0,15}", b in "\\PC{0,15}") {
            prop_assert_eq!(levenshtein(&a, &b), lev_matrix(&a, &b));
        }

        #[test]
        fn zero_iff_equal(a in "[ab]{0,6}", b in "[ab]{0,6}") {
            prop_assert_eq!(levenshtein(&a, &b) == 0, a == b);
        }
    }
}
