//! Synthetic data with known ground truth, for recovery tests.
//!
//! Randomness comes from a counter-based SplitMix64: the k-th raw draw of a
//! stream is `mix(seed + (k + 1) * 0x9E3779B97F4A7C15)`, with `mix` the
//! SplitMix64 finalizer. Uniforms take the top 53 bits, shifted to the open
//! interval (0, 1). Normals use Box-Muller, consuming two uniforms per
//! *pair* of normals (cosine branch first, then sine). The whole scheme is a
//! few lines of integer arithmetic, so fixtures can be regenerated bit for
//! bit in any language.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::alignment::stage_sizes;
use crate::corpus::{Agent, Corpus, Dataset, Genre, Interaction, Story, Turn};
use crate::exploration::StoryVectors;
use crate::infodynamics::{token_group, token_group_edges, SurprisalRecord, TOKEN_GROUPS};
use crate::sentiment::{Method, ValenceGap};

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic generator; see the module docs for the exact transform.
#[derive(Debug, Clone)]
pub struct SplitMix {
    seed: u64,
    counter: u64,
    spare: Option<f64>,
}

impl SplitMix {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0, spare: None }
    }

    /// An independent stream derived from this seed and a label.
    pub fn substream(seed: u64, label: u64) -> Self {
        Self::new(mix(seed ^ mix(label.wrapping_add(GAMMA))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        mix(self.seed.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    /// Uniform on (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Integer in `lo..=hi`.
    pub fn int_range(&mut self, lo: usize, hi: usize) -> usize {
        lo + ((self.uniform() * (hi - lo + 1) as f64) as usize).min(hi - lo)
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let r = (-2.0 * self.uniform().ln()).sqrt();
        let theta = TAU * self.uniform();
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal_with(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.normal()
    }
}

/// Which agent's valence responds to the other's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Leader {
    /// ai_i = kappa * user_i + noise
    User,
    /// user_{i+1} = kappa * ai_i + noise
    Ai,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadSpec {
    pub n_stories: usize,
    pub n_interactions: usize,
    pub kappa: f64,
    pub sigma: f64,
    pub leader: Leader,
    pub session_length: usize,
    pub dataset: Dataset,
}

impl DyadSpec {
    pub fn new(n_stories: usize, n_interactions: usize, kappa: f64, sigma: f64, leader: Leader) -> Self {
        Self { n_stories, n_interactions, kappa, sigma, leader, session_length: 5, dataset: Dataset::Field }
    }
}

/// Valence table for coupled dyads: the leader is i.i.d. N(0, 1) and the
/// follower copies its triggering turn with gain `kappa` plus N(0, sigma).
pub fn gen_coupled_dyad(spec: &DyadSpec, seed: u64) -> Vec<ValenceGap> {
    assert!((-1.0..=1.0).contains(&spec.kappa), "kappa must lie in [-1, 1]");
    assert!(spec.sigma > 0.0, "sigma must be positive");
    let mut rows = Vec::with_capacity(spec.n_stories * spec.n_interactions);
    for s in 0..spec.n_stories {
        let mut rng = SplitMix::substream(seed, s as u64);
        let mut prev_ai = None;
        for i in 0..spec.n_interactions {
            let (user, ai) = match spec.leader {
                Leader::User => {
                    let u = rng.normal();
                    (u, spec.kappa * u + spec.sigma * rng.normal())
                }
                Leader::Ai => {
                    let u = match prev_ai {
                        Some(a) => spec.kappa * a + spec.sigma * rng.normal(),
                        None => rng.normal(),
                    };
                    (u, rng.normal())
                }
            };
            prev_ai = Some(ai);
            rows.push(ValenceGap {
                dataset: spec.dataset,
                story_id: format!("story{s:03}"),
                session_id: format!("story{s:03}-p{:03}", i / spec.session_length.max(1)),
                interaction_index: i,
                method: Method::Lexicon,
                user,
                ai,
                gap: user - ai,
            });
        }
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkMode {
    Walk,
    Iid,
}

/// Vector sequence around `origin` (zero when `None`):
/// WALK `v_0 = origin + e_0`, `v_{t+1} = v_t + e_{t+1}`; IID `v_t = origin + e_t`;
/// with `e ~ N(0, sigma^2 I)`.
pub fn gen_embedding_walk(
    n: usize,
    dim: usize,
    sigma: f64,
    mode: WalkMode,
    origin: Option<&[f64]>,
    seed: u64,
) -> Vec<Vec<f64>> {
    assert!(n >= 4 && dim >= 2, "need n >= 4 and dim >= 2");
    let mut rng = SplitMix::new(seed);
    let zero = vec![0.0; dim];
    let origin = origin.unwrap_or(&zero);
    assert_eq!(origin.len(), dim, "origin dimension");
    let mut out = Vec::with_capacity(n);
    let mut cur = origin.to_vec();
    for _ in 0..n {
        let step: Vec<f64> = (0..dim).map(|_| sigma * rng.normal()).collect();
        let v = match mode {
            WalkMode::Walk => {
                cur.iter_mut().zip(&step).for_each(|(c, e)| *c += e);
                cur.clone()
            }
            WalkMode::Iid => origin.iter().zip(&step).map(|(o, e)| o + e).collect(),
        };
        out.push(v);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkStoriesSpec {
    pub n_stories: usize,
    pub n_turns: usize,
    pub dim: usize,
    pub sigma: f64,
    /// Spread of the per-story origins, N(0, origin_sd^2 I).
    pub origin_sd: f64,
    pub mode: WalkMode,
    pub dataset: Dataset,
}

/// One vector sequence per story, each around its own random origin.
pub fn gen_walk_stories(spec: &WalkStoriesSpec, seed: u64) -> Vec<StoryVectors> {
    (0..spec.n_stories)
        .map(|s| {
            let mut rng = SplitMix::substream(seed, 2 * s as u64);
            let origin: Vec<f64> = (0..spec.dim).map(|_| spec.origin_sd * rng.normal()).collect();
            let sub = mix(seed ^ mix(2 * s as u64 + 1));
            StoryVectors {
                story_id: format!("story{s:03}"),
                dataset: spec.dataset,
                vectors: gen_embedding_walk(spec.n_turns, spec.dim, spec.sigma, spec.mode, Some(&origin), sub),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceSpec {
    pub n: usize,
    pub slope_user: f64,
    pub slope_ai: f64,
    pub intercept_user: f64,
    pub intercept_ai: f64,
    pub noise: f64,
    /// SD of a random shift shared by records in the same token-amount decile.
    pub group_sd: f64,
}

impl ResonanceSpec {
    pub fn new(n: usize, slope_user: f64, slope_ai: f64, noise: f64) -> Self {
        Self { n, slope_user, slope_ai, intercept_user: -3.0, intercept_ai: -2.5, noise, group_sd: 0.1 }
    }
}

/// Records with `novelty ~ U[3, 9]` and
/// `resonance = intercept_agent + slope_agent * novelty + group shift + N(0, noise^2)`.
/// Transience is stored as `novelty - resonance`, and the record's resonance
/// is recomputed from the two, so the identity holds exactly.
pub fn gen_resonance_records(spec: &ResonanceSpec, seed: u64) -> Vec<SurprisalRecord> {
    assert!(spec.n >= 100, "need at least 100 records");
    let mut rng = SplitMix::new(seed);
    let n_tokens: Vec<usize> = (0..spec.n).map(|_| rng.int_range(5, 120)).collect();
    let edges = token_group_edges(&n_tokens, TOKEN_GROUPS);
    let shifts: Vec<f64> = (0..=edges.len()).map(|_| spec.group_sd * rng.normal()).collect();
    (0..spec.n)
        .map(|i| {
            let agent = if i % 2 == 0 { Agent::User } else { Agent::Ai };
            let (a, b) = match agent {
                Agent::User => (spec.intercept_user, spec.slope_user),
                Agent::Ai => (spec.intercept_ai, spec.slope_ai),
            };
            let novelty = rng.uniform_range(3.0, 9.0);
            let target = a + b * novelty + shifts[token_group(n_tokens[i], &edges)] + spec.noise * rng.normal();
            SurprisalRecord::measured(&format!("story{:03}", i / 100), i % 100, agent, n_tokens[i], novelty, novelty - target)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSpec {
    pub n_sessions: usize,
    /// Response of the late change to the early change.
    pub beta1: f64,
    /// SD of the late change around `beta1 * delta12`.
    pub noise: f64,
    /// SD of per-interaction scatter around the stage means.
    pub interaction_sd: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub sessions_per_story: usize,
}

impl GapSpec {
    pub fn new(n_sessions: usize, beta1: f64, noise: f64) -> Self {
        Self { n_sessions, beta1, noise, interaction_sd: 0.5, min_len: 3, max_len: 12, sessions_per_story: 4 }
    }
}

/// Sessions whose stage means follow `g2 = g1 + d12`, `g3 = g2 + beta1 * d12 + e`
/// with `g1, d12 ~ N(0, 1)`. Per-interaction scatter is centred within each
/// stage so the stage means are exact.
pub fn gen_mean_reverting_gaps(spec: &GapSpec, seed: u64) -> Vec<ValenceGap> {
    assert!(spec.min_len >= 3 && spec.max_len >= spec.min_len);
    let mut rng = SplitMix::new(seed);
    let mut rows = Vec::new();
    let mut next_index = 0;
    for s in 0..spec.n_sessions {
        let story = s / spec.sessions_per_story.max(1);
        if s % spec.sessions_per_story.max(1) == 0 {
            next_index = 0;
        }
        let len = rng.int_range(spec.min_len, spec.max_len);
        let g1 = rng.normal();
        let d12 = rng.normal();
        let g2 = g1 + d12;
        let g3 = g2 + spec.beta1 * d12 + spec.noise * rng.normal();
        for (g, size) in [g1, g2, g3].into_iter().zip(stage_sizes(len)) {
            let scatter: Vec<f64> = (0..size).map(|_| spec.interaction_sd * rng.normal()).collect();
            let centre = scatter.iter().sum::<f64>() / size as f64;
            for e in scatter {
                let ai = rng.normal();
                let gap = g + (e - centre);
                rows.push(ValenceGap {
                    dataset: Dataset::Field,
                    story_id: format!("story{story:03}"),
                    session_id: format!("session{s:04}"),
                    interaction_index: next_index,
                    method: Method::Lexicon,
                    user: ai + gap,
                    ai,
                    gap,
                });
                next_index += 1;
            }
        }
    }
    rows
}

const WORDS: &[&str] = &[
    "dragen", "skoven", "prinsessen", "rumskibet", "robotten", "byen", "havet", "månen", "kongen", "heksen", "katten",
    "stjernerne", "flyver", "løber", "finder", "synger", "bygger", "drømmer", "mørke", "gamle", "nye", "sammen",
    "langsomt", "pludselig", "glad", "trist", "bange", "modig", "vred", "lykkelig", "ikke", "meget", "og", "men",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_stories: usize,
    pub min_sessions: usize,
    pub max_sessions: usize,
    pub min_session_len: usize,
    pub max_session_len: usize,
    pub dataset: Dataset,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_stories: 4,
            min_sessions: 2,
            max_sessions: 4,
            min_session_len: 1,
            max_session_len: 8,
            dataset: Dataset::Field,
        }
    }
}

fn sentence(rng: &mut SplitMix, min_words: usize, max_words: usize) -> String {
    let n = rng.int_range(min_words, max_words);
    let words: Vec<&str> = (0..n).map(|_| WORDS[rng.int_range(0, WORDS.len() - 1)]).collect();
    let mut s = words.join(" ");
    if let Some(c) = s.get(..1) {
        s = c.to_uppercase() + &s[1..];
    }
    s + "."
}

/// A transcript corpus with random Danish-like filler text. User turns are
/// at least 20 characters.
pub fn gen_corpus(spec: &CorpusSpec, seed: u64) -> Corpus {
    let mut rng = SplitMix::new(seed);
    let genres = [Genre::Cartoon, Genre::Fantasy, Genre::Scifi];
    let stories = (0..spec.n_stories)
        .map(|s| {
            let story_id = format!("story{s:03}");
            let n_sessions = rng.int_range(spec.min_sessions, spec.max_sessions);
            let mut inters = Vec::new();
            for p in 0..n_sessions {
                let session = format!("{story_id}-p{p:02}");
                for _ in 0..rng.int_range(spec.min_session_len, spec.max_session_len) {
                    let k = inters.len();
                    let mut user = sentence(&mut rng, 4, 12);
                    while user.chars().count() < 20 {
                        user.push_str(" og så videre");
                    }
                    let ai = sentence(&mut rng, 8, 20);
                    inters.push(Interaction {
                        interaction_index: k,
                        user_turn: Turn::new(&story_id, &session, 2 * k, Agent::User, user),
                        ai_turn: Turn::new(&story_id, &session, 2 * k + 1, Agent::Ai, ai),
                    });
                }
            }
            Story::new(story_id, spec.dataset, genres[s % 3], inters)
        })
        .collect();
    Corpus::new(spec.dataset, stories).expect("generated story ids are unique")
}
