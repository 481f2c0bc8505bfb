//! Deterministic toy models for tests, benchmarks and offline demos.
//!
//! [`agnews`] builds a small news-topic world: a second-order table base
//! model that writes sentences of the form
//! `he saw the <noun> with a <noun> near his <noun> and some <noun> .`
//! and a guide whose per-topic models favour that topic's lexicon. Each
//! noun slot offers one word per topic plus a neutral word; the topic
//! lexicons are disjoint.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::eval::KeywordClassifier;
use crate::planner::{ControlSketch, SketchSet};
use crate::provider::{Providers, TableGuide, TableLm};
use crate::types::{ControlCode, TokenId, Vocabulary};

pub const TOPICS: [&str; 4] = ["Business", "Science", "Sports", "World"];

const LEXICONS: [(&str, [&str; 8]); 4] = [
    (
        "Sports",
        [
            "game", "team", "coach", "ball", "match", "player", "season", "league",
        ],
    ),
    (
        "Business",
        [
            "market", "company", "bank", "stock", "deal", "profit", "trade", "price",
        ],
    ),
    (
        "Science",
        [
            "computer", "research", "data", "lab", "software", "space", "study", "robot",
        ],
    ),
    (
        "World",
        [
            "war",
            "president",
            "nation",
            "election",
            "army",
            "treaty",
            "leader",
            "border",
        ],
    ),
];
const NEUTRAL: [&str; 8] = [
    "day", "friend", "house", "car", "dog", "idea", "park", "book",
];
const SUBJECTS: [&str; 2] = ["he", "she"];
const VERBS: [[&str; 2]; 2] = [["saw", "liked"], ["found", "wanted"]];
const DETS: [[&str; 4]; 2] = [["the", "a", "his", "some"], ["this", "her", "one", "that"]];
const CONNECTORS: [[&str; 4]; 2] = [["with", "near", "and", "."], ["for", "by", "then", "."]];

/// Slot probabilities as `[Business, Science, Sports, World, neutral]`,
/// frame 0 slots 0..4 then frame 1 slots 0..4.
const SLOT_PROBS: [[f64; 5]; 8] = [
    [0.10, 0.25, 0.24, 0.13, 0.29],
    [0.16, 0.15, 0.19, 0.22, 0.26],
    [0.11, 0.09, 0.29, 0.19, 0.33],
    [0.24, 0.07, 0.17, 0.23, 0.29],
    [0.12, 0.27, 0.26, 0.08, 0.28],
    [0.08, 0.19, 0.28, 0.16, 0.29],
    [0.15, 0.21, 0.10, 0.16, 0.37],
    [0.19, 0.20, 0.14, 0.14, 0.33],
];

const ROW_FLOOR: f64 = 1e-6;
const LEXICON_BOOST: f64 = 5.0;

fn lexicon(topic: &str) -> &'static [&'static str; 8] {
    &LEXICONS
        .iter()
        .find(|(t, _)| *t == topic)
        .expect("topic has a lexicon")
        .1
}

fn toy_vocab() -> Vec<String> {
    let mut v: Vec<&str> = vec!["<unk>", ".", "recently", "yesterday"];
    v.extend(SUBJECTS);
    v.extend(VERBS.iter().flatten());
    v.extend(DETS.iter().flatten());
    v.extend(CONNECTORS.iter().flatten().filter(|c| **c != "."));
    v.extend(LEXICONS.iter().flat_map(|(_, ws)| ws.iter()));
    v.extend(NEUTRAL);
    v.into_iter().map(String::from).collect()
}

fn floored_row(vocab: &Vocabulary, entries: &[(&str, f64)]) -> Vec<f64> {
    let mut row = vec![ROW_FLOOR; vocab.len()];
    for (w, p) in entries {
        row[vocab.id(w).expect("toy word in vocabulary").index()] += p;
    }
    let s: f64 = row.iter().sum();
    row.iter().map(|x| x / s).collect()
}

/// The news-topic toy world.
#[derive(Clone)]
pub struct ToyBundle {
    pub base: Arc<TableLm>,
    pub guide: Arc<TableGuide>,
    pub lexicons: BTreeMap<String, Vec<String>>,
}

impl ToyBundle {
    pub fn providers(&self) -> Providers {
        Providers::attach(self.base.clone(), self.guide.clone())
            .expect("toy models share a vocabulary")
    }

    pub fn classifier(&self) -> KeywordClassifier {
        KeywordClassifier::new(self.lexicons.clone())
    }

    pub fn vocabulary(&self) -> &Arc<Vocabulary> {
        self.base.vocabulary()
    }
}

pub fn agnews() -> ToyBundle {
    let vocab = Arc::new(Vocabulary::new(toy_vocab()).expect("toy vocabulary is valid"));
    let v = vocab.len();
    let id = |w: &str| vocab.id(w).expect("toy word in vocabulary");
    let mut table: Vec<(Vec<TokenId>, Vec<f64>)> = Vec::new();

    for f in 0..2 {
        table.push((
            vec![id(SUBJECTS[f])],
            floored_row(&vocab, &[(VERBS[f][0], 0.6), (VERBS[f][1], 0.4)]),
        ));
        for verb in VERBS[f] {
            table.push((vec![id(verb)], floored_row(&vocab, &[(DETS[f][0], 1.0)])));
        }
        for k in 0..4 {
            let probs = SLOT_PROBS[f * 4 + k];
            let mut slot: Vec<(&str, f64)> = TOPICS
                .iter()
                .zip(probs)
                .map(|(t, p)| (lexicon(t)[f * 4 + k], p))
                .collect();
            slot.push((NEUTRAL[f * 4 + k], probs[4]));
            table.push((vec![id(DETS[f][k])], floored_row(&vocab, &slot)));
            let next = CONNECTORS[f][k];
            for (w, _) in &slot {
                table.push((vec![id(w)], floored_row(&vocab, &[(next, 1.0)])));
            }
            if next != "." {
                table.push((
                    vec![id(next)],
                    floored_row(&vocab, &[(DETS[f][k + 1], 1.0)]),
                ));
            }
        }
    }
    table.push((
        vec![id(".")],
        floored_row(&vocab, &[("he", 0.5), ("she", 0.499)]),
    ));
    for i in 0..v {
        let row = if i % 2 == 0 {
            [("he", 0.6), ("she", 0.4)]
        } else {
            [("he", 0.4), ("she", 0.6)]
        };
        table.push((vec![TokenId::from(i), id(".")], floored_row(&vocab, &row)));
    }
    for w in ["recently", "yesterday"] {
        table.push((
            vec![id(w)],
            floored_row(&vocab, &[("he", 0.5), ("she", 0.5)]),
        ));
    }
    let backoff = vec![1.0 / v as f64; v];
    let base =
        TableLm::new(2, vocab.clone(), backoff, table, None).expect("toy base model is valid");

    let guides = TOPICS
        .iter()
        .map(|t| {
            let mut row = vec![1.0; v];
            for w in lexicon(t) {
                row[id(w).index()] = LEXICON_BOOST;
            }
            let s: f64 = row.iter().sum();
            let row: Vec<f64> = row.iter().map(|x| x / s).collect();
            let model = TableLm::new(0, vocab.clone(), row, Vec::new(), None)
                .expect("toy guide model is valid");
            (ControlCode::new(*t).expect("topic label"), model)
        })
        .collect();
    let guide = TableGuide::new(vocab.clone(), guides, None).expect("toy guide is valid");

    let lexicons = TOPICS
        .iter()
        .map(|t| {
            (
                t.to_string(),
                lexicon(t).iter().map(|w| w.to_string()).collect(),
            )
        })
        .collect();
    ToyBundle {
        base: Arc::new(base),
        guide: Arc::new(guide),
        lexicons,
    }
}

/// Twenty prompts in the toy world's own language.
pub fn prompts() -> Vec<String> {
    [
        "recently he saw the game .",
        "yesterday she liked this market .",
        "he found the data .",
        "she saw a team near his bank .",
        "recently",
        "yesterday",
        "recently she found this computer .",
        "he liked the war .",
        "yesterday he wanted some car .",
        "she found her friend .",
        "recently he saw the dog .",
        "he saw the match with a stock .",
        "she wanted one election .",
        "yesterday she found that robot .",
        "he liked his coach .",
        "recently she saw the nation .",
        "he found some profit .",
        "she liked this idea .",
        "yesterday he saw a season .",
        "recently he wanted the book .",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

/// `count` random toy stories of `sentences` sentences each.
pub fn random_stories(count: usize, sentences: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..sentences).map(|_| random_sentence(&mut rng)).collect())
        .collect()
}

fn random_sentence(rng: &mut ChaCha8Rng) -> String {
    let f = rng.random_range(0..2);
    let slots = rng.random_range(1..=4);
    let mut words = vec![SUBJECTS[f], VERBS[f][rng.random_range(0..2)]];
    for k in 0..slots {
        words.push(DETS[f][k]);
        let pick = rng.random_range(0..5);
        words.push(if pick == 4 {
            NEUTRAL[f * 4 + k]
        } else {
            lexicon(TOPICS[pick])[f * 4 + k]
        });
        if k + 1 < slots {
            words.push(CONNECTORS[f][k]);
        }
    }
    words.push(".");
    words.join(" ")
}

/// Control sketch sets of the sports-to-science story: Sports over lines
/// 0..=5 and Science from line `science_start` (4, 5 or 6) to 10, clipped
/// to ten lines.
pub fn sports_science_sketch(science_start: usize, total_strength: f64) -> SketchSet {
    let code = |s: &str| ControlCode::new(s).expect("topic label");
    SketchSet::new(
        10,
        total_strength,
        vec![
            ControlSketch {
                code: code("Sports"),
                start: 0,
                end: 5,
            },
            ControlSketch {
                code: code("Science"),
                start: science_start,
                end: 10,
            },
        ],
    )
}

/// A randomly drawn order-0 world with disjoint per-code lexicons.
///
/// Every guide model is `p_c(x) ∝ w_x · b_{c,x}` with weights `w` shared
/// across codes and boosts `b_{c,x} ∈ [5, 50]` on code `c`'s lexicon and 1
/// elsewhere.
pub struct RandomToy {
    pub providers: Providers,
    pub codes: Vec<ControlCode>,
    pub lexicons: Vec<Vec<TokenId>>,
}

pub fn random_disjoint(seed: u64) -> Result<RandomToy> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = rng.random_range(16..=64usize);
    let k = rng.random_range(2..=4usize);
    let vocab = Arc::new(Vocabulary::new((0..v).map(|i| format!("t{i}")).collect())?);

    let mut ids: Vec<usize> = (1..v).collect();
    for i in (1..ids.len()).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    let max_size = (v - 1) / (k + 1);
    let mut lexicons = Vec::with_capacity(k);
    let mut taken = 0;
    for _ in 0..k {
        let size = rng.random_range(2..=max_size.max(2));
        lexicons.push(
            ids[taken..taken + size]
                .iter()
                .map(|&i| TokenId::from(i))
                .collect::<Vec<_>>(),
        );
        taken += size;
    }

    let normalize = |r: Vec<f64>| -> Vec<f64> {
        let s: f64 = r.iter().sum();
        r.into_iter().map(|x| x / s).collect()
    };
    let base_row = normalize((0..v).map(|_| rng.random_range(0.01..1.0)).collect());
    let base = TableLm::new(0, vocab.clone(), base_row, Vec::new(), None)?;
    let shared: Vec<f64> = (0..v).map(|_| rng.random_range(0.5..2.0)).collect();
    let codes: Vec<ControlCode> = (0..k)
        .map(|i| ControlCode::new(format!("c{i}")))
        .collect::<Result<_>>()?;
    let mut models = Vec::with_capacity(k);
    for (code, lex) in codes.iter().zip(&lexicons) {
        let mut row = shared.clone();
        for t in lex {
            row[t.index()] *= rng.random_range(5.0..=50.0);
        }
        models.push((
            code.clone(),
            TableLm::new(0, vocab.clone(), normalize(row), Vec::new(), None)?,
        ));
    }
    let guide = TableGuide::new(vocab, models, None)?;
    Ok(RandomToy {
        providers: Providers::attach(Arc::new(base), Arc::new(guide))?,
        codes,
        lexicons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{BaseLm, GuideLm};

    #[test]
    fn agnews_shapes() {
        let toy = agnews();
        assert_eq!(toy.vocabulary().len(), 64);
        let codes: Vec<&str> = toy.guide.codes().iter().map(|c| c.as_str()).collect();
        assert_eq!(codes, TOPICS);
        let p = toy.base.tokenize("Recently he saw the game .").unwrap();
        assert!(p.iter().all(|t| *t != TokenId::UNK));
    }

    #[test]
    fn random_stories_are_reproducible() {
        assert_eq!(random_stories(3, 5, 9), random_stories(3, 5, 9));
        assert_ne!(random_stories(3, 5, 9), random_stories(3, 5, 10));
        assert!(random_stories(1, 5, 0)[0].iter().all(|s| s.ends_with(" .")));
    }

    #[test]
    fn random_lexicons_are_disjoint() {
        for seed in 0..20 {
            let toy = random_disjoint(seed).unwrap();
            let all: Vec<TokenId> = toy.lexicons.iter().flatten().copied().collect();
            let mut dedup = all.clone();
            dedup.sort_by_key(|t| t.0);
            dedup.dedup();
            assert_eq!(all.len(), dedup.len());
            assert!(toy.providers.guide().codes().len() >= 2);
        }
    }
}
