//! Synthetic annotated corpus in which human-written utterances carry a
//! marker that candidates lack.
//!
//! Each dialogue has a topic, and all of its content words come from that
//! topic's lexicon. Topic lexicons use disjoint vowels, so a response from
//! another dialogue is usually recognisable as off-topic. Every
//! human-written utterance has exactly one word replaced by a word from a
//! small marker class; shown candidates stay on topic but contain no marker
//! word. Marker words have the same shape as content words and word counts
//! follow the same distribution on both sides, so the marker changes no
//! local word statistics. Setting `candidate_filler_prob` above
//! `human_filler_prob` makes candidates more generic, the way a mode-seeking
//! decoder favours frequent words.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::quadruple::keyed_rng;
use crate::data::record::{Action, AnnotatedTurn, DialogueRecord, RecordStatus, MIN_ANNOTATED_ROUNDS};
use crate::dialogue::Role;
use crate::error::{Error, Result};

const FILLERS: [&str; 6] = ["hm", "mm", "hmm", "sh", "nn", "brr"];
const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const TOPIC_VOWELS: &[u8] = b"aeio";
const MARKER_VOWEL: u8 = b'u';

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_dialogues: usize,
    /// Annotated turns after the opening.
    pub rounds: usize,
    /// At most four, one per topic vowel.
    pub n_topics: usize,
    pub words_per_topic: usize,
    pub n_marker_words: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub human_filler_prob: f64,
    pub candidate_filler_prob: f64,
    /// Relative weights of select, revise and rewrite turns.
    pub action_weights: [f64; 3],
    pub n_candidates: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_dialogues: 300,
            rounds: MIN_ANNOTATED_ROUNDS,
            n_topics: 4,
            words_per_topic: 15,
            n_marker_words: 6,
            min_words: 2,
            max_words: 8,
            human_filler_prob: 0.4,
            candidate_filler_prob: 0.5,
            action_weights: [0.2, 0.3, 0.5],
            n_candidates: 7,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.rounds < MIN_ANNOTATED_ROUNDS {
            return bad("synthetic dialogues need at least the minimum number of annotated rounds");
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return bad("need 1 <= min_words <= max_words");
        }
        if !(1..=TOPIC_VOWELS.len()).contains(&self.n_topics) {
            return bad("n_topics must be between 1 and 4");
        }
        if !(1..=60).contains(&self.words_per_topic) || !(1..=60).contains(&self.n_marker_words) {
            return bad("words_per_topic and n_marker_words must be between 1 and 60");
        }
        for p in [self.human_filler_prob, self.candidate_filler_prob] {
            if !(0.0..1.0).contains(&p) {
                return bad("filler probabilities must lie in [0, 1)");
            }
        }
        if self.action_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || self.action_weights.iter().sum::<f64>() <= 0.0 {
            return bad("action weights must be non-negative with a positive sum");
        }
        if self.n_candidates < 2 {
            return bad("need at least two candidates per turn");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    pub topics: Vec<Vec<String>>,
    pub markers: Vec<String>,
}

/// `n` distinct consonant-vowel words of length 3 or 4 using only `vowel`.
fn words_with_vowel(rng: &mut ChaCha8Rng, vowel: u8, n: usize) -> Vec<String> {
    let mut seen = BTreeSet::new();
    while seen.len() < n {
        let len = rng.gen_range(3..=4);
        let w: String = (0..len)
            .map(|i| if i % 2 == 0 { *CONSONANTS.choose(rng).unwrap() as char } else { vowel as char })
            .collect();
        seen.insert(w);
    }
    let mut out: Vec<String> = seen.into_iter().collect();
    out.shuffle(rng);
    out
}

pub fn lexicon(cfg: &SynthConfig) -> Lexicon {
    let mut rng = keyed_rng(cfg.seed, "synth-lexicon", 0);
    let topics = TOPIC_VOWELS[..cfg.n_topics].iter().map(|&v| words_with_vowel(&mut rng, v, cfg.words_per_topic)).collect();
    let markers = words_with_vowel(&mut rng, MARKER_VOWEL, cfg.n_marker_words);
    Lexicon { topics, markers }
}

/// Number of marker words in `text`.
pub fn marker_count(text: &str, lex: &Lexicon) -> usize {
    text.split(' ').filter(|w| lex.markers.iter().any(|m| m == w)).count()
}

/// Topic whose lexicon supplies the most words of `text`.
pub fn topic_of(text: &str, lex: &Lexicon) -> Option<usize> {
    let counts: Vec<usize> = lex.topics.iter().map(|t| text.split(' ').filter(|w| t.iter().any(|c| c == w)).count()).collect();
    let max = *counts.iter().max()?;
    (max > 0).then(|| counts.iter().position(|&c| c == max).unwrap())
}

struct Gen<'a> {
    cfg: &'a SynthConfig,
    lex: &'a Lexicon,
}

impl Gen<'_> {
    fn words(&self, rng: &mut ChaCha8Rng, topic: usize, filler_prob: f64) -> Vec<String> {
        let n = rng.gen_range(self.cfg.min_words..=self.cfg.max_words);
        let mut w: Vec<String> = (0..n)
            .map(|_| {
                if rng.gen_bool(filler_prob) {
                    FILLERS.choose(rng).unwrap().to_string()
                } else {
                    self.lex.topics[topic].choose(rng).unwrap().clone()
                }
            })
            .collect();
        if w.iter().all(|x| FILLERS.contains(&x.as_str())) {
            let pos = rng.gen_range(0..w.len());
            w[pos] = self.lex.topics[topic].choose(rng).unwrap().clone();
        }
        w
    }

    /// Replaces one non-content word if there is one, else any word, so
    /// the utterance stays on topic.
    fn mark(&self, rng: &mut ChaCha8Rng, mut words: Vec<String>) -> String {
        let fillers: Vec<usize> = (0..words.len()).filter(|&i| FILLERS.contains(&words[i].as_str())).collect();
        let content = words.len() - fillers.len();
        let pos = if content > 1 || fillers.is_empty() {
            rng.gen_range(0..words.len())
        } else {
            *fillers.choose(rng).unwrap()
        };
        words[pos] = self.lex.markers.choose(rng).unwrap().clone();
        words.join(" ")
    }

    fn human(&self, rng: &mut ChaCha8Rng, topic: usize) -> String {
        let w = self.words(rng, topic, self.cfg.human_filler_prob);
        self.mark(rng, w)
    }

    fn candidate(&self, rng: &mut ChaCha8Rng, topic: usize) -> String {
        self.words(rng, topic, self.cfg.candidate_filler_prob).join(" ")
    }

    fn turn(&self, rng: &mut ChaCha8Rng, role: Role, topic: usize) -> AnnotatedTurn {
        let mut shown: Vec<String> = (0..self.cfg.n_candidates).map(|_| self.candidate(rng, topic)).collect();
        let [s, r, _] = self.cfg.action_weights;
        let u = rng.gen::<f64>() * self.cfg.action_weights.iter().sum::<f64>();
        let chosen = rng.gen_range(0..shown.len());
        let (action, final_text, chosen_index) = if u < s {
            shown[chosen] = self.human(rng, topic);
            (Action::Select, shown[chosen].clone(), Some(chosen))
        } else if u < s + r {
            let words = shown[chosen].split(' ').map(str::to_string).collect();
            (Action::Revise, self.mark(rng, words), Some(chosen))
        } else {
            (Action::Rewrite, self.human(rng, topic), None)
        };
        AnnotatedTurn {
            speaker_role: role,
            final_text,
            action,
            shown_candidates: shown,
            chosen_index,
            candidate_scores: None,
        }
    }
}

pub fn synth_corpus(cfg: &SynthConfig) -> Result<Vec<DialogueRecord>> {
    cfg.validate()?;
    let lex = lexicon(cfg);
    let gen = Gen { cfg, lex: &lex };
    let width = cfg.n_dialogues.max(1).to_string().len();
    let mut out = Vec::with_capacity(cfg.n_dialogues);
    for i in 0..cfg.n_dialogues {
        let id = format!("synth-{i:0width$}");
        let mut rng = keyed_rng(cfg.seed, &id, 0);
        let topic = rng.gen_range(0..cfg.n_topics);
        let mut turns = vec![AnnotatedTurn::opening(Role::A, gen.human(&mut rng, topic))];
        for t in 1..=cfg.rounds {
            let role = if t % 2 == 0 { Role::A } else { Role::B };
            turns.push(gen.turn(&mut rng, role, topic));
        }
        let rec = DialogueRecord::new(id, turns, RecordStatus::Accepted);
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marker_separates_human_from_candidates() {
        let cfg = SynthConfig { n_dialogues: 40, ..Default::default() };
        let recs = synth_corpus(&cfg).unwrap();
        let lex = lexicon(&cfg);
        let (mut human_len, mut cand_len, mut nh, mut nc) = (0usize, 0usize, 0usize, 0usize);
        for r in &recs {
            assert_eq!(r.annotated_rounds(), cfg.rounds);
            let topic = topic_of(&r.turns[0].final_text, &lex);
            assert!(topic.is_some());
            assert_eq!(marker_count(&r.turns[0].final_text, &lex), 1);
            for turn in &r.turns[1..] {
                assert_eq!(marker_count(&turn.final_text, &lex), 1);
                assert_eq!(topic_of(&turn.final_text, &lex), topic);
                for (k, c) in turn.shown_candidates.iter().enumerate() {
                    if turn.action == Action::Select && turn.chosen_index == Some(k) {
                        continue;
                    }
                    assert_eq!(marker_count(c, &lex), 0);
                    assert_eq!(topic_of(c, &lex), topic);
                    cand_len += c.split(' ').count();
                    nc += 1;
                }
                human_len += turn.final_text.split(' ').count();
                nh += 1;
            }
        }
        let (h, c) = (human_len as f64 / nh as f64, cand_len as f64 / nc as f64);
        assert!((h - c).abs() < 0.5, "mean word counts {h} vs {c}");
    }

    #[test]
    fn seeded_and_valid() {
        let cfg = SynthConfig { n_dialogues: 5, seed: 9, ..Default::default() };
        let a = synth_corpus(&cfg).unwrap();
        assert_eq!(a, synth_corpus(&cfg).unwrap());
        assert_ne!(a, synth_corpus(&SynthConfig { seed: 10, ..cfg.clone() }).unwrap());
        let lex = lexicon(&cfg);
        let all: BTreeSet<&String> = lex.topics.iter().flatten().chain(&lex.markers).collect();
        assert_eq!(all.len(), 4 * 15 + 6);
        assert!(all.iter().all(|w| !FILLERS.contains(&w.as_str())));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(synth_corpus(&SynthConfig { rounds: 3, ..Default::default() }).is_err());
        assert!(synth_corpus(&SynthConfig { n_topics: 5, ..Default::default() }).is_err());
    }
}
