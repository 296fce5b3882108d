//! Seeded synthetic two-class corpus.
//!
//! Each sentence is a run of neutral filler words with a few cue words of its
//! own class mixed in, and sometimes one cue of the other class as a
//! distractor. The own-class cues always outnumber the distractors, so the
//! labels are fully determined by the text.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{RawRecord, Vocab};

pub const LABELS: [&str; 2] = ["neg", "pos"];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub sentences: usize,
    /// Cue words in total, split evenly between the two classes.
    pub cue_words: usize,
    pub fillers: usize,
    pub min_fillers: usize,
    pub max_fillers: usize,
    pub min_cues: usize,
    pub max_cues: usize,
    /// Probability of adding one opposite-class cue.
    pub distractor_prob: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            sentences: 2000,
            cue_words: 20,
            fillers: 200,
            min_fillers: 6,
            max_fillers: 14,
            min_cues: 2,
            max_cues: 3,
            distractor_prob: 0.3,
            seed: 7,
        }
    }
}

pub fn cue_word(class: usize, i: usize) -> String {
    format!("{}{i:02}", ["n", "p"][class])
}

pub fn filler_word(i: usize) -> String {
    format!("w{i:03}")
}

impl SynthSpec {
    pub fn cues_per_class(&self) -> usize {
        self.cue_words / 2
    }

    pub fn is_cue(&self, word: &str) -> bool {
        (0..2).any(|c| (0..self.cues_per_class()).any(|i| cue_word(c, i) == word))
    }

    /// Class labels alternate so the corpus is exactly balanced.
    pub fn generate(&self) -> Vec<RawRecord> {
        assert!(
            self.cues_per_class() > 0 && self.fillers > 0,
            "empty word pools"
        );
        assert!(
            self.min_cues >= 2 && self.min_cues <= self.max_cues,
            "cue counts must keep labels determined"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.sentences)
            .map(|s| {
                let class = s % 2;
                let n_fill = rng.gen_range(self.min_fillers..=self.max_fillers);
                let n_cue = rng.gen_range(self.min_cues..=self.max_cues);
                let mut words: Vec<String> = (0..n_fill)
                    .map(|_| filler_word(rng.gen_range(0..self.fillers)))
                    .collect();
                for _ in 0..n_cue {
                    words.push(cue_word(class, rng.gen_range(0..self.cues_per_class())));
                }
                if rng.gen::<f64>() < self.distractor_prob {
                    words.push(cue_word(1 - class, rng.gen_range(0..self.cues_per_class())));
                }
                words.shuffle(&mut rng);
                RawRecord {
                    label: LABELS[class].to_string(),
                    text: words.join(" "),
                }
            })
            .collect()
    }
}

pub fn to_tsv(records: &[RawRecord]) -> String {
    records
        .iter()
        .map(|r| format!("{}\t{}\n", r.label, r.text))
        .collect()
}

/// Word vectors in which every cue word sits near one shared point, so the
/// embeddings alone barely tell the two classes' cues apart. Fillers get
/// independent uniform vectors in ±0.5; cue vectors are the shared point
/// plus uniform noise of half-width `cue_noise`.
pub fn masked_cue_embeddings(
    spec: &SynthSpec,
    vocab: &Vocab,
    dim: usize,
    cue_noise: f64,
    seed: u64,
) -> Vec<(usize, Vec<f32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shared: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
    vocab
        .tokens()
        .iter()
        .enumerate()
        .map(|(idx, word)| {
            let v = if spec.is_cue(word) {
                shared
                    .iter()
                    .map(|s| (s + rng.gen_range(-cue_noise..=cue_noise)) as f32)
                    .collect()
            } else {
                (0..dim).map(|_| rng.gen_range(-0.5f32..0.5)).collect()
            };
            (idx, v)
        })
        .collect()
}

/// Embedding rows as `word v₁ … v_k` text lines.
pub fn embeddings_to_text(rows: &[(usize, Vec<f32>)], vocab: &Vocab) -> String {
    let mut out = String::new();
    for (idx, v) in rows {
        let word = vocab.token(*idx).expect("row index from this vocabulary");
        out.push_str(word);
        for x in v {
            out.push_str(&format!(" {x:?}"));
        }
        out.push('\n');
    }
    out
}
