//! Synthetic topical corpora.
//!
//! Each topic owns a unigram distribution `softmax(sharpness * z)` with
//! `z ~ N(0, 1)` per word. A document draws one topic and all of its
//! sentences sample tokens from that topic, so earlier sentences carry
//! information about the words of later ones.

use std::fmt::Write as _;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub topics: usize,
    pub vocab_size: usize,
    pub train_docs: usize,
    pub valid_docs: usize,
    pub test_docs: usize,
    pub sentences_per_doc: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Concentration of the per-topic distributions.
    pub sharpness: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            topics: 5,
            vocab_size: 200,
            train_docs: 2000,
            valid_docs: 200,
            test_docs: 200,
            sentences_per_doc: 10,
            min_len: 8,
            max_len: 12,
            sharpness: 1.5,
            seed: 17,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("topics", self.topics),
            ("vocab_size", self.vocab_size),
            ("train_docs", self.train_docs),
            ("valid_docs", self.valid_docs),
            ("test_docs", self.test_docs),
            ("sentences_per_doc", self.sentences_per_doc),
            ("min_len", self.min_len),
        ];
        for (k, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("`{k}` must be positive")));
            }
        }
        if self.max_len < self.min_len {
            return Err(Error::InvalidArgument("`max_len` must be at least `min_len`".into()));
        }
        if !(self.sharpness > 0.0 && self.sharpness.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sharpness must be positive, got {}",
                self.sharpness
            )));
        }
        Ok(())
    }
}

/// Word spelling for id `i` of the synthetic vocabulary.
pub fn word(i: usize) -> String {
    format!("w{i}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    /// Unigram distribution of each topic.
    pub topic_distributions: Vec<Vec<f64>>,
    pub train: String,
    pub valid: String,
    pub test: String,
    /// Topic of every document, train then valid then test.
    pub doc_topics: Vec<usize>,
}

impl SynthCorpus {
    /// Writes `train.txt`, `valid.txt` and `test.txt` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("train.txt"), &self.train)?;
        std::fs::write(dir.join("valid.txt"), &self.valid)?;
        std::fs::write(dir.join("test.txt"), &self.test)?;
        Ok(())
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let topic_distributions: Vec<Vec<f64>> = (0..spec.topics)
        .map(|_| {
            let z: Vec<f64> = (0..spec.vocab_size)
                .map(|_| spec.sharpness * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|x| x / s).collect()
        })
        .collect();
    let samplers: Vec<WeightedIndex<f64>> = topic_distributions
        .iter()
        .map(|p| WeightedIndex::new(p).expect("softmax weights are positive"))
        .collect();

    let mut doc_topics = Vec::new();
    let mut split = |docs: usize, rng: &mut ChaCha8Rng| {
        let mut out = String::new();
        for d in 0..docs {
            if d > 0 {
                out.push('\n');
            }
            let topic = rng.gen_range(0..spec.topics);
            doc_topics.push(topic);
            for _ in 0..spec.sentences_per_doc {
                let len = rng.gen_range(spec.min_len..=spec.max_len);
                for k in 0..len {
                    if k > 0 {
                        out.push(' ');
                    }
                    let _ = write!(out, "w{}", samplers[topic].sample(rng));
                }
                out.push('\n');
            }
        }
        out
    };
    let train = split(spec.train_docs, &mut rng);
    let valid = split(spec.valid_docs, &mut rng);
    let test = split(spec.test_docs, &mut rng);
    Ok(SynthCorpus {
        topic_distributions,
        train,
        valid,
        test,
        doc_topics,
    })
}
