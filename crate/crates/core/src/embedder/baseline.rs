//! Hashed character n-gram TF-IDF vectorizer.
//!
//! Text is NFKC-folded, lowercased and whitespace-collapsed; every character
//! n-gram in `ngram_min..=ngram_max` is hashed (FNV-1a, 64 bit) into one of
//! `hash_dim` buckets. Weights are `(1 + ln tf) * idf` with
//! `idf = ln((1 + N) / (1 + df)) + 1`, counted per bucket, then
//! L2-normalized. Collisions are accepted.

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use super::vector::SparseVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineVectorizerConfig {
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub hash_dim: usize,
}

impl Default for BaselineVectorizerConfig {
    fn default() -> Self {
        Self {
            ngram_min: 3,
            ngram_max: 5,
            hash_dim: 1 << 18,
        }
    }
}

impl BaselineVectorizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.hash_dim.is_power_of_two() || self.hash_dim > (1 << 31) {
            return Err(Error::Config(format!("hash_dim {} must be a power of two", self.hash_dim)));
        }
        if self.ngram_min == 0 || self.ngram_min > self.ngram_max {
            return Err(Error::Config(format!(
                "invalid n-gram range {}..={}",
                self.ngram_min, self.ngram_max
            )));
        }
        Ok(())
    }
}

/// NFKC + lowercase + single-space whitespace.
pub fn normalize_text(text: &str) -> String {
    let folded: String = text.nfkc().collect::<String>().to_lowercase();
    folded.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Character n-grams of already-normalized text, as byte slices of it.
pub fn char_ngrams(text: &str, min: usize, max: usize) -> Vec<&str> {
    let bounds: Vec<usize> = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len())).collect();
    let n_chars = bounds.len() - 1;
    let mut out = Vec::new();
    for n in min..=max {
        if n > n_chars {
            break;
        }
        for start in 0..=n_chars - n {
            out.push(&text[bounds[start]..bounds[start + n]]);
        }
    }
    out
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A fitted vectorizer. Immutable after [`BaselineVectorizer::fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineVectorizer {
    config: BaselineVectorizerConfig,
    n_docs: usize,
    idf: Vec<f32>,
}

impl BaselineVectorizer {
    pub fn fit<S: AsRef<str>>(config: BaselineVectorizerConfig, documents: &[S]) -> Result<Self> {
        config.validate()?;
        if documents.is_empty() {
            return Err(Error::Validation("cannot fit vectorizer on an empty document list".into()));
        }
        let mut df = vec![0u32; config.hash_dim];
        let mut any = false;
        let mut buckets: Vec<u32> = Vec::new();
        for doc in documents {
            buckets.clear();
            let text = normalize_text(doc.as_ref());
            buckets.extend(char_ngrams(&text, config.ngram_min, config.ngram_max).into_iter().map(|g| bucket(&config, g)));
            buckets.sort_unstable();
            buckets.dedup();
            any |= !buckets.is_empty();
            for &b in &buckets {
                df[b as usize] += 1;
            }
        }
        if !any {
            return Err(Error::Validation("every document is empty after normalization".into()));
        }
        let n = documents.len() as f64;
        let idf = df
            .iter()
            .map(|&d| (((1.0 + n) / (1.0 + f64::from(d))).ln() + 1.0) as f32)
            .collect();
        Ok(Self {
            config,
            n_docs: documents.len(),
            idf,
        })
    }

    pub fn config(&self) -> &BaselineVectorizerConfig {
        &self.config
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn dim(&self) -> usize {
        self.config.hash_dim
    }

    /// IDF weight of the bucket a gram hashes to.
    pub fn idf_of(&self, gram: &str) -> f32 {
        self.idf[bucket(&self.config, gram) as usize]
    }

    /// Serialized fitted state, for equality and determinism checks.
    pub fn state_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.idf.len() * 4);
        for v in [self.config.ngram_min, self.config.ngram_max, self.config.hash_dim, self.n_docs] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for x in &self.idf {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    /// L2-normalized TF-IDF vector of `text`. Text with no n-grams yields
    /// the zero vector.
    pub fn embed(&self, text: &str) -> SparseVector {
        let text = normalize_text(text);
        self.embed_grams(char_ngrams(&text, self.config.ngram_min, self.config.ngram_max))
    }

    /// Vectorize a bag of grams directly; occurrence order does not matter.
    pub fn embed_grams<'a, I: IntoIterator<Item = &'a str>>(&self, grams: I) -> SparseVector {
        let mut buckets: Vec<u32> = grams.into_iter().map(|g| bucket(&self.config, g)).collect();
        buckets.sort_unstable();
        let mut pairs = Vec::new();
        let mut i = 0;
        while i < buckets.len() {
            let b = buckets[i];
            let mut j = i;
            while j < buckets.len() && buckets[j] == b {
                j += 1;
            }
            let tf = (j - i) as f64;
            let w = (1.0 + tf.ln()) * f64::from(self.idf[b as usize]);
            pairs.push((b, w as f32));
            i = j;
        }
        SparseVector::from_pairs(self.config.hash_dim, pairs)
            .expect("bucket indices are within hash_dim")
            .normalized()
    }
}

fn bucket(config: &BaselineVectorizerConfig, gram: &str) -> u32 {
    (fnv1a(gram.as_bytes()) & (config.hash_dim as u64 - 1)) as u32
}
