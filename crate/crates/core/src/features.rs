//! Sparse n-gram featurization shared by linear prefix scorers and learned rewards.
//!
//! Features of a response prefix: unigram counts, bigram counts, the prefix length
//! and a constant bias. Prompt tokens are not featurized.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::seqmodel::{Token, Vocab};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Featurizer {
    vocab_size: usize,
}

impl Featurizer {
    pub fn new(vocab_size: usize) -> Self {
        Featurizer { vocab_size }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.vocab_size + self.vocab_size * self.vocab_size + 2
    }

    pub fn length_index(&self) -> usize {
        self.vocab_size + self.vocab_size * self.vocab_size
    }

    pub fn bias_index(&self) -> usize {
        self.length_index() + 1
    }

    fn bigram_index(&self, a: Token, b: Token) -> usize {
        self.vocab_size + a * self.vocab_size + b
    }

    /// Sparse `(index, value)` pairs sorted by index.
    pub fn features(&self, prefix: &[Token]) -> Vec<(usize, f64)> {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for &t in prefix {
            *acc.entry(t).or_default() += 1.0;
        }
        for w in prefix.windows(2) {
            *acc.entry(self.bigram_index(w[0], w[1])).or_default() += 1.0;
        }
        acc.insert(self.length_index(), prefix.len() as f64);
        acc.insert(self.bias_index(), 1.0);
        acc.into_iter().collect()
    }

    pub fn dot(&self, weights: &[f64], prefix: &[Token]) -> f64 {
        self.features(prefix)
            .iter()
            .map(|&(i, v)| weights[i] * v)
            .sum()
    }

    /// Largest value feature `index` can take on a prefix of at most `max_len` tokens.
    pub fn feature_cap(&self, index: usize, max_len: usize) -> f64 {
        if index < self.vocab_size || index == self.length_index() {
            max_len as f64
        } else if index < self.length_index() {
            max_len.saturating_sub(1) as f64
        } else {
            1.0
        }
    }

    /// Human-readable feature name: `uni:a`, `bi:a,b`, `len`, `bias`.
    pub fn name(&self, vocab: &Vocab, index: usize) -> String {
        if index < self.vocab_size {
            format!("uni:{}", vocab.symbol(index))
        } else if index < self.length_index() {
            let j = index - self.vocab_size;
            format!(
                "bi:{},{}",
                vocab.symbol(j / self.vocab_size),
                vocab.symbol(j % self.vocab_size)
            )
        } else if index == self.length_index() {
            "len".into()
        } else {
            "bias".into()
        }
    }

    pub fn index_of(&self, vocab: &Vocab, name: &str) -> Result<usize> {
        match name {
            "len" => Ok(self.length_index()),
            "bias" => Ok(self.bias_index()),
            _ => {
                if let Some(sym) = name.strip_prefix("uni:") {
                    vocab.token(sym)
                } else if let Some(pair) = name.strip_prefix("bi:") {
                    let (a, b) = pair
                        .split_once(',')
                        .ok_or_else(|| Error::parse("feature name", name))?;
                    Ok(self.bigram_index(vocab.token(a)?, vocab.token(b)?))
                } else {
                    Err(Error::parse("feature name", name))
                }
            }
        }
    }

    /// Weight vector as a name→weight map, omitting zeros.
    pub fn weights_to_map(&self, vocab: &Vocab, weights: &[f64]) -> BTreeMap<String, f64> {
        weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(i, w)| (self.name(vocab, i), *w))
            .collect()
    }

    pub fn weights_from_map(&self, vocab: &Vocab, map: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
        let mut w = vec![0.0; self.dim()];
        for (name, value) in map {
            w[self.index_of(vocab, name)?] = *value;
        }
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_names() {
        let vocab = Vocab::new(["a", "b", "EOS"], "EOS").unwrap();
        let f = Featurizer::new(3);
        assert_eq!(f.dim(), 14);
        let feats = f.features(&[0, 0, 2]);
        let get = |i: usize| {
            feats
                .iter()
                .find(|(j, _)| *j == i)
                .map(|p| p.1)
                .unwrap_or(0.0)
        };
        assert_eq!(get(0), 2.0);
        assert_eq!(get(f.index_of(&vocab, "bi:a,a").unwrap()), 1.0);
        assert_eq!(get(f.index_of(&vocab, "bi:a,EOS").unwrap()), 1.0);
        assert_eq!(get(f.length_index()), 3.0);
        assert_eq!(get(f.bias_index()), 1.0);
        for i in 0..f.dim() {
            assert_eq!(f.index_of(&vocab, &f.name(&vocab, i)).unwrap(), i);
        }
    }

    #[test]
    fn empty_prefix_has_bias_only() {
        let f = Featurizer::new(3);
        assert_eq!(
            f.features(&[]),
            vec![(f.length_index(), 0.0), (f.bias_index(), 1.0)]
        );
    }
}
