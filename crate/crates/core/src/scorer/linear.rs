use crate::error::{Error, Result};
use crate::features::Featurizer;
use crate::seqmodel::{Context, Vocab};

use super::{Gradient, ParamId, PrefixScorer, TrainableScorer};

/// `V_θ(ctx) = w · φ(prefix)` over unigram/bigram counts, prefix length and a bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearScorer {
    fingerprint: String,
    featurizer: Featurizer,
    weights: Vec<f64>,
}

impl LinearScorer {
    pub fn new(vocab: &Vocab) -> Self {
        let featurizer = Featurizer::new(vocab.len());
        LinearScorer {
            fingerprint: vocab.fingerprint(),
            weights: vec![0.0; featurizer.dim()],
            featurizer,
        }
    }

    pub fn with_weights(vocab: &Vocab, weights: Vec<f64>) -> Result<Self> {
        let mut s = Self::new(vocab);
        if weights.len() != s.weights.len() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "linear scorer needs {} finite weights, got {}",
                s.weights.len(),
                weights.len()
            )));
        }
        s.weights = weights;
        Ok(s)
    }

    /// Constant scorer: only the bias weight is set.
    pub fn bias_only(vocab: &Vocab, bias: f64) -> Self {
        let mut s = Self::new(vocab);
        let i = s.featurizer.bias_index();
        s.weights[i] = bias;
        s
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl PrefixScorer for LinearScorer {
    fn vocab_fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn vocab_size(&self) -> usize {
        self.featurizer.vocab_size()
    }

    fn score(&self, ctx: &Context) -> f64 {
        self.featurizer.dot(&self.weights, &ctx.prefix)
    }
}

impl TrainableScorer for LinearScorer {
    fn add_gradient(&self, ctx: &Context, scale: f64, grad: &mut Gradient) {
        for (i, v) in self.featurizer.features(&ctx.prefix) {
            *grad.entry(ParamId::Weight(i)).or_default() += scale * v;
        }
    }

    fn apply_gradient(&mut self, grad: &Gradient, lr: f64) {
        for (id, g) in grad {
            if let ParamId::Weight(i) = id {
                self.weights[*i] -= lr * g;
            }
        }
    }
}
