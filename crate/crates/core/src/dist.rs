//! Categorical distributions over a vocabulary, built in the log domain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A normalized categorical distribution over token indices.
///
/// `log_z` is the log-normalizer of the logits the distribution was built from, so
/// for a closed-form aligned policy it carries `log Z_λ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    probs: Vec<f64>,
    log_probs: Vec<f64>,
    log_z: f64,
}

impl Distribution {
    /// Normalizes unnormalized log-weights with max-subtraction. `-inf` entries get
    /// probability exactly zero.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
            return Err(Error::Precondition(format!(
                "logits must be finite or -inf: {logits:?}"
            )));
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::Precondition("all logits are -inf".into()));
        }
        let mut probs: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= sum);
        let log_z = max + sum.ln();
        let log_probs = logits.iter().map(|l| l - log_z).collect();
        Ok(Distribution {
            probs,
            log_probs,
            log_z,
        })
    }

    /// Builds a distribution from probabilities that should already sum to one.
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Precondition(format!(
                "probabilities must be finite and nonnegative: {probs:?}"
            )));
        }
        let logits: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        Self::from_logits(&logits)
    }

    pub fn point_mass(size: usize, index: usize) -> Self {
        let mut logits = vec![f64::NEG_INFINITY; size];
        logits[index] = 0.0;
        Self::from_logits(&logits).expect("point mass is a valid distribution")
    }

    pub fn uniform(size: usize) -> Self {
        Self::from_logits(&vec![0.0; size]).expect("uniform is a valid distribution")
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, index: usize) -> f64 {
        self.probs[index]
    }

    /// Exact log-probability, taken from the logits rather than `ln(prob)`.
    pub fn log_prob(&self, index: usize) -> f64 {
        self.log_probs[index]
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn log_normalizer(&self) -> f64 {
        self.log_z
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Inverse-CDF draw from a uniform `u` in `[0, 1)`.
    pub fn sample_with(&self, u: f64) -> usize {
        let mut cumulative = 0.0;
        let mut last_positive = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                cumulative += p;
                last_positive = i;
                if u < cumulative {
                    return i;
                }
            }
        }
        // rounding left u above the accumulated mass
        last_positive
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn total_variation(&self, other: &Distribution) -> f64 {
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }

    pub fn max_abs_diff(&self, other: &Distribution) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_logits_give_uniform() {
        let d = Distribution::from_logits(&[0.0, 0.0, 0.0]).unwrap();
        for p in d.probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((d.log_normalizer() - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn neg_infinity_is_exact_zero() {
        let d = Distribution::from_logits(&[f64::NEG_INFINITY, 0.0]).unwrap();
        assert_eq!(d.probs(), &[0.0, 1.0]);
        assert_eq!(d.sample_with(0.0), 1);
        assert_eq!(d.sample_with(0.999_999), 1);
    }

    #[test]
    fn rejects_degenerate_logits() {
        assert!(Distribution::from_logits(&[f64::NEG_INFINITY; 2]).is_err());
        assert!(Distribution::from_logits(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn huge_logits_do_not_overflow() {
        let d = Distribution::from_logits(&[1e6, 1e6 - 1.0, 0.0]).unwrap();
        assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(d.prob(2) == 0.0);
    }

    proptest! {
        #[test]
        fn normalizes_to_one(logits in prop::collection::vec(-50.0f64..50.0, 1..12)) {
            let d = Distribution::from_logits(&logits).unwrap();
            prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (i, p) in d.probs().iter().enumerate() {
                prop_assert!((p.ln() - d.log_prob(i)).abs() < 1e-9);
            }
        }

        #[test]
        fn sample_hits_support(logits in prop::collection::vec(-5.0f64..5.0, 1..6), u in 0.0f64..1.0) {
            let d = Distribution::from_logits(&logits).unwrap();
            prop_assert!(d.sample_with(u) < logits.len());
        }
    }
}
