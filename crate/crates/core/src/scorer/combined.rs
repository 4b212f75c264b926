use crate::error::{Error, Result};
use crate::seqmodel::Context;

use super::PrefixScorer;

/// Lazily evaluated `Σ w_i V_i(ctx)`.
pub struct CombinedScorer<'a> {
    fingerprint: String,
    vocab_size: usize,
    terms: Vec<(f64, Box<dyn PrefixScorer + 'a>)>,
}

impl std::fmt::Debug for CombinedScorer<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CombinedScorer")
            .field(
                "weights",
                &self.terms.iter().map(|t| t.0).collect::<Vec<_>>(),
            )
            .finish()
    }
}

pub fn combine_scorers<'a>(
    terms: Vec<(f64, Box<dyn PrefixScorer + 'a>)>,
) -> Result<CombinedScorer<'a>> {
    let first = terms
        .first()
        .ok_or_else(|| Error::Empty("scorer combination needs at least one term".into()))?;
    let fingerprint = first.1.vocab_fingerprint().to_string();
    let vocab_size = first.1.vocab_size();
    for (w, s) in &terms {
        if s.vocab_fingerprint() != fingerprint {
            return Err(Error::VocabMismatch {
                expected: fingerprint,
                found: s.vocab_fingerprint().to_string(),
            });
        }
        if !w.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "combination weight {w} is not finite"
            )));
        }
    }
    Ok(CombinedScorer {
        fingerprint,
        vocab_size,
        terms,
    })
}

impl PrefixScorer for CombinedScorer<'_> {
    fn vocab_fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn score(&self, ctx: &Context) -> f64 {
        self.terms.iter().map(|(w, s)| w * s.score(ctx)).sum()
    }
}
