use std::collections::HashMap;

use crate::oracle::ValueTable;
use crate::seqmodel::{Context, Vocab};

use super::{Gradient, ParamId, PrefixScorer, TrainableScorer};

/// One free parameter per context; unseen contexts score `default`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularScorer {
    fingerprint: String,
    vocab_size: usize,
    table: HashMap<Context, f64>,
    default: f64,
}

impl TabularScorer {
    pub fn new(vocab: &Vocab) -> Self {
        Self::with_default(vocab, 0.0)
    }

    pub fn with_default(vocab: &Vocab, default: f64) -> Self {
        TabularScorer {
            fingerprint: vocab.fingerprint(),
            vocab_size: vocab.len(),
            table: HashMap::new(),
            default,
        }
    }

    pub fn from_value_table(vocab: &Vocab, values: &ValueTable) -> Self {
        let mut s = Self::new(vocab);
        for (ctx, v) in values.iter() {
            s.set(ctx.clone(), v);
        }
        s
    }

    pub fn set(&mut self, ctx: Context, value: f64) {
        self.table.insert(ctx, value);
    }

    pub fn get(&self, ctx: &Context) -> Option<f64> {
        self.table.get(ctx).copied()
    }

    pub fn default_value(&self) -> f64 {
        self.default
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Entries sorted by context.
    pub fn entries(&self) -> Vec<(Context, f64)> {
        let mut e: Vec<_> = self.table.iter().map(|(c, v)| (c.clone(), *v)).collect();
        e.sort_by(|a, b| a.0.cmp(&b.0));
        e
    }
}

impl PrefixScorer for TabularScorer {
    fn vocab_fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn score(&self, ctx: &Context) -> f64 {
        self.table.get(ctx).copied().unwrap_or(self.default)
    }
}

impl TrainableScorer for TabularScorer {
    fn add_gradient(&self, ctx: &Context, scale: f64, grad: &mut Gradient) {
        *grad.entry(ParamId::Entry(ctx.clone())).or_default() += scale;
    }

    fn apply_gradient(&mut self, grad: &Gradient, lr: f64) {
        for (id, g) in grad {
            if let ParamId::Entry(ctx) = id {
                let default = self.default;
                *self.table.entry(ctx.clone()).or_insert(default) -= lr * g;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{exact_value, ValueTable};
    use crate::reward::RewardFn;
    use crate::seqmodel::{BaseModel, PromptSet};

    #[test]
    fn fresh_scorer_is_zero() {
        let m = BaseModel::tiny2();
        let s = TabularScorer::new(m.vocab());
        for ctx in m.enumerate_contexts(&[]).unwrap().concat() {
            assert_eq!(s.score(&ctx), 0.0);
            if !ctx.is_terminated(m.eos()) {
                assert_eq!(s.score_all_next(&ctx), vec![0.0; 3]);
            }
        }
    }

    #[test]
    fn loaded_from_exported_table() {
        let m = BaseModel::tiny2();
        let r = RewardFn::lexicon(m.vocab(), &[(0, 1.0)], 3).unwrap();
        let table = ValueTable::build(&m, &r, &PromptSet::empty_prompt()).unwrap();
        let back = ValueTable::from_json(&table.to_json().unwrap()).unwrap();
        let s = TabularScorer::from_value_table(m.vocab(), &back);
        for ctx in m.enumerate_contexts(&[]).unwrap().concat() {
            assert!((s.score(&ctx) - exact_value(&m, &r, &ctx).unwrap()).abs() < 1e-15);
            if !ctx.is_terminated(m.eos()) && ctx.len() + 1 < m.t_max() {
                let children: Vec<f64> = (0..3)
                    .map(|z| exact_value(&m, &r, &ctx.child(z)).unwrap())
                    .collect();
                let next = s.score_all_next(&ctx);
                for (a, b) in next.iter().zip(&children) {
                    assert!((a - b).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn gradient_step_moves_one_entry() {
        let m = BaseModel::tiny2();
        let mut s = TabularScorer::new(m.vocab());
        let ctx = Context::new(vec![], vec![0]);
        let mut g = Gradient::new();
        s.add_gradient(&ctx, -2.0, &mut g);
        s.apply_gradient(&g, 0.5);
        assert_eq!(s.score(&ctx), 1.0);
        assert_eq!(s.len(), 1);
    }
}
