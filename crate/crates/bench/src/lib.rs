//! Fixtures shared by the benchmarks.

use prefixcd::{fit_ngram, BaseModel, PromptSet, RewardFn, TabularScorer, ValueTable, Vocab};

/// Order-2 n-gram over five symbols with a horizon of `t_max`.
pub fn ngram(t_max: usize) -> BaseModel {
    let vocab = Vocab::new(["a", "b", "c", "d", "EOS"], "EOS").unwrap();
    let lines = [
        "a b c d",
        "b a",
        "c c a b d",
        "a",
        "b b c a",
        "d a c",
        "a a b",
    ];
    let corpus: Vec<_> = lines
        .iter()
        .map(|l| {
            vocab
                .encode(&l.split_whitespace().collect::<Vec<_>>())
                .unwrap()
        })
        .collect();
    fit_ngram(&vocab, &corpus, 2, 0.5, t_max).unwrap()
}

pub fn reward(model: &BaseModel) -> RewardFn {
    RewardFn::lexicon(model.vocab(), &[(0, 1.0), (3, 0.5)], model.t_max()).unwrap()
}

pub fn oracle_scorer(model: &BaseModel, reward: &RewardFn) -> TabularScorer {
    let table = ValueTable::build(model, reward, &PromptSet::empty_prompt()).unwrap();
    TabularScorer::from_value_table(model.vocab(), &table)
}
