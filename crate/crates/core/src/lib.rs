//! Controlled decoding with prefix scorers: exact value oracles, CD-FUDGE and CD-Q
//! training, tokenwise and blockwise decoding, and reward/KL tradeoff evaluation on
//! small enumerable models.

pub mod decode;
pub mod dist;
pub mod error;
pub mod features;
pub mod harness;
pub mod oracle;
pub mod reward;
pub mod scorer;
pub mod seqmodel;
pub mod stream;

pub use decode::{
    best_of_k, decode, decode_base, decode_blockwise, decode_tokenwise, decode_with,
    tokenwise_policy, DecodePolicySpec, DecodeTrace, StepRecord, Strategy,
};
pub use dist::Distribution;
pub use error::{Error, Result};
pub use features::Featurizer;
pub use harness::{
    estimate_kl, evaluate, evaluate_exact, exact_distribution, expected_reward, kl_bound_blockwise,
    kl_bound_bon, run_sweep, transfer_eval, win_rate, Evaluation, KlEstimate, KlKind, KlMode,
    RewardEstimate, SweepConfig, SweepOutput, TradeoffPoint, WinRate,
};
pub use oracle::{
    advantage, check_bellman, exact_value, fudge_gradient_check, kl_next, objective_j,
    optimal_policy_closed_form, optimal_policy_numeric, BellmanReport, GradientCheck,
    NumericConfig, ValueTable,
};
pub use reward::{
    combine_rewards, read_pairs, train_reward_bt, write_pairs, BtConfig, BtReport, PreferencePair,
    Preferred, RewardFn, RewardSpec,
};
pub use scorer::{
    combine_scorers, train_fudge, train_fudge_with, train_q, train_q_with, AnyScorer,
    CombinedScorer, FudgeSource, Gradient, LinearScorer, ParamId, PrefixScorer, Provenance,
    Rollout, RolloutDataset, TabularScorer, TargetMode, TrainConfig, TrainableScorer,
};
pub use seqmodel::{
    fit_ngram, read_corpus, BaseModel, Context, ModelKind, NGramTable, PromptSet, Token, Vocab,
};
pub use stream::{derive_seed, RandomStream};
