use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::decode::{DecodePolicySpec, Strategy};
use crate::error::{Error, Result};
use crate::reward::{RewardFn, RewardSpec};
use crate::scorer::{check_vocab, combine_scorers, AnyScorer, CombinedScorer, PrefixScorer};
use crate::seqmodel::{BaseModel, PromptSet, Vocab};
use crate::stream::derive_seed;

use super::{evaluate, evaluate_exact, TradeoffPoint};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerRef {
    pub path: PathBuf,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

/// A reward given inline or as a path to a reward-spec JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RewardSource {
    Path(PathBuf),
    Inline(RewardSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub prompts: Vec<Vec<String>>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

/// Strategy grid. Rows are emitted in the order: base, tokenwise (by λ), blockwise
/// (by K, then M), best-of-K (by K).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grid {
    pub base: bool,
    pub lambdas: Vec<f64>,
    pub blockwise_k: Vec<usize>,
    pub blockwise_m: Vec<usize>,
    pub best_of_k: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    #[default]
    MonteCarlo,
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub model: PathBuf,
    #[serde(default)]
    pub scorers: Vec<ScorerRef>,
    pub reward: RewardSource,
    #[serde(default)]
    pub prompts: Option<PromptSpec>,
    pub grid: Grid,
    /// Decodes per row in Monte Carlo mode.
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub mode: EvalMode,
    /// Record wall-clock time per row; the CSV is then no longer reproducible.
    #[serde(default)]
    pub timing: bool,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn default_n() -> usize {
    1000
}

impl SweepConfig {
    /// Reads a config; relative paths inside resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: SweepConfig = serde_json::from_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn validate(&self) -> Result<()> {
        let g = &self.grid;
        let rows = usize::from(g.base)
            + g.lambdas.len()
            + g.blockwise_k.len() * g.blockwise_m.len()
            + g.best_of_k.len();
        if rows == 0 {
            return Err(Error::InvalidConfig("strategy grid is empty".into()));
        }
        if g.blockwise_k.is_empty() != g.blockwise_m.is_empty() {
            return Err(Error::InvalidConfig(
                "blockwise grid needs both K and M values".into(),
            ));
        }
        if self.mode == EvalMode::MonteCarlo && self.n == 0 {
            return Err(Error::InvalidConfig("n must be >= 1".into()));
        }
        if (!g.lambdas.is_empty() || !g.blockwise_k.is_empty()) && self.scorers.is_empty() {
            return Err(Error::InvalidConfig(
                "tokenwise and blockwise rows need at least one scorer".into(),
            ));
        }
        Ok(())
    }
}

/// Rows of a finished sweep with their CSV serialization and metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutput {
    pub points: Vec<TradeoffPoint>,
    pub csv: String,
    pub metadata: serde_json::Value,
}

impl SweepOutput {
    /// Writes the CSV to `path` and the metadata next to it as `<path>.meta.json`.
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, &self.csv).map_err(|e| Error::io(path, e))?;
        let meta = meta_path(path);
        std::fs::write(&meta, serde_json::to_string_pretty(&self.metadata)?)
            .map_err(|e| Error::io(&meta, e))
    }
}

fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

struct Loaded {
    model: BaseModel,
    scorers: Vec<AnyScorer>,
    reward: RewardFn,
    prompts: PromptSet,
}

fn load_inputs(cfg: &SweepConfig, model_path: &Path) -> Result<Loaded> {
    let model = BaseModel::load(model_path)?;
    let vocab = model.vocab();
    let scorers = cfg
        .scorers
        .iter()
        .map(|s| AnyScorer::load(cfg.resolve(&s.path), vocab))
        .collect::<Result<Vec<_>>>()?;
    let reward = match &cfg.reward {
        RewardSource::Path(p) => RewardSpec::load(cfg.resolve(p))?,
        RewardSource::Inline(spec) => spec.clone(),
    }
    .resolve(vocab)?;
    let prompts = prompt_set(cfg.prompts.as_ref(), vocab)?;
    Ok(Loaded {
        model,
        scorers,
        reward,
        prompts,
    })
}

fn prompt_set(spec: Option<&PromptSpec>, vocab: &Vocab) -> Result<PromptSet> {
    match spec {
        None => Ok(PromptSet::empty_prompt()),
        Some(p) => {
            let prompts = p
                .prompts
                .iter()
                .map(|x| vocab.encode(x))
                .collect::<Result<Vec<_>>>()?;
            PromptSet::new(prompts, p.weights.clone())
        }
    }
}

fn strategies<'a>(
    grid: &Grid,
    scorer: Option<&'a CombinedScorer<'a>>,
    reward: &'a RewardFn,
) -> Vec<Strategy<'a>> {
    let mut out = Vec::new();
    if grid.base {
        out.push(Strategy::Base);
    }
    if let Some(s) = scorer {
        for &lambda in &grid.lambdas {
            out.push(Strategy::Tokenwise { lambda, scorer: s });
        }
        for &k in &grid.blockwise_k {
            for &m in &grid.blockwise_m {
                out.push(Strategy::Blockwise { k, m, scorer: s });
            }
        }
    }
    for &k in &grid.best_of_k {
        out.push(Strategy::BestOfK { k, reward });
    }
    out
}

fn sweep_with(
    cfg: &SweepConfig,
    inputs: &Loaded,
    extra_meta: Option<serde_json::Value>,
) -> Result<SweepOutput> {
    let combined = if inputs.scorers.is_empty() {
        None
    } else {
        Some(combine_scorers(
            cfg.scorers
                .iter()
                .zip(&inputs.scorers)
                .map(|(r, s)| (r.weight, Box::new(s) as Box<dyn PrefixScorer>))
                .collect(),
        )?)
    };
    if let Some(c) = &combined {
        check_vocab(c, inputs.model.vocab())?;
    }
    let rows = strategies(&cfg.grid, combined.as_ref(), &inputs.reward);
    for s in &rows {
        s.validate(&inputs.model)?;
    }
    let points = rows
        .par_iter()
        .enumerate()
        .map(|(i, strategy)| {
            let seed = derive_seed(cfg.seed, i as u64);
            let start = Instant::now();
            let mut point = match cfg.mode {
                EvalMode::MonteCarlo => {
                    let spec = DecodePolicySpec {
                        strategy: *strategy,
                        seed,
                    };
                    evaluate(&spec, &inputs.model, &inputs.reward, &inputs.prompts, cfg.n)?.point
                }
                EvalMode::Exact => {
                    evaluate_exact(
                        strategy,
                        &inputs.model,
                        &inputs.reward,
                        &inputs.prompts,
                        seed,
                    )?
                    .point
                }
            };
            if cfg.timing {
                point.wall_ms = start.elapsed().as_millis() as u64;
            }
            Ok(point)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    for p in &points {
        writer.serialize(p)?;
    }
    let csv = String::from_utf8(
        writer
            .into_inner()
            .map_err(|e| Error::parse("csv", e.to_string()))?,
    )
    .map_err(|e| Error::parse("csv", e.to_string()))?;
    let mut metadata = json!({
        "seed": cfg.seed,
        "mode": cfg.mode,
        "n": cfg.n,
        "rows": points.len(),
        "model": cfg.model,
        "scorers": cfg.scorers,
        "vocab_hash": inputs.model.vocab().fingerprint(),
        "row_seeds": "derive_seed(seed, row_index)",
        "paired_seeds": "reward normalization decodes the base policy on the same prompt and random stream as each aligned decode; win-rate opponents use an independent stream",
        "kl_kinds": {"exact": "enumeration", "mc": "mean of log pi - log pi_ref over decodes", "bound": "analytic best-of-K bound, blockwise over observed lengths"},
        "timing": cfg.timing,
    });
    if let Some(extra) = extra_meta {
        metadata["transfer"] = extra;
    }
    let out = SweepOutput {
        points,
        csv,
        metadata,
    };
    if let Some(path) = &cfg.out {
        out.write(path)?;
    }
    Ok(out)
}

/// Evaluates every grid row and, when `cfg.out` is set, writes the CSV and metadata.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    let inputs = load_inputs(cfg, &cfg.resolve(&cfg.model))?;
    sweep_with(cfg, &inputs, None)
}

/// Runs the sweep on `cfg.model` with scorers that were trained against the model at
/// `trained_on`. Both models must share a vocabulary.
pub fn transfer_eval(cfg: &SweepConfig, trained_on: &Path) -> Result<SweepOutput> {
    cfg.validate()?;
    let source = BaseModel::load(cfg.resolve(trained_on))?;
    let inputs = load_inputs(cfg, &cfg.resolve(&cfg.model))?;
    if source.vocab() != inputs.model.vocab() {
        return Err(Error::VocabMismatch {
            expected: inputs.model.vocab().fingerprint(),
            found: source.vocab().fingerprint(),
        });
    }
    let meta = json!({
        "trained_on": trained_on,
        "evaluated_on": cfg.model,
        "models_differ": source != inputs.model,
    });
    sweep_with(cfg, &inputs, Some(meta))
}

/// Area under the reward-at-KL-budget curve `f(b) = max{reward_i : kl_i ≤ b}` for
/// `b ∈ [0, budget]`. Budgets below every point's KL contribute nothing.
pub fn frontier_area(points: &[(f64, f64)], budget: f64) -> f64 {
    let mut sorted: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|(kl, _)| *kl <= budget)
        .collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut area = 0.0;
    let mut best = f64::NEG_INFINITY;
    for (i, (kl, r)) in sorted.iter().enumerate() {
        best = best.max(*r);
        let next = sorted.get(i + 1).map_or(budget, |p| p.0);
        area += best * (next - kl);
    }
    area
}
