use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use prefixcd::oracle::NumericConfig;
use prefixcd::*;
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(
    name = "prefixcd",
    version,
    about = "Controlled decoding with prefix scorers"
)]
struct Cli {
    /// JSON config for the subcommand; explicit flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an add-alpha n-gram base model on a whitespace-tokenized corpus.
    FitNgram(FitNgram),
    /// Fit a Bradley-Terry reward on preference pairs.
    TrainRewardBt(TrainRewardBt),
    /// Train a prefix scorer with CD-FUDGE.
    TrainFudge(TrainFudge),
    /// Train a prefix scorer with CD-Q.
    TrainQ(TrainQ),
    /// Decode one response.
    Decode(Decode),
    /// Evaluate a strategy grid and write a tradeoff CSV.
    Sweep,
    /// Run a sweep on one base model with scorers trained against another.
    TransferEval(TransferEval),
    /// Check the closed-form policy, Bellman consistency and the FUDGE gradient identity.
    OracleCheck(OracleCheck),
    /// Print the best-of-K or blockwise KL bound.
    KlBound(KlBound),
}

#[derive(Args)]
struct FitNgram {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 1)]
    order: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long)]
    t_max: usize,
    #[arg(long, default_value = "EOS")]
    eos: String,
}

#[derive(Args)]
struct TrainRewardBt {
    #[arg(long)]
    pairs: PathBuf,
    /// Base model whose vocabulary the pairs use.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    holdout: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScorerKind {
    Tabular,
    Linear,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "tabular")]
    scorer: ScorerKind,
    /// Start from this checkpoint instead of a zero scorer.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct TrainFudge {
    #[command(flatten)]
    train: TrainArgs,
    /// Reward spec JSON; required for on-policy rollouts.
    #[arg(long)]
    reward: Option<PathBuf>,
    /// Fixed rollout dataset (JSONL) instead of on-policy sampling.
    #[arg(long)]
    data: Option<PathBuf>,
    /// On-policy rollouts per epoch.
    #[arg(long, default_value_t = 1000)]
    rollouts: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Exact,
    Sampled,
}

#[derive(Args)]
struct TrainQ {
    #[command(flatten)]
    train: TrainArgs,
    /// Reward spec JSON; overrides rewards stored in the dataset.
    #[arg(long)]
    reward: Option<PathBuf>,
    /// Rollout dataset (JSONL). Without it, every response of the model is enumerated.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    target: Option<Target>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Base,
    Tokenwise,
    Blockwise,
    BestOfK,
}

#[derive(Args)]
struct Decode {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "base")]
    strategy: StrategyArg,
    #[arg(long)]
    scorer: Option<PathBuf>,
    #[arg(long)]
    reward: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    m: usize,
    /// Space-separated prompt symbols.
    #[arg(long, default_value = "")]
    prompt: String,
}

#[derive(Args)]
struct TransferEval {
    /// Base model the scorers were trained against.
    #[arg(long)]
    trained_on: PathBuf,
}

#[derive(Args)]
struct OracleCheck {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    reward: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.5, 1.0, 2.0, 5.0])]
    lambdas: Vec<f64>,
    /// Iteration cap of the numeric maximizer.
    #[arg(long, default_value_t = 100_000)]
    max_iterations: usize,
}

#[derive(Args)]
struct KlBound {
    #[arg(long)]
    k: usize,
    /// Block size; with it the blockwise bound is printed.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    lengths: Vec<usize>,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(serde_json::from_str(&text).map_err(Error::from)?)
}

fn require_out(out: &Option<PathBuf>) -> Result<&Path> {
    match out {
        Some(p) => Ok(p),
        None => Err(Error::InvalidConfig("--out is required".into()).into()),
    }
}

fn parse_prompt(vocab: &Vocab, text: &str) -> Result<Vec<Token>> {
    Ok(vocab.encode(&text.split_whitespace().collect::<Vec<_>>())?)
}

fn load_reward(path: &Path, vocab: &Vocab) -> Result<RewardFn> {
    Ok(RewardSpec::load(path)?.resolve(vocab)?)
}

fn train_config(cli: &Cli, args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match &cli.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    Ok(cfg)
}

fn initial_scorer(args: &TrainArgs, vocab: &Vocab) -> Result<AnyScorer> {
    Ok(match (&args.init, args.scorer) {
        (Some(p), _) => AnyScorer::load(p, vocab)?,
        (None, ScorerKind::Tabular) => AnyScorer::Tabular(TabularScorer::new(vocab)),
        (None, ScorerKind::Linear) => AnyScorer::Linear(LinearScorer::new(vocab)),
    })
}

fn print_trace(trace: &[f64]) {
    if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
        println!("epochs: {}  loss: {first:.6} -> {last:.6}", trace.len());
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::FitNgram(a) => {
            let lines = read_corpus(&a.corpus)?;
            let vocab = Vocab::from_corpus(&lines, &a.eos)?;
            let corpus = lines
                .iter()
                .map(|l| vocab.encode(l))
                .collect::<prefixcd::Result<Vec<_>>>()?;
            let model = fit_ngram(&vocab, &corpus, a.order, a.alpha, a.t_max)?;
            let out = require_out(&cli.out)?;
            model.save(out)?;
            println!(
                "fitted order-{} model over {} symbols on {} lines -> {}",
                a.order,
                vocab.len(),
                corpus.len(),
                out.display()
            );
        }
        Command::TrainRewardBt(a) => {
            let model = BaseModel::load(&a.model)?;
            let pairs = read_pairs(&a.pairs, model.vocab())?;
            let mut cfg: BtConfig = match &cli.config {
                Some(p) => read_json(p)?,
                None => BtConfig::default(),
            };
            if let Some(v) = a.lr {
                cfg.lr = v;
            }
            if let Some(v) = a.epochs {
                cfg.epochs = v;
            }
            if let Some(v) = a.holdout {
                cfg.holdout = v;
            }
            if let Some(v) = cli.seed {
                cfg.seed = v;
            }
            let report = train_reward_bt(
                &pairs,
                model.vocab(),
                a.max_len.unwrap_or(model.t_max()),
                &cfg,
            )?;
            let out = require_out(&cli.out)?;
            let spec = RewardSpec::describe(&report.reward, model.vocab());
            std::fs::write(out, serde_json::to_string_pretty(&spec)?)?;
            print_trace(&report.loss_trace);
            println!("train accuracy: {:.4}", report.train_accuracy);
            match report.heldout_accuracy {
                Some(acc) => println!("held-out accuracy: {acc:.4}"),
                None => println!("held-out accuracy: n/a"),
            }
        }
        Command::TrainFudge(a) => {
            let model = BaseModel::load(&a.train.model)?;
            let cfg = train_config(cli, &a.train)?;
            let mut scorer = initial_scorer(&a.train, model.vocab())?;
            let prompts = PromptSet::empty_prompt();
            let reward = a
                .reward
                .as_deref()
                .map(|p| load_reward(p, model.vocab()))
                .transpose()?;
            let data;
            let source = match (&a.data, &reward) {
                (Some(path), _) => {
                    data = RolloutDataset::read_jsonl(path, model.vocab())?;
                    FudgeSource::Dataset(&data)
                }
                (None, Some(r)) => FudgeSource::OnPolicy {
                    model: &model,
                    reward: r,
                    prompts: &prompts,
                    rollouts: a.rollouts,
                },
                (None, None) => bail!(Error::InvalidConfig(
                    "train-fudge needs --data or --reward".into()
                )),
            };
            let trace = train_fudge(&mut scorer, source, &cfg)?;
            scorer.save(require_out(&cli.out)?, model.vocab())?;
            print_trace(&trace);
        }
        Command::TrainQ(a) => {
            let model = BaseModel::load(&a.train.model)?;
            let mut cfg = train_config(cli, &a.train)?;
            if let Some(t) = a.target {
                cfg.target = match t {
                    Target::Exact => TargetMode::Exact,
                    Target::Sampled => TargetMode::Sampled,
                };
            }
            let mut scorer = initial_scorer(&a.train, model.vocab())?;
            let reward = a
                .reward
                .as_deref()
                .map(|p| load_reward(p, model.vocab()))
                .transpose()?;
            let data = match (&a.data, &reward) {
                (Some(path), _) => RolloutDataset::read_jsonl(path, model.vocab())?,
                (None, Some(r)) => {
                    RolloutDataset::enumerate(&model, r, &PromptSet::empty_prompt())?
                }
                (None, None) => bail!(Error::InvalidConfig(
                    "train-q needs --data or --reward".into()
                )),
            };
            let trace = train_q(&mut scorer, &data, &model, reward.as_ref(), &cfg)?;
            scorer.save(require_out(&cli.out)?, model.vocab())?;
            print_trace(&trace);
        }
        Command::Decode(a) => {
            let model = BaseModel::load(&a.model)?;
            let vocab = model.vocab();
            let prompt = parse_prompt(vocab, &a.prompt)?;
            let scorer = a
                .scorer
                .as_deref()
                .map(|p| AnyScorer::load(p, vocab))
                .transpose()?;
            let reward = a
                .reward
                .as_deref()
                .map(|p| load_reward(p, vocab))
                .transpose()?;
            let need_scorer = || {
                scorer
                    .as_ref()
                    .map(|s| s as &dyn PrefixScorer)
                    .ok_or_else(|| Error::InvalidConfig("this strategy needs --scorer".into()))
            };
            let strategy = match a.strategy {
                StrategyArg::Base => Strategy::Base,
                StrategyArg::Tokenwise => Strategy::Tokenwise {
                    lambda: a.lambda,
                    scorer: need_scorer()?,
                },
                StrategyArg::Blockwise => Strategy::Blockwise {
                    k: a.k,
                    m: a.m,
                    scorer: need_scorer()?,
                },
                StrategyArg::BestOfK => Strategy::BestOfK {
                    k: a.k,
                    reward: reward
                        .as_ref()
                        .ok_or_else(|| Error::InvalidConfig("best-of-k needs --reward".into()))?,
                },
            };
            let spec = DecodePolicySpec {
                strategy,
                seed: cli.seed.unwrap_or(0),
            };
            let trace = decode(&spec, &model, &prompt)?;
            println!("{}", vocab.decode(&trace.sequence).join(" "));
            if let Some(out) = &cli.out {
                std::fs::write(out, trace.to_json()?)?;
            }
        }
        Command::Sweep => {
            let cfg = sweep_config(cli)?;
            let out = run_sweep(&cfg)?;
            if cfg.out.is_none() {
                print!("{}", out.csv);
            } else {
                info!("wrote {} rows", out.points.len());
            }
        }
        Command::TransferEval(a) => {
            let cfg = sweep_config(cli)?;
            let out = transfer_eval(&cfg, &a.trained_on)?;
            if cfg.out.is_none() {
                print!("{}", out.csv);
            }
        }
        Command::OracleCheck(a) => oracle_check(a)?,
        Command::KlBound(a) => {
            let value = match a.m {
                None => kl_bound_bon(a.k)?,
                Some(m) => kl_bound_blockwise(a.k, &a.lengths, m)?,
            };
            println!("{value:.6}");
        }
    }
    Ok(())
}

fn sweep_config(cli: &Cli) -> Result<SweepConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("--config is required".into()))?;
    let mut cfg = SweepConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

fn oracle_check(a: &OracleCheck) -> Result<()> {
    let model = BaseModel::load(&a.model)?;
    let reward = load_reward(&a.reward, model.vocab())?;
    let prompts = PromptSet::empty_prompt();
    let table = ValueTable::build(&model, &reward, &prompts)?;
    let scorer = TabularScorer::from_value_table(model.vocab(), &table);
    let cfg = NumericConfig {
        max_iterations: a.max_iterations,
        ..Default::default()
    };
    let mut worst_tv: f64 = 0.0;
    let mut cases = 0;
    for ctx in model.enumerate_contexts(&[])?.concat() {
        if ctx.is_terminated(model.eos()) {
            continue;
        }
        for &lambda in &a.lambdas {
            let closed = optimal_policy_closed_form(lambda, &model, &scorer, &ctx)?;
            let numeric = optimal_policy_numeric(lambda, &model, &reward, &ctx, &cfg)?;
            worst_tv = worst_tv.max(closed.total_variation(&numeric));
            cases += 1;
        }
    }
    println!("closed-form vs numeric policy: max TV {worst_tv:.3e} over {cases} cases");
    let bellman = check_bellman(&model, &reward, &table)?;
    println!(
        "Bellman residual: {:.3e} over {} contexts (worst at {})",
        bellman.max_residual,
        bellman.checked,
        bellman
            .worst
            .map(|c| format!("[{}]", c.key()))
            .unwrap_or_default()
    );
    let tab = fudge_gradient_check(
        &TabularScorer::new(model.vocab()),
        &model,
        &reward,
        &prompts,
    )?;
    let lin = fudge_gradient_check(&LinearScorer::new(model.vocab()), &model, &reward, &prompts)?;
    println!(
        "FUDGE gradient gap: tabular {:.3e}, linear {:.3e}",
        tab.gap, lin.gap
    );
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_non_convergence() => 3,
        Some(_) => 2,
        None if err.downcast_ref::<serde_json::Error>().is_some() => 2,
        None if err.downcast_ref::<std::io::Error>().is_some() => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli).with_context(|| "prefixcd failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
