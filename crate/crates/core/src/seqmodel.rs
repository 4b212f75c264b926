//! Vocabularies, decoding contexts and small autoregressive base models with exact
//! next-token distributions.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dist::Distribution;
use crate::error::{Error, Result};
use crate::stream::RandomStream;

/// Tokens are indices into a [`Vocab`]; symbols only appear at I/O boundaries.
pub type Token = usize;

/// Upper bound on nodes visited by exhaustive enumerations.
pub const ENUMERATION_LIMIT: usize = 10_000_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    eos: Token,
    index: HashMap<String, Token>,
}

impl Vocab {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>, eos: &str) -> Result<Self> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.len() < 2 {
            return Err(Error::InvalidConfig(
                "a vocabulary needs at least two tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate token {t:?}")));
            }
        }
        let eos = *index.get(eos).ok_or_else(|| {
            Error::InvalidConfig(format!("EOS symbol {eos:?} is not in the vocabulary"))
        })?;
        Ok(Vocab { tokens, eos, index })
    }

    /// Vocabulary in order of first appearance, with `eos` appended if the corpus never uses it.
    pub fn from_corpus(lines: &[Vec<String>], eos: &str) -> Result<Self> {
        let mut tokens: Vec<String> = Vec::new();
        for sym in lines.iter().flatten() {
            if sym != eos && !tokens.contains(sym) {
                tokens.push(sym.clone());
            }
        }
        tokens.push(eos.to_string());
        Vocab::new(tokens, eos)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> Token {
        self.eos
    }

    pub fn symbols(&self) -> &[String] {
        &self.tokens
    }

    pub fn symbol(&self, token: Token) -> &str {
        &self.tokens[token]
    }

    pub fn token(&self, symbol: &str) -> Result<Token> {
        self.index
            .get(symbol)
            .copied()
            .ok_or_else(|| Error::UnknownSymbol(symbol.to_string()))
    }

    pub fn encode<S: AsRef<str>>(&self, symbols: &[S]) -> Result<Vec<Token>> {
        symbols.iter().map(|s| self.token(s.as_ref())).collect()
    }

    pub fn decode(&self, tokens: &[Token]) -> Vec<String> {
        tokens.iter().map(|&t| self.tokens[t].clone()).collect()
    }

    pub fn check(&self, token: Token) -> Result<()> {
        if token < self.tokens.len() {
            Ok(())
        } else {
            Err(Error::UnknownToken {
                index: token,
                size: self.tokens.len(),
            })
        }
    }

    /// Short stable hash of the symbol list and EOS position, used to tie scorers to vocabularies.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.tokens {
            hasher.update(t.as_bytes());
            hasher.update([0x1f]);
        }
        hasher.update(self.eos.to_le_bytes());
        hex::encode(&hasher.finalize()[..8])
    }
}

/// A prompt plus a partially decoded response.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Context {
    pub prompt: Vec<Token>,
    pub prefix: Vec<Token>,
}

impl Context {
    pub fn new(prompt: Vec<Token>, prefix: Vec<Token>) -> Self {
        Context { prompt, prefix }
    }

    pub fn root(prompt: &[Token]) -> Self {
        Context {
            prompt: prompt.to_vec(),
            prefix: Vec::new(),
        }
    }

    pub fn child(&self, token: Token) -> Self {
        let mut next = self.clone();
        next.prefix.push(token);
        next
    }

    pub fn extended(&self, tokens: &[Token]) -> Self {
        let mut next = self.clone();
        next.prefix.extend_from_slice(tokens);
        next
    }

    pub fn is_terminated(&self, eos: Token) -> bool {
        self.prefix.last() == Some(&eos)
    }

    pub fn len(&self) -> usize {
        self.prefix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prefix.is_empty()
    }

    /// The context with its last prefix token removed.
    pub fn parent(&self) -> Option<Context> {
        if self.prefix.is_empty() {
            return None;
        }
        let mut p = self.clone();
        p.prefix.pop();
        Some(p)
    }

    /// Every prefix of the response from length 1 through the full length.
    pub fn prefixes<'a>(
        prompt: &'a [Token],
        response: &'a [Token],
    ) -> impl Iterator<Item = Context> + 'a {
        (1..=response.len()).map(move |t| Context::new(prompt.to_vec(), response[..t].to_vec()))
    }

    /// Canonical key: comma-joined prefix indices, preceded by `prompt|` when the
    /// prompt is nonempty.
    pub fn key(&self) -> String {
        let join = |v: &[Token]| {
            v.iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        if self.prompt.is_empty() {
            join(&self.prefix)
        } else {
            format!("{}|{}", join(&self.prompt), join(&self.prefix))
        }
    }

    pub fn from_key(key: &str) -> Result<Self> {
        let parse = |s: &str| -> Result<Vec<Token>> {
            if s.is_empty() {
                return Ok(Vec::new());
            }
            s.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<Token>()
                        .map_err(|e| Error::parse("context key", format!("{key:?}: {e}")))
                })
                .collect()
        };
        match key.split_once('|') {
            Some((prompt, prefix)) => Ok(Context::new(parse(prompt)?, parse(prefix)?)),
            None => Ok(Context::new(Vec::new(), parse(key)?)),
        }
    }
}

impl fmt::Display for Context {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.key())
    }
}

/// Distribution μ over training or evaluation prompts.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptSet {
    prompts: Vec<Vec<Token>>,
    weights: Vec<f64>,
}

impl PromptSet {
    pub fn new(prompts: Vec<Vec<Token>>, weights: Option<Vec<f64>>) -> Result<Self> {
        if prompts.is_empty() {
            return Err(Error::Empty("prompt set".into()));
        }
        let weights = match weights {
            None => vec![1.0 / prompts.len() as f64; prompts.len()],
            Some(w) => {
                if w.len() != prompts.len() {
                    return Err(Error::InvalidConfig(
                        "one weight per prompt required".into(),
                    ));
                }
                let total: f64 = w.iter().sum();
                if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidConfig(format!(
                        "prompt weights must be a distribution, sum = {total}"
                    )));
                }
                w
            }
        };
        Ok(PromptSet { prompts, weights })
    }

    /// The single empty prompt.
    pub fn empty_prompt() -> Self {
        PromptSet {
            prompts: vec![Vec::new()],
            weights: vec![1.0],
        }
    }

    pub fn prompts(&self) -> &[Vec<Token>] {
        &self.prompts
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[Token], f64)> {
        self.prompts
            .iter()
            .map(Vec::as_slice)
            .zip(self.weights.iter().copied())
    }

    pub fn sample(&self, stream: &RandomStream) -> &[Token] {
        if self.prompts.len() == 1 {
            return &self.prompts[0];
        }
        let u = stream.prompt_uniform();
        let mut cumulative = 0.0;
        for (p, w) in self.iter() {
            cumulative += w;
            if u < cumulative {
                return p;
            }
        }
        self.prompts.last().unwrap()
    }
}

/// Add-α smoothed n-gram counts keyed by the (possibly start-truncated) history.
#[derive(Clone, Debug, PartialEq)]
pub struct NGramTable {
    pub order: usize,
    pub alpha: f64,
    pub counts: HashMap<Vec<Token>, Vec<f64>>,
    /// Next-token counts over every corpus position; the fallback for unseen histories when α = 0.
    pub unigram: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelKind {
    /// Context-free categorical distribution.
    Categorical {
        log_probs: Vec<f64>,
    },
    NGram(NGramTable),
    /// Explicit logits for histories of up to `order` tokens; the longest matching
    /// suffix wins, `default` otherwise.
    Logits {
        order: usize,
        rows: HashMap<Vec<Token>, Vec<f64>>,
        default: Vec<f64>,
    },
}

/// A frozen reference model π_ref with a forced-EOS horizon: at prefix length
/// `t_max - 1` the next token is EOS with probability one.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseModel {
    vocab: Vocab,
    kind: ModelKind,
    t_max: usize,
}

fn history(ctx: &Context, order: usize) -> Vec<Token> {
    let full: Vec<Token> = ctx.prompt.iter().chain(&ctx.prefix).copied().collect();
    full[full.len().saturating_sub(order)..].to_vec()
}

impl BaseModel {
    pub fn new(vocab: Vocab, kind: ModelKind, t_max: usize) -> Result<Self> {
        if t_max == 0 {
            return Err(Error::InvalidConfig("t_max must be at least 1".into()));
        }
        let n = vocab.len();
        let check_row = |row: &[f64], what: &str| -> Result<()> {
            if row.len() != n {
                return Err(Error::InvalidConfig(format!(
                    "{what} has {} entries, vocabulary has {n}",
                    row.len()
                )));
            }
            Ok(())
        };
        match &kind {
            ModelKind::Categorical { log_probs } => {
                check_row(log_probs, "categorical table")?;
                Distribution::from_logits(log_probs)?;
            }
            ModelKind::NGram(t) => {
                if t.order == 0 || !(t.alpha >= 0.0 && t.alpha.is_finite()) {
                    return Err(Error::InvalidConfig(
                        "n-gram needs order >= 1 and finite alpha >= 0".into(),
                    ));
                }
                check_row(&t.unigram, "unigram counts")?;
                for row in t.counts.values() {
                    check_row(row, "n-gram counts")?;
                }
                if t.alpha == 0.0 && t.unigram.iter().sum::<f64>() <= 0.0 {
                    return Err(Error::InvalidConfig(
                        "n-gram with alpha = 0 has no counts".into(),
                    ));
                }
            }
            ModelKind::Logits { rows, default, .. } => {
                check_row(default, "default logits")?;
                for row in rows.values() {
                    check_row(row, "logit row")?;
                }
            }
        }
        Ok(BaseModel { vocab, kind, t_max })
    }

    /// Context-free categorical model from probabilities.
    pub fn categorical(vocab: Vocab, probs: &[f64], t_max: usize) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "categorical probabilities must sum to 1, got {total}"
            )));
        }
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        BaseModel::new(vocab, ModelKind::Categorical { log_probs }, t_max)
    }

    /// The canonical three-symbol fixture: `{a, b, EOS}` with probabilities
    /// `(0.5, 0.3, 0.2)` at every context and `t_max = 3`.
    pub fn tiny2() -> Self {
        Self::tiny(&[0.5, 0.3, 0.2])
    }

    /// Context-free model on the tiny-2 vocabulary with other probabilities.
    pub fn tiny(probs: &[f64]) -> Self {
        let vocab = Vocab::new(["a", "b", "EOS"], "EOS").expect("static vocabulary");
        BaseModel::categorical(vocab, probs, 3).expect("static fixture")
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn eos(&self) -> Token {
        self.vocab.eos()
    }

    fn validate(&self, ctx: &Context) -> Result<()> {
        for &t in ctx.prompt.iter().chain(&ctx.prefix) {
            self.vocab.check(t)?;
        }
        let eos = self.eos();
        if ctx.prompt.contains(&eos) {
            return Err(Error::Precondition(format!("prompt of {ctx} contains EOS")));
        }
        if let Some(pos) = ctx.prefix.iter().position(|&t| t == eos) {
            if pos + 1 != ctx.prefix.len() {
                return Err(Error::Precondition(format!("{ctx} has tokens after EOS")));
            }
        }
        Ok(())
    }

    /// π_ref(· | ctx).
    pub fn next_token_dist(&self, ctx: &Context) -> Result<Distribution> {
        self.validate(ctx)?;
        if ctx.is_terminated(self.eos()) {
            return Err(Error::Precondition(format!("{ctx} is terminated")));
        }
        if ctx.len() >= self.t_max {
            return Err(Error::Precondition(format!(
                "{ctx} is at or beyond t_max = {}",
                self.t_max
            )));
        }
        if ctx.len() + 1 == self.t_max {
            return Ok(Distribution::point_mass(self.vocab.len(), self.eos()));
        }
        match &self.kind {
            ModelKind::Categorical { log_probs } => Distribution::from_logits(log_probs),
            ModelKind::NGram(table) => {
                let hist = history(ctx, table.order);
                let counts = match table.counts.get(&hist) {
                    Some(c) => c,
                    None if table.alpha > 0.0 => {
                        return Ok(Distribution::uniform(self.vocab.len()));
                    }
                    None => &table.unigram,
                };
                let logits: Vec<f64> = counts.iter().map(|c| (c + table.alpha).ln()).collect();
                Distribution::from_logits(&logits)
            }
            ModelKind::Logits {
                order,
                rows,
                default,
            } => {
                let hist = history(ctx, *order);
                let row = (0..=hist.len())
                    .find_map(|start| rows.get(&hist[start..]))
                    .unwrap_or(default);
                Distribution::from_logits(row)
            }
        }
    }

    /// Samples up to `max_tokens` tokens continuing `ctx`, stopping at EOS. Token `i`
    /// uses the uniform at `(lane, ctx.len() + i)`.
    pub fn sample_continuation(
        &self,
        ctx: &Context,
        stream: &RandomStream,
        lane: u64,
        max_tokens: usize,
    ) -> Result<Vec<Token>> {
        let mut current = ctx.clone();
        let mut out = Vec::new();
        while out.len() < max_tokens && !current.is_terminated(self.eos()) {
            let dist = self.next_token_dist(&current)?;
            let z = dist.sample_with(stream.uniform(lane, current.len()));
            out.push(z);
            current.prefix.push(z);
        }
        Ok(out)
    }

    /// Autoregressive rollout from the prompt; ends with exactly one EOS.
    pub fn sample_sequence(&self, prompt: &[Token], stream: &RandomStream) -> Result<Vec<Token>> {
        self.sample_continuation(&Context::root(prompt), stream, 0, usize::MAX)
    }

    /// log π_ref(response | prompt) in nats; `-inf` if some step has probability zero.
    pub fn sequence_logprob(&self, prompt: &[Token], response: &[Token]) -> Result<f64> {
        if response.last() != Some(&self.eos()) {
            return Err(Error::Precondition("response must end in EOS".into()));
        }
        let mut ctx = Context::root(prompt);
        let mut total = 0.0;
        for &z in response {
            self.vocab.check(z)?;
            if ctx.len() >= self.t_max {
                return Ok(f64::NEG_INFINITY);
            }
            let lp = self.next_token_dist(&ctx)?.log_prob(z);
            if lp == f64::NEG_INFINITY {
                return Ok(f64::NEG_INFINITY);
            }
            total += lp;
            ctx.prefix.push(z);
        }
        Ok(total)
    }

    /// Every complete response with positive probability, with that probability, in
    /// depth-first token order.
    pub fn enumerate_responses(&self, prompt: &[Token]) -> Result<Vec<(Vec<Token>, f64)>> {
        let mut out = Vec::new();
        let mut visited = 0usize;
        self.enumerate_from(&Context::root(prompt), 1.0, &mut out, &mut visited)?;
        Ok(out)
    }

    fn enumerate_from(
        &self,
        ctx: &Context,
        prob: f64,
        out: &mut Vec<(Vec<Token>, f64)>,
        visited: &mut usize,
    ) -> Result<()> {
        *visited += 1;
        if *visited > ENUMERATION_LIMIT {
            return Err(Error::TooLarge {
                limit: ENUMERATION_LIMIT,
            });
        }
        if ctx.is_terminated(self.eos()) {
            out.push((ctx.prefix.clone(), prob));
            return Ok(());
        }
        let dist = self.next_token_dist(ctx)?;
        for (z, &p) in dist.probs().iter().enumerate() {
            if p > 0.0 {
                self.enumerate_from(&ctx.child(z), prob * p, out, visited)?;
            }
        }
        Ok(())
    }

    /// All reachable contexts of the prompt's decoding tree, grouped by prefix length.
    pub fn enumerate_contexts(&self, prompt: &[Token]) -> Result<Vec<Vec<Context>>> {
        let mut levels = vec![vec![Context::root(prompt)]];
        let mut total = 1usize;
        loop {
            let mut next = Vec::new();
            for ctx in levels.last().unwrap() {
                if ctx.is_terminated(self.eos()) {
                    continue;
                }
                let dist = self.next_token_dist(ctx)?;
                for (z, &p) in dist.probs().iter().enumerate() {
                    if p > 0.0 {
                        next.push(ctx.child(z));
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            total += next.len();
            if total > ENUMERATION_LIMIT {
                return Err(Error::TooLarge {
                    limit: ENUMERATION_LIMIT,
                });
            }
            levels.push(next);
        }
        Ok(levels)
    }
}

/// Fits an add-α n-gram model of the given order (history length) on token sequences.
///
/// Each corpus sequence is treated as a complete response: EOS is appended when
/// missing. Conditional probabilities are `(count + α) / (total + α·|V|)`.
pub fn fit_ngram(
    vocab: &Vocab,
    corpus: &[Vec<Token>],
    order: usize,
    alpha: f64,
    t_max: usize,
) -> Result<BaseModel> {
    if order == 0 {
        return Err(Error::InvalidConfig("n-gram order must be >= 1".into()));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "smoothing must be finite and >= 0, got {alpha}"
        )));
    }
    if corpus.iter().all(Vec::is_empty) && alpha == 0.0 {
        return Err(Error::Empty(
            "corpus is empty and alpha = 0 leaves the distribution undefined".into(),
        ));
    }
    let n = vocab.len();
    let eos = vocab.eos();
    let mut counts: HashMap<Vec<Token>, Vec<f64>> = HashMap::new();
    let mut unigram = vec![0.0; n];
    for seq in corpus {
        if seq.is_empty() {
            continue;
        }
        for &t in seq {
            vocab.check(t)?;
        }
        let mut seq = seq.clone();
        if let Some(pos) = seq.iter().position(|&t| t == eos) {
            if pos + 1 != seq.len() {
                return Err(Error::Precondition(
                    "corpus sequence has tokens after EOS".into(),
                ));
            }
        } else {
            seq.push(eos);
        }
        for i in 0..seq.len() {
            let hist = seq[i.saturating_sub(order)..i].to_vec();
            counts.entry(hist).or_insert_with(|| vec![0.0; n])[seq[i]] += 1.0;
            unigram[seq[i]] += 1.0;
        }
    }
    let table = NGramTable {
        order,
        alpha,
        counts,
        unigram,
    };
    BaseModel::new(vocab.clone(), ModelKind::NGram(table), t_max)
}

/// Reads a whitespace-tokenized corpus, one sequence per line; blank lines are skipped.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
        .filter(|l| !l.is_empty())
        .collect())
}

#[derive(Serialize, Deserialize)]
struct TableRow {
    history: Vec<String>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    vocab: Vec<String>,
    eos: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    order: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    counts: Option<Vec<TableRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    unigram: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    logits: Option<Vec<TableRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    default_logits: Option<Vec<f64>>,
    t_max: usize,
}

fn rows_to_file(vocab: &Vocab, rows: &HashMap<Vec<Token>, Vec<f64>>) -> Vec<TableRow> {
    let mut sorted: Vec<_> = rows.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    sorted
        .into_iter()
        .map(|(h, v)| TableRow {
            history: vocab.decode(h),
            values: v.clone(),
        })
        .collect()
}

fn rows_from_file(vocab: &Vocab, rows: Vec<TableRow>) -> Result<HashMap<Vec<Token>, Vec<f64>>> {
    rows.into_iter()
        .map(|r| Ok((vocab.encode(&r.history)?, r.values)))
        .collect()
}

impl BaseModel {
    pub fn to_json(&self) -> Result<String> {
        let mut file = ModelFile {
            vocab: self.vocab.symbols().to_vec(),
            eos: self.vocab.symbol(self.eos()).to_string(),
            kind: String::new(),
            order: None,
            alpha: None,
            probs: None,
            counts: None,
            unigram: None,
            logits: None,
            default_logits: None,
            t_max: self.t_max,
        };
        match &self.kind {
            ModelKind::Categorical { log_probs } => {
                file.kind = "categorical".into();
                file.probs = Some(log_probs.iter().map(|l| l.exp()).collect());
            }
            ModelKind::NGram(t) => {
                file.kind = "ngram".into();
                file.order = Some(t.order);
                file.alpha = Some(t.alpha);
                file.counts = Some(rows_to_file(&self.vocab, &t.counts));
                file.unigram = Some(t.unigram.clone());
            }
            ModelKind::Logits {
                order,
                rows,
                default,
            } => {
                file.kind = "logits".into();
                file.order = Some(*order);
                file.logits = Some(rows_to_file(&self.vocab, rows));
                file.default_logits = Some(default.clone());
            }
        }
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        let vocab = Vocab::new(file.vocab, &file.eos)?;
        let missing = |field: &str| {
            Error::parse(
                "model checkpoint",
                format!("{} model needs `{field}`", file.kind),
            )
        };
        let kind = match file.kind.as_str() {
            "categorical" => {
                let probs = file.probs.ok_or_else(|| missing("probs"))?;
                return BaseModel::categorical(vocab, &probs, file.t_max);
            }
            "ngram" => ModelKind::NGram(NGramTable {
                order: file.order.ok_or_else(|| missing("order"))?,
                alpha: file.alpha.unwrap_or(0.0),
                counts: rows_from_file(&vocab, file.counts.ok_or_else(|| missing("counts"))?)?,
                unigram: file.unigram.ok_or_else(|| missing("unigram"))?,
            }),
            "logits" => ModelKind::Logits {
                order: file.order.ok_or_else(|| missing("order"))?,
                rows: rows_from_file(&vocab, file.logits.unwrap_or_default())?,
                default: file
                    .default_logits
                    .ok_or_else(|| missing("default_logits"))?,
            },
            other => {
                return Err(Error::parse(
                    "model checkpoint",
                    format!("unknown kind {other:?}"),
                ))
            }
        };
        BaseModel::new(vocab, kind, file.t_max)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_json()?).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn abc() -> Vocab {
        Vocab::new(["a", "b", "EOS"], "EOS").unwrap()
    }

    #[test]
    fn vocab_invariants() {
        assert!(Vocab::new(["a"], "a").is_err());
        assert!(Vocab::new(["a", "a", "EOS"], "EOS").is_err());
        assert!(Vocab::new(["a", "b"], "EOS").is_err());
        let v = abc();
        assert_eq!(v.eos(), 2);
        assert_eq!(v.encode(&["b", "a"]).unwrap(), vec![1, 0]);
        assert!(matches!(v.token("z"), Err(Error::UnknownSymbol(_))));
        assert_eq!(v.fingerprint(), abc().fingerprint());
        assert_ne!(
            v.fingerprint(),
            Vocab::new(["b", "a", "EOS"], "EOS").unwrap().fingerprint()
        );
    }

    #[test]
    fn context_keys_round_trip() {
        for ctx in [
            Context::new(vec![], vec![]),
            Context::new(vec![], vec![0, 1, 2]),
            Context::new(vec![1], vec![]),
            Context::new(vec![1, 0], vec![2]),
        ] {
            assert_eq!(Context::from_key(&ctx.key()).unwrap(), ctx);
        }
        assert_eq!(Context::new(vec![], vec![0, 2]).key(), "0,2");
        assert!(Context::from_key("0,x").is_err());
    }

    #[test]
    fn uniform_model_is_uniform() {
        let m = BaseModel::categorical(abc(), &[1.0 / 3.0; 3], 4).unwrap();
        for prefix in [vec![], vec![0], vec![0, 1]] {
            let d = m.next_token_dist(&Context::new(vec![], prefix)).unwrap();
            for p in d.probs() {
                assert!((p - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn horizon_forces_eos() {
        let m = BaseModel::tiny2();
        let d = m
            .next_token_dist(&Context::new(vec![], vec![0, 1]))
            .unwrap();
        assert_eq!(d.probs(), &[0.0, 0.0, 1.0]);
        assert!(m
            .next_token_dist(&Context::new(vec![], vec![0, 1, 0]))
            .is_err());
    }

    #[test]
    fn next_token_dist_errors() {
        let m = BaseModel::tiny2();
        assert!(matches!(
            m.next_token_dist(&Context::new(vec![], vec![0, 2])),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            m.next_token_dist(&Context::new(vec![], vec![7])),
            Err(Error::UnknownToken { index: 7, .. })
        ));
        assert!(m.next_token_dist(&Context::new(vec![2], vec![])).is_err());
    }

    #[test]
    fn bigram_count_ratios() {
        let v = abc();
        // "ab ab": two sequences a b
        let corpus = vec![vec![0, 1], vec![0, 1]];
        let m = fit_ngram(&v, &corpus, 1, 0.0, 5).unwrap();
        let d = m.next_token_dist(&Context::new(vec![], vec![0])).unwrap();
        assert_eq!(d.prob(1), 1.0);
        // "aab": P(a|a) = P(b|a) = 1/2
        let m = fit_ngram(&v, &[vec![0, 0, 1]], 1, 0.0, 5).unwrap();
        let d = m.next_token_dist(&Context::new(vec![], vec![0])).unwrap();
        assert!((d.prob(0) - 0.5).abs() < 1e-15);
        assert!((d.prob(1) - 0.5).abs() < 1e-15);
        assert_eq!(d.prob(2), 0.0);
    }

    #[test]
    fn smoothing_limit_is_uniform() {
        let m = fit_ngram(&abc(), &[vec![0, 0, 1]], 1, 1e6, 5).unwrap();
        for prefix in [vec![], vec![0], vec![1], vec![0, 0]] {
            let d = m.next_token_dist(&Context::new(vec![], prefix)).unwrap();
            for p in d.probs() {
                assert!((p - 1.0 / 3.0).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn smoothing_formula() {
        // counts after "a" in "aab": a:1, b:1, EOS:0; alpha = 0.5 -> (c + .5) / (2 + 1.5)
        let m = fit_ngram(&abc(), &[vec![0, 0, 1]], 1, 0.5, 5).unwrap();
        let d = m.next_token_dist(&Context::new(vec![], vec![0])).unwrap();
        assert!((d.prob(0) - 1.5 / 3.5).abs() < 1e-15);
        assert!((d.prob(2) - 0.5 / 3.5).abs() < 1e-15);
    }

    #[test]
    fn single_sequence_corpus_is_greedy_path() {
        let v = Vocab::new(["a", "b", "c", "EOS"], "EOS").unwrap();
        let seq = vec![0, 2, 1, 3];
        let m = fit_ngram(&v, std::slice::from_ref(&seq), 2, 0.0, 6).unwrap();
        let mut ctx = Context::root(&[]);
        while !ctx.is_terminated(v.eos()) {
            let d = m.next_token_dist(&ctx).unwrap();
            assert_eq!(d.prob(d.argmax()), 1.0);
            ctx = ctx.child(d.argmax());
        }
        assert_eq!(ctx.prefix, seq);
    }

    #[test]
    fn empty_corpus_without_smoothing_fails() {
        assert!(matches!(
            fit_ngram(&abc(), &[], 1, 0.0, 3),
            Err(Error::Empty(_))
        ));
        assert!(fit_ngram(&abc(), &[], 1, 1.0, 3).is_ok());
        assert!(fit_ngram(&abc(), &[vec![0]], 0, 1.0, 3).is_err());
    }

    #[test]
    fn unseen_history_backs_off_to_unigram() {
        let m = fit_ngram(&abc(), &[vec![0, 0]], 1, 0.0, 5).unwrap();
        // history "b" never occurs; unigram counts: a:2, EOS:1
        let d = m.next_token_dist(&Context::new(vec![1], vec![])).unwrap();
        assert!((d.prob(0) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_model_emits_eos() {
        let m = BaseModel::categorical(abc(), &[0.0, 0.0, 1.0], 5).unwrap();
        assert_eq!(
            m.sample_sequence(&[], &RandomStream::new(3)).unwrap(),
            vec![2]
        );
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = BaseModel::tiny2();
        for seed in 0..50 {
            let s = RandomStream::new(seed);
            assert_eq!(
                m.sample_sequence(&[], &s).unwrap(),
                m.sample_sequence(&[], &s).unwrap()
            );
        }
    }

    #[test]
    fn first_token_frequencies_match() {
        let m = BaseModel::tiny2();
        let n = 100_000;
        let master = RandomStream::new(11);
        let mut counts = [0usize; 3];
        for i in 0..n {
            let y = m.sample_sequence(&[], &master.child(i)).unwrap();
            counts[y[0]] += 1;
        }
        for (c, p) in counts.iter().zip([0.5, 0.3, 0.2]) {
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!((*c as f64 / n as f64 - p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn sequence_logprob_examples() {
        let uniform = BaseModel::categorical(abc(), &[1.0 / 3.0; 3], 4).unwrap();
        let lp = uniform.sequence_logprob(&[], &[0, 2]).unwrap();
        assert!((lp - 2.0 * (1.0f64 / 3.0).ln()).abs() < 1e-12);

        let m = BaseModel::tiny2();
        let lp = m.sequence_logprob(&[], &[0, 2]).unwrap();
        assert!((lp - (0.5f64.ln() + 0.2f64.ln())).abs() < 1e-12);

        // non-EOS token at the forced horizon
        assert_eq!(
            m.sequence_logprob(&[], &[0, 0, 0, 2]).unwrap(),
            f64::NEG_INFINITY
        );
        let zero = BaseModel::categorical(abc(), &[0.0, 0.5, 0.5], 4).unwrap();
        assert_eq!(
            zero.sequence_logprob(&[], &[0, 2]).unwrap(),
            f64::NEG_INFINITY
        );
        assert!(m.sequence_logprob(&[], &[0, 1]).is_err());
    }

    #[test]
    fn tiny2_enumeration() {
        let m = BaseModel::tiny2();
        let seqs = m.enumerate_responses(&[]).unwrap();
        assert_eq!(seqs.len(), 7);
        let total: f64 = seqs.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let levels = m.enumerate_contexts(&[]).unwrap();
        assert_eq!(
            levels.iter().map(Vec::len).collect::<Vec<_>>(),
            vec![1, 3, 6, 4]
        );
    }

    #[test]
    fn json_round_trip() {
        let m = BaseModel::tiny2();
        let back = BaseModel::from_json(&m.to_json().unwrap()).unwrap();
        let ctx = Context::root(&[]);
        assert!(
            back.next_token_dist(&ctx)
                .unwrap()
                .max_abs_diff(&m.next_token_dist(&ctx).unwrap())
                < 1e-15
        );

        let ng = fit_ngram(&abc(), &[vec![0, 1, 0], vec![1, 1]], 2, 0.25, 5).unwrap();
        assert_eq!(BaseModel::from_json(&ng.to_json().unwrap()).unwrap(), ng);
    }

    #[test]
    fn logit_table_longest_suffix() {
        let mut rows = HashMap::new();
        rows.insert(vec![0], vec![0.0, f64::NEG_INFINITY, 0.0]);
        rows.insert(vec![1, 0], vec![f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY]);
        let m = BaseModel::new(
            abc(),
            ModelKind::Logits {
                order: 2,
                rows,
                default: vec![0.0, 0.0, 0.0],
            },
            6,
        )
        .unwrap();
        let d = |prefix: Vec<Token>| m.next_token_dist(&Context::new(vec![], prefix)).unwrap();
        assert_eq!(d(vec![1, 0]).prob(1), 1.0);
        assert_eq!(d(vec![0, 0]).prob(1), 0.0);
        assert!((d(vec![1]).prob(1) - 1.0 / 3.0).abs() < 1e-15);
    }

    fn ngram_fixture() -> BaseModel {
        let v = Vocab::new(["a", "b", "c", "EOS"], "EOS").unwrap();
        let corpus = vec![vec![0, 1, 2], vec![0, 0, 1], vec![2, 1], vec![1, 2, 0, 0]];
        fit_ngram(&v, &corpus, 1, 0.5, 5).unwrap()
    }

    #[test]
    fn enumeration_mass_is_one() {
        for m in [BaseModel::tiny2(), ngram_fixture()] {
            let total: f64 = m
                .enumerate_responses(&[])
                .unwrap()
                .iter()
                .map(|(_, p)| p)
                .sum();
            assert!((total - 1.0).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn reachable_dists_normalize(seed in any::<u64>()) {
            let m = ngram_fixture();
            let y = m.sample_sequence(&[], &RandomStream::new(seed)).unwrap();
            prop_assert_eq!(y.iter().filter(|&&t| t == m.eos()).count(), 1);
            prop_assert!(y.len() <= m.t_max());
            for ctx in Context::prefixes(&[], &y[..y.len() - 1]).chain(std::iter::once(Context::root(&[]))) {
                let d = m.next_token_dist(&ctx).unwrap();
                prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            prop_assert!(m.sequence_logprob(&[], &y).unwrap().is_finite());
        }
    }
}
