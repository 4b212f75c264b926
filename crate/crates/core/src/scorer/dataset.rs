use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::RewardFn;
use crate::seqmodel::{BaseModel, PromptSet, Token, Vocab};
use crate::stream::RandomStream;

/// Which policy generated a rollout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Base,
    External,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub prompt: Vec<Token>,
    pub response: Vec<Token>,
    pub reward: f64,
    pub policy: Provenance,
}

#[derive(Serialize, Deserialize)]
struct RolloutLine {
    prompt: Vec<String>,
    response: Vec<String>,
    reward: f64,
    #[serde(default = "default_policy")]
    policy: Provenance,
}

fn default_policy() -> Provenance {
    Provenance::Base
}

/// Complete responses with their terminal rewards.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutDataset {
    records: Vec<Rollout>,
}

impl RolloutDataset {
    pub fn new(records: Vec<Rollout>, eos: Token) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if r.response.last() != Some(&eos) || r.response[..r.response.len() - 1].contains(&eos)
            {
                return Err(Error::Precondition(format!(
                    "rollout {i} must end with its only EOS"
                )));
            }
            if !r.reward.is_finite() {
                return Err(Error::Precondition(format!(
                    "rollout {i} has non-finite reward"
                )));
            }
        }
        Ok(RolloutDataset { records })
    }

    /// `n` i.i.d. base-model rollouts; rollout `i` uses the stream's `i`-th child.
    pub fn sample_on_policy(
        model: &BaseModel,
        reward: &RewardFn,
        prompts: &PromptSet,
        n: usize,
        stream: &RandomStream,
    ) -> Result<Self> {
        let records = (0..n as u64)
            .map(|i| {
                let s = stream.child(i);
                let prompt = prompts.sample(&s).to_vec();
                let response = model.sample_sequence(&prompt, &s)?;
                let reward = reward.terminal_reward(&prompt, &response)?;
                Ok(Rollout {
                    prompt,
                    response,
                    reward,
                    policy: Provenance::Base,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RolloutDataset { records })
    }

    /// Every reachable complete response of every prompt, once each.
    pub fn enumerate(model: &BaseModel, reward: &RewardFn, prompts: &PromptSet) -> Result<Self> {
        let mut records = Vec::new();
        for (prompt, _) in prompts.iter() {
            for (response, _) in model.enumerate_responses(prompt)? {
                let r = reward.terminal_reward(prompt, &response)?;
                records.push(Rollout {
                    prompt: prompt.to_vec(),
                    response,
                    reward: r,
                    policy: Provenance::Base,
                });
            }
        }
        Ok(RolloutDataset { records })
    }

    pub fn records(&self) -> &[Rollout] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn read_jsonl(path: impl AsRef<Path>, vocab: &Vocab) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RolloutLine = serde_json::from_str(&line)
                .map_err(|e| Error::parse("rollout", format!("line {}: {e}", i + 1)))?;
            records.push(Rollout {
                prompt: vocab.encode(&rec.prompt)?,
                response: vocab.encode(&rec.response)?,
                reward: rec.reward,
                policy: rec.policy,
            });
        }
        Self::new(records, vocab.eos())
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>, vocab: &Vocab) -> Result<()> {
        let mut file = std::fs::File::create(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        for r in &self.records {
            let line = RolloutLine {
                prompt: vocab.decode(&r.prompt),
                response: vocab.decode(&r.response),
                reward: r.reward,
                policy: r.policy,
            };
            writeln!(file, "{}", serde_json::to_string(&line)?).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let m = BaseModel::tiny2();
        let r = RewardFn::length(m.vocab(), 3).unwrap();
        let d = RolloutDataset::sample_on_policy(
            &m,
            &r,
            &PromptSet::empty_prompt(),
            20,
            &RandomStream::new(3),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.jsonl");
        d.write_jsonl(&p, m.vocab()).unwrap();
        assert_eq!(RolloutDataset::read_jsonl(&p, m.vocab()).unwrap(), d);
    }

    #[test]
    fn enumerate_covers_support() {
        let m = BaseModel::tiny2();
        let r = RewardFn::length(m.vocab(), 3).unwrap();
        assert_eq!(
            RolloutDataset::enumerate(&m, &r, &PromptSet::empty_prompt())
                .unwrap()
                .len(),
            7
        );
    }

    #[test]
    fn rejects_unterminated() {
        let rec = Rollout {
            prompt: vec![],
            response: vec![0, 1],
            reward: 0.0,
            policy: Provenance::External,
        };
        assert!(RolloutDataset::new(vec![rec], 2).is_err());
    }
}
