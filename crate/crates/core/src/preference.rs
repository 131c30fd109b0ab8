//! Bradley-Terry preferences, reward learning, and the exact correspondence
//! between a reward and the optimal KL-regularized policy.

use crate::error::{Result, SpinError};
use crate::numeric::{log_sigmoid, logsumexp};
use crate::policy::{
    check_compatible, kl_divergence, AnswerId, AnswerSpace, Checkpoint, CheckpointKind, Policy, PromptId, TabularPolicy,
};

pub use crate::numeric::sigmoid;

/// Reward table `r(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardFunction {
    space: AnswerSpace,
    num_prompts: usize,
    values: Vec<f64>,
}

impl RewardFunction {
    pub fn new(space: AnswerSpace, num_prompts: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_prompts * space.num_answers() {
            return Err(SpinError::Argument(format!(
                "expected {} reward values, got {}",
                num_prompts * space.num_answers(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(SpinError::Argument(format!("non-finite reward {v}")));
        }
        Ok(RewardFunction {
            space,
            num_prompts,
            values,
        })
    }

    pub fn zeros(space: AnswerSpace, num_prompts: usize) -> Self {
        let n = num_prompts * space.num_answers();
        RewardFunction {
            space,
            num_prompts,
            values: vec![0.0; n],
        }
    }

    pub fn space(&self) -> &AnswerSpace {
        &self.space
    }

    pub fn num_prompts(&self) -> usize {
        self.num_prompts
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: PromptId, y: AnswerId) -> Result<f64> {
        self.check(x, y)?;
        Ok(self.values[x * self.space.num_answers() + y])
    }

    pub fn row(&self, x: PromptId) -> &[f64] {
        let n = self.space.num_answers();
        &self.values[x * n..(x + 1) * n]
    }

    fn check(&self, x: PromptId, y: AnswerId) -> Result<()> {
        if x >= self.num_prompts {
            return Err(SpinError::Domain(format!("prompt id {x} out of range")));
        }
        self.space.check_answer(y)
    }

    fn check_policy(&self, pi: &dyn Policy) -> Result<()> {
        if pi.num_prompts() != self.num_prompts || pi.space() != &self.space {
            return Err(SpinError::Argument("reward and policy live on different spaces".into()));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: CheckpointKind::Reward,
            space: self.space.clone(),
            num_prompts: self.num_prompts,
            values: self.values.clone(),
            extra: Vec::new(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.kind != CheckpointKind::Reward {
            return Err(SpinError::Argument("checkpoint does not hold a reward table".into()));
        }
        RewardFunction::new(ck.space, ck.num_prompts, ck.values)
    }
}

/// Observed preference `winner ≻ loser` at `prompt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreferencePair {
    pub prompt: PromptId,
    pub winner: AnswerId,
    pub loser: AnswerId,
}

/// Per-prompt partition function `Z(x)` of the closed-form policy, kept in log space.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionReport {
    pub log_z: Vec<f64>,
}

impl PartitionReport {
    pub fn z(&self, x: PromptId) -> f64 {
        self.log_z[x].exp()
    }
}

/// `P(y ≻ y2 | x) = σ(r(x,y) - r(x,y2))`.
pub fn bt_prob(r: &RewardFunction, x: PromptId, y: AnswerId, y2: AnswerId) -> Result<f64> {
    Ok(sigmoid(r.get(x, y)? - r.get(x, y2)?))
}

/// Mean negative Bradley-Terry log-likelihood and its gradient w.r.t. the reward table.
pub fn reward_mle_loss(r: &RewardFunction, data: &[PreferencePair]) -> Result<(f64, Vec<f64>)> {
    if data.is_empty() {
        return Err(SpinError::Argument("reward_mle_loss needs at least one pair".into()));
    }
    let n = r.space.num_answers();
    let scale = 1.0 / data.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; r.values.len()];
    for pair in data {
        let margin = r.get(pair.prompt, pair.winner)? - r.get(pair.prompt, pair.loser)?;
        r.check(pair.prompt, pair.loser)?;
        loss -= log_sigmoid(margin);
        // d/dm [-log σ(m)] = -σ(-m)
        let g = -sigmoid(-margin) * scale;
        grad[pair.prompt * n + pair.winner] += g;
        grad[pair.prompt * n + pair.loser] -= g;
    }
    Ok((loss * scale, grad))
}

/// `π_r(y|x) = π_ref(y|x) exp(r(x,y)/β) / Z(x)` with `Z` by enumeration.
pub fn closed_form_policy(
    reference: &dyn Policy,
    r: &RewardFunction,
    beta: f64,
) -> Result<(TabularPolicy, PartitionReport)> {
    check_beta(beta)?;
    r.check_policy(reference)?;
    let log_ref = reference.log_prob_table()?;
    let logits: Vec<f64> = log_ref.iter().zip(&r.values).map(|(lr, rv)| lr + rv / beta).collect();
    let n = r.space.num_answers();
    let log_z = logits.chunks(n).map(logsumexp).collect();
    let policy = TabularPolicy::from_logits(r.space.clone(), r.num_prompts, logits)?;
    Ok((policy, PartitionReport { log_z }))
}

/// `β log(π(y|x) / π_ref(y|x))`, the reward implied by `π` up to the prompt constant `β log Z(x)`.
pub fn implied_reward(pi: &dyn Policy, reference: &dyn Policy, beta: f64, x: PromptId, y: AnswerId) -> Result<f64> {
    check_beta(beta)?;
    check_compatible(pi, reference)?;
    Ok(beta * (pi.log_prob(x, y)? - reference.log_prob(x, y)?))
}

/// [`implied_reward`] for every `(x, y)`.
pub fn implied_reward_table(pi: &dyn Policy, reference: &dyn Policy, beta: f64) -> Result<RewardFunction> {
    check_beta(beta)?;
    check_compatible(pi, reference)?;
    let a = pi.log_prob_table()?;
    let b = reference.log_prob_table()?;
    let values = a.iter().zip(&b).map(|(p, q)| beta * (p - q)).collect();
    RewardFunction::new(pi.space().clone(), pi.num_prompts(), values)
}

/// `E_x[ Σ_y π(y|x) r(x,y) - β KL(π(·|x) ‖ π_ref(·|x)) ]` under the prompt distribution `prompt_weights`.
pub fn kl_regularized_objective(
    pi: &dyn Policy,
    r: &RewardFunction,
    beta: f64,
    reference: &dyn Policy,
    prompt_weights: &[f64],
) -> Result<f64> {
    check_beta(beta)?;
    r.check_policy(pi)?;
    check_compatible(pi, reference)?;
    if prompt_weights.len() != r.num_prompts {
        return Err(SpinError::Argument(format!(
            "{} prompt weights for {} prompts",
            prompt_weights.len(),
            r.num_prompts
        )));
    }
    let mut total = 0.0;
    for (x, w) in prompt_weights.iter().enumerate() {
        let p = pi.probabilities(x)?;
        let expected: f64 = p.iter().zip(r.row(x)).map(|(a, b)| a * b).sum();
        total += w * (expected - beta * kl_divergence(pi, reference, x)?);
    }
    Ok(total)
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(SpinError::Argument(format!("beta must be positive, got {beta}")));
    }
    Ok(())
}
