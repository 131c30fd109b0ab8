//! Exact conditional policies over finite prompt and answer spaces.

mod checkpoint;
mod mixture;
mod ops;
mod space;
mod tabular;
mod token;

pub use checkpoint::{Checkpoint, CheckpointKind, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use mixture::{arithmetic_mixture, MixtureSampler};
pub use ops::{enumerate_answers, enumerate_answers_with_cap, geometric_mixture, kl_divergence, mean_kl_divergence};
pub use space::{enumeration_cap, AnswerId, AnswerSpace, PrefixId, PromptId, Vocab, DEFAULT_ENUM_CAP, ENUM_CAP_ENV};
pub use tabular::TabularPolicy;
pub use token::TokenPolicy;

use crate::error::{Result, SpinError};
use crate::rng::SpinRng;

/// A conditional distribution `π(y|x)` over a finite answer space.
///
/// Implementations are immutable and strictly positive on every answer.
pub trait Policy: Send + Sync {
    fn space(&self) -> &AnswerSpace;

    fn num_prompts(&self) -> usize;

    /// `log π(y|x)` in nats.
    fn log_prob(&self, x: PromptId, y: AnswerId) -> Result<f64>;

    /// Exact `π(·|x)` indexed by answer id.
    fn probabilities(&self, x: PromptId) -> Result<Vec<f64>>;

    fn sample(&self, x: PromptId, rng: &mut SpinRng) -> Result<AnswerId>;

    /// Exact `log π(·|x)` indexed by answer id.
    fn log_probabilities(&self, x: PromptId) -> Result<Vec<f64>> {
        Ok(self.probabilities(x)?.into_iter().map(f64::ln).collect())
    }

    /// Row-major `[prompt][answer]` table of log-probabilities.
    fn log_prob_table(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.num_prompts() * self.space().num_answers());
        for x in 0..self.num_prompts() {
            out.extend(self.log_probabilities(x)?);
        }
        Ok(out)
    }

    /// Exact sequence-level table of this policy.
    fn to_tabular(&self) -> Result<TabularPolicy> {
        TabularPolicy::from_logits(self.space().clone(), self.num_prompts(), self.log_prob_table()?)
    }

    fn check_prompt(&self, x: PromptId) -> Result<()> {
        if x >= self.num_prompts() {
            return Err(SpinError::Domain(format!(
                "prompt id {x} out of range ({} prompts)",
                self.num_prompts()
            )));
        }
        Ok(())
    }
}

/// A policy parameterized by a flat logit vector with analytic log-probability gradients.
pub trait Differentiable: Policy + Clone + Sized {
    fn params(&self) -> &[f64];

    /// Same structure, new logits.
    fn with_params(&self, params: Vec<f64>) -> Result<Self>;

    /// `∇_θ Σ_{x,y} coef[x][y] · log π_θ(y|x)` for a row-major `[prompt][answer]` coefficient table.
    fn log_prob_vjp(&self, coef: &[f64]) -> Vec<f64>;
}

/// Checks that two policies share prompt count and answer space.
pub fn check_compatible(p: &dyn Policy, q: &dyn Policy) -> Result<()> {
    if p.num_prompts() != q.num_prompts() || p.space() != q.space() {
        return Err(SpinError::Argument(format!(
            "policies over different spaces ({} prompts/{} answers vs {} prompts/{} answers)",
            p.num_prompts(),
            p.space().num_answers(),
            q.num_prompts(),
            q.space().num_answers()
        )));
    }
    Ok(())
}
