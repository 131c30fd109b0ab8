use rand::Rng;

use super::space::{enumeration_cap, AnswerId, AnswerSpace, PromptId};
use super::{Differentiable, Policy};
use crate::error::{Result, SpinError};
use crate::numeric::{inverse_cdf, log_softmax_in_place};
use crate::rng::SpinRng;

/// Softmax policy with one free logit per `(prompt, answer)`.
#[derive(Debug, Clone)]
pub struct TabularPolicy {
    space: AnswerSpace,
    num_prompts: usize,
    logits: Vec<f64>,
    log_probs: Vec<f64>,
    probs: Vec<f64>,
}

impl TabularPolicy {
    /// Builds the policy from row-major `[prompt][answer]` logits.
    pub fn from_logits(space: AnswerSpace, num_prompts: usize, logits: Vec<f64>) -> Result<Self> {
        space.check_enumerable(enumeration_cap())?;
        let n = space.num_answers();
        if num_prompts == 0 {
            return Err(SpinError::Argument("policy needs at least one prompt".into()));
        }
        if logits.len() != num_prompts * n {
            return Err(SpinError::Argument(format!(
                "expected {} logits, got {}",
                num_prompts * n,
                logits.len()
            )));
        }
        if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
            return Err(SpinError::Argument(format!("non-finite logit {bad}")));
        }
        let mut log_probs = logits.clone();
        for row in log_probs.chunks_mut(n) {
            log_softmax_in_place(row);
        }
        let probs = log_probs.iter().map(|v| v.exp()).collect();
        Ok(TabularPolicy {
            space,
            num_prompts,
            logits,
            log_probs,
            probs,
        })
    }

    pub fn uniform(space: AnswerSpace, num_prompts: usize) -> Result<Self> {
        let n = space.num_answers() * num_prompts;
        TabularPolicy::from_logits(space, num_prompts, vec![0.0; n])
    }

    /// Builds the policy from strictly positive per-prompt probability rows (renormalized).
    pub fn from_probabilities(space: AnswerSpace, rows: &[Vec<f64>]) -> Result<Self> {
        let mut logits = Vec::with_capacity(rows.len() * space.num_answers());
        for row in rows {
            if row.len() != space.num_answers() {
                return Err(SpinError::Argument(format!(
                    "probability row has {} entries, space has {}",
                    row.len(),
                    space.num_answers()
                )));
            }
            if let Some(bad) = row.iter().find(|&&p| !(p > 0.0 && p.is_finite())) {
                return Err(SpinError::Argument(format!(
                    "probabilities must be strictly positive, got {bad}"
                )));
            }
            logits.extend(row.iter().map(|p| p.ln()));
        }
        TabularPolicy::from_logits(space, rows.len(), logits)
    }

    /// Builds the policy from per-prompt log-probability rows (renormalized).
    pub fn from_log_probabilities(space: AnswerSpace, rows: Vec<Vec<f64>>) -> Result<Self> {
        let num_prompts = rows.len();
        TabularPolicy::from_logits(space, num_prompts, rows.into_iter().flatten().collect())
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// Cached probability row for prompt `x` (no enumeration cost).
    pub fn row(&self, x: PromptId) -> &[f64] {
        let n = self.space.num_answers();
        &self.probs[x * n..(x + 1) * n]
    }

    pub fn log_row(&self, x: PromptId) -> &[f64] {
        let n = self.space.num_answers();
        &self.log_probs[x * n..(x + 1) * n]
    }
}

impl Policy for TabularPolicy {
    fn space(&self) -> &AnswerSpace {
        &self.space
    }

    fn num_prompts(&self) -> usize {
        self.num_prompts
    }

    fn log_prob(&self, x: PromptId, y: AnswerId) -> Result<f64> {
        self.check_prompt(x)?;
        self.space.check_answer(y)?;
        Ok(self.log_probs[x * self.space.num_answers() + y])
    }

    fn probabilities(&self, x: PromptId) -> Result<Vec<f64>> {
        self.check_prompt(x)?;
        Ok(self.row(x).to_vec())
    }

    fn sample(&self, x: PromptId, rng: &mut SpinRng) -> Result<AnswerId> {
        self.check_prompt(x)?;
        Ok(inverse_cdf(self.row(x), rng.gen::<f64>()))
    }

    fn log_probabilities(&self, x: PromptId) -> Result<Vec<f64>> {
        self.check_prompt(x)?;
        Ok(self.log_row(x).to_vec())
    }

    fn log_prob_table(&self) -> Result<Vec<f64>> {
        Ok(self.log_probs.clone())
    }

    fn to_tabular(&self) -> Result<TabularPolicy> {
        Ok(self.clone())
    }
}

impl Differentiable for TabularPolicy {
    fn params(&self) -> &[f64] {
        &self.logits
    }

    fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        TabularPolicy::from_logits(self.space.clone(), self.num_prompts, params)
    }

    fn log_prob_vjp(&self, coef: &[f64]) -> Vec<f64> {
        let n = self.space.num_answers();
        assert_eq!(coef.len(), self.logits.len(), "coefficient table shape");
        let mut grad = vec![0.0; coef.len()];
        for x in 0..self.num_prompts {
            let c = &coef[x * n..(x + 1) * n];
            let total: f64 = c.iter().sum();
            if total == 0.0 && c.iter().all(|&v| v == 0.0) {
                continue;
            }
            let p = self.row(x);
            for y in 0..n {
                grad[x * n + y] = c[y] - total * p[y];
            }
        }
        grad
    }
}
