use std::sync::Arc;

use rand::Rng;

use super::space::{AnswerId, AnswerSpace, PromptId};
use super::{check_compatible, Policy};
use crate::error::{Result, SpinError};
use crate::numeric::{inverse_cdf, logsumexp};
use crate::rng::SpinRng;

/// Arithmetic mixture `Σ_i w_i π_i(·|x)`, sampled by first picking a component.
#[derive(Clone)]
pub struct MixtureSampler {
    components: Vec<Arc<dyn Policy>>,
    weights: Vec<f64>,
}

impl std::fmt::Debug for MixtureSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MixtureSampler")
            .field("components", &self.components.len())
            .field("weights", &self.weights)
            .finish()
    }
}

/// Mixture of `policies` with the given weights.
///
/// Weights must be nonnegative and sum to 1 within `1e-9`; they are then renormalized exactly.
pub fn arithmetic_mixture(policies: Vec<Arc<dyn Policy>>, weights: Vec<f64>) -> Result<MixtureSampler> {
    if policies.is_empty() {
        return Err(SpinError::config("weights", "mixture needs at least one component"));
    }
    if policies.len() != weights.len() {
        return Err(SpinError::config(
            "weights",
            format!("{} weights for {} components", weights.len(), policies.len()),
        ));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(SpinError::config("weights", format!("invalid weight {w}")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(SpinError::config(
            "weights",
            format!("weights sum to {total}, expected 1"),
        ));
    }
    for other in &policies[1..] {
        check_compatible(policies[0].as_ref(), other.as_ref())?;
    }
    let weights = weights.into_iter().map(|w| w / total).collect();
    Ok(MixtureSampler {
        components: policies,
        weights,
    })
}

impl MixtureSampler {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[Arc<dyn Policy>] {
        &self.components
    }

    /// Draws a component index, then an answer from that component.
    ///
    /// A single-component mixture consumes no randomness for the component
    /// choice, so its draws coincide with sampling the component directly.
    pub fn sample_with_component(&self, x: PromptId, rng: &mut SpinRng) -> Result<(usize, AnswerId)> {
        let i = if self.components.len() == 1 {
            0
        } else {
            inverse_cdf(&self.weights, rng.gen::<f64>())
        };
        let y = self.components[i].sample(x, rng)?;
        Ok((i, y))
    }

    /// Exact mixture probability `Σ_i w_i π_i(y|x)`.
    pub fn probability(&self, x: PromptId, y: AnswerId) -> Result<f64> {
        let mut total = 0.0;
        for (pi, w) in self.components.iter().zip(&self.weights) {
            total += w * pi.log_prob(x, y)?.exp();
        }
        Ok(total)
    }
}

impl Policy for MixtureSampler {
    fn space(&self) -> &AnswerSpace {
        self.components[0].space()
    }

    fn num_prompts(&self) -> usize {
        self.components[0].num_prompts()
    }

    fn log_prob(&self, x: PromptId, y: AnswerId) -> Result<f64> {
        let mut terms = Vec::with_capacity(self.components.len());
        for (pi, w) in self.components.iter().zip(&self.weights) {
            terms.push(w.ln() + pi.log_prob(x, y)?);
        }
        Ok(logsumexp(&terms))
    }

    fn probabilities(&self, x: PromptId) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.space().num_answers()];
        for (pi, w) in self.components.iter().zip(&self.weights) {
            for (dst, p) in out.iter_mut().zip(pi.probabilities(x)?) {
                *dst += w * p;
            }
        }
        Ok(out)
    }

    fn sample(&self, x: PromptId, rng: &mut SpinRng) -> Result<AnswerId> {
        Ok(self.sample_with_component(x, rng)?.1)
    }
}
