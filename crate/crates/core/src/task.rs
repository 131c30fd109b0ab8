//! Seeded synthetic preference tasks: a prompt distribution, a data policy that
//! produces winner answers, a base policy to start from, and an SFT sample.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpinError};
use crate::numeric::inverse_cdf;
use crate::policy::{
    enumeration_cap, mean_kl_divergence, AnswerId, AnswerSpace, Policy, PromptId, TabularPolicy, Vocab,
};
use crate::rng::{stream, substream};

/// Sizes and seed of a synthetic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub prompts: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub sft_size: usize,
    /// Standard deviation of the Gaussian logits of both policies.
    pub logit_scale: f64,
    /// Extrapolates the data policy's logits away from the base policy's.
    pub separation: f64,
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            prompts: 8,
            vocab_size: 4,
            max_len: 3,
            sft_size: 2000,
            logit_scale: 1.0,
            separation: 0.5,
            seed: 0,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.prompts == 0 {
            return Err(SpinError::config("task.prompts", "must be at least 1"));
        }
        if self.vocab_size < 2 {
            return Err(SpinError::config("task.vocab_size", "must be at least 2"));
        }
        if self.max_len == 0 {
            return Err(SpinError::config("task.max_len", "must be at least 1"));
        }
        if self.sft_size == 0 {
            return Err(SpinError::config("task.sft_size", "must be at least 1"));
        }
        if !(self.logit_scale >= 0.0 && self.logit_scale.is_finite()) {
            return Err(SpinError::config("task.logit_scale", "must be finite and nonnegative"));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(SpinError::config("task.separation", "must be finite and nonnegative"));
        }
        let space = self.space()?;
        space
            .check_enumerable(enumeration_cap())
            .map_err(|e| SpinError::config("task.max_len", e.to_string()))?;
        Ok(())
    }

    pub fn space(&self) -> Result<AnswerSpace> {
        let vocab =
            Vocab::with_size(self.vocab_size).map_err(|e| SpinError::config("task.vocab_size", e.to_string()))?;
        AnswerSpace::new(vocab, self.max_len).map_err(|e| SpinError::config("task.max_len", e.to_string()))
    }
}

/// `(prompt, winner)` pairs drawn from the data policy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SftDataset {
    pairs: Vec<(PromptId, AnswerId)>,
}

impl SftDataset {
    pub fn new(space: &AnswerSpace, num_prompts: usize, pairs: Vec<(PromptId, AnswerId)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(SpinError::Argument("SFT dataset is empty".into()));
        }
        for &(x, y) in &pairs {
            if x >= num_prompts {
                return Err(SpinError::Domain(format!("SFT prompt {x} out of range")));
            }
            space.check_answer(y)?;
        }
        Ok(SftDataset { pairs })
    }

    pub fn pairs(&self) -> &[(PromptId, AnswerId)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub spec: TaskSpec,
    pub space: AnswerSpace,
    /// Prompt distribution `q(x)`.
    pub prompt_weights: Vec<f64>,
    pub data: TabularPolicy,
    pub base: TabularPolicy,
    pub sft: SftDataset,
}

impl SyntheticTask {
    pub fn num_prompts(&self) -> usize {
        self.prompt_weights.len()
    }

    /// `Σ_x q(x) KL(π_data(·|x) ‖ π(·|x))`.
    pub fn kl_data_to(&self, pi: &dyn Policy) -> Result<f64> {
        mean_kl_divergence(&self.data, pi, &self.prompt_weights)
    }

    /// `Σ_x q(x) KL(π(·|x) ‖ π_base(·|x))`.
    pub fn kl_to_base(&self, pi: &dyn Policy) -> Result<f64> {
        mean_kl_divergence(pi, &self.base, &self.prompt_weights)
    }
}

/// Builds a task from `spec`; identical specs give identical tasks.
///
/// Base logits are `s·g_b`; data logits are `(1 + sep)·s·g_d - sep·s·g_b`
/// with independent standard normal `g_b`, `g_d`. Prompts are uniform.
pub fn generate_task(spec: &TaskSpec) -> Result<SyntheticTask> {
    spec.validate()?;
    let space = spec.space()?;
    let n = spec.prompts * space.num_answers();
    let mut rng = substream(spec.seed, stream::TASK);
    let mut normals = |k: usize| -> Vec<f64> {
        (0..k)
            .map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect()
    };
    let g_base = normals(n);
    let g_data = normals(n);
    let s = spec.logit_scale;
    let sep = spec.separation;
    let base_logits: Vec<f64> = g_base.iter().map(|g| s * g).collect();
    let data_logits: Vec<f64> = g_data
        .iter()
        .zip(&g_base)
        .map(|(d, b)| (1.0 + sep) * s * d - sep * s * b)
        .collect();
    let base = TabularPolicy::from_logits(space.clone(), spec.prompts, base_logits)?;
    let data = TabularPolicy::from_logits(space.clone(), spec.prompts, data_logits)?;
    let prompt_weights = vec![1.0 / spec.prompts as f64; spec.prompts];

    let rows: Vec<Vec<f64>> = (0..spec.prompts).map(|x| data.row(x).to_vec()).collect();
    let mut rng = substream(spec.seed, stream::SFT);
    let pairs = (0..spec.sft_size)
        .map(|_| {
            let x = inverse_cdf(&prompt_weights, rng.gen::<f64>());
            (x, inverse_cdf(&rows[x], rng.gen::<f64>()))
        })
        .collect();
    let sft = SftDataset::new(&space, spec.prompts, pairs)?;
    Ok(SyntheticTask {
        spec: spec.clone(),
        space,
        prompt_weights,
        data,
        base,
        sft,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let spec = TaskSpec {
            sft_size: 50,
            ..Default::default()
        };
        let a = generate_task(&spec).unwrap();
        let b = generate_task(&spec).unwrap();
        assert_eq!(a.data.logits(), b.data.logits());
        assert_eq!(a.base.logits(), b.base.logits());
        assert_eq!(a.sft, b.sft);
        let c = generate_task(&TaskSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.data.logits(), c.data.logits());
    }

    #[test]
    fn default_shape() {
        let t = generate_task(&TaskSpec::default()).unwrap();
        assert_eq!(t.space.num_answers(), 84);
        assert_eq!(t.num_prompts(), 8);
        assert_eq!(t.sft.len(), 2000);
        assert!((t.prompt_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_separation_fixture() {
        let spec = TaskSpec {
            prompts: 1,
            vocab_size: 8,
            max_len: 1,
            logit_scale: 0.1,
            separation: 0.0,
            sft_size: 1,
            seed: 0,
        };
        let t = generate_task(&spec).unwrap();
        let kl = t.kl_data_to(&t.base).unwrap();
        assert!(kl < 0.05, "{kl}");
        assert!((kl - ZERO_SEPARATION_KL).abs() < 1e-12, "{kl:.17e}");
    }

    const ZERO_SEPARATION_KL: f64 = 0.004803941563549852;

    #[test]
    fn validation_names_fields() {
        let e = generate_task(&TaskSpec {
            vocab_size: 1,
            ..Default::default()
        })
        .unwrap_err();
        assert!(matches!(e, SpinError::Config { ref field, .. } if field == "task.vocab_size"));
        let e = generate_task(&TaskSpec {
            max_len: 9,
            vocab_size: 4,
            ..Default::default()
        })
        .unwrap_err();
        assert!(matches!(e, SpinError::Config { ref field, .. } if field == "task.max_len"));
    }
}
