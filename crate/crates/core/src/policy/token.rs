use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::space::{enumeration_cap, AnswerId, AnswerSpace, PrefixId, PromptId};
use super::{Differentiable, Policy};
use crate::error::{Result, SpinError};
use crate::numeric::{inverse_cdf, logsumexp};
use crate::rng::SpinRng;

/// Autoregressive policy `π(y|x) = ∏_k π(y^k | x, y^{<k}) · π(⊥ | x, y)`.
///
/// Logits are stored row-major as `[prompt][prefix][action]` where the last
/// action slot is the terminator. Entries for illegal actions (terminator at
/// the empty prefix, tokens at full length) are ignored and kept at zero.
#[derive(Debug, Clone)]
pub struct TokenPolicy {
    space: AnswerSpace,
    num_prompts: usize,
    logits: Vec<f64>,
    /// Conditional log-probabilities, `-inf` on illegal actions.
    cond: Vec<f64>,
}

impl TokenPolicy {
    pub fn from_logits(space: AnswerSpace, num_prompts: usize, mut logits: Vec<f64>) -> Result<Self> {
        let width = space.num_actions();
        let expected = num_prompts * space.num_prefixes() * width;
        if num_prompts == 0 {
            return Err(SpinError::Argument("policy needs at least one prompt".into()));
        }
        if logits.len() != expected {
            return Err(SpinError::Argument(format!(
                "expected {expected} token logits, got {}",
                logits.len()
            )));
        }
        let mut cond = vec![f64::NEG_INFINITY; expected];
        let mut scratch = Vec::with_capacity(width);
        for row in 0..num_prompts * space.num_prefixes() {
            let p = row % space.num_prefixes();
            let base = row * width;
            scratch.clear();
            for a in 0..width {
                if space.is_legal(p, a) {
                    let v = logits[base + a];
                    if !v.is_finite() {
                        return Err(SpinError::Argument(format!("non-finite logit {v}")));
                    }
                    scratch.push(v);
                } else {
                    logits[base + a] = 0.0;
                }
            }
            let lse = logsumexp(&scratch);
            for a in 0..width {
                if space.is_legal(p, a) {
                    cond[base + a] = logits[base + a] - lse;
                }
            }
        }
        Ok(TokenPolicy {
            space,
            num_prompts,
            logits,
            cond,
        })
    }

    pub fn uniform(space: AnswerSpace, num_prompts: usize) -> Result<Self> {
        let n = num_prompts * space.num_prefixes() * space.num_actions();
        TokenPolicy::from_logits(space, num_prompts, vec![0.0; n])
    }

    /// Gaussian logits with standard deviation `scale`.
    pub fn random(space: AnswerSpace, num_prompts: usize, scale: f64, rng: &mut SpinRng) -> Result<Self> {
        let n = num_prompts * space.num_prefixes() * space.num_actions();
        let logits = (0..n)
            .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect::<Vec<f64>>();
        TokenPolicy::from_logits(space, num_prompts, logits)
    }

    /// Exact autoregressive factorization of a sequence-level policy.
    ///
    /// Each conditional is the ratio of subtree masses, so the induced
    /// sequence distribution reproduces `policy` up to rounding.
    pub fn from_sequence_policy(policy: &dyn Policy) -> Result<Self> {
        let space = policy.space().clone();
        let num_prompts = policy.num_prompts();
        let np = space.num_prefixes();
        let width = space.num_actions();
        let term = space.terminator_action();
        let table = policy.log_prob_table()?;
        let na = space.num_answers();
        let mut logits = vec![0.0; num_prompts * np * width];
        let mut subtree = vec![f64::NEG_INFINITY; np];
        let mut parts = Vec::with_capacity(width);
        for x in 0..num_prompts {
            let log_p = &table[x * na..(x + 1) * na];
            // Children have larger ids than parents, so a reverse sweep sees them first.
            for p in (0..np).rev() {
                parts.clear();
                if let Some(y) = space.prefix_answer(p) {
                    parts.push(log_p[y]);
                }
                for t in 0..space.vocab_size() {
                    if let Some(c) = space.child(p, t) {
                        parts.push(subtree[c]);
                    }
                }
                subtree[p] = logsumexp(&parts);
            }
            for p in 0..np {
                let base = (x * np + p) * width;
                for t in 0..space.vocab_size() {
                    if let Some(c) = space.child(p, t) {
                        logits[base + t] = subtree[c] - subtree[p];
                    }
                }
                if let Some(y) = space.prefix_answer(p) {
                    logits[base + term] = log_p[y] - subtree[p];
                }
            }
        }
        TokenPolicy::from_logits(space, num_prompts, logits)
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    fn row_index(&self, x: PromptId, p: PrefixId) -> usize {
        (x * self.space.num_prefixes() + p) * self.space.num_actions()
    }

    /// Conditional log-probabilities over the next action at `(x, p)`; `-inf` where illegal.
    pub fn conditional_log_row(&self, x: PromptId, p: PrefixId) -> &[f64] {
        let i = self.row_index(x, p);
        &self.cond[i..i + self.space.num_actions()]
    }

    pub fn conditional_log_prob(&self, x: PromptId, p: PrefixId, action: usize) -> f64 {
        self.cond[self.row_index(x, p) + action]
    }

    /// Log-mass of every prefix (probability that generation passes through it).
    pub fn prefix_log_mass(&self, x: PromptId) -> Vec<f64> {
        let np = self.space.num_prefixes();
        let mut mass = vec![f64::NEG_INFINITY; np];
        mass[0] = 0.0;
        for p in 0..np {
            for t in 0..self.space.vocab_size() {
                if let Some(c) = self.space.child(p, t) {
                    mass[c] = mass[p] + self.conditional_log_prob(x, p, t);
                }
            }
        }
        mass
    }

    fn log_probs_for(&self, x: PromptId) -> Vec<f64> {
        let term = self.space.terminator_action();
        let mass = self.prefix_log_mass(x);
        (0..self.space.num_answers())
            .map(|y| {
                let p = self.space.answer_prefix(y);
                mass[p] + self.conditional_log_prob(x, p, term)
            })
            .collect()
    }

    /// `∇_θ Σ coef[x][p][a] · log q(a | x, p)` for a coefficient table shaped like the logits.
    /// Coefficients on illegal actions must be zero.
    pub fn action_vjp(&self, coef: &[f64]) -> Vec<f64> {
        assert_eq!(coef.len(), self.logits.len(), "coefficient table shape");
        let width = self.space.num_actions();
        let mut grad = vec![0.0; coef.len()];
        for (row, c) in coef.chunks(width).enumerate() {
            let total: f64 = c.iter().sum();
            if total == 0.0 && c.iter().all(|&v| v == 0.0) {
                continue;
            }
            let base = row * width;
            for a in 0..width {
                let lq = self.cond[base + a];
                if lq > f64::NEG_INFINITY {
                    grad[base + a] = c[a] - total * lq.exp();
                }
            }
        }
        grad
    }

    /// Adds `weight` to the action coefficient of every step on `y`'s generation path, terminator included.
    pub(crate) fn add_path_coefficients(&self, x: PromptId, y: AnswerId, weight: f64, coef: &mut [f64]) {
        let path = self.space.path(y);
        for w in path.windows(2) {
            let (parent, tok) = self.space.parent(w[1]).expect("non-root");
            debug_assert_eq!(parent, w[0]);
            coef[self.row_index(x, parent) + tok] += weight;
        }
        let last = *path.last().unwrap();
        coef[self.row_index(x, last) + self.space.terminator_action()] += weight;
    }

    pub(crate) fn action_index(&self, x: PromptId, p: PrefixId, action: usize) -> usize {
        self.row_index(x, p) + action
    }
}

impl Policy for TokenPolicy {
    fn space(&self) -> &AnswerSpace {
        &self.space
    }

    fn num_prompts(&self) -> usize {
        self.num_prompts
    }

    fn log_prob(&self, x: PromptId, y: AnswerId) -> Result<f64> {
        self.check_prompt(x)?;
        self.space.check_answer(y)?;
        let path = self.space.path(y);
        let mut total = 0.0;
        for w in path.windows(2) {
            let (parent, tok) = self.space.parent(w[1]).expect("non-root");
            total += self.conditional_log_prob(x, parent, tok);
        }
        total += self.conditional_log_prob(x, *path.last().unwrap(), self.space.terminator_action());
        Ok(total)
    }

    fn probabilities(&self, x: PromptId) -> Result<Vec<f64>> {
        self.check_prompt(x)?;
        self.space.check_enumerable(enumeration_cap())?;
        Ok(self.log_probs_for(x).into_iter().map(f64::exp).collect())
    }

    fn sample(&self, x: PromptId, rng: &mut SpinRng) -> Result<AnswerId> {
        self.check_prompt(x)?;
        let term = self.space.terminator_action();
        let mut p = 0;
        let mut probs = vec![0.0; self.space.num_actions()];
        loop {
            for (dst, lq) in probs.iter_mut().zip(self.conditional_log_row(x, p)) {
                *dst = lq.exp();
            }
            let a = inverse_cdf(&probs, rng.gen::<f64>());
            if a == term {
                return Ok(self.space.prefix_answer(p).expect("terminator is illegal at the root"));
            }
            p = self.space.child(p, a).expect("tokens are illegal at full length");
        }
    }

    fn log_probabilities(&self, x: PromptId) -> Result<Vec<f64>> {
        self.check_prompt(x)?;
        self.space.check_enumerable(enumeration_cap())?;
        Ok(self.log_probs_for(x))
    }

    fn log_prob_table(&self) -> Result<Vec<f64>> {
        self.space.check_enumerable(enumeration_cap())?;
        let mut out = Vec::with_capacity(self.num_prompts * self.space.num_answers());
        for x in 0..self.num_prompts {
            out.extend(self.log_probs_for(x));
        }
        Ok(out)
    }
}

impl Differentiable for TokenPolicy {
    fn params(&self) -> &[f64] {
        &self.logits
    }

    fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        TokenPolicy::from_logits(self.space.clone(), self.num_prompts, params)
    }

    fn log_prob_vjp(&self, coef: &[f64]) -> Vec<f64> {
        let na = self.space.num_answers();
        assert_eq!(coef.len(), self.num_prompts * na, "coefficient table shape");
        let mut action_coef = vec![0.0; self.logits.len()];
        for x in 0..self.num_prompts {
            for y in 0..na {
                let c = coef[x * na + y];
                if c != 0.0 {
                    self.add_path_coefficients(x, y, c, &mut action_coef);
                }
            }
        }
        self.action_vjp(&action_coef)
    }
}
