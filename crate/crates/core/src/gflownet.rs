//! Token-level sampling of a sequence-level geometric mixture.
//!
//! The normalized product `π_prev(y|x)^α · π_base(y|x)^{1-α}` of two
//! autoregressive policies is not itself autoregressive with token-wise
//! mixed conditionals: normalizing the mixture at each step gives a different
//! distribution ([`factorization_gap`] measures by how much). A
//! [`GFlowNetSampler`] learns token conditionals `q` whose terminating
//! distribution matches the target, trained with a sub-trajectory balance
//! loss adapted to states that can terminate anywhere.
//!
//! For a trajectory `s_0 → … → s_n → ⊥` (with `s_0` the empty prefix) and
//! `0 ≤ i < j ≤ n` the residual is
//!
//! ```text
//! δ(i,j) = log F(s_i) + Σ_{k=i}^{j-1} log q(s_{k+1}|s_k) + log q(⊥|s_j) - log R(s_j)
//! ```
//!
//! where `log F(s_i) = log R(s_i) - log q(⊥|s_i)` for every terminable state
//! (`i ≥ 1`), and `log F(s_0) = log Z_x` is a learned per-prompt root flow.
//! Pairs are weighted by `λ^{j-i}` normalized over the trajectory.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpinError};
use crate::numeric::{inverse_cdf, total_variation};
use crate::optim::{Adam, Method};
use crate::policy::{
    check_compatible, enumeration_cap, geometric_mixture, AnswerId, AnswerSpace, Checkpoint, CheckpointKind,
    Differentiable, Policy, PrefixId, PromptId, TokenPolicy,
};
use crate::rng::{stream, substream, SpinRng};

/// Unnormalized target `R(y|x) = π_prev(y|x)^α · π_base(y|x)^{1-α}`.
#[derive(Debug, Clone)]
pub struct GfnTarget {
    prev: TokenPolicy,
    base: TokenPolicy,
    alpha: f64,
}

impl GfnTarget {
    pub fn new(prev: TokenPolicy, base: TokenPolicy, alpha: f64) -> Result<Self> {
        check_compatible(&prev, &base)?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(SpinError::Argument(format!("alpha {alpha} outside [0, 1]")));
        }
        Ok(GfnTarget { prev, base, alpha })
    }

    pub fn prev(&self) -> &TokenPolicy {
        &self.prev
    }

    pub fn base(&self) -> &TokenPolicy {
        &self.base
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn space(&self) -> &AnswerSpace {
        self.prev.space()
    }

    pub fn num_prompts(&self) -> usize {
        self.prev.num_prompts()
    }

    pub fn log_reward(&self, x: PromptId, y: AnswerId) -> Result<f64> {
        let a = self.alpha;
        // Skip the unused factor at the endpoints so they reproduce the input bit-for-bit.
        Ok(if a == 1.0 {
            self.prev.log_prob(x, y)?
        } else if a == 0.0 {
            self.base.log_prob(x, y)?
        } else {
            a * self.prev.log_prob(x, y)? + (1.0 - a) * self.base.log_prob(x, y)?
        })
    }

    /// Exact normalized mixture at `x`, by enumeration.
    pub fn exact_distribution(&self, x: PromptId) -> Result<Vec<f64>> {
        geometric_mixture(&self.prev, &self.base, self.alpha)?.probabilities(x)
    }

    /// `log Σ_y R(y|x)`.
    pub fn log_partition(&self, x: PromptId) -> Result<f64> {
        self.space().check_enumerable(enumeration_cap())?;
        let lr: Vec<f64> = (0..self.space().num_answers())
            .map(|y| self.log_reward(x, y))
            .collect::<Result<_>>()?;
        Ok(crate::numeric::logsumexp(&lr))
    }
}

/// `π_prev(y|x)^α · π_base(y|x)^{1-α}`.
pub fn gfn_reward(target: &GfnTarget, x: PromptId, y: AnswerId) -> Result<f64> {
    Ok(target.log_reward(x, y)?.exp())
}

/// Total-variation distance between the exact geometric mixture and the
/// distribution obtained by mixing and renormalizing the two policies'
/// conditionals token by token.
pub fn factorization_gap(target: &GfnTarget, x: PromptId) -> Result<f64> {
    let exact = target.exact_distribution(x)?;
    let naive = tokenwise_mixture(target)?.probabilities(x)?;
    Ok(total_variation(&exact, &naive))
}

/// Autoregressive policy with conditionals `∝ q_prev(a|s)^α q_base(a|s)^{1-α}`.
pub fn tokenwise_mixture(target: &GfnTarget) -> Result<TokenPolicy> {
    let space = target.space();
    let a = target.alpha;
    let width = space.num_actions();
    let np = space.num_prefixes();
    let mut logits = vec![0.0; target.num_prompts() * np * width];
    for x in 0..target.num_prompts() {
        for p in 0..np {
            let lp = target.prev.conditional_log_row(x, p);
            let lb = target.base.conditional_log_row(x, p);
            for act in 0..width {
                if space.is_legal(p, act) {
                    logits[(x * np + p) * width + act] = a * lp[act] + (1.0 - a) * lb[act];
                }
            }
        }
    }
    TokenPolicy::from_logits(space.clone(), target.num_prompts(), logits)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubTbConfig {
    /// Sub-trajectory weight decay `λ ∈ (0, 1]`.
    pub lambda_subtb: f64,
    pub method: Method,
    pub learning_rate: f64,
    /// Adam denominator offset. Keeping `learning_rate / adam_eps` moderate
    /// stops Adam from amplifying round-off when the loss is already zero.
    pub adam_eps: f64,
    pub epochs: usize,
    pub trajectories_per_epoch: usize,
    /// Temperature applied to the sampler's conditionals when drawing training trajectories.
    pub exploration_temperature: f64,
    /// Probability of taking a uniformly random legal action at each step.
    pub uniform_mix: f64,
    pub seed: u64,
    /// Stream id for trajectory sampling under `seed`.
    pub stream: u64,
}

impl Default for SubTbConfig {
    fn default() -> Self {
        SubTbConfig {
            lambda_subtb: 0.9,
            method: Method::Adam,
            learning_rate: 0.3,
            adam_eps: 0.03,
            epochs: 100,
            trajectories_per_epoch: 50,
            exploration_temperature: 2.0,
            uniform_mix: 0.1,
            seed: 0,
            stream: stream::GFLOWNET,
        }
    }
}

impl SubTbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_subtb > 0.0 && self.lambda_subtb <= 1.0) {
            return Err(SpinError::config(
                "gfn.lambda",
                format!("must lie in (0, 1], got {}", self.lambda_subtb),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SpinError::config("gfn.lr", "must be positive"));
        }
        if !(self.adam_eps > 0.0 && self.adam_eps.is_finite()) {
            return Err(SpinError::config("gfn.adam_eps", "must be positive"));
        }
        if self.epochs == 0 {
            return Err(SpinError::config("gfn.epochs", "must be at least 1"));
        }
        if self.trajectories_per_epoch == 0 {
            return Err(SpinError::config("gfn.trajectories", "must be at least 1"));
        }
        if !(self.exploration_temperature > 0.0 && self.exploration_temperature.is_finite()) {
            return Err(SpinError::config("gfn.temperature", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.uniform_mix) {
            return Err(SpinError::config("gfn.uniform_mix", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Token-level conditionals `q(·|x, prefix)` plus a learned root log-flow per prompt.
#[derive(Debug, Clone)]
pub struct GFlowNetSampler {
    policy: TokenPolicy,
    log_z: Vec<f64>,
}

impl GFlowNetSampler {
    pub fn new(policy: TokenPolicy, log_z: Vec<f64>) -> Result<Self> {
        if log_z.len() != policy.num_prompts() {
            return Err(SpinError::Argument(format!(
                "{} root flows for {} prompts",
                log_z.len(),
                policy.num_prompts()
            )));
        }
        if let Some(v) = log_z.iter().find(|v| !v.is_finite()) {
            return Err(SpinError::Argument(format!("non-finite root flow {v}")));
        }
        Ok(GFlowNetSampler { policy, log_z })
    }

    /// Sampler initialized at `target`'s previous policy with root flows 0.
    pub fn from_prev(target: &GfnTarget) -> Self {
        GFlowNetSampler {
            policy: target.prev.clone(),
            log_z: vec![0.0; target.num_prompts()],
        }
    }

    pub fn policy(&self) -> &TokenPolicy {
        &self.policy
    }

    pub fn log_z(&self) -> &[f64] {
        &self.log_z
    }

    /// Logits followed by root flows.
    pub fn params(&self) -> Vec<f64> {
        let mut out = self.policy.params().to_vec();
        out.extend_from_slice(&self.log_z);
        out
    }

    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        let n = self.policy.params().len();
        if params.len() != n + self.log_z.len() {
            return Err(SpinError::Argument(
                "sampler parameter vector has the wrong length".into(),
            ));
        }
        GFlowNetSampler::new(self.policy.with_params(params[..n].to_vec())?, params[n..].to_vec())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: CheckpointKind::GFlowNet,
            space: self.policy.space().clone(),
            num_prompts: self.policy.num_prompts(),
            values: self.policy.logits().to_vec(),
            extra: self.log_z.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.kind != CheckpointKind::GFlowNet {
            return Err(SpinError::Argument(
                "checkpoint does not hold a GFlowNet sampler".into(),
            ));
        }
        let policy = TokenPolicy::from_logits(ck.space, ck.num_prompts, ck.values)?;
        GFlowNetSampler::new(policy, ck.extra)
    }
}

/// Exact distribution over complete answers induced by the sampler's conditionals.
pub fn terminating_distribution(sampler: &GFlowNetSampler, x: PromptId) -> Result<Vec<(AnswerId, f64)>> {
    Ok(sampler.policy.probabilities(x)?.into_iter().enumerate().collect())
}

/// A complete generation path: prefix states from the empty prefix to the answer, then `⊥`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub prompt: PromptId,
    pub states: Vec<PrefixId>,
}

impl Trajectory {
    pub fn from_answer(space: &AnswerSpace, prompt: PromptId, y: AnswerId) -> Self {
        Trajectory {
            prompt,
            states: space.path(y),
        }
    }

    fn validate(&self, space: &AnswerSpace, num_prompts: usize) -> Result<()> {
        let bad = |m: String| Err(SpinError::Argument(format!("invalid trajectory: {m}")));
        if self.prompt >= num_prompts {
            return bad(format!("prompt {} out of range", self.prompt));
        }
        if self.states.len() < 2 {
            return bad("needs at least one token before termination".into());
        }
        if self.states[0] != 0 {
            return bad("must start at the empty prefix".into());
        }
        for w in self.states.windows(2) {
            if w[1] >= space.num_prefixes() || space.parent(w[1]).map(|(p, _)| p) != Some(w[0]) {
                return bad(format!("state {} does not extend {} by one token", w[1], w[0]));
            }
        }
        Ok(())
    }
}

/// λ-weighted sub-trajectory balance loss averaged over trajectories, with its
/// gradient w.r.t. [`GFlowNetSampler::params`].
pub fn subtb_loss(
    sampler: &GFlowNetSampler,
    target: &GfnTarget,
    trajectories: &[Trajectory],
    cfg: &SubTbConfig,
) -> Result<(f64, Vec<f64>)> {
    if !(cfg.lambda_subtb > 0.0 && cfg.lambda_subtb <= 1.0) {
        return Err(SpinError::Argument(format!(
            "lambda {} outside (0, 1]",
            cfg.lambda_subtb
        )));
    }
    if trajectories.is_empty() {
        return Err(SpinError::Argument("empty trajectory batch".into()));
    }
    let q = &sampler.policy;
    check_compatible(q, &target.prev)?;
    let space = q.space();
    let term = space.terminator_action();
    let n_logits = q.params().len();
    let mut action_coef = vec![0.0; n_logits];
    let mut z_grad = vec![0.0; sampler.log_z.len()];
    let scale = 1.0 / trajectories.len() as f64;
    let mut total = 0.0;

    let mut fwd = Vec::new();
    let mut stop = Vec::new();
    let mut log_r = Vec::new();
    for traj in trajectories {
        traj.validate(space, q.num_prompts())?;
        let x = traj.prompt;
        let s = &traj.states;
        let n = s.len() - 1;
        // fwd[k] = Σ_{m<k} log q(s_{m+1} | s_m)
        fwd.clear();
        fwd.push(0.0);
        for k in 0..n {
            let (_, tok) = space.parent(s[k + 1]).expect("validated");
            fwd.push(fwd[k] + q.conditional_log_prob(x, s[k], tok));
        }
        stop.clear();
        log_r.clear();
        for &state in s.iter() {
            stop.push(q.conditional_log_prob(x, state, term));
            log_r.push(match space.prefix_answer(state) {
                Some(y) => target.log_reward(x, y)?,
                None => f64::NAN,
            });
        }

        let mut weight_sum = 0.0;
        for i in 0..n {
            for j in i + 1..=n {
                weight_sum += cfg.lambda_subtb.powi((j - i) as i32);
            }
        }
        for i in 0..n {
            let head = if i == 0 { sampler.log_z[x] } else { log_r[i] - stop[i] };
            for j in i + 1..=n {
                let w = cfg.lambda_subtb.powi((j - i) as i32) / weight_sum;
                let resid = head + (fwd[j] - fwd[i]) + stop[j] - log_r[j];
                total += scale * w * resid * resid;
                let c = scale * w * 2.0 * resid;
                for k in i..j {
                    let (_, tok) = space.parent(s[k + 1]).expect("validated");
                    action_coef[q.action_index(x, s[k], tok)] += c;
                }
                action_coef[q.action_index(x, s[j], term)] += c;
                if i == 0 {
                    z_grad[x] += c;
                } else {
                    action_coef[q.action_index(x, s[i], term)] -= c;
                }
            }
        }
    }
    let mut grad = q.action_vjp(&action_coef);
    grad.extend(z_grad);
    Ok((total, grad))
}

/// One trajectory per answer and prompt: the exhaustive batch used for exact loss curves.
pub fn all_trajectories(space: &AnswerSpace, num_prompts: usize) -> Result<Vec<Trajectory>> {
    space.check_enumerable(enumeration_cap())?;
    Ok((0..num_prompts)
        .flat_map(|x| (0..space.num_answers()).map(move |y| (x, y)))
        .map(|(x, y)| Trajectory::from_answer(space, x, y))
        .collect())
}

/// Draws a trajectory from `q` tempered by `temperature`, with `uniform_mix` uniform exploration.
pub fn sample_exploratory(
    q: &TokenPolicy,
    x: PromptId,
    temperature: f64,
    uniform_mix: f64,
    rng: &mut SpinRng,
) -> Trajectory {
    let space = q.space();
    let term = space.terminator_action();
    let mut states = vec![0];
    let mut probs = vec![0.0; space.num_actions()];
    let mut p = 0;
    loop {
        let row = q.conditional_log_row(x, p);
        let legal = row.iter().filter(|v| **v > f64::NEG_INFINITY).count() as f64;
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (dst, &lq) in probs.iter_mut().zip(row) {
            *dst = if lq > f64::NEG_INFINITY {
                ((lq - max) / temperature).exp()
            } else {
                0.0
            };
            z += *dst;
        }
        for (dst, &lq) in probs.iter_mut().zip(row) {
            if lq > f64::NEG_INFINITY {
                *dst = (1.0 - uniform_mix) * *dst / z + uniform_mix / legal;
            }
        }
        let a = inverse_cdf(&probs, rng.gen::<f64>());
        if a == term {
            return Trajectory { prompt: x, states };
        }
        p = space.child(p, a).expect("tokens are illegal at full length");
        states.push(p);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GfnCurvePoint {
    pub epoch: usize,
    pub subtb_loss: f64,
    /// Mean over prompts of TV(terminating distribution, exact mixture); NaN if not enumerable.
    pub tv_to_target: f64,
}

/// Mean over prompts of the total variation between the sampler's terminating
/// distribution and the exact normalized target.
pub fn tv_to_target(sampler: &GFlowNetSampler, target: &GfnTarget) -> Result<f64> {
    let exact = geometric_mixture(&target.prev, &target.base, target.alpha)?;
    let mut total = 0.0;
    for x in 0..target.num_prompts() {
        total += total_variation(&sampler.policy.probabilities(x)?, &exact.probabilities(x)?);
    }
    Ok(total / target.num_prompts() as f64)
}

/// Fine-tunes a sampler, initialized at `π_prev`, toward the geometric-mixture target.
///
/// Each epoch draws `trajectories_per_epoch` exploratory trajectories (prompts
/// uniformly at random) and takes one Adam step on their sub-trajectory
/// balance loss. The returned curve starts with the untrained sampler
/// (epoch 0); when the answer space is enumerable its loss column is the
/// exact loss over all trajectories.
pub fn train_gflownet(target: &GfnTarget, cfg: &SubTbConfig) -> Result<(GFlowNetSampler, Vec<GfnCurvePoint>)> {
    cfg.validate()?;
    let mut sampler = GFlowNetSampler::from_prev(target);
    let enumerable = target.space().check_enumerable(enumeration_cap()).is_ok();
    let everything = if enumerable {
        all_trajectories(target.space(), target.num_prompts())?
    } else {
        Vec::new()
    };
    let measure = |s: &GFlowNetSampler, batch_loss: f64, epoch: usize| -> Result<GfnCurvePoint> {
        if enumerable {
            Ok(GfnCurvePoint {
                epoch,
                subtb_loss: subtb_loss(s, target, &everything, cfg)?.0,
                tv_to_target: tv_to_target(s, target)?,
            })
        } else {
            Ok(GfnCurvePoint {
                epoch,
                subtb_loss: batch_loss,
                tv_to_target: f64::NAN,
            })
        }
    };

    let mut rng = substream(cfg.seed, cfg.stream);
    let mut params = sampler.params();
    let mut adam = Adam::with_eps(params.len(), cfg.adam_eps);
    let mut curve = vec![measure(&sampler, f64::NAN, 0)?];
    for epoch in 1..=cfg.epochs {
        let batch: Vec<Trajectory> = (0..cfg.trajectories_per_epoch)
            .map(|_| {
                let x = rng.gen_range(0..target.num_prompts());
                sample_exploratory(
                    &sampler.policy,
                    x,
                    cfg.exploration_temperature,
                    cfg.uniform_mix,
                    &mut rng,
                )
            })
            .collect();
        let (loss, grad) = subtb_loss(&sampler, target, &batch, cfg)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(SpinError::Run(format!(
                "non-finite sub-trajectory balance loss at epoch {epoch}"
            )));
        }
        match cfg.method {
            Method::Sgd => params
                .iter_mut()
                .zip(&grad)
                .for_each(|(p, g)| *p -= cfg.learning_rate * g),
            Method::Adam => adam.step(&mut params, &grad, cfg.learning_rate),
        }
        sampler = sampler.with_params(&params)?;
        curve.push(measure(&sampler, loss, epoch)?);
    }
    Ok((sampler, curve))
}

/// Training curve as CSV with columns `epoch,subtb_loss,tv_to_target`.
pub fn curve_csv(curve: &[GfnCurvePoint]) -> String {
    let mut out = String::from("epoch,subtb_loss,tv_to_target\n");
    for p in curve {
        out.push_str(&format!("{},{:.16e},{:.16e}\n", p.epoch, p.subtb_loss, p.tv_to_target));
    }
    out
}

impl Policy for GFlowNetSampler {
    fn space(&self) -> &AnswerSpace {
        self.policy.space()
    }

    fn num_prompts(&self) -> usize {
        self.policy.num_prompts()
    }

    fn log_prob(&self, x: PromptId, y: AnswerId) -> Result<f64> {
        self.policy.log_prob(x, y)
    }

    fn probabilities(&self, x: PromptId) -> Result<Vec<f64>> {
        self.policy.probabilities(x)
    }

    fn log_probabilities(&self, x: PromptId) -> Result<Vec<f64>> {
        self.policy.log_probabilities(x)
    }

    fn sample(&self, x: PromptId, rng: &mut SpinRng) -> Result<AnswerId> {
        self.policy.sample(x, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{finite_diff_grad, relative_error};
    use crate::policy::Vocab;

    fn target(v: usize, l: usize, prompts: usize, alpha: f64, seed: u64) -> GfnTarget {
        let space = AnswerSpace::new(Vocab::with_size(v).unwrap(), l).unwrap();
        let mut rng = substream(seed, 0);
        let prev = TokenPolicy::random(space.clone(), prompts, 1.0, &mut rng).unwrap();
        let base = TokenPolicy::random(space, prompts, 1.0, &mut rng).unwrap();
        GfnTarget::new(prev, base, alpha).unwrap()
    }

    #[test]
    fn reward_endpoints() {
        let t1 = target(2, 2, 1, 1.0, 1);
        let t0 = GfnTarget::new(t1.prev.clone(), t1.base.clone(), 0.0).unwrap();
        for y in 0..6 {
            assert_eq!(gfn_reward(&t1, 0, y).unwrap(), t1.prev.log_prob(0, y).unwrap().exp());
            assert_eq!(gfn_reward(&t0, 0, y).unwrap(), t1.base.log_prob(0, y).unwrap().exp());
        }
        let same = GfnTarget::new(t1.base.clone(), t1.base.clone(), 0.37).unwrap();
        for y in 0..6 {
            let r = gfn_reward(&same, 0, y).unwrap();
            assert!((r - t1.base.log_prob(0, y).unwrap().exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn gap_vanishes_where_mixtures_coincide() {
        let t = target(2, 2, 1, 0.5, 4);
        for a in [0.0, 1.0] {
            let e = GfnTarget::new(t.prev.clone(), t.base.clone(), a).unwrap();
            assert!(factorization_gap(&e, 0).unwrap() < 1e-12);
        }
        let same = GfnTarget::new(t.prev.clone(), t.prev.clone(), 0.5).unwrap();
        assert!(factorization_gap(&same, 0).unwrap() < 1e-12);
        assert!(factorization_gap(&t, 0).unwrap() > 0.0);
    }

    #[test]
    fn exact_sampler_has_zero_loss() {
        let t = target(2, 2, 2, 0.5, 6);
        let exact = geometric_mixture(&t.prev, &t.base, 0.5).unwrap();
        let q = TokenPolicy::from_sequence_policy(&exact).unwrap();
        let log_z = (0..2).map(|x| t.log_partition(x).unwrap()).collect();
        let s = GFlowNetSampler::new(q, log_z).unwrap();
        let all = all_trajectories(t.space(), 2).unwrap();
        let (loss, grad) = subtb_loss(&s, &t, &all, &SubTbConfig::default()).unwrap();
        assert!(loss < 1e-20, "{loss}");
        assert!(grad.iter().all(|g| g.abs() < 1e-9));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let t = target(3, 3, 2, 0.5, 9);
        let mut rng = substream(9, 1);
        let q = TokenPolicy::random(t.space().clone(), 2, 0.7, &mut rng).unwrap();
        let s = GFlowNetSampler::new(q, vec![0.3, -0.2]).unwrap();
        let batch: Vec<Trajectory> = (0..12)
            .map(|i| sample_exploratory(&s.policy, i % 2, 1.0, 0.2, &mut rng))
            .collect();
        let cfg = SubTbConfig {
            lambda_subtb: 0.8,
            ..Default::default()
        };
        let (_, g) = subtb_loss(&s, &t, &batch, &cfg).unwrap();
        let fd = finite_diff_grad(
            |p| subtb_loss(&s.with_params(p).unwrap(), &t, &batch, &cfg).unwrap().0,
            &s.params(),
            1e-6,
        );
        assert!(relative_error(&g, &fd) < 1e-5);
    }

    #[test]
    fn single_token_answers_reduce_to_detailed_balance() {
        // L = 1: every trajectory is ∅ → a → ⊥ and q(⊥|a) = 1, so the only
        // residual is log Z + log q(a|∅) - log R(a).
        let t = target(2, 1, 1, 0.5, 2);
        let s = GFlowNetSampler::new(t.prev.clone(), vec![0.1]).unwrap();
        for y in 0..2 {
            let traj = Trajectory::from_answer(t.space(), 0, y);
            let (loss, _) = subtb_loss(&s, &t, &[traj], &SubTbConfig::default()).unwrap();
            let resid = 0.1 + s.policy.log_prob(0, y).unwrap() - t.log_reward(0, y).unwrap();
            assert!((loss - resid * resid).abs() < 1e-14);
        }
    }

    #[test]
    fn invalid_trajectories_rejected() {
        let t = target(2, 2, 1, 0.5, 3);
        let s = GFlowNetSampler::from_prev(&t);
        let cfg = SubTbConfig::default();
        let bad = [
            Trajectory {
                prompt: 0,
                states: vec![0],
            },
            Trajectory {
                prompt: 0,
                states: vec![1, 3],
            },
            Trajectory {
                prompt: 0,
                states: vec![0, 2, 3],
            },
            Trajectory {
                prompt: 3,
                states: vec![0, 1],
            },
        ];
        for b in bad {
            assert!(matches!(subtb_loss(&s, &t, &[b], &cfg), Err(SpinError::Argument(_))));
        }
    }

    #[test]
    fn terminating_distribution_identity_and_shift_invariance() {
        let t = target(3, 2, 1, 0.5, 5);
        let s = GFlowNetSampler::from_prev(&t);
        let d = terminating_distribution(&s, 0).unwrap();
        let p = t.prev.probabilities(0).unwrap();
        assert!((d.iter().map(|(_, v)| v).sum::<f64>() - 1.0).abs() < 1e-12);
        for (y, v) in &d {
            assert!((v - p[*y]).abs() < 1e-12);
        }
        let space = t.space();
        let mut logits = s.policy.logits().to_vec();
        let row = 4 * space.num_actions();
        for a in 0..space.num_actions() {
            logits[row + a] += 3.5;
        }
        let shifted = GFlowNetSampler::new(s.policy.with_params(logits).unwrap(), vec![0.0]).unwrap();
        let d2 = terminating_distribution(&shifted, 0).unwrap();
        for ((_, a), (_, b)) in d.iter().zip(&d2) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let t = target(2, 2, 2, 0.5, 1);
        let s = GFlowNetSampler::new(t.prev.clone(), vec![0.25, -1.5]).unwrap();
        let text = s.to_checkpoint().to_text();
        let back =
            GFlowNetSampler::from_checkpoint(Checkpoint::parse(&text, std::path::Path::new("mem")).unwrap()).unwrap();
        assert_eq!(back.params(), s.params());
    }
}
