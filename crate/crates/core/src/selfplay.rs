//! Self-play preference fine-tuning loops.
//!
//! Iteration `t` trains `θ_t` from a warm start at `θ_{t-1}` to prefer SFT
//! winners over losers drawn from earlier iterates, against the reference
//! `π_ref ∝ π_{θ_{t-1}}^α · π_base^{1-α}`. Iterates with negative index are
//! the base policy. With `α = 1` and history length 1 this is vanilla SPIN,
//! which [`run_spin`] implements directly.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpinError};
use crate::gflownet::{train_gflownet, GfnCurvePoint, GfnTarget, SubTbConfig};
use crate::losses::{AlignmentLoss, DpoConfig, IpoConfig, PreferenceTriplet, SlicConfig};
use crate::optim::{minimize, OptimizerConfig};
use crate::policy::{
    arithmetic_mixture, geometric_mixture, Differentiable, MixtureSampler, Policy, TabularPolicy, TokenPolicy,
};
use crate::rng::{stream, substream, SpinRng};
use crate::task::SyntheticTask;

pub use crate::task::SftDataset;

/// Number of past iterates mixed into the loser sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HistoryLength {
    Finite(usize),
    /// Fictitious play: every past iterate.
    Infinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    Dpo,
    Ipo,
    Slic,
}

/// Where losers come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LoserSource {
    /// Uniform mixture over the last `h` iterates.
    History,
    /// The reference policy itself, computed exactly.
    ReferenceExact,
    /// A token-level sampler trained toward the reference.
    ReferenceGFlowNet(SubTbConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSpinConfig {
    pub alpha: f64,
    pub beta: f64,
    pub history: HistoryLength,
    /// Last iteration index; iterations `0..=iterations` run.
    pub iterations: usize,
    pub triplets_iter0: usize,
    pub triplets_per_iter: usize,
    pub optimizer: OptimizerConfig,
    /// Train on the exact expectation over all triplets instead of a sample,
    /// taking as many full-batch steps as the sampled run would take minibatch steps.
    pub exact: bool,
    pub loss: LossKind,
    pub ipo: IpoConfig,
    pub slic: SlicConfig,
    pub losers: LoserSource,
    /// Record elapsed time per iteration; otherwise `wall_seconds` is 0 so reruns are byte-identical.
    pub record_wall_time: bool,
    pub seed: u64,
}

impl Default for AlphaSpinConfig {
    fn default() -> Self {
        AlphaSpinConfig {
            alpha: 0.95,
            beta: 0.1,
            history: HistoryLength::Finite(2),
            iterations: 2,
            triplets_iter0: 1000,
            triplets_per_iter: 2000,
            optimizer: OptimizerConfig::default(),
            exact: false,
            loss: LossKind::Dpo,
            ipo: IpoConfig::default(),
            slic: SlicConfig::default(),
            losers: LoserSource::History,
            record_wall_time: false,
            seed: 0,
        }
    }
}

impl AlphaSpinConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(SpinError::config(
                "spin.alpha",
                format!("must lie in [0, 1], got {}", self.alpha),
            ));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(SpinError::config(
                "spin.beta",
                format!("must be positive, got {}", self.beta),
            ));
        }
        if self.history == HistoryLength::Finite(0) {
            return Err(SpinError::config("spin.history", "must be at least 1 or inf"));
        }
        if self.triplets_iter0 == 0 {
            return Err(SpinError::config("spin.triplets_iter0", "must be at least 1"));
        }
        if self.triplets_per_iter == 0 {
            return Err(SpinError::config("spin.triplets_per_iter", "must be at least 1"));
        }
        if self.triplets_iter0 > self.triplets_per_iter {
            return Err(SpinError::config(
                "spin.triplets_iter0",
                format!(
                    "{} exceeds spin.triplets_per_iter = {}",
                    self.triplets_iter0, self.triplets_per_iter
                ),
            ));
        }
        if let LoserSource::ReferenceGFlowNet(g) = &self.losers {
            g.validate()?;
        }
        self.optimizer.validate()?;
        self.alignment_loss().validate()
    }

    pub fn alignment_loss(&self) -> AlignmentLoss {
        match self.loss {
            LossKind::Dpo => AlignmentLoss::Dpo(DpoConfig { beta: self.beta }),
            LossKind::Ipo => AlignmentLoss::Ipo(self.ipo),
            LossKind::Slic => AlignmentLoss::Slic(self.slic),
        }
    }

    pub fn triplets_at(&self, t: usize) -> usize {
        if t == 0 {
            self.triplets_iter0
        } else {
            self.triplets_per_iter
        }
    }

    fn optimizer_at(&self, t: usize) -> OptimizerConfig {
        let mut o = self.optimizer.clone();
        o.seed = self.seed;
        o.stream = stream::OPTIMIZER_BASE + t as u64;
        if self.exact {
            let n = self.triplets_at(t);
            let per_epoch = if o.batch_size == 0 { 1 } else { n.div_ceil(o.batch_size) };
            o.epochs *= per_epoch;
            o.batch_size = 0;
        }
        o
    }
}

/// Base policy plus the iterates `θ_0, …, θ_{t}` produced so far.
#[derive(Debug, Clone)]
pub struct IterationHistory {
    base: Arc<TabularPolicy>,
    iterates: Vec<Arc<TabularPolicy>>,
}

impl IterationHistory {
    pub fn new(base: TabularPolicy) -> Self {
        IterationHistory {
            base: Arc::new(base),
            iterates: Vec::new(),
        }
    }

    pub fn base(&self) -> &Arc<TabularPolicy> {
        &self.base
    }

    pub fn iterates(&self) -> &[Arc<TabularPolicy>] {
        &self.iterates
    }

    /// Index of the next iteration to run.
    pub fn next_iteration(&self) -> usize {
        self.iterates.len()
    }

    /// `π_{θ_k}`, or the base policy when `k < 0`.
    pub fn get(&self, k: isize) -> Result<&Arc<TabularPolicy>> {
        if k < 0 {
            return Ok(&self.base);
        }
        self.iterates
            .get(k as usize)
            .ok_or_else(|| SpinError::Argument(format!("iterate {k} has not been produced yet")))
    }

    /// The most recent iterate, or the base policy before the first iteration.
    pub fn latest(&self) -> &Arc<TabularPolicy> {
        self.iterates.last().unwrap_or(&self.base)
    }

    pub fn push(&mut self, policy: TabularPolicy) -> Result<()> {
        crate::policy::check_compatible(&policy, self.base.as_ref())?;
        self.iterates.push(Arc::new(policy));
        Ok(())
    }
}

/// `π_ref ∝ π_{θ_{t-1}}^α · π_base^{1-α}` for the next iteration.
pub fn build_reference(history: &IterationHistory, alpha: f64) -> Result<TabularPolicy> {
    geometric_mixture(history.latest().as_ref(), history.base().as_ref(), alpha)
}

/// Identity of a loser-sampler component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicySource {
    Base,
    Iterate(usize),
}

/// Components and weights of the loser sampler at iteration `t`, with all
/// negative indices merged into one base component.
pub fn loser_sources(h: HistoryLength, t: usize) -> Result<Vec<(PolicySource, f64)>> {
    let indices: Vec<isize> = match h {
        HistoryLength::Finite(0) => {
            return Err(SpinError::Argument("history length must be at least 1".into()));
        }
        HistoryLength::Finite(h) => (t as isize - h as isize..t as isize).collect(),
        HistoryLength::Infinite if t == 0 => vec![-1],
        HistoryLength::Infinite => (0..t as isize).collect(),
    };
    let w = 1.0 / indices.len() as f64;
    let mut out: Vec<(PolicySource, f64)> = Vec::new();
    for k in indices {
        let src = if k < 0 {
            PolicySource::Base
        } else {
            PolicySource::Iterate(k as usize)
        };
        match out.iter_mut().find(|(s, _)| *s == src) {
            Some((_, weight)) => *weight += w,
            None => out.push((src, w)),
        }
    }
    Ok(out)
}

/// Uniform mixture over `π_{θ_{t-h}}, …, π_{θ_{t-1}}` (over all past iterates
/// for infinite history), drawing a component per answer.
pub fn loser_sampler(history: &IterationHistory, h: HistoryLength, t: usize) -> Result<MixtureSampler> {
    let sources = loser_sources(h, t)?;
    let mut comps: Vec<Arc<dyn Policy>> = Vec::with_capacity(sources.len());
    let mut weights = Vec::with_capacity(sources.len());
    for (src, w) in sources {
        let p = match src {
            PolicySource::Base => history.base().clone(),
            PolicySource::Iterate(k) => history.get(k as isize)?.clone(),
        };
        comps.push(p);
        weights.push(w);
    }
    arithmetic_mixture(comps, weights)
}

/// Draws `n` `(x, y_w)` pairs uniformly with replacement from `sft` and a loser
/// for each from `sampler`; also returns which component produced each loser.
pub fn gather_triplets_traced(
    sft: &SftDataset,
    sampler: &MixtureSampler,
    n: usize,
    rng: &mut SpinRng,
) -> Result<(Vec<PreferenceTriplet>, Vec<usize>)> {
    if n == 0 {
        return Err(SpinError::Argument("must gather at least one triplet".into()));
    }
    let mut triplets = Vec::with_capacity(n);
    let mut comps = Vec::with_capacity(n);
    for _ in 0..n {
        let (x, y_w) = sft.pairs()[rng.gen_range(0..sft.len())];
        let (c, y_l) = sampler.sample_with_component(x, rng)?;
        triplets.push(PreferenceTriplet::new(x, y_w, y_l).with_reference(y_w));
        comps.push(c);
    }
    Ok((triplets, comps))
}

pub fn gather_triplets(
    sft: &SftDataset,
    sampler: &MixtureSampler,
    n: usize,
    rng: &mut SpinRng,
) -> Result<Vec<PreferenceTriplet>> {
    Ok(gather_triplets_traced(sft, sampler, n, rng)?.0)
}

/// Every `(x, y_w, y_l)` with weight `q(x)·π_data(y_w|x)·sampler(y_l|x)`.
pub fn exact_triplets(
    data: &dyn Policy,
    sampler: &dyn Policy,
    prompt_weights: &[f64],
) -> Result<(Vec<PreferenceTriplet>, Vec<f64>)> {
    crate::policy::check_compatible(data, sampler)?;
    if prompt_weights.len() != data.num_prompts() {
        return Err(SpinError::Argument("one prompt weight per prompt required".into()));
    }
    let n = data.space().num_answers();
    let mut triplets = Vec::with_capacity(data.num_prompts() * n * n);
    let mut weights = Vec::with_capacity(triplets.capacity());
    for (x, &qx) in prompt_weights.iter().enumerate() {
        let pd = data.probabilities(x)?;
        let ps = sampler.probabilities(x)?;
        for (y_w, &pw) in pd.iter().enumerate() {
            for (y_l, &pl) in ps.iter().enumerate() {
                triplets.push(PreferenceTriplet::new(x, y_w, y_l).with_reference(y_w));
                weights.push(qx * pw * pl);
            }
        }
    }
    Ok((triplets, weights))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    /// Training loss at the warm start.
    pub initial_train_loss: f64,
    /// Training loss after minimization.
    pub mean_train_loss: f64,
    pub kl_data_model: f64,
    pub kl_model_base: f64,
    pub wall_seconds: f64,
}

/// Metrics table with columns `iteration,mean_train_loss,kl_data_model,kl_model_base,wall_seconds`.
pub fn metrics_csv(rows: &[IterationMetrics]) -> String {
    let mut out = String::from("iteration,mean_train_loss,kl_data_model,kl_model_base,wall_seconds\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e},{:.6}\n",
            r.iteration, r.mean_train_loss, r.kl_data_model, r.kl_model_base, r.wall_seconds
        ));
    }
    out
}

/// Extra output of one iteration, beyond the new iterate.
#[derive(Debug, Clone)]
pub struct IterationOutput {
    pub policy: TabularPolicy,
    pub metrics: IterationMetrics,
    pub triplets: Vec<PreferenceTriplet>,
    /// Sampler training curve when losers came from a trained sampler.
    pub gfn_curve: Option<Vec<GfnCurvePoint>>,
}

/// Minimizes the configured loss from a warm start at `warm`.
fn train_iteration(
    cfg: &AlphaSpinConfig,
    t: usize,
    warm: &TabularPolicy,
    reference: &TabularPolicy,
    triplets: &[PreferenceTriplet],
    weights: Option<&[f64]>,
) -> Result<(TabularPolicy, f64, f64)> {
    let loss = cfg.alignment_loss();
    let opt = cfg.optimizer_at(t);
    let mut subset = Vec::new();
    let result = minimize(
        |params, batch| {
            let theta = warm.with_params(params.to_vec())?;
            match batch {
                None => loss.evaluate(&theta, reference, triplets, weights),
                Some(idx) => {
                    subset.clear();
                    subset.extend(idx.iter().map(|&i| triplets[i]));
                    loss.evaluate(&theta, reference, &subset, None)
                }
            }
        },
        triplets.len(),
        warm.params().to_vec(),
        &opt,
    )
    .map_err(|e| match e {
        SpinError::Run(m) => SpinError::Run(format!("iteration {t}: {m}")),
        other => other,
    })?;
    let policy = warm.with_params(result.params)?;
    Ok((
        policy,
        result.trace[0],
        *result.trace.last().expect("trace has the initial entry"),
    ))
}

/// One α-SPIN iteration: builds the reference, gathers triplets, trains from
/// the latest iterate and appends the result to `history`.
pub fn spin_iteration(
    history: &mut IterationHistory,
    cfg: &AlphaSpinConfig,
    task: &SyntheticTask,
) -> Result<IterationOutput> {
    let started = Instant::now();
    let t = history.next_iteration();
    let reference = build_reference(history, cfg.alpha)?;
    let warm = history.latest().as_ref().clone();

    let mut gfn_curve = None;
    let sampler: MixtureSampler = match &cfg.losers {
        LoserSource::History => loser_sampler(history, cfg.history, t)?,
        LoserSource::ReferenceExact => arithmetic_mixture(vec![Arc::new(reference.clone())], vec![1.0])?,
        LoserSource::ReferenceGFlowNet(g) => {
            let target = GfnTarget::new(
                TokenPolicy::from_sequence_policy(history.latest().as_ref())?,
                TokenPolicy::from_sequence_policy(history.base().as_ref())?,
                cfg.alpha,
            )?;
            let gcfg = SubTbConfig {
                seed: cfg.seed,
                stream: stream::GFLOWNET_BASE + t as u64,
                ..*g
            };
            let (trained, curve) = train_gflownet(&target, &gcfg)?;
            gfn_curve = Some(curve);
            arithmetic_mixture(vec![Arc::new(trained.policy().clone())], vec![1.0])?
        }
    };

    let (triplets, weights) = if cfg.exact {
        let (tr, w) = exact_triplets(&task.data, &sampler, &task.prompt_weights)?;
        (tr, Some(w))
    } else {
        let mut rng = substream(cfg.seed, stream::TRIPLETS_BASE + t as u64);
        (
            gather_triplets(&task.sft, &sampler, cfg.triplets_at(t), &mut rng)?,
            None,
        )
    };
    let (policy, initial, final_loss) = train_iteration(cfg, t, &warm, &reference, &triplets, weights.as_deref())?;
    let metrics = IterationMetrics {
        iteration: t,
        initial_train_loss: initial,
        mean_train_loss: final_loss,
        kl_data_model: task.kl_data_to(&policy)?,
        kl_model_base: task.kl_to_base(&policy)?,
        wall_seconds: if cfg.record_wall_time {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        },
    };
    history.push(policy.clone())?;
    Ok(IterationOutput {
        policy,
        metrics,
        triplets,
        gfn_curve,
    })
}

#[derive(Debug, Clone)]
pub struct SpinRun {
    pub history: IterationHistory,
    pub metrics: Vec<IterationMetrics>,
}

/// Runs iterations `0..=cfg.iterations`, calling `observe` after each one.
pub fn run_alpha_spin_with<F>(cfg: &AlphaSpinConfig, task: &SyntheticTask, mut observe: F) -> Result<SpinRun>
where
    F: FnMut(&IterationOutput) -> Result<()>,
{
    cfg.validate()?;
    let mut history = IterationHistory::new(task.base.clone());
    let mut metrics = Vec::with_capacity(cfg.iterations + 1);
    for _ in 0..=cfg.iterations {
        let out = spin_iteration(&mut history, cfg, task)?;
        observe(&out)?;
        metrics.push(out.metrics);
    }
    Ok(SpinRun { history, metrics })
}

pub fn run_alpha_spin(cfg: &AlphaSpinConfig, task: &SyntheticTask) -> Result<SpinRun> {
    run_alpha_spin_with(cfg, task, |_| Ok(()))
}

/// Vanilla SPIN: the reference is the previous iterate and losers are sampled
/// from it. `alpha`, `history` and `losers` in `cfg` are ignored.
pub fn run_spin_with<F>(cfg: &AlphaSpinConfig, task: &SyntheticTask, mut observe: F) -> Result<SpinRun>
where
    F: FnMut(&IterationOutput) -> Result<()>,
{
    cfg.validate()?;
    let mut history = IterationHistory::new(task.base.clone());
    let mut metrics = Vec::new();
    for t in 0..=cfg.iterations {
        let started = Instant::now();
        let prev = history.latest().as_ref().clone();
        let (triplets, weights) = if cfg.exact {
            let (tr, w) = exact_triplets(&task.data, &prev, &task.prompt_weights)?;
            (tr, Some(w))
        } else {
            let mut rng = substream(cfg.seed, stream::TRIPLETS_BASE + t as u64);
            let pairs = task.sft.pairs();
            let mut tr = Vec::with_capacity(cfg.triplets_at(t));
            for _ in 0..cfg.triplets_at(t) {
                let (x, y_w) = pairs[rng.gen_range(0..pairs.len())];
                let y_l = prev.sample(x, &mut rng)?;
                tr.push(PreferenceTriplet::new(x, y_w, y_l).with_reference(y_w));
            }
            (tr, None)
        };
        let (policy, initial, final_loss) = train_iteration(cfg, t, &prev, &prev, &triplets, weights.as_deref())?;
        let out = IterationOutput {
            metrics: IterationMetrics {
                iteration: t,
                initial_train_loss: initial,
                mean_train_loss: final_loss,
                kl_data_model: task.kl_data_to(&policy)?,
                kl_model_base: task.kl_to_base(&policy)?,
                wall_seconds: if cfg.record_wall_time {
                    started.elapsed().as_secs_f64()
                } else {
                    0.0
                },
            },
            policy,
            triplets,
            gfn_curve: None,
        };
        history.push(out.policy.clone())?;
        observe(&out)?;
        metrics.push(out.metrics);
    }
    Ok(SpinRun { history, metrics })
}

pub fn run_spin(cfg: &AlphaSpinConfig, task: &SyntheticTask) -> Result<SpinRun> {
    run_spin_with(cfg, task, |_| Ok(()))
}
