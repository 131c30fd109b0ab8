//! DPO, IPO and SLiC preference losses with analytic gradients w.r.t. policy logits.
//!
//! Every loss is a weighted sum over triplets of a function of the
//! log-probabilities `log π_θ(y|x)` of the answers in the triplet. The
//! gradient is assembled as a coefficient table over `(x, y)` and pushed
//! through the policy's softmax Jacobian once ([`Differentiable::log_prob_vjp`]).
//! Batches are reduced by the arithmetic mean, in input order.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpinError};
use crate::numeric::{log_sigmoid, sigmoid};
use crate::policy::{check_compatible, AnswerId, Differentiable, Policy, PromptId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpoConfig {
    pub beta: f64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        DpoConfig { beta: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpoConfig {
    pub tau: f64,
}

impl Default for IpoConfig {
    fn default() -> Self {
        IpoConfig { tau: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicConfig {
    pub delta: f64,
    pub lambda: f64,
}

impl Default for SlicConfig {
    fn default() -> Self {
        SlicConfig {
            delta: 1.0,
            lambda: 0.1,
        }
    }
}

/// `(x, y_w, y_l)` with the SFT answer `y_ref` that SLiC's likelihood term needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreferenceTriplet {
    pub prompt: PromptId,
    pub winner: AnswerId,
    pub loser: AnswerId,
    pub reference: Option<AnswerId>,
}

impl PreferenceTriplet {
    pub fn new(prompt: PromptId, winner: AnswerId, loser: AnswerId) -> Self {
        PreferenceTriplet {
            prompt,
            winner,
            loser,
            reference: None,
        }
    }

    pub fn with_reference(mut self, y_ref: AnswerId) -> Self {
        self.reference = Some(y_ref);
        self
    }
}

/// One of the three preference losses with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AlignmentLoss {
    Dpo(DpoConfig),
    Ipo(IpoConfig),
    Slic(SlicConfig),
}

impl AlignmentLoss {
    pub fn name(&self) -> &'static str {
        match self {
            AlignmentLoss::Dpo(_) => "dpo",
            AlignmentLoss::Ipo(_) => "ipo",
            AlignmentLoss::Slic(_) => "slic",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(SpinError::config(field, format!("must be positive, got {v}")))
            }
        };
        match self {
            AlignmentLoss::Dpo(c) => positive("spin.beta", c.beta),
            AlignmentLoss::Ipo(c) => positive("loss.ipo_tau", c.tau),
            AlignmentLoss::Slic(c) => {
                positive("loss.slic_delta", c.delta)?;
                positive("loss.slic_lambda", c.lambda)
            }
        }
    }

    /// Weighted loss `Σ_i w_i ℓ(triplet_i)` and its gradient; `weights = None` means the batch mean.
    pub fn evaluate<P: Differentiable>(
        &self,
        theta: &P,
        reference: &dyn Policy,
        batch: &[PreferenceTriplet],
        weights: Option<&[f64]>,
    ) -> Result<(f64, Vec<f64>)> {
        self.validate()?;
        match *self {
            AlignmentLoss::Dpo(cfg) => weighted(theta, Some(reference), batch, weights, |m| {
                let z = cfg.beta * m.ratio_margin();
                let d = -sigmoid(-z) * cfg.beta;
                Ok((-log_sigmoid(z), [d, -d, 0.0]))
            }),
            AlignmentLoss::Ipo(cfg) => weighted(theta, Some(reference), batch, weights, |m| {
                let h = m.ratio_margin() - 0.5 / cfg.tau;
                Ok((h * h, [2.0 * h, -2.0 * h, 0.0]))
            }),
            AlignmentLoss::Slic(cfg) => slic_weighted(theta, batch, weights, cfg),
        }
    }
}

/// Log-probabilities entering one triplet's loss.
struct Margins {
    log_w: f64,
    log_l: f64,
    ref_w: f64,
    ref_l: f64,
    log_ref_answer: Option<f64>,
}

impl Margins {
    fn ratio_margin(&self) -> f64 {
        (self.log_w - self.ref_w) - (self.log_l - self.ref_l)
    }
}

/// Shared reduction: `per_triplet` returns the loss and its partial derivatives
/// w.r.t. `(log π_θ(y_w|x), log π_θ(y_l|x), log π_θ(y_ref|x))`.
fn weighted<P, F>(
    theta: &P,
    reference: Option<&dyn Policy>,
    batch: &[PreferenceTriplet],
    weights: Option<&[f64]>,
    per_triplet: F,
) -> Result<(f64, Vec<f64>)>
where
    P: Differentiable,
    F: Fn(&Margins) -> Result<(f64, [f64; 3])>,
{
    if batch.is_empty() {
        return Err(SpinError::Argument("empty preference batch".into()));
    }
    if let Some(w) = weights {
        if w.len() != batch.len() {
            return Err(SpinError::Argument(format!(
                "{} weights for {} triplets",
                w.len(),
                batch.len()
            )));
        }
    }
    let space = theta.space();
    let n = space.num_answers();
    let lt = theta.log_prob_table()?;
    let lr = match reference {
        Some(r) => {
            check_compatible(theta, r)?;
            Some(r.log_prob_table()?)
        }
        None => None,
    };
    let mean = 1.0 / batch.len() as f64;
    let mut coef = vec![0.0; lt.len()];
    let mut total = 0.0;
    for (i, t) in batch.iter().enumerate() {
        theta.check_prompt(t.prompt)?;
        space.check_answer(t.winner)?;
        space.check_answer(t.loser)?;
        if let Some(y) = t.reference {
            space.check_answer(y)?;
        }
        let w = weights.map_or(mean, |ws| ws[i]);
        let iw = t.prompt * n + t.winner;
        let il = t.prompt * n + t.loser;
        let ir = t.reference.map(|y| t.prompt * n + y);
        let m = Margins {
            log_w: lt[iw],
            log_l: lt[il],
            ref_w: lr.as_ref().map_or(0.0, |r| r[iw]),
            ref_l: lr.as_ref().map_or(0.0, |r| r[il]),
            log_ref_answer: ir.map(|j| lt[j]),
        };
        let (value, [dw, dl, dr]) = per_triplet(&m)?;
        total += w * value;
        coef[iw] += w * dw;
        coef[il] += w * dl;
        if let Some(j) = ir {
            coef[j] += w * dr;
        }
    }
    Ok((total, theta.log_prob_vjp(&coef)))
}

/// Mean DPO loss `-log σ(β [log π_θ/π_ref (y_w) - log π_θ/π_ref (y_l)])` and its gradient.
pub fn dpo_loss<P: Differentiable>(
    theta: &P,
    reference: &dyn Policy,
    batch: &[PreferenceTriplet],
    cfg: DpoConfig,
) -> Result<(f64, Vec<f64>)> {
    AlignmentLoss::Dpo(cfg).evaluate(theta, reference, batch, None)
}

/// Mean IPO loss `(log-ratio margin - 1/(2τ))²` and its gradient.
pub fn ipo_loss<P: Differentiable>(
    theta: &P,
    reference: &dyn Policy,
    batch: &[PreferenceTriplet],
    cfg: IpoConfig,
) -> Result<(f64, Vec<f64>)> {
    AlignmentLoss::Ipo(cfg).evaluate(theta, reference, batch, None)
}

/// Mean SLiC loss `max(0, δ - log π_θ(y_w|x) + log π_θ(y_l|x)) - λ log π_θ(y_ref|x)`.
///
/// The hinge contributes a zero subgradient at its kink.
pub fn slic_loss<P: Differentiable>(
    theta: &P,
    batch: &[PreferenceTriplet],
    cfg: SlicConfig,
) -> Result<(f64, Vec<f64>)> {
    AlignmentLoss::Slic(cfg).validate()?;
    slic_weighted(theta, batch, None, cfg)
}

fn slic_weighted<P: Differentiable>(
    theta: &P,
    batch: &[PreferenceTriplet],
    weights: Option<&[f64]>,
    cfg: SlicConfig,
) -> Result<(f64, Vec<f64>)> {
    weighted(theta, None, batch, weights, |m| {
        let lr = m
            .log_ref_answer
            .ok_or_else(|| SpinError::Argument("SLiC triplet is missing y_ref".into()))?;
        let slack = cfg.delta - m.log_w + m.log_l;
        let (hinge, dw) = if slack > 0.0 { (slack, -1.0) } else { (0.0, 0.0) };
        Ok((hinge - cfg.lambda * lr, [dw, -dw, -cfg.lambda]))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{finite_diff_grad, relative_error};
    use crate::policy::{AnswerSpace, TabularPolicy, TokenPolicy, Vocab};
    use crate::rng::substream;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_tabular(prompts: usize, n: usize, seed: u64) -> TabularPolicy {
        let mut rng = substream(seed, 0);
        let logits = (0..prompts * n)
            .map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        TabularPolicy::from_logits(AnswerSpace::flat(n).unwrap(), prompts, logits).unwrap()
    }

    fn random_batch(prompts: usize, n: usize, len: usize, seed: u64) -> Vec<PreferenceTriplet> {
        let mut rng = substream(seed, 1);
        (0..len)
            .map(|_| {
                PreferenceTriplet::new(rng.gen_range(0..prompts), rng.gen_range(0..n), rng.gen_range(0..n))
                    .with_reference(rng.gen_range(0..n))
            })
            .collect()
    }

    #[test]
    fn dpo_at_reference_is_ln2() {
        let pi = random_tabular(2, 5, 1);
        let batch = random_batch(2, 5, 9, 1);
        let (v, _) = dpo_loss(&pi, &pi, &batch, DpoConfig { beta: 0.1 }).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
        // β → 0 drives every margin to zero.
        let other = random_tabular(2, 5, 2);
        let (v, _) = dpo_loss(&other, &pi, &batch, DpoConfig { beta: 1e-12 }).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-10);
        assert!(dpo_loss(&pi, &pi, &[], DpoConfig::default()).is_err());
    }

    #[test]
    fn ipo_at_reference() {
        let pi = random_tabular(1, 4, 3);
        let batch = random_batch(1, 4, 5, 3);
        let (v, _) = ipo_loss(&pi, &pi, &batch, IpoConfig { tau: 0.1 }).unwrap();
        assert!((v - 25.0).abs() < 1e-12);
    }

    #[test]
    fn ipo_zero_at_target_margin() {
        // Two answers; choose θ so that log-ratio margin of (0 ≻ 1) is exactly 1/(2τ).
        let tau = 0.25;
        let reference = TabularPolicy::uniform(AnswerSpace::flat(2).unwrap(), 1).unwrap();
        let theta = TabularPolicy::from_logits(AnswerSpace::flat(2).unwrap(), 1, vec![0.5 / tau, 0.0]).unwrap();
        let (v, g) = ipo_loss(
            &theta,
            &reference,
            &[PreferenceTriplet::new(0, 0, 1)],
            IpoConfig { tau },
        )
        .unwrap();
        assert!(v < 1e-24);
        assert!(g.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn slic_examples() {
        let space = AnswerSpace::flat(3).unwrap();
        // Equal log-probs on winner and loser, δ = 1, λ → 0 contributes nothing.
        let pi = TabularPolicy::uniform(space.clone(), 1).unwrap();
        let t = PreferenceTriplet::new(0, 0, 1).with_reference(2);
        let (v, _) = slic_loss(
            &pi,
            &[t],
            SlicConfig {
                delta: 1.0,
                lambda: 1e-300,
            },
        )
        .unwrap();
        assert!((v - 1.0).abs() < 1e-15);

        // Margin 2 ≥ δ = 1, log π(y_ref) = -2, λ = 0.5 → 1.0.
        // log-probs (l0, l0 - 2, -2) with normalization fixes l0.
        let l0 = (1.0 - (-2f64).exp()) / (1.0 + (-2f64).exp());
        let l0 = l0.ln();
        let logits = vec![l0, l0 - 2.0, -2.0];
        let pi = TabularPolicy::from_logits(space, 1, logits).unwrap();
        assert!((pi.log_prob(0, 2).unwrap() + 2.0).abs() < 1e-12);
        let (v, _) = slic_loss(
            &pi,
            &[t],
            SlicConfig {
                delta: 1.0,
                lambda: 0.5,
            },
        )
        .unwrap();
        assert!((v - 1.0).abs() < 1e-12);

        let missing = PreferenceTriplet::new(0, 0, 1);
        assert!(slic_loss(&pi, &[missing], SlicConfig::default()).is_err());
    }

    #[test]
    fn gradients_match_finite_differences_tabular() {
        let reference = random_tabular(3, 6, 10);
        for seed in 0..5 {
            let theta = random_tabular(3, 6, 100 + seed);
            let batch = random_batch(3, 6, 12, seed);
            for loss in [
                AlignmentLoss::Dpo(DpoConfig { beta: 0.7 }),
                AlignmentLoss::Ipo(IpoConfig { tau: 0.3 }),
                AlignmentLoss::Slic(SlicConfig {
                    delta: 0.4,
                    lambda: 0.2,
                }),
            ] {
                let (_, g) = loss.evaluate(&theta, &reference, &batch, None).unwrap();
                let fd = finite_diff_grad(
                    |p| {
                        loss.evaluate(&theta.with_params(p.to_vec()).unwrap(), &reference, &batch, None)
                            .unwrap()
                            .0
                    },
                    theta.params(),
                    1e-6,
                );
                assert!(relative_error(&g, &fd) < 1e-5, "{} seed {seed}", loss.name());
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_token() {
        let space = AnswerSpace::new(Vocab::with_size(2).unwrap(), 2).unwrap();
        let mut rng = substream(4, 2);
        let theta = TokenPolicy::random(space.clone(), 2, 1.0, &mut rng).unwrap();
        let reference = TokenPolicy::random(space, 2, 1.0, &mut rng).unwrap();
        let batch = random_batch(2, 6, 10, 4);
        let loss = AlignmentLoss::Dpo(DpoConfig { beta: 0.5 });
        let (_, g) = loss.evaluate(&theta, &reference, &batch, None).unwrap();
        let fd = finite_diff_grad(
            |p| {
                loss.evaluate(&theta.with_params(p.to_vec()).unwrap(), &reference, &batch, None)
                    .unwrap()
                    .0
            },
            theta.params(),
            1e-6,
        );
        assert!(relative_error(&g, &fd) < 1e-5);
    }

    #[test]
    fn untouched_prompts_get_zero_gradient() {
        let reference = random_tabular(3, 4, 1);
        let theta = random_tabular(3, 4, 2);
        let batch: Vec<_> = random_batch(3, 4, 10, 3)
            .into_iter()
            .filter(|t| t.prompt != 1)
            .collect();
        for loss in [
            AlignmentLoss::Dpo(DpoConfig::default()),
            AlignmentLoss::Ipo(IpoConfig::default()),
            AlignmentLoss::Slic(SlicConfig::default()),
        ] {
            let (_, g) = loss.evaluate(&theta, &reference, &batch, None).unwrap();
            assert!(g[4..8].iter().all(|&v| v == 0.0), "{}", loss.name());
        }
    }

    #[test]
    fn losses_are_nonnegative() {
        let reference = random_tabular(2, 5, 5);
        for seed in 0..20 {
            let theta = random_tabular(2, 5, 50 + seed);
            let batch = random_batch(2, 5, 8, seed);
            assert!(dpo_loss(&theta, &reference, &batch, DpoConfig::default()).unwrap().0 >= 0.0);
            assert!(ipo_loss(&theta, &reference, &batch, IpoConfig::default()).unwrap().0 >= 0.0);
        }
    }
}
