//! Finite-difference agreement checks for every analytic loss gradient.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::gflownet::{sample_exploratory, subtb_loss, GFlowNetSampler, GfnTarget, SubTbConfig, Trajectory};
use crate::losses::{AlignmentLoss, DpoConfig, IpoConfig, PreferenceTriplet, SlicConfig};
use crate::optim::{finite_diff_grad, relative_error};
use crate::policy::{AnswerSpace, Differentiable, Policy, TabularPolicy, TokenPolicy, Vocab};
use crate::rng::{stream, substream, SpinRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckedLoss {
    Dpo,
    Ipo,
    Slic,
    SubTb,
}

impl CheckedLoss {
    pub const ALL: [CheckedLoss; 4] = [
        CheckedLoss::Dpo,
        CheckedLoss::Ipo,
        CheckedLoss::Slic,
        CheckedLoss::SubTb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckedLoss::Dpo => "dpo",
            CheckedLoss::Ipo => "ipo",
            CheckedLoss::Slic => "slic",
            CheckedLoss::SubTb => "subtb",
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub seed: u64,
    pub instances: usize,
    pub eps: f64,
    pub tolerance: f64,
    /// Test hook: scales this loss's analytic gradient by 1.01 before comparing.
    pub corrupt: Option<CheckedLoss>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            seed: 0,
            instances: 100,
            eps: 1e-5,
            tolerance: 1e-5,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub loss: CheckedLoss,
    pub instances: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("tolerance {:e}\n", self.tolerance);
        for e in &self.entries {
            writeln!(
                s,
                "{:<6} instances {:>4}  max_rel_err {:.3e}  {}",
                e.loss.name(),
                e.instances,
                e.max_relative_error,
                if e.passed { "PASS" } else { "FAIL" }
            )
            .unwrap();
        }
        s
    }
}

fn random_space(rng: &mut SpinRng, max_v: usize, lens: std::ops::RangeInclusive<usize>) -> AnswerSpace {
    let v = rng.gen_range(2..=max_v);
    let l = rng.gen_range(lens);
    AnswerSpace::new(Vocab::with_size(v).expect("v >= 2"), l).expect("l >= 1")
}

fn random_tabular(space: &AnswerSpace, prompts: usize, rng: &mut SpinRng) -> TabularPolicy {
    let logits = (0..prompts * space.num_answers())
        .map(|_| Distribution::<f64>::sample(&StandardNormal, rng))
        .collect();
    TabularPolicy::from_logits(space.clone(), prompts, logits).expect("finite logits")
}

fn random_batch(space: &AnswerSpace, prompts: usize, rng: &mut SpinRng) -> Vec<PreferenceTriplet> {
    let n = space.num_answers();
    (0..rng.gen_range(1..=8))
        .map(|_| {
            let w = rng.gen_range(0..n);
            PreferenceTriplet::new(rng.gen_range(0..prompts), w, rng.gen_range(0..n)).with_reference(w)
        })
        .collect()
}

fn check_alignment<P: Differentiable>(
    loss: AlignmentLoss,
    theta: &P,
    reference: &dyn Policy,
    batch: &[PreferenceTriplet],
    opts: &GradCheckOptions,
    scale: f64,
) -> Result<f64> {
    let (_, g) = loss.evaluate(theta, reference, batch, None)?;
    let g: Vec<f64> = g.iter().map(|v| v * scale).collect();
    let fd = finite_diff_grad(
        |p| {
            let t = theta.with_params(p.to_vec()).expect("same shape");
            loss.evaluate(&t, reference, batch, None).expect("valid batch").0
        },
        theta.params(),
        opts.eps,
    );
    Ok(relative_error(&g, &fd))
}

/// Minimum distance of the SLiC hinge argument from its kink over the batch.
fn slic_kink_distance(theta: &dyn Policy, batch: &[PreferenceTriplet], delta: f64) -> Result<f64> {
    let mut d = f64::INFINITY;
    for t in batch {
        let slack = delta - theta.log_prob(t.prompt, t.winner)? + theta.log_prob(t.prompt, t.loser)?;
        d = d.min(slack.abs());
    }
    Ok(d)
}

fn one_instance(which: CheckedLoss, i: usize, rng: &mut SpinRng, opts: &GradCheckOptions) -> Result<f64> {
    let scale = if opts.corrupt == Some(which) { 1.01 } else { 1.0 };
    let token = i % 2 == 1;
    match which {
        CheckedLoss::Dpo | CheckedLoss::Ipo | CheckedLoss::Slic => {
            let loss = match which {
                CheckedLoss::Dpo => AlignmentLoss::Dpo(DpoConfig {
                    beta: rng.gen_range(0.05..2.0),
                }),
                CheckedLoss::Ipo => AlignmentLoss::Ipo(IpoConfig {
                    tau: rng.gen_range(0.05..2.0),
                }),
                _ => AlignmentLoss::Slic(SlicConfig {
                    delta: rng.gen_range(0.1..2.0),
                    lambda: rng.gen_range(0.01..1.0),
                }),
            };
            let space = random_space(rng, 3, 1..=2);
            let prompts = rng.gen_range(1..=3);
            let reference = random_tabular(&space, prompts, rng);
            loop {
                let batch = random_batch(&space, prompts, rng);
                let theta_tab = random_tabular(&space, prompts, rng);
                let theta_tok = TokenPolicy::random(space.clone(), prompts, 1.0, rng)?;
                let theta: &dyn Policy = if token { &theta_tok } else { &theta_tab };
                if let AlignmentLoss::Slic(c) = loss {
                    // Central differences straddling the kink disagree with any subgradient.
                    if slic_kink_distance(theta, &batch, c.delta)? < 1e-3 {
                        continue;
                    }
                }
                return if token {
                    check_alignment(loss, &theta_tok, &reference, &batch, opts, scale)
                } else {
                    check_alignment(loss, &theta_tab, &reference, &batch, opts, scale)
                };
            }
        }
        CheckedLoss::SubTb => {
            let space = random_space(rng, 3, 2..=3);
            let prompts = rng.gen_range(1..=2);
            let prev = TokenPolicy::random(space.clone(), prompts, 1.0, rng)?;
            let base = TokenPolicy::random(space.clone(), prompts, 1.0, rng)?;
            let target = GfnTarget::new(prev, base, rng.gen_range(0.0..=1.0))?;
            let q = TokenPolicy::random(space, prompts, 1.0, rng)?;
            let log_z = (0..prompts).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let sampler = GFlowNetSampler::new(q, log_z)?;
            let batch: Vec<Trajectory> = (0..rng.gen_range(1..=6))
                .map(|_| {
                    let x = rng.gen_range(0..prompts);
                    sample_exploratory(sampler.policy(), x, 1.0, 0.3, rng)
                })
                .collect();
            let cfg = SubTbConfig {
                lambda_subtb: rng.gen_range(0.1..=1.0),
                ..Default::default()
            };
            let (_, g) = subtb_loss(&sampler, &target, &batch, &cfg)?;
            let g: Vec<f64> = g.iter().map(|v| v * scale).collect();
            let fd = finite_diff_grad(
                |p| {
                    subtb_loss(&sampler.with_params(p).expect("same shape"), &target, &batch, &cfg)
                        .expect("valid")
                        .0
                },
                &sampler.params(),
                opts.eps,
            );
            Ok(relative_error(&g, &fd))
        }
    }
}

/// Runs `opts.instances` seeded random instances for each loss.
pub fn grad_check(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = substream(opts.seed, stream::GRAD_CHECK);
    let mut entries = Vec::new();
    for which in CheckedLoss::ALL {
        let mut worst: f64 = 0.0;
        for i in 0..opts.instances {
            let e = one_instance(which, i, &mut rng, opts)?;
            worst = if e.is_nan() { f64::NAN } else { worst.max(e) };
        }
        entries.push(GradCheckEntry {
            loss: which,
            instances: opts.instances,
            max_relative_error: worst,
            passed: worst < opts.tolerance,
        });
    }
    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_losses_pass_and_corruption_is_caught() {
        let opts = GradCheckOptions {
            instances: 10,
            ..Default::default()
        };
        let report = grad_check(&opts).unwrap();
        assert!(report.passed(), "{}", report.to_text());
        assert!(report.entries.iter().all(|e| e.instances == 10));
        for which in CheckedLoss::ALL {
            let bad = grad_check(&GradCheckOptions {
                corrupt: Some(which),
                ..opts.clone()
            })
            .unwrap();
            assert!(!bad.passed());
            for e in &bad.entries {
                assert_eq!(e.passed, e.loss != which);
            }
        }
    }
}
