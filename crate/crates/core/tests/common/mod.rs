#![allow(dead_code)]

use rand_distr::{Distribution, StandardNormal};
use spinlab::policy::{AnswerSpace, TabularPolicy, Vocab};
use spinlab::rng::SpinRng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pearson statistic and its critical value at `significance`; bins with
/// expected count below 5 are pooled.
pub fn chi_square(counts: &[u64], probs: &[f64], significance: f64) -> (f64, f64) {
    assert_eq!(counts.len(), probs.len());
    let n: u64 = counts.iter().sum();
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut pooled = (0.0, 0.0);
    for (&c, &p) in counts.iter().zip(probs) {
        let e = p * n as f64;
        if e < 5.0 {
            pooled.0 += c as f64;
            pooled.1 += e;
        } else {
            bins.push((c as f64, e));
        }
    }
    if pooled.1 > 0.0 {
        bins.push(pooled);
    }
    let stat: f64 = bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let df = (bins.len() - 1).max(1) as f64;
    let critical = ChiSquared::new(df).unwrap().inverse_cdf(1.0 - significance);
    (stat, critical)
}

pub fn space(v: usize, l: usize) -> AnswerSpace {
    AnswerSpace::new(Vocab::with_size(v).unwrap(), l).unwrap()
}

pub fn random_tabular(space: &AnswerSpace, prompts: usize, scale: f64, rng: &mut SpinRng) -> TabularPolicy {
    let logits = (0..prompts * space.num_answers())
        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect();
    TabularPolicy::from_logits(space.clone(), prompts, logits).unwrap()
}
