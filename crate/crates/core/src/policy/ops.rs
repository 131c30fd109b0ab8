use super::space::{enumeration_cap, AnswerId, PromptId};
use super::tabular::TabularPolicy;
use super::{check_compatible, Policy};
use crate::error::{Result, SpinError};

/// Every answer with its exact probability under `policy` at prompt `x`.
pub fn enumerate_answers(policy: &dyn Policy, x: PromptId) -> Result<Vec<(AnswerId, f64)>> {
    enumerate_answers_with_cap(policy, x, enumeration_cap())
}

pub fn enumerate_answers_with_cap(policy: &dyn Policy, x: PromptId, cap: usize) -> Result<Vec<(AnswerId, f64)>> {
    policy.space().check_enumerable(cap)?;
    Ok(policy.probabilities(x)?.into_iter().enumerate().collect())
}

/// `KL(p(·|x) ‖ q(·|x))` in nats.
pub fn kl_divergence(p: &dyn Policy, q: &dyn Policy, x: PromptId) -> Result<f64> {
    check_compatible(p, q)?;
    let lp = p.log_probabilities(x)?;
    let lq = q.log_probabilities(x)?;
    let kl: f64 = lp
        .iter()
        .zip(&lq)
        .map(|(&a, &b)| {
            let pa = a.exp();
            if pa == 0.0 {
                0.0
            } else {
                pa * (a - b)
            }
        })
        .sum();
    Ok(kl.max(0.0))
}

/// `Σ_x w(x) · KL(p(·|x) ‖ q(·|x))`.
pub fn mean_kl_divergence(p: &dyn Policy, q: &dyn Policy, prompt_weights: &[f64]) -> Result<f64> {
    if prompt_weights.len() != p.num_prompts() {
        return Err(SpinError::Argument(format!(
            "{} prompt weights for {} prompts",
            prompt_weights.len(),
            p.num_prompts()
        )));
    }
    let mut total = 0.0;
    for (x, w) in prompt_weights.iter().enumerate() {
        total += w * kl_divergence(p, q, x)?;
    }
    Ok(total)
}

/// Exact normalized geometric mixture `∝ p(·|x)^α ⊙ q(·|x)^{1-α}`.
///
/// The endpoints return the corresponding input unchanged.
pub fn geometric_mixture(p: &dyn Policy, q: &dyn Policy, alpha: f64) -> Result<TabularPolicy> {
    check_compatible(p, q)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(SpinError::Argument(format!("alpha {alpha} outside [0, 1]")));
    }
    if alpha == 1.0 {
        return p.to_tabular();
    }
    if alpha == 0.0 {
        return q.to_tabular();
    }
    let lp = p.log_prob_table()?;
    let lq = q.log_prob_table()?;
    let logits = lp.iter().zip(&lq).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
    TabularPolicy::from_logits(p.space().clone(), p.num_prompts(), logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{AnswerSpace, TokenPolicy, Vocab};
    use crate::rng::substream;
    use proptest::prelude::*;

    fn two(p: [f64; 2]) -> TabularPolicy {
        TabularPolicy::from_probabilities(AnswerSpace::flat(2).unwrap(), &[p.to_vec()]).unwrap()
    }

    #[test]
    fn kl_examples() {
        let p = two([0.5, 0.5]);
        let q = two([0.25, 0.75]);
        assert_eq!(kl_divergence(&p, &p, 0).unwrap(), 0.0);
        // Direct summation oracle.
        let expected = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        let kl = kl_divergence(&p, &q, 0).unwrap();
        assert!((kl - expected).abs() < 1e-15);
        assert!((kl - 0.14384).abs() < 1e-5);
    }

    #[test]
    fn geometric_examples() {
        let p = two([0.5, 0.5]);
        let q = two([0.8, 0.2]);
        let m = geometric_mixture(&p, &q, 0.5).unwrap();
        // Normalize (sqrt(0.4), sqrt(0.1)).
        let (a, b) = (0.4f64.sqrt(), 0.1f64.sqrt());
        assert!((m.row(0)[0] - a / (a + b)).abs() < 1e-15);
        assert!((m.row(0)[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(geometric_mixture(&p, &q, 1.0).unwrap().row(0), p.row(0));
        assert_eq!(geometric_mixture(&p, &q, 0.0).unwrap().row(0), q.row(0));
        let same = geometric_mixture(&q, &q, 0.3).unwrap();
        for (a, b) in same.row(0).iter().zip(q.row(0)) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(geometric_mixture(&p, &q, 1.5).is_err());
    }

    #[test]
    fn geometric_of_token_policies_enumerates() {
        let s = AnswerSpace::new(Vocab::with_size(2).unwrap(), 2).unwrap();
        let mut rng = substream(2, 0);
        let a = TokenPolicy::random(s.clone(), 1, 1.0, &mut rng).unwrap();
        let b = TokenPolicy::random(s, 1, 1.0, &mut rng).unwrap();
        let m = geometric_mixture(&a, &b, 0.4).unwrap();
        let pa = a.probabilities(0).unwrap();
        let pb = b.probabilities(0).unwrap();
        let un: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x.powf(0.4) * y.powf(0.6)).collect();
        let z: f64 = un.iter().sum();
        for (y, u) in un.iter().enumerate() {
            assert!((m.row(0)[y] - u / z).abs() < 1e-14);
        }
    }

    #[test]
    fn enumeration_cap_enforced() {
        let s = AnswerSpace::new(Vocab::with_size(2).unwrap(), 2).unwrap();
        let pi = TokenPolicy::uniform(s, 1).unwrap();
        let all = enumerate_answers_with_cap(&pi, 0, 6).unwrap();
        assert_eq!(all.len(), 6);
        assert!(matches!(
            enumerate_answers_with_cap(&pi, 0, 5),
            Err(SpinError::Capacity { .. })
        ));
    }

    fn random_tabular(n: usize, seed: u64, stream: u64) -> TabularPolicy {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = substream(seed, stream);
        let logits = (0..n)
            .map(|_| 2.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect::<Vec<f64>>();
        TabularPolicy::from_logits(AnswerSpace::flat(n).unwrap(), 1, logits).unwrap()
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(seed in any::<u64>(), n in 2usize..12) {
            let p = random_tabular(n, seed, 0);
            let q = random_tabular(n, seed, 1);
            prop_assert!(kl_divergence(&p, &q, 0).unwrap() >= 0.0);
            prop_assert!(kl_divergence(&p, &p, 0).unwrap().abs() < 1e-12);
        }

        #[test]
        fn normalization(seed in any::<u64>(), alpha in 0.0f64..=1.0) {
            let p = random_tabular(7, seed, 0);
            let q = random_tabular(7, seed, 1);
            let m = geometric_mixture(&p, &q, alpha).unwrap();
            prop_assert!((m.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
