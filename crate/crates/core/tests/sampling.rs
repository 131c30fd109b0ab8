mod common;

use std::sync::Arc;

use spinlab::gflownet::{terminating_distribution, GFlowNetSampler};
use spinlab::numeric::total_variation;
use spinlab::policy::{arithmetic_mixture, AnswerSpace, Policy, TabularPolicy, TokenPolicy};
use spinlab::rng::substream;
use spinlab::selfplay::{gather_triplets, loser_sampler, HistoryLength, IterationHistory};
use spinlab::task::{generate_task, TaskSpec};

const SIGNIFICANCE: f64 = 0.001;

#[test]
fn two_answer_frequencies_within_three_sigma() {
    let pi = TabularPolicy::from_probabilities(AnswerSpace::flat(2).unwrap(), &[vec![0.25, 0.75]]).unwrap();
    let mut rng = substream(5, 0);
    let n = 10_000;
    let ones = (0..n).filter(|_| pi.sample(0, &mut rng).unwrap() == 1).count() as f64;
    let sigma = (n as f64 * 0.25 * 0.75).sqrt();
    assert!((ones - 0.75 * n as f64).abs() < 3.0 * sigma, "{ones}");
}

#[test]
fn identical_seeds_identical_streams() {
    let space = common::space(3, 3);
    let mut r = substream(1, 0);
    let pi = TokenPolicy::random(space, 2, 1.0, &mut r).unwrap();
    let draw = |seed| {
        let mut rng = substream(seed, 9);
        (0..500)
            .map(|i| pi.sample(i % 2, &mut rng).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(draw(3), draw(3));
    assert_ne!(draw(3), draw(4));
}

#[test]
fn mixture_sampler_matches_exact_mixture() {
    let space = common::space(2, 2);
    let mut rng = substream(2, 0);
    let a: Arc<dyn Policy> = Arc::new(common::random_tabular(&space, 1, 1.0, &mut rng));
    let b: Arc<dyn Policy> = Arc::new(TokenPolicy::random(space.clone(), 1, 1.0, &mut rng).unwrap());
    let c: Arc<dyn Policy> = Arc::new(TabularPolicy::uniform(space.clone(), 1).unwrap());
    let mix = arithmetic_mixture(vec![a, b, c], vec![0.5, 0.3, 0.2]).unwrap();
    let mut counts = vec![0u64; 6];
    for _ in 0..100_000 {
        counts[mix.sample(0, &mut rng).unwrap()] += 1;
    }
    let probs: Vec<f64> = (0..6).map(|y| mix.probability(0, y).unwrap()).collect();
    let (stat, crit) = common::chi_square(&counts, &probs, SIGNIFICANCE);
    assert!(stat < crit, "{stat} >= {crit}");
}

#[test]
fn sft_winners_follow_data_policy() {
    let task = generate_task(&TaskSpec {
        sft_size: 100_000,
        ..Default::default()
    })
    .unwrap();
    let n = task.space.num_answers();
    let mut counts = vec![0u64; task.num_prompts() * n];
    for &(x, y) in task.sft.pairs() {
        counts[x * n + y] += 1;
    }
    let mut probs = Vec::new();
    for x in 0..task.num_prompts() {
        probs.extend(
            task.data
                .probabilities(x)
                .unwrap()
                .iter()
                .map(|p| p * task.prompt_weights[x]),
        );
    }
    let (stat, crit) = common::chi_square(&counts, &probs, SIGNIFICANCE);
    assert!(stat < crit, "{stat} >= {crit}");
}

#[test]
fn gathered_losers_follow_the_mixture() {
    let task = generate_task(&TaskSpec {
        prompts: 3,
        vocab_size: 2,
        max_len: 2,
        sft_size: 300,
        ..Default::default()
    })
    .unwrap();
    let mut history = IterationHistory::new(task.base.clone());
    history.push(task.data.clone()).unwrap();
    let sampler = loser_sampler(&history, HistoryLength::Finite(2), 1).unwrap();
    let mut rng = substream(8, 0);
    let triplets = gather_triplets(&task.sft, &sampler, 100_000, &mut rng).unwrap();
    let n = task.space.num_answers();
    let mut counts = vec![0u64; 3 * n];
    for t in &triplets {
        counts[t.prompt * n + t.loser] += 1;
    }
    let mut prompt_freq = [0.0; 3];
    for &(x, _) in task.sft.pairs() {
        prompt_freq[x] += 1.0 / task.sft.len() as f64;
    }
    let mut probs = Vec::new();
    for (x, fx) in prompt_freq.iter().enumerate() {
        for y in 0..n {
            probs.push(fx * sampler.probability(x, y).unwrap());
        }
    }
    let (stat, crit) = common::chi_square(&counts, &probs, SIGNIFICANCE);
    assert!(stat < crit, "{stat} >= {crit}");
}

#[test]
fn terminating_distribution_matches_sampling() {
    let space = common::space(3, 2);
    let mut rng = substream(4, 0);
    let q = TokenPolicy::random(space.clone(), 1, 1.0, &mut rng).unwrap();
    let s = GFlowNetSampler::new(q, vec![0.0]).unwrap();
    let exact: Vec<f64> = terminating_distribution(&s, 0)
        .unwrap()
        .into_iter()
        .map(|(_, p)| p)
        .collect();
    assert!((exact.iter().sum::<f64>() - 1.0).abs() < 1e-8);
    let draws = 100_000;
    let mut freq = vec![0.0; space.num_answers()];
    for _ in 0..draws {
        freq[s.sample(0, &mut rng).unwrap()] += 1.0 / draws as f64;
    }
    let tv = total_variation(&exact, &freq);
    assert!(tv < 0.01, "{tv}");
}
