use monet::forge::curation::stage3_tag_observations;
use monet::forge::tasks::{generate_lookup_task, LookupShape};
use monet::forge::ToySample;
use monet::model::vocab::{self, LATENT_START};
use monet::model::{Model, ModelConfig, Step, Trajectory};
use monet::rl::{
    compute_advantages, compute_reward, filter_by_accuracy, policy_objective, rollout_group, text_ratio, train_rl,
    vlpo_latent_ratio, Algo, RlConfig, RlError, RolloutGroup, FORMAT_BONUS,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn policy(seed: u64) -> Model {
    let mut m = Model::new(
        ModelConfig {
            init_std: 0.3,
            ..ModelConfig::tiny(2, 16)
        },
        seed,
    )
    .unwrap();
    let b = m.params().find("head.b").unwrap();
    m.params_mut().get_mut(b).data_mut()[LATENT_START.index()] += 2.0;
    m
}

fn prompt(seed: u64) -> ToySample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    stage3_tag_observations(&generate_lookup_task(&mut rng, LookupShape::default(), seed).unwrap()).unwrap()
}

fn config(latents: usize) -> RlConfig {
    RlConfig {
        group_size: 4,
        latent_count: latents,
        max_response_length: 20,
        sigma: 1.0,
        ..RlConfig::default()
    }
}

fn group(model: &Model, cfg: &RlConfig, seed: u64, advantages: Vec<f64>) -> RolloutGroup {
    let mut g = rollout_group(&prompt(seed), model, cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    g.rollouts.truncate(advantages.len());
    g.advantages = Some(advantages);
    g
}

fn nudged(model: &Model, seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = model.clone();
    for id in model.params().ids().collect::<Vec<_>>() {
        m.params_mut().get_mut(id).data_mut().iter_mut().for_each(|x| *x += rng.random_range(-0.01..0.01));
    }
    m
}

fn shift_logprobs(g: &mut RolloutGroup, by: impl Fn(usize) -> f64) {
    for (i, d) in g.rollouts.iter_mut().enumerate() {
        for s in &mut d.trajectory.steps {
            if let Step::Text { logprob: Some(lp), .. } = s {
                *lp += by(i);
            }
        }
    }
}

#[test]
fn advantages_reference_values() {
    let a = compute_advantages(&[1.0, 0.0, 0.0, 0.0]).unwrap();
    let want = [3f64.sqrt(), -1.0 / 3f64.sqrt(), -1.0 / 3f64.sqrt(), -1.0 / 3f64.sqrt()];
    for (x, y) in a.iter().zip(want) {
        assert!((x - y).abs() < 1e-12);
    }
    assert_eq!(compute_advantages(&[1.0, 0.0]).unwrap(), vec![1.0, -1.0]);
    assert_eq!(compute_advantages(&[0.3; 5]), None);
    assert_eq!(compute_advantages(&[1.0]), None);
}

#[test]
fn accuracy_filter_boundaries() {
    let tallies = [(0, 10), (1, 10), (5, 10), (6, 10), (7, 10), (10, 10), (0, 0)];
    assert_eq!(filter_by_accuracy(&tallies, 0.6), vec![1, 2]);
    assert_eq!(filter_by_accuracy(&tallies, 1.01), vec![1, 2, 3, 4, 5]);
}

#[test]
fn latent_ratio_reference_values() {
    let h = vec![0.25; 16];
    assert_eq!(vlpo_latent_ratio(&h, &h, 10.0).unwrap(), 1.0);
    let old = vec![0.0; 2];
    let cur = vec![10.0, 10.0];
    assert!((vlpo_latent_ratio(&old, &cur, 10.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
    assert!(matches!(vlpo_latent_ratio(&[0.0], &[0.0, 1.0], 1.0), Err(RlError::Dimension { .. })));
}

#[test]
fn text_ratio_tracks_recorded_logprob() {
    let model = policy(1);
    let cfg = config(2);
    let mut g = group(&model, &cfg, 1, vec![1.0]);
    let d = &g.rollouts[0];
    let step = d.trajectory.steps.iter().position(|s| matches!(s, Step::Text { logprob: Some(_), .. })).unwrap();
    assert!((text_ratio(&model, d, step, cfg.temperature).unwrap() - 1.0).abs() < 1e-12);
    shift_logprobs(&mut g, |_| -0.5);
    let r = text_ratio(&model, &g.rollouts[0], step, cfg.temperature).unwrap();
    assert!((r - 0.5f64.exp()).abs() < 1e-12);
    let latent = g.rollouts[0].trajectory.steps.iter().position(|s| matches!(s, Step::Latent { .. }));
    if let Some(i) = latent {
        assert!(matches!(text_ratio(&model, &g.rollouts[0], i, cfg.temperature), Err(RlError::WrongStepKind { .. })));
    }
}

#[test]
fn vlpo_reduces_to_grpo_without_latent_steps() {
    let old = policy(2);
    let cur = nudged(&old, 3);
    let cfg = config(0);
    let groups = vec![group(&old, &cfg, 2, vec![1.5, -0.5, -0.5, -0.5])];
    assert!(groups[0].rollouts.iter().all(|d| d.trajectory.latent_count() == 0));
    let a = policy_objective(&groups, &cur, None, &cfg, Algo::Grpo).unwrap();
    let b = policy_objective(&groups, &cur, None, &cfg, Algo::Vlpo).unwrap();
    assert!((a.loss - b.loss).abs() <= 1e-12);
    assert!(a.grads.max_abs_diff(&b.grads) <= 1e-12);
}

#[test]
fn only_vlpo_sends_gradient_through_latents() {
    let old = policy(4);
    let cur = nudged(&old, 5);
    let cfg = config(3);
    let groups = vec![group(&old, &cfg, 4, vec![1.0, -1.0, 0.5, -0.5])];
    assert!(groups[0].rollouts.iter().any(|d| d.trajectory.latent_count() > 0));
    let grpo = policy_objective(&groups, &cur, None, &cfg, Algo::Grpo).unwrap();
    let vlpo = policy_objective(&groups, &cur, None, &cfg, Algo::Vlpo).unwrap();
    assert!(grpo.latent_grads.is_empty());
    assert_eq!(grpo.ratios.latent_count, 0);
    assert!(vlpo.latent_grads.norm() > 0.0);
    assert!(vlpo.ratios.latent_count > 0);
    // Same policy: every latent ratio is exactly one and the latent gradient vanishes.
    let on_policy = policy_objective(&groups, &old, None, &cfg, Algo::Vlpo).unwrap();
    assert_eq!(on_policy.ratios.latent_min, 1.0);
    assert_eq!(on_policy.latent_grads.norm(), 0.0);
}

#[test]
fn loss_is_negated_mean_advantage_on_policy() {
    let model = policy(6);
    let cfg = config(2);
    let groups = vec![group(&model, &cfg, 6, vec![1.0, 2.0])];
    for algo in [Algo::Grpo, Algo::Vlpo] {
        let out = policy_objective(&groups, &model, None, &cfg, algo).unwrap();
        assert!((out.loss + 1.5).abs() < 1e-12, "{algo}: {}", out.loss);
    }
}

#[test]
fn saturated_ratios_give_zero_gradient() {
    let model = policy(7);
    let cfg = config(0);
    let adv = vec![1.0, -1.0, 1.0, -1.0];
    let mut g = group(&model, &cfg, 7, adv.clone());
    // Ratios far above 1+ε for A>0 and far below 1-ε for A<0 sit on the clipped branch.
    shift_logprobs(&mut g, |i| if adv[i] > 0.0 { -5.0 } else { 5.0 });
    let out = policy_objective(&[g], &model, None, &cfg, Algo::Grpo).unwrap();
    assert_eq!(out.grads.norm(), 0.0);
    assert!(out.ratios.text_max > 1.0 + cfg.clip_eps);
}

#[test]
fn positive_advantage_raises_trajectory_likelihood() {
    let model = policy(8);
    let cfg = config(2);
    let g = group(&model, &cfg, 8, vec![1.0]);
    let out = policy_objective(std::slice::from_ref(&g), &model, None, &cfg, Algo::Vlpo).unwrap();
    let mut stepped = model.clone();
    for (id, grad) in out.grads.iter() {
        let p = stepped.params_mut().get_mut(*id);
        p.data_mut().iter_mut().zip(grad.data()).for_each(|(x, d)| *x -= 1e-3 * d);
    }
    let after = policy_objective(&[g], &stepped, None, &cfg, Algo::Grpo).unwrap();
    // Loss is minus the mean ratio, so a lower loss means higher likelihood.
    assert!(after.loss < -1.0, "{}", after.loss);
}

#[test]
fn kl_against_identical_reference_is_zero() {
    let old = policy(9);
    let cur = nudged(&old, 10);
    let base = config(2);
    let with_kl = RlConfig {
        kl_coeff: 0.5,
        ..base.clone()
    };
    let groups = vec![group(&old, &base, 9, vec![1.0, -1.0])];
    let a = policy_objective(&groups, &cur, None, &base, Algo::Vlpo).unwrap();
    let b = policy_objective(&groups, &cur, Some(&cur), &with_kl, Algo::Vlpo).unwrap();
    assert!((a.loss - b.loss).abs() < 1e-12);
    let c = policy_objective(&groups, &cur, Some(&old), &with_kl, Algo::Vlpo).unwrap();
    assert!(c.loss > a.loss);
}

#[test]
fn unscored_groups_are_skipped() {
    let model = policy(11);
    let cfg = config(2);
    let mut g = group(&model, &cfg, 11, vec![1.0]);
    g.advantages = None;
    let out = policy_objective(&[g], &model, None, &cfg, Algo::Vlpo).unwrap();
    assert!(out.grads.is_empty());
    assert_eq!(out.trajectories, 0);
}

#[test]
fn greedy_rollouts_are_identical() {
    let model = policy(12);
    let cfg = RlConfig {
        temperature: 0.0,
        ..config(3)
    };
    let g = rollout_group(&prompt(12), &model, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(g.rollouts.windows(2).all(|w| w[0].trajectory == w[1].trajectory));
    assert_eq!(g.advantages, None);
}

#[test]
fn reward_requires_boxed_answer() {
    let t = |tokens: &[vocab::TokenId]| Trajectory {
        steps: tokens.iter().map(|&token| Step::Text { token, logprob: Some(0.0) }).collect(),
        truncated: false,
    };
    let gold = vocab::number(3);
    assert_eq!(compute_reward(&t(&[vocab::BOXED_OPEN, gold, vocab::BOXED_CLOSE]), gold), 1.0 + FORMAT_BONUS);
    assert_eq!(compute_reward(&t(&[vocab::BOXED_OPEN, vocab::number(2), vocab::BOXED_CLOSE]), gold), FORMAT_BONUS);
    assert_eq!(compute_reward(&t(&[gold]), gold), 0.0);
}

#[test]
fn training_loop_logs_every_update_and_is_reproducible() {
    let prompts: Vec<ToySample> = (0..6).map(prompt).collect();
    let cfg = RlConfig {
        prompts_per_batch: 3,
        updates_per_batch: 2,
        ..config(2)
    };
    let run = |algo| {
        let mut m = policy(13);
        let out = train_rl(&mut m, &prompts, &cfg, algo).unwrap();
        (m, out)
    };
    let (m1, o1) = run(Algo::Vlpo);
    let (m2, o2) = run(Algo::Vlpo);
    assert_eq!(o1.log.len(), 4);
    assert_eq!(o1.batch_rewards().len(), 2);
    assert!(m1.params().bit_eq(m2.params()));
    assert_eq!(o1.log, o2.log);
    let (_, grpo) = run(Algo::Grpo);
    assert!(grpo.log.iter().all(|r| r.latent_grad_norm == 0.0));
}

#[test]
fn training_rejects_zero_temperature() {
    let mut m = policy(14);
    let cfg = RlConfig {
        temperature: 0.0,
        ..config(2)
    };
    assert!(train_rl(&mut m, &[prompt(0)], &cfg, Algo::Vlpo).is_err());
}

proptest! {
    #[test]
    fn advantages_are_standardized(rewards in prop::collection::vec(0.0f64..1.2, 2..16)) {
        if let Some(a) = compute_advantages(&rewards) {
            let n = a.len() as f64;
            let mean = a.iter().sum::<f64>() / n;
            let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-10);
            prop_assert!((var.sqrt() - 1.0).abs() < 1e-10);
        } else {
            prop_assert!(rewards.iter().all(|&r| r == rewards[0]));
        }
    }

    #[test]
    fn latent_ratio_is_a_gaussian_kernel(d in prop::collection::vec(-3.0f64..3.0, 4), sigma in 0.5f64..20.0) {
        let zero = vec![0.0; 4];
        let r = vlpo_latent_ratio(&zero, &d, sigma).unwrap();
        let sq: f64 = d.iter().map(|x| x * x).sum();
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert!((r.ln() + sq / (2.0 * sigma * sigma)).abs() < 1e-9);
        prop_assert_eq!(r, vlpo_latent_ratio(&d, &zero, sigma).unwrap());
    }
}
