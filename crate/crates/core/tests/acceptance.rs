//! Exit criteria. Every test prints one `criterion N ...: PASS|FAIL` line.
//!
//! Criteria 8-10 share one end-to-end run through the pipeline, built once.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use monet::autodiff::{compare, finite_difference_coords, sample_coords, Graph, ParamId, ParamStore, Tensor};
use monet::forge::curation::stage3_tag_observations;
use monet::forge::dataset::to_jsonl;
use monet::forge::render::{latent_layout, prompt_layout, student_layout};
use monet::forge::tasks::{generate_lookup_task, LookupShape};
use monet::forge::{curate, CurationConfig, Family, StrongJudge, WeakJudge};
use monet::harness::config::Split;
use monet::harness::pipeline::{self, stage_checkpoint};
use monet::harness::{evaluate, run_gradcheck, GradCheckConfig, MetricsRow, RunConfig, RunDir};
use monet::model::vocab::{LATENT_END, LATENT_START};
use monet::model::{
    decode_with_latents, AttentionMaskSpec, Content, DecodeConfig, LatentFill, MaskMode, Model, ModelConfig, PatchGrid,
    Segment, SegmentRole, SequenceLayout, Step, TokenId,
};
use monet::rl::{compute_advantages, filter_by_accuracy, policy_objective, vlpo_latent_ratio, Algo, RlConfig, RlOutcome, RolloutGroup};
use monet::sft::{measure_obs_accuracy, teacher_targets, AlignAt, ObsAccuracy, SurrogateStep, TrainLog};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: u8, name: &str, ok: bool, detail: String) {
    println!("criterion {n} ({name}): {} - {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

fn tiny_model(seed: u64) -> Model {
    let cfg = ModelConfig {
        init_std: 0.3,
        ..ModelConfig::tiny(2, 16)
    };
    Model::new(cfg, seed).unwrap()
}

fn with_params(model: &Model, params: &ParamStore) -> Model {
    let mut m = model.clone();
    m.set_params(params.clone()).unwrap();
    m
}

fn lookup_sample(seed: u64) -> monet::forge::ToySample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = generate_lookup_task(&mut rng, LookupShape::default(), seed).unwrap();
    stage3_tag_observations(&s).unwrap()
}

#[test]
fn c01_gradient_correctness() {
    let start = Instant::now();
    let reports = run_gradcheck(&GradCheckConfig::default()).unwrap();
    let elapsed = start.elapsed();
    let failed: Vec<&str> = reports.iter().filter(|r| !r.report.passed()).map(|r| r.objective).collect();
    let worst = reports.iter().map(|r| r.report.max_rel).fold(0.0, f64::max);
    let names: Vec<&str> = reports.iter().map(|r| r.objective).collect();
    let ok = failed.is_empty() && reports.len() == 7 && elapsed < Duration::from_secs(120);
    verdict(
        1,
        "gradient correctness",
        ok,
        format!("{names:?} checked, failed {failed:?}, max rel err {worst:.2e}, {:.1}s", elapsed.as_secs_f64()),
    );
}

/// Alignment as a function of the parameters that generate the latents, with
/// the model that scores them frozen at its starting point.
fn severed_alignment(frozen: &Model, step: &SurrogateStep<'_>, params: &ParamStore) -> f64 {
    let mut g = Graph::new();
    let bound = frozen.bind_store(&mut g, params, false);
    let out = frozen.forward(&mut g, &bound, step.layout, step.mask, LatentFill::Autoregressive).unwrap();
    let latents: Vec<Tensor> = out.latent_inputs.iter().map(|&v| g.value(v).clone()).collect();
    step.alignment_with_latents(frozen, &latents).unwrap()
}

#[test]
fn c02_latent_only_backpropagation() {
    let model = tiny_model(11);
    let teacher = tiny_model(12);
    let sample = lookup_sample(3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    let s_layout = student_layout(&sample, 3);
    let s_mask = AttentionMaskSpec::build(&s_layout, MaskMode::MonetStage2).unwrap();
    let obs_targets = teacher_targets(&teacher, &sample).unwrap();
    let l_layout = latent_layout(&sample, 3);
    let l_mask = AttentionMaskSpec::causal(l_layout.len());
    let slots = l_layout.latent_positions().len();
    let lat_targets: Vec<Tensor> = (0..2)
        .map(|_| Tensor::matrix(slots, 16, (0..slots * 16).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect();
    let steps = [
        (
            "observation",
            SurrogateStep {
                layout: &s_layout,
                mask: &s_mask,
                align_at: AlignAt::Observations,
                targets: &obs_targets,
                weight: 1.0,
            },
        ),
        (
            "latent",
            SurrogateStep {
                layout: &l_layout,
                mask: &l_mask,
                align_at: AlignAt::Latents,
                targets: &lat_targets,
                weight: 1.0,
            },
        ),
    ];

    let params = model.params();
    let head: Vec<ParamId> = ["head.w", "head.b"].iter().map(|n| params.find(n).unwrap()).collect();
    let mut ok = true;
    let mut details = Vec::new();
    for (name, step) in &steps {
        let (_, grads) = step.surrogate_gradient(&model).unwrap();
        let head_zero = head
            .iter()
            .all(|&id| grads.get(id).is_none_or(|t| t.data().iter().all(|&x| x == 0.0)));
        let influencing: Vec<ParamId> = params.ids().filter(|id| !head.contains(id)).collect();
        let mut sub = ParamStore::new();
        for &id in &influencing {
            sub.push(params.name(id), params.get(id).clone(), false);
        }
        let coords: Vec<(ParamId, usize)> = sample_coords(&sub, 64, &mut rng)
            .into_iter()
            .map(|(id, i)| (influencing[id.0], i))
            .collect();
        let numeric = finite_difference_coords(|p| severed_alignment(&model, step, p), params, &coords, 1e-5);
        let report = compare(&grads, &coords, &numeric, 1e-4);
        ok &= head_zero && report.passed();
        details.push(format!(
            "{name}: head grad zero {head_zero}, max rel err {:.2e}",
            report.max_rel
        ));
    }
    verdict(2, "latent-only backpropagation", ok, details.join("; "));
}

fn random_layout(rng: &mut ChaCha8Rng) -> SequenceLayout {
    let text = |rng: &mut ChaCha8Rng, role| {
        let n = rng.random_range(1..5);
        Segment::text(role, (0..n).map(|_| TokenId(rng.random_range(8..20))).collect())
    };
    let image = |rng: &mut ChaCha8Rng, role| {
        let (r, c) = (rng.random_range(1..3), rng.random_range(1..3));
        Segment::image(role, PatchGrid::new(r, c, 7, (0..r * c * 7).map(|_| rng.random()).collect()).unwrap())
    };
    let mut segs = vec![text(rng, SegmentRole::QuestionText), image(rng, SegmentRole::QuestionImage)];
    for _ in 0..rng.random_range(1..6) {
        match rng.random_range(0..5) {
            0 | 1 => {
                segs.push(image(rng, SegmentRole::AuxImage));
                segs.push(Segment::latent(rng.random_range(1..4)));
            }
            2 => segs.push(text(rng, SegmentRole::ObservationText)),
            3 => segs.push(Segment::latent(rng.random_range(1..3))),
            _ => segs.push(text(rng, SegmentRole::PlainText)),
        }
    }
    segs.push(text(rng, SegmentRole::Answer));
    SequenceLayout::new(segs).unwrap()
}

/// Role rule per (query, key): causal, and an auxiliary-image key is seen only
/// from its own segment and from the latent segment right after it.
fn brute_force_mask(layout: &SequenceLayout) -> Vec<bool> {
    let roles = layout.roles();
    let seg = layout.segment_index();
    let n = layout.len();
    let mut out = Vec::with_capacity(n * n);
    for q in 0..n {
        for k in 0..n {
            let visible = roles[k] != SegmentRole::AuxImage
                || seg[q] == seg[k]
                || (roles[q] == SegmentRole::Latent && seg[q] == seg[k] + 1);
            out.push(k <= q && visible);
        }
    }
    out
}

fn invert_aux(layout: &SequenceLayout) -> SequenceLayout {
    let mut segs = layout.segments().to_vec();
    for s in segs.iter_mut().filter(|s| s.role == SegmentRole::AuxImage) {
        if let Content::Patches(p) = &mut s.content {
            p.data_mut().iter_mut().for_each(|x| *x = 1.0 - *x);
        }
    }
    SequenceLayout::new(segs).unwrap()
}

/// Non-aux, non-latent positions whose logits change when aux patches are inverted.
fn aux_leaks(model: &Model, layout: &SequenceLayout) -> Vec<usize> {
    let mask = AttentionMaskSpec::build(layout, MaskMode::MonetStage2).unwrap();
    let d = model.config().hidden;
    let latents: Vec<Tensor> = layout
        .latent_positions()
        .iter()
        .map(|&p| Tensor::full(&[d], 0.05 * p as f64))
        .collect();
    let logits = |l: &SequenceLayout| {
        let mut g = Graph::new();
        let b = model.bind(&mut g, false);
        let o = model.forward(&mut g, &b, l, &mask, LatentFill::Given(&latents)).unwrap();
        g.value(o.logits).clone()
    };
    let (a, b) = (logits(layout), logits(&invert_aux(layout)));
    let roles = layout.roles();
    (0..layout.len())
        .filter(|&p| !matches!(roles[p], SegmentRole::AuxImage | SegmentRole::Latent))
        .filter(|&p| a.row(p).iter().zip(b.row(p)).any(|(x, y)| x.to_bits() != y.to_bits()))
        .collect()
}

#[test]
fn c03_attention_flow() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mismatches = (0..100)
        .filter(|_| {
            let layout = random_layout(&mut rng);
            let spec = AttentionMaskSpec::build(&layout, MaskMode::MonetStage2).unwrap();
            spec.as_slice() != brute_force_mask(&layout).as_slice()
        })
        .count();

    let sample = lookup_sample(9);
    let layout = student_layout(&sample, 4);
    let model = Model::new(ModelConfig::default(), 2).unwrap();
    let leaks = aux_leaks(&model, &layout);
    let single = Model::new(ModelConfig { layers: 1, ..ModelConfig::default() }, 2).unwrap();
    let single_leaks = aux_leaks(&single, &layout);
    verdict(
        3,
        "attention flow",
        mismatches == 0 && leaks.is_empty(),
        format!(
            "mask mismatches {mismatches}/100; logits changed by aux perturbation at {} positions with {} layers, {} with 1 layer",
            leaks.len(),
            model.config().layers,
            single_leaks.len()
        ),
    )
}

/// Returns a description of the first contract violation, if any.
fn decoding_violation(model: &Model, decoded: &monet::model::Decoded, k: usize) -> Option<String> {
    let steps = &decoded.trajectory.steps;
    for (i, s) in steps.iter().enumerate() {
        if let Step::Text { token, logprob } = s {
            if *token == LATENT_END && logprob.is_some() {
                return Some(format!("sampled </latent> at step {i}"));
            }
            if *token == LATENT_START {
                let run = steps[i + 1..].iter().take_while(|s| matches!(s, Step::Latent { .. })).count();
                let after = steps.get(i + 1 + run);
                let complete = matches!(after, Some(Step::Text { token, logprob: None }) if *token == LATENT_END);
                if complete && run != k {
                    return Some(format!("{run} latent steps after <latent>, expected {k}"));
                }
                if !complete && !(decoded.trajectory.truncated && i + 1 + run == steps.len()) {
                    return Some(format!("latent segment at step {i} not closed by a forced </latent>"));
                }
            }
        }
    }
    let latents = monet::model::decode::latent_vectors(&decoded.trajectory);
    let mut g = Graph::new();
    let b = model.bind(&mut g, false);
    let mask = AttentionMaskSpec::causal(decoded.layout.len());
    let out = model
        .forward(&mut g, &b, &decoded.layout, &mask, LatentFill::Given(&latents))
        .unwrap();
    let top = g.value(out.hidden[model.config().layers]);
    for (v, &p) in latents.iter().zip(&decoded.layout.latent_positions()) {
        if v.data().iter().zip(top.row(p - 1)).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Some(format!("latent input at position {p} differs from the previous final-layer state"));
        }
    }
    None
}

#[test]
fn c04_decoding_contract() {
    let mut model = Model::new(ModelConfig::default(), 4).unwrap();
    // Favour `<latent>` and `</latent>` so random rollouts exercise both.
    let head_b = model.params().find("head.b").unwrap();
    model.params_mut().get_mut(head_b).data_mut()[LATENT_START.index()] += 3.0;
    model.params_mut().get_mut(head_b).data_mut()[LATENT_END.index()] += 6.0;
    let prompt = prompt_layout(&lookup_sample(1));
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut segments = 0;
    let mut violations = Vec::new();
    for k in [0, 3, 8] {
        let cfg = DecodeConfig {
            latent_count: k,
            temperature: 1.0,
            max_new: 60,
        };
        for _ in 0..12 {
            let d = decode_with_latents(&model, &prompt, &cfg, &mut rng).unwrap();
            segments += d.trajectory.latent_runs().len();
            if let Some(v) = decoding_violation(&model, &d, k) {
                violations.push(format!("K={k}: {v}"));
            }
        }
    }
    verdict(
        4,
        "decoding contract",
        violations.is_empty() && segments > 0,
        format!("{segments} latent segments over 36 rollouts, violations {violations:?}"),
    );
}

fn group_from(model: &Model, sample: &monet::forge::ToySample, cfg: &RlConfig, seed: u64, rewards: Vec<f64>) -> RolloutGroup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let decode = DecodeConfig {
        latent_count: cfg.latent_count,
        temperature: cfg.temperature,
        max_new: cfg.max_response_length,
    };
    let rollouts = (0..rewards.len())
        .map(|_| decode_with_latents(model, &prompt_layout(sample), &decode, &mut rng).unwrap())
        .collect();
    RolloutGroup {
        sample_id: sample.id,
        gold: sample.answer,
        rollouts,
        correct: rewards.iter().map(|&r| r >= 1.0).collect(),
        advantages: compute_advantages(&rewards),
        rewards,
    }
}

fn perturbed(model: &Model, seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = model.params().clone();
    for id in model.params().ids().collect::<Vec<_>>() {
        p.get_mut(id).data_mut().iter_mut().for_each(|x| *x += rng.random_range(-0.01..0.01));
    }
    with_params(model, &p)
}

#[test]
fn c05_vlpo_grpo_relationship() {
    let mut old = tiny_model(30);
    let head_b = old.params().find("head.b").unwrap();
    old.params_mut().get_mut(head_b).data_mut()[LATENT_START.index()] += 2.0;
    let current = perturbed(&old, 31);
    let sample = lookup_sample(4);
    let rewards = vec![1.0, 0.0, 0.0, 0.5];

    // K = 0: `<latent>` is followed directly by the forced `</latent>`.
    let text_cfg = RlConfig {
        latent_count: 0,
        max_response_length: 24,
        ..RlConfig::default()
    };
    let text_only = vec![group_from(&old, &sample, &text_cfg, 1, rewards.clone())];
    let grpo = policy_objective(&text_only, &current, None, &text_cfg, Algo::Grpo).unwrap();
    let vlpo = policy_objective(&text_only, &current, None, &text_cfg, Algo::Vlpo).unwrap();
    let loss_gap = (grpo.loss - vlpo.loss).abs();
    let grad_gap = grpo.grads.max_abs_diff(&vlpo.grads);

    let latent_cfg = RlConfig {
        latent_count: 3,
        sigma: 1.0,
        max_response_length: 24,
        ..RlConfig::default()
    };
    let mixed = vec![group_from(&old, &sample, &latent_cfg, 2, rewards)];
    let latent_steps: usize = mixed[0].rollouts.iter().map(|d| d.trajectory.latent_count()).sum();
    let grpo_latent = policy_objective(&mixed, &current, None, &latent_cfg, Algo::Grpo).unwrap().latent_grads.norm();
    let vlpo_latent = policy_objective(&mixed, &current, None, &latent_cfg, Algo::Vlpo).unwrap().latent_grads.norm();

    let h = [0.3, -1.2, 2.0];
    let same = vlpo_latent_ratio(&h, &h, 10.0).unwrap();
    let mut far = vec![0.0; 200];
    far[0] = 1.0;
    let shifted: Vec<f64> = far.iter().map(|x| x + 1.0).collect();
    let e_inv = vlpo_latent_ratio(&far, &shifted, 10.0).unwrap();

    let ok = loss_gap <= 1e-12
        && grad_gap <= 1e-12
        && latent_steps > 0
        && grpo_latent == 0.0
        && vlpo_latent > 0.0
        && same == 1.0
        && (e_inv - (-1.0f64).exp()).abs() <= 1e-12;
    verdict(
        5,
        "VLPO/GRPO relationship",
        ok,
        format!(
            "text-only gaps loss {loss_gap:.1e} grad {grad_gap:.1e}; {latent_steps} latent steps: GRPO latent grad {grpo_latent:.1e}, VLPO {vlpo_latent:.2e}; ratio(h,h)={same}, ratio(||d||^2=200)={e_inv:.15}"
        ),
    );
}

#[test]
fn c06_advantages_and_filtering() {
    let adv = compute_advantages(&[1.0, 0.0, 0.0, 0.0]).unwrap();
    let expected = [1.7321, -0.5774, -0.5774, -0.5774];
    let adv_ok = adv.iter().zip(expected).all(|(a, e)| (a - e).abs() <= 1e-4);

    let tallies = [(0, 8), (1, 8), (4, 8), (5, 8), (8, 8), (3, 8), (0, 4), (2, 4)];
    let kept = filter_by_accuracy(&tallies, RlConfig::default().accuracy_threshold);
    let expected_kept: Vec<usize> = tallies
        .iter()
        .enumerate()
        .filter(|(_, &(c, n))| c > 0 && (c as f64 / n as f64) < 0.6)
        .map(|(i, _)| i)
        .collect();
    let filter_ok = kept == vec![1, 2, 5, 7] && kept == expected_kept;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let rewards: Vec<f64> = (0..8).map(|_| if rng.random_bool(0.4) { 1.1 } else { rng.random_range(0.0..0.2) }).collect();
        if let Some(a) = compute_advantages(&rewards) {
            let mean = a.iter().sum::<f64>() / a.len() as f64;
            let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / a.len() as f64).sqrt();
            worst = worst.max(mean.abs()).max((std - 1.0).abs());
        }
    }
    verdict(
        6,
        "advantages and filtering",
        adv_ok && filter_ok && worst <= 1e-10,
        format!("advantages {adv:.4?}, kept {kept:?}, worst moment error {worst:.1e}"),
    );
}

#[test]
fn c07_curation_soundness() {
    let cfg = CurationConfig {
        sample_count: 2000,
        seed: 17,
        ..CurationConfig::default()
    };
    let (records, report) = curate(&cfg).unwrap();
    let weak = WeakJudge;
    let strong = StrongJudge;
    let judged_ok = records.iter().all(|r| {
        let plain = monet::forge::curation::strip_observation_tags(&r.sample);
        weak.answer(&plain) != Some(plain.answer) && strong.answer(&plain) == Some(plain.answer)
    });
    let leaked = records
        .iter()
        .filter(|r| r.sample.corrupted || report.corrupted_ids.contains(&r.sample.id))
        .count();
    let first = to_jsonl(&records).unwrap();
    let second = to_jsonl(&curate(&cfg).unwrap().0).unwrap();
    let ok = judged_ok && leaked == 0 && !report.corrupted_ids.is_empty() && first == second;
    verdict(
        7,
        "curation soundness",
        ok,
        format!(
            "{} kept of {}, judges consistent {judged_ok}, {} corrupted candidates, {leaked} leaked, byte-identical rerun {}",
            records.len(),
            report.candidates,
            report.corrupted_ids.len(),
            first == second
        ),
    );
}

struct EndToEnd {
    train_size: usize,
    lookup_eval: usize,
    untrained: ObsAccuracy,
    stage1_log: TrainLog,
    stage1_time: Duration,
    sft_time: Duration,
    sft_k0: MetricsRow,
    sft_k8: MetricsRow,
    vlpo: RlOutcome,
    vlpo_k8: MetricsRow,
    grpo: RlOutcome,
}

fn end_to_end() -> &'static EndToEnd {
    static RUN: OnceLock<EndToEnd> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path());
        let cfg = RunConfig::default();
        pipeline::gen_data(&cfg, &run).unwrap();
        let train = pipeline::load_split(&run, Split::Train).unwrap();
        let eval = pipeline::load_split(&run, Split::Eval).unwrap();
        let diag: Vec<_> = eval.iter().take(cfg.stage1.eval_samples).cloned().collect();
        let fresh = Model::new(cfg.model.clone(), cfg.seed).unwrap();
        let untrained = measure_obs_accuracy(&fresh, &diag).unwrap();

        let start = Instant::now();
        let stage1_log = pipeline::train_sft(&cfg, &run, 1).unwrap();
        let stage1_time = start.elapsed();
        pipeline::train_sft(&cfg, &run, 2).unwrap();
        pipeline::train_sft(&cfg, &run, 3).unwrap();
        let k_train = cfg.stage3.k_train;
        let sft = pipeline::load_checkpoint(&run, stage_checkpoint(3)).unwrap();
        let sft_k0 = evaluate(&sft, &eval, 0, "acceptance", "sft").unwrap();
        let sft_k8 = evaluate(&sft, &eval, k_train, "acceptance", "sft").unwrap();
        let sft_time = start.elapsed();

        let vlpo = pipeline::train_rl(&cfg, &run, Algo::Vlpo).unwrap();
        let rl_model = pipeline::load_checkpoint(&run, &pipeline::rl_checkpoint(Algo::Vlpo)).unwrap();
        let vlpo_k8 = evaluate(&rl_model, &eval, k_train, "acceptance", "rl-vlpo").unwrap();
        let grpo = pipeline::train_rl(&cfg, &run, Algo::Grpo).unwrap();
        EndToEnd {
            train_size: train.len(),
            lookup_eval: eval.iter().filter(|s| s.family == Family::Lookup).count(),
            untrained,
            stage1_log,
            stage1_time,
            sft_time,
            sft_k0,
            sft_k8,
            vlpo,
            vlpo_k8,
            grpo,
        }
    })
}

#[test]
fn c08_warmup_diagnostic() {
    let e = end_to_end();
    let last = e.stage1_log.diagnostics().last().map(|(_, a)| a);
    let final_gap = last.map_or(f64::NAN, |a| a.gap());
    let ok = e.train_size >= 2000
        && e.untrained.gap() < 0.02
        && final_gap > 0.10
        && e.stage1_time < Duration::from_secs(15 * 60);
    verdict(
        8,
        "warm-up diagnostic",
        ok,
        format!(
            "{} training samples; gap {:.1}pp untrained -> {:.1}pp after warm-up; {:.0}s",
            e.train_size,
            100.0 * e.untrained.gap(),
            100.0 * final_gap,
            e.stage1_time.as_secs_f64()
        ),
    );
}

#[test]
fn c09_latent_benefit() {
    let e = end_to_end();
    let k0 = e.sft_k0.lookup_accuracy.unwrap_or(0.0);
    let k8 = e.sft_k8.lookup_accuracy.unwrap_or(0.0);
    let ok = k8 - k0 >= 0.15 && e.sft_time < Duration::from_secs(45 * 60);
    verdict(
        9,
        "latent benefit",
        ok,
        format!(
            "lookup accuracy K=0 {:.3}, K=8 {:.3} (margin {:.1}pp, {} eval samples); {:.0}s",
            k0,
            k8,
            100.0 * (k8 - k0),
            e.lookup_eval,
            e.sft_time.as_secs_f64()
        ),
    );
}

#[test]
fn c10_rl_direction() {
    let e = end_to_end();
    let rewards = e.vlpo.batch_rewards();
    let window = (rewards.len() / 4).max(1);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let first = mean(&rewards[..window]);
    let last = mean(&rewards[rewards.len() - window..]);
    let before = e.sft_k8.accuracy;
    let after = e.vlpo_k8.accuracy;
    let grpo_zero = e.grpo.log.iter().all(|r| r.latent_grad_norm == 0.0);
    let ok = after >= before - 0.01 && first < last && grpo_zero && !e.grpo.log.is_empty();
    verdict(
        10,
        "RL improvement direction",
        ok,
        format!(
            "eval K=8 {before:.4} -> {after:.4}; reward window {first:.3} -> {last:.3} over {} batches; GRPO latent grad norm zero on all {} rows: {grpo_zero}",
            rewards.len(),
            e.grpo.log.len()
        ),
    );
}
