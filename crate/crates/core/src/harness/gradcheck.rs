//! Finite-difference checks of every training objective on a tiny model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{compare, finite_difference_coords, sample_coords, GradCheckReport, GradMap, Graph, ParamStore, Tensor};
use crate::forge::curation::stage3_tag_observations;
use crate::forge::render::{latent_layout, prompt_layout, student_layout, teacher_layout};
use crate::forge::tasks::{generate_count_task, generate_lookup_task, CountShape, LookupShape};
use crate::forge::ToySample;
use crate::model::{decode_with_latents, AttentionMaskSpec, DecodeConfig, LatentFill, MaskMode, Model, ModelConfig, SequenceLayout};
use crate::rl::{policy_objective, Algo, RlConfig, RolloutGroup};
use crate::sft::losses::{cosine_alignment, label_mask, ntp_loss};
use crate::sft::{teacher_targets, AlignAt, SurrogateStep};

use super::HarnessError;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub layers: usize,
    pub hidden: usize,
    /// Coordinates sampled per objective.
    pub coords: usize,
    pub eps: f64,
    pub rel_tol: f64,
    /// Latent slots per segment in the checked layouts.
    pub latents: usize,
    /// Weight init scale; larger than the training default so gradients
    /// clear the absolute floor by several orders of magnitude.
    pub init_std: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden: 16,
            coords: 64,
            eps: 1e-5,
            rel_tol: 1e-4,
            latents: 2,
            init_std: 0.3,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NamedReport {
    pub objective: &'static str,
    pub report: GradCheckReport,
    /// Largest analytic gradient magnitude among the checked coordinates.
    pub max_grad: f64,
}

fn with_params(model: &Model, params: &ParamStore) -> Model {
    let mut m = model.clone();
    m.set_params(params.clone()).expect("same layout");
    m
}

/// Scalar objective evaluated at a parameter store, plus its analytic gradient
/// at the model's own parameters.
struct Check<'a> {
    name: &'static str,
    value: Box<dyn Fn(&ParamStore) -> Result<f64, HarnessError> + 'a>,
    analytic: GradMap,
}

fn plain_objective<F>(model: &Model, store: &ParamStore, layout: &SequenceLayout, mask: &AttentionMaskSpec, f: &F) -> Result<(f64, GradMap), HarnessError>
where
    F: Fn(&mut Graph, &crate::model::ForwardOutput) -> Result<crate::autodiff::Var, HarnessError>,
{
    let mut g = Graph::new();
    let bound = model.bind_store(&mut g, store, true);
    let out = model.forward(&mut g, &bound, layout, mask, LatentFill::Autoregressive)?;
    let loss = f(&mut g, &out)?;
    let grads = g.backward(loss).map_err(crate::model::ModelError::from)?;
    Ok((g.value(loss).item(), grads.into_params()))
}

fn tagged(sample: ToySample) -> ToySample {
    stage3_tag_observations(&sample).expect("fresh sample")
}

/// Runs all objective checks and returns one report per objective.
pub fn run_gradcheck(config: &GradCheckConfig) -> Result<Vec<NamedReport>, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model_config = ModelConfig {
        init_std: config.init_std,
        ..ModelConfig::tiny(config.layers, config.hidden)
    };
    let model = Model::new(model_config.clone(), config.seed)?;
    // A second model plays the frozen teacher.
    let teacher = Model::new(model_config, config.seed + 1)?;
    let lookup = tagged(generate_lookup_task(&mut rng, LookupShape::default(), 0)?);
    let count = tagged(generate_count_task(&mut rng, CountShape::default(), 1)?);
    let k = config.latents;
    let theta0 = model.params().clone();

    // Next-token prediction on the full interleaved sequence.
    let t_layout = teacher_layout(&lookup);
    let t_mask = AttentionMaskSpec::causal(t_layout.len());
    let ntp = |g: &mut Graph, out: &crate::model::ForwardOutput| -> Result<_, HarnessError> {
        Ok(ntp_loss(g, out.logits, &t_layout, &label_mask(&t_layout))?)
    };
    let ntp_grad = plain_objective(&model, &theta0, &t_layout, &t_mask, &ntp)?.1;

    // Observation alignment with full backpropagation.
    let s_layout = student_layout(&lookup, k);
    let s_mask = AttentionMaskSpec::build(&s_layout, MaskMode::MonetStage2)?;
    let obs_targets = teacher_targets(&teacher, &lookup)?;
    let obs_pos = s_layout.positions_with_role(crate::model::SegmentRole::ObservationText);
    let align_obs = |g: &mut Graph, out: &crate::model::ForwardOutput| -> Result<_, HarnessError> {
        Ok(cosine_alignment(g, &out.hidden, &obs_pos, &obs_targets)?)
    };
    let align_obs_grad = plain_objective(&model, &theta0, &s_layout, &s_mask, &align_obs)?.1;

    // Latent alignment with full backpropagation, against random targets.
    let l_layout = latent_layout(&count, k);
    let l_mask = AttentionMaskSpec::causal(l_layout.len());
    let lat_pos = l_layout.latent_positions();
    let normal = Normal::new(0.0, 1.0).expect("valid");
    let lat_targets: Vec<Tensor> = (0..config.layers)
        .map(|_| {
            Tensor::matrix(
                lat_pos.len(),
                config.hidden,
                (0..lat_pos.len() * config.hidden).map(|_| normal.sample(&mut rng)).collect(),
            )
        })
        .collect();
    let align_lat = |g: &mut Graph, out: &crate::model::ForwardOutput| -> Result<_, HarnessError> {
        Ok(cosine_alignment(g, &out.hidden, &lat_pos, &lat_targets)?)
    };
    let align_lat_grad = plain_objective(&model, &theta0, &l_layout, &l_mask, &align_lat)?.1;

    // Stage totals: NTP plus the alignment term routed through the latents only.
    // Oracle: NTP(θ) + w·A(θ0 frozen, latents(θ)).
    let stage2 = SurrogateStep {
        layout: &s_layout,
        mask: &s_mask,
        align_at: AlignAt::Observations,
        targets: &obs_targets,
        weight: 2.0,
    };
    let stage3 = SurrogateStep {
        layout: &l_layout,
        mask: &l_mask,
        align_at: AlignAt::Latents,
        targets: &lat_targets,
        weight: 2.0,
    };
    let stage2_grad = stage2.run(&model)?.0;
    let stage3_grad = stage3.run(&model)?.0;

    // Policy objectives: rollouts from the starting policy, scored by a
    // perturbed current policy so ratios differ from 1.
    let rl = RlConfig {
        group_size: 4,
        sigma: 1.0,
        latent_count: k,
        max_response_length: 24,
        ..RlConfig::default()
    };
    let decode = DecodeConfig {
        latent_count: k,
        temperature: rl.temperature,
        max_new: rl.max_response_length,
    };
    let prompt = prompt_layout(&lookup);
    let rollouts = (0..rl.group_size)
        .map(|_| decode_with_latents(&model, &prompt, &decode, &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    let group = RolloutGroup {
        sample_id: lookup.id,
        gold: lookup.answer,
        rewards: vec![1.0, 0.0, 0.0, 0.5],
        correct: vec![true, false, false, false],
        advantages: crate::rl::compute_advantages(&[1.0, 0.0, 0.0, 0.5]),
        rollouts,
    };
    let mut perturbed = theta0.clone();
    let jitter = Normal::new(0.0, 0.01).expect("valid");
    for id in theta0.ids() {
        for x in perturbed.get_mut(id).data_mut() {
            *x += jitter.sample(&mut rng);
        }
    }
    let current = with_params(&model, &perturbed);
    let groups = vec![group];
    let grpo_grad = policy_objective(&groups, &current, None, &rl, Algo::Grpo)?.grads;
    let vlpo_grad = policy_objective(&groups, &current, None, &rl, Algo::Vlpo)?.grads;
    let policy = |algo: Algo| {
        let (groups, rl, model) = (&groups, &rl, &model);
        move |p: &ParamStore| -> Result<f64, HarnessError> {
            Ok(policy_objective(groups, &with_params(model, p), None, rl, algo)?.loss)
        }
    };

    let checks: Vec<Check> = vec![
        Check {
            name: "ntp",
            value: Box::new(|p| Ok(plain_objective(&model, p, &t_layout, &t_mask, &ntp)?.0)),
            analytic: ntp_grad,
        },
        Check {
            name: "align_obs",
            value: Box::new(|p| Ok(plain_objective(&model, p, &s_layout, &s_mask, &align_obs)?.0)),
            analytic: align_obs_grad,
        },
        Check {
            name: "align_latent",
            value: Box::new(|p| Ok(plain_objective(&model, p, &l_layout, &l_mask, &align_lat)?.0)),
            analytic: align_lat_grad,
        },
        Check {
            name: "stage2_total",
            value: Box::new(|p| severed_total(&model, p, &stage2)),
            analytic: stage2_grad,
        },
        Check {
            name: "stage3_total",
            value: Box::new(|p| severed_total(&model, p, &stage3)),
            analytic: stage3_grad,
        },
        Check {
            name: "grpo",
            value: Box::new(policy(Algo::Grpo)),
            analytic: grpo_grad,
        },
        Check {
            name: "vlpo",
            value: Box::new(policy(Algo::Vlpo)),
            analytic: vlpo_grad,
        },
    ];

    checks
        .into_iter()
        .map(|c| {
            let base = if matches!(c.name, "grpo" | "vlpo") { &perturbed } else { &theta0 };
            let coords = sample_coords(base, config.coords, &mut rng);
            let mut err = None;
            let numeric = finite_difference_coords(
                |p| match (c.value)(p) {
                    Ok(v) => v,
                    Err(e) => {
                        err.get_or_insert(e);
                        f64::NAN
                    }
                },
                base,
                &coords,
                config.eps,
            );
            if let Some(e) = err {
                return Err(e);
            }
            Ok(NamedReport {
                objective: c.name,
                report: compare(&c.analytic, &coords, &numeric, config.rel_tol),
                max_grad: coords.iter().map(|&(id, i)| c.analytic.coord(id, i).abs()).fold(0.0, f64::max),
            })
        })
        .collect()
}

/// `NTP(θ) + w·A(θ0, latents(θ))`: alignment evaluated by the frozen starting
/// model on the latents that `θ` generates.
pub fn severed_total(frozen: &Model, params: &ParamStore, step: &SurrogateStep<'_>) -> Result<f64, HarnessError> {
    let mut g = Graph::new();
    let bound = frozen.bind_store(&mut g, params, false);
    let out = frozen.forward(&mut g, &bound, step.layout, step.mask, LatentFill::Autoregressive)?;
    let ntp = ntp_loss(&mut g, out.logits, step.layout, &label_mask(step.layout))?;
    let latents: Vec<Tensor> = out.latent_inputs.iter().map(|&v| g.value(v).clone()).collect();
    let align = step.alignment_with_latents(frozen, &latents)?;
    Ok(g.value(ntp).item() + step.weight * align)
}
