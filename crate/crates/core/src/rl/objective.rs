//! Clipped group-relative objective with text and latent probability ratios.

use serde::Serialize;

use crate::autodiff::{GradMap, Graph, Tensor, Var};
use crate::model::decode::{latent_vectors, sampling_exclusions};
use crate::model::{AttentionMaskSpec, Decoded, LatentFill, Model, Step};
use crate::par::par_map;
use std::sync::Arc;

use super::config::{Algo, RlConfig};
use super::rollout::RolloutGroup;
use super::RlError;

/// `exp(-|h_old - h_theta|² / (2σ²))`, the likelihood ratio of a latent step
/// under isotropic Gaussians centred on the two policies' latents.
pub fn vlpo_latent_ratio(h_old: &[f64], h_theta: &[f64], sigma: f64) -> Result<f64, RlError> {
    if h_old.len() != h_theta.len() {
        return Err(RlError::Dimension {
            old: h_old.len(),
            current: h_theta.len(),
        });
    }
    let d2: f64 = h_old.iter().zip(h_theta).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-d2 / (2.0 * sigma * sigma)).exp())
}

/// Graph form of [`vlpo_latent_ratio`] over rows; `h_old` is a constant.
pub fn vlpo_latent_ratio_rows(g: &mut Graph, h_old: Tensor, h_theta: Var, sigma: f64) -> Result<Var, RlError> {
    let old = g.constant(h_old);
    let old = g.stop_gradient(old);
    let d2 = g.sq_dist_rows(h_theta, old)?;
    let e = g.scale(d2, -1.0 / (2.0 * sigma * sigma));
    Ok(g.exp(e))
}

fn temperature_scale(t: f64) -> f64 {
    if t > 0.0 {
        1.0 / t
    } else {
        1.0
    }
}

/// Current-policy quantities along one rollout, teacher-forced with the
/// recorded latents.
struct Scored {
    /// Log-probabilities of optimizable text steps (vector).
    text_logprob: Option<Var>,
    text_old: Vec<f64>,
    /// Current-policy latents at each latent step (`n × d`).
    latent_theta: Option<Var>,
    latent_old: Option<Tensor>,
}

fn score(g: &mut Graph, model: &Model, decoded: &Decoded, temperature: f64, trainable: bool) -> Result<Scored, RlError> {
    let cfg = model.config();
    let layout = &decoded.layout;
    let steps = &decoded.trajectory.steps;
    let offset = layout.len() - steps.len();
    let bound = model.bind(g, trainable);
    let mask = AttentionMaskSpec::causal(layout.len());
    let latents = latent_vectors(&decoded.trajectory);
    let out = model.forward(g, &bound, layout, &mask, LatentFill::Given(&latents))?;

    let mut rows = Vec::new();
    let mut toks = Vec::new();
    let mut text_old = Vec::new();
    let mut latent_rows = Vec::new();
    for (i, step) in steps.iter().enumerate() {
        let p = offset + i;
        match step {
            Step::Text {
                token,
                logprob: Some(lp),
            } => {
                rows.push(p - 1);
                toks.push(token.index());
                text_old.push(*lp);
            }
            Step::Text { logprob: None, .. } => {}
            Step::Latent { .. } => latent_rows.push(p - 1),
        }
    }
    let text_logprob = if rows.is_empty() {
        None
    } else {
        let sel = g.select_rows(out.logits, &rows)?;
        let scaled = g.scale(sel, temperature_scale(temperature));
        let excluded = Arc::new(sampling_exclusions(cfg.vocab_size));
        let lse = g.logsumexp_rows(scaled, Some(excluded))?;
        let picked = g.pick_cols(scaled, &toks)?;
        Some(g.sub(picked, lse)?)
    };
    let (latent_theta, latent_old) = if latent_rows.is_empty() {
        (None, None)
    } else {
        let top = out.hidden[cfg.layers];
        let theta = g.select_rows(top, &latent_rows)?;
        let old: Vec<Vec<f64>> = latents.iter().map(|t| t.data().to_vec()).collect();
        (Some(theta), Some(Tensor::from_rows(&old)))
    };
    Ok(Scored {
        text_logprob,
        text_old,
        latent_theta,
        latent_old,
    })
}

/// Teacher-forced probability ratio of the text step at `step` in `decoded`.
pub fn text_ratio(current: &Model, decoded: &Decoded, step: usize, temperature: f64) -> Result<f64, RlError> {
    let steps = &decoded.trajectory.steps;
    let old = match steps.get(step) {
        Some(Step::Text {
            logprob: Some(lp), ..
        }) => *lp,
        _ => {
            return Err(RlError::WrongStepKind {
                step,
                expected: "sampled text",
            })
        }
    };
    let index = steps[..step]
        .iter()
        .filter(|s| matches!(s, Step::Text { logprob: Some(_), .. }))
        .count();
    let mut g = Graph::new();
    let scored = score(&mut g, current, decoded, temperature, false)?;
    let lp = g.value(scored.text_logprob.expect("at least this step")).data()[index];
    Ok((lp - old).exp())
}

fn clipped_sum(g: &mut Graph, ratio: Var, advantage: f64, eps: f64) -> Result<Var, RlError> {
    let unclipped = g.scale(ratio, advantage);
    let c = g.clip(ratio, 1.0 - eps, 1.0 + eps);
    let clipped = g.scale(c, advantage);
    let m = g.minimum(unclipped, clipped)?;
    Ok(g.sum(m))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RatioStats {
    pub text_count: usize,
    pub text_sum: f64,
    pub text_min: f64,
    pub text_max: f64,
    pub latent_count: usize,
    pub latent_sum: f64,
    pub latent_min: f64,
}

impl RatioStats {
    fn absorb(&mut self, text: &[f64], latent: &[f64]) {
        for &r in text {
            self.text_min = if self.text_count == 0 { r } else { self.text_min.min(r) };
            self.text_max = if self.text_count == 0 { r } else { self.text_max.max(r) };
            self.text_sum += r;
            self.text_count += 1;
        }
        for &r in latent {
            self.latent_min = if self.latent_count == 0 { r } else { self.latent_min.min(r) };
            self.latent_sum += r;
            self.latent_count += 1;
        }
    }

    fn merge(&mut self, o: &RatioStats) {
        if o.text_count > 0 {
            self.text_min = if self.text_count == 0 { o.text_min } else { self.text_min.min(o.text_min) };
            self.text_max = if self.text_count == 0 { o.text_max } else { self.text_max.max(o.text_max) };
        }
        if o.latent_count > 0 {
            self.latent_min = if self.latent_count == 0 {
                o.latent_min
            } else {
                self.latent_min.min(o.latent_min)
            };
        }
        self.text_sum += o.text_sum;
        self.text_count += o.text_count;
        self.latent_sum += o.latent_sum;
        self.latent_count += o.latent_count;
    }

    pub fn text_mean(&self) -> Option<f64> {
        (self.text_count > 0).then(|| self.text_sum / self.text_count as f64)
    }

    pub fn latent_mean(&self) -> Option<f64> {
        (self.latent_count > 0).then(|| self.latent_sum / self.latent_count as f64)
    }
}

#[derive(Clone, Debug, Default)]
pub struct ObjectiveOutput {
    /// Negated objective.
    pub loss: f64,
    /// Gradient of `loss`.
    pub grads: GradMap,
    /// Part of `grads` contributed by latent-step ratio terms.
    pub latent_grads: GradMap,
    pub ratios: RatioStats,
    /// Trajectories that contributed at least one term.
    pub trajectories: usize,
}

struct TrajectoryTerm {
    loss: f64,
    grads: GradMap,
    latent_grads: GradMap,
    ratios: RatioStats,
    contributed: bool,
}

#[allow(clippy::too_many_arguments)]
fn trajectory_term(
    current: &Model,
    reference: Option<&Model>,
    decoded: &Decoded,
    advantage: f64,
    weight: f64,
    config: &RlConfig,
    algo: Algo,
) -> Result<TrajectoryTerm, RlError> {
    let mut g = Graph::new();
    let s = score(&mut g, current, decoded, config.temperature, true)?;
    let n_text = s.text_old.len();
    let n_latent = match algo {
        Algo::Grpo => 0,
        Algo::Vlpo => s.latent_old.as_ref().map_or(0, |t| t.rows()),
    };
    let steps = n_text + n_latent;
    let mut ratios = RatioStats::default();
    if steps == 0 {
        return Ok(TrajectoryTerm {
            loss: 0.0,
            grads: GradMap::new(),
            latent_grads: GradMap::new(),
            ratios,
            contributed: false,
        });
    }
    let norm = -weight / steps as f64;

    let mut text_loss = None;
    let mut text_ratios = Vec::new();
    if let Some(lp) = s.text_logprob {
        let old = g.constant(Tensor::vector(s.text_old.clone()));
        let diff = g.sub(lp, old)?;
        let r = g.exp(diff);
        text_ratios = g.value(r).data().to_vec();
        let mut sum = clipped_sum(&mut g, r, advantage, config.clip_eps)?;
        if config.kl_coeff > 0.0 {
            if let Some(reference) = reference {
                let mut rg = Graph::new();
                let rs = score(&mut rg, reference, decoded, config.temperature, false)?;
                let ref_lp = rg.value(rs.text_logprob.expect("same text steps")).clone();
                let refc = g.constant(ref_lp);
                // k3 estimate of KL(current || reference)
                let d = g.sub(refc, lp)?;
                let e = g.exp(d);
                let k = g.sub(e, d)?;
                let k = g.sum(k);
                let one = g.scalar(n_text as f64);
                let k = g.sub(k, one)?;
                let k = g.scale(k, config.kl_coeff);
                sum = g.sub(sum, k)?;
            }
        }
        text_loss = Some(g.scale(sum, norm));
    }

    let mut latent_loss = None;
    let mut latent_ratios = Vec::new();
    if algo == Algo::Vlpo {
        if let (Some(theta), Some(old)) = (s.latent_theta, s.latent_old) {
            let r = vlpo_latent_ratio_rows(&mut g, old, theta, config.sigma)?;
            latent_ratios = g.value(r).data().to_vec();
            let sum = clipped_sum(&mut g, r, advantage, config.clip_eps)?;
            latent_loss = Some(g.scale(sum, norm));
        }
    }
    ratios.absorb(&text_ratios, &latent_ratios);

    let mut loss = 0.0;
    let mut grads = GradMap::new();
    let mut latent_grads = GradMap::new();
    if let Some(t) = text_loss {
        loss += g.value(t).item();
        grads = g.backward(t)?.into_params();
    }
    if let Some(l) = latent_loss {
        loss += g.value(l).item();
        latent_grads = g.backward(l)?.into_params();
        grads.add_scaled(&latent_grads, 1.0);
    }
    Ok(TrajectoryTerm {
        loss,
        grads,
        latent_grads,
        ratios,
        contributed: true,
    })
}

/// Negated clipped objective over retained groups and its gradient.
///
/// Each trajectory's terms are averaged over its contributing steps (sampled
/// text steps, plus latent steps under VLPO), then over the group, then over
/// groups. Groups without advantages are skipped.
pub fn policy_objective(
    groups: &[RolloutGroup],
    current: &Model,
    reference: Option<&Model>,
    config: &RlConfig,
    algo: Algo,
) -> Result<ObjectiveOutput, RlError> {
    let live: Vec<(&RolloutGroup, &Vec<f64>)> = groups
        .iter()
        .filter_map(|gr| gr.advantages.as_ref().map(|a| (gr, a)))
        .collect();
    if live.is_empty() {
        log::debug!("no retained groups; skipping update");
        return Ok(ObjectiveOutput::default());
    }
    let mut items = Vec::new();
    for (gr, adv) in &live {
        let weight = 1.0 / (live.len() * gr.rollouts.len()) as f64;
        for (d, &a) in gr.rollouts.iter().zip(adv.iter()) {
            items.push((d, a, weight));
        }
    }
    let terms = par_map(&items, |&(d, a, w)| trajectory_term(current, reference, d, a, w, config, algo));
    let mut out = ObjectiveOutput::default();
    for t in terms {
        let t = t?;
        out.loss += t.loss;
        out.grads.add_scaled(&t.grads, 1.0);
        out.latent_grads.add_scaled(&t.latent_grads, 1.0);
        out.ratios.merge(&t.ratios);
        out.trajectories += t.contributed as usize;
    }
    Ok(out)
}
