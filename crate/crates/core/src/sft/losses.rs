//! Next-token prediction, cosine alignment, and the latent-only surrogate.

use crate::autodiff::{Graph, Tensor, Var, COSINE_EPS};
use crate::model::vocab;
use crate::model::{HiddenStateStack, SegmentRole, SequenceLayout};

use super::SftError;

/// Positions whose token is a next-token-prediction target.
///
/// Chain-of-thought and answer text count, `<latent>` included; the latent-end
/// and observation delimiters, question text, images and latent slots do not.
pub fn label_mask(layout: &SequenceLayout) -> Vec<bool> {
    layout
        .roles()
        .iter()
        .zip(layout.tokens())
        .map(|(role, tok)| match (role, tok) {
            (SegmentRole::PlainText | SegmentRole::ObservationText | SegmentRole::Answer, Some(t)) => {
                t != vocab::LATENT_END && t != vocab::OBS_START && t != vocab::OBS_END
            }
            _ => false,
        })
        .collect()
}

/// Mean negative log-likelihood of the masked tokens, each predicted from the
/// logits one position earlier.
pub fn ntp_loss(g: &mut Graph, logits: Var, layout: &SequenceLayout, mask: &[bool]) -> Result<Var, SftError> {
    let tokens = layout.tokens();
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (t, (&m, tok)) in mask.iter().zip(&tokens).enumerate() {
        if m && t > 0 {
            let tok = tok.ok_or(SftError::Config(format!("label on non-text position {t}")))?;
            rows.push(t - 1);
            targets.push(tok.index());
        }
    }
    if rows.is_empty() {
        return Err(SftError::EmptyLabelMask);
    }
    let sel = g.select_rows(logits, &rows)?;
    let lsm = g.log_softmax(sel)?;
    let picked = g.pick_cols(lsm, &targets)?;
    let mean = g.mean(picked);
    Ok(g.scale(mean, -1.0))
}

/// `1 - mean cos(target, student)` over layers `1..=L` and the given positions.
///
/// `targets[l - 1]` holds one row per position for layer `l`; they enter the
/// graph behind a gradient barrier.
pub fn cosine_alignment(
    g: &mut Graph,
    hidden: &[Var],
    positions: &[usize],
    targets: &[Tensor],
) -> Result<Var, SftError> {
    let layers = hidden.len() - 1;
    if targets.len() != layers {
        return Err(SftError::AlignmentShape(format!(
            "{} target layers for a {layers}-layer model",
            targets.len()
        )));
    }
    if positions.is_empty() {
        return Err(SftError::AlignmentShape("no positions to align".into()));
    }
    let mut total = None;
    for l in 1..=layers {
        let t = &targets[l - 1];
        if t.rows() != positions.len() {
            return Err(SftError::AlignmentShape(format!(
                "layer {l}: {} target rows for {} positions",
                t.rows(),
                positions.len()
            )));
        }
        let s = g.select_rows(hidden[l], positions)?;
        let tc = g.constant(t.clone());
        let tc = g.stop_gradient(tc);
        let cos = g.cosine_rows(tc, s)?;
        let sum = g.sum(cos);
        total = Some(match total {
            Some(acc) => g.add(acc, sum)?,
            None => sum,
        });
    }
    let n = (layers * positions.len()) as f64;
    let mean = g.scale(total.expect("layers >= 1"), -1.0 / n);
    let one = g.scalar(1.0);
    Ok(g.add(one, mean)?)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na * nb <= COSINE_EPS {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn stack_alignment(
    target: &HiddenStateStack,
    target_pos: &[usize],
    student: &HiddenStateStack,
    student_pos: &[usize],
) -> Result<f64, SftError> {
    if target_pos.len() != student_pos.len() || target_pos.is_empty() {
        return Err(SftError::AlignmentShape(format!(
            "{} target positions vs {} student positions",
            target_pos.len(),
            student_pos.len()
        )));
    }
    if target.depth() != student.depth() {
        return Err(SftError::AlignmentShape("stack depths differ".into()));
    }
    let layers = target.depth() - 1;
    let mut acc = 0.0;
    for l in 1..=layers {
        for (&tp, &sp) in target_pos.iter().zip(student_pos) {
            acc += 1.0 - cosine(target.at(l, tp), student.at(l, sp));
        }
    }
    Ok(acc / (layers * target_pos.len()) as f64)
}

/// Observation alignment between a teacher and a student stack.
pub fn align_obs_loss(
    teacher: &HiddenStateStack,
    teacher_obs: &[usize],
    student: &HiddenStateStack,
    student_obs: &[usize],
) -> Result<f64, SftError> {
    stack_alignment(teacher, teacher_obs, student, student_obs)
}

/// Latent alignment between stored targets (as a stack over slots) and a student stack.
pub fn align_latent_loss(
    target: &HiddenStateStack,
    student: &HiddenStateStack,
    student_latents: &[usize],
) -> Result<f64, SftError> {
    let slots: Vec<usize> = (0..target.positions()).collect();
    if slots.len() != student_latents.len() {
        return Err(SftError::SlotMismatch {
            expected: slots.len(),
            got: student_latents.len(),
        });
    }
    stack_alignment(target, &slots, student, student_latents)
}

/// `Σ_j stop_gradient(g_j)ᵀ e_j` over the generated latent vectors `e_j`.
///
/// Its parameter gradient is the alignment gradient routed only through the
/// latent vectors.
pub fn latent_only_surrogate(g: &mut Graph, grads: &[Tensor], latents: &[Var]) -> Result<Var, SftError> {
    if grads.len() != latents.len() {
        return Err(SftError::SlotMismatch {
            expected: latents.len(),
            got: grads.len(),
        });
    }
    if latents.is_empty() {
        return Ok(g.scalar(0.0));
    }
    let mut terms = Vec::with_capacity(latents.len());
    for (gr, &e) in grads.iter().zip(latents) {
        let shape = g.value(e).shape().to_vec();
        if gr.len() != g.value(e).len() {
            return Err(SftError::AlignmentShape(format!(
                "gradient of length {} for latent of shape {shape:?}",
                gr.len()
            )));
        }
        let c = g.constant(gr.clone().reshaped(&shape)?);
        let c = g.stop_gradient(c);
        terms.push(g.dot(c, e)?);
    }
    let mut acc = terms[0];
    for t in &terms[1..] {
        acc = g.add(acc, *t)?;
    }
    Ok(acc)
}
