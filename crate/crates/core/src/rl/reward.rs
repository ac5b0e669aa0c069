use crate::forge::boxed_answer;
use crate::model::{TokenId, Trajectory};

pub const FORMAT_BONUS: f64 = 0.1;

/// Exact-match accuracy on the last boxed answer plus a bonus for any
/// well-formed boxed span. Latent usage earns nothing.
pub fn compute_reward(trajectory: &Trajectory, gold: TokenId) -> f64 {
    let tokens = trajectory.tokens();
    match boxed_answer(&tokens) {
        Some(a) => FORMAT_BONUS + if a == gold { 1.0 } else { 0.0 },
        None => 0.0,
    }
}

/// Whether the last boxed answer matches `gold`.
pub fn is_correct(trajectory: &Trajectory, gold: TokenId) -> bool {
    boxed_answer(&trajectory.tokens()) == Some(gold)
}
