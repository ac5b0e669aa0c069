/// `(r - mean) / std` with the population standard deviation; `None` when all
/// rewards are equal.
pub fn compute_advantages(rewards: &[f64]) -> Option<Vec<f64>> {
    let n = rewards.len() as f64;
    if rewards.len() < 2 {
        return None;
    }
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 || !std.is_finite() {
        return None;
    }
    Some(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Indices of groups whose accuracy lies strictly between 0 and `threshold`.
pub fn filter_by_accuracy(correct_per_group: &[(usize, usize)], threshold: f64) -> Vec<usize> {
    correct_per_group
        .iter()
        .enumerate()
        .filter(|(_, &(c, n))| {
            let acc = c as f64 / n as f64;
            n > 0 && acc > 0.0 && acc < threshold
        })
        .map(|(i, _)| i)
        .collect()
}
