use rand::seq::IndexedRandom;
use rand::Rng;

use super::{GradMap, ParamId, ParamStore};

/// Absolute-error floor under which a coordinate always passes.
pub const ABS_FLOOR: f64 = 1e-8;

/// Central differences for every coordinate of every parameter.
pub fn finite_difference<F>(mut f: F, params: &ParamStore, eps: f64) -> GradMap
where
    F: FnMut(&ParamStore) -> f64,
{
    let coords: Vec<(ParamId, usize)> = params
        .ids()
        .flat_map(|id| (0..params.get(id).len()).map(move |i| (id, i)))
        .collect();
    let values = finite_difference_coords(&mut f, params, &coords, eps);
    let mut out = GradMap::new();
    for id in params.ids() {
        out.insert(id, super::Tensor::zeros(params.get(id).shape()));
    }
    for (&(id, i), v) in coords.iter().zip(values) {
        let mut t = out.get(id).cloned().expect("inserted above");
        t.data_mut()[i] = v;
        out.insert(id, t);
    }
    out
}

/// Central differences `(f(p + eps e) - f(p - eps e)) / 2 eps` at the listed coordinates.
pub fn finite_difference_coords<F>(
    mut f: F,
    params: &ParamStore,
    coords: &[(ParamId, usize)],
    eps: f64,
) -> Vec<f64>
where
    F: FnMut(&ParamStore) -> f64,
{
    debug_assert!((1e-7..=1e-4).contains(&eps), "step {eps} outside [1e-7, 1e-4]");
    let mut work = params.clone();
    coords
        .iter()
        .map(|&(id, i)| {
            let base = params.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = base + eps;
            let up = f(&work);
            work.get_mut(id).data_mut()[i] = base - eps;
            let down = f(&work);
            work.get_mut(id).data_mut()[i] = base;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Up to `n` distinct coordinates drawn uniformly from all parameters.
pub fn sample_coords<R: Rng>(params: &ParamStore, n: usize, rng: &mut R) -> Vec<(ParamId, usize)> {
    let all: Vec<(ParamId, usize)> = params
        .ids()
        .flat_map(|id| (0..params.get(id).len()).map(move |i| (id, i)))
        .collect();
    all.choose_multiple(rng, n.min(all.len())).copied().collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel: f64,
    pub max_abs: f64,
    /// Coordinates that failed both the absolute floor and the relative tolerance.
    pub failures: Vec<(ParamId, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Elementwise comparison: a coordinate passes if the absolute error is at most
/// [`ABS_FLOOR`] or the relative error is below `rel_tol`.
pub fn compare(
    analytic: &GradMap,
    coords: &[(ParamId, usize)],
    numeric: &[f64],
    rel_tol: f64,
) -> GradCheckReport {
    let mut report = GradCheckReport {
        checked: coords.len(),
        max_rel: 0.0,
        max_abs: 0.0,
        failures: Vec::new(),
    };
    for (&(id, i), &n) in coords.iter().zip(numeric) {
        let a = analytic.coord(id, i);
        let abs = (a - n).abs();
        let scale = a.abs().max(n.abs());
        let rel = if scale > 0.0 { abs / scale } else { 0.0 };
        report.max_abs = report.max_abs.max(abs);
        report.max_rel = report.max_rel.max(rel);
        if abs > ABS_FLOOR && rel >= rel_tol {
            report.failures.push((id, i, a, n));
        }
    }
    report
}
