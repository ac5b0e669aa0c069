//! Decoupled-weight-decay Adam.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{GradMap, ParamId, ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            max_grad_norm: Some(1.0),
        }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    m: Tensor,
    v: Tensor,
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    state: BTreeMap<ParamId, Moments>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            state: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update and returns the gradient norm before clipping.
    ///
    /// Weight decay is applied only to parameters registered with `decay = true`;
    /// parameters absent from `grads` still decay but keep their moments.
    pub fn step(&mut self, params: &mut ParamStore, grads: &GradMap) -> f64 {
        let norm = grads.norm();
        let clip = match self.config.max_grad_norm {
            Some(max) if norm > max && norm > 0.0 => max / norm,
            _ => 1.0,
        };
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let ids: Vec<ParamId> = params.ids().collect();
        for id in ids {
            let decay = params.decays(id);
            let Some(g) = grads.get(id) else {
                if decay && c.weight_decay > 0.0 {
                    params.get_mut(id).scale_assign(1.0 - c.lr * c.weight_decay);
                }
                continue;
            };
            let shape = params.get(id).shape().to_vec();
            let st = self.state.entry(id).or_insert_with(|| Moments {
                m: Tensor::zeros(&shape),
                v: Tensor::zeros(&shape),
            });
            let p = params.get_mut(id);
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (st.m.data_mut(), st.v.data_mut());
            for i in 0..pd.len() {
                let gi = gd[i] * clip;
                md[i] = c.beta1 * md[i] + (1.0 - c.beta1) * gi;
                vd[i] = c.beta2 * vd[i] + (1.0 - c.beta2) * gi * gi;
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                if decay {
                    pd[i] -= c.lr * c.weight_decay * pd[i];
                }
                pd[i] -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut ps = ParamStore::new();
        let id = ps.push("w", Tensor::vector(vec![1.0, -1.0]), false);
        let mut g = GradMap::new();
        g.insert(id, Tensor::vector(vec![0.3, -5.0]));
        let mut opt = AdamW::new(AdamWConfig {
            lr: 0.1,
            max_grad_norm: None,
            ..Default::default()
        });
        opt.step(&mut ps, &g);
        let d = ps.get(id).data();
        assert!((d[0] - 0.9).abs() < 1e-6);
        assert!((d[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn decay_skips_flagged_off_params() {
        let mut ps = ParamStore::new();
        let w = ps.push("w", Tensor::vector(vec![2.0]), true);
        let b = ps.push("b", Tensor::vector(vec![2.0]), false);
        let mut opt = AdamW::new(AdamWConfig {
            lr: 0.5,
            weight_decay: 0.1,
            ..Default::default()
        });
        opt.step(&mut ps, &GradMap::new());
        assert_eq!(ps.get(w).data()[0], 2.0 * (1.0 - 0.05));
        assert_eq!(ps.get(b).data()[0], 2.0);
    }
}
