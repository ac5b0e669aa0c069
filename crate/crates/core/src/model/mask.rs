//! Role-aware attention masks.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::layout::{SegmentRole, SequenceLayout};
use super::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskMode {
    Causal,
    /// Causal, except that auxiliary-image keys are visible only inside their own
    /// segment and to the latent segment that immediately follows it.
    MonetStage2,
}

/// Row-major `allow[query][key]` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMaskSpec {
    mode: MaskMode,
    len: usize,
    allow: Arc<Vec<bool>>,
}

impl AttentionMaskSpec {
    pub fn causal(len: usize) -> Self {
        let mut allow = vec![false; len * len];
        for q in 0..len {
            allow[q * len..q * len + q + 1].fill(true);
        }
        Self {
            mode: MaskMode::Causal,
            len,
            allow: Arc::new(allow),
        }
    }

    pub fn build(layout: &SequenceLayout, mode: MaskMode) -> Result<Self, ModelError> {
        let len = layout.len();
        let mut spec = Self::causal(len);
        spec.mode = mode;
        if mode == MaskMode::Causal {
            return Ok(spec);
        }
        let segs = layout.segments();
        let spans = layout.spans();
        let allow = Arc::make_mut(&mut spec.allow);
        for (i, seg) in segs.iter().enumerate() {
            if seg.role != SegmentRole::AuxImage || seg.is_empty() {
                continue;
            }
            let latent_end = match segs.get(i + 1) {
                Some(next) if next.role == SegmentRole::Latent => spans[i + 1].end,
                _ => return Err(ModelError::AuxWithoutLatent { segment: i }),
            };
            let keys = spans[i].clone();
            for q in latent_end..len {
                allow[q * len + keys.start..q * len + keys.end].fill(false);
            }
        }
        Ok(spec)
    }

    pub fn mode(&self) -> MaskMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn allowed(&self, q: usize, k: usize) -> bool {
        self.allow[q * self.len + k]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.allow
    }

    /// Query rows `rows`, key columns `0..rows.end`, row-major.
    pub fn block(&self, rows: std::ops::Range<usize>) -> Vec<bool> {
        let width = rows.end;
        let mut out = Vec::with_capacity(rows.len() * width);
        for q in rows {
            out.extend_from_slice(&self.allow[q * self.len..q * self.len + width]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn causal_is_lower_triangular() {
        let m = AttentionMaskSpec::causal(3);
        for q in 0..3 {
            for k in 0..3 {
                assert_eq!(m.allowed(q, k), k <= q);
            }
        }
    }

    #[test]
    fn block_matches_rows() {
        let m = AttentionMaskSpec::causal(4);
        assert_eq!(m.block(2..4), vec![true, true, true, false, true, true, true, true]);
    }
}
