//! Per-sample target latents, one `layers × hidden` block per latent slot.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::model::HiddenStateStack;

use super::SftError;

const MAGIC: &str = "monet-latents";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    magic: String,
    version: u32,
    layers: usize,
    hidden: usize,
    /// `(sample id, slot count)` in blob order.
    entries: Vec<(u64, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetLatentStore {
    layers: usize,
    hidden: usize,
    /// Per sample: `slots × layers × hidden`, row-major.
    entries: BTreeMap<u64, Vec<f64>>,
}

impl TargetLatentStore {
    pub fn new(layers: usize, hidden: usize) -> Self {
        Self {
            layers,
            hidden,
            entries: BTreeMap::new(),
        }
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.keys().copied()
    }

    /// Records the latent rows of `stack` (layers `1..=L`) at `positions`.
    pub fn insert_from_stack(
        &mut self,
        id: u64,
        stack: &HiddenStateStack,
        positions: &[usize],
    ) -> Result<(), SftError> {
        if stack.depth() != self.layers + 1 {
            return Err(SftError::Store(format!(
                "stack depth {} for a {}-layer store",
                stack.depth(),
                self.layers
            )));
        }
        let mut data = Vec::with_capacity(positions.len() * self.layers * self.hidden);
        for &p in positions {
            for l in 1..=self.layers {
                data.extend_from_slice(stack.at(l, p));
            }
        }
        self.entries.insert(id, data);
        Ok(())
    }

    pub fn slots(&self, id: u64) -> Option<usize> {
        self.entries.get(&id).map(|d| d.len() / (self.layers * self.hidden))
    }

    /// Targets for sample `id` as one `slots × hidden` tensor per layer `1..=L`.
    pub fn targets(&self, id: u64) -> Result<Vec<Tensor>, SftError> {
        let data = self.entries.get(&id).ok_or(SftError::MissingTarget(id))?;
        let slots = data.len() / (self.layers * self.hidden);
        let d = self.hidden;
        Ok((0..self.layers)
            .map(|l| {
                let mut rows = Vec::with_capacity(slots * d);
                for s in 0..slots {
                    let off = (s * self.layers + l) * d;
                    rows.extend_from_slice(&data[off..off + d]);
                }
                Tensor::matrix(slots, d, rows)
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), SftError> {
        let header = Header {
            magic: MAGIC.into(),
            version: FORMAT_VERSION,
            layers: self.layers,
            hidden: self.hidden,
            entries: self
                .entries
                .iter()
                .map(|(&id, d)| (id, d.len() / (self.layers * self.hidden)))
                .collect(),
        };
        let mut out = serde_json::to_vec(&header).map_err(|e| SftError::Store(e.to_string()))?;
        out.push(b'\n');
        for d in self.entries.values() {
            for x in d {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        fs::File::create(path)?.write_all(&out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SftError> {
        let bytes = fs::read(path)?;
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| SftError::Store("missing header".into()))?;
        let header: Header =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| SftError::Store(e.to_string()))?;
        if header.magic != MAGIC || header.version != FORMAT_VERSION {
            return Err(SftError::Store(format!(
                "unsupported header {} v{}",
                header.magic, header.version
            )));
        }
        let mut blob = bytes[nl + 1..].chunks_exact(8);
        let mut store = Self::new(header.layers, header.hidden);
        for (id, slots) in header.entries {
            let n = slots * header.layers * header.hidden;
            let data: Vec<f64> = blob
                .by_ref()
                .take(n)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of 8")))
                .collect();
            if data.len() != n {
                return Err(SftError::Store("truncated blob".into()));
            }
            store.entries.insert(id, data);
        }
        if blob.next().is_some() || !blob.remainder().is_empty() {
            return Err(SftError::Store("trailing bytes".into()));
        }
        Ok(store)
    }
}
