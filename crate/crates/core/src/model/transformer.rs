//! Pre-norm decoder with a patch embedder and chunked, cache-backed evaluation.

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};

use super::config::ModelConfig;
use super::layout::{Content, SegmentRole, SequenceLayout};
use super::mask::AttentionMaskSpec;
use super::ModelError;

#[derive(Clone, Debug)]
struct LayerIds {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
struct ParamIds {
    tok_emb: ParamId,
    patch_w: ParamId,
    patch_b: ParamId,
    patch_pos: ParamId,
    pos_emb: ParamId,
    layers: Vec<LayerIds>,
    lnf_g: ParamId,
    lnf_b: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

/// Parameters and configuration of the toy multimodal decoder.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    ids: ParamIds,
}

enum Init {
    Zero,
    Normal(ChaCha8Rng, Normal<f64>),
}

impl Init {
    fn matrix(&mut self, rows: usize, cols: usize) -> Tensor {
        match self {
            Init::Zero => Tensor::zeros(&[rows, cols]),
            Init::Normal(rng, dist) => {
                Tensor::matrix(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect())
            }
        }
    }

    fn gain(&self, n: usize) -> Tensor {
        match self {
            Init::Zero => Tensor::zeros(&[n]),
            Init::Normal(..) => Tensor::full(&[n], 1.0),
        }
    }
}

impl Model {
    /// Random initialization: normal weights, unit layer-norm gains, zero biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let dist = Normal::new(0.0, config.init_std).map_err(|e| ModelError::Config(e.to_string()))?;
        Self::build(config, Init::Normal(ChaCha8Rng::seed_from_u64(seed), dist))
    }

    /// Every parameter zero, including layer-norm gains.
    pub fn zeroed(config: ModelConfig) -> Result<Self, ModelError> {
        Self::build(config, Init::Zero)
    }

    fn build(config: ModelConfig, mut init: Init) -> Result<Self, ModelError> {
        config.validate()?;
        let (d, v, f, m) = (config.hidden, config.vocab_size, config.patch_features, config.mlp_hidden);
        let mut ps = ParamStore::new();
        let zeros = |n: usize| Tensor::zeros(&[n]);
        let tok_emb = ps.push("tok_emb", init.matrix(v, d), true);
        let patch_w = ps.push("patch_proj.w", init.matrix(f, d), true);
        let patch_b = ps.push("patch_proj.b", zeros(d), false);
        let patch_pos = ps.push("patch_pos", init.matrix(config.max_patches, d), true);
        let pos_emb = ps.push("pos_emb", init.matrix(config.max_positions, d), true);
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let name = |s: &str| format!("layer{l}.{s}");
            layers.push(LayerIds {
                ln1_g: ps.push(name("ln1.g"), init.gain(d), false),
                ln1_b: ps.push(name("ln1.b"), zeros(d), false),
                wq: ps.push(name("attn.wq"), init.matrix(d, d), true),
                wk: ps.push(name("attn.wk"), init.matrix(d, d), true),
                wv: ps.push(name("attn.wv"), init.matrix(d, d), true),
                wo: ps.push(name("attn.wo"), init.matrix(d, d), true),
                bo: ps.push(name("attn.bo"), zeros(d), false),
                ln2_g: ps.push(name("ln2.g"), init.gain(d), false),
                ln2_b: ps.push(name("ln2.b"), zeros(d), false),
                w1: ps.push(name("mlp.w1"), init.matrix(d, m), true),
                b1: ps.push(name("mlp.b1"), zeros(m), false),
                w2: ps.push(name("mlp.w2"), init.matrix(m, d), true),
                b2: ps.push(name("mlp.b2"), zeros(d), false),
            });
        }
        let lnf_g = ps.push("ln_f.g", init.gain(d), false);
        let lnf_b = ps.push("ln_f.b", zeros(d), false);
        let head_w = ps.push("head.w", init.matrix(d, v), true);
        let head_b = ps.push("head.b", zeros(v), false);
        Ok(Self {
            config,
            params: ps,
            ids: ParamIds {
                tok_emb,
                patch_w,
                patch_b,
                patch_pos,
                pos_emb,
                layers,
                lnf_g,
                lnf_b,
                head_w,
                head_b,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Replaces all parameter values; names and shapes must match.
    pub fn set_params(&mut self, params: ParamStore) -> Result<(), ModelError> {
        if params.len() != self.params.len()
            || self.params.ids().any(|id| {
                params.name(id) != self.params.name(id) || params.get(id).shape() != self.params.get(id).shape()
            })
        {
            return Err(ModelError::Config("parameter layout mismatch".into()));
        }
        self.params = params;
        Ok(())
    }

    /// Parameter id of the token embedding table.
    pub fn token_embedding_id(&self) -> ParamId {
        self.ids.tok_emb
    }

    /// Places every parameter on `g`. Frozen bindings are constants and collect no gradient.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        self.bind_store(g, &self.params, trainable)
    }

    /// Like [`Model::bind`] but reads values from another store with the same layout.
    pub fn bind_store(&self, g: &mut Graph, store: &ParamStore, trainable: bool) -> Bound {
        let mut b = |id: ParamId| {
            if trainable {
                g.param(id, store.shared(id))
            } else {
                g.constant_shared(store.shared(id))
            }
        };
        let ids = &self.ids;
        Bound {
            tok_emb: b(ids.tok_emb),
            patch_w: b(ids.patch_w),
            patch_b: b(ids.patch_b),
            patch_pos: b(ids.patch_pos),
            pos_emb: b(ids.pos_emb),
            layers: ids
                .layers
                .iter()
                .map(|l| BoundLayer {
                    ln1_g: b(l.ln1_g),
                    ln1_b: b(l.ln1_b),
                    wq: b(l.wq),
                    wk: b(l.wk),
                    wv: b(l.wv),
                    wo: b(l.wo),
                    bo: b(l.bo),
                    ln2_g: b(l.ln2_g),
                    ln2_b: b(l.ln2_b),
                    w1: b(l.w1),
                    b1: b(l.b1),
                    w2: b(l.w2),
                    b2: b(l.b2),
                })
                .collect(),
            lnf_g: b(ids.lnf_g),
            lnf_b: b(ids.lnf_b),
            head_w: b(ids.head_w),
            head_b: b(ids.head_b),
        }
    }

    /// Input embeddings for positions `range` of `layout`. Latent positions take
    /// the vector in `latents` verbatim, plus the learned position embedding.
    pub fn embed(
        &self,
        g: &mut Graph,
        bound: &Bound,
        layout: &SequenceLayout,
        range: std::ops::Range<usize>,
        latents: &HashMap<usize, Var>,
    ) -> Result<Var, ModelError> {
        let cfg = &self.config;
        if range.end > cfg.max_positions {
            return Err(ModelError::TooLong {
                len: range.end,
                max: cfg.max_positions,
            });
        }
        let mut parts = Vec::new();
        for (seg, span) in layout.segments().iter().zip(layout.spans()) {
            let lo = span.start.max(range.start);
            let hi = span.end.min(range.end);
            if lo >= hi {
                continue;
            }
            let local = lo - span.start..hi - span.start;
            match &seg.content {
                Content::Tokens(t) => {
                    let ids: Vec<usize> = t[local].iter().map(|x| x.index()).collect();
                    if let Some(bad) = ids.iter().find(|&&i| i >= cfg.vocab_size) {
                        return Err(ModelError::UnknownToken(*bad));
                    }
                    parts.push(g.select_rows(bound.tok_emb, &ids)?);
                }
                Content::Patches(p) => {
                    if p.features() != cfg.patch_features || p.patch_count() > cfg.max_patches {
                        return Err(ModelError::PatchMismatch {
                            expected: cfg.patch_features,
                            got: p.features(),
                        });
                    }
                    let f = p.features();
                    let feats = Tensor::matrix(
                        local.len(),
                        f,
                        p.data()[local.start * f..local.end * f].to_vec(),
                    );
                    let feats = g.constant(feats);
                    let proj = g.matmul(feats, bound.patch_w)?;
                    let proj = g.add_row(proj, bound.patch_b)?;
                    let idx: Vec<usize> = local.clone().collect();
                    let pp = g.select_rows(bound.patch_pos, &idx)?;
                    parts.push(g.add(proj, pp)?);
                }
                Content::Slots(_) => {
                    for pos in lo..hi {
                        let v = *latents.get(&pos).ok_or(ModelError::MissingLatent { position: pos })?;
                        parts.push(v);
                    }
                }
            }
        }
        let x = if parts.len() == 1 {
            parts[0]
        } else {
            g.concat_rows(&parts)?
        };
        let rows: Vec<usize> = range.collect();
        let pe = g.select_rows(bound.pos_emb, &rows)?;
        Ok(g.add(x, pe)?)
    }

    /// Full forward pass over `layout`.
    ///
    /// With [`LatentFill::Autoregressive`], latent slots are produced inside the
    /// graph: slot 0 reads the final-layer state at the latent segment's source
    /// position and slot `j` reads the final-layer state of slot `j - 1`. The
    /// evaluation is chunked around those slots, and every chunk's rows are
    /// bit-identical to a single-pass evaluation with the same inputs.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &Bound,
        layout: &SequenceLayout,
        mask: &AttentionMaskSpec,
        fill: LatentFill<'_>,
    ) -> Result<ForwardOutput, ModelError> {
        let len = layout.len();
        if mask.len() != len {
            return Err(ModelError::MaskLength { mask: mask.len(), layout: len });
        }
        let latent_pos = layout.latent_positions();
        let mut latents: HashMap<usize, Var> = HashMap::new();
        let mut latent_inputs = Vec::with_capacity(latent_pos.len());
        let autoregressive = match fill {
            LatentFill::Given(vectors) => {
                if vectors.len() != latent_pos.len() {
                    return Err(ModelError::LatentCount {
                        expected: latent_pos.len(),
                        got: vectors.len(),
                    });
                }
                for (&p, v) in latent_pos.iter().zip(vectors) {
                    if v.len() != self.config.hidden {
                        return Err(ModelError::LatentCount {
                            expected: self.config.hidden,
                            got: v.len(),
                        });
                    }
                    let var = g.constant(v.clone().reshaped(&[1, self.config.hidden])?);
                    latents.insert(p, var);
                    latent_inputs.push(var);
                }
                false
            }
            LatentFill::Autoregressive => !latent_pos.is_empty(),
        };

        // Chunk boundaries: each latent position alone, other positions in maximal runs.
        let mut chunks: Vec<std::ops::Range<usize>> = Vec::new();
        if autoregressive {
            let mut start = 0;
            for &p in &latent_pos {
                if p > start {
                    chunks.push(start..p);
                }
                chunks.push(p..p + 1);
                start = p + 1;
            }
            if start < len {
                chunks.push(start..len);
            }
        } else if len > 0 {
            chunks.push(0..len);
        }

        let seg_of = layout.segment_index();
        let roles = layout.roles();
        let spans = layout.spans();
        let mut session = Session::new(bound, &self.config);
        let mut outs: Vec<(usize, Chunk)> = Vec::with_capacity(chunks.len());
        for range in chunks {
            if autoregressive && roles[range.start] == SegmentRole::Latent && range.len() == 1 {
                let p = range.start;
                let seg = seg_of[p];
                let src = if p == spans[seg].start {
                    layout
                        .latent_source(seg)
                        .ok_or(ModelError::MissingLatent { position: p })?
                } else {
                    p - 1
                };
                let (start, chunk) = outs
                    .iter()
                    .rev()
                    .find(|(s, _)| *s <= src)
                    .expect("source precedes the slot");
                let top = chunk.hidden[self.config.layers];
                let v = g.slice_rows(top, src - start, 1)?;
                latents.insert(p, v);
                latent_inputs.push(v);
            }
            let x = self.embed(g, bound, layout, range.clone(), &latents)?;
            let chunk = session.extend(g, x, mask.block(range.clone()))?;
            outs.push((range.start, chunk));
        }

        let layers = self.config.layers;
        let mut hidden = Vec::with_capacity(layers + 1);
        for l in 0..=layers {
            let parts: Vec<Var> = outs.iter().map(|(_, c)| c.hidden[l]).collect();
            hidden.push(concat(g, &parts)?);
        }
        let parts: Vec<Var> = outs.iter().map(|(_, c)| c.logits).collect();
        let logits = concat(g, &parts)?;
        Ok(ForwardOutput {
            logits,
            hidden,
            latent_inputs,
            latent_positions: latent_pos,
        })
    }
}

fn concat(g: &mut Graph, parts: &[Var]) -> Result<Var, ModelError> {
    Ok(if parts.len() == 1 {
        parts[0]
    } else {
        g.concat_rows(parts)?
    })
}

/// How latent positions get their input vectors.
#[derive(Clone, Copy, Debug)]
pub enum LatentFill<'a> {
    /// Fed back from the final layer inside the graph.
    Autoregressive,
    /// One fixed vector per latent position, in position order.
    Given(&'a [Tensor]),
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `len × vocab`
    pub logits: Var,
    /// `layers + 1` entries of `len × hidden`; 0 is the input embedding, the last
    /// is the post-final-norm state that feeds the output head.
    pub hidden: Vec<Var>,
    /// Input vector used at each latent position (before position embedding).
    pub latent_inputs: Vec<Var>,
    pub latent_positions: Vec<usize>,
}

impl ForwardOutput {
    pub fn stack(&self, g: &Graph) -> HiddenStateStack {
        HiddenStateStack {
            layers: self.hidden.iter().map(|v| g.value(*v).clone()).collect(),
        }
    }
}

/// Hidden vectors for every layer and position.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenStateStack {
    layers: Vec<Tensor>,
}

impl HiddenStateStack {
    pub fn new(layers: Vec<Tensor>) -> Self {
        Self { layers }
    }

    /// Number of layer entries, `layers + 1`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn positions(&self) -> usize {
        self.layers.first().map_or(0, Tensor::rows)
    }

    pub fn at(&self, layer: usize, position: usize) -> &[f64] {
        self.layers[layer].row(position)
    }

    pub fn layer(&self, layer: usize) -> &Tensor {
        &self.layers[layer]
    }
}

#[derive(Clone, Debug)]
pub struct BoundLayer {
    ln1_g: Var,
    ln1_b: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
    bo: Var,
    ln2_g: Var,
    ln2_b: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

/// Parameters placed on a particular graph.
#[derive(Clone, Debug)]
pub struct Bound {
    tok_emb: Var,
    patch_w: Var,
    patch_b: Var,
    patch_pos: Var,
    pos_emb: Var,
    layers: Vec<BoundLayer>,
    lnf_g: Var,
    lnf_b: Var,
    head_w: Var,
    head_b: Var,
}

/// Output of one evaluated chunk.
#[derive(Clone, Debug)]
pub struct Chunk {
    pub hidden: Vec<Var>,
    pub logits: Var,
}

/// Incremental evaluation with per-layer key/value caches living on the graph.
pub struct Session<'b> {
    bound: &'b Bound,
    heads: usize,
    head_dim: usize,
    keys: Vec<Vec<Option<Var>>>,
    values: Vec<Vec<Option<Var>>>,
    len: usize,
}

impl<'b> Session<'b> {
    pub fn new(bound: &'b Bound, config: &ModelConfig) -> Self {
        Self {
            bound,
            heads: config.heads,
            head_dim: config.head_dim(),
            keys: vec![vec![None; config.heads]; config.layers],
            values: vec![vec![None; config.heads]; config.layers],
            len: 0,
        }
    }

    /// Positions evaluated so far.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Evaluates `input` (`n × hidden`) as the next `n` positions. `allow` is the
    /// `n × (len + n)` row-major block of the attention mask.
    pub fn extend(&mut self, g: &mut Graph, input: Var, allow: Vec<bool>) -> Result<Chunk, ModelError> {
        let n = g.value(input).rows();
        let total = self.len + n;
        if allow.len() != n * total {
            return Err(ModelError::MaskLength {
                mask: allow.len(),
                layout: n * total,
            });
        }
        let allow = Arc::new(allow);
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let b = self.bound;
        let mut x = input;
        let mut hidden = vec![x];
        let layer_count = b.layers.len();
        for (l, lp) in b.layers.iter().enumerate() {
            let a = g.layer_norm(x, lp.ln1_g, lp.ln1_b)?;
            let q = g.matmul(a, lp.wq)?;
            let k = g.matmul(a, lp.wk)?;
            let v = g.matmul(a, lp.wv)?;
            let mut heads = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let off = h * self.head_dim;
                let qh = g.slice_cols(q, off, self.head_dim)?;
                let kh = g.slice_cols(k, off, self.head_dim)?;
                let vh = g.slice_cols(v, off, self.head_dim)?;
                let kf = match self.keys[l][h] {
                    Some(prev) => g.concat_rows(&[prev, kh])?,
                    None => kh,
                };
                let vf = match self.values[l][h] {
                    Some(prev) => g.concat_rows(&[prev, vh])?,
                    None => vh,
                };
                self.keys[l][h] = Some(kf);
                self.values[l][h] = Some(vf);
                let s = g.matmul_t(qh, kf)?;
                let s = g.scale(s, scale);
                let p = g.masked_softmax(s, Arc::clone(&allow))?;
                heads.push(g.matmul(p, vf)?);
            }
            let cat = if heads.len() == 1 {
                heads[0]
            } else {
                g.concat_cols(&heads)?
            };
            let o = g.matmul(cat, lp.wo)?;
            let o = g.add_row(o, lp.bo)?;
            x = g.add(x, o)?;
            let m = g.layer_norm(x, lp.ln2_g, lp.ln2_b)?;
            let h1 = g.matmul(m, lp.w1)?;
            let h1 = g.add_row(h1, lp.b1)?;
            let h1 = g.gelu(h1);
            let h2 = g.matmul(h1, lp.w2)?;
            let h2 = g.add_row(h2, lp.b2)?;
            x = g.add(x, h2)?;
            if l + 1 < layer_count {
                hidden.push(x);
            }
        }
        let fin = g.layer_norm(x, b.lnf_g, b.lnf_b)?;
        hidden.push(fin);
        let logits = g.matmul(fin, b.head_w)?;
        let logits = g.add_row(logits, b.head_b)?;
        self.len = total;
        Ok(Chunk { hidden, logits })
    }
}
