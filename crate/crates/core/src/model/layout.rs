//! Interleaved sequences of typed segments.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::vocab::TokenId;
use super::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentRole {
    QuestionText,
    QuestionImage,
    AuxImage,
    Latent,
    ObservationText,
    PlainText,
    Answer,
}

impl SegmentRole {
    pub fn is_image(self) -> bool {
        matches!(self, SegmentRole::QuestionImage | SegmentRole::AuxImage)
    }

    pub fn is_text(self) -> bool {
        !self.is_image() && self != SegmentRole::Latent
    }
}

/// Row-major grid of patches, each a fixed-length feature vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchGrid {
    rows: usize,
    cols: usize,
    features: usize,
    data: Vec<f64>,
}

impl PatchGrid {
    pub fn new(rows: usize, cols: usize, features: usize, data: Vec<f64>) -> Result<Self, ModelError> {
        if data.len() != rows * cols * features {
            return Err(ModelError::PatchMismatch {
                expected: rows * cols * features,
                got: data.len(),
            });
        }
        Ok(Self {
            rows,
            cols,
            features,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn patch_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn patch(&self, i: usize) -> &[f64] {
        &self.data[i * self.features..(i + 1) * self.features]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Content {
    Tokens(Vec<TokenId>),
    Patches(PatchGrid),
    Slots(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub role: SegmentRole,
    pub content: Content,
}

impl Segment {
    pub fn text(role: SegmentRole, tokens: Vec<TokenId>) -> Self {
        Self {
            role,
            content: Content::Tokens(tokens),
        }
    }

    pub fn image(role: SegmentRole, patches: PatchGrid) -> Self {
        Self {
            role,
            content: Content::Patches(patches),
        }
    }

    pub fn latent(slots: usize) -> Self {
        Self {
            role: SegmentRole::Latent,
            content: Content::Slots(slots),
        }
    }

    pub fn len(&self) -> usize {
        match &self.content {
            Content::Tokens(t) => t.len(),
            Content::Patches(p) => p.patch_count(),
            Content::Slots(k) => *k,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tokens(&self) -> Option<&[TokenId]> {
        match &self.content {
            Content::Tokens(t) => Some(t),
            _ => None,
        }
    }

    pub fn patches(&self) -> Option<&PatchGrid> {
        match &self.content {
            Content::Patches(p) => Some(p),
            _ => None,
        }
    }

    fn check(&self) -> Result<(), ModelError> {
        let ok = match (&self.content, self.role) {
            (Content::Tokens(_), r) => r.is_text(),
            (Content::Patches(_), r) => r.is_image(),
            (Content::Slots(_), r) => r == SegmentRole::Latent,
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidLayout(format!(
                "{:?} segment cannot hold this content",
                self.role
            )))
        }
    }
}

/// Ordered segments; position `p` of the layout is its absolute position index.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct SequenceLayout {
    segments: Vec<Segment>,
}

impl SequenceLayout {
    pub fn new(segments: Vec<Segment>) -> Result<Self, ModelError> {
        for s in &segments {
            s.check()?;
        }
        Ok(Self { segments })
    }

    pub fn push(&mut self, segment: Segment) -> Result<(), ModelError> {
        segment.check()?;
        self.segments.push(segment);
        Ok(())
    }

    /// Appends one token, extending the trailing segment when it already has `role`.
    pub fn push_token(&mut self, role: SegmentRole, token: TokenId) -> Result<(), ModelError> {
        if let Some(Segment {
            role: r,
            content: Content::Tokens(t),
        }) = self.segments.last_mut()
        {
            if *r == role {
                t.push(token);
                return Ok(());
            }
        }
        self.push(Segment::text(role, vec![token]))
    }

    /// Appends one latent slot, extending a trailing latent segment.
    pub fn push_latent_slot(&mut self) {
        if let Some(Segment {
            content: Content::Slots(k),
            ..
        }) = self.segments.last_mut()
        {
            *k += 1;
            return;
        }
        self.segments.push(Segment::latent(1));
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Position range of every segment, in order.
    pub fn spans(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.segments
            .iter()
            .map(|s| {
                let r = start..start + s.len();
                start = r.end;
                r
            })
            .collect()
    }

    pub fn roles(&self) -> Vec<SegmentRole> {
        self.segments
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.role, s.len()))
            .collect()
    }

    /// Index of the owning segment for every position.
    pub fn segment_index(&self) -> Vec<usize> {
        self.segments
            .iter()
            .enumerate()
            .flat_map(|(i, s)| std::iter::repeat_n(i, s.len()))
            .collect()
    }

    /// Token at every position (`None` at image and latent positions).
    pub fn tokens(&self) -> Vec<Option<TokenId>> {
        self.segments
            .iter()
            .flat_map(|s| match &s.content {
                Content::Tokens(t) => t.iter().map(|x| Some(*x)).collect::<Vec<_>>(),
                _ => vec![None; s.len()],
            })
            .collect()
    }

    pub fn positions_with_role(&self, role: SegmentRole) -> Vec<usize> {
        self.roles()
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == role)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn latent_positions(&self) -> Vec<usize> {
        self.positions_with_role(SegmentRole::Latent)
    }

    pub fn has_role(&self, role: SegmentRole) -> bool {
        self.segments.iter().any(|s| s.role == role && !s.is_empty())
    }

    /// Copy without any segment of `role`.
    pub fn without_role(&self, role: SegmentRole) -> Self {
        Self {
            segments: self.segments.iter().filter(|s| s.role != role).cloned().collect(),
        }
    }

    /// Copy with a `k`-slot latent segment right after every auxiliary image.
    pub fn with_latents_after_aux(&self, k: usize) -> Self {
        let mut segments = Vec::with_capacity(self.segments.len() * 2);
        for s in &self.segments {
            segments.push(s.clone());
            if s.role == SegmentRole::AuxImage {
                segments.push(Segment::latent(k));
            }
        }
        Self { segments }
    }

    /// Copy with a `k`-slot latent segment after every `<latent>` token, skipping
    /// over an auxiliary image that directly follows it.
    pub fn with_latents_after_marker(&self, k: usize, marker: TokenId) -> Self {
        let mut out = SequenceLayout::default();
        for (i, s) in self.segments.iter().enumerate() {
            match (&s.content, s.role) {
                (Content::Tokens(toks), role) => {
                    let mut run = Vec::new();
                    for (j, t) in toks.iter().enumerate() {
                        run.push(*t);
                        let last = j + 1 == toks.len();
                        let next_is_aux = last
                            && self
                                .segments
                                .get(i + 1)
                                .is_some_and(|n| n.role == SegmentRole::AuxImage);
                        if *t == marker && !next_is_aux {
                            out.segments.push(Segment::text(role, std::mem::take(&mut run)));
                            out.segments.push(Segment::latent(k));
                        }
                    }
                    if !run.is_empty() {
                        out.segments.push(Segment::text(role, run));
                    }
                }
                (_, SegmentRole::AuxImage) => {
                    out.segments.push(s.clone());
                    out.segments.push(Segment::latent(k));
                }
                _ => out.segments.push(s.clone()),
            }
        }
        out
    }

    /// Source position whose layer-L state feeds slot 0 of the latent segment at `seg`:
    /// the last position before it that is not part of an auxiliary image.
    pub fn latent_source(&self, seg: usize) -> Option<usize> {
        let spans = self.spans();
        let mut i = seg;
        while i > 0 {
            i -= 1;
            if self.segments[i].role != SegmentRole::AuxImage && !self.segments[i].is_empty() {
                return Some(spans[i].end - 1);
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::vocab::{self, LATENT_START};

    fn grid(n: usize) -> PatchGrid {
        PatchGrid::new(1, n, 7, vec![0.0; n * 7]).unwrap()
    }

    #[test]
    fn counting_positions() {
        let l = SequenceLayout::new(vec![
            Segment::image(SegmentRole::QuestionImage, grid(4)),
            Segment::text(SegmentRole::QuestionText, vec![vocab::BOS, vocab::word("find"), vocab::EOS]),
        ])
        .unwrap();
        assert_eq!(l.len(), 7);
        assert_eq!(l.roles()[4], SegmentRole::QuestionText);
    }

    #[test]
    fn rejects_mismatched_content() {
        let s = Segment {
            role: SegmentRole::Latent,
            content: Content::Tokens(vec![vocab::BOS]),
        };
        assert!(SequenceLayout::new(vec![s]).is_err());
    }

    #[test]
    fn marker_insertion_handles_aux_and_plain() {
        let l = SequenceLayout::new(vec![
            Segment::text(SegmentRole::PlainText, vec![vocab::BOS, LATENT_START]),
            Segment::image(SegmentRole::AuxImage, grid(2)),
            Segment::text(SegmentRole::PlainText, vec![vocab::LATENT_END, LATENT_START, vocab::LATENT_END]),
        ])
        .unwrap();
        let s = l.with_latents_after_marker(3, LATENT_START);
        let roles: Vec<_> = s.segments().iter().map(|s| (s.role, s.len())).collect();
        assert_eq!(
            roles,
            vec![
                (SegmentRole::PlainText, 2),
                (SegmentRole::AuxImage, 2),
                (SegmentRole::Latent, 3),
                (SegmentRole::PlainText, 2),
                (SegmentRole::Latent, 3),
                (SegmentRole::PlainText, 1),
            ]
        );
        assert_eq!(s.latent_source(2), Some(1));
        assert_eq!(s.latent_source(4), Some(8));
    }
}
