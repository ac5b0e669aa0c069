//! Task families and the samples they produce.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::vocab::{self, TokenId};

use super::grid::{BoundingBox, Grid, EMPTY, SYMBOLS};
use super::ForgeError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Lookup,
    Count,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Lookup => "lookup",
            Family::Count => "count",
        }
    }
}

/// An auxiliary image: a grid plus the region of the question grid it depicts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxView {
    pub grid: Grid,
    pub bbox: BoundingBox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CotSegment {
    Text(Vec<TokenId>),
    Aux(AuxView),
}

/// Half-open token range `[start, end)` inside text segment `segment` of the CoT.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationSpan {
    pub segment: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op", content = "arg")]
pub enum Removal {
    Kind(u8),
    Row(usize),
    Col(usize),
}

impl Removal {
    pub fn apply(self, grid: &mut Grid) {
        for r in 0..grid.rows() {
            for c in 0..grid.cols() {
                let hit = match self {
                    Removal::Kind(k) => grid.get(r, c) == k,
                    Removal::Row(x) => r == x,
                    Removal::Col(x) => c == x,
                };
                if hit {
                    grid.set(r, c, EMPTY);
                }
            }
        }
    }

    /// Whether the cell at `(r, c)` holding `kind` is cleared by this removal.
    pub fn clears(self, r: usize, c: usize, kind: u8) -> bool {
        match self {
            Removal::Kind(k) => kind == k,
            Removal::Row(x) => r == x,
            Removal::Col(x) => c == x,
        }
    }

    pub fn tokens(self) -> [TokenId; 2] {
        match self {
            Removal::Kind(k) => [vocab::word("del"), vocab::cell(k as usize)],
            Removal::Row(r) => [vocab::word("delrow"), vocab::number(r)],
            Removal::Col(c) => [vocab::word("delcol"), vocab::number(c)],
        }
    }
}

/// What the question asks, in structured form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Query {
    /// Symbol at offset `(dr, dc)` inside `region`.
    Lookup { region: BoundingBox, dr: usize, dc: usize },
    /// Remaining count of `target` after applying `removals` in order.
    Count { target: u8, removals: Vec<Removal> },
}

/// One synthetic multimodal problem with its interleaved chain of thought.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySample {
    pub id: u64,
    pub family: Family,
    pub query: Query,
    pub question_tokens: Vec<TokenId>,
    pub question_grid: Grid,
    pub cot: Vec<CotSegment>,
    pub observation_spans: Vec<ObservationSpan>,
    /// Gold answer token, rendered as `\boxed{ X }`.
    pub answer: TokenId,
    /// Set when an auxiliary image was deliberately damaged.
    pub corrupted: bool,
    /// Set once observation delimiters were inserted into the CoT text.
    pub tagged: bool,
}

impl ToySample {
    pub fn aux_views(&self) -> impl Iterator<Item = &AuxView> {
        self.cot.iter().filter_map(|s| match s {
            CotSegment::Aux(a) => Some(a),
            CotSegment::Text(_) => None,
        })
    }

    pub fn answer_tokens(&self) -> Vec<TokenId> {
        vec![vocab::BOXED_OPEN, self.answer, vocab::BOXED_CLOSE, vocab::EOS]
    }

    /// Observation tokens in CoT order.
    pub fn observation_tokens(&self) -> Vec<TokenId> {
        self.observation_spans
            .iter()
            .flat_map(|s| match &self.cot[s.segment] {
                CotSegment::Text(t) => t[s.start..s.end].to_vec(),
                CotSegment::Aux(_) => Vec::new(),
            })
            .collect()
    }
}

fn random_grid<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Grid {
    Grid::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(0..SYMBOLS)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LookupShape {
    pub rows: usize,
    pub cols: usize,
    pub crop_height: usize,
    pub crop_width: usize,
}

impl Default for LookupShape {
    fn default() -> Self {
        Self {
            rows: 4,
            cols: 4,
            crop_height: 2,
            crop_width: 2,
        }
    }
}

/// Question `find r c h w at dr dc`; CoT `look r c h w <latent> [crop] </latent> cells... so`.
pub fn generate_lookup_task<R: Rng>(rng: &mut R, shape: LookupShape, id: u64) -> Result<ToySample, ForgeError> {
    let LookupShape {
        rows,
        cols,
        crop_height: h,
        crop_width: w,
    } = shape;
    if h == 0 || w == 0 || h > rows || w > cols || rows > vocab::MAX_NUMBER || cols > vocab::MAX_NUMBER {
        return Err(ForgeError::BadShape(format!("crop {h}x{w} in grid {rows}x{cols}")));
    }
    let grid = random_grid(rng, rows, cols);
    let region = BoundingBox {
        row: rng.random_range(0..=rows - h),
        col: rng.random_range(0..=cols - w),
        height: h,
        width: w,
    };
    let (dr, dc) = (rng.random_range(0..h), rng.random_range(0..w));
    Ok(build_lookup(grid, region, dr, dc, id))
}

/// Deterministic assembly of a lookup sample from its ingredients.
pub fn build_lookup(grid: Grid, region: BoundingBox, dr: usize, dc: usize, id: u64) -> ToySample {
    let n = vocab::number;
    let crop = grid.crop(region);
    let answer = vocab::cell(crop.get(dr, dc) as usize);
    let question_tokens = vec![
        vocab::BOS,
        vocab::word("find"),
        n(region.row),
        n(region.col),
        n(region.height),
        n(region.width),
        vocab::word("at"),
        n(dr),
        n(dc),
    ];
    let lead = vec![
        vocab::word("look"),
        n(region.row),
        n(region.col),
        n(region.height),
        n(region.width),
        vocab::LATENT_START,
    ];
    let mut after = vec![vocab::LATENT_END];
    after.extend(crop.cells().iter().map(|&k| vocab::cell(k as usize)));
    after.push(vocab::word("so"));
    let span = ObservationSpan {
        segment: 2,
        start: 1,
        end: 1 + crop.cells().len(),
    };
    ToySample {
        id,
        family: Family::Lookup,
        query: Query::Lookup { region, dr, dc },
        question_tokens,
        question_grid: grid,
        cot: vec![
            CotSegment::Text(lead),
            CotSegment::Aux(AuxView { grid: crop, bbox: region }),
            CotSegment::Text(after),
        ],
        observation_spans: vec![span],
        answer,
        corrupted: false,
        tagged: false,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountShape {
    pub rows: usize,
    pub cols: usize,
    pub steps: usize,
}

impl Default for CountShape {
    fn default() -> Self {
        Self {
            rows: 4,
            cols: 4,
            steps: 2,
        }
    }
}

/// Question `count T <removals>`; one CoT step per removal, each showing the updated grid
/// and observing the running count of `T`.
pub fn generate_count_task<R: Rng>(rng: &mut R, shape: CountShape, id: u64) -> Result<ToySample, ForgeError> {
    if shape.steps == 0 {
        return Err(ForgeError::BadShape("count task needs at least one removal".into()));
    }
    if shape.rows * shape.cols > vocab::MAX_NUMBER || shape.rows == 0 || shape.cols == 0 {
        return Err(ForgeError::BadShape(format!("grid {}x{}", shape.rows, shape.cols)));
    }
    let grid = random_grid(rng, shape.rows, shape.cols);
    let target = rng.random_range(0..SYMBOLS);
    let removals = (0..shape.steps)
        .map(|_| match rng.random_range(0..3) {
            0 => {
                let mut k = rng.random_range(0..SYMBOLS - 1);
                if k >= target {
                    k += 1;
                }
                Removal::Kind(k)
            }
            1 => Removal::Row(rng.random_range(0..shape.rows)),
            _ => Removal::Col(rng.random_range(0..shape.cols)),
        })
        .collect();
    Ok(build_count(grid, target, removals, id))
}

pub fn build_count(grid: Grid, target: u8, removals: Vec<Removal>, id: u64) -> ToySample {
    let full = BoundingBox {
        row: 0,
        col: 0,
        height: grid.rows(),
        width: grid.cols(),
    };
    let mut question_tokens = vec![vocab::BOS, vocab::word("count"), vocab::cell(target as usize)];
    for r in &removals {
        question_tokens.extend(r.tokens());
    }
    let mut cot = Vec::new();
    let mut spans = Vec::new();
    let mut state = grid.clone();
    let mut text = Vec::new();
    for r in &removals {
        r.apply(&mut state);
        text.push(vocab::word("step"));
        text.extend(r.tokens());
        text.push(vocab::LATENT_START);
        cot.push(CotSegment::Text(std::mem::take(&mut text)));
        cot.push(CotSegment::Aux(AuxView {
            grid: state.clone(),
            bbox: full,
        }));
        text.push(vocab::LATENT_END);
        spans.push(ObservationSpan {
            segment: cot.len(),
            start: 1,
            end: 2,
        });
        text.push(vocab::number(state.count(target)));
    }
    text.push(vocab::word("so"));
    cot.push(CotSegment::Text(text));
    ToySample {
        id,
        family: Family::Count,
        query: Query::Count { target, removals },
        question_tokens,
        answer: vocab::number(state.count(target)),
        question_grid: grid,
        cot,
        observation_spans: spans,
        corrupted: false,
        tagged: false,
    }
}

/// Independent simulator: remaining count of `target` after `removals`.
pub fn simulate_count(grid: &Grid, target: u8, removals: &[Removal]) -> usize {
    let mut n = 0;
    for r in 0..grid.rows() {
        for c in 0..grid.cols() {
            let k = grid.get(r, c);
            if k == target && !removals.iter().any(|op| op.clears(r, c, k)) {
                n += 1;
            }
        }
    }
    n
}

/// Damages the auxiliary evidence for the answer: the asked cell for lookup,
/// one cell of the final grid for count, chosen so the visible answer changes.
pub fn corrupt<R: Rng>(sample: &mut ToySample, rng: &mut R) {
    let last_aux = sample
        .cot
        .iter()
        .rposition(|s| matches!(s, CotSegment::Aux(_)))
        .expect("every sample has an auxiliary image");
    let CotSegment::Aux(view) = &mut sample.cot[last_aux] else {
        unreachable!()
    };
    match &sample.query {
        Query::Lookup { dr, dc, .. } => {
            let old = view.grid.get(*dr, *dc);
            let mut k = rng.random_range(0..SYMBOLS - 1);
            if k >= old {
                k += 1;
            }
            view.grid.set(*dr, *dc, k);
        }
        Query::Count { target, .. } => {
            let g = &mut view.grid;
            let cells: Vec<(usize, usize)> = (0..g.rows()).flat_map(|r| (0..g.cols()).map(move |c| (r, c))).collect();
            let (r, c) = cells[rng.random_range(0..cells.len())];
            if g.get(r, c) == *target {
                g.set(r, c, EMPTY);
            } else {
                g.set(r, c, *target);
            }
        }
    }
    sample.corrupted = true;
}

/// Token inside the last well-formed `\boxed{ X }` span.
pub fn boxed_answer(tokens: &[TokenId]) -> Option<TokenId> {
    tokens
        .windows(3)
        .rev()
        .find(|w| w[0] == vocab::BOXED_OPEN && w[2] == vocab::BOXED_CLOSE)
        .map(|w| w[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_example_from_a_known_grid() {
        let grid = Grid::new(4, 4, vec![0, 1, 4, 4, 2, 3, 4, 4, 5, 5, 5, 5, 5, 5, 5, 5]);
        let region = BoundingBox { row: 0, col: 0, height: 2, width: 2 };
        let s = build_lookup(grid, region, 0, 1, 0);
        assert_eq!(s.answer, vocab::cell(1));
        assert_eq!(
            s.observation_tokens(),
            vec![vocab::cell(0), vocab::cell(1), vocab::cell(2), vocab::cell(3)]
        );
    }

    #[test]
    fn one_by_one_crop() {
        let grid = Grid::new(2, 2, vec![3, 1, 2, 0]);
        let region = BoundingBox { row: 1, col: 1, height: 1, width: 1 };
        assert_eq!(build_lookup(grid, region, 0, 0, 0).answer, vocab::cell(0));
    }

    #[test]
    fn count_removing_other_kind() {
        // three A, two B
        let grid = Grid::new(1, 5, vec![0, 1, 0, 1, 0]);
        let s = build_count(grid, 0, vec![Removal::Kind(1)], 0);
        assert_eq!(s.answer, vocab::number(3));
    }

    #[test]
    fn count_removing_everything() {
        let grid = Grid::new(2, 2, vec![0, 0, 1, 0]);
        let s = build_count(grid, 0, vec![Removal::Row(0), Removal::Row(1)], 0);
        assert_eq!(s.answer, vocab::number(0));
    }
}
