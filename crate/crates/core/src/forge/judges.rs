//! Programmatic solvers standing in for the curation filters' answer models.

use std::collections::BTreeSet;

use crate::model::vocab::{self, TokenId, CELL_KINDS};

use super::grid::{Grid, POOL};
use super::tasks::{Query, ToySample};

/// Multiset of kinds in each pool window, recovered from the pooled rendering only.
fn pool_multisets(grid: &Grid) -> Vec<Vec<Vec<u8>>> {
    let pooled = grid.pooled();
    let (pr, pc) = grid.pool_dims();
    let mut out = vec![vec![Vec::new(); pc]; pr];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, slot) in row.iter_mut().enumerate() {
            let cells = pool_size(grid, i, j);
            let hist = pooled.patch(i * pc + j);
            for (k, h) in hist.iter().enumerate().take(CELL_KINDS) {
                let n = (h * cells as f64).round() as usize;
                slot.extend(std::iter::repeat_n(k as u8, n));
            }
        }
    }
    out
}

fn pool_size(grid: &Grid, pr: usize, pc: usize) -> usize {
    let h = ((pr + 1) * POOL).min(grid.rows()) - pr * POOL;
    let w = ((pc + 1) * POOL).min(grid.cols()) - pc * POOL;
    h * w
}

/// All distinct orderings of a multiset.
fn distinct_permutations(items: &[u8]) -> Vec<Vec<u8>> {
    let mut sorted = items.to_vec();
    sorted.sort_unstable();
    let mut out = Vec::new();
    let mut used = vec![false; sorted.len()];
    let mut cur = Vec::with_capacity(sorted.len());
    fn rec(s: &[u8], used: &mut [bool], cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if cur.len() == s.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..s.len() {
            if used[i] || (i > 0 && s[i] == s[i - 1] && !used[i - 1]) {
                continue;
            }
            used[i] = true;
            cur.push(s[i]);
            rec(s, used, cur, out);
            cur.pop();
            used[i] = false;
        }
    }
    rec(&sorted, &mut used, &mut cur, &mut out);
    out
}

/// Sees the question and the pooled question image. Answers only when every
/// arrangement consistent with the pooled view yields the same answer;
/// otherwise abstains (`None`).
#[derive(Clone, Copy, Debug, Default)]
pub struct WeakJudge;

impl WeakJudge {
    pub fn answer(&self, sample: &ToySample) -> Option<TokenId> {
        let grid = &sample.question_grid;
        let pools = pool_multisets(grid);
        match &sample.query {
            Query::Lookup { region, dr, dc } => {
                let (pr, pc) = Grid::pool_of(region.row + dr, region.col + dc);
                let ms = &pools[pr][pc];
                let first = *ms.first()?;
                ms.iter()
                    .all(|&k| k == first)
                    .then(|| vocab::cell(first as usize))
            }
            Query::Count { target, removals } => {
                let mut totals: BTreeSet<usize> = BTreeSet::from([0]);
                for (pr, row) in pools.iter().enumerate() {
                    for (pc, ms) in row.iter().enumerate() {
                        let coords: Vec<(usize, usize)> =
                            grid.pool_cells(pr, pc).iter().map(|&(r, c, _)| (r, c)).collect();
                        let options: BTreeSet<usize> = distinct_permutations(ms)
                            .iter()
                            .map(|arr| {
                                arr.iter()
                                    .zip(&coords)
                                    .filter(|(&k, &(r, c))| {
                                        k == *target && !removals.iter().any(|op| op.clears(r, c, k))
                                    })
                                    .count()
                            })
                            .collect();
                        totals = totals
                            .iter()
                            .flat_map(|a| options.iter().map(move |b| a + b))
                            .collect();
                    }
                }
                (totals.len() == 1).then(|| vocab::number(*totals.first().expect("nonempty")))
            }
        }
    }
}

/// Sees the question and the auxiliary images only.
#[derive(Clone, Copy, Debug, Default)]
pub struct StrongJudge;

impl StrongJudge {
    pub fn answer(&self, sample: &ToySample) -> Option<TokenId> {
        let last = sample.aux_views().last()?;
        if last.grid.is_empty() {
            return None;
        }
        match &sample.query {
            Query::Lookup { dr, dc, .. } => {
                if *dr >= last.grid.rows() || *dc >= last.grid.cols() {
                    return None;
                }
                Some(vocab::cell(last.grid.get(*dr, *dc) as usize))
            }
            Query::Count { target, .. } => Some(vocab::number(last.grid.count(*target))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutations_of_multiset() {
        assert_eq!(distinct_permutations(&[0, 0, 1]).len(), 3);
        assert_eq!(distinct_permutations(&[0, 1, 2, 3]).len(), 24);
        assert_eq!(distinct_permutations(&[2, 2, 2, 2]).len(), 1);
    }
}
