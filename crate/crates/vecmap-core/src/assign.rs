//! Optimal bipartite assignment plus the element-level matching builders
//! used by track formation (IoU score) and metrics (Chamfer cost).

use thiserror::Error;

use crate::geom::{chamfer, resample, transform_polyline, GeomError};
use crate::raster::{iou, rasterize, GridSpec};
use crate::scene::{Element, Pose2};

/// A one-to-one partial matching. `pairs` is sorted by row index; rows and
/// columns each appear at most once.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub objective: f64,
}

impl Assignment {
    pub fn empty() -> Self {
        Assignment {
            pairs: Vec::new(),
            objective: 0.0,
        }
    }

    pub fn col_of(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|&&(r, _)| r == row).map(|&(_, c)| c)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AssignError {
    #[error("score matrix is not rectangular: row {row} has {got} entries, expected {want}")]
    Ragged { row: usize, got: usize, want: usize },
    #[error("score matrix entry ({0}, {1}) is NaN or +inf")]
    BadEntry(usize, usize),
}

/// Shortest-augmenting-path Hungarian method on a square cost matrix
/// (minimization). Returns, for each column, the assigned row.
fn solve_square(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1]; // 1-based; 0 means unassigned
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| row_of_col[j] - 1).collect()
}

struct Padded {
    n: usize,
    rows: usize,
    cols: usize,
    cost: Vec<Vec<f64>>,
    forbidden_cost: f64,
}

impl Padded {
    /// Square minimization problem: real cells carry -score, forbidden
    /// cells a penalty large enough that optima first minimize the number
    /// of forbidden cells, padded cells cost 0.
    fn build(scores: &[Vec<f64>]) -> Result<Padded, AssignError> {
        let rows = scores.len();
        let cols = scores[0].len();
        let mut max_abs: f64 = 0.0;
        for (i, row) in scores.iter().enumerate() {
            if row.len() != cols {
                return Err(AssignError::Ragged {
                    row: i,
                    got: row.len(),
                    want: cols,
                });
            }
            for (j, &s) in row.iter().enumerate() {
                if s.is_nan() || s == f64::INFINITY {
                    return Err(AssignError::BadEntry(i, j));
                }
                if s.is_finite() {
                    max_abs = max_abs.max(s.abs());
                }
            }
        }
        let n = rows.max(cols);
        let forbidden_cost = (n as f64 + 1.0) * (max_abs + 1.0);
        let mut cost = vec![vec![0.0; n]; n];
        for i in 0..rows {
            for j in 0..cols {
                cost[i][j] = if scores[i][j] == f64::NEG_INFINITY {
                    forbidden_cost
                } else {
                    -scores[i][j]
                };
            }
        }
        Ok(Padded {
            n,
            rows,
            cols,
            cost,
            forbidden_cost,
        })
    }

    fn total_in_row_order(&self, col_of_row: &[usize]) -> f64 {
        (0..self.n).map(|i| self.cost[i][col_of_row[i]]).sum()
    }

    fn solve(&self, skip_rows: &[bool], skip_cols: &[bool]) -> Vec<usize> {
        // Solve the subproblem over non-skipped rows/cols; returns col_of_row
        // over the full index space (skipped rows keep usize::MAX).
        let rows: Vec<usize> = (0..self.n).filter(|&i| !skip_rows[i]).collect();
        let cols: Vec<usize> = (0..self.n).filter(|&j| !skip_cols[j]).collect();
        debug_assert_eq!(rows.len(), cols.len());
        let mut full = vec![usize::MAX; self.n];
        if rows.is_empty() {
            return full;
        }
        let sub: Vec<Vec<f64>> = rows
            .iter()
            .map(|&i| cols.iter().map(|&j| self.cost[i][j]).collect())
            .collect();
        let row_of_col = solve_square(&sub);
        for (cj, &ri) in row_of_col.iter().enumerate() {
            full[rows[ri]] = cols[cj];
        }
        full
    }
}

/// Maximize total score over one-to-one partial matchings of size
/// min(rows, cols). `-inf` marks forbidden pairs, which are never part of
/// the returned pairs. Ties between optima are broken toward the
/// lexicographically smallest pair list for reproducibility.
pub fn hungarian_max(scores: &[Vec<f64>]) -> Result<Assignment, AssignError> {
    if scores.is_empty() || scores[0].is_empty() {
        return Ok(Assignment::empty());
    }
    let p = Padded::build(scores)?;
    let none = vec![false; p.n];
    let mut current = p.solve(&none, &none);
    let best_total = p.total_in_row_order(&current);
    let tol = 1e-9 * (1.0 + best_total.abs() + p.forbidden_cost);

    // Lexicographic refinement: fix rows in order, preferring the smallest
    // kept column; a candidate is accepted if an optimal completion exists.
    let mut skip_rows = vec![false; p.n];
    let mut skip_cols = vec![false; p.n];
    let mut fixed_col = vec![usize::MAX; p.n];
    for i in 0..p.rows {
        let current_col = current[i];
        // Kept (real, allowed) columns first in ascending order; dropped
        // columns (forbidden or padding) compare greater than any kept one.
        let mut candidates: Vec<usize> = (0..p.n).filter(|&j| !skip_cols[j]).collect();
        let is_kept = |j: usize| j < p.cols && p.cost[i][j] != p.forbidden_cost;
        candidates.sort_by_key(|&j| (!is_kept(j), j));
        for &j in &candidates {
            if j == current_col {
                break; // current witness already proves optimality of j
            }
            if !is_kept(j) && !is_kept(current_col) {
                break; // both dropped: indistinguishable in the pair list
            }
            skip_rows[i] = true;
            skip_cols[j] = true;
            let mut trial = p.solve(&skip_rows, &skip_cols);
            trial[i] = j;
            for r in 0..p.n {
                if fixed_col[r] != usize::MAX {
                    trial[r] = fixed_col[r];
                }
            }
            skip_rows[i] = false;
            skip_cols[j] = false;
            if p.total_in_row_order(&trial) <= best_total + tol {
                current = trial;
                break;
            }
        }
        fixed_col[i] = current[i];
        skip_rows[i] = true;
        skip_cols[current[i]] = true;
    }

    let mut pairs = Vec::new();
    let mut objective = 0.0;
    for i in 0..p.rows {
        let j = current[i];
        if j < p.cols && scores[i][j] != f64::NEG_INFINITY {
            pairs.push((i, j));
            objective += scores[i][j];
        }
    }
    Ok(Assignment { pairs, objective })
}

/// IoU matching between two element lists across a motion. Builds the score
/// matrix IoU(rasterize(transform(prev_i, motion)), rasterize(curr_j)) with
/// class-mismatched pairs forbidden, solves it, then drops pairs whose IoU
/// falls below `min_iou`.
pub fn match_by_iou(
    prev: &[Element],
    curr: &[Element],
    motion: &Pose2,
    thickness: f64,
    min_iou: f64,
    grid: GridSpec,
) -> Assignment {
    if prev.is_empty() || curr.is_empty() {
        return Assignment::empty();
    }
    let prev_masks: Vec<_> = prev
        .iter()
        .map(|e| rasterize(&transform_polyline(&e.geometry, motion), thickness, grid))
        .collect();
    let curr_masks: Vec<_> = curr
        .iter()
        .map(|e| rasterize(&e.geometry, thickness, grid))
        .collect();
    let scores: Vec<Vec<f64>> = prev
        .iter()
        .enumerate()
        .map(|(i, pe)| {
            curr.iter()
                .enumerate()
                .map(|(j, ce)| {
                    if pe.class != ce.class {
                        f64::NEG_INFINITY
                    } else {
                        iou(&prev_masks[i], &curr_masks[j]).expect("same grid")
                    }
                })
                .collect()
        })
        .collect();
    let solved = hungarian_max(&scores).expect("finite IoU matrix");
    let pairs: Vec<(usize, usize)> = solved
        .pairs
        .into_iter()
        .filter(|&(i, j)| scores[i][j] >= min_iou)
        .collect();
    let objective = pairs.iter().map(|&(i, j)| scores[i][j]).sum();
    Assignment { pairs, objective }
}

/// Chamfer matching between predictions and ground truth of a single class:
/// cost(i, j) = chamfer(resample(pred_i), resample(gt_j)); the returned
/// assignment minimizes total cost. No threshold is applied here.
pub fn match_by_chamfer(
    preds: &[Element],
    gts: &[Element],
    n: usize,
) -> Result<(Vec<Vec<f64>>, Assignment), GeomError> {
    if preds.is_empty() || gts.is_empty() {
        return Ok((vec![vec![]; preds.len()], Assignment::empty()));
    }
    let pred_curves: Vec<_> = preds
        .iter()
        .map(|e| resample(&e.geometry, n))
        .collect::<Result<_, _>>()?;
    let gt_curves: Vec<_> = gts
        .iter()
        .map(|e| resample(&e.geometry, n))
        .collect::<Result<_, _>>()?;
    let mut costs = vec![vec![0.0; gts.len()]; preds.len()];
    for (i, pc) in pred_curves.iter().enumerate() {
        for (j, gc) in gt_curves.iter().enumerate() {
            costs[i][j] = chamfer(pc, gc)?;
        }
    }
    let negated: Vec<Vec<f64>> = costs
        .iter()
        .map(|r| r.iter().map(|&c| -c).collect())
        .collect();
    let solved = hungarian_max(&negated).expect("finite cost matrix");
    let objective = solved.pairs.iter().map(|&(i, j)| costs[i][j]).sum();
    Ok((
        costs,
        Assignment {
            pairs: solved.pairs,
            objective,
        },
    ))
}
