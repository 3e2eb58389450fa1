//! Bipartite assignment between predicted and ground-truth boxes, the
//! matching cost recipe used for proposal training, and dual-granularity
//! prompt scoring.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{giou, l1_distance, BBox, Extent, GeometryError};

/// Default number of decoder queries in the proposal network.
pub const DEFAULT_NUM_QUERIES: usize = 900;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchingError {
    #[error("dimension mismatch: prompts have {0} channels, queries have {1}")]
    DimensionMismatch(usize, usize),
    #[error("cost matrix contains a non-finite entry at ({0}, {1})")]
    NonFiniteCost(usize, usize),
    #[error("cost matrix rows have unequal lengths")]
    Ragged,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Weights of the classification, L1 and GIoU terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub cls: f64,
    pub l1: f64,
    pub giou: f64,
}

impl CostWeights {
    /// Weights used when matching predictions to ground truth.
    pub const MATCHING: CostWeights = CostWeights {
        cls: 2.0,
        l1: 5.0,
        giou: 2.0,
    };
    /// Weights of the total training loss, kept for reference.
    pub const TOTAL_LOSS: CostWeights = CostWeights {
        cls: 1.0,
        l1: 5.0,
        giou: 2.0,
    };
}

impl Default for CostWeights {
    fn default() -> Self {
        Self::MATCHING
    }
}

/// Form of the classification term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ClassCost {
    /// `1 - score`.
    #[default]
    Linear,
    /// Deformable-DETR style focal cost: `pos - neg` with
    /// `pos = alpha (1-p)^gamma (-ln p)` and `neg = (1-alpha) p^gamma (-ln(1-p))`.
    Focal { alpha: f64, gamma: f64 },
}

impl ClassCost {
    pub fn cost(&self, score: f64) -> f64 {
        match *self {
            ClassCost::Linear => 1.0 - score,
            ClassCost::Focal { alpha, gamma } => {
                let p = score.clamp(1e-8, 1.0 - 1e-8);
                let pos = alpha * (1.0 - p).powf(gamma) * -p.ln();
                let neg = (1.0 - alpha) * p.powf(gamma) * -(1.0 - p).ln();
                pos - neg
            }
        }
    }
}

/// A predicted box with per-class scores indexed by class id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub class_scores: Vec<f64>,
}

impl ScoredBox {
    /// One-hot scores for a hard label.
    pub fn hard(bbox: BBox, class: usize, num_classes: usize) -> Self {
        let mut class_scores = vec![0.0; num_classes.max(class + 1)];
        class_scores[class] = 1.0;
        Self { bbox, class_scores }
    }

    pub fn score_for(&self, class: usize) -> f64 {
        self.class_scores.get(class).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledGt {
    pub bbox: BBox,
    pub class: usize,
}

/// `w_cls * cls_cost + w_l1 * l1 + w_giou * (1 - giou)`.
pub fn pair_cost(
    pred: &ScoredBox,
    gt: &LabeledGt,
    weights: &CostWeights,
    frame: &Extent,
    class_cost: ClassCost,
) -> Result<f64, MatchingError> {
    let cls = class_cost.cost(pred.score_for(gt.class));
    let l1 = l1_distance(&pred.bbox, &gt.bbox, frame);
    let g = giou(&pred.bbox, &gt.bbox)?;
    Ok(weights.cls * cls + weights.l1 * l1 + weights.giou * (1.0 - g))
}

/// Full `predictions x ground truth` cost matrix.
pub fn cost_matrix(
    preds: &[ScoredBox],
    gts: &[LabeledGt],
    weights: &CostWeights,
    frame: &Extent,
    class_cost: ClassCost,
) -> Result<Array2<f64>, MatchingError> {
    let mut m = Array2::zeros((preds.len(), gts.len()));
    for (i, p) in preds.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            m[[i, j]] = pair_cost(p, g, weights, frame, class_cost)?;
        }
    }
    Ok(m)
}

/// Injective partial map from rows (predictions) to columns (ground truth).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `(row, column)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl Assignment {
    pub fn column_for(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == row).map(|p| p.1)
    }

    pub fn row_for(&self, col: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.1 == col).map(|p| p.0)
    }
}

/// Minimum-cost assignment covering `min(rows, cols)` pairs.
///
/// Among equal-cost optima the lexicographically smallest column sequence
/// (by row index) is returned. Rectangular inputs are padded to square with
/// a constant; padded pairs never appear in the output.
pub fn hungarian(cost: &Array2<f64>) -> Result<Assignment, MatchingError> {
    let (rows, cols) = cost.dim();
    if let Some(((i, j), _)) = cost.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(MatchingError::NonFiniteCost(i, j));
    }
    if rows == 0 || cols == 0 {
        return Ok(Assignment {
            pairs: Vec::new(),
            total_cost: 0.0,
        });
    }
    let n = rows.max(cols);
    // Any constant works as padding: every full assignment uses each padded
    // row or column exactly once.
    let padded = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            cost[[i, j]]
        } else {
            0.0
        }
    };

    let (row_to_col, u, v) = solve_square(n, &padded);
    let row_to_col = lexicographic_refine(n, &padded, row_to_col, &u, &v, cost);

    let mut pairs = Vec::with_capacity(rows.min(cols));
    let mut total_cost = 0.0;
    for (i, &j) in row_to_col.iter().enumerate().take(rows) {
        if j < cols {
            pairs.push((i, j));
            total_cost += cost[[i, j]];
        }
    }
    Ok(Assignment { pairs, total_cost })
}

/// Shortest augmenting path Hungarian algorithm with row/column potentials.
fn solve_square(n: usize, c: &impl Fn(usize, usize) -> f64) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    // 1-based arrays; index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = c(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    (row_to_col, u[1..].to_vec(), v[1..].to_vec())
}

/// Every optimal assignment uses only edges with zero reduced cost under the
/// optimal potentials, so the lexicographically smallest optimum is the
/// lexicographically smallest perfect matching of that tight subgraph.
/// Rows are fixed in order, each to the lowest tight column that still
/// admits a perfect matching of the remaining rows.
fn lexicographic_refine(
    n: usize,
    c: &impl Fn(usize, usize) -> f64,
    mut row_to_col: Vec<usize>,
    u: &[f64],
    v: &[f64],
    original: &Array2<f64>,
) -> Vec<usize> {
    let scale = original.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let eps = 1e-12 * scale * n as f64;
    let tight: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| c(i, j) - u[i] - v[j] <= eps).collect())
        .collect();

    let mut col_to_row = vec![0usize; n];
    for (i, &j) in row_to_col.iter().enumerate() {
        col_to_row[j] = i;
    }
    let mut locked = vec![false; n];

    for i in 0..n {
        let current = row_to_col[i];
        for &j in &tight[i] {
            if j == current {
                break;
            }
            if locked[j] {
                continue;
            }
            // Re-home the row currently holding `j` onto `current` through an
            // alternating path of tight edges over unlocked columns.
            let start = col_to_row[j];
            if let Some(path) = alternating_path(&tight, &col_to_row, &locked, start, j, current) {
                for (row, col) in path {
                    row_to_col[row] = col;
                    col_to_row[col] = row;
                }
                row_to_col[i] = j;
                col_to_row[j] = i;
                break;
            }
        }
        locked[row_to_col[i]] = true;
    }
    row_to_col
}

/// Breadth-first search for row reassignments moving `start` off `avoid` and
/// ending with some row taking `target`. Returns the `(row, new_col)` moves.
fn alternating_path(
    tight: &[Vec<usize>],
    col_to_row: &[usize],
    locked: &[bool],
    start: usize,
    avoid: usize,
    target: usize,
) -> Option<Vec<(usize, usize)>> {
    let n = tight.len();
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut seen = vec![false; n];
    seen[avoid] = true;
    let mut queue = std::collections::VecDeque::new();
    queue.push_back((start, usize::MAX));
    while let Some((row, _)) = queue.pop_front() {
        for &col in &tight[row] {
            if seen[col] || locked[col] {
                continue;
            }
            seen[col] = true;
            parent[col] = Some((row, usize::MAX));
            if col == target {
                let mut moves = Vec::new();
                let mut c = col;
                loop {
                    let (r, _) = parent[c].unwrap();
                    moves.push((r, c));
                    if r == start {
                        break;
                    }
                    // `r` gives up its previous column, which it held before.
                    c = row_to_prev(col_to_row, r);
                }
                return Some(moves);
            }
            queue.push_back((col_to_row[col], col));
        }
    }
    None
}

fn row_to_prev(col_to_row: &[usize], row: usize) -> usize {
    col_to_row
        .iter()
        .position(|&r| r == row)
        .expect("every row holds a column")
}

/// Prompt-query scores `P . Q^T` (`C x D` times `D x N` gives `C x N`).
pub fn granularity_scores(
    prompts: &Array2<f64>,
    queries: &Array2<f64>,
) -> Result<Array2<f64>, MatchingError> {
    if prompts.ncols() != queries.ncols() {
        return Err(MatchingError::DimensionMismatch(
            prompts.ncols(),
            queries.ncols(),
        ));
    }
    Ok(prompts.dot(&queries.t()))
}

/// Matches predictions to ground truth with the weighted cost recipe.
pub fn match_predictions(
    preds: &[ScoredBox],
    gts: &[LabeledGt],
    weights: &CostWeights,
    frame: &Extent,
    class_cost: ClassCost,
) -> Result<Assignment, MatchingError> {
    hungarian(&cost_matrix(preds, gts, weights, frame, class_cost)?)
}
