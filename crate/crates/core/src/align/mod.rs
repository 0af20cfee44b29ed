//! Dynamic-programming sequence alignment.
//!
//! [`drop_dtw`] aligns a row sequence against a column sequence while letting
//! either side skip ("drop") elements at a fixed per-element price. It runs in
//! two matching modes: one-to-one, where each row absorbs at most one column,
//! and many-to-one, where a row may absorb any number of columns. [`dtw`] is
//! the classic full alignment, and [`brute_force_align`] enumerates every
//! admissible correspondence for small inputs and serves as the test oracle.

mod brute;
mod drop_dtw;
mod dtw;

pub use brute::brute_force_align;
pub use drop_dtw::drop_dtw;
pub use dtw::dtw;

use crate::error::{Error, Result};
use crate::matrix::{cosine_matrix, Matrix};
use crate::types::{Correspondence, EmbeddingSequence, MatchMode};

/// Percentile used for drop costs unless configured otherwise.
pub const DEFAULT_DROP_PERCENTILE: f64 = 0.8;

/// Match costs plus the per-element price of dropping a row or a column.
/// An absent drop cost forbids dropping on that side.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub match_cost: Matrix,
    pub row_drop_cost: Option<f64>,
    pub col_drop_cost: Option<f64>,
}

impl CostSpec {
    pub fn new(match_cost: Matrix, row_drop_cost: Option<f64>, col_drop_cost: Option<f64>) -> Self {
        Self {
            match_cost,
            row_drop_cost,
            col_drop_cost,
        }
    }

    /// Same drop cost on both sides.
    pub fn symmetric(match_cost: Matrix, drop_cost: f64) -> Self {
        Self::new(match_cost, Some(drop_cost), Some(drop_cost))
    }

    pub fn rows(&self) -> usize {
        self.match_cost.rows()
    }

    pub fn cols(&self) -> usize {
        self.match_cost.cols()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.match_cost.is_empty() {
            return Err(Error::InvalidArgument("empty cost matrix".into()));
        }
        if let Some((row, col)) = self.match_cost.find_non_finite() {
            return Err(Error::NonFinite { row, col });
        }
        for c in [self.row_drop_cost, self.col_drop_cost].into_iter().flatten() {
            if !c.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite drop cost {c}")));
            }
        }
        Ok(())
    }

    /// Total cost of a correspondence under this spec, summed in a fixed
    /// order: matched costs row-major, then row drops, then column drops.
    pub fn cost_of(&self, corr: &Correspondence) -> f64 {
        self.cost_of_parts(
            &corr.pairs(),
            corr.dropped_rows().len(),
            corr.dropped_cols().len(),
        )
    }

    /// [`CostSpec::cost_of`] from raw parts; `pairs` must be row-major sorted.
    pub(crate) fn cost_of_parts(&self, pairs: &[(usize, usize)], rows_dropped: usize, cols_dropped: usize) -> f64 {
        let mut total = 0.0;
        for &(i, j) in pairs {
            total += self.match_cost[(i, j)];
        }
        if rows_dropped > 0 {
            total += rows_dropped as f64 * self.row_drop_cost.unwrap_or(f64::NAN);
        }
        if cols_dropped > 0 {
            total += cols_dropped as f64 * self.col_drop_cost.unwrap_or(f64::NAN);
        }
        total
    }
}

/// Negative cosine similarity between every row of `z` (rows of the result)
/// and every row of `x` (columns of the result).
pub fn match_cost_matrix(x: &EmbeddingSequence, z: &EmbeddingSequence) -> Result<Matrix> {
    Ok(cosine_matrix(z.data(), x.data())?.map(|c| -c))
}

/// Nearest-rank percentile of all entries: the element at index
/// `ceil(p·n) − 1` of the ascending sort.
pub fn percentile_drop_cost(costs: &Matrix, p: f64) -> Result<f64> {
    if costs.is_empty() {
        return Err(Error::InvalidArgument("empty cost matrix".into()));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "percentile {p} outside (0, 1]"
        )));
    }
    if let Some((row, col)) = costs.find_non_finite() {
        return Err(Error::NonFinite { row, col });
    }
    let mut v = costs.as_slice().to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    // the epsilon keeps e.g. 0.8 * 5 from landing on 4.000...1
    let rank = ((p * n as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(v[rank.min(n) - 1])
}

/// Convenience wrapper: cosine match costs between `rows` and `cols`, drop
/// cost from `percentile` applied to both sides, then [`drop_dtw`].
pub fn align_sequences(
    rows: &EmbeddingSequence,
    cols: &EmbeddingSequence,
    mode: MatchMode,
    percentile: f64,
) -> Result<Correspondence> {
    let costs = match_cost_matrix(cols, rows)?;
    let drop = percentile_drop_cost(&costs, percentile)?;
    drop_dtw(&CostSpec::symmetric(costs, drop), mode)
}
