use std::collections::BTreeSet;

use super::CostSpec;
use crate::error::{Error, Result};
use crate::types::{Correspondence, MatchMode};

const INF: f64 = f64::INFINITY;

/// Minimum-cost drop-aware alignment.
///
/// Two tables over prefixes (first `i` rows, first `j` columns):
///
/// * `any[i][j]`: best cost with every element of both prefixes resolved.
/// * `open[i][j]`: same, restricted to row `i` being matched (it may keep
///   absorbing columns in many-to-one mode).
///
/// ```text
/// open[i][j] = min( C[i][j] + any[i-1][j-1],          first match of row i
///                   C[i][j] + open[i][j-1],            many-to-one only
///                   col_drop + open[i][j-1] )          many-to-one only
/// any[i][j]  = min( open[i][j],
///                   col_drop + any[i][j-1],
///                   row_drop + any[i-1][j] )
/// ```
///
/// Traceback prefers a match over a column drop over a row drop. The
/// reported `total_cost` is [`CostSpec::cost_of`] on the traced result, which
/// agrees with the table optimum up to summation order.
pub fn drop_dtw(spec: &CostSpec, mode: MatchMode) -> Result<Correspondence> {
    spec.validate()?;
    if mode == MatchMode::ManyToMany {
        return Err(Error::InvalidArgument(
            "drop_dtw supports one_to_one and many_to_one; use dtw for full warping".into(),
        ));
    }
    if spec.row_drop_cost.is_none() && spec.col_drop_cost.is_none() {
        return Err(Error::InvalidArgument(
            "drop_dtw needs at least one drop cost".into(),
        ));
    }
    let tables = Tables::fill(spec, mode);
    let (k, n) = (spec.rows(), spec.cols());
    if !tables.any[tables.idx(k, n)].is_finite() {
        return Err(Error::Infeasible(format!(
            "no admissible {k}x{n} {mode:?} alignment with the given drop costs"
        )));
    }
    let (pairs, dropped_rows, dropped_cols) = tables.traceback(spec, mode);
    let total = spec.cost_of_parts(&pairs, dropped_rows.len(), dropped_cols.len());
    Correspondence::new(k, n, &pairs, dropped_rows, dropped_cols, total, mode)
}

struct Tables {
    width: usize,
    any: Vec<f64>,
    open: Vec<f64>,
}

impl Tables {
    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width + j
    }

    fn fill(spec: &CostSpec, mode: MatchMode) -> Self {
        let (k, n) = (spec.rows(), spec.cols());
        let dr = spec.row_drop_cost.unwrap_or(INF);
        let dc = spec.col_drop_cost.unwrap_or(INF);
        let width = n + 1;
        let mut t = Tables {
            width,
            any: vec![INF; (k + 1) * width],
            open: vec![INF; (k + 1) * width],
        };
        t.any[0] = 0.0;
        for j in 1..=n {
            let v = dc + t.any[j - 1];
            t.any[j] = v;
        }
        for i in 1..=k {
            let v = dr + t.any[t.idx(i - 1, 0)];
            let at = t.idx(i, 0);
            t.any[at] = v;
            for j in 1..=n {
                let c = spec.match_cost[(i - 1, j - 1)];
                let mut open = c + t.any[t.idx(i - 1, j - 1)];
                if mode == MatchMode::ManyToOne {
                    let prev = t.open[t.idx(i, j - 1)];
                    open = open.min(c + prev).min(dc + prev);
                }
                let any = open
                    .min(dc + t.any[t.idx(i, j - 1)])
                    .min(dr + t.any[t.idx(i - 1, j)]);
                let at = t.idx(i, j);
                t.open[at] = open;
                t.any[at] = any;
            }
        }
        t
    }

    fn traceback(
        &self,
        spec: &CostSpec,
        mode: MatchMode,
    ) -> (Vec<(usize, usize)>, BTreeSet<usize>, BTreeSet<usize>) {
        #[derive(Clone, Copy)]
        enum State {
            Any,
            Open,
        }
        let dr = spec.row_drop_cost.unwrap_or(INF);
        let dc = spec.col_drop_cost.unwrap_or(INF);
        let mut pairs = Vec::new();
        let mut dropped_rows = BTreeSet::new();
        let mut dropped_cols = BTreeSet::new();
        let (mut i, mut j) = (spec.rows(), spec.cols());
        let mut state = State::Any;
        while i > 0 || j > 0 {
            match state {
                State::Any => {
                    let here = self.any[self.idx(i, j)];
                    if i > 0 && j > 0 && here == self.open[self.idx(i, j)] {
                        state = State::Open;
                    } else if j > 0 && here == dc + self.any[self.idx(i, j - 1)] {
                        dropped_cols.insert(j - 1);
                        j -= 1;
                    } else {
                        debug_assert!(i > 0 && here == dr + self.any[self.idx(i - 1, j)]);
                        dropped_rows.insert(i - 1);
                        i -= 1;
                    }
                }
                State::Open => {
                    let here = self.open[self.idx(i, j)];
                    let c = spec.match_cost[(i - 1, j - 1)];
                    if here == c + self.any[self.idx(i - 1, j - 1)] {
                        pairs.push((i - 1, j - 1));
                        i -= 1;
                        j -= 1;
                        state = State::Any;
                    } else {
                        debug_assert_eq!(mode, MatchMode::ManyToOne);
                        let prev = self.open[self.idx(i, j - 1)];
                        if here == c + prev {
                            pairs.push((i - 1, j - 1));
                        } else {
                            debug_assert!(here == dc + prev);
                            dropped_cols.insert(j - 1);
                        }
                        j -= 1;
                    }
                }
            }
        }
        pairs.reverse();
        (pairs, dropped_rows, dropped_cols)
    }
}
