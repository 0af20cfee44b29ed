use std::cmp::Ordering;
use std::collections::BTreeSet;

use super::CostSpec;
use crate::error::{Error, Result};
use crate::types::{Correspondence, MatchMode};

const MAX_ROWS: usize = 6;
const MAX_COLS: usize = 7;

/// Exhaustive search over every admissible correspondence.
///
/// Each column is either dropped or assigned to one row; assigned rows must be
/// non-decreasing along the columns (strictly increasing in one-to-one mode)
/// and rows never assigned are dropped. Among minimum-cost candidates the
/// one with more matches wins, then the lexicographically smallest sorted
/// match list.
pub fn brute_force_align(spec: &CostSpec, mode: MatchMode) -> Result<Correspondence> {
    spec.validate()?;
    let (k, n) = (spec.rows(), spec.cols());
    if k > MAX_ROWS || n > MAX_COLS {
        return Err(Error::SizeBoundExceeded { rows: k, cols: n });
    }
    if mode == MatchMode::ManyToMany {
        return Err(Error::InvalidArgument(
            "brute_force_align enumerates drop-aware modes only".into(),
        ));
    }
    let mut search = Search {
        spec,
        mode,
        assign: vec![None; n],
        best: None,
    };
    search.visit(0, None);
    let best = search.best.ok_or_else(|| {
        Error::Infeasible(format!("no admissible {k}x{n} {mode:?} alignment"))
    })?;
    Correspondence::new(k, n, &best.pairs, best.dropped_rows, best.dropped_cols, best.cost, mode)
}

struct Candidate {
    cost: f64,
    pairs: Vec<(usize, usize)>,
    dropped_rows: BTreeSet<usize>,
    dropped_cols: BTreeSet<usize>,
}

impl Candidate {
    fn better_than(&self, other: &Candidate) -> bool {
        match self.cost.total_cmp(&other.cost) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => match self.pairs.len().cmp(&other.pairs.len()) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => self.pairs < other.pairs,
            },
        }
    }
}

struct Search<'a> {
    spec: &'a CostSpec,
    mode: MatchMode,
    assign: Vec<Option<usize>>,
    best: Option<Candidate>,
}

impl Search<'_> {
    fn visit(&mut self, col: usize, last_row: Option<usize>) {
        if col == self.assign.len() {
            self.evaluate();
            return;
        }
        if self.spec.col_drop_cost.is_some() {
            self.assign[col] = None;
            self.visit(col + 1, last_row);
        }
        let first = match (last_row, self.mode) {
            (None, _) => 0,
            (Some(r), MatchMode::ManyToOne) => r,
            (Some(r), _) => r + 1,
        };
        for row in first..self.spec.rows() {
            self.assign[col] = Some(row);
            self.visit(col + 1, Some(row));
        }
        self.assign[col] = None;
    }

    fn evaluate(&mut self) {
        let k = self.spec.rows();
        let mut used = vec![false; k];
        let mut pairs = Vec::new();
        let mut dropped_cols = BTreeSet::new();
        for (j, a) in self.assign.iter().enumerate() {
            match a {
                Some(i) => {
                    used[*i] = true;
                    pairs.push((*i, j));
                }
                None => {
                    dropped_cols.insert(j);
                }
            }
        }
        let dropped_rows: BTreeSet<usize> = (0..k).filter(|&i| !used[i]).collect();
        if !dropped_rows.is_empty() && self.spec.row_drop_cost.is_none() {
            return;
        }
        // assignment order is column-major; non-crossing makes it row-major too
        let cost = self
            .spec
            .cost_of_parts(&pairs, dropped_rows.len(), dropped_cols.len());
        let cand = Candidate {
            cost,
            pairs,
            dropped_rows,
            dropped_cols,
        };
        if self.best.as_ref().is_none_or(|b| cand.better_than(b)) {
            self.best = Some(cand);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    #[test]
    fn negative_single_match_is_kept() {
        let spec = CostSpec::symmetric(Matrix::scalar(-0.2), 0.0);
        let r = brute_force_align(&spec, MatchMode::OneToOne).unwrap();
        assert_eq!(r.pairs(), vec![(0, 0)]);
        assert_eq!(r.total_cost(), -0.2);
    }

    #[test]
    fn zero_cost_tie_prefers_full_diagonal() {
        let spec = CostSpec::symmetric(Matrix::zeros(2, 2), 0.0);
        let r = brute_force_align(&spec, MatchMode::OneToOne).unwrap();
        assert_eq!(r.pairs(), vec![(0, 0), (1, 1)]);
        assert_eq!(r.total_cost(), 0.0);
    }

    #[test]
    fn size_bound() {
        let spec = CostSpec::symmetric(Matrix::zeros(7, 2), 0.0);
        assert!(matches!(
            brute_force_align(&spec, MatchMode::OneToOne),
            Err(Error::SizeBoundExceeded { .. })
        ));
    }

    #[test]
    fn diagonal_example_matches_dp() {
        let c = Matrix::from_fn(3, 3, |i, j| if i == j { -1.0 } else { 0.0 });
        let r = brute_force_align(&CostSpec::symmetric(c, 0.5), MatchMode::OneToOne).unwrap();
        assert_eq!(r.total_cost(), -3.0);
    }
}
