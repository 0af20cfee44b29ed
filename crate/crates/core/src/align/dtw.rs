use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::types::{Correspondence, MatchMode};

/// Classic dynamic time warping: a monotone path from `(0, 0)` to
/// `(K-1, N-1)` with steps right, down and diagonal. Nothing is dropped.
pub fn dtw(costs: &Matrix) -> Result<Correspondence> {
    let (k, n) = costs.shape();
    if k == 0 || n == 0 {
        return Err(Error::InvalidArgument("empty cost matrix".into()));
    }
    if let Some((row, col)) = costs.find_non_finite() {
        return Err(Error::NonFinite { row, col });
    }
    let mut acc = Matrix::filled(k, n, f64::INFINITY);
    for i in 0..k {
        for j in 0..n {
            let best_prev = if i == 0 && j == 0 {
                0.0
            } else {
                let mut b = f64::INFINITY;
                if i > 0 && j > 0 {
                    b = b.min(acc[(i - 1, j - 1)]);
                }
                if i > 0 {
                    b = b.min(acc[(i - 1, j)]);
                }
                if j > 0 {
                    b = b.min(acc[(i, j - 1)]);
                }
                b
            };
            acc[(i, j)] = costs[(i, j)] + best_prev;
        }
    }

    let (mut i, mut j) = (k - 1, n - 1);
    let mut path = vec![(i, j)];
    while i > 0 || j > 0 {
        let prev = acc[(i, j)] - costs[(i, j)];
        // diagonal first, then left, then up
        if i > 0 && j > 0 && acc[(i - 1, j - 1)] == prev {
            i -= 1;
            j -= 1;
        } else if j > 0 && acc[(i, j - 1)] == prev {
            j -= 1;
        } else if i > 0 && acc[(i - 1, j)] == prev {
            i -= 1;
        } else {
            // subtraction lost a bit; fall back to the smallest predecessor
            let mut cands = Vec::new();
            if i > 0 && j > 0 {
                cands.push((acc[(i - 1, j - 1)], i - 1, j - 1));
            }
            if j > 0 {
                cands.push((acc[(i, j - 1)], i, j - 1));
            }
            if i > 0 {
                cands.push((acc[(i - 1, j)], i - 1, j));
            }
            let &(_, pi, pj) = cands
                .iter()
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .expect("non-origin cell has a predecessor");
            i = pi;
            j = pj;
        }
        path.push((i, j));
    }
    path.reverse();
    let total: f64 = path.iter().map(|&(i, j)| costs[(i, j)]).sum();
    Correspondence::new(
        k,
        n,
        &path,
        BTreeSet::new(),
        BTreeSet::new(),
        total,
        MatchMode::ManyToMany,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell() {
        let r = dtw(&Matrix::scalar(0.7)).unwrap();
        assert_eq!(r.pairs(), vec![(0, 0)]);
        assert_eq!(r.total_cost(), 0.7);
    }

    #[test]
    fn identity_like_takes_diagonal() {
        let r = dtw(&Matrix::from_rows(&[[-1.0, 0.0], [0.0, -1.0]])).unwrap();
        assert_eq!(r.pairs(), vec![(0, 0), (1, 1)]);
        assert_eq!(r.total_cost(), -2.0);
    }

    #[test]
    fn empty_is_error() {
        assert!(dtw(&Matrix::zeros(0, 3)).is_err());
    }
}
