use crate::matrix::Matrix;

/// Minimum-cost assignment of rows to columns. Rectangular inputs are padded
/// to square with a cost above every real entry, so the padded solution
/// restricted to real cells is optimal among injective partial maps of full
/// size. Returns, per row, its column or `None` for rows left over when there
/// are more rows than columns.
pub fn hungarian(cost: &Matrix) -> Vec<Option<usize>> {
    let (n, m) = cost.shape();
    if n == 0 || m == 0 {
        return vec![None; n];
    }
    let size = n.max(m);
    let max = cost.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = cost.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    let pad = max + (max - min).abs() + 1.0;
    let a = |i: usize, j: usize| if i < n && j < m { cost[(i, j)] } else { pad };

    // shortest augmenting paths with row/column potentials; index 0 is a
    // sentinel, real rows and columns are 1-based
    let mut u = vec![0.0; size + 1];
    let mut v = vec![0.0; size + 1];
    let mut p = vec![0usize; size + 1];
    let mut way = vec![0usize; size + 1];
    for i in 1..=size {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; size + 1];
        let mut used = vec![false; size + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=size {
                if !used[j] {
                    let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
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
            for j in 0..=size {
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
    let mut out = vec![None; n];
    for j in 1..=size {
        let i = p[j];
        if i >= 1 && i <= n && j <= m {
            out[i - 1] = Some(j - 1);
        }
    }
    out
}

/// Sum of the assigned costs.
pub fn assignment_cost(cost: &Matrix, assignment: &[Option<usize>]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| cost[(i, j)]))
        .sum()
}
