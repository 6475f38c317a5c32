//! Kuhn-Munkres assignment in its maximization form, O(n²m) with potentials.

use nalgebra::DMatrix;

/// One-to-one pairing of rows and columns maximizing the total score over
/// `min(R, C)` pairs. Pairs come back sorted by row.
///
/// Rectangular inputs are handled by running over the shorter side. The
/// search scans rows and columns in index order, so equal inputs always
/// produce equal pairings.
pub fn hungarian(score: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let (r, c) = score.shape();
    if r == 0 || c == 0 {
        return Vec::new();
    }
    if r <= c {
        solve_min(r, c, |i, j| -score[(i, j)])
    } else {
        let mut pairs: Vec<_> =
            solve_min(c, r, |i, j| -score[(j, i)]).into_iter().map(|(a, b)| (b, a)).collect();
        pairs.sort_unstable();
        pairs
    }
}

/// Total score of a pairing.
pub fn pairing_score(score: &DMatrix<f64>, pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(i, j)| score[(i, j)]).sum()
}

// Shortest augmenting path formulation for an n×m cost matrix with n <= m.
fn solve_min(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    // p[j]: row (1-based) assigned to column j; 0 means free.
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
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

    let mut pairs: Vec<_> =
        (1..=m).filter(|&j| p[j] != 0).map(|j| (p[j] - 1, j - 1)).collect();
    pairs.sort_unstable();
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let s = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]);
        assert_eq!(hungarian(&s), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn identity_scores_pair_on_diagonal() {
        let s = DMatrix::<f64>::identity(5, 5);
        assert_eq!(hungarian(&s), (0..5).map(|i| (i, i)).collect::<Vec<_>>());
    }

    #[test]
    fn tall_matrix_leaves_a_row_unpaired() {
        let s = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.5, 0.5]);
        assert_eq!(hungarian(&s), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn wide_matrix() {
        let s = DMatrix::from_row_slice(2, 3, &[0.1, 0.2, 0.9, 0.8, 0.3, 0.7]);
        assert_eq!(hungarian(&s), vec![(0, 2), (1, 0)]);
    }

    #[test]
    fn empty_inputs() {
        assert!(hungarian(&DMatrix::zeros(0, 3)).is_empty());
        assert!(hungarian(&DMatrix::zeros(2, 0)).is_empty());
    }

    #[test]
    fn greedy_is_not_optimal_here() {
        // Greedy would take (0,0)=0.9 and then (1,1)=0.0.
        let s = DMatrix::from_row_slice(2, 2, &[0.9, 0.8, 0.7, 0.0]);
        let pairs = hungarian(&s);
        assert_eq!(pairs, vec![(0, 1), (1, 0)]);
        assert!((pairing_score(&s, &pairs) - 1.5).abs() < 1e-12);
    }
}
