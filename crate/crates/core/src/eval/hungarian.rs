//! Maximum-total assignment between clusters and categories.
//!
//! The solver is the classic O(n^3) potentials formulation of the Hungarian
//! algorithm, run on the negated value matrix. Rectangular inputs are padded
//! with zero-value entries to a square; rows that end up matched to a padded
//! column come back as `None`.

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Injective mapping row -> column maximizing the total of selected entries.
///
/// For nonnegative inputs (alignment fractions), the complete matching this
/// produces is also the maximum over all partial injective mappings.
pub fn hungarian_max(values: ArrayView2<'_, f64>) -> Result<Vec<Option<usize>>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "assignment values",
        });
    }
    let rows = values.nrows();
    let cols = values.ncols();
    if rows == 0 || cols == 0 {
        return Ok(vec![None; rows]);
    }
    let s = rows.max(cols);
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            -values[[i, j]]
        } else {
            0.0
        }
    };

    // p[j] = row matched to column j, 1-indexed with 0 meaning unmatched
    let mut u = vec![0.0f64; s + 1];
    let mut v = vec![0.0f64; s + 1];
    let mut p = vec![0usize; s + 1];
    let mut way = vec![0usize; s + 1];
    for i in 1..=s {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; s + 1];
        let mut used = vec![false; s + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=s {
                if !used[j] {
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
            }
            for j in 0..=s {
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

    let mut mapping = vec![None; rows];
    for (j, &i) in p.iter().enumerate().take(s + 1).skip(1) {
        if i != 0 && i - 1 < rows && j - 1 < cols {
            mapping[i - 1] = Some(j - 1);
        }
    }
    Ok(mapping)
}

/// Total value of a mapping produced by [`hungarian_max`].
pub fn mapping_total(values: ArrayView2<'_, f64>, mapping: &[Option<usize>]) -> f64 {
    mapping
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|j| values[[i, j]]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array2};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn brute_force_max(values: &Array2<f64>) -> f64 {
        // exhaustive over injective row->column mappings, rows <= cols
        let rows = values.nrows();
        let cols = values.ncols();
        let mut best = f64::NEG_INFINITY;
        let mut cols_perm: Vec<usize> = (0..cols).collect();
        permute(&mut cols_perm, 0, &mut |perm| {
            let total: f64 = (0..rows).map(|i| values[[i, perm[i]]]).sum();
            if total > best {
                best = total;
            }
        });
        best
    }

    fn permute(items: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
        if start == items.len() {
            visit(items);
            return;
        }
        for i in start..items.len() {
            items.swap(start, i);
            permute(items, start + 1, visit);
            items.swap(start, i);
        }
    }

    #[test]
    fn identity_dominant_matrix_maps_identity() {
        let m = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 1.0 } else { 0.0 });
        let mapping = hungarian_max(m.view()).unwrap();
        for (i, m) in mapping.iter().enumerate() {
            assert_eq!(*m, Some(i));
        }
    }

    #[test]
    fn single_entry() {
        let m = arr2(&[[0.3]]);
        assert_eq!(hungarian_max(m.view()).unwrap(), vec![Some(0)]);
    }

    #[test]
    fn known_small_instance() {
        // best total 0.9 + 0.8 + 0.7 on the anti-diagonal
        let m = arr2(&[[0.1, 0.2, 0.9], [0.2, 0.8, 0.3], [0.7, 0.1, 0.2]]);
        let mapping = hungarian_max(m.view()).unwrap();
        assert_eq!(mapping, vec![Some(2), Some(1), Some(0)]);
        assert!((mapping_total(m.view(), &mapping) - 2.4).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_on_random_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        for _ in 0..100 {
            let m = Array2::from_shape_fn((6, 6), |_| rng.random_range(0.0..1.0));
            let mapping = hungarian_max(m.view()).unwrap();
            assert!(mapping.iter().all(|x| x.is_some()));
            let total = mapping_total(m.view(), &mapping);
            let best = brute_force_max(&m);
            assert_eq!(total, best, "{m:?}");
        }
    }

    #[test]
    fn rectangular_wide_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(200);
        for _ in 0..25 {
            let m = Array2::from_shape_fn((3, 6), |_| rng.random_range(0.0..1.0));
            let mapping = hungarian_max(m.view()).unwrap();
            assert!(mapping.iter().all(|x| x.is_some()));
            // distinct columns
            let mut seen = std::collections::HashSet::new();
            for j in mapping.iter().flatten() {
                assert!(seen.insert(*j));
            }
            assert_eq!(mapping_total(m.view(), &mapping), brute_force_max(&m));
        }
    }

    #[test]
    fn rectangular_tall_leaves_rows_unmapped() {
        let mut rng = ChaCha8Rng::seed_from_u64(300);
        for _ in 0..25 {
            let m = Array2::from_shape_fn((6, 3), |_| rng.random_range(0.0..1.0));
            let mapping = hungarian_max(m.view()).unwrap();
            let mapped: Vec<usize> = mapping.iter().flatten().copied().collect();
            assert_eq!(mapped.len(), 3);
            let mut seen = std::collections::HashSet::new();
            for j in &mapped {
                assert!(seen.insert(*j));
            }
            // oracle: transpose and brute-force over the 3-row side; the
            // two sides sum the same entries in different orders, so allow
            // rounding slack
            let t = m.t().to_owned();
            assert!((mapping_total(m.view(), &mapping) - brute_force_max(&t)).abs() < 1e-12);
        }
    }

    #[test]
    fn beats_greedy_row_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(400);
        for _ in 0..50 {
            let m = Array2::from_shape_fn((5, 5), |_| rng.random_range(0.0..1.0));
            let mapping = hungarian_max(m.view()).unwrap();
            let total = mapping_total(m.view(), &mapping);

            let mut taken = [false; 5];
            let mut greedy = 0.0;
            for i in 0..5 {
                let mut best_j = None;
                for j in 0..5 {
                    if !taken[j] && best_j.is_none_or(|b: usize| m[[i, j]] > m[[i, b]]) {
                        best_j = Some(j);
                    }
                }
                let j = best_j.unwrap();
                taken[j] = true;
                greedy += m[[i, j]];
            }
            assert!(total >= greedy - 1e-12);
        }
    }

    #[test]
    fn rejects_non_finite() {
        let m = arr2(&[[1.0, f64::INFINITY]]);
        assert!(hungarian_max(m.view()).is_err());
    }
}
