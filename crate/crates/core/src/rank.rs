//! Numerical rank of representation matrices.
//!
//! Singular values come from a cyclic Jacobi eigendecomposition of the Gram
//! matrix on the smaller side (`MᵀM` or `MMᵀ`).

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{invalid, Error, Result};
use crate::rng;

pub const DEFAULT_MAX_SAMPLES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tolerance {
    /// `sigma_max * max(rows, cols) * f32::EPSILON`.
    Auto,
    Explicit(f64),
}

/// Dense row-major matrix view.
#[derive(Debug, Clone, Copy)]
pub struct MatrixRef<'a> {
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f32],
}

impl<'a> MatrixRef<'a> {
    pub fn new(rows: usize, cols: usize, data: &'a [f32]) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Empty("matrix"));
        }
        if data.len() != rows * cols {
            return Err(Error::DimMismatch { expected: rows * cols, found: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("matrix", "non-finite entry"));
        }
        Ok(Self { rows, cols, data })
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        f64::from(self.data[i * self.cols + j])
    }
}

/// Symmetric eigenvalues by cyclic Jacobi rotations. `a` is `n x n` row-major.
pub fn symmetric_eigenvalues(mut a: Vec<f64>, n: usize) -> Vec<f64> {
    let norm: f64 = a.iter().map(|v| v * v).sum::<f64>();
    if norm == 0.0 {
        return vec![0.0; n];
    }
    for _ in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += 2.0 * a[p * n + q] * a[p * n + q];
            }
        }
        if off <= 1e-30 * norm {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (a[p * n + p], a[q * n + q]);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (libm::fabs(theta) + libm::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

/// Singular values in descending order.
pub fn singular_values(m: MatrixRef<'_>) -> Vec<f64> {
    let (small, big, transposed) = if m.cols <= m.rows { (m.cols, m.rows, false) } else { (m.rows, m.cols, true) };
    let mut gram = vec![0.0f64; small * small];
    for k in 0..big {
        for i in 0..small {
            let xi = if transposed { m.at(i, k) } else { m.at(k, i) };
            if xi == 0.0 {
                continue;
            }
            for j in i..small {
                let xj = if transposed { m.at(j, k) } else { m.at(k, j) };
                gram[i * small + j] += xi * xj;
            }
        }
    }
    for i in 0..small {
        for j in 0..i {
            gram[i * small + j] = gram[j * small + i];
        }
    }
    let mut sv: Vec<f64> = symmetric_eigenvalues(gram, small).into_iter().map(|l| libm::sqrt(l.max(0.0))).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankResult {
    pub rank: usize,
    pub tolerance: f64,
}

pub fn numerical_rank(m: MatrixRef<'_>, tol: Tolerance) -> Result<RankResult> {
    let sv = singular_values(m);
    let tolerance = match tol {
        Tolerance::Auto => sv[0] * m.rows.max(m.cols) as f64 * f64::from(f32::EPSILON),
        Tolerance::Explicit(t) if t >= 0.0 && t.is_finite() => t,
        Tolerance::Explicit(_) => return Err(invalid("tol", "tolerance must be finite and >= 0")),
    };
    Ok(RankResult { rank: sv.iter().filter(|&&s| s > tolerance).count(), tolerance })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankPoint {
    pub layer: u32,
    pub rank: usize,
    pub n_samples: usize,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCurve {
    pub points: Vec<RankPoint>,
    pub max_samples: usize,
    pub policy: Tolerance,
}

impl RankCurve {
    pub fn ranks(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.rank).collect()
    }
}

/// Rows used for a set of `n` samples: all of them, or a seeded sorted
/// subset of `max_samples` shared by every layer with the same `n`.
pub fn subsample_rows(n: usize, max_samples: usize, seed: u64) -> Vec<usize> {
    if n <= max_samples {
        return (0..n).collect();
    }
    let mut r = rng::stream(seed, &[rng::hash_str("rank")]);
    let mut idx = index::sample(&mut r, n, max_samples).into_vec();
    idx.sort_unstable();
    idx
}

pub fn rank_curve(sets: &[EmbeddingSet], max_samples: usize, seed: u64) -> Result<RankCurve> {
    if max_samples == 0 {
        return Err(invalid("max_samples", "max_samples must be >= 1"));
    }
    let mut points = Vec::with_capacity(sets.len());
    for s in sets {
        s.validate()?;
        let rows = subsample_rows(s.n_samples(), max_samples, seed);
        let mut data = Vec::with_capacity(rows.len() * s.dim);
        for &i in &rows {
            data.extend_from_slice(s.row(i));
        }
        let r = numerical_rank(MatrixRef::new(rows.len(), s.dim, &data)?, Tolerance::Auto)?;
        points.push(RankPoint { layer: s.layer_index, rank: r.rank, n_samples: rows.len(), tolerance: r.tolerance });
    }
    Ok(RankCurve { points, max_samples, policy: Tolerance::Auto })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Split;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn rank_of(rows: usize, cols: usize, data: &[f32]) -> usize {
        numerical_rank(MatrixRef::new(rows, cols, data).unwrap(), Tolerance::Auto).unwrap().rank
    }

    fn gaussian(seed: u64, n: usize) -> Vec<f64> {
        let mut r = rng::stream(seed, &[]);
        (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
    }

    // Independent oracle: nalgebra's SVD.
    fn nalgebra_rank(rows: usize, cols: usize, data: &[f32]) -> usize {
        let m = nalgebra::DMatrix::from_row_iterator(rows, cols, data.iter().map(|&v| f64::from(v)));
        let sv = m.singular_values();
        let max = sv.iter().copied().fold(0.0, f64::max);
        let tol = max * rows.max(cols) as f64 * f64::from(f32::EPSILON);
        sv.iter().filter(|&&s| s > tol).count()
    }

    #[test]
    fn identity_and_zero() {
        let mut eye = vec![0.0f32; 25];
        for i in 0..5 {
            eye[i * 5 + i] = 1.0;
        }
        assert_eq!(rank_of(5, 5, &eye), 5);
        assert_eq!(rank_of(4, 3, &[0.0; 12]), 0);
        assert!(MatrixRef::new(0, 3, &[]).is_err());
    }

    #[test]
    fn sum_of_two_outer_products_has_rank_two() {
        let (u, v, w, z) = (gaussian(1, 20), gaussian(2, 7), gaussian(3, 20), gaussian(4, 7));
        let data: Vec<f32> = (0..20).flat_map(|i| (0..7).map(move |j| (i, j))).map(|(i, j)| (u[i] * v[j] + w[i] * z[j]) as f32).collect();
        assert_eq!(rank_of(20, 7, &data), 2);
        assert_eq!(nalgebra_rank(20, 7, &data), 2);
        // Same on the wide side.
        let t: Vec<f32> = (0..7).flat_map(|j| (0..20).map(move |i| (i, j))).map(|(i, j)| data[i * 7 + j]).collect();
        assert_eq!(rank_of(7, 20, &t), 2);
    }

    #[test]
    fn constant_rows_have_rank_one() {
        let set = EmbeddingSet::new(1, "l1", 2, Split::Train, 3, vec![2.5; 30], vec![0; 10]).unwrap();
        let c = rank_curve(&[set], DEFAULT_MAX_SAMPLES, 0).unwrap();
        assert_eq!(c.ranks(), vec![1]);
        assert_eq!(c.points[0].n_samples, 10);
    }

    #[test]
    fn subsampling_is_seeded_and_capped() {
        let a = subsample_rows(100, 10, 7);
        assert_eq!(a.len(), 10);
        assert_eq!(a, subsample_rows(100, 10, 7));
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(subsample_rows(5, 10, 7), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn tolerance_is_monotone() {
        let data: Vec<f32> = gaussian(9, 60).into_iter().map(|v| v as f32).collect();
        let m = MatrixRef::new(10, 6, &data).unwrap();
        let sv = singular_values(m);
        let mut prev = usize::MAX;
        for t in [0.0, sv[5] * 0.5, sv[3], sv[1], sv[0] * 2.0] {
            let r = numerical_rank(m, Tolerance::Explicit(t)).unwrap().rank;
            assert!(r <= prev);
            prev = r;
        }
        assert_eq!(prev, 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn matches_svd_oracle(seed in any::<u64>(), rows in 1usize..12, cols in 1usize..12, k in 0usize..5) {
            // Rank-k product of Gaussian factors.
            let a = gaussian(seed, rows * k);
            let b = gaussian(seed ^ 0xabcd, k * cols);
            let data: Vec<f32> = (0..rows * cols)
                .map(|ij| (0..k).map(|l| a[(ij / cols) * k + l] * b[l * cols + ij % cols]).sum::<f64>() as f32)
                .collect();
            let got = rank_of(rows, cols, &data);
            prop_assert_eq!(got, nalgebra_rank(rows, cols, &data));
            prop_assert!(got <= k.min(rows).min(cols));
        }

        #[test]
        fn invariant_under_row_permutation_and_rotation(seed in any::<u64>(), k in 1usize..4) {
            let (rows, cols) = (9, 5);
            let a = gaussian(seed, rows * k);
            let b = gaussian(seed ^ 1, k * cols);
            let m: Vec<f64> = (0..rows * cols)
                .map(|ij| (0..k).map(|l| a[(ij / cols) * k + l] * b[l * cols + ij % cols]).sum())
                .collect();
            let base: Vec<f32> = m.iter().map(|&v| v as f32).collect();
            // Random orthogonal Q from a QR of a Gaussian matrix.
            let g = nalgebra::DMatrix::from_vec(cols, cols, gaussian(seed ^ 2, cols * cols));
            let q = g.qr().q();
            let mut r = rng::stream(seed, &[3]);
            let mut perm: Vec<usize> = (0..rows).collect();
            for i in (1..rows).rev() {
                perm.swap(i, r.random_range(0..=i));
            }
            let rotated: Vec<f32> = perm
                .iter()
                .flat_map(|&i| {
                    let row: Vec<f64> = m[i * cols..(i + 1) * cols].to_vec();
                    let q = q.clone();
                    (0..cols).map(move |j| (0..cols).map(|l| row[l] * q[(l, j)]).sum::<f64>() as f32)
                })
                .collect();
            prop_assert_eq!(rank_of(rows, cols, &base), rank_of(rows, cols, &rotated));
        }
    }
}
