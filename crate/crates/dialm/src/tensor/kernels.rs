//! Dense matrix kernels with a data-parallel path and a sequential fallback.
//!
//! Every parallel kernel splits work by output row. Each output element is
//! produced by exactly one thread with the same inner summation order as the
//! sequential kernel, so results are bit-identical across thread counts and
//! across the `parallel` feature flag. Both paths stay exported so the bench
//! suite can compare them directly.

use super::Scalar;

/// Below this many output elements the parallel kernels fall back to the
/// sequential loop; thread wakeup costs more than the multiply itself.
pub const PAR_THRESHOLD: usize = 16 * 1024;

// ── C[m,n] = A[m,k] · B[k,n] ────────────────────────────────────────────

pub fn matmul_nn_seq<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, c: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        row.fill(S::zero());
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                row[j] = row[j] + aip * brow[j];
            }
        }
    }
}

#[cfg(feature = "parallel")]
pub fn matmul_nn_par<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, c: &mut [S]) {
    use rayon::prelude::*;
    debug_assert_eq!(c.len(), m * n);
    c.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        row.fill(S::zero());
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                row[j] = row[j] + aip * brow[j];
            }
        }
    });
}

pub fn matmul_nn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, c: &mut [S]) {
    #[cfg(feature = "parallel")]
    if m * n >= PAR_THRESHOLD && m > 1 {
        return matmul_nn_par(a, b, m, k, n, c);
    }
    matmul_nn_seq(a, b, m, k, n, c);
}

// ── C[m,n] = Aᵀ[m,k] · B[k,n] where A is stored [k,m] ───────────────────

pub fn matmul_tn_seq<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, c: &mut [S]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        row.fill(S::zero());
        for p in 0..k {
            let aip = a[p * m + i];
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                row[j] = row[j] + aip * brow[j];
            }
        }
    }
}

#[cfg(feature = "parallel")]
pub fn matmul_tn_par<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, c: &mut [S]) {
    use rayon::prelude::*;
    c.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        row.fill(S::zero());
        for p in 0..k {
            let aip = a[p * m + i];
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                row[j] = row[j] + aip * brow[j];
            }
        }
    });
}

pub fn matmul_tn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, c: &mut [S]) {
    #[cfg(feature = "parallel")]
    if m * n >= PAR_THRESHOLD && m > 1 {
        return matmul_tn_par(a, b, m, k, n, c);
    }
    matmul_tn_seq(a, b, m, k, n, c);
}

// ── C[m,n] = A[m,k] · Bᵀ[k,n] where B is stored [n,k] ───────────────────

pub fn matmul_nt_seq<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, c: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let row = &mut c[i * n..(i + 1) * n];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = S::zero();
            for p in 0..k {
                s = s + arow[p] * brow[p];
            }
            row[j] = s;
        }
    }
}

#[cfg(feature = "parallel")]
pub fn matmul_nt_par<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, c: &mut [S]) {
    use rayon::prelude::*;
    debug_assert_eq!(c.len(), m * n);
    c.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = S::zero();
            for p in 0..k {
                s = s + arow[p] * brow[p];
            }
            row[j] = s;
        }
    });
}

pub fn matmul_nt<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, c: &mut [S]) {
    #[cfg(feature = "parallel")]
    if m * n >= PAR_THRESHOLD && m > 1 {
        return matmul_nt_par(a, b, m, k, n, c);
    }
    matmul_nt_seq(a, b, m, k, n, c);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn nn_matches_naive() {
        let a: Vec<f64> = (0..6).map(|i| i as f64 * 0.5 - 1.0).collect();
        let b: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let mut c = vec![0.0; 2 * 4];
        matmul_nn(&a, &b, 2, 3, 4, &mut c);
        let want = naive(&a, &b, 2, 3, 4);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn tn_and_nt_match_transposed_naive() {
        // A stored [k,m]=[3,2]; Aᵀ·B with B [3,4]
        let a: Vec<f64> = (0..6).map(|i| i as f64 + 1.0).collect();
        let b: Vec<f64> = (0..12).map(|i| i as f64 * 0.25).collect();
        let at: Vec<f64> = vec![a[0], a[2], a[4], a[1], a[3], a[5]]; // [2,3]
        let mut c = vec![0.0; 8];
        matmul_tn(&a, &b, 2, 3, 4, &mut c);
        assert_eq!(c, naive(&at, &b, 2, 3, 4));

        // A [2,3] · Bᵀ where B stored [4,3]
        let b2: Vec<f64> = (0..12).map(|i| (i as f64) - 5.0).collect();
        let mut b2t = vec![0.0; 12]; // [3,4]
        for r in 0..4 {
            for cidx in 0..3 {
                b2t[cidx * 4 + r] = b2[r * 3 + cidx];
            }
        }
        let mut c2 = vec![0.0; 8];
        matmul_nt(&at, &b2, 2, 3, 4, &mut c2);
        assert_eq!(c2, naive(&at, &b2t, 2, 3, 4));
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_bitwise_equals_sequential() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (m, k, n) = (65, 33, 257);
        let a: Vec<f32> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut cs = vec![0.0f32; m * n];
        let mut cp = vec![0.0f32; m * n];
        matmul_nn_seq(&a, &b, m, k, n, &mut cs);
        matmul_nn_par(&a, &b, m, k, n, &mut cp);
        assert_eq!(cs, cp);

        // a reads as [m,k], so Aᵀ·A is [k,k]
        let mut ts = vec![0.0f32; k * k];
        let mut tp = vec![0.0f32; k * k];
        matmul_tn_seq(&a, &a, k, m, k, &mut ts);
        matmul_tn_par(&a, &a, k, m, k, &mut tp);
        assert_eq!(ts, tp);

        // A·Aᵀ is [m,m]
        let mut us = vec![0.0f32; m * m];
        let mut up = vec![0.0f32; m * m];
        matmul_nt_seq(&a, &a, m, k, m, &mut us);
        matmul_nt_par(&a, &a, m, k, m, &mut up);
        assert_eq!(us, up);
    }
}
