//! Fixed-shape pairwise summation.
//!
//! The index range is split at its midpoint until a leaf of at most
//! [`LEAF`] elements remains, and leaves are summed left to right. The tree
//! depends only on the length of the range, so running the two halves on
//! different threads cannot change a single bit of the result.

/// Leaf size of the summation tree.
pub const LEAF: usize = 64;

/// Ranges at least this long split their halves across the rayon pool.
const PAR_MIN: usize = 1 << 14;

/// Pairwise sum of `f(i)` for `i` in `0..n`.
pub fn sum_by<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    sum_range(0, n, &f)
}

/// Pairwise sum of a slice.
pub fn sum(values: &[f64]) -> f64 {
    sum_by(values.len(), |i| values[i])
}

fn sum_range<F>(lo: usize, hi: usize, f: &F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let len = hi - lo;
    if len <= LEAF {
        let mut acc = 0.0;
        for i in lo..hi {
            acc += f(i);
        }
        return acc;
    }
    let mid = lo + len / 2;
    if len >= PAR_MIN {
        let (a, b) = rayon::join(|| sum_range(lo, mid, f), || sum_range(mid, hi, f));
        a + b
    } else {
        sum_range(lo, mid, f) + sum_range(mid, hi, f)
    }
}

/// Pairwise sum of vector-valued terms of length `dim`.
///
/// `f(i, acc)` must add the contribution of element `i` into `acc`.
pub fn sum_vec_by<F>(n: usize, dim: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    sum_vec_range(0, n, dim, &f)
}

fn sum_vec_range<F>(lo: usize, hi: usize, dim: usize, f: &F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let len = hi - lo;
    if len <= LEAF {
        let mut acc = vec![0.0; dim];
        for i in lo..hi {
            f(i, &mut acc);
        }
        return acc;
    }
    let mid = lo + len / 2;
    let (mut a, b) = if len >= PAR_MIN {
        rayon::join(|| sum_vec_range(lo, mid, dim, f), || sum_vec_range(mid, hi, dim, f))
    } else {
        (sum_vec_range(lo, mid, dim, f), sum_vec_range(mid, hi, dim, f))
    };
    for (x, y) in a.iter_mut().zip(&b) {
        *x += y;
    }
    a
}
