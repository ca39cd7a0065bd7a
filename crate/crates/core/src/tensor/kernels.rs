//! Raw matrix-product kernels.
//!
//! Both kernels compute each output element with the same summation order, so
//! the parallel and sequential paths are bit-identical.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many multiply-adds the row split is not worth the scheduling cost.
#[cfg(feature = "parallel")]
const PAR_MIN_FLOPS: usize = 1 << 15;

fn row_kernel(a_row: &[f64], b: &[f64], n: usize, out_row: &mut [f64]) {
    out_row.fill(0.0);
    for (kk, &av) in a_row.iter().enumerate() {
        if av == 0.0 {
            continue;
        }
        let b_row = &b[kk * n..(kk + 1) * n];
        for (o, &bv) in out_row.iter_mut().zip(b_row) {
            *o += av * bv;
        }
    }
}

/// `out = a (m x k) * b (k x n)`, single-threaded.
pub fn matmul_sequential(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if n == 0 {
        return;
    }
    for (r, out_row) in out.chunks_mut(n).enumerate() {
        row_kernel(&a[r * k..(r + 1) * k], b, n, out_row);
    }
}

/// `out = a (m x k) * b (k x n)`, split over output rows when the `parallel`
/// feature is enabled and the product is large enough.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    #[cfg(feature = "parallel")]
    {
        if n > 0 && m > 1 && m * k * n >= PAR_MIN_FLOPS {
            debug_assert_eq!(out.len(), m * n);
            out.par_chunks_mut(n).enumerate().for_each(|(r, out_row)| {
                row_kernel(&a[r * k..(r + 1) * k], b, n, out_row);
            });
            return;
        }
    }
    matmul_sequential(a, b, m, k, n, out);
}
