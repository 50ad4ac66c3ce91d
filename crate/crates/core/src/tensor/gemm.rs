//! Single-precision matrix products.
//!
//! Blocks of the output are handed to independent `sgemm` calls on the rayon
//! pool. Every output element is produced by exactly one call with the same
//! inner-dimension order, so results do not depend on the thread count.

use rayon::prelude::*;

/// Strided read-only view of a matrix.
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    pub data: &'a [f32],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatRef<'a> {
    /// Row-major `rows x cols` matrix.
    pub fn row_major(data: &'a [f32], cols: usize) -> Self {
        MatRef {
            data,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Transpose of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [f32], cols: usize) -> Self {
        MatRef {
            data,
            row_stride: 1,
            col_stride: cols,
        }
    }
}

#[derive(Clone, Copy)]
struct SendPtr(*mut f32);
unsafe impl Send for SendPtr {}
unsafe impl Sync for SendPtr {}

const PARALLEL_WORK: usize = 1 << 18;

/// `c[m x n] = a[m x k] * b[k x n]` (or `+=` when `accumulate`), with `c`
/// row-major and contiguous.
pub fn gemm(m: usize, k: usize, n: usize, a: MatRef<'_>, b: MatRef<'_>, c: &mut [f32], accumulate: bool) {
    assert_eq!(c.len(), m * n, "gemm output size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    let work = m * n * k;
    let threads = rayon::current_num_threads().max(1);
    if work < PARALLEL_WORK || threads == 1 {
        unsafe { sgemm_block(0..m, 0..n, k, a, b, c.as_mut_ptr(), n, beta) };
        return;
    }
    let pieces = (threads * 2).min(work / PARALLEL_WORK).max(2);
    let out = SendPtr(c.as_mut_ptr());
    if m >= n {
        let step = m.div_ceil(pieces);
        (0..m.div_ceil(step)).into_par_iter().for_each(|i| {
            let lo = i * step;
            let hi = (lo + step).min(m);
            let out = out;
            unsafe { sgemm_block(lo..hi, 0..n, k, a, b, out.0, n, beta) };
        });
    } else {
        let step = n.div_ceil(pieces);
        (0..n.div_ceil(step)).into_par_iter().for_each(|j| {
            let lo = j * step;
            let hi = (lo + step).min(n);
            let out = out;
            unsafe { sgemm_block(0..m, lo..hi, k, a, b, out.0, n, beta) };
        });
    }
}

/// # Safety
/// `c` must point to a row-major buffer of at least `m_total x ldc` values and
/// no other thread may touch the addressed block concurrently.
#[allow(clippy::too_many_arguments)]
unsafe fn sgemm_block(
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
    k: usize,
    a: MatRef<'_>,
    b: MatRef<'_>,
    c: *mut f32,
    ldc: usize,
    beta: f32,
) {
    let m = rows.len();
    let n = cols.len();
    if m == 0 || n == 0 {
        return;
    }
    let a_ptr = a.data.as_ptr().add(rows.start * a.row_stride);
    let b_ptr = b.data.as_ptr().add(cols.start * b.col_stride);
    let c_ptr = c.add(rows.start * ldc + cols.start);
    matrixmultiply::sgemm(
        m,
        k,
        n,
        1.0,
        a_ptr,
        a.row_stride as isize,
        a.col_stride as isize,
        b_ptr,
        b.row_stride as isize,
        b.col_stride as isize,
        beta,
        c_ptr,
        ldc as isize,
        1,
    );
}
