//! Row-major `C += A·B` used by the convolution and linear kernels.
//!
//! Every output element accumulates its `k` products in ascending `k` order,
//! starting from zero, before being added to `C`. The convolution tests rely
//! on that order to match direct summation bit for bit.

use crate::scalar::Scalar;

const MR: usize = 6;
const NR: usize = 16;

/// `c[m×n] += a[m×k] · b[k×n]`.
pub(crate) fn gemm_acc<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: out length");
    if m == 0 || n == 0 {
        return;
    }
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime.
        unsafe { kernel_avx2(m, n, k, a, b, c) };
        return;
    }
    kernel(m, n, k, a, b, c);
}

/// Same kernel compiled with wider vectors. No fused multiply-add, so the
/// results are identical to the portable build.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn kernel_avx2<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    kernel(m, n, k, a, b, c);
}

#[inline(always)]
fn kernel<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    let blocks = m / MR;
    // Row blocks of A interleaved so that one k step reads MR adjacent values.
    let mut packed = vec![T::zero(); blocks * k * MR];
    for (blk, dst) in packed.chunks_exact_mut(k * MR).enumerate() {
        for (kk, slot) in dst.chunks_exact_mut(MR).enumerate() {
            for (r, v) in slot.iter_mut().enumerate() {
                *v = a[(blk * MR + r) * k + kk];
            }
        }
    }
    let mut panel = vec![T::zero(); k * NR];
    for j0 in (0..n).step_by(NR) {
        // A ragged last panel is zero-padded; padded columns are never stored.
        let width = NR.min(n - j0);
        for (kk, dst) in panel.chunks_exact_mut(NR).enumerate() {
            dst[..width].copy_from_slice(&b[kk * n + j0..kk * n + j0 + width]);
        }
        for (blk, ablock) in packed.chunks_exact(k * MR).enumerate() {
            let mut acc = [[T::zero(); NR]; MR];
            for (ap, bp) in ablock.chunks_exact(MR).zip(panel.chunks_exact(NR)) {
                let av: &[T; MR] = ap.try_into().expect("MR chunk");
                let bv: &[T; NR] = bp.try_into().expect("NR chunk");
                for r in 0..MR {
                    for j in 0..NR {
                        acc[r][j] += av[r] * bv[j];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                let i = blk * MR + r;
                let dst = &mut c[i * n + j0..i * n + j0 + width];
                for (d, &v) in dst.iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
        for i in blocks * MR..m {
            let arow = &a[i * k..(i + 1) * k];
            let mut acc = [T::zero(); NR];
            for (&av, bp) in arow.iter().zip(panel.chunks_exact(NR)) {
                let bv: &[T; NR] = bp.try_into().expect("NR chunk");
                for j in 0..NR {
                    acc[j] += av * bv[j];
                }
            }
            let dst = &mut c[i * n + j0..i * n + j0 + width];
            for (d, &v) in dst.iter_mut().zip(&acc) {
                *d += v;
            }
        }
    }
}

/// Row-major transpose of an `rows×cols` matrix.
pub(crate) fn transpose<T: Scalar>(rows: usize, cols: usize, src: &[T]) -> Vec<T> {
    const TILE: usize = 32;
    let mut out = vec![T::zero(); rows * cols];
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    out[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
    out
}
