//! Dense kernels: three GEMM layouts plus im2col/col2im for convolutions.
//!
//! Every output element is reduced in a fixed order that does not depend on
//! how rows are split across threads, so results are bitwise reproducible.

use rayon::prelude::*;

use crate::Scalar;

const PAR_THRESHOLD: usize = 1 << 21;

fn row_block(m: usize, work: usize) -> usize {
    if work < PAR_THRESHOLD || m < 2 {
        m.max(1)
    } else {
        let threads = rayon::current_num_threads().max(1);
        m.div_ceil(threads * 4).max(1)
    }
}

const MR: usize = 4;
const NR: usize = 16;

/// `c[m×n] += a[m×k] · b[k×n]`. Each output element is accumulated over `k`
/// in order, starting from zero, then added to `c`.
pub fn gemm_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let rows = row_block(m, m * k * n).next_multiple_of(MR).min(m);
    let body = |(blk, cb): (usize, &mut [T])| {
        let r0 = blk * rows;
        let nrows = cb.len() / n;
        gemm_rows(&a[r0 * k..(r0 + nrows) * k], nrows, k, n, b, cb);
    };
    if rows >= m {
        body((0, &mut c[..m * n]));
    } else {
        c[..m * n].par_chunks_mut(rows * n).enumerate().for_each(body);
    }
}

fn gemm_rows<T: Scalar>(a: &[T], m: usize, k: usize, n: usize, b: &[T], c: &mut [T]) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: AVX2 support was just verified at runtime.
        return unsafe { gemm_rows_avx2(a, m, k, n, b, c) };
    }
    gemm_rows_portable(a, m, k, n, b, c)
}

/// Same arithmetic as the portable path, compiled with wider vectors. Rust
/// never contracts `a * b + c` into an FMA, so results are bitwise identical.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
fn gemm_rows_avx2<T: Scalar>(a: &[T], m: usize, k: usize, n: usize, b: &[T], c: &mut [T]) {
    gemm_rows_portable(a, m, k, n, b, c)
}

#[inline(always)]
fn gemm_rows_portable<T: Scalar>(a: &[T], m: usize, k: usize, n: usize, b: &[T], c: &mut [T]) {
    let mut i = 0;
    while i + MR <= m {
        let mut j = 0;
        while j + NR <= n {
            let mut acc = [[T::zero(); NR]; MR];
            for p in 0..k {
                let bv: &[T; NR] = b[p * n + j..p * n + j + NR].try_into().unwrap();
                for r in 0..MR {
                    let av = a[(i + r) * k + p];
                    for l in 0..NR {
                        acc[r][l] += av * bv[l];
                    }
                }
            }
            for r in 0..MR {
                let crow = &mut c[(i + r) * n + j..(i + r) * n + j + NR];
                for l in 0..NR {
                    crow[l] += acc[r][l];
                }
            }
            j += NR;
        }
        if j < n {
            edge(a, i, i + MR, j, k, n, b, c);
        }
        i += MR;
    }
    if i < m {
        edge(a, i, m, 0, k, n, b, c);
    }
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn edge<T: Scalar>(a: &[T], r0: usize, r1: usize, j0: usize, k: usize, n: usize, b: &[T], c: &mut [T]) {
    let w = n - j0;
    let mut acc = vec![T::zero(); w];
    for i in r0..r1 {
        acc.fill(T::zero());
        for p in 0..k {
            let av = a[i * k + p];
            for (x, &bv) in acc.iter_mut().zip(&b[p * n + j0..(p + 1) * n]) {
                *x += av * bv;
            }
        }
        for (cv, &x) in c[i * n + j0..(i + 1) * n].iter_mut().zip(&acc) {
            *cv += x;
        }
    }
}

/// Dot product with eight independent partial sums, combined in fixed order.
#[inline]
pub fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    const L: usize = 8;
    let mut acc = [T::zero(); L];
    let xc = x.chunks_exact(L);
    let yc = y.chunks_exact(L);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (xs, ys) in xc.zip(yc) {
        for l in 0..L {
            acc[l] += xs[l] * ys[l];
        }
    }
    let mut s = T::zero();
    for (&a, &b) in xr.iter().zip(yr) {
        s += a * b;
    }
    for v in acc {
        s += v;
    }
    s
}

fn transposed<T: Scalar>(rows: usize, cols: usize, x: &[T]) -> Vec<T> {
    let mut t = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for (j, &v) in x[i * cols..(i + 1) * cols].iter().enumerate() {
            t[j * rows + i] = v;
        }
    }
    t
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if m < 2 * MR {
        // Too few rows to repay transposing `b`.
        for (i, crow) in c[..m * n].chunks_exact_mut(n).enumerate() {
            let arow = &a[i * k..(i + 1) * k];
            for (j, cv) in crow.iter_mut().enumerate() {
                *cv += dot(arow, &b[j * k..(j + 1) * k]);
            }
        }
        return;
    }
    let bt = transposed(n, k, &b[..n * k]);
    gemm_nn(m, k, n, a, &bt, c);
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
pub fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let at = transposed(k, m, &a[..k * m]);
    gemm_nn(m, k, n, &at, b, c);
}

/// Geometry of a 2-D convolution between an "image" `[c, h, w]` and a grid of
/// output positions `[oh, ow]`. For a transposed convolution the image is the
/// output and the positions are the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Output extent of a strided convolution, `None` if the kernel does not fit.
    pub fn conv_out(len: usize, k: usize, s: usize, p: usize) -> Option<usize> {
        let padded = len + 2 * p;
        if padded < k || s == 0 {
            return None;
        }
        Some((padded - k) / s + 1)
    }

    /// Output extent of a transposed convolution.
    pub fn conv_t_out(len: usize, k: usize, s: usize, p: usize) -> Option<usize> {
        if len == 0 || s == 0 {
            return None;
        }
        ((len - 1) * s + k).checked_sub(2 * p)
    }
}

/// Output columns `[lo, hi)` whose input column `ox·sw + kj − pw` lies in `[0, w)`.
fn valid_cols(g: &ConvGeom, kj: usize) -> (usize, usize) {
    let lo = g.pw.saturating_sub(kj).div_ceil(g.sw).min(g.ow);
    let hi = (g.w + g.pw).saturating_sub(kj).div_ceil(g.sw).min(g.ow);
    (lo, hi.max(lo))
}

/// Unfold `img [c×h×w]` into `cols [c·kh·kw × oh·ow]`.
pub fn im2col<T: Scalar>(img: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.positions();
    for c in 0..g.c {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_cols(g, kj);
                for oy in 0..g.oh {
                    let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                    let out = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    out[..lo].fill(T::zero());
                    out[hi..].fill(T::zero());
                    if lo == hi {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let x0 = lo * g.sw + kj - g.pw;
                    if g.sw == 1 {
                        out[lo..hi].copy_from_slice(&src[x0..x0 + hi - lo]);
                    } else {
                        for (o, &v) in out[lo..hi].iter_mut().zip(src[x0..].iter().step_by(g.sw)) {
                            *o = v;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate `cols` back into `img`.
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, img: &mut [T]) {
    let p = g.positions();
    for c in 0..g.c {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_cols(g, kj);
                if lo == hi {
                    continue;
                }
                for oy in 0..g.oh {
                    let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let x0 = lo * g.sw + kj - g.pw;
                    let s = &src[oy * g.ow + lo..oy * g.ow + hi];
                    if g.sw == 1 {
                        for (d, &v) in dst[x0..x0 + hi - lo].iter_mut().zip(s) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst[x0..].iter_mut().step_by(g.sw).zip(s) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
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

    fn transpose(r: usize, c: usize, x: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = x[i * c + j];
            }
        }
        t
    }

    #[test]
    fn gemm_layouts_agree_with_naive() {
        let (m, k, n) = (5, 13, 7);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(m, k, n, &a, &b);

        let mut c = vec![0.0; m * n];
        gemm_nn(m, k, n, &a, &b, &mut c);
        let mut c2 = vec![0.0; m * n];
        gemm_nt(m, k, n, &a, &transpose(k, n, &b), &mut c2);
        let mut c3 = vec![0.0; m * n];
        gemm_tn(m, k, n, &transpose(m, k, &a), &b, &mut c3);
        for i in 0..m * n {
            assert!((c[i] - want[i]).abs() < 1e-12);
            assert!((c2[i] - want[i]).abs() < 1e-12);
            assert!((c3[i] - want[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom {
            c: 2,
            h: 6,
            w: 5,
            kh: 4,
            kw: 3,
            sh: 2,
            sw: 1,
            ph: 1,
            pw: 1,
            oh: 3,
            ow: 5,
        };
        let x: Vec<f64> = (0..g.c * g.h * g.w).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = (0..g.col_rows() * g.positions()).map(|i| (i as f64 * 0.7).cos()).collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&x, &g, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut img = vec![0.0; x.len()];
        col2im(&y, &g, &mut img);
        let rhs: f64 = img.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
