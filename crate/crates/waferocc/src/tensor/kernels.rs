//! f32 compute kernels shared by the tape and the untaped inference paths.
//!
//! Matmul-family kernels *accumulate* into `out`; callers wanting overwrite
//! semantics zero the buffer first. With the `parallel` feature, work is
//! split only across disjoint ranges of output elements and the per-element
//! arithmetic order is unchanged, so parallel and sequential runs are
//! bit-identical. Scalar reductions are sequential in index order with f64
//! accumulators; that order is part of the determinism contract.

/// Rows per block in the register-blocked matmul; also the parallel
/// split granularity, which keeps chunk boundaries on block boundaries.
pub const ROW_BLOCK: usize = 16;
const COL_TILE: usize = 3072;
const ATB_CHUNK: usize = 64;

/// Clamp floor for log arguments in binary cross-entropy.
pub const BCE_EPS: f32 = 1e-6;

// out[rows x n] += a[rows x k] . b[k x n], blocked so each b row is reused
// across ROW_BLOCK output rows per pass.
fn matmul_rows(out: &mut [f32], a: &[f32], b: &[f32], rows: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), rows * n);
    debug_assert_eq!(a.len(), rows * k);
    debug_assert_eq!(b.len(), k * n);
    let mut j0 = 0;
    while j0 < n {
        let jn = (j0 + COL_TILE).min(n);
        let mut i = 0;
        while i + ROW_BLOCK <= rows {
            for kk in 0..k {
                let br = &b[kk * n + j0..kk * n + jn];
                for bi in i..i + ROW_BLOCK {
                    let xv = a[bi * k + kk];
                    let row = &mut out[bi * n + j0..bi * n + jn];
                    for (o, &wv) in row.iter_mut().zip(br.iter()) {
                        *o += xv * wv;
                    }
                }
            }
            i += ROW_BLOCK;
        }
        while i < rows {
            for kk in 0..k {
                let br = &b[kk * n + j0..kk * n + jn];
                let xv = a[i * k + kk];
                let row = &mut out[i * n + j0..i * n + jn];
                for (o, &wv) in row.iter_mut().zip(br.iter()) {
                    *o += xv * wv;
                }
            }
            i += 1;
        }
        j0 = jn;
    }
}

/// out[m x n] += a[m x k] . b[k x n]
pub fn matmul_seq(out: &mut [f32], a: &[f32], b: &[f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    matmul_rows(out, a, b, m, k, n);
}

#[cfg(feature = "parallel")]
pub fn matmul(out: &mut [f32], a: &[f32], b: &[f32], m: usize, k: usize, n: usize) {
    use rayon::prelude::*;
    debug_assert_eq!(out.len(), m * n);
    out.par_chunks_mut(ROW_BLOCK * n)
        .zip(a.par_chunks(ROW_BLOCK * k))
        .for_each(|(oc, ac)| matmul_rows(oc, ac, b, oc.len() / n, k, n));
}

#[cfg(not(feature = "parallel"))]
pub fn matmul(out: &mut [f32], a: &[f32], b: &[f32], m: usize, k: usize, n: usize) {
    matmul_seq(out, a, b, m, k, n);
}

fn matmul_atb_rows(
    out: &mut [f32],
    kk0: usize,
    a: &[f32],
    b: &[f32],
    m: usize,
    k: usize,
    n: usize,
) {
    for (r, orow) in out.chunks_mut(n).enumerate() {
        let kk = kk0 + r;
        for i in 0..m {
            let xv = a[i * k + kk];
            let br = &b[i * n..(i + 1) * n];
            for (o, &v) in orow.iter_mut().zip(br.iter()) {
                *o += xv * v;
            }
        }
    }
}

/// out[k x n] += transpose(a[m x k]) . b[m x n]; the gradient of an affine
/// weight, computed row-by-row of `out` so b stays cache-hot.
pub fn matmul_atb_seq(out: &mut [f32], a: &[f32], b: &[f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), k * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    matmul_atb_rows(out, 0, a, b, m, k, n);
}

#[cfg(feature = "parallel")]
pub fn matmul_atb(out: &mut [f32], a: &[f32], b: &[f32], m: usize, k: usize, n: usize) {
    use rayon::prelude::*;
    debug_assert_eq!(out.len(), k * n);
    out.par_chunks_mut(ATB_CHUNK * n)
        .enumerate()
        .for_each(|(ci, oc)| matmul_atb_rows(oc, ci * ATB_CHUNK, a, b, m, k, n));
}

#[cfg(not(feature = "parallel"))]
pub fn matmul_atb(out: &mut [f32], a: &[f32], b: &[f32], m: usize, k: usize, n: usize) {
    matmul_atb_seq(out, a, b, m, k, n);
}

/// out[n x m] = transpose(a[m x n]), tiled for cache locality.
pub fn transpose(out: &mut [f32], a: &[f32], m: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.len(), m * n);
    const T: usize = 32;
    let mut i0 = 0;
    while i0 < m {
        let im = (i0 + T).min(m);
        let mut j0 = 0;
        while j0 < n {
            let jn = (j0 + T).min(n);
            for i in i0..im {
                for j in j0..jn {
                    out[j * m + i] = a[i * n + j];
                }
            }
            j0 = jn;
        }
        i0 += T;
    }
}

/// out[m x k] += a[m x n] . transpose(b[k x n]); the gradient of an affine
/// input. Transposes b once so the inner product runs in axpy form.
pub fn matmul_abt_seq(out: &mut [f32], a: &[f32], b: &[f32], m: usize, n: usize, k: usize) {
    let mut bt = vec![0.0f32; n * k];
    transpose(&mut bt, b, k, n);
    matmul_seq(out, a, &bt, m, n, k);
}

#[cfg(feature = "parallel")]
pub fn matmul_abt(out: &mut [f32], a: &[f32], b: &[f32], m: usize, n: usize, k: usize) {
    let mut bt = vec![0.0f32; n * k];
    transpose(&mut bt, b, k, n);
    matmul(out, a, &bt, m, n, k);
}

#[cfg(not(feature = "parallel"))]
pub fn matmul_abt(out: &mut [f32], a: &[f32], b: &[f32], m: usize, n: usize, k: usize) {
    matmul_abt_seq(out, a, b, m, n, k);
}

/// out[j] += sum over rows of a[m x n]; bias gradient.
pub fn col_sums(out: &mut [f32], a: &[f32], m: usize, n: usize) {
    debug_assert_eq!(out.len(), n);
    debug_assert_eq!(a.len(), m * n);
    for i in 0..m {
        let row = &a[i * n..(i + 1) * n];
        for (o, &v) in out.iter_mut().zip(row.iter()) {
            *o += v;
        }
    }
}

/// out[i*n + j] += b[j] for every row i.
pub fn add_bias_rows(out: &mut [f32], b: &[f32], rows: usize, n: usize) {
    debug_assert_eq!(out.len(), rows * n);
    debug_assert_eq!(b.len(), n);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        out.par_chunks_mut(n)
            .for_each(|row| row.iter_mut().zip(b.iter()).for_each(|(o, &v)| *o += v));
    }
    #[cfg(not(feature = "parallel"))]
    for row in out.chunks_mut(n) {
        for (o, &v) in row.iter_mut().zip(b.iter()) {
            *o += v;
        }
    }
}

const MAP_CHUNK: usize = 4096;

/// out[i] = f(a[i])
pub fn map1(out: &mut [f32], a: &[f32], f: impl Fn(f32) -> f32 + Sync) {
    debug_assert_eq!(out.len(), a.len());
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        out.par_chunks_mut(MAP_CHUNK)
            .zip(a.par_chunks(MAP_CHUNK))
            .for_each(|(oc, ac)| oc.iter_mut().zip(ac.iter()).for_each(|(o, &x)| *o = f(x)));
    }
    #[cfg(not(feature = "parallel"))]
    out.iter_mut().zip(a.iter()).for_each(|(o, &x)| *o = f(x));
}

/// out[i] = f(a[i], b[i])
pub fn map2(out: &mut [f32], a: &[f32], b: &[f32], f: impl Fn(f32, f32) -> f32 + Sync) {
    debug_assert_eq!(out.len(), a.len());
    debug_assert_eq!(out.len(), b.len());
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        out.par_chunks_mut(MAP_CHUNK)
            .zip(a.par_chunks(MAP_CHUNK).zip(b.par_chunks(MAP_CHUNK)))
            .for_each(|(oc, (ac, bc))| {
                oc.iter_mut()
                    .zip(ac.iter().zip(bc.iter()))
                    .for_each(|(o, (&x, &y))| *o = f(x, y));
            });
    }
    #[cfg(not(feature = "parallel"))]
    out.iter_mut()
        .zip(a.iter().zip(b.iter()))
        .for_each(|(o, (&x, &y))| *o = f(x, y));
}

/// out[i] += f(a[i])
pub fn acc1(out: &mut [f32], a: &[f32], f: impl Fn(f32) -> f32 + Sync) {
    debug_assert_eq!(out.len(), a.len());
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        out.par_chunks_mut(MAP_CHUNK)
            .zip(a.par_chunks(MAP_CHUNK))
            .for_each(|(oc, ac)| oc.iter_mut().zip(ac.iter()).for_each(|(o, &x)| *o += f(x)));
    }
    #[cfg(not(feature = "parallel"))]
    out.iter_mut().zip(a.iter()).for_each(|(o, &x)| *o += f(x));
}

/// out[i] += f(a[i], b[i])
pub fn acc2(out: &mut [f32], a: &[f32], b: &[f32], f: impl Fn(f32, f32) -> f32 + Sync) {
    debug_assert_eq!(out.len(), a.len());
    debug_assert_eq!(out.len(), b.len());
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        out.par_chunks_mut(MAP_CHUNK)
            .zip(a.par_chunks(MAP_CHUNK).zip(b.par_chunks(MAP_CHUNK)))
            .for_each(|(oc, (ac, bc))| {
                oc.iter_mut()
                    .zip(ac.iter().zip(bc.iter()))
                    .for_each(|(o, (&x, &y))| *o += f(x, y));
            });
    }
    #[cfg(not(feature = "parallel"))]
    out.iter_mut()
        .zip(a.iter().zip(b.iter()))
        .for_each(|(o, (&x, &y))| *o += f(x, y));
}

fn softmax_one(out: &mut [f32], x: &[f32]) {
    let mx = x.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
    let mut sum = 0.0f64;
    for (o, &v) in out.iter_mut().zip(x.iter()) {
        let e = (v - mx).exp();
        *o = e;
        sum += e as f64;
    }
    for o in out.iter_mut() {
        *o = (*o as f64 / sum) as f32;
    }
}

/// Softmax over each consecutive `group` elements, with max subtraction for
/// stability. Group sums accumulate in f64.
pub fn softmax_groups_seq(out: &mut [f32], x: &[f32], group: usize) {
    debug_assert_eq!(out.len(), x.len());
    debug_assert_eq!(x.len() % group, 0);
    for (oc, xc) in out.chunks_mut(group).zip(x.chunks(group)) {
        softmax_one(oc, xc);
    }
}

#[cfg(feature = "parallel")]
pub fn softmax_groups(out: &mut [f32], x: &[f32], group: usize) {
    use rayon::prelude::*;
    debug_assert_eq!(out.len(), x.len());
    debug_assert_eq!(x.len() % group, 0);
    out.par_chunks_mut(group)
        .zip(x.par_chunks(group))
        .for_each(|(oc, xc)| softmax_one(oc, xc));
}

#[cfg(not(feature = "parallel"))]
pub fn softmax_groups(out: &mut [f32], x: &[f32], group: usize) {
    softmax_groups_seq(out, x, group);
}

/// Backward of grouped softmax: gx_j += y_j * (go_j - sum_k go_k * y_k).
pub fn softmax_groups_backward(gx: &mut [f32], go: &[f32], y: &[f32], group: usize) {
    debug_assert_eq!(gx.len(), go.len());
    debug_assert_eq!(gx.len(), y.len());
    let body = |gc: &mut [f32], goc: &[f32], yc: &[f32]| {
        let mut dot = 0.0f64;
        for (&g, &v) in goc.iter().zip(yc.iter()) {
            dot += g as f64 * v as f64;
        }
        let dot = dot as f32;
        for ((o, &g), &v) in gc.iter_mut().zip(goc.iter()).zip(yc.iter()) {
            *o += v * (g - dot);
        }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        gx.par_chunks_mut(group)
            .zip(go.par_chunks(group).zip(y.par_chunks(group)))
            .for_each(|(gc, (goc, yc))| body(gc, goc, yc));
    }
    #[cfg(not(feature = "parallel"))]
    gx.chunks_mut(group)
        .zip(go.chunks(group).zip(y.chunks(group)))
        .for_each(|(gc, (goc, yc))| body(gc, goc, yc));
}

/// Per-row squared Euclidean distance to a fixed center: out_i = ||x_i - c||^2.
pub fn sq_dist_rows_seq(out: &mut [f32], x: &[f32], c: &[f32], rows: usize, n: usize) {
    debug_assert_eq!(out.len(), rows);
    debug_assert_eq!(x.len(), rows * n);
    debug_assert_eq!(c.len(), n);
    for (o, row) in out.iter_mut().zip(x.chunks(n)) {
        let mut s = 0.0f64;
        for (&v, &cv) in row.iter().zip(c.iter()) {
            let d = (v - cv) as f64;
            s += d * d;
        }
        *o = s as f32;
    }
}

#[cfg(feature = "parallel")]
pub fn sq_dist_rows(out: &mut [f32], x: &[f32], c: &[f32], rows: usize, n: usize) {
    use rayon::prelude::*;
    debug_assert_eq!(out.len(), rows);
    out.par_iter_mut()
        .zip(x.par_chunks(n))
        .for_each(|(o, row)| {
            let mut s = 0.0f64;
            for (&v, &cv) in row.iter().zip(c.iter()) {
                let d = (v - cv) as f64;
                s += d * d;
            }
            *o = s as f32;
        });
}

#[cfg(not(feature = "parallel"))]
pub fn sq_dist_rows(out: &mut [f32], x: &[f32], c: &[f32], rows: usize, n: usize) {
    sq_dist_rows_seq(out, x, c, rows, n);
}

/// Sequential f64 sum in index order.
pub fn sum_f64(a: &[f32]) -> f64 {
    a.iter().map(|&v| v as f64).sum()
}

/// mean |a_i - b_i| accumulated in f64.
pub fn l1_mean_f64(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0f64;
    for (&x, &y) in a.iter().zip(b.iter()) {
        s += (x as f64 - y as f64).abs();
    }
    s / a.len() as f64
}

/// Mean binary cross-entropy with log arguments clamped at [`BCE_EPS`].
pub fn bce_mean_f64(p: &[f32], y: &[f32]) -> f64 {
    debug_assert_eq!(p.len(), y.len());
    let eps = BCE_EPS as f64;
    let mut s = 0.0f64;
    for (&pv, &yv) in p.iter().zip(y.iter()) {
        let pv = pv as f64;
        let yv = yv as f64;
        s += yv * (pv.max(eps)).ln() + (1.0 - yv) * ((1.0 - pv).max(eps)).ln();
    }
    -s / p.len() as f64
}
