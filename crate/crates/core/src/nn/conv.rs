//! Convolution kernels built on an index-table im2col and a GEMM.
//!
//! Every convolution (1D or 2D, zero or circular padding) is described by a
//! [`ConvGeom`]; a 1D signal is a 2D signal of height one. A transposed
//! convolution reuses the geometry of the convolution it is the adjoint of.

use super::layers::Padding;
use super::scalar::Scalar;

/// Upper bound on the im2col buffer, in floats, before batches are chunked.
const COLS_BUDGET: usize = 1 << 18;

#[derive(Debug, Clone)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub in_hw: [usize; 2],
    pub c_out: usize,
    pub out_hw: [usize; 2],
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    pub pad: [usize; 2],
    pub padding: Padding,
    /// `table[kk * p_out + p]`: flat input position read by kernel tap `kk`
    /// at output position `p`, or -1 for zero padding.
    table: Vec<i32>,
}

fn same_padding(len: usize, k: usize, s: usize) -> (usize, usize) {
    let out = len.div_ceil(s);
    let total = ((out - 1) * s + k).saturating_sub(len);
    (out, total / 2)
}

impl ConvGeom {
    pub fn new(
        c_in: usize,
        in_hw: [usize; 2],
        c_out: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: Padding,
    ) -> Self {
        let (oh, ph) = same_padding(in_hw[0], kernel[0], stride[0]);
        let (ow, pw) = same_padding(in_hw[1], kernel[1], stride[1]);
        let p_out = oh * ow;
        let kk = kernel[0] * kernel[1];
        let mut table = vec![-1i32; kk * p_out];
        let wrap = |i: isize, len: usize| -> Option<usize> {
            match padding {
                Padding::Same => (0..len as isize).contains(&i).then_some(i as usize),
                Padding::Circular => Some(i.rem_euclid(len as isize) as usize),
            }
        };
        for ki in 0..kernel[0] {
            for kj in 0..kernel[1] {
                let tap = ki * kernel[1] + kj;
                for y in 0..oh {
                    let iy = (y * stride[0] + ki) as isize - ph as isize;
                    let Some(iy) = wrap(iy, in_hw[0]) else { continue };
                    for x in 0..ow {
                        let ix = (x * stride[1] + kj) as isize - pw as isize;
                        if let Some(ix) = wrap(ix, in_hw[1]) {
                            table[tap * p_out + y * ow + x] = (iy * in_hw[1] + ix) as i32;
                        }
                    }
                }
            }
        }
        Self {
            c_in,
            in_hw,
            c_out,
            out_hw: [oh, ow],
            kernel,
            stride,
            pad: [ph, pw],
            padding,
            table,
        }
    }

    pub fn p_in(&self) -> usize {
        self.in_hw[0] * self.in_hw[1]
    }

    pub fn p_out(&self) -> usize {
        self.out_hw[0] * self.out_hw[1]
    }

    fn taps(&self) -> usize {
        self.kernel[0] * self.kernel[1]
    }

    /// Rows of the im2col matrix (`c_in * taps`).
    pub fn k_rows(&self) -> usize {
        self.c_in * self.taps()
    }

    /// Batch items processed per chunk so the column buffer stays bounded.
    pub fn chunk(&self) -> usize {
        (COLS_BUDGET / (self.k_rows() * self.p_out()).max(1)).max(1)
    }

    /// Output columns `[lo, hi)` of output row `y` whose input column for
    /// tap column `kj` is in range, and the input row (if any).
    fn row_span(&self, y: usize, ki: usize, kj: usize) -> Option<(usize, usize, usize)> {
        let iy = (y * self.stride[0] + ki) as isize - self.pad[0] as isize;
        if iy < 0 || iy >= self.in_hw[0] as isize {
            return None;
        }
        let (s, w_in, ow) = (self.stride[1] as isize, self.in_hw[1] as isize, self.out_hw[1] as isize);
        let off = kj as isize - self.pad[1] as isize;
        // x * s + off in [0, w_in)
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        let hi = ((w_in - off + s - 1) / s).clamp(0, ow);
        (lo < hi).then_some((iy as usize, lo as usize, hi as usize))
    }

    /// `x`: `m` items of shape `[c_in, p_in]`; `cols`: `[k_rows, m * p_out]`.
    pub fn im2col<T: Scalar>(&self, x: &[T], m: usize, cols: &mut [T]) {
        let (p_in, p_out, taps) = (self.p_in(), self.p_out(), self.taps());
        let width = m * p_out;
        let (ow, w_in, s) = (self.out_hw[1], self.in_hw[1], self.stride[1]);
        for c in 0..self.c_in {
            for tap in 0..taps {
                let row = &mut cols[(c * taps + tap) * width..(c * taps + tap + 1) * width];
                if self.padding == Padding::Circular {
                    let idx = &self.table[tap * p_out..(tap + 1) * p_out];
                    for n in 0..m {
                        let src = &x[(n * self.c_in + c) * p_in..(n * self.c_in + c + 1) * p_in];
                        let dst = &mut row[n * p_out..(n + 1) * p_out];
                        for (d, &i) in dst.iter_mut().zip(idx) {
                            *d = src[i as usize];
                        }
                    }
                    continue;
                }
                let (ki, kj) = (tap / self.kernel[1], tap % self.kernel[1]);
                for n in 0..m {
                    let src = &x[(n * self.c_in + c) * p_in..(n * self.c_in + c + 1) * p_in];
                    let dst = &mut row[n * p_out..(n + 1) * p_out];
                    for y in 0..self.out_hw[0] {
                        let drow = &mut dst[y * ow..(y + 1) * ow];
                        let Some((iy, lo, hi)) = self.row_span(y, ki, kj) else {
                            drow.fill(T::zero());
                            continue;
                        };
                        drow[..lo].fill(T::zero());
                        drow[hi..].fill(T::zero());
                        let start = iy * w_in + lo * s + kj - self.pad[1];
                        let srow = &src[start..];
                        if s == 1 {
                            drow[lo..hi].copy_from_slice(&srow[..hi - lo]);
                        } else {
                            for (d, v) in drow[lo..hi].iter_mut().zip(srow.iter().step_by(s)) {
                                *d = *v;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatter-adds columns into `dx`.
    pub fn col2im<T: Scalar>(&self, cols: &[T], m: usize, dx: &mut [T]) {
        let (p_in, p_out, taps) = (self.p_in(), self.p_out(), self.taps());
        let width = m * p_out;
        let (ow, w_in, s) = (self.out_hw[1], self.in_hw[1], self.stride[1]);
        for c in 0..self.c_in {
            for tap in 0..taps {
                let row = &cols[(c * taps + tap) * width..(c * taps + tap + 1) * width];
                if self.padding == Padding::Circular {
                    let idx = &self.table[tap * p_out..(tap + 1) * p_out];
                    for n in 0..m {
                        let dst = &mut dx[(n * self.c_in + c) * p_in..(n * self.c_in + c + 1) * p_in];
                        let src = &row[n * p_out..(n + 1) * p_out];
                        for (v, &i) in src.iter().zip(idx) {
                            dst[i as usize] = dst[i as usize] + *v;
                        }
                    }
                    continue;
                }
                let (ki, kj) = (tap / self.kernel[1], tap % self.kernel[1]);
                for n in 0..m {
                    let dst = &mut dx[(n * self.c_in + c) * p_in..(n * self.c_in + c + 1) * p_in];
                    let src = &row[n * p_out..(n + 1) * p_out];
                    for y in 0..self.out_hw[0] {
                        let Some((iy, lo, hi)) = self.row_span(y, ki, kj) else { continue };
                        let srow = &src[y * ow + lo..y * ow + hi];
                        let start = iy * w_in + lo * s + kj - self.pad[1];
                        let drow = &mut dst[start..];
                        if s == 1 {
                            for (d, v) in drow.iter_mut().zip(srow) {
                                *d = *d + *v;
                            }
                        } else {
                            for (d, v) in drow.iter_mut().step_by(s).zip(srow) {
                                *d = *d + *v;
                            }
                        }
                    }
                }
            }
        }
    }

    /// `(tap, input offset, lo, hi)` for every tap touching output row `r`
    /// of a stride-1 conv.
    fn spans(&self, r: usize) -> Vec<(usize, usize, usize, usize)> {
        (0..self.taps())
            .filter_map(|tap| {
                let (ki, kj) = (tap / self.kernel[1], tap % self.kernel[1]);
                self.row_span(r, ki, kj)
                    .map(|(iy, lo, hi)| (tap, iy * self.in_hw[1] + lo + kj - self.pad[1], lo, hi))
            })
            .collect()
    }

    /// Stride-1 zero-padded convs with few output channels skip im2col.
    fn use_direct(&self) -> bool {
        self.padding == Padding::Same && self.stride == [1, 1] && self.c_out <= 4
    }
}

/// `c = a * b + beta * c` for row-major `c` of shape `m x n`; the operand
/// strides allow transposed views.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_strides: (isize, isize),
    b: &[T],
    b_strides: (isize, isize),
    beta: T,
    c: &mut [T],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the strides describe views that stay inside `a`, `b` and `c`,
    // whose lengths the callers size as m*k, k*n and m*n.
    unsafe {
        T::gemm_raw(m, k, n, a.as_ptr(), a_strides, b.as_ptr(), b_strides, beta, c.as_mut_ptr());
    }
}

/// `[m items][c][p]` -> `[c][m * p]`.
pub(crate) fn items_to_channel_major<T: Scalar>(x: &[T], m: usize, c: usize, p: usize, out: &mut [T]) {
    for n in 0..m {
        for ch in 0..c {
            let src = &x[(n * c + ch) * p..(n * c + ch + 1) * p];
            out[ch * m * p + n * p..ch * m * p + (n + 1) * p].copy_from_slice(src);
        }
    }
}

/// `[c][m * p]` -> `[m items][c][p]`.
pub(crate) fn channel_major_to_items<T: Scalar>(x: &[T], m: usize, c: usize, p: usize, out: &mut [T]) {
    for n in 0..m {
        for ch in 0..c {
            let src = &x[ch * m * p + n * p..ch * m * p + (n + 1) * p];
            out[(n * c + ch) * p..(n * c + ch + 1) * p].copy_from_slice(src);
        }
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    // fixed lane split keeps the summation order deterministic
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut s = acc.iter().copied().sum::<T>();
    for (x, y) in ra.iter().zip(rb) {
        s = s + *x * *y;
    }
    s
}

fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (d, v) in y.iter_mut().zip(x) {
        *d = *d + a * *v;
    }
}

fn direct_forward<T: Scalar>(g: &ConvGeom, x: &[T], n: usize, w: &[T], bias: &[T], y: &mut [T]) {
    let (p_in, p_out, taps) = (g.p_in(), g.p_out(), g.taps());
    let ow = g.out_hw[1];
    for i in 0..n {
        for co in 0..g.c_out {
            let out = &mut y[(i * g.c_out + co) * p_out..(i * g.c_out + co + 1) * p_out];
            out.fill(bias[co]);
            for r in 0..g.out_hw[0] {
                let orow = &mut out[r * ow..(r + 1) * ow];
                let spans = g.spans(r);
                for ci in 0..g.c_in {
                    let src = &x[(i * g.c_in + ci) * p_in..(i * g.c_in + ci + 1) * p_in];
                    for &(tap, start, lo, hi) in &spans {
                        axpy(w[co * g.k_rows() + ci * taps + tap], &src[start..start + hi - lo], &mut orow[lo..hi]);
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn direct_backward<T: Scalar>(g: &ConvGeom, x: &[T], n: usize, w: &[T], dy: &[T], dw: &mut [T], db: &mut [T], dx: &mut [T]) {
    let (p_in, p_out, taps) = (g.p_in(), g.p_out(), g.taps());
    let ow = g.out_hw[1];
    dx.iter_mut().for_each(|v| *v = T::zero());
    for i in 0..n {
        for co in 0..g.c_out {
            let gy = &dy[(i * g.c_out + co) * p_out..(i * g.c_out + co + 1) * p_out];
            db[co] = db[co] + gy.iter().copied().sum::<T>();
            for r in 0..g.out_hw[0] {
                let grow = &gy[r * ow..(r + 1) * ow];
                let spans = g.spans(r);
                for ci in 0..g.c_in {
                    let base = (i * g.c_in + ci) * p_in;
                    for &(tap, off, lo, hi) in &spans {
                        let start = base + off;
                        let wi = co * g.k_rows() + ci * taps + tap;
                        let seg = &grow[lo..hi];
                        dw[wi] = dw[wi] + dot(seg, &x[start..start + seg.len()]);
                        axpy(w[wi], seg, &mut dx[start..start + seg.len()]);
                    }
                }
            }
        }
    }
}

/// Forward convolution of `n` items. `w`: `[c_out, k_rows]`.
pub(crate) fn conv_forward<T: Scalar>(g: &ConvGeom, x: &[T], n: usize, w: &[T], bias: &[T], y: &mut [T]) {
    if g.use_direct() {
        return direct_forward(g, x, n, w, bias, y);
    }
    let (k, p_in, p_out) = (g.k_rows(), g.p_in(), g.p_out());
    let chunk = g.chunk();
    let mut cols = vec![T::zero(); k * chunk.min(n) * p_out];
    let mut out = vec![T::zero(); g.c_out * chunk.min(n) * p_out];
    let mut start = 0;
    while start < n {
        let m = chunk.min(n - start);
        let width = m * p_out;
        g.im2col(&x[start * g.c_in * p_in..], m, &mut cols[..k * width]);
        gemm(g.c_out, k, width, w, (k as isize, 1), &cols, (width as isize, 1), T::zero(), &mut out[..g.c_out * width]);
        let dst = &mut y[start * g.c_out * p_out..(start + m) * g.c_out * p_out];
        channel_major_to_items(&out[..g.c_out * width], m, g.c_out, p_out, dst);
        for item in dst.chunks_mut(g.c_out * p_out) {
            for (co, plane) in item.chunks_mut(p_out).enumerate() {
                plane.iter_mut().for_each(|v| *v = *v + bias[co]);
            }
        }
        start += m;
    }
}

/// Accumulates `dw`, `db` and writes `dx` (overwritten).
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    n: usize,
    w: &[T],
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: &mut [T],
) {
    if g.use_direct() {
        return direct_backward(g, x, n, w, dy, dw, db, dx);
    }
    let (k, p_in, p_out) = (g.k_rows(), g.p_in(), g.p_out());
    let chunk = g.chunk();
    let mut cols = vec![T::zero(); k * chunk.min(n) * p_out];
    let mut dyc = vec![T::zero(); g.c_out * chunk.min(n) * p_out];
    dx.iter_mut().for_each(|v| *v = T::zero());
    for item in dy.chunks(g.c_out * p_out) {
        for (co, plane) in item.chunks(p_out).enumerate() {
            db[co] = db[co] + plane.iter().copied().sum::<T>();
        }
    }
    let mut start = 0;
    while start < n {
        let m = chunk.min(n - start);
        let width = m * p_out;
        g.im2col(&x[start * g.c_in * p_in..], m, &mut cols[..k * width]);
        items_to_channel_major(
            &dy[start * g.c_out * p_out..(start + m) * g.c_out * p_out],
            m,
            g.c_out,
            p_out,
            &mut dyc[..g.c_out * width],
        );
        // dW += dY * cols^T
        gemm(g.c_out, width, k, &dyc, (width as isize, 1), &cols, (1, width as isize), T::one(), dw);
        // dcols = W^T * dY
        gemm(k, g.c_out, width, w, (1, k as isize), &dyc, (width as isize, 1), T::zero(), &mut cols[..k * width]);
        g.col2im(&cols[..k * width], m, &mut dx[start * g.c_in * p_in..(start + m) * g.c_in * p_in]);
        start += m;
    }
}

/// Transposed convolution: `x` has `g.c_out` channels on the `g.out_hw`
/// grid, `y` has `g.c_in` channels on `g.in_hw`. `w`: `[g.c_out, k_rows]`.
pub(crate) fn conv_t_forward<T: Scalar>(g: &ConvGeom, x: &[T], n: usize, w: &[T], bias: &[T], y: &mut [T]) {
    let (k, p_small, p_large) = (g.k_rows(), g.p_out(), g.p_in());
    let chunk = g.chunk();
    let mut xc = vec![T::zero(); g.c_out * chunk.min(n) * p_small];
    let mut cols = vec![T::zero(); k * chunk.min(n) * p_small];
    y.iter_mut().for_each(|v| *v = T::zero());
    let mut start = 0;
    while start < n {
        let m = chunk.min(n - start);
        let width = m * p_small;
        items_to_channel_major(
            &x[start * g.c_out * p_small..(start + m) * g.c_out * p_small],
            m,
            g.c_out,
            p_small,
            &mut xc[..g.c_out * width],
        );
        gemm(k, g.c_out, width, w, (1, k as isize), &xc, (width as isize, 1), T::zero(), &mut cols[..k * width]);
        g.col2im(&cols[..k * width], m, &mut y[start * g.c_in * p_large..(start + m) * g.c_in * p_large]);
        start += m;
    }
    for item in y.chunks_mut(g.c_in * p_large) {
        for (c, plane) in item.chunks_mut(p_large).enumerate() {
            plane.iter_mut().for_each(|v| *v = *v + bias[c]);
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_t_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    n: usize,
    w: &[T],
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: &mut [T],
) {
    let (k, p_small, p_large) = (g.k_rows(), g.p_out(), g.p_in());
    let chunk = g.chunk();
    let mut xc = vec![T::zero(); g.c_out * chunk.min(n) * p_small];
    let mut cols = vec![T::zero(); k * chunk.min(n) * p_small];
    let mut dxc = vec![T::zero(); g.c_out * chunk.min(n) * p_small];
    for item in dy.chunks(g.c_in * p_large) {
        for (c, plane) in item.chunks(p_large).enumerate() {
            db[c] = db[c] + plane.iter().copied().sum::<T>();
        }
    }
    let mut start = 0;
    while start < n {
        let m = chunk.min(n - start);
        let width = m * p_small;
        g.im2col(&dy[start * g.c_in * p_large..], m, &mut cols[..k * width]);
        items_to_channel_major(
            &x[start * g.c_out * p_small..(start + m) * g.c_out * p_small],
            m,
            g.c_out,
            p_small,
            &mut xc[..g.c_out * width],
        );
        // dX = W * cols(dY)
        gemm(g.c_out, k, width, w, (k as isize, 1), &cols, (width as isize, 1), T::zero(), &mut dxc[..g.c_out * width]);
        channel_major_to_items(
            &dxc[..g.c_out * width],
            m,
            g.c_out,
            p_small,
            &mut dx[start * g.c_out * p_small..(start + m) * g.c_out * p_small],
        );
        // dW += X * cols(dY)^T
        gemm(g.c_out, width, k, &xc, (width as isize, 1), &cols, (1, width as isize), T::one(), dw);
        start += m;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_sizes() {
        assert_eq!(same_padding(320, 3, 2), (160, 0));
        assert_eq!(same_padding(45, 5, 2), (23, 2));
        assert_eq!(same_padding(16, 3, 1), (16, 1));
    }

    #[test]
    fn circular_1d_wraps() {
        // kernel [1,1,1] over a unit impulse at position 0
        let g = ConvGeom::new(1, [1, 6], 1, [1, 3], [1, 1], Padding::Circular);
        let x = [1.0f32, 0.0, 0.0, 0.0, 0.0, 0.0];
        let mut y = [0.0f32; 6];
        conv_forward(&g, &x, 1, &[1.0, 1.0, 1.0], &[0.0], &mut y);
        assert_eq!(y, [1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }
}
