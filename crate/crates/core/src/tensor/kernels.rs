//! Raw numeric kernels over flat slices. Shapes are validated by callers.

/// Logical view of a row-major matrix, optionally transposed.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        MatRef {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        MatRef {
            transposed: !self.transposed,
            ..self
        }
    }

    fn logical(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out = beta * out + a * b` where `out` is row-major `[m, n]`.
pub(crate) fn gemm(a: MatRef<'_>, b: MatRef<'_>, out: &mut [f64], beta: f64) {
    let (m, k) = a.logical();
    let (k2, n) = b.logical();
    assert_eq!(k, k2, "gemm inner dimension");
    assert_eq!(out.len(), m * n, "gemm output size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the strides describe in-bounds views of `a.data` / `b.data`
    // (checked by the dimension asserts above) and `out` is an exclusive
    // row-major buffer of exactly m*n elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output length and left padding for a sliding window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Window {
    pub out_len: usize,
    pub pad_left: usize,
}

/// "Same" geometry: `ceil(len / stride)` outputs, symmetric padding with the
/// odd unit on the right.
pub(crate) fn same_window(len: usize, width: usize, stride: usize) -> Window {
    let out_len = len.div_ceil(stride);
    let needed = (out_len - 1) * stride + width;
    let pad_total = needed.saturating_sub(len);
    Window {
        out_len,
        pad_left: pad_total / 2,
    }
}

pub(crate) fn valid_window(len: usize, width: usize, stride: usize) -> Option<Window> {
    (width <= len).then(|| Window {
        out_len: (len - width) / stride + 1,
        pad_left: 0,
    })
}

/// Geometry shared by the im2col / col2im pair.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub len: usize,
    pub in_ch: usize,
    pub width: usize,
    pub stride: usize,
    pub win: Window,
}

impl ConvGeom {
    pub fn row_len(&self) -> usize {
        self.width * self.in_ch
    }

    pub fn rows(&self) -> usize {
        self.batch * self.win.out_len
    }

    /// Input span covered by output position `o`, clipped to the signal.
    /// Returns (first input index, offset of that index inside the window, count).
    fn span(&self, o: usize) -> (usize, usize, usize) {
        let start = (o * self.stride) as isize - self.win.pad_left as isize;
        let lo = start.max(0) as usize;
        let hi = ((start + self.width as isize).min(self.len as isize)).max(0) as usize;
        if hi <= lo {
            return (0, 0, 0);
        }
        (lo, (lo as isize - start) as usize, hi - lo)
    }
}

/// Unfolds `[batch, len, in_ch]` into `[batch * out_len, width * in_ch]`.
pub(crate) fn im2col(input: &[f64], g: &ConvGeom) -> Vec<f64> {
    let row_len = g.row_len();
    let mut cols = vec![0.0; g.rows() * row_len];
    for b in 0..g.batch {
        let sample = &input[b * g.len * g.in_ch..(b + 1) * g.len * g.in_ch];
        for o in 0..g.win.out_len {
            let (lo, skip, count) = g.span(o);
            if count == 0 {
                continue;
            }
            let row = &mut cols[(b * g.win.out_len + o) * row_len..][..row_len];
            row[skip * g.in_ch..(skip + count) * g.in_ch]
                .copy_from_slice(&sample[lo * g.in_ch..(lo + count) * g.in_ch]);
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds column gradients into `dinput`.
pub(crate) fn col2im(dcols: &[f64], g: &ConvGeom, dinput: &mut [f64]) {
    let row_len = g.row_len();
    for b in 0..g.batch {
        let sample = &mut dinput[b * g.len * g.in_ch..(b + 1) * g.len * g.in_ch];
        for o in 0..g.win.out_len {
            let (lo, skip, count) = g.span(o);
            if count == 0 {
                continue;
            }
            let row = &dcols[(b * g.win.out_len + o) * row_len..][..row_len];
            let src = &row[skip * g.in_ch..(skip + count) * g.in_ch];
            let dst = &mut sample[lo * g.in_ch..(lo + count) * g.in_ch];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
}

/// Windowed max over axis 1 of `[batch, len, ch]`. Returns values and the
/// flat input index chosen for every output (first maximum on ties).
pub(crate) fn maxpool(
    input: &[f64],
    batch: usize,
    len: usize,
    ch: usize,
    size: usize,
    stride: usize,
    win: Window,
) -> (Vec<f64>, Vec<usize>) {
    let n_out = batch * win.out_len * ch;
    let mut out = vec![f64::NEG_INFINITY; n_out];
    let mut arg = vec![usize::MAX; n_out];
    for b in 0..batch {
        for o in 0..win.out_len {
            let start = (o * stride) as isize - win.pad_left as isize;
            let lo = start.max(0) as usize;
            let hi = (start + size as isize).min(len as isize).max(0) as usize;
            let base_out = (b * win.out_len + o) * ch;
            for t in lo..hi {
                let base_in = (b * len + t) * ch;
                for c in 0..ch {
                    let v = input[base_in + c];
                    if v > out[base_out + c] || arg[base_out + c] == usize::MAX {
                        out[base_out + c] = v;
                        arg[base_out + c] = base_in + c;
                    }
                }
            }
        }
    }
    (out, arg)
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
    fn gemm_transposes() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 * 0.5 - 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect(); // 3x4
        let expect = naive(&a, &b, 2, 3, 4);
        let mut c = vec![0.0; 8];
        gemm(MatRef::new(&a, 2, 3), MatRef::new(&b, 3, 4), &mut c, 0.0);
        for (x, y) in c.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
        // (bᵀ aᵀ)ᵀ = a b ; compute cᵀ = bᵀ·aᵀ
        let mut ct = vec![0.0; 8];
        gemm(MatRef::new(&b, 3, 4).t(), MatRef::new(&a, 2, 3).t(), &mut ct, 0.0);
        for i in 0..2 {
            for j in 0..4 {
                assert!((ct[j * 2 + i] - expect[i * 4 + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn same_window_matches_tf_convention() {
        assert_eq!(same_window(3000, 50, 6).out_len, 500);
        let w = same_window(10, 4, 1);
        assert_eq!(w.out_len, 10);
        // 3 units of padding: 1 left, 2 right
        assert_eq!(w.pad_left, 1);
        assert_eq!(same_window(4, 2, 2), Window { out_len: 2, pad_left: 0 });
    }

    #[test]
    fn maxpool_first_index_on_ties() {
        let x = [3.0, 3.0, 1.0, 1.0];
        let win = same_window(4, 2, 2);
        let (v, a) = maxpool(&x, 1, 4, 1, 2, 2, win);
        assert_eq!(v, vec![3.0, 1.0]);
        assert_eq!(a, vec![0, 2]);
    }
}
