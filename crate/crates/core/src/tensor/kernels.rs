//! Raw NCHW kernels. Stride is always 1 and padding always preserves the
//! spatial size, so every kernel maps `[n, c, h, w]` onto the same `h × w`.

use std::borrow::Cow;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl ConvGeom {
    fn pad(&self) -> usize {
        self.dilation * (self.k - 1) / 2
    }

    fn cin_per_group(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_per_group(&self) -> usize {
        self.cout / self.groups
    }

    /// Row stride of the padded layout.
    fn pw(&self) -> usize {
        self.w + 2 * self.pad()
    }

    /// Length of one padded input plane, with slack so that every tap can
    /// read a full output span.
    fn padded_len(&self) -> usize {
        let p = self.pad();
        (self.h + 2 * p) * self.pw() + 2 * p
    }

    /// Length of one output plane in padded-row layout (`h` rows of `pw`).
    fn span(&self) -> usize {
        self.h * self.pw()
    }

    /// Flat offset of tap `(ky, kx)` in the padded input.
    fn shift(&self, ky: usize, kx: usize) -> usize {
        ky * self.dilation * self.pw() + kx * self.dilation
    }

    /// Copy every `[h, w]` plane of `src` into the zero-padded layout.
    fn pad_planes<'a>(&self, src: &'a [f64], planes: usize) -> Cow<'a, [f64]> {
        let (p, pw, plen) = (self.pad(), self.pw(), self.padded_len());
        if p == 0 {
            return Cow::Borrowed(src);
        }
        let mut out = vec![0.0; planes * plen];
        for (dst, plane) in out.chunks_mut(plen).zip(src.chunks(self.h * self.w)) {
            for (y, row) in plane.chunks(self.w).enumerate() {
                let at = (y + p) * pw + p;
                dst[at..at + self.w].copy_from_slice(row);
            }
        }
        Cow::Owned(out)
    }

    /// Spread `[h, w]` planes into padded-row layout with zero gap columns.
    fn widen_planes<'a>(&self, src: &'a [f64], planes: usize) -> Cow<'a, [f64]> {
        let (pw, span) = (self.pw(), self.span());
        if pw == self.w {
            return Cow::Borrowed(src);
        }
        let mut out = vec![0.0; planes * span];
        for (dst, plane) in out.chunks_mut(span).zip(src.chunks(self.h * self.w)) {
            for (y, row) in plane.chunks(self.w).enumerate() {
                dst[y * pw..y * pw + self.w].copy_from_slice(row);
            }
        }
        Cow::Owned(out)
    }

    /// Every (sample, out channel, in channel) triple with its weight block offset.
    fn for_each_pair(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let (cpg_in, cpg_out) = (self.cin_per_group(), self.cout_per_group());
        for n in 0..self.n {
            for oc in 0..self.cout {
                let g = oc / cpg_out;
                for icl in 0..cpg_in {
                    let ic = g * cpg_in + icl;
                    f(n, oc, ic, (oc * cpg_in + icl) * self.k * self.k);
                }
            }
        }
    }
}

fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// Dot product with four independent partial sums, combined in a fixed order.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

// The convolutions work on zero-padded input planes with a row stride of
// `w + 2·pad`. In that layout each kernel tap is one contiguous shifted
// multiply-add over a whole output plane; the `2·pad` extra columns of each
// output row are discarded (forward) or held at zero (backward).

pub(crate) fn conv2d_forward(input: &[f64], weight: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (span, plen, kk) = (g.span(), g.padded_len(), g.k * g.k);
    let padded = g.pad_planes(input, g.n * g.cin);
    let mut wide = vec![0.0; g.n * g.cout * span];
    g.for_each_pair(|n, oc, ic, wbase| {
        let src = &padded[(n * g.cin + ic) * plen..][..plen];
        let dst = &mut wide[(n * g.cout + oc) * span..][..span];
        for t in 0..kk {
            let s = g.shift(t / g.k, t % g.k);
            axpy(dst, weight[wbase + t], &src[s..s + span]);
        }
    });
    if g.pw() == g.w {
        return wide;
    }
    let mut out = Vec::with_capacity(g.n * g.cout * g.h * g.w);
    for plane in wide.chunks(span) {
        for row in plane.chunks(g.pw()) {
            out.extend_from_slice(&row[..g.w]);
        }
    }
    out
}

pub(crate) fn conv2d_backward_input(grad_out: &[f64], weight: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (span, plen, kk, p, pw) = (g.span(), g.padded_len(), g.k * g.k, g.pad(), g.pw());
    let gwide = g.widen_planes(grad_out, g.n * g.cout);
    let mut gpad = vec![0.0; g.n * g.cin * plen];
    g.for_each_pair(|n, oc, ic, wbase| {
        let src = &gwide[(n * g.cout + oc) * span..][..span];
        let dst = &mut gpad[(n * g.cin + ic) * plen..][..plen];
        for t in 0..kk {
            let s = g.shift(t / g.k, t % g.k);
            axpy(&mut dst[s..s + span], weight[wbase + t], src);
        }
    });
    if p == 0 {
        return gpad;
    }
    let mut gin = Vec::with_capacity(g.n * g.cin * g.h * g.w);
    for plane in gpad.chunks(plen) {
        for y in 0..g.h {
            let at = (y + p) * pw + p;
            gin.extend_from_slice(&plane[at..at + g.w]);
        }
    }
    gin
}

pub(crate) fn conv2d_backward_weight(
    grad_out: &[f64],
    input: &[f64],
    weight_len: usize,
    g: &ConvGeom,
) -> Vec<f64> {
    let (span, plen, kk) = (g.span(), g.padded_len(), g.k * g.k);
    let padded = g.pad_planes(input, g.n * g.cin);
    let gwide = g.widen_planes(grad_out, g.n * g.cout);
    let mut gw = vec![0.0; weight_len];
    g.for_each_pair(|n, oc, ic, wbase| {
        let go = &gwide[(n * g.cout + oc) * span..][..span];
        let x = &padded[(n * g.cin + ic) * plen..][..plen];
        for t in 0..kk {
            let s = g.shift(t / g.k, t % g.k);
            gw[wbase + t] += dot(go, &x[s..s + span]);
        }
    });
    gw
}

/// Window of a 3×3, stride-1, pad-1 pool clipped to the image.
fn window(o: usize, extent: usize) -> std::ops::Range<usize> {
    o.saturating_sub(1)..(o + 2).min(extent)
}

/// 3×3 average pool that only counts in-image positions.
pub(crate) fn avg_pool3_forward(input: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; input.len()];
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..h {
            for ox in 0..w {
                let mut acc = 0.0;
                let mut count = 0usize;
                for iy in window(oy, h) {
                    for ix in window(ox, w) {
                        acc += input[base + iy * w + ix];
                        count += 1;
                    }
                }
                out[base + oy * w + ox] = acc / count as f64;
            }
        }
    }
    out
}

pub(crate) fn avg_pool3_backward(grad_out: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let mut gin = vec![0.0; grad_out.len()];
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..h {
            for ox in 0..w {
                let count = window(oy, h).len() * window(ox, w).len();
                let share = grad_out[base + oy * w + ox] / count as f64;
                for iy in window(oy, h) {
                    for ix in window(ox, w) {
                        gin[base + iy * w + ix] += share;
                    }
                }
            }
        }
    }
    gin
}

/// 3×3 max pool; returns the output and, per output element, the flat index
/// of the winning input (first maximum in row-major scan order).
pub(crate) fn max_pool3_forward(
    input: &[f64],
    planes: usize,
    h: usize,
    w: usize,
) -> (Vec<f64>, Vec<usize>) {
    let mut out = vec![0.0; input.len()];
    let mut arg = vec![0usize; input.len()];
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..h {
            for ox in 0..w {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for iy in window(oy, h) {
                    for ix in window(ox, w) {
                        let idx = base + iy * w + ix;
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                out[base + oy * w + ox] = best;
                arg[base + oy * w + ox] = best_idx;
            }
        }
    }
    (out, arg)
}
