//! Raw numeric kernels behind the graph primitives. Everything here works on
//! flat row-major slices; shape bookkeeping lives in `graph`.

/// `c = alpha * a · b + beta * c` for row-major `a: m×k`, `b: k×n`, `c: m×n`.
/// `trans_a`/`trans_b` read the stored matrix transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above describe exactly the extents asserted on
    // the slices, so every access stays in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// A 1×1, stride 1, unpadded convolution reads its input as the column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

pub(crate) fn im2col(geo: &ConvGeometry, image: &[f64], cols: &mut [f64]) {
    let (oh, ow) = (geo.out_height(), geo.out_width());
    let (h, w, k) = (geo.height as isize, geo.width as isize, geo.kernel);
    let mut row = 0;
    for c in 0..geo.channels {
        let plane = &image[c * geo.height * geo.width..(c + 1) * geo.height * geo.width];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * geo.stride + ky) as isize - geo.pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * geo.width..(iy as usize + 1) * geo.width];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = (ox * geo.stride + kx) as isize - geo.pad as isize;
                        *out = if ix < 0 || ix >= w { 0.0 } else { src[ix as usize] };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-adds a column matrix back into image layout (adjoint of `im2col`).
pub(crate) fn col2im(geo: &ConvGeometry, cols: &[f64], image: &mut [f64]) {
    let (oh, ow) = (geo.out_height(), geo.out_width());
    let (h, w, k) = (geo.height as isize, geo.width as isize, geo.kernel);
    let mut row = 0;
    for c in 0..geo.channels {
        let plane = &mut image[c * geo.height * geo.width..(c + 1) * geo.height * geo.width];
        for ky in 0..k {
            for kx in 0..k {
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * geo.stride + ky) as isize - geo.pad as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let base = iy as usize * geo.width;
                    for ox in 0..ow {
                        let ix = (ox * geo.stride + kx) as isize - geo.pad as isize;
                        if ix >= 0 && ix < w {
                            plane[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpsampleMode {
    Nearest,
    Bilinear,
}

/// One output coordinate's two source taps and their weights.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub w_lo: f64,
    pub w_hi: f64,
}

/// Half-pixel-centred sampling taps along one axis (`align_corners = false`).
pub(crate) fn resize_taps(src: usize, dst: usize, mode: UpsampleMode) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| match mode {
            UpsampleMode::Nearest => {
                let i = ((o as f64 * scale).floor() as usize).min(src - 1);
                Tap {
                    lo: i,
                    hi: i,
                    w_lo: 1.0,
                    w_hi: 0.0,
                }
            }
            UpsampleMode::Bilinear => {
                let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let lo = (pos.floor() as usize).min(src - 1);
                let hi = (lo + 1).min(src - 1);
                let frac = pos - lo as f64;
                let frac = if lo == hi { 0.0 } else { frac };
                Tap {
                    lo,
                    hi,
                    w_lo: 1.0 - frac,
                    w_hi: frac,
                }
            }
        })
        .collect()
}

pub(crate) fn resize_plane(
    src: &[f64],
    (sh, sw): (usize, usize),
    ty: &[Tap],
    tx: &[Tap],
    dst: &mut [f64],
) {
    let dw = tx.len();
    debug_assert_eq!(src.len(), sh * sw);
    for (oy, ry) in ty.iter().enumerate() {
        let r0 = &src[ry.lo * sw..(ry.lo + 1) * sw];
        let r1 = &src[ry.hi * sw..(ry.hi + 1) * sw];
        for (ox, rx) in tx.iter().enumerate() {
            let top = rx.w_lo * r0[rx.lo] + rx.w_hi * r0[rx.hi];
            let bottom = rx.w_lo * r1[rx.lo] + rx.w_hi * r1[rx.hi];
            dst[oy * dw + ox] = ry.w_lo * top + ry.w_hi * bottom;
        }
    }
}

pub(crate) fn resize_plane_adjoint(
    grad_out: &[f64],
    sw: usize,
    ty: &[Tap],
    tx: &[Tap],
    grad_src: &mut [f64],
) {
    let dw = tx.len();
    for (oy, ry) in ty.iter().enumerate() {
        for (ox, rx) in tx.iter().enumerate() {
            let g = grad_out[oy * dw + ox];
            if g == 0.0 {
                continue;
            }
            let (gl, gh) = (g * ry.w_lo, g * ry.w_hi);
            grad_src[ry.lo * sw + rx.lo] += gl * rx.w_lo;
            grad_src[ry.lo * sw + rx.hi] += gl * rx.w_hi;
            grad_src[ry.hi * sw + rx.lo] += gh * rx.w_lo;
            grad_src[ry.hi * sw + rx.hi] += gh * rx.w_hi;
        }
    }
}

/// Numerically stable softmax over the middle index of an (outer, len, inner) layout.
pub(crate) fn softmax_axis(x: &[f64], (outer, len, inner): (usize, usize, usize), out: &mut [f64]) {
    for o in 0..outer {
        let base = o * len * inner;
        for i in 0..inner {
            let mut max = f64::NEG_INFINITY;
            for c in 0..len {
                max = max.max(x[base + c * inner + i]);
            }
            let mut total = 0.0;
            for c in 0..len {
                let e = (x[base + c * inner + i] - max).exp();
                out[base + c * inner + i] = e;
                total += e;
            }
            for c in 0..len {
                out[base + c * inner + i] /= total;
            }
        }
    }
}
