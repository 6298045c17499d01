//! Dense numeric kernels shared by the autograd graph: im2col convolution,
//! bilinear resampling and average pooling, each with its adjoint.

use super::tensor::{Shape, Tensor};

/// `c = beta * c + a · b` for row-major matrices, with optional transposes
/// expressed through strides. `a` is `m × k` after transposition, `b` is
/// `k × n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the length assertions above bound every access implied by the
    // dimensions and strides.
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
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_dim(&self, len: usize) -> usize {
        (len + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, g: ConvGeometry, cols: &mut [f64]) {
    let (ho, wo) = (g.out_dim(h), g.out_dim(w));
    let p = ho * wo;
    let k = g.kernel;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *o = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize, g: ConvGeometry, dx: &mut [f64]) {
    let (ho, wo) = (g.out_dim(h), g.out_dim(w));
    let p = ho * wo;
    let k = g.kernel;
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(x: &Tensor, weight: &Tensor, bias: &Tensor, g: ConvGeometry) -> Tensor {
    let xs = x.shape();
    let ws = weight.shape();
    let (co, kd) = (ws.n, ws.c * ws.h * ws.w);
    let (ho, wo) = (g.out_dim(xs.h), g.out_dim(xs.w));
    let p = ho * wo;
    let mut out = Tensor::zeros(Shape::new(xs.n, co, ho, wo));
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; kd * p]
    };
    for n in 0..xs.n {
        let dst = out.sample_mut(n);
        for (c, b) in bias.data().iter().enumerate() {
            dst[c * p..(c + 1) * p].fill(*b);
        }
        let src: &[f64] = if g.is_pointwise() {
            x.sample(n)
        } else {
            im2col(x.sample(n), xs.c, xs.h, xs.w, g, &mut cols);
            &cols
        };
        gemm(co, kd, p, weight.data(), false, src, false, 1.0, dst);
    }
    out
}

/// Returns `(dx, dweight, dbias)`; `dx` is skipped when `need_dx` is false.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    dout: &Tensor,
    g: ConvGeometry,
    need_dx: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let xs = x.shape();
    let ws = weight.shape();
    let (co, kd) = (ws.n, ws.c * ws.h * ws.w);
    let p = dout.shape().plane();
    let mut dw = Tensor::zeros(ws);
    let mut db = Tensor::zeros(Shape::new(1, co, 1, 1));
    let mut dx = need_dx.then(|| Tensor::zeros(xs));
    let mut cols = vec![0.0; kd * p];
    let mut dcols = vec![0.0; kd * p];
    for n in 0..xs.n {
        let dy = dout.sample(n);
        for (c, b) in db.data_mut().iter_mut().enumerate() {
            *b += dy[c * p..(c + 1) * p].iter().sum::<f64>();
        }
        let src: &[f64] = if g.is_pointwise() {
            x.sample(n)
        } else {
            im2col(x.sample(n), xs.c, xs.h, xs.w, g, &mut cols);
            &cols
        };
        gemm(co, p, kd, dy, false, src, true, 1.0, dw.data_mut());
        if let Some(dx) = dx.as_mut() {
            if g.is_pointwise() {
                gemm(kd, co, p, weight.data(), true, dy, false, 1.0, dx.sample_mut(n));
            } else {
                gemm(kd, co, p, weight.data(), true, dy, false, 0.0, &mut dcols);
                col2im(&dcols, xs.c, xs.h, xs.w, g, dx.sample_mut(n));
            }
        }
    }
    (dx, dw, db)
}

/// Half-pixel-centred linear interpolation taps for one axis.
fn bilinear_taps(len_in: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..len_in * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len_in - 1);
            let i1 = (i0 + 1).min(len_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn upsample_bilinear_forward(x: &Tensor, factor: usize) -> Tensor {
    let s = x.shape();
    let (ho, wo) = (s.h * factor, s.w * factor);
    let ty = bilinear_taps(s.h, factor);
    let tx = bilinear_taps(s.w, factor);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, ho, wo));
    let src = x.data();
    let dst = out.data_mut();
    for nc in 0..s.n * s.c {
        let plane = &src[nc * s.plane()..(nc + 1) * s.plane()];
        let oplane = &mut dst[nc * ho * wo..(nc + 1) * ho * wo];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let r0 = &plane[y0 * s.w..(y0 + 1) * s.w];
            let r1 = &plane[y1 * s.w..(y1 + 1) * s.w];
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
                oplane[oy * wo + ox] = top + (bot - top) * fy;
            }
        }
    }
    out
}

pub fn upsample_bilinear_backward(dout: &Tensor, in_shape: Shape, factor: usize) -> Tensor {
    let s = in_shape;
    let (ho, wo) = (s.h * factor, s.w * factor);
    let ty = bilinear_taps(s.h, factor);
    let tx = bilinear_taps(s.w, factor);
    let mut dx = Tensor::zeros(s);
    let src = dout.data();
    let dst = dx.data_mut();
    for nc in 0..s.n * s.c {
        let oplane = &src[nc * ho * wo..(nc + 1) * ho * wo];
        let plane = &mut dst[nc * s.plane()..(nc + 1) * s.plane()];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let g = oplane[oy * wo + ox];
                plane[y0 * s.w + x0] += g * (1.0 - fy) * (1.0 - fx);
                plane[y0 * s.w + x1] += g * (1.0 - fy) * fx;
                plane[y1 * s.w + x0] += g * fy * (1.0 - fx);
                plane[y1 * s.w + x1] += g * fy * fx;
            }
        }
    }
    dx
}

pub fn avg_pool_forward(x: &Tensor, factor: usize) -> Tensor {
    let s = x.shape();
    let (ho, wo) = (s.h / factor, s.w / factor);
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, ho, wo));
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for xx in 0..s.w {
                    let i = out.index(n, c, y / factor, xx / factor);
                    out.data_mut()[i] += x.at(n, c, y, xx) * norm;
                }
            }
        }
    }
    out
}

pub fn avg_pool_backward(dout: &Tensor, in_shape: Shape, factor: usize) -> Tensor {
    let norm = 1.0 / (factor * factor) as f64;
    let mut dx = Tensor::zeros(in_shape);
    for n in 0..in_shape.n {
        for c in 0..in_shape.c {
            for y in 0..in_shape.h {
                for xx in 0..in_shape.w {
                    let g = dout.at(n, c, y / factor, xx / factor) * norm;
                    dx.set(n, c, y, xx, g);
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, g: ConvGeometry) -> Tensor {
        let xs = x.shape();
        let ws = w.shape();
        let (ho, wo) = (g.out_dim(xs.h), g.out_dim(xs.w));
        let mut out = Tensor::zeros(Shape::new(xs.n, ws.n, ho, wo));
        for n in 0..xs.n {
            for co in 0..ws.n {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b.data()[co];
                        for ci in 0..ws.c {
                            for ky in 0..ws.h {
                                for kx in 0..ws.w {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                                        acc += w.at(co, ci, ky, kx) * x.at(n, ci, iy as usize, ix as usize);
                                    }
                                }
                            }
                        }
                        out.set(n, co, oy, ox, acc);
                    }
                }
            }
        }
        out
    }

    fn ramp(shape: Shape, k: f64) -> Tensor {
        let data = (0..shape.len()).map(|i| ((i as f64) * k).sin()).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn conv_matches_direct_loops() {
        for g in [
            ConvGeometry { kernel: 3, stride: 1, pad: 1 },
            ConvGeometry { kernel: 3, stride: 2, pad: 1 },
            ConvGeometry { kernel: 4, stride: 2, pad: 1 },
            ConvGeometry { kernel: 1, stride: 1, pad: 0 },
        ] {
            let x = ramp(Shape::new(2, 3, 8, 6), 0.37);
            let w = ramp(Shape::new(4, 3, g.kernel, g.kernel), 1.3);
            let b = ramp(Shape::new(1, 4, 1, 1), 0.9);
            let fast = conv2d_forward(&x, &w, &b, g);
            let slow = naive_conv(&x, &w, &b, g);
            for (a, e) in fast.data().iter().zip(slow.data()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint_of_forward() {
        // <conv(x), dy> is bilinear in (x, w): check <dx, x> + <dw, w> + <db, b> = 2<y, dy> - <db, b>.
        let g = ConvGeometry { kernel: 3, stride: 2, pad: 1 };
        let x = ramp(Shape::new(2, 2, 6, 6), 0.71);
        let w = ramp(Shape::new(3, 2, 3, 3), 0.23);
        let zero_b = Tensor::zeros(Shape::new(1, 3, 1, 1));
        let y = conv2d_forward(&x, &w, &zero_b, g);
        let dy = ramp(y.shape(), 1.7);
        let (dx, dw, _) = conv2d_backward(&x, &w, &dy, g, true);
        let ydy: f64 = y.data().iter().zip(dy.data()).map(|(a, b)| a * b).sum();
        let xdx: f64 = x.data().iter().zip(dx.unwrap().data()).map(|(a, b)| a * b).sum();
        let wdw: f64 = w.data().iter().zip(dw.data()).map(|(a, b)| a * b).sum();
        assert!((xdx - ydy).abs() < 1e-10);
        assert!((wdw - ydy).abs() < 1e-10);
    }

    #[test]
    fn upsample_preserves_constants_and_is_adjoint() {
        let x = Tensor::full(Shape::new(1, 2, 3, 4), 0.25);
        let up = upsample_bilinear_forward(&x, 4);
        assert_eq!(up.shape(), Shape::new(1, 2, 12, 16));
        assert!(up.data().iter().all(|v| (v - 0.25).abs() < 1e-15));

        let x = ramp(Shape::new(1, 2, 3, 4), 0.41);
        let y = upsample_bilinear_forward(&x, 2);
        let dy = ramp(y.shape(), 0.77);
        let dx = upsample_bilinear_backward(&dy, x.shape(), 2);
        let lhs: f64 = y.data().iter().zip(dy.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn avg_pool_adjoint() {
        let x = ramp(Shape::new(2, 1, 4, 8), 0.3);
        let y = avg_pool_forward(&x, 4);
        assert_eq!(y.shape(), Shape::new(2, 1, 1, 2));
        let dy = ramp(y.shape(), 1.1);
        let dx = avg_pool_backward(&dy, x.shape(), 4);
        let lhs: f64 = y.data().iter().zip(dy.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
