//! Fused neural-network kernels with hand-written backward passes.

use crate::error::{dim_err, Result, TensorError};
use crate::ops::matmul::{mm_nn, mm_nt, mm_tn};
use crate::shape::{check_axis, split_at_axis};
use crate::tensor::Tensor;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
    /// 1 for a dense convolution, `channels` for depth-wise.
    pub groups: usize,
}

impl Conv2dSpec {
    pub fn same(kernel: usize) -> Self {
        Conv2dSpec {
            stride: 1,
            padding: kernel / 2,
            groups: 1,
        }
    }

    pub fn depthwise(kernel: usize, channels: usize) -> Self {
        Conv2dSpec {
            stride: 1,
            padding: kernel / 2,
            groups: channels,
        }
    }
}

struct ConvGeom {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_px(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Unfolds one image (cin×h×w) into (cin·kh·kw) × (ho·wo).
    fn im2col(&self, x: &[Real], col: &mut [Real]) {
        let npx = self.out_px();
        for c in 0..self.cin {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut col[row * npx..(row + 1) * npx];
                    dst.iter_mut().for_each(|v| *v = 0.0);
                    let rx = tap_range(self.w, self.wo, self.stride, kj, self.pad);
                    if rx.is_empty() {
                        continue;
                    }
                    let ix0 = rx.start * self.stride + kj - self.pad;
                    for oy in tap_range(self.h, self.ho, self.stride, ki, self.pad) {
                        let iy = oy * self.stride + ki - self.pad;
                        let xrow = &x[(c * self.h + iy) * self.w..][..self.w];
                        let d = &mut dst[oy * self.wo + rx.start..oy * self.wo + rx.end];
                        if self.stride == 1 {
                            d.copy_from_slice(&xrow[ix0..ix0 + rx.len()]);
                        } else {
                            for (d, v) in d.iter_mut().zip(xrow[ix0..].iter().step_by(self.stride))
                            {
                                *d = *v;
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[Real], dx: &mut [Real]) {
        let npx = self.out_px();
        for c in 0..self.cin {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &col[row * npx..(row + 1) * npx];
                    let rx = tap_range(self.w, self.wo, self.stride, kj, self.pad);
                    if rx.is_empty() {
                        continue;
                    }
                    let ix0 = rx.start * self.stride + kj - self.pad;
                    for oy in tap_range(self.h, self.ho, self.stride, ki, self.pad) {
                        let iy = oy * self.stride + ki - self.pad;
                        let drow = &mut dx[(c * self.h + iy) * self.w..][..self.w];
                        let s = &src[oy * self.wo + rx.start..oy * self.wo + rx.end];
                        if self.stride == 1 {
                            for (d, v) in drow[ix0..ix0 + rx.len()].iter_mut().zip(s) {
                                *d += v;
                            }
                        } else {
                            for (d, v) in drow[ix0..].iter_mut().step_by(self.stride).zip(s) {
                                *d += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Output positions `o` in `0..n_out` whose input index `o*stride + k - pad`
/// lies inside `0..n_in`.
fn tap_range(
    n_in: usize,
    n_out: usize,
    stride: usize,
    k: usize,
    pad: usize,
) -> std::ops::Range<usize> {
    let lo = if pad > k {
        (pad - k).div_ceil(stride)
    } else {
        0
    };
    let hi = if n_in + pad > k {
        ((n_in - 1 + pad - k) / stride + 1).min(n_out)
    } else {
        0
    };
    lo..hi.max(lo)
}

fn depthwise_forward(g: &ConvGeom, x: &[Real], wt: &[Real], out: &mut [Real]) {
    for b in 0..g.batch {
        for c in 0..g.cin {
            let xin = &x[(b * g.cin + c) * g.h * g.w..][..g.h * g.w];
            let dst = &mut out[(b * g.cin + c) * g.out_px()..][..g.out_px()];
            let k = &wt[c * g.kh * g.kw..][..g.kh * g.kw];
            for ki in 0..g.kh {
                for oy in tap_range(g.h, g.ho, g.stride, ki, g.pad) {
                    let iy = oy * g.stride + ki - g.pad;
                    let xrow = &xin[iy * g.w..][..g.w];
                    let orow = &mut dst[oy * g.wo..][..g.wo];
                    for kj in 0..g.kw {
                        let wv = k[ki * g.kw + kj];
                        let r = tap_range(g.w, g.wo, g.stride, kj, g.pad);
                        if r.is_empty() {
                            continue;
                        }
                        let ix0 = r.start * g.stride + kj - g.pad;
                        let o = &mut orow[r.clone()];
                        if g.stride == 1 {
                            for (o, xv) in o.iter_mut().zip(&xrow[ix0..ix0 + r.len()]) {
                                *o += wv * xv;
                            }
                        } else {
                            for (o, xv) in o.iter_mut().zip(xrow[ix0..].iter().step_by(g.stride)) {
                                *o += wv * xv;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_backward(
    g: &ConvGeom,
    x: &[Real],
    wt: &[Real],
    gy: &[Real],
    dx: Option<&mut Vec<Real>>,
    dw: &mut [Real],
) {
    let mut dx = dx;
    for b in 0..g.batch {
        for c in 0..g.cin {
            let base_in = (b * g.cin + c) * g.h * g.w;
            let xin = &x[base_in..][..g.h * g.w];
            let gout = &gy[(b * g.cin + c) * g.out_px()..][..g.out_px()];
            for ki in 0..g.kh {
                for oy in tap_range(g.h, g.ho, g.stride, ki, g.pad) {
                    let iy = oy * g.stride + ki - g.pad;
                    let xrow = &xin[iy * g.w..][..g.w];
                    let grow = &gout[oy * g.wo..][..g.wo];
                    for kj in 0..g.kw {
                        let widx = (c * g.kh + ki) * g.kw + kj;
                        let r = tap_range(g.w, g.wo, g.stride, kj, g.pad);
                        if r.is_empty() {
                            continue;
                        }
                        let ix0 = r.start * g.stride + kj - g.pad;
                        let go = &grow[r.clone()];
                        if g.stride == 1 {
                            let xs = &xrow[ix0..ix0 + r.len()];
                            dw[widx] += go.iter().zip(xs).map(|(a, b)| a * b).sum::<Real>();
                            if let Some(dx) = dx.as_deref_mut() {
                                let wv = wt[widx];
                                let drow = &mut dx[base_in + iy * g.w + ix0..][..r.len()];
                                for (d, gv) in drow.iter_mut().zip(go) {
                                    *d += gv * wv;
                                }
                            }
                        } else {
                            dw[widx] += go
                                .iter()
                                .zip(xrow[ix0..].iter().step_by(g.stride))
                                .map(|(a, b)| a * b)
                                .sum::<Real>();
                            if let Some(dx) = dx.as_deref_mut() {
                                let wv = wt[widx];
                                let drow = &mut dx[base_in + iy * g.w..][..g.w];
                                for (d, gv) in drow[ix0..].iter_mut().step_by(g.stride).zip(go) {
                                    *d += gv * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Tensor {
    /// 2-D convolution, NCHW input, weight (Cout, Cin/groups, kh, kw).
    /// Supports dense (`groups = 1`) and depth-wise (`groups = Cin = Cout`).
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        spec: Conv2dSpec,
    ) -> Result<Tensor> {
        if self.rank() != 4 || weight.rank() != 4 {
            return Err(dim_err!(
                "conv2d expects NCHW input and 4-d weight, got {:?} and {:?}",
                self.shape(),
                weight.shape()
            ));
        }
        let (batch, cin, h, w) = (self.dim(0), self.dim(1), self.dim(2), self.dim(3));
        let (cout, wcin, kh, kw) = (weight.dim(0), weight.dim(1), weight.dim(2), weight.dim(3));
        let depthwise = spec.groups > 1;
        if depthwise {
            if spec.groups != cin || cout != cin || wcin != 1 {
                return Err(dim_err!(
                    "depth-wise conv needs groups = Cin = Cout and weight (C,1,k,k); got groups {} input {:?} weight {:?}",
                    spec.groups,
                    self.shape(),
                    weight.shape()
                ));
            }
        } else if spec.groups != 1 || wcin != cin {
            return Err(dim_err!(
                "conv2d channel mismatch: input {:?}, weight {:?}",
                self.shape(),
                weight.shape()
            ));
        }
        if spec.stride == 0 || h + 2 * spec.padding < kh || w + 2 * spec.padding < kw {
            return Err(dim_err!(
                "conv2d kernel {kh}x{kw} does not fit input {h}x{w} with padding {}",
                spec.padding
            ));
        }
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(dim_err!(
                    "conv2d bias shape {:?}, expected [{cout}]",
                    b.shape()
                ));
            }
        }
        let geom = ConvGeom {
            batch,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            ho: (h + 2 * spec.padding - kh) / spec.stride + 1,
            wo: (w + 2 * spec.padding - kw) / spec.stride + 1,
            stride: spec.stride,
            pad: spec.padding,
        };
        let npx = geom.out_px();
        let mut out = vec![0.0; batch * cout * npx];
        let x = self.data();
        let wt = weight.data();
        if depthwise {
            depthwise_forward(&geom, x, wt, &mut out);
        } else if geom.is_pointwise() {
            for b in 0..batch {
                mm_nn(
                    wt,
                    &x[b * cin * h * w..][..cin * h * w],
                    &mut out[b * cout * npx..][..cout * npx],
                    cout,
                    cin,
                    npx,
                );
            }
        } else {
            let mut col = vec![0.0; geom.col_rows() * npx];
            for b in 0..batch {
                geom.im2col(&x[b * cin * h * w..][..cin * h * w], &mut col);
                mm_nn(
                    wt,
                    &col,
                    &mut out[b * cout * npx..][..cout * npx],
                    cout,
                    geom.col_rows(),
                    npx,
                );
            }
        }
        if let Some(bias) = bias {
            let bd = bias.data();
            for (i, chunk) in out.chunks_mut(npx).enumerate() {
                let bv = bd[i % cout];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
        let shape = [batch, cout, geom.ho, geom.wo];
        let mut inputs = vec![self, weight];
        if let Some(b) = bias {
            inputs.push(b);
        }
        Tensor::from_op(
            if depthwise { "dwconv2d" } else { "conv2d" },
            out,
            &shape,
            &inputs,
            Box::new(move |ctx| {
                let g = &geom;
                let x = ctx.inputs[0].data();
                let wt = ctx.inputs[1].data();
                let gy = ctx.grad;
                let npx = g.out_px();
                let mut dx = ctx.needs(0).then(|| vec![0.0; x.len()]);
                let mut dw = vec![0.0; wt.len()];
                if depthwise {
                    depthwise_backward(g, x, wt, gy, dx.as_mut(), &mut dw);
                } else if g.is_pointwise() {
                    let px = g.h * g.w;
                    for b in 0..g.batch {
                        let gyb = &gy[b * g.cout * npx..][..g.cout * npx];
                        mm_nt(
                            gyb,
                            &x[b * g.cin * px..][..g.cin * px],
                            &mut dw,
                            g.cout,
                            g.cin,
                            npx,
                        );
                        if let Some(dx) = dx.as_mut() {
                            mm_tn(
                                wt,
                                gyb,
                                &mut dx[b * g.cin * px..][..g.cin * px],
                                g.cout,
                                g.cin,
                                npx,
                            );
                        }
                    }
                } else {
                    let rows = g.col_rows();
                    let px = g.h * g.w;
                    let mut col = vec![0.0; rows * npx];
                    let mut dcol = vec![0.0; rows * npx];
                    for b in 0..g.batch {
                        let gyb = &gy[b * g.cout * npx..][..g.cout * npx];
                        g.im2col(&x[b * g.cin * px..][..g.cin * px], &mut col);
                        mm_nt(gyb, &col, &mut dw, g.cout, rows, npx);
                        if let Some(dx) = dx.as_mut() {
                            dcol.iter_mut().for_each(|v| *v = 0.0);
                            mm_tn(wt, gyb, &mut dcol, g.cout, rows, npx);
                            g.col2im(&dcol, &mut dx[b * g.cin * px..][..g.cin * px]);
                        }
                    }
                }
                let mut grads = vec![dx, Some(dw)];
                if ctx.inputs.len() == 3 {
                    let mut db = vec![0.0; g.cout];
                    for (i, chunk) in gy.chunks(npx).enumerate() {
                        db[i % g.cout] += chunk.iter().sum::<Real>();
                    }
                    grads.push(Some(db));
                }
                Ok(grads)
            }),
        )
    }

    /// Normalizes over `axis` with learnable per-entry scale and shift
    /// (both of shape `[extent]`).
    pub fn layer_norm(
        &self,
        axis: usize,
        gamma: &Tensor,
        beta: &Tensor,
        eps: Real,
    ) -> Result<Tensor> {
        check_axis(axis, self.rank())?;
        let (outer, n, inner) = split_at_axis(self.shape(), axis);
        if gamma.shape() != [n] || beta.shape() != [n] {
            return Err(dim_err!(
                "layer_norm affine shapes {:?}/{:?}, expected [{n}]",
                gamma.shape(),
                beta.shape()
            ));
        }
        let x = self.data();
        let (gm, bt) = (gamma.data(), beta.data());
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; outer * inner];
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            let mut mean = vec![0.0; inner];
            let mut var = vec![0.0; inner];
            for c in 0..n {
                let row = &x[(o * n + c) * inner..][..inner];
                mean.iter_mut().zip(row).for_each(|(m, &v)| *m += v);
            }
            mean.iter_mut().for_each(|m| *m /= n as Real);
            for c in 0..n {
                let row = &x[(o * n + c) * inner..][..inner];
                for i in 0..inner {
                    let d = row[i] - mean[i];
                    var[i] += d * d;
                }
            }
            let is = &mut inv_std[o * inner..][..inner];
            for i in 0..inner {
                is[i] = 1.0 / (var[i] / n as Real + eps).sqrt();
            }
            for c in 0..n {
                let base = (o * n + c) * inner;
                for i in 0..inner {
                    let xh = (x[base + i] - mean[i]) * is[i];
                    xhat[base + i] = xh;
                    out[base + i] = xh * gm[c] + bt[c];
                }
            }
        }
        Tensor::from_op(
            "layer_norm",
            out,
            self.shape(),
            &[self, gamma, beta],
            Box::new(move |ctx| {
                let gm = ctx.inputs[1].data();
                let gy = ctx.grad;
                let mut dx = vec![0.0; gy.len()];
                let mut dg = vec![0.0; n];
                let mut db = vec![0.0; n];
                for o in 0..outer {
                    let mut mean_d = vec![0.0; inner];
                    let mut mean_dx = vec![0.0; inner];
                    for c in 0..n {
                        let base = (o * n + c) * inner;
                        for i in 0..inner {
                            let g = gy[base + i];
                            dg[c] += g * xhat[base + i];
                            db[c] += g;
                            let d = g * gm[c];
                            mean_d[i] += d;
                            mean_dx[i] += d * xhat[base + i];
                        }
                    }
                    let nf = n as Real;
                    for c in 0..n {
                        let base = (o * n + c) * inner;
                        for i in 0..inner {
                            let d = gy[base + i] * gm[c];
                            dx[base + i] = inv_std[o * inner + i]
                                * (d - mean_d[i] / nf - xhat[base + i] * mean_dx[i] / nf);
                        }
                    }
                }
                Ok(vec![Some(dx), Some(dg), Some(db)])
            }),
        )
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        check_axis(axis, self.rank())?;
        if self.data().iter().any(|v| v.is_nan()) {
            return Err(TensorError::Numeric("softmax input contains NaN".into()));
        }
        let (outer, n, inner) = split_at_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |c: usize| (o * n + c) * inner + i;
                let mut m = Real::NEG_INFINITY;
                for c in 0..n {
                    m = m.max(x[idx(c)]);
                }
                let mut s = 0.0;
                for c in 0..n {
                    let e = (x[idx(c)] - m).exp();
                    out[idx(c)] = e;
                    s += e;
                }
                for c in 0..n {
                    out[idx(c)] /= s;
                }
            }
        }
        Tensor::from_op(
            "softmax",
            out,
            self.shape(),
            &[self],
            Box::new(move |ctx| {
                let y = ctx.output.data();
                let gy = ctx.grad;
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |c: usize| (o * n + c) * inner + i;
                        let mut dot = 0.0;
                        for c in 0..n {
                            dot += gy[idx(c)] * y[idx(c)];
                        }
                        for c in 0..n {
                            dx[idx(c)] = y[idx(c)] * (gy[idx(c)] - dot);
                        }
                    }
                }
                Ok(vec![Some(dx)])
            }),
        )
    }

    /// Average pooling of NCHW input to `side × side`. Output cell `i`
    /// covers rows `[floor(i·H/side), ceil((i+1)·H/side))`, same for columns.
    pub fn adaptive_avg_pool2d(&self, side: usize) -> Result<Tensor> {
        if self.rank() != 4 || side == 0 {
            return Err(dim_err!(
                "adaptive_avg_pool2d expects NCHW input and side >= 1, got {:?}, side {side}",
                self.shape()
            ));
        }
        let (b, c, h, w) = (self.dim(0), self.dim(1), self.dim(2), self.dim(3));
        if h == 0 || w == 0 {
            return Err(dim_err!(
                "adaptive_avg_pool2d on empty spatial extent {h}x{w}"
            ));
        }
        let rows = pool_windows(h, side);
        let cols = pool_windows(w, side);
        let x = self.data();
        let mut out = vec![0.0; b * c * side * side];
        for bc in 0..b * c {
            let plane = &x[bc * h * w..][..h * w];
            for (oy, &(y0, y1)) in rows.iter().enumerate() {
                for (ox, &(x0, x1)) in cols.iter().enumerate() {
                    let mut s = 0.0;
                    for y in y0..y1 {
                        for xx in x0..x1 {
                            s += plane[y * w + xx];
                        }
                    }
                    out[(bc * side + oy) * side + ox] = s / ((y1 - y0) * (x1 - x0)) as Real;
                }
            }
        }
        Tensor::from_op(
            "adaptive_avg_pool2d",
            out,
            &[b, c, side, side],
            &[self],
            Box::new(move |ctx| {
                let mut dx = vec![0.0; b * c * h * w];
                for bc in 0..b * c {
                    for (oy, &(y0, y1)) in rows.iter().enumerate() {
                        for (ox, &(x0, x1)) in cols.iter().enumerate() {
                            let g = ctx.grad[(bc * side + oy) * side + ox]
                                / ((y1 - y0) * (x1 - x0)) as Real;
                            for y in y0..y1 {
                                for xx in x0..x1 {
                                    dx[bc * h * w + y * w + xx] += g;
                                }
                            }
                        }
                    }
                }
                Ok(vec![Some(dx)])
            }),
        )
    }

    /// Nearest-neighbour ×2 upsampling of NCHW input.
    pub fn upsample_nearest2x(&self) -> Result<Tensor> {
        if self.rank() != 4 {
            return Err(dim_err!("upsample expects NCHW, got {:?}", self.shape()));
        }
        let (b, c, h, w) = (self.dim(0), self.dim(1), self.dim(2), self.dim(3));
        let (h2, w2) = (2 * h, 2 * w);
        let x = self.data();
        let mut out = vec![0.0; b * c * h2 * w2];
        for bc in 0..b * c {
            for y in 0..h2 {
                for xx in 0..w2 {
                    out[(bc * h2 + y) * w2 + xx] = x[(bc * h + y / 2) * w + xx / 2];
                }
            }
        }
        Tensor::from_op(
            "upsample_nearest2x",
            out,
            &[b, c, h2, w2],
            &[self],
            Box::new(move |ctx| {
                let mut dx = vec![0.0; b * c * h * w];
                for bc in 0..b * c {
                    for y in 0..h2 {
                        for xx in 0..w2 {
                            dx[(bc * h + y / 2) * w + xx / 2] += ctx.grad[(bc * h2 + y) * w2 + xx];
                        }
                    }
                }
                Ok(vec![Some(dx)])
            }),
        )
    }

    /// Depth-wise causal 1-D convolution over (batch, length, channels):
    /// `y[t,c] = bias[c] + Σ_j w[c,j]·x[t-K+1+j, c]`, zero left padding.
    /// `weight` is (channels, K), `bias` is (channels).
    pub fn causal_conv1d(&self, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        if self.rank() != 3 || weight.rank() != 2 {
            return Err(dim_err!(
                "causal_conv1d expects (B,L,C) input and (C,K) weight, got {:?} and {:?}",
                self.shape(),
                weight.shape()
            ));
        }
        let (b, l, c) = (self.dim(0), self.dim(1), self.dim(2));
        let k = weight.dim(1);
        if weight.dim(0) != c || bias.shape() != [c] || k == 0 {
            return Err(dim_err!(
                "causal_conv1d: {c} channels vs weight {:?}, bias {:?}",
                weight.shape(),
                bias.shape()
            ));
        }
        let x = self.data();
        let (wt, bs) = (weight.data(), bias.data());
        let mut out = vec![0.0; x.len()];
        for bi in 0..b {
            for t in 0..l {
                let dst = &mut out[(bi * l + t) * c..][..c];
                dst.copy_from_slice(bs);
                for j in 0..k {
                    let src_t = t as isize - (k - 1 - j) as isize;
                    if src_t < 0 {
                        continue;
                    }
                    let src = &x[(bi * l + src_t as usize) * c..][..c];
                    for ch in 0..c {
                        dst[ch] += wt[ch * k + j] * src[ch];
                    }
                }
            }
        }
        Tensor::from_op(
            "causal_conv1d",
            out,
            self.shape(),
            &[self, weight, bias],
            Box::new(move |ctx| {
                let x = ctx.inputs[0].data();
                let wt = ctx.inputs[1].data();
                let gy = ctx.grad;
                let mut dx = vec![0.0; x.len()];
                let mut dw = vec![0.0; wt.len()];
                let mut db = vec![0.0; c];
                for bi in 0..b {
                    for t in 0..l {
                        let g = &gy[(bi * l + t) * c..][..c];
                        db.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
                        for j in 0..k {
                            let src_t = t as isize - (k - 1 - j) as isize;
                            if src_t < 0 {
                                continue;
                            }
                            let off = (bi * l + src_t as usize) * c;
                            for ch in 0..c {
                                dw[ch * k + j] += g[ch] * x[off + ch];
                                dx[off + ch] += g[ch] * wt[ch * k + j];
                            }
                        }
                    }
                }
                Ok(vec![Some(dx), Some(dw), Some(db)])
            }),
        )
    }
}

/// Half-open input windows `[floor(i·n/s), ceil((i+1)·n/s))` for each output cell.
pub fn pool_windows(n: usize, s: usize) -> Vec<(usize, usize)> {
    (0..s)
        .map(|i| ((i * n) / s, ((i + 1) * n).div_ceil(s)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let y = Tensor::from_f64(&[0., 0., 0.], &[3])
            .unwrap()
            .softmax(0)
            .unwrap();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let y = Tensor::from_f64(&[1., 2., 3.], &[3])
            .unwrap()
            .softmax(0)
            .unwrap();
        let want = [0.09003057317038046, 0.24472847105479767, 0.6652409557748219];
        for (a, b) in y.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-5);
        }
        let shifted = Tensor::from_f64(&[101., 102., 103.], &[3])
            .unwrap()
            .softmax(0)
            .unwrap();
        assert!(shifted.max_abs_diff(&y) < 1e-12);
    }

    #[test]
    fn softmax_rejects_nan() {
        let x = Tensor::from_f64(&[0., f64::NAN], &[2]).unwrap();
        assert!(matches!(x.softmax(0), Err(TensorError::Numeric(_))));
    }

    #[test]
    fn pool_examples() {
        let x = Tensor::from_f64(&[1., 2., 3., 4.], &[1, 1, 2, 2]).unwrap();
        assert_eq!(x.adaptive_avg_pool2d(1).unwrap().data(), &[2.5]);
        let c = Tensor::full(&[1, 2, 7, 5], 0.3);
        let p = c.adaptive_avg_pool2d(3).unwrap();
        assert!(p
            .data()
            .iter()
            .all(|v| (v - 0.3).abs() < 1e3 * Real::EPSILON));
        assert_eq!(pool_windows(5, 2), vec![(0, 3), (2, 5)]);
        // smaller input than the target grid repeats cells
        assert_eq!(pool_windows(2, 4), vec![(0, 1), (0, 1), (1, 2), (1, 2)]);
    }

    #[test]
    fn pointwise_conv_is_channel_matmul() {
        let x = Tensor::from_f64(&[1., 2., 3., 4., 5., 6., 7., 8.], &[1, 2, 2, 2]).unwrap();
        let w = Tensor::from_f64(&[1., 1., 2., -1.], &[2, 2, 1, 1]).unwrap();
        let b = Tensor::from_f64(&[0.5, 0.0], &[2]).unwrap();
        let y = x
            .conv2d(
                &w,
                Some(&b),
                Conv2dSpec {
                    stride: 1,
                    padding: 0,
                    groups: 1,
                },
            )
            .unwrap();
        assert_eq!(y.data(), &[6.5, 8.5, 10.5, 12.5, -3., -2., -1., 0.]);
    }

    #[test]
    fn strided_conv_output_size() {
        let x = Tensor::ones(&[2, 3, 8, 8]);
        let w = Tensor::ones(&[5, 3, 3, 3]);
        let y = x
            .conv2d(
                &w,
                None,
                Conv2dSpec {
                    stride: 2,
                    padding: 1,
                    groups: 1,
                },
            )
            .unwrap();
        assert_eq!(y.shape(), &[2, 5, 4, 4]);
        // interior cell sees the full 3x3x3 window
        assert_eq!(y.data()[5], 27.0);
    }

    #[test]
    fn layer_norm_of_constant_is_zero() {
        let x = Tensor::full(&[1, 4, 2, 2], 3.0);
        let y = x
            .layer_norm(1, &Tensor::ones(&[4]), &Tensor::zeros(&[4]), 1e-6)
            .unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn causal_conv_sees_only_past() {
        let x = Tensor::from_f64(&[1., 2., 3., 4.], &[1, 4, 1]).unwrap();
        let w = Tensor::from_f64(&[1., 10.], &[1, 2]).unwrap();
        let y = x.causal_conv1d(&w, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.data(), &[10., 21., 32., 43.]);
    }

    #[test]
    fn upsample_repeats_pixels() {
        let x = Tensor::from_f64(&[1., 2., 3., 4.], &[1, 1, 2, 2]).unwrap();
        let y = x.upsample_nearest2x().unwrap();
        assert_eq!(&y.data()[..8], &[1., 1., 2., 2., 1., 1., 2., 2.]);
    }
}
