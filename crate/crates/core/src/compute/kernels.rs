//! Forward and backward kernels on plain tensors.
//!
//! The graph in [`crate::compute::graph`] records these calls and replays the
//! backward halves in reverse order.

use crate::compute::scalar::{matmul, MatRef};
use crate::compute::{Scalar, Tensor};
use crate::error::{shape_err, Result};

/// Interpolation used by [`upsample`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsampleMode {
    Bilinear,
    Nearest,
}

impl UpsampleMode {
    pub fn as_str(self) -> &'static str {
        match self {
            UpsampleMode::Bilinear => "bilinear",
            UpsampleMode::Nearest => "nearest",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bilinear" => Some(UpsampleMode::Bilinear),
            "nearest" => Some(UpsampleMode::Nearest),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// convolution

struct ConvGeom {
    batch: usize,
    in_ch: usize,
    h: usize,
    w: usize,
    out_ch: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new<T: Scalar>(
        input: &Tensor<T>,
        weight: &Tensor<T>,
        bias: &Tensor<T>,
        pad: usize,
    ) -> Result<Self> {
        let (batch, in_ch, h, w) = input.dims4()?;
        let (out_ch, w_in, kh, kw) = weight.dims4().map_err(|_| {
            shape_err!(
                "conv weight must be (out, in, kh, kw), got {:?}",
                weight.shape()
            )
        })?;
        if w_in != in_ch {
            return Err(shape_err!(
                "conv weight expects {} input channels, input has {}",
                w_in,
                in_ch
            ));
        }
        if bias.len() != out_ch {
            return Err(shape_err!(
                "conv bias has {} entries, expected {}",
                bias.len(),
                out_ch
            ));
        }
        if kh == 0 || kw == 0 || kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(shape_err!(
                "kernel {}x{} does not fit padded input {}x{}",
                kh,
                kw,
                h + 2 * pad,
                w + 2 * pad
            ));
        }
        Ok(Self {
            batch,
            in_ch,
            h,
            w,
            out_ch,
            kh,
            kw,
            pad,
            oh: h + 2 * pad - kh + 1,
            ow: w + 2 * pad - kw + 1,
        })
    }

    fn k(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfolds one batch item into a `(in_ch*kh*kw) x (oh*ow)` matrix.
    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let p = self.p();
        for c in 0..self.in_ch {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = ((c * self.kh + ki) * self.kw + kj) * p;
                    for oy in 0..self.oh {
                        let iy = (oy + ki) as isize - self.pad as isize;
                        let dst = &mut cols[row + oy * self.ow..row + (oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox + kj) as isize - self.pad as isize;
                            *d = if ix < 0 || ix >= self.w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im_add<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let p = self.p();
        for c in 0..self.in_ch {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = ((c * self.kh + ki) * self.kw + kj) * p;
                    for oy in 0..self.oh {
                        let iy = (oy + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &cols[row + oy * self.ow..row + (oy + 1) * self.ow];
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = (ox + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] = dst[ix as usize] + v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation with zero padding and unit stride.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(input, weight, bias, padding)?;
    let (k, p) = (g.k(), g.p());
    let in_stride = g.in_ch * g.h * g.w;
    let out_stride = g.out_ch * p;
    let mut out = vec![T::zero(); g.batch * out_stride];
    let mut cols = vec![T::zero(); k * p];
    for b in 0..g.batch {
        g.im2col(&input.data()[b * in_stride..(b + 1) * in_stride], &mut cols);
        let ob = &mut out[b * out_stride..(b + 1) * out_stride];
        for (o, chunk) in ob.chunks_mut(p).enumerate() {
            chunk.fill(bias.data()[o]);
        }
        matmul(
            MatRef::new(weight.data(), g.out_ch, k),
            MatRef::new(&cols, k, p),
            T::one(),
            ob,
        );
    }
    Tensor::new(vec![g.batch, g.out_ch, g.oh, g.ow], out)
}

/// Gradients of [`conv2d`]; `dx` is only computed when requested.
pub struct Conv2dGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    padding: usize,
    grad_out: &[T],
    need_input: bool,
) -> Result<Conv2dGrads<T>> {
    let g = ConvGeom::new(input, weight, bias, padding)?;
    let (k, p) = (g.k(), g.p());
    let in_stride = g.in_ch * g.h * g.w;
    let out_stride = g.out_ch * p;
    if grad_out.len() != g.batch * out_stride {
        return Err(shape_err!("conv upstream gradient has wrong length"));
    }
    let mut dw = vec![T::zero(); g.out_ch * k];
    let mut db = vec![T::zero(); g.out_ch];
    let mut dx = need_input.then(|| vec![T::zero(); input.len()]);
    let mut cols = vec![T::zero(); k * p];
    let mut dcols = vec![T::zero(); k * p];
    for b in 0..g.batch {
        let gb = &grad_out[b * out_stride..(b + 1) * out_stride];
        for (o, chunk) in gb.chunks(p).enumerate() {
            db[o] = db[o] + chunk.iter().copied().sum::<T>();
        }
        g.im2col(&input.data()[b * in_stride..(b + 1) * in_stride], &mut cols);
        matmul(
            MatRef::new(gb, g.out_ch, p),
            MatRef::new(&cols, k, p).t(),
            T::one(),
            &mut dw,
        );
        if let Some(dx) = dx.as_mut() {
            matmul(
                MatRef::new(weight.data(), g.out_ch, k).t(),
                MatRef::new(gb, g.out_ch, p),
                T::zero(),
                &mut dcols,
            );
            g.col2im_add(&dcols, &mut dx[b * in_stride..(b + 1) * in_stride]);
        }
    }
    Ok(Conv2dGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}

// ---------------------------------------------------------------------------
// fully connected

fn linear_dims<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize)> {
    let batch = *input
        .shape()
        .first()
        .ok_or_else(|| shape_err!("linear input has rank 0"))?;
    let features = input.len().checked_div(batch).unwrap_or(0);
    let (out, inp) = match weight.shape() {
        [o, i] => (*o, *i),
        s => return Err(shape_err!("linear weight must be (out, in), got {:?}", s)),
    };
    if inp != features {
        return Err(shape_err!(
            "linear layer expects {} input features, got {} (input shape {:?})",
            inp,
            features,
            input.shape()
        ));
    }
    if bias.len() != out {
        return Err(shape_err!(
            "linear bias has {} entries, expected {}",
            bias.len(),
            out
        ));
    }
    Ok((batch, inp, out))
}

/// Affine map applied to each batch item flattened to a vector.
pub fn linear<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (batch, inp, out) = linear_dims(input, weight, bias)?;
    let mut y: Vec<T> = (0..batch)
        .flat_map(|_| bias.data().iter().copied())
        .collect();
    matmul(
        MatRef::new(input.data(), batch, inp),
        MatRef::new(weight.data(), out, inp).t(),
        T::one(),
        &mut y,
    );
    Tensor::new(vec![batch, out], y)
}

pub struct LinearGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    grad_out: &[T],
    need_input: bool,
) -> Result<LinearGrads<T>> {
    let (batch, inp, out) = linear_dims(input, weight, bias)?;
    let mut dw = vec![T::zero(); out * inp];
    matmul(
        MatRef::new(grad_out, batch, out).t(),
        MatRef::new(input.data(), batch, inp),
        T::zero(),
        &mut dw,
    );
    let mut db = vec![T::zero(); out];
    for row in grad_out.chunks(out) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d = *d + g;
        }
    }
    let dx = need_input.then(|| {
        let mut dx = vec![T::zero(); batch * inp];
        matmul(
            MatRef::new(grad_out, batch, out),
            MatRef::new(weight.data(), out, inp),
            T::zero(),
            &mut dx,
        );
        dx
    });
    Ok(LinearGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}

// ---------------------------------------------------------------------------
// pooling and resampling

/// Non-overlapping 2x2 max pooling. Returns the output and, per output
/// element, the flat input index it was taken from.
pub fn maxpool2x2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (b, c, h, w) = input.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err!(
            "2x2 pooling needs even spatial size, got {}x{}",
            h,
            w
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut arg = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![b, c, oh, ow], out)?, arg))
}

/// Mean over non-overlapping 2x2 blocks.
pub fn downsample_avg2x<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = input.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err!(
            "2x2 average downsampling needs even spatial size, got {}x{}",
            h,
            w
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let x = input.data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let i = base + 2 * oy * w + 2 * ox;
                out.push((x[i] + x[i + 1] + x[i + w] + x[i + w + 1]) * quarter);
            }
        }
    }
    Tensor::new(vec![b, c, oh, ow], out)
}

pub fn downsample_avg2x_backward<T: Scalar>(input_shape: &[usize], grad_out: &[T]) -> Vec<T> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let (oh, ow) = (h / 2, w / 2);
    let planes = input_shape[0] * input_shape[1];
    let quarter = T::from_f64(0.25);
    let mut dx = vec![T::zero(); planes * h * w];
    for plane in 0..planes {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = grad_out[(plane * oh + oy) * ow + ox] * quarter;
                let i = plane * h * w + 2 * oy * w + 2 * ox;
                dx[i] = g;
                dx[i + 1] = g;
                dx[i + w] = g;
                dx[i + w + 1] = g;
            }
        }
    }
    dx
}

/// Per-axis interpolation taps: `(i0, i1, weight of i1)`.
fn axis_taps(n_in: usize, n_out: usize, mode: UpsampleMode) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| match mode {
            UpsampleMode::Bilinear => {
                let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, src - i0 as f64)
            }
            UpsampleMode::Nearest => {
                let src = (((i as f64 + 0.5) * scale).floor() as usize).min(n_in - 1);
                (src, src, 0.0)
            }
        })
        .collect()
}

fn check_upsample<T: Scalar>(
    input: &Tensor<T>,
    th: usize,
    tw: usize,
) -> Result<(usize, usize, usize, usize)> {
    let (b, c, h, w) = input.dims4()?;
    if th < h || tw < w {
        return Err(shape_err!(
            "upsample target {}x{} is smaller than input {}x{}",
            th,
            tw,
            h,
            w
        ));
    }
    if h == 0 || w == 0 {
        return Err(shape_err!("cannot upsample an empty image"));
    }
    Ok((b, c, h, w))
}

/// Resizes each plane to `target_h x target_w` using half-pixel-centre sampling.
pub fn upsample<T: Scalar>(
    input: &Tensor<T>,
    target_h: usize,
    target_w: usize,
    mode: UpsampleMode,
) -> Result<Tensor<T>> {
    let (b, c, h, w) = check_upsample(input, target_h, target_w)?;
    let ty = axis_taps(h, target_h, mode);
    let tx = axis_taps(w, target_w, mode);
    let x = input.data();
    let mut out = Vec::with_capacity(b * c * target_h * target_w);
    for plane in 0..b * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        for &(y0, y1, fy) in &ty {
            let fy = T::from_f64(fy);
            for &(x0, x1, fx) in &tx {
                let fx = T::from_f64(fx);
                let top = src[y0 * w + x0] * (T::one() - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (T::one() - fx) + src[y1 * w + x1] * fx;
                out.push(top * (T::one() - fy) + bot * fy);
            }
        }
    }
    Tensor::new(vec![b, c, target_h, target_w], out)
}

pub fn upsample_backward<T: Scalar>(
    input_shape: &[usize],
    target_h: usize,
    target_w: usize,
    mode: UpsampleMode,
    grad_out: &[T],
) -> Vec<T> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let planes = input_shape[0] * input_shape[1];
    let ty = axis_taps(h, target_h, mode);
    let tx = axis_taps(w, target_w, mode);
    let mut dx = vec![T::zero(); planes * h * w];
    for plane in 0..planes {
        let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
        let g = &grad_out[plane * target_h * target_w..(plane + 1) * target_h * target_w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::from_f64(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::from_f64(fx);
                let v = g[oy * target_w + ox];
                let top = v * (T::one() - fy);
                let bot = v * fy;
                dst[y0 * w + x0] = dst[y0 * w + x0] + top * (T::one() - fx);
                dst[y0 * w + x1] = dst[y0 * w + x1] + top * fx;
                dst[y1 * w + x0] = dst[y1 * w + x0] + bot * (T::one() - fx);
                dst[y1 * w + x1] = dst[y1 * w + x1] + bot * fx;
            }
        }
    }
    dx
}

/// Stacks `a` and `b` along the channel axis.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ba, ca, ha, wa) = a.dims4()?;
    let (bb, cb, hb, wb) = b.dims4()?;
    if ba != bb || ha != hb || wa != wb {
        return Err(shape_err!(
            "cannot concatenate {:?} and {:?} along channels",
            a.shape(),
            b.shape()
        ));
    }
    let plane = ha * wa;
    let mut out = Vec::with_capacity(a.len() + b.len());
    for i in 0..ba {
        out.extend_from_slice(&a.data()[i * ca * plane..(i + 1) * ca * plane]);
        out.extend_from_slice(&b.data()[i * cb * plane..(i + 1) * cb * plane]);
    }
    Tensor::new(vec![ba, ca + cb, ha, wa], out)
}

/// Splits a channel-concatenated gradient back into its two parts.
pub fn split_channels<T: Scalar>(
    grad: &[T],
    batch: usize,
    ca: usize,
    cb: usize,
    plane: usize,
) -> (Vec<T>, Vec<T>) {
    let mut ga = Vec::with_capacity(batch * ca * plane);
    let mut gb = Vec::with_capacity(batch * cb * plane);
    let per = (ca + cb) * plane;
    for i in 0..batch {
        let item = &grad[i * per..(i + 1) * per];
        ga.extend_from_slice(&item[..ca * plane]);
        gb.extend_from_slice(&item[ca * plane..]);
    }
    (ga, gb)
}
