//! Tape-free forward and backward kernels. The tape in [`super::tape`] wires
//! these together; fused inference calls them directly.

use super::tensor::{matmul, Scalar, Tensor};
use super::NumError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn output_size(&self, in_h: usize, in_w: usize) -> Result<(usize, usize), NumError> {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        if s == 0 {
            return Err(NumError::shape("conv2d", "stride must be at least 1".into()));
        }
        if in_h + 2 * p < k || in_w + 2 * p < k {
            return Err(NumError::shape(
                "conv2d",
                format!("{in_h}x{in_w} input (padding {p}) is smaller than {k}x{k} kernel"),
            ));
        }
        Ok(((in_h + 2 * p - k) / s + 1, (in_w + 2 * p - k) / s + 1))
    }

    fn from_weight<T: Scalar>(
        x: &Tensor<T>,
        weight: &Tensor<T>,
        stride: usize,
        padding: usize,
    ) -> Result<Self, NumError> {
        let (_, c, _, _) = x.dims4("conv2d")?;
        let (o, wc, kh, kw) = weight.dims4("conv2d")?;
        if wc != c {
            return Err(NumError::shape(
                "conv2d",
                format!("input has {c} channels, weight expects {wc}"),
            ));
        }
        if kh != kw {
            return Err(NumError::shape("conv2d", "only square kernels".into()));
        }
        Ok(Self {
            in_channels: c,
            out_channels: o,
            kernel: kh,
            stride,
            padding,
        })
    }
}

/// Unfolds one `C x H x W` sample into `(C*K*K) x (OH*OW)` columns.
fn im2col<T: Scalar>(x: &[T], h: usize, w: usize, g: &ConvGeometry, oh: usize, ow: usize, cols: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride, g.padding);
    let plane = oh * ow;
    for c in 0..g.in_channels {
        let xc = &x[c * h * w..(c + 1) * h * w];
        for kh in 0..k {
            for kw in 0..k {
                let row = ((c * k + kh) * k + kw) * plane;
                let dst = &mut cols[row..row + plane];
                for oy in 0..oh {
                    let iy = (oy * s + kh) as isize - p as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, slot) in line.iter_mut().enumerate() {
                        let ix = (ox * s + kw) as isize - p as isize;
                        *slot = if ix < 0 || ix >= w as isize {
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

/// Scatter-adds columns back onto a `C x H x W` sample.
fn col2im<T: Scalar>(cols: &[T], h: usize, w: usize, g: &ConvGeometry, oh: usize, ow: usize, dx: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride, g.padding);
    let plane = oh * ow;
    for c in 0..g.in_channels {
        let dxc = &mut dx[c * h * w..(c + 1) * h * w];
        for kh in 0..k {
            for kw in 0..k {
                let row = ((c * k + kh) * k + kw) * plane;
                let src = &cols[row..row + plane];
                for oy in 0..oh {
                    let iy = (oy * s + kh) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let line = &mut dxc[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * s + kw) as isize - p as isize;
                        if ix >= 0 && ix < w as isize {
                            line[ix as usize] = line[ix as usize] + src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `N x C x H x W` input with `O x C x K x K` weights.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&[T]>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>, NumError> {
    let g = ConvGeometry::from_weight(x, weight, stride, padding)?;
    let (n, c, h, w) = x.dims4("conv2d")?;
    let (oh, ow) = g.output_size(h, w)?;
    if let Some(b) = bias {
        if b.len() != g.out_channels {
            return Err(NumError::shape("conv2d", "bias length".into()));
        }
    }
    let o = g.out_channels;
    let ckk = c * g.kernel * g.kernel;
    let plane = oh * ow;
    let mut out = Tensor::zeros(&[n, o, oh, ow]);
    let mut cols = vec![T::zero(); ckk * plane];
    for s in 0..n {
        im2col(&x.data()[s * c * h * w..(s + 1) * c * h * w], h, w, &g, oh, ow, &mut cols);
        let dst = &mut out.data_mut()[s * o * plane..(s + 1) * o * plane];
        matmul(o, ckk, plane, weight.data(), false, &cols, false, T::zero(), dst);
        if let Some(b) = bias {
            for (oc, &bv) in b.iter().enumerate() {
                for v in &mut dst[oc * plane..(oc + 1) * plane] {
                    *v = *v + bv;
                }
            }
        }
    }
    Ok(out)
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    padding: usize,
    need_input: bool,
) -> Result<ConvGrads<T>, NumError> {
    let g = ConvGeometry::from_weight(x, weight, stride, padding)?;
    let (n, c, h, w) = x.dims4("conv2d")?;
    let (oh, ow) = g.output_size(h, w)?;
    let o = g.out_channels;
    let ckk = c * g.kernel * g.kernel;
    let plane = oh * ow;
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = vec![T::zero(); o];
    let mut dx = need_input.then(|| Tensor::zeros(x.shape()));
    let mut cols = vec![T::zero(); ckk * plane];
    let mut dcols = vec![T::zero(); ckk * plane];
    for s in 0..n {
        let dys = &dy.data()[s * o * plane..(s + 1) * o * plane];
        im2col(&x.data()[s * c * h * w..(s + 1) * c * h * w], h, w, &g, oh, ow, &mut cols);
        matmul(o, plane, ckk, dys, false, &cols, true, T::one(), dw.data_mut());
        for (oc, acc) in db.iter_mut().enumerate() {
            *acc = *acc + dys[oc * plane..(oc + 1) * plane].iter().copied().sum::<T>();
        }
        if let Some(dx) = dx.as_mut() {
            matmul(ckk, o, plane, weight.data(), true, dys, false, T::zero(), &mut dcols);
            col2im(&dcols, h, w, &g, oh, ow, &mut dx.data_mut()[s * c * h * w..(s + 1) * c * h * w]);
        }
    }
    Ok(ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}

/// For every output pixel, the sum of `taps[o, kh, kw]` over the kernel taps
/// that land inside the input. Shape `O x OH x OW`.
pub fn inbound_tap_sum<T: Scalar>(
    taps: &Tensor<T>,
    in_h: usize,
    in_w: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>, NumError> {
    let (o, k, k2) = match taps.shape() {
        &[o, k, k2] => (o, k, k2),
        s => return Err(NumError::shape("tap_sum", format!("expected O x K x K, got {s:?}"))),
    };
    debug_assert_eq!(k, k2);
    let g = ConvGeometry {
        in_channels: 1,
        out_channels: o,
        kernel: k,
        stride,
        padding,
    };
    let (oh, ow) = g.output_size(in_h, in_w)?;
    let inside = |out: usize, tap: usize, size: usize| {
        let i = (out * stride + tap) as isize - padding as isize;
        i >= 0 && i < size as isize
    };
    let mut out = Tensor::zeros(&[o, oh, ow]);
    for oc in 0..o {
        let t = &taps.data()[oc * k * k..(oc + 1) * k * k];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for kh in (0..k).filter(|&kh| inside(oy, kh, in_h)) {
                    for kw in (0..k).filter(|&kw| inside(ox, kw, in_w)) {
                        acc = acc + t[kh * k + kw];
                    }
                }
                out.data_mut()[(oc * oh + oy) * ow + ox] = acc;
            }
        }
    }
    Ok(out)
}

pub struct BnForward<T> {
    pub out: Tensor<T>,
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    /// Biased batch variance (train mode); the running variance in eval mode.
    pub var: Vec<T>,
}

fn bn_check<T: Scalar>(x: &Tensor<T>, gamma: &[T], beta: &[T]) -> Result<(usize, usize, usize), NumError> {
    let (n, c, h, w) = x.dims4("batchnorm")?;
    if gamma.len() != c || beta.len() != c {
        return Err(NumError::shape(
            "batchnorm",
            format!("{c} channels but {} / {} affine parameters", gamma.len(), beta.len()),
        ));
    }
    Ok((n, c, h * w))
}

fn bn_apply<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    inv_std: &[T],
) -> (Tensor<T>, Tensor<T>) {
    let (n, c, h, w) = x.dims4("batchnorm").unwrap();
    let hw = h * w;
    let mut xhat = Tensor::zeros(x.shape());
    let mut out = Tensor::zeros(x.shape());
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * hw;
            for i in base..base + hw {
                let xh = (x.data()[i] - mean[ch]) * inv_std[ch];
                xhat.data_mut()[i] = xh;
                out.data_mut()[i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    (out, xhat)
}

/// Normalizes with per-channel batch statistics over `N x H x W`.
pub fn batchnorm_train<T: Scalar>(x: &Tensor<T>, gamma: &[T], beta: &[T], eps: T) -> Result<BnForward<T>, NumError> {
    let (n, c, hw) = bn_check(x, gamma, beta)?;
    let count = T::from_usize(n * hw).unwrap();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let values = (0..n).flat_map(|s| {
            let base = (s * c + ch) * hw;
            x.data()[base..base + hw].iter().copied()
        });
        let m = values.clone().sum::<T>() / count;
        let v = values.map(|v| (v - m) * (v - m)).sum::<T>() / count;
        mean[ch] = m;
        var[ch] = v;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let (out, xhat) = bn_apply(x, gamma, beta, &mean, &inv_std);
    Ok(BnForward {
        out,
        xhat,
        inv_std,
        mean,
        var,
    })
}

pub fn batchnorm_eval<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: T,
) -> Result<BnForward<T>, NumError> {
    bn_check(x, gamma, beta)?;
    let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let (out, xhat) = bn_apply(x, gamma, beta, running_mean, &inv_std);
    Ok(BnForward {
        out,
        xhat,
        inv_std,
        mean: running_mean.to_vec(),
        var: running_var.to_vec(),
    })
}

pub struct BnGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// In train mode the batch statistics depend on the input, which adds the
/// two mean-correction terms to the input gradient.
pub fn batchnorm_backward<T: Scalar>(
    dy: &Tensor<T>,
    xhat: &Tensor<T>,
    gamma: &[T],
    inv_std: &[T],
    train: bool,
) -> BnGrads<T> {
    let (n, c, h, w) = dy.dims4("batchnorm").unwrap();
    let hw = h * w;
    let count = T::from_usize(n * hw).unwrap();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * hw;
            for i in base..base + hw {
                dbeta[ch] = dbeta[ch] + dy.data()[i];
                dgamma[ch] = dgamma[ch] + dy.data()[i] * xhat.data()[i];
            }
        }
    }
    let mut dx = Tensor::zeros(dy.shape());
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * hw;
            let scale = gamma[ch] * inv_std[ch];
            for i in base..base + hw {
                let g = dy.data()[i];
                dx.data_mut()[i] = if train {
                    scale * (g - dbeta[ch] / count - xhat.data()[i] * dgamma[ch] / count)
                } else {
                    scale * g
                };
            }
        }
    }
    BnGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    }
}

pub fn sigmoid<T: Scalar>(w: T) -> T {
    T::one() / (T::one() + (-w).exp())
}

/// Charge, spikes and post-reset potential of one PLIF step with soft reset:
/// `h = v + decay * (x - v)`, `s = [h >= threshold]`, `v' = h - threshold * s`.
pub fn plif_step_values<T: Scalar>(
    x: &[T],
    v: &[T],
    decay: T,
    threshold: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let h: Vec<T> = x.iter().zip(v).map(|(&x, &v)| v + decay * (x - v)).collect();
    let s: Vec<T> = h
        .iter()
        .map(|&h| if h >= threshold { T::one() } else { T::zero() })
        .collect();
    let v_next = h.iter().zip(&s).map(|(&h, &s)| h - threshold * s).collect();
    (h, s, v_next)
}

/// Mean over `H x W`, giving `N x C`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>, NumError> {
    let (n, c, h, w) = x.dims4("global_avg_pool")?;
    let hw = h * w;
    let denom = T::from_usize(hw).unwrap();
    let data = x
        .data()
        .chunks_exact(hw)
        .map(|plane| plane.iter().copied().sum::<T>() / denom)
        .collect();
    Tensor::from_vec(&[n, c], data)
}
