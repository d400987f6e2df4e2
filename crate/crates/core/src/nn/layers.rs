//! Layer kernels: forward maps and their analytic backward passes.
//!
//! Every kernel works on NCHW [`Tensor4`] values. Layers that own
//! parameters accumulate into the gradient buffers of those parameters;
//! the caller keeps whatever activations the backward pass needs.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::param::Param;
use super::tensor::{axpy, dot, sum, Tensor4};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.9;

/// Layer kinds of the fixed substrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv3x3,
    Conv1x1,
    BatchNorm,
    Relu,
    Sigmoid,
    Downsample2x,
    Upsample2x,
}

/// One entry of a network definition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl LayerSpec {
    pub fn new(kind: LayerKind, in_channels: usize, out_channels: usize) -> Self {
        Self {
            kind,
            in_channels,
            out_channels,
        }
    }
}

/// Checks that consecutive specs agree on channel counts.
pub fn check_chain(specs: &[LayerSpec]) -> Result<()> {
    for pair in specs.windows(2) {
        if pair[0].out_channels != pair[1].in_channels {
            return Err(Error::InvalidParameter(format!(
                "channel chain broken between {:?} and {:?}",
                pair[0].kind, pair[1].kind
            )));
        }
    }
    for s in specs {
        let same = !matches!(s.kind, LayerKind::Conv3x3 | LayerKind::Conv1x1);
        if same && s.in_channels != s.out_channels {
            return Err(Error::InvalidParameter(format!(
                "{:?} cannot change channel count",
                s.kind
            )));
        }
    }
    Ok(())
}

fn kernel_size(weight: &Tensor4) -> Result<usize> {
    let [_, _, kh, kw] = weight.shape();
    if kh != kw || !(kh == 1 || kh == 3) {
        return Err(Error::InvalidParameter(format!(
            "unsupported kernel {kh}x{kw}"
        )));
    }
    Ok(kh)
}

fn check_conv(x: &Tensor4, weight: &Tensor4) -> Result<usize> {
    let k = kernel_size(weight)?;
    if weight.shape()[1] != x.c() {
        return Err(Error::Shape {
            op: "conv2d",
            left: x.shape(),
            right: weight.shape(),
        });
    }
    Ok(k)
}

/// Ranges `(dst_start, src_start, len)` of a one-dimensional shift by `d`.
#[inline]
fn shift_range(len: usize, d: isize) -> (usize, usize, usize) {
    if d >= 0 {
        let d = d as usize;
        (0, d, len.saturating_sub(d))
    } else {
        let d = (-d) as usize;
        (d, 0, len.saturating_sub(d))
    }
}

/// Stride-1 cross-correlation with zero padding that preserves H×W.
pub fn conv2d_forward(x: &Tensor4, weight: &Tensor4, bias: &Tensor4) -> Result<Tensor4> {
    let k = check_conv(x, weight)?;
    let [n, cin, h, w] = x.shape();
    let cout = weight.shape()[0];
    if bias.len() != cout {
        return Err(Error::Shape {
            op: "conv2d bias",
            left: weight.shape(),
            right: bias.shape(),
        });
    }
    let r = (k / 2) as isize;
    let mut y = Tensor4::zeros([n, cout, h, w]);
    let wd = weight.data();
    for b in 0..n {
        for oc in 0..cout {
            let out = y.plane_mut(b, oc);
            out.fill(bias.data()[oc]);
            for ic in 0..cin {
                let inp = x.plane(b, ic);
                for ky in 0..k {
                    let dy = ky as isize - r;
                    let (oy, iy, ny) = shift_range(h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - r;
                        let (ox, ix, nx) = shift_range(w, dx);
                        let wv = wd[((oc * cin + ic) * k + ky) * k + kx];
                        for row in 0..ny {
                            let o = (oy + row) * w + ox;
                            let i = (iy + row) * w + ix;
                            axpy(&mut out[o..o + nx], wv, &inp[i..i + nx]);
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Gradients of [`conv2d_forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub grad_x: Tensor4,
    pub grad_w: Tensor4,
    pub grad_b: Tensor4,
}

pub fn conv2d_backward(x: &Tensor4, weight: &Tensor4, grad_out: &Tensor4) -> Result<ConvGrads> {
    let k = check_conv(x, weight)?;
    let [n, cin, h, w] = x.shape();
    let cout = weight.shape()[0];
    if grad_out.shape() != [n, cout, h, w] {
        return Err(Error::Shape {
            op: "conv2d backward",
            left: [n, cout, h, w],
            right: grad_out.shape(),
        });
    }
    let r = (k / 2) as isize;
    let mut grad_x = Tensor4::zeros(x.shape());
    let mut grad_w = Tensor4::zeros(weight.shape());
    let mut grad_b = Tensor4::zeros([1, cout, 1, 1]);
    let wd = weight.data();
    for b in 0..n {
        for oc in 0..cout {
            let go = grad_out.plane(b, oc);
            grad_b.data_mut()[oc] += sum(go);
            for ic in 0..cin {
                let inp = x.plane(b, ic);
                for ky in 0..k {
                    let dy = ky as isize - r;
                    let (oy, iy, ny) = shift_range(h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - r;
                        let (ox, ix, nx) = shift_range(w, dx);
                        let widx = ((oc * cin + ic) * k + ky) * k + kx;
                        let wv = wd[widx];
                        let mut acc = 0.0f32;
                        let gx = grad_x.plane_mut(b, ic);
                        for row in 0..ny {
                            let o = (oy + row) * w + ox;
                            let i = (iy + row) * w + ix;
                            acc += dot(&go[o..o + nx], &inp[i..i + nx]);
                            axpy(&mut gx[i..i + nx], wv, &go[o..o + nx]);
                        }
                        grad_w.data_mut()[widx] += acc;
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        grad_x,
        grad_w,
        grad_b,
    })
}

/// Convolution layer owning its weight and bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
}

impl Conv2d {
    /// He-style fan-in initialization, zero bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut Rng) -> Self {
        use rand_distr::{Distribution, Normal};
        let fan_in = (in_channels * kernel * kernel) as f32;
        let std = libm::sqrtf(2.0 / fan_in);
        let normal = Normal::new(0.0f32, std).expect("positive std");
        let shape = [out_channels, in_channels, kernel, kernel];
        let data = (0..shape.iter().product::<usize>())
            .map(|_| normal.sample(rng))
            .collect();
        Self {
            weight: Param::new(Tensor4::from_vec(shape, data).expect("shape")),
            bias: Param::new(Tensor4::zeros([1, out_channels, 1, 1])),
        }
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        conv2d_forward(x, &self.weight.value, &self.bias.value)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor4, grad_out: &Tensor4) -> Result<Tensor4> {
        let g = conv2d_backward(x, &self.weight.value, grad_out)?;
        self.weight.accumulate(g.grad_w.data());
        self.bias.accumulate(g.grad_b.data());
        Ok(g.grad_x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-channel batch normalization with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub scale: Param,
    pub shift: Param,
    pub running_mean: Tensor4,
    pub running_var: Tensor4,
}

/// Activations kept by [`BatchNorm::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    mode: BnMode,
    xhat: Tensor4,
    inv_std: Vec<f32>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            scale: Param::new(Tensor4::filled([1, channels, 1, 1], 1.0)),
            shift: Param::new(Tensor4::zeros([1, channels, 1, 1])),
            running_mean: Tensor4::zeros([1, channels, 1, 1]),
            running_var: Tensor4::filled([1, channels, 1, 1], 1.0),
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.value.len()
    }

    pub fn forward(&mut self, x: &Tensor4, mode: BnMode) -> Result<(Tensor4, BnCache)> {
        let [n, c, h, w] = x.shape();
        if c != self.channels() {
            return Err(Error::Shape {
                op: "batchnorm",
                left: x.shape(),
                right: self.scale.value.shape(),
            });
        }
        let m = n * h * w;
        if m == 0 {
            return Err(Error::InvalidParameter(
                "batchnorm over zero spatial extent".into(),
            ));
        }
        let mut y = Tensor4::zeros(x.shape());
        let mut xhat = Tensor4::zeros(x.shape());
        let mut inv_std = vec![0.0f32; c];
        for ch in 0..c {
            let (mean, var) = match mode {
                BnMode::Train => {
                    let mut s = 0.0f64;
                    for b in 0..n {
                        s += x.plane(b, ch).iter().map(|&v| f64::from(v)).sum::<f64>();
                    }
                    let mean = s / m as f64;
                    let mut ss = 0.0f64;
                    for b in 0..n {
                        ss += x
                            .plane(b, ch)
                            .iter()
                            .map(|&v| (f64::from(v) - mean) * (f64::from(v) - mean))
                            .sum::<f64>();
                    }
                    let var = ss / m as f64;
                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = BN_MOMENTUM * *rm + (1.0 - BN_MOMENTUM) * mean as f32;
                    let rv = &mut self.running_var.data_mut()[ch];
                    *rv = BN_MOMENTUM * *rv + (1.0 - BN_MOMENTUM) * var as f32;
                    (mean as f32, var as f32)
                }
                BnMode::Eval => (self.running_mean.data()[ch], self.running_var.data()[ch]),
            };
            let is = 1.0 / libm::sqrtf(var + BN_EPS);
            inv_std[ch] = is;
            let (g, bt) = (self.scale.value.data()[ch], self.shift.value.data()[ch]);
            for b in 0..n {
                let xp = x.plane(b, ch);
                let xh = xhat.plane_mut(b, ch);
                for (o, &v) in xh.iter_mut().zip(xp) {
                    *o = (v - mean) * is;
                }
                let xh = xhat.plane(b, ch);
                for (o, &v) in y.plane_mut(b, ch).iter_mut().zip(xh) {
                    *o = g * v + bt;
                }
            }
        }
        Ok((
            y,
            BnCache {
                mode,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn backward(&mut self, cache: &BnCache, grad_out: &Tensor4) -> Result<Tensor4> {
        cache
            .xhat
            .check_same_shape(grad_out, "batchnorm backward")?;
        let [n, c, h, w] = grad_out.shape();
        let m = (n * h * w) as f32;
        let mut grad_x = Tensor4::zeros(grad_out.shape());
        let mut dscale = vec![0.0f32; c];
        let mut dshift = vec![0.0f32; c];
        for ch in 0..c {
            let g = self.scale.value.data()[ch];
            let (mut sum_dy, mut sum_dy_xhat) = (0.0f32, 0.0f32);
            for b in 0..n {
                let go = grad_out.plane(b, ch);
                sum_dy += sum(go);
                sum_dy_xhat += dot(go, cache.xhat.plane(b, ch));
            }
            dscale[ch] = sum_dy_xhat;
            dshift[ch] = sum_dy;
            let is = cache.inv_std[ch];
            for b in 0..n {
                let go = grad_out.plane(b, ch);
                let xh = cache.xhat.plane(b, ch);
                let gx = grad_x.plane_mut(b, ch);
                match cache.mode {
                    BnMode::Train => {
                        let k = g * is / m;
                        for i in 0..gx.len() {
                            gx[i] = k * (m * go[i] - sum_dy - xh[i] * sum_dy_xhat);
                        }
                    }
                    BnMode::Eval => {
                        for i in 0..gx.len() {
                            gx[i] = g * is * go[i];
                        }
                    }
                }
            }
        }
        self.scale.accumulate(&dscale);
        self.shift.accumulate(&dshift);
        Ok(grad_x)
    }
}

pub fn relu_forward(x: &Tensor4) -> Tensor4 {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor4::from_vec(x.shape(), data).expect("same shape")
}

/// Backward of ReLU given its output.
pub fn relu_backward(y: &Tensor4, grad_out: &Tensor4) -> Tensor4 {
    let data = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor4::from_vec(y.shape(), data).expect("same shape")
}

#[inline]
pub fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + libm::expf(-v))
    } else {
        let e = libm::expf(v);
        e / (1.0 + e)
    }
}

pub fn sigmoid_forward(x: &Tensor4) -> Tensor4 {
    let data = x.data().iter().map(|&v| sigmoid(v)).collect();
    Tensor4::from_vec(x.shape(), data).expect("same shape")
}

/// Backward of the logistic sigmoid given its output.
pub fn sigmoid_backward(y: &Tensor4, grad_out: &Tensor4) -> Tensor4 {
    let data = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&s, &g)| g * s * (1.0 - s))
        .collect();
    Tensor4::from_vec(y.shape(), data).expect("same shape")
}

/// 2×2 average pooling. H and W must be even.
pub fn downsample2x_forward(x: &Tensor4) -> Result<Tensor4> {
    let [n, c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "downsample of odd size {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor4::zeros([n, c, oh, ow]);
    for b in 0..n {
        for ch in 0..c {
            let xp = x.plane(b, ch);
            let yp = y.plane_mut(b, ch);
            for oy in 0..oh {
                let r0 = &xp[2 * oy * w..2 * oy * w + w];
                let r1 = &xp[(2 * oy + 1) * w..(2 * oy + 1) * w + w];
                for ox in 0..ow {
                    yp[oy * ow + ox] =
                        0.25 * (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]);
                }
            }
        }
    }
    Ok(y)
}

pub fn downsample2x_backward(grad_out: &Tensor4) -> Tensor4 {
    let [n, c, oh, ow] = grad_out.shape();
    let (h, w) = (oh * 2, ow * 2);
    let mut gx = Tensor4::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            let go = grad_out.plane(b, ch);
            let gp = gx.plane_mut(b, ch);
            for y in 0..h {
                for x in 0..w {
                    gp[y * w + x] = 0.25 * go[(y / 2) * ow + x / 2];
                }
            }
        }
    }
    gx
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2x_forward(x: &Tensor4) -> Tensor4 {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (h * 2, w * 2);
    let mut y = Tensor4::zeros([n, c, oh, ow]);
    for b in 0..n {
        for ch in 0..c {
            let xp = x.plane(b, ch);
            let yp = y.plane_mut(b, ch);
            for oy in 0..oh {
                for ox in 0..ow {
                    yp[oy * ow + ox] = xp[(oy / 2) * w + ox / 2];
                }
            }
        }
    }
    y
}

pub fn upsample2x_backward(grad_out: &Tensor4) -> Tensor4 {
    let [n, c, oh, ow] = grad_out.shape();
    let (h, w) = (oh / 2, ow / 2);
    let mut gx = Tensor4::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            let go = grad_out.plane(b, ch);
            let gp = gx.plane_mut(b, ch);
            for oy in 0..oh {
                for ox in 0..ow {
                    gp[(oy / 2) * w + ox / 2] += go[oy * ow + ox];
                }
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_input_grad, check_param_grad, random_tensor};
    use crate::rng::SeedTree;

    fn naive_conv(x: &Tensor4, w: &Tensor4, b: &Tensor4) -> Tensor4 {
        let [n, cin, h, wd] = x.shape();
        let [cout, _, k, _] = w.shape();
        let r = (k / 2) as isize;
        let mut y = Tensor4::zeros([n, cout, h, wd]);
        for bn in 0..n {
            for oc in 0..cout {
                for yy in 0..h {
                    for xx in 0..wd {
                        let mut s = f64::from(b.data()[oc]);
                        for ic in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = yy as isize + ky as isize - r;
                                    let sx = xx as isize + kx as isize - r;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                        continue;
                                    }
                                    let xv = x.plane(bn, ic)[sy as usize * wd + sx as usize];
                                    let wv = w.data()[((oc * cin + ic) * k + ky) * k + kx];
                                    s += f64::from(xv) * f64::from(wv);
                                }
                            }
                        }
                        y.plane_mut(bn, oc)[yy * wd + xx] = s as f32;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_identity_and_zero_input() {
        let mut rng = SeedTree::new(1).stream("t");
        let x = random_tensor([1, 2, 4, 5], &mut rng);
        let mut w = Tensor4::zeros([2, 2, 1, 1]);
        w.data_mut()[0] = 1.0;
        w.data_mut()[3] = 1.0;
        let y = conv2d_forward(&x, &w, &Tensor4::zeros([1, 2, 1, 1])).unwrap();
        assert_eq!(y, x);

        let w3 = random_tensor([3, 2, 3, 3], &mut rng);
        let b = Tensor4::from_vec([1, 3, 1, 1], vec![0.5, -1.0, 2.0]).unwrap();
        let y = conv2d_forward(&Tensor4::zeros([1, 2, 4, 4]), &w3, &b).unwrap();
        for c in 0..3 {
            assert!(y.plane(0, c).iter().all(|&v| v == b.data()[c]));
        }
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut rng = SeedTree::new(2).stream("t");
        let x = random_tensor([1, 2, 5, 5], &mut rng);
        let w = random_tensor([3, 2, 3, 3], &mut rng);
        let b = random_tensor([1, 3, 1, 1], &mut rng);
        let y = conv2d_forward(&x, &w, &b).unwrap();
        let o = naive_conv(&x, &w, &b);
        for (a, e) in y.data().iter().zip(o.data()) {
            assert!((a - e).abs() < 1e-5, "{a} vs {e}");
        }
    }

    #[test]
    fn conv_channel_mismatch() {
        let x = Tensor4::zeros([1, 2, 4, 4]);
        let w = Tensor4::zeros([3, 4, 3, 3]);
        assert!(conv2d_forward(&x, &w, &Tensor4::zeros([1, 3, 1, 1])).is_err());
        let w5 = Tensor4::zeros([3, 2, 5, 5]);
        assert!(conv2d_forward(&x, &w5, &Tensor4::zeros([1, 3, 1, 1])).is_err());
    }

    #[test]
    fn conv_backward_zero_and_scalar_cases() {
        let mut rng = SeedTree::new(3).stream("t");
        let x = random_tensor([2, 2, 3, 3], &mut rng);
        let w = random_tensor([2, 2, 3, 3], &mut rng);
        let g = conv2d_backward(&x, &w, &Tensor4::zeros([2, 2, 3, 3])).unwrap();
        assert!(g.grad_x.data().iter().all(|&v| v == 0.0));
        assert!(g.grad_w.data().iter().all(|&v| v == 0.0));
        assert!(g.grad_b.data().iter().all(|&v| v == 0.0));

        let x = Tensor4::from_vec([1, 1, 1, 1], vec![0.7]).unwrap();
        let w = Tensor4::from_vec([1, 1, 1, 1], vec![-1.3]).unwrap();
        let go = Tensor4::from_vec([1, 1, 1, 1], vec![2.0]).unwrap();
        let g = conv2d_backward(&x, &w, &go).unwrap();
        assert!((g.grad_w.data()[0] - 1.4).abs() < 1e-6);
        assert!((g.grad_x.data()[0] + 2.6).abs() < 1e-6);
        assert_eq!(g.grad_b.data()[0], 2.0);
        assert!(conv2d_backward(&x, &w, &Tensor4::zeros([1, 2, 1, 1])).is_err());
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        for (seed, k) in [(10u64, 3usize), (11, 1), (12, 3)] {
            let mut rng = SeedTree::new(seed).stream("t");
            let x = random_tensor([2, 3, 6, 5], &mut rng);
            let mut conv = Conv2d::new(3, 4, k, &mut rng);
            let probe = random_tensor([2, 4, 6, 5], &mut rng);
            check_input_grad(
                &x,
                &probe,
                |t| conv2d_forward(t, &conv.weight.value, &conv.bias.value).unwrap(),
                |t, g| conv2d_backward(t, &conv.weight.value, g).unwrap().grad_x,
            );
            let xc = x.clone();
            check_param_grad(
                &mut conv,
                &probe,
                |c| &mut c.weight,
                |c| c.forward(&xc).unwrap(),
                |c, g| {
                    c.backward(&xc, g).unwrap();
                },
            );
            check_param_grad(
                &mut conv,
                &probe,
                |c| &mut c.bias,
                |c| c.forward(&xc).unwrap(),
                |c, g| {
                    c.backward(&xc, g).unwrap();
                },
            );
        }
    }

    #[test]
    fn batchnorm_identity_and_constant_channel() {
        let x = Tensor4::from_vec([1, 1, 1, 4], vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
        let mut bn = BatchNorm::new(1);
        let (y, _) = bn.forward(&x, BnMode::Train).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-5);
        }
        let mut bn = BatchNorm::new(2);
        bn.shift.value.data_mut()[1] = 0.25;
        let x = Tensor4::filled([2, 2, 3, 3], 4.0);
        let (y, _) = bn.forward(&x, BnMode::Train).unwrap();
        assert!(y.plane(1, 1).iter().all(|&v| v == 0.25));
        assert!(bn
            .forward(&Tensor4::zeros([0, 2, 3, 3]), BnMode::Train)
            .is_err());
    }

    #[test]
    fn batchnorm_output_statistics() {
        let mut rng = SeedTree::new(4).stream("t");
        let x = random_tensor([3, 2, 5, 5], &mut rng).map_values(|v| 3.0 * v + 1.0);
        let mut bn = BatchNorm::new(2);
        bn.scale.value.data_mut().copy_from_slice(&[1.5, 0.5]);
        bn.shift.value.data_mut().copy_from_slice(&[-0.2, 0.7]);
        let (y, _) = bn.forward(&x, BnMode::Train).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|b| y.plane(b, ch).iter().map(|&v| f64::from(v)))
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            let (g, s) = (
                f64::from(bn.scale.value.data()[ch]),
                f64::from(bn.shift.value.data()[ch]),
            );
            assert!((mean - s).abs() < 1e-4);
            assert!((var - g * g).abs() < 1e-4 * g * g.max(1.0) + 1e-4);
        }
        // Running statistics moved toward the batch statistics.
        assert!(bn.running_mean.data()[0] != 0.0);
    }

    #[test]
    fn batchnorm_gradients_match_finite_differences() {
        for mode in [BnMode::Train, BnMode::Eval] {
            let mut rng = SeedTree::new(5).stream("t");
            let x = random_tensor([2, 3, 4, 4], &mut rng);
            let mut bn = BatchNorm::new(3);
            bn.scale.value.data_mut().copy_from_slice(&[0.8, 1.3, -0.6]);
            bn.running_mean
                .data_mut()
                .copy_from_slice(&[0.1, -0.2, 0.3]);
            bn.running_var.data_mut().copy_from_slice(&[0.5, 1.5, 2.0]);
            let probe = random_tensor([2, 3, 4, 4], &mut rng);
            let frozen = bn.clone();
            check_input_grad(
                &x,
                &probe,
                |t| frozen.clone().forward(t, mode).unwrap().0,
                |t, g| {
                    let mut b = frozen.clone();
                    let (_, cache) = b.forward(t, mode).unwrap();
                    b.backward(&cache, g).unwrap()
                },
            );
            let xc = x.clone();
            for which in 0..2 {
                let mut b = frozen.clone();
                check_param_grad(
                    &mut b,
                    &probe,
                    |b| {
                        if which == 0 {
                            &mut b.scale
                        } else {
                            &mut b.shift
                        }
                    },
                    |b| {
                        let mut c = b.clone();
                        c.forward(&xc, mode).unwrap().0
                    },
                    |b, g| {
                        let mut c = b.clone();
                        let (_, cache) = c.forward(&xc, mode).unwrap();
                        b.backward(&cache, g).unwrap();
                    },
                );
            }
        }
    }

    #[test]
    fn elementwise_and_resample_gradients() {
        let mut rng = SeedTree::new(6).stream("t");
        let x = random_tensor([2, 2, 4, 6], &mut rng);
        let probe = random_tensor([2, 2, 4, 6], &mut rng);
        check_input_grad(&x, &probe, relu_forward, |t, g| {
            relu_backward(&relu_forward(t), g)
        });
        check_input_grad(&x, &probe, sigmoid_forward, |t, g| {
            sigmoid_backward(&sigmoid_forward(t), g)
        });
        let probe_d = random_tensor([2, 2, 2, 3], &mut rng);
        check_input_grad(
            &x,
            &probe_d,
            |t| downsample2x_forward(t).unwrap(),
            |_, g| downsample2x_backward(g),
        );
        let probe_u = random_tensor([2, 2, 8, 12], &mut rng);
        check_input_grad(&x, &probe_u, upsample2x_forward, |_, g| {
            upsample2x_backward(g)
        });
    }

    #[test]
    fn chain_validation() {
        let ok = [
            LayerSpec::new(LayerKind::Conv3x3, 3, 16),
            LayerSpec::new(LayerKind::BatchNorm, 16, 16),
            LayerSpec::new(LayerKind::Relu, 16, 16),
        ];
        assert!(check_chain(&ok).is_ok());
        let bad = [
            LayerSpec::new(LayerKind::Conv3x3, 3, 16),
            LayerSpec::new(LayerKind::BatchNorm, 8, 8),
        ];
        assert!(check_chain(&bad).is_err());
    }
}
