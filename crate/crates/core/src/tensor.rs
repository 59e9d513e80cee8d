//! Dense NCHW kernels shared by the ANN reference path and the unrolled
//! spiking path.
//!
//! Every kernel is a pure function of its inputs. Accumulation order is fixed:
//! convolution sums input-channel → kernel row → kernel column for each output
//! element, fully-connected sums over input features in index order, pooling
//! sums window rows then columns. Both execution paths therefore see the same
//! rounding behaviour for the same operands.

use crate::error::{Error, Result};
use crate::Real;

/// Dense 4-D tensor laid out batch → channel → row → column.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: [usize; 4],
    data: Vec<Real>,
}

impl Tensor {
    pub fn new(dims: [usize; 4], data: Vec<Real>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(Error::shape(format!(
                "tensor of dims {dims:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: [usize; 4], value: Real) -> Self {
        Self {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + h) * self.dims[3] + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> Real {
        self.data[self.offset(n, c, h, w)]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(Real) -> Real) -> Tensor {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "elementwise add of {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, factor: Real) -> Tensor {
        self.map(|v| v * factor)
    }

    /// Infinity norm.
    pub fn max_abs(&self) -> Real {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<Real> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "comparing {:?} with {:?}",
                self.dims, other.dims
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// One batch item as a slice.
    pub fn item(&self, n: usize) -> &[Real] {
        let len = self.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    /// Sums a non-empty stack of equally shaped tensors in timestep order.
    pub fn sum_stack(stack: &[Tensor]) -> Result<Tensor> {
        let (first, rest) = stack
            .split_first()
            .ok_or_else(|| Error::shape("cannot sum an empty stack"))?;
        let mut acc = first.clone();
        for t in rest {
            acc.add_assign(t)?;
        }
        Ok(acc)
    }
}

/// Convolution weights `(C_o, C_i, K_h, K_w)` with stride and zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub weights: Vec<Real>,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvParams {
    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel.0 * self.kernel.1
    }

    /// Output spatial size for an `h × w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        if sh == 0 || sw == 0 {
            return Err(Error::shape("convolution stride must be positive"));
        }
        if kh == 0 || kw == 0 {
            return Err(Error::shape("convolution kernel must be non-empty"));
        }
        let padded_h = h + 2 * ph;
        let padded_w = w + 2 * pw;
        if padded_h < kh || padded_w < kw {
            return Err(Error::shape(format!(
                "kernel {kh}x{kw} larger than padded input {padded_h}x{padded_w}"
            )));
        }
        if (padded_h - kh) % sh != 0 || (padded_w - kw) % sw != 0 {
            return Err(Error::shape(format!(
                "input {h}x{w} with kernel {kh}x{kw}, stride {sh}x{sw}, padding {ph}x{pw} \
                 does not give an integral output size"
            )));
        }
        Ok(((padded_h - kh) / sh + 1, (padded_w - kw) / sw + 1))
    }
}

/// Fully-connected weights, row-major `(C_o, C_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FcParams {
    pub weights: Vec<Real>,
    pub out_features: usize,
    pub in_features: usize,
}

/// Batch-norm statistics and affine parameters, one entry per output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<Real>,
    pub beta: Vec<Real>,
    pub mean: Vec<Real>,
    pub var: Vec<Real>,
    pub eps: Real,
}

/// Additive bias plus optional batch norm applied after a MatMul.
///
/// Evaluates `γ·(y + s·b − s·μ)/√(σ²+ε) + s·β` per output channel, where `s`
/// is the constant scale: 1 for a dense pass, `1/L` for each of `L` unrolled
/// timesteps. Without batch norm this reduces to `y + s·b`.
#[derive(Clone, Debug, PartialEq)]
pub struct BnAffine {
    pub bias: Vec<Real>,
    pub norm: Option<BatchNorm>,
}

impl BnAffine {
    pub fn identity(channels: usize) -> Self {
        Self {
            bias: vec![0.0; channels],
            norm: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.bias.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.bias.len();
        if let Some(bn) = &self.norm {
            if !(bn.eps > 0.0) {
                return Err(Error::shape(format!(
                    "batch-norm epsilon must be positive, got {}",
                    bn.eps
                )));
            }
            for (name, v) in [
                ("gamma", &bn.gamma),
                ("beta", &bn.beta),
                ("mean", &bn.mean),
                ("var", &bn.var),
            ] {
                if v.len() != c {
                    return Err(Error::shape(format!(
                        "batch-norm {name} has {} entries, expected {c}",
                        v.len()
                    )));
                }
            }
            if let Some(v) = bn.var.iter().find(|v| !(**v >= 0.0)) {
                return Err(Error::shape(format!(
                    "batch-norm variance must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Copy with the additive constants `b`, `μ`, `β` multiplied by `factor`.
    pub fn scaled(&self, factor: Real) -> Self {
        Self {
            bias: self.bias.iter().map(|b| b * factor).collect(),
            norm: self.norm.as_ref().map(|bn| BatchNorm {
                gamma: bn.gamma.clone(),
                beta: bn.beta.iter().map(|b| b * factor).collect(),
                mean: bn.mean.iter().map(|m| m * factor).collect(),
                var: bn.var.clone(),
                eps: bn.eps,
            }),
        }
    }
}

/// Cross-correlation with zero padding.
pub fn conv2d(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let [n, c, h, w] = x.dims();
    if c != p.in_channels {
        return Err(Error::shape(format!(
            "convolution expects {} input channels, got {c}",
            p.in_channels
        )));
    }
    if p.weights.len() != p.weight_len() {
        return Err(Error::shape(format!(
            "convolution weights have {} elements, expected {}",
            p.weights.len(),
            p.weight_len()
        )));
    }
    let (ho, wo) = p.output_hw(h, w)?;
    let (kh, kw) = p.kernel;
    let (sh, sw) = p.stride;
    let (ph, pw) = p.padding;
    let co = p.out_channels;
    let mut out = Tensor::zeros([n, co, ho, wo]);
    let xd = x.data();
    for b in 0..n {
        for oc in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc: Real = 0.0;
                    for ic in 0..c {
                        let wbase = (oc * c + ic) * kh * kw;
                        let xbase = (b * c + ic) * h * w;
                        for ky in 0..kh {
                            let iy = (oy * sh + ky) as isize - ph as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = xbase + iy as usize * w;
                            for kx in 0..kw {
                                let ix = (ox * sw + kx) as isize - pw as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += p.weights[wbase + ky * kw + kx] * xd[row + ix as usize];
                            }
                        }
                    }
                    let o = out.offset(b, oc, oy, ox);
                    out.data_mut()[o] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// `y = W·x` per batch item; the input is flattened over `C·H·W` and the
/// output has shape `(N, C_o, 1, 1)`.
pub fn fully_connected(x: &Tensor, p: &FcParams) -> Result<Tensor> {
    let n = x.batch();
    let ci = x.item_len();
    if ci != p.in_features {
        return Err(Error::shape(format!(
            "fully-connected layer expects {} input features, got {ci}",
            p.in_features
        )));
    }
    if p.weights.len() != p.out_features * p.in_features {
        return Err(Error::shape(format!(
            "fully-connected weights have {} elements, expected {}",
            p.weights.len(),
            p.out_features * p.in_features
        )));
    }
    let mut out = Vec::with_capacity(n * p.out_features);
    for b in 0..n {
        let xs = x.item(b);
        for row in p.weights.chunks_exact(ci) {
            let mut acc: Real = 0.0;
            for (w, v) in row.iter().zip(xs) {
                acc += w * v;
            }
            out.push(acc);
        }
    }
    Tensor::new([n, p.out_features, 1, 1], out)
}

/// Bias and batch-norm affine with the additive constants scaled by `l_scale`.
pub fn fused_bn_affine(y: &Tensor, a: &BnAffine, l_scale: Real) -> Result<Tensor> {
    a.validate()?;
    let [n, c, h, w] = y.dims();
    if a.channels() != c {
        return Err(Error::shape(format!(
            "affine has {} channels, tensor has {c}",
            a.channels()
        )));
    }
    if !(l_scale > 0.0 && l_scale <= 1.0) {
        return Err(Error::shape(format!(
            "constant scale must lie in (0, 1], got {l_scale}"
        )));
    }
    let plane = h * w;
    let mut out = y.clone();
    let data = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            let slice = &mut data[base..base + plane];
            let bias = l_scale * a.bias[ch];
            match &a.norm {
                None => slice.iter_mut().for_each(|v| *v += bias),
                Some(bn) => {
                    let mu = l_scale * bn.mean[ch];
                    let beta = l_scale * bn.beta[ch];
                    let denom = (bn.var[ch] + bn.eps).sqrt();
                    let gamma = bn.gamma[ch];
                    slice
                        .iter_mut()
                        .for_each(|v| *v = gamma * (*v + bias - mu) / denom + beta);
                }
            }
        }
    }
    Ok(out)
}

fn pool_dims(x: &Tensor, k: usize) -> Result<(usize, usize)> {
    let [_, _, h, w] = x.dims();
    if k == 0 {
        return Err(Error::shape("pooling window must be positive"));
    }
    if h % k != 0 || w % k != 0 {
        return Err(Error::shape(format!(
            "pooling window {k} does not divide input {h}x{w}"
        )));
    }
    Ok((h / k, w / k))
}

/// Non-overlapping `k × k` mean pooling.
pub fn avg_pool2d(x: &Tensor, k: usize) -> Result<Tensor> {
    let (ho, wo) = pool_dims(x, k)?;
    let [n, c, _, _] = x.dims();
    let area = (k * k) as Real;
    let mut out = Tensor::zeros([n, c, ho, wo]);
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc: Real = 0.0;
                    for ky in 0..k {
                        for kx in 0..k {
                            acc += x.at(b, ch, oy * k + ky, ox * k + kx);
                        }
                    }
                    let o = out.offset(b, ch, oy, ox);
                    out.data_mut()[o] = acc / area;
                }
            }
        }
    }
    Ok(out)
}

/// Non-overlapping `k × k` max pooling. ANN path only; the converter rejects it.
pub fn max_pool2d(x: &Tensor, k: usize) -> Result<Tensor> {
    let (ho, wo) = pool_dims(x, k)?;
    let [n, c, _, _] = x.dims();
    let mut out = Tensor::zeros([n, c, ho, wo]);
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut m = Real::NEG_INFINITY;
                    for ky in 0..k {
                        for kx in 0..k {
                            m = m.max(x.at(b, ch, oy * k + ky, ox * k + kx));
                        }
                    }
                    let o = out.offset(b, ch, oy, ox);
                    out.data_mut()[o] = m;
                }
            }
        }
    }
    Ok(out)
}

/// 1 where `x ≥ theta_star`, else 0.
pub fn heaviside(x: &Tensor, theta_star: Real) -> Tensor {
    x.map(|v| if v >= theta_star { 1.0 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: [usize; 4], data: &[Real]) -> Tensor {
        Tensor::new(dims, data.to_vec()).unwrap()
    }

    fn conv(weights: &[Real], co: usize, ci: usize, k: (usize, usize)) -> ConvParams {
        ConvParams {
            weights: weights.to_vec(),
            out_channels: co,
            in_channels: ci,
            kernel: k,
            stride: (1, 1),
            padding: (0, 0),
        }
    }

    #[test]
    fn tensor_rejects_wrong_length() {
        assert!(Tensor::new([1, 2, 2, 2], vec![0.0; 7]).is_err());
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::filled([1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &conv(&[1.0], 1, 1, (1, 1))).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_diagonal_kernel_dot_product() {
        let x = t([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let y = conv2d(&x, &conv(&[1.0, 0.0, 0.0, 1.0], 1, 1, (2, 2))).unwrap();
        assert_eq!(y.dims(), [1, 1, 1, 1]);
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn conv_zero_input() {
        let x = Tensor::zeros([2, 2, 4, 4]);
        let p = conv(&[0.3; 2 * 2 * 9], 2, 2, (3, 3));
        let y = conv2d(&x, &p).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_padding_and_stride() {
        // 3x3 ones, 3x3 ones kernel, pad 1, stride 2 -> corners see 4 ones, 2x2 output
        let x = Tensor::filled([1, 1, 3, 3], 1.0);
        let mut p = conv(&[1.0; 9], 1, 1, (3, 3));
        p.padding = (1, 1);
        p.stride = (2, 2);
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.dims(), [1, 1, 2, 2]);
        assert_eq!(y.data(), &[4.0, 4.0, 4.0, 4.0]);
    }

    #[test]
    fn conv_channel_mismatch() {
        let x = Tensor::zeros([1, 3, 3, 3]);
        let err = conv2d(&x, &conv(&[1.0; 2], 1, 2, (1, 1))).unwrap_err();
        assert!(err.to_string().contains("input channels"));
        let err = err.in_layer("conv1");
        assert!(err.to_string().contains("conv1"));
    }

    #[test]
    fn conv_non_integral_output() {
        let x = Tensor::zeros([1, 1, 4, 4]);
        let mut p = conv(&[1.0; 9], 1, 1, (3, 3));
        p.stride = (2, 2);
        assert!(conv2d(&x, &p).is_err());
    }

    #[test]
    fn fc_identity_and_hand_product() {
        let x = t([1, 2, 1, 1], &[2.0, 3.0]);
        let eye = FcParams {
            weights: vec![1.0, 0.0, 0.0, 1.0],
            out_features: 2,
            in_features: 2,
        };
        assert_eq!(fully_connected(&x, &eye).unwrap().data(), &[2.0, 3.0]);
        let w = FcParams {
            weights: vec![1.0, 1.0, 1.0, -1.0],
            out_features: 2,
            in_features: 2,
        };
        assert_eq!(fully_connected(&x, &w).unwrap().data(), &[5.0, -1.0]);
        let zero = FcParams {
            weights: vec![0.0; 4],
            out_features: 2,
            in_features: 2,
        };
        assert_eq!(fully_connected(&x, &zero).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn fc_width_mismatch() {
        let x = t([1, 3, 1, 1], &[1.0, 2.0, 3.0]);
        let w = FcParams {
            weights: vec![1.0; 4],
            out_features: 2,
            in_features: 2,
        };
        assert!(fully_connected(&x, &w).is_err());
    }

    fn bn1(gamma: Real, beta: Real, mean: Real, var: Real, eps: Real) -> BnAffine {
        BnAffine {
            bias: vec![0.0],
            norm: Some(BatchNorm {
                gamma: vec![gamma],
                beta: vec![beta],
                mean: vec![mean],
                var: vec![var],
                eps,
            }),
        }
    }

    #[test]
    fn affine_identity() {
        let eps = 1e-5;
        let y = t([1, 1, 1, 3], &[-1.0, 0.5, 2.0]);
        let out = fused_bn_affine(&y, &bn1(1.0, 0.0, 0.0, 1.0 - eps, eps), 1.0).unwrap();
        assert!(out.max_abs_diff(&y).unwrap() < 1e-6);
    }

    #[test]
    fn affine_scalar_hand_values() {
        let eps = 1e-5;
        let a = bn1(2.0, 1.0, 3.0, 4.0 - eps, eps);
        let y = t([1, 1, 1, 1], &[5.0]);
        let full = fused_bn_affine(&y, &a, 1.0).unwrap();
        assert!((full.data()[0] - 3.0).abs() < 1e-5);
        let quarter = fused_bn_affine(&y, &a, 0.25).unwrap();
        assert!((quarter.data()[0] - 4.5).abs() < 1e-5);
    }

    #[test]
    fn affine_rejects_bad_eps() {
        let y = t([1, 1, 1, 1], &[5.0]);
        assert!(fused_bn_affine(&y, &bn1(1.0, 0.0, 0.0, 1.0, 0.0), 1.0).is_err());
        assert!(fused_bn_affine(&y, &bn1(1.0, 0.0, 0.0, -1.0, 1e-5), 1.0).is_err());
    }

    #[test]
    fn affine_scaled_matches_runtime_scale_for_powers_of_two() {
        let a = BnAffine {
            bias: vec![0.7, -0.3],
            norm: Some(BatchNorm {
                gamma: vec![1.3, 0.8],
                beta: vec![0.1, -0.4],
                mean: vec![0.2, 0.05],
                var: vec![0.9, 1.1],
                eps: 1e-5,
            }),
        };
        let y = t([1, 2, 1, 2], &[0.5, -0.25, 1.5, 2.0]);
        for l in [1.0, 2.0, 4.0, 8.0] {
            let s = 1.0 / l;
            let runtime = fused_bn_affine(&y, &a, s).unwrap();
            let stored = fused_bn_affine(&y, &a.scaled(s), 1.0).unwrap();
            assert_eq!(runtime, stored);
        }
    }

    #[test]
    fn avg_pool_values() {
        let x = t([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(avg_pool2d(&x, 2).unwrap().data(), &[2.5]);
        let c = Tensor::filled([1, 2, 4, 4], 0.75);
        assert_eq!(avg_pool2d(&c, 2).unwrap(), Tensor::filled([1, 2, 2, 2], 0.75));
        let z = Tensor::zeros([1, 1, 4, 4]);
        assert_eq!(avg_pool2d(&z, 2).unwrap(), Tensor::zeros([1, 1, 2, 2]));
        assert!(avg_pool2d(&Tensor::zeros([1, 1, 3, 4]), 2).is_err());
    }

    #[test]
    fn max_pool_values() {
        let x = t([1, 1, 2, 2], &[1.0, -2.0, 3.0, 0.0]);
        assert_eq!(max_pool2d(&x, 2).unwrap().data(), &[3.0]);
    }

    #[test]
    fn heaviside_inclusive_threshold() {
        let x = t([1, 1, 1, 4], &[0.25, 0.0, -0.1, 0.3]);
        assert_eq!(heaviside(&x, 0.25).data(), &[1.0, 0.0, 0.0, 1.0]);
    }
}
