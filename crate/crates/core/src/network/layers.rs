//! Linear and convolution layers, activations, pooling and the loss.
//!
//! Activations are batch-major: `B × N` for dense features and
//! `B × C × H × W` for feature maps. Backward passes are written by hand.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::spectral::orthogonal_init;
use crate::tensor::Tensor;

/// Fully connected layer `z = W·x + b` with `W ∈ R^{out × in}`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Clone, Debug)]
pub struct LinearGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Tensor,
}

impl LinearLayer {
    pub fn new(w: Tensor, b: Tensor) -> Result<Self> {
        if w.rank() != 2 || b.shape() != [w.rows()] {
            return Err(Error::shape("linear layer", w.shape(), b.shape()));
        }
        Ok(LinearLayer { w, b })
    }

    /// Orthogonal weights, zero bias.
    pub fn orthogonal(rng: &mut Rng, inputs: usize, outputs: usize) -> Self {
        LinearLayer {
            w: orthogonal_init(rng, outputs, inputs),
            b: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.cols()
    }

    pub fn outputs(&self) -> usize {
        self.w.rows()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 || x.cols() != self.inputs() {
            return Err(Error::shape("linear forward", x.shape(), self.w.shape()));
        }
        let mut z = x.matmul(&self.w.t())?;
        let n = self.outputs();
        let b = self.b.data();
        for row in z.data_mut().chunks_mut(n) {
            for (v, bi) in row.iter_mut().zip(b) {
                *v += bi;
            }
        }
        Ok(z)
    }

    pub fn backward(&self, x: &Tensor, dz: &Tensor) -> Result<LinearGrads> {
        if dz.rank() != 2 || dz.cols() != self.outputs() || dz.rows() != x.rows() {
            return Err(Error::shape("linear backward", dz.shape(), x.shape()));
        }
        let dx = dz.matmul(&self.w)?;
        let dw = dz.t().matmul(x)?;
        let mut db = vec![0.0; self.outputs()];
        for row in dz.data().chunks(self.outputs()) {
            for (acc, v) in db.iter_mut().zip(row) {
                *acc += v;
            }
        }
        Ok(LinearGrads {
            dx,
            dw,
            db: Tensor::vector(db),
        })
    }
}

/// 2-D cross-correlation with a `C_out × C_in × k × k` kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub dx: Tensor,
    pub dkernel: Tensor,
    pub dbias: Tensor,
}

impl ConvLayer {
    pub fn new(kernel: Tensor, bias: Tensor, stride: usize, pad: usize) -> Result<Self> {
        let s = kernel.shape();
        if s.len() != 4 || s[2] != s[3] || !matches!(s[2], 1 | 3) {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: "kernel must be C_out × C_in × k × k with k ∈ {1, 3}".into(),
            });
        }
        if !matches!(stride, 1 | 2) {
            return Err(Error::Input(format!("stride must be 1 or 2, got {stride}")));
        }
        if bias.shape() != [s[0]] {
            return Err(Error::shape("conv bias", bias.shape(), &s[..1]));
        }
        Ok(ConvLayer {
            kernel,
            bias,
            stride,
            pad,
        })
    }

    /// Orthogonal kernel in its `C_out × (C_in·k·k)` view, zero bias.
    pub fn orthogonal(
        rng: &mut Rng,
        in_channels: usize,
        out_channels: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let w = orthogonal_init(rng, out_channels, in_channels * k * k);
        let kernel = w.into_shape(&[out_channels, in_channels, k, k])?;
        Self::new(kernel, Tensor::zeros(&[out_channels]), stride, pad)
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn ksize(&self) -> usize {
        self.kernel.shape()[2]
    }

    /// The kernel as the `C_out × (C_in·k·k)` matrix that multiplies im2col
    /// patches. Row-major storage makes this a plain reshape.
    pub fn kernel_matrix(&self) -> Tensor {
        let rows = self.out_channels();
        self.kernel
            .reshape(&[rows, self.kernel.len() / rows])
            .expect("kernel reshape")
    }

    pub fn set_kernel_matrix(&mut self, m: &Tensor) -> Result<()> {
        self.kernel = m.reshape(self.kernel.shape())?;
        Ok(())
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.ksize();
        if h + 2 * self.pad < k || w + 2 * self.pad < k {
            return Err(Error::Input(format!(
                "input {h}×{w} too small for kernel {k} with pad {}",
                self.pad
            )));
        }
        Ok((
            (h + 2 * self.pad - k) / self.stride + 1,
            (w + 2 * self.pad - k) / self.stride + 1,
        ))
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize, usize, usize)> {
        match x.shape() {
            &[b, c, h, w] if c == self.in_channels() => Ok((b, c, h, w)),
            s => Err(Error::shape("conv input", s, self.kernel.shape())),
        }
    }

    /// Patch matrix of shape `(C_in·k·k) × (B·H_out·W_out)`.
    fn im2col(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = self.check_input(x)?;
        let (ho, wo) = self.output_hw(h, w)?;
        let k = self.ksize();
        let ncols = b * ho * wo;
        let mut cols = vec![0.0; c * k * k * ncols];
        let xd = x.data();
        for ci in 0..c {
            for kh in 0..k {
                for kw in 0..k {
                    let row = (ci * k + kh) * k + kw;
                    let out = &mut cols[row * ncols..(row + 1) * ncols];
                    for bi in 0..b {
                        let plane = &xd[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                        for oh in 0..ho {
                            let ih = (oh * self.stride + kh) as isize - self.pad as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            for ow in 0..wo {
                                let iw = (ow * self.stride + kw) as isize - self.pad as isize;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                out[(bi * ho + oh) * wo + ow] = plane[ih as usize * w + iw as usize];
                            }
                        }
                    }
                }
            }
        }
        Tensor::matrix(c * k * k, ncols, cols)
    }

    /// Scatter-add a patch-matrix gradient back onto the input layout.
    fn col2im(&self, dcols: &Tensor, shape: (usize, usize, usize, usize)) -> Result<Tensor> {
        let (b, c, h, w) = shape;
        let (ho, wo) = self.output_hw(h, w)?;
        let k = self.ksize();
        let ncols = b * ho * wo;
        let mut dx = vec![0.0; b * c * h * w];
        let dd = dcols.data();
        for ci in 0..c {
            for kh in 0..k {
                for kw in 0..k {
                    let row = (ci * k + kh) * k + kw;
                    let src = &dd[row * ncols..(row + 1) * ncols];
                    for bi in 0..b {
                        let base = (bi * c + ci) * h * w;
                        for oh in 0..ho {
                            let ih = (oh * self.stride + kh) as isize - self.pad as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            for ow in 0..wo {
                                let iw = (ow * self.stride + kw) as isize - self.pad as isize;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                dx[base + ih as usize * w + iw as usize] += src[(bi * ho + oh) * wo + ow];
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(&[b, c, h, w], dx)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, _, h, w) = self.check_input(x)?;
        let (ho, wo) = self.output_hw(h, w)?;
        let cols = self.im2col(x)?;
        let ymat = self.kernel_matrix().matmul(&cols)?;
        let co = self.out_channels();
        let plane = ho * wo;
        let mut y = vec![0.0; b * co * plane];
        let yd = ymat.data();
        let bias = self.bias.data();
        for o in 0..co {
            for bi in 0..b {
                let src = &yd[o * b * plane + bi * plane..o * b * plane + (bi + 1) * plane];
                let dst = &mut y[(bi * co + o) * plane..(bi * co + o + 1) * plane];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + bias[o];
                }
            }
        }
        Tensor::new(&[b, co, ho, wo], y)
    }

    pub fn backward(&self, x: &Tensor, dy: &Tensor) -> Result<ConvGrads> {
        let dims = self.check_input(x)?;
        let (b, _, h, w) = dims;
        let (ho, wo) = self.output_hw(h, w)?;
        let co = self.out_channels();
        if dy.shape() != [b, co, ho, wo] {
            return Err(Error::shape("conv backward", dy.shape(), &[b, co, ho, wo]));
        }
        let plane = ho * wo;
        let mut dmat = vec![0.0; co * b * plane];
        let mut db = vec![0.0; co];
        let dyd = dy.data();
        for o in 0..co {
            for bi in 0..b {
                let src = &dyd[(bi * co + o) * plane..(bi * co + o + 1) * plane];
                dmat[o * b * plane + bi * plane..o * b * plane + (bi + 1) * plane].copy_from_slice(src);
                db[o] += src.iter().sum::<f64>();
            }
        }
        let dmat = Tensor::matrix(co, b * plane, dmat)?;
        let cols = self.im2col(x)?;
        let dk = dmat.matmul(&cols.t())?;
        let dcols = self.kernel_matrix().t().matmul(&dmat)?;
        Ok(ConvGrads {
            dx: self.col2im(&dcols, dims)?,
            dkernel: dk.into_shape(self.kernel.shape())?,
            dbias: Tensor::vector(db),
        })
    }
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient through `max(0, x)`; zero at the kink.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    if x.shape() != dy.shape() {
        return Err(Error::shape("relu backward", x.shape(), dy.shape()));
    }
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&a, &g)| if a > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape(), data)
}

/// Global average pool `B × C × H × W → B × C`.
pub fn gap_forward(x: &Tensor) -> Result<Tensor> {
    let &[b, c, h, w] = x.shape() else {
        return Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: "global average pooling expects B × C × H × W".into(),
        });
    };
    let plane = h * w;
    let data = x
        .data()
        .chunks(plane)
        .map(|p| p.iter().sum::<f64>() / plane as f64)
        .collect();
    Tensor::new(&[b, c], data)
}

pub fn gap_backward(input_shape: &[usize], dy: &Tensor) -> Result<Tensor> {
    let &[b, c, h, w] = input_shape else {
        return Err(Error::InvalidShape {
            shape: input_shape.to_vec(),
            reason: "global average pooling expects B × C × H × W".into(),
        });
    };
    if dy.shape() != [b, c] {
        return Err(Error::shape("gap backward", dy.shape(), &[b, c]));
    }
    let plane = h * w;
    let mut dx = Vec::with_capacity(b * c * plane);
    for &g in dy.data() {
        dx.extend(std::iter::repeat_n(g / plane as f64, plane));
    }
    Tensor::new(input_shape, dx)
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. logits.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if logits.rank() != 2 || logits.rows() != labels.len() {
        return Err(Error::shape("softmax_xent", logits.shape(), &[labels.len()]));
    }
    let (b, c) = (logits.rows(), logits.cols());
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Input(format!("label {bad} out of range for {c} classes")));
    }
    let mut grad = vec![0.0; b * c];
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let log_norm = max + sum.ln();
        loss += log_norm - row[label];
        for (j, &z) in row.iter().enumerate() {
            let p = (z - log_norm).exp();
            grad[i * c + j] = (p - if j == label { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok((loss / b as f64, Tensor::matrix(b, c, grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{central_difference, relative_error};

    #[test]
    fn identity_linear() {
        let layer = LinearLayer::new(Tensor::eye(3), Tensor::zeros(&[3])).unwrap();
        let x = Tensor::from_rows(&[[1.0, -2.0, 3.0], [0.5, 0.0, 4.0]]);
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = Rng::seed_from(0);
        let layer = LinearLayer::orthogonal(&mut rng, 4, 3);
        let x = Tensor::gaussian(&mut rng, &[2, 4]);
        let g = layer.backward(&x, &Tensor::zeros(&[2, 3])).unwrap();
        assert!(g
            .dx
            .data()
            .iter()
            .chain(g.dw.data())
            .chain(g.db.data())
            .all(|&v| v == 0.0));
    }

    #[test]
    fn linear_weight_gradient_matches_fd() {
        let mut rng = Rng::seed_from(3);
        let mut layer =
            LinearLayer::new(Tensor::gaussian(&mut rng, &[3, 4]), Tensor::gaussian(&mut rng, &[3])).unwrap();
        let x = Tensor::gaussian(&mut rng, &[5, 4]);
        let r = Tensor::gaussian(&mut rng, &[5, 3]);
        let g = layer.backward(&x, &r).unwrap();
        let w0 = layer.w.clone();
        let fd = central_difference(&w0, 1e-5, |w| {
            layer.w = w.clone();
            layer.forward(&x).unwrap().hadamard(&r).unwrap().sum()
        });
        assert!(relative_error(&g.dw, &fd, 1e-12) <= 1e-5);
    }

    #[test]
    fn one_by_one_conv_is_pixelwise_linear() {
        let mut rng = Rng::seed_from(5);
        let conv = ConvLayer::new(
            Tensor::gaussian(&mut rng, &[3, 2, 1, 1]),
            Tensor::gaussian(&mut rng, &[3]),
            1,
            0,
        )
        .unwrap();
        let lin = LinearLayer::new(conv.kernel_matrix(), conv.bias.clone()).unwrap();
        let x = Tensor::gaussian(&mut rng, &[2, 2, 3, 3]);
        let y = conv.forward(&x).unwrap();
        for b in 0..2 {
            for p in 0..9 {
                let pix = Tensor::matrix(1, 2, (0..2).map(|c| x.data()[(b * 2 + c) * 9 + p]).collect()).unwrap();
                let z = lin.forward(&pix).unwrap();
                for o in 0..3 {
                    assert!((z.data()[o] - y.data()[(b * 3 + o) * 9 + p]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn centre_tap_kernel_is_identity() {
        let mut k = Tensor::zeros(&[2, 2, 3, 3]);
        k.data_mut()[4] = 1.0;
        k.data_mut()[(2 + 1) * 9 + 4] = 1.0;
        let conv = ConvLayer::new(k, Tensor::zeros(&[2]), 1, 1).unwrap();
        let x = Tensor::gaussian(&mut Rng::seed_from(1), &[2, 2, 5, 4]);
        assert_eq!(conv.forward(&x).unwrap(), x);
    }

    #[test]
    fn strided_output_size() {
        let conv = ConvLayer::orthogonal(&mut Rng::seed_from(0), 2, 4, 3, 2, 1).unwrap();
        assert_eq!(conv.output_hw(8, 8).unwrap(), (4, 4));
        let y = conv.forward(&Tensor::zeros(&[1, 2, 8, 8])).unwrap();
        assert_eq!(y.shape(), &[1, 4, 4, 4]);
        assert!(conv.forward(&Tensor::zeros(&[1, 3, 8, 8])).is_err());
    }

    #[test]
    fn relu_values() {
        let y = relu_forward(&Tensor::vector(vec![-1.0, 0.0, 2.0]));
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let (loss, _) = softmax_xent(&Tensor::zeros(&[3, 7]), &[0, 3, 6]).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-15);
        assert!(softmax_xent(&Tensor::zeros(&[1, 3]), &[3]).is_err());
    }

    #[test]
    fn gap_round_trip_shapes() {
        let x = Tensor::gaussian(&mut Rng::seed_from(2), &[2, 3, 2, 2]);
        let y = gap_forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert!((y.data()[0] - x.data()[..4].iter().sum::<f64>() / 4.0).abs() < 1e-15);
        let dx = gap_backward(x.shape(), &Tensor::full(&[2, 3], 4.0)).unwrap();
        assert!(dx.data().iter().all(|&v| v == 1.0));
    }
}
