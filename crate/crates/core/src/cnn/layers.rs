//! Layer kernels: forward passes and their hand-derived gradients.

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Stride-1, same-padded 2-D cross-correlation with square odd kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    /// `[out][in][ky][kx]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(out_channels: usize, in_channels: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "same padding needs an odd kernel");
        Conv2d {
            out_channels,
            in_channels,
            kernel,
            weights: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    /// Uniform in `+-sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let area = self.kernel * self.kernel;
        let limit = (6.0 / ((self.in_channels + self.out_channels) * area) as f64).sqrt();
        self.weights
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-limit..=limit));
        self.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    #[inline]
    fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((o * self.in_channels + i) * self.kernel + ky) * self.kernel + kx]
    }

    /// Output rows/cols touched by kernel offset `k` along an axis of length
    /// `n`, and the matching input shift.
    #[inline]
    fn span(&self, k: usize, n: usize) -> (usize, usize, isize) {
        let pad = self.kernel / 2;
        let shift = k as isize - pad as isize;
        let lo = (-shift).max(0) as usize;
        let hi = (n as isize - shift).min(n as isize).max(0) as usize;
        (lo, hi, shift)
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        if input.channels != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels, input.channels
            )));
        }
        let (h, w) = (input.height, input.width);
        let mut out = Tensor::zeros(self.out_channels, h, w);
        for o in 0..self.out_channels {
            let b = self.bias[o];
            let plane = out.plane_mut(o);
            plane.iter_mut().for_each(|v| *v = b);
            for i in 0..self.in_channels {
                let src = input.plane(i);
                for ky in 0..self.kernel {
                    let (y0, y1, sy) = self.span(ky, h);
                    for kx in 0..self.kernel {
                        let (x0, x1, sx) = self.span(kx, w);
                        let wt = self.w(o, i, ky, kx);
                        if wt == 0.0 {
                            continue;
                        }
                        for y in y0..y1 {
                            let yy = (y as isize + sy) as usize;
                            let row_out = &mut plane[y * w + x0..y * w + x1];
                            let start = (yy * w) as isize + x0 as isize + sx;
                            let row_in = &src[start as usize..start as usize + (x1 - x0)];
                            for (d, s) in row_out.iter_mut().zip(row_in) {
                                *d += wt * s;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Accumulate parameter gradients; returns the input gradient when asked.
    pub fn backward(
        &self,
        input: &Tensor,
        grad_out: &Tensor,
        grad: &mut Conv2d,
        want_input_grad: bool,
    ) -> Option<Tensor> {
        let (h, w) = (input.height, input.width);
        let mut grad_in = want_input_grad.then(|| Tensor::zeros(self.in_channels, h, w));
        let k = self.kernel;
        for o in 0..self.out_channels {
            let g = grad_out.plane(o);
            grad.bias[o] += g.iter().sum::<f64>();
            for i in 0..self.in_channels {
                let src = input.plane(i);
                for ky in 0..k {
                    let (y0, y1, sy) = self.span(ky, h);
                    for kx in 0..k {
                        let (x0, x1, sx) = self.span(kx, w);
                        let widx = ((o * self.in_channels + i) * k + ky) * k + kx;
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let yy = (y as isize + sy) as usize;
                            let start = ((yy * w) as isize + x0 as isize + sx) as usize;
                            let row_in = &src[start..start + (x1 - x0)];
                            let row_g = &g[y * w + x0..y * w + x1];
                            acc += row_in.iter().zip(row_g).map(|(a, b)| a * b).sum::<f64>();
                        }
                        grad.weights[widx] += acc;
                        if let Some(gi) = grad_in.as_mut() {
                            let wt = self.weights[widx];
                            let dst = gi.plane_mut(i);
                            for y in y0..y1 {
                                let yy = (y as isize + sy) as usize;
                                let start = ((yy * w) as isize + x0 as isize + sx) as usize;
                                let row_g = &g[y * w + x0..y * w + x1];
                                for (d, s) in dst[start..start + (x1 - x0)].iter_mut().zip(row_g) {
                                    *d += wt * s;
                                }
                            }
                        }
                    }
                }
            }
        }
        grad_in
    }
}

pub fn relu(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    out.data.iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Gradient through ReLU given the pre-activation.
pub fn relu_backward(pre: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, &p) in g.data.iter_mut().zip(&pre.data) {
        if p <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

/// 2x2 max pooling, stride 2; odd trailing rows/cols are dropped. Returns the
/// pooled tensor and, per output element, the flat input index of its max.
pub fn maxpool2(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    if input.height < 2 || input.width < 2 {
        return Err(Error::Shape(format!(
            "max pooling needs at least 2x2, got {}x{}",
            input.height, input.width
        )));
    }
    let (oh, ow) = (input.height / 2, input.width / 2);
    let mut out = Tensor::zeros(input.channels, oh, ow);
    let mut argmax = vec![0usize; out.len()];
    for c in 0..input.channels {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = (c * input.height + 2 * y + dy) * input.width + 2 * x + dx;
                        if input.data[idx] > best {
                            best = input.data[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (c * oh + y) * ow + x;
                out.data[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2_backward(
    input_shape: (usize, usize, usize),
    argmax: &[usize],
    grad_out: &Tensor,
) -> Tensor {
    let (c, h, w) = input_shape;
    let mut g = Tensor::zeros(c, h, w);
    for (o, &idx) in argmax.iter().enumerate() {
        g.data[idx] += grad_out.data[o];
    }
    g
}

/// Fully connected layer with a single output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Dense {
    pub fn zeros(inputs: usize) -> Self {
        Dense {
            weights: vec![0.0; inputs],
            bias: 0.0,
        }
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let limit = (6.0 / (self.weights.len() + 1) as f64).sqrt();
        self.weights
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-limit..=limit));
        self.bias = 0.0;
    }

    pub fn forward(&self, input: &[f64]) -> Result<f64> {
        if input.len() != self.weights.len() {
            return Err(Error::Shape(format!(
                "dense layer expects {} inputs, got {}",
                self.weights.len(),
                input.len()
            )));
        }
        Ok(self.bias
            + self
                .weights
                .iter()
                .zip(input)
                .map(|(w, x)| w * x)
                .sum::<f64>())
    }

    /// Accumulate gradients for upstream gradient `g` on the output; returns
    /// the input gradient.
    pub fn backward(&self, input: &[f64], g: f64, grad: &mut Dense) -> Vec<f64> {
        grad.bias += g;
        for (gw, x) in grad.weights.iter_mut().zip(input) {
            *gw += g * x;
        }
        self.weights.iter().map(|w| w * g).collect()
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy computed from the logit, `softplus(z) - y z`.
pub fn bce_from_logit(z: f64, y: f64) -> f64 {
    let softplus = if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    };
    softplus - y * z
}

pub const DICE_EPS: f64 = 1e-7;

/// Soft Dice loss `1 - 2 sum(p t) / (sum p + sum t + eps)` and its gradient
/// with respect to each probability.
pub fn soft_dice_loss(probs: &[f64], truth: &[f64]) -> (f64, Vec<f64>) {
    let inter: f64 = probs.iter().zip(truth).map(|(p, t)| p * t).sum();
    let denom = probs.iter().sum::<f64>() + truth.iter().sum::<f64>() + DICE_EPS;
    let loss = 1.0 - 2.0 * inter / denom;
    let grad = truth
        .iter()
        .map(|&t| -(2.0 * t / denom - 2.0 * inter / (denom * denom)))
        .collect();
    (loss, grad)
}

/// Dice coefficient of two binary masks; 1 when both are empty.
pub fn dice(pred: &[u8], truth: &[u8]) -> f64 {
    assert_eq!(pred.len(), truth.len(), "dice needs equally sized masks");
    let (mut inter, mut p, mut t) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.iter().zip(truth) {
        let (a, b) = (a != 0, b != 0);
        inter += usize::from(a && b);
        p += usize::from(a);
        t += usize::from(b);
    }
    if p + t == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (p + t) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_copies_input() {
        let mut conv = Conv2d::zeros(1, 1, 3);
        conv.weights[4] = 1.0;
        let input = Tensor::from_vec(1, 3, 4, (0..12).map(|v| v as f64).collect()).unwrap();
        assert_eq!(conv.forward(&input).unwrap(), input);
    }

    #[test]
    fn zero_input_gives_bias() {
        let mut conv = Conv2d::zeros(2, 3, 3);
        conv.weights.iter_mut().for_each(|w| *w = 0.3);
        conv.bias = vec![1.5, -2.0];
        let out = conv.forward(&Tensor::zeros(3, 4, 4)).unwrap();
        assert!(out.plane(0).iter().all(|&v| v == 1.5));
        assert!(out.plane(1).iter().all(|&v| v == -2.0));
    }

    #[test]
    fn ones_kernel_counts_neighbors() {
        let mut conv = Conv2d::zeros(1, 1, 3);
        conv.weights.iter_mut().for_each(|w| *w = 1.0);
        let out = conv
            .forward(&Tensor::from_vec(1, 3, 3, vec![1.0; 9]).unwrap())
            .unwrap();
        assert_eq!(out.data, vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let conv = Conv2d::zeros(8, 4, 3);
        assert!(conv.forward(&Tensor::zeros(1, 4, 4)).is_err());
    }

    #[test]
    fn pooling_shapes_and_values() {
        let t = Tensor::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (p, idx) = maxpool2(&t).unwrap();
        assert_eq!(p.data, vec![4.0]);
        assert_eq!(idx, vec![3]);
        let c = Tensor::from_vec(1, 4, 4, vec![0.25; 16]).unwrap();
        assert!(maxpool2(&c).unwrap().0.data.iter().all(|&v| v == 0.25));
        assert_eq!(
            maxpool2(&Tensor::zeros(8, 16, 16)).unwrap().0.shape(),
            (8, 8, 8)
        );
        assert_eq!(
            maxpool2(&Tensor::zeros(8, 16, 15)).unwrap().0.shape(),
            (8, 8, 7)
        );
        assert!(maxpool2(&Tensor::zeros(1, 1, 5)).is_err());
    }

    #[test]
    fn sigmoid_and_bce() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(20.0) > 0.999_999 && sigmoid(20.0) < 1.0);
        assert!(sigmoid(-800.0) >= 0.0);
        for &(z, y) in &[(0.3, 1.0), (-2.0, 0.0), (5.0, 0.0)] {
            let p = sigmoid(z);
            let direct = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            assert!((bce_from_logit(z, y) - direct).abs() < 1e-12);
            assert!(bce_from_logit(z, y) >= 0.0);
        }
    }

    #[test]
    fn dice_examples() {
        let a = [1, 1, 0, 0];
        assert_eq!(dice(&a, &a), 1.0);
        assert_eq!(dice(&[1, 0, 0, 0], &[0, 1, 0, 0]), 0.0);
        assert_eq!(dice(&[0; 4], &[0; 4]), 1.0);
        // |P| = 4, |T| = 6, overlap 3
        let p = [1, 1, 1, 1, 0, 0, 0, 0, 0];
        let t = [0, 1, 1, 1, 1, 1, 1, 0, 0];
        assert!((dice(&p, &t) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn soft_dice_perfect_prediction_is_near_zero() {
        let t = [1.0, 0.0, 1.0];
        let (l, _) = soft_dice_loss(&t, &t);
        assert!(l.abs() < 1e-7);
        let (l, _) = soft_dice_loss(&[0.0, 1.0, 0.0], &t);
        assert!((l - 1.0).abs() < 1e-12);
    }
}
