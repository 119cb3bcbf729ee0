use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{dice, relu, relu_backward, sigmoid, soft_dice_loss, Conv2d};
use super::tensor::Tensor;
use super::Model;
use crate::error::{Error, Result};

pub const SEGMENTOR_FILTERS: usize = 8;

/// conv(8, 3x3) -> ReLU -> conv(8, 3x3) -> ReLU -> conv(1, 1x1) -> sigmoid,
/// all same-padded, mapping one padded BOC frame to a per-router route mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentorModel {
    pub radix: usize,
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub head: Conv2d,
}

#[derive(Debug, Clone)]
pub struct SegmentorSample {
    /// `1 x R x R` normalized, padded frame.
    pub input: Tensor,
    /// `R x R` 0/1 route mask.
    pub mask: Vec<f64>,
}

struct Cache {
    pre1: Tensor,
    act1: Tensor,
    pre2: Tensor,
    act2: Tensor,
    probs: Tensor,
}

impl SegmentorModel {
    pub fn zeros(radix: usize) -> Self {
        SegmentorModel {
            radix,
            conv1: Conv2d::zeros(SEGMENTOR_FILTERS, 1, 3),
            conv2: Conv2d::zeros(SEGMENTOR_FILTERS, SEGMENTOR_FILTERS, 3),
            head: Conv2d::zeros(1, SEGMENTOR_FILTERS, 1),
        }
    }

    pub fn init(radix: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Self::zeros(radix);
        m.conv1.init(&mut rng);
        m.conv2.init(&mut rng);
        m.head.init(&mut rng);
        m
    }

    fn forward_cache(&self, input: &Tensor) -> Result<Cache> {
        if input.shape() != (1, self.radix, self.radix) {
            return Err(Error::Shape(format!(
                "segmentor built for 1x{r}x{r}, got {:?}",
                input.shape(),
                r = self.radix
            )));
        }
        let pre1 = self.conv1.forward(input)?;
        let act1 = relu(&pre1);
        let pre2 = self.conv2.forward(&act1)?;
        let act2 = relu(&pre2);
        let mut probs = self.head.forward(&act2)?;
        probs.data.iter_mut().for_each(|z| *z = sigmoid(*z));
        Ok(Cache {
            pre1,
            act1,
            pre2,
            act2,
            probs,
        })
    }

    /// Per-router route probabilities, `1 x R x R`.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cache(input)?.probs)
    }

    fn check_mask(&self, mask: &[f64]) -> Result<()> {
        if mask.len() != self.radix * self.radix {
            return Err(Error::Shape(format!(
                "mask has {} entries for R={}",
                mask.len(),
                self.radix
            )));
        }
        Ok(())
    }
}

impl Model for SegmentorModel {
    type Sample = SegmentorSample;

    fn param_slices(&self) -> Vec<&[f64]> {
        vec![
            &self.conv1.weights,
            &self.conv1.bias,
            &self.conv2.weights,
            &self.conv2.bias,
            &self.head.weights,
            &self.head.bias,
        ]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.conv1.weights,
            &mut self.conv1.bias,
            &mut self.conv2.weights,
            &mut self.conv2.bias,
            &mut self.head.weights,
            &mut self.head.bias,
        ]
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.radix)
    }

    fn loss(&self, s: &SegmentorSample) -> Result<f64> {
        self.check_mask(&s.mask)?;
        let probs = self.forward(&s.input)?;
        Ok(soft_dice_loss(&probs.data, &s.mask).0)
    }

    fn accumulate_grad(&self, s: &SegmentorSample, grad: &mut Self) -> Result<f64> {
        self.check_mask(&s.mask)?;
        let c = self.forward_cache(&s.input)?;
        let (loss, dp) = soft_dice_loss(&c.probs.data, &s.mask);
        let mut dz = c.probs.clone();
        for (g, (&p, d)) in dz.data.iter_mut().zip(c.probs.data.iter().zip(dp)) {
            *g = d * p * (1.0 - p);
        }
        let g_act2 = self
            .head
            .backward(&c.act2, &dz, &mut grad.head, true)
            .unwrap();
        let g_pre2 = relu_backward(&c.pre2, &g_act2);
        let g_act1 = self
            .conv2
            .backward(&c.act1, &g_pre2, &mut grad.conv2, true)
            .unwrap();
        let g_pre1 = relu_backward(&c.pre1, &g_act1);
        self.conv1
            .backward(&s.input, &g_pre1, &mut grad.conv1, false);
        Ok(loss)
    }

    fn activation_pattern(&self, s: &SegmentorSample) -> Result<Vec<u32>> {
        let c = self.forward_cache(&s.input)?;
        Ok(c.pre1
            .data
            .iter()
            .chain(&c.pre2.data)
            .map(|&v| u32::from(v > 0.0))
            .collect())
    }

    /// Mean Dice of the 0.5-thresholded prediction.
    fn metric(&self, samples: &[SegmentorSample]) -> Result<f64> {
        if samples.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for s in samples {
            let probs = self.forward(&s.input)?;
            let pred: Vec<u8> = probs.data.iter().map(|&p| u8::from(p >= 0.5)).collect();
            let truth: Vec<u8> = s.mask.iter().map(|&t| u8::from(t >= 0.5)).collect();
            total += dice(&pred, &truth);
        }
        Ok(total / samples.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_is_one_half_everywhere() {
        let m = SegmentorModel::zeros(8);
        let out = m
            .forward(&Tensor::from_vec(1, 8, 8, vec![0.7; 64]).unwrap())
            .unwrap();
        assert_eq!(out.shape(), (1, 8, 8));
        assert!(out.data.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn negative_head_bias_suppresses_everything() {
        let mut m = SegmentorModel::zeros(4);
        m.head.bias[0] = -20.0;
        let out = m.forward(&Tensor::zeros(1, 4, 4)).unwrap();
        assert!(out.data.iter().all(|&p| p < 1e-8 && p > 0.0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let m = SegmentorModel::init(8, 2);
        assert!(m.forward(&Tensor::zeros(1, 16, 16)).is_err());
        assert!(m.forward(&Tensor::zeros(2, 8, 8)).is_err());
        let s = SegmentorSample {
            input: Tensor::zeros(1, 8, 8),
            mask: vec![0.0; 10],
        };
        assert!(m.loss(&s).is_err());
    }
}
