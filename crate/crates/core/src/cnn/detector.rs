use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    bce_from_logit, maxpool2, maxpool2_backward, relu, relu_backward, sigmoid, Conv2d, Dense,
};
use super::tensor::Tensor;
use super::Model;
use crate::error::{Error, Result};

pub const DETECTOR_FILTERS: usize = 8;
const DETECTOR_INPUTS: usize = 4;

/// conv(8, 3x3) -> ReLU -> maxpool 2x2 -> flatten -> dense(1) -> sigmoid on
/// the four padded VCO frames. For `R = 16`:
/// `4x16x16 -> 8x16x16 -> 8x8x8 -> 512 -> 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub radix: usize,
    pub conv: Conv2d,
    pub dense: Dense,
}

#[derive(Debug, Clone)]
pub struct DetectorSample {
    /// `4 x R x R` padded frames in E, N, W, S order.
    pub input: Tensor,
    /// 1 for attack, 0 for normal.
    pub label: f64,
}

struct Cache {
    pre: Tensor,
    act: Tensor,
    argmax: Vec<usize>,
    pooled: Tensor,
    logit: f64,
}

impl DetectorModel {
    pub fn dense_inputs(radix: usize) -> usize {
        DETECTOR_FILTERS * (radix / 2) * (radix / 2)
    }

    pub fn zeros(radix: usize) -> Self {
        DetectorModel {
            radix,
            conv: Conv2d::zeros(DETECTOR_FILTERS, DETECTOR_INPUTS, 3),
            dense: Dense::zeros(Self::dense_inputs(radix)),
        }
    }

    pub fn init(radix: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Self::zeros(radix);
        m.conv.init(&mut rng);
        m.dense.init(&mut rng);
        m
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.channels != DETECTOR_INPUTS {
            return Err(Error::Shape(format!(
                "detector expects {DETECTOR_INPUTS} frames, got {}",
                input.channels
            )));
        }
        if input.height != self.radix || input.width != self.radix {
            return Err(Error::Shape(format!(
                "detector built for R={} got {}x{} frames",
                self.radix, input.height, input.width
            )));
        }
        Ok(())
    }

    fn forward_cache(&self, input: &Tensor) -> Result<Cache> {
        self.check_input(input)?;
        let pre = self.conv.forward(input)?;
        let act = relu(&pre);
        let (pooled, argmax) = maxpool2(&act)?;
        let logit = self.dense.forward(&pooled.data)?;
        Ok(Cache {
            pre,
            act,
            argmax,
            pooled,
            logit,
        })
    }

    pub fn logit(&self, input: &Tensor) -> Result<f64> {
        Ok(self.forward_cache(input)?.logit)
    }

    /// Attack probability in (0, 1).
    pub fn forward(&self, input: &Tensor) -> Result<f64> {
        Ok(sigmoid(self.logit(input)?))
    }
}

impl Model for DetectorModel {
    type Sample = DetectorSample;

    fn param_slices(&self) -> Vec<&[f64]> {
        vec![
            &self.conv.weights,
            &self.conv.bias,
            &self.dense.weights,
            std::slice::from_ref(&self.dense.bias),
        ]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.conv.weights,
            &mut self.conv.bias,
            &mut self.dense.weights,
            std::slice::from_mut(&mut self.dense.bias),
        ]
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.radix)
    }

    fn loss(&self, s: &DetectorSample) -> Result<f64> {
        Ok(bce_from_logit(self.logit(&s.input)?, s.label))
    }

    fn accumulate_grad(&self, s: &DetectorSample, grad: &mut Self) -> Result<f64> {
        let c = self.forward_cache(&s.input)?;
        let dz = sigmoid(c.logit) - s.label;
        let g_pooled = self.dense.backward(&c.pooled.data, dz, &mut grad.dense);
        let g_pooled =
            Tensor::from_vec(c.pooled.channels, c.pooled.height, c.pooled.width, g_pooled)?;
        let g_act = maxpool2_backward(c.act.shape(), &c.argmax, &g_pooled);
        let g_pre = relu_backward(&c.pre, &g_act);
        self.conv.backward(&s.input, &g_pre, &mut grad.conv, false);
        Ok(bce_from_logit(c.logit, s.label))
    }

    fn activation_pattern(&self, s: &DetectorSample) -> Result<Vec<u32>> {
        let c = self.forward_cache(&s.input)?;
        let mut p: Vec<u32> = c.pre.data.iter().map(|&v| u32::from(v > 0.0)).collect();
        p.extend(c.argmax.iter().map(|&i| i as u32));
        Ok(p)
    }

    /// Accuracy at threshold 0.5.
    fn metric(&self, samples: &[DetectorSample]) -> Result<f64> {
        if samples.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0usize;
        for s in samples {
            let p = self.forward(&s.input)?;
            if (p >= 0.5) == (s.label >= 0.5) {
                correct += 1;
            }
        }
        Ok(correct as f64 / samples.len() as f64)
    }

    fn check_dataset(samples: &[DetectorSample]) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::Dataset("empty training set".into()));
        }
        let positives = samples.iter().filter(|s| s.label >= 0.5).count();
        if positives == 0 || positives == samples.len() {
            return Err(Error::Dataset(
                "detector training needs both attack and normal samples".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_outputs_one_half() {
        let m = DetectorModel::zeros(8);
        let x =
            Tensor::from_vec(4, 8, 8, (0..256).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
        assert_eq!(m.forward(&x).unwrap(), 0.5);
    }

    #[test]
    fn saturated_bias_outputs_one() {
        let mut m = DetectorModel::zeros(8);
        m.dense.bias = 20.0;
        let p = m.forward(&Tensor::zeros(4, 8, 8)).unwrap();
        assert!((p - 1.0).abs() < 1e-8 && p < 1.0);
    }

    #[test]
    fn intermediate_shapes() {
        for r in [4, 8, 16] {
            let m = DetectorModel::init(r, 3);
            let c = m.forward_cache(&Tensor::zeros(4, r, r)).unwrap();
            assert_eq!(c.pre.shape(), (8, r, r));
            assert_eq!(c.pooled.shape(), (8, r / 2, r / 2));
            assert_eq!(c.pooled.len(), DetectorModel::dense_inputs(r));
        }
        assert_eq!(DetectorModel::dense_inputs(16), 512);
    }

    #[test]
    fn wrong_radix_is_rejected() {
        let m = DetectorModel::init(8, 1);
        assert!(m.forward(&Tensor::zeros(4, 16, 16)).is_err());
        assert!(m.forward(&Tensor::zeros(3, 8, 8)).is_err());
    }

    #[test]
    fn single_class_dataset_is_rejected() {
        let s = |l| DetectorSample {
            input: Tensor::zeros(4, 4, 4),
            label: l,
        };
        assert!(DetectorModel::check_dataset(&[s(1.0), s(1.0)]).is_err());
        assert!(DetectorModel::check_dataset(&[]).is_err());
        assert!(DetectorModel::check_dataset(&[s(1.0), s(0.0)]).is_ok());
    }
}
