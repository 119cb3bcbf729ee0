//! Minimal CNN engine: layers with hand-derived gradients, the detector and
//! segmentor models, an Adam trainer, a finite-difference gradient checker and
//! a text model format.

mod detector;
mod gradcheck;
mod io;
pub mod layers;
mod segmentor;
mod tensor;
mod train;

pub use detector::{DetectorModel, DetectorSample, DETECTOR_FILTERS};
pub use gradcheck::{grad_check, grad_check_report, rel_error, GradCheckReport};
pub use io::{
    load_detector, load_model, load_segmentor, parse_model, save_model, write_model, AnyModel,
};
pub use layers::{dice, sigmoid};
pub use segmentor::{SegmentorModel, SegmentorSample, SEGMENTOR_FILTERS};
pub use tensor::Tensor;
pub use train::{
    batch_gradient, train, train_split, validation_split, write_train_log, EpochLog, TrainConfig,
    TrainOutcome,
};

use crate::error::Result;

/// A trainable model with a flat parameter view.
///
/// Gradients are stored in a second instance of the model so that parameter
/// and gradient slices line up one to one.
pub trait Model: Clone + Send + Sync {
    type Sample: Sync;

    fn param_slices(&self) -> Vec<&[f64]>;

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn zeros_like(&self) -> Self;

    /// Loss of one sample.
    fn loss(&self, sample: &Self::Sample) -> Result<f64>;

    /// Loss of one sample; its gradient is added into `grad`.
    fn accumulate_grad(&self, sample: &Self::Sample, grad: &mut Self) -> Result<f64>;

    /// On/off state of every piecewise-linear unit (ReLU masks, pooling
    /// winners). The loss is smooth in the parameters while this stays fixed.
    fn activation_pattern(&self, _sample: &Self::Sample) -> Result<Vec<u32>> {
        Ok(Vec::new())
    }

    /// Quality on held-out samples, higher is better.
    fn metric(&self, samples: &[Self::Sample]) -> Result<f64>;

    fn check_dataset(samples: &[Self::Sample]) -> Result<()> {
        if samples.is_empty() {
            return Err(crate::Error::Dataset("empty training set".into()));
        }
        Ok(())
    }

    fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn flat_params(&self) -> Vec<f64> {
        self.param_slices().concat()
    }
}
