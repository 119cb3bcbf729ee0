//! Sample extraction, training wrappers and held-out evaluation.

use super::dataset::WindowRecord;
use super::metrics::{Confusion, MetricsReport, Task};
use super::pipeline::{analyze_window, Models, PipelineConfig};
use crate::cnn::{
    dice, train, train_split, validation_split, DetectorModel, DetectorSample, SegmentorModel,
    SegmentorSample, Tensor, TrainConfig, TrainOutcome,
};
use crate::error::Result;
use std::collections::BTreeSet;

pub fn detector_samples<'a>(
    windows: impl IntoIterator<Item = &'a WindowRecord>,
) -> Result<Vec<DetectorSample>> {
    windows
        .into_iter()
        .map(WindowRecord::detector_sample)
        .collect()
}

/// One sample per flooded direction of every attack window.
pub fn segmentor_samples<'a>(
    windows: impl IntoIterator<Item = &'a WindowRecord>,
) -> Result<Vec<SegmentorSample>> {
    let mut out = Vec::new();
    for w in windows {
        for d in w.flooded_dirs() {
            out.push(w.segmentor_sample(d)?);
        }
    }
    Ok(out)
}

/// The sample seen through the mesh's mirror symmetries: identity, east-west
/// flip, north-south flip and both. Channels follow `Direction::ALL` (E, N,
/// W, S), so a flip swaps the two opposite channels and reverses one axis.
pub fn mirror_variants(sample: &DetectorSample) -> Result<[DetectorSample; 4]> {
    let (c, h, w) = sample.input.shape();
    let flip = |flip_x: bool, flip_y: bool| -> Result<DetectorSample> {
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            let src = match (ch, flip_x, flip_y) {
                (0, true, _) => 2,
                (2, true, _) => 0,
                (1, _, true) => 3,
                (3, _, true) => 1,
                _ => ch,
            };
            for y in 0..h {
                for x in 0..w {
                    let sy = if flip_y { h - 1 - y } else { y };
                    let sx = if flip_x { w - 1 - x } else { x };
                    data.push(sample.input.at(src, sy, sx));
                }
            }
        }
        Ok(DetectorSample {
            input: Tensor::from_vec(c, h, w, data)?,
            label: sample.label,
        })
    };
    Ok([
        flip(false, false)?,
        flip(true, false)?,
        flip(false, true)?,
        flip(true, true)?,
    ])
}

/// Train a fresh detector. With `augment`, the training part (not the
/// validation part) is expanded by [`mirror_variants`].
pub fn train_detector(
    radix: usize,
    samples: &[DetectorSample],
    cfg: &TrainConfig,
    augment: bool,
) -> Result<TrainOutcome<DetectorModel>> {
    let model = DetectorModel::init(radix, cfg.seed);
    if !augment {
        return train(model, samples, cfg);
    }
    let (train_set, val_set) = validation_split(samples, cfg)?;
    let mut expanded = Vec::with_capacity(train_set.len() * 4);
    for s in &train_set {
        expanded.extend(mirror_variants(s)?);
    }
    train_split(model, &expanded, &val_set, cfg)
}

pub fn train_segmentor(
    radix: usize,
    samples: &[SegmentorSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<SegmentorModel>> {
    train(SegmentorModel::init(radix, cfg.seed), samples, cfg)
}

/// Per-window detection metrics.
pub fn detection_report<'a>(
    model: &DetectorModel,
    windows: impl IntoIterator<Item = &'a WindowRecord>,
    threshold: f64,
) -> Result<MetricsReport> {
    let mut c = Confusion::default();
    for w in windows {
        let s = w.detector_sample()?;
        c.add(model.forward(&s.input)? >= threshold, w.truth.attack);
    }
    Ok(MetricsReport::from_counts(Task::Detection, c))
}

/// Alarm threshold that keeps every normal window in `windows` silent: just
/// above the highest normal-window score, and never below `floor`.
pub fn calibrate_threshold<'a>(
    model: &DetectorModel,
    windows: impl IntoIterator<Item = &'a WindowRecord>,
    floor: f64,
) -> Result<f64> {
    let mut highest = f64::NEG_INFINITY;
    for w in windows.into_iter().filter(|w| !w.truth.attack) {
        highest = highest.max(model.forward(&w.detector_sample()?.input)?);
    }
    Ok(floor.max(highest.next_up()))
}

/// Mean Dice of thresholded segmentations over the flooded directions.
pub fn segmentation_dice(
    samples: &[SegmentorSample],
    model: &SegmentorModel,
    threshold: f64,
) -> Result<Option<f64>> {
    if samples.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for s in samples {
        let probs = model.forward(&s.input)?;
        let pred: Vec<u8> = probs
            .data
            .iter()
            .map(|&p| u8::from(p >= threshold))
            .collect();
        let truth: Vec<u8> = s.mask.iter().map(|&t| u8::from(t >= 0.5)).collect();
        total += dice(&pred, &truth);
    }
    Ok(Some(total / samples.len() as f64))
}

/// Per-node victim identification over attack windows, using the full
/// detect, attribute, segment and localize chain. A window without a
/// localization report contributes its fused segmentation support, or no
/// victims when nothing was segmented.
pub fn localization_report<'a>(
    models: &Models,
    cfg: &PipelineConfig,
    windows: impl IntoIterator<Item = &'a WindowRecord>,
) -> Result<MetricsReport> {
    let mut c = Confusion::default();
    let mut dice_sum = 0.0;
    let mut n = 0usize;
    for w in windows.into_iter().filter(|w| w.truth.attack) {
        let a = analyze_window(models, cfg, w.window, &w.vco, &w.boc)?;
        let predicted: BTreeSet<_> = match &a.localization {
            Some(Ok(report)) => report.victims.clone(),
            _ => a
                .maps
                .iter()
                .flatten()
                .flat_map(|m| {
                    m.iter()
                        .enumerate()
                        .filter(|(_, &p)| p >= cfg.segmentation_threshold)
                        .map(|(i, _)| crate::mesh::NodeId(i))
                        .collect::<Vec<_>>()
                })
                .collect(),
        };
        c.merge(&Confusion::from_victims(
            &predicted,
            &w.truth.victims,
            w.radix(),
        ));
        let r = w.radix();
        let p: Vec<u8> = (0..r * r)
            .map(|i| u8::from(predicted.contains(&crate::mesh::NodeId(i))))
            .collect();
        let t: Vec<u8> = (0..r * r)
            .map(|i| u8::from(w.truth.victims.contains(&crate::mesh::NodeId(i))))
            .collect();
        dice_sum += dice(&p, &t);
        n += 1;
    }
    let mut m = MetricsReport::from_counts(Task::Localization, c);
    m.dice_mean = (n > 0).then(|| dice_sum / n as f64);
    Ok(m)
}
