use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::Model;
use crate::error::{Error, Result};

const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Share of samples used for weight updates; the rest is validation.
    pub train_fraction: f64,
    pub val_fraction: f64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    /// Per-sample gradients on the rayon pool. Results are reduced in a fixed
    /// order, so weights do not depend on this flag.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 32,
            seed: 1,
            train_fraction: 0.8,
            val_fraction: 0.2,
            patience: 20,
            beta1: 0.9,
            beta2: 0.999,
            parallel: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is accepted so a run can be replayed without updates.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {} must be >= 0",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let fr_ok = |f: f64| (0.0..=1.0).contains(&f);
        if !fr_ok(self.train_fraction)
            || !fr_ok(self.val_fraction)
            || (self.train_fraction + self.val_fraction - 1.0).abs() > 1e-9
            || self.train_fraction == 0.0
        {
            return Err(Error::Config(format!(
                "split fractions {} / {} must be in [0,1] and sum to 1",
                self.train_fraction, self.val_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must be in [0,1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch's updates.
    pub loss: f64,
    /// Validation metric, or the negated training loss without a validation set.
    pub val_metric: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub model: M,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

pub fn write_train_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut out = String::from("epoch,loss,val_metric\n");
    for e in log {
        out.push_str(&format!("{},{},{}\n", e.epoch, e.loss, e.val_metric));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step<M: Model>(&mut self, model: &mut M, grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let mut k = 0;
        for slice in model.param_slices_mut() {
            for p in slice.iter_mut() {
                let g = grad[k];
                self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * g;
                self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * g * g;
                let m_hat = self.m[k] / c1;
                let v_hat = self.v[k] / c2;
                *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
                k += 1;
            }
        }
    }
}

/// Sum of equal-length vectors by recursive halving. The tree shape depends
/// only on the count, so the result is reproducible.
pub(crate) fn pairwise_sum(parts: &[Vec<f64>]) -> Vec<f64> {
    match parts.len() {
        0 => Vec::new(),
        1 => parts[0].clone(),
        n => {
            let (a, b) = parts.split_at(n / 2);
            let mut left = pairwise_sum(a);
            let right = pairwise_sum(b);
            left.iter_mut().zip(&right).for_each(|(x, y)| *x += y);
            left
        }
    }
}

/// Per-sample losses and gradients of one batch, in batch order.
fn batch_terms<M: Model>(
    model: &M,
    batch: &[&M::Sample],
    parallel: bool,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let one = |s: &&M::Sample| -> Result<(f64, Vec<f64>)> {
        let mut g = model.zeros_like();
        let loss = model.accumulate_grad(s, &mut g)?;
        Ok((loss, g.flat_params()))
    };
    if parallel {
        batch.par_iter().map(one).collect()
    } else {
        batch.iter().map(one).collect()
    }
}

/// Summed gradient and summed loss of a batch.
pub fn batch_gradient<M: Model>(
    model: &M,
    batch: &[&M::Sample],
    parallel: bool,
) -> Result<(f64, Vec<f64>)> {
    let terms = batch_terms(model, batch, parallel)?;
    let loss = terms.iter().map(|t| t.0).sum();
    let grads: Vec<Vec<f64>> = terms.into_iter().map(|t| t.1).collect();
    Ok((loss, pairwise_sum(&grads)))
}

/// Split `dataset` with a seeded shuffle and train on the first part.
pub fn train<M: Model>(
    model: M,
    dataset: &[M::Sample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<M>>
where
    M::Sample: Clone,
{
    let (train_set, val_set) = validation_split(dataset, cfg)?;
    train_split(model, &train_set, &val_set, cfg)
}

/// Seeded shuffle of `dataset` cut into training and validation parts by
/// `cfg.train_fraction`; the split [`train`] uses.
pub fn validation_split<S: Clone>(dataset: &[S], cfg: &TrainConfig) -> Result<(Vec<S>, Vec<S>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(crate::Error::Dataset("empty training set".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5bd1_e995));
    let n_train =
        ((dataset.len() as f64 * cfg.train_fraction).round() as usize).clamp(1, dataset.len());
    Ok((
        order[..n_train]
            .iter()
            .map(|&i| dataset[i].clone())
            .collect(),
        order[n_train..]
            .iter()
            .map(|&i| dataset[i].clone())
            .collect(),
    ))
}

/// Train on `train_set`, select weights by the metric on `val_set`.
pub fn train_split<M: Model>(
    mut model: M,
    train_set: &[M::Sample],
    val_set: &[M::Sample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<M>> {
    cfg.validate()?;
    M::check_dataset(train_set)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.param_count());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::NEG_INFINITY, 0usize, model.clone());
    let mut stale = 0usize;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&M::Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, mut grad) = batch_gradient(&model, &batch, cfg.parallel)?;
            loss_sum += loss;
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Model(format!(
                    "non-finite gradient in epoch {epoch}"
                )));
            }
            adam.step(&mut model, &grad, cfg);
        }
        let loss = loss_sum / train_set.len() as f64;
        let val_metric = if val_set.is_empty() {
            -loss
        } else {
            model.metric(val_set)?
        };
        log.push(EpochLog {
            epoch,
            loss,
            val_metric,
        });
        if val_metric > best.0 {
            best = (val_metric, epoch, model.clone());
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                break;
            }
        }
    }
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            model,
            log,
            best_epoch: 0,
        });
    }
    Ok(TrainOutcome {
        model: best.2,
        log,
        best_epoch: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::{DetectorModel, DetectorSample, SegmentorModel, SegmentorSample, Tensor};

    fn toy_detector_set(r: usize) -> Vec<DetectorSample> {
        (0..8)
            .map(|i| DetectorSample {
                input: Tensor::from_vec(4, r, r, vec![(i % 2) as f64; 4 * r * r]).unwrap(),
                label: (i % 2) as f64,
            })
            .collect()
    }

    #[test]
    fn separable_set_reaches_full_accuracy() {
        let set = toy_detector_set(4);
        let cfg = TrainConfig {
            epochs: 50,
            train_fraction: 1.0,
            val_fraction: 0.0,
            patience: 0,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let out = train_split(DetectorModel::init(4, 7), &set, &[], &cfg).unwrap();
        assert_eq!(out.model.metric(&set).unwrap(), 1.0);
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let set = toy_detector_set(4);
        let m = DetectorModel::init(4, 2);
        let cfg = TrainConfig {
            epochs: 5,
            learning_rate: 0.0,
            patience: 0,
            ..TrainConfig::default()
        };
        let out = train(m.clone(), &set, &cfg).unwrap();
        assert_eq!(out.model, m);
    }

    #[test]
    fn single_sample_is_memorized() {
        let r = 4;
        let mut mask = vec![0.0; r * r];
        for c in 0..r {
            mask[r + c] = 1.0;
        }
        let input = Tensor::from_vec(1, r, r, mask.clone()).unwrap();
        let set = vec![SegmentorSample { input, mask }];
        let cfg = TrainConfig {
            epochs: 400,
            learning_rate: 1e-2,
            train_fraction: 1.0,
            val_fraction: 0.0,
            patience: 0,
            ..TrainConfig::default()
        };
        let out = train_split(SegmentorModel::init(r, 5), &set, &[], &cfg).unwrap();
        assert!(out.log.last().unwrap().loss < 0.01, "{:?}", out.log.last());
        assert!(out.model.loss(&set[0]).unwrap() < 0.01);
    }

    #[test]
    fn training_is_deterministic_and_parallel_agnostic() {
        let set = toy_detector_set(4);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let a = train(DetectorModel::init(4, 1), &set, &cfg).unwrap();
        let b = train(
            DetectorModel::init(4, 1),
            &set,
            &TrainConfig {
                parallel: false,
                ..cfg
            },
        )
        .unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn bad_datasets_and_configs_error() {
        let set = toy_detector_set(4);
        let m = DetectorModel::init(4, 1);
        assert!(train(m.clone(), &[], &TrainConfig::default()).is_err());
        assert!(train(m.clone(), &set[..1], &TrainConfig::default()).is_err());
        let bad = TrainConfig {
            train_fraction: 0.5,
            val_fraction: 0.2,
            ..TrainConfig::default()
        };
        assert!(train(m.clone(), &set, &bad).is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(train(m, &set, &bad).is_err());
    }

    #[test]
    fn log_csv_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        let log = vec![EpochLog {
            epoch: 1,
            loss: 0.5,
            val_metric: 0.75,
        }];
        write_train_log(&p, &log).unwrap();
        assert_eq!(
            std::fs::read_to_string(p).unwrap(),
            "epoch,loss,val_metric\n1,0.5,0.75\n"
        );
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let parts: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, 1.0]).collect();
        assert_eq!(pairwise_sum(&parts), vec![21.0, 7.0]);
    }
}
