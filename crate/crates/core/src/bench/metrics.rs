use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};
use crate::mesh::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// One decision per window.
    Detection,
    /// One decision per node and window: is the node a victim.
    Localization,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Detection => "detection",
            Task::Localization => "localization",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Per-node confusion of a predicted victim set against the true one.
    pub fn from_victims(
        predicted: &BTreeSet<NodeId>,
        actual: &BTreeSet<NodeId>,
        radix: usize,
    ) -> Self {
        let mut c = Confusion::default();
        for n in 0..radix * radix {
            c.add(predicted.contains(&NodeId(n)), actual.contains(&NodeId(n)));
        }
        c
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Undefined ratios (zero denominators) are `None` and print as `n/a`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub task: Task,
    pub counts: Confusion,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub dice_mean: Option<f64>,
}

impl MetricsReport {
    pub fn from_counts(task: Task, c: Confusion) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        MetricsReport {
            task,
            counts: c,
            accuracy: ratio(c.tp + c.tn, c.total()),
            precision,
            recall,
            f1,
            dice_mean: None,
        }
    }

    pub fn to_text(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
        let mut s = format!(
            "{}: tp={} fp={} fn={} tn={}\n  accuracy {}  precision {}  recall {}  f1 {}\n",
            self.task,
            self.counts.tp,
            self.counts.fp,
            self.counts.fn_,
            self.counts.tn,
            f(self.accuracy),
            f(self.precision),
            f(self.recall),
            f(self.f1),
        );
        if let Some(d) = self.dice_mean {
            s.push_str(&format!("  mean dice {d:.4}\n"));
        }
        s
    }
}

pub fn eval_metrics(predictions: &[bool], truths: &[bool], task: Task) -> Result<MetricsReport> {
    if predictions.len() != truths.len() {
        return Err(Error::Dataset(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let mut c = Confusion::default();
    for (&p, &t) in predictions.iter().zip(truths) {
        c.add(p, t);
    }
    Ok(MetricsReport::from_counts(task, c))
}
