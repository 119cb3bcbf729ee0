//! The periodic detect, segment, localize and quarantine loop.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::dataset::{detector_input, segmentor_input};
use crate::cnn::{load_detector, load_segmentor, DetectorModel, SegmentorModel, Tensor};
use crate::error::{Error, Result};
use crate::localize::{localize, LocalizationReport, LocalizeConfig, LocalizeError};
use crate::mesh::{Direction, NodeId};
use crate::sim::{ScenarioConfig, Simulator};
use crate::telemetry::{build_frames, FeatureFrame, FeatureKind};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub scenario: ScenarioConfig,
    pub detector_model: Option<PathBuf>,
    pub segmentor_model: Option<PathBuf>,
    pub detection_threshold: f64,
    /// Solo score a VCO direction needs to be segmented.
    pub attribution_threshold: f64,
    pub segmentation_threshold: f64,
    pub vce_enabled: bool,
    /// Halt confirmed attackers in the simulator.
    pub quarantine: bool,
    /// Localization rounds allowed per run.
    pub max_rounds: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            scenario: ScenarioConfig::default(),
            detector_model: None,
            segmentor_model: None,
            detection_threshold: 0.5,
            attribution_threshold: 0.5,
            segmentation_threshold: 0.5,
            vce_enabled: true,
            quarantine: true,
            max_rounds: 3,
            output_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.max_rounds == 0 {
            return Err(Error::Config("max_rounds must be >= 1".into()));
        }
        for (name, t) in [
            ("detection_threshold", self.detection_threshold),
            ("attribution_threshold", self.attribution_threshold),
            ("segmentation_threshold", self.segmentation_threshold),
        ] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Config(format!("{name} {t} outside (0, 1)")));
            }
        }
        Ok(())
    }

    fn localize_config(&self) -> LocalizeConfig {
        LocalizeConfig {
            threshold: self.segmentation_threshold,
            vce: self.vce_enabled,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub detector: DetectorModel,
    pub segmentor: SegmentorModel,
}

impl Models {
    /// Load both model files named in `cfg` for its mesh radix.
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let radix = cfg.scenario.mesh.radix;
        let det = cfg
            .detector_model
            .as_deref()
            .ok_or_else(|| Error::Config("detector_model not set".into()))?;
        let seg = cfg
            .segmentor_model
            .as_deref()
            .ok_or_else(|| Error::Config("segmentor_model not set".into()))?;
        Ok(Models {
            detector: load_detector(det, radix)?,
            segmentor: load_segmentor(seg, radix)?,
        })
    }

    pub fn check_radix(&self, radix: usize) -> Result<()> {
        if self.detector.radix != radix || self.segmentor.radix != radix {
            return Err(Error::Model(format!(
                "models built for R={}/{}, scenario has R={radix}",
                self.detector.radix, self.segmentor.radix
            )));
        }
        Ok(())
    }
}

/// Directions whose VCO frame alone, with the other channels zeroed, keeps
/// the detector at or above `threshold`.
pub fn attribute_directions(
    detector: &DetectorModel,
    input: &Tensor,
    threshold: f64,
) -> Result<Vec<Direction>> {
    let mut scores = Vec::with_capacity(4);
    for d in Direction::ALL {
        let mut only = Tensor::zeros(input.channels, input.height, input.width);
        only.plane_mut(d.index())
            .copy_from_slice(input.plane(d.index()));
        scores.push((d, detector.forward(&only)?));
    }
    let out: Vec<Direction> = scores
        .iter()
        .filter(|(_, p)| *p >= threshold)
        .map(|(d, _)| *d)
        .collect();
    if !out.is_empty() {
        return Ok(out);
    }
    // An alarm implies at least one abnormal direction.
    let best = scores
        .iter()
        .fold(scores[0], |best, &s| if s.1 > best.1 { s } else { best });
    Ok(vec![best.0])
}

#[derive(Debug, Clone)]
pub struct WindowAnalysis {
    pub probability: f64,
    pub alarm: bool,
    pub abnormal_dirs: Vec<Direction>,
    /// Padded segmentation maps of the attributed directions.
    pub maps: [Option<Vec<f64>>; 4],
    /// `None` when there was no alarm.
    pub localization: Option<std::result::Result<LocalizationReport, LocalizeError>>,
}

/// Detection and, on alarm, localization of one window's frames.
pub fn analyze_window(
    models: &Models,
    cfg: &PipelineConfig,
    window: usize,
    vco: &[FeatureFrame; 4],
    boc: &[FeatureFrame; 4],
) -> Result<WindowAnalysis> {
    let input = detector_input(vco)?;
    let probability = models.detector.forward(&input)?;
    let alarm = probability >= cfg.detection_threshold;
    let mut out = WindowAnalysis {
        probability,
        alarm,
        abnormal_dirs: Vec::new(),
        maps: [None, None, None, None],
        localization: None,
    };
    if !alarm {
        return Ok(out);
    }
    out.abnormal_dirs = attribute_directions(&models.detector, &input, cfg.attribution_threshold)?;
    for &d in &out.abnormal_dirs {
        let probs = models
            .segmentor
            .forward(&segmentor_input(&boc[d.index()])?)?;
        out.maps[d.index()] = Some(probs.data);
    }
    out.localization = Some(localize(
        vco[0].radix,
        window,
        &out.maps,
        &cfg.localize_config(),
    ));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowOutcome {
    pub window: usize,
    pub probability: f64,
    pub alarm: bool,
    pub abnormal_dirs: Vec<Direction>,
    /// `normal`, `localized`, `inconclusive: ...` or `rounds exhausted`.
    pub status: String,
    pub quarantined: Vec<NodeId>,
    /// Evidence-based label of the window, for evaluation.
    pub truth_attack: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub radix: usize,
    pub windows: Vec<WindowOutcome>,
    pub reports: Vec<LocalizationReport>,
    pub quarantined: BTreeSet<NodeId>,
    pub rounds_used: usize,
    pub true_attackers: BTreeSet<NodeId>,
}

impl PipelineOutcome {
    pub fn alarms(&self) -> usize {
        self.windows.iter().filter(|w| w.alarm).count()
    }

    /// Every true attacker was quarantined.
    pub fn found_all(&self) -> bool {
        self.true_attackers.is_subset(&self.quarantined)
    }

    /// Alarms were raised but no attacker could be confirmed.
    pub fn inconclusive(&self) -> bool {
        self.alarms() > 0 && self.reports.iter().all(|r| r.attackers.is_empty())
    }

    pub fn reports_csv(&self) -> String {
        let mut s = format!("{}\n", LocalizationReport::CSV_HEADER);
        for r in &self.reports {
            s.push_str(&r.csv_line());
            s.push('\n');
        }
        s
    }

    pub fn windows_csv(&self) -> String {
        let mut s = String::from("window,probability,alarm,dirs,status,quarantined,truth\n");
        for w in &self.windows {
            let dirs: String = w.abnormal_dirs.iter().map(|d| d.as_str()).collect();
            let q: Vec<String> = w.quarantined.iter().map(|n| n.to_string()).collect();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                w.window,
                w.probability,
                u8::from(w.alarm),
                dirs,
                w.status.replace(',', ";"),
                q.join(";"),
                u8::from(w.truth_attack)
            );
        }
        s
    }

    pub fn summary_text(&self) -> String {
        let ids = |s: &BTreeSet<NodeId>| {
            s.iter()
                .map(|n| n.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut s = format!(
            "windows {}\nalarms {}\nrounds used {}\nquarantined [{}]\ntrue attackers [{}]\nall found {}\n",
            self.windows.len(),
            self.alarms(),
            self.rounds_used,
            ids(&self.quarantined),
            ids(&self.true_attackers),
            self.found_all()
        );
        for r in &self.reports {
            s.push_str(&r.to_text());
        }
        s
    }

    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [
            ("reports.csv", self.reports_csv()),
            ("windows.csv", self.windows_csv()),
            ("summary.txt", self.summary_text()),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

/// Simulate the scenario window by window. Every alarm starts a localization
/// round while rounds remain; confirmed attackers are quarantined before the
/// next window is sampled.
pub fn run_pipeline(cfg: &PipelineConfig, models: &Models) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let sc = &cfg.scenario;
    models.check_radix(sc.mesh.radix)?;
    let mut sim = Simulator::new(sc)?;
    sim.warm_up();
    let mut out = PipelineOutcome {
        radix: sc.mesh.radix,
        windows: Vec::new(),
        reports: Vec::new(),
        quarantined: BTreeSet::new(),
        rounds_used: 0,
        true_attackers: sc
            .attackers
            .iter()
            .filter(|a| a.fir > 0.0)
            .map(|a| a.node)
            .collect(),
    };
    for w in 0..(sc.run_cycles / sc.sample_period) as usize {
        let snap = sim.advance_window();
        let vco = build_frames(&snap, FeatureKind::Vco)?;
        let boc = build_frames(&snap, FeatureKind::Boc)?;
        let mut outcome = WindowOutcome {
            window: w,
            probability: 0.0,
            alarm: false,
            abnormal_dirs: Vec::new(),
            status: "normal".into(),
            quarantined: Vec::new(),
            truth_attack: snap.is_attack(),
        };
        let rounds_left = out.rounds_used < cfg.max_rounds;
        let analysis = if rounds_left {
            analyze_window(models, cfg, w, &vco, &boc)?
        } else {
            let p = models.detector.forward(&detector_input(&vco)?)?;
            WindowAnalysis {
                probability: p,
                alarm: p >= cfg.detection_threshold,
                abnormal_dirs: Vec::new(),
                maps: [None, None, None, None],
                localization: None,
            }
        };
        outcome.probability = analysis.probability;
        outcome.alarm = analysis.alarm;
        outcome.abnormal_dirs = analysis.abnormal_dirs;
        match analysis.localization {
            None if analysis.alarm => outcome.status = "rounds exhausted".into(),
            None => {}
            Some(result) => {
                out.rounds_used += 1;
                match result {
                    Ok(mut report) => {
                        report.rounds_used = out.rounds_used;
                        outcome.status = "localized".into();
                        if cfg.quarantine {
                            for &a in &report.attackers {
                                sim.quarantine(a);
                                out.quarantined.insert(a);
                                outcome.quarantined.push(a);
                            }
                        }
                        out.reports.push(report);
                    }
                    Err(e) => outcome.status = format!("inconclusive: {e}"),
                }
            }
        }
        out.windows.push(outcome);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Filter 0 passes the E channel and filter 1 the N channel; the dense
    /// layer weighs E ten times more than N.
    fn channel_detector() -> DetectorModel {
        let mut m = DetectorModel::zeros(4);
        let centre = |o: usize, i: usize| ((o * 4 + i) * 3 + 1) * 3 + 1;
        m.conv.weights[centre(0, 0)] = 1.0;
        m.conv.weights[centre(1, 1)] = 1.0;
        for k in 0..4 {
            m.dense.weights[k] = 1.0;
            m.dense.weights[4 + k] = 0.1;
        }
        m.dense.bias = -2.0;
        m
    }

    fn input(planes: &[usize]) -> Tensor {
        let mut t = Tensor::zeros(4, 4, 4);
        for &p in planes {
            t.plane_mut(p).iter_mut().for_each(|v| *v = 1.0);
        }
        t
    }

    #[test]
    fn attribution_keeps_directions_above_threshold() {
        let m = channel_detector();
        let dirs = attribute_directions(&m, &input(&[0, 1]), 0.5).unwrap();
        assert_eq!(dirs, vec![Direction::E]);
        let dirs = attribute_directions(&m, &input(&[0, 1]), 0.15).unwrap();
        assert_eq!(dirs, vec![Direction::E, Direction::N]);
    }

    #[test]
    fn attribution_falls_back_to_the_top_direction() {
        let m = channel_detector();
        let dirs = attribute_directions(&m, &input(&[0, 1]), 0.95).unwrap();
        assert_eq!(dirs, vec![Direction::E]);
        let dirs = attribute_directions(&m, &input(&[1]), 0.95).unwrap();
        assert_eq!(dirs, vec![Direction::N]);
    }

    #[test]
    fn config_validation() {
        assert!(PipelineConfig::default().validate().is_ok());
        let bad = [
            PipelineConfig {
                max_rounds: 0,
                ..PipelineConfig::default()
            },
            PipelineConfig {
                attribution_threshold: 1.0,
                ..PipelineConfig::default()
            },
            PipelineConfig {
                detection_threshold: 0.0,
                ..PipelineConfig::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }
}
