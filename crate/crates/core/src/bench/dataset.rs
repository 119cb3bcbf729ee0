//! Labelled telemetry windows: generation, on-disk layout and loading.
//!
//! A dataset directory holds `manifest.txt`, `frames/` and `masks/`. The
//! manifest has one `scenario` line per simulated run and one `window` line
//! per sampling window:
//!
//! ```text
//! nocguard-dataset 1
//! radix 16
//! scenario 0 group 0 pattern uniform_random seed 11 tv 3 attackers 39:0.8 status ok windows 20
//! window 0 0 label 1 tv 3 attackers 39 vco <4 files> boc <4 files> mask <4 files>
//! ```
//!
//! File lists are in E, N, W, S order and relative to the directory. A
//! failed scenario has `status error <message>` and no window lines.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::export::{frame_to_csv, mask_from_csv, mask_to_csv, read_frame};
use crate::cnn::{DetectorSample, SegmentorSample, Tensor};
use crate::config::format_attackers;
use crate::error::{Error, Result};
use crate::mesh::{Direction, NodeId};
use crate::sim::{run_scenario, Attacker, MeshConfig, ScenarioConfig};
use crate::telemetry::{
    build_frames, normalize_boc, window_ground_truth, FeatureFrame, FeatureKind, GroundTruth,
};
use crate::traffic::Pattern;

const MAGIC: &str = "nocguard-dataset 1";

/// Telemetry and labels of one sampling window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRecord {
    pub scenario: usize,
    pub window: usize,
    pub vco: [FeatureFrame; 4],
    /// Raw counts; normalization happens when building segmentor inputs.
    pub boc: [FeatureFrame; 4],
    pub truth: GroundTruth,
}

/// The four padded VCO frames stacked as detector input.
pub fn detector_input(vco: &[FeatureFrame; 4]) -> Result<Tensor> {
    let r = vco[0].radix;
    let planes: Vec<Vec<f64>> = vco.iter().map(FeatureFrame::padded).collect();
    let refs: Vec<&[f64]> = planes.iter().map(Vec::as_slice).collect();
    Tensor::stack(r, r, &refs)
}

/// Normalized, padded BOC frame as segmentor input.
pub fn segmentor_input(boc: &FeatureFrame) -> Result<Tensor> {
    let r = boc.radix;
    Tensor::from_vec(1, r, r, normalize_boc(boc).padded())
}

impl WindowRecord {
    pub fn radix(&self) -> usize {
        self.truth.radix
    }

    pub fn detector_sample(&self) -> Result<DetectorSample> {
        Ok(DetectorSample {
            input: detector_input(&self.vco)?,
            label: if self.truth.attack { 1.0 } else { 0.0 },
        })
    }

    pub fn segmentor_sample(&self, d: Direction) -> Result<SegmentorSample> {
        Ok(SegmentorSample {
            input: segmentor_input(&self.boc[d.index()])?,
            mask: self.truth.mask(d).iter().map(|&m| f64::from(m)).collect(),
        })
    }

    /// Directions whose ground-truth mask is nonempty.
    pub fn flooded_dirs(&self) -> Vec<Direction> {
        Direction::ALL
            .into_iter()
            .filter(|&d| self.truth.mask(d).iter().any(|&m| m != 0))
            .collect()
    }
}

/// Simulate `cfg` and label every sampling window.
pub fn record_windows(cfg: &ScenarioConfig, scenario: usize) -> Result<Vec<WindowRecord>> {
    let trace = run_scenario(cfg)?;
    trace
        .windows
        .iter()
        .enumerate()
        .map(|(w, snap)| {
            Ok(WindowRecord {
                scenario,
                window: w,
                vco: build_frames(snap, FeatureKind::Vco)?,
                boc: build_frames(snap, FeatureKind::Boc)?,
                truth: window_ground_truth(cfg, snap)?,
            })
        })
        .collect()
}

/// Recipe for a balanced set of scenarios: each attack scenario is followed
/// by a no-attack run with the same background traffic.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPlan {
    pub radix: usize,
    pub patterns: Vec<Pattern>,
    pub scenarios_per_pattern: usize,
    pub attackers_per_scenario: usize,
    pub fir: f64,
    pub normal_rate: f64,
    pub warmup_cycles: u64,
    pub windows: u64,
    pub sample_period: u64,
    pub seed: u64,
    pub matched_normal: bool,
}

impl Default for DatasetPlan {
    fn default() -> Self {
        DatasetPlan {
            radix: 16,
            patterns: Pattern::ALL.to_vec(),
            scenarios_per_pattern: 240,
            attackers_per_scenario: 1,
            fir: 0.8,
            normal_rate: 0.003,
            warmup_cycles: 1000,
            windows: 1,
            sample_period: 1000,
            seed: 1,
            matched_normal: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedScenario {
    /// Attack scenario and its matched normal run share a group.
    pub group: usize,
    pub config: ScenarioConfig,
}

/// Random distinct target victim and attackers on an `R x R` mesh.
pub fn random_placement(
    radix: usize,
    attackers: usize,
    rng: &mut impl Rng,
) -> (NodeId, Vec<NodeId>) {
    let n = radix * radix;
    let tv = NodeId(rng.gen_range(0..n));
    let mut chosen = Vec::new();
    while chosen.len() < attackers.min(n - 1) {
        let a = NodeId(rng.gen_range(0..n));
        if a != tv && !chosen.contains(&a) {
            chosen.push(a);
        }
    }
    (tv, chosen)
}

pub fn plan_scenarios(plan: &DatasetPlan) -> Vec<PlannedScenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut out = Vec::new();
    let mut group = 0;
    for &pattern in &plan.patterns {
        for _ in 0..plan.scenarios_per_pattern {
            let (tv, attackers) =
                random_placement(plan.radix, plan.attackers_per_scenario, &mut rng);
            let attack = ScenarioConfig {
                mesh: MeshConfig {
                    radix: plan.radix,
                    seed: rng.gen(),
                    ..MeshConfig::default()
                },
                pattern,
                normal_rate: plan.normal_rate,
                attackers: attackers
                    .iter()
                    .map(|&node| Attacker {
                        node,
                        fir: plan.fir,
                    })
                    .collect(),
                target_victim: tv,
                warmup_cycles: plan.warmup_cycles,
                run_cycles: plan.windows * plan.sample_period,
                sample_period: plan.sample_period,
                drain_cycles: 0,
            };
            if plan.matched_normal {
                let normal = ScenarioConfig {
                    attackers: Vec::new(),
                    ..attack.clone()
                };
                out.push(PlannedScenario {
                    group,
                    config: attack,
                });
                out.push(PlannedScenario {
                    group,
                    config: normal,
                });
            } else {
                out.push(PlannedScenario {
                    group,
                    config: attack,
                });
            }
            group += 1;
        }
    }
    out
}

/// One simulated scenario; a failure affects only this entry.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub index: usize,
    pub group: usize,
    pub config: ScenarioConfig,
    pub windows: std::result::Result<Vec<WindowRecord>, String>,
}

/// Simulate every scenario. Runs are independent, so they may use the rayon
/// pool; results keep plan order.
pub fn generate(plan: &[PlannedScenario], parallel: bool) -> Vec<ScenarioRun> {
    let run = |(i, p): (usize, &PlannedScenario)| ScenarioRun {
        index: i,
        group: p.group,
        config: p.config.clone(),
        windows: p
            .config
            .validate()
            .and_then(|_| record_windows(&p.config, i))
            .map_err(|e| e.to_string()),
    };
    if parallel {
        plan.par_iter().enumerate().map(run).collect()
    } else {
        plan.iter().enumerate().map(run).collect()
    }
}

/// Split groups into train and held-out sets with a seeded shuffle.
pub fn split_groups(
    runs: &[ScenarioRun],
    train_fraction: f64,
    seed: u64,
) -> (BTreeSet<usize>, BTreeSet<usize>) {
    let mut groups: Vec<usize> = runs
        .iter()
        .map(|r| r.group)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    use rand::seq::SliceRandom;
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((groups.len() as f64 * train_fraction).round() as usize).min(groups.len());
    (
        groups[..n_train].iter().copied().collect(),
        groups[n_train..].iter().copied().collect(),
    )
}

/// Windows of the successful runs whose group is in `groups`.
pub fn windows_in<'a>(
    runs: &'a [ScenarioRun],
    groups: &'a BTreeSet<usize>,
) -> impl Iterator<Item = &'a WindowRecord> + 'a {
    runs.iter()
        .filter(move |r| groups.contains(&r.group))
        .filter_map(|r| r.windows.as_ref().ok())
        .flatten()
}

fn ids(set: &BTreeSet<NodeId>) -> String {
    if set.is_empty() {
        return "-".into();
    }
    set.iter()
        .map(|n| n.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

fn file_name(s: usize, w: usize, what: &str, d: Direction) -> String {
    format!("s{s:04}_w{w:03}_{what}_{d}.csv")
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write frames, masks and the manifest under `out_dir`; returns the manifest path.
pub fn write_dataset(out_dir: &Path, runs: &[ScenarioRun]) -> Result<PathBuf> {
    for sub in ["", "frames", "masks"] {
        let p = out_dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let radix = runs.first().map_or(0, |r| r.config.mesh.radix);
    let mut manifest = format!("{MAGIC}\nradix {radix}\n");
    for run in runs {
        let c = &run.config;
        let attackers = if c.attackers.is_empty() {
            "-".to_string()
        } else {
            format_attackers(&c.attackers)
        };
        let _ = write!(
            manifest,
            "scenario {} group {} pattern {} seed {} tv {} attackers {} ",
            run.index,
            run.group,
            c.pattern.as_str(),
            c.mesh.seed,
            c.target_victim,
            attackers
        );
        match &run.windows {
            Err(msg) => {
                let _ = writeln!(manifest, "status error {}", msg.replace('\n', " "));
            }
            Ok(windows) => {
                let _ = writeln!(manifest, "status ok windows {}", windows.len());
                for rec in windows {
                    let _ = write!(
                        manifest,
                        "window {} {} label {} tv {} attackers {}",
                        rec.scenario,
                        rec.window,
                        u8::from(rec.truth.attack),
                        rec.truth
                            .target_victim
                            .map_or("-".to_string(), |t| t.to_string()),
                        ids(&rec.truth.attackers)
                    );
                    for (what, frames) in [("vco", &rec.vco), ("boc", &rec.boc)] {
                        manifest.push_str(&format!(" {what}"));
                        for f in frames.iter() {
                            let name = format!(
                                "frames/{}",
                                file_name(rec.scenario, rec.window, what, f.direction)
                            );
                            write(&out_dir.join(&name), &frame_to_csv(f))?;
                            manifest.push_str(&format!(" {name}"));
                        }
                    }
                    manifest.push_str(" mask");
                    for d in Direction::ALL {
                        let name =
                            format!("masks/{}", file_name(rec.scenario, rec.window, "mask", d));
                        write(
                            &out_dir.join(&name),
                            &mask_to_csv(rec.truth.mask(d), d, radix, rec.window),
                        )?;
                        manifest.push_str(&format!(" {name}"));
                    }
                    manifest.push('\n');
                }
            }
        }
    }
    let path = out_dir.join("manifest.txt");
    write(&path, &manifest)?;
    Ok(path)
}

/// A dataset read back from disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub radix: usize,
    /// `(scenario index, group)` of every successful scenario.
    pub scenarios: Vec<(usize, usize)>,
    pub failed: Vec<(usize, String)>,
    pub windows: Vec<WindowRecord>,
}

impl Dataset {
    pub fn group_of(&self, scenario: usize) -> Option<usize> {
        self.scenarios.iter().find(|s| s.0 == scenario).map(|s| s.1)
    }
}

fn parse_ids(s: &str) -> Result<BTreeSet<NodeId>> {
    if s == "-" {
        return Ok(BTreeSet::new());
    }
    s.split(';')
        .map(|t| {
            t.parse()
                .map(NodeId)
                .map_err(|_| Error::Parse(format!("bad node id `{t}`")))
        })
        .collect()
}

pub fn load_dataset(manifest: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let bad = |line: usize, m: &str| Error::Dataset(format!("{}:{line}: {m}", manifest.display()));
    let mut lines = text.lines().enumerate();
    if lines.next().map(|l| l.1.trim()) != Some(MAGIC) {
        return Err(bad(1, "not a dataset manifest"));
    }
    let radix: usize = lines
        .next()
        .and_then(|(_, l)| l.strip_prefix("radix "))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| bad(2, "missing radix"))?;
    let mut ds = Dataset {
        radix,
        scenarios: Vec::new(),
        failed: Vec::new(),
        windows: Vec::new(),
    };
    for (i, line) in lines {
        let n = i + 1;
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.first() {
            None => continue,
            Some(&"scenario") => {
                let field = |key: &str| -> Result<&str> {
                    let pos = t
                        .iter()
                        .position(|x| *x == key)
                        .ok_or_else(|| bad(n, &format!("missing `{key}`")))?;
                    t.get(pos + 1)
                        .copied()
                        .ok_or_else(|| bad(n, &format!("missing value of `{key}`")))
                };
                let index: usize = t
                    .get(1)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad(n, "bad index"))?;
                let group: usize = field("group")?.parse().map_err(|_| bad(n, "bad group"))?;
                if field("status")? == "ok" {
                    ds.scenarios.push((index, group));
                } else {
                    let msg = line.split_once("status error").map_or("", |x| x.1).trim();
                    ds.failed.push((index, msg.to_string()));
                }
            }
            Some(&"window") => ds
                .windows
                .push(parse_window(&t, base, radix).map_err(|e| bad(n, &e.to_string()))?),
            Some(other) => return Err(bad(n, &format!("unknown record `{other}`"))),
        }
    }
    Ok(ds)
}

fn parse_window(t: &[&str], base: &Path, radix: usize) -> Result<WindowRecord> {
    if t.len() != 24
        || t[3] != "label"
        || t[5] != "tv"
        || t[7] != "attackers"
        || t[9] != "vco"
        || t[14] != "boc"
        || t[19] != "mask"
    {
        return Err(Error::Parse("malformed window line".into()));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Parse(format!("bad integer `{s}`")))
    };
    let frames = |start: usize, kind: FeatureKind| -> Result<[FeatureFrame; 4]> {
        let v: Vec<FeatureFrame> = (0..4)
            .map(|k| {
                let f = read_frame(&base.join(t[start + k]))?;
                if f.kind != kind || f.direction != Direction::ALL[k] || f.radix != radix {
                    return Err(Error::Dataset(format!(
                        "{} does not hold the expected frame",
                        t[start + k]
                    )));
                }
                Ok(f)
            })
            .collect::<Result<_>>()?;
        Ok(v.try_into().expect("four frames"))
    };
    let mut truth = GroundTruth::empty(radix);
    truth.attack = t[4] == "1";
    truth.target_victim = if t[6] == "-" {
        None
    } else {
        Some(NodeId(num(t[6])?))
    };
    truth.attackers = parse_ids(t[8])?;
    for (k, d) in Direction::ALL.into_iter().enumerate() {
        let path = base.join(t[20 + k]);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let (dir, r, mask) = mask_from_csv(&text)?;
        if dir != d || r != radix {
            return Err(Error::Dataset(format!(
                "{} does not hold the {d} mask",
                t[20 + k]
            )));
        }
        for (node, &m) in mask.iter().enumerate() {
            if m != 0 {
                truth.victims.insert(NodeId(node));
            }
        }
        truth.masks[k] = mask;
    }
    Ok(WindowRecord {
        scenario: num(t[1])?,
        window: num(t[2])?,
        vco: frames(10, FeatureKind::Vco)?,
        boc: frames(15, FeatureKind::Boc)?,
        truth,
    })
}
