//! Victim, route and attacker localization from directional segmentation masks.
//!
//! Binarized masks are padded to `R x R` (node-indexed), fused into a victim
//! set, the target victim is found as the sink of the inferred flow, the route
//! is optionally completed by replaying XY routing from per-direction
//! pseudo-sources, and attackers are read off the per-direction extremes:
//!
//! | abnormal ports | attacker                |
//! |----------------|-------------------------|
//! | E              | `max(E) + 1`            |
//! | W              | `min(W) - 1`            |
//! | N              | `max(N) + R`            |
//! | S              | `min(S) - R`            |
//!
//! Every candidate must survive a route replay against the victim set.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::mesh::{xy_route, Direction, Entry, NodeId};

/// Victims seen through each input-port direction (E, N, W, S).
pub type DirSets = [BTreeSet<NodeId>; 4];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LocalizeError {
    #[error("no victims in any direction")]
    NoVictims,
    #[error("ambiguous target victim: sink candidates {0:?}")]
    AmbiguousTarget(Vec<NodeId>),
    #[error("localization inconclusive, re-sample (rejected candidates: {0:?})")]
    Inconclusive(Vec<i64>),
    #[error("mask shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirMask {
    pub direction: Direction,
    pub radix: usize,
    /// `R x R`, node-indexed, entries 0 or 1.
    pub mask: Vec<u8>,
}

impl DirMask {
    pub fn support(&self) -> BTreeSet<NodeId> {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(i, _)| NodeId(i))
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.iter().all(|&v| v == 0)
    }
}

/// Threshold a padded `R x R` probability map (`>= threshold` is 1). The line
/// of routers lacking the `direction` port is forced to zero.
pub fn binarize(probs: &[f64], direction: Direction, radix: usize, threshold: f64) -> DirMask {
    assert_eq!(probs.len(), radix * radix, "probability map must be R x R");
    let mask = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| u8::from(p >= threshold && direction.port_exists(NodeId(i), radix)))
        .collect();
    DirMask {
        direction,
        radix,
        mask,
    }
}

/// Pixel-wise sum of padded masks; every pixel with a sum of at least one is
/// a victim. A route's turn router shows up in two directions, so `== 1`
/// would drop it.
pub fn fuse(masks: &[DirMask]) -> Result<(Vec<u8>, BTreeSet<NodeId>), LocalizeError> {
    let Some(first) = masks.first() else {
        return Ok((Vec::new(), BTreeSet::new()));
    };
    let radix = first.radix;
    let mut fused = vec![0u8; radix * radix];
    for m in masks {
        if m.radix != radix || m.mask.len() != radix * radix {
            return Err(LocalizeError::Shape(format!(
                "{} mask for R={} mixed with R={radix}",
                m.direction, m.radix
            )));
        }
        for (acc, &v) in fused.iter_mut().zip(&m.mask) {
            *acc += v;
        }
    }
    let victims = fused
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= 1)
        .map(|(i, _)| NodeId(i))
        .collect();
    Ok((fused, victims))
}

pub fn dir_sets(masks: &[DirMask]) -> DirSets {
    let mut sets: DirSets = Default::default();
    for m in masks {
        sets[m.direction.index()].extend(m.support());
    }
    sets
}

pub fn abnormal_dirs(sets: &DirSets) -> Vec<Direction> {
    Direction::ALL
        .into_iter()
        .filter(|d| !sets[d.index()].is_empty())
        .collect()
}

fn union(sets: &DirSets) -> BTreeSet<NodeId> {
    sets.iter().flatten().copied().collect()
}

/// Whether flow that entered `v` through `dir` continues to another victim.
///
/// E-port traffic travels west, N-port traffic south, and so on. Horizontal
/// traffic may still turn onto a vertical segment at or beyond `v`'s column.
/// Gaps in the detections are tolerated.
fn has_outbound(v: NodeId, dir: Direction, sets: &DirSets, radix: usize) -> bool {
    let (row, col) = (v.row(radix), v.col(radix));
    let same_row = |u: &NodeId| u.row(radix) == row;
    let same_col = |u: &NodeId| u.col(radix) == col;
    let south = |u: &NodeId| u.row(radix) < row;
    let north = |u: &NodeId| u.row(radix) > row;
    let n_set = &sets[Direction::N.index()];
    let s_set = &sets[Direction::S.index()];
    match dir {
        Direction::E | Direction::W => {
            let ahead = |u: &NodeId| {
                if dir == Direction::E {
                    u.col(radix) < col
                } else {
                    u.col(radix) > col
                }
            };
            let at_or_ahead = |u: &NodeId| u.col(radix) == col || ahead(u);
            sets[dir.index()].iter().any(|u| same_row(u) && ahead(u))
                || n_set.iter().any(|u| at_or_ahead(u) && south(u))
                || s_set.iter().any(|u| at_or_ahead(u) && north(u))
        }
        Direction::N => n_set.iter().any(|u| same_col(u) && south(u)),
        Direction::S => s_set.iter().any(|u| same_col(u) && north(u)),
    }
}

/// The target victim: the unique victim where the inferred flow ends.
pub fn identify_tv(sets: &DirSets, radix: usize) -> Result<NodeId, LocalizeError> {
    let victims = union(sets);
    if victims.is_empty() {
        return Err(LocalizeError::NoVictims);
    }
    let sinks: Vec<NodeId> = victims
        .iter()
        .copied()
        .filter(|&v| {
            Direction::ALL
                .into_iter()
                .filter(|d| sets[d.index()].contains(&v))
                .all(|d| !has_outbound(v, d, sets, radix))
        })
        .collect();
    match sinks.as_slice() {
        [tv] => Ok(*tv),
        _ => Err(LocalizeError::AmbiguousTarget(sinks)),
    }
}

/// Farthest upstream detection per abnormal direction.
fn pseudo_sources(sets: &DirSets) -> Vec<NodeId> {
    Direction::ALL
        .into_iter()
        .filter_map(|d| {
            let s = &sets[d.index()];
            match d {
                Direction::E | Direction::N => s.last().copied(),
                Direction::W | Direction::S => s.first().copied(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VceOutcome {
    pub sets: DirSets,
    pub victims: BTreeSet<NodeId>,
    pub applied: bool,
    pub diagnostic: Option<String>,
}

/// Victim completing enhancement: replay XY routing from each direction's
/// farthest detection to the target victim and add the routers (with their
/// entry ports) to the detections. Without a target victim the detections
/// are returned unchanged.
pub fn vce(sets: &DirSets, target: Option<NodeId>, radix: usize) -> VceOutcome {
    let Some(tv) = target else {
        return VceOutcome {
            sets: sets.clone(),
            victims: union(sets),
            applied: false,
            diagnostic: Some("no identifiable target victim, completion skipped".into()),
        };
    };
    let mut out = sets.clone();
    for src in pseudo_sources(sets) {
        let path = xy_route(src, tv, radix).expect("victims lie on the mesh");
        for (node, entry) in path.into_iter().skip(1) {
            if let Entry::Port(d) = entry {
                out[d.index()].insert(node);
            }
        }
    }
    let victims = union(&out);
    VceOutcome {
        sets: out,
        victims,
        applied: true,
        diagnostic: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackerEstimate {
    One,
    AtLeastTwo,
}

impl fmt::Display for AttackerEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackerEstimate::One => "1",
            AttackerEstimate::AtLeastTwo => ">=2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TlmOutcome {
    pub candidates: Vec<NodeId>,
    /// Formula results that fall off the mesh or wrap a row boundary.
    pub off_mesh: Vec<i64>,
    pub estimate: AttackerEstimate,
    /// More localization rounds are needed to resolve every attacker.
    pub multi_round: bool,
}

fn formula(dir: Direction, set: &BTreeSet<NodeId>, radix: usize) -> Option<Result<NodeId, i64>> {
    let r = radix as i64;
    let (raw, ok) = match dir {
        Direction::E => {
            let m = *set.last()?;
            (m.0 as i64 + 1, m.col(radix) + 1 < radix)
        }
        Direction::W => {
            let m = *set.first()?;
            (m.0 as i64 - 1, m.col(radix) > 0)
        }
        Direction::N => {
            let m = *set.last()?;
            (m.0 as i64 + r, m.row(radix) + 1 < radix)
        }
        Direction::S => {
            let m = *set.first()?;
            (m.0 as i64 - r, m.row(radix) > 0)
        }
    };
    Some(if ok {
        Ok(NodeId(raw as usize))
    } else {
        Err(raw)
    })
}

/// Table-like attacker localization from per-direction victim sets.
pub fn tlm_localize(sets: &DirSets, radix: usize) -> Result<TlmOutcome, LocalizeError> {
    let dirs = abnormal_dirs(sets);
    if dirs.is_empty() {
        return Err(LocalizeError::NoVictims);
    }
    let r = radix;
    let (use_dirs, estimate, multi_round) = match dirs.as_slice() {
        [_] => (dirs.clone(), AttackerEstimate::One, false),
        [a, b] if a.is_horizontal() == b.is_horizontal() => {
            (dirs.clone(), AttackerEstimate::AtLeastTwo, false)
        }
        [a, b] => {
            let (h, v) = if a.is_horizontal() {
                (*a, *b)
            } else {
                (*b, *a)
            };
            let hs = &sets[h.index()];
            let vs = &sets[v.index()];
            let v_span = vs.last().unwrap().0 - vs.first().unwrap().0;
            let h_span = hs.last().unwrap().0 - hs.first().unwrap().0;
            if v_span.is_multiple_of(r) && h_span < r - 1 {
                (vec![h], AttackerEstimate::One, false)
            } else {
                (dirs.clone(), AttackerEstimate::AtLeastTwo, true)
            }
        }
        _ => (dirs.clone(), AttackerEstimate::AtLeastTwo, true),
    };
    let mut candidates = Vec::new();
    let mut off_mesh = Vec::new();
    for d in use_dirs {
        match formula(d, &sets[d.index()], radix) {
            Some(Ok(n)) => {
                if !candidates.contains(&n) {
                    candidates.push(n);
                }
            }
            Some(Err(raw)) => off_mesh.push(raw),
            None => {}
        }
    }
    Ok(TlmOutcome {
        candidates,
        off_mesh,
        estimate,
        multi_round,
    })
}

/// Keep candidates whose XY route to the target victim is fully explained by
/// the victim set.
pub fn validate_attackers(
    candidates: &[NodeId],
    target: NodeId,
    victims: &BTreeSet<NodeId>,
    radix: usize,
) -> Result<Vec<NodeId>, LocalizeError> {
    let confirmed: Vec<NodeId> = candidates
        .iter()
        .copied()
        .filter(|&a| {
            if a.0 >= radix * radix || victims.contains(&a) || a == target {
                return false;
            }
            xy_route(a, target, radix)
                .map(|path| {
                    path.iter()
                        .skip(1)
                        .all(|(n, _)| *n == target || victims.contains(n))
                })
                .unwrap_or(false)
        })
        .collect();
    if confirmed.is_empty() {
        return Err(LocalizeError::Inconclusive(
            candidates.iter().map(|n| n.0 as i64).collect(),
        ));
    }
    Ok(confirmed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizeConfig {
    pub threshold: f64,
    pub vce: bool,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        LocalizeConfig {
            threshold: 0.5,
            vce: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalizationReport {
    pub window: usize,
    pub victims: BTreeSet<NodeId>,
    pub target_victim: NodeId,
    pub abnormal_dirs: Vec<Direction>,
    pub attackers: Vec<NodeId>,
    pub estimate: AttackerEstimate,
    pub multi_round: bool,
    pub rounds_used: usize,
    pub vce_applied: bool,
}

fn join<T: fmt::Display>(items: impl IntoIterator<Item = T>, sep: &str) -> String {
    items
        .into_iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(sep)
}

impl LocalizationReport {
    pub const CSV_HEADER: &'static str = "window,dirs,victims,tv,attackers,rounds";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.window,
            join(&self.abnormal_dirs, ""),
            join(&self.victims, ";"),
            self.target_victim,
            join(&self.attackers, ";"),
            self.rounds_used
        )
    }

    pub fn to_text(&self) -> String {
        format!(
            "window {}: abnormal ports [{}]\n  victims ({}): {}\n  target victim: {}\n  attackers (estimate {}{}): {}\n  round {}, completion {}\n",
            self.window,
            join(&self.abnormal_dirs, " "),
            self.victims.len(),
            join(&self.victims, " "),
            self.target_victim,
            self.estimate,
            if self.multi_round { ", more rounds needed" } else { "" },
            join(&self.attackers, " "),
            self.rounds_used,
            if self.vce_applied { "on" } else { "off" },
        )
    }
}

/// Full chain from padded per-direction segmentation maps (`None` for
/// directions that were not segmented) to a report.
pub fn localize(
    radix: usize,
    window: usize,
    maps: &[Option<Vec<f64>>; 4],
    cfg: &LocalizeConfig,
) -> Result<LocalizationReport, LocalizeError> {
    let mut masks = Vec::new();
    for d in Direction::ALL {
        if let Some(map) = &maps[d.index()] {
            if map.len() != radix * radix {
                return Err(LocalizeError::Shape(format!(
                    "{d} map has {} entries, expected {}",
                    map.len(),
                    radix * radix
                )));
            }
            masks.push(binarize(map, d, radix, cfg.threshold));
        }
    }
    localize_masks(radix, window, &masks, cfg.vce)
}

pub fn localize_masks(
    radix: usize,
    window: usize,
    masks: &[DirMask],
    use_vce: bool,
) -> Result<LocalizationReport, LocalizeError> {
    let (_, fused) = fuse(masks)?;
    if fused.is_empty() {
        return Err(LocalizeError::NoVictims);
    }
    let mut sets = dir_sets(masks);
    let tv = identify_tv(&sets, radix)?;
    let mut victims = fused;
    let mut vce_applied = false;
    if use_vce {
        let out = vce(&sets, Some(tv), radix);
        sets = out.sets;
        victims = out.victims;
        vce_applied = out.applied;
    }
    let tlm = tlm_localize(&sets, radix)?;
    let attackers = validate_attackers(&tlm.candidates, tv, &victims, radix)?;
    Ok(LocalizationReport {
        window,
        victims,
        target_victim: tv,
        abnormal_dirs: abnormal_dirs(&sets),
        attackers,
        estimate: tlm.estimate,
        multi_round: tlm.multi_round || !tlm.off_mesh.is_empty(),
        rounds_used: 1,
        vce_applied,
    })
}
