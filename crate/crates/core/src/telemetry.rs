//! Per-port counters, directional feature frames and ground truth.
//!
//! A frame holds one feature for one input-port direction across the whole
//! mesh. Routers on the edge that lacks the port are left out, so E and W
//! frames are `R x (R-1)` and N and S frames are `(R-1) x R`:
//!
//! * E drops the easternmost column, W the westernmost,
//! * N drops the northernmost row, S the southernmost.
//!
//! Frame rows follow mesh rows (row 0 is the southern edge). Zero padding
//! the dropped line back in yields an `R x R` matrix indexed by node id.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mesh::{xy_route, Direction, Entry, NodeId};
use crate::sim::ScenarioConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PortCounters {
    pub occupied_vcs: u32,
    pub total_vcs: u32,
    /// Buffer writes plus reads since the window started.
    pub boc_window: u64,
}

/// Telemetry of one sampling window.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub window_index: usize,
    pub start_cycle: u64,
    pub end_cycle: u64,
    pub radix: usize,
    /// Per node, per direction (E, N, W, S); `None` where the port does not exist.
    pub ports: Vec<[Option<PortCounters>; 4]>,
    /// Buffer operations performed on malicious flits, same layout as `ports`.
    pub malicious_ops: Vec<[u64; 4]>,
    /// Malicious flits each node pushed into the network during the window.
    pub malicious_injected: Vec<(NodeId, u64)>,
    /// Attackers not quarantined at the end of the window.
    pub active_attackers: Vec<NodeId>,
}

impl Snapshot {
    /// A window is an attack window iff a malicious flit touched any buffer.
    pub fn is_attack(&self) -> bool {
        self.malicious_ops.iter().flatten().any(|&c| c > 0)
    }

    /// Nodes that injected malicious traffic or were still flooding.
    pub fn flooding_nodes(&self) -> Vec<NodeId> {
        let set: BTreeSet<NodeId> = self
            .malicious_injected
            .iter()
            .map(|(n, _)| *n)
            .chain(self.active_attackers.iter().copied())
            .collect();
        set.into_iter().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Vco,
    Boc,
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Vco => "vco",
            FeatureKind::Boc => "boc",
        })
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vco" => Ok(FeatureKind::Vco),
            "boc" => Ok(FeatureKind::Boc),
            other => Err(Error::Parse(format!("unknown feature kind `{other}`"))),
        }
    }
}

/// Rows and columns of a `direction` frame on an `R x R` mesh.
pub fn frame_shape(direction: Direction, radix: usize) -> (usize, usize) {
    if direction.is_horizontal() {
        (radix, radix - 1)
    } else {
        (radix - 1, radix)
    }
}

/// Router behind frame entry `(row, col)`.
pub fn frame_node(direction: Direction, radix: usize, row: usize, col: usize) -> NodeId {
    match direction {
        Direction::E | Direction::N => NodeId::from_coords(row, col, radix),
        Direction::W => NodeId::from_coords(row, col + 1, radix),
        Direction::S => NodeId::from_coords(row + 1, col, radix),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    pub direction: Direction,
    pub kind: FeatureKind,
    pub radix: usize,
    pub window_index: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub values: Vec<f64>,
}

impl FeatureFrame {
    pub fn zeros(
        direction: Direction,
        kind: FeatureKind,
        radix: usize,
        window_index: usize,
    ) -> Self {
        let (rows, cols) = frame_shape(direction, radix);
        FeatureFrame {
            direction,
            kind,
            radix,
            window_index,
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    /// Zero-pad the missing edge line back in: an `R x R` row-major matrix
    /// whose index is the node id.
    pub fn padded(&self) -> Vec<f64> {
        let r = self.radix;
        let mut out = vec![0.0; r * r];
        for row in 0..self.rows {
            for col in 0..self.cols {
                let node = frame_node(self.direction, r, row, col);
                out[node.0] = self.get(row, col);
            }
        }
        out
    }

    /// Inverse of [`FeatureFrame::padded`]; the padded line is discarded.
    pub fn from_padded(
        direction: Direction,
        kind: FeatureKind,
        radix: usize,
        window_index: usize,
        padded: &[f64],
    ) -> Result<Self> {
        if padded.len() != radix * radix {
            return Err(Error::Shape(format!(
                "padded frame has {} entries, expected {}",
                padded.len(),
                radix * radix
            )));
        }
        let mut frame = FeatureFrame::zeros(direction, kind, radix, window_index);
        for row in 0..frame.rows {
            for col in 0..frame.cols {
                frame.values[row * frame.cols + col] =
                    padded[frame_node(direction, radix, row, col).0];
            }
        }
        Ok(frame)
    }
}

pub fn sample_vco(port: &PortCounters) -> f64 {
    debug_assert!(port.total_vcs >= 1);
    port.occupied_vcs as f64 / port.total_vcs as f64
}

/// Assemble the E, N, W and S frames of one feature from a snapshot.
pub fn build_frames(snapshot: &Snapshot, kind: FeatureKind) -> Result<[FeatureFrame; 4]> {
    let r = snapshot.radix;
    if snapshot.ports.len() != r * r {
        return Err(Error::Integrity(format!(
            "snapshot covers {} routers, mesh has {}",
            snapshot.ports.len(),
            r * r
        )));
    }
    let build = |direction: Direction| -> Result<FeatureFrame> {
        let mut frame = FeatureFrame::zeros(direction, kind, r, snapshot.window_index);
        for row in 0..frame.rows {
            for col in 0..frame.cols {
                let node = frame_node(direction, r, row, col);
                let counters = snapshot.ports[node.0][direction.index()].ok_or_else(|| {
                    Error::Integrity(format!(
                        "router {node} has no counters for its {direction} port"
                    ))
                })?;
                frame.values[row * frame.cols + col] = match kind {
                    FeatureKind::Vco => sample_vco(&counters),
                    FeatureKind::Boc => counters.boc_window as f64,
                };
            }
        }
        Ok(frame)
    };
    Ok([
        build(Direction::E)?,
        build(Direction::N)?,
        build(Direction::W)?,
        build(Direction::S)?,
    ])
}

/// Per-frame min-max scaling to `[0, 1]`; a constant frame maps to zeros.
pub fn normalize_boc(frame: &FeatureFrame) -> FeatureFrame {
    let (lo, hi) = frame
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let mut out = frame.clone();
    if frame.values.is_empty() || hi <= lo {
        out.values.iter_mut().for_each(|v| *v = 0.0);
    } else {
        let span = hi - lo;
        out.values.iter_mut().for_each(|v| *v = (*v - lo) / span);
    }
    out
}

/// Expected telemetry footprint of the attacks in a window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub radix: usize,
    pub attack: bool,
    /// One `R x R` node-indexed 0/1 mask per direction (E, N, W, S).
    pub masks: [Vec<u8>; 4],
    pub victims: BTreeSet<NodeId>,
    pub attackers: BTreeSet<NodeId>,
    pub target_victim: Option<NodeId>,
}

impl GroundTruth {
    pub fn empty(radix: usize) -> Self {
        GroundTruth {
            radix,
            attack: false,
            masks: std::array::from_fn(|_| vec![0; radix * radix]),
            victims: BTreeSet::new(),
            attackers: BTreeSet::new(),
            target_victim: None,
        }
    }

    pub fn mask(&self, direction: Direction) -> &[u8] {
        &self.masks[direction.index()]
    }
}

/// Masks from replaying `xy_route(attacker, target_victim)` for every attacker.
pub fn route_ground_truth(
    radix: usize,
    attackers: &[NodeId],
    target_victim: NodeId,
) -> Result<GroundTruth> {
    let mut gt = GroundTruth::empty(radix);
    for &a in attackers {
        for (node, entry) in xy_route(a, target_victim, radix)? {
            if let Entry::Port(d) = entry {
                gt.masks[d.index()][node.0] = 1;
                gt.victims.insert(node);
            }
        }
        gt.attackers.insert(a);
    }
    if !attackers.is_empty() {
        gt.attack = true;
        gt.target_victim = Some(target_victim);
    }
    Ok(gt)
}

/// Ground truth implied by a scenario's configuration: every attacker with a
/// positive FIR floods the target victim.
pub fn ground_truth_masks(scenario: &ScenarioConfig) -> Result<GroundTruth> {
    let attackers: Vec<NodeId> = scenario
        .attackers
        .iter()
        .filter(|a| a.fir > 0.0)
        .map(|a| a.node)
        .collect();
    route_ground_truth(scenario.mesh.radix, &attackers, scenario.target_victim)
}

/// Ground truth of one simulated window. The label follows the evidence in
/// the window; masks replay the routes of the nodes that flooded during it.
pub fn window_ground_truth(scenario: &ScenarioConfig, snapshot: &Snapshot) -> Result<GroundTruth> {
    let attack = snapshot.is_attack();
    if !attack {
        return Ok(GroundTruth::empty(snapshot.radix));
    }
    let mut gt = route_ground_truth(
        snapshot.radix,
        &snapshot.flooding_nodes(),
        scenario.target_victim,
    )?;
    gt.attack = true;
    Ok(gt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Attacker, MeshConfig, Simulator};

    #[test]
    fn vco_ratios() {
        let p = |o| PortCounters {
            occupied_vcs: o,
            total_vcs: 4,
            boc_window: 0,
        };
        assert_eq!(sample_vco(&p(0)), 0.0);
        assert_eq!(sample_vco(&p(4)), 1.0);
        assert_eq!(sample_vco(&p(3)), 0.75);
    }

    #[test]
    fn normalization_rules() {
        let mut f = FeatureFrame::zeros(Direction::E, FeatureKind::Boc, 2, 0);
        assert_eq!(normalize_boc(&f).values, vec![0.0, 0.0]);
        f.values = vec![7.0, 7.0];
        assert_eq!(normalize_boc(&f).values, vec![0.0, 0.0]);
        let mut f = FeatureFrame::zeros(Direction::E, FeatureKind::Boc, 4, 0);
        f.values = vec![0.0; 12];
        f.values[1] = 50.0;
        f.values[2] = 100.0;
        let n = normalize_boc(&f);
        assert_eq!(&n.values[..3], &[0.0, 0.5, 1.0]);
        assert_eq!(normalize_boc(&n), n);
    }

    #[test]
    fn frame_shapes_and_padding() {
        let r = 16;
        for d in Direction::ALL {
            let f = FeatureFrame::zeros(d, FeatureKind::Vco, r, 0);
            assert_eq!(f.values.len(), 240);
            assert_eq!(f.padded().len(), 256);
        }
        assert_eq!(frame_shape(Direction::E, r), (16, 15));
        assert_eq!(frame_shape(Direction::S, r), (15, 16));

        // Each entry maps to a router that really has the port, and padding
        // puts a zero line on the side without the port.
        let r = 4;
        for d in Direction::ALL {
            let mut f = FeatureFrame::zeros(d, FeatureKind::Boc, r, 0);
            f.values.iter_mut().for_each(|v| *v = 1.0);
            let p = f.padded();
            for (id, v) in p.iter().enumerate() {
                let exists = d.port_exists(NodeId(id), r);
                assert_eq!(*v == 1.0, exists, "{d} node {id}");
            }
            assert_eq!(
                FeatureFrame::from_padded(d, FeatureKind::Boc, r, 0, &p).unwrap(),
                f
            );
        }
    }

    #[test]
    fn ground_truth_l_route() {
        let gt = route_ground_truth(16, &[NodeId(39)], NodeId(3)).unwrap();
        let support =
            |d: Direction| -> Vec<usize> { (0..256).filter(|&i| gt.mask(d)[i] == 1).collect() };
        assert_eq!(support(Direction::E), vec![35, 36, 37, 38]);
        assert_eq!(support(Direction::N), vec![3, 19]);
        assert!(support(Direction::W).is_empty() && support(Direction::S).is_empty());
        let victims: Vec<usize> = gt.victims.iter().map(|n| n.0).collect();
        assert_eq!(victims, vec![3, 19, 35, 36, 37, 38]);
        assert!(gt.attack);
    }

    #[test]
    fn ground_truth_opposite_attackers() {
        let gt = route_ground_truth(8, &[NodeId(7), NodeId(1)], NodeId(4)).unwrap();
        assert!(gt.mask(Direction::E).contains(&1));
        assert!(gt.mask(Direction::W).contains(&1));
        let empty = ground_truth_masks(&ScenarioConfig::default()).unwrap();
        assert!(!empty.attack);
        assert!(empty.masks.iter().flatten().all(|&v| v == 0));
    }

    #[test]
    fn missing_port_counter_is_an_integrity_error() {
        let cfg = ScenarioConfig {
            mesh: MeshConfig {
                radix: 4,
                ..MeshConfig::default()
            },
            normal_rate: 0.0,
            ..ScenarioConfig::default()
        };
        let mut sim = Simulator::new(&cfg).unwrap();
        let mut snap = sim.snapshot();
        let frames = build_frames(&snap, FeatureKind::Vco).unwrap();
        assert!(frames.iter().all(|f| f.values.iter().all(|&v| v == 0.0)));
        snap.ports[5][Direction::N.index()] = None;
        assert!(matches!(
            build_frames(&snap, FeatureKind::Boc),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn westbound_flood_lights_up_one_row_of_the_east_frame() {
        let cfg = ScenarioConfig {
            mesh: MeshConfig {
                radix: 16,
                ..MeshConfig::default()
            },
            normal_rate: 0.0,
            attackers: vec![Attacker {
                node: NodeId(2 * 16 + 12),
                fir: 0.8,
            }],
            target_victim: NodeId(2 * 16 + 3),
            warmup_cycles: 200,
            sample_period: 500,
            ..ScenarioConfig::default()
        };
        let mut sim = Simulator::new(&cfg).unwrap();
        sim.warm_up();
        let snap = sim.advance_window();
        let frames = build_frames(&snap, FeatureKind::Boc).unwrap();
        let gt = window_ground_truth(&cfg, &snap).unwrap();
        for (d, frame) in Direction::ALL.iter().zip(frames.iter()) {
            let padded = frame.padded();
            for (id, (v, m)) in padded.iter().zip(gt.mask(*d)).enumerate() {
                assert_eq!(*v > 0.0, *m == 1, "{d} node {id}");
            }
        }
        let e = &frames[0];
        for row in 0..16 {
            for col in 0..15 {
                assert_eq!(e.get(row, col) > 0.0, row == 2 && (3..12).contains(&col));
            }
        }
    }
}
