//! Cycle-level mesh NoC simulator.
//!
//! Wormhole switching with credit-based flow control, `vcs_per_port` virtual
//! channels per input port and XY routing. Every router hop takes one cycle:
//! route computation, VC allocation, switch allocation and link traversal are
//! collapsed into a single stage. One cycle proceeds as
//!
//! 1. packet generation into per-node source queues (background traffic, then
//!    flooding attackers),
//! 2. VC and switch allocation for every router against the state at the
//!    start of the cycle (separable, input-first, round-robin),
//! 3. flit moves: buffer reads, link traversal into the downstream buffer or
//!    ejection; credits freed here become usable next cycle,
//! 4. each network interface binds queued packets to free local input VCs
//!    and writes at most one flit, rotating over its bound packets.
//!
//! A flit written in cycle `t` can move in cycle `t + 1` at the earliest, so
//! an uncontended packet of `F` flits over `H` hops is delivered
//! `H + F` cycles after it was generated.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::{xy_next_hop, Direction, NodeId};
use crate::telemetry::{PortCounters, Snapshot};
use crate::traffic::{stp_destination, Pattern};

const LOCAL: usize = 4;
const PORTS: usize = 5;
const EJECT: u8 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct MeshConfig {
    pub radix: usize,
    pub vcs_per_port: usize,
    pub buffer_depth: usize,
    pub flits_per_packet: usize,
    pub seed: u64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            radix: 16,
            vcs_per_port: 4,
            buffer_depth: 4,
            flits_per_packet: 5,
            seed: 1,
        }
    }
}

impl MeshConfig {
    pub fn nodes(&self) -> usize {
        self.radix * self.radix
    }

    pub fn validate(&self) -> Result<()> {
        if self.radix < 2 {
            return Err(Error::Config(format!(
                "mesh radix must be >= 2, got {}",
                self.radix
            )));
        }
        if self.vcs_per_port == 0 || self.vcs_per_port > u8::MAX as usize {
            return Err(Error::Config("vcs_per_port must be in 1..=255".into()));
        }
        if self.buffer_depth == 0 {
            return Err(Error::Config("buffer_depth must be >= 1".into()));
        }
        if self.flits_per_packet == 0 || self.flits_per_packet > u16::MAX as usize {
            return Err(Error::Config(
                "flits_per_packet must be in 1..=65535".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attacker {
    pub node: NodeId,
    /// Per-cycle probability of generating one malicious packet.
    pub fir: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub mesh: MeshConfig,
    pub pattern: Pattern,
    pub normal_rate: f64,
    pub attackers: Vec<Attacker>,
    pub target_victim: NodeId,
    pub warmup_cycles: u64,
    pub run_cycles: u64,
    pub sample_period: u64,
    /// After the run, keep stepping without new traffic until every packet
    /// generated in the measurement interval is delivered, or this many
    /// extra cycles elapse. Zero disables draining.
    pub drain_cycles: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            mesh: MeshConfig::default(),
            pattern: Pattern::UniformRandom,
            normal_rate: 0.01,
            attackers: Vec::new(),
            target_victim: NodeId(0),
            warmup_cycles: 1000,
            run_cycles: 10_000,
            sample_period: 1000,
            drain_cycles: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.mesh.validate()?;
        let radix = self.mesh.radix;
        self.pattern.check_radix(radix)?;
        if !(0.0..=1.0).contains(&self.normal_rate) {
            return Err(Error::Config(format!(
                "normal injection rate {} outside [0, 1]",
                self.normal_rate
            )));
        }
        if self.sample_period == 0 {
            return Err(Error::Config("sample_period must be >= 1".into()));
        }
        NodeId::new(self.target_victim.0, radix)?;
        for (i, a) in self.attackers.iter().enumerate() {
            NodeId::new(a.node.0, radix)?;
            if !(0.0..=1.0).contains(&a.fir) {
                return Err(Error::Config(format!("FIR {} outside [0, 1]", a.fir)));
            }
            if a.node == self.target_victim {
                return Err(Error::Config(format!(
                    "attacker {} is the target victim",
                    a.node
                )));
            }
            if self.attackers[..i].iter().any(|b| b.node == a.node) {
                return Err(Error::Config(format!("attacker {} listed twice", a.node)));
            }
        }
        Ok(())
    }

    pub fn is_attack(&self) -> bool {
        self.attackers.iter().any(|a| a.fir > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrafficClass {
    Normal,
    Malicious,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    pub src: NodeId,
    pub dst: NodeId,
    pub inject_cycle: u64,
    pub deliver_cycle: u64,
    pub malicious: bool,
}

impl Delivery {
    pub fn latency(&self) -> u64 {
        self.deliver_cycle - self.inject_cycle
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub radix: usize,
    pub warmup_cycles: u64,
    pub windows: Vec<Snapshot>,
    /// Packets generated after warmup, in delivery order.
    pub deliveries: Vec<Delivery>,
    pub injected_per_cycle: Vec<u32>,
    pub delivered_per_cycle: Vec<u32>,
}

impl SimTrace {
    pub fn average_latency(&self, class: TrafficClass) -> Option<f64> {
        average_latency(self, class)
    }

    pub fn write_deliveries_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "src,dst,inject_cycle,deliver_cycle,malicious")?;
        for d in &self.deliveries {
            writeln!(
                w,
                "{},{},{},{},{}",
                d.src, d.dst, d.inject_cycle, d.deliver_cycle, d.malicious as u8
            )?;
        }
        Ok(())
    }
}

/// Mean delivery latency of a traffic class; `None` when the class has no
/// delivered packets.
pub fn average_latency(trace: &SimTrace, class: TrafficClass) -> Option<f64> {
    let mut n = 0u64;
    let mut sum = 0u64;
    for d in &trace.deliveries {
        let keep = match class {
            TrafficClass::Normal => !d.malicious,
            TrafficClass::Malicious => d.malicious,
            TrafficClass::All => true,
        };
        if keep {
            n += 1;
            sum += d.latency();
        }
    }
    (n > 0).then(|| sum as f64 / n as f64)
}

#[derive(Debug, Clone)]
struct Packet {
    src: NodeId,
    dst: NodeId,
    inject_cycle: u64,
    malicious: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Flit {
    packet: u32,
    seq: u16,
    tail: bool,
}

#[derive(Debug, Clone, Default)]
struct InputVc {
    buf: VecDeque<Flit>,
    /// Packet holding this VC, from head allocation until its tail leaves.
    owner: Option<u32>,
    /// Output port (`EJECT` for local) and downstream VC once routed.
    route: Option<(u8, u8)>,
}

#[derive(Debug, Clone, Copy)]
struct Move {
    node: usize,
    in_port: usize,
    vc: usize,
    out: u8,
    out_vc: u8,
}

#[derive(Debug, Clone)]
struct AttackerState {
    node: NodeId,
    fir: f64,
    quarantined: bool,
}

#[derive(Debug, Clone, Copy)]
struct Injection {
    packet: u32,
    vc: usize,
    sent: u16,
}

/// One simulator instance. Single-threaded; independent instances share no state.
#[derive(Debug, Clone)]
pub struct Simulator {
    cfg: ScenarioConfig,
    radix: usize,
    vcs: usize,
    depth: usize,
    flits_per_packet: u16,
    cycle: u64,
    generating: bool,

    packets: Vec<Packet>,
    vcs_state: Vec<InputVc>,
    /// Free slots in the downstream VC, indexed by (node, output dir, vc).
    credits: Vec<u32>,
    in_rr: Vec<usize>,
    out_rr: Vec<usize>,
    va_rr: Vec<usize>,
    node_flits: Vec<u32>,

    source_queues: Vec<VecDeque<u32>>,
    /// Packets being written into local VCs, at most one per VC.
    injecting: Vec<Vec<Injection>>,
    ni_rr: Vec<usize>,
    attackers: Vec<AttackerState>,
    traffic_rng: ChaCha8Rng,
    attack_rng: ChaCha8Rng,

    boc: Vec<[u64; 4]>,
    malicious_ops: Vec<[u64; 4]>,
    malicious_injected: Vec<u64>,
    window_index: usize,
    window_start: u64,

    injected_flits: u64,
    delivered_flits: u64,
    ejected_seq: Vec<u16>,
    deliveries: Vec<Delivery>,
    measure_from: u64,
    measure_until: u64,
    outstanding_measured: u64,
    injected_per_cycle: Vec<u32>,
    delivered_per_cycle: Vec<u32>,
    route_log: Option<Vec<Vec<NodeId>>>,
}

impl Simulator {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let radix = cfg.mesh.radix;
        let nodes = radix * radix;
        let vcs = cfg.mesh.vcs_per_port;
        let depth = cfg.mesh.buffer_depth;
        let seed = cfg.mesh.seed;
        let mut traffic_rng = ChaCha8Rng::seed_from_u64(seed);
        traffic_rng.set_stream(0);
        let mut attack_rng = ChaCha8Rng::seed_from_u64(seed);
        attack_rng.set_stream(1);
        Ok(Simulator {
            cfg: cfg.clone(),
            radix,
            vcs,
            depth,
            flits_per_packet: cfg.mesh.flits_per_packet as u16,
            cycle: 0,
            generating: true,
            packets: Vec::new(),
            vcs_state: vec![InputVc::default(); nodes * PORTS * vcs],
            credits: vec![depth as u32; nodes * 4 * vcs],
            in_rr: vec![0; nodes * PORTS],
            out_rr: vec![0; nodes * PORTS],
            va_rr: vec![0; nodes * 4],
            node_flits: vec![0; nodes],
            source_queues: vec![VecDeque::new(); nodes],
            injecting: vec![Vec::new(); nodes],
            ni_rr: vec![0; nodes],
            attackers: cfg
                .attackers
                .iter()
                .map(|a| AttackerState {
                    node: a.node,
                    fir: a.fir,
                    quarantined: false,
                })
                .collect(),
            traffic_rng,
            attack_rng,
            boc: vec![[0; 4]; nodes],
            malicious_ops: vec![[0; 4]; nodes],
            malicious_injected: vec![0; nodes],
            window_index: 0,
            window_start: 0,
            injected_flits: 0,
            delivered_flits: 0,
            ejected_seq: Vec::new(),
            deliveries: Vec::new(),
            measure_from: cfg.warmup_cycles,
            measure_until: cfg.warmup_cycles.saturating_add(cfg.run_cycles),
            outstanding_measured: 0,
            injected_per_cycle: Vec::new(),
            delivered_per_cycle: Vec::new(),
            route_log: None,
        })
    }

    /// Record the routers every head flit visits so delivered packets can be
    /// checked against `xy_route`.
    pub fn enable_route_log(&mut self) {
        self.route_log = Some(Vec::new());
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn deliveries(&self) -> &[Delivery] {
        &self.deliveries
    }

    pub fn injected_flits(&self) -> u64 {
        self.injected_flits
    }

    pub fn delivered_flits(&self) -> u64 {
        self.delivered_flits
    }

    pub fn flits_in_network(&self) -> u64 {
        self.node_flits.iter().map(|&n| n as u64).sum()
    }

    /// Packets waiting in a source queue, not yet started.
    pub fn queued_packets(&self, node: NodeId) -> usize {
        self.source_queues[node.0].len()
    }

    /// Stop generating new traffic (normal and malicious).
    pub fn stop_generation(&mut self) {
        self.generating = false;
    }

    /// Manually enqueue a packet at `src`; used for hand-traced tests and tools.
    pub fn enqueue_packet(&mut self, src: NodeId, dst: NodeId, malicious: bool) -> Result<()> {
        NodeId::new(src.0, self.radix)?;
        NodeId::new(dst.0, self.radix)?;
        if src == dst {
            return Err(Error::Config("packet source equals destination".into()));
        }
        self.push_packet(src, dst, malicious);
        Ok(())
    }

    /// Halt an attacker's flooding: queued malicious packets that have not
    /// started injection are discarded and no new ones are generated. A
    /// packet already entering the network completes normally.
    pub fn quarantine(&mut self, node: NodeId) -> bool {
        let mut hit = false;
        for a in self.attackers.iter_mut().filter(|a| a.node == node) {
            a.quarantined = true;
            hit = true;
        }
        if hit {
            let packets = &self.packets;
            self.source_queues[node.0].retain(|&p| !packets[p as usize].malicious);
        }
        hit
    }

    pub fn active_attackers(&self) -> Vec<NodeId> {
        self.attackers
            .iter()
            .filter(|a| !a.quarantined && a.fir > 0.0)
            .map(|a| a.node)
            .collect()
    }

    fn vc_index(&self, node: usize, port: usize, vc: usize) -> usize {
        (node * PORTS + port) * self.vcs + vc
    }

    fn credit_index(&self, node: usize, dir: usize, vc: usize) -> usize {
        (node * 4 + dir) * self.vcs + vc
    }

    fn push_packet(&mut self, src: NodeId, dst: NodeId, malicious: bool) {
        let id = self.packets.len() as u32;
        self.packets.push(Packet {
            src,
            dst,
            inject_cycle: self.cycle,
            malicious,
        });
        self.ejected_seq.push(0);
        if let Some(log) = self.route_log.as_mut() {
            log.push(Vec::new());
        }
        if (self.measure_from..self.measure_until).contains(&self.cycle) {
            self.outstanding_measured += 1;
        }
        self.source_queues[src.0].push_back(id);
    }

    fn generate(&mut self) {
        let radix = self.radix;
        if self.cfg.normal_rate > 0.0 {
            for n in 0..radix * radix {
                if self.traffic_rng.gen::<f64>() < self.cfg.normal_rate {
                    let src = NodeId(n);
                    let dst = stp_destination(self.cfg.pattern, src, radix, &mut self.traffic_rng)
                        .expect("pattern validated at construction");
                    if dst != src {
                        self.push_packet(src, dst, false);
                    }
                }
            }
        }
        let tv = self.cfg.target_victim;
        for i in 0..self.attackers.len() {
            let a = &self.attackers[i];
            if a.fir <= 0.0 {
                continue;
            }
            let fire = self.attack_rng.gen::<f64>() < a.fir;
            if fire && !a.quarantined {
                let src = a.node;
                self.push_packet(src, tv, true);
            }
        }
    }

    /// Advance the simulation by one cycle.
    pub fn step(&mut self) {
        if self.generating {
            self.generate();
        }
        let moves = self.allocate();
        let delivered = self.apply(&moves);
        let injected = self.inject();
        self.injected_per_cycle.push(injected);
        self.delivered_per_cycle.push(delivered);
        self.cycle += 1;
    }

    fn allocate(&mut self) -> Vec<Move> {
        let radix = self.radix;
        let vcs = self.vcs;
        let mut moves = Vec::new();
        let mut in_req: [Option<(usize, u8)>; PORTS] = [None; PORTS];
        for node in 0..radix * radix {
            if self.node_flits[node] == 0 {
                continue;
            }
            let here = NodeId(node);

            // Route computation and VC allocation for waiting head flits.
            for out in 0..4 {
                let dir = Direction::from_index(out).unwrap();
                let Some(down) = here.neighbor(dir, radix) else {
                    continue;
                };
                let down_port = dir.opposite().index();
                let start = self.va_rr[node * 4 + out];
                let mut next_free = 0usize;
                for k in 0..PORTS * vcs {
                    let q = (start + k) % (PORTS * vcs);
                    let (port, vc) = (q / vcs, q % vcs);
                    let idx = self.vc_index(node, port, vc);
                    let ivc = &self.vcs_state[idx];
                    if ivc.route.is_some() {
                        continue;
                    }
                    let Some(front) = ivc.buf.front() else {
                        continue;
                    };
                    debug_assert_eq!(front.seq, 0, "unrouted VC must start with a head");
                    let dst = self.packets[front.packet as usize].dst;
                    if xy_next_hop(here, dst, radix) != Some(dir) {
                        continue;
                    }
                    while next_free < vcs
                        && self.vcs_state[self.vc_index(down.0, down_port, next_free)]
                            .owner
                            .is_some()
                    {
                        next_free += 1;
                    }
                    if next_free == vcs {
                        break;
                    }
                    let packet = front.packet;
                    let didx = self.vc_index(down.0, down_port, next_free);
                    self.vcs_state[didx].owner = Some(packet);
                    self.vcs_state[idx].route = Some((out as u8, next_free as u8));
                    self.va_rr[node * 4 + out] = q + 1;
                    next_free += 1;
                }
            }
            for port in 0..PORTS {
                for vc in 0..vcs {
                    let idx = self.vc_index(node, port, vc);
                    let ivc = &self.vcs_state[idx];
                    if ivc.route.is_none() {
                        if let Some(front) = ivc.buf.front() {
                            let dst = self.packets[front.packet as usize].dst;
                            if xy_next_hop(here, dst, radix).is_none() {
                                self.vcs_state[idx].route = Some((EJECT, 0));
                            }
                        }
                    }
                }
            }

            // Switch allocation, input stage.
            for (port, req) in in_req.iter_mut().enumerate() {
                *req = None;
                let start = self.in_rr[node * PORTS + port];
                for k in 0..vcs {
                    let vc = (start + k) % vcs;
                    let ivc = &self.vcs_state[self.vc_index(node, port, vc)];
                    if ivc.buf.is_empty() {
                        continue;
                    }
                    let Some((out, ovc)) = ivc.route else {
                        continue;
                    };
                    if out != EJECT
                        && self.credits[self.credit_index(node, out as usize, ovc as usize)] == 0
                    {
                        continue;
                    }
                    *req = Some((vc, out));
                    break;
                }
            }
            // Output stage.
            for out in 0..PORTS as u8 {
                let start = self.out_rr[node * PORTS + out as usize];
                for k in 0..PORTS {
                    let port = (start + k) % PORTS;
                    let Some((vc, o)) = in_req[port] else {
                        continue;
                    };
                    if o != out {
                        continue;
                    }
                    let (_, out_vc) = self.vcs_state[self.vc_index(node, port, vc)].route.unwrap();
                    moves.push(Move {
                        node,
                        in_port: port,
                        vc,
                        out,
                        out_vc,
                    });
                    self.out_rr[node * PORTS + out as usize] = port + 1;
                    self.in_rr[node * PORTS + port] = vc + 1;
                    break;
                }
            }
        }
        moves
    }

    fn apply(&mut self, moves: &[Move]) -> u32 {
        let radix = self.radix;
        let mut delivered = 0u32;
        for m in moves {
            let idx = self.vc_index(m.node, m.in_port, m.vc);
            let flit = self.vcs_state[idx]
                .buf
                .pop_front()
                .expect("granted VC has a flit");
            self.node_flits[m.node] -= 1;
            let malicious = self.packets[flit.packet as usize].malicious;
            if m.in_port < LOCAL {
                self.boc[m.node][m.in_port] += 1;
                if malicious {
                    self.malicious_ops[m.node][m.in_port] += 1;
                }
                let side = Direction::from_index(m.in_port).unwrap();
                let up = NodeId(m.node)
                    .neighbor(side, radix)
                    .expect("input port has a neighbor");
                let cidx = self.credit_index(up.0, side.opposite().index(), m.vc);
                self.credits[cidx] += 1;
            }
            if flit.tail {
                let ivc = &mut self.vcs_state[idx];
                ivc.owner = None;
                ivc.route = None;
            }
            if m.out == EJECT {
                delivered += 1;
                self.delivered_flits += 1;
                let expected = &mut self.ejected_seq[flit.packet as usize];
                assert_eq!(
                    *expected, flit.seq,
                    "flits of a packet ejected out of order"
                );
                *expected += 1;
                if flit.seq == 0 {
                    self.log_hop(flit.packet, NodeId(m.node));
                }
                if flit.tail {
                    self.record_delivery(flit.packet);
                }
            } else {
                let dir = Direction::from_index(m.out as usize).unwrap();
                let down = NodeId(m.node).neighbor(dir, radix).unwrap();
                let dport = dir.opposite().index();
                let didx = self.vc_index(down.0, dport, m.out_vc as usize);
                debug_assert_eq!(self.vcs_state[didx].owner, Some(flit.packet));
                self.vcs_state[didx].buf.push_back(flit);
                let cidx = self.credit_index(m.node, m.out as usize, m.out_vc as usize);
                self.credits[cidx] -= 1;
                self.node_flits[down.0] += 1;
                self.boc[down.0][dport] += 1;
                if malicious {
                    self.malicious_ops[down.0][dport] += 1;
                }
                if flit.seq == 0 {
                    self.log_hop(flit.packet, NodeId(m.node));
                }
            }
        }
        delivered
    }

    fn log_hop(&mut self, packet: u32, at: NodeId) {
        if let Some(log) = self.route_log.as_mut() {
            log[packet as usize].push(at);
        }
    }

    fn record_delivery(&mut self, packet: u32) {
        let p = &self.packets[packet as usize];
        if let Some(log) = self.route_log.as_ref() {
            let expected: Vec<NodeId> = crate::mesh::xy_route(p.src, p.dst, self.radix)
                .expect("valid ids")
                .into_iter()
                .map(|(n, _)| n)
                .collect();
            assert_eq!(log[packet as usize], expected, "packet left its XY route");
        }
        if p.inject_cycle >= self.measure_from {
            self.deliveries.push(Delivery {
                src: p.src,
                dst: p.dst,
                inject_cycle: p.inject_cycle,
                deliver_cycle: self.cycle,
                malicious: p.malicious,
            });
        }
        if (self.measure_from..self.measure_until).contains(&p.inject_cycle) {
            self.outstanding_measured -= 1;
        }
    }

    /// Network interfaces: queued packets claim free local VCs (one packet per
    /// VC), then each NI writes one flit per cycle, rotating over its active
    /// packets so their flits interleave.
    fn inject(&mut self) -> u32 {
        let mut injected = 0;
        for node in 0..self.radix * self.radix {
            while let Some(&packet) = self.source_queues[node].front() {
                let free = (0..self.vcs).find(|&vc| {
                    let ivc = &self.vcs_state[self.vc_index(node, LOCAL, vc)];
                    ivc.owner.is_none() && ivc.buf.is_empty()
                });
                let Some(vc) = free else {
                    break;
                };
                self.source_queues[node].pop_front();
                let idx = self.vc_index(node, LOCAL, vc);
                self.vcs_state[idx].owner = Some(packet);
                self.injecting[node].push(Injection {
                    packet,
                    vc,
                    sent: 0,
                });
            }
            let start = self.ni_rr[node];
            let pick = self.injecting[node]
                .iter()
                .enumerate()
                .filter(|(_, inj)| {
                    self.vcs_state[self.vc_index(node, LOCAL, inj.vc)].buf.len() < self.depth
                })
                .min_by_key(|(_, inj)| (inj.vc + self.vcs - start) % self.vcs)
                .map(|(i, _)| i);
            let Some(i) = pick else {
                continue;
            };
            let inj = &mut self.injecting[node][i];
            let (packet, vc, seq) = (inj.packet, inj.vc, inj.sent);
            inj.sent += 1;
            let tail = seq + 1 == self.flits_per_packet;
            if tail {
                self.injecting[node].swap_remove(i);
            }
            self.ni_rr[node] = (vc + 1) % self.vcs;
            let idx = self.vc_index(node, LOCAL, vc);
            self.vcs_state[idx]
                .buf
                .push_back(Flit { packet, seq, tail });
            self.node_flits[node] += 1;
            self.injected_flits += 1;
            injected += 1;
            if self.packets[packet as usize].malicious {
                self.malicious_injected[node] += 1;
            }
        }
        injected
    }

    /// Step through warmup and clear window counters so the first sampling
    /// window starts clean.
    pub fn warm_up(&mut self) {
        while self.cycle < self.cfg.warmup_cycles {
            self.step();
        }
        self.reset_window();
    }

    fn reset_window(&mut self) {
        self.boc.iter_mut().for_each(|c| *c = [0; 4]);
        self.malicious_ops.iter_mut().for_each(|c| *c = [0; 4]);
        self.malicious_injected.iter_mut().for_each(|c| *c = 0);
        self.window_start = self.cycle;
    }

    /// Run one sampling period and return the window's telemetry.
    pub fn advance_window(&mut self) -> Snapshot {
        for _ in 0..self.cfg.sample_period {
            self.step();
        }
        self.snapshot()
    }

    /// Counters at the current instant; BOC covers the cycles since the last
    /// window boundary. Starts a new window.
    pub fn snapshot(&mut self) -> Snapshot {
        let radix = self.radix;
        let mut ports = Vec::with_capacity(radix * radix);
        for node in 0..radix * radix {
            let mut per_dir = [None; 4];
            for dir in Direction::ALL {
                if !dir.port_exists(NodeId(node), radix) {
                    continue;
                }
                let occupied = (0..self.vcs)
                    .filter(|&vc| {
                        !self.vcs_state[self.vc_index(node, dir.index(), vc)]
                            .buf
                            .is_empty()
                    })
                    .count();
                per_dir[dir.index()] = Some(PortCounters {
                    occupied_vcs: occupied as u32,
                    total_vcs: self.vcs as u32,
                    boc_window: self.boc[node][dir.index()],
                });
            }
            ports.push(per_dir);
        }
        let snap = Snapshot {
            window_index: self.window_index,
            start_cycle: self.window_start,
            end_cycle: self.cycle,
            radix,
            ports,
            malicious_ops: self.malicious_ops.clone(),
            malicious_injected: self
                .malicious_injected
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(n, &c)| (NodeId(n), c))
                .collect(),
            active_attackers: self.active_attackers(),
        };
        self.window_index += 1;
        self.reset_window();
        snap
    }

    /// Structural invariants: flit conservation, credit soundness and
    /// single-packet VC contents.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let radix = self.radix;
        let in_net = self.flits_in_network();
        if self.injected_flits != in_net + self.delivered_flits {
            return Err(format!(
                "conservation: injected {} != in network {} + delivered {}",
                self.injected_flits, in_net, self.delivered_flits
            ));
        }
        for node in 0..radix * radix {
            let buffered: usize = (0..PORTS * self.vcs)
                .map(|k| self.vcs_state[node * PORTS * self.vcs + k].buf.len())
                .sum();
            if buffered != self.node_flits[node] as usize {
                return Err(format!("router {node}: flit count out of sync"));
            }
            for dir in Direction::ALL {
                let Some(down) = NodeId(node).neighbor(dir, radix) else {
                    continue;
                };
                for vc in 0..self.vcs {
                    let credit = self.credits[self.credit_index(node, dir.index(), vc)] as usize;
                    let occ = self.vcs_state[self.vc_index(down.0, dir.opposite().index(), vc)]
                        .buf
                        .len();
                    if credit + occ != self.depth {
                        return Err(format!(
                            "credits {node}->{} vc {vc}: {credit} + {occ} != {}",
                            down.0, self.depth
                        ));
                    }
                }
            }
            for k in 0..PORTS * self.vcs {
                let ivc = &self.vcs_state[node * PORTS * self.vcs + k];
                if ivc.buf.len() > self.depth {
                    return Err(format!("router {node}: VC over capacity"));
                }
                let mut prev: Option<u16> = None;
                for f in &ivc.buf {
                    if Some(f.packet) != ivc.owner {
                        return Err(format!("router {node}: VC holds a foreign flit"));
                    }
                    if let Some(p) = prev {
                        if f.seq != p + 1 {
                            return Err(format!("router {node}: flits out of order"));
                        }
                    }
                    prev = Some(f.seq);
                }
            }
        }
        Ok(())
    }

    /// Steps with no new traffic until measured packets are delivered or
    /// `limit` cycles pass.
    pub fn drain(&mut self, limit: u64) {
        self.stop_generation();
        let stop = self.cycle + limit;
        while self.outstanding_measured > 0 && self.cycle < stop {
            self.step();
        }
    }

    pub fn into_trace(self, windows: Vec<Snapshot>) -> SimTrace {
        SimTrace {
            radix: self.radix,
            warmup_cycles: self.cfg.warmup_cycles,
            windows,
            deliveries: self.deliveries,
            injected_per_cycle: self.injected_per_cycle,
            delivered_per_cycle: self.delivered_per_cycle,
        }
    }
}

/// Run a whole scenario: warmup, `run_cycles / sample_period` sampling
/// windows, leftover cycles, then the optional drain.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<SimTrace> {
    let mut sim = Simulator::new(cfg)?;
    sim.warm_up();
    let windows = (cfg.run_cycles / cfg.sample_period) as usize;
    let mut snaps = Vec::with_capacity(windows);
    for _ in 0..windows {
        snaps.push(sim.advance_window());
    }
    let end = cfg.warmup_cycles + cfg.run_cycles;
    while sim.cycle() < end {
        sim.step();
    }
    if cfg.drain_cycles > 0 {
        sim.drain(cfg.drain_cycles);
    }
    Ok(sim.into_trace(snaps))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(radix: usize) -> ScenarioConfig {
        ScenarioConfig {
            mesh: MeshConfig {
                radix,
                ..MeshConfig::default()
            },
            normal_rate: 0.0,
            warmup_cycles: 0,
            run_cycles: 100,
            sample_period: 50,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn idle_network_only_advances_clock() {
        let mut sim = Simulator::new(&quiet(4)).unwrap();
        for _ in 0..25 {
            sim.step();
        }
        assert_eq!(sim.cycle(), 25);
        assert_eq!(sim.injected_flits(), 0);
        assert_eq!(sim.flits_in_network(), 0);
        let snap = sim.snapshot();
        assert!(snap
            .ports
            .iter()
            .flatten()
            .flatten()
            .all(|p| p.occupied_vcs == 0 && p.boc_window == 0));
    }

    #[test]
    fn single_packet_latency_is_hops_plus_flits() {
        // Hand trace, 0 -> 1 with 5 flits: head written at cycle 0, crosses
        // the link at 1, ejects at 2; the tail trails by 4 cycles -> cycle 6.
        let mut sim = Simulator::new(&quiet(4)).unwrap();
        sim.enable_route_log();
        sim.enqueue_packet(NodeId(0), NodeId(1), false).unwrap();
        for _ in 0..20 {
            sim.step();
            sim.check_invariants().unwrap();
        }
        assert_eq!(sim.deliveries().len(), 1);
        assert_eq!(sim.deliveries()[0].latency(), 6);

        let mut sim = Simulator::new(&quiet(16)).unwrap();
        sim.enable_route_log();
        sim.enqueue_packet(NodeId(39), NodeId(3), false).unwrap();
        for _ in 0..40 {
            sim.step();
        }
        assert_eq!(sim.deliveries()[0].latency(), 6 + 5);
    }

    #[test]
    fn single_flit_latency_respects_lower_bound() {
        let mut cfg = quiet(4);
        cfg.mesh.flits_per_packet = 1;
        let mut sim = Simulator::new(&cfg).unwrap();
        sim.enqueue_packet(NodeId(0), NodeId(15), false).unwrap();
        for _ in 0..20 {
            sim.step();
        }
        // 6 hops, latency = hops + 1
        assert_eq!(sim.deliveries()[0].latency(), 7);
    }

    #[test]
    fn saturating_flood_backs_up_the_attacker_queue() {
        let mut cfg = quiet(4);
        cfg.attackers = vec![Attacker {
            node: NodeId(3),
            fir: 1.0,
        }];
        cfg.target_victim = NodeId(0);
        let mut sim = Simulator::new(&cfg).unwrap();
        let mut link_busy = 0;
        let mut last_ops = 0;
        for c in 0..400 {
            sim.step();
            sim.check_invariants().unwrap();
            if c >= 200 {
                // E port of router 2 is the first hop after the attacker.
                let ops = sim.boc[2][Direction::E.index()];
                if ops >= last_ops + 2 {
                    link_busy += 1;
                }
                last_ops = ops;
            } else {
                last_ops = sim.boc[2][Direction::E.index()];
            }
        }
        // One write and one read per cycle on the first hop.
        assert_eq!(link_busy, 200);
        // Demand 5 flits/cycle against 1 flit/cycle of link bandwidth.
        assert!(sim.queued_packets(NodeId(3)) > 300);
    }

    #[test]
    fn conservation_under_load() {
        let mut cfg = quiet(8);
        cfg.normal_rate = 0.05;
        cfg.attackers = vec![Attacker {
            node: NodeId(63),
            fir: 0.8,
        }];
        cfg.target_victim = NodeId(9);
        let mut sim = Simulator::new(&cfg).unwrap();
        sim.enable_route_log();
        for _ in 0..1500 {
            sim.step();
            sim.check_invariants().unwrap();
        }
        assert!(sim.delivered_flits() > 1000);
    }

    #[test]
    fn quarantine_stops_new_malicious_packets() {
        let mut cfg = quiet(4);
        cfg.attackers = vec![Attacker {
            node: NodeId(3),
            fir: 0.9,
        }];
        cfg.target_victim = NodeId(12);
        let mut sim = Simulator::new(&cfg).unwrap();
        for _ in 0..200 {
            sim.step();
        }
        assert!(sim.quarantine(NodeId(3)));
        assert_eq!(sim.queued_packets(NodeId(3)), 0);
        for _ in 0..100 {
            sim.step();
        }
        sim.snapshot();
        for _ in 0..100 {
            sim.step();
        }
        let snap = sim.snapshot();
        assert!(snap.malicious_injected.is_empty());
        assert!(snap.active_attackers.is_empty());
        assert!(!sim.quarantine(NodeId(5)));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = quiet(4);
        cfg.attackers = vec![Attacker {
            node: NodeId(0),
            fir: 0.5,
        }];
        cfg.target_victim = NodeId(0);
        assert!(Simulator::new(&cfg).is_err());
        cfg.attackers = vec![Attacker {
            node: NodeId(1),
            fir: 1.5,
        }];
        assert!(Simulator::new(&cfg).is_err());
        cfg.attackers = vec![
            Attacker {
                node: NodeId(1),
                fir: 0.5,
            },
            Attacker {
                node: NodeId(1),
                fir: 0.2,
            },
        ];
        assert!(Simulator::new(&cfg).is_err());
        let mut cfg = quiet(6);
        cfg.pattern = Pattern::Shuffle;
        assert!(run_scenario(&cfg).is_err());
        let mut cfg = quiet(1);
        cfg.mesh.radix = 1;
        assert!(run_scenario(&cfg).is_err());
    }

    #[test]
    fn average_latency_classes() {
        let mut trace = SimTrace {
            radix: 4,
            warmup_cycles: 0,
            windows: vec![],
            deliveries: vec![Delivery {
                src: NodeId(0),
                dst: NodeId(1),
                inject_cycle: 3,
                deliver_cycle: 10,
                malicious: false,
            }],
            injected_per_cycle: vec![],
            delivered_per_cycle: vec![],
        };
        assert_eq!(average_latency(&trace, TrafficClass::Normal), Some(7.0));
        assert_eq!(average_latency(&trace, TrafficClass::Malicious), None);
        trace.deliveries.clear();
        assert_eq!(average_latency(&trace, TrafficClass::All), None);
    }
}
