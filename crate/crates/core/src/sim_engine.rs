//! Discrete-event core: a (time, seq)-ordered queue, closed-form vertical
//! kinematics, propagation-delayed delivery and the run loop that wires the
//! base station and node state machines together.
//!
//! Optical propagation delay is taken as zero. All randomness inside a run
//! comes from one generator consumed in event order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::{self, Write as _};
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::acoustic_frame::{decode, encode, Stage, SuperFrame};
use crate::bs_protocol::{
    sonar_scan, ArrivedBeam, BeamOutcome, BsConfig, BsState, NetworkId, SonarModel, TimeoutOutcome,
};
use crate::channel::{optical_received_power, OpticalLinkBudget, WaterProfile};
use crate::geometry::{angle_between, Position};
use crate::scenario::{self, ScenarioError, SimConfig, SimReport};
use crate::uwn_protocol::{Beam, BeamTarget, Lifecycle, UwnAction, UwnConfig, UwnState};

/// Everything the run loop needs, already validated.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub t_max: f64,
    pub superframe_period: f64,
    pub first_ping: f64,
    pub first_superframe: f64,
    /// Broadcast reach of the BS acoustic transmitter, meters.
    pub acoustic_range: f64,
    pub sonar: SonarModel,
    pub profile: WaterProfile,
    pub budget: OpticalLinkBudget,
    /// Half-angle of the BS optical receiver around straight down, rad.
    pub bs_fov_half_angle: f64,
    pub bs: BsConfig,
    pub uwn: UwnConfig,
    pub p_frame_loss: f64,
    /// Store-and-forward latency at a relay, seconds.
    pub relay_delay: f64,
    /// Horizontal water current `[east, north]`, m/s.
    pub current: [f64; 2],
    pub region: [f64; 3],
}

/// Kinematic state of one node. Depth is piecewise linear in time and only
/// re-anchored when the velocity changes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UwnBody {
    pub origin: Position,
    anchor_time: f64,
    anchor_depth: f64,
    velocity: f64,
}

impl UwnBody {
    pub fn new(origin: Position) -> Self {
        Self { origin, anchor_time: 0.0, anchor_depth: origin.depth, velocity: 0.0 }
    }

    pub fn velocity(&self) -> f64 {
        self.velocity
    }

    pub fn depth_at(&self, t: f64, floor: f64) -> f64 {
        (self.anchor_depth + self.velocity * (t - self.anchor_time)).clamp(0.0, floor)
    }

    pub fn set_motion(&mut self, t: f64, depth: f64, velocity: f64) {
        self.anchor_time = t;
        self.anchor_depth = depth;
        self.velocity = velocity;
    }
}

/// The deployed population plus the BS location.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub bs_position: Position,
    pub region: [f64; 3],
    pub bodies: Vec<UwnBody>,
    pub clock: f64,
}

impl World {
    pub fn new(bs_position: Position, region: [f64; 3], positions: &[Position]) -> Self {
        Self { bs_position, region, bodies: positions.iter().map(|&p| UwnBody::new(p)).collect(), clock: 0.0 }
    }

    pub fn position_at(&self, node: usize, t: f64, current: [f64; 2]) -> Position {
        let b = &self.bodies[node];
        Position::new(
            (b.origin.east + current[0] * t).clamp(0.0, self.region[0]),
            (b.origin.north + current[1] * t).clamp(0.0, self.region[1]),
            b.depth_at(t, self.region[2]),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Receiver {
    Bs,
    Uwn(usize),
}

#[derive(Debug, Clone)]
pub enum AcousticPayload {
    Trigger,
    Frame(Rc<[u8]>),
}

#[derive(Debug, Clone)]
pub enum EventKind {
    SonarPing,
    SuperframeTx,
    AcousticArrival { node: usize, payload: AcousticPayload, sent_at: f64, distance: f64 },
    OpticalArrival { receiver: Receiver, beam: Beam, source: usize, source_position: Position },
    MovementExpiry { node: usize, epoch: u32 },
    TimeoutCheck,
    SimEnd,
}

#[derive(Debug, Clone)]
pub struct Event {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    /// Reversed so `BinaryHeap` pops the earliest `(time, seq)` first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    next_seq: u64,
    now: f64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    /// Schedules `kind` at `time`. Times before the last popped event are
    /// raised to it so nothing is ever scheduled in the past.
    pub fn schedule(&mut self, time: f64, kind: EventKind) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event { time: time.max(self.now), seq, kind });
        seq
    }

    pub fn pop(&mut self) -> Option<Event> {
        let ev = self.heap.pop()?;
        self.now = ev.time;
        Some(ev)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub time: f64,
    pub kind: &'static str,
    pub subject: String,
    pub detail: String,
}

impl TraceEntry {
    /// Value of a `key=value` token in the detail column.
    pub fn field(&self, key: &str) -> Option<&str> {
        self.detail.split(' ').find_map(|tok| tok.strip_prefix(key)?.strip_prefix('='))
    }
}

impl fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.9} {} {} {}", self.time, self.kind, self.subject, self.detail)
    }
}

pub fn format_trace(entries: &[TraceEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        let _ = writeln!(out, "{e}");
    }
    out
}

fn uwn_label(i: usize) -> String {
    format!("uwn:{i}")
}

/// Final state of a run, before metrics are derived.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub world: World,
    pub nodes: Vec<UwnState>,
    pub bs: BsState,
    pub end_time: f64,
    pub acoustic_deliveries: u64,
    pub acoustic_delay_sum: f64,
    pub invariant_violation: Option<String>,
    pub trace: Vec<TraceEntry>,
}

struct Sim<'a> {
    cfg: &'a EngineConfig,
    world: World,
    nodes: Vec<UwnState>,
    bs: BsState,
    queue: EventQueue,
    rng: ChaCha8Rng,
    tracing: bool,
    trace: Vec<TraceEntry>,
    deliveries: u64,
    delay_sum: f64,
    violation: Option<String>,
}

impl<'a> Sim<'a> {
    fn log(&mut self, time: f64, kind: &'static str, subject: impl Into<String>, detail: impl FnOnce() -> String) {
        if self.tracing {
            self.trace.push(TraceEntry { time, kind, subject: subject.into(), detail: detail() });
        }
    }

    fn check_bs(&mut self, time: f64) {
        if self.violation.is_none() {
            if let Err(e) = self.bs.check_invariants() {
                self.violation = Some(format!("t={time}: {e}"));
            }
        }
    }

    fn position(&self, node: usize, t: f64) -> Position {
        self.world.position_at(node, t, self.cfg.current)
    }

    fn sync_in(&mut self, node: usize, t: f64) {
        self.nodes[node].own_depth = self.world.bodies[node].depth_at(t, self.world.region[2]);
    }

    fn sync_out(&mut self, node: usize, t: f64, before: f64) {
        let state = &self.nodes[node];
        let body = &mut self.world.bodies[node];
        if state.vertical_velocity != body.velocity() || state.own_depth != before {
            body.set_motion(t, state.own_depth, state.vertical_velocity);
        }
    }

    fn handle_actions(&mut self, node: usize, t: f64, actions: Vec<UwnAction>) {
        for action in actions {
            match action {
                UwnAction::Movement { deadline, epoch } => {
                    self.queue.schedule(deadline, EventKind::MovementExpiry { node, epoch });
                }
                UwnAction::Emit(beam) => {
                    let receiver = match beam.target {
                        BeamTarget::Bs => Some(Receiver::Bs),
                        BeamTarget::Relay(id) => self
                            .nodes
                            .iter()
                            .position(|n| n.lifecycle == Lifecycle::Accessed && n.matched_id == Some(id))
                            .map(Receiver::Uwn),
                    };
                    let source_position = self.position(node, t);
                    match receiver {
                        Some(receiver) => {
                            self.queue.schedule(
                                t,
                                EventKind::OpticalArrival { receiver, beam, source: node, source_position },
                            );
                        }
                        None => self.log(t, "OPTICAL_EMIT", uwn_label(node), || {
                            format!("claimed={} result=no_receiver", beam.claimed_id)
                        }),
                    }
                }
            }
        }
    }

    fn broadcast_acoustic(&mut self, t: f64, payload: AcousticPayload) {
        for node in 0..self.nodes.len() {
            let d = self.world.bs_position.distance_to(&self.position(node, t));
            if d > self.cfg.acoustic_range {
                continue;
            }
            let arrival = t + d / self.cfg.profile.sound_speed;
            self.queue.schedule(
                arrival,
                EventKind::AcousticArrival { node, payload: payload.clone(), sent_at: t, distance: d },
            );
        }
    }

    /// Pointing and power checks for a beam from `from` toward `to`.
    fn beam_reaches(&self, beam: &Beam, from: &Position, to: &Position, check_pointing: bool) -> Result<(), &'static str> {
        if check_pointing {
            let off = angle_between(beam.bearing.unit_vector(), from.displacement_to(to));
            if off > self.cfg.budget.divergence_half_angle {
                return Err("dropped:pointing");
            }
        }
        match optical_received_power(from, to, &self.cfg.budget, &self.cfg.profile) {
            Ok(p) if p >= self.cfg.budget.rx_sensitivity => Ok(()),
            _ => Err("dropped:power"),
        }
    }

    fn in_bs_fov(&self, from: &Position) -> bool {
        let incoming = self.world.bs_position.displacement_to(from);
        angle_between([0.0, 0.0, 1.0], incoming) <= self.cfg.bs_fov_half_angle
    }

    fn step(&mut self, ev: Event) -> bool {
        let t = ev.time;
        self.world.clock = t;
        match ev.kind {
            EventKind::SimEnd => {
                self.log(t, "SIM_END", "bs", String::new);
                return false;
            }
            EventKind::SonarPing => {
                let targets: Vec<(usize, Position)> =
                    (0..self.nodes.len()).map(|i| (i, self.position(i, t))).collect();
                let bs_pos = self.world.bs_position;
                let dets = sonar_scan(&targets, &bs_pos, &self.cfg.sonar, &mut self.rng);
                let fresh = match self.bs.ingest_scan(&dets, t) {
                    Ok(ids) => ids,
                    Err(e) => {
                        self.violation.get_or_insert_with(|| format!("t={t}: {e}"));
                        Vec::new()
                    }
                };
                self.check_bs(t);
                self.log(t, "SONAR_PING", "bs", || format!("detected={} new={}", dets.len(), fresh.len()));
                self.broadcast_acoustic(t, AcousticPayload::Trigger);
                let next = t + self.cfg.superframe_period;
                if next < self.cfg.t_max {
                    self.queue.schedule(next, EventKind::SonarPing);
                }
            }
            EventKind::TimeoutCheck => {
                let outcomes = self.bs.handle_timeouts(t);
                self.check_bs(t);
                self.log(t, "TIMEOUT_CHECK", "bs", || {
                    let list: Vec<String> = outcomes
                        .iter()
                        .map(|o| match o {
                            TimeoutOutcome::Retry { id, remaining } => format!("{id}:retry{remaining}"),
                            TimeoutOutcome::RelayAssigned { id, relay } => format!("{id}:relay>{relay}"),
                            TimeoutOutcome::Failed { id } => format!("{id}:failed"),
                        })
                        .collect();
                    format!("outcomes={}", if list.is_empty() { "-".into() } else { list.join(",") })
                });
            }
            EventKind::SuperframeTx => {
                let frame = self.bs.broadcast(t);
                self.check_bs(t);
                match encode(&frame) {
                    Ok(bytes) => {
                        self.log(t, "SUPERFRAME_TX", "bs", || {
                            format!("seq={} bytes={} slots={}", frame.frame_seq, bytes.len(), slot_summary(&frame))
                        });
                        self.broadcast_acoustic(t, AcousticPayload::Frame(bytes.into()));
                    }
                    Err(e) => {
                        self.violation.get_or_insert_with(|| format!("t={t}: encode: {e}"));
                    }
                }
                let next = t + self.cfg.superframe_period;
                if next < self.cfg.t_max {
                    self.queue.schedule(next, EventKind::TimeoutCheck);
                    self.queue.schedule(next, EventKind::SuperframeTx);
                }
            }
            EventKind::AcousticArrival { node, payload, sent_at, distance } => {
                let delay = t - sent_at;
                self.deliveries += 1;
                self.delay_sum += delay;
                let lost = self.cfg.p_frame_loss > 0.0 && self.rng.gen_bool(self.cfg.p_frame_loss.min(1.0));
                let what = match &payload {
                    AcousticPayload::Trigger => "trigger",
                    AcousticPayload::Frame(_) => "frame",
                };
                self.log(t, "ACOUSTIC_ARRIVAL", uwn_label(node), || {
                    format!("src=bs payload={what} sent={sent_at} dist={distance} delay={delay} lost={}", lost as u8)
                });
                if lost {
                    return true;
                }
                match payload {
                    AcousticPayload::Trigger => self.nodes[node].on_trigger(),
                    AcousticPayload::Frame(bytes) => {
                        let Ok(frame) = decode(&bytes) else {
                            self.violation.get_or_insert_with(|| format!("t={t}: undecodable frame"));
                            return true;
                        };
                        self.sync_in(node, t);
                        let before = self.nodes[node].own_depth;
                        let actions = self.nodes[node].match_frame(&frame, t, &mut self.rng, &self.cfg.uwn);
                        self.sync_out(node, t, before);
                        self.handle_actions(node, t, actions);
                    }
                }
            }
            EventKind::MovementExpiry { node, epoch } => {
                self.sync_in(node, t);
                let before = self.nodes[node].own_depth;
                let current = epoch == self.nodes[node].movement_epoch;
                let actions = self.nodes[node].on_movement_expiry(epoch, t, &mut self.rng, &self.cfg.uwn);
                self.sync_out(node, t, before);
                if current {
                    let (depth, velocity) = (self.nodes[node].own_depth, self.nodes[node].vertical_velocity);
                    self.log(t, "MOVEMENT_EXPIRY", uwn_label(node), || {
                        format!("epoch={epoch} depth={depth} velocity={velocity}")
                    });
                }
                self.handle_actions(node, t, actions);
            }
            EventKind::OpticalArrival { receiver, beam, source, source_position } => {
                self.optical_arrival(t, receiver, beam, source, source_position);
            }
        }
        true
    }

    fn optical_arrival(&mut self, t: f64, receiver: Receiver, beam: Beam, source: usize, from: Position) {
        match receiver {
            Receiver::Bs => {
                let bs_pos = self.world.bs_position;
                let forwarded = beam.relayed_by.is_some();
                let check = self.beam_reaches(&beam, &from, &bs_pos, !forwarded).and_then(|()| {
                    if self.in_bs_fov(&from) {
                        Ok(())
                    } else {
                        Err("dropped:fov")
                    }
                });
                let result = match check {
                    Ok(()) => {
                        let outcome = self
                            .bs
                            .on_optical_arrival(&ArrivedBeam { claimed_id: beam.claimed_id, relay: beam.relayed_by }, t);
                        self.check_bs(t);
                        match outcome {
                            BeamOutcome::Accepted => "accepted",
                            BeamOutcome::Duplicate => "duplicate",
                            BeamOutcome::Stale => "stale",
                            BeamOutcome::Unknown => "unknown",
                        }
                    }
                    Err(reason) => reason,
                };
                self.log(t, "OPTICAL_ARRIVAL", "bs", || {
                    let relay = beam.relayed_by.map_or("-".to_string(), |r| r.to_string());
                    format!("from={} claimed={} relay={relay} result={result}", uwn_label(source), beam.claimed_id)
                });
            }
            Receiver::Uwn(r) => {
                let to = self.position(r, t);
                let result = match self.beam_reaches(&beam, &from, &to, true) {
                    Err(reason) => reason,
                    Ok(()) => {
                        let d = from.displacement_to(&to);
                        match self.nodes[r].forward_beam(&beam, d, self.cfg.budget.rx_fov_half_angle) {
                            Some(out) => {
                                self.queue.schedule(
                                    t + self.cfg.relay_delay,
                                    EventKind::OpticalArrival {
                                        receiver: Receiver::Bs,
                                        beam: out,
                                        source: r,
                                        source_position: to,
                                    },
                                );
                                "forwarded"
                            }
                            None => "dropped:relay",
                        }
                    }
                };
                self.log(t, "OPTICAL_ARRIVAL", uwn_label(r), || {
                    format!("from={} claimed={} result={result}", uwn_label(source), beam.claimed_id)
                });
            }
        }
    }
}

fn slot_summary(frame: &SuperFrame) -> String {
    if frame.slots.is_empty() {
        return "-".into();
    }
    let parts: Vec<String> = frame
        .slots
        .iter()
        .map(|s| match s.stage {
            Stage::Assign => format!("{}A{}", s.network_id, if s.conflict { "!" } else { "" }),
            Stage::Confirm => format!("{}C", s.network_id),
            Stage::RelayTx => format!("{}T{}", s.network_id, s.partner_id),
            Stage::RelayRx => format!("{}R{}", s.network_id, s.partner_id),
        })
        .collect();
    parts.join(",")
}

/// Runs a prepared world to `cfg.t_max`, consuming `rng` in event order.
pub fn run_world(world: World, cfg: &EngineConfig, rng: ChaCha8Rng, tracing: bool) -> RunOutput {
    let nodes = world.bodies.iter().map(|b| UwnState::new(b.origin.depth)).collect();
    let bs = BsState::new(world.bs_position, cfg.bs);
    let mut sim = Sim {
        cfg,
        world,
        nodes,
        bs,
        queue: EventQueue::new(),
        rng,
        tracing,
        trace: Vec::new(),
        deliveries: 0,
        delay_sum: 0.0,
        violation: None,
    };
    sim.queue.schedule(cfg.t_max, EventKind::SimEnd);
    if cfg.first_ping < cfg.t_max {
        sim.queue.schedule(cfg.first_ping, EventKind::SonarPing);
    }
    if cfg.first_superframe < cfg.t_max {
        sim.queue.schedule(cfg.first_superframe, EventKind::TimeoutCheck);
        sim.queue.schedule(cfg.first_superframe, EventKind::SuperframeTx);
    }
    let mut end = cfg.t_max;
    while let Some(ev) = sim.queue.pop() {
        let t = ev.time;
        if !sim.step(ev) {
            end = t;
            break;
        }
    }
    for i in 0..sim.nodes.len() {
        sim.sync_in(i, end);
    }
    RunOutput {
        world: sim.world,
        nodes: sim.nodes,
        bs: sim.bs,
        end_time: end,
        acoustic_deliveries: sim.deliveries,
        acoustic_delay_sum: sim.delay_sum,
        invariant_violation: sim.violation,
        trace: sim.trace,
    }
}

/// Generates the deployment for `seed` and simulates it.
pub fn run(config: &SimConfig, seed: u64) -> Result<SimReport, ScenarioError> {
    Ok(simulate(config, seed, false)?.0)
}

/// Same simulation as [`run`], plus the ordered event log.
pub fn trace(config: &SimConfig, seed: u64) -> Result<(SimReport, Vec<TraceEntry>), ScenarioError> {
    simulate(config, seed, true)
}

fn simulate(config: &SimConfig, seed: u64, tracing: bool) -> Result<(SimReport, Vec<TraceEntry>), ScenarioError> {
    let engine = config.engine()?;
    let mut rng = scenario::run_rng(seed);
    let world = scenario::generate_with(config, &mut rng);
    let mut out = run_world(world, &engine, rng, tracing);
    let trace = std::mem::take(&mut out.trace);
    Ok((SimReport::from_output(config, seed, &out), trace))
}

/// Network id a node ended up with, mapped back to the node index.
pub fn node_of_id(nodes: &[UwnState], id: NetworkId) -> Option<usize> {
    nodes.iter().position(|n| n.lifecycle == Lifecycle::Accessed && n.matched_id == Some(id))
}
