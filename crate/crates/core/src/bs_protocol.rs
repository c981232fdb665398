//! Base-station side of the initialization protocol.
//!
//! The BS detects nodes with sonar, hands out network ids and TDMA slots,
//! broadcasts emission angles keyed by quantized depth (first handshake),
//! waits for the optical beam (second handshake) and confirms it in the next
//! superframe (third handshake). Depth collisions are flagged for
//! decomposition; nodes that stay silent are offered one optical relay before
//! being declared failed.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acoustic_frame::{MovementMarker, SlotPayload, Stage, SuperFrame, MAX_NETWORK_ID};
use crate::geometry::{bearing_from_to, quantize_depth, Bearing, DepthAccuracy, DepthCode, Position};

pub type NetworkId = u16;

/// Sonar track identity. The sonar keeps tracks across pings, so a rescan
/// can be associated with the record it refreshes.
pub type TargetId = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BsError {
    #[error("network id space exhausted: {requested} new nodes, {available} ids left")]
    IdSpaceExhausted { requested: usize, available: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub target: TargetId,
    pub position: Position,
    pub depth_code: DepthCode,
}

/// Sonar parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SonarModel {
    pub radius: f64,
    pub p_misdetect: f64,
    /// Half-width of the uniform depth error, meters.
    pub depth_noise: f64,
    pub depth_model: DepthAccuracy,
}

/// Detects every target within the sonar radius of `bs`, with quantized depth.
pub fn sonar_scan<R: Rng + ?Sized>(
    targets: &[(TargetId, Position)],
    bs: &Position,
    sonar: &SonarModel,
    rng: &mut R,
) -> Vec<Detection> {
    let mut out = Vec::with_capacity(targets.len());
    for &(target, position) in targets {
        if bs.distance_to(&position) > sonar.radius {
            continue;
        }
        if sonar.p_misdetect > 0.0 && rng.gen_bool(sonar.p_misdetect.min(1.0)) {
            continue;
        }
        let mut measured = position;
        if sonar.depth_noise > 0.0 {
            measured.depth =
                (measured.depth + rng.gen_range(-sonar.depth_noise..=sonar.depth_noise)).max(0.0);
        }
        let depth_code = quantize_depth(measured.depth, &sonar.depth_model)
            .expect("measured depth is finite and non-negative");
        out.push(Detection { target, position: measured, depth_code });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HandshakeStage {
    Assigned,
    Conflicted,
    AwaitingBeam,
    Confirming,
    Accessed,
    RelayPending,
    Failed,
}

impl HandshakeStage {
    /// Stages whose slot carries a depth-keyed assignment that idle nodes
    /// match against.
    fn is_depth_matched(self) -> bool {
        matches!(
            self,
            HandshakeStage::Assigned | HandshakeStage::Conflicted | HandshakeStage::AwaitingBeam
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub network_id: NetworkId,
    pub target: TargetId,
    pub sonar_position: Position,
    pub depth_code: DepthCode,
    pub stage: HandshakeStage,
    pub retries_remaining: u32,
    /// Node this record relays for.
    pub relay_of: Option<NetworkId>,
    pub relayed_by: Option<NetworkId>,
    pub observed_motion: MovementMarker,
    pub access_time: Option<f64>,
    pub via_relay: bool,
    pub conflict_flag: bool,
    pub reset_bit: bool,
    conflict_since: Option<f64>,
    /// A slot asking for a beam went out since the last timeout check.
    unanswered: bool,
    pub first_assign_at: Option<f64>,
    pub beam_at: Option<f64>,
}

impl NodeRecord {
    /// A fresh record with no relay bindings and no handshake history.
    pub fn new(network_id: NetworkId, target: TargetId, sonar_position: Position, depth_code: DepthCode, stage: HandshakeStage) -> Self {
        Self {
            network_id,
            target,
            sonar_position,
            depth_code,
            stage,
            retries_remaining: 0,
            relay_of: None,
            relayed_by: None,
            observed_motion: MovementMarker::None,
            access_time: None,
            via_relay: false,
            conflict_flag: false,
            reset_bit: false,
            conflict_since: None,
            unanswered: false,
            first_assign_at: None,
            beam_at: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsConfig {
    pub direct_retries: u32,
    pub relay_retries: u32,
    /// Seconds a conflict may persist before the reset bit toggles.
    pub t_round: f64,
}

impl Default for BsConfig {
    fn default() -> Self {
        Self { direct_retries: 5, relay_retries: 5, t_round: 5.0 }
    }
}

/// A beam as seen by the BS receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivedBeam {
    pub claimed_id: NetworkId,
    /// Forwarding relay for dual-hop beams.
    pub relay: Option<NetworkId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeamOutcome {
    /// Second handshake completed; confirmation goes out next superframe.
    Accepted,
    /// Record already confirming or accessed.
    Duplicate,
    /// Record exists but is not waiting for a beam.
    Stale,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeoutOutcome {
    Retry { id: NetworkId, remaining: u32 },
    RelayAssigned { id: NetworkId, relay: NetworkId },
    Failed { id: NetworkId },
}

#[derive(Debug, Clone)]
pub struct BsState {
    pub config: BsConfig,
    pub position: Position,
    pub registry: BTreeMap<NetworkId, NodeRecord>,
    tracks: BTreeMap<TargetId, NetworkId>,
    next_id: NetworkId,
    pub next_frame_seq: u32,
    pub clock: f64,
    pub unknown_beams: u64,
    pub stale_beams: u64,
}

impl BsState {
    pub fn new(position: Position, config: BsConfig) -> Self {
        Self {
            config,
            position,
            registry: BTreeMap::new(),
            tracks: BTreeMap::new(),
            next_id: 1,
            next_frame_seq: 0,
            clock: 0.0,
            unknown_beams: 0,
            stale_beams: 0,
        }
    }

    pub fn record(&self, id: NetworkId) -> Option<&NodeRecord> {
        self.registry.get(&id)
    }

    pub fn id_of_target(&self, target: TargetId) -> Option<NetworkId> {
        self.tracks.get(&target).copied()
    }

    /// Registers previously unseen targets with fresh sequential ids, then
    /// recomputes depth conflicts. Returns the new ids.
    pub fn allocate(&mut self, detections: &[Detection], now: f64) -> Result<Vec<NetworkId>, BsError> {
        let mut fresh: Vec<&Detection> =
            detections.iter().filter(|d| !self.tracks.contains_key(&d.target)).collect();
        let mut seen = std::collections::BTreeSet::new();
        fresh.retain(|d| seen.insert(d.target));
        let available = (MAX_NETWORK_ID as usize + 1).saturating_sub(self.next_id as usize);
        if fresh.len() > available {
            return Err(BsError::IdSpaceExhausted { requested: fresh.len(), available });
        }
        let mut ids = Vec::with_capacity(fresh.len());
        for det in fresh {
            let id = self.next_id;
            self.next_id += 1;
            self.tracks.insert(det.target, id);
            let mut rec = NodeRecord::new(id, det.target, det.position, det.depth_code, HandshakeStage::Assigned);
            rec.retries_remaining = self.config.direct_retries;
            self.registry.insert(id, rec);
            ids.push(id);
        }
        self.clock = now;
        self.refresh_conflicts(now);
        Ok(ids)
    }

    /// Refreshes known records from a new scan and re-evaluates depth
    /// conflicts: records whose depth code became unique return to
    /// `Assigned`, and long-lived conflicts toggle their reset bit.
    pub fn update_decomposition(&mut self, detections: &[Detection], now: f64) {
        self.apply_detections(detections);
        self.clock = now;
        self.refresh_conflicts(now);
    }

    /// One sonar cycle: refresh tracked records, then register new targets.
    pub fn ingest_scan(&mut self, detections: &[Detection], now: f64) -> Result<Vec<NetworkId>, BsError> {
        self.apply_detections(detections);
        self.allocate(detections, now)
    }

    fn apply_detections(&mut self, detections: &[Detection]) {
        for det in detections {
            let Some(id) = self.tracks.get(&det.target) else { continue };
            let rec = self.registry.get_mut(id).expect("tracked id has a record");
            if rec.stage == HandshakeStage::Failed {
                continue;
            }
            rec.observed_motion =
                MovementMarker::from_depth_change(det.position.depth - rec.sonar_position.depth);
            rec.sonar_position = det.position;
            rec.depth_code = det.depth_code;
        }
    }

    fn refresh_conflicts(&mut self, now: f64) {
        let mut groups: BTreeMap<u32, Vec<NetworkId>> = BTreeMap::new();
        // A direct beam accepted but not yet confirmed still counts: a second
        // node sharing its bucket may have answered the same slot.
        let pending = |r: &NodeRecord| r.stage == HandshakeStage::Confirming && !r.via_relay;
        for rec in self.registry.values().filter(|r| r.stage.is_depth_matched() || pending(r)) {
            groups.entry(rec.depth_code.bucket).or_default().push(rec.network_id);
        }
        let t_round = self.config.t_round;
        let direct_retries = self.config.direct_retries;
        for members in groups.values() {
            let conflicted = members.len() > 1;
            for id in members {
                let rec = self.registry.get_mut(id).expect("grouped id exists");
                if conflicted {
                    if rec.stage == HandshakeStage::Conflicted {
                        let since = rec.conflict_since.unwrap_or(now);
                        if now - since >= t_round {
                            rec.reset_bit = !rec.reset_bit;
                            rec.conflict_since = Some(now);
                        }
                    } else {
                        rec.stage = HandshakeStage::Conflicted;
                        rec.beam_at = None;
                        rec.conflict_flag = true;
                        rec.conflict_since = Some(now);
                        rec.unanswered = false;
                    }
                } else if rec.stage == HandshakeStage::Conflicted {
                    rec.stage = HandshakeStage::Assigned;
                    rec.conflict_flag = false;
                    rec.conflict_since = None;
                    rec.retries_remaining = direct_retries;
                }
            }
        }
    }

    fn emission_bearing(from: &Position, to: &Position) -> Bearing {
        bearing_from_to(from, to).unwrap_or_else(|_| Bearing::new(0.0, 90.0))
    }

    /// The next superframe: one slot per live record, in id order.
    pub fn compose_superframe(&self) -> SuperFrame {
        let mut slots = Vec::with_capacity(self.registry.len());
        for rec in self.registry.values() {
            let to_bs = || Self::emission_bearing(&rec.sonar_position, &self.position);
            let slot = match rec.stage {
                HandshakeStage::Failed => continue,
                HandshakeStage::Assigned
                | HandshakeStage::AwaitingBeam
                | HandshakeStage::Conflicted => {
                    let mut s = SlotPayload::new(rec.network_id, Stage::Assign).with_bearing(&to_bs());
                    s.depth_code = rec.depth_code.bucket.min(crate::acoustic_frame::MAX_DEPTH_CODE as u32) as u16;
                    s.conflict = rec.conflict_flag;
                    s.movement = rec.observed_motion;
                    s.reset = rec.reset_bit;
                    s
                }
                HandshakeStage::RelayPending => {
                    let relay = rec.relayed_by.expect("relay pending has a relay");
                    let relay_pos = self.registry[&relay].sonar_position;
                    let mut s = SlotPayload::new(rec.network_id, Stage::RelayTx)
                        .with_bearing(&Self::emission_bearing(&rec.sonar_position, &relay_pos));
                    s.partner_id = relay;
                    s
                }
                HandshakeStage::Confirming | HandshakeStage::Accessed => match rec.relay_of {
                    Some(partner) => {
                        let partner_pos = self.registry[&partner].sonar_position;
                        let mut s = SlotPayload::new(rec.network_id, Stage::RelayRx).with_bearing(
                            &Self::emission_bearing(&rec.sonar_position, &partner_pos),
                        );
                        s.partner_id = partner;
                        s
                    }
                    None => {
                        let bearing = match rec.relayed_by.filter(|_| rec.via_relay) {
                            Some(relay) => Self::emission_bearing(
                                &rec.sonar_position,
                                &self.registry[&relay].sonar_position,
                            ),
                            None => to_bs(),
                        };
                        SlotPayload::new(rec.network_id, Stage::Confirm).with_bearing(&bearing)
                    }
                },
            };
            slots.push(slot);
        }
        SuperFrame::new(self.next_frame_seq, slots)
    }

    /// Composes the next superframe and commits its side effects: first
    /// handshakes become outstanding and pending confirmations complete the
    /// third handshake.
    pub fn broadcast(&mut self, now: f64) -> SuperFrame {
        let frame = self.compose_superframe();
        self.next_frame_seq = self.next_frame_seq.wrapping_add(1);
        self.clock = now;
        for rec in self.registry.values_mut() {
            match rec.stage {
                HandshakeStage::Assigned => {
                    rec.stage = HandshakeStage::AwaitingBeam;
                    rec.unanswered = true;
                    rec.first_assign_at.get_or_insert(now);
                }
                HandshakeStage::AwaitingBeam => {
                    rec.unanswered = true;
                    rec.first_assign_at.get_or_insert(now);
                }
                HandshakeStage::RelayPending => rec.unanswered = true,
                HandshakeStage::Confirming => {
                    rec.stage = HandshakeStage::Accessed;
                    rec.access_time = Some(now);
                }
                _ => {}
            }
        }
        frame
    }

    pub fn on_optical_arrival(&mut self, beam: &ArrivedBeam, now: f64) -> BeamOutcome {
        self.clock = now;
        let Some(rec) = self.registry.get(&beam.claimed_id) else {
            self.unknown_beams += 1;
            return BeamOutcome::Unknown;
        };
        match (rec.stage, beam.relay) {
            (HandshakeStage::Confirming | HandshakeStage::Accessed, _) => BeamOutcome::Duplicate,
            (HandshakeStage::AwaitingBeam, None) => {
                let rec = self.registry.get_mut(&beam.claimed_id).expect("checked above");
                rec.stage = HandshakeStage::Confirming;
                rec.beam_at = Some(now);
                rec.unanswered = false;
                rec.via_relay = false;
                BeamOutcome::Accepted
            }
            (HandshakeStage::RelayPending, relay) => {
                let bound = rec.relayed_by;
                if relay.is_some() && relay != bound {
                    self.stale_beams += 1;
                    return BeamOutcome::Stale;
                }
                if relay.is_none() {
                    // The node reached the BS on its own; release the relay.
                    if let Some(r) = bound {
                        if let Some(relay_rec) = self.registry.get_mut(&r) {
                            relay_rec.relay_of = None;
                        }
                    }
                }
                let rec = self.registry.get_mut(&beam.claimed_id).expect("checked above");
                rec.stage = HandshakeStage::Confirming;
                rec.beam_at = Some(now);
                rec.unanswered = false;
                rec.via_relay = relay.is_some();
                if relay.is_none() {
                    rec.relayed_by = None;
                }
                BeamOutcome::Accepted
            }
            _ => {
                self.stale_beams += 1;
                BeamOutcome::Stale
            }
        }
    }

    /// Counts one unanswered superframe against every outstanding handshake.
    /// Exhausted direct attempts get the nearest eligible relay; exhausted
    /// relay attempts, or no eligible relay, fail the node.
    pub fn handle_timeouts(&mut self, now: f64) -> Vec<TimeoutOutcome> {
        self.clock = now;
        let mut outcomes = Vec::new();
        let ids: Vec<NetworkId> = self.registry.keys().copied().collect();
        for id in ids {
            let rec = self.registry.get_mut(&id).expect("id from registry");
            if !rec.unanswered
                || !matches!(rec.stage, HandshakeStage::AwaitingBeam | HandshakeStage::RelayPending)
            {
                continue;
            }
            rec.unanswered = false;
            rec.retries_remaining = rec.retries_remaining.saturating_sub(1);
            if rec.retries_remaining > 0 {
                outcomes.push(TimeoutOutcome::Retry { id, remaining: rec.retries_remaining });
                continue;
            }
            if rec.stage == HandshakeStage::AwaitingBeam {
                match select_relay(&self.registry, id) {
                    Some(relay) => {
                        let relay_retries = self.config.relay_retries;
                        let rec = self.registry.get_mut(&id).expect("id from registry");
                        rec.stage = HandshakeStage::RelayPending;
                        rec.retries_remaining = relay_retries;
                        rec.relayed_by = Some(relay);
                        self.registry.get_mut(&relay).expect("relay exists").relay_of = Some(id);
                        outcomes.push(TimeoutOutcome::RelayAssigned { id, relay });
                    }
                    None => {
                        self.fail(id);
                        outcomes.push(TimeoutOutcome::Failed { id });
                    }
                }
            } else {
                self.fail(id);
                outcomes.push(TimeoutOutcome::Failed { id });
            }
        }
        outcomes
    }

    fn fail(&mut self, id: NetworkId) {
        let rec = self.registry.get_mut(&id).expect("failing existing record");
        rec.stage = HandshakeStage::Failed;
        rec.conflict_flag = false;
        let relay = rec.relayed_by.take();
        if let Some(r) = relay {
            if let Some(relay_rec) = self.registry.get_mut(&r) {
                if relay_rec.relay_of == Some(id) {
                    relay_rec.relay_of = None;
                }
            }
        }
    }

    /// Structural invariants that must hold after every transition.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (&target, &id) in &self.tracks {
            match self.registry.get(&id) {
                Some(r) if r.target == target => {}
                _ => return Err(format!("track {target} -> {id} dangling")),
            }
        }
        if self.tracks.len() != self.registry.len() {
            return Err("tracks and registry disagree".into());
        }
        let mut fan_in: BTreeMap<NetworkId, usize> = BTreeMap::new();
        for (&id, rec) in &self.registry {
            if rec.network_id != id || id == 0 || id >= self.next_id {
                return Err(format!("bad id {id}"));
            }
            if let Some(relay) = rec.relayed_by {
                let r = self
                    .registry
                    .get(&relay)
                    .ok_or_else(|| format!("{id} relayed by unknown {relay}"))?;
                if r.stage != HandshakeStage::Accessed {
                    return Err(format!("{id} relayed by non-accessed {relay}"));
                }
                if r.via_relay || r.relayed_by.is_some() {
                    return Err(format!("relay chain longer than two hops at {id}"));
                }
                if r.relay_of != Some(id) {
                    return Err(format!("relay {relay} does not point back to {id}"));
                }
                *fan_in.entry(relay).or_default() += 1;
            }
            if let Some(partner) = rec.relay_of {
                let p = self
                    .registry
                    .get(&partner)
                    .ok_or_else(|| format!("{id} relays unknown {partner}"))?;
                if p.relayed_by != Some(id) {
                    return Err(format!("{partner} does not point back to relay {id}"));
                }
            }
            if rec.via_relay && rec.relayed_by.is_none() {
                return Err(format!("{id} via relay without relay"));
            }
            if rec.stage == HandshakeStage::Failed && (rec.relayed_by.is_some() || rec.relay_of.is_some()) {
                return Err(format!("failed {id} keeps relay bindings"));
            }
            if rec.stage == HandshakeStage::Accessed {
                let (Some(hs1), Some(hs2), Some(hs3)) = (rec.first_assign_at, rec.beam_at, rec.access_time)
                else {
                    return Err(format!("{id} accessed without full handshake"));
                };
                if !(hs1 < hs2 && hs2 < hs3) {
                    return Err(format!("{id} handshake out of order: {hs1} {hs2} {hs3}"));
                }
            }
        }
        if let Some((relay, n)) = fan_in.into_iter().find(|&(_, n)| n > 1) {
            return Err(format!("relay {relay} serves {n} nodes"));
        }
        Ok(())
    }
}

/// Nearest accessed node (by sonar positions) that is not already relaying
/// and was not itself reached through a relay. Ties go to the lower id.
pub fn select_relay(registry: &BTreeMap<NetworkId, NodeRecord>, target: NetworkId) -> Option<NetworkId> {
    let origin = registry.get(&target)?.sonar_position;
    registry
        .values()
        .filter(|r| {
            r.network_id != target
                && r.stage == HandshakeStage::Accessed
                && r.relay_of.is_none()
                && !r.via_relay
        })
        .map(|r| (origin.distance_to(&r.sonar_position), r.network_id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
}
