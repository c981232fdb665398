//! Underwater-node side of the initialization protocol.
//!
//! A node only listens to acoustics and only transmits light. It wakes on
//! the trigger ping, matches its own quantized depth against the assignment
//! slots of each superframe, answers a unique match with an optical beam,
//! and moves vertically at random while its depth collides with others.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acoustic_frame::{MovementMarker, SlotPayload, Stage, SuperFrame};
use crate::bs_protocol::NetworkId;
use crate::geometry::{angle_between, quantize_depth, Bearing, DepthAccuracy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Lifecycle {
    Dormant,
    Activated,
    Matching,
    ConflictMoving,
    Emitting,
    Accessed,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelayDuty {
    pub partner_id: NetworkId,
    pub receiver_bearing: Bearing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UwnConfig {
    pub v_min: f64,
    pub v_max: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub v_return: f64,
    pub return_tolerance: f64,
    /// Match assignment slots on movement marker as well as depth code.
    pub use_movement_marker: bool,
    pub depth_model: DepthAccuracy,
    pub region_depth: f64,
}

impl Default for UwnConfig {
    fn default() -> Self {
        Self {
            v_min: 0.05,
            v_max: 0.5,
            t_min: 1.0,
            t_max: 3.0,
            v_return: 0.5,
            return_tolerance: 0.1,
            use_movement_marker: true,
            depth_model: DepthAccuracy::default(),
            region_depth: 200.0,
        }
    }
}

/// A random vertical excursion: signed velocity (+ = diving) for `duration` s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Movement {
    pub velocity: f64,
    pub duration: f64,
}

/// Draws a dive or rise with uniform speed and duration, flipping direction
/// (or shortening the excursion) so the node stays inside the water column.
pub fn draw_movement<R: Rng + ?Sized>(rng: &mut R, cfg: &UwnConfig, own_depth: f64) -> Movement {
    let mut dive = rng.gen_bool(0.5);
    let speed = rng.gen_range(cfg.v_min..=cfg.v_max);
    let mut duration = rng.gen_range(cfg.t_min..=cfg.t_max);
    let travel = speed * duration;
    let room_up = own_depth.max(0.0);
    let room_down = (cfg.region_depth - own_depth).max(0.0);
    let fits = |down: bool| if down { travel <= room_down } else { travel <= room_up };
    if !fits(dive) {
        if fits(!dive) {
            dive = !dive;
        } else {
            dive = room_down >= room_up;
            let room = if dive { room_down } else { room_up };
            duration = if speed > 0.0 { room / speed } else { 0.0 };
        }
    }
    Movement { velocity: if dive { speed } else { -speed }, duration }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BeamTarget {
    Bs,
    Relay(NetworkId),
}

/// An optical emission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Beam {
    pub claimed_id: NetworkId,
    pub bearing: Bearing,
    pub target: BeamTarget,
    /// Set when an accessed node re-emits a partner's beam.
    pub relayed_by: Option<NetworkId>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UwnAction {
    Emit(Beam),
    /// The node's vertical motion changed; it wants a wake-up at `deadline`.
    Movement { deadline: f64, epoch: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct UwnState {
    pub lifecycle: Lifecycle,
    pub matched_id: Option<NetworkId>,
    pub emission_bearing: Option<Bearing>,
    pub uplink: BeamTarget,
    pub relay_duty: Option<RelayDuty>,
    pub original_depth: f64,
    /// m/s, positive when diving.
    pub vertical_velocity: f64,
    pub movement_deadline: Option<f64>,
    pub movement_epoch: u32,
    pub last_reset_bit: bool,
    pub own_depth: f64,
    pub via_relay: bool,
    pub confirmed_at: Option<f64>,
    conflict_entered_at: Option<f64>,
    conflict_time: f64,
}

impl UwnState {
    pub fn new(depth: f64) -> Self {
        Self {
            lifecycle: Lifecycle::Dormant,
            matched_id: None,
            emission_bearing: None,
            uplink: BeamTarget::Bs,
            relay_duty: None,
            original_depth: depth,
            vertical_velocity: 0.0,
            movement_deadline: None,
            movement_epoch: 0,
            last_reset_bit: false,
            own_depth: depth,
            via_relay: false,
            confirmed_at: None,
            conflict_entered_at: None,
            conflict_time: 0.0,
        }
    }

    pub fn motion(&self) -> MovementMarker {
        MovementMarker::from_depth_change(self.vertical_velocity)
    }

    /// Total time spent in `ConflictMoving` up to `now`.
    pub fn decomposition_time(&self, now: f64) -> f64 {
        self.conflict_time + self.conflict_entered_at.map_or(0.0, |t| now - t)
    }

    pub fn on_trigger(&mut self) {
        if self.lifecycle == Lifecycle::Dormant {
            self.lifecycle = Lifecycle::Activated;
        }
    }

    pub fn match_frame<R: Rng + ?Sized>(
        &mut self,
        frame: &SuperFrame,
        now: f64,
        rng: &mut R,
        cfg: &UwnConfig,
    ) -> Vec<UwnAction> {
        match self.lifecycle {
            Lifecycle::Dormant | Lifecycle::Failed => Vec::new(),
            Lifecycle::Activated | Lifecycle::Matching | Lifecycle::ConflictMoving => {
                if self.lifecycle == Lifecycle::Activated {
                    self.lifecycle = Lifecycle::Matching;
                }
                self.match_depth(frame, now, rng, cfg)
            }
            Lifecycle::Emitting => self.follow_own_slot(frame, now, rng, cfg),
            Lifecycle::Accessed => {
                let id = self.matched_id.expect("accessed node has an id");
                if let Some(slot) = frame.slot(id) {
                    match slot.stage {
                        Stage::Confirm => self.emission_bearing = Some(slot.bearing()),
                        Stage::RelayRx => {
                            self.relay_duty = Some(RelayDuty {
                                partner_id: slot.partner_id,
                                receiver_bearing: slot.bearing(),
                            })
                        }
                        Stage::Assign | Stage::RelayTx => {}
                    }
                }
                Vec::new()
            }
        }
    }

    fn match_depth<R: Rng + ?Sized>(
        &mut self,
        frame: &SuperFrame,
        now: f64,
        rng: &mut R,
        cfg: &UwnConfig,
    ) -> Vec<UwnAction> {
        let Some(own_code) = self.own_code(cfg) else { return Vec::new() };
        let motion = self.motion();
        let candidates: Vec<&SlotPayload> = frame
            .slots
            .iter()
            .filter(|s| {
                s.stage == Stage::Assign
                    && s.depth_code as u32 == own_code
                    && (!cfg.use_movement_marker || s.movement == motion)
            })
            .collect();
        match candidates.as_slice() {
            [] => Vec::new(),
            [slot] if !slot.conflict => {
                let slot = **slot;
                self.leave_conflict(now);
                self.matched_id = Some(slot.network_id);
                self.emission_bearing = Some(slot.bearing());
                self.uplink = BeamTarget::Bs;
                self.lifecycle = Lifecycle::Emitting;
                self.stop();
                vec![self.emit(slot.network_id)]
            }
            _ => {
                let reset = candidates[0].reset;
                if self.lifecycle != Lifecycle::ConflictMoving {
                    self.last_reset_bit = reset;
                    self.enter_conflict(now, rng, cfg)
                } else if reset != self.last_reset_bit {
                    self.last_reset_bit = reset;
                    self.start_movement(now, rng, cfg)
                } else {
                    Vec::new()
                }
            }
        }
    }

    fn follow_own_slot<R: Rng + ?Sized>(
        &mut self,
        frame: &SuperFrame,
        now: f64,
        rng: &mut R,
        cfg: &UwnConfig,
    ) -> Vec<UwnAction> {
        let id = self.matched_id.expect("emitting node has an id");
        let Some(slot) = frame.slot(id) else {
            // Slot released: the BS gave up on this node.
            self.lifecycle = Lifecycle::Failed;
            self.stop();
            return Vec::new();
        };
        match slot.stage {
            Stage::Assign if slot.conflict => {
                self.matched_id = None;
                self.emission_bearing = None;
                self.lifecycle = Lifecycle::Matching;
                self.last_reset_bit = slot.reset;
                self.enter_conflict(now, rng, cfg)
            }
            Stage::Assign if Some(slot.depth_code as u32) != self.own_code(cfg) => {
                // The slot tracks another node's depth: this id was never ours.
                self.matched_id = None;
                self.emission_bearing = None;
                self.lifecycle = Lifecycle::Matching;
                self.match_depth(frame, now, rng, cfg)
            }
            Stage::Assign => {
                self.emission_bearing = Some(slot.bearing());
                self.uplink = BeamTarget::Bs;
                vec![self.emit(id)]
            }
            Stage::RelayTx => {
                self.emission_bearing = Some(slot.bearing());
                self.uplink = BeamTarget::Relay(slot.partner_id);
                vec![self.emit(id)]
            }
            Stage::Confirm => {
                self.emission_bearing = Some(slot.bearing());
                self.on_access(now, cfg)
            }
            Stage::RelayRx => Vec::new(),
        }
    }

    /// Third handshake received: the node is accessed and heads back to the
    /// depth it was deployed at.
    pub fn on_access(&mut self, now: f64, cfg: &UwnConfig) -> Vec<UwnAction> {
        self.leave_conflict(now);
        self.lifecycle = Lifecycle::Accessed;
        self.via_relay = matches!(self.uplink, BeamTarget::Relay(_));
        self.confirmed_at = Some(now);
        let offset = self.original_depth - self.own_depth;
        if offset.abs() < cfg.return_tolerance || cfg.v_return <= 0.0 {
            self.stop();
            return Vec::new();
        }
        self.vertical_velocity = cfg.v_return.copysign(offset);
        self.movement_epoch += 1;
        let deadline = now + offset.abs() / cfg.v_return;
        self.movement_deadline = Some(deadline);
        vec![UwnAction::Movement { deadline, epoch: self.movement_epoch }]
    }

    /// Wake-up at the end of a movement leg. Stale epochs are ignored.
    pub fn on_movement_expiry<R: Rng + ?Sized>(
        &mut self,
        epoch: u32,
        now: f64,
        rng: &mut R,
        cfg: &UwnConfig,
    ) -> Vec<UwnAction> {
        if epoch != self.movement_epoch {
            return Vec::new();
        }
        match self.lifecycle {
            Lifecycle::ConflictMoving => self.start_movement(now, rng, cfg),
            Lifecycle::Accessed => {
                self.own_depth = self.original_depth;
                self.stop();
                Vec::new()
            }
            _ => {
                self.stop();
                Vec::new()
            }
        }
    }

    /// Relay duty: re-emit the partner's beam toward the BS when it falls
    /// inside the receiver's field of view. `propagation` is the direction
    /// the incoming light travels in.
    pub fn forward_beam(&self, incoming: &Beam, propagation: [f64; 3], fov_half_angle: f64) -> Option<Beam> {
        if self.lifecycle != Lifecycle::Accessed {
            return None;
        }
        let duty = self.relay_duty?;
        if incoming.claimed_id != duty.partner_id {
            return None;
        }
        let toward_source = [-propagation[0], -propagation[1], -propagation[2]];
        if angle_between(duty.receiver_bearing.unit_vector(), toward_source) > fov_half_angle {
            return None;
        }
        Some(Beam {
            claimed_id: incoming.claimed_id,
            bearing: self.emission_bearing?,
            target: BeamTarget::Bs,
            relayed_by: self.matched_id,
        })
    }

    fn own_code(&self, cfg: &UwnConfig) -> Option<u32> {
        quantize_depth(self.own_depth, &cfg.depth_model).ok().map(|c| c.bucket)
    }

    fn emit(&self, id: NetworkId) -> UwnAction {
        UwnAction::Emit(Beam {
            claimed_id: id,
            bearing: self.emission_bearing.expect("emission bearing set before emitting"),
            target: self.uplink,
            relayed_by: None,
        })
    }

    fn stop(&mut self) {
        self.vertical_velocity = 0.0;
        self.movement_deadline = None;
        self.movement_epoch += 1;
    }

    fn enter_conflict<R: Rng + ?Sized>(&mut self, now: f64, rng: &mut R, cfg: &UwnConfig) -> Vec<UwnAction> {
        self.lifecycle = Lifecycle::ConflictMoving;
        if self.conflict_entered_at.is_none() {
            self.conflict_entered_at = Some(now);
        }
        self.start_movement(now, rng, cfg)
    }

    fn leave_conflict(&mut self, now: f64) {
        if let Some(t) = self.conflict_entered_at.take() {
            self.conflict_time += now - t;
        }
    }

    fn start_movement<R: Rng + ?Sized>(&mut self, now: f64, rng: &mut R, cfg: &UwnConfig) -> Vec<UwnAction> {
        let m = draw_movement(rng, cfg, self.own_depth);
        self.vertical_velocity = m.velocity;
        self.movement_epoch += 1;
        let deadline = now + m.duration;
        self.movement_deadline = Some(deadline);
        vec![UwnAction::Movement { deadline, epoch: self.movement_epoch }]
    }
}
