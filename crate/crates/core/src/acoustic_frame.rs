//! Downward acoustic superframe codec.
//!
//! Layout (all big-endian, MSB first):
//!
//! ```text
//! header  : frame_seq u32 | slot_count u16                       (6 bytes)
//! slot    : network_id 10 | depth_code 14 | azimuth 16 | elevation 15
//!           | stage 2 | conflict 1 | movement 2 | reset 1 | partner_id 10
//!           | padding 1                                          (9 bytes)
//! ```
//!
//! Angles are in hundredths of a degree. Elevation is offset so that 0 means
//! -90° and 18000 means +90°.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Bearing;

pub const HEADER_LEN: usize = 6;
pub const SLOT_LEN: usize = 9;

pub const MAX_NETWORK_ID: u16 = (1 << 10) - 1;
pub const MAX_DEPTH_CODE: u16 = (1 << 14) - 1;
pub const MAX_AZIMUTH_CENTIDEG: u16 = 35_999;
pub const MAX_ELEVATION_CENTIDEG: u16 = 18_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("truncated frame: need {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{0} trailing bytes after last slot")]
    TrailingBytes(usize),
    #[error("duplicate network id {0}")]
    DuplicateId(u16),
    #[error("field {field} out of range: {value}")]
    OutOfRange { field: &'static str, value: u32 },
    #[error("slot {id} references partner {partner} which has no slot")]
    UnknownPartner { id: u16, partner: u16 },
    #[error("too many slots: {0}")]
    TooManySlots(usize),
    #[error("nonzero padding bit in slot {0}")]
    Padding(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    Assign = 0,
    Confirm = 1,
    RelayRx = 2,
    RelayTx = 3,
}

impl Stage {
    fn from_bits(v: u32) -> Stage {
        match v & 0b11 {
            0 => Stage::Assign,
            1 => Stage::Confirm,
            2 => Stage::RelayRx,
            _ => Stage::RelayTx,
        }
    }
}

/// Vertical motion as observed by the sonar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum MovementMarker {
    #[default]
    None = 0,
    Diving = 1,
    Rising = 2,
}

impl MovementMarker {
    /// Marker for a depth change (positive = deeper).
    pub fn from_depth_change(delta: f64) -> Self {
        if delta > 0.0 {
            MovementMarker::Diving
        } else if delta < 0.0 {
            MovementMarker::Rising
        } else {
            MovementMarker::None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotPayload {
    pub network_id: u16,
    pub depth_code: u16,
    pub azimuth_centideg: u16,
    pub elevation_centideg: u16,
    pub stage: Stage,
    pub conflict: bool,
    pub movement: MovementMarker,
    pub reset: bool,
    /// Relay partner, 0 when unused.
    pub partner_id: u16,
}

impl SlotPayload {
    pub fn new(network_id: u16, stage: Stage) -> Self {
        Self {
            network_id,
            depth_code: 0,
            azimuth_centideg: 0,
            elevation_centideg: 0,
            stage,
            conflict: false,
            movement: MovementMarker::None,
            reset: false,
            partner_id: 0,
        }
    }

    pub fn with_bearing(mut self, bearing: &Bearing) -> Self {
        let (az, el) = bearing_to_centideg(bearing);
        self.azimuth_centideg = az;
        self.elevation_centideg = el;
        self
    }

    pub fn bearing(&self) -> Bearing {
        Bearing::new(
            self.azimuth_centideg as f64 / 100.0,
            self.elevation_centideg as f64 / 100.0 - 90.0,
        )
    }

    fn check_ranges(&self) -> Result<(), FrameError> {
        let checks: [(&'static str, u16, u16); 5] = [
            ("network_id", self.network_id, MAX_NETWORK_ID),
            ("depth_code", self.depth_code, MAX_DEPTH_CODE),
            ("azimuth_centideg", self.azimuth_centideg, MAX_AZIMUTH_CENTIDEG),
            ("elevation_centideg", self.elevation_centideg, MAX_ELEVATION_CENTIDEG),
            ("partner_id", self.partner_id, MAX_NETWORK_ID),
        ];
        for (field, value, max) in checks {
            if value > max {
                return Err(FrameError::OutOfRange { field, value: value as u32 });
            }
        }
        Ok(())
    }

    fn pack(&self) -> [u8; SLOT_LEN] {
        let mut bits: u128 = 0;
        let mut push = |value: u32, width: u32| {
            bits = (bits << width) | (value as u128 & ((1u128 << width) - 1));
        };
        push(self.network_id as u32, 10);
        push(self.depth_code as u32, 14);
        push(self.azimuth_centideg as u32, 16);
        push(self.elevation_centideg as u32, 15);
        push(self.stage as u32, 2);
        push(self.conflict as u32, 1);
        push(self.movement as u32, 2);
        push(self.reset as u32, 1);
        push(self.partner_id as u32, 10);
        push(0, 1);
        let be = bits.to_be_bytes();
        let mut out = [0u8; SLOT_LEN];
        out.copy_from_slice(&be[16 - SLOT_LEN..]);
        out
    }

    fn unpack(bytes: &[u8], index: usize) -> Result<SlotPayload, FrameError> {
        let mut buf = [0u8; 16];
        buf[16 - SLOT_LEN..].copy_from_slice(&bytes[..SLOT_LEN]);
        let bits = u128::from_be_bytes(buf);
        let mut remaining = (SLOT_LEN * 8) as u32;
        let mut take = |width: u32| -> u32 {
            remaining -= width;
            ((bits >> remaining) & ((1u128 << width) - 1)) as u32
        };
        let network_id = take(10) as u16;
        let depth_code = take(14) as u16;
        let azimuth_centideg = take(16) as u16;
        let elevation_centideg = take(15) as u16;
        let stage = Stage::from_bits(take(2));
        let conflict = take(1) == 1;
        let movement = match take(2) {
            0 => MovementMarker::None,
            1 => MovementMarker::Diving,
            2 => MovementMarker::Rising,
            v => return Err(FrameError::OutOfRange { field: "movement", value: v }),
        };
        let reset = take(1) == 1;
        let partner_id = take(10) as u16;
        if take(1) != 0 {
            return Err(FrameError::Padding(index));
        }
        let slot = SlotPayload {
            network_id,
            depth_code,
            azimuth_centideg,
            elevation_centideg,
            stage,
            conflict,
            movement,
            reset,
            partner_id,
        };
        slot.check_ranges()?;
        Ok(slot)
    }
}

/// Rounds a bearing to the 0.01° wire resolution.
pub fn bearing_to_centideg(bearing: &Bearing) -> (u16, u16) {
    let mut az = (bearing.azimuth() * 100.0).round() as u32;
    if az > MAX_AZIMUTH_CENTIDEG as u32 {
        az = 0;
    }
    let el = ((bearing.elevation() + 90.0) * 100.0).round() as u32;
    (az as u16, el.min(MAX_ELEVATION_CENTIDEG as u32) as u16)
}

/// One TDMA broadcast cycle.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SuperFrame {
    pub frame_seq: u32,
    pub slots: Vec<SlotPayload>,
}

impl SuperFrame {
    pub fn new(frame_seq: u32, slots: Vec<SlotPayload>) -> Self {
        Self { frame_seq, slots }
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn slot(&self, network_id: u16) -> Option<&SlotPayload> {
        self.slots.iter().find(|s| s.network_id == network_id)
    }

    pub fn validate(&self) -> Result<(), FrameError> {
        if self.slots.len() > u16::MAX as usize {
            return Err(FrameError::TooManySlots(self.slots.len()));
        }
        let mut ids = BTreeSet::new();
        for slot in &self.slots {
            slot.check_ranges()?;
            if !ids.insert(slot.network_id) {
                return Err(FrameError::DuplicateId(slot.network_id));
            }
        }
        for slot in &self.slots {
            if matches!(slot.stage, Stage::RelayRx | Stage::RelayTx)
                && !ids.contains(&slot.partner_id)
            {
                return Err(FrameError::UnknownPartner {
                    id: slot.network_id,
                    partner: slot.partner_id,
                });
            }
        }
        Ok(())
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + SLOT_LEN * self.slots.len()
    }
}

pub fn encode(frame: &SuperFrame) -> Result<Vec<u8>, FrameError> {
    frame.validate()?;
    let mut out = Vec::with_capacity(frame.encoded_len());
    out.extend_from_slice(&frame.frame_seq.to_be_bytes());
    out.extend_from_slice(&(frame.slots.len() as u16).to_be_bytes());
    for slot in &frame.slots {
        out.extend_from_slice(&slot.pack());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<SuperFrame, FrameError> {
    if bytes.len() < HEADER_LEN {
        return Err(FrameError::Truncated { expected: HEADER_LEN, actual: bytes.len() });
    }
    let frame_seq = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let count = u16::from_be_bytes([bytes[4], bytes[5]]) as usize;
    let expected = HEADER_LEN + SLOT_LEN * count;
    if bytes.len() < expected {
        return Err(FrameError::Truncated { expected, actual: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(FrameError::TrailingBytes(bytes.len() - expected));
    }
    let slots = bytes[HEADER_LEN..]
        .chunks_exact(SLOT_LEN)
        .enumerate()
        .map(|(i, chunk)| SlotPayload::unpack(chunk, i))
        .collect::<Result<Vec<_>, _>>()?;
    let frame = SuperFrame { frame_seq, slots };
    frame.validate()?;
    Ok(frame)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_frame() {
        let bytes = encode(&SuperFrame::new(0, vec![])).unwrap();
        assert_eq!(bytes, vec![0u8; 6]);
        assert_eq!(decode(&bytes).unwrap(), SuperFrame::new(0, vec![]));
    }

    #[test]
    fn single_zero_slot() {
        let frame = SuperFrame::new(1, vec![SlotPayload::new(0, Stage::Assign)]);
        let bytes = encode(&frame).unwrap();
        let mut expected = vec![0, 0, 0, 1, 0, 1];
        expected.extend_from_slice(&[0u8; 9]);
        assert_eq!(bytes, expected);
        assert_eq!(decode(&bytes).unwrap(), frame);
    }

    #[test]
    fn short_buffer() {
        assert!(matches!(decode(&[0u8; 5]), Err(FrameError::Truncated { .. })));
        assert!(matches!(decode(&[0, 0, 0, 0, 0, 1, 0]), Err(FrameError::Truncated { .. })));
        assert_eq!(decode(&[0, 0, 0, 0, 0, 0, 7]), Err(FrameError::TrailingBytes(1)));
    }

    #[test]
    fn encode_rejects_out_of_range() {
        let mut slot = SlotPayload::new(1024, Stage::Assign);
        let frame = SuperFrame::new(0, vec![slot]);
        assert!(matches!(encode(&frame), Err(FrameError::OutOfRange { field: "network_id", .. })));
        slot.network_id = 1;
        slot.azimuth_centideg = 36_000;
        assert!(encode(&SuperFrame::new(0, vec![slot])).is_err());
    }

    #[test]
    fn relay_partner_must_exist() {
        let mut tx = SlotPayload::new(3, Stage::RelayTx);
        tx.partner_id = 9;
        assert_eq!(
            encode(&SuperFrame::new(0, vec![tx])),
            Err(FrameError::UnknownPartner { id: 3, partner: 9 })
        );
        let mut rx = SlotPayload::new(9, Stage::RelayRx);
        rx.partner_id = 3;
        assert!(encode(&SuperFrame::new(0, vec![tx, rx])).is_ok());
    }

    #[test]
    fn bearing_quantization() {
        let up = Bearing::new(0.0, 90.0);
        assert_eq!(bearing_to_centideg(&up), (0, 18_000));
        let b = Bearing::new(359.996, -90.0 + 1e-9);
        let (az, el) = bearing_to_centideg(&b);
        assert!(az <= MAX_AZIMUTH_CENTIDEG);
        assert_eq!(el, 0);
        let slot = SlotPayload::new(1, Stage::Assign).with_bearing(&Bearing::new(36.8699, 12.34));
        let back = slot.bearing();
        assert!((back.azimuth() - 36.87).abs() < 1e-9);
        assert!((back.elevation() - 12.34).abs() < 1e-9);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn marker() -> impl Strategy<Value = MovementMarker> {
            prop_oneof![Just(MovementMarker::None), Just(MovementMarker::Diving), Just(MovementMarker::Rising)]
        }

        fn frame() -> impl Strategy<Value = SuperFrame> {
            (any::<u32>(), proptest::sample::subsequence((0..=MAX_NETWORK_ID).collect::<Vec<_>>(), 0..24))
                .prop_flat_map(|(seq, ids)| {
                    let n = ids.len();
                    let slots = ids
                        .into_iter()
                        .map(move |id| {
                            (
                                0..=MAX_DEPTH_CODE,
                                0..=MAX_AZIMUTH_CENTIDEG,
                                0..=MAX_ELEVATION_CENTIDEG,
                                0..4u32,
                                any::<bool>(),
                                marker(),
                                any::<bool>(),
                                any::<prop::sample::Index>(),
                            )
                                .prop_map(move |(depth, az, el, stage, conflict, movement, reset, partner)| {
                                    (id, depth, az, el, stage, conflict, movement, reset, partner)
                                })
                        })
                        .collect::<Vec<_>>();
                    (Just(seq), slots, Just(n))
                })
                .prop_map(|(seq, raw, n)| {
                    let ids: Vec<u16> = raw.iter().map(|r| r.0).collect();
                    let slots = raw
                        .into_iter()
                        .map(|(id, depth, az, el, stage, conflict, movement, reset, partner)| {
                            let stage = if n > 1 { Stage::from_bits(stage) } else { Stage::from_bits(stage & 1) };
                            let partner_id = match stage {
                                Stage::RelayRx | Stage::RelayTx => {
                                    let others: Vec<u16> = ids.iter().copied().filter(|&p| p != id).collect();
                                    *partner.get(&others)
                                }
                                _ => 0,
                            };
                            SlotPayload {
                                network_id: id,
                                depth_code: depth,
                                azimuth_centideg: az,
                                elevation_centideg: el,
                                stage,
                                conflict,
                                movement,
                                reset,
                                partner_id,
                            }
                        })
                        .collect();
                    SuperFrame::new(seq, slots)
                })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(10_000))]

            #[test]
            fn round_trip(f in frame()) {
                let bytes = encode(&f).unwrap();
                prop_assert_eq!(bytes.len(), HEADER_LEN + SLOT_LEN * f.slots.len());
                prop_assert_eq!(bytes.len(), f.encoded_len());
                prop_assert_eq!(decode(&bytes).unwrap(), f);
            }
        }
    }
}
