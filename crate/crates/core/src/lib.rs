//! Network initialization for hybrid underwater optical-acoustic networks:
//! protocol state machines for the surface base station and the underwater
//! nodes, a bit-exact acoustic superframe codec, an optical link budget, and
//! a deterministic discrete-event simulator around them.

pub mod acoustic_frame;
pub mod bs_protocol;
pub mod channel;
pub mod geometry;
pub mod uwn_protocol;
pub mod scenario;
pub mod sim_engine;
