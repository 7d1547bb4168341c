//! Message vocabulary shared by the communication emulator and the
//! controllers that talk through it.

use serde::{Deserialize, Serialize};

use crate::time::SimTime;

/// Network endpoint name, e.g. `"mgcc"` or `"dg-3"`.
pub type Endpoint = String;

/// One consensus exchange: the sender's value at `iteration` of `round`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusMsg {
    pub round: u64,
    pub iteration: u32,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    /// A scalar sample, e.g. a frequency measurement or a δf command (Hz).
    Sample(f64),
    Consensus(ConsensusMsg),
}

/// A message a unit hands to the emulator for transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub dst: Endpoint,
    pub size_bits: u32,
    pub payload: Payload,
}

/// A message in flight or delivered by the emulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub seq: u64,
    pub src: Endpoint,
    pub dst: Endpoint,
    pub link: String,
    pub payload: Payload,
    pub size_bits: u32,
    pub send_time: SimTime,
    /// `None` when the packet was dropped.
    pub deliver_time: Option<SimTime>,
}
