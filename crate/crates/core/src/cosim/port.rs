use std::fmt;

use crate::message::{Outgoing, Packet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Input,
    Output,
}

/// Unit-of-measure tag carried by every port. Connected ports must agree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quantity {
    Hertz,
    Watt,
    Second,
    Dimensionless,
    /// Opaque message payloads exchanged with the communication emulator.
    Message,
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Quantity::Hertz => "Hz",
            Quantity::Watt => "W",
            Quantity::Second => "s",
            Quantity::Dimensionless => "1",
            Quantity::Message => "msg",
        };
        f.write_str(s)
    }
}

/// Value carried across a connection at an exchange point.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Real(f64),
    /// Messages emitted during the last step, to be transmitted.
    Outbox(Vec<Outgoing>),
    /// Messages delivered during the last step.
    Inbox(Vec<Packet>),
}

impl Value {
    pub fn as_real(&self) -> Option<f64> {
        match self {
            Value::Real(v) => Some(*v),
            _ => None,
        }
    }
}

/// Static description of one port of a unit.
#[derive(Debug, Clone)]
pub struct PortSpec {
    pub name: String,
    pub direction: Direction,
    pub quantity: Quantity,
    /// Value used for an input left unconnected. Inputs without a default
    /// must be driven.
    pub default: Option<Value>,
}

impl PortSpec {
    pub fn input(name: impl Into<String>, quantity: Quantity) -> Self {
        Self {
            name: name.into(),
            direction: Direction::Input,
            quantity,
            default: None,
        }
    }

    pub fn output(name: impl Into<String>, quantity: Quantity) -> Self {
        Self {
            name: name.into(),
            direction: Direction::Output,
            quantity,
            default: None,
        }
    }

    pub fn with_default(mut self, value: Value) -> Self {
        self.default = Some(value);
        self
    }
}

/// Dense unit identifier assigned at registration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UnitId(pub usize);

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// A resolved port: owning unit plus the port's index in that unit's spec list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PortRef {
    pub unit: UnitId,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConnectionId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Connection {
    pub src: PortRef,
    pub dst: PortRef,
}
