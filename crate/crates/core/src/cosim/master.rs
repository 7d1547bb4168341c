use std::collections::HashMap;

use thiserror::Error;

use super::port::{Connection, ConnectionId, Direction, PortRef, PortSpec, UnitId, Value};
use super::unit::{SimUnit, StepContext, UnitError};
use crate::time::{Resolution, SimTime};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MasterConfig {
    /// Fixed macro step in ticks.
    pub step_ticks: u64,
    pub resolution: Resolution,
    pub seed: u64,
}

impl MasterConfig {
    /// Builds a configuration from a step in seconds; fails if the step is
    /// not an exact positive multiple of the resolution.
    pub fn new(step_s: f64, resolution: Resolution, seed: u64) -> Result<Self, ConfigError> {
        match resolution.exact_ticks(step_s) {
            Some(ticks) if ticks > 0 => Ok(Self {
                step_ticks: ticks,
                resolution,
                seed,
            }),
            _ => Err(ConfigError::StepNotMultiple { step_s }),
        }
    }

    pub fn step_seconds(&self) -> f64 {
        self.resolution.ticks_to_seconds(self.step_ticks)
    }
}

impl Default for MasterConfig {
    fn default() -> Self {
        Self {
            step_ticks: 1000,
            resolution: Resolution::MICROSECOND,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("master sealed: units and connections must be added before initialize")]
    Sealed,
    #[error("duplicate unit id {0:?}")]
    DuplicateUnit(String),
    #[error("unknown unit {0}")]
    UnknownUnit(String),
    #[error("unknown port {unit}.{port}")]
    UnknownPort { unit: String, port: String },
    #[error("direction mismatch: {src} must be an output and {dst} an input")]
    DirectionMismatch { src: String, dst: String },
    #[error("unit mismatch: {src} [{src_q}] -> {dst} [{dst_q}]")]
    UnitMismatch {
        src: String,
        src_q: String,
        dst: String,
        dst_q: String,
    },
    #[error("input {0} already driven")]
    AlreadyDriven(String),
    #[error("undriven inputs without default: {}", .0.join(", "))]
    Undriven(Vec<String>),
    #[error("step {step_s} s is not a positive multiple of the tick resolution")]
    StepNotMultiple { step_s: f64 },
    #[error("master not initialized")]
    NotInitialized,
    #[error("step requested at {requested} but master time is {current}")]
    TimeMismatch { requested: SimTime, current: SimTime },
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unit {name} ({unit}) failed at {t}: {source}")]
    Step {
        unit: UnitId,
        name: String,
        t: SimTime,
        #[source]
        source: UnitError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lifecycle {
    Created,
    Initialized,
    Stepping,
    Terminated,
}

struct Slot {
    unit: Box<dyn SimUnit>,
    name: String,
    ports: Vec<PortSpec>,
    by_name: HashMap<String, usize>,
    outputs: Vec<Option<Value>>,
    lifecycle: Lifecycle,
}

/// Fixed-step Jacobi co-simulation master.
///
/// At every exchange point all outputs are sampled, copied to the inputs
/// they drive, and then every unit steps once in registration order.
pub struct Master {
    config: MasterConfig,
    slots: Vec<Slot>,
    connections: Vec<Connection>,
    drivers: HashMap<PortRef, ConnectionId>,
    time: SimTime,
    sealed: bool,
    steps: u64,
}

/// Read-only view of all outputs after a step.
pub struct Snapshot<'a> {
    master: &'a Master,
}

impl<'a> Snapshot<'a> {
    pub fn time(&self) -> SimTime {
        self.master.time
    }

    pub fn seconds(&self) -> f64 {
        self.master.time.seconds(self.master.config.resolution)
    }

    pub fn output(&self, port: PortRef) -> Option<&'a Value> {
        self.master.output(port)
    }

    pub fn real(&self, port: PortRef) -> f64 {
        self.output(port).and_then(Value::as_real).unwrap_or(f64::NAN)
    }
}

impl Master {
    pub fn new(config: MasterConfig) -> Self {
        Self {
            config,
            slots: Vec::new(),
            connections: Vec::new(),
            drivers: HashMap::new(),
            time: SimTime::ZERO,
            sealed: false,
            steps: 0,
        }
    }

    pub fn config(&self) -> &MasterConfig {
        &self.config
    }

    pub fn time(&self) -> SimTime {
        self.time
    }

    pub fn seconds(&self) -> f64 {
        self.time.seconds(self.config.resolution)
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps
    }

    pub fn register_unit(&mut self, unit: Box<dyn SimUnit>) -> Result<UnitId, ConfigError> {
        if self.sealed {
            return Err(ConfigError::Sealed);
        }
        let name = unit.name().to_string();
        if self.slots.iter().any(|s| s.name == name) {
            return Err(ConfigError::DuplicateUnit(name));
        }
        let ports = unit.ports();
        let by_name = ports.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        let outputs = vec![None; ports.len()];
        self.slots.push(Slot {
            unit,
            name,
            ports,
            by_name,
            outputs,
            lifecycle: Lifecycle::Created,
        });
        Ok(UnitId(self.slots.len() - 1))
    }

    pub fn unit_id(&self, name: &str) -> Option<UnitId> {
        self.slots.iter().position(|s| s.name == name).map(UnitId)
    }

    pub fn evaluation_order(&self) -> Vec<UnitId> {
        (0..self.slots.len()).map(UnitId).collect()
    }

    pub fn lifecycle(&self, id: UnitId) -> Option<Lifecycle> {
        self.slots.get(id.0).map(|s| s.lifecycle)
    }

    pub fn unit(&self, id: UnitId) -> Option<&dyn SimUnit> {
        self.slots.get(id.0).map(|s| s.unit.as_ref())
    }

    /// Resolves `unit.port` by names.
    pub fn port(&self, unit: &str, port: &str) -> Result<PortRef, ConfigError> {
        let id = self
            .unit_id(unit)
            .ok_or_else(|| ConfigError::UnknownUnit(unit.to_string()))?;
        let index = *self.slots[id.0]
            .by_name
            .get(port)
            .ok_or_else(|| ConfigError::UnknownPort {
                unit: unit.to_string(),
                port: port.to_string(),
            })?;
        Ok(PortRef { unit: id, index })
    }

    fn spec(&self, port: PortRef) -> &PortSpec {
        &self.slots[port.unit.0].ports[port.index]
    }

    fn label(&self, port: PortRef) -> String {
        format!("{}.{}", self.slots[port.unit.0].name, self.spec(port).name)
    }

    pub fn connect(&mut self, src: PortRef, dst: PortRef) -> Result<ConnectionId, ConfigError> {
        if self.sealed {
            return Err(ConfigError::Sealed);
        }
        for p in [src, dst] {
            if p.unit.0 >= self.slots.len() || p.index >= self.slots[p.unit.0].ports.len() {
                return Err(ConfigError::UnknownPort {
                    unit: p.unit.to_string(),
                    port: p.index.to_string(),
                });
            }
        }
        let (s, d) = (self.spec(src), self.spec(dst));
        if s.direction != Direction::Output || d.direction != Direction::Input {
            return Err(ConfigError::DirectionMismatch {
                src: self.label(src),
                dst: self.label(dst),
            });
        }
        if s.quantity != d.quantity {
            return Err(ConfigError::UnitMismatch {
                src: self.label(src),
                src_q: s.quantity.to_string(),
                dst: self.label(dst),
                dst_q: d.quantity.to_string(),
            });
        }
        if self.drivers.contains_key(&dst) {
            return Err(ConfigError::AlreadyDriven(self.label(dst)));
        }
        let id = ConnectionId(self.connections.len());
        self.connections.push(Connection { src, dst });
        self.drivers.insert(dst, id);
        Ok(id)
    }

    /// Name-based convenience over [`connect`](Self::connect).
    pub fn connect_by_name(&mut self, src: (&str, &str), dst: (&str, &str)) -> Result<ConnectionId, ConfigError> {
        let s = self.port(src.0, src.1)?;
        let d = self.port(dst.0, dst.1)?;
        self.connect(s, d)
    }

    fn ctx(&self) -> StepContext {
        StepContext {
            t: self.time,
            h_ticks: self.config.step_ticks,
            resolution: self.config.resolution,
        }
    }

    /// Seals the graph, initializes every unit at `t0`, and propagates
    /// connection values once.
    pub fn initialize(&mut self, t0: SimTime) -> Result<(), SimError> {
        if self.sealed {
            return Err(ConfigError::Sealed.into());
        }
        // Single-driver rule, re-checked independently of the driver map.
        let mut seen = HashMap::new();
        for c in &self.connections {
            if seen.insert(c.dst, ()).is_some() {
                return Err(ConfigError::AlreadyDriven(self.label(c.dst)).into());
            }
        }
        let mut undriven = Vec::new();
        for (u, slot) in self.slots.iter().enumerate() {
            for (i, p) in slot.ports.iter().enumerate() {
                let r = PortRef {
                    unit: UnitId(u),
                    index: i,
                };
                if p.direction == Direction::Input && p.default.is_none() && !self.drivers.contains_key(&r) {
                    undriven.push(self.label(r));
                }
            }
        }
        if !undriven.is_empty() {
            return Err(ConfigError::Undriven(undriven).into());
        }

        self.time = t0;
        self.sealed = true;
        let ctx = self.ctx();
        for (u, slot) in self.slots.iter_mut().enumerate() {
            for (i, p) in slot.ports.iter().enumerate() {
                let r = PortRef {
                    unit: UnitId(u),
                    index: i,
                };
                if let (Direction::Input, Some(v), false) = (p.direction, &p.default, self.drivers.contains_key(&r)) {
                    slot.unit.set_input(i, v);
                }
            }
            slot.unit.initialize(&ctx).map_err(|source| SimError::Step {
                unit: UnitId(u),
                name: slot.name.clone(),
                t: t0,
                source,
            })?;
            slot.lifecycle = Lifecycle::Initialized;
        }
        self.refresh_outputs();
        self.propagate();
        for slot in &mut self.slots {
            slot.lifecycle = Lifecycle::Stepping;
        }
        Ok(())
    }

    fn refresh_outputs(&mut self) {
        for slot in &mut self.slots {
            for (i, p) in slot.ports.iter().enumerate() {
                if p.direction == Direction::Output {
                    slot.outputs[i] = Some(slot.unit.get_output(i));
                }
            }
        }
    }

    fn propagate(&mut self) {
        for c in &self.connections {
            let value = self.slots[c.src.unit.0].outputs[c.src.index]
                .clone()
                .expect("output cached");
            self.slots[c.dst.unit.0].unit.set_input(c.dst.index, &value);
        }
    }

    pub fn output(&self, port: PortRef) -> Option<&Value> {
        self.slots.get(port.unit.0)?.outputs.get(port.index)?.as_ref()
    }

    /// One Jacobi macro step from `t` to `t + h`.
    pub fn step_all(&mut self, t: SimTime) -> Result<(), SimError> {
        if !self.sealed || self.slots.iter().any(|s| s.lifecycle != Lifecycle::Stepping) {
            return Err(ConfigError::NotInitialized.into());
        }
        if t != self.time {
            return Err(ConfigError::TimeMismatch {
                requested: t,
                current: self.time,
            }
            .into());
        }
        self.propagate();
        let ctx = self.ctx();
        for (u, slot) in self.slots.iter_mut().enumerate() {
            slot.unit.do_step(&ctx).map_err(|source| SimError::Step {
                unit: UnitId(u),
                name: slot.name.clone(),
                t,
                source,
            })?;
        }
        self.time = self.time.advance(self.config.step_ticks);
        self.steps += 1;
        self.refresh_outputs();
        Ok(())
    }

    /// Steps until master time ≥ `until_s`, calling `observer` after each step.
    pub fn run<F>(&mut self, until_s: f64, mut observer: F) -> Result<(), SimError>
    where
        F: FnMut(&Snapshot<'_>),
    {
        let until = self.config.resolution.ceil_ticks(until_s);
        while self.time.ticks() < until {
            self.step_all(self.time)?;
            observer(&Snapshot { master: self });
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Snapshot<'_> {
        Snapshot { master: self }
    }

    pub fn terminate(&mut self) {
        for slot in &mut self.slots {
            if slot.lifecycle != Lifecycle::Terminated {
                slot.unit.terminate();
                slot.lifecycle = Lifecycle::Terminated;
            }
        }
    }
}
