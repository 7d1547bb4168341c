use super::Emulator;
use crate::cosim::{PortSpec, Quantity, SimUnit, StepContext, UnitError, Value};
use crate::message::{Outgoing, Packet};

/// The emulator as a simulation unit.
///
/// For every endpoint `E` it exposes input `tx.E` (messages `E` wants to
/// send, stamped with the exchange time) and output `rx.E` (messages
/// delivered to `E` during the step).
pub struct CommUnit {
    name: String,
    emulator: Emulator,
    endpoints: Vec<String>,
    tx: Vec<Vec<Outgoing>>,
    rx: Vec<Vec<Packet>>,
}

impl CommUnit {
    pub fn new(name: impl Into<String>, emulator: Emulator) -> Self {
        let endpoints = emulator.endpoints();
        let m = endpoints.len();
        Self {
            name: name.into(),
            emulator,
            endpoints,
            tx: vec![Vec::new(); m],
            rx: vec![Vec::new(); m],
        }
    }

    pub fn emulator(&self) -> &Emulator {
        &self.emulator
    }

    pub fn endpoints(&self) -> &[String] {
        &self.endpoints
    }
}

impl SimUnit for CommUnit {
    fn name(&self) -> &str {
        &self.name
    }

    fn ports(&self) -> Vec<PortSpec> {
        let mut ports: Vec<PortSpec> = self
            .endpoints
            .iter()
            .map(|e| PortSpec::input(format!("tx.{e}"), Quantity::Message).with_default(Value::Outbox(Vec::new())))
            .collect();
        ports.extend(
            self.endpoints
                .iter()
                .map(|e| PortSpec::output(format!("rx.{e}"), Quantity::Message)),
        );
        ports
    }

    fn initialize(&mut self, _ctx: &StepContext) -> Result<(), UnitError> {
        Ok(())
    }

    fn set_input(&mut self, port: usize, value: &Value) {
        if let (Some(slot), Value::Outbox(msgs)) = (self.tx.get_mut(port), value) {
            slot.clone_from(msgs);
        }
    }

    fn do_step(&mut self, ctx: &StepContext) -> Result<(), UnitError> {
        for (i, src) in self.endpoints.iter().enumerate() {
            for msg in self.tx[i].drain(..) {
                self.emulator
                    .send(src, &msg.dst, msg.payload, msg.size_bits, ctx.t)
                    .map_err(|e| UnitError::Failed(e.to_string()))?;
            }
        }
        let end = ctx.t_end();
        for (i, dst) in self.endpoints.iter().enumerate() {
            self.rx[i] = self.emulator.poll_delivered(dst, end);
        }
        Ok(())
    }

    fn get_output(&self, port: usize) -> Value {
        let m = self.endpoints.len();
        Value::Inbox(self.rx.get(port.wrapping_sub(m)).cloned().unwrap_or_default())
    }

    fn as_any(&self) -> Option<&dyn std::any::Any> {
        Some(self)
    }
}
