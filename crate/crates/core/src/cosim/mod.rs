//! FMI-like simulation-unit contract and the fixed-step Jacobi master.

mod master;
mod port;
mod unit;

pub use master::{ConfigError, Lifecycle, Master, MasterConfig, SimError, Snapshot};
pub use port::{Connection, ConnectionId, Direction, PortRef, PortSpec, Quantity, UnitId, Value};
pub use unit::{SimUnit, StepContext, UnitError};

/// Small general-purpose units used for wiring tests and frozen inputs.
pub mod units {
    use super::*;

    /// Emits a constant on output `y`.
    pub struct Constant {
        name: String,
        value: f64,
        quantity: Quantity,
    }

    impl Constant {
        pub fn new(name: impl Into<String>, value: f64, quantity: Quantity) -> Self {
            Self {
                name: name.into(),
                value,
                quantity,
            }
        }
    }

    impl SimUnit for Constant {
        fn name(&self) -> &str {
            &self.name
        }

        fn ports(&self) -> Vec<PortSpec> {
            vec![PortSpec::output("y", self.quantity)]
        }

        fn initialize(&mut self, _ctx: &StepContext) -> Result<(), UnitError> {
            Ok(())
        }

        fn set_input(&mut self, _port: usize, _value: &Value) {}

        fn do_step(&mut self, _ctx: &StepContext) -> Result<(), UnitError> {
            Ok(())
        }

        fn get_output(&self, _port: usize) -> Value {
            Value::Real(self.value)
        }
    }

    /// `y(t + h) = x(t)`: one macro step of pure delay. Carries any value
    /// kind, so it also stands in for a zero-latency network hop.
    pub struct PassThrough {
        name: String,
        quantity: Quantity,
        input: Value,
        output: Value,
    }

    impl PassThrough {
        pub fn new(name: impl Into<String>, quantity: Quantity, initial: Value) -> Self {
            Self {
                name: name.into(),
                quantity,
                input: initial.clone(),
                output: initial,
            }
        }
    }

    impl SimUnit for PassThrough {
        fn name(&self) -> &str {
            &self.name
        }

        fn ports(&self) -> Vec<PortSpec> {
            vec![
                PortSpec::input("x", self.quantity),
                PortSpec::output("y", self.quantity),
            ]
        }

        fn initialize(&mut self, _ctx: &StepContext) -> Result<(), UnitError> {
            Ok(())
        }

        fn set_input(&mut self, _port: usize, value: &Value) {
            self.input = value.clone();
        }

        fn do_step(&mut self, _ctx: &StepContext) -> Result<(), UnitError> {
            self.output = self.input.clone();
            Ok(())
        }

        fn get_output(&self, _port: usize) -> Value {
            self.output.clone()
        }
    }
}
