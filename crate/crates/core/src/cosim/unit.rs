use thiserror::Error;

use super::port::{PortSpec, Value};
use crate::time::{Resolution, SimTime};

/// Timing information handed to a unit for one call.
#[derive(Debug, Clone, Copy)]
pub struct StepContext {
    /// Time at the start of the step (the exchange point).
    pub t: SimTime,
    /// Step size in ticks.
    pub h_ticks: u64,
    pub resolution: Resolution,
}

impl StepContext {
    pub fn t_seconds(&self) -> f64 {
        self.t.seconds(self.resolution)
    }

    pub fn h_seconds(&self) -> f64 {
        self.resolution.ticks_to_seconds(self.h_ticks)
    }

    /// Time at the end of the step.
    pub fn t_end(&self) -> SimTime {
        self.t.advance(self.h_ticks)
    }
}

#[derive(Debug, Error)]
pub enum UnitError {
    /// The unit's continuous state became NaN or infinite.
    #[error("non-finite state: {0}")]
    NonFinite(String),
    #[error("{0}")]
    Failed(String),
}

/// The contract every co-simulated component implements.
///
/// Lifecycle: construct → [`initialize`](Self::initialize) → repeated
/// ([`set_input`](Self::set_input)… → [`do_step`](Self::do_step) →
/// [`get_output`](Self::get_output)…) → [`terminate`](Self::terminate).
/// Port indices refer to positions in the vector returned by
/// [`ports`](Self::ports).
pub trait SimUnit: Send {
    fn name(&self) -> &str;

    fn ports(&self) -> Vec<PortSpec>;

    /// Make every output valid at `t0`.
    fn initialize(&mut self, ctx: &StepContext) -> Result<(), UnitError>;

    fn set_input(&mut self, port: usize, value: &Value);

    /// Advance from `ctx.t` to `ctx.t + h`, using the inputs last set.
    fn do_step(&mut self, ctx: &StepContext) -> Result<(), UnitError>;

    fn get_output(&self, port: usize) -> Value;

    fn terminate(&mut self) {}

    /// Unit-specific summary made available after the run, if any.
    fn as_any(&self) -> Option<&dyn std::any::Any> {
        None
    }
}
