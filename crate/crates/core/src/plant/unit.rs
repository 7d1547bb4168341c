use super::{apply_events, electrical_power, equilibrium, integrate_step, Microgrid, PlantState};
use crate::cosim::{PortSpec, Quantity, SimUnit, StepContext, UnitError, Value};

/// Co-simulation wrapper around [`Microgrid`].
///
/// Ports for `n` DGs, numbered from 1 by position:
/// inputs `df_k` [Hz] (default 0); outputs `f_k` [Hz], `pe_k` [W],
/// `pm_k` [W], `dfh_k` [Hz] (the δf actually applied to the emitted sample)
/// and `demand` [W] (total active load).
pub struct PlantUnit {
    name: String,
    grid: Microgrid,
    state: PlantState,
    demand: Vec<f64>,
    pe: Vec<f64>,
    f: Vec<f64>,
    start_at_equilibrium: bool,
}

impl PlantUnit {
    pub fn new(name: impl Into<String>, grid: Microgrid, start_at_equilibrium: bool) -> Self {
        let n = grid.len();
        Self {
            name: name.into(),
            state: PlantState::flat(n),
            demand: vec![0.0; n],
            pe: vec![0.0; n],
            f: vec![0.0; n],
            grid,
            start_at_equilibrium,
        }
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    pub fn grid(&self) -> &Microgrid {
        &self.grid
    }

    fn refresh(&mut self) {
        self.demand = self.grid.bus_demand();
        self.pe = electrical_power(&self.state.theta, &self.grid.lines, &self.demand);
        self.f = self.state.frequencies(&self.grid.dgs);
    }
}

impl SimUnit for PlantUnit {
    fn name(&self) -> &str {
        &self.name
    }

    fn ports(&self) -> Vec<PortSpec> {
        let n = self.grid.len();
        let mut ports = Vec::with_capacity(5 * n + 1);
        for k in 1..=n {
            ports.push(PortSpec::input(format!("df_{k}"), Quantity::Hertz).with_default(Value::Real(0.0)));
        }
        for (prefix, q) in [
            ("f", Quantity::Hertz),
            ("pe", Quantity::Watt),
            ("pm", Quantity::Watt),
            ("dfh", Quantity::Hertz),
        ] {
            for k in 1..=n {
                ports.push(PortSpec::output(format!("{prefix}_{k}"), q));
            }
        }
        ports.push(PortSpec::output("demand", Quantity::Watt));
        ports
    }

    fn initialize(&mut self, ctx: &StepContext) -> Result<(), UnitError> {
        apply_events(&mut self.grid.loads, ctx.t_seconds());
        if self.start_at_equilibrium {
            let held = std::mem::take(&mut self.state.delta_f);
            self.state = equilibrium(&self.grid);
            if held.len() == self.state.delta_f.len() {
                self.state.delta_f = held;
            }
        }
        self.refresh();
        Ok(())
    }

    fn set_input(&mut self, port: usize, value: &Value) {
        if let (Some(slot), Some(v)) = (self.state.delta_f.get_mut(port), value.as_real()) {
            *slot = v;
        }
    }

    fn do_step(&mut self, ctx: &StepContext) -> Result<(), UnitError> {
        // Demand is piecewise constant over a step; events at t were applied
        // when the previous step ended.
        let demand = self.grid.bus_demand();
        let next = integrate_step(&self.state, &self.grid, &demand, ctx.h_seconds());
        if !next.is_finite() {
            return Err(UnitError::NonFinite(format!(
                "plant state at t = {} s: theta {:?}, pm {:?}, df {:?}",
                ctx.t_end().seconds(ctx.resolution),
                next.theta,
                next.pm,
                next.delta_f
            )));
        }
        self.state = next;
        apply_events(&mut self.grid.loads, ctx.t_end().seconds(ctx.resolution));
        self.refresh();
        Ok(())
    }

    fn get_output(&self, port: usize) -> Value {
        let n = self.grid.len();
        let v = match port {
            p if p < n => self.state.delta_f[p],
            p if p < 2 * n => self.f[p - n],
            p if p < 3 * n => self.pe[p - 2 * n],
            p if p < 4 * n => self.state.pm[p - 3 * n],
            p if p < 5 * n => self.state.delta_f[p - 4 * n],
            _ => self.demand.iter().sum(),
        };
        Value::Real(v)
    }

    fn as_any(&self) -> Option<&dyn std::any::Any> {
        Some(self)
    }
}
