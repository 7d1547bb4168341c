//! Reduced-order islanded microgrid.
//!
//! Each grid-forming inverter is its droop law plus a first-order filter on
//! measured power. Inverters are coupled through a linearized (small-angle)
//! power flow; loads sit directly on inverter buses. Angles are expressed in
//! a frame rotating at the rated frequency.

mod unit;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use unit::PlantUnit;

#[derive(Debug, Error, PartialEq)]
pub enum PlantError {
    #[error("DG {id}: {what} must be positive (got {value})")]
    NonPositive { id: u32, what: &'static str, value: f64 },
    #[error("line {a}-{b}: synchronizing coefficient must be positive (got {value})")]
    BadLine { a: u32, b: u32, value: f64 },
    #[error("load {id}: demand must be non-negative (got {value})")]
    BadLoad { id: u32, value: f64 },
    #[error("unknown bus {0}")]
    UnknownBus(u32),
    #[error("line graph over buses is not connected")]
    Disconnected,
    #[error("no DGs configured")]
    Empty,
}

/// Droop inverter parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgParams {
    pub id: u32,
    /// Rated frequency, Hz.
    pub f0_hz: f64,
    /// Nominal real power, W.
    pub p0_w: f64,
    /// Droop coefficient, Hz/W.
    pub kp_hz_per_w: f64,
    /// Power-measurement filter cutoff, rad/s.
    pub wc_rad_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub a: u32,
    pub b: u32,
    /// Synchronizing coefficient, W/rad.
    pub b_w_per_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub id: u32,
    pub bus: u32,
    pub p_w: f64,
    /// Time at which the load is disconnected, s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trip_s: Option<f64>,
}

/// Runtime load record; `active` only ever goes from true to false.
#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub spec: LoadSpec,
    pub bus_index: usize,
    pub active: bool,
}

/// Validated microgrid topology: DG `i` sits on bus `i`.
#[derive(Debug, Clone)]
pub struct Microgrid {
    pub dgs: Vec<DgParams>,
    /// `(i, j, b_ij)` over DG indices.
    pub lines: Vec<(usize, usize, f64)>,
    pub loads: Vec<Load>,
}

impl Microgrid {
    pub fn new(dgs: Vec<DgParams>, lines: &[Line], loads: &[LoadSpec]) -> Result<Self, PlantError> {
        if dgs.is_empty() {
            return Err(PlantError::Empty);
        }
        for dg in &dgs {
            for (what, value) in [("kp", dg.kp_hz_per_w), ("wc", dg.wc_rad_s), ("f0", dg.f0_hz)] {
                if !(value > 0.0) || !value.is_finite() {
                    return Err(PlantError::NonPositive { id: dg.id, what, value });
                }
            }
        }
        let index_of = |bus: u32| dgs.iter().position(|d| d.id == bus).ok_or(PlantError::UnknownBus(bus));
        let mut resolved = Vec::with_capacity(lines.len());
        for l in lines {
            if !(l.b_w_per_rad > 0.0) {
                return Err(PlantError::BadLine {
                    a: l.a,
                    b: l.b,
                    value: l.b_w_per_rad,
                });
            }
            resolved.push((index_of(l.a)?, index_of(l.b)?, l.b_w_per_rad));
        }
        let mut runtime_loads = Vec::with_capacity(loads.len());
        for spec in loads {
            if !(spec.p_w >= 0.0) {
                return Err(PlantError::BadLoad {
                    id: spec.id,
                    value: spec.p_w,
                });
            }
            runtime_loads.push(Load {
                bus_index: index_of(spec.bus)?,
                spec: spec.clone(),
                active: true,
            });
        }
        let grid = Self {
            dgs,
            lines: resolved,
            loads: runtime_loads,
        };
        if !grid.is_connected() {
            return Err(PlantError::Disconnected);
        }
        Ok(grid)
    }

    pub fn len(&self) -> usize {
        self.dgs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dgs.is_empty()
    }

    fn is_connected(&self) -> bool {
        let n = self.dgs.len();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &(a, b, _) in &self.lines {
                let next = if a == i {
                    b
                } else if b == i {
                    a
                } else {
                    continue;
                };
                if !seen[next] {
                    seen[next] = true;
                    stack.push(next);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Active demand per bus, W.
    pub fn bus_demand(&self) -> Vec<f64> {
        let mut demand = vec![0.0; self.dgs.len()];
        for load in self.loads.iter().filter(|l| l.active) {
            demand[load.bus_index] += load.spec.p_w;
        }
        demand
    }

    pub fn total_demand(&self) -> f64 {
        self.loads.iter().filter(|l| l.active).map(|l| l.spec.p_w).sum()
    }
}

/// Continuous and held state of the plant.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    /// Electrical angle in the frame rotating at f0, rad.
    pub theta: Vec<f64>,
    /// Filtered measured power, W.
    pub pm: Vec<f64>,
    /// Secondary correction, Hz; held constant across a step.
    pub delta_f: Vec<f64>,
}

impl PlantState {
    pub fn flat(n: usize) -> Self {
        Self {
            theta: vec![0.0; n],
            pm: vec![0.0; n],
            delta_f: vec![0.0; n],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta
            .iter()
            .chain(&self.pm)
            .chain(&self.delta_f)
            .all(|v| v.is_finite())
    }

    /// Instantaneous frequency of every DG, Hz.
    pub fn frequencies(&self, dgs: &[DgParams]) -> Vec<f64> {
        dgs.iter()
            .enumerate()
            .map(|(i, p)| droop_frequency(self.pm[i], self.delta_f[i], p))
            .collect()
    }
}

/// `f = f0 − kp·(Pm − P0) + δf`.
pub fn droop_frequency(pm_w: f64, delta_f_hz: f64, p: &DgParams) -> f64 {
    p.f0_hz - p.kp_hz_per_w * (pm_w - p.p0_w) + delta_f_hz
}

/// Linearized power injection of every DG: line flows plus co-located demand.
pub fn electrical_power(theta: &[f64], lines: &[(usize, usize, f64)], bus_demand: &[f64]) -> Vec<f64> {
    let mut p = bus_demand.to_vec();
    for &(i, j, b) in lines {
        let flow = b * (theta[i] - theta[j]);
        p[i] += flow;
        p[j] -= flow;
    }
    p
}

/// Time derivatives `(dθ/dt, dPm/dt)` with δf and demand held fixed.
pub fn derivatives(state: &PlantState, grid: &Microgrid, bus_demand: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let pe = electrical_power(&state.theta, &grid.lines, bus_demand);
    let mut dtheta = Vec::with_capacity(grid.len());
    let mut dpm = Vec::with_capacity(grid.len());
    for (i, p) in grid.dgs.iter().enumerate() {
        let f = droop_frequency(state.pm[i], state.delta_f[i], p);
        dtheta.push(2.0 * PI * (f - p.f0_hz));
        dpm.push(p.wc_rad_s * (pe[i] - state.pm[i]));
    }
    (dtheta, dpm)
}

/// Classical fourth-order Runge–Kutta advance of `(θ, Pm)` over `h` seconds.
pub fn integrate_step(state: &PlantState, grid: &Microgrid, bus_demand: &[f64], h: f64) -> PlantState {
    let offset = |base: &PlantState, k: &(Vec<f64>, Vec<f64>), scale: f64| PlantState {
        theta: base.theta.iter().zip(&k.0).map(|(x, d)| x + scale * d).collect(),
        pm: base.pm.iter().zip(&k.1).map(|(x, d)| x + scale * d).collect(),
        delta_f: base.delta_f.clone(),
    };
    let k1 = derivatives(state, grid, bus_demand);
    let k2 = derivatives(&offset(state, &k1, h / 2.0), grid, bus_demand);
    let k3 = derivatives(&offset(state, &k2, h / 2.0), grid, bus_demand);
    let k4 = derivatives(&offset(state, &k3, h), grid, bus_demand);
    let combine = |x: &[f64], a: &[f64], b: &[f64], c: &[f64], d: &[f64]| -> Vec<f64> {
        (0..x.len())
            .map(|i| x[i] + h / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]))
            .collect()
    };
    PlantState {
        theta: combine(&state.theta, &k1.0, &k2.0, &k3.0, &k4.0),
        pm: combine(&state.pm, &k1.1, &k2.1, &k3.1, &k4.1),
        delta_f: state.delta_f.clone(),
    }
}

/// Deactivates every load whose trip time is ≤ `t_s`. Returns whether any
/// load changed.
pub fn apply_events(loads: &mut [Load], t_s: f64) -> bool {
    let mut changed = false;
    for load in loads.iter_mut() {
        if let Some(trip) = load.spec.trip_s {
            if load.active && t_s >= trip {
                load.active = false;
                changed = true;
            }
        }
    }
    changed
}

/// Primary-control steady state: common frequency and per-DG power shares.
pub fn steady_state_frequency(params: &[DgParams], total_load_w: f64) -> (f64, Vec<f64>) {
    let stiffness: f64 = params.iter().map(|p| 1.0 / p.kp_hz_per_w).sum();
    let p0_total: f64 = params.iter().map(|p| p.p0_w).sum();
    // f0 may differ per DG; the stiffness-weighted mean is the shared reference.
    let f0 = params.iter().map(|p| p.f0_hz / p.kp_hz_per_w).sum::<f64>() / stiffness;
    let f_ss = f0 - (total_load_w - p0_total) / stiffness;
    let shares = params
        .iter()
        .map(|p| (p.f0_hz - f_ss) / p.kp_hz_per_w + p.p0_w)
        .collect();
    (f_ss, shares)
}

/// State at the primary-control equilibrium for the currently active loads,
/// with the angle of DG 0 as reference.
pub fn equilibrium(grid: &Microgrid) -> PlantState {
    let n = grid.len();
    let demand = grid.bus_demand();
    let (_, shares) = steady_state_frequency(&grid.dgs, demand.iter().sum());
    let mut theta = vec![0.0; n];
    if n > 1 {
        let m = n - 1;
        let mut lap = DMatrix::<f64>::zeros(m, m);
        for &(i, j, b) in &grid.lines {
            for (x, y) in [(i, j), (j, i)] {
                if x > 0 {
                    lap[(x - 1, x - 1)] += b;
                    if y > 0 {
                        lap[(x - 1, y - 1)] -= b;
                    }
                }
            }
        }
        let rhs = DVector::from_iterator(m, (1..n).map(|i| shares[i] - demand[i]));
        let sol = lap
            .lu()
            .solve(&rhs)
            .expect("reduced Laplacian of a connected graph is nonsingular");
        for i in 1..n {
            theta[i] = sol[i - 1];
        }
    }
    PlantState {
        theta,
        pm: shares,
        delta_f: vec![0.0; n],
    }
}
