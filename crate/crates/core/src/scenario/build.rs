//! Turns a validated scenario into a wired master.

use anyhow::{anyhow, Context, Result};

use super::file::{dg_endpoint, ControlMode, InitMode, ScenarioFile, MGCC_ENDPOINT};
use crate::comm::{resolve_link, CommUnit, Emulator, LinkParams};
use crate::control::{
    metropolis_weights, AgentPi, ConsensusAgent, ConsensusConfig, LocalController, MgccUnit, PiParams, WeightMatrix,
};
use crate::cosim::{Master, MasterConfig, PortRef, SimUnit, UnitId};
use crate::plant::{DgParams, Microgrid, PlantUnit};
use crate::time::Resolution;

pub const PLANT_UNIT: &str = "plant";
pub const COMM_UNIT: &str = "comm";
pub const MGCC_UNIT: &str = "mgcc";

/// Ports observed while running, per DG in plant order.
#[derive(Debug, Clone)]
pub struct Probes {
    pub f: Vec<PortRef>,
    pub pe: Vec<PortRef>,
    pub pm: Vec<PortRef>,
    pub df: Vec<PortRef>,
    pub demand: PortRef,
    /// Per-agent consensus output and iteration counter (distributed mode).
    pub agent_avg: Vec<PortRef>,
    pub agent_counter: Vec<PortRef>,
}

pub struct Built {
    pub master: Master,
    pub wiring: Wiring,
}

/// Everything about a built scenario except the master itself.
pub struct Wiring {
    pub dgs: Vec<DgParams>,
    pub probes: Probes,
    pub comm: Option<UnitId>,
    pub agents: Vec<UnitId>,
    pub weights: Option<WeightMatrix>,
    /// Trace columns after `t_s`, in order.
    pub columns: Vec<(String, PortRef)>,
}

pub fn dg_params(s: &ScenarioFile) -> Vec<DgParams> {
    s.plant
        .dg
        .iter()
        .map(|d| DgParams {
            id: d.id,
            f0_hz: d.f0_hz.unwrap_or(s.plant.f0_hz),
            p0_w: d.p0_w,
            kp_hz_per_w: d.kp_hz_per_w,
            wc_rad_s: d.wc_rad_s,
        })
        .collect()
}

pub fn resolution(s: &ScenarioFile) -> Resolution {
    Resolution::per_second(s.master.ticks_per_second).expect("validated resolution")
}

pub fn links(s: &ScenarioFile) -> Vec<LinkParams> {
    s.network
        .link
        .iter()
        .map(|l| {
            resolve_link(
                s.network.preset,
                &l.id,
                &l.src,
                &l.dst,
                l.distance_m,
                &l.overrides,
                s.network.latency_scale,
            )
        })
        .collect()
}

pub fn weights(s: &ScenarioFile) -> Result<WeightMatrix> {
    let ids: Vec<u32> = s.plant.dg.iter().map(|d| d.id).collect();
    let edges: Vec<(u32, u32)> = s.control.agent_edges.iter().map(|e| (e[0], e[1])).collect();
    Ok(metropolis_weights(&ids, &edges)?)
}

/// Builds and wires every unit of the scenario. The master is not yet
/// initialized.
pub fn build(s: &ScenarioFile) -> Result<Built> {
    let res = resolution(s);
    let config = MasterConfig::new(s.master.step_s, res, s.metadata.seed)?;
    let mut master = Master::new(config);

    let dgs = dg_params(s);
    let grid = Microgrid::new(dgs.clone(), &s.plant.line, &s.plant.load)?;
    let n = dgs.len();
    master.register_unit(Box::new(PlantUnit::new(
        PLANT_UNIT,
        grid,
        s.plant.init == InitMode::Equilibrium,
    )))?;
    let port = |m: &Master, prefix: &str, k: usize| m.port(PLANT_UNIT, &format!("{prefix}_{}", k + 1));
    let mut probes = Probes {
        f: Vec::with_capacity(n),
        pe: Vec::with_capacity(n),
        pm: Vec::with_capacity(n),
        df: Vec::with_capacity(n),
        demand: master.port(PLANT_UNIT, "demand")?,
        agent_avg: Vec::new(),
        agent_counter: Vec::new(),
    };
    for k in 0..n {
        probes.f.push(port(&master, "f", k)?);
        probes.pe.push(port(&master, "pe", k)?);
        probes.pm.push(port(&master, "pm", k)?);
        probes.df.push(port(&master, "dfh", k)?);
    }

    let mut comm = None;
    let mut agents = Vec::new();
    let mut weight_matrix = None;
    let c = &s.control;
    let pi = PiParams {
        kp: c.kp,
        ki: c.ki,
        clamp_hz: c.clamp_hz,
    };
    let period_ticks = res
        .exact_ticks(c.update_period_s)
        .ok_or_else(|| anyhow!("update period is not a multiple of the resolution"))?;

    if c.mode != ControlMode::PrimaryOnly {
        let emulator = Emulator::new(links(s), s.metadata.seed, res, s.network.preset.is_ideal())?;
        comm = Some(master.register_unit(Box::new(CommUnit::new(COMM_UNIT, emulator)))?);
    }

    match c.mode {
        ControlMode::PrimaryOnly => {}
        ControlMode::Centralized => {
            let targets = dgs.iter().map(|d| dg_endpoint(d.id)).collect();
            master.register_unit(Box::new(MgccUnit::new(
                MGCC_UNIT,
                s.plant.f0_hz,
                pi,
                period_ticks,
                targets,
                c.sample_bits,
            )))?;
            master.connect_by_name((MGCC_UNIT, "tx"), (COMM_UNIT, &format!("tx.{MGCC_ENDPOINT}")))?;
            master.connect_by_name((COMM_UNIT, &format!("rx.{MGCC_ENDPOINT}")), (MGCC_UNIT, "rx"))?;
            for (k, dg) in dgs.iter().enumerate() {
                let name = format!("local-{}", dg.id);
                let ep = dg_endpoint(dg.id);
                let uplink = (dg.id == c.measurement_dg).then(|| MGCC_ENDPOINT.to_string());
                master.register_unit(Box::new(LocalController::new(
                    name.clone(),
                    uplink,
                    period_ticks,
                    c.sample_bits,
                )))?;
                master.connect_by_name((COMM_UNIT, &format!("rx.{ep}")), (&name, "rx"))?;
                master.connect_by_name((&name, "tx"), (COMM_UNIT, &format!("tx.{ep}")))?;
                master.connect(probes.f[k], master.port(&name, "f_local")?)?;
                master.connect(master.port(&name, "df")?, port(&master, "df", k)?)?;
            }
        }
        ControlMode::Distributed => {
            let w = weights(s)?;
            let timeout = c.round_timeout_s.map(|t| res.ceil_ticks(t));
            let cfg = ConsensusConfig {
                n_consensus: c.n_consensus,
                size_bits: c.consensus_bits,
                round_timeout_ticks: timeout,
            };
            for (k, dg) in dgs.iter().enumerate() {
                let agent = ConsensusAgent::new(dg.id, &w, cfg, dg_endpoint)
                    .with_context(|| format!("agent {} missing from weight matrix", dg.id))?;
                let name = agent.name().to_string();
                let ep = dg_endpoint(dg.id);
                agents.push(master.register_unit(Box::new(agent))?);
                master.connect(probes.f[k], master.port(&name, "f_meas")?)?;
                master.connect_by_name((COMM_UNIT, &format!("rx.{ep}")), (&name, "rx"))?;
                master.connect_by_name((&name, "tx"), (COMM_UNIT, &format!("tx.{ep}")))?;
                probes.agent_avg.push(master.port(&name, "avg")?);
                probes.agent_counter.push(master.port(&name, "counter")?);

                let pi_name = format!("pi-{}", dg.id);
                master.register_unit(Box::new(AgentPi::new(pi_name.clone(), dgs[k].f0_hz, pi, period_ticks)))?;
                master.connect_by_name((&name, "avg"), (&pi_name, "avg"))?;
                master.connect_by_name((&name, "rounds"), (&pi_name, "rounds"))?;
                master.connect(master.port(&pi_name, "df")?, port(&master, "df", k)?)?;
            }
            weight_matrix = Some(w);
        }
    }

    let mut columns = Vec::new();
    for (prefix, refs) in [
        ("f", &probes.f),
        ("pe", &probes.pe),
        ("pm", &probes.pm),
        ("df", &probes.df),
        ("avg", &probes.agent_avg),
        ("iter", &probes.agent_counter),
    ] {
        for (k, r) in refs.iter().enumerate() {
            columns.push((format!("{prefix}_{}", dgs[k].id), *r));
        }
    }
    Ok(Built {
        master,
        wiring: Wiring {
            dgs,
            probes,
            comm,
            agents,
            weights: weight_matrix,
            columns,
        },
    })
}
