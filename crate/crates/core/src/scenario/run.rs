//! Single scenario execution and run metrics.

use anyhow::Result;
use serde::{Deserialize, Serialize};

use super::build::{build, Built, Wiring};
use super::file::{ControlMode, ScenarioFile};
use crate::comm::{CommUnit, LatencyStats};
use crate::control::ConsensusAgent;
use crate::cosim::{SimError, Snapshot, UnitError};
use crate::plant::{droop_frequency, steady_state_frequency, DgParams};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Settled,
    Oscillating,
    Diverged,
}

impl Verdict {
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Settled => 0,
            Verdict::Oscillating => 2,
            Verdict::Diverged => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Settled => "settled",
            Verdict::Oscillating => "oscillating",
            Verdict::Diverged => "diverged",
        }
    }
}

/// Settling analysis of a frequency record, fed one sample at a time.
///
/// Only samples at or after `event_s` count. The run is settled when every
/// frequency stays within `band` of `reference` from some instant on, and
/// that instant is at least `window` before the last sample.
#[derive(Debug, Clone)]
pub struct SettlingAccumulator {
    event_s: f64,
    reference: f64,
    band: f64,
    window: f64,
    t_end: f64,
    entered: Option<f64>,
    last_t: f64,
    nadir: f64,
    zenith: f64,
    error_sum: f64,
    error_count: u64,
    non_finite: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settling {
    pub verdict: Verdict,
    /// Time from the event until the band is entered for good, s.
    pub settling_time_s: Option<f64>,
    pub nadir_hz: f64,
    pub zenith_hz: f64,
    /// Mean |f − reference| over the trailing window, Hz.
    pub steady_state_error_hz: f64,
}

impl SettlingAccumulator {
    pub fn new(event_s: f64, reference: f64, band: f64, window: f64, t_end: f64) -> Self {
        Self {
            event_s,
            reference,
            band,
            window,
            t_end,
            entered: None,
            last_t: f64::NEG_INFINITY,
            nadir: f64::INFINITY,
            zenith: f64::NEG_INFINITY,
            error_sum: 0.0,
            error_count: 0,
            non_finite: false,
        }
    }

    pub fn observe(&mut self, t: f64, freqs: &[f64]) {
        if freqs.iter().any(|f| !f.is_finite()) {
            self.non_finite = true;
        }
        if t < self.event_s {
            return;
        }
        self.last_t = t;
        let inside = freqs.iter().all(|f| (f - self.reference).abs() <= self.band);
        match (inside, self.entered) {
            (true, None) => self.entered = Some(t),
            (false, _) => self.entered = None,
            _ => {}
        }
        for &f in freqs {
            self.nadir = self.nadir.min(f);
            self.zenith = self.zenith.max(f);
        }
        if t >= self.t_end - self.window {
            for &f in freqs {
                self.error_sum += (f - self.reference).abs();
                self.error_count += 1;
            }
        }
    }

    /// `diverged` marks a run aborted by a non-finite state.
    pub fn finish(&self, diverged: bool) -> Settling {
        let settled_at = self.entered.filter(|&t| t <= self.last_t - self.window);
        let verdict = if diverged || self.non_finite {
            Verdict::Diverged
        } else if settled_at.is_some() {
            Verdict::Settled
        } else {
            Verdict::Oscillating
        };
        Settling {
            verdict,
            settling_time_s: settled_at
                .filter(|_| verdict == Verdict::Settled)
                .map(|t| t - self.event_s),
            nadir_hz: self.nadir,
            zenith_hz: self.zenith,
            steady_state_error_hz: if self.error_count > 0 {
                self.error_sum / self.error_count as f64
            } else {
                f64::NAN
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scenario: String,
    pub mode: String,
    pub network: String,
    pub seed: u64,
    pub verdict: Verdict,
    /// First load event, s (the run start when there is none).
    pub event_time_s: f64,
    /// Frequency the band is centred on: f0, or the primary-control steady
    /// state in primary-only mode.
    pub reference_hz: f64,
    pub settling_band_hz: f64,
    pub settling_time_s: Option<f64>,
    /// Extremes of any DG frequency from the event on.
    pub nadir_hz: f64,
    pub zenith_hz: f64,
    pub steady_state_error_hz: f64,
    pub t_end_s: f64,
    pub steps: u64,
    /// Diagnostic of the unit that produced a non-finite state.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    /// max |f − (f0 − kp·(Pm − P0) + δf)| over emitted samples, Hz.
    pub droop_identity_residual_hz: f64,
    /// max |ΣPe − Σ active load| / Σ active load over emitted samples.
    pub power_balance_residual: f64,
    pub links: Vec<LatencyStats>,
    pub dropped_packets: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consensus: Option<ConsensusSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusSummary {
    /// Fewest rounds completed by any agent.
    pub rounds_min: u64,
    pub rounds_max: u64,
    /// Largest difference of iteration counters across all agents at any step.
    pub max_counter_skew: u64,
    /// Same, restricted to pairs of neighbors.
    pub max_neighbor_skew: u64,
    pub protocol_errors: u64,
    pub round_timeouts: u64,
}

/// Time series of every emitted sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub columns: Vec<String>,
    pub times: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

impl Trace {
    /// Values of one column by name.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    /// Per-row frequencies of every DG (columns `f_*`).
    pub fn frequencies(&self) -> Vec<Vec<f64>> {
        let idx: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.starts_with("f_"))
            .map(|(k, _)| k)
            .collect();
        self.rows.iter().map(|r| idx.iter().map(|&k| r[k]).collect()).collect()
    }
}

pub struct RunOutput {
    pub trace: Trace,
    pub metrics: RunMetrics,
    /// Raw per-packet latency dump, when the scenario has a network.
    pub latency_dump: Option<String>,
}

/// Time of the first load trip within the run, or 0.
pub fn event_time(s: &ScenarioFile) -> f64 {
    s.plant
        .load
        .iter()
        .filter_map(|l| l.trip_s)
        .filter(|&t| t <= s.master.t_end_s)
        .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.min(t))))
        .unwrap_or(0.0)
}

/// Centre of the settling band for a scenario.
pub fn reference_frequency(s: &ScenarioFile, dgs: &[DgParams]) -> f64 {
    match s.control.mode {
        ControlMode::PrimaryOnly => {
            let remaining: f64 = s
                .plant
                .load
                .iter()
                .filter(|l| l.trip_s.is_none_or(|t| t > s.master.t_end_s))
                .map(|l| l.p_w)
                .sum();
            steady_state_frequency(dgs, remaining).0
        }
        _ => s.plant.f0_hz,
    }
}

struct Recorder<'a> {
    built: &'a Wiring,
    decimation: u64,
    step: u64,
    trace: Trace,
    settling: SettlingAccumulator,
    identity: f64,
    balance: f64,
    freqs: Vec<f64>,
    counters: Vec<u64>,
    counter_skew: u64,
    neighbor_skew: u64,
    neighbor_pairs: Vec<(usize, usize)>,
}

impl<'a> Recorder<'a> {
    fn observe(&mut self, snap: &Snapshot<'_>) {
        let p = &self.built.probes;
        for (k, f) in self.freqs.iter_mut().enumerate() {
            *f = snap.real(p.f[k]);
        }
        let t = snap.seconds();
        self.settling.observe(t, &self.freqs);

        if !p.agent_counter.is_empty() {
            for (k, c) in self.counters.iter_mut().enumerate() {
                *c = snap.real(p.agent_counter[k]) as u64;
            }
            let max = self.counters.iter().max().copied().unwrap_or(0);
            let min = self.counters.iter().min().copied().unwrap_or(0);
            self.counter_skew = self.counter_skew.max(max - min);
            for &(a, b) in &self.neighbor_pairs {
                self.neighbor_skew = self.neighbor_skew.max(self.counters[a].abs_diff(self.counters[b]));
            }
        }

        if self.step.is_multiple_of(self.decimation) {
            let mut pe_sum = 0.0;
            for (k, dg) in self.built.dgs.iter().enumerate() {
                let f = self.freqs[k];
                let expected = droop_frequency(snap.real(p.pm[k]), snap.real(p.df[k]), dg);
                self.identity = self.identity.max((f - expected).abs());
                pe_sum += snap.real(p.pe[k]);
            }
            let demand = snap.real(p.demand);
            let scale = demand.abs().max(f64::MIN_POSITIVE);
            self.balance = self.balance.max((pe_sum - demand).abs() / scale);
            self.trace.times.push(t);
            self.trace
                .rows
                .push(self.built.columns.iter().map(|(_, r)| snap.real(*r)).collect());
        }
        self.step += 1;
    }
}

/// Runs a validated scenario to its end time.
///
/// A non-finite plant state ends the run early with verdict `diverged`;
/// any other unit failure is returned as an error.
pub fn run(s: &ScenarioFile) -> Result<RunOutput> {
    let Built {
        mut master,
        wiring: built,
    } = build(s)?;
    let reference = reference_frequency(s, &built.dgs);
    let event = event_time(s);
    master.initialize(SimTime::ZERO)?;

    let neighbor_pairs = built
        .weights
        .as_ref()
        .map(|w| {
            (0..w.len())
                .flat_map(|k| w.neighbors(k).iter().filter(move |&&j| j > k).map(move |&j| (k, j)))
                .collect()
        })
        .unwrap_or_default();
    let n = built.dgs.len();
    let n_agents = built.agents.len();
    let mut rec = Recorder {
        built: &built,
        decimation: s.outputs.decimation,
        step: 0,
        trace: Trace {
            columns: built.columns.iter().map(|(c, _)| c.clone()).collect(),
            times: Vec::new(),
            rows: Vec::new(),
        },
        settling: SettlingAccumulator::new(
            event,
            reference,
            s.outputs.settling_band_hz,
            s.outputs.trailing_window_s,
            s.master.t_end_s,
        ),
        identity: 0.0,
        balance: 0.0,
        freqs: vec![0.0; n],
        counters: vec![0; n_agents],
        counter_skew: 0,
        neighbor_skew: 0,
        neighbor_pairs,
    };
    rec.observe(&master.snapshot());
    let outcome = master.run(s.master.t_end_s, |snap| rec.observe(snap));
    let failure = match outcome {
        Ok(()) => None,
        Err(SimError::Step {
            source: UnitError::NonFinite(msg),
            name,
            t,
            ..
        }) => Some(format!(
            "{name} at {} s: non-finite state: {msg}",
            t.seconds(master.config().resolution)
        )),
        Err(e) => return Err(e.into()),
    };
    let settling = rec.settling.finish(failure.is_some());

    let mut links = Vec::new();
    let mut dropped = 0;
    let mut latency_dump = None;
    if let Some(id) = built.comm {
        let comm = master
            .unit(id)
            .and_then(|u| u.as_any())
            .and_then(|a| a.downcast_ref::<CommUnit>())
            .expect("comm unit");
        links = comm.emulator().all_reports();
        dropped = links.iter().map(|l| l.dropped).sum();
        if s.outputs.latency_dump {
            latency_dump = Some(comm.emulator().dump_csv());
        }
    }
    let consensus = (!built.agents.is_empty()).then(|| {
        let agents: Vec<&ConsensusAgent> = built
            .agents
            .iter()
            .map(|&id| {
                master
                    .unit(id)
                    .and_then(|u| u.as_any())
                    .and_then(|a| a.downcast_ref::<ConsensusAgent>())
                    .expect("consensus agent")
            })
            .collect();
        let rounds: Vec<u64> = agents.iter().map(|a| a.rounds_completed()).collect();
        ConsensusSummary {
            rounds_min: rounds.iter().copied().min().unwrap_or(0),
            rounds_max: rounds.iter().copied().max().unwrap_or(0),
            max_counter_skew: rec.counter_skew,
            max_neighbor_skew: rec.neighbor_skew,
            protocol_errors: agents.iter().map(|a| a.protocol_errors()).sum(),
            round_timeouts: agents.iter().map(|a| a.timeouts()).sum(),
        }
    });

    let metrics = RunMetrics {
        scenario: s.metadata.name.clone(),
        mode: s.control.mode.to_string(),
        network: s.network.preset.name().to_string(),
        seed: s.metadata.seed,
        verdict: settling.verdict,
        event_time_s: event,
        reference_hz: reference,
        settling_band_hz: s.outputs.settling_band_hz,
        settling_time_s: settling.settling_time_s,
        nadir_hz: settling.nadir_hz,
        zenith_hz: settling.zenith_hz,
        steady_state_error_hz: settling.steady_state_error_hz,
        t_end_s: s.master.t_end_s,
        steps: master.steps_taken(),
        failure,
        droop_identity_residual_hz: rec.identity,
        power_balance_residual: rec.balance,
        links,
        dropped_packets: dropped,
        consensus,
    };
    master.terminate();
    Ok(RunOutput {
        trace: rec.trace,
        metrics,
        latency_dump,
    })
}

/// Settling analysis of an emitted trace, independent of the live run.
pub fn settle_trace(trace: &Trace, s: &ScenarioFile, reference: f64) -> Settling {
    let mut acc = SettlingAccumulator::new(
        event_time(s),
        reference,
        s.outputs.settling_band_hz,
        s.outputs.trailing_window_s,
        s.master.t_end_s,
    );
    for (t, f) in trace.times.iter().zip(trace.frequencies()) {
        acc.observe(*t, &f);
    }
    acc.finish(false)
}
