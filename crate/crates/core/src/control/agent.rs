use std::collections::{BTreeMap, HashMap};

use super::pi::{pi_step, PiParams, PiState};
use super::weights::WeightMatrix;
use crate::cosim::{PortSpec, Quantity, SimUnit, StepContext, UnitError, Value};
use crate::message::{ConsensusMsg, Outgoing, Packet, Payload};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Waiting to sample a fresh measurement (start of a round).
    Measuring,
    /// Exchanging values for the current iteration.
    Exchanging,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsensusConfig {
    /// Weighted updates per round.
    pub n_consensus: u32,
    pub size_bits: u32,
    /// Abandon a round that has not finished within this many ticks.
    pub round_timeout_ticks: Option<u64>,
}

/// One agent of the synchronous average-consensus protocol.
///
/// Per round: sample the local frequency, then `n_consensus` times send the
/// current value to every neighbor, wait for every neighbor's value of the
/// same iteration and replace the own value by the weighted average. The
/// final value is published on `avg` and a new round starts immediately.
/// At most one update (and hence one broadcast) happens per master step.
///
/// Ports: inputs `f_meas` [Hz], `rx` [msg]; outputs `tx` [msg], `avg` [Hz],
/// `rounds` [1] (completed rounds), `counter` [1]
/// (`round·n_consensus + iteration`).
pub struct ConsensusAgent {
    name: String,
    id: u32,
    endpoint: String,
    config: ConsensusConfig,
    self_weight: f64,
    /// Number of neighbors ordered before this agent in the weight matrix.
    self_pos: usize,
    /// `(agent id, endpoint, weight)` in ascending index order.
    neighbors: Vec<(u32, String, f64)>,
    by_endpoint: HashMap<String, u32>,

    phase: Phase,
    round: u64,
    iteration: u32,
    value: f64,
    /// `(round, iteration, neighbor id) → value`.
    inbox: BTreeMap<(u64, u32, u32), f64>,
    round_started: SimTime,

    f_meas: f64,
    pending: Vec<Packet>,
    outbox: Vec<Outgoing>,
    output: Option<f64>,
    rounds_completed: u64,
    protocol_errors: u64,
    timeouts: u64,
}

impl ConsensusAgent {
    /// `endpoint_of` maps an agent id to its network endpoint name.
    pub fn new(
        id: u32,
        weights: &WeightMatrix,
        config: ConsensusConfig,
        endpoint_of: impl Fn(u32) -> String,
    ) -> Option<Self> {
        let k = weights.index_of(id)?;
        let neighbors: Vec<(u32, String, f64)> = weights
            .neighbors(k)
            .iter()
            .map(|&j| {
                let nid = weights.ids()[j];
                (nid, endpoint_of(nid), weights.get(k, j))
            })
            .collect();
        let self_pos = weights.neighbors(k).iter().filter(|&&j| j < k).count();
        let by_endpoint = neighbors.iter().map(|(i, e, _)| (e.clone(), *i)).collect();
        Some(Self {
            name: format!("agent-{id}"),
            id,
            endpoint: endpoint_of(id),
            config,
            self_weight: weights.get(k, k),
            self_pos,
            neighbors,
            by_endpoint,
            phase: Phase::Measuring,
            round: 0,
            iteration: 0,
            value: 0.0,
            inbox: BTreeMap::new(),
            round_started: SimTime::ZERO,
            f_meas: 0.0,
            pending: Vec::new(),
            outbox: Vec::new(),
            output: None,
            rounds_completed: 0,
            protocol_errors: 0,
            timeouts: 0,
        })
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn counter(&self) -> u64 {
        self.round * self.config.n_consensus as u64 + self.iteration as u64
    }

    pub fn rounds_completed(&self) -> u64 {
        self.rounds_completed
    }

    /// Newest round output, if any round has completed.
    pub fn output(&self) -> Option<f64> {
        self.output
    }

    pub fn protocol_errors(&self) -> u64 {
        self.protocol_errors
    }

    pub fn timeouts(&self) -> u64 {
        self.timeouts
    }

    pub fn buffered(&self) -> usize {
        self.inbox.len()
    }

    fn broadcast(&mut self) {
        let msg = ConsensusMsg {
            round: self.round,
            iteration: self.iteration,
            value: self.value,
        };
        for (_, endpoint, _) in &self.neighbors {
            self.outbox.push(Outgoing {
                dst: endpoint.clone(),
                size_bits: self.config.size_bits,
                payload: Payload::Consensus(msg),
            });
        }
    }

    fn start_round(&mut self, now: SimTime) {
        self.iteration = 0;
        self.value = self.f_meas;
        self.round_started = now;
        self.phase = Phase::Exchanging;
        self.broadcast();
    }

    fn ingest(&mut self, packet: Packet) {
        let Some(&from) = self.by_endpoint.get(&packet.src) else {
            log::warn!("agent {}: message from non-neighbor {} ignored", self.id, packet.src);
            self.protocol_errors += 1;
            return;
        };
        match packet.payload {
            // Values of abandoned rounds can no longer be used.
            Payload::Consensus(m) if m.round >= self.round => {
                self.inbox.insert((m.round, m.iteration, from), m.value);
            }
            Payload::Consensus(_) => {}
            Payload::Sample(_) => {
                log::warn!("agent {}: unexpected sample from {}", self.id, packet.src);
                self.protocol_errors += 1;
            }
        }
    }

    /// One weighted update if every neighbor's value for the current
    /// iteration is buffered. Terms are summed in matrix index order.
    fn try_update(&mut self) -> bool {
        let key = |n: u32| (self.round, self.iteration, n);
        if !self.neighbors.iter().all(|(n, _, _)| self.inbox.contains_key(&key(*n))) {
            return false;
        }
        let mut next = 0.0;
        for (i, (n, _, w)) in self.neighbors.iter().enumerate() {
            if i == self.self_pos {
                next += self.self_weight * self.value;
            }
            let v = self
                .inbox
                .remove(&(self.round, self.iteration, *n))
                .expect("checked above");
            next += w * v;
        }
        if self.self_pos == self.neighbors.len() {
            next += self.self_weight * self.value;
        }
        self.value = next;
        self.iteration += 1;
        true
    }

    fn drop_stale(&mut self) {
        let round = self.round;
        self.inbox.retain(|(r, _, _), _| *r >= round);
    }

    /// Advances the state machine by one master step at `now`.
    fn advance(&mut self, now: SimTime) {
        self.outbox.clear();
        for p in std::mem::take(&mut self.pending) {
            self.ingest(p);
        }
        match self.phase {
            Phase::Measuring => self.start_round(now),
            Phase::Exchanging => {
                if let Some(limit) = self.config.round_timeout_ticks {
                    if now.ticks() - self.round_started.ticks() > limit {
                        self.timeouts += 1;
                        self.round += 1;
                        self.drop_stale();
                        self.start_round(now);
                        return;
                    }
                }
                if self.try_update() {
                    if self.iteration >= self.config.n_consensus {
                        self.output = Some(self.value);
                        self.rounds_completed += 1;
                        self.round += 1;
                        self.drop_stale();
                        self.start_round(now);
                    } else {
                        self.broadcast();
                    }
                }
            }
        }
    }
}

impl SimUnit for ConsensusAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn ports(&self) -> Vec<PortSpec> {
        vec![
            PortSpec::input("f_meas", Quantity::Hertz),
            PortSpec::input("rx", Quantity::Message).with_default(Value::Inbox(Vec::new())),
            PortSpec::output("tx", Quantity::Message),
            PortSpec::output("avg", Quantity::Hertz),
            PortSpec::output("rounds", Quantity::Dimensionless),
            PortSpec::output("counter", Quantity::Dimensionless),
        ]
    }

    fn initialize(&mut self, _ctx: &StepContext) -> Result<(), UnitError> {
        Ok(())
    }

    fn set_input(&mut self, port: usize, value: &Value) {
        match (port, value) {
            (0, Value::Real(v)) => self.f_meas = *v,
            (1, Value::Inbox(p)) => self.pending.extend(p.iter().cloned()),
            _ => {}
        }
    }

    fn do_step(&mut self, ctx: &StepContext) -> Result<(), UnitError> {
        self.advance(ctx.t);
        Ok(())
    }

    fn get_output(&self, port: usize) -> Value {
        match port {
            2 => Value::Outbox(self.outbox.clone()),
            3 => Value::Real(self.output.unwrap_or(f64::NAN)),
            4 => Value::Real(self.rounds_completed as f64),
            _ => Value::Real(self.counter() as f64),
        }
    }

    fn as_any(&self) -> Option<&dyn std::any::Any> {
        Some(self)
    }
}

/// Local secondary PI of a DG in distributed mode, fed by its agent.
///
/// Runs every `period_ticks` on the newest consensus average with
/// `delta_f = f0 − avg`; holds δf until the first round completes.
/// Ports: inputs `avg` [Hz], `rounds` [1]; output `df` [Hz].
pub struct AgentPi {
    name: String,
    f0_hz: f64,
    params: PiParams,
    state: PiState,
    period_ticks: u64,
    avg: f64,
    rounds: f64,
}

impl AgentPi {
    pub fn new(name: impl Into<String>, f0_hz: f64, params: PiParams, period_ticks: u64) -> Self {
        Self {
            name: name.into(),
            f0_hz,
            params,
            state: PiState::default(),
            period_ticks,
            avg: f64::NAN,
            rounds: 0.0,
        }
    }

    pub fn state(&self) -> PiState {
        self.state
    }
}

impl SimUnit for AgentPi {
    fn name(&self) -> &str {
        &self.name
    }

    fn ports(&self) -> Vec<PortSpec> {
        vec![
            PortSpec::input("avg", Quantity::Hertz),
            PortSpec::input("rounds", Quantity::Dimensionless),
            PortSpec::output("df", Quantity::Hertz),
        ]
    }

    fn initialize(&mut self, _ctx: &StepContext) -> Result<(), UnitError> {
        Ok(())
    }

    fn set_input(&mut self, port: usize, value: &Value) {
        if let Some(v) = value.as_real() {
            match port {
                0 => self.avg = v,
                1 => self.rounds = v,
                _ => {}
            }
        }
    }

    fn do_step(&mut self, ctx: &StepContext) -> Result<(), UnitError> {
        if ctx.t.is_multiple_of(self.period_ticks) && self.rounds > 0.0 && self.avg.is_finite() {
            let dt = ctx.resolution.ticks_to_seconds(self.period_ticks);
            pi_step(self.f0_hz - self.avg, dt, &self.params, &mut self.state);
        }
        Ok(())
    }

    fn get_output(&self, _port: usize) -> Value {
        Value::Real(self.state.output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::{resolve_link, CommUnit, Emulator, LinkOverrides, NetworkPreset};
    use crate::control::{consensus_oracle, metropolis_weights};
    use crate::cosim::units::Constant;
    use crate::cosim::{Master, MasterConfig};
    use crate::time::Resolution;

    const TABLE2: [(u32, u32, f64); 4] = [(1, 4, 4000.0), (2, 3, 6000.0), (3, 4, 8000.0), (3, 5, 2000.0)];

    fn endpoint(id: u32) -> String {
        format!("dg-{id}")
    }

    fn table2_weights() -> WeightMatrix {
        let edges: Vec<(u32, u32)> = TABLE2.iter().map(|&(a, b, _)| (a, b)).collect();
        metropolis_weights(&[1, 2, 3, 4, 5], &edges).unwrap()
    }

    fn config(n: u32) -> ConsensusConfig {
        ConsensusConfig {
            n_consensus: n,
            size_bits: 1536,
            round_timeout_ticks: None,
        }
    }

    /// Five agents with frozen measurements `x0` over the Table 2 links.
    fn consensus_master(x0: [f64; 5], n: u32, preset: NetworkPreset) -> Master {
        let mut links = Vec::new();
        for &(a, b, d) in &TABLE2 {
            for (x, y) in [(a, b), (b, a)] {
                links.push(resolve_link(
                    preset,
                    &format!("a-{x}-{y}"),
                    &endpoint(x),
                    &endpoint(y),
                    d,
                    &LinkOverrides::default(),
                    1.0,
                ));
            }
        }
        let w = table2_weights();
        let mut m = Master::new(MasterConfig::default());
        let emu = Emulator::new(links, 7, Resolution::MICROSECOND, preset.is_ideal()).unwrap();
        m.register_unit(Box::new(CommUnit::new("comm", emu))).unwrap();
        for (k, x) in x0.iter().enumerate() {
            let id = k as u32 + 1;
            let agent = ConsensusAgent::new(id, &w, config(n), endpoint).unwrap();
            let name = agent.name().to_string();
            m.register_unit(Box::new(agent)).unwrap();
            let src = format!("x-{id}");
            m.register_unit(Box::new(Constant::new(src.clone(), *x, Quantity::Hertz)))
                .unwrap();
            m.connect_by_name((&src, "y"), (&name, "f_meas")).unwrap();
            m.connect_by_name(("comm", &format!("rx.dg-{id}")), (&name, "rx"))
                .unwrap();
            m.connect_by_name((&name, "tx"), ("comm", &format!("tx.dg-{id}")))
                .unwrap();
        }
        m.initialize(SimTime::ZERO).unwrap();
        m
    }

    fn agent(m: &Master, id: u32) -> &ConsensusAgent {
        let uid = m.unit_id(&format!("agent-{id}")).unwrap();
        m.unit(uid).unwrap().as_any().unwrap().downcast_ref().unwrap()
    }

    #[test]
    fn ideal_rounds_reproduce_the_matrix_power() {
        let x0 = [1.0, 2.0, 3.0, 4.0, 5.0];
        let w = table2_weights();
        for n in [1, 5, 20, 50] {
            let mut m = consensus_master(x0, n, NetworkPreset::Ideal);
            while (1..=5).any(|id| agent(&m, id).rounds_completed() == 0) {
                let t = m.time();
                m.step_all(t).unwrap();
            }
            let expected = consensus_oracle(&w, &x0, n);
            for id in 1..=5u32 {
                let got = agent(&m, id).output().unwrap();
                let want = expected[id as usize - 1];
                assert!((got - want).abs() <= 1e-12, "n={n} agent {id}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn ideal_counters_stay_in_lockstep() {
        let mut m = consensus_master([1.0, 2.0, 3.0, 4.0, 5.0], 5, NetworkPreset::Ideal);
        for _ in 0..500 {
            let t = m.time();
            m.step_all(t).unwrap();
            let c: Vec<u64> = (1..=5).map(|id| agent(&m, id).counter()).collect();
            assert!(c.iter().all(|&x| x == c[0]), "{c:?}");
        }
        assert!(agent(&m, 1).rounds_completed() > 10);
    }

    #[test]
    fn neighbor_counters_differ_by_at_most_one_under_latency() {
        let w = table2_weights();
        let mut m = consensus_master([1.0, 2.0, 3.0, 4.0, 5.0], 20, NetworkPreset::Network2);
        for _ in 0..5000 {
            let t = m.time();
            m.step_all(t).unwrap();
            for k in 0..5 {
                for &j in w.neighbors(k) {
                    let a = agent(&m, k as u32 + 1).counter();
                    let b = agent(&m, j as u32 + 1).counter();
                    assert!(a.abs_diff(b) <= 1, "agents {} and {}: {a} vs {b}", k + 1, j + 1);
                }
            }
        }
    }

    #[test]
    fn nominal_frequencies_give_no_correction_drift() {
        let mut m = consensus_master([50.0; 5], 20, NetworkPreset::Network2);
        let mut pis: Vec<AgentPi> = (0..5)
            .map(|_| {
                AgentPi::new(
                    "pi",
                    50.0,
                    PiParams {
                        kp: 0.2,
                        ki: 1.0,
                        clamp_hz: None,
                    },
                    100_000,
                )
            })
            .collect();
        for _ in 0..20_000 {
            let t = m.time();
            m.step_all(t).unwrap();
            let c = StepContext {
                t,
                h_ticks: 1000,
                resolution: Resolution::MICROSECOND,
            };
            for (k, pi) in pis.iter_mut().enumerate() {
                let a = agent(&m, k as u32 + 1);
                pi.set_input(0, &Value::Real(a.output().unwrap_or(f64::NAN)));
                pi.set_input(1, &Value::Real(a.rounds_completed() as f64));
                pi.do_step(&c).unwrap();
            }
        }
        assert!(agent(&m, 1).rounds_completed() > 5);
        for pi in &pis {
            assert!(pi.get_output(2).as_real().unwrap().abs() < 1e-11);
        }
    }

    fn ctx(step: u64) -> StepContext {
        StepContext {
            t: SimTime::from_ticks(step * 1000),
            h_ticks: 1000,
            resolution: Resolution::MICROSECOND,
        }
    }

    fn from(src: &str, round: u64, iteration: u32, value: f64) -> Value {
        Value::Inbox(vec![Packet {
            seq: 0,
            src: src.into(),
            dst: "dg-1".into(),
            link: "test".into(),
            payload: Payload::Consensus(ConsensusMsg {
                round,
                iteration,
                value,
            }),
            size_bits: 1536,
            send_time: SimTime::ZERO,
            deliver_time: None,
        }])
    }

    #[test]
    fn early_iterations_are_buffered_until_needed() {
        let w = table2_weights();
        // Agent 1 has the single neighbor 4 with weight 1/3.
        let mut a = ConsensusAgent::new(1, &w, config(10), endpoint).unwrap();
        a.set_input(0, &Value::Real(3.0));
        a.do_step(&ctx(0)).unwrap();
        assert_eq!(a.counter(), 0);

        a.set_input(1, &from("dg-4", 0, 3, 9.0));
        a.do_step(&ctx(1)).unwrap();
        assert_eq!((a.counter(), a.buffered()), (0, 1));

        let mut x = 3.0;
        for (step, i) in (2..).zip(0..3) {
            a.set_input(1, &from("dg-4", 0, i, 0.0));
            a.do_step(&ctx(step)).unwrap();
            x *= 2.0 / 3.0;
            assert_eq!(a.counter(), i as u64 + 1);
        }
        // Iteration 3 is taken from the buffer without any new delivery.
        a.do_step(&ctx(5)).unwrap();
        assert_eq!((a.counter(), a.buffered()), (4, 0));
        let expected = 2.0 / 3.0 * x + 9.0 / 3.0;
        assert!((a.value - expected).abs() < 1e-12);
    }

    #[test]
    fn values_from_non_neighbors_are_ignored() {
        let w = table2_weights();
        let mut a = ConsensusAgent::new(1, &w, config(10), endpoint).unwrap();
        a.set_input(0, &Value::Real(3.0));
        a.do_step(&ctx(0)).unwrap();
        a.set_input(1, &from("dg-2", 0, 0, 100.0));
        a.do_step(&ctx(1)).unwrap();
        assert_eq!(a.protocol_errors(), 1);
        assert_eq!((a.counter(), a.buffered()), (0, 0));
    }

    #[test]
    fn round_restarts_with_a_fresh_measurement() {
        let pair = metropolis_weights(&[1, 2], &[(1, 2)]).unwrap();
        let mut a = ConsensusAgent::new(1, &pair, config(1), endpoint).unwrap();
        a.set_input(0, &Value::Real(1.0));
        a.do_step(&ctx(0)).unwrap();
        a.set_input(0, &Value::Real(5.0));
        a.set_input(1, &from("dg-2", 0, 0, 3.0));
        a.do_step(&ctx(1)).unwrap();
        assert_eq!(a.output(), Some(2.0));
        assert_eq!(a.rounds_completed(), 1);
        // The new round starts from the measurement present at restart.
        assert_eq!(a.value, 5.0);
        match a.get_output(2) {
            Value::Outbox(o) => match o[0].payload {
                Payload::Consensus(m) => assert_eq!((m.round, m.iteration, m.value), (1, 0, 5.0)),
                _ => panic!(),
            },
            _ => panic!(),
        }
    }

    #[test]
    fn stalled_round_is_abandoned_after_timeout() {
        let w = table2_weights();
        let mut cfg = config(10);
        cfg.round_timeout_ticks = Some(5_000);
        let mut a = ConsensusAgent::new(1, &w, cfg, endpoint).unwrap();
        a.set_input(0, &Value::Real(3.0));
        for step in 0..=6 {
            a.do_step(&ctx(step)).unwrap();
        }
        assert_eq!((a.timeouts(), a.round), (1, 1));
        assert_eq!(a.rounds_completed(), 0);
    }

    #[test]
    fn agent_pi_holds_until_first_round() {
        let params = PiParams {
            kp: 0.0,
            ki: 1.0,
            clamp_hz: None,
        };
        let mut pi = AgentPi::new("pi", 50.0, params, 100_000);
        pi.set_input(0, &Value::Real(f64::NAN));
        pi.set_input(1, &Value::Real(0.0));
        let c = StepContext {
            t: SimTime::ZERO,
            h_ticks: 1000,
            resolution: Resolution::MICROSECOND,
        };
        pi.do_step(&c).unwrap();
        assert_eq!(pi.get_output(2).as_real(), Some(0.0));
        pi.set_input(0, &Value::Real(49.9));
        pi.set_input(1, &Value::Real(1.0));
        pi.do_step(&c).unwrap();
        let y = pi.get_output(2).as_real().unwrap();
        assert!((y - 0.1 * 0.1).abs() < 1e-12, "{y}");
    }
}
