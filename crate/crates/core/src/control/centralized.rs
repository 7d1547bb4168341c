use super::pi::{pi_step, PiParams, PiState};
use crate::cosim::{PortSpec, Quantity, SimUnit, StepContext, UnitError, Value};
use crate::message::{Outgoing, Packet, Payload};

/// Central controller: PI on the newest frequency sample, broadcast of δf.
///
/// Every `period_ticks` it takes the most recent measurement received (zero
/// order hold), updates the PI with `delta_f = f0 − f_meas` and sends the new
/// δf to every local controller. Before the first sample arrives δf is held
/// at its initial value but is still broadcast.
///
/// Ports: input `rx` [msg]; outputs `tx` [msg], `df` [Hz], `f_used` [Hz].
pub struct MgccUnit {
    name: String,
    f0_hz: f64,
    params: PiParams,
    state: PiState,
    period_ticks: u64,
    targets: Vec<String>,
    size_bits: u32,
    latest: Option<(u64, f64)>,
    outbox: Vec<Outgoing>,
    updates: u64,
}

impl MgccUnit {
    pub fn new(
        name: impl Into<String>,
        f0_hz: f64,
        params: PiParams,
        period_ticks: u64,
        targets: Vec<String>,
        size_bits: u32,
    ) -> Self {
        Self {
            name: name.into(),
            f0_hz,
            params,
            state: PiState::default(),
            period_ticks,
            targets,
            size_bits,
            latest: None,
            outbox: Vec::new(),
            updates: 0,
        }
    }

    pub fn state(&self) -> PiState {
        self.state
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }
}

impl SimUnit for MgccUnit {
    fn name(&self) -> &str {
        &self.name
    }

    fn ports(&self) -> Vec<PortSpec> {
        vec![
            PortSpec::input("rx", Quantity::Message).with_default(Value::Inbox(Vec::new())),
            PortSpec::output("tx", Quantity::Message),
            PortSpec::output("df", Quantity::Hertz),
            PortSpec::output("f_used", Quantity::Hertz),
        ]
    }

    fn initialize(&mut self, _ctx: &StepContext) -> Result<(), UnitError> {
        Ok(())
    }

    fn set_input(&mut self, _port: usize, value: &Value) {
        if let Value::Inbox(packets) = value {
            for p in packets {
                if let Payload::Sample(v) = p.payload {
                    // Keep the sample taken latest, not the one arriving last.
                    let stamp = p.send_time.ticks();
                    if self.latest.is_none_or(|(t, _)| stamp >= t) {
                        self.latest = Some((stamp, v));
                    }
                }
            }
        }
    }

    fn do_step(&mut self, ctx: &StepContext) -> Result<(), UnitError> {
        self.outbox.clear();
        if !ctx.t.is_multiple_of(self.period_ticks) {
            return Ok(());
        }
        if let Some((_, f)) = self.latest {
            let dt = ctx.resolution.ticks_to_seconds(self.period_ticks);
            pi_step(self.f0_hz - f, dt, &self.params, &mut self.state);
            self.updates += 1;
        }
        for dst in &self.targets {
            self.outbox.push(Outgoing {
                dst: dst.clone(),
                size_bits: self.size_bits,
                payload: Payload::Sample(self.state.output),
            });
        }
        Ok(())
    }

    fn get_output(&self, port: usize) -> Value {
        match port {
            1 => Value::Outbox(self.outbox.clone()),
            2 => Value::Real(self.state.output),
            _ => Value::Real(self.latest.map_or(f64::NAN, |(_, f)| f)),
        }
    }

    fn as_any(&self) -> Option<&dyn std::any::Any> {
        Some(self)
    }
}

/// Local controller of one DG in centralized mode.
///
/// Applies the newest δf received from the central controller. When
/// `uplink` is set it also sends the local frequency there every
/// `period_ticks`.
///
/// Ports: inputs `rx` [msg], `f_local` [Hz]; outputs `tx` [msg], `df` [Hz].
pub struct LocalController {
    name: String,
    uplink: Option<String>,
    period_ticks: u64,
    size_bits: u32,
    f_local: f64,
    df: f64,
    latest_stamp: Option<u64>,
    received_at: Vec<u64>,
    last_t: u64,
    outbox: Vec<Outgoing>,
}

impl LocalController {
    pub fn new(name: impl Into<String>, uplink: Option<String>, period_ticks: u64, size_bits: u32) -> Self {
        Self {
            name: name.into(),
            uplink,
            period_ticks,
            size_bits,
            f_local: f64::NAN,
            df: 0.0,
            latest_stamp: None,
            received_at: Vec::new(),
            last_t: 0,
            outbox: Vec::new(),
        }
    }

    /// Step start times (ticks) whose exchange delivered a δf command.
    pub fn received_at(&self) -> &[u64] {
        &self.received_at
    }

    fn accept(&mut self, packets: &[Packet]) {
        for p in packets {
            if let Payload::Sample(v) = p.payload {
                let stamp = p.send_time.ticks();
                if self.latest_stamp.is_none_or(|t| stamp >= t) {
                    self.latest_stamp = Some(stamp);
                    self.df = v;
                }
                self.received_at.push(self.last_t);
            }
        }
    }
}

impl SimUnit for LocalController {
    fn name(&self) -> &str {
        &self.name
    }

    fn ports(&self) -> Vec<PortSpec> {
        vec![
            PortSpec::input("rx", Quantity::Message).with_default(Value::Inbox(Vec::new())),
            PortSpec::input("f_local", Quantity::Hertz).with_default(Value::Real(f64::NAN)),
            PortSpec::output("tx", Quantity::Message),
            PortSpec::output("df", Quantity::Hertz),
        ]
    }

    fn initialize(&mut self, ctx: &StepContext) -> Result<(), UnitError> {
        self.last_t = ctx.t.ticks();
        Ok(())
    }

    fn set_input(&mut self, port: usize, value: &Value) {
        match (port, value) {
            (0, Value::Inbox(p)) => self.accept(p),
            (1, Value::Real(v)) => self.f_local = *v,
            _ => {}
        }
    }

    fn do_step(&mut self, ctx: &StepContext) -> Result<(), UnitError> {
        self.outbox.clear();
        self.last_t = ctx.t_end().ticks();
        if let Some(dst) = &self.uplink {
            if ctx.t.is_multiple_of(self.period_ticks) && self.f_local.is_finite() {
                self.outbox.push(Outgoing {
                    dst: dst.clone(),
                    size_bits: self.size_bits,
                    payload: Payload::Sample(self.f_local),
                });
            }
        }
        Ok(())
    }

    fn get_output(&self, port: usize) -> Value {
        match port {
            2 => Value::Outbox(self.outbox.clone()),
            _ => Value::Real(self.df),
        }
    }

    fn as_any(&self) -> Option<&dyn std::any::Any> {
        Some(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::{resolve_link, CommUnit, Emulator, LinkOverrides, NetworkPreset};
    use crate::cosim::units::Constant;
    use crate::cosim::{Master, MasterConfig};
    use crate::time::{Resolution, SimTime};

    const TABLE1: [(u32, f64); 5] = [(1, 4000.0), (2, 6000.0), (3, 8000.0), (4, 2000.0), (5, 5000.0)];

    fn params() -> PiParams {
        PiParams {
            kp: 0.2,
            ki: 1.0,
            clamp_hz: None,
        }
    }

    /// MGCC, five local controllers and a frozen frequency at DG 1.
    fn star(preset: NetworkPreset, f_meas: f64, quiet: bool) -> Master {
        let overrides = LinkOverrides {
            noise_sigma_s: quiet.then_some(0.0),
            ..Default::default()
        };
        let mut links: Vec<_> = TABLE1
            .iter()
            .map(|&(k, d)| {
                resolve_link(
                    preset,
                    &format!("c-{k}"),
                    "mgcc",
                    &format!("dg-{k}"),
                    d,
                    &overrides,
                    1.0,
                )
            })
            .collect();
        links.push(resolve_link(preset, "m-1", "dg-1", "mgcc", 4000.0, &overrides, 1.0));
        let emu = Emulator::new(links, 3, Resolution::MICROSECOND, preset.is_ideal()).unwrap();
        let mut m = Master::new(MasterConfig::default());
        m.register_unit(Box::new(CommUnit::new("comm", emu))).unwrap();
        let targets = (1..=5).map(|k| format!("dg-{k}")).collect();
        m.register_unit(Box::new(MgccUnit::new("mgcc", 50.0, params(), 100_000, targets, 1024)))
            .unwrap();
        m.connect_by_name(("mgcc", "tx"), ("comm", "tx.mgcc")).unwrap();
        m.connect_by_name(("comm", "rx.mgcc"), ("mgcc", "rx")).unwrap();
        m.register_unit(Box::new(Constant::new("meter", f_meas, Quantity::Hertz)))
            .unwrap();
        for k in 1..=5 {
            let name = format!("local-{k}");
            let uplink = (k == 1).then(|| "mgcc".to_string());
            m.register_unit(Box::new(LocalController::new(name.clone(), uplink, 100_000, 1024)))
                .unwrap();
            m.connect_by_name(("comm", &format!("rx.dg-{k}")), (&name, "rx"))
                .unwrap();
            m.connect_by_name((&name, "tx"), ("comm", &format!("tx.dg-{k}")))
                .unwrap();
            if k == 1 {
                m.connect_by_name(("meter", "y"), (&name, "f_local")).unwrap();
            }
        }
        m.initialize(SimTime::ZERO).unwrap();
        m
    }

    fn local(m: &Master, k: u32) -> &LocalController {
        let id = m.unit_id(&format!("local-{k}")).unwrap();
        m.unit(id).unwrap().as_any().unwrap().downcast_ref().unwrap()
    }

    #[test]
    fn nominal_frequency_commands_zero_correction() {
        let mut m = star(NetworkPreset::Ideal, 50.0, false);
        let df: Vec<PortRef> = (1..=5).map(|k| m.port(&format!("local-{k}"), "df").unwrap()).collect();
        m.run(2.0, |s| {
            for p in &df {
                assert_eq!(s.real(*p), 0.0);
            }
        })
        .unwrap();
        assert!((1..=5).all(|k| local(&m, k).received_at().len() >= 19));
    }

    use crate::cosim::PortRef;

    #[test]
    fn broadcast_arrival_follows_table1_distances() {
        let mut m = star(NetworkPreset::Network1, 49.9, true);
        m.run(1.0, |_| {}).unwrap();
        let comm = m.unit(m.unit_id("comm").unwrap()).unwrap();
        let emu = comm.as_any().unwrap().downcast_ref::<CommUnit>().unwrap().emulator();
        let arrivals = |k: u32| -> Vec<u64> {
            emu.records(&format!("c-{k}"))
                .iter()
                .map(|r| r.deliver_time.unwrap().ticks())
                .collect()
        };
        let all: Vec<Vec<u64>> = (1..=5).map(arrivals).collect();
        assert!(all[0].len() >= 10);
        for (b, _) in all[0].iter().enumerate() {
            let mut order: Vec<u32> = (1..=5).collect();
            order.sort_by_key(|&k| all[k as usize - 1][b]);
            assert_eq!(order, vec![4, 1, 5, 2, 3], "broadcast {b}");
        }
    }

    #[test]
    fn no_measurement_holds_a_finite_correction() {
        let mut mgcc = MgccUnit::new("mgcc", 50.0, params(), 100_000, vec!["dg-1".into()], 1024);
        let ctx = StepContext {
            t: SimTime::ZERO,
            h_ticks: 1000,
            resolution: Resolution::MICROSECOND,
        };
        mgcc.do_step(&ctx).unwrap();
        assert_eq!(mgcc.get_output(2).as_real(), Some(0.0));
        assert_eq!(mgcc.updates(), 0);
        match mgcc.get_output(1) {
            Value::Outbox(o) => assert_eq!(o[0].payload, Payload::Sample(0.0)),
            _ => panic!(),
        }
    }

    #[test]
    fn newest_sample_wins_over_late_arrival() {
        let mut mgcc = MgccUnit::new("mgcc", 50.0, params(), 1000, vec![], 1024);
        let pk = |t: u64, v: f64| Packet {
            seq: t,
            src: "dg-1".into(),
            dst: "mgcc".into(),
            link: "m-1".into(),
            payload: Payload::Sample(v),
            size_bits: 1024,
            send_time: SimTime::from_ticks(t),
            deliver_time: None,
        };
        mgcc.set_input(0, &Value::Inbox(vec![pk(2000, 49.9), pk(1000, 49.0)]));
        assert_eq!(mgcc.get_output(3).as_real(), Some(49.9));
    }
}
