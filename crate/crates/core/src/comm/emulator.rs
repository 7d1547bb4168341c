use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt::Write as _;

use rand::Rng;

use super::{sample_latency, CommError, LatencyStats, LinkParams};
use crate::message::{Packet, Payload};
use crate::rng::{substream, SubstreamRng};
use crate::time::{Resolution, SimTime};

/// Send/deliver record kept for statistics and the raw dump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkRecord {
    pub seq: u64,
    pub send_time: SimTime,
    pub deliver_time: Option<SimTime>,
}

struct LinkState {
    params: LinkParams,
    rng: SubstreamRng,
    last_deliver: SimTime,
    records: Vec<LinkRecord>,
}

/// Keyed by `(deliver_time, seq)`.
type QueueKey = Reverse<(SimTime, u64)>;

/// Discrete-event store of in-flight packets.
pub struct Emulator {
    resolution: Resolution,
    ideal: bool,
    links: BTreeMap<String, LinkState>,
    routes: HashMap<(String, String), String>,
    queues: HashMap<String, BinaryHeap<QueueKey>>,
    in_flight: HashMap<u64, Packet>,
    next_seq: u64,
}

impl Emulator {
    /// `ideal` forces one-tick delivery and no loss on every link.
    pub fn new(
        links: Vec<LinkParams>,
        master_seed: u64,
        resolution: Resolution,
        ideal: bool,
    ) -> Result<Self, CommError> {
        let mut states = BTreeMap::new();
        let mut routes = HashMap::new();
        for params in links {
            params.validate()?;
            let route = (params.src.clone(), params.dst.clone());
            if routes.contains_key(&route) {
                return Err(CommError::DuplicateRoute {
                    src: route.0,
                    dst: route.1,
                });
            }
            if states.contains_key(&params.id) {
                return Err(CommError::DuplicateLink(params.id));
            }
            routes.insert(route, params.id.clone());
            let rng = substream(master_seed, &format!("link/{}", params.id));
            states.insert(
                params.id.clone(),
                LinkState {
                    params,
                    rng,
                    last_deliver: SimTime::ZERO,
                    records: Vec::new(),
                },
            );
        }
        Ok(Self {
            resolution,
            ideal,
            links: states,
            routes,
            queues: HashMap::new(),
            in_flight: HashMap::new(),
            next_seq: 0,
        })
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn link_ids(&self) -> impl Iterator<Item = &str> {
        self.links.keys().map(String::as_str)
    }

    pub fn link(&self, id: &str) -> Option<&LinkParams> {
        self.links.get(id).map(|l| &l.params)
    }

    /// Endpoints appearing as source or destination of any link, sorted.
    pub fn endpoints(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .links
            .values()
            .flat_map(|l| [l.params.src.clone(), l.params.dst.clone()])
            .collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn link_between(&self, src: &str, dst: &str) -> Option<&str> {
        self.routes.get(&(src.to_string(), dst.to_string())).map(String::as_str)
    }

    /// Queues a message for delivery and returns its sequence number.
    pub fn send(
        &mut self,
        src: &str,
        dst: &str,
        payload: Payload,
        size_bits: u32,
        now: SimTime,
    ) -> Result<u64, CommError> {
        let id = self
            .routes
            .get(&(src.to_string(), dst.to_string()))
            .ok_or_else(|| CommError::UnknownLink {
                src: src.to_string(),
                dst: dst.to_string(),
            })?;
        let link = self.links.get_mut(id).expect("route points at a link");
        let seq = self.next_seq;
        self.next_seq += 1;

        let deliver_time = if self.ideal {
            Some(now.advance(1))
        } else if link.params.loss_prob > 0.0 && link.rng.random::<f64>() < link.params.loss_prob {
            None
        } else {
            let latency = sample_latency(&link.params, size_bits, &mut link.rng);
            let ticks = self.resolution.ceil_ticks(latency).max(1);
            Some(now.advance(ticks))
        };
        // Per-link FIFO: never overtake an earlier packet.
        let deliver_time = deliver_time.map(|t| t.max(link.last_deliver));
        if let Some(t) = deliver_time {
            link.last_deliver = t;
        }
        link.records.push(LinkRecord {
            seq,
            send_time: now,
            deliver_time,
        });
        if let Some(t) = deliver_time {
            let packet = Packet {
                seq,
                src: src.to_string(),
                dst: dst.to_string(),
                link: id.clone(),
                payload,
                size_bits,
                send_time: now,
                deliver_time: Some(t),
            };
            self.queues.entry(dst.to_string()).or_default().push(Reverse((t, seq)));
            self.in_flight.insert(seq, packet);
        }
        Ok(seq)
    }

    /// Removes and returns every packet for `dst` due at or before `now`,
    /// ordered by `(deliver_time, seq)`.
    pub fn poll_delivered(&mut self, dst: &str, now: SimTime) -> Vec<Packet> {
        let mut out = Vec::new();
        if let Some(queue) = self.queues.get_mut(dst) {
            while let Some(Reverse((t, seq))) = queue.peek().copied() {
                if t > now {
                    break;
                }
                queue.pop();
                out.push(self.in_flight.remove(&seq).expect("queued packet is in flight"));
            }
        }
        out
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    pub fn records(&self, link: &str) -> &[LinkRecord] {
        self.links.get(link).map(|l| l.records.as_slice()).unwrap_or(&[])
    }

    fn latency_seconds(&self, r: &LinkRecord) -> Option<f64> {
        r.deliver_time
            .map(|d| self.resolution.ticks_to_seconds(d.ticks() - r.send_time.ticks()))
    }

    /// Box-plot statistics of one link's delivered latencies.
    pub fn latency_report(&self, link: &str) -> Result<LatencyStats, CommError> {
        let records = self.records(link);
        let latencies: Vec<f64> = records.iter().filter_map(|r| self.latency_seconds(r)).collect();
        let dropped = records.iter().filter(|r| r.deliver_time.is_none()).count() as u64;
        LatencyStats::from_samples(link, records.len() as u64, dropped, &latencies)
            .ok_or_else(|| CommError::NoData(link.to_string()))
    }

    /// Statistics for every link that carried at least one delivered packet.
    pub fn all_reports(&self) -> Vec<LatencyStats> {
        self.links
            .keys()
            .filter_map(|id| self.latency_report(id).ok())
            .collect()
    }

    /// Raw per-packet dump:
    /// `link_id,seq,send_time_s,deliver_time_s,latency_s,dropped`.
    pub fn dump_csv(&self) -> String {
        let mut out = String::from("link_id,seq,send_time_s,deliver_time_s,latency_s,dropped\n");
        for (id, link) in &self.links {
            for r in &link.records {
                let send = r.send_time.seconds(self.resolution);
                match (r.deliver_time, self.latency_seconds(r)) {
                    (Some(d), Some(lat)) => {
                        let _ = writeln!(
                            out,
                            "{id},{},{send:.6},{:.6},{lat:.6},0",
                            r.seq,
                            d.seconds(self.resolution)
                        );
                    }
                    _ => {
                        let _ = writeln!(out, "{id},{},{send:.6},,,1", r.seq);
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::{resolve_link, LinkOverrides, NetworkPreset};

    fn link(id: &str, src: &str, dst: &str) -> LinkParams {
        LinkParams {
            id: id.into(),
            src: src.into(),
            dst: dst.into(),
            distance_m: 4000.0,
            prop_speed_m_s: 2e8,
            data_rate_bps: 1e6,
            proc_delay_s: 0.0,
            noise_sigma_s: 0.0,
            loss_prob: 0.0,
        }
    }

    fn emulator(links: Vec<LinkParams>, ideal: bool) -> Emulator {
        Emulator::new(links, 5, Resolution::MICROSECOND, ideal).unwrap()
    }

    #[test]
    fn ideal_delivery_is_one_tick() {
        let mut e = emulator(vec![link("c-1", "mgcc", "dg-1")], true);
        let now = SimTime::from_ticks(5000);
        e.send("mgcc", "dg-1", Payload::Sample(0.1), 1024, now).unwrap();
        assert!(e.poll_delivered("dg-1", now).is_empty());
        let got = e.poll_delivered("dg-1", now.advance(1));
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].deliver_time, Some(now.advance(1)));
        assert!(e.poll_delivered("dg-1", now.advance(10)).is_empty());
    }

    #[test]
    fn deterministic_latency_is_quantized_up() {
        let mut e = emulator(vec![link("c-1", "mgcc", "dg-1")], false);
        e.send("mgcc", "dg-1", Payload::Sample(0.0), 1024, SimTime::ZERO)
            .unwrap();
        let got = e.poll_delivered("dg-1", SimTime::from_ticks(10_000));
        assert_eq!(got[0].deliver_time, Some(SimTime::from_ticks(1044)));
    }

    #[test]
    fn certain_loss_drops_everything() {
        let mut l = link("c-1", "mgcc", "dg-1");
        l.loss_prob = 1.0;
        let mut e = emulator(vec![l], false);
        for k in 0..100 {
            e.send(
                "mgcc",
                "dg-1",
                Payload::Sample(0.0),
                1024,
                SimTime::from_ticks(k * 1000),
            )
            .unwrap();
        }
        assert!(e.poll_delivered("dg-1", SimTime::from_ticks(u64::MAX / 2)).is_empty());
        assert_eq!(e.records("c-1").len(), 100);
        assert_eq!(e.latency_report("c-1").unwrap_err(), CommError::NoData("c-1".into()));
    }

    #[test]
    fn unknown_route_is_an_error() {
        let mut e = emulator(vec![link("c-1", "mgcc", "dg-1")], false);
        let err = e
            .send("dg-1", "mgcc", Payload::Sample(0.0), 1024, SimTime::ZERO)
            .unwrap_err();
        assert!(matches!(err, CommError::UnknownLink { .. }));
    }

    #[test]
    fn fifo_holds_when_a_later_draw_is_shorter() {
        // Large noise makes consecutive draws cross; search a seed where the
        // raw second latency is smaller than the first.
        let mut l = link("1-4", "dg-1", "dg-4");
        l.noise_sigma_s = 5e-3;
        for seed in 0..64u64 {
            let mut probe = substream(seed, "link/1-4");
            let a = sample_latency(&l, 1536, &mut probe);
            let b = sample_latency(&l, 1536, &mut probe);
            // Second packet leaves 10 µs later.
            if b + 1e-5 >= a {
                continue;
            }
            let mut e = Emulator::new(vec![l.clone()], seed, Resolution::MICROSECOND, false).unwrap();
            let s0 = e
                .send("dg-1", "dg-4", Payload::Sample(1.0), 1536, SimTime::ZERO)
                .unwrap();
            let s1 = e
                .send("dg-1", "dg-4", Payload::Sample(2.0), 1536, SimTime::from_ticks(10))
                .unwrap();
            let got = e.poll_delivered("dg-4", SimTime::from_ticks(1_000_000));
            assert_eq!(got.iter().map(|p| p.seq).collect::<Vec<_>>(), vec![s0, s1]);
            assert!(got[1].deliver_time >= got[0].deliver_time);
            return;
        }
        panic!("no crossing draw found");
    }

    #[test]
    fn poll_orders_by_time_then_seq_across_links() {
        let mut near = link("4-3", "dg-4", "dg-3");
        near.distance_m = 0.0;
        let far = link("2-3", "dg-2", "dg-3");
        let mut e = emulator(vec![near, far], false);
        let a = e
            .send("dg-2", "dg-3", Payload::Sample(2.0), 1024, SimTime::ZERO)
            .unwrap();
        let b = e
            .send("dg-4", "dg-3", Payload::Sample(4.0), 1024, SimTime::ZERO)
            .unwrap();
        let got = e.poll_delivered("dg-3", SimTime::from_ticks(1_000_000));
        assert_eq!(got.iter().map(|p| p.seq).collect::<Vec<_>>(), vec![b, a]);
        assert_eq!(e.in_flight(), 0);
    }

    #[test]
    fn substreams_are_isolated_from_other_links() {
        let mk = |id: &str, src: &str, dst: &str| {
            resolve_link(
                NetworkPreset::Network2,
                id,
                src,
                dst,
                4000.0,
                &LinkOverrides::default(),
                1.0,
            )
        };
        let draw = |links: Vec<LinkParams>| {
            let mut e = Emulator::new(links, 11, Resolution::MICROSECOND, false).unwrap();
            for k in 0..50 {
                let now = SimTime::from_ticks(k * 1_000_000);
                e.send("mgcc", "dg-1", Payload::Sample(0.0), 1024, now).unwrap();
                if e.link_between("mgcc", "dg-2").is_some() {
                    e.send("mgcc", "dg-2", Payload::Sample(0.0), 1024, now).unwrap();
                }
            }
            e.records("c-1").to_vec()
        };
        let alone = draw(vec![mk("c-1", "mgcc", "dg-1")]);
        let with_other = draw(vec![mk("c-1", "mgcc", "dg-1"), mk("c-2", "mgcc", "dg-2")]);
        assert_eq!(
            alone.iter().map(|r| r.deliver_time).collect::<Vec<_>>(),
            with_other.iter().map(|r| r.deliver_time).collect::<Vec<_>>()
        );
    }

    #[test]
    fn dump_has_fixed_columns() {
        let mut e = emulator(vec![link("c-1", "mgcc", "dg-1")], false);
        e.send(
            "mgcc",
            "dg-1",
            Payload::Sample(0.0),
            1024,
            SimTime::from_ticks(2_000_000),
        )
        .unwrap();
        assert_eq!(
            e.dump_csv(),
            "link_id,seq,send_time_s,deliver_time_s,latency_s,dropped\nc-1,0,2.000000,2.001044,0.001044,0\n"
        );
    }

    #[test]
    fn duplicate_routes_are_rejected() {
        let err = Emulator::new(
            vec![link("a", "x", "y"), link("b", "x", "y")],
            0,
            Resolution::MICROSECOND,
            false,
        );
        assert!(matches!(err, Err(CommError::DuplicateRoute { .. })));
    }
}
