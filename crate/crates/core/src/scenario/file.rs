//! Scenario document: types, parsing and validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::comm::{LinkOverrides, NetworkPreset};
use crate::control::metropolis_weights;
use crate::plant::{Line, LoadSpec};
use crate::rng::MAX_SEED;
use crate::time::Resolution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub metadata: Metadata,
    pub master: MasterSection,
    pub plant: PlantSection,
    pub network: NetworkSection,
    pub control: ControlSection,
    #[serde(default)]
    pub outputs: OutputsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub name: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasterSection {
    #[serde(default = "default_step")]
    pub step_s: f64,
    pub t_end_s: f64,
    #[serde(default = "default_ticks_per_second")]
    pub ticks_per_second: u64,
}

fn default_step() -> f64 {
    0.001
}

fn default_ticks_per_second() -> u64 {
    1_000_000
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Primary-control equilibrium of the initial loads.
    Equilibrium,
    /// Zero angles and zero filtered power.
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSection {
    pub f0_hz: f64,
    #[serde(default = "default_init")]
    pub init: InitMode,
    pub dg: Vec<DgSpec>,
    #[serde(default)]
    pub line: Vec<Line>,
    #[serde(default)]
    pub load: Vec<LoadSpec>,
}

fn default_init() -> InitMode {
    InitMode::Equilibrium
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgSpec {
    pub id: u32,
    /// Overrides `plant.f0_hz` for this DG.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f0_hz: Option<f64>,
    #[serde(default)]
    pub p0_w: f64,
    pub kp_hz_per_w: f64,
    pub wc_rad_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSection {
    pub preset: NetworkPreset,
    /// Multiplies every latency time constant of the preset.
    #[serde(default = "one")]
    pub latency_scale: f64,
    #[serde(default)]
    pub link: Vec<LinkSpec>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub id: String,
    pub src: String,
    pub dst: String,
    pub distance_m: f64,
    #[serde(flatten)]
    pub overrides: LinkOverrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlMode {
    Centralized,
    Distributed,
    PrimaryOnly,
}

impl fmt::Display for ControlMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ControlMode::Centralized => "centralized",
            ControlMode::Distributed => "distributed",
            ControlMode::PrimaryOnly => "primary-only",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSection {
    pub mode: ControlMode,
    #[serde(default = "default_kp")]
    pub kp: f64,
    #[serde(default = "default_ki")]
    pub ki: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp_hz: Option<f64>,
    #[serde(default = "default_period")]
    pub update_period_s: f64,
    #[serde(default = "default_n_consensus")]
    pub n_consensus: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round_timeout_s: Option<f64>,
    /// DG whose frequency the central controller measures.
    #[serde(default = "default_measurement_dg")]
    pub measurement_dg: u32,
    /// Link carrying that measurement to the central controller.
    #[serde(default = "default_uplink")]
    pub uplink: String,
    /// Undirected agent communication graph, by DG id.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agent_edges: Vec<[u32; 2]>,
    #[serde(default = "default_sample_bits")]
    pub sample_bits: u32,
    #[serde(default = "default_consensus_bits")]
    pub consensus_bits: u32,
}

fn default_kp() -> f64 {
    0.2
}

fn default_ki() -> f64 {
    1.0
}

fn default_period() -> f64 {
    0.1
}

fn default_n_consensus() -> u32 {
    20
}

fn default_measurement_dg() -> u32 {
    1
}

fn default_uplink() -> String {
    "m-1".into()
}

fn default_sample_bits() -> u32 {
    crate::comm::SAMPLE_BITS
}

fn default_consensus_bits() -> u32 {
    crate::comm::CONSENSUS_BITS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputsSection {
    /// Emit every k-th step to the trace.
    #[serde(default = "default_decimation")]
    pub decimation: u64,
    #[serde(default = "default_band")]
    pub settling_band_hz: f64,
    #[serde(default = "default_window")]
    pub trailing_window_s: f64,
    #[serde(default = "default_true")]
    pub latency_dump: bool,
}

impl Default for OutputsSection {
    fn default() -> Self {
        Self {
            decimation: default_decimation(),
            settling_band_hz: default_band(),
            trailing_window_s: default_window(),
            latency_dump: true,
        }
    }
}

fn default_decimation() -> u64 {
    10
}

fn default_band() -> f64 {
    0.01
}

fn default_window() -> f64 {
    5.0
}

fn default_true() -> bool {
    true
}

/// Network endpoint of the central controller.
pub const MGCC_ENDPOINT: &str = "mgcc";

/// Network endpoint of the controller (or agent) of DG `id`.
pub fn dg_endpoint(id: u32) -> String {
    format!("dg-{id}")
}

/// One diagnostic, located by a dotted path into the document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            f.write_str(&self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

/// Every problem found in a scenario document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioError {
    pub issues: Vec<Issue>,
}

impl ScenarioError {
    fn single(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            issues: vec![Issue {
                path: path.into(),
                message: message.into(),
            }],
        }
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.issues.iter().any(|i| i.to_string().contains(needle))
    }
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, issue) in self.issues.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ScenarioError {}

const TOP: &[&str] = &["metadata", "master", "plant", "network", "control", "outputs"];
const METADATA: &[&str] = &["name", "seed"];
const MASTER: &[&str] = &["step_s", "t_end_s", "ticks_per_second"];
const PLANT: &[&str] = &["f0_hz", "init", "dg", "line", "load"];
const DG: &[&str] = &["id", "f0_hz", "p0_w", "kp_hz_per_w", "wc_rad_s"];
const LINE: &[&str] = &["a", "b", "b_w_per_rad"];
const LOAD: &[&str] = &["id", "bus", "p_w", "trip_s"];
const NETWORK: &[&str] = &["preset", "latency_scale", "link"];
const LINK: &[&str] = &[
    "id",
    "src",
    "dst",
    "distance_m",
    "prop_speed_m_s",
    "data_rate_bps",
    "proc_delay_s",
    "noise_sigma_s",
    "loss_prob",
];
const CONTROL: &[&str] = &[
    "mode",
    "kp",
    "ki",
    "clamp_hz",
    "update_period_s",
    "n_consensus",
    "round_timeout_s",
    "measurement_dg",
    "uplink",
    "agent_edges",
    "sample_bits",
    "consensus_bits",
];
const OUTPUTS: &[&str] = &["decimation", "settling_band_hz", "trailing_window_s", "latency_dump"];

fn check_keys(table: &toml::Table, path: &str, allowed: &[&str], issues: &mut Vec<Issue>) {
    for key in table.keys() {
        if !allowed.contains(&key.as_str()) {
            let full = if path.is_empty() {
                key.clone()
            } else {
                format!("{path}.{key}")
            };
            issues.push(Issue {
                path: full,
                message: "unknown key".into(),
            });
        }
    }
}

fn check_array(table: &toml::Table, path: &str, key: &str, allowed: &[&str], issues: &mut Vec<Issue>) {
    if let Some(toml::Value::Array(items)) = table.get(key) {
        for (i, item) in items.iter().enumerate() {
            if let toml::Value::Table(t) = item {
                check_keys(t, &format!("{path}.{key}[{i}]"), allowed, issues);
            }
        }
    }
}

fn unknown_keys(doc: &toml::Table) -> Vec<Issue> {
    let mut issues = Vec::new();
    check_keys(doc, "", TOP, &mut issues);
    let section = |name: &str| match doc.get(name) {
        Some(toml::Value::Table(t)) => Some(t),
        _ => None,
    };
    for (name, allowed) in [
        ("metadata", METADATA),
        ("master", MASTER),
        ("control", CONTROL),
        ("outputs", OUTPUTS),
    ] {
        if let Some(t) = section(name) {
            check_keys(t, name, allowed, &mut issues);
        }
    }
    if let Some(t) = section("plant") {
        check_keys(t, "plant", PLANT, &mut issues);
        check_array(t, "plant", "dg", DG, &mut issues);
        check_array(t, "plant", "line", LINE, &mut issues);
        check_array(t, "plant", "load", LOAD, &mut issues);
    }
    if let Some(t) = section("network") {
        check_keys(t, "network", NETWORK, &mut issues);
        check_array(t, "network", "link", LINK, &mut issues);
    }
    issues
}

/// Parses and fully validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<ScenarioFile, ScenarioError> {
    let doc: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ScenarioError::single("", format!("syntax error: {}", e.message())))?;
    let issues = unknown_keys(&doc);
    if !issues.is_empty() {
        return Err(ScenarioError { issues });
    }
    let scenario: ScenarioFile = toml::from_str(text).map_err(|e| {
        let message = e.message().to_string();
        let path = e
            .span()
            .map(|s| {
                let line = text[..s.start].matches('\n').count() + 1;
                format!("line {line}")
            })
            .unwrap_or_default();
        ScenarioError::single(path, message)
    })?;
    let issues = validate(&scenario);
    if issues.is_empty() {
        Ok(scenario)
    } else {
        Err(ScenarioError { issues })
    }
}

/// Serializes a scenario back to its document form.
pub fn emit_scenario(scenario: &ScenarioFile) -> String {
    toml::to_string(scenario).expect("scenario types serialize to TOML")
}

fn positive(issues: &mut Vec<Issue>, path: String, what: &str, value: f64) {
    if !(value > 0.0 && value.is_finite()) {
        issues.push(Issue {
            path,
            message: format!("{what} must be positive (got {value})"),
        });
    }
}

fn non_negative(issues: &mut Vec<Issue>, path: String, what: &str, value: f64) {
    if !(value >= 0.0 && value.is_finite()) {
        issues.push(Issue {
            path,
            message: format!("{what} must be non-negative (got {value})"),
        });
    }
}

/// Semantic checks; returns every problem found.
pub fn validate(s: &ScenarioFile) -> Vec<Issue> {
    let mut issues = Vec::new();
    let mut push = |path: &str, message: String| {
        issues.push(Issue {
            path: path.into(),
            message,
        })
    };

    if s.metadata.seed > MAX_SEED {
        push("metadata.seed", format!("seed must be at most {MAX_SEED}"));
    }

    // Master timing.
    let resolution = Resolution::per_second(s.master.ticks_per_second);
    match resolution {
        None => push("master.ticks_per_second", "must be positive".into()),
        Some(res) => {
            match res.exact_ticks(s.master.step_s) {
                Some(t) if t > 0 => {}
                _ => push(
                    "master.step_s",
                    format!(
                        "step {} s is not a positive multiple of the tick resolution 1/{} s",
                        s.master.step_s, s.master.ticks_per_second
                    ),
                ),
            }
            if !(s.master.t_end_s > 0.0 && s.master.t_end_s.is_finite()) {
                push(
                    "master.t_end_s",
                    format!("end time must be positive (got {})", s.master.t_end_s),
                );
            }
            if s.control.mode != ControlMode::PrimaryOnly {
                let step = res.exact_ticks(s.master.step_s).unwrap_or(0);
                match res.exact_ticks(s.control.update_period_s) {
                    Some(p) if p > 0 && step > 0 && p % step == 0 => {}
                    _ => push(
                        "control.update_period_s",
                        format!(
                            "update period {} s is not a positive multiple of the step",
                            s.control.update_period_s
                        ),
                    ),
                }
            }
        }
    }

    // Plant.
    positive(&mut issues, "plant.f0_hz".into(), "f0", s.plant.f0_hz);
    let mut dg_ids = BTreeSet::new();
    if s.plant.dg.is_empty() {
        issues.push(Issue {
            path: "plant.dg".into(),
            message: "at least one DG is required".into(),
        });
    }
    for (i, dg) in s.plant.dg.iter().enumerate() {
        let p = format!("plant.dg[{i}]");
        if !dg_ids.insert(dg.id) {
            issues.push(Issue {
                path: format!("{p}.id"),
                message: format!("duplicate DG id {}", dg.id),
            });
        }
        positive(
            &mut issues,
            format!("{p}.kp_hz_per_w"),
            "droop coefficient",
            dg.kp_hz_per_w,
        );
        positive(&mut issues, format!("{p}.wc_rad_s"), "filter cutoff", dg.wc_rad_s);
        if let Some(f0) = dg.f0_hz {
            positive(&mut issues, format!("{p}.f0_hz"), "f0", f0);
        }
        if !dg.p0_w.is_finite() {
            issues.push(Issue {
                path: format!("{p}.p0_w"),
                message: "must be finite".into(),
            });
        }
    }
    for (i, line) in s.plant.line.iter().enumerate() {
        let p = format!("plant.line[{i}]");
        for (end, bus) in [("a", line.a), ("b", line.b)] {
            if !dg_ids.contains(&bus) {
                issues.push(Issue {
                    path: format!("{p}.{end}"),
                    message: format!("unknown bus {bus}"),
                });
            }
        }
        if line.a == line.b {
            issues.push(Issue {
                path: p.clone(),
                message: format!("line connects bus {} to itself", line.a),
            });
        }
        positive(
            &mut issues,
            format!("{p}.b_w_per_rad"),
            "synchronizing coefficient",
            line.b_w_per_rad,
        );
    }
    let mut load_ids = BTreeSet::new();
    for (i, load) in s.plant.load.iter().enumerate() {
        let p = format!("plant.load[{i}]");
        if !load_ids.insert(load.id) {
            issues.push(Issue {
                path: format!("{p}.id"),
                message: format!("duplicate load id {}", load.id),
            });
        }
        if !dg_ids.contains(&load.bus) {
            issues.push(Issue {
                path: format!("{p}.bus"),
                message: format!("unknown bus {}", load.bus),
            });
        }
        non_negative(&mut issues, format!("{p}.p_w"), "demand", load.p_w);
        if let Some(t) = load.trip_s {
            non_negative(&mut issues, format!("{p}.trip_s"), "trip time", t);
        }
    }
    if issues.is_empty() && !plant_connected(s) {
        issues.push(Issue {
            path: "plant.line".into(),
            message: "line graph over buses is not connected".into(),
        });
    }

    // Network links.
    positive(
        &mut issues,
        "network.latency_scale".into(),
        "latency scale",
        s.network.latency_scale,
    );
    let mut link_ids = BTreeSet::new();
    let mut routes: BTreeMap<(&str, &str), &str> = BTreeMap::new();
    for (i, link) in s.network.link.iter().enumerate() {
        let p = format!("network.link[{i}]");
        let name = &link.id;
        if !link_ids.insert(name.as_str()) {
            issues.push(Issue {
                path: format!("{p}.id"),
                message: format!("duplicate link id {name}"),
            });
        }
        if routes.insert((&link.src, &link.dst), name).is_some() {
            issues.push(Issue {
                path: p.clone(),
                message: format!("link {name}: second link for route {} -> {}", link.src, link.dst),
            });
        }
        if link.src == link.dst {
            issues.push(Issue {
                path: p.clone(),
                message: format!("link {name}: source and destination are both {}", link.src),
            });
        }
        if !(link.distance_m >= 0.0 && link.distance_m.is_finite()) {
            issues.push(Issue {
                path: format!("{p}.distance_m"),
                message: format!("link {name}: distance must be non-negative (got {})", link.distance_m),
            });
        }
        let o = &link.overrides;
        for (key, value) in [("prop_speed_m_s", o.prop_speed_m_s), ("data_rate_bps", o.data_rate_bps)] {
            if let Some(v) = value {
                if !(v > 0.0) {
                    issues.push(Issue {
                        path: format!("{p}.{key}"),
                        message: format!("link {name}: must be positive (got {v})"),
                    });
                }
            }
        }
        for (key, value) in [("proc_delay_s", o.proc_delay_s), ("noise_sigma_s", o.noise_sigma_s)] {
            if let Some(v) = value {
                if !(v >= 0.0 && v.is_finite()) {
                    issues.push(Issue {
                        path: format!("{p}.{key}"),
                        message: format!("link {name}: must be non-negative (got {v})"),
                    });
                }
            }
        }
        if let Some(q) = o.loss_prob {
            if !(0.0..=1.0).contains(&q) {
                issues.push(Issue {
                    path: format!("{p}.loss_prob"),
                    message: format!("link {name}: loss probability must be in [0, 1] (got {q})"),
                });
            }
        }
        if s.network.preset == NetworkPreset::Custom && o.data_rate_bps.is_none() {
            issues.push(Issue {
                path: format!("{p}.data_rate_bps"),
                message: format!("link {name}: custom preset requires an explicit data rate"),
            });
        }
        for (key, ep) in [("src", &link.src), ("dst", &link.dst)] {
            if !endpoint_known(ep, &dg_ids) {
                issues.push(Issue {
                    path: format!("{p}.{key}"),
                    message: format!("link {name}: unknown endpoint {ep}"),
                });
            }
        }
    }

    // Control.
    let c = &s.control;
    if !(c.ki >= 0.0 && c.ki.is_finite()) {
        issues.push(Issue {
            path: "control.ki".into(),
            message: format!("integral gain must be non-negative (got {})", c.ki),
        });
    }
    if !c.kp.is_finite() {
        issues.push(Issue {
            path: "control.kp".into(),
            message: "must be finite".into(),
        });
    }
    if let Some(clamp) = c.clamp_hz {
        positive(&mut issues, "control.clamp_hz".into(), "clamp", clamp);
    }
    if let Some(t) = c.round_timeout_s {
        positive(&mut issues, "control.round_timeout_s".into(), "round timeout", t);
    }
    if c.sample_bits == 0 || c.consensus_bits == 0 {
        issues.push(Issue {
            path: "control".into(),
            message: "message sizes must be positive".into(),
        });
    }
    let has_route = |src: &str, dst: &str| routes.contains_key(&(src, dst));
    match c.mode {
        ControlMode::PrimaryOnly => {}
        ControlMode::Centralized => {
            if !dg_ids.contains(&c.measurement_dg) {
                issues.push(Issue {
                    path: "control.measurement_dg".into(),
                    message: format!("unknown DG {}", c.measurement_dg),
                });
            }
            let missing: Vec<String> = dg_ids
                .iter()
                .map(|&id| dg_endpoint(id))
                .filter(|ep| !has_route(MGCC_ENDPOINT, ep))
                .map(|ep| format!("{MGCC_ENDPOINT} -> {ep}"))
                .collect();
            if !missing.is_empty() {
                issues.push(Issue {
                    path: "network.link".into(),
                    message: format!("missing controller links: {}", missing.join(", ")),
                });
            }
            match s.network.link.iter().find(|l| l.id == c.uplink) {
                None => issues.push(Issue {
                    path: "control.uplink".into(),
                    message: format!("missing uplink: no link named {}", c.uplink),
                }),
                Some(l) if l.src != dg_endpoint(c.measurement_dg) || l.dst != MGCC_ENDPOINT => issues.push(Issue {
                    path: "control.uplink".into(),
                    message: format!(
                        "uplink {} must run from {} to {MGCC_ENDPOINT}",
                        c.uplink,
                        dg_endpoint(c.measurement_dg)
                    ),
                }),
                Some(_) => {}
            }
        }
        ControlMode::Distributed => {
            if c.n_consensus == 0 {
                issues.push(Issue {
                    path: "control.n_consensus".into(),
                    message: "at least one consensus iteration is required".into(),
                });
            }
            if c.agent_edges.is_empty() {
                issues.push(Issue {
                    path: "control.agent_edges".into(),
                    message: "missing agent links: distributed mode needs an agent graph".into(),
                });
            } else {
                let ids: Vec<u32> = dg_ids.iter().copied().collect();
                let edges: Vec<(u32, u32)> = c.agent_edges.iter().map(|e| (e[0], e[1])).collect();
                if let Err(e) = metropolis_weights(&ids, &edges) {
                    issues.push(Issue {
                        path: "control.agent_edges".into(),
                        message: e.to_string(),
                    });
                }
                let mut missing = Vec::new();
                for &[a, b] in &c.agent_edges {
                    for (x, y) in [(a, b), (b, a)] {
                        let (sx, sy) = (dg_endpoint(x), dg_endpoint(y));
                        if !has_route(&sx, &sy) {
                            missing.push(format!("{sx} -> {sy}"));
                        }
                    }
                }
                if !missing.is_empty() {
                    issues.push(Issue {
                        path: "network.link".into(),
                        message: format!("missing agent links: {}", missing.join(", ")),
                    });
                }
            }
        }
    }

    // Outputs.
    let o = &s.outputs;
    if o.decimation == 0 {
        issues.push(Issue {
            path: "outputs.decimation".into(),
            message: "must be at least 1".into(),
        });
    }
    positive(
        &mut issues,
        "outputs.settling_band_hz".into(),
        "settling band",
        o.settling_band_hz,
    );
    positive(
        &mut issues,
        "outputs.trailing_window_s".into(),
        "trailing window",
        o.trailing_window_s,
    );
    issues
}

fn endpoint_known(ep: &str, dg_ids: &BTreeSet<u32>) -> bool {
    ep == MGCC_ENDPOINT
        || ep
            .strip_prefix("dg-")
            .and_then(|n| n.parse::<u32>().ok())
            .is_some_and(|id| dg_ids.contains(&id))
}

fn plant_connected(s: &ScenarioFile) -> bool {
    let ids: Vec<u32> = s.plant.dg.iter().map(|d| d.id).collect();
    let mut seen = BTreeSet::from([ids[0]]);
    let mut stack = vec![ids[0]];
    while let Some(x) = stack.pop() {
        for l in &s.plant.line {
            for (p, q) in [(l.a, l.b), (l.b, l.a)] {
                if p == x && seen.insert(q) {
                    stack.push(q);
                }
            }
        }
    }
    seen.len() == ids.len()
}
