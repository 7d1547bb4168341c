//! Declarative experiments: scenario files, runs, comparisons, gain sweeps
//! and their outputs.

pub mod build;
pub mod experiments;
pub mod file;
pub mod output;
pub mod run;

use std::path::Path;

use anyhow::{Context, Result};

pub use experiments::{compare, gain_sweep, log_grid, CompareReport, KiDirection, SweepReport};
pub use file::{emit_scenario, parse_scenario, ControlMode, ScenarioError, ScenarioFile};
pub use output::emit_outputs;
pub use run::{run, RunMetrics, RunOutput, Trace, Verdict};

/// Scenario documents shipped with the crate, by name.
pub const BUNDLED: [(&str, &str); 8] = [
    (
        "paper-baseline-centralized-ideal",
        include_str!("../../scenarios/paper-baseline-centralized-ideal.toml"),
    ),
    (
        "paper-baseline-centralized-network-1",
        include_str!("../../scenarios/paper-baseline-centralized-network-1.toml"),
    ),
    (
        "paper-baseline-centralized-network-2",
        include_str!("../../scenarios/paper-baseline-centralized-network-2.toml"),
    ),
    (
        "paper-baseline-centralized-network-3",
        include_str!("../../scenarios/paper-baseline-centralized-network-3.toml"),
    ),
    (
        "paper-baseline-distributed-ideal",
        include_str!("../../scenarios/paper-baseline-distributed-ideal.toml"),
    ),
    (
        "paper-baseline-distributed-network-1",
        include_str!("../../scenarios/paper-baseline-distributed-network-1.toml"),
    ),
    (
        "paper-baseline-distributed-network-2",
        include_str!("../../scenarios/paper-baseline-distributed-network-2.toml"),
    ),
    (
        "paper-baseline-distributed-network-3",
        include_str!("../../scenarios/paper-baseline-distributed-network-3.toml"),
    ),
];

/// Text of a bundled scenario. Short aliases: `paper-baseline` is the
/// centralized ideal case, `paper-baseline-<mode>` its ideal case.
pub fn bundled(name: &str) -> Option<&'static str> {
    let full = match name {
        "paper-baseline" => "paper-baseline-centralized-ideal",
        "paper-baseline-centralized" => "paper-baseline-centralized-ideal",
        "paper-baseline-distributed" => "paper-baseline-distributed-ideal",
        other => other,
    };
    BUNDLED.iter().find(|(n, _)| *n == full).map(|(_, t)| *t)
}

/// Bundled scenario, parsed. Panics on a malformed bundled file.
pub fn bundled_scenario(name: &str) -> Option<ScenarioFile> {
    bundled(name).map(|t| parse_scenario(t).unwrap_or_else(|e| panic!("bundled {name}: {e}")))
}

/// Loads a scenario from a file path, or by bundled name when no such file
/// exists.
pub fn load(spec: &str) -> Result<ScenarioFile> {
    let path = Path::new(spec);
    let text = if path.exists() {
        std::fs::read_to_string(path).with_context(|| format!("cannot read {spec}"))?
    } else if let Some(t) = bundled(spec) {
        t.to_string()
    } else {
        anyhow::bail!("no scenario file or bundled scenario named {spec}");
    };
    parse_scenario(&text).map_err(|e| anyhow::anyhow!("{spec}: invalid scenario\n{e}"))
}
