//! Multi-run experiments: scenario comparison and PI gain sweeps.

use std::fmt::Write as _;

use anyhow::{bail, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::file::ScenarioFile;
use super::run::{run, RunMetrics, Verdict};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub scenario: String,
    pub network: String,
    pub verdict: Verdict,
    pub settling_time_s: Option<f64>,
    pub steady_state_error_hz: f64,
    pub nadir_hz: f64,
    pub zenith_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    #[serde(skip)]
    pub metrics: Vec<RunMetrics>,
}

/// Checks that scenarios differ at most in their network (and bookkeeping).
pub fn check_comparable(scenarios: &[ScenarioFile]) -> Result<()> {
    if scenarios.is_empty() {
        bail!("nothing to compare");
    }
    let first = &scenarios[0];
    for s in &scenarios[1..] {
        if s.control != first.control {
            bail!(
                "control sections differ: {} and {}",
                first.metadata.name,
                s.metadata.name
            );
        }
        if s.plant != first.plant {
            bail!("plant sections differ: {} and {}", first.metadata.name, s.metadata.name);
        }
        if s.master != first.master {
            bail!(
                "master sections differ: {} and {}",
                first.metadata.name,
                s.metadata.name
            );
        }
    }
    Ok(())
}

/// Runs every scenario (in parallel) and collects one row per scenario, in
/// input order.
pub fn compare(scenarios: &[ScenarioFile]) -> Result<CompareReport> {
    check_comparable(scenarios)?;
    let metrics: Vec<RunMetrics> = scenarios
        .par_iter()
        .map(|s| run(s).map(|o| o.metrics))
        .collect::<Result<_>>()?;
    let rows = metrics
        .iter()
        .map(|m| CompareRow {
            scenario: m.scenario.clone(),
            network: m.network.clone(),
            verdict: m.verdict,
            settling_time_s: m.settling_time_s,
            steady_state_error_hz: m.steady_state_error_hz,
            nadir_hz: m.nadir_hz,
            zenith_hz: m.zenith_hz,
        })
        .collect();
    Ok(CompareReport { rows, metrics })
}

fn opt_secs(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |t| format!("{t:.3}"))
}

impl CompareReport {
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<44} {:<10} {:<12} {:>10} {:>12} {:>10} {:>10}\n",
            "scenario", "network", "verdict", "settle_s", "sse_hz", "nadir_hz", "zenith_hz"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<44} {:<10} {:<12} {:>10} {:>12.3e} {:>10.4} {:>10.4}",
                r.scenario,
                r.network,
                r.verdict.as_str(),
                opt_secs(r.settling_time_s),
                r.steady_state_error_hz,
                r.nadir_hz,
                r.zenith_hz
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub kp: f64,
    pub ki: f64,
    pub seed: u64,
    pub verdict: Verdict,
    pub settling_time_s: Option<f64>,
    pub steady_state_error_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KiDirection {
    Above,
    Below,
    Equal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub scenario: String,
    pub base_kp: f64,
    pub base_ki: f64,
    /// Row-major over `(kp, ki)` in the order given.
    pub points: Vec<SweepPoint>,
    /// Settled point with the shortest settling time.
    pub best: Option<SweepPoint>,
    /// Where the best point's Ki lies relative to the base Ki.
    pub best_ki_direction: Option<KiDirection>,
    /// Settled points with Ki above, equal to and below the base Ki.
    pub settled_ki_above: usize,
    pub settled_ki_equal: usize,
    pub settled_ki_below: usize,
}

fn direction(ki: f64, base: f64) -> KiDirection {
    if ki > base {
        KiDirection::Above
    } else if ki < base {
        KiDirection::Below
    } else {
        KiDirection::Equal
    }
}

/// Log-spaced factors `10^(k/steps)` for `k = −steps..=steps`.
pub fn log_grid(base: f64, decades: f64, steps: i32) -> Vec<f64> {
    (-steps..=steps)
        .map(|k| base * 10f64.powf(decades * k as f64 / steps as f64))
        .collect()
}

/// One run per `(kp, ki)` grid point, each with its own seed derived from
/// the scenario seed and the grid position.
pub fn gain_sweep(base: &ScenarioFile, kps: &[f64], kis: &[f64]) -> Result<SweepReport> {
    if kps.is_empty() || kis.is_empty() {
        bail!("gain sweep needs at least one Kp and one Ki value");
    }
    let grid: Vec<(usize, usize)> = (0..kps.len())
        .flat_map(|i| (0..kis.len()).map(move |j| (i, j)))
        .collect();
    let points: Vec<SweepPoint> = grid
        .par_iter()
        .map(|&(i, j)| {
            let mut s = base.clone();
            s.control.kp = kps[i];
            s.control.ki = kis[j];
            s.metadata.seed = derive_seed(base.metadata.seed, &format!("sweep/{i}/{j}"));
            let m = run(&s)?.metrics;
            Ok(SweepPoint {
                kp: kps[i],
                ki: kis[j],
                seed: s.metadata.seed,
                verdict: m.verdict,
                settling_time_s: m.settling_time_s,
                steady_state_error_hz: m.steady_state_error_hz,
            })
        })
        .collect::<Result<_>>()?;

    let settled: Vec<&SweepPoint> = points.iter().filter(|p| p.verdict == Verdict::Settled).collect();
    let best = settled
        .iter()
        .copied()
        .min_by(|a, b| {
            let ta = a.settling_time_s.unwrap_or(f64::INFINITY);
            let tb = b.settling_time_s.unwrap_or(f64::INFINITY);
            ta.total_cmp(&tb)
        })
        .cloned();
    let base_ki = base.control.ki;
    let count = |d: KiDirection| settled.iter().filter(|p| direction(p.ki, base_ki) == d).count();
    Ok(SweepReport {
        scenario: base.metadata.name.clone(),
        base_kp: base.control.kp,
        base_ki,
        best_ki_direction: best.as_ref().map(|b| direction(b.ki, base_ki)),
        best,
        settled_ki_above: count(KiDirection::Above),
        settled_ki_equal: count(KiDirection::Equal),
        settled_ki_below: count(KiDirection::Below),
        points,
    })
}

impl SweepReport {
    pub fn table(&self) -> String {
        let mut out = format!(
            "# sweep of {} around kp = {}, ki = {}\n{:>12} {:>12} {:<12} {:>10} {:>12}\n",
            self.scenario, self.base_kp, self.base_ki, "kp", "ki", "verdict", "settle_s", "sse_hz"
        );
        for p in &self.points {
            let _ = writeln!(
                out,
                "{:>12.6} {:>12.6} {:<12} {:>10} {:>12.3e}",
                p.kp,
                p.ki,
                p.verdict.as_str(),
                opt_secs(p.settling_time_s),
                p.steady_state_error_hz
            );
        }
        match &self.best {
            Some(b) => {
                let dir = match self.best_ki_direction {
                    Some(KiDirection::Above) => "above",
                    Some(KiDirection::Below) => "below",
                    _ => "equal to",
                };
                let _ = writeln!(
                    out,
                    "# best settled: kp = {:.6}, ki = {:.6}, settling {} s; ki {dir} baseline",
                    b.kp,
                    b.ki,
                    opt_secs(b.settling_time_s)
                );
            }
            None => out.push_str("# no grid point settled\n"),
        }
        let _ = writeln!(
            out,
            "# settled points by ki: {} above, {} equal, {} below baseline",
            self.settled_ki_above, self.settled_ki_equal, self.settled_ki_below
        );
        out
    }
}
