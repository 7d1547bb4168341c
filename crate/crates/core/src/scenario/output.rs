//! Files written for a run: trace CSV, metrics document, latency dump and
//! optional charts.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use plotters::prelude::*;

use super::run::{RunMetrics, RunOutput, Trace};

pub const TRACE_FILE: &str = "trace.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const LATENCY_FILE: &str = "latency.csv";
pub const FREQUENCY_CHART: &str = "frequency.svg";
pub const LATENCY_CHART: &str = "latency.svg";

/// Formats `x` with 9 significant digits in plain positional notation.
pub fn fmt_sig9(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "NaN".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if x == 0.0 {
        return "0".into();
    }
    // Rounding to 9 digits may carry into a new decade, so take the
    // exponent from the rounded scientific form.
    let sci = format!("{x:.8e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..]
        .parse()
        .expect("integer exponent");
    let decimals = (8 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

pub fn trace_csv(trace: &Trace) -> String {
    let mut out = String::with_capacity(trace.rows.len() * (trace.columns.len() + 1) * 12);
    out.push_str("t_s");
    for c in &trace.columns {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (t, row) in trace.times.iter().zip(&trace.rows) {
        out.push_str(&fmt_sig9(*t));
        for v in row {
            out.push(',');
            out.push_str(&fmt_sig9(*v));
        }
        out.push('\n');
    }
    out
}

/// Parses a trace CSV written by [`trace_csv`].
pub fn parse_trace_csv(text: &str) -> Result<Trace> {
    let mut lines = text.lines();
    let header = lines.next().context("empty trace")?;
    let mut cols = header.split(',');
    anyhow::ensure!(cols.next() == Some("t_s"), "trace must start with t_s");
    let columns: Vec<String> = cols.map(str::to_string).collect();
    let mut times = Vec::new();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let values: Vec<f64> = line
            .split(',')
            .map(|v| v.parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("trace row {}", i + 1))?;
        anyhow::ensure!(values.len() == columns.len() + 1, "trace row {} has wrong width", i + 1);
        times.push(values[0]);
        rows.push(values[1..].to_vec());
    }
    Ok(Trace { columns, times, rows })
}

pub fn metrics_json(metrics: &RunMetrics) -> String {
    let mut s = serde_json::to_string_pretty(metrics).expect("metrics serialize");
    s.push('\n');
    s
}

/// Writes `contents` to `path` through a sibling temporary file, so the
/// target is either absent, the old version, or complete.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .with_context(|| format!("{} is not a file path", path.display()))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, contents).with_context(|| format!("cannot write {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Writes every output of a run into `dir` and returns the written paths.
pub fn emit_outputs(out: &RunOutput, dir: &Path, charts: bool) -> Result<Vec<PathBuf>> {
    // Everything is rendered before the first byte hits the disk.
    let metrics = metrics_json(&out.metrics);
    let trace = trace_csv(&out.trace);
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let mut written = Vec::new();
    let path = dir.join(TRACE_FILE);
    write_atomic(&path, trace.as_bytes())?;
    written.push(path);
    if let Some(dump) = &out.latency_dump {
        let path = dir.join(LATENCY_FILE);
        write_atomic(&path, dump.as_bytes())?;
        written.push(path);
    }
    if charts {
        let path = dir.join(FREQUENCY_CHART);
        frequency_chart(&out.trace, &path)?;
        written.push(path);
        if !out.metrics.links.is_empty() {
            let path = dir.join(LATENCY_CHART);
            latency_chart(&out.metrics, &path)?;
            written.push(path);
        }
    }
    let path = dir.join(METRICS_FILE);
    write_atomic(&path, metrics.as_bytes())?;
    written.push(path);
    Ok(written)
}

fn chart_error<E: std::fmt::Display>(e: E) -> anyhow::Error {
    anyhow::anyhow!("chart rendering failed: {e}")
}

/// Frequency of every DG against time.
pub fn frequency_chart(trace: &Trace, path: &Path) -> Result<()> {
    let freqs = trace.frequencies();
    let names: Vec<&String> = trace.columns.iter().filter(|c| c.starts_with("f_")).collect();
    let finite = freqs.iter().flatten().copied().filter(|f| f.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), f| (a.min(f), b.max(f)));
    let (lo, hi) = if lo < hi { (lo, hi) } else { (lo - 0.05, lo + 0.05) };
    let pad = 0.05 * (hi - lo);
    let t_end = trace.times.last().copied().unwrap_or(1.0);

    let root = SVGBackend::new(path, (960, 540)).into_drawing_area();
    root.fill(&WHITE).map_err(chart_error)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("DG frequency", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(0.0..t_end, (lo - pad)..(hi + pad))
        .map_err(chart_error)?;
    chart
        .configure_mesh()
        .x_desc("t [s]")
        .y_desc("f [Hz]")
        .draw()
        .map_err(chart_error)?;
    for (k, name) in names.iter().enumerate() {
        let color = Palette99::pick(k).to_rgba();
        chart
            .draw_series(LineSeries::new(
                trace.times.iter().zip(&freqs).map(|(t, f)| (*t, f[k])),
                color,
            ))
            .map_err(chart_error)?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(chart_error)?;
    root.present().map_err(chart_error)?;
    Ok(())
}

/// Box plot of delivered latency per link, in milliseconds.
pub fn latency_chart(metrics: &RunMetrics, path: &Path) -> Result<()> {
    let links = &metrics.links;
    let top = links.iter().map(|l| l.max * 1e3).fold(0.0, f64::max).max(1e-3) * 1.1;
    let root = SVGBackend::new(path, (960, 540)).into_drawing_area();
    root.fill(&WHITE).map_err(chart_error)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("Link latency ({})", metrics.network), ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(-0.5..(links.len() as f64 - 0.5), 0.0..top)
        .map_err(chart_error)?;
    let labels: Vec<String> = links.iter().map(|l| l.link.clone()).collect();
    chart
        .configure_mesh()
        .x_labels(links.len())
        .x_label_formatter(&|x| {
            let k = x.round();
            if (x - k).abs() < 1e-6 && k >= 0.0 {
                labels.get(k as usize).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .y_desc("latency [ms]")
        .draw()
        .map_err(chart_error)?;
    for (k, l) in links.iter().enumerate() {
        let x = k as f64;
        let ms = |v: f64| v * 1e3;
        chart
            .draw_series(std::iter::once(Rectangle::new(
                [(x - 0.3, ms(l.q1)), (x + 0.3, ms(l.q3))],
                BLUE.mix(0.3).filled(),
            )))
            .map_err(chart_error)?;
        for (a, b) in [
            ((x - 0.3, ms(l.median)), (x + 0.3, ms(l.median))),
            ((x, ms(l.min)), (x, ms(l.q1))),
            ((x, ms(l.q3)), (x, ms(l.max))),
        ] {
            chart.draw_series(LineSeries::new([a, b], BLACK)).map_err(chart_error)?;
        }
    }
    root.present().map_err(chart_error)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_sig9(50.0), "50.0000000");
        assert_eq!(fmt_sig9(49.8000000012), "49.8000000");
        assert_eq!(fmt_sig9(49.80000012), "49.8000001");
        assert_eq!(fmt_sig9(0.001), "0.00100000000");
        assert_eq!(fmt_sig9(1.23456789012e-7), "0.000000123456789");
        assert_eq!(fmt_sig9(-12345.6789012), "-12345.6789");
        assert_eq!(fmt_sig9(123456789012.0), "123456789012");
        assert_eq!(fmt_sig9(9.999999999), "10.0000000");
        assert_eq!(fmt_sig9(-1e-30), "-0.00000000000000000000000000000100000000");
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(-0.0), "0");
    }

    #[test]
    fn csv_round_trip_keeps_nine_digits() {
        let trace = Trace {
            columns: vec!["f_1".into(), "pe_1".into()],
            times: vec![0.0, 0.01],
            rows: vec![vec![49.8, 20000.0], vec![49.80012345678, -1.5e-3]],
        };
        let text = trace_csv(&trace);
        assert_eq!(
            text,
            "t_s,f_1,pe_1\n0,49.8000000,20000.0000\n0.0100000000,49.8001235,-0.00150000000\n"
        );
        let back = parse_trace_csv(&text).unwrap();
        assert_eq!(back.columns, trace.columns);
        assert_eq!(back.rows[1][0], 49.8001235);
    }

    #[test]
    fn unwritable_directory_fails_before_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let err = write_atomic(&blocker.join("metrics.json"), b"{}");
        assert!(err.is_err());
    }
}
