//! JSON and CSV renderings of reports.
//!
//! CSV columns: `axis,layer,metric,scale,lo,point,hi`. Every layer emits the
//! same metric rows, so a layerwise table has `layers × metrics` rows. The
//! config echo is carried in leading `#` comment lines.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::bootstrap::BootstrapInterval;
use crate::error::{Error, Result};
use crate::metrics::{NormStats, Normalized};
use crate::quant::Verdict;
use crate::report::{ConfigEcho, DiagnosticsReport, LayerReport, SweepReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(Error::InvalidArgument(format!("unknown format {other:?}"))),
        }
    }
}

pub const CSV_HEADER: &str = "axis,layer,metric,scale,lo,point,hi";

pub fn to_json<T: Serialize>(report: &T) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("reports hold finite numbers");
    s.push('\n');
    s
}

struct Table {
    out: String,
}

impl Table {
    fn new(tool: &str, version: &str, config: &ConfigEcho) -> Self {
        let mut out = String::new();
        let _ = writeln!(out, "# tool: {tool} {version}");
        let _ = writeln!(
            out,
            "# config: {}",
            serde_json::to_string(config).expect("plain data")
        );
        out.push_str(CSV_HEADER);
        out.push('\n');
        Self { out }
    }

    fn row(&mut self, axis: &str, layer: usize, metric: &str, scale: &str, point: f64, ci: Option<(f64, f64)>) {
        let (lo, hi) = ci.map_or((String::new(), String::new()), |(l, h)| (l.to_string(), h.to_string()));
        let _ = writeln!(
            self.out,
            "{},{layer},{metric},{scale},{lo},{point},{hi}",
            quote(axis)
        );
    }

    fn normalized(&mut self, axis: &str, layer: usize, metric: &str, v: &Normalized, norms: &NormStats, ci: Option<&BootstrapInterval>) {
        let scaled = |by: f64| ci.map(|c| (c.lo / by, c.hi / by));
        self.row(axis, layer, metric, "raw", v.raw, ci.map(|c| (c.lo, c.hi)));
        self.row(axis, layer, metric, "mean", v.by_mean, scaled(norms.mean));
        self.row(axis, layer, metric, "median", v.by_median, scaled(norms.median));
        self.row(axis, layer, metric, "trimmed", v.by_trimmed, scaled(norms.trimmed));
    }

    fn layer(&mut self, axis: &str, rep: &LayerReport) {
        let d = &rep.diagnostics;
        let l = d.layer;
        self.row(axis, l, "mean_norm", "raw", d.norms.mean, None);
        self.row(axis, l, "median_norm", "raw", d.norms.median, None);
        self.row(axis, l, "trimmed_norm", "raw", d.norms.trimmed, None);
        self.normalized(axis, l, "margin_q", &d.margin_q, &d.norms, rep.margin_ci.as_ref());
        self.normalized(axis, l, "colip_q", &d.colip_q, &d.norms, rep.colip_ci.as_ref());
        self.row(axis, l, "min_margin", "raw", d.min_margin, None);
        self.row(axis, l, "collisions", "raw", d.collisions as f64, None);
        if let Some(s) = &rep.near_collisions {
            for (e, f) in s.epsilons.iter().zip(&s.fractions) {
                self.row(axis, l, &format!("near_collision@{e:e}"), "fraction", *f, None);
            }
        }
    }
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn diagnostics_csv(report: &DiagnosticsReport) -> String {
    let mut t = Table::new(&report.tool, &report.version, &report.config);
    for l in &report.layers {
        t.layer("fp", l);
    }
    for section in report.quantization.iter().flatten() {
        let axis = format!("b{}", section.bits);
        for q in &section.layers {
            let d = &q.quantized;
            let l = q.layer;
            t.row(&axis, l, "range", "raw", q.spec.range, None);
            t.row(&axis, l, "step", "raw", q.spec.step, None);
            t.row(&axis, l, "safe", "raw", if q.verdict == Verdict::Safe { 1.0 } else { 0.0 }, None);
            t.row(&axis, l, "b_crit", "raw", q.b_crit.map_or(f64::NAN, f64::from), None);
            t.row(&axis, l, "mean_norm", "raw", d.norms.mean, None);
            t.normalized(&axis, l, "margin_q", &d.margin_q, &d.norms, None);
            t.normalized(&axis, l, "colip_q", &d.colip_q, &d.norms, None);
            t.row(&axis, l, "min_margin", "raw", d.min_margin, None);
            t.row(&axis, l, "collisions", "raw", d.collisions as f64, None);
            if let Some(s) = &q.near_collisions {
                for (e, f) in s.epsilons.iter().zip(&s.fractions) {
                    t.row(&axis, l, &format!("near_collision@{e:e}"), "fraction", *f, None);
                }
            }
        }
    }
    t.out
}

pub fn sweep_csv(report: &SweepReport) -> String {
    let mut t = Table::new(&report.tool, &report.version, &report.config);
    for e in &report.entries {
        t.layer(&e.axis, &e.layer);
    }
    t.out
}

pub enum AnyReport<'a> {
    Diagnostics(&'a DiagnosticsReport),
    Sweep(&'a SweepReport),
}

pub fn render(report: AnyReport<'_>, format: Format) -> String {
    match (report, format) {
        (AnyReport::Diagnostics(r), Format::Json) => to_json(r),
        (AnyReport::Sweep(r), Format::Json) => to_json(r),
        (AnyReport::Diagnostics(r), Format::Csv) => diagnostics_csv(r),
        (AnyReport::Sweep(r), Format::Csv) => sweep_csv(r),
    }
}

pub fn emit_report(report: AnyReport<'_>, format: Format, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render(report, format)).map_err(|e| Error::io(path, e))
}
