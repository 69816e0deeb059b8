//! Rendering evaluation results as JSON, CSV and markdown, plus plot data.
//!
//! Every number is printed in its shortest round-trip decimal form, so
//! renders are byte-stable across platforms and each format parses back to
//! the exact `f64` it was given.

use std::fmt::Write as _;
use std::str::FromStr;

use attrdiv_core::divergence::{rank_worst, DivergenceKind, DivergenceReport};
use attrdiv_core::synth::PlotPoint;
use attrdiv_core::ClassificationResult;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rows shown in the worst-key tables.
pub const WORST_K: usize = 3;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unsupported format {0:?} (expected json, csv or markdown)")]
    UnsupportedFormat(String),
    #[error("non-finite value in plot row {index}")]
    NonFiniteValue { index: usize },
    #[error("invalid bundle: {0}")]
    InvalidBundle(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl ReportError {
    pub fn code(&self) -> &'static str {
        match self {
            ReportError::UnsupportedFormat(_) => "UnsupportedFormat",
            ReportError::NonFiniteValue { .. } => "NonFiniteValue",
            ReportError::InvalidBundle(_) => "InvalidBundle",
            ReportError::Csv(_) => "IoFailure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
    Markdown,
}

impl FromStr for Format {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "markdown" | "md" => Ok(Format::Markdown),
            _ => Err(ReportError::UnsupportedFormat(s.to_string())),
        }
    }
}

/// Descriptive labels carried alongside the numbers.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleLabels {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    /// Left empty unless supplied, so that reruns stay byte-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    pub tool_version: String,
}

impl BundleLabels {
    pub fn current() -> Self {
        Self { tool_version: env!("CARGO_PKG_VERSION").to_string(), ..Self::default() }
    }
}

/// Everything one evaluation produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationBundle {
    pub labels: BundleLabels,
    pub sad: DivergenceReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pad: Option<DivergenceReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nway: Option<DivergenceReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<ClassificationResult>,
}

impl EvaluationBundle {
    pub fn new(labels: BundleLabels, sad: DivergenceReport) -> Self {
        Self { labels, sad, pad: None, nway: None, classification: None }
    }

    /// Checks report kinds and that every report covers the same attributes.
    pub fn validate(&self) -> Result<(), ReportError> {
        let bad = |m: String| Err(ReportError::InvalidBundle(m));
        if self.sad.kind != DivergenceKind::Sad {
            return bad(format!("sad report has kind {}", self.sad.kind.label()));
        }
        let attrs: Vec<&str> = self.sad.attributes().collect();
        let covers = |r: &DivergenceReport| {
            let mut seen: Vec<&str> = r.attributes().collect();
            seen.sort_unstable();
            seen.dedup();
            let mut want = attrs.clone();
            want.sort_unstable();
            seen == want
        };
        if let Some(p) = &self.pad {
            if p.kind != DivergenceKind::Pad {
                return bad(format!("pad report has kind {}", p.kind.label()));
            }
            if !covers(p) {
                return bad("pad report covers different attributes".into());
            }
        }
        if let Some(r) = &self.nway {
            if !matches!(r.kind, DivergenceKind::NWay(_)) {
                return bad(format!("nway report has kind {}", r.kind.label()));
            }
            if !covers(r) {
                return bad("n-way report covers different attributes".into());
            }
        }
        if let Some(c) = &self.classification {
            let phrases: Vec<&str> = c.per_attribute.iter().map(|a| a.phrase.as_str()).collect();
            if phrases != attrs {
                return bad("classification covers different attributes".into());
            }
        }
        Ok(())
    }

    fn reports(&self) -> impl Iterator<Item = &DivergenceReport> {
        std::iter::once(&self.sad).chain(self.pad.as_ref()).chain(self.nway.as_ref())
    }
}

/// Shortest decimal string that parses back to `v`.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        // Collapse -0 so equal values print equally.
        return "0.0".into();
    }
    format!("{v:?}")
}

fn report_name(kind: DivergenceKind) -> String {
    match kind {
        DivergenceKind::Sad => "sad".into(),
        DivergenceKind::Pad => "pad".into(),
        DivergenceKind::NWay(k) => format!("nway{k}"),
    }
}

fn key_label(attrs: &[String]) -> String {
    attrs.join(" & ")
}

pub fn render_report(bundle: &EvaluationBundle, format: Format) -> Result<Vec<u8>, ReportError> {
    bundle.validate()?;
    match format {
        Format::Json => {
            let mut out = serde_json::to_vec_pretty(bundle).expect("bundle serializes");
            out.push(b'\n');
            Ok(out)
        }
        Format::Csv => render_csv(bundle),
        Format::Markdown => Ok(render_markdown(bundle).into_bytes()),
    }
}

/// One row per value: `report,metric,attributes,value,train_minus_generated`.
/// Multi-attribute keys join their names with `;`.
fn render_csv(bundle: &EvaluationBundle) -> Result<Vec<u8>, ReportError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["report", "metric", "attributes", "value", "train_minus_generated"])?;
    for r in bundle.reports() {
        let name = report_name(r.kind);
        w.write_record([name.as_str(), "total", "", &fmt_num(r.total), ""])?;
        for k in &r.per_key {
            let md = match (r.kind, k.attributes.as_slice()) {
                (DivergenceKind::Sad, [a]) => r.mean_diff(a).map(fmt_num).unwrap_or_default(),
                _ => String::new(),
            };
            w.write_record([name.as_str(), "kl", &k.attributes.join(";"), &fmt_num(k.kl), &md])?;
        }
    }
    if let Some(c) = &bundle.classification {
        for a in &c.per_attribute {
            w.write_record(["classification", "accuracy", &a.phrase, &fmt_num(a.accuracy), ""])?;
            w.write_record(["classification", "f1", &a.phrase, &fmt_num(a.f1), ""])?;
        }
        for (metric, v) in [("macro_accuracy", c.macro_accuracy), ("macro_f1", c.macro_f1), ("micro_f1", c.micro_f1)] {
            w.write_record(["classification", metric, "", &fmt_num(v), ""])?;
        }
    }
    w.into_inner().map_err(|e| ReportError::Csv(e.into_error().into()))
}

fn escape_md(s: &str) -> String {
    s.replace('|', "\\|")
}

/// Worst-key table for one report.
pub fn worst_table(report: &DivergenceReport, top: usize) -> String {
    let mut s = String::new();
    let ranked = rank_worst(report, top);
    if report.kind == DivergenceKind::Sad {
        s.push_str("| rank | attribute | KL | mean difference (train - generated) |\n");
        s.push_str("|---:|---|---:|---:|\n");
    } else {
        let what = if report.kind == DivergenceKind::Pad { "pair" } else { "tuple" };
        let _ = writeln!(s, "| rank | {what} | KL |");
        s.push_str("|---:|---|---:|\n");
    }
    for (i, r) in ranked.iter().enumerate() {
        let key = escape_md(&key_label(&r.attributes));
        match report.kind {
            DivergenceKind::Sad => {
                let md = r.mean_diff.map(fmt_num).unwrap_or_else(|| "-".into());
                let _ = writeln!(s, "| {} | {} | {} | {} |", i + 1, key, fmt_num(r.kl), md);
            }
            _ => {
                let _ = writeln!(s, "| {} | {} | {} |", i + 1, key, fmt_num(r.kl));
            }
        }
    }
    s
}

fn render_markdown(bundle: &EvaluationBundle) -> String {
    let mut s = String::from("# Attribute divergence report\n\n");
    let l = &bundle.labels;
    for (name, v) in [("model", &l.model), ("dataset", &l.dataset), ("timestamp", &l.timestamp)] {
        if let Some(v) = v {
            let _ = writeln!(s, "- {name}: {v}");
        }
    }
    let _ = writeln!(s, "- tool version: {}", l.tool_version);
    let c = &bundle.sad.config;
    let _ = writeln!(s, "- samples: train {}, generated {}", c.n_x, c.n_y);
    let _ = writeln!(s, "- bandwidth: {}, KL floor {}", c.bandwidth_rule, fmt_num(c.kl_floor));
    if let Some(cap) = c.max_samples {
        let _ = writeln!(s, "- subsampled to {cap} rows (seed {})", c.subsample_seed);
    }

    s.push_str("\n## Summary\n\n| metric | value | keys | grid points per axis |\n|---|---:|---:|---:|\n");
    for r in bundle.reports() {
        let _ = writeln!(s, "| {} | {} | {} | {} |", r.kind.label(), fmt_num(r.total), r.per_key.len(), r.config.resolution);
    }

    let _ = write!(s, "\n## Worst {} SaD attributes\n\n", WORST_K);
    s.push_str(&worst_table(&bundle.sad, WORST_K));
    if let Some(p) = &bundle.pad {
        let _ = write!(s, "\n## Worst {} PaD pairs\n\n", WORST_K);
        s.push_str(&worst_table(p, WORST_K));
    }
    if let Some(r) = &bundle.nway {
        let _ = write!(s, "\n## Worst {} {} tuples\n\n", WORST_K, r.kind.label());
        s.push_str(&worst_table(r, WORST_K));
    }
    if let Some(c) = &bundle.classification {
        s.push_str("\n## Top-k classification\n\n| attribute | accuracy | F1 |\n|---|---:|---:|\n");
        for a in &c.per_attribute {
            let _ = writeln!(s, "| {} | {} | {} |", escape_md(&a.phrase), fmt_num(a.accuracy), fmt_num(a.f1));
        }
        let _ = writeln!(
            s,
            "\nmacro accuracy {}, macro F1 {}, micro F1 {}",
            fmt_num(c.macro_accuracy),
            fmt_num(c.macro_f1),
            fmt_num(c.micro_f1)
        );
    }
    let warnings: Vec<&String> = bundle.reports().flat_map(|r| &r.warnings).collect();
    if !warnings.is_empty() {
        s.push_str("\n## Warnings\n\n");
        for w in warnings {
            let _ = writeln!(s, "- {w}");
        }
    }
    s
}

/// `series,x,y` CSV, rows in input order.
pub fn emit_plot_data(curve: &[PlotPoint]) -> Result<Vec<u8>, ReportError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["series", "x", "y"])?;
    for (i, p) in curve.iter().enumerate() {
        if !p.x.is_finite() || !p.y.is_finite() {
            return Err(ReportError::NonFiniteValue { index: i });
        }
        w.write_record([p.series.as_str(), &fmt_num(p.x), &fmt_num(p.y)])?;
    }
    w.into_inner().map_err(|e| ReportError::Csv(e.into_error().into()))
}
