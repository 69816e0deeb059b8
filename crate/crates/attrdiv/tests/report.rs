use attrdiv::report::{emit_plot_data, fmt_num, render_report, BundleLabels, EvaluationBundle, Format, ReportError};
use attrdiv_core::divergence::{pad, sad, ConfigSnapshot, DivergenceKind, DivergenceReport, KeyDivergence, MeanDiff};
use attrdiv_core::scoring::AttributeMetrics;
use attrdiv_core::synth::{gen_scores, injection_experiment, PlotPoint, SynthSpec};
use attrdiv_core::{ClassificationResult, DivergenceConfig};
use proptest::prelude::*;

fn snapshot() -> ConfigSnapshot {
    ConfigSnapshot {
        resolution: 512,
        bandwidth_rule: "scott".into(),
        kl_floor: 1e-12,
        n_x: 100,
        n_y: 120,
        max_samples: None,
        subsample_seed: 0,
    }
}

fn report(kind: DivergenceKind, keys: &[(&[&str], f64)]) -> DivergenceReport {
    let per_key: Vec<KeyDivergence> = keys
        .iter()
        .map(|(a, kl)| KeyDivergence { attributes: a.iter().map(|s| s.to_string()).collect(), kl: *kl })
        .collect();
    let total = per_key.iter().map(|k| k.kl).sum::<f64>() / per_key.len() as f64;
    let mean_diffs = (kind == DivergenceKind::Sad).then(|| {
        per_key
            .iter()
            .enumerate()
            .map(|(i, k)| MeanDiff { attribute: k.attributes[0].clone(), train_minus_generated: 0.5 - i as f64 })
            .collect()
    });
    let config = ConfigSnapshot { resolution: if kind == DivergenceKind::Sad { 512 } else { 128 }, ..snapshot() };
    DivergenceReport { kind, total, per_key, mean_diffs, config, warnings: vec![] }
}

fn bundle() -> EvaluationBundle {
    let mut b = EvaluationBundle::new(
        BundleLabels { model: Some("m|1".into()), dataset: Some("faces".into()), ..BundleLabels::current() },
        report(DivergenceKind::Sad, &[(&["a"], 0.1), (&["b"], 0.3), (&["c, d"], 1e-9), (&["e"], 0.2)]),
    );
    b.pad = Some(report(
        DivergenceKind::Pad,
        &[
            (&["a", "b"], 0.01),
            (&["a", "c, d"], 0.7),
            (&["a", "e"], 0.2),
            (&["b", "c, d"], 0.7),
            (&["b", "e"], 0.0),
            (&["c, d", "e"], 0.05),
        ],
    ));
    b
}

#[test]
fn markdown_lists_worst_first() {
    let md = String::from_utf8(render_report(&bundle(), Format::Markdown).unwrap()).unwrap();
    let sad_at = md.find("## Worst 3 SaD").unwrap();
    let pad_at = md.find("## Worst 3 PaD").unwrap();
    let sad_table = &md[sad_at..pad_at];
    let rows: Vec<&str> = sad_table.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| rank")).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("| 1 | b | 0.3 | -0.5 |"), "{}", rows[0]);
    assert!(rows[1].starts_with("| 2 | e | 0.2 | -2.5 |"), "{}", rows[1]);
    assert!(rows[2].starts_with("| 3 | a | 0.1 | 0.5 |"), "{}", rows[2]);
    let pad_rows: Vec<&str> =
        md[pad_at..].lines().filter(|l| l.starts_with("| ") && !l.starts_with("| rank")).take(3).collect();
    // Ties in KL fall back to key order.
    assert!(pad_rows[0].starts_with("| 1 | a & c, d | 0.7 |"));
    assert!(pad_rows[1].starts_with("| 2 | b & c, d | 0.7 |"));
    assert!(pad_rows[2].starts_with("| 3 | a & e | 0.2 |"));
    assert!(md.contains("- model: m|1"));
}

#[test]
fn two_attribute_sad_puts_larger_first() {
    let b = EvaluationBundle::new(BundleLabels::current(), report(DivergenceKind::Sad, &[(&["a"], 0.3), (&["b"], 0.1)]));
    let md = String::from_utf8(render_report(&b, Format::Markdown).unwrap()).unwrap();
    let a = md.find("| 1 | a |").unwrap();
    let b_at = md.find("| 2 | b |").unwrap();
    assert!(a < b_at);
}

#[test]
fn json_round_trips_exactly() {
    let x = gen_scores(&SynthSpec::standard(3, 800, 1)).unwrap();
    let y = gen_scores(&SynthSpec::standard(3, 700, 2).with_mean(1, 0.3)).unwrap();
    let cfg = DivergenceConfig::default();
    let mut b = EvaluationBundle::new(BundleLabels::current(), sad(&x, &y, &cfg).unwrap());
    b.pad = Some(pad(&x, &y, &cfg).unwrap());
    b.classification = Some(ClassificationResult {
        per_attribute: ["a0", "a1", "a2"]
            .iter()
            .map(|p| AttributeMetrics { phrase: p.to_string(), accuracy: 0.1 + 0.2, f1: 1.0 / 3.0 })
            .collect(),
        macro_accuracy: 0.3,
        macro_f1: 2.0 / 3.0,
        micro_f1: 0.7,
    });
    let json = render_report(&b, Format::Json).unwrap();
    let back: EvaluationBundle = serde_json::from_slice(&json).unwrap();
    assert_eq!(back, b);
    assert_eq!(render_report(&back, Format::Json).unwrap(), json);
}

#[test]
fn renders_are_deterministic() {
    let b = bundle();
    for f in [Format::Json, Format::Csv, Format::Markdown] {
        assert_eq!(render_report(&b, f).unwrap(), render_report(&b.clone(), f).unwrap());
    }
}

#[test]
fn csv_and_json_agree_on_every_number() {
    let b = bundle();
    let csv_text = String::from_utf8(render_report(&b, Format::Csv).unwrap()).unwrap();
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    assert_eq!(headers.iter().collect::<Vec<_>>(), ["report", "metric", "attributes", "value", "train_minus_generated"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    let json: serde_json::Value = serde_json::from_slice(&render_report(&b, Format::Json).unwrap()).unwrap();
    let mut checked = 0;
    for r in &rows {
        let (name, metric, attrs, value) = (&r[0], &r[1], &r[2], r[3].parse::<f64>().unwrap());
        let rep = &json[name];
        if metric == "total" {
            assert_eq!(value, rep["total"].as_f64().unwrap());
        } else {
            let key = rep["per_key"]
                .as_array()
                .unwrap()
                .iter()
                .find(|k| {
                    let a: Vec<&str> = k["attributes"].as_array().unwrap().iter().map(|s| s.as_str().unwrap()).collect();
                    a.join(";") == attrs
                })
                .unwrap();
            assert_eq!(value, key["kl"].as_f64().unwrap());
            if !r[4].is_empty() {
                let md = rep["mean_diffs"].as_array().unwrap().iter().find(|m| m["attribute"] == attrs).unwrap();
                assert_eq!(r[4].parse::<f64>().unwrap(), md["train_minus_generated"].as_f64().unwrap());
            }
        }
        checked += 1;
    }
    assert_eq!(checked, 2 + 4 + 6);
    assert!(csv_text.contains("\"c, d\""));
}

#[test]
fn mismatched_bundles_are_rejected() {
    let mut b = bundle();
    b.pad = Some(report(DivergenceKind::Pad, &[(&["a", "z"], 0.1)]));
    assert!(matches!(render_report(&b, Format::Json), Err(ReportError::InvalidBundle(_))));
    let mut b = bundle();
    b.pad = Some(b.sad.clone());
    assert!(matches!(render_report(&b, Format::Markdown), Err(ReportError::InvalidBundle(_))));
}

#[test]
fn format_names() {
    assert_eq!("json".parse::<Format>().unwrap(), Format::Json);
    assert_eq!("CSV".parse::<Format>().unwrap(), Format::Csv);
    assert_eq!("md".parse::<Format>().unwrap(), Format::Markdown);
    assert!(matches!("xml".parse::<Format>(), Err(ReportError::UnsupportedFormat(_))));
}

#[test]
fn plot_data_layout() {
    let csv = emit_plot_data(&[PlotPoint::new("sad", 0.0, 0.0), PlotPoint::new("sad", 0.1, 0.05)]).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap(), "series,x,y\nsad,0.0,0.0\nsad,0.1,0.05\n");
    assert_eq!(emit_plot_data(&[]).unwrap(), b"series,x,y\n");
    let bad = [PlotPoint::new("s", 0.0, 1.0), PlotPoint::new("s", f64::NAN, 1.0)];
    assert!(matches!(emit_plot_data(&bad), Err(ReportError::NonFiniteValue { index: 1 })));
    assert!(emit_plot_data(&[PlotPoint::new("s", 0.0, f64::INFINITY)]).is_err());
}

#[test]
fn injection_curve_plots_monotone() {
    let base = SynthSpec::standard(2, 4000, 5);
    let shifted = base.clone().with_mean(0, 1.5);
    let fr = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
    let curve = injection_experiment(&base, &shifted, &fr, &DivergenceConfig::default()).unwrap();
    let pts: Vec<PlotPoint> = curve.iter().map(|p| PlotPoint::new("sad", p.alpha, p.sad)).collect();
    let csv_text = String::from_utf8(emit_plot_data(&pts).unwrap()).unwrap();
    let ys: Vec<f64> = csv_text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(ys.len(), 6);
    assert!(ys.windows(2).all(|w| w[0] < w[1]), "{ys:?}");
}

proptest! {
    #[test]
    fn printed_numbers_round_trip(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        let s = fmt_num(v);
        prop_assert_eq!(s.parse::<f64>().unwrap(), if v == 0.0 { 0.0 } else { v });
    }
}
