//! Report tables: one CSV per result table plus plot-ready point clouds.

use std::fs;
use std::path::Path;

use anyhow::Result;
use respfuse_core::classify::metrics::ModalityReport;
use respfuse_core::pipeline::EvalReport;
use respfuse_core::PatternLabel;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct Table {
    pub name: &'static str,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn csv(&self) -> String {
        let mut out = self.header.join(",") + "\n";
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

fn rmse_table(name: &'static str, unit: &str, m: &ModalityReport) -> Table {
    let mut rows: Vec<Vec<String>> = m
        .patterns
        .iter()
        .map(|p| vec![p.label.display_name().to_string(), num(p.rmse), p.samples.to_string()])
        .collect();
    rows.push(vec!["Mean".into(), num(m.mean_rmse()), String::new()]);
    rows.push(vec!["Median".into(), num(m.median_rmse()), String::new()]);
    Table {
        name,
        header: vec!["pattern".into(), format!("rmse_{unit}"), "samples".into()],
        rows,
    }
}

pub fn tables(report: &EvalReport) -> Vec<Table> {
    let f = &report.features;
    let c = &report.classification;
    let mut out = vec![
        rmse_table("rmse_rr", "bpm", &f.rr),
        rmse_table("rmse_amp", "nu", &f.amp),
    ];
    out.push(Table {
        name: "outliers",
        header: vec!["pattern".into(), "rr_outliers".into(), "amp_outliers".into()],
        rows: f
            .rr
            .patterns
            .iter()
            .zip(&f.amp.patterns)
            .map(|(r, a)| vec![r.label.display_name().to_string(), r.outliers.to_string(), a.outliers.to_string()])
            .collect(),
    });
    out.push(Table {
        name: "accuracy",
        header: vec!["metric".into(), "value".into()],
        rows: vec![
            vec!["accuracy".into(), format!("{:.6}", c.accuracy())],
            vec!["samples".into(), c.confusion.total().to_string()],
            vec!["folds".into(), c.folds.to_string()],
        ],
    });
    let mut header = vec!["true".to_string()];
    header.extend(PatternLabel::ALL.iter().map(|l| l.display_name().to_string()));
    out.push(Table {
        name: "confusion",
        header,
        rows: PatternLabel::ALL
            .iter()
            .zip(&c.confusion.counts)
            .map(|(l, row)| {
                let mut r = vec![l.display_name().to_string()];
                r.extend(row.iter().map(|n| n.to_string()));
                r
            })
            .collect(),
    });
    let mut summary = Vec::new();
    for (name, m) in [("rr", &f.rr), ("amp", &f.amp)] {
        if let Some(ba) = &m.bland_altman {
            summary.push(vec![
                name.to_string(),
                format!("{:.6}", ba.bias),
                format!("{:.6}", ba.sd),
                format!("{:.6}", ba.lower),
                format!("{:.6}", ba.upper),
                ba.points.len().to_string(),
            ]);
        }
    }
    out.push(Table {
        name: "bland_altman_summary",
        header: ["modality", "bias", "sd", "lower", "upper", "samples"].map(String::from).to_vec(),
        rows: summary,
    });
    out.push(Table {
        name: "bland_altman",
        header: vec!["mean".into(), "difference".into()],
        rows: f
            .rr
            .bland_altman
            .iter()
            .flat_map(|ba| ba.points.iter().map(|(m, d)| vec![format!("{m:.6}"), format!("{d:.6}")]))
            .collect(),
    });
    out
}

pub fn emit_report(report: &EvalReport, dir: &Path, json: bool) -> Result<()> {
    let tables = tables(report);
    if json {
        fs::write(dir.join("tables.json"), serde_json::to_string_pretty(&tables)? + "\n")?;
    } else {
        for t in &tables {
            fs::write(dir.join(format!("{}.csv", t.name)), t.csv())?;
        }
    }
    Ok(())
}
