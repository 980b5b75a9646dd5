use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{AnalyzerError, MetricsReport, Thresholds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    BelowFair,
    Fair,
    Good,
}

impl Verdict {
    pub fn of(value: f64, fair: f64, good: f64) -> Self {
        if value >= good {
            Verdict::Good
        } else if value >= fair {
            Verdict::Fair
        } else {
            Verdict::BelowFair
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::BelowFair => "below fair",
            Verdict::Fair => "fair",
            Verdict::Good => "good",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Percent,
    Ratio,
}

struct Row {
    metric: String,
    format: Format,
    values: Vec<Option<f64>>,
    fair: Option<f64>,
    good: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Comparison {
    pub text: String,
    pub csv: String,
}

/// Side-by-side table of per-condition metrics with threshold columns.
/// The text form renders rates as percentages with one decimal; the CSV
/// holds raw numbers, with empty cells for undefined values.
pub fn compare_conditions(
    reports: &IndexMap<String, MetricsReport>,
    thresholds: &Thresholds,
) -> Result<Comparison, AnalyzerError> {
    if reports.is_empty() {
        return Err(AnalyzerError::NoReports);
    }
    let col = |f: &dyn Fn(&MetricsReport) -> Option<f64>| reports.values().map(f).collect::<Vec<_>>();
    let mut rows = vec![
        Row {
            metric: "%CR".into(),
            format: Format::Percent,
            values: col(&|r| r.miti.pct_cr),
            fair: Some(thresholds.pct_cr_fair),
            good: Some(thresholds.pct_cr_good),
        },
        Row {
            metric: "R:Q".into(),
            format: Format::Ratio,
            values: col(&|r| r.miti.r_to_q),
            fair: Some(thresholds.r_to_q_fair),
            good: Some(thresholds.r_to_q_good),
        },
        Row {
            metric: "%MI Non-Adherent".into(),
            format: Format::Percent,
            values: col(&|r| r.miti.pct_mi_non_adherent),
            fair: None,
            good: None,
        },
        Row {
            metric: "Question rate".into(),
            format: Format::Percent,
            values: col(&|r| Some(r.questions.question_rate)),
            fair: None,
            good: None,
        },
        Row {
            metric: "ev elicit rate".into(),
            format: Format::Percent,
            values: col(&|r| Some(r.questions.ev_elicit_rate)),
            fair: None,
            good: None,
        },
        Row {
            metric: "pl elicit rate".into(),
            format: Format::Percent,
            values: col(&|r| Some(r.questions.pl_elicit_rate)),
            fair: None,
            good: None,
        },
    ];
    let buckets = reports.values().map(|r| r.buckets.len()).max().unwrap_or(0);
    for i in 0..buckets {
        for (name, pick) in [("ev", true), ("pl", false)] {
            rows.push(Row {
                metric: format!("bucket {} {name}", i + 1),
                format: Format::Percent,
                values: col(&|r| r.buckets.get(i).map(|b| if pick { b.ev_ratio } else { b.pl_ratio })),
                fair: None,
                good: None,
            });
        }
    }

    let conditions: Vec<&str> = reports.keys().map(String::as_str).collect();
    Ok(Comparison {
        text: render_text(&conditions, &rows, reports),
        csv: render_csv(&conditions, &rows),
    })
}

fn fmt_cell(v: Option<f64>, format: Format) -> String {
    match (v, format) {
        (None, _) => "-".into(),
        (Some(v), Format::Percent) => format!("{:.1}%", v * 100.0),
        (Some(v), Format::Ratio) => format!("{v:.2}"),
    }
}

fn render_text(conditions: &[&str], rows: &[Row], reports: &IndexMap<String, MetricsReport>) -> String {
    let mut header = vec!["metric".to_string()];
    header.extend(conditions.iter().map(|c| c.to_string()));
    header.push("fair".into());
    header.push("good".into());
    let mut table = vec![header];
    for r in rows {
        let mut line = vec![r.metric.clone()];
        line.extend(r.values.iter().map(|v| fmt_cell(*v, r.format)));
        line.push(r.fair.map_or(String::new(), |v| fmt_cell(Some(v), r.format)));
        line.push(r.good.map_or(String::new(), |v| fmt_cell(Some(v), r.format)));
        table.push(line);
    }
    for (name, pick) in [("%CR verdict", true), ("R:Q verdict", false)] {
        let mut line = vec![name.to_string()];
        line.extend(reports.values().map(|r| {
            let v = if pick { r.pct_cr_verdict } else { r.r_to_q_verdict };
            v.map_or("-".to_string(), |v| v.as_str().to_string())
        }));
        line.push(String::new());
        line.push(String::new());
        table.push(line);
    }

    let widths: Vec<usize> = (0..table[0].len())
        .map(|i| table.iter().map(|row| row[i].chars().count()).max().unwrap_or(0))
        .collect();
    table
        .iter()
        .map(|row| {
            row.iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (cell, w))| {
                    if i == 0 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        })
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

fn render_csv(conditions: &[&str], rows: &[Row]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["metric"];
    header.extend(conditions);
    header.extend(["fair", "good"]);
    w.write_record(&header).expect("in-memory write");
    for r in rows {
        let mut rec = vec![r.metric.clone()];
        rec.extend(r.values.iter().chain([&r.fair, &r.good]).map(|v| v.map_or(String::new(), |v| v.to_string())));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// Parses a comparison CSV back into `metric -> column -> value`.
pub fn read_comparison_csv(text: &str) -> Result<IndexMap<String, IndexMap<String, Option<f64>>>, AnalyzerError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| AnalyzerError::Io(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let mut out = IndexMap::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| AnalyzerError::Io(e.to_string()))?;
        let mut row = IndexMap::new();
        for (name, cell) in header.iter().zip(rec.iter()).skip(1) {
            let v = if cell.is_empty() {
                None
            } else {
                Some(cell.parse::<f64>().map_err(|e| AnalyzerError::Format {
                    path: "csv".into(),
                    line: n + 2,
                    reason: format!("{name}: {e}"),
                })?)
            };
            row.insert(name.clone(), v);
        }
        out.insert(rec.get(0).unwrap_or_default().to_string(), row);
    }
    Ok(out)
}
