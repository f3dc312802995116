//! Report rendering and aggregation: per-report text tables, the cross-stage
//! comparison table, and the stage-trend CSV.
//!
//! Displayed EFF is always recomputed from the displayed (2-decimal) Acc and
//! Tokens columns and truncated toward zero at two decimals, so the printed
//! columns stay arithmetically consistent with each other.

use std::path::Path;

use crate::codec::PromptMode;
use crate::curriculum::{report_json_path, StageId, MODE_ORDER};
use crate::error::{Error, Result};
use crate::eval::{eff, trunc2, EvalReport};

/// Round to the displayed precision used by Acc and Tokens columns.
fn disp2(x: f64) -> f64 {
    format!("{x:.2}").parse().expect("formatted float parses")
}

/// One comparison-table row, in display precision.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub stage: StageId,
    pub mode: PromptMode,
    pub acc: f64,
    pub tokens: f64,
    pub eff: Option<f64>,
}

impl ReportRow {
    pub fn from_report(stage: StageId, mode: PromptMode, report: &EvalReport) -> ReportRow {
        let acc = disp2(report.acc);
        let tokens = disp2(report.mean_tokens);
        ReportRow { stage, mode, acc, tokens, eff: eff(acc, tokens).map(trunc2) }
    }
}

fn fmt_eff(eff: Option<f64>) -> String {
    match eff {
        Some(e) => format!("{e:.2}"),
        None => "-".to_string(),
    }
}

/// Human-readable rendering of one evaluation report.
pub fn render_report_text(title: &str, report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("== {title} ==\n"));
    out.push_str(&format!(
        "{:<10} {:>8} {:>10} {:>8}\n",
        "Mode", "Acc", "Tokens", "EFF"
    ));
    let acc = disp2(report.acc);
    let tokens = disp2(report.mean_tokens);
    out.push_str(&format!(
        "{:<10} {:>8.2} {:>10.2} {:>8}\n",
        report.mode.name(),
        acc,
        tokens,
        fmt_eff(eff(acc, tokens).map(trunc2))
    ));
    out.push_str("\nper difficulty:\n");
    out.push_str(&format!("{:>6} {:>6} {:>8} {:>10}\n", "level", "n", "acc", "tokens"));
    for d in &report.per_difficulty {
        out.push_str(&format!(
            "{:>6} {:>6} {:>8.2} {:>10.2}\n",
            d.level, d.count, d.acc, d.mean_tokens
        ));
    }
    let (ok, bad) = report.len_by_correctness;
    out.push_str(&format!(
        "\nmean length: correct {} / wrong {}\n",
        ok.map(|x| format!("{x:.1}")).unwrap_or_else(|| "-".into()),
        bad.map(|x| format!("{x:.1}")).unwrap_or_else(|| "-".into()),
    ));
    out.push_str("\nsteps per phase:\n");
    for (phase, count) in &report.step_histogram {
        out.push_str(&format!("{:>20} {count}\n", phase.as_str()));
    }
    out
}

/// Collect every (stage, mode) report found under a report root.
pub fn gather_rows(report_root: &Path) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for stage in [StageId::Sft, StageId::Rl1, StageId::Rl2] {
        for mode in MODE_ORDER {
            let path = report_json_path(report_root, stage, mode);
            if !path.exists() {
                continue;
            }
            let report: EvalReport = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
            rows.push(ReportRow::from_report(stage, mode, &report));
        }
    }
    if rows.is_empty() {
        return Err(Error::MissingArtifact {
            path: report_root.to_path_buf(),
            producer: "run".to_string(),
        });
    }
    Ok(rows)
}

/// Acc/Tokens/EFF comparison across stages and modes.
pub fn comparison_table(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<6} {:<10} {:>8} {:>10} {:>8}\n",
        "Stage", "Mode", "Acc", "Tokens", "EFF"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:<6} {:<10} {:>8.2} {:>10.2} {:>8}\n",
            r.stage.as_str(),
            r.mode.name(),
            r.acc,
            r.tokens,
            fmt_eff(r.eff)
        ));
    }
    out
}

/// Stage-trend CSV: `stage,mode,acc,tokens,eff`.
pub fn trend_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("stage,mode,acc,tokens,eff\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.2},{:.2},{}\n",
            r.stage.as_str(),
            r.mode.name(),
            r.acc,
            r.tokens,
            fmt_eff(r.eff)
        ));
    }
    out
}

/// Parse a trend CSV back into rows (the round-trip oracle for `trend_csv`).
pub fn parse_trend_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::integrity("empty CSV"))?;
    if header != "stage,mode,acc,tokens,eff" {
        return Err(Error::integrity(format!("unexpected CSV header {header:?}")));
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::integrity(format!("bad CSV row {line:?}")));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::integrity(format!("bad number {s:?}")))
        };
        rows.push(ReportRow {
            stage: fields[0].parse()?,
            mode: fields[1].parse()?,
            acc: parse(fields[2])?,
            tokens: parse(fields[3])?,
            eff: if fields[4] == "-" { None } else { Some(parse(fields[4])?) },
        });
    }
    Ok(rows)
}
