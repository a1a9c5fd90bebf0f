//! Test-set metrics and summary reports.
//!
//! Per test set: character error rate (CER, percent), the fraction of
//! hypotheses altered by error correction (%EC, an overcorrection proxy) and
//! the fraction of altered hypotheses whose acceptability score improved
//! (%LA, undefined when nothing was altered; score ties do not count as
//! improvements). Summaries macro-average the per-test rows and report the
//! fraction of test sets whose CER is strictly better than the original
//! ASR output.

use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::align::corpus_cer;
use crate::error::{Error, Result};
use crate::lm::AcceptabilityScorer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSetMetrics {
    pub name: String,
    pub n_utterances: usize,
    /// CER percent; may exceed 100.
    pub cer: f64,
    /// Percent of hypotheses altered after EC.
    pub pct_ec: f64,
    /// Percent of altered hypotheses with improved acceptability;
    /// None iff nothing was altered.
    pub pct_la: Option<f64>,
}

/// Compute one test set's metrics from hypotheses before and after EC and
/// the gold references.
pub fn testset_metrics(
    name: &str,
    before: &[String],
    after: &[String],
    refs: &[String],
    scorer: &dyn AcceptabilityScorer,
) -> Result<TestSetMetrics> {
    if before.len() != after.len() || after.len() != refs.len() {
        return Err(Error::Shape(format!(
            "testset {name}: before/after/refs lengths {}/{}/{}",
            before.len(),
            after.len(),
            refs.len()
        )));
    }
    let n = refs.len();
    let cer = corpus_cer(after, refs)? * 100.0;
    let altered: Vec<usize> = (0..n).filter(|&i| after[i] != before[i]).collect();
    let pct_ec = altered.len() as f64 / n as f64 * 100.0;
    let pct_la = if altered.is_empty() {
        None
    } else {
        let improved = altered
            .iter()
            .filter(|&&i| scorer.acceptability(&after[i]) > scorer.acceptability(&before[i]))
            .count();
        Some(improved as f64 / altered.len() as f64 * 100.0)
    };
    Ok(TestSetMetrics { name: name.to_string(), n_utterances: n, cer, pct_ec, pct_la })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub variant: String,
    pub rows: Vec<TestSetMetrics>,
    /// Original (pre-EC) CER percent per test set, aligned with `rows`.
    pub orig_cers: Vec<f64>,
    pub avg_cer: f64,
    pub avg_pct_ec: f64,
    /// Unweighted mean over the rows where %LA is defined; None when no row
    /// defines it.
    pub avg_pct_la: Option<f64>,
    /// Number of rows included in the %LA mean.
    pub pct_la_defined: usize,
    /// Percent of test sets where CER is strictly below the original.
    pub below_orig_pct: f64,
}

/// Macro-average rows and compare against the original CERs.
pub fn aggregate_summary(
    variant: &str,
    rows: Vec<TestSetMetrics>,
    orig_cers: &[f64],
) -> Result<SummaryReport> {
    if rows.is_empty() {
        return Err(Error::UndefinedMetric("aggregate_summary: no rows".to_string()));
    }
    if rows.len() != orig_cers.len() {
        return Err(Error::Shape(format!(
            "aggregate_summary: {} rows vs {} original CERs",
            rows.len(),
            orig_cers.len()
        )));
    }
    let n = rows.len() as f64;
    let avg_cer = rows.iter().map(|r| r.cer).sum::<f64>() / n;
    let avg_pct_ec = rows.iter().map(|r| r.pct_ec).sum::<f64>() / n;
    let defined: Vec<f64> = rows.iter().filter_map(|r| r.pct_la).collect();
    let avg_pct_la = if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    };
    let below = rows.iter().zip(orig_cers).filter(|(r, &o)| r.cer < o).count();
    Ok(SummaryReport {
        variant: variant.to_string(),
        orig_cers: orig_cers.to_vec(),
        avg_cer,
        avg_pct_ec,
        avg_pct_la,
        pct_la_defined: defined.len(),
        below_orig_pct: below as f64 / n * 100.0,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<ReportFormat> {
        match s {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown report format: {other}"))),
        }
    }
}

fn fmt_cer(v: f64) -> String {
    format!("{v:.2}")
}

fn fmt_pct(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.1}"),
        None => "-".to_string(),
    }
}

/// Render a report deterministically. CER cells carry two decimals, %EC and
/// %LA one; undefined %LA renders as "-".
pub fn render_report(report: &SummaryReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_string_pretty(report).expect("report serialization");
            out.push('\n');
            out
        }
        ReportFormat::Markdown => {
            let mut out = format!("Variant: {}\n\n", report.variant);
            out.push_str("| Test | Orig. CER | CER | %EC | %LA |\n");
            out.push_str("|---|---|---|---|---|\n");
            for (row, &orig) in report.rows.iter().zip(&report.orig_cers) {
                out.push_str(&format!(
                    "| {} | {} | {} | {} | {} |\n",
                    row.name,
                    fmt_cer(orig),
                    fmt_cer(row.cer),
                    fmt_pct(Some(row.pct_ec)),
                    fmt_pct(row.pct_la),
                ));
            }
            let avg_orig = report.orig_cers.iter().sum::<f64>() / report.orig_cers.len() as f64;
            out.push_str(&format!(
                "| Avg. | {} | {} | {} | {} |\n",
                fmt_cer(avg_orig),
                fmt_cer(report.avg_cer),
                fmt_pct(Some(report.avg_pct_ec)),
                fmt_pct(report.avg_pct_la),
            ));
            out.push_str(&format!(
                "| <Orig. | - | {} | - | - |\n",
                fmt_pct(Some(report.below_orig_pct)),
            ));
            out
        }
        ReportFormat::Csv => {
            let mut out = String::from("test,orig_cer,cer,pct_ec,pct_la\n");
            for (row, &orig) in report.rows.iter().zip(&report.orig_cers) {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    row.name,
                    fmt_cer(orig),
                    fmt_cer(row.cer),
                    fmt_pct(Some(row.pct_ec)),
                    fmt_pct(row.pct_la),
                ));
            }
            let avg_orig = report.orig_cers.iter().sum::<f64>() / report.orig_cers.len() as f64;
            out.push_str(&format!(
                "Avg.,{},{},{},{}\n",
                fmt_cer(avg_orig),
                fmt_cer(report.avg_cer),
                fmt_pct(Some(report.avg_pct_ec)),
                fmt_pct(report.avg_pct_la),
            ));
            out.push_str(&format!("<Orig.,-,{},-,-\n", fmt_pct(Some(report.below_orig_pct))));
            out
        }
    }
}

/// One evaluation record: hypothesis before EC, after EC, and the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTriplet {
    pub id: String,
    pub before: String,
    pub after: String,
    #[serde(rename = "ref")]
    pub reference: String,
}

/// Read one test set's triplet JSONL.
pub fn read_triplets(reader: impl BufRead) -> Result<Vec<EvalTriplet>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let triplet: EvalTriplet = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(triplet);
    }
    Ok(out)
}
