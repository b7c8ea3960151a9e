//! Per-cycle tables in CSV and Markdown, plus long-form plot data.
//!
//! The CSV leads with the display columns and then carries every
//! [`CycleStats`] field at full precision, so [`parse_csv`] rebuilds the
//! stats exactly.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{AccuracySummary, CycleStats, DispositionCounts, Interval, Proportion};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no cycle statistics to report")]
    Empty,
    #[error("unknown report format {0:?} (expected csv or md)")]
    UnknownFormat(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: {message}")]
    BadRow { row: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(ReportError::UnknownFormat(other.to_string())),
        }
    }
}

fn threshold_label(stats: &[CycleStats]) -> String {
    let thr = stats.first().map_or(0.40, |s| s.threshold);
    format!("≥{}(%)", fmt_pct_trim(thr))
}

fn fmt_pct_trim(frac: f64) -> String {
    let s = format!("{:.2}", frac * 100.0);
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// One CSV row. Display columns first, then the raw fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CsvRow {
    #[serde(rename = "Cycle")]
    cycle: u32,
    #[serde(rename = "Valid(%)")]
    valid_pct: f64,
    #[serde(rename = "Best(%)")]
    best_pct: Option<f64>,
    #[serde(rename = "Mean(%)")]
    mean_pct: Option<f64>,
    #[serde(rename = "Above(%)")]
    above_pct: Option<f64>,
    #[serde(rename = "Unique")]
    unique: u64,
    #[serde(rename = "Total-train")]
    total_train: u64,
    threshold: f64,
    n_gen: u64,
    n_valid: u64,
    n_above_threshold: u64,
    n_selected: u64,
    n_invalid: u64,
    n_below_threshold: u64,
    n_near_duplicate: u64,
    n_accepted: u64,
    valid_rate: f64,
    valid_rate_lo: f64,
    valid_rate_hi: f64,
    best_acc: Option<f64>,
    mean_acc: Option<f64>,
    median_acc: Option<f64>,
    std_acc: Option<f64>,
    mean_acc_lo: Option<f64>,
    mean_acc_hi: Option<f64>,
    frac_above_threshold: Option<f64>,
    frac_above_lo: Option<f64>,
    frac_above_hi: Option<f64>,
    corpus_size_before: u64,
    corpus_size_after: u64,
}

impl From<&CycleStats> for CsvRow {
    fn from(s: &CycleStats) -> Self {
        let acc = s.accuracy.as_ref();
        let above = s.frac_above_threshold.as_ref();
        Self {
            cycle: s.cycle,
            valid_pct: s.valid_rate * 100.0,
            best_pct: acc.map(|a| a.best * 100.0),
            mean_pct: acc.map(|a| a.mean * 100.0),
            above_pct: above.map(|p| p.value * 100.0),
            unique: s.n_unique_accepted,
            total_train: s.corpus_size_before,
            threshold: s.threshold,
            n_gen: s.n_gen,
            n_valid: s.n_valid,
            n_above_threshold: s.n_above_threshold,
            n_selected: s.n_selected,
            n_invalid: s.dispositions.invalid,
            n_below_threshold: s.dispositions.below_threshold,
            n_near_duplicate: s.dispositions.near_duplicate,
            n_accepted: s.dispositions.accepted,
            valid_rate: s.valid_rate,
            valid_rate_lo: s.valid_rate_ci.lo,
            valid_rate_hi: s.valid_rate_ci.hi,
            best_acc: acc.map(|a| a.best),
            mean_acc: acc.map(|a| a.mean),
            median_acc: acc.map(|a| a.median),
            std_acc: acc.and_then(|a| a.std),
            mean_acc_lo: acc.and_then(|a| a.mean_ci.map(|c| c.lo)),
            mean_acc_hi: acc.and_then(|a| a.mean_ci.map(|c| c.hi)),
            frac_above_threshold: above.map(|p| p.value),
            frac_above_lo: above.map(|p| p.ci.lo),
            frac_above_hi: above.map(|p| p.ci.hi),
            corpus_size_before: s.corpus_size_before,
            corpus_size_after: s.corpus_size_after,
        }
    }
}

impl CsvRow {
    fn into_stats(self, row: usize) -> Result<CycleStats, ReportError> {
        let bad = |message: &str| ReportError::BadRow {
            row,
            message: message.to_string(),
        };
        let accuracy = match (self.best_acc, self.mean_acc, self.median_acc) {
            (Some(best), Some(mean), Some(median)) => Some(AccuracySummary {
                n: self.n_valid,
                best,
                mean,
                median,
                std: self.std_acc,
                mean_ci: match (self.mean_acc_lo, self.mean_acc_hi) {
                    (Some(lo), Some(hi)) => Some(Interval { lo, hi }),
                    (None, None) => None,
                    _ => return Err(bad("half-specified mean interval")),
                },
            }),
            (None, None, None) => None,
            _ => return Err(bad("partial accuracy summary")),
        };
        let frac_above_threshold = match (
            self.frac_above_threshold,
            self.frac_above_lo,
            self.frac_above_hi,
        ) {
            (Some(value), Some(lo), Some(hi)) => Some(Proportion {
                k: self.n_above_threshold,
                n: self.n_valid,
                value,
                ci: Interval { lo, hi },
            }),
            (None, None, None) => None,
            _ => return Err(bad("partial above-threshold fraction")),
        };
        Ok(CycleStats {
            cycle: self.cycle,
            threshold: self.threshold,
            n_gen: self.n_gen,
            n_valid: self.n_valid,
            n_above_threshold: self.n_above_threshold,
            n_selected: self.n_selected,
            n_unique_accepted: self.unique,
            dispositions: DispositionCounts {
                invalid: self.n_invalid,
                below_threshold: self.n_below_threshold,
                near_duplicate: self.n_near_duplicate,
                accepted: self.n_accepted,
            },
            valid_rate: self.valid_rate,
            valid_rate_ci: Interval {
                lo: self.valid_rate_lo,
                hi: self.valid_rate_hi,
            },
            accuracy,
            frac_above_threshold,
            corpus_size_before: self.corpus_size_before,
            corpus_size_after: self.corpus_size_after,
        })
    }
}

pub fn emit_report(stats: &[CycleStats], format: ReportFormat) -> Result<String, ReportError> {
    if stats.is_empty() {
        return Err(ReportError::Empty);
    }
    match format {
        ReportFormat::Csv => emit_csv(stats),
        ReportFormat::Markdown => Ok(emit_markdown(stats)),
    }
}

fn emit_csv(stats: &[CycleStats]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in stats {
        w.serialize(CsvRow::from(s))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| csv::Error::from(e.into_error()))?;
    let text = String::from_utf8(bytes).expect("csv output is utf-8");
    // the serde header cannot carry the threshold, so patch it in
    Ok(text.replacen("Above(%)", &threshold_label(stats), 1))
}

/// Rebuilds the stats written by [`emit_report`] in CSV form.
pub fn parse_csv(text: &str) -> Result<Vec<CycleStats>, ReportError> {
    let mut lines = text.splitn(2, '\n');
    let header = lines.next().unwrap_or_default();
    let body = lines.next().unwrap_or_default();
    let header = match header.split(',').nth(4) {
        Some(col) if col.starts_with('≥') => header.replacen(col, "Above(%)", 1),
        _ => header.to_string(),
    };
    let normalized = format!("{header}\n{body}");
    let mut r = csv::Reader::from_reader(normalized.as_bytes());
    r.deserialize::<CsvRow>()
        .enumerate()
        .map(|(i, row)| row?.into_stats(i + 1))
        .collect()
}

fn opt_pct(x: Option<f64>, decimals: usize) -> String {
    x.map_or_else(
        || "-".to_string(),
        |v| format!("{:.*}", decimals, v * 100.0),
    )
}

fn emit_markdown(stats: &[CycleStats]) -> String {
    let mut out = String::new();
    let thr = threshold_label(stats);
    let _ = writeln!(
        out,
        "| Cycle | Valid(%) | Best(%) | Mean(%) | {thr} | Unique | Total-train |"
    );
    out.push_str("|---:|---:|---:|---:|---:|---:|---:|\n");
    for s in stats {
        let acc = s.accuracy.as_ref();
        let _ = writeln!(
            out,
            "| {} | {:.1} | {} | {} | {} | {} | {} |",
            s.cycle,
            s.valid_rate * 100.0,
            opt_pct(acc.map(|a| a.best), 2),
            opt_pct(acc.map(|a| a.mean), 2),
            opt_pct(s.frac_above_threshold.map(|p| p.value), 2),
            s.n_unique_accepted,
            s.corpus_size_before,
        );
    }
    out
}

/// Long-form series for plotting: `metric,cycle,value,ci_lo,ci_hi`.
pub fn plot_data(stats: &[CycleStats]) -> String {
    let mut out = String::from("metric,cycle,value,ci_lo,ci_hi\n");
    let mut row = |metric: &str, cycle: u32, value: f64, ci: Option<Interval>| {
        let (lo, hi) = ci.map_or((String::new(), String::new()), |c| {
            (c.lo.to_string(), c.hi.to_string())
        });
        let _ = writeln!(out, "{metric},{cycle},{value},{lo},{hi}");
    };
    for s in stats {
        row("valid_rate", s.cycle, s.valid_rate, Some(s.valid_rate_ci));
        if let Some(a) = &s.accuracy {
            row("best_acc", s.cycle, a.best, None);
            row("mean_acc", s.cycle, a.mean, a.mean_ci);
            row("median_acc", s.cycle, a.median, None);
        }
        if let Some(p) = &s.frac_above_threshold {
            row("frac_above_threshold", s.cycle, p.value, Some(p.ci));
        }
        row("unique_accepted", s.cycle, s.n_unique_accepted as f64, None);
        row("corpus_size", s.cycle, s.corpus_size_after as f64, None);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{wilson_interval, CONFIDENCE};

    fn stats(
        cycle: u32,
        n_gen: u64,
        n_valid: u64,
        mean: f64,
        unique: u64,
        before: u64,
    ) -> CycleStats {
        let n_above = n_valid / 2;
        CycleStats {
            cycle,
            threshold: 0.40,
            n_gen,
            n_valid,
            n_above_threshold: n_above,
            n_selected: n_above,
            n_unique_accepted: unique,
            dispositions: DispositionCounts {
                invalid: n_gen - n_valid,
                below_threshold: n_valid - n_above,
                near_duplicate: n_above - unique,
                accepted: unique,
            },
            valid_rate: n_valid as f64 / n_gen as f64,
            valid_rate_ci: wilson_interval(n_valid, n_gen, CONFIDENCE).unwrap(),
            accuracy: (n_valid > 0).then(|| AccuracySummary {
                n: n_valid,
                best: mean + 0.1977,
                mean,
                median: mean - 0.0039,
                std: (n_valid > 1).then_some(0.061_234_567_890_123),
                mean_ci: (n_valid > 1).then_some(Interval {
                    lo: mean - 0.0251,
                    hi: mean + 0.0251,
                }),
            }),
            frac_above_threshold: (n_valid > 0).then(|| Proportion::new(n_above, n_valid).unwrap()),
            corpus_size_before: before,
            corpus_size_after: before + unique,
        }
    }

    fn table() -> Vec<CycleStats> {
        vec![
            stats(1, 50, 22, 0.2806, 1, 1698),
            stats(5, 44, 20, 0.298_8, 9, 1724),
            stats(10, 92, 49, 0.377, 18, 1785),
            stats(11, 7, 0, 0.0, 0, 1803),
            stats(12, 7, 1, 0.33, 0, 1803),
        ]
    }

    #[test]
    fn one_cycle_gives_header_and_one_row() {
        let csv = emit_report(&table()[..1], ReportFormat::Csv).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("Cycle,Valid(%),Best(%),Mean(%),≥40(%),Unique,Total-train,"));
    }

    #[test]
    fn csv_round_trips_exactly() {
        let t = table();
        let csv = emit_report(&t, ReportFormat::Csv).unwrap();
        assert_eq!(parse_csv(&csv).unwrap(), t);
    }

    #[test]
    fn markdown_matches_table_layout() {
        let md = emit_report(&table(), ReportFormat::Markdown).unwrap();
        let lines: Vec<_> = md.lines().collect();
        assert_eq!(
            lines[0],
            "| Cycle | Valid(%) | Best(%) | Mean(%) | ≥40(%) | Unique | Total-train |"
        );
        assert_eq!(lines[2], "| 1 | 44.0 | 47.83 | 28.06 | 50.00 | 1 | 1698 |");
        assert!(lines[5].contains("| - | - | - |"));
    }

    #[test]
    fn empty_and_unknown() {
        assert!(matches!(
            emit_report(&[], ReportFormat::Csv),
            Err(ReportError::Empty)
        ));
        assert!(matches!(
            "xlsx".parse::<ReportFormat>(),
            Err(ReportError::UnknownFormat(_))
        ));
        assert_eq!(
            "md".parse::<ReportFormat>().unwrap(),
            ReportFormat::Markdown
        );
    }

    #[test]
    fn plot_data_rows() {
        let data = plot_data(&table()[..1]);
        let mut lines = data.lines();
        assert_eq!(lines.next(), Some("metric,cycle,value,ci_lo,ci_hi"));
        assert!(lines.next().unwrap().starts_with("valid_rate,1,0.44,"));
        assert!(data.contains("\nbest_acc,1,"));
        assert!(data.contains("\ncorpus_size,1,1699,,\n"));
    }
}
