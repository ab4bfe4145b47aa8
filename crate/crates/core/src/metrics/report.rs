use super::MetricReport;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Mean, sample standard deviation and count of the values present.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stddev: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let count = values.len();
        let mean = values.iter().sum::<f64>() / count as f64;
        let stddev = if count < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
        };
        Some(Stat { mean, stddev, count })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub samples: usize,
    pub d_lex: Option<Stat>,
    pub d_sem: Option<Stat>,
    pub ue: Option<Stat>,
    pub unieval: Option<Stat>,
    pub distinct1: Option<Stat>,
    pub distinct2: Option<Stat>,
}

impl MetricSummary {
    pub fn rows(&self) -> [(&'static str, Option<Stat>); 6] {
        [
            ("d_lex", self.d_lex),
            ("d_sem", self.d_sem),
            ("ue", self.ue),
            ("unieval", self.unieval),
            ("distinct1", self.distinct1),
            ("distinct2", self.distinct2),
        ]
    }
}

pub fn summarize(reports: &[MetricReport]) -> MetricSummary {
    let col = |f: fn(&MetricReport) -> Option<f64>| Stat::of(&reports.iter().filter_map(f).collect::<Vec<_>>());
    MetricSummary {
        samples: reports.len(),
        d_lex: col(|r| r.d_lex),
        d_sem: col(|r| r.d_sem),
        ue: col(|r| r.ue),
        unieval: col(|r| r.unieval),
        distinct1: col(|r| r.distinct1),
        distinct2: col(|r| r.distinct2),
    }
}

#[derive(Serialize)]
struct Line<'a> {
    sample_id: &'a str,
    #[serde(flatten)]
    report: &'a MetricReport,
}

/// One JSON object per sample: `sample_id` followed by the report fields.
pub fn write_reports_jsonl<W: Write>(mut out: W, reports: &[(String, MetricReport)]) -> std::io::Result<()> {
    for (id, report) in reports {
        serde_json::to_writer(&mut out, &Line { sample_id: id, report })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// `metric,mean,stddev,count`, one row per metric; absent metrics have empty
/// cells and a zero count.
pub fn write_summary_csv<W: Write>(mut out: W, summary: &MetricSummary) -> std::io::Result<()> {
    writeln!(out, "metric,mean,stddev,count")?;
    for (name, stat) in summary.rows() {
        match stat {
            Some(s) => writeln!(out, "{name},{},{},{}", s.mean, s.stddev, s.count)?,
            None => writeln!(out, "{name},,,0")?,
        }
    }
    Ok(())
}
