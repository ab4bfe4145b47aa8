use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TallyError {
    #[error("line {line}: unknown verdict {verdict:?} (win, tie, loss)")]
    UnknownVerdict { line: usize, verdict: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("no judgments")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Win,
    Tie,
    Loss,
}

impl Verdict {
    pub fn parse(s: &str) -> Option<Verdict> {
        match s.trim().to_ascii_lowercase().as_str() {
            "win" => Some(Verdict::Win),
            "tie" => Some(Verdict::Tie),
            "loss" => Some(Verdict::Loss),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub comparison_id: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyRow {
    pub comparison_id: String,
    pub judgments: usize,
    pub win: u32,
    pub tie: u32,
    pub loss: u32,
}

/// Integer percentages summing to 100 by largest remainder; equal
/// remainders favour win, then tie, then loss.
pub fn largest_remainder(counts: [usize; 3]) -> [u32; 3] {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return [0; 3];
    }
    let mut pct = counts.map(|c| (100 * c / total) as u32);
    let rems = counts.map(|c| 100 * c % total);
    let short = 100 - pct.iter().sum::<u32>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| rems[b].cmp(&rems[a]).then(a.cmp(&b)));
    for &i in order.iter().take(short as usize) {
        pct[i] += 1;
    }
    pct
}

/// Win/tie/loss percentages per comparison, in first-appearance order.
pub fn tally_preferences(judgments: &[Judgment]) -> Result<Vec<TallyRow>, TallyError> {
    if judgments.is_empty() {
        return Err(TallyError::Empty);
    }
    let mut ids: Vec<&str> = Vec::new();
    let mut counts: Vec<[usize; 3]> = Vec::new();
    for j in judgments {
        let k = match ids.iter().position(|id| *id == j.comparison_id) {
            Some(k) => k,
            None => {
                ids.push(&j.comparison_id);
                counts.push([0; 3]);
                ids.len() - 1
            }
        };
        counts[k][j.verdict as usize] += 1;
    }
    Ok(ids
        .into_iter()
        .zip(counts)
        .map(|(id, c)| {
            let [win, tie, loss] = largest_remainder(c);
            TallyRow { comparison_id: id.to_string(), judgments: c.iter().sum(), win, tie, loss }
        })
        .collect())
}

#[derive(Deserialize)]
struct RawJudgment {
    comparison_id: String,
    verdict: String,
}

/// JSONL with `{comparison_id, verdict}` per line.
pub fn parse_judgments(text: &str) -> Result<Vec<Judgment>, TallyError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawJudgment =
            serde_json::from_str(line).map_err(|e| TallyError::Parse { line: i + 1, message: e.to_string() })?;
        let verdict =
            Verdict::parse(&raw.verdict).ok_or(TallyError::UnknownVerdict { line: i + 1, verdict: raw.verdict })?;
        out.push(Judgment { comparison_id: raw.comparison_id, verdict });
    }
    Ok(out)
}
