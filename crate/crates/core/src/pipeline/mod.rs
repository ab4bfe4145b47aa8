//! End-to-end runs: generate a candidate set, score it, pick the final
//! response, and aggregate corpus-level tables, significance tests and
//! human-judgment tallies.

mod stats;
mod tally;

pub use stats::{significance, ComparisonResult, StatsError, TestKind, ALPHA};
pub use tally::{largest_remainder, parse_judgments, tally_preferences, Judgment, TallyError, TallyRow, Verdict};

use crate::backends::{BackendError, Backends};
use crate::corpus::{DialogueContext, O2mSample, ResponseSet};
use crate::metrics::{distinct_n, evaluate_responses, ue_score, EvalOptions, MetricReport};
use crate::mrg::{generate_mrg, generate_single, Demonstration, GenOptions, GenerationLog, MrgError, Strategy};
use crate::odrp::{baseline_select, select_by_scores, select_response, Baseline, OdrpError, OdrpModel};
use crate::text::fnv1a;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("selector {0} needs a scoring backend but none is configured")]
    MissingScorer(SelectorName),
    #[error("every sample failed: {}", .0.iter().map(|(id, e)| format!("{id}: {e}")).collect::<Vec<_>>().join("; "))]
    AllFailed(Vec<(String, String)>),
    #[error(transparent)]
    Mrg(#[from] MrgError),
    #[error(transparent)]
    Odrp(#[from] OdrpError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl PipelineError {
    /// True when the failure comes from an unreachable or refusing backend.
    pub fn is_backend_unavailable(&self) -> bool {
        match self {
            PipelineError::Backend(e) | PipelineError::Mrg(MrgError::Backend(e)) | PipelineError::Odrp(OdrpError::Backend(e)) => {
                e.is_unavailable()
            }
            PipelineError::AllFailed(_) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorName {
    Odrp,
    OdrpHn,
    Pref,
    Cls,
    Rand,
    Base,
    External,
}

impl SelectorName {
    pub const ALL: [SelectorName; 7] = [
        SelectorName::Odrp,
        SelectorName::OdrpHn,
        SelectorName::Pref,
        SelectorName::Cls,
        SelectorName::Rand,
        SelectorName::Base,
        SelectorName::External,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SelectorName::Odrp => "odrp",
            SelectorName::OdrpHn => "odrp_hn",
            SelectorName::Pref => "pref",
            SelectorName::Cls => "cls",
            SelectorName::Rand => "rand",
            SelectorName::Base => "base",
            SelectorName::External => "external",
        }
    }

    pub fn uses_model(self) -> bool {
        matches!(self, SelectorName::Odrp | SelectorName::OdrpHn | SelectorName::Cls)
    }

    pub fn uses_scorer(self) -> bool {
        matches!(self, SelectorName::Pref | SelectorName::External)
    }
}

impl fmt::Display for SelectorName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectorName {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SelectorName::ALL.into_iter().find(|n| n.as_str() == s.trim()).ok_or_else(|| {
            PipelineError::Precondition(format!("unknown selector {s:?} (odrp, odrp_hn, pref, cls, rand, base, external)"))
        })
    }
}

/// How the final response is chosen.
#[derive(Debug, Clone)]
pub enum Selector {
    /// Argmax of a trained head (`odrp`, `odrp_hn`, `cls`).
    Model { name: SelectorName, model: Arc<OdrpModel> },
    /// Argmax of the configured scoring backend (`pref`, `external`).
    Scorer { name: SelectorName },
    /// Uniform among present slots; the seed is mixed with the sample id.
    Random { seed: u64 },
    /// One direct response without set generation.
    Base,
}

impl Selector {
    pub fn name(&self) -> SelectorName {
        match self {
            Selector::Model { name, .. } | Selector::Scorer { name } => *name,
            Selector::Random { .. } => SelectorName::Rand,
            Selector::Base => SelectorName::Base,
        }
    }

    pub fn model(name: SelectorName, model: OdrpModel) -> Result<Self, PipelineError> {
        if !name.uses_model() {
            return Err(PipelineError::Precondition(format!("selector {name} does not take a model")));
        }
        Ok(Selector::Model { name, model: Arc::new(model) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub sample_id: String,
    pub strategy: String,
    pub response_set: ResponseSet,
    pub metric_report: MetricReport,
    pub selected_index: usize,
    pub selected_text: String,
    pub selector_name: SelectorName,
    pub scores_per_slot: Vec<Option<f64>>,
    /// UE and UniEval of the selected response alone.
    pub selected_ue: Option<f64>,
    pub selected_unieval: Option<f64>,
    pub generation_log: Option<GenerationLog>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub gen: GenOptions,
    pub eval: EvalOptions,
}

/// Chooses among the present slots of `set`.
pub fn select_on_set(
    context: &DialogueContext,
    set: &ResponseSet,
    selector: &Selector,
    backends: &Backends,
) -> Result<(usize, Vec<Option<f64>>), PipelineError> {
    if set.is_degenerate() {
        return Err(OdrpError::AllSlotsMissing.into());
    }
    match selector {
        Selector::Model { model, .. } => {
            let sel = select_response(set, context, model, backends.embed.as_ref())?;
            Ok((sel.index, sel.scores))
        }
        Selector::Scorer { name } => {
            let scorer = backends.scorer.as_ref().ok_or(PipelineError::MissingScorer(*name))?;
            let scores: Vec<Option<f64>> = set
                .slots()
                .par_iter()
                .map(|s| s.as_deref().map(|t| scorer.score(context, t)).transpose())
                .collect::<Result<_, _>>()?;
            let sel = select_by_scores(set, scores)?;
            Ok((sel.index, sel.scores))
        }
        Selector::Random { seed } => {
            let (index, _) = baseline_select(set, Baseline::Rand { seed: seed ^ fnv1a(context.id.as_bytes()) })?;
            Ok((index, vec![None; set.n()]))
        }
        Selector::Base => {
            let (index, _) = baseline_select(set, Baseline::First)?;
            Ok((index, vec![None; set.n()]))
        }
    }
}

fn build_record(
    context: &DialogueContext,
    strategy: String,
    set: ResponseSet,
    selector: &Selector,
    backends: &Backends,
    opts: &RunOptions,
    log: Option<GenerationLog>,
) -> Result<RunRecord, PipelineError> {
    let (selected_index, scores_per_slot) = select_on_set(context, &set, selector, backends)?;
    let metric_report = evaluate_responses(context, &set, backends, &opts.eval);
    let selected_text = set.get(selected_index).expect("selected slot is present").to_string();
    let selected_ue = ue_score(&selected_text, context, backends.nli.as_ref(), opts.eval.ue_mode).ok();
    let selected_unieval = backends.coherence.coherence_qa(context, &selected_text).ok().map(f64::from);
    Ok(RunRecord {
        sample_id: context.id.clone(),
        strategy,
        response_set: set,
        metric_report,
        selected_index,
        selected_text,
        selector_name: selector.name(),
        scores_per_slot,
        selected_ue,
        selected_unieval,
        generation_log: log,
    })
}

/// Generates a set (or one direct response for [`Selector::Base`]), scores
/// it and selects the final response.
pub fn run_two_stage(
    context: &DialogueContext,
    strategy: &Strategy,
    demos: &[Demonstration],
    selector: &Selector,
    backends: &Backends,
    opts: &RunOptions,
) -> Result<RunRecord, PipelineError> {
    let (label, generation) = match selector {
        Selector::Base => ("base".to_string(), generate_single(context, backends.chat.as_ref(), &opts.gen)?),
        _ => (
            strategy.kind.as_str().to_string(),
            generate_mrg(strategy, context, demos, backends.chat.as_ref(), &opts.gen)?,
        ),
    };
    build_record(context, label, generation.set, selector, backends, opts, Some(generation.log))
}

/// Selection over an existing set, without generation.
pub fn run_on_sample(
    sample: &O2mSample,
    selector: &Selector,
    backends: &Backends,
    opts: &RunOptions,
) -> Result<RunRecord, PipelineError> {
    build_record(&sample.context, "given".into(), sample.responses.clone(), selector, backends, opts, None)
}

/// One row of the corpus table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub system: String,
    pub samples: usize,
    pub dist1: Option<f64>,
    pub dist2: Option<f64>,
    pub ue: Option<f64>,
    pub unieval: Option<f64>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Distinct-1/2 over the pool of selected responses; UE and UniEval as means
/// of the per-record selected-response scores.
pub fn summarize_records(system: &str, records: &[RunRecord]) -> SummaryRow {
    let texts: Vec<&str> = records.iter().map(|r| r.selected_text.as_str()).collect();
    SummaryRow {
        system: system.to_string(),
        samples: records.len(),
        dist1: distinct_n(&texts, 1).ok(),
        dist2: distinct_n(&texts, 2).ok(),
        ue: mean_of(records.iter().map(|r| r.selected_ue)),
        unieval: mean_of(records.iter().map(|r| r.selected_unieval)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRun {
    /// Completed records sorted by sample id.
    pub records: Vec<RunRecord>,
    /// `(sample_id, error)` for every sample that failed.
    pub failures: Vec<(String, String)>,
    pub summary: SummaryRow,
}

fn collect_run(
    system: &str,
    results: Vec<(String, Result<RunRecord, PipelineError>)>,
) -> Result<CorpusRun, PipelineError> {
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push((id, e.to_string())),
        }
    }
    if records.is_empty() {
        return Err(PipelineError::AllFailed(failures));
    }
    records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    failures.sort();
    let summary = summarize_records(system, &records);
    Ok(CorpusRun { records, failures, summary })
}

/// [`run_two_stage`] over every context, concurrently. Failed samples are
/// listed and left out of the means.
pub fn evaluate_corpus(
    contexts: &[DialogueContext],
    strategy: &Strategy,
    demos: &[Demonstration],
    selector: &Selector,
    backends: &Backends,
    opts: &RunOptions,
) -> Result<CorpusRun, PipelineError> {
    if contexts.is_empty() {
        return Err(PipelineError::Precondition("no contexts to evaluate".into()));
    }
    let results = contexts
        .par_iter()
        .map(|c| (c.id.clone(), run_two_stage(c, strategy, demos, selector, backends, opts)))
        .collect();
    collect_run(selector.name().as_str(), results)
}

/// Selection and scoring over pre-generated sets.
pub fn evaluate_sets(
    samples: &[O2mSample],
    selector: &Selector,
    backends: &Backends,
    opts: &RunOptions,
) -> Result<CorpusRun, PipelineError> {
    if samples.is_empty() {
        return Err(PipelineError::Precondition("no samples to evaluate".into()));
    }
    let results = samples
        .par_iter()
        .map(|s| (s.id().to_string(), run_on_sample(s, selector, backends, opts)))
        .collect();
    collect_run(selector.name().as_str(), results)
}

pub fn write_records<W: Write>(mut out: W, records: &[RunRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn parse_records(text: &str) -> Result<Vec<RunRecord>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

pub const SUMMARY_HEADER: &str = "system,Dist-1,Dist-2,UE,UniEval";

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_summary_csv<W: Write>(mut out: W, rows: &[SummaryRow]) -> std::io::Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.system, cell(r.dist1), cell(r.dist2), cell(r.ue), cell(r.unieval))?;
    }
    Ok(())
}
