//! Set-level diversity and coherence measures.
//!
//! Lexical and semantic similarity are averaged over every unordered slot
//! pair; a pair touching a missing slot counts as maximally similar (1.0).
//! Coherence is averaged over slots with missing slots scoring 0.0. Lower
//! similarity means a more diverse set.

mod report;

pub use report::{summarize, write_reports_jsonl, write_summary_csv, MetricSummary, Stat};

use crate::backends::{BackendError, Backends, NliBackend};
use crate::corpus::{DialogueContext, O2mSample, ResponseSet};
use crate::text::tokens;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("set-level similarity needs at least 2 slots, got {0}")]
    DegenerateSet(usize),
    #[error("similarity {value} for pair ({i}, {j}) is outside [0, 1]")]
    SimilarityRange { i: usize, j: usize, value: f64 },
    #[error("no text has at least {gram} token(s)")]
    NoGrams { gram: usize },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Token-set Jaccard similarity. Two token-free texts are identical (1.0).
pub fn jaccard(a: &str, b: &str) -> f64 {
    let ta: HashSet<String> = tokens(a).into_iter().collect();
    let tb: HashSet<String> = tokens(b).into_iter().collect();
    let union = ta.union(&tb).count();
    if union == 0 {
        return 1.0;
    }
    ta.intersection(&tb).count() as f64 / union as f64
}

/// Unordered index pairs `(i, j)` with `i < j < n`.
pub fn slot_pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

fn mean_pairwise<E>(
    set: &ResponseSet,
    mut sim: impl FnMut(usize, usize, &str, &str) -> Result<f64, E>,
) -> Result<f64, E>
where
    E: From<MetricError>,
{
    let n = set.n();
    if n < 2 {
        return Err(MetricError::DegenerateSet(n).into());
    }
    let mut total = 0.0;
    for (i, j) in slot_pairs(n) {
        total += match (set.get(i), set.get(j)) {
            (Some(a), Some(b)) => sim(i, j, a, b)?,
            _ => 1.0,
        };
    }
    Ok(total / pair_count(n) as f64)
}

/// Mean pairwise Jaccard similarity.
pub fn d_lex(set: &ResponseSet) -> Result<f64, MetricError> {
    mean_pairwise(set, |_, _, a, b| Ok(jaccard(a, b)))
}

/// Mean pairwise semantic similarity under `sim`, which must return values in
/// [0, 1].
pub fn d_sem<F>(set: &ResponseSet, mut sim: F) -> Result<f64, MetricError>
where
    F: FnMut(&str, &str) -> Result<f64, BackendError>,
{
    mean_pairwise(set, |i, j, a, b| {
        let value = sim(a, b)?;
        if !(0.0..=1.0).contains(&value) {
            return Err(MetricError::SimilarityRange { i, j, value });
        }
        Ok(value)
    })
}

/// How an NLI verdict counts towards the UE score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UeMode {
    /// 1 for an entailment verdict, else 0.
    #[default]
    Indicator,
    /// The entailment probability.
    Probability,
}

/// Mean over context utterances of whether `response` (premise) entails the
/// utterance (hypothesis).
pub fn ue_score(
    response: &str,
    context: &DialogueContext,
    nli: &dyn NliBackend,
    mode: UeMode,
) -> Result<f64, BackendError> {
    if context.is_empty() {
        return Err(BackendError::Precondition("UE needs at least one utterance".into()));
    }
    let mut total = 0.0;
    for u in context.utterances() {
        let verdict = nli.nli(response, &u.text)?;
        total += match mode {
            UeMode::Indicator => f64::from(u8::from(verdict.is_entailment())),
            UeMode::Probability => verdict.entail_score,
        };
    }
    Ok(total / context.len() as f64)
}

/// Mean per-slot coherence, with missing slots scoring 0.
pub fn cc_score<E>(set: &ResponseSet, mut cc: impl FnMut(&str) -> Result<f64, E>) -> Result<f64, E> {
    let mut total = 0.0;
    for (_, text) in set.present() {
        total += cc(text)?;
    }
    Ok(total / set.n() as f64)
}

/// Unique n-grams over total n-grams, pooled across `texts`. N-grams never
/// span two texts.
pub fn distinct_n<S: AsRef<str>>(texts: &[S], gram: usize) -> Result<f64, MetricError> {
    if gram == 0 {
        return Err(MetricError::NoGrams { gram });
    }
    let mut seen: HashSet<Vec<String>> = HashSet::new();
    let mut total = 0usize;
    for text in texts {
        let toks = tokens(text.as_ref());
        for w in toks.windows(gram) {
            total += 1;
            seen.insert(w.to_vec());
        }
    }
    if total == 0 {
        return Err(MetricError::NoGrams { gram });
    }
    Ok(seen.len() as f64 / total as f64)
}

/// [`distinct_n`] over the present slots of a set.
pub fn distinct_n_set(set: &ResponseSet, gram: usize) -> Result<f64, MetricError> {
    let texts: Vec<&str> = set.present().map(|(_, t)| t).collect();
    distinct_n(&texts, gram)
}

/// Every measure for one sample. A measure whose backend fails is left
/// absent and the failure is noted; the report itself always exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub d_lex: Option<f64>,
    pub d_sem: Option<f64>,
    pub ue: Option<f64>,
    pub unieval: Option<f64>,
    pub distinct1: Option<f64>,
    pub distinct2: Option<f64>,
    pub pair_count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub ue_mode: UeMode,
}

pub fn evaluate_set(sample: &O2mSample, backends: &Backends, opts: &EvalOptions) -> MetricReport {
    evaluate_responses(&sample.context, &sample.responses, backends, opts)
}

pub fn evaluate_responses(
    context: &DialogueContext,
    set: &ResponseSet,
    backends: &Backends,
    opts: &EvalOptions,
) -> MetricReport {
    let mut failures = Vec::new();
    let mut keep = |name: &str, r: Result<f64, String>| match r {
        Ok(v) => Some(v),
        Err(e) => {
            failures.push(format!("{name}: {e}"));
            None
        }
    };
    let d_lex_v = keep("d_lex", d_lex(set).map_err(|e| e.to_string()));
    let d_sem_v = keep("d_sem", d_sem(set, |a, b| backends.similarity.similarity(a, b)).map_err(|e| e.to_string()));
    let ue = keep(
        "ue",
        cc_score(set, |r| ue_score(r, context, backends.nli.as_ref(), opts.ue_mode)).map_err(|e| e.to_string()),
    );
    let unieval = keep(
        "unieval",
        cc_score(set, |r| backends.coherence.coherence_qa(context, r).map(f64::from)).map_err(|e| e.to_string()),
    );
    let distinct1 = keep("distinct1", distinct_n_set(set, 1).map_err(|e| e.to_string()));
    let distinct2 = keep("distinct2", distinct_n_set(set, 2).map_err(|e| e.to_string()));
    MetricReport {
        d_lex: d_lex_v,
        d_sem: d_sem_v,
        ue,
        unieval,
        distinct1,
        distinct2,
        pair_count: pair_count(set.n()),
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{HashEmbedder, MockChat, ScriptedNli};
    use crate::backends::{CoherenceBackend, NliLabel, NliVerdict};
    use std::sync::Arc;

    fn set(slots: &[Option<&str>]) -> ResponseSet {
        ResponseSet::new(slots.iter().map(|s| s.map(String::from)).collect()).unwrap()
    }

    fn ctx(texts: &[&str]) -> DialogueContext {
        DialogueContext::from_texts("c", texts).unwrap()
    }

    #[test]
    fn jaccard_cases() {
        assert_eq!(jaccard("the cat sat", "the cat sat"), 1.0);
        assert_eq!(jaccard("a b c", "d e"), 0.0);
        assert!((jaccard("it is raining heavily", "it is sunny today") - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(jaccard("", ""), 1.0);
        assert_eq!(jaccard("", "word"), 0.0);
        assert_eq!(jaccard("Hello, world!", "hello world"), 1.0);
    }

    #[test]
    fn d_lex_missing_penalty() {
        assert_eq!(d_lex(&set(&[Some("same words"), Some("same words")])).unwrap(), 1.0);
        // jaccard("a b c", "a b d") = 2/4
        let v = d_lex(&set(&[Some("a b c"), Some("a b d"), None])).unwrap();
        assert!((v - 2.5 / 3.0).abs() < 1e-15);
        assert_eq!(d_lex(&ResponseSet::all_missing(5).unwrap()).unwrap(), 1.0);
        assert_eq!(d_lex(&set(&[Some("x")])), Err(MetricError::DegenerateSet(1)));
    }

    #[test]
    fn d_sem_stub_values() {
        let s = set(&[Some("a"), Some("b"), Some("c"), Some("d"), Some("e")]);
        assert!((d_sem(&s, |_, _| Ok(0.9)).unwrap() - 0.9).abs() < 1e-15);
        assert_eq!(d_sem(&set(&[Some("a"), None]), |_, _| Ok(0.0)).unwrap(), 1.0);
        let table = |a: &str, b: &str| {
            Ok(match (a, b) {
                ("a", "b") => 0.2,
                ("a", "c") => 0.4,
                _ => 0.6,
            })
        };
        assert!((d_sem(&set(&[Some("a"), Some("b"), Some("c")]), table).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn d_sem_rejects_out_of_range() {
        let err = d_sem(&set(&[Some("a"), Some("b")]), |_, _| Ok(1.5)).unwrap_err();
        assert!(matches!(err, MetricError::SimilarityRange { i: 0, j: 1, .. }));
    }

    #[test]
    fn ue_counts_entailed_utterances() {
        let c = ctx(&["u1", "u2", "u3", "u4"]);
        let yes = NliVerdict::new(NliLabel::Entailment, 0.8).unwrap();
        let no = NliVerdict::new(NliLabel::Neutral, 0.3).unwrap();
        let nli = ScriptedNli::new(true)
            .with("r", "u1", yes.clone())
            .with("r", "u2", no.clone())
            .with("r", "u3", yes)
            .with("r", "u4", no);
        assert_eq!(ue_score("r", &c, &nli, UeMode::Indicator).unwrap(), 0.5);
        assert!((ue_score("r", &c, &nli, UeMode::Probability).unwrap() - 0.55).abs() < 1e-15);
    }

    #[test]
    fn cc_zero_for_missing() {
        let v: Result<f64, ()> = cc_score(&set(&[None, Some("r")]), |_| Ok(0.8));
        assert_eq!(v.unwrap(), 0.4);
        let v: Result<f64, ()> = cc_score(&ResponseSet::all_missing(3).unwrap(), |_| Ok(1.0));
        assert_eq!(v.unwrap(), 0.0);
    }

    #[test]
    fn distinct_counts() {
        assert_eq!(distinct_n(&["a b", "a c"], 1).unwrap(), 0.75);
        assert_eq!(distinct_n(&["one two three"], 1).unwrap(), 1.0);
        assert_eq!(distinct_n(&["a b c", "a b c"], 2).unwrap(), 0.5);
        assert_eq!(distinct_n(&["solo"], 2), Err(MetricError::NoGrams { gram: 2 }));
        assert_eq!(distinct_n_set(&set(&[Some("a b"), None, Some("a c")]), 1).unwrap(), 0.75);
    }

    struct ConstCoherence(u8);
    impl CoherenceBackend for ConstCoherence {
        fn coherence_qa(&self, _: &DialogueContext, _: &str) -> Result<u8, BackendError> {
            Ok(self.0)
        }
    }

    fn backends() -> Backends {
        Backends::new(
            Arc::new(MockChat::fixed("Yes")),
            Arc::new(HashEmbedder::new(16)),
            Arc::new(ScriptedNli::new(false)),
        )
        .with_coherence(Arc::new(ConstCoherence(1)))
    }

    #[test]
    fn all_missing_report() {
        let sample = O2mSample::new(ctx(&["a", "b", "c"]), ResponseSet::all_missing(5).unwrap(), None).unwrap();
        let r = evaluate_set(&sample, &backends(), &EvalOptions::default());
        assert_eq!((r.d_lex, r.d_sem, r.ue, r.unieval), (Some(1.0), Some(1.0), Some(0.0), Some(0.0)));
        assert_eq!(r.pair_count, 10);
        assert_eq!(r.distinct1, None);
    }

    #[test]
    fn failing_backend_degrades_to_absent() {
        struct Down;
        impl CoherenceBackend for Down {
            fn coherence_qa(&self, _: &DialogueContext, _: &str) -> Result<u8, BackendError> {
                Err(BackendError::Transport { attempts: 1, message: "down".into() })
            }
        }
        let b = backends().with_coherence(Arc::new(Down));
        let sample = O2mSample::new(ctx(&["a", "b", "c"]), set(&[Some("x y"), Some("y z")]), None).unwrap();
        let r = evaluate_set(&sample, &b, &EvalOptions::default());
        assert_eq!(r.unieval, None);
        assert!(r.d_lex.is_some());
        assert_eq!(r.failures.len(), 1);
    }
}
