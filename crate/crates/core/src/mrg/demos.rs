use super::{Demonstration, MrgError};
use crate::backends::SimilarityBackend;
use crate::corpus::O2mSample;
use crate::metrics::{d_lex, d_sem};
use rayon::prelude::*;

/// `(d_sem + d_lex) / 2` of a sample's response set.
pub fn combined_similarity(sample: &O2mSample, sim: &dyn SimilarityBackend) -> Result<f64, MrgError> {
    let lex = d_lex(&sample.responses)?;
    let sem = d_sem(&sample.responses, |a, b| sim.similarity(a, b))?;
    Ok((sem + lex) / 2.0)
}

/// Orders `(id, score)` entries by ascending score, then id.
pub fn rank_ascending<T>(items: &mut [(T, f64)], id: impl Fn(&T) -> &str) {
    items.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| id(&a.0).cmp(id(&b.0))));
}

/// The `k` most diverse samples, i.e. those with the lowest combined
/// similarity, ties broken by ascending id.
pub fn select_demonstrations(
    corpus: &[O2mSample],
    k: usize,
    sim: &dyn SimilarityBackend,
) -> Result<Vec<Demonstration>, MrgError> {
    if corpus.len() < k {
        return Err(MrgError::InsufficientCorpus { have: corpus.len(), need: k });
    }
    let scores: Vec<f64> = corpus.par_iter().map(|s| combined_similarity(s, sim)).collect::<Result<_, _>>()?;
    let mut ranked: Vec<(&O2mSample, f64)> = corpus.iter().zip(scores).collect();
    rank_ascending(&mut ranked, |s| s.id());
    Ok(ranked
        .into_iter()
        .take(k)
        .map(|(s, score)| Demonstration {
            context: s.context.clone(),
            responses: s.responses.clone(),
            combined_diversity: score,
        })
        .collect())
}
