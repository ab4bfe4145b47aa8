use super::{CorpusError, O2mSample};
use crate::text::whitespace_len;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sample_count: usize,
    pub avg_turns: f64,
    pub avg_tokens: f64,
}

/// Which texts contribute to `avg_tokens`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TokenScope {
    #[default]
    Responses,
    ResponsesAndContext,
}

/// Mean context length and mean whitespace-token count per text.
pub fn corpus_stats(samples: &[O2mSample], scope: TokenScope) -> Result<CorpusStats, CorpusError> {
    if samples.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let turns: usize = samples.iter().map(|s| s.context.len()).sum();
    let mut texts = 0usize;
    let mut tokens = 0usize;
    for sample in samples {
        for (_, text) in sample.responses.present() {
            texts += 1;
            tokens += whitespace_len(text);
        }
        if scope == TokenScope::ResponsesAndContext {
            for u in sample.context.utterances() {
                texts += 1;
                tokens += whitespace_len(&u.text);
            }
        }
    }
    Ok(CorpusStats {
        sample_count: samples.len(),
        avg_turns: turns as f64 / samples.len() as f64,
        avg_tokens: if texts == 0 { 0.0 } else { tokens as f64 / texts as f64 },
    })
}
