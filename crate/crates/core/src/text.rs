//! Tokenization shared by the lexical metrics, the corpus statistics and the
//! mock backends.
//!
//! Tokens are lowercased whitespace-separated words with leading and trailing
//! non-alphanumeric characters stripped ("Hello," and "hello" are the same
//! token). Tokens that are pure punctuation vanish.

/// Lowercased, punctuation-trimmed whitespace tokens of `text`.
pub fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
            if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_lowercase())
            }
        })
        .collect()
}

/// Plain whitespace token count, used for corpus length statistics.
pub fn whitespace_len(text: &str) -> usize {
    text.split_whitespace().count()
}

/// 64-bit FNV-1a. Stable across platforms and releases, which the mock
/// backends and fixture generator rely on.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
