//! Expansion of labeled response sets into chosen/rejected pairs.

use super::{CorpusError, O2mSample, PreferencePair};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairLabel {
    pub winner: usize,
    pub loser: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PreferenceLabels {
    /// Slot indices ordered best first; must list every present slot once.
    Ranking(Vec<usize>),
    /// Explicit per-pair winners. With `require_total_order`, cyclic labels
    /// are reported instead of being accepted as-is.
    Pairwise { labels: Vec<PairLabel>, require_total_order: bool },
}

/// Emits one pair per unordered pair of present slots, oriented by the labels.
/// Pairs come out in `(i, j)` slot order, `i < j`, all sharing the sample id
/// as `set_id`.
pub fn expand_preferences(sample: &O2mSample, labels: &PreferenceLabels) -> Result<Vec<PreferencePair>, CorpusError> {
    let present: Vec<(usize, &str)> = sample.responses.present().collect();
    let is_present = |i: usize| sample.responses.get(i).is_some();

    let winners: HashMap<(usize, usize), usize> = match labels {
        PreferenceLabels::Ranking(order) => {
            let mut rank = HashMap::new();
            for (pos, &slot) in order.iter().enumerate() {
                if !is_present(slot) {
                    return Err(CorpusError::InvalidLabels(format!("ranking names slot {slot}, which is missing or out of range")));
                }
                if rank.insert(slot, pos).is_some() {
                    return Err(CorpusError::InvalidLabels(format!("ranking lists slot {slot} twice")));
                }
            }
            let mut winners = HashMap::new();
            for (a, &(i, _)) in present.iter().enumerate() {
                for &(j, _) in &present[a + 1..] {
                    match (rank.get(&i), rank.get(&j)) {
                        (Some(ri), Some(rj)) => {
                            winners.insert((i, j), if ri < rj { i } else { j });
                        }
                        _ => return Err(CorpusError::IncompleteLabels(i, j)),
                    }
                }
            }
            winners
        }
        PreferenceLabels::Pairwise { labels, require_total_order } => {
            let mut winners = HashMap::new();
            for label in labels {
                let (w, l) = (label.winner, label.loser);
                if w == l {
                    return Err(CorpusError::InvalidLabels(format!("slot {w} compared with itself")));
                }
                if !is_present(w) || !is_present(l) {
                    return Err(CorpusError::InvalidLabels(format!("pair ({w}, {l}) touches a missing or out-of-range slot")));
                }
                let key = (w.min(l), w.max(l));
                if let Some(prev) = winners.insert(key, w) {
                    if prev != w {
                        return Err(CorpusError::ContradictoryLabels(format!(
                            "pair ({}, {}) labeled both ways",
                            key.0, key.1
                        )));
                    }
                }
            }
            for (a, &(i, _)) in present.iter().enumerate() {
                for &(j, _) in &present[a + 1..] {
                    if !winners.contains_key(&(i, j)) {
                        return Err(CorpusError::IncompleteLabels(i, j));
                    }
                }
            }
            if *require_total_order {
                if let Some(cycle) = find_cycle(&present, &winners) {
                    return Err(CorpusError::ContradictoryLabels(format!(
                        "cycle {} -> {} -> {} -> {}",
                        cycle.0, cycle.1, cycle.2, cycle.0
                    )));
                }
            }
            winners
        }
    };

    let set_id = sample.id().to_string();
    let mut pairs = Vec::with_capacity(present.len() * present.len().saturating_sub(1) / 2);
    for (a, &(i, ti)) in present.iter().enumerate() {
        for &(j, tj) in &present[a + 1..] {
            if ti == tj {
                return Err(CorpusError::IdenticalResponses(i, j));
            }
            let (chosen, rejected) = if winners[&(i, j)] == i { (ti, tj) } else { (tj, ti) };
            pairs.push(PreferencePair {
                context_id: sample.context.id.clone(),
                set_id: set_id.clone(),
                chosen: chosen.to_string(),
                rejected: rejected.to_string(),
            });
        }
    }
    Ok(pairs)
}

/// A complete tournament is transitive iff it has no directed 3-cycle.
fn find_cycle(present: &[(usize, &str)], winners: &HashMap<(usize, usize), usize>) -> Option<(usize, usize, usize)> {
    let beats = |x: usize, y: usize| winners[&(x.min(y), x.max(y))] == x;
    let idx: Vec<usize> = present.iter().map(|(i, _)| *i).collect();
    for (a, &x) in idx.iter().enumerate() {
        for (b, &y) in idx.iter().enumerate().skip(a + 1) {
            for &z in &idx[b + 1..] {
                if beats(x, y) && beats(y, z) && beats(z, x) {
                    return Some((x, y, z));
                }
                if beats(x, z) && beats(z, y) && beats(y, x) {
                    return Some((x, z, y));
                }
            }
        }
    }
    None
}
