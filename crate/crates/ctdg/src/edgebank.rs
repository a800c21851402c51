//! Pure memory baseline: predict positive iff the queried node pair is
//! retained in an edge store built from the observed stream.

use std::collections::{HashMap, HashSet};

use crate::error::CtdgError;
use crate::graph::Event;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeBankVariant {
    /// Unlimited memory of every observed pair.
    Infinite,
    /// Trailing window sized by the duration of the test split.
    TimeWindowTestSpan,
    /// Trailing window sized by the mean repeat interval of recurring pairs.
    TimeWindowRepeat,
    /// Pairs whose appearance count exceeds a threshold.
    Threshold,
}

impl EdgeBankVariant {
    pub fn name(&self) -> &'static str {
        match self {
            EdgeBankVariant::Infinite => "infinite",
            EdgeBankVariant::TimeWindowTestSpan => "tw_ts",
            EdgeBankVariant::TimeWindowRepeat => "tw_re",
            EdgeBankVariant::Threshold => "threshold",
        }
    }

    pub fn all() -> [EdgeBankVariant; 4] {
        [
            EdgeBankVariant::Infinite,
            EdgeBankVariant::TimeWindowTestSpan,
            EdgeBankVariant::TimeWindowRepeat,
            EdgeBankVariant::Threshold,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairStats {
    pub count: u32,
    pub first_seen: f64,
    pub last_seen: f64,
}

/// Non-trainable edge store. Pairs are unordered.
#[derive(Debug, Clone)]
pub struct EdgeMemory {
    pub variant: EdgeBankVariant,
    pub pair_store: HashMap<(usize, usize), PairStats>,
    /// Window length for the time-window variants.
    pub window: Option<f64>,
    pub threshold_k: Option<u32>,
    retained: HashSet<(usize, usize)>,
}

fn key(u: usize, v: usize) -> (usize, usize) {
    (u.min(v), u.max(v))
}

/// Build the memory over a time-sorted observed stream.
///
/// `test_duration` sizes the test-span window variant; `threshold_k` is the
/// count bound of the threshold variant (retain pairs seen more than k
/// times). The repeat-interval window is the mean over recurring pairs of
/// their mean inter-occurrence gap.
pub fn build_memory(
    variant: EdgeBankVariant,
    observed: &[Event],
    test_duration: Option<f64>,
    threshold_k: Option<u32>,
) -> Result<EdgeMemory, CtdgError> {
    let mut pair_store: HashMap<(usize, usize), PairStats> = HashMap::new();
    for e in observed {
        let k = key(e.source, e.destination);
        pair_store
            .entry(k)
            .and_modify(|s| {
                s.count += 1;
                s.last_seen = e.timestamp;
            })
            .or_insert(PairStats {
                count: 1,
                first_seen: e.timestamp,
                last_seen: e.timestamp,
            });
    }
    let t_end = observed.last().map(|e| e.timestamp).unwrap_or(0.0);
    let t_start = observed.first().map(|e| e.timestamp).unwrap_or(0.0);

    let (window, threshold) = match variant {
        EdgeBankVariant::Infinite => (None, None),
        EdgeBankVariant::TimeWindowTestSpan => {
            let w = test_duration.ok_or_else(|| {
                CtdgError::Config("tw_ts variant requires a test duration".into())
            })?;
            if w <= 0.0 {
                return Err(CtdgError::Config("test duration must be positive".into()));
            }
            (Some(w), None)
        }
        EdgeBankVariant::TimeWindowRepeat => {
            let mut sum = 0.0;
            let mut n = 0usize;
            for s in pair_store.values() {
                if s.count >= 2 {
                    sum += (s.last_seen - s.first_seen) / (s.count - 1) as f64;
                    n += 1;
                }
            }
            // no recurring pairs: keep the whole observed span
            let w = if n > 0 { sum / n as f64 } else { t_end - t_start };
            (Some(w), None)
        }
        EdgeBankVariant::Threshold => {
            let k = threshold_k.unwrap_or(1);
            (None, Some(k))
        }
    };

    let retained: HashSet<(usize, usize)> = pair_store
        .iter()
        .filter(|(_, s)| match variant {
            EdgeBankVariant::Infinite => true,
            EdgeBankVariant::TimeWindowTestSpan | EdgeBankVariant::TimeWindowRepeat => {
                s.last_seen >= t_end - window.unwrap()
            }
            EdgeBankVariant::Threshold => s.count > threshold.unwrap(),
        })
        .map(|(k, _)| *k)
        .collect();

    Ok(EdgeMemory {
        variant,
        pair_store,
        window,
        threshold_k: threshold,
        retained,
    })
}

impl EdgeMemory {
    pub fn contains(&self, u: usize, v: usize) -> bool {
        self.retained.contains(&key(u, v))
    }

    pub fn retained_len(&self) -> usize {
        self.retained.len()
    }
}

/// 1 iff the unordered query pair is retained; deterministic with zero
/// variance across repeated evaluation.
pub fn edgebank_predict(memory: &EdgeMemory, queries: &[(usize, usize, f64)]) -> Vec<u8> {
    queries
        .iter()
        .map(|&(u, v, _)| u8::from(memory.contains(u, v)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(u: usize, v: usize, t: f64) -> Event {
        Event {
            source: u,
            destination: v,
            timestamp: t,
            link_features: vec![],
            label: None,
        }
    }

    #[test]
    fn infinite_stores_unordered_deduplicated_pairs() {
        let events = vec![ev(0, 1, 0.0), ev(1, 0, 1.0), ev(2, 3, 2.0)];
        let mem = build_memory(EdgeBankVariant::Infinite, &events, None, None).unwrap();
        assert_eq!(mem.retained_len(), 2);
        assert!(mem.contains(0, 1));
        assert!(mem.contains(1, 0));
        assert!(mem.contains(3, 2));
        assert!(!mem.contains(0, 2));
        assert_eq!(mem.pair_store[&(0, 1)].count, 2);
    }

    #[test]
    fn test_span_window_drops_stale_pairs() {
        let events = vec![ev(0, 1, 0.0), ev(2, 3, 100.0)];
        let mem =
            build_memory(EdgeBankVariant::TimeWindowTestSpan, &events, Some(10.0), None).unwrap();
        assert!(mem.contains(2, 3));
        assert!(!mem.contains(0, 1));
    }

    #[test]
    fn threshold_keeps_pairs_seen_more_than_k_times() {
        let events = vec![ev(0, 1, 0.0), ev(0, 1, 1.0), ev(1, 0, 2.0), ev(2, 3, 3.0)];
        let mem = build_memory(EdgeBankVariant::Threshold, &events, None, Some(2)).unwrap();
        assert!(mem.contains(0, 1)); // 3 occurrences > 2
        assert!(!mem.contains(2, 3)); // 1 occurrence
    }

    #[test]
    fn repeat_window_uses_mean_gap_of_recurring_pairs() {
        // pair (0,1) recurs with gaps 1,1 (mean 1); pair (2,3) recurs with gap 5
        // window = mean(1, 5) = 3; t_end = 20
        let events = vec![
            ev(0, 1, 0.0),
            ev(0, 1, 1.0),
            ev(0, 1, 2.0),
            ev(2, 3, 15.0),
            ev(4, 5, 16.0),
            ev(2, 3, 20.0),
        ];
        let mem = build_memory(EdgeBankVariant::TimeWindowRepeat, &events, None, None).unwrap();
        assert_eq!(mem.window, Some(3.0));
        assert!(mem.contains(2, 3)); // last seen 20 >= 17
        assert!(!mem.contains(0, 1)); // last seen 2 < 17
        assert!(!mem.contains(4, 5)); // last seen 16 < 17
    }

    #[test]
    fn predictions_are_membership_and_symmetric() {
        let events = vec![ev(0, 1, 0.0)];
        let mem = build_memory(EdgeBankVariant::Infinite, &events, None, None).unwrap();
        let preds = edgebank_predict(&mem, &[(0, 1, 5.0), (1, 0, 5.0), (0, 2, 5.0)]);
        assert_eq!(preds, vec![1, 1, 0]);
    }

    #[test]
    fn threshold_positives_are_a_subset_of_infinite() {
        let mut events = Vec::new();
        let mut t = 0.0;
        for i in 0..40 {
            t += 1.0;
            events.push(ev(i % 7, (i * 3 + 1) % 7, t));
        }
        let inf = build_memory(EdgeBankVariant::Infinite, &events, None, None).unwrap();
        let th = build_memory(EdgeBankVariant::Threshold, &events, None, Some(1)).unwrap();
        for u in 0..7 {
            for v in 0..7 {
                if th.contains(u, v) {
                    assert!(inf.contains(u, v));
                }
            }
        }
    }

    #[test]
    fn predictions_match_stream_rescan_oracle() {
        use crate::autodiff::rng::{RngStream, StreamId};
        let mut rng = RngStream::new(14, StreamId::Synthesis);
        let mut events = Vec::new();
        let mut t = 0.0;
        for _ in 0..500 {
            t += rng.unit();
            events.push(ev(rng.below(20), rng.below(20), t));
        }
        let t_end = events.last().unwrap().timestamp;
        let test_duration = 0.3 * (t_end - events[0].timestamp);

        for variant in EdgeBankVariant::all() {
            let mem = build_memory(variant, &events, Some(test_duration), Some(1)).unwrap();
            for _ in 0..500 {
                let (u, v) = (rng.below(20), rng.below(20));
                let got = edgebank_predict(&mem, &[(u, v, t_end + 1.0)])[0];
                // oracle: re-scan the stream applying the variant rule directly
                let k = key(u, v);
                let occurrences: Vec<f64> = events
                    .iter()
                    .filter(|e| key(e.source, e.destination) == k)
                    .map(|e| e.timestamp)
                    .collect();
                let want = match variant {
                    EdgeBankVariant::Infinite => !occurrences.is_empty(),
                    EdgeBankVariant::Threshold => occurrences.len() > 1,
                    EdgeBankVariant::TimeWindowTestSpan => occurrences
                        .last()
                        .is_some_and(|&last| last >= t_end - test_duration),
                    EdgeBankVariant::TimeWindowRepeat => occurrences
                        .last()
                        .is_some_and(|&last| last >= t_end - mem.window.unwrap()),
                };
                assert_eq!(got == 1, want, "variant {variant:?} pair {u},{v}");
            }
        }
    }

    #[test]
    fn missing_variant_parameter_is_an_error() {
        let events = vec![ev(0, 1, 0.0)];
        assert!(build_memory(EdgeBankVariant::TimeWindowTestSpan, &events, None, None).is_err());
    }
}
