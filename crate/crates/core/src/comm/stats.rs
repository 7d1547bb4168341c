use serde::{Deserialize, Serialize};

/// Box-plot summary of one link's delivered latencies, seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub link: String,
    pub sent: u64,
    pub dropped: u64,
    /// Delivered (scheduled) packets: `sent − dropped`.
    pub count: u64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

/// Quantile by linear interpolation between closest ranks of a sorted
/// sample (position `p·(n−1)`).
pub fn quartile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

impl LatencyStats {
    /// Summarizes `latencies` (any order). Returns `None` for an empty sample.
    pub fn from_samples(link: &str, sent: u64, dropped: u64, latencies: &[f64]) -> Option<Self> {
        if latencies.is_empty() {
            return None;
        }
        let mut sorted = latencies.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
        Some(Self {
            link: link.to_string(),
            sent,
            dropped,
            count: sorted.len() as u64,
            min: sorted[0],
            q1: quartile(&sorted, 0.25),
            median: quartile(&sorted, 0.5),
            q3: quartile(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
            mean,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_sample_collapses_box() {
        let s = LatencyStats::from_samples("l", 7, 0, &[0.004; 7]).unwrap();
        assert_eq!(
            (s.min, s.q1, s.median, s.q3, s.max, s.mean),
            (0.004, 0.004, 0.004, 0.004, 0.004, 0.004)
        );
    }

    #[test]
    fn odd_count_median() {
        let s = LatencyStats::from_samples("l", 5, 0, &[5e-3, 1e-3, 3e-3, 2e-3, 4e-3]).unwrap();
        assert_eq!(s.median, 3e-3);
        assert_eq!(s.q1, 2e-3);
        assert_eq!(s.q3, 4e-3);
    }

    #[test]
    fn empty_sample_is_no_data() {
        assert!(LatencyStats::from_samples("l", 3, 3, &[]).is_none());
    }

    proptest! {
        #[test]
        fn box_is_ordered(xs in prop::collection::vec(0.0f64..10.0, 1..200)) {
            let s = LatencyStats::from_samples("l", xs.len() as u64, 0, &xs).unwrap();
            prop_assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
            prop_assert!(s.min <= s.mean && s.mean <= s.max + 1e-12);
        }
    }
}
