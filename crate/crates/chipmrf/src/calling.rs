//! Expected-FDR thresholding of posterior probabilities, differential
//! binding, and merging called bins into regions.

use crate::data::CountMatrix;
use crate::{Error, Result};

/// Result of an expected-FDR cut.
#[derive(Debug, Clone, PartialEq)]
pub struct FdrCall {
    /// Indices of called bins, ascending.
    pub called: Vec<usize>,
    /// Posterior probability of the weakest called bin (None if none).
    pub threshold: Option<f64>,
    /// Expected FDR of the returned call set: mean of (1 - prob) over calls.
    pub expected_fdr: f64,
}

impl FdrCall {
    pub fn n_called(&self) -> usize {
        self.called.len()
    }
}

/// Call the largest set of bins whose expected false discovery rate stays at
/// or below `alpha`.
///
/// Bins are ranked by probability descending; the expected FDR of a prefix
/// is the running mean of (1 - probability). Bins tied at the threshold
/// value are included as a whole group if that keeps the expected FDR within
/// `alpha`, otherwise the whole group is excluded, so the call set never
/// depends on how ties happen to be ordered.
pub fn fdr_call(posteriors: &[f64], alpha: f64) -> Result<FdrCall> {
    if !(0.0..1.0).contains(&alpha) || alpha == 0.0 {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if let Some(bad) = posteriors.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidParameter(format!(
            "posterior probability {bad} outside [0, 1]"
        )));
    }
    let mut order: Vec<usize> = (0..posteriors.len()).collect();
    order.sort_by(|&a, &b| {
        posteriors[b]
            .partial_cmp(&posteriors[a])
            .expect("finite probabilities")
            .then(a.cmp(&b))
    });

    let mut best_len = 0usize;
    let mut cum_miss = 0.0;
    let mut i = 0;
    while i < order.len() {
        // advance over the whole tie group
        let value = posteriors[order[i]];
        let mut j = i;
        while j < order.len() && posteriors[order[j]] == value {
            cum_miss += 1.0 - value;
            j += 1;
        }
        if cum_miss / j as f64 <= alpha {
            best_len = j;
        }
        // expected FDR of prefixes is monotone nondecreasing in rank, so
        // once a whole group fails every longer prefix fails too
        else {
            break;
        }
        i = j;
    }

    let mut called: Vec<usize> = order[..best_len].to_vec();
    called.sort_unstable();
    let expected_fdr = if best_len == 0 {
        0.0
    } else {
        order[..best_len]
            .iter()
            .map(|&i| 1.0 - posteriors[i])
            .sum::<f64>()
            / best_len as f64
    };
    let threshold = (best_len > 0).then(|| posteriors[order[best_len - 1]]);
    Ok(FdrCall {
        called,
        threshold,
        expected_fdr,
    })
}

/// Probability that two conditions disagree at a bin:
/// p1 (1 - p2) + (1 - p1) p2.
pub fn differential_prob(p1: f64, p2: f64) -> f64 {
    p1 * (1.0 - p2) + (1.0 - p1) * p2
}

/// Differential-binding call: expected-FDR thresholding of the per-bin
/// disagreement probabilities, with 1 - P(differential) as the false
/// discovery mass.
pub fn call_differential(post1: &[f64], post2: &[f64], alpha: f64) -> Result<FdrCall> {
    if post1.len() != post2.len() {
        return Err(Error::DimensionMismatch(format!(
            "posterior tracks differ in length: {} vs {}",
            post1.len(),
            post2.len()
        )));
    }
    let probs: Vec<f64> = post1
        .iter()
        .zip(post2)
        .map(|(&a, &b)| differential_prob(a, b))
        .collect();
    fdr_call(&probs, alpha)
}

/// What a region call represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallKind {
    Enriched,
    Differential,
}

/// A maximal run of adjacent called bins within one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionCall {
    pub chrom: String,
    pub start: u64,
    pub end: u64,
    /// Bin index range [first, last] inclusive.
    pub bins: (usize, usize),
    pub mean_posterior: f64,
    pub kind: CallKind,
}

/// Merge called bins into regions: consecutive bin indices in the same
/// segment join; segment boundaries always split.
pub fn merge_regions(
    called: &[usize],
    posteriors: &[f64],
    matrix: &CountMatrix,
    kind: CallKind,
) -> Result<Vec<RegionCall>> {
    let bins = matrix.bins();
    let mut regions: Vec<RegionCall> = Vec::new();
    let mut run: Option<(usize, usize, f64)> = None;
    for &idx in called {
        if idx >= bins.len() || idx >= posteriors.len() {
            return Err(Error::DimensionMismatch(format!(
                "called bin {idx} outside the matrix"
            )));
        }
        run = match run {
            Some((first, last, sum))
                if idx == last + 1 && bins[idx].segment == bins[first].segment =>
            {
                Some((first, idx, sum + posteriors[idx]))
            }
            Some((first, last, sum)) => {
                regions.push(region_from_run(first, last, sum, posteriors, matrix, kind));
                Some((idx, idx, posteriors[idx]))
            }
            None => Some((idx, idx, posteriors[idx])),
        };
    }
    if let Some((first, last, sum)) = run {
        regions.push(region_from_run(first, last, sum, posteriors, matrix, kind));
    }
    Ok(regions)
}

fn region_from_run(
    first: usize,
    last: usize,
    sum: f64,
    _posteriors: &[f64],
    matrix: &CountMatrix,
    kind: CallKind,
) -> RegionCall {
    let bins = matrix.bins();
    RegionCall {
        chrom: matrix.chrom_name(bins[first].chrom).to_string(),
        start: bins[first].start,
        end: bins[last].end,
        bins: (first, last),
        mean_posterior: sum / (last - first + 1) as f64,
        kind,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        let call = fdr_call(&[0.99, 0.96, 0.80], 0.05).unwrap();
        assert_eq!(call.called, vec![0, 1]);
        assert!((call.expected_fdr - 0.025).abs() < 1e-12);
        assert_eq!(call.threshold, Some(0.96));
    }

    #[test]
    fn all_certain_calls_everything() {
        let call = fdr_call(&[1.0, 1.0, 1.0], 0.05).unwrap();
        assert_eq!(call.n_called(), 3);
        assert_eq!(call.expected_fdr, 0.0);
    }

    #[test]
    fn uninformative_probabilities_call_nothing() {
        let call = fdr_call(&[0.5; 10], 0.05).unwrap();
        assert_eq!(call.n_called(), 0);
        assert_eq!(call.threshold, None);
        assert_eq!(call.expected_fdr, 0.0);
    }

    #[test]
    fn tie_group_included_or_excluded_whole() {
        // prefix mean with both 0.9 bins: (0.0 + 0.1 + 0.1)/3 = 0.0667 <= 0.07
        let call = fdr_call(&[1.0, 0.9, 0.9, 0.2], 0.07).unwrap();
        assert_eq!(call.called, vec![0, 1, 2]);
        // at alpha = 0.06 the pair of 0.9s cannot be split: only the sure bin
        let call = fdr_call(&[1.0, 0.9, 0.9, 0.2], 0.06).unwrap();
        assert_eq!(call.called, vec![0]);
    }

    #[test]
    fn differential_prob_values() {
        assert_eq!(differential_prob(1.0, 0.0), 1.0);
        assert_eq!(differential_prob(0.5, 0.5), 0.5);
        assert!((differential_prob(0.9, 0.2) - 0.74).abs() < 1e-12);
    }

    #[test]
    fn differential_call_on_certain_tracks() {
        // identical certain tracks: nothing differential
        let call = call_differential(&[1.0, 0.0], &[1.0, 0.0], 0.05).unwrap();
        assert_eq!(call.n_called(), 0);
        // perfectly opposed: everything, with zero expected FDR
        let call = call_differential(&[1.0, 0.0], &[0.0, 1.0], 0.05).unwrap();
        assert_eq!(call.called, vec![0, 1]);
        assert_eq!(call.expected_fdr, 0.0);
    }

    #[test]
    fn merge_adjacent_bins_within_segments() {
        let matrix = CountMatrix::synthetic(vec!["a".into()], vec![vec![0; 12]], 200).unwrap();
        let posteriors = vec![0.9; 12];
        let regions =
            merge_regions(&[3, 4, 5, 9], &posteriors, &matrix, CallKind::Enriched).unwrap();
        assert_eq!(regions.len(), 2);
        assert_eq!(regions[0].bins, (3, 5));
        assert_eq!((regions[0].start, regions[0].end), (600, 1200));
        assert_eq!(regions[1].bins, (9, 9));

        let empty = merge_regions(&[], &posteriors, &matrix, CallKind::Enriched).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn merge_respects_segment_boundaries() {
        // gap between bins 1 and 2 splits the segment
        let matrix = CountMatrix::new(
            vec!["chr1".into()],
            vec![(0, 0, 200), (0, 200, 400), (0, 600, 800), (0, 800, 1000)],
            vec!["a".into()],
            vec![vec![0; 4]],
        )
        .unwrap();
        let posteriors = vec![0.8; 4];
        let regions =
            merge_regions(&[0, 1, 2, 3], &posteriors, &matrix, CallKind::Enriched).unwrap();
        assert_eq!(regions.len(), 2);
        assert_eq!(regions[0].bins, (0, 1));
        assert_eq!(regions[1].bins, (2, 3));
    }

    proptest! {
        #[test]
        fn fdr_never_exceeds_alpha_and_calls_are_maximal(
            probs in proptest::collection::vec(0.0f64..=1.0, 1..200),
            alpha in 0.01f64..0.5,
        ) {
            let call = fdr_call(&probs, alpha).unwrap();
            if !call.called.is_empty() {
                prop_assert!(call.expected_fdr <= alpha + 1e-12);
            }
            // maximality up to the tie rule: adding the next-ranked distinct
            // group must push the expected FDR over alpha
            let mut order: Vec<usize> = (0..probs.len()).collect();
            order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
            let k = call.n_called();
            if k < probs.len() {
                let next_value = probs[order[k]];
                let mut cum: f64 = order[..k].iter().map(|&i| 1.0 - probs[i]).sum();
                let mut j = k;
                while j < order.len() && probs[order[j]] == next_value {
                    cum += 1.0 - next_value;
                    j += 1;
                }
                prop_assert!(cum / j as f64 > alpha);
            }
        }

        #[test]
        fn fdr_call_is_monotone_in_alpha(
            probs in proptest::collection::vec(0.0f64..=1.0, 1..100),
            alpha in 0.01f64..0.4,
            bump in 0.01f64..0.5,
        ) {
            let tight = fdr_call(&probs, alpha).unwrap();
            let loose = fdr_call(&probs, (alpha + bump).min(0.99)).unwrap();
            let tight_set: std::collections::HashSet<_> = tight.called.iter().collect();
            let loose_set: std::collections::HashSet<_> = loose.called.iter().collect();
            prop_assert!(tight_set.is_subset(&loose_set));
        }

        #[test]
        fn differential_prob_symmetric_and_zero_iff_certain_equal(
            p1 in 0.0f64..=1.0,
            p2 in 0.0f64..=1.0,
        ) {
            let d12 = differential_prob(p1, p2);
            let d21 = differential_prob(p2, p1);
            prop_assert!((d12 - d21).abs() < 1e-15);
            if d12 == 0.0 {
                prop_assert!(p1 == p2 && (p1 == 0.0 || p1 == 1.0));
            }
        }
    }
}
