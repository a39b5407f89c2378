//! The stationary two-state Markov chain over latent enrichment states.
//!
//! The joint density of a chain of length M factorizes into an initial-state
//! term drawn from the stationary distribution and transition factors, so the
//! marginal enrichment probability is the same at every position. Chains are
//! segmented: every chromosome (and every gap left by excluded regions)
//! restarts an independent segment with its own initial-state term.

use crate::{Error, Result};
use rand::Rng;
use std::ops::Range;

/// Transition probabilities of the binary chain.
///
/// `q0` is P(next = 1 | current = 0) and `q1` is P(next = 1 | current = 1).
/// Both live in the open interval (0, 1); the ends are rejected rather than
/// clamped because the log-density degenerates there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainParams {
    q0: f64,
    q1: f64,
}

impl ChainParams {
    pub fn new(q0: f64, q1: f64) -> Result<Self> {
        for (name, v) in [("q0", q0), ("q1", q1)] {
            if !v.is_finite() || v <= 0.0 || v >= 1.0 {
                return Err(Error::InvalidParameter(format!(
                    "chain {name} must lie in (0, 1), got {v}"
                )));
            }
        }
        Ok(Self { q0, q1 })
    }

    pub fn q0(&self) -> f64 {
        self.q0
    }

    pub fn q1(&self) -> f64 {
        self.q1
    }

    /// P(next = `to` | current = `from`).
    pub fn transition(&self, from: u8, to: u8) -> f64 {
        let q = if from == 1 { self.q1 } else { self.q0 };
        if to == 1 {
            q
        } else {
            1.0 - q
        }
    }

    /// Stationary probability of state 1: q0 / (q0 + 1 - q1).
    pub fn stationary(&self) -> f64 {
        self.q0 / (self.q0 + 1.0 - self.q1)
    }
}

/// Stationary probability of enrichment under `q`.
pub fn stationary_prob(q: &ChainParams) -> f64 {
    q.stationary()
}

/// Joint-probability parameterization of the same chain.
///
/// `delta11` = P(X_m=1, X_{m+1}=1) and `delta00` = P(X_m=0, X_{m+1}=0); the
/// off-diagonal cells are equal by stationarity, `(1 - delta11 - delta00)/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaParams {
    delta11: f64,
    delta00: f64,
}

impl DeltaParams {
    pub fn new(delta11: f64, delta00: f64) -> Result<Self> {
        for (name, v) in [("delta11", delta11), ("delta00", delta00)] {
            if !v.is_finite() || v <= 0.0 || v >= 1.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in (0, 1), got {v}"
                )));
            }
        }
        if delta11 + delta00 >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "delta11 + delta00 must be < 1 (off-diagonal mass would vanish), got {}",
                delta11 + delta00
            )));
        }
        Ok(Self { delta11, delta00 })
    }

    pub fn delta11(&self) -> f64 {
        self.delta11
    }

    pub fn delta00(&self) -> f64 {
        self.delta00
    }

    pub fn delta10(&self) -> f64 {
        (1.0 - self.delta11 - self.delta00) / 2.0
    }

    pub fn delta01(&self) -> f64 {
        self.delta10()
    }

    /// Marginal P(X=1) = delta11 + delta10.
    pub fn delta1(&self) -> f64 {
        self.delta11 + self.delta10()
    }

    pub fn delta0(&self) -> f64 {
        1.0 - self.delta1()
    }
}

/// Convert joint-cell probabilities to transition probabilities via
/// q_{i,j} = delta_{i,j} / delta_i.
pub fn delta_to_q(d: &DeltaParams) -> Result<ChainParams> {
    ChainParams::new(d.delta01() / d.delta0(), d.delta11() / d.delta1())
}

/// Inverse of [`delta_to_q`]: delta_{i,j} = P(X=i) q_{i,j}.
pub fn q_to_delta(q: &ChainParams) -> Result<DeltaParams> {
    let p1 = q.stationary();
    DeltaParams::new(p1 * q.q1(), (1.0 - p1) * (1.0 - q.q0()))
}

/// A realized binary state sequence split into independent segments.
///
/// Segments are half-open index ranges partitioning `0..len` in order; no
/// transition factor ever spans a segment boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentChain {
    states: Vec<u8>,
    segments: Vec<Range<usize>>,
}

impl LatentChain {
    /// A chain made of a single segment.
    pub fn single_segment(states: Vec<u8>) -> Result<Self> {
        let len = states.len();
        Self::with_segments(states, vec![0..len])
    }

    pub fn with_segments(states: Vec<u8>, segments: Vec<Range<usize>>) -> Result<Self> {
        if states.iter().any(|&s| s > 1) {
            return Err(Error::InvalidParameter(
                "chain states must be 0 or 1".into(),
            ));
        }
        let mut expect = 0usize;
        for seg in &segments {
            if seg.start != expect || seg.end <= seg.start {
                return Err(Error::InvalidParameter(format!(
                    "segments must be nonempty and partition 0..{} in order",
                    states.len()
                )));
            }
            expect = seg.end;
        }
        if expect != states.len() {
            return Err(Error::InvalidParameter(format!(
                "segments cover 0..{expect} but chain has length {}",
                states.len()
            )));
        }
        Ok(Self { states, segments })
    }

    pub fn states(&self) -> &[u8] {
        &self.states
    }

    pub fn segments(&self) -> &[Range<usize>] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Pair counts n_{i,j} within segments, plus the per-segment first-state
/// tallies the initial terms of the joint density need.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TransitionCounts {
    pub n11: u64,
    pub n10: u64,
    pub n01: u64,
    pub n00: u64,
    /// Number of segments whose first state is 1 (resp. 0).
    pub first_one: u64,
    pub first_zero: u64,
}

impl TransitionCounts {
    pub fn total_pairs(&self) -> u64 {
        self.n11 + self.n10 + self.n01 + self.n00
    }
}

/// Count state pairs within each segment; pairs never straddle boundaries.
pub fn transition_counts(chain: &LatentChain) -> TransitionCounts {
    transition_counts_slices(chain.states(), chain.segments())
}

/// Allocation-free variant over raw state and segment slices.
pub fn transition_counts_slices(states: &[u8], segments: &[Range<usize>]) -> TransitionCounts {
    let mut c = TransitionCounts::default();
    for seg in segments {
        let states = &states[seg.clone()];
        if states[0] == 1 {
            c.first_one += 1;
        } else {
            c.first_zero += 1;
        }
        for w in states.windows(2) {
            match (w[0], w[1]) {
                (1, 1) => c.n11 += 1,
                (1, 0) => c.n10 += 1,
                (0, 1) => c.n01 += 1,
                _ => c.n00 += 1,
            }
        }
    }
    c
}

/// Log joint density of the chain: per segment, a stationary initial-state
/// term plus transition factors.
pub fn chain_logdensity(chain: &LatentChain, q: &ChainParams) -> f64 {
    let c = transition_counts(chain);
    logdensity_from_counts(&c, q)
}

/// Same density evaluated from precomputed counts.
pub fn logdensity_from_counts(c: &TransitionCounts, q: &ChainParams) -> f64 {
    let p1 = q.stationary();
    c.first_one as f64 * p1.ln()
        + c.first_zero as f64 * (1.0 - p1).ln()
        + c.n11 as f64 * q.q1().ln()
        + c.n10 as f64 * (1.0 - q.q1()).ln()
        + c.n01 as f64 * q.q0().ln()
        + c.n00 as f64 * (1.0 - q.q0()).ln()
}

/// Simulate a single-segment chain of length `m`: the first state from the
/// stationary distribution, the rest by the transition probabilities.
pub fn sample_chain<R: Rng + ?Sized>(m: usize, q: &ChainParams, rng: &mut R) -> LatentChain {
    let mut states = Vec::with_capacity(m);
    if m > 0 {
        let first = u8::from(rng.random::<f64>() < q.stationary());
        states.push(first);
        for i in 1..m {
            let p = if states[i - 1] == 1 { q.q1() } else { q.q0() };
            states.push(u8::from(rng.random::<f64>() < p));
        }
    }
    LatentChain::single_segment(states).expect("states are binary by construction")
}

/// Empirical conditional frequencies of enrichment given the previous bin:
/// `(f11, f10)` = (n11/(n11+n10), n01/(n01+n00)). A side with no observed
/// predecessor of that state is reported as `None`.
pub fn conditional_frequencies(calls: &[u8]) -> (Option<f64>, Option<f64>) {
    let mut n11 = 0u64;
    let mut n10 = 0u64;
    let mut n01 = 0u64;
    let mut n00 = 0u64;
    for w in calls.windows(2) {
        match (w[0] != 0, w[1] != 0) {
            (true, true) => n11 += 1,
            (true, false) => n10 += 1,
            (false, true) => n01 += 1,
            (false, false) => n00 += 1,
        }
    }
    let f11 = (n11 + n10 > 0).then(|| n11 as f64 / (n11 + n10) as f64);
    let f10 = (n01 + n00 > 0).then(|| n01 as f64 / (n01 + n00) as f64);
    (f11, f10)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain_from_bits(mask: u32, m: usize) -> LatentChain {
        let states: Vec<u8> = (0..m).map(|i| ((mask >> i) & 1) as u8).collect();
        LatentChain::single_segment(states).unwrap()
    }

    #[test]
    fn transition_counts_by_hand() {
        let c = transition_counts(&LatentChain::single_segment(vec![1, 1, 0, 0, 1]).unwrap());
        assert_eq!((c.n11, c.n10, c.n01, c.n00), (1, 1, 1, 1));
        assert_eq!((c.first_one, c.first_zero), (1, 0));

        let c = transition_counts(&LatentChain::single_segment(vec![0, 0, 0]).unwrap());
        assert_eq!((c.n11, c.n10, c.n01, c.n00), (0, 0, 0, 2));

        // two segments of length 2: no cross-segment pair
        let c = transition_counts(
            &LatentChain::with_segments(vec![1, 0, 0, 1], vec![0..2, 2..4]).unwrap(),
        );
        assert_eq!((c.n11, c.n10, c.n01, c.n00), (0, 1, 1, 0));
        assert_eq!((c.first_one, c.first_zero), (1, 1));
    }

    #[test]
    fn pair_count_totals_match_segment_lengths() {
        let chain = LatentChain::with_segments(vec![1, 0, 1, 1, 0, 0, 1], vec![0..3, 3..7]).unwrap();
        let c = transition_counts(&chain);
        assert_eq!(c.total_pairs(), (3 - 1) + (4 - 1));
    }

    #[test]
    fn logdensity_single_bin_is_initial_term() {
        let q = ChainParams::new(0.3, 0.7).unwrap();
        let chain = LatentChain::single_segment(vec![1]).unwrap();
        assert!((chain_logdensity(&chain, &q) - q.stationary().ln()).abs() < 1e-14);
    }

    #[test]
    fn logdensity_normalizes_by_enumeration() {
        let q = ChainParams::new(0.3, 0.7).unwrap();
        let m = 10;
        let total: f64 = (0u32..1 << m)
            .map(|mask| chain_logdensity(&chain_from_bits(mask, m), &q).exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-12, "total={total}");
    }

    #[test]
    fn enumerated_marginals_are_stationary() {
        // the structural claim: P(X_m = 1) is the same for every position
        for (q0, q1) in [(0.3, 0.7), (0.002, 0.94), (0.5, 0.5), (0.8, 0.2)] {
            let q = ChainParams::new(q0, q1).unwrap();
            let m = 10;
            let mut marg = vec![0.0; m];
            for mask in 0u32..1 << m {
                let p = chain_logdensity(&chain_from_bits(mask, m), &q).exp();
                for (i, slot) in marg.iter_mut().enumerate() {
                    if (mask >> i) & 1 == 1 {
                        *slot += p;
                    }
                }
            }
            for (i, &p) in marg.iter().enumerate() {
                assert!(
                    (p - q.stationary()).abs() < 1e-12,
                    "m={i}: {p} vs {}",
                    q.stationary()
                );
            }
        }
    }

    #[test]
    fn markov_property_holds_under_enumeration() {
        // P(X_m | X_{-m}) computed from the joint equals the neighbor-only
        // conditional for every configuration of the others.
        let q = ChainParams::new(0.23, 0.81).unwrap();
        let m = 8;
        let joint: Vec<f64> = (0u32..1 << m)
            .map(|mask| chain_logdensity(&chain_from_bits(mask, m), &q).exp())
            .collect();
        for pos in 0..m {
            for rest in 0u32..1 << (m - 1) {
                // splice `rest` around position `pos`
                let low = rest & ((1 << pos) - 1);
                let high = (rest >> pos) << (pos + 1);
                let with0 = high | low;
                let with1 = with0 | (1 << pos);
                let denom = joint[with0 as usize] + joint[with1 as usize];
                let p_full = joint[with1 as usize] / denom;

                // neighbor-only conditional
                let p1 = q.stationary();
                let mut w1 = 1.0;
                let mut w0 = 1.0;
                if pos > 0 {
                    let left = ((with0 >> (pos - 1)) & 1) as u8;
                    w1 *= q.transition(left, 1);
                    w0 *= q.transition(left, 0);
                } else {
                    w1 *= p1;
                    w0 *= 1.0 - p1;
                }
                if pos + 1 < m {
                    let right = ((with0 >> (pos + 1)) & 1) as u8;
                    w1 *= q.transition(1, right);
                    w0 *= q.transition(0, right);
                }
                let p_local = w1 / (w1 + w0);
                assert!(
                    (p_full - p_local).abs() < 1e-12,
                    "pos={pos} rest={rest}: {p_full} vs {p_local}"
                );
            }
        }
    }

    #[test]
    fn stationary_prob_known_values() {
        let q = ChainParams::new(0.002, 0.940).unwrap();
        assert!((stationary_prob(&q) - 0.03225806451612903).abs() < 1e-15);
        let q = ChainParams::new(0.5, 0.5).unwrap();
        assert!((stationary_prob(&q) - 0.5).abs() < 1e-15);
        let q = ChainParams::new(0.003, 0.866).unwrap();
        assert!((stationary_prob(&q) - 0.021897810218978103).abs() < 1e-15);
    }

    #[test]
    fn delta_uniform_table() {
        let d = DeltaParams::new(0.25, 0.25).unwrap();
        assert!((d.delta10() - 0.25).abs() < 1e-15);
        assert!((d.delta1() - 0.5).abs() < 1e-15);
        let q = delta_to_q(&d).unwrap();
        assert!((q.q0() - 0.5).abs() < 1e-15);
        assert!((q.q1() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn delta_boundary_rejected() {
        assert!(DeltaParams::new(0.5, 0.5).is_err());
        assert!(DeltaParams::new(0.7, 0.4).is_err());
        assert!(DeltaParams::new(0.0, 0.3).is_err());
    }

    #[test]
    fn q_boundaries_rejected_not_clamped() {
        assert!(ChainParams::new(0.0, 0.5).is_err());
        assert!(ChainParams::new(0.5, 1.0).is_err());
        // the iSeq constraint q1 + q0 = 1 is NOT imposed
        assert!(ChainParams::new(0.3, 0.5).is_ok());
        assert!(ChainParams::new(0.9, 0.9).is_ok());
    }

    #[test]
    fn near_absorbing_chain_stays_in_first_state() {
        let q = ChainParams::new(1e-12, 1.0 - 1e-12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chain = sample_chain(1000, &q, &mut rng);
        let first = chain.states()[0];
        assert!(chain.states().iter().all(|&s| s == first));
    }

    #[test]
    fn sampled_chain_matches_stationary_frequency() {
        let q = ChainParams::new(0.02, 0.5).unwrap();
        let m = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let chain = sample_chain(m, &q, &mut rng);
        let freq = chain.states().iter().map(|&s| s as f64).sum::<f64>() / m as f64;
        let p = q.stationary();
        // standard error inflated by the chain's integrated autocorrelation
        let rho = q.q1() - q.q0();
        let tau = (1.0 + rho) / (1.0 - rho);
        let se = (p * (1.0 - p) * tau / m as f64).sqrt();
        assert!((freq - p).abs() < 3.0 * se, "freq={freq}, p={p}, se={se}");
    }

    #[test]
    fn sampled_chain_matches_transition_frequency() {
        let q = ChainParams::new(0.02, 0.5).unwrap();
        let m = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let chain = sample_chain(m, &q, &mut rng);
        let (f11, _) = conditional_frequencies(chain.states());
        let n1 = m as f64 * q.stationary();
        let se = (q.q1() * (1.0 - q.q1()) / n1).sqrt();
        assert!((f11.unwrap() - q.q1()).abs() < 3.0 * se);
    }

    #[test]
    fn conditional_frequencies_by_hand() {
        let (f11, f10) = conditional_frequencies(&[1, 1, 1, 1]);
        assert_eq!(f11, Some(1.0));
        assert_eq!(f10, None);

        // pairs: 01, 10, 01, 10 -> n11=0, n10=2, n01=2, n00=0
        let (f11, f10) = conditional_frequencies(&[0, 1, 0, 1, 0]);
        assert_eq!(f11, Some(0.0));
        assert_eq!(f10, Some(1.0));
    }

    #[test]
    fn conditional_frequencies_recover_chain_params() {
        let q = ChainParams::new(0.002, 0.94).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let chain = sample_chain(1_000_000, &q, &mut rng);
        let (f11, f10) = conditional_frequencies(chain.states());
        assert!((f11.unwrap() - 0.94).abs() < 0.01);
        assert!((f10.unwrap() - 0.002).abs() < 0.0005);
    }

    proptest! {
        #[test]
        fn delta_q_round_trip(q0 in 0.001f64..0.999, q1 in 0.001f64..0.999) {
            let q = ChainParams::new(q0, q1).unwrap();
            let d = q_to_delta(&q).unwrap();
            let back = delta_to_q(&d).unwrap();
            prop_assert!((back.q0() - q0).abs() < 1e-12);
            prop_assert!((back.q1() - q1).abs() < 1e-12);
        }

        #[test]
        fn delta_cells_form_distribution(q0 in 0.001f64..0.999, q1 in 0.001f64..0.999) {
            let q = ChainParams::new(q0, q1).unwrap();
            let d = q_to_delta(&q).unwrap();
            let total = d.delta11() + d.delta00() + d.delta10() + d.delta01();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!((d.delta1() - q.stationary()).abs() < 1e-12);
        }
    }
}
