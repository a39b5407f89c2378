//! Exact single-condition posteriors for small problems.
//!
//! Two independently coded routes: brute-force enumeration of all latent
//! configurations, and a scaled forward-backward recursion. They must agree
//! to near machine precision; the Gibbs sampler is validated against them.

use crate::chain::{chain_logdensity, ChainParams, LatentChain};
use crate::dist::{log_sum_exp2, zi_logpmf};
use crate::inference::EmissionParams;
use crate::{Error, Result};
use std::ops::Range;

fn emission_loglik(
    counts: &[Vec<u32>],
    emissions: &EmissionParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if counts.len() != emissions.replicates.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} replicate columns but {} replicate parameter sets",
            counts.len(),
            emissions.replicates.len()
        )));
    }
    let m = counts.first().map(|c| c.len()).unwrap_or(0);
    let mut l0 = vec![0.0; m];
    let mut l1 = vec![0.0; m];
    for (col, rep) in counts.iter().zip(&emissions.replicates) {
        if col.len() != m {
            return Err(Error::DimensionMismatch(
                "replicate columns differ in length".into(),
            ));
        }
        for (i, &y) in col.iter().enumerate() {
            l0[i] += zi_logpmf(y, &rep.pi, &rep.background);
            l1[i] += rep.signal.logpmf(y);
        }
    }
    Ok((l0, l1))
}

/// Exact per-bin P(X = 1 | Y) by summing the joint over all 2^M latent
/// configurations. Only feasible for M <= 14.
pub fn exact_posterior(
    counts: &[Vec<u32>],
    segments: &[Range<usize>],
    emissions: &EmissionParams,
    chain: &ChainParams,
) -> Result<Vec<f64>> {
    let (l0, l1) = emission_loglik(counts, emissions)?;
    let m = l0.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    if m > 14 {
        return Err(Error::InvalidParameter(format!(
            "exact enumeration is limited to 14 bins, got {m}"
        )));
    }
    let mut log_num = vec![f64::NEG_INFINITY; m];
    let mut log_total = f64::NEG_INFINITY;
    let mut states = vec![0u8; m];
    for mask in 0u32..1 << m {
        for (i, s) in states.iter_mut().enumerate() {
            *s = ((mask >> i) & 1) as u8;
        }
        let latent = LatentChain::with_segments(states.clone(), segments.to_vec())?;
        let mut lj = chain_logdensity(&latent, chain);
        for i in 0..m {
            lj += if states[i] == 1 { l1[i] } else { l0[i] };
        }
        log_total = log_sum_exp2(log_total, lj);
        for i in 0..m {
            if states[i] == 1 {
                log_num[i] = log_sum_exp2(log_num[i], lj);
            }
        }
    }
    Ok(log_num
        .into_iter()
        .map(|ln| (ln - log_total).exp())
        .collect())
}

/// Exact per-bin P(X = 1 | Y) by a scaled forward-backward recursion over
/// each segment. Works at any M; kept algorithmically independent of
/// [`exact_posterior`] as a cross-check.
pub fn forward_backward(
    counts: &[Vec<u32>],
    segments: &[Range<usize>],
    emissions: &EmissionParams,
    chain: &ChainParams,
) -> Result<Vec<f64>> {
    let (l0, l1) = emission_loglik(counts, emissions)?;
    let m = l0.len();
    let mut posterior = vec![0.0; m];
    let p1 = chain.stationary();
    let init = [1.0 - p1, p1];
    let trans = [
        [1.0 - chain.q0(), chain.q0()],
        [1.0 - chain.q1(), chain.q1()],
    ];
    for seg in segments {
        let n = seg.len();
        // emission weights normalized per bin so scaling stays in range
        let mut e = vec![[0.0f64; 2]; n];
        for (k, i) in seg.clone().enumerate() {
            let mx = l0[i].max(l1[i]);
            e[k] = [(l0[i] - mx).exp(), (l1[i] - mx).exp()];
        }
        let mut alpha = vec![[0.0f64; 2]; n];
        let mut scale = vec![0.0f64; n];
        alpha[0] = [init[0] * e[0][0], init[1] * e[0][1]];
        scale[0] = alpha[0][0] + alpha[0][1];
        alpha[0][0] /= scale[0];
        alpha[0][1] /= scale[0];
        for k in 1..n {
            for j in 0..2 {
                alpha[k][j] =
                    (alpha[k - 1][0] * trans[0][j] + alpha[k - 1][1] * trans[1][j]) * e[k][j];
            }
            scale[k] = alpha[k][0] + alpha[k][1];
            alpha[k][0] /= scale[k];
            alpha[k][1] /= scale[k];
        }
        let mut beta = [1.0f64, 1.0];
        posterior[seg.start + n - 1] = alpha[n - 1][1];
        for k in (0..n - 1).rev() {
            let mut next = [0.0f64; 2];
            for i in 0..2 {
                next[i] = (trans[i][0] * e[k + 1][0] * beta[0]
                    + trans[i][1] * e[k + 1][1] * beta[1])
                    / scale[k + 1];
            }
            beta = next;
            let g1 = alpha[k][1] * beta[1];
            let g0 = alpha[k][0] * beta[0];
            posterior[seg.start + k] = g1 / (g0 + g1);
        }
    }
    Ok(posterior)
}
