//! Sweep machinery for the Metropolis-within-Gibbs sampler.
//!
//! Update order within one sweep: latent states X (systematic left-to-right
//! scan per segment), inner indicators Z, emission parameters, chain
//! parameters (or the shared-s update in the constrained variant).
//!
//! Per-bin emission log-likelihoods are cached per sweep as lookup tables
//! over the observed count range, so a sweep costs O(M R) table work plus
//! O(M) single-site updates, with no allocation after setup. Z is sampled
//! through its sufficient statistics: every background zero shares the same
//! full-conditional probability, so the number of count-component zeros is
//! one Binomial draw per replicate, distributionally identical to bin-wise
//! draws.
//!
//! Seeding: all generators are ChaCha streams of the one master seed, split
//! by fixed (condition, block) indices. Conditions and replicates are
//! processed in canonical label order, which makes results invariant to the
//! order data columns appear in the input.

use super::{
    draw_beta, standard_normal, ConstrainedChainParams, EmissionParams, Family, ParamDraws,
    ParamSummary, PosteriorSummary, PriorConfig, ReplicateParams, SamplerConfig,
};
use crate::chain::{transition_counts_slices, ChainParams, TransitionCounts};
use crate::data::{CountMatrix, ExperimentDesign};
use crate::dist::{CountDist, NbParams, PoissonParams, ZeroInflation};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;
use std::ops::Range;

const STREAM_X: u64 = 0;
const STREAM_Z: u64 = 1;
const STREAM_EMISSION: u64 = 2;
const STREAM_CHAIN: u64 = 3;
const STREAMS_PER_CONDITION: u64 = 8;
const STREAM_SHARED_S: u64 = u64::MAX - 1;

/// How often step sizes adapt during burn-in, in sweeps.
const ADAPT_INTERVAL: usize = 50;

#[derive(Debug, Clone, Copy)]
pub(crate) struct StepState {
    pub step: f64,
    accepted: u32,
    attempted: u32,
}

impl StepState {
    fn new(step: f64) -> Self {
        Self {
            step,
            accepted: 0,
            attempted: 0,
        }
    }

    fn record(&mut self, accepted: bool) {
        self.attempted += 1;
        self.accepted += u32::from(accepted);
    }

    fn maybe_adapt(&mut self, low: f64, high: f64) {
        if self.attempted == 0 {
            return;
        }
        let rate = self.accepted as f64 / self.attempted as f64;
        if rate < low {
            self.step *= 0.7;
        } else if rate > high {
            self.step *= 1.4;
        }
        self.step = self.step.clamp(1e-3, 10.0);
        self.accepted = 0;
        self.attempted = 0;
    }

}

fn rate(accepted: u64, attempted: u64) -> f64 {
    if attempted == 0 {
        0.0
    } else {
        accepted as f64 / attempted as f64
    }
}

/// Sufficient statistics of one replicate's emission update.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct EmissionStats {
    /// #{X=0, Z=1} and #{X=0, Z=0}.
    pub z1_count: u64,
    pub z0_count: u64,
    /// Count-component background bins: how many and their total count.
    pub bg_count: u64,
    pub bg_sum: u64,
    pub sig_count: u64,
    pub sig_sum: u64,
}

struct RepState {
    label: String,
    col: usize,
    params: ReplicateParams,
    /// Cached log-pmf tables over 0..=ymax, rebuilt each sweep.
    lp0: Vec<f64>,
    lp1: Vec<f64>,
    /// Count histograms of the current groups (NB family only).
    bg_hist: Vec<u64>,
    sig_hist: Vec<u64>,
    stats: EmissionStats,
    /// Random-walk steps for mu0, phi0, mu1, phi1.
    steps: [StepState; 4],
    accept_totals: [(u64, u64); 4],
}

struct CondState {
    label: String,
    reps: Vec<RepState>,
    x: Vec<u8>,
    llr: Vec<f64>,
    chain: ChainParams,
    counts: TransitionCounts,
    prob_acc: Vec<f64>,
    loglik_emission: f64,
    rng_x: ChaCha8Rng,
    rng_z: ChaCha8Rng,
    rng_em: ChaCha8Rng,
    rng_chain: ChaCha8Rng,
    chain_accept: (u64, u64),
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl CondState {
    fn rebuild_tables(&mut self) {
        for rep in &mut self.reps {
            for y in 0..rep.lp0.len() {
                rep.lp0[y] = crate::dist::zi_logpmf(y as u32, &rep.params.pi, &rep.params.background);
                rep.lp1[y] = rep.params.signal.logpmf(y as u32);
            }
        }
    }

    fn rebuild_llr(&mut self, data: &CountMatrix) {
        self.llr.fill(0.0);
        for rep in &self.reps {
            let col = data.column(rep.col);
            if self.llr.len() >= 1 << 17 {
                const CHUNK: usize = 1 << 14;
                self.llr
                    .par_chunks_mut(CHUNK)
                    .zip(col.par_chunks(CHUNK))
                    .for_each(|(lc, yc)| {
                        for (l, &y) in lc.iter_mut().zip(yc) {
                            *l += rep.lp1[y as usize] - rep.lp0[y as usize];
                        }
                    });
            } else {
                for (l, &y) in self.llr.iter_mut().zip(col) {
                    *l += rep.lp1[y as usize] - rep.lp0[y as usize];
                }
            }
        }
    }

    /// Systematic-scan Direct Gibbs update of the latent states.
    fn sweep_x(&mut self, segments: &[Range<usize>]) {
        let q = &self.chain;
        let p1 = q.stationary();
        let logit_st = p1.ln() - (1.0 - p1).ln();
        let logit_q1 = q.q1().ln() - (1.0 - q.q1()).ln();
        let logit_q0 = q.q0().ln() - (1.0 - q.q0()).ln();
        let d_right1 = q.q1().ln() - q.q0().ln();
        let d_right0 = (1.0 - q.q1()).ln() - (1.0 - q.q0()).ln();
        for seg in segments {
            for m in seg.clone() {
                let left = if m == seg.start {
                    logit_st
                } else if self.x[m - 1] == 1 {
                    logit_q1
                } else {
                    logit_q0
                };
                let right = if m + 1 == seg.end {
                    0.0
                } else if self.x[m + 1] == 1 {
                    d_right1
                } else {
                    d_right0
                };
                let delta = left + right + self.llr[m];
                let p = 1.0 / (1.0 + (-delta).exp());
                self.x[m] = u8::from(self.rng_x.random::<f64>() < p);
            }
        }
    }

    /// Group the data by current latent state, draw the Z sufficient
    /// statistic, and accumulate the emission log-likelihood of the sweep.
    fn collect_stats_and_sample_z(&mut self, data: &CountMatrix) {
        self.loglik_emission = 0.0;
        let x = &self.x;
        let mut loglik = 0.0;
        for rep in &mut self.reps {
            let col = data.column(rep.col);
            let nb = matches!(rep.params.background, CountDist::Nb(_));
            if nb {
                rep.bg_hist.fill(0);
                rep.sig_hist.fill(0);
            }
            let mut n0_zero = 0u64;
            let mut n0_pos = 0u64;
            let mut sum0_pos = 0u64;
            let mut n1 = 0u64;
            let mut sum1 = 0u64;
            for (m, &y) in col.iter().enumerate() {
                if x[m] == 0 {
                    if y == 0 {
                        n0_zero += 1;
                    } else {
                        n0_pos += 1;
                        sum0_pos += y as u64;
                        if nb {
                            rep.bg_hist[y as usize] += 1;
                        }
                    }
                    loglik += rep.lp0[y as usize];
                } else {
                    n1 += 1;
                    sum1 += y as u64;
                    if nb {
                        rep.sig_hist[y as usize] += 1;
                    }
                    loglik += rep.lp1[y as usize];
                }
            }
            // all background zeros share one full-conditional probability,
            // so their Z values reduce to a Binomial count
            let p_z = super::z_full_conditional(0, 0, &rep.params.pi, &rep.params.background)
                .expect("x = 0 by construction");
            let z1_zeros = if n0_zero == 0 {
                0
            } else {
                Binomial::new(n0_zero, p_z)
                    .expect("probability in range")
                    .sample(&mut self.rng_z)
            };
            if nb {
                rep.bg_hist[0] = z1_zeros;
            }
            rep.stats = EmissionStats {
                z1_count: n0_pos + z1_zeros,
                z0_count: n0_zero - z1_zeros,
                bg_count: n0_pos + z1_zeros,
                bg_sum: sum0_pos,
                sig_count: n1,
                sig_sum: sum1,
            };
        }
        self.loglik_emission = loglik;
    }

    fn update_emissions(&mut self, priors: &PriorConfig, adapt: bool) {
        for rep in &mut self.reps {
            let (params, decisions) = update_replicate_core(
                &rep.stats,
                &rep.bg_hist,
                &rep.sig_hist,
                &rep.params,
                priors,
                &mut rep.steps,
                &mut self.rng_em,
            );
            rep.params = params;
            for (i, d) in decisions.iter().enumerate() {
                if let Some(acc) = d {
                    rep.accept_totals[i].1 += 1;
                    rep.accept_totals[i].0 += u64::from(*acc);
                }
            }
            if adapt {
                for s in &mut rep.steps {
                    s.maybe_adapt(priors.accept_low, priors.accept_high);
                }
            }
        }
    }
}

/// Shared emission update for one replicate from sufficient statistics.
///
/// Returns the new parameters and, for the four NB Metropolis blocks, the
/// accept/reject decisions (None for the conjugate Poisson family).
pub(crate) fn update_replicate_core<R: Rng + ?Sized>(
    stats: &EmissionStats,
    bg_hist: &[u64],
    sig_hist: &[u64],
    current: &ReplicateParams,
    priors: &PriorConfig,
    steps: &mut [StepState; 4],
    rng: &mut R,
) -> (ReplicateParams, [Option<bool>; 4]) {
    let pi = ZeroInflation::new(draw_beta(
        priors.pi.a + stats.z1_count as f64,
        priors.pi.b + stats.z0_count as f64,
        rng,
    ))
    .expect("beta draw in range");
    let mut decisions = [None; 4];

    match (&current.background, &current.signal) {
        (CountDist::Poisson(_), CountDist::Poisson(_)) => {
            // conjugate Gamma draws, re-drawn jointly until the ordering
            // constraint holds (a draw from the order-truncated posterior)
            let mut background = current.background;
            let mut signal = current.signal;
            for _ in 0..100 {
                let l0 = draw_gamma(
                    priors.rate.shape + stats.bg_sum as f64,
                    priors.rate.rate + stats.bg_count as f64,
                    rng,
                );
                let l1 = draw_gamma(
                    priors.rate.shape + stats.sig_sum as f64,
                    priors.rate.rate + stats.sig_count as f64,
                    rng,
                );
                if l1 > l0 {
                    background = CountDist::Poisson(PoissonParams::new(l0).expect("positive"));
                    signal = CountDist::Poisson(PoissonParams::new(l1).expect("positive"));
                    break;
                }
            }
            let params = ReplicateParams {
                pi,
                background,
                signal,
            };
            (params, decisions)
        }
        (CountDist::Nb(bg), CountDist::Nb(sig)) => {
            let (mut mu0, mut phi0) = (bg.mu(), bg.phi());
            let (mut mu1, mut phi1) = (sig.mu(), sig.phi());
            let n0 = stats.bg_count as f64;
            let s0 = stats.bg_sum as f64;
            let n1 = stats.sig_count as f64;
            let s1 = stats.sig_sum as f64;

            // mu0 | rest, constrained below mu1
            let acc = mh_log_step(
                &mut mu0,
                steps[0].step,
                |v| v < mu1,
                |v| nb_group_loglik(bg_hist, n0, s0, v, phi0) + priors.nb_mean.logpdf(v),
                rng,
            );
            steps[0].record(acc);
            decisions[0] = Some(acc);

            let acc = mh_log_step(
                &mut phi0,
                steps[1].step,
                |_| true,
                |v| nb_group_loglik(bg_hist, n0, s0, mu0, v) + priors.nb_disp.logpdf(v),
                rng,
            );
            steps[1].record(acc);
            decisions[1] = Some(acc);

            // mu1 | rest, constrained above mu0
            let acc = mh_log_step(
                &mut mu1,
                steps[2].step,
                |v| v > mu0,
                |v| nb_group_loglik(sig_hist, n1, s1, v, phi1) + priors.nb_mean.logpdf(v),
                rng,
            );
            steps[2].record(acc);
            decisions[2] = Some(acc);

            let acc = mh_log_step(
                &mut phi1,
                steps[3].step,
                |_| true,
                |v| nb_group_loglik(sig_hist, n1, s1, mu1, v) + priors.nb_disp.logpdf(v),
                rng,
            );
            steps[3].record(acc);
            decisions[3] = Some(acc);

            let params = ReplicateParams {
                pi,
                background: CountDist::Nb(NbParams::new(mu0, phi0).expect("positive")),
                signal: CountDist::Nb(NbParams::new(mu1, phi1).expect("positive")),
            };
            (params, decisions)
        }
        _ => unreachable!("mixed families rejected at construction"),
    }
}

fn draw_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(shape, 1.0 / rate)
        .expect("positive gamma parameters")
        .sample(rng);
    g.max(1e-100)
}

/// One random-walk Metropolis step on the log scale of a positive scalar.
/// `feasible` is checked before evaluating the target (hard constraints
/// auto-reject). The log-scale proposal is symmetric in log space, so the
/// Jacobian ratio `prop/current` enters the acceptance probability.
fn mh_log_step<R: Rng + ?Sized>(
    value: &mut f64,
    step: f64,
    feasible: impl Fn(f64) -> bool,
    log_target: impl Fn(f64) -> f64,
    rng: &mut R,
) -> bool {
    let prop = *value * (step * standard_normal(rng)).exp();
    // the uniform is always consumed so acceptance checks stay reproducible
    let u: f64 = rng.random();
    if !prop.is_finite() || prop <= 0.0 || !feasible(prop) {
        return false;
    }
    let log_ratio = log_target(prop) - log_target(*value) + prop.ln() - value.ln();
    if log_ratio >= 0.0 || u < log_ratio.exp() {
        *value = prop;
        true
    } else {
        false
    }
}

/// NB log-likelihood of a group summarized by a count histogram.
/// The ln Gamma(y+1) term is constant in (mu, phi) and omitted.
fn nb_group_loglik(hist: &[u64], n: f64, sum: f64, mu: f64, phi: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for (y, &h) in hist.iter().enumerate() {
        if h > 0 {
            acc += h as f64 * ln_gamma(y as f64 + phi);
        }
    }
    acc - n * ln_gamma(phi) + sum * (mu.ln() - (mu + phi).ln()) - n * phi * (mu / phi).ln_1p()
}

/// Public wrapper over the shared emission update: sample new emission
/// parameters for one condition from explicit latent states and inner
/// indicators.
pub fn update_emission_params<R: Rng + ?Sized>(
    counts: &[&[u32]],
    x: &[u8],
    z: &super::InnerIndicators,
    current: &EmissionParams,
    priors: &PriorConfig,
    rng: &mut R,
) -> Result<EmissionParams> {
    if counts.len() != current.replicates.len() || z.z.len() != counts.len() {
        return Err(Error::DimensionMismatch(
            "replicate counts, indicators and parameters must align".into(),
        ));
    }
    let mut replicates = Vec::with_capacity(counts.len());
    for ((col, zr), rep) in counts.iter().zip(&z.z).zip(&current.replicates) {
        if col.len() != x.len() || zr.len() != x.len() {
            return Err(Error::DimensionMismatch(
                "per-bin vectors must have equal length".into(),
            ));
        }
        let ymax = col.iter().copied().max().unwrap_or(0) as usize;
        let mut bg_hist = vec![0u64; ymax + 1];
        let mut sig_hist = vec![0u64; ymax + 1];
        let mut stats = EmissionStats::default();
        for (m, (&y, &zi)) in col.iter().zip(zr).enumerate() {
            if x[m] == 0 {
                if zi == 1 {
                    stats.z1_count += 1;
                    stats.bg_count += 1;
                    stats.bg_sum += y as u64;
                    bg_hist[y as usize] += 1;
                } else {
                    stats.z0_count += 1;
                }
            } else {
                stats.sig_count += 1;
                stats.sig_sum += y as u64;
                sig_hist[y as usize] += 1;
            }
        }
        let mut steps = [StepState::new(priors.rw_step); 4];
        let (params, _) =
            update_replicate_core(&stats, &bg_hist, &sig_hist, rep, priors, &mut steps, rng);
        replicates.push(params);
    }
    Ok(EmissionParams { replicates })
}

// ---------------------------------------------------------------------------
// initialization

/// Solve (1-pi) + pi e^{-mean/pi} = zero_fraction for pi by bisection.
/// Returns 1 when the data has no zero excess over a plain Poisson.
pub(crate) fn init_pi(mean: f64, zero_fraction: f64) -> f64 {
    if mean <= 0.0 || zero_fraction <= (-mean).exp() {
        return 1.0;
    }
    let g = |pi: f64| (1.0 - pi) + pi * (-mean / pi).exp() - zero_fraction;
    let (mut lo, mut hi) = (1e-6, 1.0);
    if g(hi) > 0.0 {
        return 1.0;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).clamp(0.01, 1.0)
}

fn group_moments(col: &[u32], x: &[u8], state: u8) -> (f64, f64, f64, u64) {
    let mut n = 0u64;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    let mut zeros = 0u64;
    for (m, &y) in col.iter().enumerate() {
        if x[m] == state {
            n += 1;
            sum += y as f64;
            sumsq += (y as f64) * (y as f64);
            zeros += u64::from(y == 0);
        }
    }
    if n == 0 {
        return (0.0, 0.0, 0.0, 0);
    }
    let mean = sum / n as f64;
    let var = (sumsq / n as f64 - mean * mean).max(0.0);
    (mean, var, zeros as f64 / n as f64, n)
}

/// Method-of-moments warm start for one replicate given the initial states.
pub(crate) fn init_replicate(col: &[u32], x: &[u8], family: Family) -> ReplicateParams {
    let (mean0, var0, zfrac0, n0) = group_moments(col, x, 0);
    let (mean1, var1, _, n1) = group_moments(col, x, 1);
    let pi_hat = if n0 == 0 { 0.9 } else { init_pi(mean0, zfrac0) };
    let bg_mean = if n0 == 0 || mean0 <= 0.0 {
        0.1
    } else {
        (mean0 / pi_hat).max(1e-3)
    };
    let sig_mean_raw = if n1 == 0 { bg_mean * 2.0 + 1.0 } else { mean1 };
    let sig_mean = sig_mean_raw.max(bg_mean * 1.5 + 0.1);
    let pi = ZeroInflation::new(pi_hat).expect("clamped");
    match family {
        Family::ZipPoisson => ReplicateParams::new(
            pi,
            CountDist::Poisson(PoissonParams::new(bg_mean).expect("positive")),
            CountDist::Poisson(PoissonParams::new(sig_mean).expect("positive")),
        )
        .expect("ordering enforced"),
        Family::ZinbNb => {
            // excess variance beyond the zero-inflated Poisson gives phi
            let excess0 = var0 - pi_hat * bg_mean - pi_hat * (1.0 - pi_hat) * bg_mean * bg_mean;
            let phi0 = if excess0 > 1e-9 {
                (pi_hat * bg_mean * bg_mean / excess0).clamp(0.05, 1e4)
            } else {
                100.0
            };
            let excess1 = var1 - sig_mean;
            let phi1 = if excess1 > 1e-9 {
                (sig_mean * sig_mean / excess1).clamp(0.05, 1e4)
            } else {
                100.0
            };
            ReplicateParams::new(
                pi,
                CountDist::Nb(NbParams::new(bg_mean, phi0).expect("positive")),
                CountDist::Nb(NbParams::new(sig_mean, phi1).expect("positive")),
            )
            .expect("ordering enforced")
        }
    }
}

/// Initial latent states: pooled counts thresholded at their 95th
/// percentile, with both groups forced nonempty.
pub(crate) fn init_states(data: &CountMatrix, cols: &[usize]) -> Vec<u8> {
    let m = data.n_bins();
    let mut pooled = vec![0u64; m];
    for &c in cols {
        for (p, &y) in pooled.iter_mut().zip(data.column(c)) {
            *p += y as u64;
        }
    }
    let mut sorted = pooled.clone();
    sorted.sort_unstable();
    let thr = sorted[((m - 1) as f64 * 0.95) as usize];
    let mut x: Vec<u8> = pooled.iter().map(|&p| u8::from(p > thr)).collect();
    if x.iter().all(|&v| v == 0) {
        let argmax = pooled
            .iter()
            .enumerate()
            .max_by_key(|(_, &v)| v)
            .map(|(i, _)| i)
            .unwrap_or(0);
        x[argmax] = 1;
    }
    if x.iter().all(|&v| v == 1) {
        let argmin = pooled
            .iter()
            .enumerate()
            .min_by_key(|(_, &v)| v)
            .map(|(i, _)| i)
            .unwrap_or(0);
        x[argmin] = 0;
    }
    x
}

fn init_chain_from_states(x: &[u8], segments: &[Range<usize>]) -> ChainParams {
    let c = transition_counts_slices(x, segments);
    let q1 = (c.n11 as f64 + 1.0) / ((c.n11 + c.n10) as f64 + 2.0);
    let q0 = (c.n01 as f64 + 1.0) / ((c.n01 + c.n00) as f64 + 2.0);
    ChainParams::new(q0, q1).expect("smoothed frequencies stay inside (0,1)")
}

fn build_condition(
    data: &CountMatrix,
    label: &str,
    rep_labels: &[String],
    cols: &[usize],
    family: Family,
    priors: &PriorConfig,
    seed: u64,
    cond_idx: usize,
    fixed: Option<(&EmissionParams, &ChainParams)>,
) -> Result<CondState> {
    let m = data.n_bins();
    let x = init_states(data, cols);
    let mut reps = Vec::with_capacity(cols.len());
    for (r, &col_idx) in cols.iter().enumerate() {
        let col = data.column(col_idx);
        let params = match fixed {
            Some((em, _)) => {
                if em.replicates.len() != cols.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "condition {label:?}: {} replicate parameter sets for {} columns",
                        em.replicates.len(),
                        cols.len()
                    )));
                }
                em.replicates[r]
            }
            None => init_replicate(col, &x, family),
        };
        let ymax = col.iter().copied().max().unwrap_or(0) as usize;
        let nb_len = if matches!(family, Family::ZinbNb) {
            ymax + 1
        } else {
            0
        };
        reps.push(RepState {
            label: rep_labels[r].clone(),
            col: col_idx,
            params,
            lp0: vec![0.0; ymax + 1],
            lp1: vec![0.0; ymax + 1],
            bg_hist: vec![0; nb_len],
            sig_hist: vec![0; nb_len],
            stats: EmissionStats::default(),
            steps: [StepState::new(priors.rw_step); 4],
            accept_totals: [(0, 0); 4],
        });
    }
    let chain = match fixed {
        Some((_, q)) => *q,
        None => init_chain_from_states(&x, data.segments()),
    };
    let counts = transition_counts_slices(&x, data.segments());
    let base = cond_idx as u64 * STREAMS_PER_CONDITION;
    Ok(CondState {
        label: label.to_string(),
        reps,
        x,
        llr: vec![0.0; m],
        chain,
        counts,
        prob_acc: vec![0.0; m],
        loglik_emission: 0.0,
        rng_x: stream_rng(seed, base + STREAM_X),
        rng_z: stream_rng(seed, base + STREAM_Z),
        rng_em: stream_rng(seed, base + STREAM_EMISSION),
        rng_chain: stream_rng(seed, base + STREAM_CHAIN),
        chain_accept: (0, 0),
    })
}

// ---------------------------------------------------------------------------
// the main loop

struct RunOutput {
    summary: PosteriorSummary,
}

fn param_names(conds: &[CondState], constrained: bool) -> Vec<String> {
    let mut names = vec!["loglik".to_string()];
    if constrained {
        names.push("s".to_string());
    }
    for cond in conds {
        names.push(format!("q0.{}", cond.label));
        names.push(format!("q1.{}", cond.label));
        for rep in &cond.reps {
            let tag = format!("{}.{}", cond.label, rep.label);
            match rep.params.family() {
                Family::ZipPoisson => {
                    names.push(format!("pi.{tag}"));
                    names.push(format!("lambda0.{tag}"));
                    names.push(format!("lambda1.{tag}"));
                }
                Family::ZinbNb => {
                    names.push(format!("pi.{tag}"));
                    names.push(format!("mu0.{tag}"));
                    names.push(format!("phi0.{tag}"));
                    names.push(format!("mu1.{tag}"));
                    names.push(format!("phi1.{tag}"));
                }
            }
        }
    }
    names
}

fn push_param_row(
    row: &mut Vec<f64>,
    conds: &[CondState],
    constrained: Option<&ConstrainedChainParams>,
    loglik: f64,
) {
    row.push(loglik);
    if let Some(cc) = constrained {
        row.push(cc.s());
    }
    for cond in conds {
        row.push(cond.chain.q0());
        row.push(cond.chain.q1());
        for rep in &cond.reps {
            row.push(rep.params.pi.pi());
            match (&rep.params.background, &rep.params.signal) {
                (CountDist::Poisson(b), CountDist::Poisson(s)) => {
                    row.push(b.lambda());
                    row.push(s.lambda());
                }
                (CountDist::Nb(b), CountDist::Nb(s)) => {
                    row.push(b.mu());
                    row.push(b.phi());
                    row.push(s.mu());
                    row.push(s.phi());
                }
                _ => unreachable!(),
            }
        }
    }
}

fn run_loop(
    data: &CountMatrix,
    mut conds: Vec<CondState>,
    priors: &PriorConfig,
    cfg: &SamplerConfig,
    update_params: bool,
) -> Result<RunOutput> {
    let segments = data.segments();
    let n_retained = (cfg.iterations - cfg.burn_in).div_ceil(cfg.thinning);
    let names = param_names(&conds, cfg.constrained && update_params);
    let mut draws = if cfg.retain_draws {
        Vec::with_capacity(n_retained * names.len())
    } else {
        Vec::new()
    };
    let mut row_buf: Vec<f64> = Vec::with_capacity(names.len());

    let mut constrained_params = if cfg.constrained && update_params {
        // start from each condition's warm chain, pooling s across conditions
        let s0 = conds
            .iter()
            .map(|c| (1.0 - c.chain.q1()) / c.chain.q0())
            .sum::<f64>()
            / conds.len() as f64;
        let q0: Vec<f64> = conds
            .iter()
            .map(|c| c.chain.q0().min(0.999 / s0.max(1e-12)).max(1e-9))
            .collect();
        let cc = ConstrainedChainParams::new(s0.max(1e-9), q0)?;
        for (i, cond) in conds.iter_mut().enumerate() {
            cond.chain = cc.chain_params(i);
        }
        Some(cc)
    } else {
        None
    };
    let mut s_rng = stream_rng(cfg.seed, STREAM_SHARED_S);
    let n_cond = conds.len();
    let mut s_step = StepState::new(priors.rw_step);
    let mut ridge_step = StepState::new(priors.rw_step);
    let mut q0_steps = vec![StepState::new(priors.rw_step); n_cond];
    let mut constrained_sizes = super::ConstrainedStepSizes::uniform(priors.rw_step, n_cond);
    let mut s_accept = (0u64, 0u64);

    let mut retained = 0usize;
    for iter in 0..cfg.iterations {
        let adapting = update_params && iter < cfg.burn_in && (iter + 1) % ADAPT_INTERVAL == 0;
        let run_cond = |cond: &mut CondState| {
            cond.rebuild_tables();
            cond.rebuild_llr(data);
            cond.sweep_x(segments);
            cond.collect_stats_and_sample_z(data);
            if update_params {
                cond.update_emissions(priors, adapting);
            }
            cond.counts = transition_counts_slices(&cond.x, segments);
            if update_params && !cfg.constrained {
                let before = cond.chain;
                cond.chain =
                    super::update_transition_params(&cond.counts, priors, &cond.chain, &mut cond.rng_chain);
                cond.chain_accept.1 += 1;
                cond.chain_accept.0 += u64::from(cond.chain != before);
            }
        };
        if conds.len() > 1 {
            conds.par_iter_mut().for_each(run_cond);
        } else {
            conds.iter_mut().for_each(run_cond);
        }

        if let Some(cc) = &mut constrained_params {
            let all_counts: Vec<TransitionCounts> = conds.iter().map(|c| c.counts).collect();
            constrained_sizes.s = s_step.step;
            constrained_sizes.ridge = ridge_step.step;
            for (slot, st) in constrained_sizes.q0.iter_mut().zip(&q0_steps) {
                *slot = st.step;
            }
            let (new_cc, accepts) = super::update_constrained_params(
                &all_counts,
                priors,
                cc,
                &constrained_sizes,
                &mut s_rng,
            );
            *cc = new_cc;
            s_step.record(accepts.s);
            ridge_step.record(accepts.ridge);
            for (st, &acc) in q0_steps.iter_mut().zip(&accepts.q0) {
                st.record(acc);
            }
            s_accept.1 += 1;
            s_accept.0 += u64::from(accepts.s);
            if adapting {
                s_step.maybe_adapt(priors.accept_low, priors.accept_high);
                ridge_step.maybe_adapt(priors.accept_low, priors.accept_high);
                for st in &mut q0_steps {
                    st.maybe_adapt(priors.accept_low, priors.accept_high);
                }
            }
            for (i, cond) in conds.iter_mut().enumerate() {
                cond.chain = cc.chain_params(i);
            }
        }

        // cheap blow-up guard on the per-sweep emission log-likelihood
        for cond in &conds {
            if !cond.loglik_emission.is_finite() {
                return Err(Error::NumericalBlowup {
                    iteration: iter,
                    detail: format!(
                        "emission log-likelihood of condition {:?} is not finite",
                        cond.label
                    ),
                });
            }
        }

        if iter >= cfg.burn_in && (iter - cfg.burn_in) % cfg.thinning == 0 {
            retained += 1;
            let mut loglik = 0.0;
            for cond in &mut conds {
                for (acc, &xv) in cond.prob_acc.iter_mut().zip(&cond.x) {
                    *acc += xv as f64;
                }
                loglik += cond.loglik_emission
                    + crate::chain::logdensity_from_counts(&cond.counts, &cond.chain);
            }
            if cfg.retain_draws {
                row_buf.clear();
                push_param_row(&mut row_buf, &conds, constrained_params.as_ref(), loglik);
                debug_assert_eq!(row_buf.len(), names.len());
                draws.extend_from_slice(&row_buf);
            }
        }
    }

    // assemble summary
    let k = retained.max(1) as f64;
    let condition_labels: Vec<String> = conds.iter().map(|c| c.label.clone()).collect();
    let prob_enriched: Vec<Vec<f64>> = conds
        .iter()
        .map(|c| c.prob_acc.iter().map(|&a| a / k).collect())
        .collect();

    let draws = cfg.retain_draws.then_some(ParamDraws {
        names: names.clone(),
        values: draws,
    });
    let params = match &draws {
        Some(d) => summarize_draws(d),
        None => Vec::new(),
    };

    let mut acceptance = Vec::new();
    for cond in &conds {
        if update_params && !cfg.constrained {
            acceptance.push((
                format!("chain.{}", cond.label),
                rate(cond.chain_accept.0, cond.chain_accept.1),
            ));
        }
        for rep in &cond.reps {
            if matches!(rep.params.family(), Family::ZinbNb) && update_params {
                let tags = ["mu0", "phi0", "mu1", "phi1"];
                for (i, tag) in tags.iter().enumerate() {
                    let (a, t) = rep.accept_totals[i];
                    acceptance.push((format!("{tag}.{}.{}", cond.label, rep.label), rate(a, t)));
                }
            }
        }
    }
    if constrained_params.is_some() {
        acceptance.push(("s".to_string(), rate(s_accept.0, s_accept.1)));
    }

    Ok(RunOutput {
        summary: PosteriorSummary {
            condition_labels,
            prob_enriched,
            params,
            draws,
            acceptance,
            n_retained: retained,
        },
    })
}

fn summarize_draws(draws: &ParamDraws) -> Vec<ParamSummary> {
    let w = draws.names.len();
    let rows = draws.n_rows();
    let mut out = Vec::with_capacity(w);
    let mut col = vec![0.0f64; rows];
    for (j, name) in draws.names.iter().enumerate() {
        for (i, slot) in col.iter_mut().enumerate() {
            *slot = draws.values[i * w + j];
        }
        let mean = col.iter().sum::<f64>() / rows.max(1) as f64;
        let mut sorted = col.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
        let q = |f: f64| sorted[((rows - 1) as f64 * f).round() as usize];
        out.push(ParamSummary {
            name: name.clone(),
            mean,
            q025: q(0.025),
            median: q(0.5),
            q975: q(0.975),
        });
    }
    out
}

/// Fit the joint model by Metropolis-within-Gibbs and return posterior
/// summaries. Deterministic given the seed.
pub fn run_sampler(
    data: &CountMatrix,
    design: &ExperimentDesign,
    family: Family,
    priors: &PriorConfig,
    cfg: &SamplerConfig,
) -> Result<PosteriorSummary> {
    cfg.validate()?;
    priors.validate()?;
    if data.n_bins() == 0 {
        return Err(Error::DimensionMismatch("count matrix has no bins".into()));
    }
    let resolved = design.resolve(data)?;
    let mut conds = Vec::with_capacity(resolved.len());
    for (i, (cond, cols)) in design.conditions().iter().zip(&resolved).enumerate() {
        conds.push(build_condition(
            data,
            &cond.label,
            &cond.replicates,
            cols,
            family,
            priors,
            cfg.seed,
            i,
            None,
        )?);
    }
    run_loop(data, conds, priors, cfg, true).map(|o| o.summary)
}

/// Run the latent-state sweep with all parameters held fixed: a validation
/// mode whose stationary distribution is the exact posterior over states.
pub fn posterior_with_fixed_params(
    data: &CountMatrix,
    design: &ExperimentDesign,
    emissions: &[EmissionParams],
    chains: &[ChainParams],
    cfg: &SamplerConfig,
) -> Result<PosteriorSummary> {
    cfg.validate()?;
    let resolved = design.resolve(data)?;
    if emissions.len() != resolved.len() || chains.len() != resolved.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} conditions but {} emission sets and {} chain parameter sets",
            resolved.len(),
            emissions.len(),
            chains.len()
        )));
    }
    let priors = PriorConfig::default();
    let mut conds = Vec::with_capacity(resolved.len());
    for (i, (cond, cols)) in design.conditions().iter().zip(&resolved).enumerate() {
        let family = emissions[i]
            .replicates
            .first()
            .map(|r| r.family())
            .unwrap_or(Family::ZipPoisson);
        conds.push(build_condition(
            data,
            &cond.label,
            &cond.replicates,
            cols,
            family,
            &priors,
            cfg.seed,
            i,
            Some((&emissions[i], &chains[i])),
        )?);
    }
    run_loop(data, conds, &priors, cfg, false).map(|o| o.summary)
}
