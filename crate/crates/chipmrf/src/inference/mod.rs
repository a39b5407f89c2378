//! Metropolis-within-Gibbs estimation of the joint replicate model.
//!
//! The latent enrichment profile of each condition is updated bin by bin
//! from its full conditional (Direct Gibbs); the inner zero indicators and
//! the conjugate parameter blocks follow; negative binomial parameters move
//! by random-walk Metropolis on the log scale. A constrained variant shares
//! the ratio s = (1 - q1)/q0 across conditions, which equalizes their
//! stationary enrichment probabilities.
//!
//! [`exact_posterior`] and [`forward_backward`] provide two independent
//! exact solutions for small single-condition problems; the sampler is
//! validated against both.

mod exact;
mod sampler;

pub use exact::{exact_posterior, forward_backward};
pub use sampler::{posterior_with_fixed_params, run_sampler, update_emission_params};
pub(crate) use sampler::{
    init_replicate as sampler_init_replicate, init_states as sampler_init_states,
};

use crate::chain::TransitionCounts;
use crate::dist::{CountDist, ZeroInflation};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::{Beta as BetaDist, Distribution};

/// Emission family shared by every replicate in a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Zero-inflated Poisson background, Poisson signal.
    ZipPoisson,
    /// Zero-inflated negative binomial background, NB signal.
    ZinbNb,
}

/// Emission parameters of one replicate: zero-inflation weight, background
/// count component, signal distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicateParams {
    pub pi: ZeroInflation,
    pub background: CountDist,
    pub signal: CountDist,
}

impl ReplicateParams {
    /// Validates the identifiability ordering: signal mean strictly above
    /// background mean.
    pub fn new(pi: ZeroInflation, background: CountDist, signal: CountDist) -> Result<Self> {
        let same_family = matches!(
            (&background, &signal),
            (CountDist::Poisson(_), CountDist::Poisson(_)) | (CountDist::Nb(_), CountDist::Nb(_))
        );
        if !same_family {
            return Err(Error::InvalidParameter(
                "background and signal must use the same count family".into(),
            ));
        }
        if signal.mean() <= background.mean() {
            return Err(Error::InvalidParameter(format!(
                "signal mean {} must exceed background mean {}",
                signal.mean(),
                background.mean()
            )));
        }
        Ok(Self {
            pi,
            background,
            signal,
        })
    }

    pub fn family(&self) -> Family {
        match self.background {
            CountDist::Poisson(_) => Family::ZipPoisson,
            CountDist::Nb(_) => Family::ZinbNb,
        }
    }
}

/// Per-condition emission parameters, one entry per replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionParams {
    pub replicates: Vec<ReplicateParams>,
}

/// Inner zero indicators, `z[replicate][bin]`; only meaningful where the
/// latent state is 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InnerIndicators {
    pub z: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaPrior {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub(crate) fn logpdf(&self, x: f64) -> f64 {
        use statrs::function::gamma::ln_gamma;
        self.shape * self.rate.ln() - ln_gamma(self.shape) + (self.shape - 1.0) * x.ln()
            - self.rate * x
    }
}

/// Prior and proposal configuration.
///
/// Defaults are weakly informative: Beta(1,1) on probabilities, Gamma(0.01,
/// 0.01) on Poisson rates and on the NB mean/dispersion, random-walk step
/// 0.2 on the log scale adapted during burn-in to a 20-50% acceptance rate
/// and frozen afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig {
    pub pi: BetaPrior,
    pub q: BetaPrior,
    /// Beta prior on the constrained model's shared stationary probability
    /// 1/(1+s).
    pub s_stationary: BetaPrior,
    pub rate: GammaPrior,
    pub nb_mean: GammaPrior,
    pub nb_disp: GammaPrior,
    pub rw_step: f64,
    pub accept_low: f64,
    pub accept_high: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            pi: BetaPrior { a: 1.0, b: 1.0 },
            q: BetaPrior { a: 1.0, b: 1.0 },
            s_stationary: BetaPrior { a: 1.0, b: 1.0 },
            rate: GammaPrior {
                shape: 0.01,
                rate: 0.01,
            },
            nb_mean: GammaPrior {
                shape: 0.01,
                rate: 0.01,
            },
            nb_disp: GammaPrior {
                shape: 0.01,
                rate: 0.01,
            },
            rw_step: 0.2,
            accept_low: 0.2,
            accept_high: 0.5,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let positives = [
            self.pi.a,
            self.pi.b,
            self.q.a,
            self.q.b,
            self.s_stationary.a,
            self.s_stationary.b,
            self.rate.shape,
            self.rate.rate,
            self.nb_mean.shape,
            self.nb_mean.rate,
            self.nb_disp.shape,
            self.nb_disp.rate,
            self.rw_step,
        ];
        if positives.iter().any(|&v| !v.is_finite() || v <= 0.0) {
            return Err(Error::InvalidParameter(
                "all prior hyperparameters and the walk step must be positive".into(),
            ));
        }
        if !(0.0 < self.accept_low && self.accept_low < self.accept_high && self.accept_high < 1.0)
        {
            return Err(Error::InvalidParameter(
                "acceptance targets must satisfy 0 < low < high < 1".into(),
            ));
        }
        Ok(())
    }
}

/// Run length, burn-in, thinning, seeding and variant switches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    /// Share s = (1 - q1)/q0 across conditions.
    pub constrained: bool,
    /// Keep per-iteration parameter draws for the checkpoint output.
    pub retain_draws: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            burn_in: 5_000,
            thinning: 1,
            seed: 0,
            constrained: false,
            retain_draws: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidParameter(format!(
                "burn-in {} must be smaller than the iteration count {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thinning == 0 {
            return Err(Error::InvalidParameter("thinning must be >= 1".into()));
        }
        Ok(())
    }
}

/// Chain parameters of the equal-binding-sites variant: shared ratio `s`
/// with per-condition `q0`; `q1c = 1 - s * q0c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedChainParams {
    s: f64,
    q0: Vec<f64>,
}

impl ConstrainedChainParams {
    pub fn new(s: f64, q0: Vec<f64>) -> Result<Self> {
        if !s.is_finite() || s <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "shared ratio s must be positive, got {s}"
            )));
        }
        for &q in &q0 {
            if !q.is_finite() || q <= 0.0 || q >= 1.0 {
                return Err(Error::InvalidParameter(format!(
                    "q0 must lie in (0, 1), got {q}"
                )));
            }
            if s * q >= 1.0 {
                return Err(Error::InvalidParameter(format!(
                    "s * q0 = {} leaves no room for q1 in (0, 1)",
                    s * q
                )));
            }
        }
        Ok(Self { s, q0 })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn q0(&self, condition: usize) -> f64 {
        self.q0[condition]
    }

    pub fn q1(&self, condition: usize) -> f64 {
        1.0 - self.s * self.q0[condition]
    }

    /// Shared stationary enrichment probability 1/(1+s).
    pub fn stationary(&self) -> f64 {
        1.0 / (1.0 + self.s)
    }

    pub fn n_conditions(&self) -> usize {
        self.q0.len()
    }

    pub fn chain_params(&self, condition: usize) -> crate::chain::ChainParams {
        crate::chain::ChainParams::new(self.q0(condition), self.q1(condition))
            .expect("constrained parameters stay in range by construction")
    }
}

/// Full conditional probability that a bin's latent state is 1, given its
/// neighbors within the segment and the replicate counts at that bin.
///
/// A missing left neighbor contributes the stationary initial-state factor;
/// a missing right neighbor contributes nothing.
pub fn x_full_conditional(
    counts_at_bin: &[u32],
    left: Option<u8>,
    right: Option<u8>,
    emissions: &EmissionParams,
    chain: &crate::chain::ChainParams,
) -> f64 {
    assert_eq!(counts_at_bin.len(), emissions.replicates.len());
    let mut delta = 0.0;
    for (y, rep) in counts_at_bin.iter().zip(&emissions.replicates) {
        delta += rep.signal.logpmf(*y) - crate::dist::zi_logpmf(*y, &rep.pi, &rep.background);
    }
    let p1 = chain.stationary();
    delta += match left {
        Some(l) => (chain.transition(l, 1) / chain.transition(l, 0)).ln(),
        None => (p1 / (1.0 - p1)).ln(),
    };
    if let Some(r) = right {
        delta += (chain.transition(1, r) / chain.transition(0, r)).ln();
    }
    1.0 / (1.0 + (-delta).exp())
}

/// Full conditional probability that the inner indicator is 1 (the count
/// came from the count component rather than the structural-zero mass).
///
/// Only defined where the latent state is 0; `x = 1` is a precondition
/// violation.
pub fn z_full_conditional(
    x: u8,
    y: u32,
    pi: &ZeroInflation,
    background: &CountDist,
) -> Result<f64> {
    if x != 0 {
        return Err(Error::InvalidParameter(
            "inner indicator is only defined where the latent state is 0".into(),
        ));
    }
    if y > 0 {
        return Ok(1.0);
    }
    let p0 = background.log_zero_mass().exp();
    let num = pi.pi() * p0;
    Ok(num / ((1.0 - pi.pi()) + num))
}

/// Draw new transition probabilities for one condition.
///
/// Proposals come from the conjugate Beta posteriors of the transition
/// factors; a Metropolis step then corrects for the per-segment stationary
/// initial-state terms, so the update targets the full chain factor exactly.
pub fn update_transition_params<R: Rng + ?Sized>(
    counts: &TransitionCounts,
    priors: &PriorConfig,
    current: &crate::chain::ChainParams,
    rng: &mut R,
) -> crate::chain::ChainParams {
    let q1_prop = draw_beta(
        priors.q.a + counts.n11 as f64,
        priors.q.b + counts.n10 as f64,
        rng,
    );
    let q0_prop = draw_beta(
        priors.q.a + counts.n01 as f64,
        priors.q.b + counts.n00 as f64,
        rng,
    );
    let proposal = match crate::chain::ChainParams::new(q0_prop, q1_prop) {
        Ok(p) => p,
        Err(_) => return *current,
    };
    // everything except the initial-state terms cancels between target and
    // proposal, leaving the stationary factors as the acceptance ratio
    let log_ratio = initial_terms(&proposal, counts) - initial_terms(current, counts);
    if log_ratio >= 0.0 || rng.random::<f64>() < log_ratio.exp() {
        proposal
    } else {
        *current
    }
}

fn initial_terms(q: &crate::chain::ChainParams, counts: &TransitionCounts) -> f64 {
    let p1 = q.stationary();
    counts.first_one as f64 * p1.ln() + counts.first_zero as f64 * (1.0 - p1).ln()
}

/// Draw from Beta(a, b), nudging away from the exact floating-point
/// boundary (the chain density is degenerate at 0 and 1).
pub(crate) fn draw_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let v = BetaDist::new(a, b)
        .expect("positive Beta parameters")
        .sample(rng);
    v.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
}

/// Step sizes of the constrained Metropolis moves.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedStepSizes {
    /// Log-scale walk on s with the q0 vector fixed.
    pub s: f64,
    /// Joint rescaling (s, q0c) -> (s e^eps, q0c e^-eps) that holds every
    /// q1c fixed; explores along the ridge the data pins down.
    pub ridge: f64,
    /// Logit-scale walk on each condition's q0.
    pub q0: Vec<f64>,
}

impl ConstrainedStepSizes {
    pub fn uniform(step: f64, n_conditions: usize) -> Self {
        Self {
            s: step,
            ridge: step,
            q0: vec![step; n_conditions],
        }
    }
}

/// Which of the constrained moves were accepted this sweep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstrainedAccepts {
    pub s: bool,
    pub ridge: bool,
    pub q0: Vec<bool>,
}

/// One sweep of the constrained updates.
///
/// Three Metropolis moves against the product over conditions of the
/// constrained chain likelihood (transition factors plus the 1/(1+s)
/// initial-state terms): a log-scale random walk on the shared `s`, a joint
/// rescaling of `s` and every `q0c` that preserves the well-identified
/// `q1c = 1 - s q0c`, and a logit-scale walk on each `q0c`. Proposals
/// outside the feasibility region `s * q0c < 1` are rejected outright.
pub fn update_constrained_params<R: Rng + ?Sized>(
    counts: &[TransitionCounts],
    priors: &PriorConfig,
    current: &ConstrainedChainParams,
    steps: &ConstrainedStepSizes,
    rng: &mut R,
) -> (ConstrainedChainParams, ConstrainedAccepts) {
    assert_eq!(counts.len(), current.n_conditions());
    let n_cond = counts.len();
    let mut s = current.s;
    let mut q0 = current.q0.clone();
    let mut accepts = ConstrainedAccepts {
        s: false,
        ridge: false,
        q0: vec![false; n_cond],
    };

    // plain s-move; ln-s proposal symmetric, Jacobian s'/s
    {
        let prop = s * (steps.s * standard_normal(rng)).exp();
        let u: f64 = rng.random();
        if prop.is_finite() && prop > 0.0 && q0.iter().all(|&q| prop * q < 1.0) {
            let log_ratio = constrained_log_target(prop, &q0, counts, priors)
                - constrained_log_target(s, &q0, counts, priors)
                + prop.ln()
                - s.ln();
            if log_ratio >= 0.0 || u < log_ratio.exp() {
                s = prop;
                accepts.s = true;
            }
        }
    }

    // ridge move: s' = s e^eps, q0c' = q0c e^-eps keeps every q1c fixed;
    // the map's Jacobian is e^{eps (1 - C)}
    {
        let eps = steps.ridge * standard_normal(rng);
        let u: f64 = rng.random();
        let s_prop = s * eps.exp();
        let q0_prop: Vec<f64> = q0.iter().map(|&q| q * (-eps).exp()).collect();
        let feasible = s_prop.is_finite()
            && s_prop > 0.0
            && q0_prop
                .iter()
                .all(|&q| q > 0.0 && q < 1.0 && s_prop * q < 1.0);
        if feasible {
            let log_ratio = constrained_log_target(s_prop, &q0_prop, counts, priors)
                - constrained_log_target(s, &q0, counts, priors)
                + eps * (1.0 - n_cond as f64);
            if log_ratio >= 0.0 || u < log_ratio.exp() {
                s = s_prop;
                q0 = q0_prop;
                accepts.ridge = true;
            }
        }
    }

    // per-condition logit walk on q0c
    for c in 0..n_cond {
        let logit = (q0[c] / (1.0 - q0[c])).ln();
        let prop_logit = logit + steps.q0[c] * standard_normal(rng);
        let prop = 1.0 / (1.0 + (-prop_logit).exp());
        let u: f64 = rng.random();
        if !(prop > 0.0 && prop < 1.0 && s * prop < 1.0) {
            continue;
        }
        let mut trial = q0.clone();
        trial[c] = prop;
        // logit-space symmetric proposal: Jacobian q'(1-q') / q(1-q)
        let log_ratio = constrained_log_target(s, &trial, counts, priors)
            - constrained_log_target(s, &q0, counts, priors)
            + (prop * (1.0 - prop)).ln()
            - (q0[c] * (1.0 - q0[c])).ln();
        if log_ratio >= 0.0 || u < log_ratio.exp() {
            q0[c] = prop;
            accepts.q0[c] = true;
        }
    }

    (
        ConstrainedChainParams::new(s, q0).expect("feasibility enforced by rejection"),
        accepts,
    )
}

/// Log joint of the constrained chain factors and priors (terms constant in
/// (s, q0) omitted).
fn constrained_log_target(
    s: f64,
    q0: &[f64],
    counts: &[TransitionCounts],
    priors: &PriorConfig,
) -> f64 {
    let ln_s = s.ln();
    let ln_1p_s = s.ln_1p();
    let mut lt = 0.0;
    for (c, cnt) in counts.iter().enumerate() {
        lt += cnt.first_one as f64 * -ln_1p_s;
        lt += cnt.first_zero as f64 * (ln_s - ln_1p_s);
        lt += cnt.n11 as f64 * (1.0 - s * q0[c]).ln();
        lt += cnt.n10 as f64 * (ln_s + q0[c].ln());
        lt += cnt.n01 as f64 * q0[c].ln();
        lt += cnt.n00 as f64 * (1.0 - q0[c]).ln();
        // Beta prior on q0c
        lt += (priors.q.a - 1.0) * q0[c].ln() + (priors.q.b - 1.0) * (1.0 - q0[c]).ln();
    }
    // Beta(a, b) prior on 1/(1+s), transformed to the s scale
    let (a, b) = (priors.s_stationary.a, priors.s_stationary.b);
    lt + (b - 1.0) * ln_s - (a + b) * ln_1p_s
}

pub(crate) fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rand_distr::StandardNormal.sample(rng)
}

/// Summary of one scalar parameter's retained draws.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub q025: f64,
    pub median: f64,
    pub q975: f64,
}

/// Retained parameter draws, one row per retained iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDraws {
    pub names: Vec<String>,
    /// Row-major, `rows * names.len()` values.
    pub values: Vec<f64>,
}

impl ParamDraws {
    pub fn n_rows(&self) -> usize {
        if self.names.is_empty() {
            0
        } else {
            self.values.len() / self.names.len()
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.names.len();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.names.iter().position(|n| n == name)?;
        let w = self.names.len();
        Some(self.values.iter().skip(idx).step_by(w).copied().collect())
    }
}

/// Monte-Carlo posterior summaries of a sampler run.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub condition_labels: Vec<String>,
    /// `prob_enriched[condition][bin]`: fraction of retained draws with
    /// latent state 1.
    pub prob_enriched: Vec<Vec<f64>>,
    pub params: Vec<ParamSummary>,
    pub draws: Option<ParamDraws>,
    /// Acceptance rates of the Metropolis blocks, `(name, rate)`.
    pub acceptance: Vec<(String, f64)>,
    pub n_retained: usize,
}

impl PosteriorSummary {
    pub fn probabilities(&self, condition_label: &str) -> Option<&[f64]> {
        let idx = self
            .condition_labels
            .iter()
            .position(|c| c == condition_label)?;
        Some(&self.prob_enriched[idx])
    }

    pub fn param(&self, name: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.name == name)
    }
}
