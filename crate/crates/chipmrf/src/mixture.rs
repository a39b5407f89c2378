//! The non-Markov baseline: an independent-Bernoulli latent mixture fitted
//! by EM, plus BIC model comparison between emission families.
//!
//! Each condition is a two-component mixture over bins with signal weight
//! `p`; replicates of a condition multiply their emission likelihoods under
//! a shared latent state. The background may be zero-inflated (an inner
//! indicator handled inside the E-step) or plain, which is how the NB-NB
//! versus ZINB-NB comparison is run.

use crate::data::{CountMatrix, ExperimentDesign};
use crate::dist::{log_sum_exp2, CountDist, NbParams, PoissonParams, ZeroInflation};
use crate::inference::{EmissionParams, Family, ReplicateParams};
use crate::{Error, Result};
use statrs::function::gamma::ln_gamma;

/// Fitted mixture for all conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureFit {
    pub condition_labels: Vec<String>,
    /// Signal proportion per condition.
    pub p: Vec<f64>,
    pub emissions: Vec<EmissionParams>,
    /// Per-bin P(X = 1 | Y) per condition.
    pub responsibilities: Vec<Vec<f64>>,
    /// Total observed-data log-likelihood and its per-condition parts.
    pub loglik: f64,
    pub loglik_by_condition: Vec<f64>,
    /// Log-likelihood after each EM iteration (non-decreasing).
    pub loglik_trace: Vec<f64>,
    pub n_iter: usize,
    /// Free parameters per condition under the fitted family.
    pub n_params_by_condition: Vec<usize>,
}

/// Bayesian information criterion: -2 loglik + k ln(n).
pub fn bic(loglik: f64, n_params: usize, n_obs: usize) -> f64 {
    -2.0 * loglik + n_params as f64 * (n_obs as f64).ln()
}

/// Free-parameter count for one condition with `n_replicates` replicates:
/// the signal weight plus per-replicate emission parameters (Poisson: two
/// rates; NB: two mean/dispersion pairs; zero inflation adds pi).
pub fn mixture_param_count(family: Family, zero_inflated: bool, n_replicates: usize) -> usize {
    let per_rep = match family {
        Family::ZipPoisson => 2 + usize::from(zero_inflated),
        Family::ZinbNb => 4 + usize::from(zero_inflated),
    };
    1 + per_rep * n_replicates
}

/// E-step responsibilities at fixed parameters: per bin,
/// P(X=1 | Y) = p prod_r f_S / (p prod_r f_S + (1-p) prod_r f_B).
pub fn posterior_probabilities(
    data: &CountMatrix,
    cols: &[usize],
    p: f64,
    emissions: &EmissionParams,
) -> Vec<f64> {
    let m = data.n_bins();
    let mut a1 = vec![p.ln(); m];
    let mut a0 = vec![(1.0 - p).ln(); m];
    for (rep, &c) in emissions.replicates.iter().zip(cols) {
        for (i, &y) in data.column(c).iter().enumerate() {
            a1[i] += rep.signal.logpmf(y);
            a0[i] += crate::dist::zi_logpmf(y, &rep.pi, &rep.background);
        }
    }
    a1.iter()
        .zip(&a0)
        .map(|(l1, l0)| 1.0 / (1.0 + (l0 - l1).exp()))
        .collect()
}

/// Fit the mixture by EM.
///
/// Stops when the log-likelihood gain drops below `tol` or after `max_iter`
/// iterations. `zero_inflated = false` pins every pi at 1, giving the plain
/// Poisson-Poisson or NB-NB mixture used for BIC comparison.
pub fn fit_em(
    data: &CountMatrix,
    design: &ExperimentDesign,
    family: Family,
    zero_inflated: bool,
    tol: f64,
    max_iter: usize,
) -> Result<MixtureFit> {
    if tol <= 0.0 {
        return Err(Error::InvalidParameter("EM tolerance must be > 0".into()));
    }
    let resolved = design.resolve(data)?;
    let mut fit = MixtureFit {
        condition_labels: design.conditions().iter().map(|c| c.label.clone()).collect(),
        p: Vec::new(),
        emissions: Vec::new(),
        responsibilities: Vec::new(),
        loglik: 0.0,
        loglik_by_condition: Vec::new(),
        loglik_trace: Vec::new(),
        n_iter: 0,
        n_params_by_condition: Vec::new(),
    };
    let mut trace_total: Vec<f64> = Vec::new();
    for (cond, cols) in design.conditions().iter().zip(&resolved) {
        let one = fit_condition(data, cols, family, zero_inflated, tol, max_iter)
            .map_err(|e| Error::FitFailure(format!("condition {:?}: {e}", cond.label)))?;
        if trace_total.len() < one.trace.len() {
            trace_total.resize(one.trace.len(), 0.0);
        }
        // conditions may converge at different iteration counts; extend the
        // shorter traces with their final value before summing
        for (i, slot) in trace_total.iter_mut().enumerate() {
            *slot += one.trace.get(i).copied().unwrap_or(*one.trace.last().unwrap());
        }
        fit.n_iter = fit.n_iter.max(one.trace.len());
        fit.loglik += one.loglik;
        fit.loglik_by_condition.push(one.loglik);
        fit.p.push(one.p);
        fit.emissions.push(one.emissions);
        fit.responsibilities.push(one.gamma);
        fit.n_params_by_condition
            .push(mixture_param_count(family, zero_inflated, cols.len()));
    }
    fit.loglik_trace = trace_total;
    Ok(fit)
}

struct CondFit {
    p: f64,
    emissions: EmissionParams,
    gamma: Vec<f64>,
    loglik: f64,
    trace: Vec<f64>,
}

struct RepWork {
    col: usize,
    pi: f64,
    background: CountDist,
    signal: CountDist,
    lp0: Vec<f64>,
    lp1: Vec<f64>,
    /// Weighted count histograms of the two components.
    w_bg: Vec<f64>,
    w_sig: Vec<f64>,
}

fn fit_condition(
    data: &CountMatrix,
    cols: &[usize],
    family: Family,
    zero_inflated: bool,
    tol: f64,
    max_iter: usize,
) -> Result<CondFit> {
    let m = data.n_bins();
    if m == 0 {
        return Err(Error::DimensionMismatch("no bins".into()));
    }
    let x0 = crate::inference::sampler_init_states(data, cols);
    let mut p = (x0.iter().map(|&v| v as f64).sum::<f64>() / m as f64).clamp(1e-4, 1.0 - 1e-4);
    let mut reps: Vec<RepWork> = cols
        .iter()
        .map(|&c| {
            let col = data.column(c);
            let init = crate::inference::sampler_init_replicate(col, &x0, family);
            let ymax = col.iter().copied().max().unwrap_or(0) as usize;
            RepWork {
                col: c,
                pi: if zero_inflated { init.pi.pi() } else { 1.0 },
                background: init.background,
                signal: init.signal,
                lp0: vec![0.0; ymax + 1],
                lp1: vec![0.0; ymax + 1],
                w_bg: vec![0.0; ymax + 1],
                w_sig: vec![0.0; ymax + 1],
            }
        })
        .collect();

    let mut gamma = vec![0.0f64; m];
    let mut trace = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for _iter in 0..max_iter {
        // E-step with cached per-count tables
        for rep in &mut reps {
            let pi = ZeroInflation::new(rep.pi).expect("pi stays in range");
            for y in 0..rep.lp0.len() {
                rep.lp0[y] = crate::dist::zi_logpmf(y as u32, &pi, &rep.background);
                rep.lp1[y] = rep.signal.logpmf(y as u32);
            }
        }
        let mut loglik = 0.0;
        let lp = p.ln();
        let l1mp = (1.0 - p).ln();
        for i in 0..m {
            let mut a1 = lp;
            let mut a0 = l1mp;
            for rep in &reps {
                let y = data.column(rep.col)[i] as usize;
                a1 += rep.lp1[y];
                a0 += rep.lp0[y];
            }
            let tot = log_sum_exp2(a1, a0);
            loglik += tot;
            gamma[i] = (a1 - tot).exp();
        }
        trace.push(loglik);

        // M-step
        let sum_gamma: f64 = gamma.iter().sum();
        p = sum_gamma / m as f64;
        if !(1e-8..=1.0 - 1e-8).contains(&p) {
            return Err(Error::FitFailure(format!(
                "mixture component collapsed (p = {p:.3e})"
            )));
        }
        for rep in &mut reps {
            m_step_replicate(rep, data, &gamma, zero_inflated)?;
        }

        if loglik - last < tol && _iter > 0 {
            break;
        }
        last = loglik;
    }

    let replicates: Vec<ReplicateParams> = reps
        .iter()
        .map(|r| {
            ReplicateParams::new(
                ZeroInflation::new(r.pi)?,
                r.background,
                r.signal,
            )
        })
        .collect::<Result<_>>()
        .map_err(|e| Error::FitFailure(format!("labels switched during EM: {e}")))?;
    let loglik = *trace.last().expect("at least one iteration");
    Ok(CondFit {
        p,
        emissions: EmissionParams { replicates },
        gamma,
        loglik,
        trace,
    })
}

fn m_step_replicate(
    rep: &mut RepWork,
    data: &CountMatrix,
    gamma: &[f64],
    zero_inflated: bool,
) -> Result<()> {
    let col = data.column(rep.col);
    // inner-indicator expectation for background zeros
    let pi_obj = ZeroInflation::new(rep.pi).expect("in range");
    let wz = crate::inference::z_full_conditional(0, 0, &pi_obj, &rep.background)
        .expect("x = 0 branch");

    rep.w_bg.fill(0.0);
    rep.w_sig.fill(0.0);
    let mut bg_weight = 0.0; // sum over bins of (1-gamma) E[Z]
    let mut bg_zero_weight = 0.0; // (1-gamma) mass on structural-zero branch
    for (i, &y) in col.iter().enumerate() {
        let w0 = 1.0 - gamma[i];
        let w1 = gamma[i];
        if y == 0 {
            let ez = if zero_inflated { wz } else { 1.0 };
            rep.w_bg[0] += w0 * ez;
            bg_weight += w0 * ez;
            bg_zero_weight += w0 * (1.0 - ez);
        } else {
            rep.w_bg[y as usize] += w0;
            bg_weight += w0;
        }
        rep.w_sig[y as usize] += w1;
    }
    if zero_inflated {
        let denom = bg_weight + bg_zero_weight;
        rep.pi = if denom > 0.0 {
            (bg_weight / denom).clamp(1e-9, 1.0)
        } else {
            1.0
        };
    }

    match (&mut rep.background, &mut rep.signal) {
        (CountDist::Poisson(bg), CountDist::Poisson(sig)) => {
            let (n0, s0) = hist_moments(&rep.w_bg);
            let (n1, s1) = hist_moments(&rep.w_sig);
            if n0 > 0.0 {
                *bg = PoissonParams::new((s0 / n0).max(1e-9))?;
            }
            if n1 > 0.0 {
                *sig = PoissonParams::new((s1 / n1).max(1e-9))?;
            }
        }
        (CountDist::Nb(bg), CountDist::Nb(sig)) => {
            *bg = nb_weighted_mle(&rep.w_bg, bg.phi())?;
            *sig = nb_weighted_mle(&rep.w_sig, sig.phi())?;
        }
        _ => unreachable!("family fixed within a fit"),
    }
    Ok(())
}

fn hist_moments(w: &[f64]) -> (f64, f64) {
    let mut n = 0.0;
    let mut s = 0.0;
    for (y, &h) in w.iter().enumerate() {
        n += h;
        s += h * y as f64;
    }
    (n, s)
}

/// Weighted NB maximum likelihood: the mean is the weighted average in
/// closed form (optimal for every phi), then phi by golden-section search
/// on the log scale.
fn nb_weighted_mle(w: &[f64], phi_start: f64) -> Result<NbParams> {
    let (n, s) = hist_moments(w);
    if n <= 0.0 {
        return NbParams::new(1.0, phi_start);
    }
    let mu = (s / n).max(1e-9);
    let obj = |ln_phi: f64| -> f64 {
        let phi = ln_phi.exp();
        let mut acc = 0.0;
        for (y, &h) in w.iter().enumerate() {
            if h > 0.0 {
                acc += h * ln_gamma(y as f64 + phi);
            }
        }
        acc - n * ln_gamma(phi) + s * (mu.ln() - (mu + phi).ln()) - n * phi * (mu / phi).ln_1p()
    };
    let ln_phi = golden_section_max(obj, (1e-3f64).ln(), (1e6f64).ln(), 1e-8);
    NbParams::new(mu, ln_phi.exp())
}

/// Derivative-free maximization of a unimodal function on [lo, hi].
fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = 0.618_033_988_749_894_9_f64;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > tol {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}
