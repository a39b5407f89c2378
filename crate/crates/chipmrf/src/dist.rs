//! Count distributions: Poisson, negative binomial, and their zero-inflated
//! variants.
//!
//! Everything is computed in log space. The zero-inflated pmfs put mass
//! `1 - pi` on a point mass at zero and `pi` on the count component, so
//! `pi = 1` reduces exactly to the plain count distribution.

use crate::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use statrs::function::gamma::ln_gamma;

/// Poisson distribution with mean `lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonParams {
    lambda: f64,
}

impl PoissonParams {
    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "Poisson lambda must be finite and > 0, got {lambda}"
            )));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Negative binomial with mean `mu` and dispersion `phi`.
///
/// Variance is `mu + mu^2 / phi`, so `phi -> inf` recovers the Poisson.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NbParams {
    mu: f64,
    phi: f64,
}

impl NbParams {
    pub fn new(mu: f64, phi: f64) -> Result<Self> {
        if !mu.is_finite() || mu <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "NB mu must be finite and > 0, got {mu}"
            )));
        }
        if !phi.is_finite() || phi <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "NB phi must be finite and > 0, got {phi}"
            )));
        }
        Ok(Self { mu, phi })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }
}

/// Weight `pi` of the count component in a zero-inflated distribution.
///
/// `1 - pi` is the structural-zero mass. The closed interval [0, 1] is
/// allowed; both endpoints are degenerate but well defined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroInflation {
    pi: f64,
}

impl ZeroInflation {
    pub fn new(pi: f64) -> Result<Self> {
        if !pi.is_finite() || !(0.0..=1.0).contains(&pi) {
            return Err(Error::InvalidParameter(format!(
                "zero-inflation pi must lie in [0, 1], got {pi}"
            )));
        }
        Ok(Self { pi })
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }
}

/// log(exp(a) + exp(b)) without overflow.
pub fn log_sum_exp2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Log-pmf of Poisson(`lambda`) at `y`.
pub fn pois_logpmf(y: u32, p: &PoissonParams) -> f64 {
    let yf = y as f64;
    yf * p.lambda.ln() - p.lambda - ln_gamma(yf + 1.0)
}

/// Log-pmf of NB(`mu`, `phi`) at `y`, via log-gamma.
///
/// The `phi * ln(phi / (mu + phi))` factor is computed as
/// `-phi * ln_1p(mu / phi)` so the large-`phi` (Poisson) limit stays
/// accurate.
pub fn nb_logpmf(y: u32, p: &NbParams) -> f64 {
    let yf = y as f64;
    let coeff = ln_gamma(yf + p.phi) - ln_gamma(p.phi) - ln_gamma(yf + 1.0);
    coeff + yf * (p.mu.ln() - (p.mu + p.phi).ln()) - p.phi * (p.mu / p.phi).ln_1p()
}

/// Log of the NB zero mass `(phi / (mu + phi))^phi`.
fn nb_log_zero_mass(p: &NbParams) -> f64 {
    -p.phi * (p.mu / p.phi).ln_1p()
}

/// Log-pmf of the zero-inflated Poisson.
pub fn zip_logpmf(y: u32, z: &ZeroInflation, p: &PoissonParams) -> f64 {
    if y == 0 {
        log_sum_exp2((1.0 - z.pi).ln(), z.pi.ln() - p.lambda)
    } else {
        z.pi.ln() + pois_logpmf(y, p)
    }
}

/// Log-pmf of the zero-inflated negative binomial.
pub fn zinb_logpmf(y: u32, z: &ZeroInflation, p: &NbParams) -> f64 {
    if y == 0 {
        log_sum_exp2((1.0 - z.pi).ln(), z.pi.ln() + nb_log_zero_mass(p))
    } else {
        z.pi.ln() + nb_logpmf(y, p)
    }
}

/// A plain count distribution, Poisson or NB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CountDist {
    Poisson(PoissonParams),
    Nb(NbParams),
}

impl CountDist {
    pub fn logpmf(&self, y: u32) -> f64 {
        match self {
            CountDist::Poisson(p) => pois_logpmf(y, p),
            CountDist::Nb(p) => nb_logpmf(y, p),
        }
    }

    /// Log-pmf at zero (the branch the zero-inflated forms need constantly).
    pub fn log_zero_mass(&self) -> f64 {
        match self {
            CountDist::Poisson(p) => -p.lambda,
            CountDist::Nb(p) => nb_log_zero_mass(p),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            CountDist::Poisson(p) => p.lambda,
            CountDist::Nb(p) => p.mu,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match self {
            CountDist::Poisson(p) => sample_poisson(p.lambda, rng),
            CountDist::Nb(p) => {
                // Gamma-Poisson mixture: exact NB draw.
                let gamma = Gamma::new(p.phi, p.mu / p.phi).expect("validated params");
                let g = gamma.sample(rng);
                sample_poisson(g, rng)
            }
        }
    }
}

/// Log-pmf of a zero-inflated `CountDist`.
pub fn zi_logpmf(y: u32, z: &ZeroInflation, dist: &CountDist) -> f64 {
    if y == 0 {
        log_sum_exp2((1.0 - z.pi).ln(), z.pi.ln() + dist.log_zero_mass())
    } else {
        z.pi.ln() + dist.logpmf(y)
    }
}

fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u32 {
    if lambda <= 0.0 {
        return 0;
    }
    let draw = Poisson::new(lambda).expect("positive lambda").sample(rng);
    if draw >= u32::MAX as f64 {
        u32::MAX
    } else {
        draw as u32
    }
}

/// One of the four sampleable parameterizations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistSpec {
    Poisson(PoissonParams),
    Nb(NbParams),
    Zip(ZeroInflation, PoissonParams),
    Zinb(ZeroInflation, NbParams),
}

impl DistSpec {
    pub fn logpmf(&self, y: u32) -> f64 {
        match self {
            DistSpec::Poisson(p) => pois_logpmf(y, p),
            DistSpec::Nb(p) => nb_logpmf(y, p),
            DistSpec::Zip(z, p) => zip_logpmf(y, z, p),
            DistSpec::Zinb(z, p) => zinb_logpmf(y, z, p),
        }
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match self {
            DistSpec::Poisson(p) => sample_poisson(p.lambda, rng),
            DistSpec::Nb(p) => CountDist::Nb(*p).sample(rng),
            DistSpec::Zip(z, p) => {
                if rng.random::<f64>() < z.pi {
                    sample_poisson(p.lambda, rng)
                } else {
                    0
                }
            }
            DistSpec::Zinb(z, p) => {
                if rng.random::<f64>() < z.pi {
                    CountDist::Nb(*p).sample(rng)
                } else {
                    0
                }
            }
        }
    }
}

/// Draw `count` i.i.d. values; deterministic given the generator state.
pub fn sample<R: Rng + ?Sized>(spec: &DistSpec, count: usize, rng: &mut R) -> Vec<u32> {
    (0..count).map(|_| spec.sample_one(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    /// Sum the pmf from zero upward, stopping when a geometric bound on the
    /// remaining tail drops below `tail_tol`. `ratio_sup(y)` must upper-bound
    /// pmf(y'+1)/pmf(y') for all y' >= y.
    fn sum_pmf(logpmf: impl Fn(u32) -> f64, ratio_sup: impl Fn(u32) -> f64, tail_tol: f64) -> f64 {
        let mut total = 0.0;
        let mut y = 0u32;
        loop {
            let p = logpmf(y).exp();
            total += p;
            let r = ratio_sup(y);
            if r < 1.0 {
                let tail = p * r / (1.0 - r);
                if tail < tail_tol {
                    return total;
                }
            }
            y += 1;
            assert!(y < 5_000_000, "tail bound failed to converge");
        }
    }

    /// pmf(y+1)/pmf(y) for Poisson is lambda/(y+1), decreasing in y.
    fn pois_ratio_sup(lambda: f64) -> impl Fn(u32) -> f64 {
        move |y| lambda / (y as f64 + 1.0)
    }

    /// pmf(y+1)/pmf(y) for NB is (y+phi)/(y+1) * mu/(mu+phi): decreasing in y
    /// when phi >= 1, increasing toward mu/(mu+phi) when phi < 1.
    fn nb_ratio_sup(mu: f64, phi: f64) -> impl Fn(u32) -> f64 {
        move |y| {
            let lim = mu / (mu + phi);
            let here = (y as f64 + phi) / (y as f64 + 1.0) * lim;
            here.max(lim)
        }
    }

    #[test]
    fn pois_logpmf_known_values() {
        let p = PoissonParams::new(1.0).unwrap();
        assert!((pois_logpmf(0, &p) - (-1.0)).abs() < 1e-14);
        let p = PoissonParams::new(3.0).unwrap();
        // log(0.2240418076553877...), frozen from a 50-digit evaluation
        assert!((pois_logpmf(3, &p) - (-1.4959226032237259)).abs() < 1e-12);
        let p = PoissonParams::new(0.5).unwrap();
        assert!((pois_logpmf(0, &p) - (-0.5)).abs() < 1e-14);
    }

    #[test]
    fn nb_logpmf_known_values() {
        let p = NbParams::new(2.0, 1.0).unwrap();
        assert!((nb_logpmf(0, &p) - (1f64 / 3.0).ln()).abs() < 1e-14);
        // Frozen from a 50-digit log-gamma evaluation.
        let p = NbParams::new(6.95, 0.89).unwrap();
        assert!((nb_logpmf(2, &p) - (-2.3505361763658358)).abs() < 1e-12);
    }

    #[test]
    fn nb_approaches_poisson_at_large_phi() {
        // At mu=3, phi=1e6 the exact log-gap is ~7e-6 * y^2 - y/1e6, which
        // crosses 1e-4 near y=18; test the range where the limit bound holds.
        let pois = PoissonParams::new(3.0).unwrap();
        let nb = NbParams::new(3.0, 1e6).unwrap();
        for y in 0..=15 {
            assert!(
                (nb_logpmf(y, &nb) - pois_logpmf(y, &pois)).abs() < 1e-4,
                "y={y}"
            );
        }
        // further out in phi the wider range passes at a tighter tolerance
        let nb = NbParams::new(3.0, 1e8).unwrap();
        for y in 0..=20 {
            assert!(
                (nb_logpmf(y, &nb) - pois_logpmf(y, &pois)).abs() < 2e-6,
                "y={y}"
            );
        }
    }

    #[test]
    fn zip_logpmf_known_values() {
        let full = ZeroInflation::new(1.0).unwrap();
        let lam2 = PoissonParams::new(2.0).unwrap();
        assert!((zip_logpmf(0, &full, &lam2) - (-2.0)).abs() < 1e-14);

        let half = ZeroInflation::new(0.5).unwrap();
        let lam1 = PoissonParams::new(1.0).unwrap();
        // log(0.5 + 0.5 e^-1) = log(0.6839397205857212)
        assert!((zip_logpmf(0, &half, &lam1) - (-0.37988549304172248)).abs() < 1e-14);
        // count branch factorizes
        let expect = 0.5f64.ln() + pois_logpmf(4, &lam1);
        assert!((zip_logpmf(4, &half, &lam1) - expect).abs() < 1e-14);
    }

    #[test]
    fn zinb_logpmf_known_values() {
        let full = ZeroInflation::new(1.0).unwrap();
        let bg = NbParams::new(0.33, 2.01).unwrap();
        assert!((zinb_logpmf(0, &full, &bg) - nb_logpmf(0, &bg)).abs() < 1e-14);

        let half = ZeroInflation::new(0.5).unwrap();
        let p = NbParams::new(0.5, 0.5).unwrap();
        // log(0.5 + 0.5 * (0.5)^0.5) = log(0.8535533905932738)
        assert!((zinb_logpmf(0, &half, &p) - (-0.15834718382037494)).abs() < 1e-14);
    }

    #[test]
    fn zinb_normalizes() {
        let z = ZeroInflation::new(0.66).unwrap();
        let p = NbParams::new(0.33, 2.01).unwrap();
        let total: f64 = (0..=10_000).map(|y| zinb_logpmf(y, &z, &p).exp()).sum();
        assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn degenerate_pi_zero_is_point_mass() {
        let z = ZeroInflation::new(0.0).unwrap();
        let p = PoissonParams::new(5.0).unwrap();
        assert_eq!(zip_logpmf(0, &z, &p), 0.0);
        assert_eq!(zip_logpmf(3, &z, &p), f64::NEG_INFINITY);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws = sample(&DistSpec::Zip(z, p), 100, &mut rng);
        assert!(draws.iter().all(|&y| y == 0));
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(PoissonParams::new(0.0).is_err());
        assert!(PoissonParams::new(-1.0).is_err());
        assert!(PoissonParams::new(f64::NAN).is_err());
        assert!(NbParams::new(0.0, 1.0).is_err());
        assert!(NbParams::new(1.0, 0.0).is_err());
        assert!(ZeroInflation::new(-0.01).is_err());
        assert!(ZeroInflation::new(1.01).is_err());
    }

    #[test]
    fn poisson_sample_mean_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = DistSpec::Poisson(PoissonParams::new(3.0).unwrap());
        let n = 100_000usize;
        let draws = sample(&spec, n, &mut rng);
        let mean = draws.iter().map(|&y| y as f64).sum::<f64>() / n as f64;
        let tol = 3.0 * (3.0f64 / n as f64).sqrt();
        assert!((mean - 3.0).abs() < tol, "mean={mean}");
    }

    #[test]
    fn zinb_sample_zero_fraction_matches_pmf() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z = ZeroInflation::new(0.5).unwrap();
        let p = NbParams::new(0.5, 0.5).unwrap();
        let n = 100_000usize;
        let draws = sample(&DistSpec::Zinb(z, p), n, &mut rng);
        let frac0 = draws.iter().filter(|&&y| y == 0).count() as f64 / n as f64;
        assert!((frac0 - 0.8535533905932738).abs() < 0.01, "frac0={frac0}");
    }

    /// Chi-square goodness of fit between 1e5 draws and the pmf.
    fn chi_square_gof(spec: &DistSpec, seed: u64) {
        let n = 100_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws = sample(spec, n, &mut rng);
        let max = *draws.iter().max().unwrap();
        let mut observed = vec![0f64; max as usize + 2];
        for &y in &draws {
            observed[y as usize] += 1.0;
        }
        // expected counts; last cell is the open tail
        let mut cells: Vec<(f64, f64)> = Vec::new();
        let mut cum = 0.0;
        for y in 0..=max {
            let e = spec.logpmf(y).exp() * n as f64;
            cum += e;
            cells.push((observed[y as usize], e));
        }
        cells.push((0.0, (n as f64 - cum).max(0.0)));
        // merge cells with expected < 5 into their neighbor
        let mut merged: Vec<(f64, f64)> = Vec::new();
        let mut acc = (0.0, 0.0);
        for (o, e) in cells {
            acc.0 += o;
            acc.1 += e;
            if acc.1 >= 5.0 {
                merged.push(acc);
                acc = (0.0, 0.0);
            }
        }
        if acc.1 > 0.0 {
            if let Some(last) = merged.last_mut() {
                last.0 += acc.0;
                last.1 += acc.1;
            }
        }
        assert!(merged.len() >= 2, "too few cells for GOF");
        let stat: f64 = merged
            .iter()
            .map(|(o, e)| (o - e) * (o - e) / e)
            .sum();
        let dof = merged.len() as f64 - 1.0;
        let p = 1.0 - ChiSquared::new(dof).unwrap().cdf(stat);
        assert!(p > 1e-3, "GOF rejected: stat={stat}, dof={dof}, p={p}");
    }

    #[test]
    fn sampler_pmf_agreement() {
        chi_square_gof(&DistSpec::Poisson(PoissonParams::new(3.0).unwrap()), 21);
        chi_square_gof(&DistSpec::Nb(NbParams::new(6.95, 0.89).unwrap()), 22);
        chi_square_gof(
            &DistSpec::Zip(
                ZeroInflation::new(0.66).unwrap(),
                PoissonParams::new(0.5).unwrap(),
            ),
            23,
        );
        chi_square_gof(
            &DistSpec::Zinb(
                ZeroInflation::new(0.66).unwrap(),
                NbParams::new(0.33, 2.01).unwrap(),
            ),
            24,
        );
    }

    proptest! {
        #[test]
        fn poisson_family_normalizes(lambda in 0.01f64..50.0, pi in 0.0f64..=1.0) {
            let p = PoissonParams::new(lambda).unwrap();
            let z = ZeroInflation::new(pi).unwrap();
            let total = sum_pmf(|y| pois_logpmf(y, &p), pois_ratio_sup(lambda), 1e-9);
            prop_assert!(total > 1.0 - 1e-6 && total < 1.0 + 1e-9);
            let total = sum_pmf(|y| zip_logpmf(y, &z, &p), pois_ratio_sup(lambda), 1e-9);
            prop_assert!(total > 1.0 - 1e-6 && total < 1.0 + 1e-9);
        }

        #[test]
        fn nb_family_normalizes(mu in 0.01f64..50.0, phi in 0.05f64..100.0, pi in 0.0f64..=1.0) {
            let p = NbParams::new(mu, phi).unwrap();
            let z = ZeroInflation::new(pi).unwrap();
            let total = sum_pmf(|y| nb_logpmf(y, &p), nb_ratio_sup(mu, phi), 1e-9);
            prop_assert!(total > 1.0 - 1e-6 && total < 1.0 + 1e-9);
            let total = sum_pmf(|y| zinb_logpmf(y, &z, &p), nb_ratio_sup(mu, phi), 1e-9);
            prop_assert!(total > 1.0 - 1e-6 && total < 1.0 + 1e-9);
        }

        #[test]
        fn pi_one_reduces_to_plain(y in 0u32..200, lambda in 0.01f64..50.0,
                                   mu in 0.01f64..50.0, phi in 0.05f64..100.0) {
            let full = ZeroInflation::new(1.0).unwrap();
            let pp = PoissonParams::new(lambda).unwrap();
            let np = NbParams::new(mu, phi).unwrap();
            prop_assert!((zip_logpmf(y, &full, &pp) - pois_logpmf(y, &pp)).abs() < 1e-12);
            prop_assert!((zinb_logpmf(y, &full, &np) - nb_logpmf(y, &np)).abs() < 1e-12);
        }
    }
}
