//! Joint modelling of multi-replicate ChIP-seq count data with a stationary
//! two-state Markov random field over latent enrichment, zero-inflated count
//! emissions, Metropolis-within-Gibbs estimation, and FDR-controlled calling
//! of enriched and differentially bound regions.
//!
//! The crate is organised around the analysis pipeline:
//!
//! - [`dist`]: Poisson / negative binomial log-pmfs, their zero-inflated
//!   variants, and exact samplers.
//! - [`chain`]: the stationary binary Markov chain (joint density, transition
//!   counts, stationary distribution, simulation, diagnostics).
//! - [`data`]: binned count matrices and experimental designs.
//! - [`inference`]: the Gibbs sampler for the joint replicate model, its
//!   constrained equal-binding-sites variant, and exact small-problem
//!   posteriors for validation.
//! - [`mixture`]: the non-Markov mixture baseline fitted by EM, with BIC
//!   model comparison.
//! - [`calling`]: expected-FDR thresholding, differential binding, region
//!   merging.
//! - [`simeval`]: scenario simulation and the FNDR benchmark harness.
//! - [`io`]: readers/writers for reads, counts, BED, bedGraph, and the TOML
//!   configuration formats.
//! - [`cli`]: the `chipmrf` command-line interface.

pub mod calling;
pub mod chain;
pub mod cli;
pub mod data;
pub mod dist;
pub mod inference;
pub mod io;
pub mod mixture;
pub mod simeval;

mod error;

pub use error::{Error, Result};

/// Derive a child seed from a master seed and a fixed tag.
///
/// SplitMix64-style mixing; used everywhere a reproducible sub-stream is
/// needed (per repetition, per condition) so that seeds never collide or
/// correlate across tags.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut z = master ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
