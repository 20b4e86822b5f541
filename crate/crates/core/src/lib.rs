//! Non-parallel voice conversion on linear magnitude spectrograms.
//!
//! Two generators map spectrograms between a pair of speaker identities and
//! are trained adversarially against per-frame discriminators with cycle,
//! feature-matching, and identity penalties. The crate bundles everything
//! the pipeline needs: WAV ingestion and synthesis ([`dsp`]), a small
//! reverse-mode engine ([`autodiff`]), the residual block zoo ([`blocks`]),
//! network assembly with spectral normalization ([`networks`]), the
//! composite objective ([`losses`]), the optimization loop with exact
//! checkpoint resume ([`training`]), and DTW-aligned mel spectral
//! distortion scoring ([`eval`]).

pub mod autodiff;
pub mod blocks;
pub mod config;
pub mod dataset;
pub mod dsp;
pub mod eval;
pub mod losses;
pub mod networks;
pub mod rng;
pub mod selfcheck;
pub mod toy;
pub mod training;
