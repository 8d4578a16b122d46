//! Desk-scale reward-modeling laboratory.
//!
//! The crate is organized as four layers:
//!
//! - [`numerics`]: seeded randomness, stable scalar functions, small dense
//!   networks with exact reverse-mode gradients, diagonal-Gaussian KL, and a
//!   PCA projection helper. Everything is deterministic: the PRNG is a fixed
//!   in-repo algorithm and transcendental functions go through `libm` so the
//!   same seed yields the same bits on every platform.
//! - [`reward`]: Bradley–Terry reward models. A plain scalar MLP trained on
//!   the pairwise logistic loss, and an information-bottleneck variant that
//!   routes the reward through a stochastic latent with a KL penalty toward
//!   a standard-normal prior. Plus ensemble and weight-averaging combinators.
//! - [`world`]: a synthetic preference world. A fixed linear gold scorer over
//!   feature vectors, a diagonal-Gaussian response policy, pair labeling with
//!   label noise and a spurious-feature trap, and a policy-ascent loop that
//!   reproduces the proxy-up/gold-down overoptimization curve.
//! - [`detect`]: latent-cloud drift detection. DBSCAN clustering, the
//!   cluster-separation index (size-weighted centroid distances to the
//!   nearest pre-run latent), and a change-rate early-stopping monitor.
//!
//! All state lives in plain owned values; no globals, no interior mutability.
//! The crate is `no_std`-compatible with `alloc`; IO and file formats live in
//! the companion CLI crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod detect;
pub mod numerics;
pub mod reward;
pub mod world;
