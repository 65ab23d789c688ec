//! Interpretable pose-code representation of 3D human motion.
//!
//! Motion is tokenized into per-body-part pose codes by fixed geometric
//! heuristics ([`codebook`], [`encoder`]), reconstructed by a learned
//! convolutional decoder ([`decoder`]), generated autoregressively from text
//! conditions ([`generator`]) and edited by rewriting code subsequences
//! through a language-model backend ([`editor`]). [`eval`] holds the
//! generation metrics and [`nn`] the small autodiff library underneath.

pub mod codebook;
pub mod decoder;
pub mod editor;
pub mod encoder;
pub mod eval;
pub mod generator;
pub mod motion;
pub mod nn;
pub mod rng;
