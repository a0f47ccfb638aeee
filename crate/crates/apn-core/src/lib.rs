//! Abridged Petri nets: places connected directly by single-input/single-output
//! transitions, tokens carrying a discrete color and a continuous age, and
//! component interaction expressed purely through inhibitor/enabler triggers.
//!
//! The crate is split into:
//!
//! * [`model`] — net definition, validation and compilation;
//! * [`layers`] — hierarchical layer expansion with automatic color shift;
//! * [`engine`] — the token game: enabling, firing races, preemption, aging;
//! * [`stats`] — place/transition sensors and cross-replication aggregation;
//! * [`markov`] — an independent continuous-time Markov chain oracle for
//!   exponential/immediate nets, plus the combinatorial state counter;
//! * [`rng`] — seeded replication streams and inverse-transform sampling.
//!
//! The core is `no_std`-compatible (with `alloc`); file formats, parallel
//! execution and the command-line front end live in the companion `apn-cli`
//! crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod engine;
pub mod layers;
pub mod markov;
pub mod model;
pub mod rng;
pub mod stats;
pub mod trace;

pub use model::{Color, Net, NetBuilder, PlaceId, Time, TokenId, TransitionId, Violation};
