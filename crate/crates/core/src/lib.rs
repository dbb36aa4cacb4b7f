//! Simulation and statistics for the 1-D stochastic wave equation
//! `u(t, x) = 1 + ∫_{Q(x,t)} σ(u(s, y)) ξ(ds dy)` on a light-cone lattice, with
//! the parabolic comparison model `∂_t v = ∂²_x v + σ(v)ξ`.
//!
//! The modules follow the flow of an experiment: [`lattice`] and [`noise`]
//! fix the geometry and the white noise, [`wave`] and [`heat`] solve fields,
//! and [`qv`], [`limits`] and [`linearize`] compute the observables that the
//! limit theorems are about.

// `!(a < b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ensemble;
pub mod error;
pub mod heat;
pub mod lattice;
pub mod limits;
pub mod linearize;
pub mod noise;
pub mod qv;
pub mod sigma;
pub mod snapshot;
pub mod stats;
pub mod wave;

pub use error::{Error, Result};
pub use heat::{solve_coupled_heat_linearization, solve_heat, HeatField, HeatGridSpec};
pub use lattice::{ConeRegion, LatticePoint, LatticeSpec, NoiseCell};
pub use noise::{make_noise, NoiseRealization};
pub use sigma::SigmaSpec;
pub use wave::{solve_coupled_linearization, solve_wave, WaveField};
