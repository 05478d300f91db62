//! Simulation and numerical verification toolkit for age-dependent branching
//! models of telomere shortening.
//!
//! A cell carries `2k` telomere lengths and an age. It divides at an
//! age-dependent rate; at division each chromosome sends one of its two ends
//! to each daughter for shortening, a random subset of coordinates is then
//! lengthened, and a daughter whose minimum length falls below zero is
//! senescent and stops dividing. The crate provides:
//!
//! * exact division sampling and event-driven population simulation,
//! * a weighted single-particle process whose one-dimensional law matches
//!   the normalised first-moment semigroup of the population,
//! * renewal-equation machinery (Laplace transforms, Malthus exponents,
//!   mean growth curves, convolution identities, coupled jump times),
//! * numerical certificates for the renewal and Lyapunov-drift conditions
//!   that underpin exponential ergodicity of the model,
//! * stationary-profile estimation with a product-form diagnostic,
//! * a command line frontend with reproducible, seed-keyed outputs.

pub mod model;
pub mod numerics;
pub mod particle;
pub mod config;
pub mod output;
pub mod profile;
pub mod population;
pub mod renewal;
pub mod rng;
pub mod verify;
