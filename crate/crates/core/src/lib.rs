//! Drift-diffusion equations on metric graphs: a finite-volume reference
//! solver and physics-informed neural-network training schemes, with shared
//! graph/problem types and an experiment harness.
//!
//! The PDE is `∂_t ρ_e = ∂_x(ε ∂_x ρ_e − f(ρ_e) ∂_x V_e)` on every edge,
//! coupled through Kirchhoff-Neumann flux balance and continuity at interior
//! vertices and flux boundary conditions `−α_v(1−ρ) + β_v ρ` at exterior
//! vertices.

pub mod collocation;
pub mod config;
pub mod experiment;
pub mod fvm;
pub mod graph;
pub mod loss;
pub mod net;
pub mod opt;
pub mod presets;
pub mod problem;
pub mod train;

use rand_chacha::rand_core::SeedableRng;

/// Deterministic RNG for a (seed, stream) pair. Streams keep independent
/// consumers (net init, collocation, ...) from perturbing each other.
pub fn rng_for(seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
