//! Variational non-equilibrium steady states of open quantum spin systems.
//!
//! The steady state ρ of a Lindblad master equation dρ/dt = 𝓛ρ is found by
//! minimizing the residual norm ‖𝓛ρ_θ‖²/‖ρ_θ‖² over a convolutional
//! neural-network parametrization ρ_θ(σ, σ′) of the density matrix. The cost
//! and its parameter gradient are estimated stochastically from
//! Metropolis-Hastings samples of configuration pairs (σ, σ′), and the
//! parameters are driven by backtracking Nesterov accelerated gradient
//! descent. Everything is validated against a dense exact-diagonalization
//! oracle at small system sizes.
//!
//! Modules:
//! - [`lattice`]: spin configurations and periodic chain / square geometry
//! - [`liouvillian`]: Hamiltonians, jump operators, sparse Lindbladian rows
//! - [`cnn`]: the convolutional density-operator ansatz and its gradients
//! - [`checkpoint`]: parameter (de)serialization, enabling transfer learning
//! - [`sampler`]: Markov chains over configuration pairs and diagonals
//! - [`estimators`]: stochastic cost / gradient / observable estimators
//! - [`optimizer`]: backtracking Nesterov accelerated gradient descent
//! - [`exact`]: dense Kronecker Liouvillian, exact steady state, diagnostics

pub mod checkpoint;
pub mod cnn;
pub mod error;
pub mod estimators;
pub mod exact;
pub mod lattice;
pub mod liouvillian;
pub mod optimizer;
mod parallel;
pub mod sampler;

pub use error::{Error, Result};
pub use lattice::{JointConfig, Lattice, SpinConfig};
pub use liouvillian::{ConnectedElement, Hamiltonian, HeisenbergParams, ModelSpec, TfiParams};
pub use cnn::{Architecture, BoundNdo, CnnNdo, ConvLayerSpec, DensityModel};
