//! Bermudan and American-style option pricing on translation-invariant
//! finite-state Markov chains.
//!
//! The crate is organised bottom-up:
//!
//! * [`chain`] holds the chain itself (increments, weights, base step) and
//!   the expectation operator `P_t`.
//! * [`cubature`] turns Gaussian cubature formulas into chains and analyses
//!   the integer structure of their nodes.
//! * [`payoff`] defines puts and calls on exponential baskets together with
//!   the closed-form exercise-probability regions.
//! * [`lattice`] is the pricing core: recombining lattices and the Bellman
//!   sweep `(B_{T/N})^N (g ∨ 0)`.
//! * [`bounds`] computes the analytic error-bound constants.
//! * [`verify`] measures operator differences by grid quadrature and checks
//!   them against [`bounds`].

pub mod bounds;
pub mod chain;
pub mod cubature;
pub mod lattice;
pub mod numeric;
pub mod payoff;
pub mod verify;

pub use chain::{ChainError, ChainSpec, ComposedChain};
pub use cubature::{CubatureError, CubatureFormula, Mod2Report};
pub use lattice::{LatticeEmbedding, LatticeError, ValueLayer};
pub use payoff::{Basket, PayoffError, PayoffSpec, Region, Side};
