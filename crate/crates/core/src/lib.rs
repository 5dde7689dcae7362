//! Backward stochastic difference equations driven by a minimal
//! (d+1)-valued increment process on a d-dimensional lattice.
//!
//! The crate builds up from the linear algebra of the increment basis
//! to a full path-tree solver and its financial applications:
//!
//! - [`lattice`]: the increment basis, affine decomposition, and the
//!   convex hull of admissible slopes.
//! - [`scenario`]: the (d+1)-ary path tree, adapted/predictable fields,
//!   measure changes, and the unique martingale measure.
//! - [`drivers`]: generator families (entropic, linear, worst-case,
//!   sup-convolution, extracted), balance checks, Legendre transforms.
//! - [`bsde`]: the backward solver, g-expectations, closed forms, the
//!   comparison harness.
//! - [`robust`]: robust representation of concave g-expectations.
//! - [`feynman_kac`]: the recombining-lattice recursion for Markov data.
//! - [`portfolio`]: replication hedging and optimal monetary-utility
//!   investment.
//! - [`equilibrium`]: market clearing, equilibrium beliefs, the
//!   representative agent, and betting under heterogeneous beliefs.
//!
//! Everything is exact enumeration at desk scale; there is no Monte
//! Carlo anywhere. Trees, fields, and drivers are immutable values,
//! and backward sweeps parallelize across nodes within a depth slice.

pub mod bsde;
pub mod drivers;
pub mod equilibrium;
pub mod error;
pub mod feynman_kac;
pub mod lattice;
pub mod numeric;
pub mod portfolio;
pub mod robust;
pub mod scenario;

pub use error::{Error, Result};
pub use lattice::{Basis, Simplex};
pub use scenario::{build_tree, AdaptedField, Measure, PredictableField, ScenarioTree};
