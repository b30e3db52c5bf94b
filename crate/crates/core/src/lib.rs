//! Typicality of k-particle observables in a two-mode Bose system.
//!
//! The crate decides whether a k-particle observable of an N-boson,
//! two-mode system concentrates around its ensemble mean when the state is
//! drawn uniformly from the subspace spanned by the Fock states
//! `|N/2+l, N/2-l>` with `|l| < n/2`. It combines four ingredients:
//!
//! * [`fock`] — exact band-matrix algebra of number-conserving mode
//!   monomials on the fixed-N sector, with microcanonical traces and
//!   variances;
//! * [`poly`] — exact bivariate polynomials in `(N, n)` with rational
//!   coefficients, used to evaluate the Fock-space moment sums symbolically;
//! * [`modes`] / [`typicality`] — single-particle mode pairs, the
//!   symmetrized k-body products, and the overlap integrals that assemble
//!   the fluctuation coefficients `D_{2k,0}` and `D_{2k-2,2}`;
//! * [`correlations`] / [`montecarlo`] — integrated density correlations
//!   as concrete operators, plus Monte Carlo sampling of random states and
//!   single-run interference patterns.

pub mod correlations;
pub mod error;
pub mod fock;
pub mod modes;
pub mod montecarlo;
pub mod poly;
pub mod typicality;

pub use correlations::CorrelationObservable;
pub use error::{Error, Result};
pub use fock::{BandMatrix, NormalMonomial, StateVector, SystemParams, TwoModeOperator};
pub use modes::{ConvolutionProfile, ModePair};
pub use montecarlo::{EnsembleConfig, EnsembleStats, PatternResult, ScalingScan, ScanPoint};
pub use poly::BivariatePoly;
pub use typicality::{KernelSpec, TypicalityReport, Verdict};
