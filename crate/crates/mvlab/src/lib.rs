//! Numerical laboratory for weakly interacting diffusions and their
//! McKean-Vlasov mean-field limit.
//!
//! The crate simulates the particle system
//!
//! ```text
//! dx_t^i = (1/n) sum_j Gamma(x_t^i, x_t^j) dt + dB_t^i,    i = 1..n,
//! ```
//!
//! measures how fast its empirical measure approaches the solution of the
//! limiting nonlinear Fokker-Planck equation in negative Sobolev norms, and
//! verifies the quantitative estimates that drive that convergence: heat
//! semigroup bounds, resolvent decay, rough-path sewing of the
//! semigroup-convolved noise term, and maximal inequalities for
//! self-normalized martingales.
//!
//! Module map:
//!
//! * [`particles`] - Euler-Maruyama ensembles with counter-based,
//!   replay-exact Brownian drivers.
//! * [`sobolev`] - Fourier-grid `H^s` / `H^{-m}` norms, Gaussian-mixture
//!   test functions, dual pairings.
//! * [`semigroup`] - closed-form heat semigroup calculus on Gaussian
//!   mixtures, gradient bounds, resolvent multipliers.
//! * [`roughpath`] - Ito rough-path lifts, the perturbed coboundary
//!   operator, and the sewing construction of semigroup-convolved
//!   integrals.
//! * [`noise`] - the averaged noise functional `w^n_t(h)` by two routes,
//!   Ornstein-Uhlenbeck toy model, self-normalized ratio studies, and the
//!   `O(1/n)` decay study.
//! * [`mv_solver`] - Strang-split semi-Lagrangian/spectral solver for the
//!   McKean-Vlasov equation plus a Monte Carlo Picard oracle.
//! * [`harness`] - configuration-driven studies, CSV/JSON emission, and
//!   the law-of-large-numbers convergence experiment.
//!
//! Every study is deterministic given `(config, seed)`; parallelism never
//! changes results. The `examples/` directory contains one runnable
//! example per capability; the `mvlab` binary exposes the same studies as
//! subcommands.

pub mod config;
pub mod harness;
pub mod mv_solver;
pub mod noise;
pub mod output;
pub mod particles;
pub mod rng;
pub mod roughpath;
pub mod semigroup;
pub mod sobolev;
pub mod stats;



