//! Vector approximate message passing (VAMP) for sparse recovery under
//! arbitrary i.i.d. measurement-noise priors.
//!
//! The measurement model is `y = A x + w` with `A` wide (`M < N`). Both the
//! signal `x` and the noise `w` carry their own scalar MMSE denoiser, and a
//! joint LMMSE stage couples them through the measurement constraint. The
//! classical Gaussian-noise VAMP is provided as a baseline.
//!
//! Module map:
//! - [`messages`]: scalar-precision Gaussian messages and the extrinsic rule.
//! - [`denoisers`]: componentwise posterior-mean denoisers for the priors.
//! - [`lmmse`]: joint signal/noise LMMSE through a cached SVD of `A`.
//! - [`engine`]: the iteration loop and the standard-VAMP baseline.
//! - [`harness`]: instance generation, scoring, Monte-Carlo sweeps, outputs.
//! - [`oracle`]: slow independent references used by the test suites.

pub mod denoisers;
pub mod engine;
mod error;
pub mod harness;
pub mod lmmse;
pub mod messages;
pub mod oracle;
mod special;

pub use denoisers::{DenoiseResult, NoisePrior, Prior, SignalPrior};
pub use engine::{run_gnp_vamp, run_standard_vamp, EngineConfig, IterationRecord, RunResult};
pub use error::{Error, Result};
pub use lmmse::{LmmseOutput, OperatorCache, ProblemInstance};
pub use messages::{GaussianMessage, PrecisionBounds};
