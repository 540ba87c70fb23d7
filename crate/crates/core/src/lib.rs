//! Coordinated constructive-interference (CI) hybrid precoding for
//! multi-base-station heterogeneous downlinks.
//!
//! The crate is organized along the three-stage precoding procedure and the
//! machinery around it:
//!
//! - [`model`]: domain types and signal-level primitives (PSK symbols,
//!   received signal, CI slack, transmit power).
//! - [`channel`]: path loss, user placement and Rayleigh channel draws.
//! - [`milp`]: dense two-phase simplex and best-first branch-and-bound.
//! - [`assignment`]: RF-chain / code assignment MILPs and a greedy fallback.
//! - [`analog`]: phase-conjugate and codebook analog precoders.
//! - [`convex`]: interior-point solver for the digital CI QCQP.
//! - [`digital`]: CI and zero-forcing digital precoding.
//! - [`schemes`]: end-to-end coordinated and uncoordinated pipelines.
//! - [`experiment`]: Monte Carlo SER harness, backhaul overhead, CSV and
//!   config-file handling.

pub mod analog;
pub mod assignment;
pub mod channel;
pub mod convex;
pub mod digital;
pub mod error;
pub mod experiment;
pub mod milp;
pub mod model;
pub mod schemes;
pub mod selftest;

pub use error::{Error, Result};
pub use model::C64;
