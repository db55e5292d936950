//! Secure downlink beamforming for a cooperating-BS millimeter-wave C-RAN whose
//! base stations are fed by a microwave multicast fronthaul.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: configuration, geometry, path loss and random channel generation.
//! - [`analogbf`]: quantized block-diagonal analog beamformer and effective channels.
//! - [`rates`]: exact fronthaul / access / eavesdropper / secrecy rate evaluation.
//! - [`conic`]: conic problem representation, complex PSD embedding, LMI builders
//!   and the interior-point solver adapter.
//! - [`srm`]: the CCCP secrecy-rate-maximization solvers (total power, per-BS
//!   power, robust against bounded eavesdropper CSI error).
//! - [`rankrec`]: recovery of rank-one beamformers from relaxed solutions.
//! - [`harness`]: seeded Monte-Carlo experiments and the acceptance checks.

// Links the system OpenBLAS used by the PSD cone of the conic backend.
use openblas_src as _;

pub mod analogbf;
pub mod conic;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod rankrec;
pub mod rates;
pub mod srm;

pub use error::{Error, Result};
