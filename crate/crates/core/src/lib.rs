//! Desk-scale radar–camera BEV fusion kernels.
//!
//! The crate covers the full path from raw FMCW echoes to evaluated BEV
//! detections:
//!
//! ```text
//! scene ── sim ──> ADC cube ── spectrum ──> RT → RD → (READ / RA)
//!                                  │
//!                                  └── cfar ──> peaks ──> radar points
//!
//! polar queries ── attention (image columns, radar rows) ──> fused BEV
//! boxes ── codec / losses          metrics ── IoU, AP, recall, errors
//! ```
//!
//! - [`sim`]: synthetic FMCW/MIMO ADC cubes with DDM and seeded noise
//! - [`spectrum`]: the lossless FFT chain with axis metadata
//! - [`cfar`]: cell-averaging CFAR and point-cloud generation
//! - [`geometry`]: polar BEV grid, calibration, pillar-to-column analysis
//! - [`attention`]: polar-aligned cross-attention, forward and backward
//! - [`boxes`]: oriented-box regression codec, focal and L1 losses
//! - [`metrics`]: rotated-box IoU, LET-IoU, AP/recall/error protocols
//! - [`container`]: the binary tensor container used by the CLI

// `!(x > 0.0)` in validations is deliberate: unlike `x <= 0.0` it also
// rejects NaN. Index loops over small fixed-size matrices and parallel
// arrays read better than iterator chains here.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod attention;
pub mod boxes;
pub mod cfar;
pub mod container;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod sim;
pub mod spectrum;

pub use error::{Error, Result};
