//! Impact-echo defect assessment for concrete slabs and bridge decks.
//!
//! The crate covers the whole chain from raw impact-echo waveforms to
//! per-point defect-type predictions:
//!
//! - [`synthlab`] generates synthetic slabs with seeded defects and
//!   thickness-mode waveforms, used as the data source for desk-scale runs.
//! - [`spectral`] detrends, transforms and picks the dominant peak frequency.
//! - [`mapping`] arranges peak readings on the scan grid, interpolates fields,
//!   splits the slab into defect zones and renders heatmaps.
//! - [`clustering`] separates defective from intact points with 1-D k-means.
//! - [`groundtruth`] builds ground-truth masks and scores detections.
//! - [`seqdata`] turns validated points into fixed-length spatial sequences.
//! - [`neural`] is a stacked LSTM classifier trained with BPTT and Adam.
//! - [`evalreport`] computes confusion matrices and writes report tables.
//! - [`pipeline`] wires the stages into lab and field runs.

pub mod clustering;
pub mod defect;
pub mod error;
pub mod evalreport;
pub mod groundtruth;
pub mod io;
pub mod mapping;
pub mod neural;
pub mod pipeline;
pub mod seqdata;
pub mod spectral;
pub mod synthlab;

pub use defect::DefectClass;
pub use error::{Error, Result};
