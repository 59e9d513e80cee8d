//! QCFS network to precision-aligned spiking network conversion, simulation
//! and analysis.

pub mod al;
pub mod energy;
pub mod error;
pub mod fmt;
pub mod golden;
pub mod graph;
pub mod pasc;
pub mod qcfs;
pub mod tensor;

/// Scalar type used by every kernel and runtime.
pub type Real = f32;

pub use error::{Error, Result, StatsError};
pub use graph::{parse_manifest, LayerKind, LayerSpec, ModelGraph, QcfsConfig};
pub use pasc::{check_equivalence, convert, snn_forward, PascModel};
pub use qcfs::{ann_forward, classification_map};
pub use tensor::Tensor;
