//! Layers, architecture descriptors, network building, and checkpoints.

pub mod arch;
pub mod checkpoint;
pub mod layers;
pub mod net;
pub mod zoo;

pub use arch::{ArchDescriptor, ConvSpec, LayerSpec, NeuronKind, ShapePoint};
pub use layers::{im2col, BatchNormLayer, ConvLayer, ConvParams, Mode, ParamKind, ParamSlot};
pub use net::{build, build_with_kind, Layer, Network};
