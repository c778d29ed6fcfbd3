pub mod bench;
pub mod classify;
pub mod dataset;
pub mod descriptors;
pub mod geometry;
pub mod mask;
pub mod matching;
pub mod synth;
