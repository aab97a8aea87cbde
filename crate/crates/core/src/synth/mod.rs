//! Procedural multiview visuo-tactile dataset: generator, on-disk format,
//! and loader.

pub mod format;
pub mod material;
pub mod registry;

pub use format::{
    generate_dataset, load_dataset, Dataset, DatasetReader, Manifest, Split, ViewSequence,
    VisuoTactilePair,
};
pub use material::{
    derive_render_params, frame_angle, measure_tactile, render_view, sample_material, GenConfig,
    MaterialSample, RenderParams,
};
pub use registry::{Category, PropertyEntry, PropertyRegistry, NUM_PROPERTIES};
