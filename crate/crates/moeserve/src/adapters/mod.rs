//! Adapter lifecycle: expert maps, on-disk manifests, synthetic adapter
//! generation, and the registry that pages adapter experts in and out of the
//! shared weight store.

pub mod manifest;
pub mod map;
pub mod registry;
pub mod synth;

pub use manifest::{
    load_adapter_dir, save_adapter_dir, AdapterManifest, MANIFEST_FILE, WEIGHTS_FILE,
};
pub use map::ExpertMapLayer;
pub use registry::{AdapterRegistry, LoadedAdapter};
pub use synth::{generate_synthetic_adapter, AdapterShape};
