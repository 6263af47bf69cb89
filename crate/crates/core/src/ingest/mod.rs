//! Local-file dataset assembly: manifests, compositing, scenario inputs and
//! synthetic scenes.

pub mod composite;
pub mod manifest;
pub mod scenario;
pub mod synth;

pub use composite::{composite, composite_median, CompositeMethod};
pub use manifest::{
    build_manifest, load_tile, read_manifest, write_manifest, DatasetManifest, ManifestBuild,
    ManifestEntry, SkipRecord, SourcePaths, Split, TileData,
};
pub use scenario::{assemble_scenario, ScenarioSpec, Source};
pub use synth::{
    clear_forest, synth_features, synth_scene, synth_tile, write_synthetic_dataset,
    SyntheticDatasetParams, SyntheticScene, SyntheticSceneParams,
};
