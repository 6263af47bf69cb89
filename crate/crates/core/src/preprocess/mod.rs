pub mod augment;
pub mod normalize;
pub mod split;

pub use augment::{
    apply_to_chip, apply_to_mask, augment, transform_features, transform_labels, AugmentParams,
    AugmentationPolicy, FillMode,
};
pub use normalize::{
    fit_percentiles, percentile_normalize, percentile_sorted, BandStats, NormalizationStats,
    Orientation,
};
pub use split::{split_dataset, split_tiles, SplitAssignment, SplitRatios};
