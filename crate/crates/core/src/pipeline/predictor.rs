use ndarray::Array2;

use crate::error::{Error, Result};
use crate::ingest::{ScenarioSpec, TileData};
use crate::models::{Checkpoint, SegmentationModel};
use crate::nn::Tensor;
use crate::preprocess::{NormalizationStats, SplitRatios};
use crate::train::{tile_sample, TrainConfig};

/// Source of per-pixel forest probabilities for a tile.
#[derive(Debug, Clone)]
pub enum Predictor {
    Model {
        model: SegmentationModel,
        scenario: ScenarioSpec,
        stats: NormalizationStats,
        /// Split settings the model was trained with, if recorded.
        split: Option<(SplitRatios, u64)>,
    },
    /// The tile's own ground-truth mask, as 0/1 probabilities.
    Reference,
}

impl Predictor {
    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let scenario = match ck.meta.scenario {
            Some(s) => s,
            None => ScenarioSpec::from_arity(ck.model.config().in_channels).ok_or_else(|| {
                Error::Config("checkpoint does not record its input scenario".into())
            })?,
        };
        let stats = ck.meta.normalization.ok_or_else(|| {
            Error::Config("checkpoint carries no normalization statistics".into())
        })?;
        let split = ck
            .meta
            .train_config
            .and_then(|v| serde_json::from_value::<TrainConfig>(v).ok())
            .map(|c| (c.split, c.seed));
        Ok(Predictor::Model {
            model: ck.model,
            scenario,
            stats,
            split,
        })
    }

    pub fn classifier_name(&self) -> String {
        match self {
            Predictor::Model { model, .. } => model.config().arch.name().to_string(),
            Predictor::Reference => "reference".into(),
        }
    }

    pub fn scenario_name(&self) -> String {
        match self {
            Predictor::Model { scenario, .. } => scenario.name().to_string(),
            Predictor::Reference => "reference".into(),
        }
    }

    /// Probabilities on the tile grid, plus the reference labels.
    pub fn predict_tile(&self, tile: TileData) -> Result<(Array2<f64>, Array2<u8>)> {
        match self {
            Predictor::Reference => {
                let labels = tile.mask.into_labels();
                Ok((labels.mapv(f64::from), labels))
            }
            Predictor::Model {
                model,
                scenario,
                stats,
                ..
            } => {
                let s = tile_sample(tile, *scenario, stats)?;
                let (h, w, c) = s.features.dim();
                let x = Tensor::from_nhwc(s.features.view().into_shape_with_order((1, h, w, c)).expect("contiguous sample"));
                let probs = model.predict(&x)?;
                let probs = Array2::from_shape_vec((h, w), probs.into_vec()).expect("one probability per pixel");
                Ok((probs, s.labels))
            }
        }
    }
}
