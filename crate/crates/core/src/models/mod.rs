//! Segmentation architectures trained from scratch.
//!
//! All models map an N×H×W×C batch to per-pixel forest probabilities through
//! a single-logit sigmoid head. Width and depth are configurable so the same
//! wiring runs at desk scale and at the full published sizes.

mod arch;
pub mod checkpoint;
mod layers;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array4, ArrayView4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ScenarioSpec;
use crate::nn::{sigmoid, Graph, Mode, ParamStore, Tensor, Var};

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use layers::{attention_gate, AttentionGate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Unet,
    AttentionUnet,
    #[serde(rename = "segnet_resnet50")]
    SegnetResnet50,
    #[serde(rename = "fcn32_vgg16")]
    Fcn32Vgg16,
}

impl Arch {
    pub const ALL: [Arch; 4] = [
        Arch::Fcn32Vgg16,
        Arch::SegnetResnet50,
        Arch::Unet,
        Arch::AttentionUnet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Unet => "unet",
            Arch::AttentionUnet => "attention_unet",
            Arch::SegnetResnet50 => "segnet_resnet50",
            Arch::Fcn32Vgg16 => "fcn32_vgg16",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Arch::ALL
            .into_iter()
            .find(|a| a.name() == key)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown architecture `{s}` (expected unet, attention_unet, segnet_resnet50 or fcn32_vgg16)"
                ))
            })
    }
}

/// Block-count preset: `desk` keeps one block per stage, `paper` uses the
/// 50-layer residual and 16-layer plain-conv stage patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub in_channels: usize,
    #[serde(default = "default_base_width")]
    pub base_width: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scale: Scale,
}

fn default_base_width() -> usize {
    16
}

fn default_depth() -> usize {
    4
}

impl ModelConfig {
    pub fn new(arch: Arch, in_channels: usize) -> Self {
        ModelConfig {
            arch,
            in_channels,
            base_width: default_base_width(),
            depth: default_depth(),
            seed: 0,
            scale: Scale::Desk,
        }
    }

    pub fn for_scenario(arch: Arch, scenario: ScenarioSpec) -> Self {
        ModelConfig::new(arch, scenario.arity())
    }

    /// Published sizes: 64 base channels, full block patterns, and a 32×
    /// upsampling head for the FCN.
    pub fn paper(arch: Arch, in_channels: usize) -> Self {
        ModelConfig {
            base_width: 64,
            depth: if arch == Arch::Fcn32Vgg16 { 5 } else { 4 },
            scale: Scale::Paper,
            ..ModelConfig::new(arch, in_channels)
        }
    }

    pub fn with_base_width(mut self, base_width: usize) -> Self {
        self.base_width = base_width;
        self
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if ScenarioSpec::from_arity(self.in_channels).is_none() {
            return Err(Error::Config(format!(
                "in_channels must match a scenario arity (2, 4, 6 or 7), got {}",
                self.in_channels
            )));
        }
        if self.base_width < 4 {
            return Err(Error::Config(format!(
                "base_width must be at least 4, got {}",
                self.base_width
            )));
        }
        if !(2..=8).contains(&self.depth) {
            return Err(Error::Config(format!(
                "depth must lie in [2, 8], got {}",
                self.depth
            )));
        }
        Ok(())
    }

    /// Spatial dims must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << self.depth
    }
}

/// Samples per eval-mode forward chunk; eval mode has no cross-sample
/// coupling, so chunking does not change results.
const INFER_CHUNK: usize = 8;

#[derive(Debug, Clone)]
pub struct SegmentationModel {
    config: ModelConfig,
    store: ParamStore,
    net: arch::Net,
}

pub fn build_model(config: ModelConfig) -> Result<SegmentationModel> {
    SegmentationModel::build(config)
}

impl SegmentationModel {
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let net = arch::Net::build(&config, &mut store, &mut rng);
        Ok(SegmentationModel { config, store, net })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn num_params(&self) -> usize {
        self.store.num_trainable()
    }

    pub fn checksum(&self) -> u64 {
        self.store.checksum()
    }

    /// Check an NCHW shape against the model's channel count and divisor.
    pub fn check_input(&self, n: usize, c: usize, h: usize, w: usize) -> Result<()> {
        let d = self.config.divisor();
        if c != self.config.in_channels || h == 0 || w == 0 || h % d != 0 || w % d != 0 || n == 0 {
            return Err(Error::shape(
                format!(
                    "N×H×W×{} with N ≥ 1 and H, W positive multiples of {d}",
                    self.config.in_channels
                ),
                format!("{n}×{h}×{w}×{c}"),
            ));
        }
        Ok(())
    }

    /// Record the network on `g` and return its N×1×H×W logits.
    pub fn logits(&self, g: &mut Graph, x: Var) -> Var {
        self.net.logits(g, x)
    }

    /// Eval-mode probabilities for an NCHW batch, N×1×H×W.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let [n, c, h, w] = x.shape();
        self.check_input(n, c, h, w)?;
        let per = c * h * w;
        let mut out = Vec::with_capacity(n * h * w);
        for start in (0..n).step_by(INFER_CHUNK) {
            let m = INFER_CHUNK.min(n - start);
            let chunk = Tensor::from_vec([m, c, h, w], x.data()[start * per..(start + m) * per].to_vec())?;
            let mut g = Graph::new(&self.store, Mode::Eval);
            let xv = g.input(chunk);
            let z = self.logits(&mut g, xv);
            out.extend(g.value(z).data().iter().map(|&v| sigmoid(v)));
        }
        Tensor::from_vec([n, 1, h, w], out)
    }

    /// Probabilities for an N×H×W×C batch, returned as N×H×W×1.
    pub fn forward(&self, batch: ArrayView4<f64>) -> Result<Array4<f64>> {
        let (n, h, w, c) = batch.dim();
        self.check_input(n, c, h, w)?;
        Ok(self.predict(&Tensor::from_nhwc(batch))?.to_nhwc())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn batch(seed: u64, n: usize, h: usize, w: usize, c: usize) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_fn((n, h, w, c), |_| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn every_arch_preserves_shape() {
        for arch in Arch::ALL {
            let m = build_model(ModelConfig::new(arch, 4).with_base_width(4).with_depth(2)).unwrap();
            let out = m.forward(batch(1, 2, 8, 12, 4).view()).unwrap();
            assert_eq!(out.dim(), (2, 8, 12, 1), "{arch}");
            assert!(out.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn same_seed_same_checksum() {
        for arch in Arch::ALL {
            let cfg = ModelConfig::new(arch, 7).with_base_width(4).with_seed(3);
            let a = build_model(cfg.clone()).unwrap();
            let b = build_model(cfg.clone()).unwrap();
            assert_eq!(a.checksum(), b.checksum());
            let c = build_model(cfg.with_seed(4)).unwrap();
            assert_ne!(a.checksum(), c.checksum());
        }
    }

    #[test]
    fn rejects_bad_shapes_and_configs() {
        let m = build_model(ModelConfig::new(Arch::Unet, 2).with_base_width(4)).unwrap();
        assert!(matches!(m.forward(batch(0, 1, 24, 32, 2).view()), Err(Error::Shape { .. })));
        assert!(matches!(m.forward(batch(0, 1, 32, 32, 4).view()), Err(Error::Shape { .. })));
        assert!(build_model(ModelConfig::new(Arch::Unet, 3)).is_err());
        assert!(build_model(ModelConfig::new(Arch::Unet, 2).with_base_width(2)).is_err());
        assert!(build_model(ModelConfig::new(Arch::Unet, 2).with_depth(1)).is_err());
    }

    #[test]
    fn samples_are_independent() {
        let m = build_model(ModelConfig::new(Arch::AttentionUnet, 2).with_base_width(4).with_depth(2)).unwrap();
        let one = batch(5, 1, 8, 8, 2);
        let two = ndarray::concatenate(ndarray::Axis(0), &[one.view(), one.view()]).unwrap();
        let out = m.forward(two.view()).unwrap();
        assert_eq!(out.index_axis(ndarray::Axis(0), 0), out.index_axis(ndarray::Axis(0), 1));
    }

    #[test]
    fn doubling_width_at_least_triples_params() {
        for arch in Arch::ALL {
            for base in [4, 8, 16] {
                let a = build_model(ModelConfig::new(arch, 2).with_base_width(base)).unwrap();
                let b = build_model(ModelConfig::new(arch, 2).with_base_width(2 * base)).unwrap();
                assert!(b.num_params() >= 3 * a.num_params(), "{arch} at {base}");
            }
        }
    }

    #[test]
    fn arch_names_round_trip() {
        for arch in Arch::ALL {
            assert_eq!(arch.name().parse::<Arch>().unwrap(), arch);
            let json = serde_json::to_string(&arch).unwrap();
            assert_eq!(json, format!("\"{}\"", arch.name()));
        }
        assert!("resnet".parse::<Arch>().is_err());
    }
}
