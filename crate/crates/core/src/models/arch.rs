//! Network wiring for the four architectures.

use rand::Rng;

use super::layers::{AttentionGate, Conv, ConvBn, DoubleConv, UpConv};
use super::{Arch, ModelConfig, Scale};
use crate::nn::{Graph, ParamStore, Var};

#[derive(Debug, Clone)]
pub(crate) enum Net {
    Unet(UNet),
    Segnet(SegNet),
    Fcn(Fcn),
}

impl Net {
    pub fn build<R: Rng + ?Sized>(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut R) -> Self {
        match cfg.arch {
            Arch::Unet => Net::Unet(UNet::build(cfg, store, rng, false)),
            Arch::AttentionUnet => Net::Unet(UNet::build(cfg, store, rng, true)),
            Arch::SegnetResnet50 => Net::Segnet(SegNet::build(cfg, store, rng)),
            Arch::Fcn32Vgg16 => Net::Fcn(Fcn::build(cfg, store, rng)),
        }
    }

    /// Pre-sigmoid logits, N×1×H×W.
    pub fn logits(&self, g: &mut Graph, x: Var) -> Var {
        match self {
            Net::Unet(n) => n.forward(g, x),
            Net::Segnet(n) => n.forward(g, x),
            Net::Fcn(n) => n.forward(g, x),
        }
    }
}

/// Symmetric encoder/decoder with skip concatenations, optionally gated.
#[derive(Debug, Clone)]
pub(crate) struct UNet {
    enc: Vec<DoubleConv>,
    up: Vec<UpConv>,
    gates: Vec<Option<AttentionGate>>,
    dec: Vec<DoubleConv>,
    head: Conv,
}

impl UNet {
    fn build<R: Rng + ?Sized>(
        cfg: &ModelConfig,
        store: &mut ParamStore,
        rng: &mut R,
        attention: bool,
    ) -> Self {
        let widths: Vec<usize> = (0..=cfg.depth).map(|l| cfg.base_width << l).collect();
        let mut enc = Vec::new();
        let mut cin = cfg.in_channels;
        for (l, &w) in widths.iter().enumerate() {
            enc.push(DoubleConv::new(store, rng, &format!("enc{l}"), cin, w));
            cin = w;
        }
        let (mut up, mut gates, mut dec) = (Vec::new(), Vec::new(), Vec::new());
        for l in (0..cfg.depth).rev() {
            let w = widths[l];
            up.push(UpConv::new(store, rng, &format!("up{l}"), widths[l + 1], w, 2));
            gates.push(
                attention
                    .then(|| AttentionGate::new(store, rng, &format!("att{l}"), w, w, (w / 2).max(1))),
            );
            dec.push(DoubleConv::new(store, rng, &format!("dec{l}"), 2 * w, w));
        }
        let head = Conv::new(store, rng, "head", widths[0], 1, 1, true);
        UNet {
            enc,
            up,
            gates,
            dec,
            head,
        }
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let depth = self.up.len();
        let mut skips = Vec::with_capacity(depth);
        let mut x = self.enc[0].forward(g, x);
        for l in 0..depth {
            skips.push(x);
            let p = g.max_pool2(x);
            x = self.enc[l + 1].forward(g, p);
        }
        // decoder layers are stored from the deepest level upwards
        for (i, skip) in skips.into_iter().rev().enumerate() {
            let u = self.up[i].forward(g, x);
            let s = match &self.gates[i] {
                Some(gate) => gate.forward(g, skip, u),
                None => skip,
            };
            let cat = g.concat(s, u);
            x = self.dec[i].forward(g, cat);
        }
        self.head.forward(g, x)
    }
}

/// Bottleneck residual block: 1×1 reduce, 3×3, 1×1 expand, plus shortcut.
#[derive(Debug, Clone)]
struct Bottleneck {
    reduce: ConvBn,
    conv: ConvBn,
    expand: ConvBn,
    projection: Option<ConvBn>,
}

impl Bottleneck {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        cin: usize,
        mid: usize,
        cout: usize,
    ) -> Self {
        Bottleneck {
            reduce: ConvBn::new(store, rng, &format!("{name}.reduce"), cin, mid, 1),
            conv: ConvBn::new(store, rng, &format!("{name}.conv"), mid, mid, 3),
            // each block starts as its shortcut, so depth does not inflate activations at init
            expand: ConvBn::zero_scaled(store, rng, &format!("{name}.expand"), mid, cout, 1),
            projection: (cin != cout)
                .then(|| ConvBn::new(store, rng, &format!("{name}.proj"), cin, cout, 1)),
        }
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let y = self.reduce.forward(g, x, true);
        let y = self.conv.forward(g, y, true);
        let y = self.expand.forward(g, y, false);
        let shortcut = match &self.projection {
            Some(p) => p.forward(g, x, false),
            None => x,
        };
        let s = g.add(y, shortcut);
        g.relu(s)
    }
}

/// Residual-block encoder and upsampling decoder without skip connections.
#[derive(Debug, Clone)]
pub(crate) struct SegNet {
    stem: ConvBn,
    stages: Vec<Vec<Bottleneck>>,
    up: Vec<UpConv>,
    dec: Vec<Vec<ConvBn>>,
    head: Conv,
}

/// Residual blocks per stage in the 50-layer pattern.
const RESNET50_BLOCKS: [usize; 4] = [3, 4, 6, 3];
/// Convolutions per stage in the 16-layer pattern.
const VGG16_CONVS: [usize; 5] = [2, 2, 3, 3, 3];

impl SegNet {
    fn build<R: Rng + ?Sized>(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut R) -> Self {
        let base = cfg.base_width;
        let stem = ConvBn::new(store, rng, "stem", cfg.in_channels, base, 3);
        let mut stages = Vec::new();
        let mut cin = base;
        for l in 0..cfg.depth {
            let (mid, cout) = (base << l, 4 * (base << l));
            let blocks = match cfg.scale {
                Scale::Desk => 1,
                Scale::Paper => RESNET50_BLOCKS[l.min(3)],
            };
            stages.push(
                (0..blocks)
                    .map(|b| {
                        let block_in = if b == 0 { cin } else { cout };
                        Bottleneck::new(store, rng, &format!("stage{l}.block{b}"), block_in, mid, cout)
                    })
                    .collect(),
            );
            cin = cout;
        }
        let convs = match cfg.scale {
            Scale::Desk => 1,
            Scale::Paper => 2,
        };
        let (mut up, mut dec) = (Vec::new(), Vec::new());
        for l in (0..cfg.depth).rev() {
            let w = base << l;
            up.push(UpConv::new(store, rng, &format!("up{l}"), cin, w, 2));
            dec.push(
                (0..convs)
                    .map(|i| ConvBn::new(store, rng, &format!("dec{l}.conv{i}"), w, w, 3))
                    .collect(),
            );
            cin = w;
        }
        let head = Conv::new(store, rng, "head", cin, 1, 1, true);
        SegNet {
            stem,
            stages,
            up,
            dec,
            head,
        }
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let mut x = self.stem.forward(g, x, true);
        for stage in &self.stages {
            x = g.max_pool2(x);
            for block in stage {
                x = block.forward(g, x);
            }
        }
        for (up, convs) in self.up.iter().zip(&self.dec) {
            x = up.forward(g, x);
            for c in convs {
                x = c.forward(g, x, true);
            }
        }
        self.head.forward(g, x)
    }
}

/// Plain-convolution encoder with a single learned upsampling head that
/// restores full resolution in one step.
#[derive(Debug, Clone)]
pub(crate) struct Fcn {
    stages: Vec<Vec<ConvBn>>,
    fc6: ConvBn,
    fc7: ConvBn,
    score: UpConv,
}

impl Fcn {
    fn build<R: Rng + ?Sized>(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut R) -> Self {
        let mut stages = Vec::new();
        let mut cin = cfg.in_channels;
        for l in 0..cfg.depth {
            let w = cfg.base_width << l.min(3);
            let n = match cfg.scale {
                Scale::Desk => 2,
                Scale::Paper => VGG16_CONVS[l.min(4)],
            };
            stages.push(
                (0..n)
                    .map(|i| {
                        let c = ConvBn::new(store, rng, &format!("stage{l}.conv{i}"), cin, w, 3);
                        cin = w;
                        c
                    })
                    .collect(),
            );
        }
        let fc = 2 * cin;
        let fc6 = ConvBn::new(store, rng, "fc6", cin, fc, 3);
        let fc7 = ConvBn::new(store, rng, "fc7", fc, fc, 1);
        let score = UpConv::new(store, rng, "score_up", fc, 1, 1 << cfg.depth);
        Fcn {
            stages,
            fc6,
            fc7,
            score,
        }
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let mut x = x;
        for stage in &self.stages {
            for c in stage {
                x = c.forward(g, x, true);
            }
            x = g.max_pool2(x);
        }
        let x = self.fc6.forward(g, x, true);
        let x = self.fc7.forward(g, x, true);
        self.score.forward(g, x)
    }
}
