//! Parameterized building blocks shared by the architectures.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{BnParams, Graph, Init, Mode, ParamId, ParamStore, Tensor, Var};

pub(crate) fn bn_params<R: Rng + ?Sized>(
    store: &mut ParamStore,
    rng: &mut R,
    name: &str,
    c: usize,
) -> BnParams {
    bn_params_scaled(store, rng, name, c, 1.0)
}

pub(crate) fn bn_params_scaled<R: Rng + ?Sized>(
    store: &mut ParamStore,
    rng: &mut R,
    name: &str,
    c: usize,
    gamma: f64,
) -> BnParams {
    BnParams {
        gamma: store.add(format!("{name}.gamma"), &[c], Init::Const(gamma), true, rng),
        beta: store.add(format!("{name}.beta"), &[c], Init::Const(0.0), true, rng),
        mean: store.add(format!("{name}.running_mean"), &[c], Init::Const(0.0), false, rng),
        var: store.add(format!("{name}.running_var"), &[c], Init::Const(1.0), false, rng),
    }
}

/// Convolution (no bias) followed by batch-norm.
#[derive(Debug, Clone)]
pub(crate) struct ConvBn {
    w: ParamId,
    bn: BnParams,
}

impl ConvBn {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
    ) -> Self {
        let w = store.add(
            format!("{name}.weight"),
            &[cout, cin, k, k],
            Init::HeNormal { fan_in: cin * k * k },
            true,
            rng,
        );
        ConvBn {
            w,
            bn: bn_params(store, rng, &format!("{name}.bn"), cout),
        }
    }

    /// As `new`, but the batch-norm scale starts at zero: the layer outputs
    /// its shift only until trained.
    pub fn zero_scaled<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
    ) -> Self {
        let w = store.add(
            format!("{name}.weight"),
            &[cout, cin, k, k],
            Init::HeNormal { fan_in: cin * k * k },
            true,
            rng,
        );
        ConvBn {
            w,
            bn: bn_params_scaled(store, rng, &format!("{name}.bn"), cout, 0.0),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, relu: bool) -> Var {
        let y = g.conv(x, self.w, None);
        let y = g.batch_norm(y, self.bn);
        if relu {
            g.relu(y)
        } else {
            y
        }
    }
}

/// Two 3×3 conv-BN-ReLU layers.
#[derive(Debug, Clone)]
pub(crate) struct DoubleConv(ConvBn, ConvBn);

impl DoubleConv {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
    ) -> Self {
        DoubleConv(
            ConvBn::new(store, rng, &format!("{name}.conv1"), cin, cout, 3),
            ConvBn::new(store, rng, &format!("{name}.conv2"), cout, cout, 3),
        )
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let y = self.0.forward(g, x, true);
        self.1.forward(g, y, true)
    }
}

/// Convolution with bias (1×1 heads and projections).
#[derive(Debug, Clone)]
pub(crate) struct Conv {
    w: ParamId,
    b: Option<ParamId>,
}

impl Conv {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        bias: bool,
    ) -> Self {
        let w = store.add(
            format!("{name}.weight"),
            &[cout, cin, k, k],
            Init::HeNormal { fan_in: cin * k * k },
            true,
            rng,
        );
        let b = bias.then(|| store.add(format!("{name}.bias"), &[cout], Init::Const(0.0), true, rng));
        Conv { w, b }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        g.conv(x, self.w, self.b)
    }
}

/// Learned upsampling: transposed convolution with kernel = stride = `f`.
#[derive(Debug, Clone)]
pub(crate) struct UpConv {
    w: ParamId,
    b: ParamId,
}

impl UpConv {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        f: usize,
    ) -> Self {
        UpConv {
            w: store.add(
                format!("{name}.weight"),
                &[cin, cout, f, f],
                Init::HeNormal { fan_in: cin },
                true,
                rng,
            ),
            b: store.add(format!("{name}.bias"), &[cout], Init::Const(0.0), true, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        g.upconv(x, self.w, Some(self.b))
    }
}

/// Additive attention gate on a skip connection:
/// `α = σ(ψ(relu(W_x·skip + W_g·gate + b_g)) + b_ψ)`, output `skip ⊙ α`.
/// The gate signal must already be at the skip's resolution.
#[derive(Debug, Clone)]
pub struct AttentionGate {
    pub wx: ParamId,
    pub wg: ParamId,
    pub bg: ParamId,
    pub psi: ParamId,
    pub psi_b: ParamId,
    pub skip_channels: usize,
    pub gate_channels: usize,
}

impl AttentionGate {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        skip_channels: usize,
        gate_channels: usize,
        inter: usize,
    ) -> Self {
        let mut add = |suffix: &str, shape: &[usize], init| {
            store.add(format!("{name}.{suffix}"), shape, init, true, rng)
        };
        AttentionGate {
            wx: add("wx", &[inter, skip_channels, 1, 1], Init::HeNormal { fan_in: skip_channels }),
            wg: add("wg", &[inter, gate_channels, 1, 1], Init::HeNormal { fan_in: gate_channels }),
            bg: add("bg", &[inter], Init::Const(0.0)),
            psi: add("psi", &[1, inter, 1, 1], Init::HeNormal { fan_in: inter }),
            psi_b: add("psi_bias", &[1], Init::Const(0.0)),
            skip_channels,
            gate_channels,
        }
    }

    /// Attention coefficients, N×1×H×W in (0, 1).
    pub fn alpha(&self, g: &mut Graph, skip: Var, gate: Var) -> Var {
        let theta = g.conv(skip, self.wx, None);
        let phi = g.conv(gate, self.wg, Some(self.bg));
        let s = g.add(theta, phi);
        let s = g.relu(s);
        let psi = g.conv(s, self.psi, Some(self.psi_b));
        g.sigmoid(psi)
    }

    pub fn forward(&self, g: &mut Graph, skip: Var, gate: Var) -> Var {
        let alpha = self.alpha(g, skip, gate);
        g.gate(skip, alpha)
    }
}

/// Apply an attention gate outside of a model, returning the gated skip map.
pub fn attention_gate(
    store: &ParamStore,
    gate_layer: &AttentionGate,
    skip: &Tensor,
    gate: &Tensor,
) -> Result<Tensor> {
    if skip.c() != gate_layer.skip_channels || gate.c() != gate_layer.gate_channels {
        return Err(Error::shape(
            format!(
                "skip with {} and gate with {} channels",
                gate_layer.skip_channels, gate_layer.gate_channels
            ),
            format!("{} and {}", skip.c(), gate.c()),
        ));
    }
    if (skip.n(), skip.h(), skip.w()) != (gate.n(), gate.h(), gate.w()) {
        return Err(Error::shape(
            format!("gate of {}x{}x{}", skip.n(), skip.h(), skip.w()),
            format!("{}x{}x{}", gate.n(), gate.h(), gate.w()),
        ));
    }
    let mut g = Graph::new(store, Mode::Eval);
    let s = g.input(skip.clone());
    let gt = g.input(gate.clone());
    let out = gate_layer.forward(&mut g, s, gt);
    Ok(g.value(out).clone())
}
