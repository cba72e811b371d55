//! Parameterized building blocks shared by the generator and discriminator.

use rand::Rng;

use crate::error::Result;
use crate::numcore::{Conv2dSpec, Init, ParamId, ParamKind, ParamStore, Real, Tape, Tensor, Var};

pub const NORM_EPS: f64 = 1e-5;
pub const PRELU_INIT: f64 = 0.25;

/// Registers freshly initialised parameters under a name prefix.
pub struct Registrar<'a, T, R: ?Sized> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut R,
    /// Multiplier on the default init bound (1.0 = Kaiming-uniform-style 1/sqrt(fan_in)).
    pub init_scale: f64,
}

impl<'a, T: Real, R: Rng + ?Sized> Registrar<'a, T, R> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut R) -> Self {
        Self { store, rng, init_scale: 1.0 }
    }

    pub fn uniform(&mut self, name: &str, kind: ParamKind, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let t = Init::uniform(shape, fan_in, self.init_scale, self.rng);
        self.store.insert(name, kind, t)
    }

    pub fn constant(&mut self, name: &str, kind: ParamKind, shape: &[usize], value: f64) -> Result<ParamId> {
        self.store.insert(name, kind, Tensor::full(shape, T::lit(value)))
    }
}

/// Per-channel affine of a normalization layer.
#[derive(Clone, Debug)]
pub struct Affine {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Affine {
    pub fn new<T: Real, R: Rng + ?Sized>(reg: &mut Registrar<'_, T, R>, prefix: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: reg.constant(&format!("{prefix}.gamma"), ParamKind::NormAffine, &[channels], 1.0)?,
            beta: reg.constant(&format!("{prefix}.beta"), ParamKind::NormAffine, &[channels], 0.0)?,
        })
    }

    pub fn instance_norm<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.instance_norm(tape.param(store, self.gamma), tape.param(store, self.beta), NORM_EPS)
    }

    pub fn layer_norm<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(tape.param(store, self.gamma), tape.param(store, self.beta), NORM_EPS)
    }
}

/// Standard 2-D convolution with optional bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: Conv2dSpec,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        reg: &mut Registrar<'_, T, R>,
        prefix: &str,
        ci: usize,
        co: usize,
        kernel: (usize, usize),
        spec: Conv2dSpec,
        bias: bool,
    ) -> Result<Self> {
        let fan_in = ci / spec.groups * kernel.0 * kernel.1;
        let weight =
            reg.uniform(&format!("{prefix}.weight"), ParamKind::ConvWeight, &[co, ci / spec.groups, kernel.0, kernel.1], fan_in)?;
        let bias = if bias { Some(reg.uniform(&format!("{prefix}.bias"), ParamKind::Bias, &[co], fan_in)?) } else { None };
        Ok(Self { weight, bias, spec })
    }

    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let b = self.bias.map(|b| tape.param(store, b));
        x.conv2d(tape.param(store, self.weight), b, self.spec)
    }
}

/// Fully connected layer over the last axis, weight `[out, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        reg: &mut Registrar<'_, T, R>,
        prefix: &str,
        input: usize,
        output: usize,
        kind: ParamKind,
        bias: bool,
    ) -> Result<Self> {
        let weight = reg.uniform(&format!("{prefix}.weight"), kind, &[output, input], input)?;
        let bias = if bias { Some(reg.uniform(&format!("{prefix}.bias"), ParamKind::Bias, &[output], input)?) } else { None };
        Ok(Self { weight, bias })
    }

    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.linear(tape.param(store, self.weight), self.bias.map(|b| tape.param(store, b)))
    }
}

/// Convolution stage of a conv block: depthwise-separable or standard.
#[derive(Clone, Debug)]
pub enum BlockConv {
    Separable { depthwise: ParamId, pointwise: ParamId, spec: Conv2dSpec },
    Standard(Conv2d),
}

/// Convolution (separable or standard, no bias) → instance norm → PReLU.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv: BlockConv,
    pub norm: Affine,
    pub prelu: ParamId,
    pub out_channels: usize,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        reg: &mut Registrar<'_, T, R>,
        prefix: &str,
        ci: usize,
        co: usize,
        kernel: (usize, usize),
        spec: Conv2dSpec,
        separable: bool,
    ) -> Result<Self> {
        // no conv bias: the instance norm that follows removes it
        let conv = if separable {
            let (kt, kf) = kernel;
            let depthwise = reg.uniform(&format!("{prefix}.dw.weight"), ParamKind::ConvWeight, &[ci, 1, kt, kf], kt * kf)?;
            let pointwise = reg.uniform(&format!("{prefix}.pw.weight"), ParamKind::ConvWeight, &[co, ci, 1, 1], ci)?;
            BlockConv::Separable { depthwise, pointwise, spec }
        } else {
            BlockConv::Standard(Conv2d::new(reg, &format!("{prefix}.conv"), ci, co, kernel, spec, false)?)
        };
        let norm = Affine::new(reg, &format!("{prefix}.norm"), co)?;
        let prelu = reg.constant(&format!("{prefix}.prelu"), ParamKind::Slope, &[co], PRELU_INIT)?;
        Ok(Self { conv, norm, prelu, out_channels: co })
    }

    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = match &self.conv {
            BlockConv::Separable { depthwise, pointwise, spec } => {
                x.depthwise_separable_conv2d(tape.param(store, *depthwise), None, tape.param(store, *pointwise), None, *spec)?
            }
            BlockConv::Standard(conv) => conv.forward(tape, store, x)?,
        };
        let y = self.norm.instance_norm(tape, store, y)?;
        y.prelu(tape.param(store, self.prelu))
    }
}
