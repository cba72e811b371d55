use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{Conv2d, ConvBlock, Registrar};
use crate::numcore::{Conv2dSpec, ParamId, ParamKind, ParamStore, Real, Tape, Var};

/// Nearest ×2 upsampling along frequency (cropped to `bins`) followed by a conv block.
#[derive(Clone, Debug)]
pub struct Upsampler {
    pub block: ConvBlock,
    pub bins: usize,
}

impl Upsampler {
    pub fn new<T: Real, R: Rng + ?Sized>(
        reg: &mut Registrar<'_, T, R>,
        prefix: &str,
        channels: usize,
        kernel: (usize, usize),
        bins: usize,
        separable: bool,
    ) -> Result<Self> {
        let same = Conv2dSpec::padded((kernel.0 / 2, kernel.1 / 2));
        Ok(Self { block: ConvBlock::new(reg, &format!("{prefix}.up"), channels, channels, kernel, same, separable)?, bins })
    }

    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, z: Var<'t, T>) -> Result<Var<'t, T>> {
        let f = z.shape()[3];
        if 2 * f < self.bins {
            return Err(Error::InvalidShape { op: "upsample", detail: format!("{f} bins cannot reach {}", self.bins) });
        }
        self.block.forward(tape, store, z.upsample_nearest(3, 2, self.bins)?)
    }
}

/// Predicts a bounded magnitude mask with a per-bin learnable sigmoid.
#[derive(Clone, Debug)]
pub struct MaskDecoder {
    pub up: Upsampler,
    pub head: Conv2d,
    pub slope: ParamId,
    pub beta: f64,
}

impl MaskDecoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        reg: &mut Registrar<'_, T, R>,
        prefix: &str,
        channels: usize,
        kernel: (usize, usize),
        bins: usize,
        beta: f64,
        separable: bool,
    ) -> Result<Self> {
        Ok(Self {
            up: Upsampler::new(reg, prefix, channels, kernel, bins, separable)?,
            head: Conv2d::new(reg, &format!("{prefix}.head"), channels, 1, (1, 1), Conv2dSpec::default(), true)?,
            slope: reg.constant(&format!("{prefix}.lsigmoid"), ParamKind::Slope, &[bins], 1.0)?,
            beta,
        })
    }

    /// `[B, 1, T, F]` mask in `(0, β)`.
    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, z: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.head.forward(tape, store, self.up.forward(tape, store, z)?)?;
        h.learnable_sigmoid(tape.param(store, self.slope), self.beta)
    }
}

/// Two parallel 1-channel heads give pseudo-real / pseudo-imaginary parts;
/// the phase is their two-argument arctangent.
#[derive(Clone, Debug)]
pub struct PhaseDecoder {
    pub up: Upsampler,
    pub real: Conv2d,
    pub imag: Conv2d,
}

impl PhaseDecoder {
    pub fn new<T: Real, R: Rng + ?Sized>(
        reg: &mut Registrar<'_, T, R>,
        prefix: &str,
        channels: usize,
        kernel: (usize, usize),
        bins: usize,
        separable: bool,
    ) -> Result<Self> {
        Ok(Self {
            up: Upsampler::new(reg, prefix, channels, kernel, bins, separable)?,
            real: Conv2d::new(reg, &format!("{prefix}.real"), channels, 1, (1, 1), Conv2dSpec::default(), true)?,
            imag: Conv2d::new(reg, &format!("{prefix}.imag"), channels, 1, (1, 1), Conv2dSpec::default(), true)?,
        })
    }

    /// Pseudo components `(r, i)`, each `[B, 1, T, F]`.
    pub fn components<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, z: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let u = self.up.forward(tape, store, z)?;
        Ok((self.real.forward(tape, store, u)?, self.imag.forward(tape, store, u)?))
    }
}
