//! Dense encoder → TS-conformer stack → magnitude-mask and phase decoders.

mod conformer;
mod decoder;
mod encoder;

pub use conformer::{ConformerBlock, ConvModule, MultiHeadAttention, TsConformer};
pub use decoder::{MaskDecoder, PhaseDecoder, Upsampler};
pub use encoder::{DenseEncoder, DilatedDenseBlock, DENSE_DILATIONS};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{AudioClip, StftConfig, StftPlan, COMPRESSION};
use crate::error::{Error, Result};
use crate::layers::Registrar;
use crate::numcore::{ParamId, ParamStore, Real, Tape, Tensor, Var};

pub const MASK_BETA: f64 = 1.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub base_channels: usize,
    pub num_ts_blocks: usize,
    pub heads: usize,
    pub kernel: (usize, usize),
    pub dilations: Vec<usize>,
    pub compression: f64,
    pub mask_beta: f64,
    pub conformer_kernel: usize,
    pub use_depthwise: bool,
    pub use_residual_attention: bool,
    /// Adds the noisy phasor to the predicted pseudo real/imaginary parts so
    /// an untrained phase decoder starts from the noisy phase.
    pub phase_skip: bool,
    pub stft: StftConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl GeneratorConfig {
    pub fn desk() -> Self {
        Self {
            base_channels: 16,
            num_ts_blocks: 2,
            heads: 4,
            kernel: (3, 3),
            dilations: DENSE_DILATIONS.to_vec(),
            compression: COMPRESSION,
            mask_beta: MASK_BETA,
            conformer_kernel: 31,
            use_depthwise: true,
            use_residual_attention: true,
            phase_skip: true,
            stft: StftConfig::default(),
        }
    }

    pub fn paper_like() -> Self {
        Self { base_channels: 64, num_ts_blocks: 4, ..Self::desk() }
    }

    /// Tiny network on a 32-point STFT (17 bins) for finite-difference checks.
    pub fn micro() -> Self {
        Self {
            base_channels: 4,
            num_ts_blocks: 1,
            heads: 2,
            conformer_kernel: 3,
            stft: StftConfig { n_fft: 32, hop: 8, ..StftConfig::default() },
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.base_channels == 0 {
            return bad("base_channels must be positive".into());
        }
        if self.heads == 0 || !self.base_channels.is_multiple_of(self.heads) {
            return bad(format!("base_channels {} not divisible by heads {}", self.base_channels, self.heads));
        }
        if self.dilations != DENSE_DILATIONS {
            return bad(format!("dense dilations must be {DENSE_DILATIONS:?}, got {:?}", self.dilations));
        }
        if self.kernel.0.is_multiple_of(2) || self.kernel.1.is_multiple_of(2) || self.conformer_kernel.is_multiple_of(2) {
            return bad("kernels must be odd".into());
        }
        if !(self.compression > 0.0) || !(self.mask_beta > 0.0) {
            return bad("compression and mask_beta must be positive".into());
        }
        if self.stft.bins() < 3 {
            return bad(format!("STFT with {} bins is too small", self.stft.bins()));
        }
        Ok(())
    }
}

/// Network-side view of one clip: stacked features plus the compressed
/// magnitude and unit phasor grids, all `[1, 1, T, F]` except `features`.
#[derive(Clone, Debug)]
pub struct SpectralInput<T> {
    pub features: Tensor<T>,
    pub mag_c: Tensor<T>,
    pub phase: Tensor<T>,
    pub cos: Tensor<T>,
    pub sin: Tensor<T>,
    pub frames: usize,
    pub bins: usize,
    pub len: usize,
    pub sample_rate: u32,
}

impl<T: Real> SpectralInput<T> {
    pub fn analyze(plan: &StftPlan, clip: &AudioClip, compression: f64) -> Result<Self> {
        let spec = plan.stft(clip)?;
        let (frames, bins) = (spec.frames, spec.bins);
        let grid = |v: Vec<f64>| Tensor::from_f64(&[1, 1, frames, bins], &v);
        let mag_c: Vec<f64> = spec.magnitude.iter().map(|m| m.powf(compression)).collect();
        let mut stacked = mag_c.clone();
        stacked.extend_from_slice(&spec.phase);
        Ok(Self {
            features: Tensor::from_f64(&[1, 2, frames, bins], &stacked)?,
            cos: grid(spec.phase.iter().map(|p| p.cos()).collect())?,
            sin: grid(spec.phase.iter().map(|p| p.sin()).collect())?,
            phase: grid(spec.phase.clone())?,
            mag_c: grid(mag_c)?,
            frames,
            bins,
            len: clip.len(),
            sample_rate: clip.sample_rate(),
        })
    }

    /// Compressed-magnitude-scaled real and imaginary parts.
    pub fn compressed_complex(&self) -> (Tensor<T>, Tensor<T>) {
        (self.mag_c.zip_map(&self.cos, |m, c| m * c), self.mag_c.zip_map(&self.sin, |m, s| m * s))
    }
}

/// Differentiable generator outputs; spectral grids are `[1, 1, T, F]`.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorOutput<'t, T: Real> {
    pub mask: Var<'t, T>,
    pub mag_c: Var<'t, T>,
    pub phase: Var<'t, T>,
    pub real_c: Var<'t, T>,
    pub imag_c: Var<'t, T>,
    pub waveform: Var<'t, T>,
}

/// Inference result with plain `[T, F]` grids.
#[derive(Clone, Debug)]
pub struct Enhanced {
    pub clip: AudioClip,
    pub magnitude: Vec<f64>,
    pub phase: Vec<f64>,
    pub mask: Vec<f64>,
    pub frames: usize,
    pub bins: usize,
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub encoder: DenseEncoder,
    pub blocks: Vec<TsConformer>,
    pub mask: MaskDecoder,
    pub phase: PhaseDecoder,
    plan: StftPlan,
}

impl Generator {
    pub const PREFIX: &'static str = "gen";

    pub fn new<T: Real, R: Rng + ?Sized>(config: GeneratorConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let plan = StftPlan::new(config.stft)?;
        let mut reg = Registrar::new(store, rng);
        let (c, k, ds) = (config.base_channels, config.kernel, config.use_depthwise);
        let bins = config.stft.bins();
        let encoder = DenseEncoder::new(&mut reg, "gen.encoder", c, k, ds)?;
        let blocks = (0..config.num_ts_blocks)
            .map(|i| {
                let mk = |reg: &mut Registrar<'_, T, R>, stage: &str| {
                    let prefix = format!("gen.ts{i}.{stage}");
                    ConformerBlock::new(reg, &prefix, c, config.heads, config.conformer_kernel, config.use_residual_attention)
                };
                Ok(TsConformer { time: mk(&mut reg, "time")?, freq: mk(&mut reg, "freq")? })
            })
            .collect::<Result<_>>()?;
        let mask = MaskDecoder::new(&mut reg, "gen.mask", c, k, bins, config.mask_beta, ds)?;
        let phase = PhaseDecoder::new(&mut reg, "gen.phase", c, k, bins, ds)?;
        let gen = Self { config, encoder, blocks, mask, phase, plan };
        if gen.config.phase_skip {
            // zero heads: training starts from the noisy phase
            for id in gen.phase_head_params() {
                reg.store.get_mut(id).tensor.data_mut().iter_mut().for_each(|w| *w = T::zero());
            }
        }
        Ok(gen)
    }

    /// Weights and biases of the pseudo-real / pseudo-imaginary phase heads.
    pub fn phase_head_params(&self) -> Vec<ParamId> {
        [&self.phase.real, &self.phase.imag].into_iter().flat_map(|h| std::iter::once(h.weight).chain(h.bias)).collect()
    }

    pub fn plan(&self) -> &StftPlan {
        &self.plan
    }

    pub fn analyze<T: Real>(&self, clip: &AudioClip) -> Result<SpectralInput<T>> {
        SpectralInput::analyze(&self.plan, clip, self.config.compression)
    }

    /// Shared trunk: encoder followed by the TS-conformer stack.
    pub fn trunk<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, features: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut z = self.encoder.forward(tape, store, features)?;
        for block in &self.blocks {
            z = block.forward(tape, store, z)?;
        }
        Ok(z)
    }

    pub fn forward<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        input: &SpectralInput<T>,
    ) -> Result<GeneratorOutput<'t, T>> {
        if input.bins != self.config.stft.bins() {
            return Err(Error::ShapeMismatch { op: "generator", lhs: vec![input.bins], rhs: vec![self.config.stft.bins()] });
        }
        let z = self.trunk(tape, store, tape.constant(input.features.clone()))?;
        let mask = self.mask.forward(tape, store, z)?;
        let mag_c = mask.mul(tape.constant(input.mag_c.clone()))?;
        let (mut r, mut i) = self.phase.components(tape, store, z)?;
        if self.config.phase_skip {
            r = r.add(tape.constant(input.cos.clone()))?;
            i = i.add(tape.constant(input.sin.clone()))?;
        }
        let phase = i.atan2(r)?;
        let (cos, sin) = (phase.cos(), phase.sin());
        let mag = mag_c.powf(1.0 / self.config.compression);
        let waveform = self.plan.istft_var(mag.mul(cos)?, mag.mul(sin)?, input.len)?;
        Ok(GeneratorOutput { mask, mag_c, phase, real_c: mag_c.mul(cos)?, imag_c: mag_c.mul(sin)?, waveform })
    }

    /// Eval-mode forward without gradient tracking.
    pub fn enhance<T: Real>(&self, store: &ParamStore<T>, clip: &AudioClip) -> Result<Enhanced> {
        let input = self.analyze::<T>(clip)?;
        let tape = Tape::no_grad(false);
        let out = self.forward(&tape, store, &input)?;
        let to64 = |v: Var<'_, T>| v.value().data().iter().map(|x| x.as_f64()).collect::<Vec<_>>();
        let wave = to64(out.waveform);
        if let Some(bad) = wave.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("enhanced waveform sample {bad}")));
        }
        let c = self.config.compression;
        Ok(Enhanced {
            clip: AudioClip::new(wave, input.sample_rate)?,
            magnitude: to64(out.mag_c).into_iter().map(|m| m.powf(1.0 / c)).collect(),
            phase: to64(out.phase),
            mask: to64(out.mask),
            frames: input.frames,
            bins: input.bins,
        })
    }
}

/// Raw or effective (unmasked) parameter count under a name prefix.
pub fn param_count<T: Real>(store: &ParamStore<T>, prefix: &str, effective: bool) -> usize {
    store.count(prefix, effective)
}
