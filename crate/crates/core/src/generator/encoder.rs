use rand::Rng;

use crate::error::Result;
use crate::layers::{ConvBlock, Registrar};
use crate::numcore::{concat, Conv2dSpec, ParamStore, Real, Tape, Var};

/// Dilation schedule of the dense block (time axis).
pub const DENSE_DILATIONS: [usize; 4] = [1, 2, 4, 8];

/// Four conv blocks; layer `i` sees the block input concatenated with every
/// earlier layer's output and is dilated by `DENSE_DILATIONS[i]` along time.
#[derive(Clone, Debug)]
pub struct DilatedDenseBlock {
    pub layers: Vec<ConvBlock>,
}

impl DilatedDenseBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(
        reg: &mut Registrar<'_, T, R>,
        prefix: &str,
        channels: usize,
        kernel: (usize, usize),
        separable: bool,
    ) -> Result<Self> {
        let layers = DENSE_DILATIONS
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let spec = Conv2dSpec::padded((d * (kernel.0 / 2), kernel.1 / 2)).dilation((d, 1));
                ConvBlock::new(reg, &format!("{prefix}.layer{i}"), (i + 1) * channels, channels, kernel, spec, separable)
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut skip = x;
        let mut out = x;
        for (i, layer) in self.layers.iter().enumerate() {
            out = layer.forward(tape, store, skip)?;
            if i + 1 < self.layers.len() {
                skip = concat(&[out, skip], 1)?;
            }
        }
        Ok(out)
    }

    /// Temporal receptive field in frames.
    pub fn receptive_field(kernel_t: usize) -> usize {
        1 + (kernel_t - 1) * DENSE_DILATIONS.iter().sum::<usize>()
    }
}

/// Initial block (2 → C) → dilated dense block → frequency-halving block.
#[derive(Clone, Debug)]
pub struct DenseEncoder {
    pub initial: ConvBlock,
    pub dense: DilatedDenseBlock,
    pub downsample: ConvBlock,
}

impl DenseEncoder {
    pub fn new<T: Real, R: Rng + ?Sized>(
        reg: &mut Registrar<'_, T, R>,
        prefix: &str,
        channels: usize,
        kernel: (usize, usize),
        separable: bool,
    ) -> Result<Self> {
        let same = Conv2dSpec::padded((kernel.0 / 2, kernel.1 / 2));
        Ok(Self {
            initial: ConvBlock::new(reg, &format!("{prefix}.initial"), 2, channels, kernel, same, separable)?,
            dense: DilatedDenseBlock::new(reg, &format!("{prefix}.dense"), channels, kernel, separable)?,
            downsample: ConvBlock::new(reg, &format!("{prefix}.down"), channels, channels, kernel, same.stride((1, 2)), separable)?,
        })
    }

    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let x = self.initial.forward(tape, store, x)?;
        let x = self.dense.forward(tape, store, x)?;
        self.downsample.forward(tape, store, x)
    }
}
