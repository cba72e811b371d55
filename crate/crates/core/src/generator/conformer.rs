//! Conformer blocks and the two-stage (time, then frequency) stack.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{Affine, Linear, Registrar};
use crate::numcore::{Conv2dSpec, ParamId, ParamKind, ParamStore, Real, Tape, Var};

/// Multi-head scaled dot-product self-attention over `[S, L, D]`.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Real, R: Rng + ?Sized>(reg: &mut Registrar<'_, T, R>, prefix: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::InvalidArgument(format!("attention dim {dim} not divisible by {heads} heads")));
        }
        let mk = |reg: &mut Registrar<'_, T, R>, n: &str| Linear::new(reg, &format!("{prefix}.{n}"), dim, dim, ParamKind::Linear, true);
        Ok(Self { query: mk(reg, "q")?, key: mk(reg, "k")?, value: mk(reg, "v")?, output: mk(reg, "out")?, heads, dim })
    }

    /// Returns the attended output and the `[S, h, L, L]` attention weights.
    pub fn forward_with_weights<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let shape = x.shape();
        if shape.len() != 3 || shape[2] != self.dim {
            return Err(Error::InvalidShape { op: "attention", detail: format!("expected [S, L, {}], got {shape:?}", self.dim) });
        }
        let (s, l, d, h) = (shape[0], shape[1], shape[2], self.heads);
        let dh = d / h;
        let split = |v: Var<'t, T>| v.reshape(&[s, l, h, dh])?.permute(&[0, 2, 1, 3]);
        let q = split(self.query.forward(tape, store, x)?)?;
        let k = split(self.key.forward(tape, store, x)?)?;
        let v = split(self.value.forward(tape, store, x)?)?;
        let scores = q.matmul(k.permute(&[0, 1, 3, 2])?)?.scale(1.0 / (dh as f64).sqrt());
        let weights = scores.softmax(3)?;
        let ctx = weights.matmul(v)?.permute(&[0, 2, 1, 3])?.reshape(&[s, l, d])?;
        Ok((self.output.forward(tape, store, ctx)?, weights))
    }

    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.forward_with_weights(tape, store, x)?.0)
    }
}

/// Pointwise expansion → GLU → depthwise conv along the sequence →
/// instance norm → swish → pointwise projection.
#[derive(Clone, Debug)]
pub struct ConvModule {
    pub expand: Linear,
    pub depthwise: ParamId,
    pub norm: Affine,
    pub project: Linear,
    pub kernel: usize,
}

impl ConvModule {
    pub fn new<T: Real, R: Rng + ?Sized>(reg: &mut Registrar<'_, T, R>, prefix: &str, dim: usize, kernel: usize) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("conformer kernel {kernel} must be odd")));
        }
        Ok(Self {
            expand: Linear::new(reg, &format!("{prefix}.pw1"), dim, 2 * dim, ParamKind::ConvWeight, true)?,
            depthwise: reg.uniform(&format!("{prefix}.dw.weight"), ParamKind::ConvWeight, &[dim, 1, kernel, 1], kernel)?,
            norm: Affine::new(reg, &format!("{prefix}.norm"), dim)?,
            project: Linear::new(reg, &format!("{prefix}.pw2"), dim, dim, ParamKind::ConvWeight, true)?,
            kernel,
        })
    }

    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        let (s, l, d) = (shape[0], shape[1], shape[2]);
        let e = self.expand.forward(tape, store, x)?;
        let gated = e.narrow(2, 0, d)?.mul(e.narrow(2, d, d)?.sigmoid())?;
        let seq = gated.permute(&[0, 2, 1])?.reshape(&[s, d, l, 1])?;
        let spec = Conv2dSpec::padded((self.kernel / 2, 0)).groups(d);
        let y = seq.conv2d(tape.param(store, self.depthwise), None, spec)?;
        let y = self.norm.instance_norm(tape, store, y)?.swish();
        let y = y.reshape(&[s, d, l])?.permute(&[0, 2, 1])?;
        self.project.forward(tape, store, y)
    }
}

/// `y1 = x + MHA(LN(x)); y2 = y1 + Conv(LN(y1))`, residuals optional.
#[derive(Clone, Debug)]
pub struct ConformerBlock {
    pub norm_attn: Affine,
    pub attention: MultiHeadAttention,
    pub norm_conv: Affine,
    pub conv: ConvModule,
    pub residual: bool,
}

impl ConformerBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(
        reg: &mut Registrar<'_, T, R>,
        prefix: &str,
        dim: usize,
        heads: usize,
        kernel: usize,
        residual: bool,
    ) -> Result<Self> {
        Ok(Self {
            norm_attn: Affine::new(reg, &format!("{prefix}.ln1"), dim)?,
            attention: MultiHeadAttention::new(reg, &format!("{prefix}.mha"), dim, heads)?,
            norm_conv: Affine::new(reg, &format!("{prefix}.ln2"), dim)?,
            conv: ConvModule::new(reg, &format!("{prefix}.conv"), dim, kernel)?,
            residual,
        })
    }

    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let a = self.attention.forward(tape, store, self.norm_attn.layer_norm(tape, store, x)?)?;
        let y1 = if self.residual { x.add(a)? } else { a };
        let c = self.conv.forward(tape, store, self.norm_conv.layer_norm(tape, store, y1)?)?;
        if self.residual {
            y1.add(c)
        } else {
            Ok(c)
        }
    }
}

/// One time-stage plus one frequency-stage conformer over `[B, C, T, F]`.
#[derive(Clone, Debug)]
pub struct TsConformer {
    pub time: ConformerBlock,
    pub freq: ConformerBlock,
}

impl TsConformer {
    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, z: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = z.shape();
        let (b, c, t, f) = (s[0], s[1], s[2], s[3]);
        // time stage: B·F sequences of length T
        let seq = z.permute(&[0, 3, 2, 1])?.reshape(&[b * f, t, c])?;
        let y = self.time.forward(tape, store, seq)?;
        let z = y.reshape(&[b, f, t, c])?.permute(&[0, 3, 2, 1])?;
        // frequency stage: B·T sequences of length F
        let seq = z.permute(&[0, 2, 3, 1])?.reshape(&[b * t, f, c])?;
        let y = self.freq.forward(tape, store, seq)?;
        y.reshape(&[b, t, f, c])?.permute(&[0, 3, 1, 2])
    }
}
