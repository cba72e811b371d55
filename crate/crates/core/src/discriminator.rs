//! Metric discriminator scoring (clean, candidate) compressed-magnitude pairs.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Affine, Conv2d, Linear, Registrar, PRELU_INIT};
use crate::numcore::{concat, Conv2dSpec, ParamId, ParamKind, ParamStore, Real, Tape, Tensor, Var};

/// Below this estimate a weight is left unnormalized.
pub const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub channels: Vec<usize>,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pooled: (usize, usize),
    pub hidden: usize,
    pub dropout: f64,
    pub power_iterations: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            channels: vec![8, 16, 32, 64],
            kernel: (3, 3),
            stride: (2, 2),
            pooled: (4, 4),
            hidden: 64,
            dropout: 0.3,
            power_iterations: 1,
        }
    }
}

impl DiscriminatorConfig {
    /// Two thin stages for finite-difference checks on tiny grids.
    pub fn micro() -> Self {
        Self { channels: vec![2, 4], pooled: (2, 2), hidden: 4, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() < 2 || self.channels.contains(&0) {
            return Err(Error::Config(format!("discriminator needs >= 2 non-empty stages, got {:?}", self.channels)));
        }
        if self.pooled.0 == 0 || self.pooled.1 == 0 || self.hidden == 0 {
            return Err(Error::Config("pooled grid and hidden width must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Smallest `(T, F)` input whose post-conv extents still cover the pooled grid.
    pub fn min_extent(&self) -> (usize, usize) {
        let grow = |target: usize, k: usize, s: usize| (0..self.channels.len()).fold(target, |n, _| (n - 1) * s + k - 2 * (k / 2));
        (grow(self.pooled.0, self.kernel.0, self.stride.0), grow(self.pooled.1, self.kernel.1, self.stride.1))
    }
}

/// Persistent power-iteration vectors for one weight viewed as `[rows, cols]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

fn normalize(x: &mut [f64]) -> f64 {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
    n
}

impl SpectralState {
    pub fn new<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let mut u: Vec<f64> = (0..rows).map(|_| rng.sample(StandardNormal)).collect();
        normalize(&mut u);
        Self { u, v: vec![0.0; cols] }
    }

    /// `iters` rounds of `v ← Wᵀu/‖·‖, u ← Wv/‖·‖`; returns `uᵀWv`.
    pub fn iterate<T: Real>(&mut self, w: &Tensor<T>, iters: usize) -> f64 {
        let rows = self.u.len();
        let cols = w.numel() / rows.max(1);
        let wd: Vec<f64> = w.data().iter().map(|x| x.as_f64()).collect();
        for _ in 0..iters {
            self.v.iter_mut().for_each(|x| *x = 0.0);
            for r in 0..rows {
                for c in 0..cols {
                    self.v[c] += wd[r * cols + c] * self.u[r];
                }
            }
            normalize(&mut self.v);
            for r in 0..rows {
                self.u[r] = (0..cols).map(|c| wd[r * cols + c] * self.v[c]).sum();
            }
            normalize(&mut self.u);
        }
        self.sigma(&wd)
    }

    fn sigma(&self, wd: &[f64]) -> f64 {
        let cols = self.v.len();
        self.u.iter().enumerate().map(|(r, ur)| ur * (0..cols).map(|c| wd[r * cols + c] * self.v[c]).sum::<f64>()).sum()
    }
}

/// `W / σ̂` with `σ̂ = uᵀWv`, differentiable in `W` (u, v held fixed) after
/// `iters` power-iteration rounds. The flag is set when `σ̂` is too small
/// and the weight is passed through unchanged.
pub fn spectral_normalize<'t, T: Real>(w: Var<'t, T>, state: &mut SpectralState, iters: usize) -> Result<(Var<'t, T>, bool)> {
    let value = w.value();
    if value.numel() != state.u.len() * state.v.len() {
        return Err(Error::ShapeMismatch {
            op: "spectral_normalize",
            lhs: value.shape().to_vec(),
            rhs: vec![state.u.len(), state.v.len()],
        });
    }
    let sigma = state.iterate(&value, iters);
    if sigma.abs() < SIGMA_FLOOR {
        return Ok((w, true));
    }
    let outer: Vec<f64> = state.u.iter().flat_map(|&a| state.v.iter().map(move |&b| a * b)).collect();
    let outer = Tensor::from_f64(value.shape(), &outer)?;
    let sigma = w.mul(w.tape().constant(outer))?.sum_all();
    Ok((w.div(sigma)?, false))
}

#[derive(Clone, Debug)]
pub struct DiscStage {
    pub conv: Conv2d,
    pub norm: Affine,
    pub prelu: ParamId,
    pub spectral: SpectralState,
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub stages: Vec<DiscStage>,
    pub hidden: Linear,
    pub head: Linear,
    pub slope: ParamId,
}

impl Discriminator {
    pub const PREFIX: &'static str = "disc";

    pub fn new<T: Real, R: Rng + ?Sized>(config: DiscriminatorConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (k, s) = (config.kernel, config.stride);
        let spec = Conv2dSpec::padded((k.0 / 2, k.1 / 2)).stride(s);
        let mut stages = Vec::with_capacity(config.channels.len());
        let mut ci = 2;
        for (i, &co) in config.channels.iter().enumerate() {
            let mut reg = Registrar::new(&mut *store, &mut *rng);
            let prefix = format!("disc.stage{i}");
            let conv = Conv2d::new(&mut reg, &format!("{prefix}.conv"), ci, co, k, spec, false)?;
            let norm = Affine::new(&mut reg, &format!("{prefix}.norm"), co)?;
            let prelu = reg.constant(&format!("{prefix}.prelu"), ParamKind::Slope, &[co], PRELU_INIT)?;
            let mut spectral = SpectralState::new(co, ci * k.0 * k.1, rng);
            spectral.iterate(&store.get(conv.weight).effective(), 1);
            stages.push(DiscStage { conv, norm, prelu, spectral });
            ci = co;
        }
        let mut reg = Registrar::new(store, rng);
        let flat = ci * config.pooled.0 * config.pooled.1;
        let hidden = Linear::new(&mut reg, "disc.hidden", flat, config.hidden, ParamKind::Linear, true)?;
        let head = Linear::new(&mut reg, "disc.head", config.hidden, 1, ParamKind::Linear, true)?;
        let slope = reg.constant("disc.lsigmoid", ParamKind::Slope, &[1], 1.0)?;
        Ok(Self { config, stages, hidden, head, slope })
    }

    /// Advances every stage's power iteration; call once per discriminator step.
    pub fn power_step<T: Real>(&mut self, store: &ParamStore<T>) {
        let iters = self.config.power_iterations;
        for stage in &mut self.stages {
            stage.spectral.iterate(&store.get(stage.conv.weight).effective(), iters);
        }
    }

    /// Largest singular value of each normalized conv weight, estimated
    /// with one extra power round from the persistent vectors.
    pub fn normalized_sigmas<T: Real>(&self, store: &ParamStore<T>) -> Vec<f64> {
        self.stages
            .iter()
            .map(|stage| {
                let w = store.get(stage.conv.weight).effective();
                let used = stage.spectral.sigma(&w.data().iter().map(|x| x.as_f64()).collect::<Vec<_>>());
                let mut probe = stage.spectral.clone();
                probe.iterate(&w, 1) / used
            })
            .collect()
    }

    /// Scores `[B, 1]` in `[0, 1]` for `[B, 1, T, F]` compressed magnitudes.
    pub fn forward<'t, T: Real, R: Rng + ?Sized>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        clean: Var<'t, T>,
        other: Var<'t, T>,
        rng: &mut R,
    ) -> Result<Var<'t, T>> {
        if clean.shape() != other.shape() || clean.shape().len() != 4 || clean.shape()[1] != 1 {
            return Err(Error::ShapeMismatch { op: "discriminator", lhs: clean.shape(), rhs: other.shape() });
        }
        let (mt, mf) = self.config.min_extent();
        let s = clean.shape();
        if s[2] < mt || s[3] < mf {
            return Err(Error::InvalidShape { op: "discriminator", detail: format!("grid {}x{} smaller than {mt}x{mf}", s[2], s[3]) });
        }
        let mut x = concat(&[clean, other], 1)?;
        for stage in &self.stages {
            let mut state = stage.spectral.clone();
            let (w, _) = spectral_normalize(tape.param(store, stage.conv.weight), &mut state, 0)?;
            let y = x.conv2d(w, None, stage.conv.spec)?;
            x = stage.norm.instance_norm(tape, store, y)?.prelu(tape.param(store, stage.prelu))?;
        }
        let h = x.adaptive_max_pool2d(self.config.pooled)?.flatten_from(1)?;
        let h = self.hidden.forward(tape, store, h)?.dropout(self.config.dropout, rng)?;
        self.head.forward(tape, store, h)?.learnable_sigmoid(tape.param(store, self.slope), 1.0)
    }
}
