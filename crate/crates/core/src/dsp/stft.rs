//! Short-time Fourier transform with centre (reflect) padding and its
//! weighted overlap-add inverse.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dsp::AudioClip;
use crate::error::{Error, Result};
use crate::numcore::{Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    /// Periodic Hann.
    Hann,
    Rectangular,
}

impl WindowKind {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect(),
            WindowKind::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { n_fft: 400, hop: 100, window: WindowKind::Hann }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frame count for a clip of `len` samples under centre padding.
    pub fn frames(&self, len: usize) -> usize {
        len / self.hop + 1
    }
}

/// Magnitude and phase grids indexed `(frame, bin)`, row-major `[T, F]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub magnitude: Vec<f64>,
    pub phase: Vec<f64>,
    pub frames: usize,
    pub bins: usize,
    pub n_fft: usize,
    pub hop: usize,
    pub sample_rate: u32,
    /// Length of the analysed clip, restored by the inverse.
    pub num_samples: usize,
}

impl Spectrogram {
    pub fn from_complex(re: &[f64], im: &[f64], like: &Spectrogram) -> Self {
        let magnitude = re.iter().zip(im).map(|(r, i)| r.hypot(*i)).collect();
        let phase = re.iter().zip(im).map(|(r, i)| principal_phase(*i, *r)).collect();
        Self { magnitude, phase, ..like.clone() }
    }

    pub fn real(&self) -> Vec<f64> {
        self.magnitude.iter().zip(&self.phase).map(|(m, p)| m * p.cos()).collect()
    }

    pub fn imag(&self) -> Vec<f64> {
        self.magnitude.iter().zip(&self.phase).map(|(m, p)| m * p.sin()).collect()
    }

    pub fn magnitude_tensor<T: Real>(&self) -> Tensor<T> {
        grid_tensor(&self.magnitude, self.frames, self.bins)
    }

    pub fn phase_tensor<T: Real>(&self) -> Tensor<T> {
        grid_tensor(&self.phase, self.frames, self.bins)
    }
}

fn grid_tensor<T: Real>(v: &[f64], frames: usize, bins: usize) -> Tensor<T> {
    Tensor::new(&[1, 1, frames, bins], v.iter().map(|&x| T::lit(x)).collect()).expect("grid sized from spectrogram")
}

/// `atan2` mapped into (−π, π]; both parts zero give 0.
pub fn principal_phase(im: f64, re: f64) -> f64 {
    if im == 0.0 && re == 0.0 {
        return 0.0;
    }
    let p = im.atan2(re);
    if p <= -PI {
        p + 2.0 * PI
    } else {
        p
    }
}

/// Reusable FFT plans and window for one [`StftConfig`].
#[derive(Clone)]
pub struct StftPlan {
    config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftPlan").field("config", &self.config).finish()
    }
}

impl StftPlan {
    pub fn new(config: StftConfig) -> Result<Self> {
        if config.n_fft < 2 || config.hop == 0 || config.hop > config.n_fft {
            return Err(Error::InvalidArgument(format!("invalid STFT geometry {config:?}")));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            config,
            window: config.window.coefficients(config.n_fft),
            forward: planner.plan_fft_forward(config.n_fft),
            inverse: planner.plan_fft_inverse(config.n_fft),
        })
    }

    pub fn config(&self) -> StftConfig {
        self.config
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Minimum clip length accepted by [`StftPlan::stft`].
    pub fn min_len(&self) -> usize {
        (self.config.n_fft / 2 + 1).max(self.config.hop)
    }

    fn reflect_pad(&self, x: &[f64]) -> Vec<f64> {
        let pad = self.config.n_fft / 2;
        let n = x.len();
        let mut out = Vec::with_capacity(n + 2 * pad);
        out.extend((1..=pad).rev().map(|i| x[i]));
        out.extend_from_slice(x);
        out.extend((0..pad).map(|i| x[n - 2 - i]));
        out
    }

    /// Complex spectrum as `(re, im)`, each `[T, F]` row-major.
    pub fn analyze(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>, usize)> {
        if x.len() < self.min_len() {
            return Err(Error::ClipTooShort { len: x.len(), min: self.min_len() });
        }
        let (n, hop, bins) = (self.config.n_fft, self.config.hop, self.config.bins());
        let padded = self.reflect_pad(x);
        let frames = self.config.frames(x.len());
        let mut re = Vec::with_capacity(frames * bins);
        let mut im = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        for t in 0..frames {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(padded[t * hop + i] * self.window[i], 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            for b in &buf[..bins] {
                re.push(b.re);
                im.push(b.im);
            }
        }
        Ok((re, im, frames))
    }

    pub fn stft(&self, clip: &AudioClip) -> Result<Spectrogram> {
        let (re, im, frames) = self.analyze(clip.samples())?;
        let proto = Spectrogram {
            magnitude: Vec::new(),
            phase: Vec::new(),
            frames,
            bins: self.config.bins(),
            n_fft: self.config.n_fft,
            hop: self.config.hop,
            sample_rate: clip.sample_rate(),
            num_samples: clip.len(),
        };
        Ok(Spectrogram::from_complex(&re, &im, &proto))
    }

    /// Σ_t w²[n − t·hop], over the padded timeline.
    fn window_energy(&self, frames: usize) -> Vec<f64> {
        let (n, hop) = (self.config.n_fft, self.config.hop);
        let mut acc = vec![0.0; n + hop * (frames - 1)];
        for t in 0..frames {
            for i in 0..n {
                acc[t * hop + i] += self.window[i] * self.window[i];
            }
        }
        acc
    }

    fn check_cola(&self, wsum: &[f64], len: usize) -> Result<()> {
        let pad = self.config.n_fft / 2;
        let min = wsum[pad..pad + len].iter().copied().fold(f64::INFINITY, f64::min);
        if min < 1e-8 {
            return Err(Error::ColaViolation(min));
        }
        Ok(())
    }

    /// Inverse of [`StftPlan::analyze`] restored to `len` samples.
    pub fn synthesize(&self, re: &[f64], im: &[f64], frames: usize, len: usize) -> Result<Vec<f64>> {
        let (n, hop, bins) = (self.config.n_fft, self.config.hop, self.config.bins());
        if re.len() != frames * bins || im.len() != frames * bins || frames == 0 {
            return Err(Error::InvalidShape { op: "istft", detail: format!("{} values for {frames}x{bins}", re.len()) });
        }
        let pad = n / 2;
        let wsum = self.window_energy(frames);
        if pad + len > wsum.len() {
            return Err(Error::InvalidArgument(format!("{frames} frames cannot cover {len} samples")));
        }
        self.check_cola(&wsum, len)?;
        let mut acc = vec![0.0; wsum.len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        let scale = 1.0 / n as f64;
        for t in 0..frames {
            hermitian_fill(&mut buf, &re[t * bins..(t + 1) * bins], &im[t * bins..(t + 1) * bins]);
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            for i in 0..n {
                acc[t * hop + i] += buf[i].re * scale * self.window[i];
            }
        }
        Ok((0..len).map(|i| acc[pad + i] / wsum[pad + i]).collect())
    }

    /// Adjoint of [`StftPlan::synthesize`]: gradient w.r.t. `(re, im)` given
    /// the gradient w.r.t. the output samples.
    pub fn synthesize_adjoint(&self, grad: &[f64], frames: usize) -> (Vec<f64>, Vec<f64>) {
        let (n, hop, bins) = (self.config.n_fft, self.config.hop, self.config.bins());
        let pad = n / 2;
        let wsum = self.window_energy(frames);
        let mut gb = vec![0.0; wsum.len()];
        for (i, g) in grad.iter().enumerate() {
            gb[pad + i] = g / wsum[pad + i];
        }
        let mut dre = Vec::with_capacity(frames * bins);
        let mut dim = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        for t in 0..frames {
            for i in 0..n {
                buf[i] = Complex64::new(gb[t * hop + i] * self.window[i], 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            for (k, b) in buf[..bins].iter().enumerate() {
                let c = if k == 0 || (n % 2 == 0 && k == n / 2) { 1.0 } else { 2.0 } / n as f64;
                dre.push(c * b.re);
                dim.push(c * b.im);
            }
        }
        (dre, dim)
    }

    pub fn istft(&self, spec: &Spectrogram) -> Result<AudioClip> {
        let samples = self.synthesize(&spec.real(), &spec.imag(), spec.frames, spec.num_samples)?;
        AudioClip::new(samples, spec.sample_rate)
    }

    /// Differentiable inverse STFT from `[.., T, F]` real and imaginary parts
    /// to a `[len]` waveform.
    pub fn istft_var<'t, T: Real>(&self, re: Var<'t, T>, im: Var<'t, T>, len: usize) -> Result<Var<'t, T>> {
        let shape = re.shape();
        if shape != im.shape() || shape.len() < 2 || shape[shape.len() - 1] != self.config.bins() {
            return Err(Error::ShapeMismatch { op: "istft", lhs: shape, rhs: im.shape() });
        }
        let frames = shape[shape.len() - 2];
        if shape.iter().product::<usize>() != frames * self.config.bins() {
            return Err(Error::InvalidShape { op: "istft", detail: format!("batched input {shape:?} unsupported") });
        }
        let to64 = |v: &Tensor<T>| v.data().iter().map(|x| x.as_f64()).collect::<Vec<_>>();
        let y = self.synthesize(&to64(&re.value()), &to64(&im.value()), frames, len)?;
        let out = Tensor::new(&[len], y.into_iter().map(T::lit).collect())?;
        let plan = self.clone();
        Ok(re.tape().record(out, &[re, im], move |g| {
            let g64: Vec<f64> = g.data().iter().map(|x| x.as_f64()).collect();
            let (dre, dim) = plan.synthesize_adjoint(&g64, frames);
            let mk = |d: Vec<f64>| Some(Tensor::new(&shape, d.into_iter().map(T::lit).collect()).unwrap());
            vec![mk(dre), mk(dim)]
        }))
    }
}

/// Full `n`-point spectrum from the one-sided half; imaginary parts of the DC
/// and Nyquist bins are ignored.
fn hermitian_fill(buf: &mut [Complex64], re: &[f64], im: &[f64]) {
    let n = buf.len();
    let bins = re.len();
    for k in 0..n {
        buf[k] = if k < bins {
            let imag = if k == 0 || (n.is_multiple_of(2) && k == n / 2) { 0.0 } else { im[k] };
            Complex64::new(re[k], imag)
        } else {
            let m = n - k;
            Complex64::new(re[m], -im[m])
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_second_shape() {
        let plan = StftPlan::new(StftConfig::default()).unwrap();
        let clip = AudioClip::new((0..16_000).map(|i| (i as f64 * 0.01).sin()).collect(), 16_000).unwrap();
        let s = plan.stft(&clip).unwrap();
        assert_eq!((s.bins, s.frames), (201, 161));
    }

    #[test]
    fn dc_goes_to_bin_zero() {
        let cfg = StftConfig { n_fft: 16, hop: 4, window: WindowKind::Rectangular };
        let plan = StftPlan::new(cfg).unwrap();
        let clip = AudioClip::new(vec![1.0; 64], 16_000).unwrap();
        let s = plan.stft(&clip).unwrap();
        for t in 0..s.frames {
            assert!((s.magnitude[t * s.bins] - 16.0).abs() < 1e-12);
            assert_eq!(s.phase[t * s.bins], 0.0);
            for k in 1..s.bins {
                assert!(s.magnitude[t * s.bins + k] < 1e-12);
            }
        }
    }

    #[test]
    fn too_short_is_rejected() {
        let plan = StftPlan::new(StftConfig::default()).unwrap();
        let clip = AudioClip::new(vec![0.1; 50], 16_000).unwrap();
        assert!(matches!(plan.stft(&clip), Err(Error::ClipTooShort { .. })));
    }

    #[test]
    fn zero_spectrum_gives_silence() {
        let plan = StftPlan::new(StftConfig::default()).unwrap();
        let frames = 11;
        let z = vec![0.0; frames * 201];
        let y = plan.synthesize(&z, &z, frames, 1000).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sparse_hop_violates_cola() {
        // a window with zeros at both ends and hop == n_fft leaves gaps
        let cfg = StftConfig { n_fft: 16, hop: 16, window: WindowKind::Hann };
        let plan = StftPlan::new(cfg).unwrap();
        let z = vec![0.0; 5 * 9];
        assert!(matches!(plan.synthesize(&z, &z, 5, 64), Err(Error::ColaViolation(_))));
    }
}
