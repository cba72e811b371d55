//! Synthetic noisy-speech stand-in and a directory-of-WAV-pairs adapter.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{read_wav, AudioClip, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::exec::Execution;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    Pink,
    Band,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthDatasetSpec {
    pub num_clips: usize,
    pub clip_seconds: f64,
    pub snr_levels: Vec<f64>,
    pub sample_rate: u32,
    pub f0_range: (f64, f64),
    pub noise_kinds: Vec<NoiseKind>,
    pub seed: u64,
}

impl Default for SynthDatasetSpec {
    fn default() -> Self {
        Self {
            num_clips: 200,
            clip_seconds: 0.5,
            snr_levels: vec![2.5, 7.5, 12.5, 17.5],
            sample_rate: DEFAULT_SAMPLE_RATE,
            f0_range: (150.0, 300.0),
            noise_kinds: vec![NoiseKind::White, NoiseKind::Pink, NoiseKind::Band],
            seed: 0,
        }
    }
}

impl SynthDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("dataset: {m}")));
        if self.num_clips == 0 {
            return bad("num_clips must be positive");
        }
        if !(self.clip_seconds > 0.0) || self.sample_rate == 0 {
            return bad("clip length and sample rate must be positive");
        }
        if self.snr_levels.is_empty() || self.noise_kinds.is_empty() {
            return bad("need at least one SNR level and one noise kind");
        }
        if !(self.f0_range.0 > 0.0 && self.f0_range.0 <= self.f0_range.1) {
            return bad("invalid f0 range");
        }
        Ok(())
    }

    pub fn samples_per_clip(&self) -> usize {
        (self.clip_seconds * self.sample_rate as f64).round() as usize
    }
}

/// One aligned training or evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyPair {
    pub id: String,
    pub clean: AudioClip,
    pub noisy: AudioClip,
    /// Nominal mixing SNR in dB (measured SNR for loaded data).
    pub snr_db: f64,
}

impl NoisyPair {
    pub fn noise(&self) -> Vec<f64> {
        self.noisy.samples().iter().zip(self.clean.samples()).map(|(n, c)| n - c).collect()
    }
}

pub fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

pub fn global_snr_db(clean: &[f64], noise: &[f64]) -> f64 {
    10.0 * (power(clean) / power(noise)).log10()
}

/// Harmonic complex with slow vibrato and a syllable-like envelope.
fn harmonic_source<R: Rng>(n: usize, sr: f64, f0_range: (f64, f64), rng: &mut R) -> Vec<f64> {
    let f0 = rng.gen_range(f0_range.0..=f0_range.1);
    let harmonics = rng.gen_range(3..=8usize);
    let tilt = rng.gen_range(0.6..1.2);
    let phases: Vec<f64> = (0..harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let (vib_rate, vib_depth) = (rng.gen_range(3.0..6.0), rng.gen_range(0.0..0.02));
    let (env_rate, env_phase) = (rng.gen_range(2.0..5.0), rng.gen_range(0.0..2.0 * PI));
    let mut phase = 0.0;
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let f = f0 * (1.0 + vib_depth * (2.0 * PI * vib_rate * t).sin());
            phase += 2.0 * PI * f / sr;
            let mut s = 0.0;
            for (k, p) in phases.iter().enumerate() {
                let h = (k + 1) as f64;
                if h * f < sr / 2.0 {
                    s += (h * phase + p).sin() / h.powf(tilt);
                }
            }
            let env = 0.55 + 0.45 * (2.0 * PI * env_rate * t + env_phase).sin();
            s * env
        })
        .collect()
}

fn white<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Paul Kellet's economy 1/f filter over white noise.
fn pink<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    white(n, rng)
        .into_iter()
        .map(|w| {
            b0 = 0.99765 * b0 + w * 0.0990460;
            b1 = 0.96300 * b1 + w * 0.2965164;
            b2 = 0.57000 * b2 + w * 1.0526913;
            b0 + b1 + b2 + w * 0.1848
        })
        .collect()
}

/// White noise through a two-pole resonator at a random centre frequency.
fn band<R: Rng>(n: usize, sr: f64, rng: &mut R) -> Vec<f64> {
    let fc = rng.gen_range(300.0..3000.0);
    let r: f64 = 0.97;
    let (a1, a2) = (2.0 * r * (2.0 * PI * fc / sr).cos(), -r * r);
    let (mut y1, mut y2) = (0.0, 0.0);
    white(n, rng)
        .into_iter()
        .map(|w| {
            let y = w + a1 * y1 + a2 * y2;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

pub fn clip_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
}

fn synth_one(spec: &SynthDatasetSpec, index: usize) -> Result<NoisyPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(clip_seed(spec.seed, index));
    let (n, sr) = (spec.samples_per_clip(), spec.sample_rate as f64);
    let mut clean = harmonic_source(n, sr, spec.f0_range, &mut rng);
    let kind = spec.noise_kinds[index % spec.noise_kinds.len()];
    let snr = spec.snr_levels[(index / spec.noise_kinds.len()) % spec.snr_levels.len()];
    let mut noise = match kind {
        NoiseKind::White => white(n, &mut rng),
        NoiseKind::Pink => pink(n, &mut rng),
        NoiseKind::Band => band(n, sr, &mut rng),
    };
    let peak = clean.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let level = rng.gen_range(0.2..0.5) / peak;
    clean.iter_mut().for_each(|v| *v *= level);
    let gain = (power(&clean) / (power(&noise) * 10f64.powf(snr / 10.0))).sqrt();
    noise.iter_mut().for_each(|v| *v *= gain);
    let mut noisy: Vec<f64> = clean.iter().zip(&noise).map(|(c, e)| c + e).collect();
    let peak = noisy.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.99 {
        let s = 0.99 / peak;
        clean.iter_mut().for_each(|v| *v *= s);
        noisy.iter_mut().for_each(|v| *v *= s);
    }
    Ok(NoisyPair {
        id: format!("synth{:05}", index),
        clean: AudioClip::new(clean, spec.sample_rate)?,
        noisy: AudioClip::new(noisy, spec.sample_rate)?,
        snr_db: snr,
    })
}

/// Deterministic from `spec.seed`; clip `i` uses noise kind `i mod K` and
/// SNR level `(i / K) mod L`, so every combination appears evenly.
pub fn synth_dataset(spec: &SynthDatasetSpec, exec: Execution) -> Result<Vec<NoisyPair>> {
    spec.validate()?;
    let idx: Vec<usize> = (0..spec.num_clips).collect();
    exec.map(&idx, |_, &i| synth_one(spec, i)).into_iter().collect()
}

/// Loads `clean/*.wav` with same-named `noisy/*.wav` partners.
pub fn load_pair_dir(dir: &Path) -> Result<Vec<NoisyPair>> {
    let (clean_dir, noisy_dir) = (dir.join("clean"), dir.join("noisy"));
    let mut names: Vec<String> = std::fs::read_dir(&clean_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.to_ascii_lowercase().ends_with(".wav"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::EmptySet);
    }
    names
        .into_iter()
        .map(|name| {
            let clean = read_wav(clean_dir.join(&name))?;
            let noisy = read_wav(noisy_dir.join(&name))?;
            let len = clean.len().min(noisy.len());
            if clean.len() != noisy.len() {
                return Err(Error::LengthMismatch(clean.len(), noisy.len()));
            }
            let noise: Vec<f64> = noisy.samples().iter().zip(clean.samples()).map(|(a, b)| a - b).collect();
            let snr_db = global_snr_db(&clean.samples()[..len], &noise);
            let id = name.trim_end_matches(".wav").trim_end_matches(".WAV").to_string();
            Ok(NoisyPair { id, clean, noisy, snr_db })
        })
        .collect()
}
