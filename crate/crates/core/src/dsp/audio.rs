use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono audio at a fixed sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("audio samples".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    /// Validates externally sourced audio: rejects silence and scales the
    /// peak down to 1.0 when it exceeds it.
    pub fn ingest(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let mut clip = Self::new(samples, sample_rate)?;
        let peak = clip.peak();
        if peak < 1e-6 {
            return Err(Error::SilentClip { peak });
        }
        if peak > 1.0 {
            clip.samples.iter_mut().for_each(|s| *s /= peak);
        }
        Ok(clip)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    /// Linear-interpolation resampling.
    pub fn resample(&self, target_rate: u32) -> Result<Self> {
        if target_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if target_rate == self.sample_rate || self.samples.is_empty() {
            return Self::new(self.samples.clone(), target_rate);
        }
        let ratio = self.sample_rate as f64 / target_rate as f64;
        let n_out = ((self.samples.len() as f64) / ratio).round().max(1.0) as usize;
        let last = self.samples.len() - 1;
        let out = (0..n_out)
            .map(|i| {
                let pos = i as f64 * ratio;
                let i0 = (pos.floor() as usize).min(last);
                let i1 = (i0 + 1).min(last);
                let frac = pos - i0 as f64;
                self.samples[i0] * (1.0 - frac) + self.samples[i1] * frac
            })
            .collect();
        Self::new(out, target_rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ingest_normalizes_and_rejects_silence() {
        let c = AudioClip::ingest(vec![0.5, -2.0, 1.0], 16_000).unwrap();
        assert_eq!(c.samples(), &[0.25, -1.0, 0.5]);
        assert!(matches!(AudioClip::ingest(vec![0.0; 10], 16_000), Err(Error::SilentClip { .. })));
        assert!(AudioClip::new(vec![f64::NAN], 16_000).is_err());
        assert!(AudioClip::new(vec![0.0], 0).is_err());
    }

    #[test]
    fn resample_halves_length() {
        let c = AudioClip::new((0..100).map(|i| i as f64).collect(), 32_000).unwrap();
        let r = c.resample(16_000).unwrap();
        assert_eq!(r.len(), 50);
        assert_eq!(r.samples()[10], 20.0);
    }
}
