//! 16-bit PCM mono WAV files.

use std::path::Path;

use crate::dsp::{AudioClip, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};

fn wav_err(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Wav(other.to_string()),
    }
}

/// Reads a mono 16-bit PCM file, resampling to 16 kHz when needed.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Wav(format!("expected mono, found {} channels", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Wav(format!("expected 16-bit PCM, found {:?} {}-bit", spec.sample_format, spec.bits_per_sample)));
    }
    let samples =
        reader.into_samples::<i16>().map(|s| s.map(|v| v as f64 / 32768.0)).collect::<std::result::Result<Vec<_>, _>>().map_err(wav_err)?;
    let clip = AudioClip::ingest(samples, spec.sample_rate)?;
    if clip.sample_rate() != DEFAULT_SAMPLE_RATE {
        return clip.resample(DEFAULT_SAMPLE_RATE);
    }
    Ok(clip)
}

/// Writes a mono 16-bit PCM file; samples are clipped to [−1, 1].
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let spec =
        hound::WavSpec { channels: 1, sample_rate: clip.sample_rate(), bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in clip.samples() {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}
