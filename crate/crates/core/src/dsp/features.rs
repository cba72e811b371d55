use crate::error::{Error, Result};
use crate::numcore::{Real, Tensor};

/// Power-law compression factor applied to magnitudes.
pub const COMPRESSION: f64 = 0.3;

/// Elementwise `mag^c`.
pub fn power_compress(mag: &[f64], c: f64) -> Result<Vec<f64>> {
    check_exponent(c)?;
    mag.iter().map(|&m| if m < 0.0 { Err(Error::NegativeMagnitude(m)) } else { Ok(m.powf(c)) }).collect()
}

/// Elementwise `mag^(1/c)`.
pub fn power_decompress(mag: &[f64], c: f64) -> Result<Vec<f64>> {
    power_compress(mag, 1.0 / c).and_then(|v| check_exponent(c).map(|_| v))
}

fn check_exponent(c: f64) -> Result<()> {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("compression exponent {c}")));
    }
    Ok(())
}

/// Two-channel `[B, 2, T, F]` network input: compressed magnitude, then phase.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    tensor: Tensor<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.tensor
    }

    pub fn frames(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn bins(&self) -> usize {
        self.tensor.shape()[3]
    }

    /// Splits back into `[T, F]` magnitude and phase grids (first batch item).
    pub fn unstack(&self) -> (Vec<T>, Vec<T>) {
        let n = self.frames() * self.bins();
        let d = self.tensor.data();
        (d[..n].to_vec(), d[n..2 * n].to_vec())
    }
}

/// Stacks `[T, F]` grids (row-major, frame-major) into a `[1, 2, T, F]` map.
pub fn stack_features<T: Real>(mag_c: &[f64], phase: &[f64], frames: usize, bins: usize) -> Result<FeatureMap<T>> {
    let n = frames * bins;
    if mag_c.len() != n || phase.len() != n {
        return Err(Error::ShapeMismatch { op: "stack_features", lhs: vec![mag_c.len()], rhs: vec![phase.len(), n] });
    }
    let data = mag_c.iter().chain(phase).map(|&v| T::lit(v)).collect();
    Ok(FeatureMap { tensor: Tensor::new(&[1, 2, frames, bins], data)? })
}
