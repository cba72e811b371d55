use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numcore::{Real, Tensor, Var};

impl<'t, T: Real> Var<'t, T> {
    /// Zero-mean unit-variance normalization of each contiguous row of length
    /// `row` (biased variance, `eps` inside the square root).
    pub fn normalize_rows(self, row: usize, eps: f64) -> Result<Var<'t, T>> {
        let x = self.value();
        if row == 0 || !x.numel().is_multiple_of(row) {
            return Err(Error::InvalidShape { op: "normalize", detail: format!("row {row} does not divide {:?}", x.shape()) });
        }
        let eps = T::lit(eps);
        let rows = x.numel() / row;
        let n = T::lit(row as f64);
        let mut out = vec![T::zero(); x.numel()];
        let mut inv_std = vec![T::zero(); rows];
        for r in 0..rows {
            let xs = &x.data()[r * row..(r + 1) * row];
            let mean = xs.iter().copied().sum::<T>() / n;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = (var + eps).sqrt().recip();
            inv_std[r] = is;
            for (o, &v) in out[r * row..(r + 1) * row].iter_mut().zip(xs) {
                *o = (v - mean) * is;
            }
        }
        let out = Rc::new(Tensor::new(x.shape(), out)?);
        let xhat = out.clone();
        Ok(self.tape().record(out, &[self], move |g| {
            let mut dx = vec![T::zero(); g.numel()];
            for r in 0..rows {
                let gs = &g.data()[r * row..(r + 1) * row];
                let hs = &xhat.data()[r * row..(r + 1) * row];
                let mg = gs.iter().copied().sum::<T>() / n;
                let mgh = gs.iter().zip(hs).map(|(&a, &b)| a * b).sum::<T>() / n;
                for ((d, &gv), &h) in dx[r * row..(r + 1) * row].iter_mut().zip(gs).zip(hs) {
                    *d = inv_std[r] * (gv - mg - h * mgh);
                }
            }
            vec![Some(Tensor::new(g.shape(), dx).unwrap())]
        }))
    }

    /// Per-(sample, channel) normalization over all trailing axes of
    /// `[B, C, ...]`, then per-channel affine `γ, β` of shape `[C]`.
    pub fn instance_norm(self, gamma: Var<'t, T>, beta: Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if shape.len() < 3 {
            return Err(Error::InvalidShape { op: "instance_norm", detail: format!("need [B, C, ...], got {shape:?}") });
        }
        let c = shape[1];
        let row: usize = shape[2..].iter().product();
        let mut affine = vec![c];
        affine.extend(std::iter::repeat_n(1, shape.len() - 2));
        let xhat = self.normalize_rows(row, eps)?;
        xhat.mul(gamma.reshape(&affine)?)?.add(beta.reshape(&affine)?)
    }

    /// Normalization over the last axis with affine `γ, β` of shape `[D]`.
    pub fn layer_norm(self, gamma: Var<'t, T>, beta: Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let d = *shape.last().ok_or(Error::InvalidAxis { axis: 0, rank: 0 })?;
        self.normalize_rows(d, eps)?.mul(gamma)?.add(beta)
    }
}
