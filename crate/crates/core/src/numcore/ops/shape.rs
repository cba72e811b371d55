use crate::error::{Error, Result};
use crate::numcore::{Real, Tensor, Var};

fn check_axis(axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        return Err(Error::InvalidAxis { axis, rank });
    }
    Ok(())
}

/// (outer, axis length, inner) split of a shape around `axis`.
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'t, T: Real> Var<'t, T> {
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let from = x.shape().to_vec();
        let out = (*x).clone().reshape(shape)?;
        Ok(self.tape().record(out, &[self], move |g| vec![Some(g.clone().reshape(&from).unwrap())]))
    }

    /// Collapses every axis from `start` onward into one.
    pub fn flatten_from(self, start: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        check_axis(start, shape.len())?;
        let mut s = shape[..start].to_vec();
        s.push(shape[start..].iter().product());
        self.reshape(&s)
    }

    pub fn permute(self, perm: &[usize]) -> Result<Var<'t, T>> {
        let out = self.value().permute(perm)?;
        let mut inv = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        Ok(self.tape().record(out, &[self], move |g| vec![Some(g.permute(&inv).unwrap())]))
    }

    /// Contiguous sub-range `[start, start+len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        check_axis(axis, x.rank())?;
        let (outer, n, inner) = split_at_axis(x.shape(), axis);
        if start + len > n {
            return Err(Error::InvalidArgument(format!("narrow {start}+{len} exceeds extent {n}")));
        }
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let in_shape = x.shape().to_vec();
        let out = Tensor::new(&shape, data)?;
        Ok(self.tape().record(out, &[self], move |g| {
            let mut gi = Tensor::zeros(&in_shape);
            for o in 0..outer {
                let base = (o * n + start) * inner;
                gi.data_mut()[base..base + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gi)]
        }))
    }

    /// Zero padding along one axis.
    pub fn pad(self, axis: usize, before: usize, after: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        check_axis(axis, x.rank())?;
        let (outer, n, inner) = split_at_axis(x.shape(), axis);
        let m = n + before + after;
        let mut data = vec![T::zero(); outer * m * inner];
        for o in 0..outer {
            let dst = (o * m + before) * inner;
            data[dst..dst + n * inner].copy_from_slice(&x.data()[o * n * inner..(o + 1) * n * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = m;
        let in_shape = x.shape().to_vec();
        Ok(self.tape().record(Tensor::new(&shape, data)?, &[self], move |g| {
            let mut gi = Vec::with_capacity(outer * n * inner);
            for o in 0..outer {
                let src = (o * m + before) * inner;
                gi.extend_from_slice(&g.data()[src..src + n * inner]);
            }
            vec![Some(Tensor::new(&in_shape, gi).unwrap())]
        }))
    }

    /// Output slot `j` along `axis` reads input slot `index[j]`.
    pub fn gather_axis(self, axis: usize, index: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        check_axis(axis, x.rank())?;
        let (outer, n, inner) = split_at_axis(x.shape(), axis);
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidArgument(format!("gather index {bad} out of range {n}")));
        }
        let m = index.len();
        let mut data = Vec::with_capacity(outer * m * inner);
        for o in 0..outer {
            for &i in index {
                let src = (o * n + i) * inner;
                data.extend_from_slice(&x.data()[src..src + inner]);
            }
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = m;
        let in_shape = x.shape().to_vec();
        let index = index.to_vec();
        Ok(self.tape().record(Tensor::new(&shape, data)?, &[self], move |g| {
            let mut gi = Tensor::zeros(&in_shape);
            let gd = gi.data_mut();
            for o in 0..outer {
                for (j, &i) in index.iter().enumerate() {
                    let src = (o * m + j) * inner;
                    let dst = (o * n + i) * inner;
                    for k in 0..inner {
                        gd[dst + k] += g.data()[src + k];
                    }
                }
            }
            vec![Some(gi)]
        }))
    }

    /// Nearest-neighbour upsampling by `factor` along `axis`, then cropped to `len`.
    pub fn upsample_nearest(self, axis: usize, factor: usize, len: usize) -> Result<Var<'t, T>> {
        let index: Vec<usize> = (0..len).map(|j| j / factor.max(1)).collect();
        self.gather_axis(axis, &index)
    }
}

/// Concatenation along `axis`; all other extents must agree.
pub fn concat<'t, T: Real>(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
    let first = parts.first().ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let rank = values[0].rank();
    check_axis(axis, rank)?;
    for v in &values[1..] {
        let ok = v.rank() == rank && (0..rank).all(|i| i == axis || v.shape()[i] == values[0].shape()[i]);
        if !ok {
            return Err(Error::ShapeMismatch { op: "concat", lhs: values[0].shape().to_vec(), rhs: v.shape().to_vec() });
        }
    }
    let (outer, _, inner) = split_at_axis(values[0].shape(), axis);
    let lens: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
    let total: usize = lens.iter().sum();
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (v, &l) in values.iter().zip(&lens) {
            data.extend_from_slice(&v.data()[o * l * inner..(o + 1) * l * inner]);
        }
    }
    let mut shape = values[0].shape().to_vec();
    shape[axis] = total;
    let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
    Ok(first.tape().record(Tensor::new(&shape, data)?, parts, move |g| {
        let mut grads: Vec<Vec<T>> = lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
        let mut off = 0;
        for _ in 0..outer {
            for (gi, &l) in grads.iter_mut().zip(&lens) {
                gi.extend_from_slice(&g.data()[off..off + l * inner]);
                off += l * inner;
            }
        }
        grads.into_iter().zip(&shapes).map(|(d, s)| Some(Tensor::new(s, d).unwrap())).collect()
    }))
}
