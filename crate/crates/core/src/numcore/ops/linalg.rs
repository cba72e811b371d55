use crate::error::{Error, Result};
use crate::numcore::real::gemm;
use crate::numcore::tensor::{broadcast_shape, contiguous_strides};
use crate::numcore::{Real, Tensor, Var};

/// Offsets of each broadcast batch element into the operand's own batch layout.
fn batch_offsets(own: &[usize], target: &[usize]) -> Vec<usize> {
    let n: usize = target.iter().product();
    let strides = contiguous_strides(own);
    let off = target.len() - own.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; target.len()];
    for _ in 0..n {
        let mut o = 0;
        for (ax, &i) in idx.iter().enumerate() {
            if ax >= off && own[ax - off] != 1 {
                o += i * strides[ax - off];
            }
        }
        out.push(o);
        for ax in (0..target.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < target[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    out
}

impl<'t, T: Real> Var<'t, T> {
    /// Batched matrix product `[.., m, k] × [.., k, n]` with broadcast batch axes.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        if a.rank() < 2 || b.rank() < 2 {
            return Err(Error::InvalidShape { op: "matmul", detail: "operands need rank >= 2".into() });
        }
        let (ra, rb) = (a.rank(), b.rank());
        let (m, k, k2, n) = (a.shape()[ra - 2], a.shape()[ra - 1], b.shape()[rb - 2], b.shape()[rb - 1]);
        if k != k2 {
            return Err(Error::ShapeMismatch { op: "matmul", lhs: a.shape().to_vec(), rhs: b.shape().to_vec() });
        }
        let (ba, bb) = (a.shape()[..ra - 2].to_vec(), b.shape()[..rb - 2].to_vec());
        let batch = broadcast_shape(&ba, &bb).ok_or_else(|| Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })?;
        let oa = batch_offsets(&ba, &batch);
        let ob = batch_offsets(&bb, &batch);
        let nb = oa.len();
        let mut out = vec![T::zero(); nb * m * n];
        for i in 0..nb {
            gemm(m, k, n, &a.data()[oa[i] * m * k..], false, &b.data()[ob[i] * k * n..], false, &mut out[i * m * n..], T::one(), T::zero());
        }
        let mut shape = batch.clone();
        shape.extend([m, n]);
        let (ga_req, gb_req) = (self.requires_grad(), other.requires_grad());
        Ok(self.tape().record(Tensor::new(&shape, out)?, &[self, other], move |g| {
            let gd = g.data();
            let ga = ga_req.then(|| {
                let mut ga = Tensor::zeros(a.shape());
                for i in 0..nb {
                    // dA = G · Bᵀ (accumulates over broadcast batch entries)
                    gemm(
                        m,
                        n,
                        k,
                        &gd[i * m * n..],
                        false,
                        &b.data()[ob[i] * k * n..],
                        true,
                        &mut ga.data_mut()[oa[i] * m * k..],
                        T::one(),
                        T::one(),
                    );
                }
                ga
            });
            let gb = gb_req.then(|| {
                let mut gb = Tensor::zeros(b.shape());
                for i in 0..nb {
                    // dB = Aᵀ · G
                    gemm(
                        k,
                        m,
                        n,
                        &a.data()[oa[i] * m * k..],
                        true,
                        &gd[i * m * n..],
                        false,
                        &mut gb.data_mut()[ob[i] * k * n..],
                        T::one(),
                        T::one(),
                    );
                }
                gb
            });
            vec![ga, gb]
        }))
    }

    /// `x · wᵀ + b` over the last axis with `w: [out, in]`, `b: [out]`.
    pub fn linear(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let rows = shape[..shape.len().saturating_sub(1)].iter().product::<usize>();
        let flat = self.reshape(&[rows, *shape.last().unwrap_or(&0)])?;
        let mut out_shape = shape.clone();
        if let (Some(last), Some(&o)) = (out_shape.last_mut(), weight.shape().first()) {
            *last = o;
        }
        // one GEMM over all leading axes
        let y = flat.matmul(weight.permute(&[1, 0])?)?.reshape(&out_shape)?;
        match bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::numcore::{Tape, Tensor};

    #[test]
    fn identity_product() {
        let tape = Tape::<f64>::new();
        let i = tape.constant(Tensor::from_f64(&[2, 2], &[1., 0., 0., 1.]).unwrap());
        let m = tape.constant(Tensor::from_f64(&[2, 2], &[1., 2., 3., 4.]).unwrap());
        assert_eq!(i.matmul(m).unwrap().value().data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn row_times_column() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_f64(&[1, 2], &[1., 2.]).unwrap());
        let b = tape.constant(Tensor::from_f64(&[2, 1], &[3., 4.]).unwrap());
        assert_eq!(a.matmul(b).unwrap().value().data(), &[11.]);
    }

    #[test]
    fn inner_mismatch_errors() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(a.matmul(b).is_err());
    }

    #[test]
    fn broadcast_batch_gradient_accumulates() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::ones(&[3, 1, 2]));
        let b = tape.leaf(Tensor::from_f64(&[2, 1], &[1., 2.]).unwrap());
        let y = a.matmul(b).unwrap();
        assert_eq!(y.shape(), vec![3, 1, 1]);
        let g = tape.backward(y.sum_all()).unwrap();
        assert_eq!(g.wrt(b).unwrap().data(), &[3., 3.]);
        assert_eq!(g.wrt(a).unwrap().data(), &[1., 2., 1., 2., 1., 2.]);
    }
}
