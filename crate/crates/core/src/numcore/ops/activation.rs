use std::rc::Rc;

use rand::Rng;

use super::elementwise::sigmoid;
use crate::error::{Error, Result};
use crate::numcore::ops::shape::split_at_axis;
use crate::numcore::{Real, Tensor, Var};

impl<'t, T: Real> Var<'t, T> {
    /// Parametric ReLU with one slope per channel (axis 1), or a single
    /// shared slope when `alpha` has one element.
    pub fn prelu(self, alpha: Var<'t, T>) -> Result<Var<'t, T>> {
        let (x, a) = (self.value(), alpha.value());
        let shape = x.shape().to_vec();
        let (outer, c, inner) = if a.numel() == 1 {
            (1, 1, x.numel())
        } else if shape.len() >= 2 && shape[1] == a.numel() {
            split_at_axis(&shape, 1)
        } else {
            return Err(Error::ShapeMismatch { op: "prelu", lhs: shape, rhs: a.shape().to_vec() });
        };
        let mut out = Vec::with_capacity(x.numel());
        for o in 0..outer {
            for ch in 0..c {
                let s = a.data()[ch];
                let base = (o * c + ch) * inner;
                out.extend(x.data()[base..base + inner].iter().map(|&v| if v >= T::zero() { v } else { s * v }));
            }
        }
        Ok(self.tape().record(Tensor::new(&shape, out)?, &[self, alpha], move |g| {
            let mut dx = vec![T::zero(); g.numel()];
            let mut da = vec![T::zero(); a.numel()];
            for o in 0..outer {
                for ch in 0..c {
                    let s = a.data()[ch];
                    let base = (o * c + ch) * inner;
                    for i in base..base + inner {
                        let v = x.data()[i];
                        if v >= T::zero() {
                            dx[i] = g.data()[i];
                        } else {
                            dx[i] = s * g.data()[i];
                            da[ch] += v * g.data()[i];
                        }
                    }
                }
            }
            vec![Some(Tensor::new(x.shape(), dx).unwrap()), Some(Tensor::new(a.shape(), da).unwrap())]
        }))
    }

    /// `β / (1 + exp(−α·x))` with slope `α` per entry of the last axis (or one
    /// shared slope) and fixed ceiling `β`.
    pub fn learnable_sigmoid(self, alpha: Var<'t, T>, beta: f64) -> Result<Var<'t, T>> {
        let (x, a) = (self.value(), alpha.value());
        let last = x.shape().last().copied().unwrap_or(1);
        let per = if a.numel() == 1 {
            false
        } else if a.numel() == last {
            true
        } else {
            return Err(Error::ShapeMismatch { op: "learnable_sigmoid", lhs: x.shape().to_vec(), rhs: a.shape().to_vec() });
        };
        let beta = T::lit(beta);
        let slot = move |i: usize| if per { i % last } else { 0 };
        let out: Vec<T> = x.data().iter().enumerate().map(|(i, &v)| beta * sigmoid(a.data()[slot(i)] * v)).collect();
        Ok(self.tape().record(Tensor::new(x.shape(), out)?, &[self, alpha], move |g| {
            let mut dx = vec![T::zero(); g.numel()];
            let mut da = vec![T::zero(); a.numel()];
            for i in 0..g.numel() {
                let k = slot(i);
                let s = sigmoid(a.data()[k] * x.data()[i]);
                let ds = beta * s * (T::one() - s) * g.data()[i];
                dx[i] = ds * a.data()[k];
                da[k] += ds * x.data()[i];
            }
            vec![Some(Tensor::new(x.shape(), dx).unwrap()), Some(Tensor::new(a.shape(), da).unwrap())]
        }))
    }

    /// Max-stabilized softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        if axis >= x.rank() {
            return Err(Error::InvalidAxis { axis, rank: x.rank() });
        }
        let (outer, n, inner) = split_at_axis(x.shape(), axis);
        let mut out = vec![T::zero(); x.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let m = (0..n).map(|k| x.data()[at(k)]).fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for k in 0..n {
                    let e = (x.data()[at(k)] - m).exp();
                    out[at(k)] = e;
                    z += e;
                }
                for k in 0..n {
                    out[at(k)] /= z;
                }
            }
        }
        let out = Rc::new(Tensor::new(x.shape(), out)?);
        let y = out.clone();
        Ok(self.tape().record(out, &[self], move |g| {
            let mut dx = vec![T::zero(); g.numel()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * n + k) * inner + i;
                    let dot: T = (0..n).map(|k| g.data()[at(k)] * y.data()[at(k)]).sum();
                    for k in 0..n {
                        dx[at(k)] = y.data()[at(k)] * (g.data()[at(k)] - dot);
                    }
                }
            }
            vec![Some(Tensor::new(g.shape(), dx).unwrap())]
        }))
    }

    /// Inverted dropout; identity outside training mode or when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(self, p: f64, rng: &mut R) -> Result<Var<'t, T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout probability {p}")));
        }
        if !self.tape().is_training() || p == 0.0 {
            return Ok(self);
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let shape = self.shape();
        let mask: Vec<T> = (0..shape.iter().product()).map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep }).collect();
        let mask = self.tape().constant(Tensor::new(&shape, mask)?);
        self.mul(mask)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::numcore::{Tape, Tensor};

    #[test]
    fn prelu_values() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[2], &[3.0, -2.0]).unwrap());
        let a = tape.constant(Tensor::scalar(0.25));
        assert_eq!(x.prelu(a).unwrap().value().data(), &[3.0, -0.5]);
    }

    #[test]
    fn lsigmoid_midpoint_and_limits() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[3], &[0.0, 800.0, -800.0]).unwrap());
        let a = tape.constant(Tensor::full(&[3], 1.7));
        let y = x.learnable_sigmoid(a, 1.2).unwrap().value();
        assert!((y.data()[0] - 0.6).abs() < 1e-15);
        assert!((y.data()[1] - 1.2).abs() < 1e-15);
        assert!(y.data()[2].abs() < 1e-15);
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[3]));
        for v in x.softmax(0).unwrap().value().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let big = tape.constant(Tensor::full(&[2], 1000.0));
        assert_eq!(big.softmax(0).unwrap().value().data(), &[0.5, 0.5]);
        assert!(x.softmax(1).is_err());
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[3], &[1., 2., 3.]).unwrap());
        assert_eq!(x.dropout(0.0, &mut rng).unwrap().value().data(), &[1., 2., 3.]);
        let eval = Tape::<f64>::no_grad(false);
        let x = eval.constant(Tensor::from_f64(&[3], &[1., 2., 3.]).unwrap());
        assert_eq!(x.dropout(0.3, &mut rng).unwrap().value().data(), &[1., 2., 3.]);
    }
}
