use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numcore::tensor::{broadcast_shape, broadcast_strides, reduce_to_shape};
use crate::numcore::{Real, Tensor, Var};

/// Elementwise `f(a, b)` under right-aligned broadcasting.
pub(crate) fn broadcast_zip<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        return Ok(a.zip_map(b, f));
    }
    let shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })?;
    let n: usize = shape.iter().product();
    if b.numel() == 1 && a.numel() == n {
        let s = b.item();
        return Tensor::new(&shape, a.data().iter().map(|&x| f(x, s)).collect());
    }
    if a.numel() == 1 && b.numel() == n {
        let s = a.item();
        return Tensor::new(&shape, b.data().iter().map(|&y| f(s, y)).collect());
    }
    let sa = broadcast_strides(a.shape(), &shape);
    let sb = broadcast_strides(b.shape(), &shape);
    let rank = shape.len();
    let inner = shape[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let outer = n / inner.max(1);
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let (ad, bd) = (a.data(), b.data());
    for _ in 0..outer {
        let oa: usize = idx[..rank - 1].iter().zip(&sa).map(|(i, s)| i * s).sum();
        let ob: usize = idx[..rank - 1].iter().zip(&sb).map(|(i, s)| i * s).sum();
        for j in 0..inner {
            out.push(f(ad[oa + j * ia], bd[ob + j * ib]));
        }
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            if idx[ax] < shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Tensor::new(&shape, out)
}

impl<'t, T: Real> Var<'t, T> {
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let out = broadcast_zip("add", &a, &b, |x, y| x + y)?;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        Ok(self.tape().record(out, &[self, other], move |g| vec![Some(reduce_to_shape(g, &sa)), Some(reduce_to_shape(g, &sb))]))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let out = broadcast_zip("sub", &a, &b, |x, y| x - y)?;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        Ok(self
            .tape()
            .record(out, &[self, other], move |g| vec![Some(reduce_to_shape(g, &sa)), Some(reduce_to_shape(&g.map(|v| -v), &sb))]))
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let out = broadcast_zip("mul", &a, &b, |x, y| x * y)?;
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        Ok(self.tape().record(out, &[self, other], move |g| {
            let ga = ra.then(|| reduce_to_shape(&broadcast_zip("mul", g, &b, |x, y| x * y).unwrap(), a.shape()));
            let gb = rb.then(|| reduce_to_shape(&broadcast_zip("mul", g, &a, |x, y| x * y).unwrap(), b.shape()));
            vec![ga, gb]
        }))
    }

    pub fn div(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let out = Rc::new(broadcast_zip("div", &a, &b, |x, y| x / y)?);
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        let o = out.clone();
        Ok(self.tape().record(out, &[self, other], move |g| {
            let ga = ra.then(|| reduce_to_shape(&broadcast_zip("div", g, &b, |x, y| x / y).unwrap(), a.shape()));
            // d(a/b)/db = -(a/b)/b
            let gb = rb.then(|| {
                let go = g.zip_map(&o, |x, y| x * y);
                reduce_to_shape(&broadcast_zip("div", &go, &b, |x, y| -x / y).unwrap(), b.shape())
            });
            vec![ga, gb]
        }))
    }

    /// Elementwise map with derivative `df(x, y)` expressed from input and output.
    pub fn unary(self, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var<'t, T> {
        let x = self.value();
        let out = Rc::new(x.map(f));
        let o = out.clone();
        self.tape().record(out, &[self], move |g| {
            let d: Vec<T> = g.data().iter().zip(x.data()).zip(o.data()).map(|((&g, &x), &y)| g * df(x, y)).collect();
            vec![Some(Tensor::new(g.shape(), d).unwrap())]
        })
    }

    pub fn neg(self) -> Var<'t, T> {
        self.unary(|x| -x, |_, _| -T::one())
    }

    pub fn scale(self, s: f64) -> Var<'t, T> {
        let s = T::lit(s);
        self.unary(move |x| x * s, move |_, _| s)
    }

    pub fn add_scalar(self, s: f64) -> Var<'t, T> {
        let s = T::lit(s);
        self.unary(move |x| x + s, |_, _| T::one())
    }

    pub fn square(self) -> Var<'t, T> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    pub fn sqrt(self) -> Var<'t, T> {
        self.unary(|x| x.sqrt(), |_, y| T::lit(0.5) / y)
    }

    pub fn exp(self) -> Var<'t, T> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn ln(self) -> Var<'t, T> {
        self.unary(|x| x.ln(), |x, _| x.recip())
    }

    pub fn abs(self) -> Var<'t, T> {
        self.unary(
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn sin(self) -> Var<'t, T> {
        self.unary(|x| x.sin(), |x, _| x.cos())
    }

    pub fn cos(self) -> Var<'t, T> {
        self.unary(|x| x.cos(), |x, _| -x.sin())
    }

    pub fn tanh(self) -> Var<'t, T> {
        self.unary(|x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.unary(sigmoid, |_, y| y * (T::one() - y))
    }

    /// `x · sigmoid(x)`
    pub fn swish(self) -> Var<'t, T> {
        self.unary(
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            },
        )
    }

    /// `x^p` on nonnegative input; the derivative at 0 is taken as 0.
    pub fn powf(self, p: f64) -> Var<'t, T> {
        let p = T::lit(p);
        self.unary(
            move |x| if x > T::zero() { x.powf(p) } else { T::zero() },
            move |x, y| if x > T::zero() { p * y / x } else { T::zero() },
        )
    }

    /// Two-argument arctangent `atan2(self, x)`, with `self` as the imaginary
    /// part. Both zero gives phase 0 and zero gradient.
    pub fn atan2(self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let (yv, xv) = (self.value(), x.value());
        if yv.shape() != xv.shape() {
            return Err(Error::ShapeMismatch { op: "atan2", lhs: yv.shape().to_vec(), rhs: xv.shape().to_vec() });
        }
        let out = yv.zip_map(&xv, |y, x| {
            if y == T::zero() && x == T::zero() {
                return T::zero();
            }
            let p = y.atan2(x);
            // principal value in (−π, π]
            if p <= -T::PI() {
                p + T::PI() + T::PI()
            } else {
                p
            }
        });
        Ok(self.tape().record(out, &[self, x], move |g| {
            let n = g.numel();
            let (mut gy, mut gx) = (Vec::with_capacity(n), Vec::with_capacity(n));
            for i in 0..n {
                let (y, x) = (yv.data()[i], xv.data()[i]);
                let r2 = x * x + y * y;
                if r2 == T::zero() {
                    gy.push(T::zero());
                    gx.push(T::zero());
                } else {
                    gy.push(g.data()[i] * x / r2);
                    gx.push(-g.data()[i] * y / r2);
                }
            }
            vec![Some(Tensor::new(g.shape(), gy).unwrap()), Some(Tensor::new(g.shape(), gx).unwrap())]
        }))
    }

    pub fn sum_all(self) -> Var<'t, T> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.tape().record(Tensor::scalar(x.sum()), &[self], move |g| vec![Some(Tensor::full(&shape, g.item()))])
    }

    pub fn mean_all(self) -> Var<'t, T> {
        let n = self.value().numel().max(1);
        self.sum_all().scale(1.0 / n as f64)
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Mean squared error.
pub fn mse<'t, T: Real>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    Ok(a.sub(b)?.square().mean_all())
}

/// Mean absolute error.
pub fn l1<'t, T: Real>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    Ok(a.sub(b)?.abs().mean_all())
}
