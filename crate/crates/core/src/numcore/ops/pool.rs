use crate::error::{Error, Result};
use crate::numcore::{Real, Tensor, Var};

/// Window bounds `[start, end)` of output cell `i` when `n` inputs are split into `m` cells.
fn window(i: usize, n: usize, m: usize) -> (usize, usize) {
    (i * n / m, (i + 1) * n / m)
}

impl<'t, T: Real> Var<'t, T> {
    /// Max over a `t × f` partition of the trailing two axes of `[B, C, T, F]`.
    /// Gradient routes to the first maximal element in row-major order.
    pub fn adaptive_max_pool2d(self, out: (usize, usize)) -> Result<Var<'t, T>> {
        let x = self.value();
        let s = x.shape().to_vec();
        if s.len() != 4 {
            return Err(Error::InvalidShape { op: "adaptive_max_pool2d", detail: format!("{s:?}") });
        }
        let (bc, t, f) = (s[0] * s[1], s[2], s[3]);
        let (ot, of) = out;
        if ot == 0 || of == 0 || ot > t || of > f {
            return Err(Error::InvalidArgument(format!("pool output {out:?} larger than input {t}x{f}")));
        }
        let mut vals = Vec::with_capacity(bc * ot * of);
        let mut arg = Vec::with_capacity(bc * ot * of);
        for p in 0..bc {
            let plane = &x.data()[p * t * f..(p + 1) * t * f];
            for i in 0..ot {
                let (t0, t1) = window(i, t, ot);
                for j in 0..of {
                    let (f0, f1) = window(j, f, of);
                    let mut best = t0 * f + f0;
                    for ti in t0..t1 {
                        for fi in f0..f1 {
                            if plane[ti * f + fi] > plane[best] {
                                best = ti * f + fi;
                            }
                        }
                    }
                    vals.push(plane[best]);
                    arg.push(p * t * f + best);
                }
            }
        }
        let y = Tensor::new(&[s[0], s[1], ot, of], vals)?;
        Ok(self.tape().record(y, &[self], move |g| {
            let mut dx = Tensor::zeros(&s);
            for (k, &src) in arg.iter().enumerate() {
                dx.data_mut()[src] += g.data()[k];
            }
            vec![Some(dx)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use crate::numcore::{Tape, Tensor};

    #[test]
    fn ascending_grid_pools_to_corners() {
        let tape = Tape::<f64>::new();
        let data: Vec<f64> = (1..=16).map(|v| v as f64).collect();
        let x = tape.leaf(Tensor::from_f64(&[1, 1, 4, 4], &data).unwrap());
        let y = x.adaptive_max_pool2d((2, 2)).unwrap();
        assert_eq!(y.value().data(), &[6., 8., 14., 16.]);
        let g = tape.backward(y.sum_all()).unwrap();
        let gx = g.wrt(x).unwrap();
        assert_eq!(gx.data().iter().filter(|&&v| v == 1.0).count(), 4);
        assert_eq!(gx.data()[5], 1.0);
    }

    #[test]
    fn same_extent_is_identity() {
        let tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..6).map(|v| (v as f64).cos()).collect();
        let x = tape.constant(Tensor::from_f64(&[1, 1, 2, 3], &data).unwrap());
        assert_eq!(x.adaptive_max_pool2d((2, 3)).unwrap().value().data(), x.value().data());
        assert!(x.adaptive_max_pool2d((3, 3)).is_err());
    }

    #[test]
    fn ties_route_to_first() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[1, 1, 2, 2]));
        let y = x.adaptive_max_pool2d((1, 1)).unwrap();
        let g = tape.backward(y.sum_all()).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[1., 0., 0., 0.]);
    }
}
