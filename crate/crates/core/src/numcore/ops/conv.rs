use crate::error::{Error, Result};
use crate::numcore::real::gemm;
use crate::numcore::{Real, Tensor, Var};

/// Geometry of a 2-D convolution over `[B, C, T, F]` inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self { stride: (1, 1), dilation: (1, 1), padding: (0, 0), groups: 1 }
    }
}

impl Conv2dSpec {
    pub fn padded(padding: (usize, usize)) -> Self {
        Self { padding, ..Self::default() }
    }

    pub fn stride(mut self, stride: (usize, usize)) -> Self {
        self.stride = stride;
        self
    }

    pub fn dilation(mut self, dilation: (usize, usize)) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    /// Output extent along one axis, `None` when it would be empty.
    pub fn out_len(input: usize, kernel: usize, stride: usize, dilation: usize, pad: usize) -> Option<usize> {
        let span = dilation * (kernel - 1) + 1;
        let padded = input + 2 * pad;
        if padded < span || stride == 0 {
            return None;
        }
        Some((padded - span) / stride + 1)
    }
}

#[derive(Clone, Copy)]
struct Geom {
    b: usize,
    ci: usize,
    t: usize,
    f: usize,
    co: usize,
    kt: usize,
    kf: usize,
    to: usize,
    fo: usize,
    spec: Conv2dSpec,
}

impl Geom {
    fn cig(&self) -> usize {
        self.ci / self.spec.groups
    }
    fn cog(&self) -> usize {
        self.co / self.spec.groups
    }
    fn pout(&self) -> usize {
        self.to * self.fo
    }
    fn is_pointwise(&self) -> bool {
        self.kt == 1 && self.kf == 1 && self.spec.stride == (1, 1) && self.spec.padding == (0, 0) && self.spec.groups == 1
    }
    fn is_depthwise(&self) -> bool {
        self.spec.groups == self.ci && self.co == self.ci
    }

    /// Valid output range `[lo, hi)` along one axis for kernel tap `tap`.
    fn valid(out: usize, input: usize, stride: usize, pad: usize, dil: usize, tap: usize) -> (usize, usize) {
        let shift = tap * dil;
        let lo = if shift >= pad { 0 } else { (pad - shift).div_ceil(stride) };
        let hi = if input + pad > shift { ((input + pad - shift - 1) / stride + 1).min(out) } else { 0 };
        (lo.min(hi), hi)
    }
}

fn im2col<T: Real>(x: &[T], g: &Geom, c0: usize, cols: &mut [T]) {
    let (st, sf) = g.spec.stride;
    let (dt, df) = g.spec.dilation;
    let (pt, pf) = g.spec.padding;
    let p = g.pout();
    cols.iter_mut().for_each(|v| *v = T::zero());
    for c in 0..g.cig() {
        let xc = &x[(c0 + c) * g.t * g.f..];
        for i in 0..g.kt {
            let (tlo, thi) = Geom::valid(g.to, g.t, st, pt, dt, i);
            for j in 0..g.kf {
                let (flo, fhi) = Geom::valid(g.fo, g.f, sf, pf, df, j);
                let row = &mut cols[((c * g.kt + i) * g.kf + j) * p..];
                for to in tlo..thi {
                    let ti = to * st + i * dt - pt;
                    let xr = &xc[ti * g.f..];
                    let rr = &mut row[to * g.fo..];
                    for fo in flo..fhi {
                        rr[fo] = xr[fo * sf + j * df - pf];
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], g: &Geom, c0: usize, dx: &mut [T]) {
    let (st, sf) = g.spec.stride;
    let (dt, df) = g.spec.dilation;
    let (pt, pf) = g.spec.padding;
    let p = g.pout();
    for c in 0..g.cig() {
        let xc = &mut dx[(c0 + c) * g.t * g.f..];
        for i in 0..g.kt {
            let (tlo, thi) = Geom::valid(g.to, g.t, st, pt, dt, i);
            for j in 0..g.kf {
                let (flo, fhi) = Geom::valid(g.fo, g.f, sf, pf, df, j);
                let row = &cols[((c * g.kt + i) * g.kf + j) * p..];
                for to in tlo..thi {
                    let ti = to * st + i * dt - pt;
                    for fo in flo..fhi {
                        xc[ti * g.f + fo * sf + j * df - pf] += row[to * g.fo + fo];
                    }
                }
            }
        }
    }
}

/// Per-channel (groups == channels) convolution, direct loops.
fn depthwise_forward<T: Real>(x: &[T], w: &[T], g: &Geom, out: &mut [T]) {
    let (st, sf) = g.spec.stride;
    let (dt, df) = g.spec.dilation;
    let (pt, pf) = g.spec.padding;
    let k = g.kt * g.kf;
    for bc in 0..g.b * g.ci {
        let c = bc % g.ci;
        let xc = &x[bc * g.t * g.f..(bc + 1) * g.t * g.f];
        let oc = &mut out[bc * g.pout()..(bc + 1) * g.pout()];
        for i in 0..g.kt {
            let (tlo, thi) = Geom::valid(g.to, g.t, st, pt, dt, i);
            for j in 0..g.kf {
                let wv = w[c * k + i * g.kf + j];
                let (flo, fhi) = Geom::valid(g.fo, g.f, sf, pf, df, j);
                for to in tlo..thi {
                    let ti = to * st + i * dt - pt;
                    let xr = &xc[ti * g.f..];
                    let or = &mut oc[to * g.fo..];
                    for fo in flo..fhi {
                        or[fo] += wv * xr[fo * sf + j * df - pf];
                    }
                }
            }
        }
    }
}

fn depthwise_backward<T: Real>(x: &[T], w: &[T], gy: &[T], g: &Geom, dx: Option<&mut [T]>, dw: Option<&mut [T]>) {
    let (st, sf) = g.spec.stride;
    let (dt, df) = g.spec.dilation;
    let (pt, pf) = g.spec.padding;
    let k = g.kt * g.kf;
    let mut dx = dx;
    let mut dw = dw;
    for bc in 0..g.b * g.ci {
        let c = bc % g.ci;
        let xc = &x[bc * g.t * g.f..(bc + 1) * g.t * g.f];
        let gc = &gy[bc * g.pout()..(bc + 1) * g.pout()];
        for i in 0..g.kt {
            let (tlo, thi) = Geom::valid(g.to, g.t, st, pt, dt, i);
            for j in 0..g.kf {
                let widx = c * k + i * g.kf + j;
                let wv = w[widx];
                let (flo, fhi) = Geom::valid(g.fo, g.f, sf, pf, df, j);
                let mut acc = T::zero();
                for to in tlo..thi {
                    let ti = to * st + i * dt - pt;
                    let base = ti * g.f + j * df;
                    let gr = &gc[to * g.fo..];
                    if let Some(dx) = dx.as_deref_mut() {
                        let dxc = &mut dx[bc * g.t * g.f..];
                        for fo in flo..fhi {
                            dxc[base + fo * sf - pf] += wv * gr[fo];
                        }
                    }
                    for fo in flo..fhi {
                        acc += gr[fo] * xc[base + fo * sf - pf];
                    }
                }
                if let Some(dw) = dw.as_deref_mut() {
                    dw[widx] += acc;
                }
            }
        }
    }
}

fn conv_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, g: &Geom) -> Vec<T> {
    let mut out = vec![T::zero(); g.b * g.co * g.pout()];
    if g.is_depthwise() && g.cig() == 1 {
        depthwise_forward(x.data(), w.data(), g, &mut out);
        return out;
    }
    let (cig, cog, p) = (g.cig(), g.cog(), g.pout());
    let kk = cig * g.kt * g.kf;
    if g.is_pointwise() {
        for b in 0..g.b {
            let xb = &x.data()[b * g.ci * p..];
            gemm(g.co, g.ci, p, w.data(), false, xb, false, &mut out[b * g.co * p..], T::one(), T::zero());
        }
        return out;
    }
    let mut cols = vec![T::zero(); kk * p];
    for b in 0..g.b {
        let xb = &x.data()[b * g.ci * g.t * g.f..];
        for grp in 0..g.spec.groups {
            im2col(xb, g, grp * cig, &mut cols);
            let wg = &w.data()[grp * cog * kk..];
            let og = &mut out[(b * g.co + grp * cog) * p..];
            gemm(cog, kk, p, wg, false, &cols, false, og, T::one(), T::zero());
        }
    }
    out
}

fn conv_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    g: &Geom,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let mut dx = need_x.then(|| Tensor::zeros(x.shape()));
    let mut dw = need_w.then(|| Tensor::zeros(w.shape()));
    if g.is_depthwise() && g.cig() == 1 {
        depthwise_backward(x.data(), w.data(), gy.data(), g, dx.as_mut().map(|t| t.data_mut()), dw.as_mut().map(|t| t.data_mut()));
        return (dx, dw);
    }
    let (cig, cog, p) = (g.cig(), g.cog(), g.pout());
    let kk = cig * g.kt * g.kf;
    if g.is_pointwise() {
        for b in 0..g.b {
            let gb = &gy.data()[b * g.co * p..];
            if let Some(dx) = dx.as_mut() {
                gemm(g.ci, g.co, p, w.data(), true, gb, false, &mut dx.data_mut()[b * g.ci * p..], T::one(), T::zero());
            }
            if let Some(dw) = dw.as_mut() {
                let xb = &x.data()[b * g.ci * p..];
                gemm(g.co, p, g.ci, gb, false, xb, true, dw.data_mut(), T::one(), T::one());
            }
        }
        return (dx, dw);
    }
    let mut cols = vec![T::zero(); kk * p];
    let mut dcols = vec![T::zero(); kk * p];
    for b in 0..g.b {
        for grp in 0..g.spec.groups {
            let gg = &gy.data()[(b * g.co + grp * cog) * p..];
            if let Some(dw) = dw.as_mut() {
                im2col(&x.data()[b * g.ci * g.t * g.f..], g, grp * cig, &mut cols);
                gemm(cog, p, kk, gg, false, &cols, true, &mut dw.data_mut()[grp * cog * kk..], T::one(), T::one());
            }
            if let Some(dx) = dx.as_mut() {
                let wg = &w.data()[grp * cog * kk..];
                gemm(kk, cog, p, wg, true, gg, false, &mut dcols, T::one(), T::zero());
                col2im(&dcols, g, grp * cig, &mut dx.data_mut()[b * g.ci * g.t * g.f..]);
            }
        }
    }
    (dx, dw)
}

fn geometry(x: &[usize], w: &[usize], spec: Conv2dSpec) -> Result<Geom> {
    if x.len() != 4 || w.len() != 4 {
        return Err(Error::InvalidShape { op: "conv2d", detail: format!("input {x:?}, weight {w:?} must be rank 4") });
    }
    let (b, ci, t, f) = (x[0], x[1], x[2], x[3]);
    let (co, cig, kt, kf) = (w[0], w[1], w[2], w[3]);
    let groups = spec.groups.max(1);
    if kt == 0 || kf == 0 || ci % groups != 0 || co % groups != 0 || cig * groups != ci {
        return Err(Error::ShapeMismatch { op: "conv2d", lhs: x.to_vec(), rhs: w.to_vec() });
    }
    let to = Conv2dSpec::out_len(t, kt, spec.stride.0, spec.dilation.0, spec.padding.0);
    let fo = Conv2dSpec::out_len(f, kf, spec.stride.1, spec.dilation.1, spec.padding.1);
    match (to, fo) {
        (Some(to), Some(fo)) if to >= 1 && fo >= 1 => Ok(Geom { b, ci, t, f, co, kt, kf, to, fo, spec: Conv2dSpec { groups, ..spec } }),
        _ => Err(Error::EmptyOutput { op: "conv2d", detail: format!("input {x:?}, kernel {w:?}, {spec:?}") }),
    }
}

impl<'t, T: Real> Var<'t, T> {
    /// Cross-correlation of `[B, Ci, T, F]` with `[Co, Ci/groups, kt, kf]`.
    pub fn conv2d(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>, spec: Conv2dSpec) -> Result<Var<'t, T>> {
        let (x, w) = (self.value(), weight.value());
        let g = geometry(x.shape(), w.shape(), spec)?;
        let out = Tensor::new(&[g.b, g.co, g.to, g.fo], conv_forward(&x, &w, &g))?;
        let (need_x, need_w) = (self.requires_grad(), weight.requires_grad());
        let y = self.tape().record(out, &[self, weight], move |gy| {
            let (dx, dw) = conv_backward(&x, &w, gy, &g, need_x, need_w);
            vec![dx, dw]
        });
        match bias {
            None => Ok(y),
            Some(b) => {
                if b.shape() != [g.co] {
                    return Err(Error::ShapeMismatch { op: "conv2d bias", lhs: vec![g.co], rhs: b.shape() });
                }
                y.add(b.reshape(&[g.co, 1, 1])?)
            }
        }
    }

    /// Per-channel spatial convolution followed by a 1×1 channel mix.
    pub fn depthwise_separable_conv2d(
        self,
        dw_weight: Var<'t, T>,
        dw_bias: Option<Var<'t, T>>,
        pw_weight: Var<'t, T>,
        pw_bias: Option<Var<'t, T>>,
        spec: Conv2dSpec,
    ) -> Result<Var<'t, T>> {
        let c = self.shape().get(1).copied().unwrap_or(0);
        let dws = dw_weight.shape();
        if dws.len() != 4 || dws[0] != c || dws[1] != 1 {
            return Err(Error::ShapeMismatch { op: "depthwise_separable_conv2d", lhs: self.shape(), rhs: dws });
        }
        let pws = pw_weight.shape();
        if pws.len() != 4 || pws[1] != c || pws[2] != 1 || pws[3] != 1 {
            return Err(Error::ShapeMismatch { op: "depthwise_separable_conv2d", lhs: self.shape(), rhs: pws });
        }
        let depthwise = self.conv2d(dw_weight, dw_bias, Conv2dSpec { groups: c, ..spec })?;
        depthwise.conv2d(pw_weight, pw_bias, Conv2dSpec::default())
    }
}

/// Parameter counts of a separable vs standard `k_t×k_f` convolution (no biases).
pub fn separable_param_count(ci: usize, co: usize, kt: usize, kf: usize) -> (usize, usize) {
    (ci * kt * kf + ci * co, co * ci * kt * kf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tape;

    #[test]
    fn one_by_one_identity() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[1, 1, 2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap());
        let w = tape.constant(Tensor::ones(&[1, 1, 1, 1]));
        let y = x.conv2d(w, None, Conv2dSpec::default()).unwrap();
        assert_eq!(y.value().data(), x.value().data());
    }

    #[test]
    fn all_ones_three_by_three() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(&[1, 1, 5, 5]));
        let w = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let y = x.conv2d(w, None, Conv2dSpec::default()).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 3, 3]);
        assert!(y.value().data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn strided_output_shape() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 16, 16]));
        let w = tape.constant(Tensor::zeros(&[4, 2, 3, 3]));
        let y = x.conv2d(w, None, Conv2dSpec::padded((1, 1)).stride((1, 2))).unwrap();
        assert_eq!(y.shape(), vec![1, 4, 16, 8]);
    }

    #[test]
    fn empty_output_errors() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
        let w = tape.constant(Tensor::zeros(&[1, 1, 3, 3]));
        assert!(matches!(x.conv2d(w, None, Conv2dSpec::default()), Err(Error::EmptyOutput { .. })));
    }

    #[test]
    fn separable_counts() {
        assert_eq!(separable_param_count(16, 32, 3, 3), (656, 4608));
    }

    #[test]
    fn separable_delta_identity() {
        let tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..2 * 4 * 5).map(|v| v as f64 * 0.1 - 1.0).collect();
        let x = tape.constant(Tensor::from_f64(&[1, 2, 4, 5], &data).unwrap());
        let mut dw = Tensor::zeros(&[2, 1, 3, 3]);
        dw.data_mut()[4] = 1.0;
        dw.data_mut()[13] = 1.0;
        let pw = Tensor::from_f64(&[2, 2, 1, 1], &[1., 0., 0., 1.]).unwrap();
        let y = x.depthwise_separable_conv2d(tape.constant(dw), None, tape.constant(pw), None, Conv2dSpec::padded((1, 1))).unwrap();
        assert_eq!(y.value().data(), x.value().data());
    }

    #[test]
    fn channel_mismatch_errors() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 3, 4, 4]));
        let dw = tape.constant(Tensor::zeros(&[2, 1, 3, 3]));
        let pw = tape.constant(Tensor::zeros(&[4, 2, 1, 1]));
        assert!(x.depthwise_separable_conv2d(dw, None, pw, None, Conv2dSpec::default()).is_err());
    }
}
