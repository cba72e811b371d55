//! Generator and discriminator objectives. Every norm is a mean over elements.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{GeneratorOutput, SpectralInput};
use crate::metrics::{ssnr, SSNR_CLAMP, SSNR_FRAME};
use crate::numcore::{l1, mse, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub metric: f64,
    pub mag: f64,
    pub pha: f64,
    pub com: f64,
    pub time: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { metric: 0.05, mag: 0.9, pha: 0.3, com: 0.1, time: 0.2 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.metric, self.mag, self.pha, self.com, self.time];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }

    /// Weighted sum of the five component losses.
    pub fn combine(&self, time: f64, mag: f64, com: f64, pha: f64, metric: f64) -> f64 {
        self.metric * metric + self.mag * mag + self.pha * pha + self.com * com + self.time * time
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_time: f64,
    pub l_mag: f64,
    pub l_com: f64,
    pub l_ip: f64,
    pub l_gd: f64,
    pub l_iaf: f64,
    pub l_pha: f64,
    pub l_metric: f64,
    pub l_generator: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        self.fields().iter().all(|(_, v)| v.is_finite())
    }

    pub fn fields(&self) -> [(&'static str, f64); 9] {
        [
            ("l_time", self.l_time),
            ("l_mag", self.l_mag),
            ("l_com", self.l_com),
            ("l_ip", self.l_ip),
            ("l_gd", self.l_gd),
            ("l_iaf", self.l_iaf),
            ("l_pha", self.l_pha),
            ("l_metric", self.l_metric),
            ("l_generator", self.l_generator),
        ]
    }

    /// Elementwise mean of several reports.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let sum = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        LossReport {
            l_time: sum(|r| r.l_time),
            l_mag: sum(|r| r.l_mag),
            l_com: sum(|r| r.l_com),
            l_ip: sum(|r| r.l_ip),
            l_gd: sum(|r| r.l_gd),
            l_iaf: sum(|r| r.l_iaf),
            l_pha: sum(|r| r.l_pha),
            l_metric: sum(|r| r.l_metric),
            l_generator: sum(|r| r.l_generator),
        }
    }
}

pub fn time_loss<'t, T: Real>(clean: Var<'t, T>, enhanced: Var<'t, T>) -> Result<Var<'t, T>> {
    if clean.shape() != enhanced.shape() {
        return Err(Error::LengthMismatch(clean.value().numel(), enhanced.value().numel()));
    }
    l1(clean, enhanced)
}

pub fn magnitude_loss<'t, T: Real>(clean_c: Var<'t, T>, enhanced_c: Var<'t, T>) -> Result<Var<'t, T>> {
    same_extent("magnitude_loss", clean_c, enhanced_c)?;
    mse(clean_c, enhanced_c)
}

pub fn complex_loss<'t, T: Real>(re: Var<'t, T>, im: Var<'t, T>, re_hat: Var<'t, T>, im_hat: Var<'t, T>) -> Result<Var<'t, T>> {
    same_extent("complex_loss", re, re_hat)?;
    same_extent("complex_loss", im, im_hat)?;
    mse(re, re_hat)?.add(mse(im, im_hat)?)
}

fn same_extent<T: Real>(op: &'static str, a: Var<'_, T>, b: Var<'_, T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch { op, lhs: a.shape(), rhs: b.shape() });
    }
    Ok(())
}

/// `|x − 2π·round(x / 2π)|`, ties rounded away from zero.
pub fn anti_wrap_value(x: f64) -> f64 {
    (x - 2.0 * PI * (x / (2.0 * PI)).round()).abs()
}

/// Differentiable [`anti_wrap_value`]; the slope is the sign of the wrapped difference.
pub fn anti_wrap<'t, T: Real>(x: Var<'t, T>) -> Var<'t, T> {
    let two_pi = T::lit(2.0 * PI);
    let wrapped = move |v: T| v - two_pi * (v / two_pi).round();
    x.unary(
        move |v| wrapped(v).abs(),
        move |v, _| {
            let w = wrapped(v);
            if w > T::zero() {
                T::one()
            } else if w < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        },
    )
}

/// Instantaneous-phase, group-delay and instantaneous-angular-frequency terms
/// and their sum, over `[.., T, F]` phase grids.
#[derive(Clone, Copy, Debug)]
pub struct PhaseTerms<'t, T: Real> {
    pub ip: Var<'t, T>,
    pub gd: Var<'t, T>,
    pub iaf: Var<'t, T>,
    pub total: Var<'t, T>,
}

fn diff<'t, T: Real>(x: Var<'t, T>, axis: usize) -> Result<Var<'t, T>> {
    let n = x.shape()[axis];
    x.narrow(axis, 1, n - 1)?.sub(x.narrow(axis, 0, n - 1)?)
}

pub fn phase_loss<'t, T: Real>(clean: Var<'t, T>, enhanced: Var<'t, T>) -> Result<PhaseTerms<'t, T>> {
    same_extent("phase_loss", clean, enhanced)?;
    let s = clean.shape();
    let r = s.len();
    if r < 2 || s[r - 1] < 2 || s[r - 2] < 2 {
        return Err(Error::InvalidShape { op: "phase_loss", detail: format!("need at least 2 frames and 2 bins, got {s:?}") });
    }
    let (freq, time) = (r - 1, r - 2);
    let ip = anti_wrap(clean.sub(enhanced)?).mean_all();
    let gd = anti_wrap(diff(clean, freq)?.sub(diff(enhanced, freq)?)?).mean_all();
    let iaf = anti_wrap(diff(clean, time)?.sub(diff(enhanced, time)?)?).mean_all();
    Ok(PhaseTerms { ip, gd, iaf, total: ip.add(gd)?.add(iaf)? })
}

/// `mean((s − 1)²)` over discriminator scores on (clean, enhanced) pairs.
pub fn metric_loss<'t, T: Real>(scores: Var<'t, T>) -> Var<'t, T> {
    scores.add_scalar(-1.0).square().mean_all()
}

/// Differentiable components of the generator objective for one clip.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorTerms<'t, T: Real> {
    pub time: Var<'t, T>,
    pub mag: Var<'t, T>,
    pub com: Var<'t, T>,
    pub phase: PhaseTerms<'t, T>,
    pub metric: Var<'t, T>,
}

impl<'t, T: Real> GeneratorTerms<'t, T> {
    /// `clean_wave` is the `[len]` clean waveform; `scores` are discriminator
    /// scores on (clean, enhanced).
    pub fn compute(out: &GeneratorOutput<'t, T>, clean: &SpectralInput<T>, clean_wave: &Tensor<T>, scores: Var<'t, T>) -> Result<Self> {
        let tape = out.mask.tape();
        let (re, im) = clean.compressed_complex();
        Ok(Self {
            time: time_loss(tape.constant(clean_wave.clone()), out.waveform)?,
            mag: magnitude_loss(tape.constant(clean.mag_c.clone()), out.mag_c)?,
            com: complex_loss(tape.constant(re), tape.constant(im), out.real_c, out.imag_c)?,
            phase: phase_loss(tape.constant(clean.phase.clone()), out.phase)?,
            metric: metric_loss(scores),
        })
    }

    pub fn total(&self, w: &LossWeights) -> Result<Var<'t, T>> {
        self.metric
            .scale(w.metric)
            .add(self.mag.scale(w.mag))?
            .add(self.phase.total.scale(w.pha))?
            .add(self.com.scale(w.com))?
            .add(self.time.scale(w.time))
    }

    pub fn report(&self, w: &LossWeights) -> LossReport {
        let (ip, gd, iaf) = (self.phase.ip.scalar(), self.phase.gd.scalar(), self.phase.iaf.scalar());
        let mut r = LossReport {
            l_time: self.time.scalar(),
            l_mag: self.mag.scalar(),
            l_com: self.com.scalar(),
            l_ip: ip,
            l_gd: gd,
            l_iaf: iaf,
            l_pha: ip + gd + iaf,
            l_metric: self.metric.scalar(),
            l_generator: 0.0,
        };
        r.l_generator = generator_loss(&r, w);
        r
    }
}

/// Weighted generator objective recomputed from report fields.
pub fn generator_loss(r: &LossReport, w: &LossWeights) -> f64 {
    w.combine(r.l_time, r.l_mag, r.l_com, r.l_pha, r.l_metric)
}

/// Target the discriminator regresses enhanced-pair scores toward.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscTarget {
    #[default]
    Adversarial,
    MetricProxy,
}

impl DiscTarget {
    pub fn label(self, clean: &[f64], enhanced: &[f64]) -> Result<f64> {
        match self {
            DiscTarget::Adversarial => Ok(0.0),
            DiscTarget::MetricProxy => metric_proxy(clean, enhanced),
        }
    }
}

/// `clamp((SSNR + 10) / 45, 0, 1)`.
pub fn metric_proxy(clean: &[f64], enhanced: &[f64]) -> Result<f64> {
    let s = ssnr(clean, enhanced, SSNR_FRAME, SSNR_CLAMP)?;
    Ok(((s + 10.0) / 45.0).clamp(0.0, 1.0))
}

/// `mean((s_real − 1)²) + mean((s_fake − label)²)`.
pub fn discriminator_loss<'t, T: Real>(real: Var<'t, T>, fake: Var<'t, T>, label: f64) -> Result<Var<'t, T>> {
    if !(0.0..=1.0).contains(&label) {
        return Err(Error::InvalidArgument(format!("fake label {label} outside [0, 1]")));
    }
    real.add_scalar(-1.0).square().mean_all().add(fake.add_scalar(-label).square().mean_all())
}
