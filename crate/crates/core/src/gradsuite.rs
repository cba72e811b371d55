//! Finite-difference gradient suite over every differentiable operation and
//! the composed models, at 64-bit on micro shapes.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::discriminator::{spectral_normalize, Discriminator, DiscriminatorConfig, SpectralState};
use crate::dsp::{AudioClip, StftConfig, StftPlan};
use crate::error::{Error, Result};
use crate::generator::{
    ConformerBlock, ConvModule, DenseEncoder, Generator, GeneratorConfig, MaskDecoder, MultiHeadAttention, PhaseDecoder,
};
use crate::layers::Registrar;
use crate::losses::{
    anti_wrap, complex_loss, discriminator_loss, magnitude_loss, metric_loss, phase_loss, time_loss, GeneratorTerms, LossWeights,
};
use crate::numcore::{concat, grad_check, grad_check_params, l1, mse, Conv2dSpec, GradCheckReport, Init, ParamStore, Tape, Tensor, Var};

/// Tolerance for single operations and layers.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Tolerance for the end-to-end generator loss.
pub const END_TO_END_TOLERANCE: f64 = 1e-3;
const STEP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Module {
    Numcore,
    Generator,
    Discriminator,
    Losses,
}

impl Module {
    pub const ALL: [Module; 4] = [Module::Numcore, Module::Generator, Module::Discriminator, Module::Losses];

    pub fn name(self) -> &'static str {
        match self {
            Module::Numcore => "numcore",
            Module::Generator => "generator",
            Module::Discriminator => "discriminator",
            Module::Losses => "losses",
        }
    }
}

impl fmt::Display for Module {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `all` or one module name.
pub fn parse_modules(s: &str) -> Result<Vec<Module>> {
    if s == "all" {
        return Ok(Module::ALL.to_vec());
    }
    Ok(vec![Module::from_str(s)?])
}

impl FromStr for Module {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Module::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| Error::Config(format!("unknown gradcheck module {s:?}")))
    }
}

#[derive(Debug)]
pub struct CheckOutcome {
    pub module: Module,
    pub name: &'static str,
    pub tolerance: f64,
    pub result: Result<GradCheckReport>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        matches!(&self.result, Ok(r) if r.max_rel_err < self.tolerance)
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "ok  " } else { "FAIL" };
        match &self.result {
            Ok(r) => write!(
                f,
                "{verdict} {}::{} max_rel_err={:.3e} (< {:.0e}) over {} entries, worst at {}",
                self.module, self.name, r.max_rel_err, self.tolerance, r.checked, r.worst
            ),
            Err(e) => write!(f, "{verdict} {}::{} error: {e}", self.module, self.name),
        }
    }
}

type Check = fn() -> Result<GradCheckReport>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(shape: &[usize], seed: u64) -> Tensor<f64> {
    Init::normal(shape, 1.0, &mut rng(seed))
}

/// Values in `[lo, hi]` with random sign flips when `signed`.
fn banded(shape: &[usize], lo: f64, hi: f64, signed: bool, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let n: usize = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = r.gen_range(lo..hi);
            if signed && r.gen_bool(0.5) {
                -m
            } else {
                m
            }
        })
        .collect();
    Tensor::new(shape, v).expect("shape")
}

/// Random projection to a scalar so every output element carries its own weight.
fn project<'t>(tape: &'t Tape<f64>, y: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    Ok(y.mul(tape.constant(normal(&y.shape(), seed)))?.sum_all())
}

fn unary(f: fn(Var<'_, f64>) -> Var<'_, f64>, x: Tensor<f64>) -> Result<GradCheckReport> {
    grad_check(|t, v| project(t, f(v[0]), 99), &[x], STEP)
}

const NUMCORE: &[(&str, Check)] = &[
    ("add_broadcast", || grad_check(|t, v| project(t, v[0].add(v[1])?, 1), &[normal(&[2, 3, 4], 1), normal(&[3, 1], 2)], STEP)),
    ("sub_broadcast", || grad_check(|t, v| project(t, v[0].sub(v[1])?, 1), &[normal(&[2, 3], 3), normal(&[3], 4)], STEP)),
    ("mul_broadcast", || grad_check(|t, v| project(t, v[0].mul(v[1])?, 1), &[normal(&[4, 3], 5), normal(&[4, 1], 6)], STEP)),
    ("div", || grad_check(|t, v| project(t, v[0].div(v[1])?, 1), &[normal(&[3, 4], 7), banded(&[3, 4], 0.5, 2.0, true, 8)], STEP)),
    ("neg", || unary(|x| x.neg(), normal(&[5], 9))),
    ("scale", || unary(|x| x.scale(-1.7), normal(&[5], 10))),
    ("add_scalar", || unary(|x| x.add_scalar(0.4), normal(&[5], 11))),
    ("square", || unary(|x| x.square(), normal(&[6], 12))),
    ("sqrt", || unary(|x| x.sqrt(), banded(&[6], 0.2, 3.0, false, 13))),
    ("exp", || unary(|x| x.exp(), normal(&[6], 14))),
    ("ln", || unary(|x| x.ln(), banded(&[6], 0.2, 3.0, false, 15))),
    ("abs", || unary(|x| x.abs(), banded(&[6], 0.1, 2.0, true, 16))),
    ("sin", || unary(|x| x.sin(), normal(&[6], 17))),
    ("cos", || unary(|x| x.cos(), normal(&[6], 18))),
    ("tanh", || unary(|x| x.tanh(), normal(&[6], 19))),
    ("sigmoid", || unary(|x| x.sigmoid(), normal(&[6], 20))),
    ("swish", || unary(|x| x.swish(), normal(&[6], 21))),
    ("powf", || unary(|x| x.powf(1.0 / 0.3), banded(&[6], 0.2, 1.5, false, 22))),
    ("atan2", || {
        grad_check(|t, v| project(t, v[0].atan2(v[1])?, 1), &[banded(&[8], 0.3, 1.5, true, 23), banded(&[8], 0.3, 1.5, true, 24)], STEP)
    }),
    ("sum_all", || grad_check(|_, v| Ok(v[0].square().sum_all()), &[normal(&[2, 3], 25)], STEP)),
    ("mean_all", || grad_check(|_, v| Ok(v[0].square().mean_all()), &[normal(&[2, 3], 26)], STEP)),
    ("mse", || grad_check(|_, v| mse(v[0], v[1]), &[normal(&[7], 27), normal(&[7], 28)], STEP)),
    ("l1", || grad_check(|_, v| l1(v[0], v[1]), &[banded(&[7], 0.2, 1.0, false, 29), banded(&[7], -1.0, -0.2, false, 30)], STEP)),
    ("matmul_batched", || grad_check(|t, v| project(t, v[0].matmul(v[1])?, 1), &[normal(&[2, 3, 4], 31), normal(&[4, 5], 32)], STEP)),
    ("linear", || {
        grad_check(
            |t, v| project(t, v[0].linear(v[1], Some(v[2]))?, 1),
            &[normal(&[2, 3, 4], 33), normal(&[5, 4], 34), normal(&[5], 35)],
            STEP,
        )
    }),
    ("conv2d", || {
        let spec = Conv2dSpec::padded((2, 1)).dilation((2, 1)).stride((1, 2));
        grad_check(
            |t, v| project(t, v[0].conv2d(v[1], Some(v[2]), spec)?, 1),
            &[normal(&[2, 2, 5, 6], 36), normal(&[3, 2, 3, 3], 37), normal(&[3], 38)],
            STEP,
        )
    }),
    ("conv2d_grouped", || {
        let spec = Conv2dSpec::padded((1, 1)).groups(2);
        grad_check(|t, v| project(t, v[0].conv2d(v[1], None, spec)?, 1), &[normal(&[1, 4, 4, 5], 39), normal(&[4, 2, 3, 3], 40)], STEP)
    }),
    ("depthwise_separable_conv2d", || {
        let spec = Conv2dSpec::padded((1, 1)).stride((1, 2));
        grad_check(
            |t, v| project(t, v[0].depthwise_separable_conv2d(v[1], None, v[2], None, spec)?, 1),
            &[normal(&[1, 3, 4, 7], 41), normal(&[3, 1, 3, 3], 42), normal(&[2, 3, 1, 1], 43)],
            STEP,
        )
    }),
    ("instance_norm", || {
        grad_check(
            |t, v| project(t, v[0].instance_norm(v[1], v[2], 1e-5)?, 1),
            &[normal(&[2, 3, 4, 5], 44), normal(&[3], 45), normal(&[3], 46)],
            STEP,
        )
    }),
    ("layer_norm", || {
        grad_check(
            |t, v| project(t, v[0].layer_norm(v[1], v[2], 1e-5)?, 1),
            &[normal(&[3, 4, 6], 47), normal(&[6], 48), normal(&[6], 49)],
            STEP,
        )
    }),
    ("normalize_rows", || grad_check(|t, v| project(t, v[0].normalize_rows(5, 1e-5)?, 1), &[normal(&[4, 5], 50)], STEP)),
    ("prelu", || grad_check(|t, v| project(t, v[0].prelu(v[1])?, 1), &[banded(&[2, 3, 2, 2], 0.1, 2.0, true, 51), normal(&[3], 52)], STEP)),
    ("learnable_sigmoid", || {
        grad_check(|t, v| project(t, v[0].learnable_sigmoid(v[1], 1.2)?, 1), &[normal(&[1, 1, 3, 4], 53), normal(&[4], 54)], STEP)
    }),
    ("softmax", || grad_check(|t, v| project(t, v[0].softmax(1)?, 1), &[normal(&[3, 5], 55)], STEP)),
    ("dropout", || grad_check(|t, v| project(t, v[0].dropout(0.3, &mut rng(7))?, 1), &[normal(&[4, 6], 56)], STEP)),
    ("adaptive_max_pool2d", || {
        // a permutation keeps every window's maximum unique
        let mut r = rng(57);
        let mut vals: Vec<f64> = (0..60).map(|i| i as f64 * 0.1).collect();
        for i in (1..vals.len()).rev() {
            vals.swap(i, r.gen_range(0..=i));
        }
        grad_check(|t, v| project(t, v[0].adaptive_max_pool2d((2, 3))?, 1), &[Tensor::new(&[1, 2, 5, 6], vals).expect("shape")], STEP)
    }),
    ("reshape_permute", || grad_check(|t, v| project(t, v[0].reshape(&[3, 2, 4])?.permute(&[2, 0, 1])?, 1), &[normal(&[6, 4], 58)], STEP)),
    ("flatten_from", || grad_check(|t, v| project(t, v[0].flatten_from(1)?, 1), &[normal(&[2, 3, 4], 59)], STEP)),
    ("narrow", || grad_check(|t, v| project(t, v[0].narrow(1, 1, 3)?, 1), &[normal(&[2, 5], 60)], STEP)),
    ("pad", || grad_check(|t, v| project(t, v[0].pad(0, 2, 1)?, 1), &[normal(&[3, 2], 61)], STEP)),
    ("gather_axis", || grad_check(|t, v| project(t, v[0].gather_axis(1, &[2, 0, 2, 1])?, 1), &[normal(&[2, 3], 62)], STEP)),
    ("upsample_nearest", || grad_check(|t, v| project(t, v[0].upsample_nearest(2, 2, 7)?, 1), &[normal(&[1, 2, 4], 63)], STEP)),
    ("concat", || grad_check(|t, v| project(t, concat(&[v[0], v[1]], 1)?, 1), &[normal(&[2, 2, 3], 64), normal(&[2, 1, 3], 65)], STEP)),
    ("istft", || {
        let plan = StftPlan::new(StftConfig { n_fft: 16, hop: 4, ..StftConfig::default() })?;
        grad_check(|t, v| project(t, plan.istft_var(v[0], v[1], 40)?, 1), &[normal(&[1, 1, 11, 9], 66), normal(&[1, 1, 11, 9], 67)], STEP)
    }),
];

fn params_check<B>(seed: u64, build: B, probe: &[usize]) -> Result<GradCheckReport>
where
    B: FnOnce(&mut Registrar<'_, f64, ChaCha8Rng>) -> Result<Box<dyn Layer>>,
{
    let mut store = ParamStore::<f64>::new();
    let mut r = rng(seed);
    let layer = build(&mut Registrar::new(&mut store, &mut r))?;
    randomize(&mut store, seed + 1);
    let x = normal(probe, seed + 2);
    let by_params = grad_check_params(&store, |t, s| project(t, layer.run(t, s, t.constant(x.clone()))?, seed + 3), STEP)?;
    let by_input = grad_check(|t, v| project(t, layer.run(t, &store, v[0])?, seed + 3), std::slice::from_ref(&x), STEP)?;
    Ok(worse(by_params, by_input))
}

/// Perturbs every parameter so that norm affines, slopes and biases are
/// not sitting at special values.
fn randomize(store: &mut ParamStore<f64>, seed: u64) {
    let mut r = rng(seed);
    for (_, p) in store.iter_mut() {
        for v in p.tensor.data_mut() {
            *v += r.gen_range(-0.2..0.2);
        }
    }
}

fn worse(a: GradCheckReport, b: GradCheckReport) -> GradCheckReport {
    let checked = a.checked + b.checked;
    let mut w = if b.max_rel_err > a.max_rel_err { b } else { a };
    w.checked = checked;
    w
}

trait Layer {
    fn run<'t>(&self, tape: &'t Tape<f64>, store: &ParamStore<f64>, x: Var<'t, f64>) -> Result<Var<'t, f64>>;
}

impl<F> Layer for F
where
    F: for<'t> Fn(&'t Tape<f64>, &ParamStore<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    fn run<'t>(&self, tape: &'t Tape<f64>, store: &ParamStore<f64>, x: Var<'t, f64>) -> Result<Var<'t, f64>> {
        self(tape, store, x)
    }
}

fn boxed<F>(f: F) -> Box<dyn Layer>
where
    F: for<'t> Fn(&'t Tape<f64>, &ParamStore<f64>, Var<'t, f64>) -> Result<Var<'t, f64>> + 'static,
{
    Box::new(f)
}

fn micro_clip(seed: u64, noise: f64) -> AudioClip {
    let mut r = rng(seed);
    let x = (0..72).map(|i| 0.5 * (i as f64 * 0.4).sin() + 0.2 * (i as f64 * 1.3).cos() + r.gen_range(-noise..=noise)).collect();
    AudioClip::new(x, 16_000).expect("valid clip")
}

/// Zero phase heads reproduce the noisy phase exactly, which puts bins whose
/// clean and noisy phases coincide (DC, Nyquist) on the anti-wrap kink.
/// Small random heads move the check to a differentiable point.
pub fn perturb_phase_heads<R: Rng + ?Sized>(gen: &Generator, store: &mut ParamStore<f64>, r: &mut R) {
    for id in gen.phase_head_params() {
        store.get_mut(id).tensor.data_mut().iter_mut().for_each(|w| *w = r.gen_range(-0.2..0.2));
    }
}

fn micro_models(seed: u64) -> Result<(Generator, ParamStore<f64>, Discriminator, ParamStore<f64>)> {
    let mut r = rng(seed);
    let mut gs = ParamStore::new();
    let gen = Generator::new(GeneratorConfig::micro(), &mut gs, &mut r)?;
    perturb_phase_heads(&gen, &mut gs, &mut r);
    let mut ds = ParamStore::new();
    let disc = Discriminator::new(DiscriminatorConfig::micro(), &mut ds, &mut r)?;
    Ok((gen, gs, disc, ds))
}

const GENERATOR: &[(&str, Check)] = &[
    ("multi_head_attention", || {
        params_check(
            100,
            |reg| {
                let m = MultiHeadAttention::new(reg, "a", 4, 2)?;
                Ok(boxed(move |t, s, x| m.forward(t, s, x)))
            },
            &[2, 3, 4],
        )
    }),
    ("conv_module", || {
        params_check(
            110,
            |reg| {
                let m = ConvModule::new(reg, "c", 4, 3)?;
                Ok(boxed(move |t, s, x| m.forward(t, s, x)))
            },
            &[2, 5, 4],
        )
    }),
    ("conformer_block", || {
        params_check(
            120,
            |reg| {
                let m = ConformerBlock::new(reg, "b", 4, 2, 3, true)?;
                Ok(boxed(move |t, s, x| m.forward(t, s, x)))
            },
            &[1, 5, 4],
        )
    }),
    ("dense_encoder", || {
        params_check(
            130,
            |reg| {
                let m = DenseEncoder::new(reg, "e", 2, (3, 3), true)?;
                Ok(boxed(move |t, s, x| m.forward(t, s, x)))
            },
            &[1, 2, 6, 7],
        )
    }),
    ("mask_decoder", || {
        params_check(
            140,
            |reg| {
                let m = MaskDecoder::new(reg, "m", 2, (3, 3), 7, 1.2, true)?;
                Ok(boxed(move |t, s, x| m.forward(t, s, x)))
            },
            &[1, 2, 4, 4],
        )
    }),
    ("phase_decoder", || {
        params_check(
            150,
            |reg| {
                let m = PhaseDecoder::new(reg, "p", 2, (3, 3), 7, true)?;
                Ok(boxed(move |t, s, x| {
                    let (re, im) = m.components(t, s, x)?;
                    // keep away from the atan2 branch point
                    im.atan2(re.add_scalar(3.0))
                }))
            },
            &[1, 2, 4, 4],
        )
    }),
    ("micro_generator_waveform", || {
        let (gen, mut gs, ..) = micro_models(160)?;
        randomize(&mut gs, 161);
        let input = gen.analyze::<f64>(&micro_clip(162, 0.2))?;
        grad_check_params(&gs, |t, s| project(t, gen.forward(t, s, &input)?.waveform, 163), STEP)
    }),
];

const DISCRIMINATOR: &[(&str, Check)] = &[
    ("spectral_normalize", || {
        let mut state = SpectralState::new(3, 4, &mut rng(200));
        state.iterate(&normal(&[3, 4], 201), 5);
        grad_check(
            |t, v| {
                let (w, _) = spectral_normalize(v[0], &mut state.clone(), 0)?;
                project(t, w, 202)
            },
            &[normal(&[3, 4], 201)],
            STEP,
        )
    }),
    ("micro_discriminator", || {
        let (.., disc, mut ds) = micro_models(210)?;
        randomize(&mut ds, 211);
        let (a, b) = (normal(&[1, 1, 10, 17], 212), normal(&[1, 1, 10, 17], 213));
        let params = grad_check_params(&ds, |t, s| disc.forward(t, s, t.constant(a.clone()), t.constant(b.clone()), &mut rng(0)), STEP)?;
        let inputs = grad_check(|t, v| disc.forward(t, &ds, v[0], v[1], &mut rng(0)), &[a.clone(), b.clone()], STEP)?;
        Ok(worse(params, inputs))
    }),
    ("discriminator_loss", || {
        grad_check(
            |_, v| discriminator_loss(v[0], v[1], 0.4),
            &[banded(&[3, 1], 0.1, 0.9, false, 220), banded(&[3, 1], 0.1, 0.9, false, 221)],
            STEP,
        )
    }),
];

const LOSSES: &[(&str, Check)] = &[
    ("time", || {
        grad_check(|_, v| time_loss(v[0], v[1]), &[banded(&[9], 0.2, 1.0, false, 300), banded(&[9], -1.0, -0.2, false, 301)], STEP)
    }),
    ("magnitude", || grad_check(|_, v| magnitude_loss(v[0], v[1]), &[normal(&[1, 1, 3, 5], 302), normal(&[1, 1, 3, 5], 303)], STEP)),
    ("complex", || {
        grad_check(
            |_, v| complex_loss(v[0], v[1], v[2], v[3]),
            &[normal(&[3, 5], 304), normal(&[3, 5], 305), normal(&[3, 5], 306), normal(&[3, 5], 307)],
            STEP,
        )
    }),
    ("anti_wrap", || {
        grad_check(
            |t, v| project(t, anti_wrap(v[0]), 308),
            &[Tensor::new(&[6], vec![0.3, -1.1, 2.0, 4.0, -5.0, 7.5]).expect("shape")],
            STEP,
        )
    }),
    ("phase", || {
        // offsets ramp along both axes so every wrapped difference stays away from 0 and π
        let clean = normal(&[1, 1, 4, 5], 309);
        let jitter = banded(&[1, 1, 4, 5], -0.05, 0.05, false, 310);
        let enh: Vec<f64> =
            (0..20).map(|i| clean.data()[i] + 0.2 + 0.3 * (i % 5) as f64 + 0.4 * (i / 5) as f64 + jitter.data()[i]).collect();
        let enh = Tensor::new(&[1, 1, 4, 5], enh).expect("shape");
        grad_check(|_, v| Ok(phase_loss(v[0], v[1])?.total), &[clean.clone(), enh.clone()], STEP)
    }),
    ("metric", || grad_check(|_, v| Ok(metric_loss(v[0])), &[banded(&[3, 1], 0.1, 0.9, false, 311)], STEP)),
    ("end_to_end_generator", || {
        let (gen, gs, disc, ds) = micro_models(320)?;
        let clean = micro_clip(321, 0.0);
        let target = gen.analyze::<f64>(&clean)?;
        let input = gen.analyze::<f64>(&micro_clip(321, 0.2))?;
        let wave = Tensor::from_f64(&[clean.len()], clean.samples())?;
        let w = LossWeights::default();
        grad_check_params(
            &gs,
            |t, s| {
                let out = gen.forward(t, s, &input)?;
                let scores = disc.forward(t, &ds, t.constant(target.mag_c.clone()), out.mag_c, &mut rng(0))?;
                GeneratorTerms::compute(&out, &target, &wave, scores)?.total(&w)
            },
            STEP,
        )
    }),
];

fn cases(module: Module) -> &'static [(&'static str, Check)] {
    match module {
        Module::Numcore => NUMCORE,
        Module::Generator => GENERATOR,
        Module::Discriminator => DISCRIMINATOR,
        Module::Losses => LOSSES,
    }
}

fn tolerance(name: &str) -> f64 {
    if name == "end_to_end_generator" || name == "micro_generator_waveform" {
        END_TO_END_TOLERANCE
    } else {
        OP_TOLERANCE
    }
}

/// Runs every check of the given modules, calling `on_case` as each finishes.
pub fn run(modules: &[Module], mut on_case: impl FnMut(&CheckOutcome)) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    for &module in modules {
        for &(name, check) in cases(module) {
            let outcome = CheckOutcome { module, name, tolerance: tolerance(name), result: check() };
            on_case(&outcome);
            out.push(outcome);
        }
    }
    out
}
