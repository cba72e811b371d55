use std::f64::consts::PI;

use effifusion::discriminator::{Discriminator, DiscriminatorConfig};
use effifusion::dsp::AudioClip;
use effifusion::generator::{Generator, GeneratorConfig};
use effifusion::losses::{
    anti_wrap, anti_wrap_value, complex_loss, discriminator_loss, generator_loss, magnitude_loss, metric_loss, metric_proxy, phase_loss,
    time_loss, DiscTarget, GeneratorTerms, LossReport, LossWeights,
};
use effifusion::numcore::{grad_check, grad_check_params, Init, ParamStore, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape, v).unwrap()
}

#[test]
fn time_loss_cases() {
    let tape = Tape::<f64>::no_grad(false);
    let a = tape.constant(t(&[2], vec![1.0, 1.0]));
    let z = tape.constant(t(&[2], vec![0.0, 0.0]));
    assert_eq!(time_loss(a, a).unwrap().scalar(), 0.0);
    assert_eq!(time_loss(a, z).unwrap().scalar(), 1.0);
    let x = t(&[5], vec![0.1, -0.4, 0.3, 0.9, -1.2]);
    let y = t(&[5], vec![0.5, 0.2, -0.3, 0.1, 0.0]);
    let base = time_loss(tape.constant(x.clone()), tape.constant(y.clone())).unwrap().scalar();
    let scaled = time_loss(tape.constant(x.map(|v| -2.5 * v)), tape.constant(y.map(|v| -2.5 * v))).unwrap().scalar();
    assert!((scaled - 2.5 * base).abs() < 1e-12);
    assert!(time_loss(a, tape.constant(t(&[3], vec![0.0; 3]))).is_err());
}

#[test]
fn magnitude_and_complex_cases() {
    let tape = Tape::<f64>::no_grad(false);
    let one = tape.constant(Tensor::full(&[3, 4], 1.0));
    let zero = tape.constant(Tensor::zeros(&[3, 4]));
    assert_eq!(magnitude_loss(one, one).unwrap().scalar(), 0.0);
    assert_eq!(magnitude_loss(one, zero).unwrap().scalar(), 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = Init::normal(&[4, 5], 1.0, &mut rng);
    let b = Init::normal(&[4, 5], 1.0, &mut rng);
    let brute = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 20.0;
    let got = magnitude_loss(tape.constant(a.clone()), tape.constant(b.clone())).unwrap().scalar();
    assert!((got - brute).abs() < 1e-14);
    assert!(magnitude_loss(one, tape.constant(Tensor::zeros(&[4, 3]))).is_err());

    // a π phase shift at constant magnitude m costs 4m²
    let (m, n) = (0.7, 12);
    let p: Vec<f64> = (0..n).map(|i| i as f64 * 0.53 - 3.0).collect();
    let part = |f: fn(f64) -> f64, shift: f64| tape.constant(t(&[n], p.iter().map(|&x| m * f(x + shift)).collect()));
    let loss = complex_loss(part(f64::cos, 0.0), part(f64::sin, 0.0), part(f64::cos, PI), part(f64::sin, PI)).unwrap();
    assert!((loss.scalar() - 4.0 * m * m).abs() < 1e-12);
    let same = complex_loss(part(f64::cos, 0.0), part(f64::sin, 0.0), part(f64::cos, 0.0), part(f64::sin, 0.0)).unwrap();
    assert_eq!(same.scalar(), 0.0);
}

#[test]
fn anti_wrap_values() {
    assert_eq!(anti_wrap_value(0.0), 0.0);
    assert!(anti_wrap_value(2.0 * PI).abs() < 1e-15);
    assert!((anti_wrap_value(3.0 * PI) - PI).abs() < 1e-12);
    assert!((anti_wrap_value(-3.0 * PI) - PI).abs() < 1e-12);
    // the tie rounds away from zero: |π − 2π| = π, same as the naive value
    assert!((anti_wrap_value(PI) - PI).abs() < 1e-15);
}

proptest! {
    #[test]
    fn anti_wrap_is_periodic(x in -20.0f64..20.0, k in -5i32..5) {
        let a = anti_wrap_value(x);
        let b = anti_wrap_value(x + 2.0 * PI * k as f64);
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!((0.0..=PI + 1e-12).contains(&a));
    }

    #[test]
    fn losses_non_negative(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tape = Tape::<f64>::no_grad(false);
        let a = tape.constant(Init::normal(&[3, 4], 2.0, &mut rng));
        let b = tape.constant(Init::normal(&[3, 4], 2.0, &mut rng));
        prop_assert!(time_loss(a, b).unwrap().scalar() >= 0.0);
        prop_assert!(magnitude_loss(a, b).unwrap().scalar() >= 0.0);
        prop_assert!(complex_loss(a, b, b, a).unwrap().scalar() >= 0.0);
        prop_assert!(phase_loss(a, b).unwrap().total.scalar() >= 0.0);
    }
}

#[test]
fn phase_loss_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tape = Tape::<f64>::no_grad(false);
    let p = Init::normal(&[1, 1, 6, 9], 1.5, &mut rng);
    let base = tape.constant(p.clone());
    let terms = |q: Tensor<f64>| {
        let r = phase_loss(base, tape.constant(q)).unwrap();
        (r.ip.scalar(), r.gd.scalar(), r.iaf.scalar(), r.total.scalar())
    };
    assert_eq!(terms(p.clone()), (0.0, 0.0, 0.0, 0.0));
    let (ip, gd, iaf, total) = terms(p.map(|v| v + 2.0 * PI));
    for v in [ip, gd, iaf, total] {
        assert!(v < 1e-12);
    }
    let (ip, gd, iaf, total) = terms(p.map(|v| v + PI));
    assert!((ip - PI).abs() < 1e-12 && gd < 1e-12 && iaf < 1e-12);
    assert!((total - (ip + gd + iaf)).abs() < 1e-15);
    assert!(phase_loss(tape.constant(Tensor::zeros(&[1, 4])), tape.constant(Tensor::zeros(&[1, 4]))).is_err());
}

#[test]
fn phase_loss_exact_under_two_pi_shift() {
    // shifts by exact multiples of 2π that are representable keep the loss bitwise
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tape = Tape::<f64>::no_grad(false);
    let a = Init::normal(&[5, 7], 1.0, &mut rng);
    let b = Init::normal(&[5, 7], 1.0, &mut rng);
    let l0 = phase_loss(tape.constant(a.clone()), tape.constant(b.clone())).unwrap().total.scalar();
    let l1 = phase_loss(tape.constant(a.map(|v| v + 2.0 * PI)), tape.constant(b.clone())).unwrap().total.scalar();
    assert!((l0 - l1).abs() < 1e-12, "{l0} vs {l1}");
}

#[test]
fn metric_and_discriminator_losses() {
    let tape = Tape::<f64>::no_grad(false);
    let s = |v: Vec<f64>| tape.constant(t(&[v.len()], v));
    assert_eq!(metric_loss(s(vec![1.0, 1.0])).scalar(), 0.0);
    assert_eq!(metric_loss(s(vec![0.0, 0.0])).scalar(), 1.0);
    assert!((metric_loss(s(vec![0.5, 1.0])).scalar() - 0.125).abs() < 1e-15);
    assert_eq!(discriminator_loss(s(vec![1.0]), s(vec![0.0]), 0.0).unwrap().scalar(), 0.0);
    assert!((discriminator_loss(s(vec![0.5]), s(vec![0.5]), 0.0).unwrap().scalar() - 0.5).abs() < 1e-15);
    assert!(discriminator_loss(s(vec![0.5]), s(vec![0.5]), 1.5).is_err());
    let clean: Vec<f64> = (0..2048).map(|i| (i as f64 * 0.05).sin()).collect();
    assert_eq!(metric_proxy(&clean, &clean).unwrap(), 1.0);
    assert_eq!(DiscTarget::MetricProxy.label(&clean, &clean).unwrap(), 1.0);
    assert_eq!(DiscTarget::Adversarial.label(&clean, &clean).unwrap(), 0.0);
}

fn report(v: [f64; 6]) -> LossReport {
    let [time, mag, com, ip, metric, gd] = v;
    LossReport { l_time: time, l_mag: mag, l_com: com, l_ip: ip, l_gd: gd, l_iaf: 0.0, l_pha: ip + gd, l_metric: metric, l_generator: 0.0 }
}

#[test]
fn weighted_sum_cases() {
    let w = LossWeights::default();
    let ones = LossReport { l_pha: 1.0, l_ip: 1.0, l_gd: 0.0, ..report([1.0, 1.0, 1.0, 1.0, 1.0, 0.0]) };
    assert!((generator_loss(&ones, &w) - 1.55).abs() < 1e-12);
    assert_eq!(generator_loss(&LossReport::default(), &w), 0.0);
    let base = report([0.3, 0.4, 0.2, 0.5, 0.6, 0.1]);
    let doubled = LossReport { l_mag: 0.8, ..base };
    assert!((generator_loss(&doubled, &w) - generator_loss(&base, &w) - 0.9 * 0.4).abs() < 1e-12);
    assert!(LossWeights { mag: -1.0, ..w }.validate().is_err());
}

fn micro_setup(seed: u64) -> (ParamStore<f64>, Generator, ParamStore<f64>, Discriminator, AudioClip, AudioClip) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gs = ParamStore::new();
    let gen = Generator::new(GeneratorConfig::micro(), &mut gs, &mut rng).unwrap();
    effifusion::gradsuite::perturb_phase_heads(&gen, &mut gs, &mut rng);
    let mut ds = ParamStore::new();
    let disc = Discriminator::new(DiscriminatorConfig::micro(), &mut ds, &mut rng).unwrap();
    let clean: Vec<f64> = (0..72).map(|i| 0.5 * (i as f64 * 0.4).sin() + 0.2 * (i as f64 * 1.3).cos()).collect();
    let noisy: Vec<f64> = clean.iter().map(|v| v + rng.gen_range(-0.2..0.2)).collect();
    (gs, gen, ds, disc, AudioClip::new(clean, 16_000).unwrap(), AudioClip::new(noisy, 16_000).unwrap())
}

#[test]
fn report_matches_weighted_sum_and_var_total() {
    let (gs, gen, ds, disc, clean, noisy) = micro_setup(4);
    let w = LossWeights::default();
    let tape = Tape::<f64>::no_grad(false);
    let target = gen.analyze::<f64>(&clean).unwrap();
    let input = gen.analyze::<f64>(&noisy).unwrap();
    let out = gen.forward(&tape, &gs, &input).unwrap();
    let scores = disc.forward(&tape, &ds, tape.constant(target.mag_c.clone()), out.mag_c, &mut rand::thread_rng()).unwrap();
    let wave = Tensor::from_f64(&[72], clean.samples()).unwrap();
    let terms = GeneratorTerms::compute(&out, &target, &wave, scores).unwrap();
    let r = terms.report(&w);
    let independent = 0.05 * r.l_metric + 0.9 * r.l_mag + 0.3 * (r.l_ip + r.l_gd + r.l_iaf) + 0.1 * r.l_com + 0.2 * r.l_time;
    assert!((r.l_generator - independent).abs() < 1e-12);
    assert!((terms.total(&w).unwrap().scalar() - independent).abs() < 1e-12);
    assert!(r.is_finite());
}

#[test]
fn perfect_prediction_terms_vanish() {
    let (_, gen, _, _, clean, _) = micro_setup(5);
    let tape = Tape::<f64>::no_grad(false);
    let s = gen.analyze::<f64>(&clean).unwrap();
    let (re, im) = s.compressed_complex();
    let wave = tape.constant(Tensor::from_f64(&[72], clean.samples()).unwrap());
    assert_eq!(time_loss(wave, wave).unwrap().scalar(), 0.0);
    let m = tape.constant(s.mag_c.clone());
    assert_eq!(magnitude_loss(m, m).unwrap().scalar(), 0.0);
    let (re, im) = (tape.constant(re), tape.constant(im));
    assert_eq!(complex_loss(re, im, re, im).unwrap().scalar(), 0.0);
    let p = tape.constant(s.phase.clone());
    assert_eq!(phase_loss(p, p).unwrap().total.scalar(), 0.0);
}

#[test]
fn anti_wrap_gradient_away_from_kinks() {
    let x = t(&[6], vec![0.3, -1.1, 2.0, 4.0, -5.0, 7.5]);
    let report = grad_check(|_, v| Ok(anti_wrap(v[0]).sum_all()), &[x], 1e-6).unwrap();
    assert!(report.max_rel_err < 1e-6, "{report:?}");
}

#[test]
fn end_to_end_generator_loss_gradients() {
    let (gs, gen, ds, disc, clean, noisy) = micro_setup(6);
    let w = LossWeights::default();
    let target = gen.analyze::<f64>(&clean).unwrap();
    let input = gen.analyze::<f64>(&noisy).unwrap();
    let wave = Tensor::from_f64(&[72], clean.samples()).unwrap();
    let report = grad_check_params(
        &gs,
        |tape, s| {
            let out = gen.forward(tape, s, &input)?;
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let scores = disc.forward(tape, &ds, tape.constant(target.mag_c.clone()), out.mag_c, &mut r)?;
            GeneratorTerms::compute(&out, &target, &wave, scores)?.total(&w)
        },
        1e-6,
    )
    .unwrap();
    assert!(report.max_rel_err < 1e-3, "{report:?}");
}
