use effifusion::dsp::{AudioClip, StftConfig};
use effifusion::generator::{
    param_count, ConformerBlock, DenseEncoder, DilatedDenseBlock, Generator, GeneratorConfig, MultiHeadAttention, TsConformer,
};
use effifusion::layers::Registrar;
use effifusion::numcore::{grad_check, grad_check_params, Init, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn zero_params(store: &mut ParamStore<f64>) {
    for (_, p) in store.iter_mut() {
        p.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}

#[test]
fn encoder_halves_frequency() {
    let mut store = ParamStore::<f32>::new();
    let mut r = rng(1);
    let enc = DenseEncoder::new(&mut Registrar::new(&mut store, &mut r), "e", 16, (3, 3), true).unwrap();
    let tape = Tape::no_grad(false);
    let x = tape.constant(Init::normal(&[1, 2, 12, 201], 1.0, &mut r));
    assert_eq!(enc.forward(&tape, &store, x).unwrap().shape(), vec![1, 16, 12, 101]);
}

#[test]
fn dense_block_receptive_field_and_shape() {
    assert_eq!(DilatedDenseBlock::receptive_field(3), 31);
    let mut store = ParamStore::<f64>::new();
    let mut r = rng(2);
    let block = DilatedDenseBlock::new(&mut Registrar::new(&mut store, &mut r), "d", 4, (3, 3), true).unwrap();
    let tape = Tape::no_grad(false);
    let x = tape.constant(Init::normal(&[1, 4, 20, 9], 1.0, &mut r));
    assert_eq!(block.forward(&tape, &store, x).unwrap().shape(), vec![1, 4, 20, 9]);
}

fn identity_attention(dim: usize) -> (ParamStore<f64>, MultiHeadAttention) {
    let mut store = ParamStore::<f64>::new();
    let mut r = rng(4);
    let mha = MultiHeadAttention::new(&mut Registrar::new(&mut store, &mut r), "a", dim, 1).unwrap();
    for lin in [&mha.query, &mha.key, &mha.value, &mha.output] {
        let w = store.get_mut(lin.weight);
        let d = w.tensor.data_mut();
        d.iter_mut().for_each(|v| *v = 0.0);
        (0..dim).for_each(|i| d[i * dim + i] = 1.0);
        store.get_mut(lin.bias.unwrap()).tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    (store, mha)
}

#[test]
fn attention_identical_rows_average_values() {
    let (mut store, mha) = identity_attention(3);
    // zero the key projection: every score equal
    let k = mha.key.weight;
    store.get_mut(k).tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
    let x = Tensor::new(&[1, 4, 3], (0..12).map(|v| v as f64).collect()).unwrap();
    let tape = Tape::no_grad(false);
    let (y, w) = mha.forward_with_weights(&tape, &store, tape.constant(x.clone())).unwrap();
    for &p in w.value().data() {
        assert!((p - 0.25).abs() < 1e-15);
    }
    let mean = [4.5, 5.5, 6.5];
    for (i, v) in y.value().data().iter().enumerate() {
        assert!((v - mean[i % 3]).abs() < 1e-12);
    }
}

#[test]
fn attention_single_token_and_row_sums() {
    let (store, mha) = identity_attention(4);
    let tape = Tape::no_grad(false);
    let x = Tensor::new(&[1, 1, 4], vec![0.3, -1.0, 2.0, 0.5]).unwrap();
    let y = mha.forward(&tape, &store, tape.constant(x.clone())).unwrap();
    assert_eq!(y.value().data(), x.data());

    let tape = Tape::no_grad(false);
    let mut store = ParamStore::<f64>::new();
    let mut r = rng(5);
    let mha = MultiHeadAttention::new(&mut Registrar::new(&mut store, &mut r), "a", 8, 4).unwrap();
    let x = Init::normal(&[2, 6, 8], 1.0, &mut r);
    let (_, w) = mha.forward_with_weights(&tape, &store, tape.constant(x)).unwrap();
    assert_eq!(w.shape(), vec![2, 4, 6, 6]);
    for row in w.value().data().chunks(6) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let mut store = ParamStore::<f64>::new();
    assert!(MultiHeadAttention::new(&mut Registrar::new(&mut store, &mut r), "a", 6, 4).is_err());
}

#[test]
fn conformer_with_zero_parameters_is_identity() {
    let mut store = ParamStore::<f64>::new();
    let mut r = rng(6);
    let block = ConformerBlock::new(&mut Registrar::new(&mut store, &mut r), "c", 8, 2, 31, true).unwrap();
    zero_params(&mut store);
    let tape = Tape::no_grad(false);
    for len in [1, 5, 40] {
        let x = Init::normal(&[3, len, 8], 1.0, &mut r);
        let y = block.forward(&tape, &store, tape.constant(x.clone())).unwrap();
        assert_eq!(y.value().data(), x.data());
    }
}

#[test]
fn conformer_grad_check() {
    let mut store = ParamStore::<f64>::new();
    let mut r = rng(7);
    let block = ConformerBlock::new(&mut Registrar::new(&mut store, &mut r), "c", 8, 2, 3, true).unwrap();
    let x = Init::normal(&[1, 5, 8], 1.0, &mut r);
    let proj = Init::normal(&[1, 5, 8], 1.0, &mut r);
    let report = grad_check_params(
        &store,
        |tape, s| Ok(block.forward(tape, s, tape.constant(x.clone()))?.mul(tape.constant(proj.clone()))?.sum_all()),
        1e-6,
    )
    .unwrap();
    assert!(report.max_rel_err < 1e-4, "{report:?}");
    let report =
        grad_check(|tape, v| Ok(block.forward(tape, &store, v[0])?.mul(tape.constant(proj.clone()))?.sum_all()), &[x], 1e-6).unwrap();
    assert!(report.max_rel_err < 1e-4, "{report:?}");
}

#[test]
fn encoder_grad_check_micro() {
    let mut store = ParamStore::<f64>::new();
    let mut r = rng(8);
    let enc = DenseEncoder::new(&mut Registrar::new(&mut store, &mut r), "e", 3, (3, 3), true).unwrap();
    let x = Init::normal(&[1, 2, 8, 9], 1.0, &mut r);
    let proj = Init::normal(&[1, 3, 8, 5], 1.0, &mut r);
    let report = grad_check_params(
        &store,
        |tape, s| Ok(enc.forward(tape, s, tape.constant(x.clone()))?.mul(tape.constant(proj.clone()))?.sum_all()),
        1e-6,
    )
    .unwrap();
    assert!(report.max_rel_err < 1e-4, "{report:?}");
}

#[test]
fn ts_stack_is_frame_permutation_equivariant() {
    let mut store = ParamStore::<f64>::new();
    let mut r = rng(9);
    let mut reg = Registrar::new(&mut store, &mut r);
    let ts = TsConformer {
        time: ConformerBlock::new(&mut reg, "t", 4, 2, 1, true).unwrap(),
        freq: ConformerBlock::new(&mut reg, "f", 4, 2, 3, true).unwrap(),
    };
    let (t, f) = (6, 5);
    let x = Init::normal(&[1, 4, t, f], 1.0, &mut r);
    let swap = |v: &Tensor<f64>| {
        let mut out = v.clone();
        for c in 0..4 {
            for k in 0..f {
                let (a, b) = ((c * t + 1) * f + k, (c * t + 4) * f + k);
                out.data_mut().swap(a, b);
            }
        }
        out
    };
    let tape = Tape::no_grad(false);
    let y = ts.forward(&tape, &store, tape.constant(x.clone())).unwrap().value();
    let ys = ts.forward(&tape, &store, tape.constant(swap(&x))).unwrap().value();
    assert_eq!(y.shape(), &[1, 4, t, f]);
    for (a, b) in swap(&y).data().iter().zip(ys.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn short_clip(r: &mut ChaCha8Rng, len: usize) -> AudioClip {
    AudioClip::new((0..len).map(|_| r.gen_range(-0.5..0.5)).collect(), 16_000).unwrap()
}

#[test]
fn generator_preserves_length_and_bounds() {
    let mut store = ParamStore::<f32>::new();
    let mut r = rng(10);
    let gen = Generator::new(GeneratorConfig::desk(), &mut store, &mut r).unwrap();
    for i in 0..100 {
        let len = 1600 + 37 * i;
        let clip = short_clip(&mut r, len);
        let out = gen.enhance(&store, &clip).unwrap();
        assert_eq!(out.clip.len(), len);
        assert!(out.clip.samples().iter().all(|x| x.is_finite()));
        assert!(out.mask.iter().all(|&m| m > 0.0 && m < 1.2));
        // f32 atan2 can land on ±π rounded to f32, a hair beyond π in f64
        let bound = std::f32::consts::PI as f64;
        assert!(out.phase.iter().all(|&p| p.abs() <= bound));
        assert_eq!(out.mask.len(), out.frames * 201);
    }
}

#[test]
fn enhancement_is_deterministic() {
    let mut store = ParamStore::<f32>::new();
    let mut r = rng(11);
    let gen = Generator::new(GeneratorConfig::desk(), &mut store, &mut r).unwrap();
    let clip = short_clip(&mut r, 3000);
    let a = gen.enhance(&store, &clip).unwrap();
    let b = gen.enhance(&store, &clip).unwrap();
    assert_eq!(a.clip.samples(), b.clip.samples());
}

fn count(cfg: GeneratorConfig) -> usize {
    let mut store = ParamStore::<f32>::new();
    Generator::new(cfg, &mut store, &mut rng(0)).unwrap();
    param_count(&store, "", false)
}

#[test]
fn ablation_flags_and_param_counts() {
    assert_eq!(param_count(&ParamStore::<f32>::new(), "", false), 0);
    let base = count(GeneratorConfig::desk());
    assert!(count(GeneratorConfig { use_depthwise: false, ..GeneratorConfig::desk() }) > base);
    assert_eq!(count(GeneratorConfig { use_residual_attention: false, ..GeneratorConfig::desk() }), base);
    let wide = count(GeneratorConfig { base_channels: 32, ..GeneratorConfig::desk() });
    assert!(wide > 2 * base);
}

#[test]
fn paper_like_depthwise_ratio() {
    let ds = count(GeneratorConfig::paper_like());
    let std = count(GeneratorConfig { use_depthwise: false, ..GeneratorConfig::paper_like() });
    let ratio = ds as f64 / std as f64;
    assert!(ratio <= 0.60, "{ds} / {std} = {ratio}");
}

#[test]
fn config_validation() {
    let bad = [
        GeneratorConfig { heads: 3, ..GeneratorConfig::desk() },
        GeneratorConfig { dilations: vec![1, 2, 4], ..GeneratorConfig::desk() },
        GeneratorConfig { conformer_kernel: 4, ..GeneratorConfig::desk() },
        GeneratorConfig { stft: StftConfig { n_fft: 2, hop: 1, ..StftConfig::default() }, ..GeneratorConfig::desk() },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
    GeneratorConfig::micro().validate().unwrap();
    GeneratorConfig::paper_like().validate().unwrap();
}

#[test]
fn micro_generator_gradients() {
    let mut store = ParamStore::<f64>::new();
    let mut r = rng(12);
    let gen = Generator::new(GeneratorConfig::micro(), &mut store, &mut r).unwrap();
    effifusion::gradsuite::perturb_phase_heads(&gen, &mut store, &mut r);
    let clip = short_clip(&mut r, 72);
    let input = gen.analyze::<f64>(&clip).unwrap();
    assert_eq!((input.frames, input.bins), (10, 17));
    let proj = Init::normal(&[72], 1.0, &mut r);
    let report =
        grad_check_params(&store, |tape, s| Ok(gen.forward(tape, s, &input)?.waveform.mul(tape.constant(proj.clone()))?.sum_all()), 1e-6)
            .unwrap();
    assert!(report.max_rel_err < 1e-3, "{report:?}");
}
