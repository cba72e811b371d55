use effifusion::generator::{Generator, GeneratorConfig};
use effifusion::numcore::optim::{AdamW, AdamWConfig};
use effifusion::numcore::{Init, ParamGrads, ParamKind, ParamStore, Tape, Tensor};
use effifusion::pruning::{apply_masks, l1_unstructured_prune, sparsity_report, PruneScope};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn store_with(weights: &[(&str, Vec<f64>)]) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    for (name, w) in weights {
        s.insert(*name, ParamKind::ConvWeight, Tensor::new(&[w.len()], w.clone()).unwrap()).unwrap();
    }
    s
}

fn zeroed_values(store: &ParamStore<f64>, mask: &effifusion::pruning::PruneMask) -> Vec<f64> {
    let mut out = Vec::new();
    for (_, p) in store.iter() {
        for (i, keep) in mask.masks[&p.name].iter().enumerate() {
            if !keep {
                out.push(p.tensor.data()[i]);
            }
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

#[test]
fn smallest_magnitudes_are_pruned() {
    let s = store_with(&[("w", vec![0.1, -0.5, 0.2, 0.9, -0.05, 0.3, 0.7, -0.4, 0.6, 0.05])]);
    let mask = l1_unstructured_prune(&[&s], &PruneScope::all_convs(), 0.3).unwrap();
    assert_eq!(zeroed_values(&s, &mask), vec![-0.05, 0.05, 0.1]);
    let none = l1_unstructured_prune(&[&s], &PruneScope::all_convs(), 0.0).unwrap();
    assert_eq!(none.zeros(), 0);
}

#[test]
fn exact_floor_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut s = ParamStore::<f64>::new();
    s.insert("a", ParamKind::ConvWeight, Init::normal(&[600], 1.0, &mut rng)).unwrap();
    s.insert("b", ParamKind::ConvWeight, Init::normal(&[400], 1.0, &mut rng)).unwrap();
    s.insert("bias", ParamKind::Bias, Init::normal(&[50], 1.0, &mut rng)).unwrap();
    let mask = l1_unstructured_prune(&[&s], &PruneScope::all_convs(), 0.3).unwrap();
    assert_eq!(mask.zeros(), 300);
    assert_eq!(mask.total(), 1000);
    assert!(!mask.masks.contains_key("bias"));
}

#[test]
fn ties_break_by_name_then_index() {
    let s = store_with(&[("b", vec![1.0, 1.0, 2.0]), ("a", vec![2.0, 1.0, 1.0])]);
    let mask = l1_unstructured_prune(&[&s], &PruneScope::all_convs(), 0.5).unwrap();
    // four equal magnitudes, three pruned: a[1], a[2], b[0]
    assert_eq!(mask.masks["a"], vec![true, false, false]);
    assert_eq!(mask.masks["b"], vec![false, true, true]);
}

#[test]
fn errors() {
    let s = store_with(&[("w", vec![1.0])]);
    assert!(l1_unstructured_prune(&[&s], &PruneScope::with_prefix("disc"), 0.3).is_err());
    assert!(l1_unstructured_prune(&[&s], &PruneScope::all_convs(), 1.0).is_err());
    let mut other = store_with(&[("w", vec![1.0, 2.0])]);
    let mask = l1_unstructured_prune(&[&s], &PruneScope::all_convs(), 0.0).unwrap();
    assert!(apply_masks(&mut other, &mask).is_err());
}

proptest! {
    #[test]
    fn prune_is_monotone_and_deterministic(seed in 0u64..500, a1 in 0.0f64..0.9, extra in 0.0f64..0.09) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::<f64>::new();
        s.insert("x", ParamKind::ConvWeight, Init::normal(&[37], 1.0, &mut rng)).unwrap();
        s.insert("y", ParamKind::ConvWeight, Init::normal(&[2, 11], 1.0, &mut rng)).unwrap();
        let scope = PruneScope::all_convs();
        let m1 = l1_unstructured_prune(&[&s], &scope, a1).unwrap();
        let m2 = l1_unstructured_prune(&[&s], &scope, a1 + extra).unwrap();
        prop_assert_eq!(&m1, &l1_unstructured_prune(&[&s], &scope, a1).unwrap());
        for (name, k1) in &m1.masks {
            for (a, b) in k1.iter().zip(&m2.masks[name]) {
                prop_assert!(*a || !*b, "zero in small mask kept in larger one");
            }
        }
    }
}

#[test]
fn masks_hold_through_forward_and_optimizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::<f64>::new();
    let w = store.insert("w", ParamKind::ConvWeight, Init::normal(&[4, 3], 1.0, &mut rng)).unwrap();
    let x = Init::normal(&[5, 3], 1.0, &mut rng);
    let forward = |s: &ParamStore<f64>| {
        let tape = Tape::new();
        let y = tape.constant(x.clone()).linear(tape.param(s, w), None).unwrap().square().sum_all();
        let v = y.value().data().to_vec();
        (v, tape.backward(y).unwrap().into_param_grads(s))
    };
    let before = forward(&store).0;
    let ones = l1_unstructured_prune(&[&store], &PruneScope::all_convs(), 0.0).unwrap();
    apply_masks(&mut store, &ones).unwrap();
    assert_eq!(forward(&store).0, before);

    let mask = l1_unstructured_prune(&[&store], &PruneScope::all_convs(), 0.5).unwrap();
    apply_masks(&mut store, &mask).unwrap();
    let pruned: Vec<usize> = mask.masks["w"].iter().enumerate().filter(|(_, k)| !**k).map(|(i, _)| i).collect();
    assert_eq!(pruned.len(), 6);
    let mut opt = AdamW::new(AdamWConfig::with_lr(1e-2), &store);
    for _ in 0..100 {
        let (_, grads): (_, ParamGrads<f64>) = forward(&store);
        for &i in &pruned {
            assert_eq!(grads.get(w)[i], 0.0);
        }
        opt.step(&mut store, &grads);
    }
    for &i in &pruned {
        assert_eq!(store.get(w).tensor.data()[i], 0.0);
    }
}

#[test]
fn sparsity_report_over_generator() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f32>::new();
    Generator::new(GeneratorConfig::desk(), &mut store, &mut rng).unwrap();
    let scope = PruneScope::all_convs();
    let fresh = sparsity_report(&[&store], &scope);
    assert_eq!(fresh.global, 0.0);
    assert_eq!(fresh.raw, fresh.effective);
    let mask = l1_unstructured_prune(&[&store], &scope, 0.3).unwrap();
    apply_masks(&mut store, &mask).unwrap();
    let after = sparsity_report(&[&store], &scope);
    assert!((after.global - 0.3).abs() <= 0.005, "{}", after.global);
    let in_scope: usize = after.params.iter().map(|p| p.total).sum();
    let zeros: usize = after.params.iter().map(|p| p.zeros).sum();
    assert_eq!(after.raw - after.effective, zeros);
    assert!(in_scope < after.raw);
    let text = after.to_text();
    let line = text.lines().find(|l| l.starts_with("global_sparsity = ")).unwrap();
    let g: f64 = line["global_sparsity = ".len()..].parse().unwrap();
    assert!((g - after.global).abs() < 1e-6);
    assert!(text.lines().any(|l| l.starts_with("gen.encoder.initial.dw.weight = ")));
    // finite forward after pruning
    let gen = Generator::new(GeneratorConfig::desk(), &mut ParamStore::<f32>::new(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let clip = effifusion::dsp::AudioClip::new((0..4000).map(|i| (i as f64 * 0.03).sin() * 0.3).collect(), 16_000).unwrap();
    let out = gen.enhance(&store, &clip).unwrap();
    assert!(out.clip.samples().iter().all(|v| v.is_finite()));
}
