//! Model bundle, alternating GAN steps and the epoch loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discriminator::Discriminator;
use crate::dsp::AudioClip;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::generator::{Enhanced, Generator, SpectralInput};
use crate::losses::{discriminator_loss, GeneratorTerms, LossReport};
use crate::metrics::{evaluate_pair_set, EvalPair, EvalResult, SSNR_FRAME};
use crate::numcore::optim::AdamW;
use crate::numcore::{ParamGrads, ParamStore, Tape, Tensor};
use crate::pipeline::config::TrainConfig;
use crate::pipeline::data::NoisyPair;
use crate::pruning::{apply_masks, l1_unstructured_prune, sparsity_report, PruneMask, PruneScope, SparsityReport};

/// Generator and discriminator with their parameters (32-bit).
#[derive(Clone, Debug)]
pub struct Model {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub gen_params: ParamStore<f32>,
    pub disc_params: ParamStore<f32>,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(cfg: &TrainConfig, rng: &mut R) -> Result<Self> {
        let mut gen_params = ParamStore::new();
        let generator = Generator::new(cfg.generator.clone(), &mut gen_params, rng)?;
        let mut disc_params = ParamStore::new();
        let discriminator = Discriminator::new(cfg.discriminator.clone(), &mut disc_params, rng)?;
        Ok(Self { generator, discriminator, gen_params, disc_params })
    }

    pub fn enhance(&self, clip: &AudioClip) -> Result<Enhanced> {
        self.generator.enhance(&self.gen_params, clip)
    }

    pub fn sparsity(&self) -> SparsityReport {
        sparsity_report(&[&self.gen_params, &self.disc_params], &PruneScope::all_convs())
    }

    /// Raw and effective generator parameter counts.
    pub fn generator_params(&self) -> (usize, usize) {
        (self.gen_params.count("", false), self.gen_params.count("", true))
    }

    /// Enhances every pair and scores noisy and enhanced audio against clean.
    pub fn evaluate(&self, pairs: &[NoisyPair], exec: Execution) -> Result<EvalResult> {
        let enhanced = exec.map(pairs, |_, p| self.enhance(&p.noisy)).into_iter().collect::<Result<Vec<_>>>()?;
        let rows: Vec<EvalPair> = pairs
            .iter()
            .zip(&enhanced)
            .map(|(p, e)| EvalPair {
                id: p.id.clone(),
                input_snr_db: p.snr_db,
                clean: p.clean.samples(),
                noisy: p.noisy.samples(),
                enhanced: e.clip.samples(),
            })
            .collect();
        evaluate_pair_set(&rows, SSNR_FRAME, exec)
    }
}

/// Network-ready view of a training pair.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub noisy: SpectralInput<f32>,
    pub clean: SpectralInput<f32>,
    pub clean_wave: Tensor<f32>,
    pub clean_samples: Vec<f64>,
}

impl Prepared {
    pub fn new(generator: &Generator, pair: &NoisyPair) -> Result<Self> {
        Ok(Self {
            noisy: generator.analyze(&pair.noisy)?,
            clean: generator.analyze(&pair.clean)?,
            clean_wave: Tensor::from_f64(&[pair.clean.len()], pair.clean.samples())?,
            clean_samples: pair.clean.samples().to_vec(),
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreRange {
    pub min: f64,
    pub max: f64,
}

impl ScoreRange {
    fn of(values: impl IntoIterator<Item = f64>) -> Self {
        values.into_iter().fold(Self { min: f64::INFINITY, max: f64::NEG_INFINITY }, |r, v| Self { min: r.min.min(v), max: r.max.max(v) })
    }

    pub fn within_unit(&self) -> bool {
        self.min >= 0.0 && self.max <= 1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub losses: LossReport,
    pub d_loss: f64,
    /// Discriminator scores seen in this step (real pairs, enhanced pairs in
    /// both the D and G passes).
    pub scores: ScoreRange,
    pub g_grad_norm: f64,
    pub d_grad_norm: f64,
    pub sigmas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub losses: LossReport,
    pub d_loss: f64,
    pub sparsity: f64,
    pub eval: Option<EvalSummary>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub ssnr_noisy: f64,
    pub ssnr_enh: f64,
    pub sisnr_noisy: f64,
    pub sisnr_enh: f64,
}

impl From<&EvalResult> for EvalSummary {
    fn from(r: &EvalResult) -> Self {
        Self { ssnr_noisy: r.ssnr_noisy, ssnr_enh: r.ssnr_db, sisnr_noisy: r.sisnr_noisy, sisnr_enh: r.si_snr_db }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    /// Epochs completed when the prune was applied.
    pub epoch: usize,
    pub amount: f64,
    pub achieved: f64,
    pub ssnr_before: f64,
    pub ssnr_after: f64,
    pub finite_after: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub prunes: Vec<PruneEvent>,
}

impl History {
    pub fn scores_within_unit(&self) -> bool {
        self.steps.iter().all(|s| s.scores.within_unit())
    }
}

/// Per-sample result of one discriminator pass.
struct DiscSample {
    grads: ParamGrads<f32>,
    loss: f64,
    scores: [f64; 2],
}

struct GenSample {
    grads: ParamGrads<f32>,
    report: LossReport,
    score: f64,
}

fn first_non_finite(report: &LossReport) -> Option<&'static str> {
    report.fields().into_iter().find(|(_, v)| !v.is_finite()).map(|(k, _)| k)
}

fn mean_grads(mut parts: impl Iterator<Item = ParamGrads<f32>>, n: usize) -> Option<ParamGrads<f32>> {
    let mut acc = parts.next()?;
    for g in parts {
        acc.accumulate(&g);
    }
    acc.scale(1.0 / n as f32);
    Some(acc)
}

#[derive(Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub gen_opt: AdamW<f32>,
    pub disc_opt: AdamW<f32>,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
    pub step: u64,
    pub mask: Option<PruneMask>,
    pub history: History,
    pub exec: Execution,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = Model::new(&config, &mut rng)?;
        let gen_opt = AdamW::new(config.adam(config.lr_generator), &model.gen_params);
        let disc_opt = AdamW::new(config.adam(config.lr_discriminator), &model.disc_params);
        let exec = if config.parallel { Execution::available() } else { Execution::Sequential };
        Ok(Self { config, model, gen_opt, disc_opt, rng, epoch: 0, step: 0, mask: None, history: History::default(), exec })
    }

    pub fn prepare(&self, pairs: &[NoisyPair]) -> Result<Vec<Prepared>> {
        self.exec.map(pairs, |_, p| Prepared::new(&self.model.generator, p)).into_iter().collect()
    }

    fn disc_sample(&self, p: &Prepared, seed: u64) -> Result<DiscSample> {
        let Model { generator, discriminator, gen_params, disc_params } = &self.model;
        let frozen = Tape::no_grad(true);
        let out = generator.forward(&frozen, gen_params, &p.noisy)?;
        let label = match self.config.disc_target {
            crate::losses::DiscTarget::Adversarial => 0.0,
            target => {
                let wave: Vec<f64> = out.waveform.value().data().iter().map(|&v| v as f64).collect();
                target.label(&p.clean_samples, &wave)?
            }
        };
        let enhanced_c = (*out.mag_c.value()).clone();
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clean_c = tape.constant(p.clean.mag_c.clone());
        let real = discriminator.forward(&tape, disc_params, clean_c, clean_c, &mut rng)?;
        let fake = discriminator.forward(&tape, disc_params, clean_c, tape.constant(enhanced_c), &mut rng)?;
        let loss = discriminator_loss(real, fake, label)?;
        let (l, scores) = (loss.scalar(), [real.scalar(), fake.scalar()]);
        if !l.is_finite() {
            return Err(Error::NonFinite(format!("discriminator loss (scores {scores:?})")));
        }
        let grads = tape.backward(loss)?.into_param_grads(disc_params);
        Ok(DiscSample { grads, loss: l, scores })
    }

    fn gen_sample(&self, p: &Prepared, seed: u64) -> Result<GenSample> {
        let Model { generator, discriminator, gen_params, disc_params } = &self.model;
        let tape = Tape::new();
        tape.freeze(disc_params);
        let out = generator.forward(&tape, gen_params, &p.noisy)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores = discriminator.forward(&tape, disc_params, tape.constant(p.clean.mag_c.clone()), out.mag_c, &mut rng)?;
        let terms = GeneratorTerms::compute(&out, &p.clean, &p.clean_wave, scores)?;
        let report = terms.report(&self.config.loss_weights);
        if let Some(name) = first_non_finite(&report) {
            return Err(Error::NonFinite(format!("{name} is not finite")));
        }
        let score = scores.scalar();
        let total = terms.total(&self.config.loss_weights)?;
        let grads = tape.backward(total)?.into_param_grads(gen_params);
        Ok(GenSample { grads, report, score })
    }

    fn finish_grads(grads: Option<ParamGrads<f32>>, clip: f64, what: &str) -> Result<(ParamGrads<f32>, f64)> {
        let mut g = grads.ok_or(Error::EmptySet)?;
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("{what} gradients")));
        }
        let norm = g.clip_global_norm(clip as f32) as f64;
        Ok((g, norm))
    }

    /// One discriminator update followed by one generator update.
    pub fn train_step(&mut self, batch: &[&Prepared]) -> Result<StepRecord> {
        if batch.is_empty() {
            return Err(Error::EmptySet);
        }
        let n = batch.len();
        // discriminator
        self.model.discriminator.power_step(&self.model.disc_params);
        let seeds: Vec<u64> = (0..n).map(|_| self.rng.gen()).collect();
        let d = self.exec.map(batch, |i, p| self.disc_sample(p, seeds[i])).into_iter().collect::<Result<Vec<_>>>()?;
        let d_loss = d.iter().map(|s| s.loss).sum::<f64>() / n as f64;
        let mut scores: Vec<f64> = d.iter().flat_map(|s| s.scores).collect();
        let (dg, d_norm) = Self::finish_grads(mean_grads(d.into_iter().map(|s| s.grads), n), self.config.grad_clip, "discriminator")?;
        self.disc_opt.step(&mut self.model.disc_params, &dg);

        // generator
        let seeds: Vec<u64> = (0..n).map(|_| self.rng.gen()).collect();
        let g = self.exec.map(batch, |i, p| self.gen_sample(p, seeds[i])).into_iter().collect::<Result<Vec<_>>>()?;
        let losses = LossReport::mean(&g.iter().map(|s| s.report).collect::<Vec<_>>());
        scores.extend(g.iter().map(|s| s.score));
        let (gg, g_norm) = Self::finish_grads(mean_grads(g.into_iter().map(|s| s.grads), n), self.config.grad_clip, "generator")?;
        self.gen_opt.step(&mut self.model.gen_params, &gg);

        self.step += 1;
        let record = StepRecord {
            epoch: self.epoch,
            step: self.step,
            losses,
            d_loss,
            scores: ScoreRange::of(scores),
            g_grad_norm: g_norm,
            d_grad_norm: d_norm,
            sigmas: self.model.discriminator.normalized_sigmas(&self.model.disc_params),
        };
        self.history.steps.push(record.clone());
        Ok(record)
    }

    /// Global prune over both networks' conv weights, with held-out SSNR
    /// measured just before and just after.
    pub fn prune(&mut self, amount: f64, heldout: &[NoisyPair]) -> Result<PruneEvent> {
        let before = self.model.evaluate(heldout, self.exec)?;
        let mask = l1_unstructured_prune(&[&self.model.gen_params, &self.model.disc_params], &PruneScope::all_convs(), amount)?;
        apply_masks(&mut self.model.gen_params, &mask)?;
        apply_masks(&mut self.model.disc_params, &mask)?;
        let after = self.model.evaluate(heldout, self.exec);
        let finite_after = after.is_ok();
        let ssnr_after = after.as_ref().map(|r| r.ssnr_db).unwrap_or(f64::NAN);
        let event =
            PruneEvent { epoch: self.epoch, amount, achieved: mask.sparsity(), ssnr_before: before.ssnr_db, ssnr_after, finite_after };
        self.mask = Some(mask);
        self.history.prunes.push(event.clone());
        after?;
        Ok(event)
    }

    /// Runs the configured epochs; `on_epoch` sees each finished epoch.
    pub fn fit(&mut self, train: &[NoisyPair], heldout: &[NoisyPair], mut on_epoch: impl FnMut(&EpochRecord)) -> Result<()> {
        let prepared = self.prepare(train)?;
        let epochs = self.config.epochs;
        while self.epoch < epochs {
            if self.config.use_pruning {
                if let Some(amount) = self.config.prune.amount_at(self.epoch, epochs) {
                    self.prune(amount, heldout)?;
                }
            }
            let mut order: Vec<usize> = (0..prepared.len()).collect();
            order.shuffle(&mut self.rng);
            let first = self.history.steps.len();
            for chunk in order.chunks(self.config.batch_size) {
                let batch: Vec<&Prepared> = chunk.iter().map(|&i| &prepared[i]).collect();
                self.train_step(&batch)?;
            }
            let steps = &self.history.steps[first..];
            let losses = LossReport::mean(&steps.iter().map(|s| s.losses).collect::<Vec<_>>());
            let d_loss = steps.iter().map(|s| s.d_loss).sum::<f64>() / steps.len().max(1) as f64;
            self.epoch += 1;
            let every = self.config.eval_every;
            let eval = if self.epoch == epochs || (every > 0 && self.epoch.is_multiple_of(every)) {
                Some(EvalSummary::from(&self.model.evaluate(heldout, self.exec)?))
            } else {
                None
            };
            let record = EpochRecord { epoch: self.epoch, losses, d_loss, sparsity: self.model.sparsity().global, eval };
            on_epoch(&record);
            self.history.epochs.push(record);
        }
        Ok(())
    }
}
