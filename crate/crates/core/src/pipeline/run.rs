//! End-to-end operations behind the command line.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{read_wav, write_wav};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::metrics::{si_snr, ssnr, EvalResult, SSNR_CLAMP, SSNR_FRAME};
use crate::pipeline::config::{Ablation, TrainConfig};
use crate::pipeline::data::{load_pair_dir, synth_dataset, NoisyPair, SynthDatasetSpec};
use crate::pipeline::train::{EpochRecord, Model, Trainer};

/// Training and held-out splits for a config.
pub fn datasets(cfg: &TrainConfig, exec: Execution) -> Result<(Vec<NoisyPair>, Vec<NoisyPair>)> {
    Ok((synth_dataset(&cfg.dataset, exec)?, synth_dataset(&cfg.heldout_spec(), exec)?))
}

pub fn train(cfg: TrainConfig, on_epoch: impl FnMut(&EpochRecord)) -> Result<Trainer> {
    let mut trainer = Trainer::new(cfg)?;
    let (train, heldout) = datasets(&trainer.config, trainer.exec)?;
    trainer.fit(&train, &heldout, on_epoch)?;
    Ok(trainer)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceScores {
    pub ssnr_noisy: f64,
    pub ssnr_enh: f64,
    pub sisnr_noisy: f64,
    pub sisnr_enh: f64,
}

/// Enhances one WAV file. With a clean reference, also scores input and output.
pub fn enhance_file(model: &Model, input: &Path, output: &Path, reference: Option<&Path>) -> Result<Option<ReferenceScores>> {
    let noisy = read_wav(input)?;
    let enhanced = model.enhance(&noisy)?.clip;
    write_wav(output, &enhanced)?;
    let Some(reference) = reference else { return Ok(None) };
    let clean = read_wav(reference)?;
    if clean.len() != noisy.len() {
        return Err(Error::LengthMismatch(clean.len(), noisy.len()));
    }
    let (c, n, e) = (clean.samples(), noisy.samples(), enhanced.samples());
    Ok(Some(ReferenceScores {
        ssnr_noisy: ssnr(c, n, SSNR_FRAME, SSNR_CLAMP)?,
        ssnr_enh: ssnr(c, e, SSNR_FRAME, SSNR_CLAMP)?,
        sisnr_noisy: si_snr(c, n)?,
        sisnr_enh: si_snr(c, e)?,
    }))
}

/// Where evaluation pairs come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    /// Directory with `clean/` and `noisy/` WAVs of matching names.
    Dir(std::path::PathBuf),
    Synth(SynthDatasetSpec),
}

impl DatasetSource {
    /// A directory, a JSON file holding a dataset spec, inline JSON, or
    /// `heldout` for the held-out split of `cfg`.
    pub fn parse(arg: &str, cfg: &TrainConfig) -> Result<Self> {
        let spec = |text: &str| -> Result<Self> {
            let s: SynthDatasetSpec = serde_json::from_str(text).map_err(|e| Error::Config(format!("dataset spec: {e}")))?;
            s.validate()?;
            Ok(DatasetSource::Synth(s))
        };
        let path = Path::new(arg);
        if arg == "heldout" {
            Ok(DatasetSource::Synth(cfg.heldout_spec()))
        } else if path.is_dir() {
            Ok(DatasetSource::Dir(path.to_path_buf()))
        } else if path.is_file() {
            spec(&std::fs::read_to_string(path)?)
        } else if arg.trim_start().starts_with('{') {
            spec(arg)
        } else {
            Err(Error::Config(format!("dataset {arg:?} is neither a directory, a spec file nor inline JSON")))
        }
    }

    pub fn load(&self, exec: Execution) -> Result<Vec<NoisyPair>> {
        match self {
            DatasetSource::Dir(dir) => load_pair_dir(dir),
            DatasetSource::Synth(spec) => synth_dataset(spec, exec),
        }
    }
}

pub fn evaluate(model: &Model, source: &DatasetSource, exec: Execution) -> Result<EvalResult> {
    model.evaluate(&source.load(exec)?, exec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub ablation: Ablation,
    pub generator: usize,
    pub discriminator: usize,
}

/// Freshly initialized parameter counts for every preset.
pub fn param_table(base: &TrainConfig) -> Result<Vec<ParamRow>> {
    Ablation::ALL
        .iter()
        .map(|&a| {
            let model = Model::new(&a.apply(base), &mut ChaCha8Rng::seed_from_u64(base.seed))?;
            Ok(ParamRow { ablation: a, generator: model.gen_params.count("", false), discriminator: model.disc_params.count("", false) })
        })
        .collect()
}

pub fn param_table_text(rows: &[ParamRow]) -> String {
    let mut s = String::from("preset,generator_params,discriminator_params\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.ablation.name(), r.generator, r.discriminator);
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub params: usize,
    pub effective_params: usize,
    pub sparsity: f64,
    pub ssnr_noisy: f64,
    pub ssnr: f64,
    pub sisnr_noisy: f64,
    pub si_snr: f64,
}

/// Trains and evaluates each preset on the same data.
pub fn run_ablations(base: &TrainConfig, presets: &[Ablation], mut on_row: impl FnMut(&AblationRow)) -> Result<Vec<AblationRow>> {
    let exec = if base.parallel { Execution::available() } else { Execution::Sequential };
    let (train, heldout) = datasets(base, exec)?;
    let mut rows = Vec::with_capacity(presets.len());
    for &a in presets {
        let mut trainer = Trainer::new(a.apply(base))?;
        trainer.fit(&train, &heldout, |_| {})?;
        let eval = trainer.model.evaluate(&heldout, exec)?;
        let (params, effective_params) = trainer.model.generator_params();
        let row = AblationRow {
            ablation: a,
            params,
            effective_params,
            sparsity: trainer.model.sparsity().global,
            ssnr_noisy: eval.ssnr_noisy,
            ssnr: eval.ssnr_db,
            sisnr_noisy: eval.sisnr_noisy,
            si_snr: eval.si_snr_db,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

pub fn ablation_table_text(rows: &[AblationRow]) -> String {
    let mut s = String::from("preset,params,effective_params,sparsity,ssnr_db,ssnr_gain_db,si_snr_db,si_snr_gain_db\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.4},{:.3},{:.3},{:.3},{:.3}",
            r.ablation.name(),
            r.params,
            r.effective_params,
            r.sparsity,
            r.ssnr,
            r.ssnr - r.ssnr_noisy,
            r.si_snr,
            r.si_snr - r.sisnr_noisy
        );
    }
    s
}
