use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use effifusion::exec::Execution;
use effifusion::gradsuite;
use effifusion::pipeline::{self, load_checkpoint, save_checkpoint, Ablation, DatasetSource, TrainConfig};

#[derive(Parser)]
#[command(name = "efgn", version, about = "Lightweight GAN speech enhancement: train, enhance, evaluate, inspect")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the synthetic corpus described by a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "baseline")]
        ablation: Ablation,
        #[arg(long)]
        out: PathBuf,
    },
    /// Enhance one 16-bit mono WAV file.
    Enhance {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Clean reference; prints SSNR and SI-SNR before and after.
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
    },
    /// Score a checkpoint on a directory of pairs or a synthetic spec.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        /// Directory with clean/ and noisy/, a dataset-spec JSON file,
        /// inline JSON, or `heldout`.
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        report: PathBuf,
    },
    /// Per-tensor and global sparsity of a checkpoint.
    PruneReport {
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Finite-difference gradient checks; exits nonzero on any failure.
    Gradcheck {
        #[arg(long, default_value = "all")]
        module: String,
    },
    /// Parameter counts for every ablation preset.
    Params {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> effifusion::Result<ExitCode> {
    match cli.command {
        Command::Train { config, ablation, out } => {
            let cfg = ablation.apply(&TrainConfig::load(&config)?);
            eprintln!("training {} (seed {}, {} epochs, {} clips)", ablation.name(), cfg.seed, cfg.epochs, cfg.dataset.num_clips);
            let trainer = pipeline::run::train(cfg, |e| {
                let eval = e
                    .eval
                    .map(|v| format!(" ssnr {:.2}->{:.2} dB, si-snr {:.2}->{:.2} dB", v.ssnr_noisy, v.ssnr_enh, v.sisnr_noisy, v.sisnr_enh))
                    .unwrap_or_default();
                println!(
                    "epoch {} l_generator {:.4} d_loss {:.4} sparsity {:.4}{eval}",
                    e.epoch, e.losses.l_generator, e.d_loss, e.sparsity
                );
            })?;
            for p in &trainer.history.prunes {
                println!("pruned {:.2} at epoch {}: held-out ssnr {:.2} -> {:.2} dB", p.achieved, p.epoch, p.ssnr_before, p.ssnr_after);
            }
            save_checkpoint(&out, &trainer)?;
            println!("saved {}", out.display());
        }
        Command::Enhance { ckpt, input, out, reference } => {
            let trainer = load_checkpoint(&ckpt)?;
            if let Some(s) = pipeline::enhance_file(&trainer.model, &input, &out, reference.as_deref())? {
                println!(
                    "ssnr_noisy = {:.4}\nssnr_enh = {:.4}\nsisnr_noisy = {:.4}\nsisnr_enh = {:.4}",
                    s.ssnr_noisy, s.ssnr_enh, s.sisnr_noisy, s.sisnr_enh
                );
            }
        }
        Command::Evaluate { ckpt, dataset, report } => {
            let trainer = load_checkpoint(&ckpt)?;
            let source = DatasetSource::parse(&dataset, &trainer.config)?;
            let result = pipeline::evaluate(&trainer.model, &source, Execution::available())?;
            result.write(&report)?;
            println!(
                "{} clips: ssnr {:.2} -> {:.2} dB, si-snr {:.2} -> {:.2} dB",
                result.rows.len(),
                result.ssnr_noisy,
                result.ssnr_db,
                result.sisnr_noisy,
                result.si_snr_db
            );
        }
        Command::PruneReport { ckpt } => {
            let trainer = load_checkpoint(&ckpt)?;
            print!("{}", trainer.model.sparsity().to_text());
            let (raw, effective) = trainer.model.generator_params();
            println!("generator_raw_params = {raw}\ngenerator_effective_params = {effective}");
        }
        Command::Gradcheck { module } => {
            let modules = gradsuite::parse_modules(&module)?;
            let outcomes = gradsuite::run(&modules, |o| println!("{o}"));
            let failed = outcomes.iter().filter(|o| !o.passed()).count();
            println!("{} checks, {failed} failed", outcomes.len());
            if failed > 0 {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Params { config } => {
            let cfg = TrainConfig::load(&config)?;
            print!("{}", pipeline::param_table_text(&pipeline::param_table(&cfg)?));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
