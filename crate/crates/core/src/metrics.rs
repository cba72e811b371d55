//! Segmental SNR, SI-SNR and pair-set evaluation reports.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;

/// 32 ms at 16 kHz.
pub const SSNR_FRAME: usize = 512;
pub const SSNR_CLAMP: (f64, f64) = (-10.0, 35.0);
pub const SI_SNR_CLAMP: (f64, f64) = (-40.0, 40.0);
/// Frames whose clean energy falls below this are skipped.
pub const SILENT_FRAME_ENERGY: f64 = 1e-8;

/// Mean clamped frame SNR over non-overlapping frames (a trailing partial
/// frame counts as a frame).
pub fn ssnr(clean: &[f64], test: &[f64], frame_len: usize, clamp: (f64, f64)) -> Result<f64> {
    if clean.len() != test.len() {
        return Err(Error::LengthMismatch(clean.len(), test.len()));
    }
    if frame_len == 0 {
        return Err(Error::InvalidArgument("frame length must be positive".into()));
    }
    let (mut total, mut count) = (0.0, 0usize);
    for (c, t) in clean.chunks(frame_len).zip(test.chunks(frame_len)) {
        let signal: f64 = c.iter().map(|x| x * x).sum();
        if signal < SILENT_FRAME_ENERGY {
            continue;
        }
        let noise: f64 = c.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
        let db = if noise == 0.0 { clamp.1 } else { 10.0 * (signal / noise).log10() };
        total += db.clamp(clamp.0, clamp.1);
        count += 1;
    }
    if count == 0 {
        return Err(Error::AllFramesSilent);
    }
    Ok(total / count as f64)
}

/// Scale-invariant SNR in dB after removing both means.
pub fn si_snr(clean: &[f64], test: &[f64]) -> Result<f64> {
    if clean.len() != test.len() {
        return Err(Error::LengthMismatch(clean.len(), test.len()));
    }
    let center = |x: &[f64]| {
        let m = x.iter().sum::<f64>() / x.len().max(1) as f64;
        x.iter().map(|v| v - m).collect::<Vec<_>>()
    };
    let (s, e) = (center(clean), center(test));
    let energy: f64 = s.iter().map(|v| v * v).sum();
    if energy < SILENT_FRAME_ENERGY {
        return Err(Error::AllFramesSilent);
    }
    let alpha = s.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() / energy;
    let target: f64 = alpha * alpha * energy;
    let residual: f64 = s.iter().zip(&e).map(|(a, b)| (b - alpha * a).powi(2)).sum();
    let (lo, hi) = SI_SNR_CLAMP;
    let db = if residual == 0.0 {
        hi
    } else if target == 0.0 {
        lo
    } else {
        10.0 * (target / residual).log10()
    };
    Ok(db.clamp(lo, hi))
}

/// One aligned clip for evaluation.
#[derive(Clone, Debug)]
pub struct EvalPair<'a> {
    pub id: String,
    pub input_snr_db: f64,
    pub clean: &'a [f64],
    pub noisy: &'a [f64],
    pub enhanced: &'a [f64],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub clip: String,
    pub input_snr_db: f64,
    pub ssnr_noisy: f64,
    pub ssnr_enh: f64,
    pub sisnr_noisy: f64,
    pub sisnr_enh: f64,
    pub time_l1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub rows: Vec<EvalRow>,
    pub ssnr_noisy: f64,
    pub ssnr_db: f64,
    pub sisnr_noisy: f64,
    pub si_snr_db: f64,
    pub time_l1: f64,
}

impl EvalResult {
    pub fn ssnr_gain(&self) -> f64 {
        self.ssnr_db - self.ssnr_noisy
    }

    pub fn si_snr_gain(&self) -> f64 {
        self.si_snr_db - self.sisnr_noisy
    }

    /// Comma-separated table followed by a `#`-prefixed summary block.
    pub fn to_table(&self) -> String {
        let mut s = String::from("clip,input_snr_db,ssnr_noisy,ssnr_enh,sisnr_noisy,sisnr_enh\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.2},{:.4},{:.4},{:.4},{:.4}",
                r.clip, r.input_snr_db, r.ssnr_noisy, r.ssnr_enh, r.sisnr_noisy, r.sisnr_enh
            );
        }
        let _ = writeln!(s, "# clips = {}", self.rows.len());
        let _ = writeln!(s, "# ssnr_noisy = {:.4}", self.ssnr_noisy);
        let _ = writeln!(s, "# ssnr_enh = {:.4}", self.ssnr_db);
        let _ = writeln!(s, "# ssnr_gain = {:.4}", self.ssnr_gain());
        let _ = writeln!(s, "# sisnr_noisy = {:.4}", self.sisnr_noisy);
        let _ = writeln!(s, "# sisnr_enh = {:.4}", self.si_snr_db);
        let _ = writeln!(s, "# sisnr_gain = {:.4}", self.si_snr_gain());
        let _ = writeln!(s, "# time_l1 = {:.6}", self.time_l1);
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_table())?)
    }
}

fn row(p: &EvalPair<'_>, frame_len: usize) -> Result<EvalRow> {
    if p.enhanced.len() != p.clean.len() {
        return Err(Error::LengthMismatch(p.clean.len(), p.enhanced.len()));
    }
    let time_l1 = p.clean.iter().zip(p.enhanced).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.clean.len().max(1) as f64;
    Ok(EvalRow {
        clip: p.id.clone(),
        input_snr_db: p.input_snr_db,
        ssnr_noisy: ssnr(p.clean, p.noisy, frame_len, SSNR_CLAMP)?,
        ssnr_enh: ssnr(p.clean, p.enhanced, frame_len, SSNR_CLAMP)?,
        sisnr_noisy: si_snr(p.clean, p.noisy)?,
        sisnr_enh: si_snr(p.clean, p.enhanced)?,
        time_l1,
    })
}

/// Per-clip rows (sorted by clip id) and their arithmetic means.
pub fn evaluate_pair_set(pairs: &[EvalPair<'_>], frame_len: usize, exec: Execution) -> Result<EvalResult> {
    if pairs.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut rows = exec.map(pairs, |_, p| row(p, frame_len)).into_iter().collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.clip.cmp(&b.clip));
    let n = rows.len() as f64;
    let mean = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    Ok(EvalResult {
        ssnr_noisy: mean(|r| r.ssnr_noisy),
        ssnr_db: mean(|r| r.ssnr_enh),
        sisnr_noisy: mean(|r| r.sisnr_noisy),
        si_snr_db: mean(|r| r.sisnr_enh),
        time_l1: mean(|r| r.time_l1),
        rows,
    })
}
