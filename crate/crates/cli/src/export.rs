//! CSV and JSON exports of training histories, ablation tables, spectral errors and summaries.

use std::fs;
use std::io;
use std::path::Path;

use icunet_core::eval::{AblationRow, MetricSummary};
use icunet_core::training::{EpochRecord, TrainingReport};
use serde::Serialize;

fn create(path: &Path) -> io::Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(csv::Writer::from_writer(fs::File::create(path)?))
}

fn finish(mut w: csv::Writer<fs::File>) -> io::Result<()> {
    w.flush()
}

/// Floats are written with Rust's shortest round-trip formatting.
fn num(v: f64) -> String {
    format!("{v}")
}

pub const HISTORY_HEADER: [&str; 8] =
    ["epoch", "train_loss", "val_amp", "val_vel", "val_acc", "val_freq", "val_ens", "val_snr"];

pub fn history_row(e: &EpochRecord) -> Vec<String> {
    let t = e.val.terms;
    let mut row = vec![e.epoch.to_string()];
    row.extend([e.train_loss, t.amp, t.vel, t.acc, t.freq, e.val.ensemble, e.val.snr].map(num));
    row
}

pub fn write_history(path: &Path, report: &TrainingReport) -> io::Result<()> {
    let mut w = create(path)?;
    w.write_record(HISTORY_HEADER)?;
    for e in &report.history {
        w.write_record(history_row(e))?;
    }
    finish(w)
}

pub const ABLATION_HEADER: [&str; 15] = [
    "config",
    "alpha",
    "epoch_star",
    "train_mse_mean",
    "train_mse_std",
    "val_mse_mean",
    "val_mse_std",
    "test_mse_mean",
    "test_mse_std",
    "train_snr_mean",
    "train_snr_std",
    "val_snr_mean",
    "val_snr_std",
    "test_snr_mean",
    "test_snr_std",
];

pub fn write_ablation(path: &Path, rows: &[AblationRow]) -> io::Result<()> {
    let mut w = create(path)?;
    w.write_record(ABLATION_HEADER)?;
    for r in rows {
        let alpha = r.weights.alphas().map(num).join(" ");
        let mut rec = vec![r.name.to_string(), alpha, r.best_epoch().map_or(String::new(), |e| e.to_string())];
        let s = [&r.train, &r.val, &r.test];
        rec.extend(s.iter().flat_map(|m| [m.mse_mean, m.mse_std]).map(num));
        rec.extend(s.iter().flat_map(|m| [m.snr_mean, m.snr_std]).map(num));
        w.write_record(rec)?;
    }
    finish(w)
}

pub fn write_bins(path: &Path, freqs: &[f64], errors: &[f64]) -> io::Result<()> {
    let mut w = create(path)?;
    w.write_record(["freq_hz", "mean_abs_error"])?;
    for (f, e) in freqs.iter().zip(errors) {
        w.write_record([num(*f), num(*e)])?;
    }
    finish(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryJson {
    pub mse_mean: f64,
    pub mse_std: f64,
    pub snr_mean: f64,
    pub snr_std: f64,
    pub n: usize,
}

impl From<&MetricSummary> for SummaryJson {
    fn from(m: &MetricSummary) -> Self {
        Self { mse_mean: m.mse_mean, mse_std: m.mse_std, snr_mean: m.snr_mean, snr_std: m.snr_std, n: m.n }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}
