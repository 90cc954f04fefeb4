//! Command-line entry points.
//!
//! Failures print one JSON line `{"error": <code>, "message": <text>}` to stderr.
//! Exit status is 0 on success, 2 on usage errors and 1 on runtime errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use icunet_core::baseline::{design_fir_bandpass, filtfilt, DEFAULT_TAPS};
use icunet_core::eval::{
    ablation_row, bin_error_profile_of, score_reconstructions, AblationRow, MetricSummary, Splits,
};
use icunet_core::loss::LossWeights;
use icunet_core::mixture::{make_pairs, BRAIN_THRESHOLD};
use icunet_core::network::{infer_segments, init_params, UNetConfig, UNetParams};
use icunet_core::signalgen::{disturbed_pairs, split_sizes, synth_sinusoid_dataset, Disturbance, SynthSpec};
use icunet_core::spectral::band_bins;
use icunet_core::training::{train_observed, Clock, EpochRecord, Optimizer, Selection, TrainConfig, EVAL_CHUNK};
use icunet_core::{Pair, Segment};
use serde::Serialize;

use crate::export;
use crate::persist::{self, PersistError, Role};

#[derive(Debug, Parser)]
#[command(name = "icunet", version, about = "Synthesize, train and evaluate a 1D U-Net EEG denoiser")]
pub struct Cli {
    /// Seed for data synthesis, initialization and shuffling.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; only `ablation` runs work in parallel, one configuration per thread.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Suppress per-epoch progress on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulated multi-sinusoid segments split 80/10/10 into OUT/{train,val,test}.
    Synth(SynthArgs),
    /// Windowed mixB/mixBnB pairs from IC decompositions, with category counts.
    Mix(MixArgs),
    /// Train a model; writes history.csv, report.json and the best checkpoint.
    Train(TrainArgs),
    /// Map a dataset through a checkpoint.
    Denoise(DenoiseArgs),
    /// MSE/SNR summary and per-bin spectral error of a model or of stored reconstructions.
    Eval(EvalArgs),
    /// Train the five loss configurations from a shared initialization.
    Ablation(AblationArgs),
    /// Zero-phase band-pass FIR filtering of a dataset.
    Baseline(BaselineArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DisturbKind {
    White,
    Drift,
    Bursts,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Total segments across the three splits.
    #[arg(long)]
    pub samples: usize,
    #[arg(long, default_value_t = 19)]
    pub channels: usize,
    /// Samples per segment.
    #[arg(long, default_value_t = 1024)]
    pub length: usize,
    /// Sampling rate in Hz.
    #[arg(long, default_value_t = 256.0)]
    pub fs: f64,
    /// Sinusoids per channel.
    #[arg(long, default_value_t = 6)]
    pub components: usize,
    /// Lowest component frequency in Hz.
    #[arg(long, default_value_t = 0.0)]
    pub freq_min: f64,
    /// Highest component frequency in Hz.
    #[arg(long, default_value_t = 50.0)]
    pub freq_max: f64,
    /// Add these disturbances to make noisy/clean pairs; repeat or comma-separate.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub disturb: Vec<DisturbKind>,
    /// Input SNR of the disturbed segments in dB.
    #[arg(long, default_value_t = 0.0)]
    pub disturb_snr: f64,
    /// Drift frequency in Hz.
    #[arg(long, default_value_t = 0.3)]
    pub drift_hz: f64,
    /// Burst frequency range low end in Hz.
    #[arg(long, default_value_t = 45.0)]
    pub burst_low: f64,
    /// Burst frequency range high end in Hz.
    #[arg(long, default_value_t = 50.0)]
    pub burst_high: f64,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    /// Decomposition directory (decomp.json, S.bin, A.bin); repeatable.
    #[arg(long = "decomp", required = true)]
    pub decomps: Vec<PathBuf>,
    /// Window length in samples.
    #[arg(long, default_value_t = 1024)]
    pub window: usize,
    /// Minimum class probability for an IC to count toward a class.
    #[arg(long, default_value_t = BRAIN_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Args, Clone)]
pub struct ArchArgs {
    /// Filters at the first level; doubled per level.
    #[arg(long, default_value_t = 64)]
    pub base_filters: usize,
    /// Pooling levels.
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    /// Odd convolution kernel size.
    #[arg(long, default_value_t = 3)]
    pub kernel: usize,
    /// Pooling and upsampling factor.
    #[arg(long, default_value_t = 2)]
    pub pool: usize,
}

impl ArchArgs {
    fn config(&self, channels: usize) -> UNetConfig {
        UNetConfig {
            base_filters: self.base_filters,
            depth: self.depth,
            kernel_size: self.kernel,
            pool_size: self.pool,
            ..UNetConfig::new(channels)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SelectArg {
    /// Lowest validation ensemble loss.
    Loss,
    /// Highest validation SNR.
    Snr,
}

#[derive(Debug, Args, Clone)]
pub struct FitArgs {
    #[arg(long, default_value_t = 150)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    /// Keep the stored sample order every epoch.
    #[arg(long)]
    pub no_shuffle: bool,
    /// Epoch selection rule.
    #[arg(long, value_enum, default_value_t = SelectArg::Loss)]
    pub select: SelectArg,
    #[command(flatten)]
    pub arch: ArchArgs,
}

impl FitArgs {
    fn train_config(&self, seed: u64, weights: LossWeights) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            learning_rate: self.lr,
            weights,
            seed,
            optimizer: match self.optimizer {
                OptimizerArg::Adam => Optimizer::Adam,
                OptimizerArg::Sgd => Optimizer::Sgd,
            },
            shuffle: !self.no_shuffle,
            selection: match self.select {
                SelectArg::Loss => Selection::EnsembleLoss,
                SelectArg::Snr => Selection::Snr,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset directory.
    #[arg(long)]
    pub train: PathBuf,
    /// Validation dataset directory.
    #[arg(long)]
    pub val: PathBuf,
    /// Loss weights for amplitude, velocity, acceleration and frequency.
    #[arg(long, value_delimiter = ',', num_args = 4, default_values_t = [1.0, 1.0, 1.0, 1.0])]
    pub alpha: Vec<f64>,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    /// Checkpoint directory (arch.json, params.bin).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset to denoise; pairs contribute their noisy half.
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Reference dataset: pairs, or clean segments used as both input and target.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to run on the inputs.
    #[arg(long, conflicts_with = "reconstructed", required_unless_present = "reconstructed")]
    pub checkpoint: Option<PathBuf>,
    /// Stored reconstructions aligned with the reference dataset.
    #[arg(long)]
    pub reconstructed: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// Dataset to filter; pairs contribute their noisy half.
    #[arg(long)]
    pub input: PathBuf,
    /// Lower band edge in Hz.
    #[arg(long, default_value_t = 1.0)]
    pub low: f64,
    /// Upper band edge in Hz.
    #[arg(long, default_value_t = 50.0)]
    pub high: f64,
    /// Odd number of filter taps.
    #[arg(long, default_value_t = DEFAULT_TAPS)]
    pub taps: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] icunet_core::Error),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    /// Stable machine-readable category.
    pub fn code(&self) -> &'static str {
        use icunet_core::Error as E;
        match self {
            CliError::Core(E::ShapeMismatch(_) | E::InvalidSegment(_) | E::TooShort { .. }) => "shape",
            CliError::Core(E::EmptyDataset) => "empty_dataset",
            CliError::Core(E::NoArtifactIcs(_)) => "no_artifact_ics",
            CliError::Core(_) => "invalid_input",
            CliError::Persist(PersistError::Io { .. }) => "io",
            CliError::Persist(PersistError::Load { .. }) => "load",
            CliError::Persist(PersistError::HeterogeneousShapes) => "shape",
            CliError::Invalid(_) => "invalid_input",
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    message: String,
}

fn report_error(code: &str, message: String) {
    let line = serde_json::to_string(&ErrorLine { error: code, message }).expect("strings serialize");
    let _ = writeln!(std::io::stderr(), "{line}");
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    0
                }
                _ => {
                    let text = e.render().to_string();
                    let first = text.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
                    report_error("usage", first.to_string());
                    2
                }
            };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            report_error(e.code(), e.to_string());
            1
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Mix(a) => mix(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Denoise(a) => denoise(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Ablation(a) => ablation(cli, a),
        Command::Baseline(a) => baseline(cli, a),
    }
}

struct WallClock(Instant);

impl Clock for WallClock {
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

fn progress(cli: &Cli, label: &str, e: &EpochRecord) {
    if !cli.quiet {
        eprintln!(
            "{label} epoch {} train {:.5} val_ens {:.5} val_snr {:.2} dB ({:.1}s)",
            e.epoch, e.train_loss, e.val.ensemble, e.val.snr, e.seconds
        );
    }
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        n_samples: a.samples,
        channels: a.channels,
        length: a.length,
        fs: a.fs,
        n_components: a.components,
        freq_range: (a.freq_min, a.freq_max),
        ..SynthSpec::paper_scale(cli.seed)
    };
    let clean = synth_sinusoid_dataset(&spec)?;
    let (n_train, n_val, _) = split_sizes(clean.len());
    let bounds = [(0, n_train), (n_train, n_train + n_val), (n_train + n_val, clean.len())];
    let names = ["train", "val", "test"];
    if a.disturb.is_empty() {
        for (name, (lo, hi)) in names.iter().zip(bounds) {
            persist::save_segments(&cli.out.join(name), Role::Clean, &clean[lo..hi])?;
        }
    } else {
        let mut kinds: Vec<Disturbance> = Vec::new();
        for k in &a.disturb {
            let d = match k {
                DisturbKind::White => Disturbance::White,
                DisturbKind::Drift => Disturbance::Drift { freq: a.drift_hz },
                DisturbKind::Bursts => Disturbance::Bursts { low: a.burst_low, high: a.burst_high },
            };
            if !kinds.contains(&d) {
                kinds.push(d);
            }
        }
        let pairs = disturbed_pairs(&clean, &kinds, a.disturb_snr, cli.seed)?;
        for (name, (lo, hi)) in names.iter().zip(bounds) {
            persist::save_pairs(&cli.out.join(name), &pairs[lo..hi])?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct CountJson {
    category: String,
    count: usize,
    present: bool,
}

#[derive(Serialize)]
struct MixReport {
    pairs: usize,
    skipped_windows: usize,
    categories: Vec<CountJson>,
}

fn mix(cli: &Cli, a: &MixArgs) -> Result<()> {
    let decomps = a.decomps.iter().map(|d| persist::load_decomposition(d)).collect::<std::result::Result<Vec<_>, _>>()?;
    let mixed = make_pairs(&decomps, a.window, a.threshold)?;
    for c in mixed.counts.iter().filter(|c| !c.present) {
        eprintln!("warning: no ICs above threshold for {}; category skipped", c.label());
    }
    persist::save_pairs(&cli.out, &mixed.pairs)?;
    let report = MixReport {
        pairs: mixed.pairs.len(),
        skipped_windows: mixed.skipped,
        categories: mixed
            .counts
            .iter()
            .map(|c| CountJson { category: c.label(), count: c.count, present: c.present })
            .collect(),
    };
    write_json(&cli.out.join("counts.json"), &report)?;
    println!("{}", serde_json::to_string(&report).expect("plain data serializes"));
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    export::write_json(path, value).map_err(|source| PersistError::Io { path: path.to_path_buf(), source }.into())
}

fn io_err(path: PathBuf) -> impl FnOnce(std::io::Error) -> CliError {
    move |source| PersistError::Io { path, source }.into()
}

fn load_pairs(dir: &Path) -> Result<Vec<Pair>> {
    Ok(persist::load_dataset(dir)?.into_pairs())
}

fn channels_of(pairs: &[Pair], what: &Path) -> Result<usize> {
    pairs
        .first()
        .map(|p| p.noisy.channels())
        .ok_or_else(|| CliError::Invalid(format!("{}: dataset is empty", what.display())))
}

#[derive(Serialize)]
struct TrainSummary {
    epochs: usize,
    best_epoch: Option<usize>,
    best_val_ensemble: Option<f64>,
    best_val_snr: Option<f64>,
    n_params: usize,
    alpha: [f64; 4],
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let train_pairs = load_pairs(&a.train)?;
    let val_pairs = load_pairs(&a.val)?;
    let config = a.fit.arch.config(channels_of(&train_pairs, &a.train)?);
    let alpha: [f64; 4] = a.alpha.clone().try_into().map_err(|_| CliError::Invalid("--alpha takes four values".into()))?;
    let weights = LossWeights::new(alpha)?;
    let tc = a.fit.train_config(cli.seed, weights);
    let init = init_params(&config, cli.seed)?;
    let n_params = init.weights.n_params();
    let clock = WallClock(Instant::now());
    let (params, report) =
        train_observed(init, &config, &train_pairs, &val_pairs, &tc, &clock, &mut |e| progress(cli, "train", e))?;
    let history = cli.out.join("history.csv");
    export::write_history(&history, &report).map_err(io_err(history))?;
    persist::save_checkpoint(&cli.out.join("best"), &params, &config)?;
    let best = report.best();
    write_json(
        &cli.out.join("report.json"),
        &TrainSummary {
            epochs: tc.epochs,
            best_epoch: report.best_epoch,
            best_val_ensemble: best.map(|b| b.val.ensemble),
            best_val_snr: best.map(|b| b.val.snr),
            n_params,
            alpha,
        },
    )
}

fn reconstruct(params: &UNetParams, config: &UNetConfig, inputs: &[Segment]) -> Result<Vec<Segment>> {
    if let Some(first) = inputs.first() {
        config.check_input(first.channels(), first.len())?;
    }
    let refs: Vec<&Segment> = inputs.iter().collect();
    Ok(infer_segments(params, config, &refs, EVAL_CHUNK)?)
}

fn denoise(cli: &Cli, a: &DenoiseArgs) -> Result<()> {
    let (params, config) = persist::load_checkpoint(&a.checkpoint)?;
    let inputs = persist::load_dataset(&a.input)?.into_inputs();
    let outputs = reconstruct(&params, &config, &inputs)?;
    persist::save_segments(&cli.out, Role::Clean, &outputs)?;
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    #[serde(flatten)]
    summary: export::SummaryJson,
    input_snr_mean: f64,
}

fn bin_freqs(pairs: &[Pair]) -> Result<Vec<f64>> {
    let first = &pairs[0].clean;
    let (fs, len) = (first.fs(), first.len());
    Ok(band_bins(fs, len)?.map(|k| k as f64 * fs / len as f64).collect())
}

/// Writes `summary.json` and `bins.csv` for `outputs` scored against `pairs`.
fn write_eval(dir: &Path, outputs: &[Segment], pairs: &[Pair]) -> Result<MetricSummary> {
    if outputs.len() != pairs.len() {
        return Err(CliError::Invalid(format!("{} reconstructions for {} references", outputs.len(), pairs.len())));
    }
    for (y, p) in outputs.iter().zip(pairs) {
        y.same_shape(&p.clean)?;
    }
    let summary = MetricSummary::from_samples(&score_reconstructions(outputs, pairs)?)?;
    let inputs: Vec<Segment> = pairs.iter().map(|p| p.noisy.clone()).collect();
    let input = MetricSummary::from_samples(&score_reconstructions(&inputs, pairs)?)?;
    write_json(&dir.join("summary.json"), &EvalReport { summary: (&summary).into(), input_snr_mean: input.snr_mean })?;
    let bins = dir.join("bins.csv");
    export::write_bins(&bins, &bin_freqs(pairs)?, &bin_error_profile_of(outputs, pairs)?).map_err(io_err(bins))?;
    Ok(summary)
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let pairs = load_pairs(&a.data)?;
    if pairs.is_empty() {
        return Err(icunet_core::Error::EmptyDataset.into());
    }
    let outputs = match (&a.checkpoint, &a.reconstructed) {
        (Some(ckpt), _) => {
            let (params, config) = persist::load_checkpoint(ckpt)?;
            let inputs: Vec<Segment> = pairs.iter().map(|p| p.noisy.clone()).collect();
            reconstruct(&params, &config, &inputs)?
        }
        (None, Some(dir)) => persist::load_dataset(dir)?.into_inputs(),
        (None, None) => unreachable!("clap requires one source"),
    };
    write_eval(&cli.out, &outputs, &pairs)?;
    Ok(())
}

fn ablation(cli: &Cli, a: &AblationArgs) -> Result<()> {
    let train = load_pairs(&a.train)?;
    let val = load_pairs(&a.val)?;
    let test = load_pairs(&a.test)?;
    let config = a.fit.arch.config(channels_of(&train, &a.train)?);
    let tc = a.fit.train_config(cli.seed, LossWeights::ENS);
    let init = init_params(&config, cli.seed)?;
    let splits = Splits { train: &train, val: &val, test: &test };
    let configs = LossWeights::ABLATION;
    let threads = (cli.threads as usize).min(configs.len());
    let run_one = |i: usize| -> Result<AblationRow> {
        let (name, weights) = configs[i];
        let clock = WallClock(Instant::now());
        Ok(ablation_row(splits, &config, &tc, &init, name, weights, &clock, &mut |e| progress(cli, name, e))?)
    };
    let mut rows: Vec<Option<Result<AblationRow>>> = (0..configs.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let run_one = &run_one;
                s.spawn(move || (t..configs.len()).step_by(threads).map(|i| (i, run_one(i))).collect::<Vec<_>>())
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("ablation worker panicked") {
                rows[i] = Some(r);
            }
        }
    });
    let rows: Vec<AblationRow> = rows.into_iter().map(|r| r.expect("every row ran")).collect::<Result<_>>()?;
    let table = cli.out.join("ablation.csv");
    export::write_ablation(&table, &rows).map_err(io_err(table))?;
    let test_inputs: Vec<Segment> = test.iter().map(|p| p.noisy.clone()).collect();
    let freqs = bin_freqs(&test)?;
    for r in &rows {
        let history = cli.out.join("history").join(format!("{}.csv", r.name));
        export::write_history(&history, &r.report).map_err(io_err(history))?;
        let outputs = reconstruct(&r.params, &config, &test_inputs)?;
        let bins = cli.out.join("bins").join(format!("{}.csv", r.name));
        export::write_bins(&bins, &freqs, &bin_error_profile_of(&outputs, &test)?).map_err(io_err(bins))?;
        persist::save_checkpoint(&cli.out.join("checkpoints").join(r.name), &r.params, &config)?;
    }
    Ok(())
}

fn baseline(cli: &Cli, a: &BaselineArgs) -> Result<()> {
    let inputs = persist::load_dataset(&a.input)?.into_inputs();
    let fs = inputs.first().map_or(256.0, Segment::fs);
    let coeffs = design_fir_bandpass(fs, a.low, a.high, a.taps)?;
    let filtered = inputs.iter().map(|s| filtfilt(s, &coeffs)).collect::<icunet_core::Result<Vec<_>>>()?;
    persist::save_segments(&cli.out, Role::Clean, &filtered)?;
    Ok(())
}
