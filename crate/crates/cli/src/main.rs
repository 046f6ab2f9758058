use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use dualcodec::checkpoint::ModelCheckpoint;
use dualcodec::codec::{format, Codec, Mode, Strategy};
use dualcodec::corpus::{self, ClipKind};
use dualcodec::metrics::MetricReport;
use dualcodec::signal::{read_wav, write_wav};
use dualcodec::train::{LossRecord, Trainer};
use dualcodec::Profile;

/// Exit statuses; part of the command-line contract.
mod status {
    pub const GENERIC: u8 = 1;
    pub const NO_WAVS: u8 = 2;
    pub const NON_FINITE_LOSS: u8 = 3;
    pub const PROFILE_MISMATCH: u8 = 4;
    pub const CORRUPT_LATENTS: u8 = 5;
    pub const UNMATCHED_FILES: u8 = 6;
    pub const BAD_CONTAINER: u8 = 7;
}

#[derive(Parser)]
#[command(name = "dualcodec", version, about = "Consistency-model audio codec with continuous and token outputs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a directory of WAV files.
    Train(TrainArgs),
    /// Encode a WAV file into latents (DCLT) or tokens (DCTK).
    Encode(EncodeArgs),
    /// Decode a latent or token file back to a WAV file.
    Decode(DecodeArgs),
    /// Compare matching WAV files in two directories.
    Eval(EvalArgs),
    /// Print the header of a latent or token file.
    Inspect(InspectArgs),
    /// Write a synthetic corpus of tones, sweeps, chirps and noise bursts.
    GenCorpus(GenCorpusArgs),
}

#[derive(Args, Clone)]
struct ProfileArgs {
    /// Preset profile: toy or full.
    #[arg(long)]
    profile: Option<String>,
    /// TOML profile file; may name a preset with `base = "..."`.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ProfileArgs {
    fn given(&self) -> bool {
        self.profile.is_some() || self.config.is_some()
    }

    fn resolve(&self, default: &str) -> Result<Profile, Failure> {
        if self.profile.is_some() && self.config.is_some() {
            return Err(Failure::new(status::GENERIC, anyhow!("--profile and --config are mutually exclusive")));
        }
        let p = match (&self.config, &self.profile) {
            (Some(path), _) => {
                Profile::load(path).with_context(|| format!("loading profile {}", path.display()))?
            }
            (None, Some(name)) => Profile::by_name(name)?,
            (None, None) => Profile::by_name(default)?,
        };
        Ok(p)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    profile: ProfileArgs,
    /// Directory with training WAV files.
    #[arg(long)]
    data: PathBuf,
    /// Optimisation steps (default: the profile's).
    #[arg(long)]
    steps: Option<u64>,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Loss CSV path (default: checkpoint path with `.loss.csv`).
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value = "discrete")]
    mode: String,
    /// Optional profile the checkpoint must match.
    #[command(flatten)]
    profile: ProfileArgs,
    /// Encode with the raw weights instead of the EMA weights.
    #[arg(long)]
    raw_weights: bool,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// `ar` or `parallel`.
    #[arg(long, default_value = "parallel")]
    strategy: String,
    /// Denoising steps per chunk (ar) or pairing steps (parallel).
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    raw_weights: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    path: PathBuf,
}

#[derive(Args)]
struct GenCorpusArgs {
    #[command(flatten)]
    profile: ProfileArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    count: usize,
    #[arg(long, default_value_t = 2.0)]
    seconds: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated subset of tone,sweep,chirp,noise.
    #[arg(long, value_delimiter = ',')]
    kinds: Option<Vec<String>>,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: anyhow::Error) -> Self {
        Failure { code, error }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<dualcodec::Error>() {
            Some(dualcodec::Error::NonFiniteLoss { .. }) => status::NON_FINITE_LOSS,
            _ => status::GENERIC,
        };
        Failure { code, error }
    }
}

impl From<dualcodec::Error> for Failure {
    fn from(e: dualcodec::Error) -> Self {
        anyhow::Error::new(e).into()
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        anyhow::Error::new(e).into()
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        anyhow::Error::new(e).into()
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

trait WithCode<T> {
    fn code(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> WithCode<T> for Result<T, E> {
    fn code(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure::new(code, e.into()))
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("DUALCODEC_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow!("DUALCODEC_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    Ok(())
}

fn wav_names(dir: &Path) -> anyhow::Result<BTreeSet<String>> {
    let mut names = BTreeSet::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let entry = entry?;
        let path = entry.path();
        let is_wav = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if is_wav && path.is_file() {
            names.insert(entry.file_name().to_string_lossy().into_owned());
        }
    }
    Ok(names)
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let mut profile = args.profile.resolve("toy")?;
    if let Some(seed) = args.seed {
        profile.train.seed = seed;
    }
    let names = wav_names(&args.data).code(status::NO_WAVS)?;
    if names.is_empty() {
        return Err(Failure::new(status::NO_WAVS, anyhow!("no WAV files in {}", args.data.display())));
    }
    let dataset = names
        .iter()
        .map(|n| read_wav(args.data.join(n)).with_context(|| format!("reading {n}")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let steps = args.steps.unwrap_or(profile.train.steps);
    let csv_path = args.loss_csv.clone().unwrap_or_else(|| args.out.with_extension("loss.csv"));
    let mut csv = String::from(LossRecord::CSV_HEADER);
    csv.push('\n');
    eprintln!("training profile {:?} on {} clips for {steps} steps", profile.name, dataset.len());
    let mut trainer = Trainer::new(&profile, dataset, steps)?;
    let every = profile.train.checkpoint_every;
    for _ in 0..steps {
        let rec = match trainer.step() {
            Ok(r) => r,
            Err(e) => {
                fs::write(&csv_path, &csv)?;
                return Err(e.into());
            }
        };
        csv.push_str(&rec.csv_row());
        csv.push('\n');
        if rec.step % 100 == 0 || rec.step == steps {
            eprintln!("step {:>6}  loss {:.5}  smoothed {:.5}", rec.step, rec.raw_loss, rec.smoothed_loss);
        }
        if every > 0 && rec.step % every == 0 && rec.step < steps {
            ModelCheckpoint::from_trainer(&trainer)?.save(&args.out)?;
        }
    }
    ModelCheckpoint::from_trainer(&trainer)?.save(&args.out)?;
    fs::write(&csv_path, csv)?;
    eprintln!("wrote {} and {}", args.out.display(), csv_path.display());
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint, Failure> {
    Ok(ModelCheckpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?)
}

fn encode(args: EncodeArgs) -> Result<(), Failure> {
    let mode: Mode = args.mode.parse()?;
    let ck = load_checkpoint(&args.checkpoint)?;
    if args.profile.given() {
        let wanted = args.profile.resolve("toy")?;
        if !wanted.compatible_with(&ck.profile) {
            return Err(Failure::new(
                status::PROFILE_MISMATCH,
                anyhow!("checkpoint was trained with profile {:?}, which differs from {:?}", ck.profile.name, wanted.name),
            ));
        }
    }
    let model = ck.model(!args.raw_weights && ck.profile.decode.use_ema)?;
    let codec = Codec::new(&ck.profile, &model)?;
    let wave = read_wav(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let seq = codec.encode_sequence(&wave, mode)?;
    format::write(&args.output, &seq)?;
    eprintln!("encoded {} chunks ({:?}) to {}", seq.chunk_count(), mode, args.output.display());
    Ok(())
}

fn decode(args: DecodeArgs) -> Result<(), Failure> {
    let strategy: Strategy = args.strategy.parse()?;
    let ck = load_checkpoint(&args.checkpoint)?;
    let seq = format::read(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))
        .code(status::CORRUPT_LATENTS)?;
    let model = ck.model(!args.raw_weights && ck.profile.decode.use_ema)?;
    let codec = Codec::new(&ck.profile, &model)?;
    codec.check_sequence(&seq).code(status::PROFILE_MISMATCH)?;
    let steps = args.steps.unwrap_or(match strategy {
        Strategy::Autoregressive => ck.profile.decode.ar_steps,
        Strategy::Parallel => ck.profile.decode.parallel_steps,
    });
    let out = codec.decode(&seq, strategy, steps, args.seed)?;
    write_wav(&args.output, &out.wave)?;
    let peak = out.report.peak_activation_bytes;
    eprintln!(
        "decoded {} chunks ({:?}, {steps} steps): {} decoder calls, peak activation memory {peak} bytes ({:.2} MiB)",
        seq.chunk_count(),
        strategy,
        out.report.decoder_calls,
        peak as f64 / (1024.0 * 1024.0)
    );
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let refs = wav_names(&args.reference)?;
    let ests = wav_names(&args.estimate)?;
    let unmatched: Vec<&String> = refs.symmetric_difference(&ests).collect();
    if !unmatched.is_empty() || refs.is_empty() {
        for name in &unmatched {
            let side = if refs.contains(*name) { "reference" } else { "estimate" };
            eprintln!("unmatched: {name} (only in {side} directory)");
        }
        return Err(Failure::new(
            status::UNMATCHED_FILES,
            anyhow!("{} unmatched files, {} matched", unmatched.len(), refs.intersection(&ests).count()),
        ));
    }
    let mut report = MetricReport::default();
    for name in &refs {
        let r = read_wav(args.reference.join(name)).with_context(|| format!("reading reference {name}"))?;
        let e = read_wav(args.estimate.join(name)).with_context(|| format!("reading estimate {name}"))?;
        report.push(name.as_str(), &r, &e).with_context(|| format!("scoring {name}"))?;
    }
    let mut w = csv::Writer::from_path(&args.output)?;
    w.write_record(["file", "si_sdr_db", "lsd"])?;
    for row in report.rows.iter().chain(report.mean().as_ref()) {
        w.write_record([row.file.clone(), row.si_sdr_db.to_string(), row.lsd.to_string()])?;
    }
    w.flush()?;
    let mean = report.mean().expect("non-empty report");
    eprintln!("{} files: mean SI-SDR {:.2} dB, mean LSD {:.4}", report.rows.len(), mean.si_sdr_db, mean.lsd);
    Ok(())
}

fn inspect(args: InspectArgs) -> Result<(), Failure> {
    let bytes = format::read_all(&args.path).with_context(|| format!("reading {}", args.path.display()))?;
    let (header, meta) = format::inspect_bytes(&bytes).code(status::BAD_CONTAINER)?;
    let summary = format::summarize(header, meta).code(status::BAD_CONTAINER)?;
    println!("{summary}");
    Ok(())
}

fn gen_corpus(args: GenCorpusArgs) -> Result<(), Failure> {
    let profile = args.profile.resolve("toy")?;
    let kinds = match &args.kinds {
        None => ClipKind::ALL.to_vec(),
        Some(names) => names
            .iter()
            .map(|n| {
                ClipKind::ALL
                    .into_iter()
                    .find(|k| k.name() == n.as_str())
                    .ok_or_else(|| anyhow!("unknown clip kind {n:?}; expected tone, sweep, chirp or noise"))
            })
            .collect::<anyhow::Result<_>>()?,
    };
    fs::create_dir_all(&args.out)?;
    let clips =
        corpus::generate(&kinds, args.count, args.seed, profile.signal.sample_rate, profile.signal.channels, args.seconds)?;
    for c in &clips {
        write_wav(args.out.join(&c.name), &c.wave)?;
    }
    eprintln!("wrote {} clips to {}", clips.len(), args.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Train(a) => train(a),
        Command::Encode(a) => encode(a),
        Command::Decode(a) => decode(a),
        Command::Eval(a) => eval(a),
        Command::Inspect(a) => inspect(a),
        Command::GenCorpus(a) => gen_corpus(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
