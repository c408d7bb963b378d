//! `dpmfuse` command-line runner.
//!
//! Exit statuses: 0 success, 1 unexpected failure, 2 bad arguments,
//! 3 unreadable input, 4 NaN or infinity detected, 5 intervention timestep
//! missing from the record, 6 a built-in verification failed.

mod commands;
mod exit;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dpmfuse::inversion::InversionVariant;
use dpmfuse::lab::SignalKind;
use dpmfuse::sampler::{HistoryPolicy, SolverMode};
use dpmfuse::schedule::{NoiseSchedule, ScheduleKind, DEFAULT_LAMBDA_MAX, DEFAULT_LAMBDA_MIN};

#[derive(Parser)]
#[command(name = "dpmfuse", version, about = "Diffusion inversion and latent fusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic test signal.
    Gen(GenArgs),
    /// Invert a signal or latent into a record of noisy latents.
    Invert(InvertArgs),
    /// Sample from pure noise with an analytic denoiser.
    Sample(SampleArgs),
    /// Fuse a reference into an inverted original at one or more timesteps.
    Fuse(FuseArgs),
    /// Compare reconstruction quality of the three inversion variants.
    Compare(CompareArgs),
    /// Sweep intervention timesteps across solver orders.
    Sweep(SweepArgs),
    /// Replay a record with its noise maps and check exact reconstruction.
    Roundtrip(RoundtripArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sde,
    Ode,
}

impl From<Mode> for SolverMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Sde => SolverMode::Sde,
            Mode::Ode => SolverMode::Ode,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    A,
    B,
    C,
}

impl Variant {
    fn resolve(self, mode: SolverMode) -> InversionVariant {
        match (self, mode) {
            (Variant::A, SolverMode::Sde) => InversionVariant::DeterministicSde,
            (Variant::A, SolverMode::Ode) => InversionVariant::DeterministicOde,
            (Variant::B, _) => InversionVariant::ForwardDiffusion,
            (Variant::C, _) => InversionVariant::StochasticRetained,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum History {
    Persist,
    Reset,
}

impl From<History> for HistoryPolicy {
    fn from(h: History) -> Self {
        match h {
            History::Persist => HistoryPolicy::Persist,
            History::Reset => HistoryPolicy::Reset,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    LogLinear,
    Cosine,
}

#[derive(Clone, Copy, ValueEnum)]
enum Cond {
    Null,
    Reference,
}

fn parse_signal_kind(s: &str) -> Result<SignalKind, String> {
    s.replace('-', "_").parse().map_err(|e: dpmfuse::Error| e.to_string())
}

#[derive(Args, Clone)]
struct ScheduleArgs {
    /// Number of solver steps; the grid has one more point than this.
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, value_enum, default_value_t = Kind::LogLinear)]
    schedule: Kind,
    #[arg(long, default_value_t = DEFAULT_LAMBDA_MAX, allow_negative_numbers = true)]
    lambda_max: f64,
    #[arg(long, default_value_t = DEFAULT_LAMBDA_MIN, allow_negative_numbers = true)]
    lambda_min: f64,
}

impl ScheduleArgs {
    fn build(&self) -> anyhow::Result<NoiseSchedule> {
        let kind = match self.schedule {
            Kind::LogLinear => ScheduleKind::LogLinearLambda,
            Kind::Cosine => ScheduleKind::Cosine,
        };
        Ok(NoiseSchedule::build(kind, self.steps + 1, self.lambda_max, self.lambda_min)?)
    }
}

#[derive(Args, Clone)]
struct RenderArgs {
    /// Rendered length in samples; defaults to the input signal's length.
    #[arg(long)]
    length: Option<usize>,
    /// Rendered sample rate; defaults to the input signal's rate.
    #[arg(long)]
    sample_rate: Option<u32>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_parser = parse_signal_kind)]
    kind: SignalKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = dpmfuse::lab::signal::DEFAULT_SIGNAL_LENGTH)]
    length: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write a spectrogram (`.pgm` or `.csv`).
    #[arg(long)]
    spectrogram: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    frame: usize,
    #[arg(long, default_value_t = 128)]
    hop: usize,
}

#[derive(Args)]
struct InvertArgs {
    /// Input WAV or latent JSON.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Ode)]
    mode: Mode,
    #[arg(long, value_enum, default_value_t = Variant::A)]
    variant: Variant,
    #[command(flatten)]
    schedule: ScheduleArgs,
    /// Last inverted timestep; defaults to the noisiest grid point.
    #[arg(long)]
    t_max: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = dpmfuse::denoiser::DEFAULT_LATENT_DIM)]
    dim: usize,
    /// Output record (JSON lines).
    #[arg(long)]
    out: PathBuf,
    /// Check the noise maps and, for variant a, exact replay.
    #[arg(long)]
    verify: bool,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[arg(long, default_value_t = 1)]
    order: usize,
    #[arg(long, value_enum, default_value_t = Mode::Ode)]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Cond::Null)]
    cond: Cond,
    #[arg(long, default_value_t = 1.0)]
    guidance: f64,
    /// Oracle config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reference WAV or latent JSON for oracles that need one.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, default_value_t = dpmfuse::denoiser::DEFAULT_LATENT_DIM)]
    dim: usize,
    #[command(flatten)]
    render: RenderArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    record: PathBuf,
    /// Reference WAV or latent JSON.
    #[arg(long)]
    reference: PathBuf,
    /// One timestep, or a comma list for a sweep table.
    #[arg(long, value_delimiter = ',', required = true)]
    intervene_t: Vec<usize>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
    order: u8,
    #[arg(long, value_enum, default_value_t = Mode::Ode)]
    mode: Mode,
    #[arg(long, value_enum, default_value_t = History::Persist)]
    history: History,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Oracle config (JSON); defaults to a memorizing oracle of the reference.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    render: RenderArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Signal kinds to generate; defaults to all four.
    #[arg(long, value_delimiter = ',', value_parser = parse_signal_kind)]
    kinds: Vec<SignalKind>,
    /// Seeds used are `seed..seed + trials`.
    #[arg(long, default_value_t = 1)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Mode::Ode)]
    mode: Mode,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[arg(long, default_value_t = dpmfuse::lab::signal::DEFAULT_SIGNAL_LENGTH)]
    length: usize,
    #[arg(long, default_value_t = dpmfuse::denoiser::DEFAULT_LATENT_DIM)]
    dim: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    record: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    orders: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    t_values: Vec<usize>,
    #[arg(long, value_enum, default_value_t = Mode::Ode)]
    mode: Mode,
    #[arg(long, value_enum, default_value_t = History::Persist)]
    history: History,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RoundtripArgs {
    #[arg(long)]
    record: PathBuf,
    #[command(flatten)]
    render: RenderArgs,
    /// Directory for the replayed trajectory and renderings.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Invert(a) => commands::invert(a),
        Command::Sample(a) => commands::sample(a),
        Command::Fuse(a) => commands::fuse(a),
        Command::Compare(a) => commands::compare(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Roundtrip(a) => commands::roundtrip(a),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            let code = exit::classify(&err);
            eprintln!("error: {err:#}");
            ExitCode::from(code as u8)
        }
    }
}
