//! `sigma`: command-line front end for routing tables, data preparation,
//! training, model surgery and the communication simulator.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage or config error.

mod commsim;
mod data;
mod io;
mod model;
mod rre;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sigma_core::Error;

#[derive(Parser)]
#[command(name = "sigma", version, about = "Random-routed-experts sparse decoder toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or query routing tables.
    #[command(subcommand)]
    Rre(RreCommand),
    /// Format, pack, pad, inspect or synthesize training data.
    #[command(subcommand)]
    Data(DataCommand),
    /// Initialize a model from a config and save it as a checkpoint.
    Init(InitArgs),
    /// Train a model and write a checkpoint plus a loss-trace CSV.
    Train(TrainArgs),
    /// Mean next-token loss of a checkpoint on an instance file.
    Eval(EvalArgs),
    /// Build a sparse model from a dense donor checkpoint.
    Inherit(InheritArgs),
    /// Cut one domain out of a checkpoint as a standalone model.
    Extract(ExtractArgs),
    /// Communication and upload simulation.
    #[command(subcommand)]
    Commsim(CommsimCommand),
    /// Finite-difference check of the model gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Subcommand)]
enum RreCommand {
    /// Build a routing table and write it to a file.
    Table(rre::TableArgs),
    /// Look up the expert a token is routed to.
    Route(rre::RouteArgs),
}

#[derive(Subcommand)]
enum DataCommand {
    /// Tokenize text (one document per line) and frame each document.
    Format(data::FormatArgs),
    /// Concatenate formatted documents and cut fixed-length instances.
    Pack(data::PackArgs),
    /// Pad or truncate each formatted document to a fixed length.
    Pad(data::PadArgs),
    /// Summarize an instance file.
    Stats(data::StatsArgs),
    /// Write the synthetic multi-domain corpus.
    Synth(data::SynthArgs),
}

#[derive(Subcommand)]
enum CommsimCommand {
    /// Global vs grouped all-to-all volume as CSV.
    Volume(commsim::VolumeArgs),
    /// Bounded-concurrency upload schedule as CSV.
    Upload(commsim::UploadArgs),
}

#[derive(Args)]
struct InitArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Instance file or directory of `.pgsi` files; overrides `data.path`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    /// Checkpoint directory; overrides `out.checkpoint`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Loss-trace CSV; defaults to `out.trace` or `<out>/trace.csv`.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// File of `start..end:d,d` stages; overrides `train.stages`.
    #[arg(long)]
    stage_schedule: Option<PathBuf>,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Targets equal to this token are ignored.
    #[arg(long)]
    pad: Option<u32>,
}

#[derive(Args)]
struct InheritArgs {
    /// Dense donor checkpoint.
    #[arg(long)]
    donor: PathBuf,
    /// Donor vocabulary, one token per line; defaults to `#0..#V`.
    #[arg(long)]
    donor_vocab: Option<PathBuf>,
    /// Tokens appended to the donor vocabulary, one per line.
    #[arg(long)]
    vocab_add: Option<PathBuf>,
    /// Config whose `model.*` keys describe the target; `model.vocab` is
    /// replaced by the merged vocabulary size.
    #[arg(long)]
    config: PathBuf,
    /// Seed for embedding rows of new tokens.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Write the merged vocabulary here.
    #[arg(long)]
    vocab_out: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    domain: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Check a checkpoint; otherwise a fresh model from `--config`.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    domain: usize,
    /// Length of the random token sequence.
    #[arg(long, default_value_t = 8)]
    len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    max_coords: usize,
    /// Exit with status 1 when the max relative error reaches this.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

/// Runs one verb; `Ok(false)` means it completed but its check failed.
fn run(cli: Cli) -> sigma_core::Result<bool> {
    let done = match cli.command {
        Command::Rre(RreCommand::Table(a)) => rre::table(a),
        Command::Rre(RreCommand::Route(a)) => rre::route(a),
        Command::Data(DataCommand::Format(a)) => data::format(a),
        Command::Data(DataCommand::Pack(a)) => data::pack(a),
        Command::Data(DataCommand::Pad(a)) => data::pad(a),
        Command::Data(DataCommand::Stats(a)) => data::stats(a),
        Command::Data(DataCommand::Synth(a)) => data::synth(a),
        Command::Init(a) => model::init(a),
        Command::Train(a) => model::train(a),
        Command::Eval(a) => model::eval(a),
        Command::Inherit(a) => model::inherit(a),
        Command::Extract(a) => model::extract(a),
        Command::Commsim(CommsimCommand::Volume(a)) => commsim::volume(a),
        Command::Commsim(CommsimCommand::Upload(a)) => commsim::upload(a),
        Command::Gradcheck(a) => return model::gradcheck(a),
    };
    done.map(|()| true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("sigma: {e}");
            match e {
                Error::Config(_) | Error::InvalidSpec(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
