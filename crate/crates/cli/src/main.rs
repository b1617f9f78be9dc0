//! `sda`: command-line front end for the SDA simulator.
//!
//! Local subcommands compute and write content-addressed artifacts; `serve`
//! runs the control service and `ctl` talks to one.

mod local;
mod output;
mod remote;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use output::Format;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Simulation(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io(_) => "io",
            CliError::Simulation(_) => "simulation",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Simulation(_) => 4,
        }
    }

    pub fn sim(e: impl std::fmt::Display) -> Self {
        CliError::Simulation(e.to_string())
    }

    pub fn usage(e: impl std::fmt::Display) -> Self {
        CliError::Usage(e.to_string())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "sda", version, about = "Software-defined array simulator: beams, link budget, PPDU modem, beam sweeps, element test and control service")]
pub struct Cli {
    /// Directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Report format on stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Far-field pattern of the broadside beam or of codebook beams.
    Pattern(PatternArgs),
    /// The 21-beam steering codebook as I/Q DAC codes.
    Codebook(CodebookArgs),
    /// Link range, sensitivity and PPDU data rates.
    Linkbudget(LinkBudgetArgs),
    /// Build a PPDU from a payload and write its samples.
    PpduEncode(EncodeArgs),
    /// Decode a PPDU sample file.
    PpduDecode(DecodeArgs),
    /// Encode, add noise and decode a payload.
    Loopback(LoopbackArgs),
    /// Exhaustive 21x21 beam sweep over a scenario channel.
    Sweep(SweepArgs),
    /// Code-multiplexed element test over a phase sweep.
    Comet(CometArgs),
    /// Run the control service.
    Serve(ServeArgs),
    /// Send commands to a running control service.
    Ctl(CtlArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ElementArg {
    Isotropic,
    Cosine,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReferenceArg {
    Absolute,
    Normalized,
}

#[derive(Debug, Args)]
pub struct PatternArgs {
    /// Pattern scenario name or file.
    #[arg(long, default_value = "broadside-pattern")]
    pub scenario: String,
    /// Codebook beam index (1..21); repeat for several. Replaces the scenario's list.
    #[arg(long = "beam")]
    pub beams: Vec<u8>,
    /// Angle step in degrees.
    #[arg(long)]
    pub step: Option<f64>,
    /// Elements per row.
    #[arg(long)]
    pub azimuth: Option<usize>,
    /// Number of rows.
    #[arg(long)]
    pub elevation: Option<usize>,
    /// Element pitch in wavelengths at the carrier.
    #[arg(long)]
    pub spacing_wl: Option<f64>,
    /// Element radiation model.
    #[arg(long, value_enum)]
    pub element: Option<ElementArg>,
    /// Absolute dBi or relative to each pattern's peak.
    #[arg(long, value_enum)]
    pub reference: Option<ReferenceArg>,
}

#[derive(Debug, Args)]
pub struct CodebookArgs {
    /// Carrier frequency in Hz.
    #[arg(long, default_value_t = 28e9)]
    pub carrier_hz: f64,
}

#[derive(Debug, Args)]
pub struct LinkBudgetArgs {
    /// Transmit EIRP in dBm.
    #[arg(long, default_value_t = 32.0, allow_negative_numbers = true)]
    pub eirp: f64,
    /// Receive antenna gain in dBi.
    #[arg(long, default_value_t = 14.0, allow_negative_numbers = true)]
    pub rx_gain: f64,
    /// Receiver noise figure in dB.
    #[arg(long, default_value_t = 6.0)]
    pub nf: f64,
    /// Noise bandwidth in Hz.
    #[arg(long, default_value_t = 1.2e9)]
    pub bandwidth: f64,
    /// Required SNR in dB.
    #[arg(long, default_value_t = sda_core::linkbudget::DEFAULT_REQUIRED_SNR_DB, allow_negative_numbers = true)]
    pub snr_req: f64,
    /// Link margin in dB.
    #[arg(long, default_value_t = 20.0)]
    pub margin: f64,
    /// Atmospheric loss in dB.
    #[arg(long, default_value_t = 0.0)]
    pub atm_loss: f64,
    /// Carrier frequency in Hz.
    #[arg(long, default_value_t = 28e9)]
    pub carrier_hz: f64,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Payload file, or - for stdin.
    #[arg(long)]
    pub payload: String,
    /// bpsk, qpsk, 16qam or 64qam.
    #[arg(long = "mod", default_value = "qpsk")]
    pub modulation: String,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// SDAIQ sample file.
    #[arg(long)]
    pub input: PathBuf,
    /// Write the decoded payload here (- for stdout).
    #[arg(long)]
    pub payload_out: Option<String>,
}

#[derive(Debug, Args)]
pub struct LoopbackArgs {
    /// Payload file, or - for stdin.
    #[arg(long)]
    pub payload: String,
    /// bpsk, qpsk, 16qam or 64qam.
    #[arg(long = "mod", default_value = "qpsk")]
    pub modulation: String,
    /// Per-sample SNR in dB; noiseless when omitted.
    #[arg(long, allow_negative_numbers = true)]
    pub snr_db: Option<f64>,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Sweep scenario name or file.
    #[arg(long, default_value = "tabletop-4p5m")]
    pub scenario: String,
    /// Channel and noise seed.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Frames per beam pair.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Visit beam pairs one at a time instead of in parallel.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct CometArgs {
    /// Element-test scenario name or file.
    #[arg(long, default_value = "comet-element-gain")]
    pub scenario: String,
    /// Detector noise seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Detector noise standard deviation; overrides the scenario.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Listen address; defaults to $SDA_BIND or 127.0.0.1:5225.
    #[arg(long)]
    pub bind: Option<String>,
    /// Sweep scenario hosting the nodes.
    #[arg(long, default_value = sda_control::DEFAULT_SCENARIO)]
    pub scenario: String,
    /// Channel and noise seed.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Per-command time limit in seconds.
    #[arg(long, default_value_t = 30.0)]
    pub timeout_s: f64,
}

#[derive(Debug, Args)]
pub struct CtlArgs {
    /// Service address; defaults to $SDA_BIND or 127.0.0.1:5225.
    #[arg(long)]
    pub addr: Option<String>,
    /// File with one {"cmd": ..., "args": {...}} object per line (- for stdin).
    #[arg(long, conflicts_with_all = ["cmd", "args"])]
    pub script: Option<String>,
    /// Command name, e.g. set_beam.
    #[arg(required_unless_present = "script")]
    pub cmd: Option<String>,
    /// Command arguments as a JSON object.
    pub args: Option<String>,
}

fn run(cli: Cli) -> CliResult {
    let out = output::Output::new(cli.out_dir, cli.format);
    match cli.command {
        Command::Pattern(a) => local::pattern(&out, &a),
        Command::Codebook(a) => local::codebook(&out, &a),
        Command::Linkbudget(a) => local::linkbudget(&out, &a),
        Command::PpduEncode(a) => local::ppdu_encode(&out, &a),
        Command::PpduDecode(a) => local::ppdu_decode(&out, &a),
        Command::Loopback(a) => local::loopback(&out, &a),
        Command::Sweep(a) => local::sweep(&out, &a),
        Command::Comet(a) => local::comet(&out, &a),
        Command::Serve(a) => remote::serve(&out, &a),
        Command::Ctl(a) => remote::ctl(&out, &a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            let msg: Vec<&str> = text.lines().take_while(|l| !l.starts_with("Usage:")).map(str::trim).filter(|l| !l.is_empty()).collect();
            eprintln!("sda: usage error: {}", msg.join(" ").trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("sda: {} error: {msg}", e.kind());
            ExitCode::from(e.exit_code())
        }
    }
}
