use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spinprobe::scenario::units::Seed;
use spinprobe::scenario::{self, OutputFormat, Scenario, Stage};

const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Simulate and analyze a spin-1 defect sensor in a charge and spin noise
/// environment, driven by TOML scenario files.
#[derive(Parser)]
#[command(name = "spinprobe", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full chain of the scenario's protocol.
    Run(Common),
    /// Simulate windowed CW-ODMR spectra (cw_track).
    SimulateOdmr(Common),
    /// Fit spectra, build the peak trace and detect spectral states (cw_track).
    Track(Common),
    /// Track, then localize the charge trap behind each state (cw_track).
    Localize(Common),
    /// Reconstruct the noise spectrum from a decoupling sweep (dd_sweep).
    DdSpectrum(Common),
    /// Extract relaxation rates or fit a field-scanned spectrum (t1_scan, epr_scan).
    T1Epr(Common),
    /// Map σ_f over a sensor array and relate it to T₂ (noise_map).
    NoiseMap(Common),
    /// Check a scenario and print its canonical form.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
        /// Override the scenario seed (decimal or 0x-prefixed hex).
        #[arg(long, value_parser = parse_seed)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory; defaults to the scenario's `[output].path`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Worker threads (0: one per core). Results do not depend on this.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Override the scenario seed (decimal or 0x-prefixed hex).
    #[arg(long, value_parser = parse_seed)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn parse_seed(s: &str) -> Result<u64, String> {
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    }
    .map_err(|e| format!("not a 64-bit seed: {e}"))
}

struct Failure {
    code: u8,
    message: String,
}

impl From<spinprobe::Error> for Failure {
    fn from(e: spinprobe::Error) -> Self {
        let code = if e.is_validation() {
            EXIT_VALIDATION
        } else {
            EXIT_RUNTIME
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<Scenario, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure {
        code: EXIT_VALIDATION,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    let mut sc = scenario::parse_scenario(&text).map_err(|e| Failure {
        code: EXIT_VALIDATION,
        message: format!("{}: {e}", path.display()),
    })?;
    if let Some(s) = seed {
        sc.seed = Seed(s);
    }
    Ok(sc)
}

fn execute(stage: Option<Stage>, args: &Common) -> Result<(), Failure> {
    let sc = load(&args.scenario, args.seed)?;
    let stage = stage.unwrap_or_else(|| Stage::default_for(&sc.protocol));
    let bundle = scenario::run_with_threads(&sc, stage, args.threads)?;
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from(&sc.output.path));
    let format = match args.format {
        Some(Format::Csv) => OutputFormat::Csv,
        Some(Format::Json) => OutputFormat::Json,
        None => sc.output.format,
    };
    let written = bundle.export(&dir, format).map_err(|e| Failure {
        code: EXIT_RUNTIME,
        message: e.to_string(),
    })?;
    for w in &bundle.metadata.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!(
        "{} on {} scenario {}: {} tables",
        stage.name(),
        sc.protocol.kind(),
        &bundle.scenario_hash[..12],
        bundle.tables.len()
    );
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let (stage, args) = match &cli.command {
        Command::Run(a) => (None, a),
        Command::SimulateOdmr(a) => (Some(Stage::SimulateOdmr), a),
        Command::Track(a) => (Some(Stage::Track), a),
        Command::Localize(a) => (Some(Stage::Localize), a),
        Command::DdSpectrum(a) => (Some(Stage::DdSpectrum), a),
        Command::T1Epr(a) => (Some(Stage::T1Epr), a),
        Command::NoiseMap(a) => (Some(Stage::NoiseMap), a),
        Command::Validate { scenario, seed } => {
            let sc = load(scenario, *seed)?;
            print!("{}", sc.to_canonical_toml()?);
            eprintln!("ok: {} scenario {}", sc.protocol.kind(), sc.hash());
            return Ok(());
        }
    };
    execute(stage, args)
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
