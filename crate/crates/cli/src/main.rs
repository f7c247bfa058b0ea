mod overrides;
mod pipeline;

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use overrides::Overrides;
use pipeline::CliError;

/// Virtual NV-center ODMR instrument.
#[derive(Parser, Debug)]
#[command(name = "nvodmr", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Experiment configuration (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Noise seed; overrides noise.seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file for single-file commands.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Static Lorentzian spectrum plus Gaussian noise.
    SynthSpectrum,
    /// Swept-microwave measurement through the lock-in.
    Sweep,
    /// Fit a multi-Lorentzian model to a trace.
    Fit {
        /// Trace CSV.
        #[arg(long)]
        input: PathBuf,
        /// Fit exactly this many dips.
        #[arg(long, conflicts_with = "candidates")]
        dips: Option<usize>,
        /// Dip counts to compare by BIC, e.g. 1,2,4.
        #[arg(long, value_delimiter = ',')]
        candidates: Option<Vec<usize>>,
    },
    /// Dip pattern of the four orientations for a field.
    Pattern {
        /// Field direction or vector in mT, e.g. 1,1,1.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        b: Option<Vec<f64>>,
        /// Field magnitude, e.g. 2mT, 500uT, 0.002T; plain numbers are mT.
        #[arg(long)]
        scale: Option<String>,
    },
    /// Reconstruct the field vector from eight resonance frequencies.
    Invert {
        /// Eight frequencies in MHz; without it the configured field is simulated.
        #[arg(long, value_delimiter = ',')]
        freqs: Option<Vec<f64>>,
    },
    /// Raster-scan the phantom, stitch tiles and write images.
    Scan,
    /// ODMR sweep with the focus parked at a point.
    OdmrPoint {
        /// Focus in µm; overrides scan.point_um.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        point: Option<Vec<f64>>,
    },
    /// Signal against excitation power at a point.
    PowerSeries {
        /// Focus in µm; overrides scan.point_um.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        point: Option<Vec<f64>>,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("NVODMR_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| CliError::Input(format!("NVODMR_THREADS must be a non-negative integer, got '{v}'")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| pipeline::run(&cli.command, &cli.common, &cli.overrides));
    match result {
        Ok(outcome) => {
            let text = serde_json::to_string_pretty(&outcome.report).expect("report serializes");
            // a closed pipe downstream is not our failure
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            ExitCode::from(outcome.status)
        }
        Err(e) => {
            eprintln!("nvodmr: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
