//! `texturekit` command-line frontend.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 I/O or input
//! format error, 3 invariant or self-test failure.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Io(String),
    Invariant(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Io(_) => 2,
            Failure::Invariant(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Io(m) | Failure::Invariant(m) => m,
        }
    }
}

impl From<texturekit::Error> for Failure {
    fn from(e: texturekit::Error) -> Self {
        use texturekit::Error as E;
        let msg = e.to_string();
        match e {
            E::Io { .. }
            | E::UnreadableImage { .. }
            | E::UnsupportedBitDepth { .. }
            | E::BadMagic { .. }
            | E::Truncated(_)
            | E::DimOverflow(_)
            | E::BadRank(_)
            | E::DuplicateName(_)
            | E::MissingWeight(_) => Failure::Io(msg),
            E::ShapeMismatch(_) | E::InvalidConfig(_) | E::TooSmall(_) => Failure::Usage(msg),
            _ => Failure::Invariant(msg),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "texturekit", version, about = "Structural and statistical texture features")]
struct Cli {
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct OutArg {
    /// Directory for tensors, JSON records and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Contourlet decomposition into per-level directional subbands.
    Contourlet {
        input: PathBuf,
        #[arg(long)]
        levels: Option<usize>,
        /// Directional depth per level, e.g. 4,3.
        #[arg(long, value_delimiter = ',')]
        dfb_levels: Option<Vec<u32>>,
        #[arg(long)]
        factor: Option<usize>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Intensity equalization over the whole input or one region.
    Tiem {
        input: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Region as top,left,height,width.
        #[arg(long, value_delimiter = ',')]
        region: Option<Vec<usize>>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Co-occurrence equalization with dilated horizontal pairs.
    Ctiem {
        input: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        steps: Option<Vec<usize>>,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Anchor-based importance sampling of regions; prints JSON.
    Sample {
        input: PathBuf,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        k: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Distillation losses between teacher and student output directories.
    DistillLoss {
        #[arg(long)]
        teacher_dir: PathBuf,
        #[arg(long)]
        student_dir: PathBuf,
        #[arg(long)]
        lambda1: Option<f64>,
        #[arg(long)]
        lambda2: Option<f64>,
        #[arg(long)]
        lambda3: Option<f64>,
        /// Externally computed segmentation loss.
        #[arg(long, default_value_t = 0.0)]
        l_seg: f64,
        /// Externally computed adversarial loss.
        #[arg(long, default_value_t = 0.0)]
        l_adv: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pyramid plus directional round trip; reports the max error.
    Reconstruct {
        input: PathBuf,
        /// Directional depth.
        #[arg(long, default_value_t = 3)]
        m: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs the built-in invariant checks.
    Selftest {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("TEXTUREKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("TEXTUREKIT_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(format!("cannot size worker pool: {e}")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    let cfg = config::RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Contourlet { input, levels, dfb_levels, factor, out } => {
            commands::contourlet(&cfg, &input, levels, dfb_levels, factor, &out.out)
        }
        Command::Tiem { input, n, theta, weights, region, out } => {
            commands::tiem(&cfg, &input, n, theta, weights, region, &out.out)
        }
        Command::Ctiem { input, n, theta, steps, weights, out } => {
            commands::ctiem(&cfg, &input, n, theta, steps, weights, &out.out)
        }
        Command::Sample { input, m, k, beta, seed, out } => {
            commands::sample(&cfg, &input, m, k, beta, seed, out.as_deref())
        }
        Command::DistillLoss { teacher_dir, student_dir, lambda1, lambda2, lambda3, l_seg, l_adv, out } => {
            let lambdas = [lambda1, lambda2, lambda3];
            commands::distill_loss(&cfg, &teacher_dir, &student_dir, lambdas, l_seg, l_adv, out.as_deref())
        }
        Command::Reconstruct { input, m, out } => commands::reconstruct(&input, m, out.as_deref()),
        Command::Selftest { out } => commands::selftest(out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("texturekit: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
