//! `resinv`: train, run and evaluate the resolution-invariant autoencoder.
//!
//! Exit codes: 0 success, 1 contract violation (bad shapes, out-of-domain
//! resolutions, invalid ranges), 2 format, config, IO or usage error.

mod commands;

use clap::{Args, Parser, Subcommand};
use resinv_core::Spacing;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "resinv", version, about = "Resolution-invariant autoencoder toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run config; omitted keys take their documented defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Model checkpoint (RTF); defaults to the config's `checkpoint`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct GammaArgs {
    /// Gamma table CSV; estimated from the synthetic corpus when omitted.
    #[arg(long)]
    pub gamma: Option<PathBuf>,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [v] if v > 0 => Ok((v, v)),
        [h, w] if h > 0 && w > 0 => Ok((h, w)),
        _ => Err(format!("expected one or two positive sizes, got {s:?}")),
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic corpus as PGM images plus labels.csv.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Number of images (defaults to the config's n_train).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Estimate the factor-to-gamma table on the synthetic corpus.
    EstimateGamma {
        #[command(flatten)]
        common: Common,
        /// Comma-separated degradation factors; must include 1.
        #[arg(long, value_delimiter = ',')]
        factors: Option<Vec<f64>>,
        /// Calibration subset size.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Train on the synthetic corpus; writes model.rtf, loss.csv and gamma.csv.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        gamma: GammaArgs,
    },
    /// Encode a PGM image to latent.rtf (mu and logvar).
    Encode {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        input: PathBuf,
        /// Pixel spacing in mm, "y,x" or a single isotropic value.
        #[arg(long)]
        input_res: Spacing,
    },
    /// Decode the mean latent of latent.rtf to decoded.pgm and decoded.rtf.
    Decode {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        latent: PathBuf,
        /// Output grid "h,w".
        #[arg(long, value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long)]
        target_res: Spacing,
    },
    /// Monte-Carlo super-resolution: mean.pgm, uncertainty.pgm and stats.csv.
    Superres {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        gamma: GammaArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        input_res: Spacing,
        #[arg(long)]
        target_res: Spacing,
        /// Output grid; defaults to the input extent at the target spacing.
        #[arg(long, value_parser = parse_size)]
        target_size: Option<(usize, usize)>,
        #[arg(long, default_value_t = 40)]
        draws: usize,
    },
    /// Per-factor PSNR/SSIM and uncertainty on a held-out synthetic split.
    EvalSuperres {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        gamma: GammaArgs,
    },
    /// Train latent classifiers on a frozen encoder; writes the 2x3 AUROC grid.
    Classify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        /// Encode coarse inputs with a fixed factor-2-per-layer plan instead.
        #[arg(long)]
        fixed_factor: bool,
    },
    /// PSNR and SSIM between two PGM images on a [0, 1] range.
    Metrics {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
