//! `nirev`: dataset synthesis, module entry points and verification checks.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{exit_code_for, Outcome};

#[derive(Parser, Debug)]
#[command(name = "nirev", version, about = "NIR deblurring / event denoising toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// TOML configuration file; unspecified keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic dataset from paired source scenes.
    Synth {
        /// Directory of `<scene>_vis.pgm` / `<scene>_nir.pgm` pairs.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Simulate clean (and noisy) events from an ordered list of frames.
    SimulateEvents {
        #[arg(required = true)]
        frames: Vec<PathBuf>,
        /// Also write the streams as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Convert an EVT1 (or CSV) event file into a VOX1 voxel grid.
    Voxelize {
        events: PathBuf,
        #[arg(long)]
        bins: Option<usize>,
        /// Sensor width, required for CSV input.
        #[arg(long)]
        width: Option<u32>,
        /// Sensor height, required for CSV input.
        #[arg(long)]
        height: Option<u32>,
    },
    /// Compute the structural consistency map of a visible / NIR pair.
    Consistency { visible: PathBuf, nir: PathBuf },
    /// Score predictions: batch mode over a manifest, or a single pair.
    Metrics {
        #[arg(long, requires = "predictions", conflicts_with_all = ["pred", "truth"])]
        manifest: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Exit with status 3 if the mean PSNR falls below this value.
        #[arg(long)]
        min_psnr: Option<f64>,
        #[arg(long, requires = "truth")]
        pred: Option<PathBuf>,
        #[arg(long, requires = "pred")]
        truth: Option<PathBuf>,
    },
    /// Verify the analytic fusion backward against finite differences.
    GradCheck {
        #[arg(long, default_value_t = 10)]
        instances: usize,
        #[arg(long, default_value_t = 3)]
        channels: usize,
        #[arg(long, default_value_t = 6)]
        size: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Run the untrained network on a blurry frame and a voxel grid.
    Forward {
        blurry: PathBuf,
        voxels: PathBuf,
        /// PRM1 parameter file; random seeded parameters when absent.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Write the parameters used to this PRM1 file.
        #[arg(long)]
        save_params: Option<PathBuf>,
    },
    /// Estimate a homography from point correspondences and optionally warp.
    Calibrate {
        /// CSV with columns `src_x,src_y,dst_x,dst_y`.
        correspondences: PathBuf,
        #[arg(long)]
        warp_frame: Option<PathBuf>,
        #[arg(long)]
        warp_events: Option<PathBuf>,
        /// Output width for warped data (defaults to the input's).
        #[arg(long)]
        width: Option<u32>,
        #[arg(long)]
        height: Option<u32>,
    },
    /// Print the fully resolved configuration as TOML.
    PrintConfig,
    /// Report the network parameter count for the configured channel plan.
    ParamsCount,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::DataIncomplete(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Ok(Outcome::CheckFailed(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
