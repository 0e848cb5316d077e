use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bistream_core::checkpoint::Checkpoint;
use bistream_core::gradsuite;
use bistream_core::msrb::MsrbModel;
use bistream_core::pipeline::{self, colorize, config::STANDARD_FRAME_SIZE, eval, Colorizer, RunConfig, Sources};
use bistream_core::Result;

#[derive(Parser)]
#[command(name = "bistream", version, about = "Exemplar-based video colorization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Colorize a directory of grayscale PNG frames.
    Colorize {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        ref_first: PathBuf,
        /// Omit for single-reference mode.
        #[arg(long)]
        ref_last: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        features_dir: Option<PathBuf>,
        #[arg(long)]
        priors_dir: Option<PathBuf>,
        /// Trained MSRB weights; without it the fused warp passes through.
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Train the MSRB on clips of colour frames.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare predicted frames with ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<bool> {
    pipeline::configure_threads()?;
    match cli.command {
        Command::Colorize {
            frames,
            ref_first,
            ref_last,
            out,
            config,
            features_dir,
            priors_dir,
            ckpt,
        } => {
            let config = load_config(config.as_deref())?;
            let model = match &ckpt {
                Some(dir) => MsrbModel::from_checkpoint(config.msrb_config(), &Checkpoint::load(dir)?)?,
                None => {
                    log::warn!("no checkpoint given; using the zero-residual model");
                    MsrbModel::zeros(config.msrb_config())?
                }
            };
            let resize = config.resize_frames.then_some(STANDARD_FRAME_SIZE);
            let clip = pipeline::load_clip(&frames, &ref_first, ref_last.as_deref(), resize)?;
            let colorizer = Colorizer::new(model, config)?;
            let sources = Sources {
                features_dir: features_dir.as_deref(),
                priors_dir: priors_dir.as_deref(),
            };
            let results = colorizer.colorize_clip(&clip, &sources)?;
            colorize::write_frames(&out, &results)?;
            println!("colorized {} frames into {}", results.len(), out.display());
            Ok(true)
        }
        Command::Train { data, out, config } => {
            let config = load_config(config.as_deref())?;
            let summary = pipeline::train(&data, &out, &config)?;
            match (summary.first, summary.last) {
                (Some(a), Some(b)) => println!("{} steps, total loss {:.6} -> {:.6}", summary.steps, a.total, b.total),
                _ => println!("0 steps; checkpoint holds the initialization"),
            }
            println!("checkpoint: {}", summary.checkpoint_dir.display());
            Ok(true)
        }
        Command::Eval {
            pred,
            gt,
            report,
            config,
        } => {
            let config = load_config(config.as_deref())?;
            let r = pipeline::evaluate_dirs(&pred, &gt, &config.cdc)?;
            eval::write_report(&report, &r)?;
            println!("{}", summary_line(&r));
            Ok(true)
        }
        Command::Gradcheck { seed } => {
            let results = gradsuite::run_suite(seed)?;
            let mut ok = true;
            for r in &results {
                let status = if r.passed() { "ok" } else { "FAIL" };
                println!("{status:4} {:40} max rel err {:.3e}", r.name, r.max_rel_err);
                ok &= r.passed();
            }
            Ok(ok)
        }
    }
}

fn summary_line(r: &bistream_core::metrics::EvalReport) -> String {
    let psnr = match r.psnr_mean.db() {
        Some(v) => format!("{v:.4} dB"),
        None => "identical".into(),
    };
    let cdc = r.cdc.map(|v| format!("{v:.6}")).unwrap_or_else(|| "n/a".into());
    format!(
        "frames {}  psnr {psnr}  ssim {:.4}  cdc {cdc}",
        r.frame_count, r.ssim_mean
    )
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
