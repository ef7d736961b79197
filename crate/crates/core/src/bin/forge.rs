//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 failure rate exceeded.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use forge_core::dataset_io::{
    evaluate_directories, generate_dataset_from_paths, make_phantom_ct, render_sample, write_metaimage, write_record,
    write_volume, PipelineConfig, PreparedCt,
};
use forge_core::sampler::SampleConfig;
use forge_core::ForgeError;

#[derive(Parser)]
#[command(
    name = "forge",
    version,
    about = "Synthetic X-ray dataset generation for a notched continuum manipulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum VolumeFormat {
    Native,
    Mhd,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic lower-limb CT.
    Phantom {
        /// Header path (`.json` or `.mhd`), or a directory to hold `phantom.json`.
        #[arg(long)]
        out: PathBuf,
        /// Pipeline config whose `phantom` section describes the phantom.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<VolumeFormat>,
    },
    /// Generate a full dataset with train/val/test splits.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// CT header files; each CT's id is its file stem.
        #[arg(long, num_args = 1.., required = true)]
        cts: Vec<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (0 = all cores). Overrides the config.
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides the config.
        #[arg(long)]
        samples_per_femur: Option<u32>,
    },
    /// Render a single sample configuration.
    RenderOne {
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSON file holding one sample configuration.
        #[arg(long)]
        theta_json: PathBuf,
        /// CT header file; its stem must equal the sample's `ct_id`.
        #[arg(long)]
        ct: PathBuf,
        /// The record is written to `<out>/<sample id>/`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against a generated dataset.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Report JSON path; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-sample CSV path.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Data(String),
    RateExceeded(String),
}

impl From<ForgeError> for Failure {
    fn from(e: ForgeError) -> Self {
        match e {
            ForgeError::InvalidArgument(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, ForgeError> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), ForgeError> {
    std::fs::write(path, text).map_err(|e| ForgeError::Io {
        context: format!("writing {}", path.display()),
        source: e,
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Phantom { out, config, format } => {
            let cfg = load_config(config.as_deref())?;
            let ct = make_phantom_ct(&cfg.phantom)?;
            let path = if out.extension().is_some() {
                out
            } else {
                let ext = match format {
                    Some(VolumeFormat::Mhd) => "mhd",
                    _ => "json",
                };
                out.join(format!("phantom.{ext}"))
            };
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("creating {}: {e}", dir.display())))?;
            }
            let mhd = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("mhd"));
            if mhd {
                write_metaimage(&ct, &path)?;
            } else {
                write_volume(&ct, &path, Some(cfg.phantom.default_alignment()))?;
            }
            println!("{}", path.display());
        }
        Command::Generate {
            config,
            cts,
            seed,
            out,
            workers,
            samples_per_femur,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(n) = samples_per_femur {
                cfg.samples_per_femur = n;
            }
            cfg.validate()?;
            let report = generate_dataset_from_paths(&cfg, &cts, seed, &out)?;
            println!(
                "{} records: {} generated, {} up to date, {} failed",
                report.total(),
                report.generated,
                report.reused,
                report.failures.len()
            );
            if report.failure_rate_exceeded() {
                return Err(Failure::RateExceeded(format!(
                    "failure rate {:.4} exceeds {:.4}",
                    report.failure_rate(),
                    report.max_failure_rate
                )));
            }
        }
        Command::RenderOne {
            config,
            theta_json,
            ct,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let text = std::fs::read_to_string(&theta_json)
                .map_err(|e| Failure::Data(format!("reading {}: {e}", theta_json.display())))?;
            let sample: SampleConfig =
                serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", theta_json.display())))?;
            let prepared = PreparedCt::load(&ct, &cfg)?;
            let rec = render_sample(&cfg, &prepared, &sample, None)?;
            let dir = out.join(sample.sample_id());
            write_record(&rec, &dir)?;
            println!("{}", dir.display());
        }
        Command::Metrics { pred, gt, out, csv } => {
            let report = evaluate_directories(&pred, &gt)?;
            let json = serde_json::to_string_pretty(&report).map_err(ForgeError::from)?;
            match out {
                Some(p) => write_text(&p, &json)?,
                None => println!("{json}"),
            }
            if let Some(p) = csv {
                write_text(&p, &report.to_csv())?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::RateExceeded(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
