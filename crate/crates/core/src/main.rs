use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use skysentry::geometry::{fit_calib_detailed, read_calib_csv};
use skysentry::runner::{self, FrameSource, PipelineConfig, RunError};
use skysentry::synthsky::{presets, Scenario};

#[derive(Parser)]
#[command(name = "skysentry", version, about = "Bird-protection sky surveillance pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scenario and print its ground truth as JSON lines.
    Simulate {
        scenario: PathBuf,
        /// Write one PGM per camera frame into this directory.
        #[arg(long)]
        dump_frames: Option<PathBuf>,
        /// Ground-truth output file instead of stdout.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Run the pipeline on rendered frames.
    Run {
        config: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run the pipeline on previously dumped frames.
    Replay {
        frames_dir: PathBuf,
        config: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Fit the size-distance curve to `distance_m,diag_px` samples.
    FitCalib { samples: PathBuf },
    /// Measure end-to-end throughput.
    Bench {
        config: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        seconds: f64,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print a built-in scenario as JSON.
    Preset { name: String },
}

#[derive(clap::Args)]
struct RunOpts {
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Append turbine commands to this file as they are issued.
    #[arg(long)]
    turbine_webhook: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn load_config(path: &Path, opts: &RunOpts) -> Result<PipelineConfig, RunError> {
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(o) = &opts.out {
        cfg.output_dir = o.clone();
    }
    if let Some(w) = &opts.turbine_webhook {
        cfg.turbine_webhook = Some(w.clone());
    }
    if opts.workers.is_some() {
        cfg.workers = opts.workers;
    }
    if opts.seed.is_some() {
        cfg.seed = opts.seed;
    }
    cfg.validate(path)?;
    Ok(cfg)
}

fn config_err(file: &Path, message: impl ToString) -> RunError {
    RunError::Config {
        file: file.to_path_buf(),
        message: message.to_string(),
    }
}

fn run_pipeline(cfg: &PipelineConfig, source: FrameSource) -> Result<(), RunError> {
    let scenario = cfg.load_scenario()?;
    let out = runner::run_with(cfg, &scenario, &source, None)?;
    runner::write_outputs(&out, &cfg.output_dir, cfg.write_posteriors)?;
    let m = &out.metrics;
    let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.3}"));
    println!(
        "{} frames x {} cameras: near {} far {} AP {} fused {} stops {} runs {}",
        m.frames,
        m.cameras,
        fmt(m.near_rate),
        fmt(m.far_rate),
        fmt(m.average_precision),
        fmt(m.fused_accuracy),
        m.stop_commands,
        m.run_commands
    );
    println!("outputs in {}", cfg.output_dir.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Simulate {
            scenario,
            dump_frames,
            truth,
        } => {
            let text = std::fs::read_to_string(&scenario).map_err(|e| config_err(&scenario, e))?;
            let s = Scenario::from_json(&text).map_err(|e| config_err(&scenario, e))?;
            let records = runner::simulate(&s, dump_frames.as_deref())?;
            match truth {
                Some(p) => {
                    let f = std::fs::File::create(&p).map_err(|e| RunError::Io { path: p.clone(), source: e })?;
                    runner::write_jsonl(std::io::BufWriter::new(f), &records)
                        .map_err(|e| RunError::Io { path: p, source: e })?;
                }
                None => runner::write_jsonl(std::io::stdout().lock(), &records)
                    .map_err(|e| RunError::Io { path: "<stdout>".into(), source: e })?,
            }
            Ok(())
        }
        Command::Run { config, opts } => {
            let cfg = load_config(&config, &opts)?;
            run_pipeline(&cfg, FrameSource::Render)
        }
        Command::Replay {
            frames_dir,
            config,
            opts,
        } => {
            let cfg = load_config(&config, &opts)?;
            if !frames_dir.is_dir() {
                return Err(config_err(&frames_dir, "frames directory does not exist"));
            }
            run_pipeline(&cfg, FrameSource::Replay(frames_dir))
        }
        Command::FitCalib { samples } => {
            let f = std::fs::File::open(&samples).map_err(|e| config_err(&samples, e))?;
            let data = read_calib_csv(f).map_err(|e| config_err(&samples, e))?;
            let fit = fit_calib_detailed(&data).map_err(|e| RunError::Runtime(e.to_string()))?;
            println!("{}", serde_json::to_string(&fit.curve).expect("curve serializes"));
            eprintln!(
                "{} samples, cost {:.6e} -> {:.6e} in {} iterations",
                data.len(),
                fit.initial_cost,
                fit.final_cost,
                fit.iterations
            );
            Ok(())
        }
        Command::Bench {
            config,
            seconds,
            workers,
        } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if workers.is_some() {
                cfg.workers = workers;
            }
            let report = runner::bench(&cfg, seconds)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(())
        }
        Command::Preset { name } => {
            let s = presets::by_name(&name)
                .ok_or_else(|| config_err(Path::new(&name), format!("unknown preset; try one of {:?}", presets::NAMES)))?;
            println!("{}", s.to_json());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
