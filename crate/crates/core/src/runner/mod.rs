//! Pipeline orchestration on the virtual frame clock, metrics, benchmark
//! mode and file outputs.

mod config;
mod events;
mod metrics;
mod pipeline;

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

pub use config::{FusionConfig, PipelineConfig, TilingConfig};
pub use events::{read_jsonl, write_jsonl, DetRecord, Event, TrackRecord};
pub use metrics::{
    average_precision, compute_metrics, match_frame, RunMetrics, CONFIDENCE, FAR_BIN_M, MATCH_IOU, NEAR_BIN_M,
};
pub use pipeline::{run_scenario, run_with, FrameSource, RunOutput, StageTimings, STAGES};

use crate::detect::DetectError;
use crate::fuse::{write_posterior_csv, ClassPosterior, FuseError};
use crate::synthsky::{frame_file_name, ground_truth_boxes, render_frame_index, Scenario, SimError, TruthRecord};
use crate::track::TrackError;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{}: {message}", file.display())]
    Config { file: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Frame { path: PathBuf, message: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Fuse(#[from] FuseError),
    #[error("log and ground truth come from different runs: {0}")]
    MismatchedRun(String),
    #[error("{0}")]
    Runtime(String),
}

impl RunError {
    /// Process exit code: 2 for configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config { .. } => 2,
            _ => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<std::fs::File>, RunError> {
    std::fs::File::create(path).map(BufWriter::new).map_err(io_err(path))
}

/// Writes `events.jsonl`, `commands.jsonl`, `truth.jsonl` and `metrics.csv`,
/// plus per-track posterior CSVs when enabled.
pub fn write_outputs(out: &RunOutput, dir: &Path, posteriors: bool) -> Result<(), RunError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let p = dir.join("events.jsonl");
    write_jsonl(create(&p)?, &out.events).map_err(io_err(&p))?;
    let p = dir.join("commands.jsonl");
    write_jsonl(create(&p)?, &out.commands).map_err(io_err(&p))?;
    let p = dir.join("truth.jsonl");
    write_jsonl(create(&p)?, &out.truth).map_err(io_err(&p))?;
    let p = dir.join("metrics.csv");
    out.metrics
        .write_csv(create(&p)?)
        .map_err(|e| RunError::Runtime(format!("{}: {e}", p.display())))?;
    if posteriors {
        let pdir = dir.join("posteriors");
        std::fs::create_dir_all(&pdir).map_err(io_err(&pdir))?;
        let mut series: std::collections::BTreeMap<(u32, u64), Vec<(f64, ClassPosterior)>> = Default::default();
        for e in &out.events {
            if let Event::Track(r) = e {
                series
                    .entry((r.camera, r.id))
                    .or_default()
                    .push((r.t, ClassPosterior { p: r.posterior }));
            }
        }
        for ((cam, id), s) in series {
            let p = pdir.join(format!("cam{cam}_track{id}.csv"));
            write_posterior_csv(create(&p)?, &s).map_err(|e| RunError::Runtime(format!("{}: {e}", p.display())))?;
        }
    }
    Ok(())
}

/// Renders every static camera frame of a scenario to `dir` and returns the
/// ground truth.
pub fn simulate(scenario: &Scenario, dump_dir: Option<&Path>) -> Result<Vec<TruthRecord>, RunError> {
    if let Some(d) = dump_dir {
        std::fs::create_dir_all(d).map_err(io_err(d))?;
    }
    let mut truth = Vec::new();
    for k in 0..scenario.frame_count() {
        let t = scenario.frame_time(k);
        for cam in &scenario.cameras {
            for b in ground_truth_boxes(scenario, cam.id, t)? {
                truth.push(TruthRecord::new(k, cam.id, t, &b));
            }
            if let Some(d) = dump_dir {
                let frame = render_frame_index(scenario, cam.id, k)?;
                let p = d.join(frame_file_name(cam.id, k));
                let mut w = create(&p)?;
                frame.write_pgm(&mut w).map_err(io_err(&p))?;
                w.flush().map_err(io_err(&p))?;
            }
        }
    }
    Ok(truth)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub frames: u64,
    pub cameras: usize,
    pub resolution: Vec<(u32, u32)>,
    pub detector: String,
    pub wall_s: f64,
    pub fps: Option<f64>,
    pub target_fps: f64,
    pub meets_target: Option<bool>,
    pub stage_s: std::collections::BTreeMap<String, f64>,
    pub hardware: String,
}

pub fn hardware_summary() -> String {
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("{model}, {threads} hardware threads, {}", std::env::consts::OS)
}

/// Times the full pipeline over `seconds` of scenario time.
pub fn bench(cfg: &PipelineConfig, seconds: f64) -> Result<BenchReport, RunError> {
    let scenario = cfg.load_scenario()?;
    let frames = (seconds.max(0.0) * scenario.frame_rate_hz).floor() as u64;
    let out = run_with(cfg, &scenario, &FrameSource::Render, Some(frames))?;
    let cams: Vec<u32> = cfg
        .cameras
        .clone()
        .unwrap_or_else(|| scenario.cameras.iter().map(|c| c.id).collect());
    let resolution = cams
        .iter()
        .filter_map(|id| scenario.camera(*id).ok().map(|c| c.sensor))
        .collect();
    let fps = (out.frames > 0 && out.wall_s > 0.0).then(|| out.frames as f64 / out.wall_s);
    Ok(BenchReport {
        frames: out.frames,
        cameras: cams.len(),
        resolution,
        detector: cfg.detector.to_string(),
        wall_s: out.wall_s,
        fps,
        target_fps: scenario.frame_rate_hz,
        meets_target: fps.map(|f| f >= scenario.frame_rate_hz),
        stage_s: out.timings.seconds,
        hardware: hardware_summary(),
    })
}
