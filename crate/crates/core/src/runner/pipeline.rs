use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::detect::{oracle_detect, BlobBaseline, DetectorKind};
use crate::fuse::{bayes_update, synthetic_classify};
use crate::geometry::BBox;
use crate::image::{read_pgm, ImageFrame};
use crate::manager::{append_commands, Manager, TrackKey, TrackSnapshot, TurbineCommand};
use crate::motion::{frame_diff, update_clutter_mask, ClutterMask};
use crate::rng::mix64;
use crate::species::Species;
use crate::synthsky::{frame_file_name, ground_truth_boxes, render_frame_index, Scenario, TruthBox, TruthRecord};
use crate::tiling::{iou, plan_tiles, run_tiled, Detection, TileGrid};
use crate::track::Tracker;

use super::config::PipelineConfig;
use super::events::{DetRecord, Event, TrackRecord};
use super::metrics::{compute_metrics, RunMetrics, MATCH_IOU};
use super::RunError;

const CLASSIFY_STREAM: u64 = 0xc1a5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameSource {
    Render,
    /// Directory of `cam<id>_f<index>.pgm` files.
    Replay(PathBuf),
}

pub const STAGES: [&str; 6] = ["render", "motion", "detect", "track", "fuse", "manager"];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub seconds: BTreeMap<String, f64>,
}

impl StageTimings {
    fn add(&mut self, stage: &str, d: Duration) {
        *self.seconds.entry(stage.to_string()).or_insert(0.0) += d.as_secs_f64();
    }

    pub fn total(&self) -> f64 {
        self.seconds.values().sum()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scenario: Scenario,
    pub metrics: RunMetrics,
    pub events: Vec<Event>,
    pub truth: Vec<TruthRecord>,
    pub commands: Vec<TurbineCommand>,
    pub timings: StageTimings,
    pub wall_s: f64,
    pub frames: u64,
}

struct Lane {
    id: u32,
    size: (u32, u32),
    grid: TileGrid,
    tracker: Tracker,
    mask: Option<ClutterMask>,
    blob: Option<BlobBaseline>,
    prev: Option<ImageFrame>,
    labels: BTreeMap<u64, Option<u32>>,
}

fn best_truth(b: &BBox, truth: &[TruthBox]) -> Option<u32> {
    let mut best: Option<(u32, f64)> = None;
    for t in truth {
        let v = iou(b, &t.bbox);
        if v >= MATCH_IOU && best.is_none_or(|(_, bv)| v > bv) {
            best = Some((t.target_id, v));
        }
    }
    best.map(|b| b.0)
}

fn load_frame(dir: &Path, camera: u32, frame: u64, t: f64) -> Result<ImageFrame, RunError> {
    let path = dir.join(frame_file_name(camera, frame));
    let file = std::fs::File::open(&path).map_err(|e| RunError::Io {
        path: path.clone(),
        source: e,
    })?;
    let (w, h, pixels) = read_pgm(std::io::BufReader::new(file)).map_err(|e| RunError::Frame {
        path: path.clone(),
        message: e.to_string(),
    })?;
    ImageFrame::new(camera, frame, t, w, h, pixels).map_err(|e| RunError::Frame {
        path,
        message: e.to_string(),
    })
}

/// Runs the full pipeline on the configured scenario with rendered frames.
pub fn run_scenario(cfg: &PipelineConfig) -> Result<RunOutput, RunError> {
    let scenario = cfg.load_scenario()?;
    run_with(cfg, &scenario, &FrameSource::Render, None)
}

/// Runs inside a pool sized by `cfg.workers`.
pub fn run_with(
    cfg: &PipelineConfig,
    scenario: &Scenario,
    source: &FrameSource,
    max_frames: Option<u64>,
) -> Result<RunOutput, RunError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.workers {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| RunError::Runtime(e.to_string()))?;
    pool.install(|| execute(cfg, scenario, source, max_frames))
}

fn execute(
    cfg: &PipelineConfig,
    scenario: &Scenario,
    source: &FrameSource,
    max_frames: Option<u64>,
) -> Result<RunOutput, RunError> {
    let start = Instant::now();
    let ids: Vec<u32> = match &cfg.cameras {
        Some(v) => {
            let mut v = v.clone();
            v.sort_unstable();
            v.dedup();
            v
        }
        None => {
            let mut v: Vec<u32> = scenario.cameras.iter().map(|c| c.id).collect();
            v.sort_unstable();
            v
        }
    };
    let needs_pixels = cfg.detector != DetectorKind::Oracle;
    let mut lanes = Vec::new();
    for &id in &ids {
        let cam = scenario.camera(id)?;
        let (w, h) = cam.sensor;
        lanes.push(Lane {
            id,
            size: (w, h),
            grid: plan_tiles(w, h, cfg.tiling.tile, cfg.tiling.overlap),
            tracker: Tracker::new(cfg.tracker),
            mask: (cfg.detector == DetectorKind::Reference)
                .then(|| ClutterMask::from_config(w, h, &cfg.motion)),
            blob: (cfg.detector == DetectorKind::Blob).then(|| BlobBaseline::new(w, h, cfg.motion)),
            prev: None,
            labels: BTreeMap::new(),
        });
    }
    let static_cams: Vec<_> = scenario.cameras.clone();
    let mut manager = Manager::new(cfg.manager, &static_cams, scenario.rigs.first().cloned(), scenario.seed);
    let classify_seed = mix64(scenario.seed ^ CLASSIFY_STREAM);
    let dt = 1.0 / scenario.frame_rate_hz;
    let n_frames = if scenario.duration_s > 0.0 {
        scenario.frame_count()
    } else {
        0
    };
    let n_frames = max_frames.map_or(n_frames, |m| m.min(n_frames));

    let mut timings = StageTimings::default();
    for s in STAGES {
        timings.seconds.insert(s.to_string(), 0.0);
    }
    let mut events = Vec::new();
    let mut truth_log = Vec::new();
    let mut commands = Vec::new();
    let species_of = |target: u32| scenario.target(target).map(|t| t.species);

    for k in 0..n_frames {
        let t = scenario.frame_time(k);
        for lane in &mut lanes {
            let truth = ground_truth_boxes(scenario, lane.id, t)?;
            truth_log.extend(truth.iter().map(|b| TruthRecord::new(k, lane.id, t, b)));

            let clock = Instant::now();
            let frame = if needs_pixels {
                Some(match source {
                    FrameSource::Render => render_frame_index(scenario, lane.id, k)?,
                    FrameSource::Replay(dir) => load_frame(dir, lane.id, k, t)?,
                })
            } else {
                None
            };
            timings.add("render", clock.elapsed());
            if let Some(f) = &frame {
                if (f.width, f.height) != lane.size {
                    return Err(RunError::Frame {
                        path: PathBuf::from(frame_file_name(lane.id, k)),
                        message: format!("expected {}x{} pixels", lane.size.0, lane.size.1),
                    });
                }
            }

            let clock = Instant::now();
            let mut changed = None;
            if let (Some(mask), Some(prev), Some(curr)) = (lane.mask.as_mut(), lane.prev.as_ref(), frame.as_ref()) {
                let change = frame_diff(prev, curr, cfg.motion.threshold).map_err(crate::detect::DetectError::from)?;
                update_clutter_mask(mask, &change).map_err(crate::detect::DetectError::from)?;
                changed = Some(change.points.len());
            }
            timings.add("motion", clock.elapsed());

            let clock = Instant::now();
            let mut dets: Vec<Detection> = match cfg.detector {
                DetectorKind::Reference => {
                    run_tiled(&cfg.reference, frame.as_ref().expect("rendered"), &lane.grid, cfg.tiling.nms_iou)?
                }
                DetectorKind::Oracle => oracle_detect(&truth, lane.id, k, lane.size, &cfg.miss_model, scenario.seed),
                DetectorKind::Blob => match (lane.blob.as_mut(), lane.prev.as_ref(), frame.as_ref()) {
                    (Some(b), Some(prev), Some(curr)) => b.detect(prev, curr)?,
                    _ => Vec::new(),
                },
            };
            crate::tiling::sort_detections(&mut dets);
            timings.add("detect", clock.elapsed());

            let masked_fraction = match (&lane.mask, &lane.blob) {
                (Some(m), _) => Some(m.masked_fraction()),
                (_, Some(b)) => Some(b.mask.masked_fraction()),
                _ => None,
            };
            events.push(Event::Frame {
                frame: k,
                t,
                camera: lane.id,
                masked_fraction,
                changed_pixels: changed,
            });
            events.push(Event::Detections {
                frame: k,
                t,
                camera: lane.id,
                detections: dets
                    .iter()
                    .map(|d| DetRecord {
                        bbox: [d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h],
                        objectness: d.objectness,
                    })
                    .collect(),
            });

            let clock = Instant::now();
            let boxes: Vec<BBox> = dets.iter().map(|d| d.bbox).collect();
            let report = lane.tracker.step(&boxes, t)?;
            let det_labels: Vec<Option<u32>> = boxes.iter().map(|b| best_truth(b, &truth)).collect();
            let mut hits: Vec<(u64, usize)> = report.matched.clone();
            for &(id, di) in &report.spawned {
                hits.push((id, di));
            }
            for &(id, di) in &hits {
                lane.labels.insert(id, det_labels[di]);
            }
            timings.add("track", clock.elapsed());

            let clock = Instant::now();
            let spawned: Vec<u64> = report.spawned.iter().map(|s| s.0).collect();
            let mut reported: BTreeMap<u64, Species> = BTreeMap::new();
            for &(id, di) in &hits {
                let truth_species = det_labels[di].and_then(species_of).unwrap_or(Species::Other);
                let r = synthetic_classify(
                    truth_species,
                    boxes[di].diag(),
                    &cfg.fusion.confusion,
                    cfg.fusion.mode,
                    classify_seed,
                    &[lane.id as u64, id, k],
                );
                let track = lane
                    .tracker
                    .tracks
                    .iter_mut()
                    .find(|tr| tr.id == id)
                    .expect("hit tracks are active");
                if spawned.contains(&id) {
                    track.posterior = cfg.fusion.prior;
                }
                track.posterior = bayes_update(&track.posterior, &r.likelihood, cfg.fusion.beta)?;
                reported.insert(id, r.reported);
            }
            let label = |labels: &BTreeMap<u64, Option<u32>>, id: u64| {
                labels
                    .get(&id)
                    .copied()
                    .flatten()
                    .and_then(|tg| species_of(tg).map(|s| (tg, s)))
            };
            for tr in &lane.tracker.tracks {
                events.push(Event::Track(TrackRecord::new(
                    k,
                    t,
                    lane.id,
                    tr,
                    reported.get(&tr.id).copied(),
                    label(&lane.labels, tr.id),
                )));
            }
            for tr in &report.lost {
                events.push(Event::Track(TrackRecord::new(k, t, lane.id, tr, None, label(&lane.labels, tr.id))));
                lane.labels.remove(&tr.id);
            }
            timings.add("fuse", clock.elapsed());
            lane.prev = frame;
        }

        let clock = Instant::now();
        let mut snapshots = Vec::new();
        for lane in &lanes {
            for tr in &lane.tracker.tracks {
                let key = TrackKey {
                    camera: lane.id,
                    id: tr.id,
                };
                snapshots.push(TrackSnapshot {
                    key,
                    status: tr.status,
                    posterior: tr.posterior,
                    bbox: tr.last_bbox,
                    center: tr.state.position(),
                    est_distance_m: manager.estimated_distance(key, &tr.last_bbox),
                });
            }
        }
        let truth_pos = |key: TrackKey| {
            let lane = lanes.iter().find(|l| l.id == key.camera)?;
            let target = lane.labels.get(&key.id).copied().flatten()?;
            scenario.target(target)?.state_at(t).map(|s| s.0)
        };
        let outcome = manager.step(t, dt, &snapshots, &truth_pos);
        events.push(Event::Manager {
            frame: k,
            t,
            priority: outcome.priority,
            pan: outcome.ptu.pan,
            tilt: outcome.ptu.tilt,
            pointing_error: outcome.pointing_error,
            range: outcome.range,
        });
        if let Some(c) = outcome.command {
            if let Some(path) = &cfg.turbine_webhook {
                append_commands(path, std::slice::from_ref(&c)).map_err(|e| RunError::Io {
                    path: path.clone(),
                    source: e,
                })?;
            }
            events.push(Event::Command(c.clone()));
            commands.push(c);
        }
        timings.add("manager", clock.elapsed());
    }

    let metrics = compute_metrics(&events, &truth_log)?;
    Ok(RunOutput {
        scenario: scenario.clone(),
        metrics,
        events,
        truth: truth_log,
        commands,
        timings,
        wall_s: start.elapsed().as_secs_f64(),
        frames: n_frames,
    })
}
