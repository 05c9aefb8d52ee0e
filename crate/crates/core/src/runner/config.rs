use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detect::{DetectorKind, MissModel, ReferenceDetector};
use crate::fuse::{ClassPosterior, ConfusionModel, LikelihoodMode};
use crate::manager::ManagerConfig;
use crate::motion::MotionConfig;
use crate::synthsky::{presets, Scenario};
use crate::tiling::{DEFAULT_NMS_IOU, DEFAULT_OVERLAP, DEFAULT_TILE};
use crate::track::TrackerConfig;

use super::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TilingConfig {
    pub tile: u32,
    pub overlap: f64,
    pub nms_iou: f64,
}

impl Default for TilingConfig {
    fn default() -> Self {
        Self {
            tile: DEFAULT_TILE,
            overlap: DEFAULT_OVERLAP,
            nms_iou: DEFAULT_NMS_IOU,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub beta: f64,
    pub mode: LikelihoodMode,
    pub prior: ClassPosterior,
    pub confusion: ConfusionModel,
    /// JSON file replacing `confusion`, relative to the config file.
    pub confusion_path: Option<PathBuf>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            mode: LikelihoodMode::Column,
            prior: ClassPosterior::uniform(),
            confusion: ConfusionModel::default(),
            confusion_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Scenario JSON path relative to the config file, or `preset:<name>`.
    pub scenario: String,
    #[serde(default = "default_detector")]
    pub detector: DetectorKind,
    #[serde(default)]
    pub frame_rate_hz: Option<f64>,
    #[serde(default = "one")]
    pub resolution_scale: f64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub duration_s: Option<f64>,
    /// Cameras to run detection on; all scenario cameras when absent.
    #[serde(default)]
    pub cameras: Option<Vec<u32>>,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub manager: ManagerConfig,
    #[serde(default)]
    pub miss_model: MissModel,
    #[serde(default)]
    pub motion: MotionConfig,
    #[serde(default)]
    pub tiling: TilingConfig,
    #[serde(default)]
    pub reference: ReferenceDetector,
    /// Worker threads; defaults to the machine's parallelism.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub turbine_webhook: Option<PathBuf>,
    #[serde(default)]
    pub write_posteriors: bool,
}

fn default_detector() -> DetectorKind {
    DetectorKind::Reference
}

fn one() -> f64 {
    1.0
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    pub fn for_scenario(scenario: &str, detector: DetectorKind) -> Self {
        Self {
            scenario: scenario.to_string(),
            detector,
            frame_rate_hz: None,
            resolution_scale: 1.0,
            output_dir: default_output(),
            seed: None,
            duration_s: None,
            cameras: None,
            tracker: TrackerConfig::default(),
            fusion: FusionConfig::default(),
            manager: ManagerConfig::default(),
            miss_model: MissModel::default(),
            motion: MotionConfig::default(),
            tiling: TilingConfig::default(),
            reference: ReferenceDetector::default(),
            workers: None,
            turbine_webhook: None,
            write_posteriors: false,
        }
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self, RunError> {
        serde_json::from_str(text).map_err(|e| RunError::Config {
            file: origin.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Loads a config and resolves its relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::Config {
            file: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::from_json(&text, path)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        if !cfg.scenario.starts_with("preset:") {
            cfg.scenario = dir.join(&cfg.scenario).to_string_lossy().into_owned();
        }
        if let Some(p) = cfg.fusion.confusion_path.take() {
            let full = dir.join(p);
            let text = std::fs::read_to_string(&full).map_err(|e| RunError::Config {
                file: full.clone(),
                message: e.to_string(),
            })?;
            cfg.fusion.confusion = ConfusionModel::from_json(&text).map_err(|e| RunError::Config {
                file: full.clone(),
                message: format!("fusion.confusion: {e}"),
            })?;
        }
        cfg.validate(path)?;
        Ok(cfg)
    }

    pub fn validate(&self, origin: &Path) -> Result<(), RunError> {
        let err = |field: &str, message: String| RunError::Config {
            file: origin.to_path_buf(),
            message: format!("{field}: {message}"),
        };
        if let Some(f) = self.frame_rate_hz {
            if !(f > 0.0) {
                return Err(err("frame_rate_hz", "must be > 0".into()));
            }
        }
        if !(self.resolution_scale > 0.0) {
            return Err(err("resolution_scale", "must be > 0".into()));
        }
        if let Some(d) = self.duration_s {
            if !(d >= 0.0) {
                return Err(err("duration_s", "must be >= 0".into()));
            }
        }
        if self.workers == Some(0) {
            return Err(err("workers", "must be >= 1".into()));
        }
        let t = &self.tracker;
        if !(t.q > 0.0 && t.r > 0.0 && t.gate_chi2 > 0.0) {
            return Err(err("tracker", "q, r and gate_chi2 must be > 0".into()));
        }
        if t.confirm_hits == 0 || t.confirm_hits > t.confirm_window || t.confirm_window > 32 || t.max_misses == 0 {
            return Err(err("tracker", "need 0 < confirm_hits <= confirm_window <= 32 and max_misses > 0".into()));
        }
        if !(self.fusion.beta > 0.0 && self.fusion.beta <= 1.0) {
            return Err(err("fusion.beta", "must be in (0, 1]".into()));
        }
        self.fusion
            .confusion
            .validate()
            .map_err(|e| err("fusion.confusion", e.to_string()))?;
        self.miss_model.validate().map_err(|e| err("miss_model", e))?;
        let m = &self.motion;
        if m.trigger_k == 0 || m.trigger_k > m.window_n || m.window_n > 32 || m.min_pts == 0 {
            return Err(err("motion", "need 0 < trigger_k <= window_n <= 32 and min_pts > 0".into()));
        }
        let tl = &self.tiling;
        if tl.tile == 0 || !(0.0..1.0).contains(&tl.overlap) {
            return Err(err("tiling", "tile must be > 0 and overlap in [0, 1)".into()));
        }
        let mg = &self.manager;
        if !(mg.max_slew > 0.0 && mg.zone.radius_m > 0.0 && mg.zone.height_m > 0.0) {
            return Err(err("manager", "max_slew, zone radius and height must be > 0".into()));
        }
        Ok(())
    }

    /// The scenario with config overrides applied.
    pub fn load_scenario(&self) -> Result<Scenario, RunError> {
        let mut s = if let Some(name) = self.scenario.strip_prefix("preset:") {
            presets::by_name(name).ok_or_else(|| RunError::Config {
                file: PathBuf::from(&self.scenario),
                message: format!("scenario: unknown preset {name:?}"),
            })?
        } else {
            let path = PathBuf::from(&self.scenario);
            let text = std::fs::read_to_string(&path).map_err(|e| RunError::Config {
                file: path.clone(),
                message: e.to_string(),
            })?;
            Scenario::from_json(&text).map_err(|e| RunError::Config {
                file: path.clone(),
                message: e.to_string(),
            })?
        };
        if let Some(f) = self.frame_rate_hz {
            s.frame_rate_hz = f;
        }
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(d) = self.duration_s {
            s.duration_s = d.min(s.duration_s);
        }
        if self.resolution_scale != 1.0 {
            let k = self.resolution_scale;
            for c in &mut s.cameras {
                *c = c.scaled(k);
            }
            for c in &mut s.clutter {
                c.region = crate::geometry::BBox::new(c.region.x * k, c.region.y * k, c.region.w * k, c.region.h * k);
                c.amplitude *= k;
            }
        }
        if s.duration_s > 0.0 {
            s.validate().map_err(|e| RunError::Config {
                file: PathBuf::from(&self.scenario),
                message: e.to_string(),
            })?;
        }
        if let Some(ids) = &self.cameras {
            for id in ids {
                if !s.cameras.iter().any(|c| c.id == *id) {
                    return Err(RunError::Config {
                        file: PathBuf::from(&self.scenario),
                        message: format!("cameras: unknown detection camera {id}"),
                    });
                }
            }
        }
        Ok(s)
    }
}
