//! Deterministic sky scenario simulator.
//!
//! A [`Scenario`] describes cameras, stereo rigs, target trajectories and
//! clutter. Frames are pure functions of `(scenario, camera, frame index)`:
//! every pixel-noise draw comes from a SplitMix64 stream keyed by
//! `(seed, camera_id, frame_index)`, so frames can be rendered in any order
//! or in parallel and always replay bit-exactly.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::sync::OnceLock;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::geometry::{BBox, CameraModel, StereoRig, Vec3};
use crate::image::ImageFrame;
use crate::rng::{mix64, SplitMix64};
use crate::species::Species;

pub mod presets;

/// Wingspan the camera calibration curves refer to (an adult red kite).
pub const REFERENCE_SIZE_M: f64 = 1.6;

/// Intensity swing of flickering foliage inside a treetop band.
const FOLIAGE_FLICKER: f64 = 45.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("time {t_s} s outside scenario duration [0, {duration_s}]")]
    OutOfRange { t_s: f64, duration_s: f64 },
    #[error("unknown camera id {0}")]
    UnknownCamera(u32),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t_s: f64,
    pub position: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetTruth {
    pub id: u32,
    pub species: Species,
    pub size_m: f64,
    pub waypoints: Vec<Waypoint>,
}

impl TargetTruth {
    /// Position and velocity at `t_s`, or `None` outside the waypoint span.
    pub fn state_at(&self, t_s: f64) -> Option<(Vec3, Vec3)> {
        let first = self.waypoints.first()?;
        let last = self.waypoints.last()?;
        if t_s < first.t_s || t_s > last.t_s {
            return None;
        }
        let seg = self
            .waypoints
            .windows(2)
            .position(|w| t_s < w[1].t_s)
            .unwrap_or(self.waypoints.len() - 2);
        let (a, b) = (self.waypoints[seg], self.waypoints[seg + 1]);
        let span = b.t_s - a.t_s;
        let velocity = (b.position - a.position) * (1.0 / span);
        let s = (t_s - a.t_s) / span;
        let position = if s == 0.0 {
            a.position
        } else if s == 1.0 {
            b.position
        } else {
            a.position.lerp(b.position, s)
        };
        Some((position, velocity))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClutterKind {
    /// Foliage band whose silhouette sways horizontally by `amplitude` px
    /// while its leaves flicker.
    TreetopBand,
    /// Three rotating blades of width `amplitude` px inscribed in `region`.
    RotorDisc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClutterSpec {
    pub camera_id: u32,
    pub region: BBox,
    pub kind: ClutterKind,
    pub amplitude: f64,
    pub period_s: f64,
}

/// Photometric parameters for rendering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderParams {
    /// Sky brightness at the top row.
    pub sky_top: f64,
    /// Sky brightness at the bottom row.
    pub sky_bottom: f64,
    /// Peak darkening of a target blob, gray levels.
    pub contrast: f64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            sky_top: 175.0,
            sky_bottom: 215.0,
            contrast: 100.0,
        }
    }
}

fn default_frame_rate() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub duration_s: f64,
    #[serde(default = "default_frame_rate")]
    pub frame_rate_hz: f64,
    pub cameras: Vec<CameraModel>,
    #[serde(default)]
    pub rigs: Vec<StereoRig>,
    #[serde(default)]
    pub targets: Vec<TargetTruth>,
    #[serde(default)]
    pub clutter: Vec<ClutterSpec>,
    #[serde(default)]
    pub pixel_noise_sigma: f64,
    #[serde(default)]
    pub render: RenderParams,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetState {
    pub target_id: u32,
    pub position: Vec3,
    pub velocity: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthBox {
    pub target_id: u32,
    pub species: Species,
    pub bbox: BBox,
    pub distance_m: f64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, SimError> {
        let s: Scenario =
            serde_json::from_str(text).map_err(|e| SimError::Invalid(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Invalid(m));
        if !(self.frame_rate_hz > 0.0) {
            return bad("frame_rate_hz must be > 0".into());
        }
        if !(self.duration_s > 0.0) {
            return bad("duration_s must be > 0".into());
        }
        if !(self.pixel_noise_sigma >= 0.0) {
            return bad("pixel_noise_sigma must be >= 0".into());
        }
        let mut cam_ids = HashSet::new();
        let rig_cams = self.rigs.iter().flat_map(|r| [&r.left, &r.right]);
        for cam in self.cameras.iter().chain(rig_cams) {
            cam.validate().map_err(|e| SimError::Invalid(e.to_string()))?;
            if !cam_ids.insert(cam.id) {
                return bad(format!("duplicate camera id {}", cam.id));
            }
        }
        for rig in &self.rigs {
            rig.validate().map_err(|e| SimError::Invalid(e.to_string()))?;
        }
        let mut target_ids = HashSet::new();
        for t in &self.targets {
            if !target_ids.insert(t.id) {
                return bad(format!("duplicate target id {}", t.id));
            }
            if !(t.size_m > 0.0) {
                return bad(format!("target {}: size_m must be > 0", t.id));
            }
            if t.waypoints.len() < 2 {
                return bad(format!("target {}: needs at least 2 waypoints", t.id));
            }
            if t.waypoints.windows(2).any(|w| !(w[1].t_s > w[0].t_s)) {
                return bad(format!("target {}: waypoints must be strictly time-sorted", t.id));
            }
        }
        for c in &self.clutter {
            if !(c.amplitude >= 0.0) || !(c.period_s > 0.0) || !c.region.is_valid() {
                return bad(format!("invalid clutter on camera {}", c.camera_id));
            }
            if !self.cameras.iter().any(|cam| cam.id == c.camera_id) {
                return bad(format!("clutter references unknown camera {}", c.camera_id));
            }
        }
        Ok(())
    }

    pub fn camera(&self, camera_id: u32) -> Result<&CameraModel, SimError> {
        self.cameras
            .iter()
            .chain(self.rigs.iter().flat_map(|r| [&r.left, &r.right]))
            .find(|c| c.id == camera_id)
            .ok_or(SimError::UnknownCamera(camera_id))
    }

    /// Number of frame-clock ticks, including `t = 0`.
    pub fn frame_count(&self) -> u64 {
        (self.duration_s * self.frame_rate_hz + 1e-9).floor() as u64 + 1
    }

    pub fn frame_time(&self, frame_index: u64) -> f64 {
        frame_index as f64 / self.frame_rate_hz
    }

    pub fn frame_index_at(&self, t_s: f64) -> u64 {
        (t_s * self.frame_rate_hz).round().max(0.0) as u64
    }

    fn check_time(&self, t_s: f64) -> Result<(), SimError> {
        if !(0.0..=self.duration_s).contains(&t_s) {
            return Err(SimError::OutOfRange {
                t_s,
                duration_s: self.duration_s,
            });
        }
        Ok(())
    }

    pub fn target(&self, id: u32) -> Option<&TargetTruth> {
        self.targets.iter().find(|t| t.id == id)
    }
}

/// Positions and velocities of every airborne target at `t_s`.
pub fn sample_state(scenario: &Scenario, t_s: f64) -> Result<Vec<TargetState>, SimError> {
    scenario.check_time(t_s)?;
    Ok(scenario
        .targets
        .iter()
        .filter_map(|t| {
            t.state_at(t_s).map(|(position, velocity)| TargetState {
                target_id: t.id,
                position,
                velocity,
            })
        })
        .collect())
}

/// Rendered full-width diameter of a target at `distance_m`, never below 1 px.
pub fn blob_diameter(camera: &CameraModel, size_m: f64, distance_m: f64) -> f64 {
    let curve = camera.curve();
    let diag = curve
        .apparent_diag(distance_m)
        .unwrap_or(0.0)
        .max(0.0);
    (diag * size_m / REFERENCE_SIZE_M).max(1.0)
}

#[derive(Debug, Clone, Copy)]
struct VisibleBlob {
    target_id: u32,
    species: Species,
    u: f64,
    v: f64,
    diameter: f64,
    distance_m: f64,
}

fn visible_blobs(scenario: &Scenario, camera: &CameraModel, t_s: f64) -> Vec<VisibleBlob> {
    let mut out = Vec::new();
    for target in &scenario.targets {
        let Some((pos, _)) = target.state_at(t_s) else {
            continue;
        };
        let Ok(p) = camera.project(pos) else {
            continue;
        };
        let distance_m = (pos - camera.position).norm();
        out.push(VisibleBlob {
            target_id: target.id,
            species: target.species,
            u: p.u,
            v: p.v,
            diameter: blob_diameter(camera, target.size_m, distance_m),
            distance_m,
        });
    }
    out
}

/// Ground-truth boxes for every target whose projection falls on the sensor.
pub fn ground_truth_boxes(
    scenario: &Scenario,
    camera_id: u32,
    t_s: f64,
) -> Result<Vec<TruthBox>, SimError> {
    let camera = scenario.camera(camera_id)?;
    let (w, h) = (camera.sensor.0 as f64, camera.sensor.1 as f64);
    Ok(visible_blobs(scenario, camera, t_s)
        .into_iter()
        .filter(|b| camera.in_sensor(b.u, b.v))
        .filter_map(|b| {
            BBox::centered(b.u, b.v, b.diameter)
                .clipped(w, h)
                .map(|bbox| TruthBox {
                    target_id: b.target_id,
                    species: b.species,
                    bbox,
                    distance_m: b.distance_m,
                })
        })
        .collect())
}

/// Standard-normal quantiles at the 65536 midpoints of [0, 1].
fn normal_table() -> &'static [f32] {
    static TABLE: OnceLock<Vec<f32>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = Normal::new(0.0, 1.0).expect("unit normal");
        (0..65536)
            .map(|i| n.inverse_cdf((i as f64 + 0.5) / 65536.0) as f32)
            .collect()
    })
}

#[inline]
fn hash01(seed: u64, a: i64, b: i64) -> f64 {
    let h = mix64(seed ^ mix64((a as u64) ^ (b as u64).rotate_left(32)));
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Smooth value noise in [0, 1] with lattice spacing `cell`.
fn value_noise(seed: u64, x: f64, y: f64, cell: f64) -> f64 {
    let gx = x / cell;
    let gy = y / cell;
    let x0 = gx.floor();
    let y0 = gy.floor();
    let fx = gx - x0;
    let fy = gy - y0;
    let sx = fx * fx * (3.0 - 2.0 * fx);
    let sy = fy * fy * (3.0 - 2.0 * fy);
    let (ix, iy) = (x0 as i64, y0 as i64);
    let v00 = hash01(seed, ix, iy);
    let v10 = hash01(seed, ix + 1, iy);
    let v01 = hash01(seed, ix, iy + 1);
    let v11 = hash01(seed, ix + 1, iy + 1);
    let top = v00 + (v10 - v00) * sx;
    let bot = v01 + (v11 - v01) * sx;
    top + (bot - top) * sy
}

fn render_clutter(buf: &mut [f32], width: usize, height: usize, c: &ClutterSpec, seed: u64, t_s: f64) {
    let Some(region) = c.region.clipped(width as f64, height as f64) else {
        return;
    };
    let x0 = region.x.floor() as usize;
    let y0 = region.y.floor() as usize;
    let x1 = (region.right().ceil() as usize).min(width);
    let y1 = (region.bottom().ceil() as usize).min(height);
    let key = seed ^ mix64(c.camera_id as u64 ^ 0x5eed);
    let omega_t = 2.0 * PI * t_s / c.period_s;
    match c.kind {
        ClutterKind::TreetopBand => {
            let sway = c.amplitude * omega_t.sin();
            let rh = c.region.h;
            for y in y0..y1 {
                let ly = y as f64 - c.region.y;
                for x in x0..x1 {
                    let lx = x as f64 - c.region.x;
                    let edge = rh * (0.15 + 0.35 * value_noise(key, lx - sway, 0.0, 14.0));
                    if ly < edge {
                        continue;
                    }
                    let base = 70.0 + 40.0 * value_noise(key ^ 1, lx, ly, 9.0);
                    let phase = 2.0 * PI * value_noise(key ^ 2, lx, ly, 5.0) * 3.0;
                    buf[y * width + x] = (base + FOLIAGE_FLICKER * (omega_t + phase).sin()) as f32;
                }
            }
        }
        ClutterKind::RotorDisc => {
            let (cx, cy) = c.region.center();
            let radius = 0.5 * c.region.w.min(c.region.h);
            let half_width = 0.5 * c.amplitude.max(1.0);
            for y in y0..y1 {
                let dy = y as f64 + 0.5 - cy;
                for x in x0..x1 {
                    let dx = x as f64 + 0.5 - cx;
                    let r = dx.hypot(dy);
                    if r > radius {
                        continue;
                    }
                    let on_blade = (0..3).any(|k| {
                        let ang = omega_t + k as f64 * 2.0 * PI / 3.0;
                        let (s, co) = ang.sin_cos();
                        let along = dx * co + dy * s;
                        let across = (-dx * s + dy * co).abs();
                        along >= 0.0 && across <= half_width
                    });
                    if on_blade || r < half_width * 1.5 {
                        buf[y * width + x] = 120.0;
                    }
                }
            }
        }
    }
}

/// Renders the frame with index `frame_index` for one camera.
pub fn render_frame_index(
    scenario: &Scenario,
    camera_id: u32,
    frame_index: u64,
) -> Result<ImageFrame, SimError> {
    let camera = scenario.camera(camera_id)?;
    let t_s = scenario.frame_time(frame_index);
    let (w, h) = (camera.sensor.0 as usize, camera.sensor.1 as usize);
    let rp = scenario.render;

    let mut buf = vec![0f32; w * h];
    let denom = (h.max(2) - 1) as f64;
    for (y, row) in buf.chunks_exact_mut(w).enumerate() {
        let v = rp.sky_top + (rp.sky_bottom - rp.sky_top) * y as f64 / denom;
        row.fill(v as f32);
    }
    for c in scenario.clutter.iter().filter(|c| c.camera_id == camera_id) {
        render_clutter(&mut buf, w, h, c, scenario.seed, t_s);
    }

    // Targets darken whatever lies behind them; overlapping blobs take the min.
    let blobs = visible_blobs(scenario, camera, t_s);
    if !blobs.is_empty() {
        let base = buf.clone();
        let fwhm_to_sigma = 1.0 / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
        for b in &blobs {
            let sigma = b.diameter * fwhm_to_sigma;
            let reach = 3.5 * sigma + 1.0;
            let xa = ((b.u - reach).floor().max(0.0)) as usize;
            let ya = ((b.v - reach).floor().max(0.0)) as usize;
            let xb = ((b.u + reach).ceil().max(0.0) as usize).min(w);
            let yb = ((b.v + reach).ceil().max(0.0) as usize).min(h);
            let inv = 1.0 / (2.0 * sigma * sigma);
            for y in ya..yb {
                let dy = y as f64 + 0.5 - b.v;
                for x in xa..xb {
                    let dx = x as f64 + 0.5 - b.u;
                    let dark = rp.contrast * (-(dx * dx + dy * dy) * inv).exp();
                    let i = y * w + x;
                    let val = (base[i] as f64 - dark) as f32;
                    if val < buf[i] {
                        buf[i] = val;
                    }
                }
            }
        }
    }

    let mut pixels = vec![0u8; w * h];
    let sigma = scenario.pixel_noise_sigma as f32;
    if sigma > 0.0 {
        let table = normal_table();
        let mut rng = SplitMix64::stream(scenario.seed, &[camera_id as u64, frame_index]);
        for (out, chunk) in pixels.chunks_mut(4).zip(buf.chunks(4)) {
            let bits = rng.next_u64();
            for (k, (o, &v)) in out.iter_mut().zip(chunk).enumerate() {
                let z = table[((bits >> (16 * k)) & 0xffff) as usize];
                *o = (v + sigma * z).round().clamp(0.0, 255.0) as u8;
            }
        }
    } else {
        for (o, &v) in pixels.iter_mut().zip(&buf) {
            *o = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(ImageFrame {
        camera_id,
        frame_index,
        t_s,
        width: w as u32,
        height: h as u32,
        pixels,
    })
}

/// Renders the frame nearest to `t_s` on the scenario frame clock.
pub fn render_frame(scenario: &Scenario, camera_id: u32, t_s: f64) -> Result<ImageFrame, SimError> {
    scenario.camera(camera_id)?;
    scenario.check_time(t_s)?;
    render_frame_index(scenario, camera_id, scenario.frame_index_at(t_s))
}

/// Ground-truth record as dumped to JSON Lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub frame: u64,
    pub camera: u32,
    pub t: f64,
    pub target_id: u32,
    pub species: Species,
    pub bbox: [f64; 4],
    pub distance_m: f64,
}

impl TruthRecord {
    pub fn new(frame: u64, camera: u32, t: f64, b: &TruthBox) -> Self {
        Self {
            frame,
            camera,
            t,
            target_id: b.target_id,
            species: b.species,
            bbox: [b.bbox.x, b.bbox.y, b.bbox.w, b.bbox.h],
            distance_m: b.distance_m,
        }
    }

    pub fn bbox(&self) -> BBox {
        BBox::new(self.bbox[0], self.bbox[1], self.bbox[2], self.bbox[3])
    }
}

pub fn frame_file_name(camera_id: u32, frame_index: u64) -> String {
    format!("cam{camera_id}_f{frame_index}.pgm")
}
