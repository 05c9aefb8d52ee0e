//! The per-tile detector contract and its implementations.
//!
//! * [`ReferenceDetector`]: multi-scale difference-of-Gaussians blob finder
//!   standing in for a learned single-shot detector.
//! * [`oracle_detect`]: ground-truth boxes thinned by a size-dependent miss
//!   model, for pipeline experiments decoupled from image quality.
//! * [`BlobBaseline`]: frame differencing + clutter mask + DBSCAN.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::image::ImageFrame;
use crate::motion::{self, ClutterMask, MotionConfig, MotionError};
use crate::rng::SplitMix64;
use crate::synthsky::TruthBox;
use crate::tiling::{Detection, Tile};

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("tile {tile}: {source}")]
    InTile {
        tile: usize,
        #[source]
        source: Box<DetectError>,
    },
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error("detector failure: {0}")]
    Failed(String),
}

/// Per-tile detection. Boxes are returned in tile-local pixel coordinates
/// and must lie within the tile; the same tile always yields the same boxes.
pub trait Detector: Send + Sync {
    fn detect(&self, tile: &Tile) -> Result<Vec<Detection>, DetectError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    #[default]
    Reference,
    Oracle,
    Blob,
}

impl FromStr for DetectorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reference" => Ok(Self::Reference),
            "oracle" => Ok(Self::Oracle),
            "blob" => Ok(Self::Blob),
            other => Err(format!(
                "unknown detector '{other}' (expected reference, oracle or blob)"
            )),
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Reference => "reference",
            Self::Oracle => "oracle",
            Self::Blob => "blob",
        })
    }
}

// ---------------------------------------------------------------------------
// Reference detector
// ---------------------------------------------------------------------------

const DOG_K: f64 = 1.6;
const PYRAMID_LEVELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceDetector {
    /// Minimum DoG response, gray levels.
    pub threshold: f32,
    /// Response that maps to objectness 1.
    pub objectness_scale: f32,
    /// A peak must also exceed this multiple of the local RMS response, which
    /// keeps textured backgrounds such as foliage from firing everywhere.
    pub clutter_k: f32,
}

impl Default for ReferenceDetector {
    fn default() -> Self {
        Self {
            threshold: 10.0,
            objectness_scale: 40.0,
            clutter_k: 3.0,
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let r = (3.0 * sigma).ceil() as i32;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k.into_iter().map(|v| v as f32).collect()
}

struct Kernels {
    narrow: Vec<f32>,
    wide: Vec<f32>,
    local: Vec<f32>,
}

fn kernels() -> &'static Kernels {
    static K: std::sync::OnceLock<Kernels> = std::sync::OnceLock::new();
    K.get_or_init(|| Kernels {
        narrow: gaussian_kernel(1.0),
        wide: gaussian_kernel(DOG_K),
        local: gaussian_kernel(2.0),
    })
}

/// Separable convolution with edge replication.
fn blur(src: &[f32], w: usize, h: usize, kernel: &[f32]) -> Vec<f32> {
    let r = kernel.len() / 2;
    let mut tmp = vec![0f32; w * h];
    let mut pad = vec![0f32; w + 2 * r];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        pad[..r].fill(row[0]);
        pad[r..r + w].copy_from_slice(row);
        pad[r + w..].fill(row[w - 1]);
        let out = &mut tmp[y * w..(y + 1) * w];
        for (k, &kv) in kernel.iter().enumerate() {
            let src = &pad[k..k + w];
            for (o, &s) in out.iter_mut().zip(src) {
                *o += kv * s;
            }
        }
    }
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        let dst = &mut out[y * w..(y + 1) * w];
        for (k, &kv) in kernel.iter().enumerate() {
            let sy = (y as isize + k as isize - r as isize).clamp(0, h as isize - 1) as usize;
            let src = &tmp[sy * w..(sy + 1) * w];
            for (o, &s) in dst.iter_mut().zip(src) {
                *o += kv * s;
            }
        }
    }
    out
}

fn pool2(src: &[f32], w: usize, h: usize) -> (Vec<f32>, usize, usize) {
    let (pw, ph) = (w / 2, h / 2);
    let mut out = vec![0f32; pw * ph];
    for y in 0..ph {
        let r0 = &src[2 * y * w..2 * y * w + w];
        let r1 = &src[(2 * y + 1) * w..(2 * y + 1) * w + w];
        for x in 0..pw {
            out[y * pw + x] = 0.25 * (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]);
        }
    }
    (out, pw, ph)
}

/// Vertex offset of the parabola through three samples, in [-0.5, 0.5].
fn parabolic_offset(a: f32, b: f32, c: f32) -> f64 {
    let denom = a - 2.0 * b + c;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (a - c) / denom).clamp(-0.5, 0.5) as f64
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    cx: f64,
    cy: f64,
    sigma: f64,
    response: f32,
}

impl ReferenceDetector {
    fn level_candidates(&self, img: &[f32], w: usize, h: usize, level: usize, out: &mut Vec<Candidate>) {
        if w < 3 || h < 3 {
            return;
        }
        let k = kernels();
        let g1 = blur(img, w, h, &k.narrow);
        let g2 = blur(img, w, h, &k.wide);
        // Dark blobs on bright sky give positive response.
        let dog: Vec<f32> = g2.iter().zip(&g1).map(|(a, b)| a - b).collect();
        let scale = (1usize << level) as f64;
        // Local mean square response at quarter resolution.
        let energy: Vec<f32> = dog.iter().map(|v| v * v).collect();
        let (e2, w2, h2) = pool2(&energy, w, h);
        let (e4, w4, h4) = pool2(&e2, w2, h2);
        let local = (w4 > 0 && h4 > 0).then(|| blur(&e4, w4, h4, &k.local));
        let k2 = self.clutter_k * self.clutter_k;
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let i = y * w + x;
                let v = dog[i];
                if v < self.threshold {
                    continue;
                }
                // Strict against earlier neighbours, non-strict against later
                // ones, so plateaus yield exactly one maximum.
                let earlier = [i - w - 1, i - w, i - w + 1, i - 1];
                let later = [i + 1, i + w - 1, i + w, i + w + 1];
                if earlier.iter().any(|&j| dog[j] >= v) || later.iter().any(|&j| dog[j] > v) {
                    continue;
                }
                if let Some(ms) = &local {
                    if v * v < k2 * ms[(y / 4).min(h4 - 1) * w4 + (x / 4).min(w4 - 1)] {
                        continue;
                    }
                }
                let dx = parabolic_offset(dog[i - 1], v, dog[i + 1]);
                let dy = parabolic_offset(dog[i - w], v, dog[i + w]);
                out.push(Candidate {
                    cx: (x as f64 + 0.5 + dx) * scale,
                    cy: (y as f64 + 0.5 + dy) * scale,
                    sigma: scale,
                    response: v,
                });
            }
        }
    }

    pub fn detect_raster(&self, pixels: &[u8], w: usize, h: usize) -> Vec<Detection> {
        let mut candidates = Vec::new();
        let mut img: Vec<f32> = pixels.iter().map(|&p| p as f32).collect();
        let (mut lw, mut lh) = (w, h);
        for level in 0..PYRAMID_LEVELS {
            self.level_candidates(&img, lw, lh, level, &mut candidates);
            if level + 1 < PYRAMID_LEVELS {
                let (next, nw, nh) = pool2(&img, lw, lh);
                img = next;
                lw = nw;
                lh = nh;
            }
        }
        // Keep the best-responding scale per location.
        candidates.sort_by(|a, b| {
            b.response
                .total_cmp(&a.response)
                .then(a.cx.total_cmp(&b.cx))
                .then(a.cy.total_cmp(&b.cy))
        });
        let mut kept: Vec<Candidate> = Vec::new();
        for c in candidates {
            let clash = kept.iter().any(|k| {
                let reach = 1.5 * k.sigma.max(c.sigma);
                (k.cx - c.cx).abs() < reach && (k.cy - c.cy).abs() < reach
            });
            if !clash {
                kept.push(c);
            }
        }
        kept.into_iter()
            .filter_map(|c| {
                let bbox = BBox::centered(c.cx, c.cy, 3.0 * c.sigma).clipped(w as f64, h as f64)?;
                let objectness = (c.response / self.objectness_scale).clamp(0.0, 1.0) as f64;
                Some(Detection::new(bbox, objectness))
            })
            .collect()
    }
}

impl Detector for ReferenceDetector {
    fn detect(&self, tile: &Tile) -> Result<Vec<Detection>, DetectError> {
        Ok(self.detect_raster(&tile.pixels, tile.width as usize, tile.height as usize))
    }
}

// ---------------------------------------------------------------------------
// Oracle detector
// ---------------------------------------------------------------------------

/// Logistic detection probability over the box diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MissModel {
    pub d50: f64,
    pub slope: f64,
    pub jitter_sigma: f64,
}

impl Default for MissModel {
    fn default() -> Self {
        Self {
            d50: 4.0,
            slope: 1.5,
            jitter_sigma: 0.5,
        }
    }
}

impl MissModel {
    /// Detects every box of at least 1e-3 px diagonal, without jitter.
    pub fn perfect() -> Self {
        Self {
            d50: 1e-9,
            slope: 1e6,
            jitter_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.d50 > 0.0) || !(self.slope > 0.0) || !(self.jitter_sigma >= 0.0) {
            return Err("miss model needs d50 > 0, slope > 0, jitter_sigma >= 0".into());
        }
        Ok(())
    }

    pub fn detection_probability(&self, diag: f64) -> f64 {
        1.0 / (1.0 + (-self.slope * (diag - self.d50)).exp())
    }
}

const ORACLE_STREAM: u64 = 0x0ac1e;

/// Thins ground truth through the miss model. Each `(camera, target, frame)`
/// has its own random stream.
pub fn oracle_detect(
    truth: &[TruthBox],
    camera_id: u32,
    frame_index: u64,
    frame_size: (u32, u32),
    model: &MissModel,
    seed: u64,
) -> Vec<Detection> {
    let mut out = Vec::new();
    for tb in truth {
        let mut rng = SplitMix64::stream(
            seed,
            &[ORACLE_STREAM, camera_id as u64, tb.target_id as u64, frame_index],
        );
        let p = model.detection_probability(tb.bbox.diag());
        if rng.next_f64() >= p {
            continue;
        }
        let (jx, jy) = if model.jitter_sigma > 0.0 {
            let zx: f64 = StandardNormal.sample(&mut rng);
            let zy: f64 = StandardNormal.sample(&mut rng);
            (zx * model.jitter_sigma, zy * model.jitter_sigma)
        } else {
            (0.0, 0.0)
        };
        if let Some(bbox) = tb
            .bbox
            .translated(jx, jy)
            .clipped(frame_size.0 as f64, frame_size.1 as f64)
        {
            out.push(Detection::new(bbox, p));
        }
    }
    crate::tiling::sort_detections(&mut out);
    out
}

// ---------------------------------------------------------------------------
// Blob baseline
// ---------------------------------------------------------------------------

/// Frame-differencing blob detector with its own clutter mask.
#[derive(Debug, Clone)]
pub struct BlobBaseline {
    pub config: MotionConfig,
    pub mask: ClutterMask,
}

impl BlobBaseline {
    pub fn new(width: u32, height: u32, config: MotionConfig) -> Self {
        Self {
            mask: ClutterMask::from_config(width, height, &config),
            config,
        }
    }

    pub fn detect(&mut self, prev: &ImageFrame, curr: &ImageFrame) -> Result<Vec<Detection>, DetectError> {
        let out = motion::process_pair(prev, curr, &mut self.mask, &self.config)?;
        let points = &out.change.points;
        // Targets are darker than the sky, so the pixels that darkened mark
        // where the object is now; the brightened ones are its trailing ghost.
        // A cluster with no darkened pixel is all ghost.
        let thr = self.config.threshold;
        let mut dets = Vec::with_capacity(out.clustering.clusters.len());
        for members in out.clustering.clusters.iter().filter(|m| !m.is_empty()) {
            let leading: Vec<usize> = members
                .iter()
                .copied()
                .filter(|&i| {
                    let (x, y) = points[i];
                    prev.get(x, y).saturating_sub(curr.get(x, y)) > thr
                })
                .collect();
            if leading.is_empty() {
                continue;
            }
            let mut d = cluster_detection(points, &leading, self.config.min_pts);
            d.objectness = objectness(members.len(), self.config.min_pts);
            dets.push(d);
        }
        // A cluster hugging a masked region can have its center inside it.
        dets.retain(|d| {
            let (cx, cy) = d.bbox.center();
            !self.mask.is_masked(cx as u32, cy as u32)
        });
        crate::tiling::sort_detections(&mut dets);
        Ok(dets)
    }
}

fn objectness(size: usize, min_pts: usize) -> f64 {
    (0.25 * size as f64 / min_pts.max(1) as f64).min(1.0)
}

fn cluster_detection(points: &[(u32, u32)], members: &[usize], min_pts: usize) -> Detection {
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for &i in members {
        let (x, y) = points[i];
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let bbox = BBox::new(x0 as f64, y0 as f64, (x1 - x0 + 1) as f64, (y1 - y0 + 1) as f64);
    Detection::new(bbox, objectness(members.len(), min_pts))
}

/// One detection per cluster: the bounding box of its pixels.
pub fn clusters_to_detections(points: &[(u32, u32)], clusters: &[Vec<usize>], min_pts: usize) -> Vec<Detection> {
    let mut out: Vec<Detection> = clusters
        .iter()
        .filter(|m| !m.is_empty())
        .map(|members| cluster_detection(points, members, min_pts))
        .collect();
    crate::tiling::sort_detections(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::species::Species;

    /// Sky tile with Gaussian dark blobs given as (cx, cy, fwhm).
    fn blob_tile(w: usize, h: usize, blobs: &[(f64, f64, f64)], noise: f64, seed: u64) -> Vec<u8> {
        let mut rng = SplitMix64::new(seed);
        let mut px = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let mut v = 200.0;
                for &(cx, cy, d) in blobs {
                    let s = d / 2.354_820_045;
                    let r2 = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
                    v -= 100.0 * (-r2 / (2.0 * s * s)).exp();
                }
                let z: f64 = StandardNormal.sample(&mut rng);
                px.push((v + noise * z).round().clamp(0.0, 255.0) as u8);
            }
        }
        px
    }

    #[test]
    fn blank_tile_is_empty() {
        let det = ReferenceDetector::default();
        assert!(det.detect_raster(&vec![180; 300 * 300], 300, 300).is_empty());
        let noisy = blob_tile(300, 300, &[], 3.0, 1);
        assert!(det.detect_raster(&noisy, 300, 300).is_empty());
    }

    #[test]
    fn single_blob_located() {
        let det = ReferenceDetector::default();
        for &(cx, cy, d) in &[(150.3, 140.8, 3.0), (77.0, 201.5, 6.0), (120.0, 160.0, 12.0)] {
            // SNR 10: contrast 100 over noise sigma 10.
            let px = blob_tile(300, 300, &[(cx, cy, d)], 10.0, 7);
            let dets = det.detect_raster(&px, 300, 300);
            assert_eq!(dets.len(), 1, "blob {d}: {dets:?}");
            let (x, y) = dets[0].bbox.center();
            assert!((x - cx).abs() <= 1.0 && (y - cy).abs() <= 1.0, "blob {d}: ({x}, {y})");
        }
    }

    #[test]
    fn two_blobs_two_detections() {
        let det = ReferenceDetector::default();
        let px = blob_tile(300, 300, &[(100.0, 150.0, 4.0), (150.0, 150.0, 4.0)], 2.0, 3);
        assert_eq!(det.detect_raster(&px, 300, 300).len(), 2);
    }

    #[test]
    fn scale_tracks_blob_size() {
        let det = ReferenceDetector::default();
        let small = det.detect_raster(&blob_tile(200, 200, &[(100.0, 100.0, 3.0)], 0.0, 1), 200, 200);
        let large = det.detect_raster(&blob_tile(200, 200, &[(100.0, 100.0, 10.0)], 0.0, 1), 200, 200);
        assert!(small[0].bbox.w < large[0].bbox.w);
        assert_eq!(small[0].class_scores, Detection::UNIFORM_SCORES);
    }

    #[test]
    fn translation_equivariance() {
        let det = ReferenceDetector::default();
        for d in [3.0, 8.0] {
            let base = det.detect_raster(&blob_tile(200, 200, &[(90.0, 95.0, d)], 0.0, 1), 200, 200);
            for (sx, sy) in [(1.0, 0.0), (3.0, 2.0), (7.0, 5.0), (13.0, 11.0)] {
                let moved = det.detect_raster(
                    &blob_tile(200, 200, &[(90.0 + sx, 95.0 + sy, d)], 0.0, 1),
                    200,
                    200,
                );
                let (bx, by) = base[0].bbox.center();
                let (mx, my) = moved[0].bbox.center();
                assert!(((mx - bx) - sx).abs() <= 1.0 && ((my - by) - sy).abs() <= 1.0);
            }
        }
    }

    fn truth_box(id: u32, side: f64) -> TruthBox {
        TruthBox {
            target_id: id,
            species: Species::Bird,
            bbox: BBox::centered(100.0, 100.0, side),
            distance_m: 300.0,
        }
    }

    #[test]
    fn perfect_oracle_returns_truth() {
        let truth = vec![truth_box(1, 3.0), truth_box(2, 10.0)];
        let dets = oracle_detect(&truth, 0, 5, (400, 400), &MissModel::perfect(), 9);
        assert_eq!(dets.len(), 2);
        for tb in &truth {
            assert!(dets.iter().any(|d| d.bbox == tb.bbox));
        }
    }

    #[test]
    fn oracle_rate_at_d50_is_half() {
        let model = MissModel {
            d50: 4.0,
            slope: 1.5,
            jitter_sigma: 0.0,
        };
        let side = 4.0 / 2f64.sqrt();
        let tb = truth_box(1, side);
        let hits = (0..10_000u64)
            .filter(|&f| !oracle_detect(std::slice::from_ref(&tb), 0, f, (400, 400), &model, 3).is_empty())
            .count();
        let rate = hits as f64 / 10_000.0;
        assert!((rate - 0.5).abs() <= 0.02, "rate {rate}");
    }

    #[test]
    fn oracle_saturates_and_is_monotone() {
        let model = MissModel::default();
        assert!(model.detection_probability(40.0) > 0.999_999);
        let mut last = 0.0;
        for i in 0..100 {
            let p = model.detection_probability(i as f64 * 0.2);
            assert!(p >= last);
            last = p;
        }
    }

    #[test]
    fn oracle_is_replayable() {
        let truth = vec![truth_box(1, 3.0), truth_box(2, 4.0)];
        let m = MissModel::default();
        assert_eq!(
            oracle_detect(&truth, 1, 7, (400, 400), &m, 11),
            oracle_detect(&truth, 1, 7, (400, 400), &m, 11)
        );
    }

    #[test]
    fn detector_kind_parsing() {
        assert_eq!("oracle".parse::<DetectorKind>().unwrap(), DetectorKind::Oracle);
        assert_eq!("blob".parse::<DetectorKind>().unwrap(), DetectorKind::Blob);
        assert!("ssd".parse::<DetectorKind>().is_err());
        assert_eq!(DetectorKind::Reference.to_string(), "reference");
    }

    fn dark_square(cx: u32, cy: u32, side: u32) -> ImageFrame {
        let mut f = ImageFrame::filled(0, 0, 0.0, 200, 120, 200);
        for y in cy - side / 2..cy + side - side / 2 {
            for x in cx - side / 2..cx + side - side / 2 {
                f.set(x, y, 60);
            }
        }
        f
    }

    #[test]
    fn blob_moving_square_boxed_at_new_position() {
        let mut blob = BlobBaseline::new(200, 120, MotionConfig::default());
        let dets = blob.detect(&dark_square(60, 60, 5), &dark_square(80, 60, 5)).unwrap();
        assert_eq!(dets.len(), 1, "{dets:?}");
        assert_eq!(dets[0].bbox, BBox::new(78.0, 58.0, 5.0, 5.0));
    }

    #[test]
    fn blob_static_scene_goes_quiet() {
        let s = crate::synthsky::presets::empty();
        let mut blob = BlobBaseline::new(s.cameras[0].sensor.0, s.cameras[0].sensor.1, MotionConfig::default());
        let mut prev = crate::synthsky::render_frame_index(&s, 0, 0).unwrap();
        for k in 1..24 {
            let curr = crate::synthsky::render_frame_index(&s, 0, k).unwrap();
            let dets = blob.detect(&prev, &curr).unwrap();
            if k > 16 {
                assert!(dets.is_empty(), "frame {k}: {dets:?}");
            }
            prev = curr;
        }
    }

    /// Treetop band of the clutter scenario: coverage of the foliage by the
    /// mask, and the bird skimming over it.
    #[test]
    fn treetops_masked_and_bird_over_them_missed() {
        let s = crate::synthsky::presets::clutter();
        let cfg = MotionConfig::default();
        let cam = &s.cameras[0];
        let (w, h) = cam.sensor;
        let band = s.clutter.iter().find(|c| c.camera_id == 0).unwrap().region;
        let mut blob = BlobBaseline::new(w, h, cfg);
        let first = crate::synthsky::render_frame_index(&s, 0, 0).unwrap();
        let mut prev = first.clone();
        let warm = 2 * cfg.window_n as u64;
        for k in 1..=warm + 20 {
            let curr = crate::synthsky::render_frame_index(&s, 0, k).unwrap();
            let dets = blob.detect(&prev, &curr).unwrap();
            prev = curr;
            if k == warm {
                let (mut foliage, mut masked) = (0usize, 0usize);
                for y in band.y as u32..(band.y + band.h) as u32 {
                    for x in 0..w {
                        if first.get(x, y) < 150 {
                            foliage += 1;
                            masked += blob.mask.is_masked(x, y) as usize;
                        }
                    }
                }
                assert!(masked as f64 >= 0.95 * foliage as f64, "{masked}/{foliage}");
            }
            if k >= warm {
                let truth = crate::synthsky::ground_truth_boxes(&s, 0, s.frame_time(k)).unwrap();
                let bird = truth.iter().find(|b| b.target_id == 2).unwrap();
                let (bx, by) = bird.bbox.center();
                assert!(by > band.y && by < band.y + band.h && bx > band.x && bx < band.x + band.w);
                assert!(dets.iter().all(|d| crate::tiling::iou(&d.bbox, &bird.bbox) < 0.3), "frame {k}");
                for d in &dets {
                    let (cx, cy) = d.bbox.center();
                    assert!(!blob.mask.is_masked(cx as u32, cy as u32));
                }
            }
        }
    }
}

