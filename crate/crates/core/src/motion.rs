//! Classical motion pipeline: frame differencing, DBSCAN over changed pixels,
//! persistent-clutter masking and fixed-size ROI extraction.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::ImageFrame;

pub const ROI_SIZE: u32 = 128;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MotionError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Tunables for the motion path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionConfig {
    pub threshold: u8,
    pub eps: f64,
    pub min_pts: usize,
    pub window_n: u32,
    pub trigger_k: u32,
    pub dilate_px: u32,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            threshold: 12,
            eps: 3.0,
            min_pts: 4,
            window_n: 8,
            trigger_k: 6,
            dilate_px: 1,
        }
    }
}

/// Pixels whose absolute difference between two frames exceeds a threshold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangeSet {
    pub prev_frame: u64,
    pub curr_frame: u64,
    pub width: u32,
    pub height: u32,
    /// Row-major order, no duplicates.
    pub points: Vec<(u32, u32)>,
}

pub fn frame_diff(prev: &ImageFrame, curr: &ImageFrame, threshold: u8) -> Result<ChangeSet, MotionError> {
    if prev.width != curr.width || prev.height != curr.height {
        return Err(MotionError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            prev.width, prev.height, curr.width, curr.height
        )));
    }
    if prev.camera_id != curr.camera_id {
        return Err(MotionError::DimensionMismatch(format!(
            "camera {} vs camera {}",
            prev.camera_id, curr.camera_id
        )));
    }
    let w = curr.width as usize;
    let points = prev
        .pixels
        .iter()
        .zip(&curr.pixels)
        .enumerate()
        .filter(|(_, (&a, &b))| a.abs_diff(b) > threshold)
        .map(|(i, _)| ((i % w) as u32, (i / w) as u32))
        .collect();
    Ok(ChangeSet {
        prev_frame: prev.frame_index,
        curr_frame: curr.frame_index,
        width: curr.width,
        height: curr.height,
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Clustering {
    /// Member indices of each cluster, in discovery order.
    pub clusters: Vec<Vec<usize>>,
    pub noise: Vec<usize>,
}

impl Clustering {
    /// Per-point label: `Some(cluster)` or `None` for noise.
    pub fn labels(&self, n: usize) -> Vec<Option<usize>> {
        let mut labels = vec![None; n];
        for (c, members) in self.clusters.iter().enumerate() {
            for &i in members {
                labels[i] = Some(c);
            }
        }
        labels
    }
}

/// Uniform grid over the points with cell size `eps`.
struct GridIndex {
    cell: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl GridIndex {
    fn new(points: &[(f64, f64)], cell: f64) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, &(x, y)) in points.iter().enumerate() {
            cells
                .entry(((x / cell).floor() as i64, (y / cell).floor() as i64))
                .or_default()
                .push(i);
        }
        Self { cell, cells }
    }

    /// Indices within `eps` of point `i` (including itself), ascending.
    fn neighbors(&self, points: &[(f64, f64)], i: usize, eps: f64, out: &mut Vec<usize>) {
        out.clear();
        let (x, y) = points[i];
        let cx = (x / self.cell).floor() as i64;
        let cy = (y / self.cell).floor() as i64;
        let eps2 = eps * eps;
        for gx in cx - 1..=cx + 1 {
            for gy in cy - 1..=cy + 1 {
                if let Some(bucket) = self.cells.get(&(gx, gy)) {
                    for &j in bucket {
                        let (px, py) = points[j];
                        let (dx, dy) = (px - x, py - y);
                        if dx * dx + dy * dy <= eps2 {
                            out.push(j);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
    }
}

/// Density-based clustering under Euclidean distance.
///
/// Points are visited in index order and clusters grow breadth-first with
/// seeds queued in ascending index order, so border points shared by two
/// clusters go to the one discovered first.
pub fn dbscan(points: &[(f64, f64)], eps: f64, min_pts: usize) -> Clustering {
    assert!(eps > 0.0, "eps must be positive");
    let min_pts = min_pts.max(1);
    const UNVISITED: usize = usize::MAX;
    const NOISE: usize = usize::MAX - 1;

    let index = GridIndex::new(points, eps);
    let mut label = vec![UNVISITED; points.len()];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut nbrs = Vec::new();
    let mut inner = Vec::new();
    let mut queue = VecDeque::new();

    for i in 0..points.len() {
        if label[i] != UNVISITED {
            continue;
        }
        index.neighbors(points, i, eps, &mut nbrs);
        if nbrs.len() < min_pts {
            label[i] = NOISE;
            continue;
        }
        let c = clusters.len();
        let mut members = vec![i];
        label[i] = c;
        queue.clear();
        queue.extend(nbrs.iter().copied().filter(|&j| j != i));
        while let Some(j) = queue.pop_front() {
            if label[j] == NOISE {
                label[j] = c;
                members.push(j);
                continue;
            }
            if label[j] != UNVISITED {
                continue;
            }
            label[j] = c;
            members.push(j);
            index.neighbors(points, j, eps, &mut inner);
            if inner.len() >= min_pts {
                queue.extend(inner.iter().copied());
            }
        }
        clusters.push(members);
    }
    let noise = (0..points.len()).filter(|&i| label[i] == NOISE).collect();
    Clustering { clusters, noise }
}

/// Per-pixel change history over the last `window_n` difference images.
#[derive(Debug, Clone, PartialEq)]
pub struct ClutterMask {
    pub width: u32,
    pub height: u32,
    pub window_n: u32,
    pub trigger_k: u32,
    pub dilate_px: u32,
    history: Vec<u32>,
    /// Dilated mask used for filtering.
    mask: Vec<bool>,
    updates: u64,
}

impl ClutterMask {
    pub fn new(width: u32, height: u32, window_n: u32, trigger_k: u32, dilate_px: u32) -> Self {
        assert!(
            (1..=32).contains(&window_n) && trigger_k > 0 && trigger_k <= window_n,
            "need 0 < trigger_k <= window_n <= 32"
        );
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            window_n,
            trigger_k,
            dilate_px,
            history: vec![0; n],
            mask: vec![false; n],
            updates: 0,
        }
    }

    pub fn from_config(width: u32, height: u32, cfg: &MotionConfig) -> Self {
        Self::new(width, height, cfg.window_n, cfg.trigger_k, cfg.dilate_px)
    }

    #[inline]
    pub fn is_masked(&self, x: u32, y: u32) -> bool {
        self.mask[y as usize * self.width as usize + x as usize]
    }

    pub fn masked_fraction(&self) -> f64 {
        let n = self.mask.len().max(1);
        self.mask.iter().filter(|&&m| m).count() as f64 / n as f64
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Drops masked pixels from a change set.
    pub fn apply(&self, change: &ChangeSet) -> ChangeSet {
        ChangeSet {
            points: change
                .points
                .iter()
                .copied()
                .filter(|&(x, y)| !self.is_masked(x, y))
                .collect(),
            ..change.clone()
        }
    }

    fn rebuild(&mut self) {
        let (w, h) = (self.width as usize, self.height as usize);
        let window = if self.window_n == 32 {
            u32::MAX
        } else {
            (1u32 << self.window_n) - 1
        };
        let raw: Vec<bool> = self
            .history
            .iter()
            .map(|&bits| (bits & window).count_ones() >= self.trigger_k)
            .collect();
        let r = self.dilate_px as usize;
        if r == 0 {
            self.mask = raw;
            return;
        }
        // Separable square dilation.
        let mut horiz = vec![false; w * h];
        for y in 0..h {
            let row = &raw[y * w..(y + 1) * w];
            let out = &mut horiz[y * w..(y + 1) * w];
            for (x, &m) in row.iter().enumerate() {
                if m {
                    let a = x.saturating_sub(r);
                    let b = (x + r).min(w - 1);
                    out[a..=b].fill(true);
                }
            }
        }
        let mut mask = vec![false; w * h];
        for y in 0..h {
            let a = y.saturating_sub(r);
            let b = (y + r).min(h - 1);
            for x in 0..w {
                if horiz[y * w + x] {
                    for yy in a..=b {
                        mask[yy * w + x] = true;
                    }
                }
            }
        }
        self.mask = mask;
    }
}

pub fn update_clutter_mask(mask: &mut ClutterMask, change: &ChangeSet) -> Result<(), MotionError> {
    if change.width != mask.width || change.height != mask.height {
        return Err(MotionError::DimensionMismatch(format!(
            "mask {}x{} vs change set {}x{}",
            mask.width, mask.height, change.width, change.height
        )));
    }
    for h in mask.history.iter_mut() {
        *h <<= 1;
    }
    let w = mask.width as usize;
    for &(x, y) in &change.points {
        mask.history[y as usize * w + x as usize] |= 1;
    }
    mask.updates += 1;
    mask.rebuild();
    Ok(())
}

/// A fixed-size crop around a motion cluster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Roi {
    pub center: (u32, u32),
    pub origin: (i64, i64),
    pub crop: Vec<u8>,
    pub frame_index: u64,
    pub camera_id: u32,
    pub cluster_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiIndexRecord {
    pub frame: u64,
    pub camera: u32,
    pub center: [u32; 2],
    pub cluster_size: usize,
    pub file: String,
}

/// Centroid of a cluster of integer pixel points, rounded to the nearest pixel.
pub fn cluster_centroid(points: &[(u32, u32)], members: &[usize]) -> (u32, u32) {
    let n = members.len().max(1) as f64;
    let (sx, sy) = members.iter().fold((0.0, 0.0), |(sx, sy), &i| {
        (sx + points[i].0 as f64, sy + points[i].1 as f64)
    });
    ((sx / n).round() as u32, (sy / n).round() as u32)
}

/// One 128x128 crop per cluster, window shifted to stay inside the frame.
pub fn extract_rois(clusters: &[Vec<usize>], points: &[(u32, u32)], frame: &ImageFrame) -> Vec<Roi> {
    let size = ROI_SIZE as i64;
    clusters
        .iter()
        .filter(|m| !m.is_empty())
        .map(|members| {
            let center = cluster_centroid(points, members);
            let clamp_origin = |c: u32, dim: u32| -> i64 {
                let o = c as i64 - size / 2;
                o.clamp(0, (dim as i64 - size).max(0))
            };
            let ox = clamp_origin(center.0, frame.width);
            let oy = clamp_origin(center.1, frame.height);
            let mut crop = Vec::with_capacity((size * size) as usize);
            for dy in 0..size {
                for dx in 0..size {
                    crop.push(frame.get_clamped(ox + dx, oy + dy));
                }
            }
            Roi {
                center,
                origin: (ox, oy),
                crop,
                frame_index: frame.frame_index,
                camera_id: frame.camera_id,
                cluster_size: members.len(),
            }
        })
        .collect()
}

/// Full motion path for one frame pair: diff, update mask, filter, cluster.
#[derive(Debug, Clone)]
pub struct MotionOutput {
    pub raw_changes: usize,
    pub change: ChangeSet,
    pub clustering: Clustering,
}

pub fn process_pair(
    prev: &ImageFrame,
    curr: &ImageFrame,
    mask: &mut ClutterMask,
    cfg: &MotionConfig,
) -> Result<MotionOutput, MotionError> {
    let raw = frame_diff(prev, curr, cfg.threshold)?;
    update_clutter_mask(mask, &raw)?;
    let change = mask.apply(&raw);
    let pts: Vec<(f64, f64)> = change.points.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
    let clustering = dbscan(&pts, cfg.eps, cfg.min_pts);
    Ok(MotionOutput {
        raw_changes: raw.points.len(),
        change,
        clustering,
    })
}
