//! Slicing-aided inference: overlapping tiles over a high-resolution frame,
//! per-tile detection, remap to frame coordinates and duplicate suppression.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::{DetectError, Detector};
use crate::geometry::BBox;
use crate::image::ImageFrame;
use crate::species::NUM_CLASSES;

pub const DEFAULT_TILE: u32 = 300;
pub const DEFAULT_OVERLAP: f64 = 0.25;
pub const DEFAULT_NMS_IOU: f64 = 0.45;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileGrid {
    pub width: u32,
    pub height: u32,
    pub tile: u32,
    pub overlap_ratio: f64,
    /// Tile origins, row-major.
    pub offsets: Vec<(u32, u32)>,
}

impl TileGrid {
    pub fn tile_width(&self) -> u32 {
        self.tile.min(self.width)
    }

    pub fn tile_height(&self) -> u32 {
        self.tile.min(self.height)
    }
}

fn axis_origins(dim: u32, tile: u32, stride: u32) -> Vec<u32> {
    if dim <= tile {
        return vec![0];
    }
    let span = dim - tile;
    let count = span.div_ceil(stride) + 1;
    (0..count).map(|k| (k * stride).min(span)).collect()
}

/// Plans a grid of `tile`-sized windows with the given fractional overlap.
pub fn plan_tiles(width: u32, height: u32, tile: u32, overlap_ratio: f64) -> TileGrid {
    assert!(tile > 0, "tile must be positive");
    assert!((0.0..1.0).contains(&overlap_ratio), "overlap_ratio must be in [0, 1)");
    let stride = ((tile as f64 * (1.0 - overlap_ratio)).floor() as u32).max(1);
    let xs = axis_origins(width, tile, stride);
    let ys = axis_origins(height, tile, stride);
    let offsets = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .collect();
    TileGrid {
        width,
        height,
        tile,
        overlap_ratio,
        offsets,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub objectness: f64,
    pub class_scores: [f64; NUM_CLASSES],
}

impl Detection {
    pub const UNIFORM_SCORES: [f64; NUM_CLASSES] = [0.25; NUM_CLASSES];

    pub fn new(bbox: BBox, objectness: f64) -> Self {
        Self {
            bbox,
            objectness,
            class_scores: Self::UNIFORM_SCORES,
        }
    }
}

pub fn iou(b1: &BBox, b2: &BBox) -> f64 {
    let inter = b1.intersection_area(b2);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = b1.area() + b2.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Canonical ordering: objectness descending, then top-left x, then y.
pub fn sort_detections(dets: &mut [Detection]) {
    dets.sort_by(|a, b| {
        b.objectness
            .total_cmp(&a.objectness)
            .then(a.bbox.x.total_cmp(&b.bbox.x))
            .then(a.bbox.y.total_cmp(&b.bbox.y))
            .then(a.bbox.w.total_cmp(&b.bbox.w))
            .then(a.bbox.h.total_cmp(&b.bbox.h))
    });
}

/// Greedy non-maximum suppression.
pub fn nms(mut detections: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    sort_detections(&mut detections);
    let mut kept: Vec<Detection> = Vec::with_capacity(detections.len());
    for d in detections {
        if kept.iter().all(|k| iou(&k.bbox, &d.bbox) < iou_threshold) {
            kept.push(d);
        }
    }
    kept
}

/// A rectangular crop of a frame handed to a detector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tile {
    pub index: usize,
    pub origin: (u32, u32),
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl Tile {
    pub fn crop(frame: &ImageFrame, index: usize, origin: (u32, u32), width: u32, height: u32) -> Tile {
        let w = width.min(frame.width - origin.0);
        let h = height.min(frame.height - origin.1);
        let fw = frame.width as usize;
        let mut pixels = Vec::with_capacity(w as usize * h as usize);
        for y in origin.1..origin.1 + h {
            let start = y as usize * fw + origin.0 as usize;
            pixels.extend_from_slice(&frame.pixels[start..start + w as usize]);
        }
        Tile {
            index,
            origin,
            width: w,
            height: h,
            pixels,
        }
    }

    pub fn whole(frame: &ImageFrame) -> Tile {
        Tile::crop(frame, 0, (0, 0), frame.width, frame.height)
    }
}

/// Runs `detector` on every tile, remaps to frame coordinates and merges.
///
/// Tiles may be processed in parallel; the result is independent of
/// scheduling because the union is put in canonical order before NMS.
pub fn run_tiled<D: Detector + ?Sized>(
    detector: &D,
    frame: &ImageFrame,
    grid: &TileGrid,
    iou_threshold: f64,
) -> Result<Vec<Detection>, DetectError> {
    let (tw, th) = (grid.tile_width(), grid.tile_height());
    let per_tile: Vec<Result<Vec<Detection>, DetectError>> = grid
        .offsets
        .par_iter()
        .enumerate()
        .map(|(index, &origin)| {
            let tile = Tile::crop(frame, index, origin, tw, th);
            detector
                .detect(&tile)
                .map(|dets| {
                    dets.into_iter()
                        .filter_map(|mut d| {
                            d.bbox = d
                                .bbox
                                .translated(origin.0 as f64, origin.1 as f64)
                                .clipped(frame.width as f64, frame.height as f64)?;
                            Some(d)
                        })
                        .collect()
                })
                .map_err(|e| DetectError::InTile {
                    tile: index,
                    source: Box::new(e),
                })
        })
        .collect();
    let mut all = Vec::new();
    for r in per_tile {
        all.extend(r?);
    }
    Ok(nms(all, iou_threshold))
}
