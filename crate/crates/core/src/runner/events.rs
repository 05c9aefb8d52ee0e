use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::manager::{RangeEstimate, TrackKey, TurbineCommand};
use crate::species::Species;
use crate::track::{Track, TrackStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetRecord {
    pub bbox: [f64; 4],
    pub objectness: f64,
}

impl DetRecord {
    pub fn bbox(&self) -> BBox {
        BBox::new(self.bbox[0], self.bbox[1], self.bbox[2], self.bbox[3])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub frame: u64,
    pub t: f64,
    pub camera: u32,
    pub id: u64,
    pub status: TrackStatus,
    pub x: [f64; 4],
    #[serde(rename = "P_diag")]
    pub p_diag: [f64; 4],
    pub posterior: [f64; 4],
    /// Class reported by the per-frame classifier when the track was hit.
    pub reported: Option<Species>,
    /// Ground-truth target the track is following, if any.
    pub target: Option<u32>,
    pub species: Option<Species>,
}

impl TrackRecord {
    pub fn new(
        frame: u64,
        t: f64,
        camera: u32,
        track: &Track,
        reported: Option<Species>,
        target: Option<(u32, Species)>,
    ) -> Self {
        let x = track.state.x();
        let p = track.state.p();
        Self {
            frame,
            t,
            camera,
            id: track.id,
            status: track.status,
            x: [x[0], x[1], x[2], x[3]],
            p_diag: [p[(0, 0)], p[(1, 1)], p[(2, 2)], p[(3, 3)]],
            posterior: track.posterior.p,
            reported,
            target: target.map(|t| t.0),
            species: target.map(|t| t.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Frame {
        frame: u64,
        t: f64,
        camera: u32,
        masked_fraction: Option<f64>,
        changed_pixels: Option<usize>,
    },
    Detections {
        frame: u64,
        t: f64,
        camera: u32,
        detections: Vec<DetRecord>,
    },
    Track(TrackRecord),
    Manager {
        frame: u64,
        t: f64,
        priority: Option<TrackKey>,
        pan: f64,
        tilt: f64,
        pointing_error: Option<f64>,
        range: Option<RangeEstimate>,
    },
    Command(TurbineCommand),
}

pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_jsonl<R: BufRead, T: for<'de> Deserialize<'de>>(r: R) -> Result<Vec<T>, String> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}
