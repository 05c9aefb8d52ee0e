use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::fuse::{time_to_confidence, ClassPosterior};
use crate::manager::Action;
use crate::species::{Species, NUM_CLASSES};
use crate::synthsky::TruthRecord;
use crate::tiling::iou;
use crate::track::TrackStatus;

use super::events::{DetRecord, Event};
use super::RunError;

pub const MATCH_IOU: f64 = 0.3;
pub const NEAR_BIN_M: (f64, f64) = (0.0, 350.0);
pub const FAR_BIN_M: (f64, f64) = (350.0, 700.0);
pub const CONFIDENCE: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub frames: u64,
    pub cameras: usize,
    /// Track-level rate: fraction of (target, bin) visits with at least one
    /// matched detection while the target was in the bin.
    pub near_rate: Option<f64>,
    pub far_rate: Option<f64>,
    pub near_visits: usize,
    pub far_visits: usize,
    /// Box-level recall inside each bin.
    pub near_box_recall: Option<f64>,
    pub far_box_recall: Option<f64>,
    pub truth_boxes: usize,
    pub detections: usize,
    pub true_positives: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub average_precision: Option<f64>,
    /// Rows: true species, columns: final posterior argmax, per confirmed track.
    pub confusion: [[u64; NUM_CLASSES]; NUM_CLASSES],
    /// Share of confirmed-track frames whose fused argmax is the true class.
    pub fused_accuracy: Option<f64>,
    /// Share of per-frame classifier reports naming the true class.
    pub raw_accuracy: Option<f64>,
    pub ttc_tracks: usize,
    pub ttc_not_reached: usize,
    pub ttc_median_s: Option<f64>,
    pub ttc_p99_s: Option<f64>,
    pub masked_fraction: Option<f64>,
    pub throughput_fps: Option<f64>,
    pub stop_commands: usize,
    pub run_commands: usize,
    pub first_stop_t: Option<f64>,
    pub first_stop_distance_m: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Median and nearest-rank 99th percentile; unreached entries are infinite.
fn median_p99(mut v: Vec<f64>) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    let rank = ((0.99 * n as f64).ceil() as usize).clamp(1, n);
    (Some(median), Some(v[rank - 1]))
}

/// Area under the precision envelope sampled at 101 recall points.
pub fn average_precision(scored: &[(f64, bool)], n_truth: usize) -> Option<f64> {
    if n_truth == 0 {
        return None;
    }
    let mut s: Vec<(f64, bool)> = scored.to_vec();
    s.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(s.len());
    for (k, &(_, hit)) in s.iter().enumerate() {
        if hit {
            tp += 1;
        }
        curve.push((tp as f64 / n_truth as f64, tp as f64 / (k + 1) as f64));
    }
    for i in (0..curve.len().saturating_sub(1)).rev() {
        curve[i].1 = curve[i].1.max(curve[i + 1].1);
    }
    let mut total = 0.0;
    for r in 0..=100 {
        let level = r as f64 / 100.0;
        let p = curve
            .iter()
            .find(|(rec, _)| *rec >= level - 1e-12)
            .map(|c| c.1)
            .unwrap_or(0.0);
        total += p;
    }
    Some(total / 101.0)
}

/// Greedy matching of one frame's detections to its truth boxes.
/// Returns, per detection, whether it is a true positive.
pub fn match_frame(dets: &[DetRecord], truth: &[&TruthRecord]) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].objectness.total_cmp(&dets[a].objectness).then(a.cmp(&b)));
    let mut used = vec![false; truth.len()];
    let mut hit = vec![false; dets.len()];
    for i in order {
        let b = dets[i].bbox();
        let mut best: Option<(usize, f64)> = None;
        for (j, tr) in truth.iter().enumerate() {
            if used[j] {
                continue;
            }
            let v = iou(&b, &tr.bbox());
            if v >= MATCH_IOU && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            used[j] = true;
            hit[i] = true;
        }
    }
    hit
}

fn bin_of(distance_m: f64) -> Option<usize> {
    if distance_m >= NEAR_BIN_M.0 && distance_m <= NEAR_BIN_M.1 {
        Some(0)
    } else if distance_m > FAR_BIN_M.0 && distance_m <= FAR_BIN_M.1 {
        Some(1)
    } else {
        None
    }
}

/// Recomputes every run metric from the event log and ground truth.
pub fn compute_metrics(events: &[Event], truth: &[TruthRecord]) -> Result<RunMetrics, RunError> {
    let mut m = RunMetrics::default();
    let mut frames: BTreeMap<(u64, u32), f64> = BTreeMap::new();
    let mut dets: BTreeMap<(u64, u32), &Vec<DetRecord>> = BTreeMap::new();
    let mut masked: BTreeMap<u32, f64> = BTreeMap::new();
    for e in events {
        match e {
            Event::Frame {
                frame,
                t,
                camera,
                masked_fraction,
                ..
            } => {
                frames.insert((*frame, *camera), *t);
                if let Some(f) = masked_fraction {
                    masked.insert(*camera, *f);
                }
            }
            Event::Detections {
                frame,
                camera,
                detections,
                ..
            } => {
                dets.insert((*frame, *camera), detections);
            }
            _ => {}
        }
    }
    let mut truth_by_frame: BTreeMap<(u64, u32), Vec<&TruthRecord>> = BTreeMap::new();
    for tr in truth {
        match frames.get(&(tr.frame, tr.camera)) {
            Some(t) if (t - tr.t).abs() < 1e-9 => {}
            _ => {
                return Err(RunError::MismatchedRun(format!(
                    "truth frame {} camera {} at t={} has no matching log frame",
                    tr.frame, tr.camera, tr.t
                )))
            }
        }
        truth_by_frame.entry((tr.frame, tr.camera)).or_default().push(tr);
    }
    if dets.keys().any(|k| !frames.contains_key(k)) {
        return Err(RunError::MismatchedRun("detections for an unlogged frame".into()));
    }
    m.frames = frames.keys().map(|k| k.0).collect::<BTreeSet<_>>().len() as u64;
    m.cameras = frames.keys().map(|k| k.1).collect::<BTreeSet<_>>().len();

    let empty: Vec<DetRecord> = Vec::new();
    let mut scored = Vec::new();
    let mut visits: BTreeMap<(u32, usize), bool> = BTreeMap::new();
    let mut bin_boxes = [(0usize, 0usize); 2];
    for key in frames.keys() {
        let d = dets.get(key).copied().unwrap_or(&empty);
        let tr = truth_by_frame.get(key).map(|v| v.as_slice()).unwrap_or(&[]);
        let hits = match_frame(d, tr);
        for (det, &h) in d.iter().zip(&hits) {
            scored.push((det.objectness, h));
        }
        m.detections += d.len();
        m.true_positives += hits.iter().filter(|&&h| h).count();
        m.truth_boxes += tr.len();
        for t in tr {
            let seen = d.iter().any(|x| iou(&x.bbox(), &t.bbox()) >= MATCH_IOU);
            if let Some(bin) = bin_of(t.distance_m) {
                let v = visits.entry((t.target_id, bin)).or_insert(false);
                *v |= seen;
                bin_boxes[bin].1 += 1;
                if seen {
                    bin_boxes[bin].0 += 1;
                }
            }
        }
    }
    m.precision = ratio(m.true_positives, m.detections);
    m.recall = ratio(m.true_positives, m.truth_boxes);
    m.average_precision = average_precision(&scored, m.truth_boxes);
    for bin in 0..2 {
        let all: Vec<bool> = visits.iter().filter(|(k, _)| k.1 == bin).map(|(_, &v)| v).collect();
        let rate = ratio(all.iter().filter(|&&v| v).count(), all.len());
        if bin == 0 {
            m.near_rate = rate;
            m.near_visits = all.len();
            m.near_box_recall = ratio(bin_boxes[0].0, bin_boxes[0].1);
        } else {
            m.far_rate = rate;
            m.far_visits = all.len();
            m.far_box_recall = ratio(bin_boxes[1].0, bin_boxes[1].1);
        }
    }

    type Series = Vec<(f64, ClassPosterior)>;
    let mut tracks: BTreeMap<(u32, u64), (Series, Option<f64>, Option<Species>)> = BTreeMap::new();
    let (mut fused_ok, mut fused_n, mut raw_ok, mut raw_n) = (0usize, 0usize, 0usize, 0usize);
    for e in events {
        let Event::Track(r) = e else { continue };
        let entry = tracks.entry((r.camera, r.id)).or_insert((Vec::new(), None, None));
        entry.0.push((r.t, ClassPosterior { p: r.posterior }));
        if r.status == TrackStatus::Confirmed && entry.1.is_none() {
            entry.1 = Some(r.t);
        }
        if r.species.is_some() {
            entry.2 = r.species;
        }
        if let Some(sp) = r.species {
            if let Some(rep) = r.reported {
                raw_n += 1;
                raw_ok += (rep == sp) as usize;
            }
            if r.status == TrackStatus::Confirmed {
                fused_n += 1;
                fused_ok += (ClassPosterior { p: r.posterior }.argmax() == sp) as usize;
            }
        }
    }
    m.fused_accuracy = ratio(fused_ok, fused_n);
    m.raw_accuracy = ratio(raw_ok, raw_n);
    let mut ttc = Vec::new();
    for (series, confirmed, species) in tracks.values() {
        let (Some(c), Some(sp)) = (confirmed, species) else { continue };
        let last = series.last().expect("tracks have records").1;
        m.confusion[sp.index()][last.argmax().index()] += 1;
        match time_to_confidence(series, *sp, *c, CONFIDENCE) {
            Some(s) => ttc.push(s),
            None => {
                m.ttc_not_reached += 1;
                ttc.push(f64::INFINITY);
            }
        }
    }
    m.ttc_tracks = ttc.len();
    (m.ttc_median_s, m.ttc_p99_s) = median_p99(ttc);
    if !masked.is_empty() {
        m.masked_fraction = Some(masked.values().sum::<f64>() / masked.len() as f64);
    }

    for e in events {
        let Event::Command(c) = e else { continue };
        match c.action {
            Action::Stop => {
                m.stop_commands += 1;
                if m.first_stop_t.is_none() {
                    m.first_stop_t = Some(c.t);
                    m.first_stop_distance_m = c.distance_m;
                }
            }
            Action::Run => m.run_commands += 1,
        }
    }
    Ok(m)
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "NA".to_string(),
    }
}

impl RunMetrics {
    pub fn rows(&self) -> Vec<(String, String)> {
        let mut rows = vec![
            ("frames".to_string(), self.frames.to_string()),
            ("cameras".into(), self.cameras.to_string()),
            ("near_rate".into(), fmt_opt(self.near_rate)),
            ("far_rate".into(), fmt_opt(self.far_rate)),
            ("near_visits".into(), self.near_visits.to_string()),
            ("far_visits".into(), self.far_visits.to_string()),
            ("near_box_recall".into(), fmt_opt(self.near_box_recall)),
            ("far_box_recall".into(), fmt_opt(self.far_box_recall)),
            ("truth_boxes".into(), self.truth_boxes.to_string()),
            ("detections".into(), self.detections.to_string()),
            ("true_positives".into(), self.true_positives.to_string()),
            ("precision".into(), fmt_opt(self.precision)),
            ("recall".into(), fmt_opt(self.recall)),
            ("average_precision".into(), fmt_opt(self.average_precision)),
            ("fused_accuracy".into(), fmt_opt(self.fused_accuracy)),
            ("raw_accuracy".into(), fmt_opt(self.raw_accuracy)),
            ("ttc_tracks".into(), self.ttc_tracks.to_string()),
            ("ttc_not_reached".into(), self.ttc_not_reached.to_string()),
            ("ttc_median_s".into(), fmt_opt(self.ttc_median_s)),
            ("ttc_p99_s".into(), fmt_opt(self.ttc_p99_s)),
            ("masked_fraction".into(), fmt_opt(self.masked_fraction)),
            ("throughput_fps".into(), fmt_opt(self.throughput_fps)),
            ("stop_commands".into(), self.stop_commands.to_string()),
            ("run_commands".into(), self.run_commands.to_string()),
            ("first_stop_t".into(), fmt_opt(self.first_stop_t)),
            ("first_stop_distance_m".into(), fmt_opt(self.first_stop_distance_m)),
        ];
        for (i, row) in self.confusion.iter().enumerate() {
            for (j, n) in row.iter().enumerate() {
                rows.push((
                    format!(
                        "confusion_{}_{}",
                        Species::from_index(i).name().to_lowercase(),
                        Species::from_index(j).name().to_lowercase()
                    ),
                    n.to_string(),
                ));
            }
        }
        rows
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["metric", "value"])?;
        for (k, v) in self.rows() {
            wr.write_record([k, v])?;
        }
        wr.flush()?;
        Ok(())
    }
}
