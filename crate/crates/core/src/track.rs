//! Image-plane multi-object tracking: constant-velocity Kalman filter, gated
//! greedy association and M-of-N track lifecycle.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, SMatrix, SVector, Vector2, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fuse::ClassPosterior;
use crate::geometry::BBox;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    #[error("innovation covariance is not invertible")]
    NumericalFailure,
}

/// Gaussian belief over an `N`-dimensional linear state.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian<const N: usize> {
    pub mean: SVector<f64, N>,
    pub cov: SMatrix<f64, N, N>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Innovation<const M: usize> {
    pub residual: SVector<f64, M>,
    pub cov: SMatrix<f64, M, M>,
    pub mahalanobis2: f64,
}

fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

impl<const N: usize> Gaussian<N> {
    pub fn predict(&self, f: &SMatrix<f64, N, N>, q: &SMatrix<f64, N, N>) -> Self {
        Self {
            mean: f * self.mean,
            cov: symmetrize(&(f * self.cov * f.transpose() + q)),
        }
    }

    pub fn innovation<const M: usize>(
        &self,
        h: &SMatrix<f64, M, N>,
        r: &SMatrix<f64, M, M>,
        z: &SVector<f64, M>,
    ) -> Result<Innovation<M>, TrackError> {
        let residual = z - h * self.mean;
        let cov = symmetrize(&(h * self.cov * h.transpose() + r));
        let inv = cov.try_inverse().ok_or(TrackError::NumericalFailure)?;
        let mahalanobis2 = (residual.transpose() * inv * residual)[(0, 0)];
        if !mahalanobis2.is_finite() {
            return Err(TrackError::NumericalFailure);
        }
        Ok(Innovation {
            residual,
            cov,
            mahalanobis2,
        })
    }

    /// Linear-Gaussian measurement update, Joseph-form covariance.
    pub fn update<const M: usize>(
        &self,
        h: &SMatrix<f64, M, N>,
        r: &SMatrix<f64, M, M>,
        z: &SVector<f64, M>,
    ) -> Result<(Self, Innovation<M>), TrackError> {
        let innov = self.innovation(h, r, z)?;
        let s_inv = innov.cov.try_inverse().ok_or(TrackError::NumericalFailure)?;
        let k = self.cov * h.transpose() * s_inv;
        let i_kh = SMatrix::<f64, N, N>::identity() - k * h;
        let cov = symmetrize(&(i_kh * self.cov * i_kh.transpose() + k * r * k.transpose()));
        Ok((
            Self {
                mean: self.mean + k * innov.residual,
                cov,
            },
            innov,
        ))
    }
}

/// Constant-velocity state `[px, py, vx, vy]` with its noise parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub belief: Gaussian<4>,
    /// Acceleration variance, (px/s^2)^2.
    pub q: f64,
    /// Measurement variance per axis, px^2.
    pub r: f64,
}

pub fn transition(dt: f64) -> Matrix4<f64> {
    let mut f = Matrix4::identity();
    f[(0, 2)] = dt;
    f[(1, 3)] = dt;
    f
}

/// Piecewise-constant white acceleration with variance `q`.
pub fn process_noise(dt: f64, q: f64) -> Matrix4<f64> {
    let (d2, d3, d4) = (dt * dt, dt * dt * dt, dt * dt * dt * dt);
    let mut m = Matrix4::zeros();
    for (p, v) in [(0, 2), (1, 3)] {
        m[(p, p)] = d4 / 4.0 * q;
        m[(p, v)] = d3 / 2.0 * q;
        m[(v, p)] = d3 / 2.0 * q;
        m[(v, v)] = d2 * q;
    }
    m
}

fn position_selector() -> Matrix2x4<f64> {
    Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanUpdate {
    pub state: KalmanState,
    pub innovation: Vector2<f64>,
    pub mahalanobis2: f64,
}

impl KalmanState {
    pub fn new(x: Vector4<f64>, p: Matrix4<f64>, q: f64, r: f64) -> Self {
        Self {
            belief: Gaussian { mean: x, cov: p },
            q,
            r,
        }
    }

    pub fn x(&self) -> &Vector4<f64> {
        &self.belief.mean
    }

    pub fn p(&self) -> &Matrix4<f64> {
        &self.belief.cov
    }

    pub fn position(&self) -> (f64, f64) {
        (self.belief.mean[0], self.belief.mean[1])
    }

    pub fn velocity(&self) -> (f64, f64) {
        (self.belief.mean[2], self.belief.mean[3])
    }

    fn measurement_noise(&self) -> Matrix2<f64> {
        Matrix2::identity() * self.r
    }

    pub fn predict(&self, dt_s: f64) -> KalmanState {
        kf_predict(self, dt_s)
    }

    /// Squared Mahalanobis distance of a measurement without updating.
    pub fn mahalanobis2(&self, z: (f64, f64)) -> Result<f64, TrackError> {
        self.belief
            .innovation(&position_selector(), &self.measurement_noise(), &Vector2::new(z.0, z.1))
            .map(|i| i.mahalanobis2)
    }
}

pub fn kf_predict(state: &KalmanState, dt_s: f64) -> KalmanState {
    assert!(dt_s > 0.0, "dt must be positive");
    KalmanState {
        belief: state
            .belief
            .predict(&transition(dt_s), &process_noise(dt_s, state.q)),
        ..state.clone()
    }
}

pub fn kf_update(state: &KalmanState, z: (f64, f64)) -> Result<KalmanUpdate, TrackError> {
    if !(z.0.is_finite() && z.1.is_finite()) {
        return Err(TrackError::NumericalFailure);
    }
    let (belief, innov) = state.belief.update(
        &position_selector(),
        &state.measurement_noise(),
        &Vector2::new(z.0, z.1),
    )?;
    Ok(KalmanUpdate {
        state: KalmanState {
            belief,
            ..state.clone()
        },
        innovation: innov.residual,
        mahalanobis2: innov.mahalanobis2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Lost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackPoint {
    pub t_s: f64,
    pub position: (f64, f64),
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub state: KalmanState,
    pub status: TrackStatus,
    pub hits: u32,
    pub consecutive_misses: u32,
    /// Bit `k` set when the track was hit `k` frames ago.
    pub hit_window: u32,
    pub posterior: ClassPosterior,
    pub history: Vec<TrackPoint>,
    pub last_bbox: BBox,
    pub t_s: f64,
    pub born_s: f64,
    pub confirmed_s: Option<f64>,
}

impl Track {
    pub fn is_active(&self) -> bool {
        self.status != TrackStatus::Lost
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub q: f64,
    pub r: f64,
    pub gate_chi2: f64,
    pub confirm_hits: u32,
    pub confirm_window: u32,
    pub max_misses: u32,
    /// Velocity standard deviation for a freshly spawned track, px/s.
    pub init_velocity_sigma: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            q: 25.0,
            r: 1.0,
            gate_chi2: 9.21,
            confirm_hits: 3,
            confirm_window: 5,
            max_misses: 4,
            init_velocity_sigma: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Association {
    /// `(track index, detection index, mahalanobis^2)`.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Greedy gated assignment over all `(track, detection)` pairs sorted by
/// Mahalanobis distance; ties go to the lower track id, then detection index.
pub fn associate(tracks: &[Track], detections: &[(f64, f64)], gate_chi2: f64) -> Association {
    let mut candidates: Vec<(f64, u64, usize, usize)> = Vec::new();
    for (ti, t) in tracks.iter().enumerate() {
        for (di, &z) in detections.iter().enumerate() {
            if let Ok(d2) = t.state.mahalanobis2(z) {
                if d2 <= gate_chi2 {
                    candidates.push((d2, t.id, di, ti));
                }
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut track_used = vec![false; tracks.len()];
    let mut det_used = vec![false; detections.len()];
    let mut pairs = Vec::new();
    for (d2, _, di, ti) in candidates {
        if track_used[ti] || det_used[di] {
            continue;
        }
        track_used[ti] = true;
        det_used[di] = true;
        pairs.push((ti, di, d2));
    }
    Association {
        pairs,
        unmatched_tracks: (0..tracks.len()).filter(|&i| !track_used[i]).collect(),
        unmatched_detections: (0..detections.len()).filter(|&i| !det_used[i]).collect(),
    }
}

/// Per-stream tracker: owns the active tracks and id allocation.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub config: TrackerConfig,
    pub tracks: Vec<Track>,
    last_id: u64,
}

#[derive(Debug, Clone, Default)]
pub struct StepReport {
    /// Track ids matched this frame, with the detection index used.
    pub matched: Vec<(u64, usize)>,
    /// New track ids with the detection index that spawned them.
    pub spawned: Vec<(u64, usize)>,
    pub confirmed: Vec<u64>,
    pub lost: Vec<Track>,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Self {
        Self {
            config,
            tracks: Vec::new(),
            last_id: 0,
        }
    }

    pub fn last_id(&self) -> u64 {
        self.last_id
    }

    /// Propagates every track to `t_s`.
    pub fn predict_to(&mut self, t_s: f64) {
        for t in &mut self.tracks {
            let dt = t_s - t.t_s;
            if dt > 0.0 {
                t.state = kf_predict(&t.state, dt);
                t.t_s = t_s;
            }
        }
    }

    fn spawn(&mut self, bbox: BBox, t_s: f64) -> u64 {
        self.last_id += 1;
        let (cx, cy) = bbox.center();
        let c = &self.config;
        let v2 = c.init_velocity_sigma * c.init_velocity_sigma;
        let p = Matrix4::from_diagonal(&Vector4::new(c.r, c.r, v2, v2));
        let track = Track {
            id: self.last_id,
            state: KalmanState::new(Vector4::new(cx, cy, 0.0, 0.0), p, c.q, c.r),
            status: TrackStatus::Tentative,
            hits: 1,
            consecutive_misses: 0,
            hit_window: 1,
            posterior: ClassPosterior::uniform(),
            history: vec![TrackPoint {
                t_s,
                position: (cx, cy),
                bbox,
            }],
            last_bbox: bbox,
            t_s,
            born_s: t_s,
            confirmed_s: None,
        };
        let id = track.id;
        self.tracks.push(track);
        if self.config.confirm_hits <= 1 {
            self.confirm(self.tracks.len() - 1, t_s);
        }
        id
    }

    fn confirm(&mut self, idx: usize, t_s: f64) {
        let t = &mut self.tracks[idx];
        t.status = TrackStatus::Confirmed;
        t.confirmed_s = Some(t_s);
    }

    /// Applies an association: updates matched tracks, ages the others,
    /// spawns tracks from unmatched detections and retires lost ones.
    pub fn step_lifecycle(
        &mut self,
        assoc: &Association,
        detections: &[BBox],
        t_s: f64,
    ) -> Result<StepReport, TrackError> {
        let cfg = self.config;
        let window_mask = if cfg.confirm_window >= 32 {
            u32::MAX
        } else {
            (1u32 << cfg.confirm_window) - 1
        };
        let mut report = StepReport::default();
        for t in &mut self.tracks {
            t.hit_window = (t.hit_window << 1) & window_mask;
        }
        for &(ti, di, _) in &assoc.pairs {
            let bbox = detections[di];
            let z = bbox.center();
            let t = &mut self.tracks[ti];
            t.state = kf_update(&t.state, z)?.state;
            t.hits += 1;
            t.consecutive_misses = 0;
            t.hit_window |= 1;
            t.last_bbox = bbox;
            t.history.push(TrackPoint {
                t_s,
                position: t.state.position(),
                bbox,
            });
            report.matched.push((t.id, di));
        }
        for &ti in &assoc.unmatched_tracks {
            self.tracks[ti].consecutive_misses += 1;
        }
        for i in 0..self.tracks.len() {
            let t = &self.tracks[i];
            if t.status == TrackStatus::Tentative && t.hit_window.count_ones() >= cfg.confirm_hits {
                let id = t.id;
                self.confirm(i, t_s);
                report.confirmed.push(id);
            }
            if self.tracks[i].consecutive_misses >= cfg.max_misses {
                self.tracks[i].status = TrackStatus::Lost;
            }
        }
        let (active, lost): (Vec<Track>, Vec<Track>) =
            std::mem::take(&mut self.tracks).into_iter().partition(|t| t.is_active());
        self.tracks = active;
        report.lost = lost;
        for &di in &assoc.unmatched_detections {
            let id = self.spawn(detections[di], t_s);
            report.spawned.push((id, di));
        }
        Ok(report)
    }

    /// One frame: predict, associate on box centers, update lifecycle.
    pub fn step(&mut self, detections: &[BBox], t_s: f64) -> Result<StepReport, TrackError> {
        self.predict_to(t_s);
        let centers: Vec<(f64, f64)> = detections.iter().map(|b| b.center()).collect();
        let assoc = associate(&self.tracks, &centers, self.config.gate_chi2);
        self.step_lifecycle(&assoc, detections, t_s)
    }
}
