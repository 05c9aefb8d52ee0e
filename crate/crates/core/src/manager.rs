//! Priority selection, pan-tilt control, stereo ranging and the turbine
//! shutdown state machine.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::fuse::ClassPosterior;
use crate::geometry::{stereo_sigma, triangulate, BBox, CameraModel, GeometryError, StereoRig, Vec3};
use crate::rng::SplitMix64;
use crate::track::TrackStatus;

/// Identifies a track across the per-camera trackers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrackKey {
    pub camera: u32,
    pub id: u64,
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Pan/tilt of a world direction: pan about z from +x, tilt above horizon.
pub fn direction_angles(d: Vec3) -> (f64, f64) {
    let h = (d.x * d.x + d.y * d.y).sqrt();
    (d.y.atan2(d.x), d.z.atan2(h))
}

fn angles_direction(pan: f64, tilt: f64) -> Vec3 {
    Vec3::new(tilt.cos() * pan.cos(), tilt.cos() * pan.sin(), tilt.sin())
}

/// Angle between the pointing directions of two pan/tilt pairs.
pub fn pointing_error(a: (f64, f64), b: (f64, f64)) -> f64 {
    let u = angles_direction(a.0, a.1);
    let v = angles_direction(b.0, b.1);
    let cross = Vec3::new(
        u.y * v.z - u.z * v.y,
        u.z * v.x - u.x * v.z,
        u.x * v.y - u.y * v.x,
    );
    cross.norm().atan2(u.dot(v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PtuState {
    pub pan: f64,
    pub tilt: f64,
    pub max_slew: f64,
}

impl PtuState {
    pub fn new(pan: f64, tilt: f64, max_slew: f64) -> Self {
        assert!(max_slew > 0.0, "max_slew must be positive");
        Self {
            pan: wrap_angle(pan),
            tilt: tilt.clamp(-FRAC_PI_2, FRAC_PI_2),
            max_slew,
        }
    }

    pub fn forward(&self) -> Vec3 {
        angles_direction(self.pan, self.tilt)
    }
}

/// Moves each axis toward `desired` by at most `max_slew * dt_s`, pan along
/// the shorter arc. Returns the new state and the residual pointing error.
pub fn ptu_step(ptu: &PtuState, desired: (f64, f64), dt_s: f64) -> (PtuState, f64) {
    assert!(dt_s > 0.0, "dt must be positive");
    let limit = ptu.max_slew * dt_s;
    let target_tilt = desired.1.clamp(-FRAC_PI_2, FRAC_PI_2);
    let d_pan = wrap_angle(desired.0 - ptu.pan).clamp(-limit, limit);
    let d_tilt = (target_tilt - ptu.tilt).clamp(-limit, limit);
    let next = PtuState {
        pan: wrap_angle(ptu.pan + d_pan),
        tilt: (ptu.tilt + d_tilt).clamp(-FRAC_PI_2, FRAC_PI_2),
        max_slew: ptu.max_slew,
    };
    let err = pointing_error((next.pan, next.tilt), (desired.0, target_tilt));
    (next, err)
}

/// Vertical cylinder standing on `center`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DangerZone {
    pub center: Vec3,
    pub radius_m: f64,
    pub height_m: f64,
}

impl DangerZone {
    pub fn contains(&self, p: Vec3) -> bool {
        let dx = p.x - self.center.x;
        let dy = p.y - self.center.y;
        dx * dx + dy * dy <= self.radius_m * self.radius_m
            && p.z >= self.center.z
            && p.z <= self.center.z + self.height_m
    }
}

impl Default for DangerZone {
    fn default() -> Self {
        Self {
            center: Vec3::new(450.0, 0.0, 0.0),
            radius_m: 250.0,
            height_m: 300.0,
        }
    }
}

/// Read-only view of a track handed to the manager.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSnapshot {
    pub key: TrackKey,
    pub status: TrackStatus,
    pub posterior: ClassPosterior,
    pub bbox: BBox,
    pub center: (f64, f64),
    pub est_distance_m: f64,
}

/// Confirmed track with the highest kite posterior; ties go to the nearer
/// track, then the smaller key.
pub fn select_priority(tracks: &[TrackSnapshot]) -> Option<TrackKey> {
    tracks
        .iter()
        .filter(|t| t.status == TrackStatus::Confirmed)
        .min_by(|a, b| {
            b.posterior
                .kite()
                .total_cmp(&a.posterior.kite())
                .then(a.est_distance_m.total_cmp(&b.est_distance_m))
                .then(a.key.id.cmp(&b.key.id))
                .then(a.key.camera.cmp(&b.key.camera))
        })
        .map(|t| t.key)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StereoMeasurement {
    pub disparity_px: f64,
    pub distance_m: f64,
    pub sigma_z: f64,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum StereoError {
    #[error("target outside the tele field of view")]
    NotInView,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Simulated stereo range: true disparity plus Gaussian noise, triangulated.
pub fn stereo_measure(
    rig: &StereoRig,
    target: Vec3,
    sigma_disparity_px: f64,
    rng: &mut SplitMix64,
) -> Result<StereoMeasurement, StereoError> {
    let l = rig.left.project(target).map_err(|_| StereoError::NotInView)?;
    let r = rig.right.project(target).map_err(|_| StereoError::NotInView)?;
    if !rig.left.in_sensor(l.u, l.v) || !rig.right.in_sensor(r.u, r.v) {
        return Err(StereoError::NotInView);
    }
    let noise: f64 = if sigma_disparity_px > 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        z * sigma_disparity_px
    } else {
        0.0
    };
    let disparity_px = l.u - r.u + noise;
    let distance_m = triangulate(rig, disparity_px)?;
    Ok(StereoMeasurement {
        disparity_px,
        distance_m,
        sigma_z: stereo_sigma(rig, distance_m, sigma_disparity_px),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Action {
    Run,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurbineCommand {
    pub t: f64,
    pub action: Action,
    pub camera: Option<u32>,
    pub track_id: Option<u64>,
    pub posterior: Option<[f64; 4]>,
    pub distance_m: Option<f64>,
    pub sigma_z: Option<f64>,
}

impl TurbineCommand {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("command serializes")
    }
}

/// Appends commands as JSON lines, creating the file if needed.
pub fn append_commands(path: &Path, commands: &[TurbineCommand]) -> std::io::Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    for c in commands {
        writeln!(f, "{}", c.to_json_line())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub tau_stop: f64,
    pub t_resume_s: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            tau_stop: 0.9,
            t_resume_s: 30.0,
        }
    }
}

/// What the manager believes about the priority track this tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneObservation {
    pub key: TrackKey,
    pub posterior: ClassPosterior,
    pub position: Vec3,
    pub distance_m: f64,
    pub sigma_z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TurbineState {
    Running,
    Stopped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShutdownController {
    pub state: TurbineState,
    pub thresholds: Thresholds,
    pub zone: DangerZone,
    clear_since: Option<f64>,
    trigger: Option<TrackKey>,
    last_t: f64,
}

impl ShutdownController {
    pub fn new(zone: DangerZone, thresholds: Thresholds) -> Self {
        Self {
            state: TurbineState::Running,
            thresholds,
            zone,
            clear_since: None,
            trigger: None,
            last_t: f64::NEG_INFINITY,
        }
    }

    pub fn condition(&self, obs: &ZoneObservation) -> bool {
        obs.posterior.kite() >= self.thresholds.tau_stop && self.zone.contains(obs.position)
    }

    /// Feeds one tick. STOP as soon as the condition holds; RUN only after it
    /// has been false for `t_resume_s` without interruption.
    pub fn decide(&mut self, t: f64, obs: Option<&ZoneObservation>) -> Option<TurbineCommand> {
        assert!(t >= self.last_t, "decisions must arrive in time order");
        self.last_t = t;
        let hit = obs.filter(|o| self.condition(o));
        match (self.state, hit) {
            (TurbineState::Running, Some(o)) => {
                self.state = TurbineState::Stopped;
                self.clear_since = None;
                self.trigger = Some(o.key);
                Some(TurbineCommand {
                    t,
                    action: Action::Stop,
                    camera: Some(o.key.camera),
                    track_id: Some(o.key.id),
                    posterior: Some(o.posterior.p),
                    distance_m: Some(o.distance_m),
                    sigma_z: Some(o.sigma_z),
                })
            }
            (TurbineState::Running, None) => None,
            (TurbineState::Stopped, Some(_)) => {
                self.clear_since = None;
                None
            }
            (TurbineState::Stopped, None) => {
                let since = *self.clear_since.get_or_insert(t);
                if t - since >= self.thresholds.t_resume_s {
                    self.state = TurbineState::Running;
                    self.clear_since = None;
                    let key = self.trigger.take();
                    Some(TurbineCommand {
                        t,
                        action: Action::Run,
                        camera: key.map(|k| k.camera),
                        track_id: key.map(|k| k.id),
                        posterior: None,
                        distance_m: None,
                        sigma_z: None,
                    })
                } else {
                    None
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ManagerConfig {
    pub thresholds: Thresholds,
    pub zone: DangerZone,
    pub sigma_disparity_px: f64,
    /// rad/s
    pub max_slew: f64,
    /// Relative range uncertainty of the calibration-curve fallback.
    pub fallback_sigma_frac: f64,
    /// Sigma growth per tick while reusing a stale stereo range.
    pub stale_sigma_factor: f64,
}

impl Default for ManagerConfig {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            zone: DangerZone::default(),
            sigma_disparity_px: 0.25,
            max_slew: 60f64.to_radians(),
            fallback_sigma_frac: 0.3,
            stale_sigma_factor: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeSource {
    Stereo,
    StaleStereo,
    Calibration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeEstimate {
    pub distance_m: f64,
    pub sigma_z: f64,
    pub source: RangeSource,
    pub position: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutcome {
    pub priority: Option<TrackKey>,
    pub ptu: PtuState,
    pub pointing_error: Option<f64>,
    pub range: Option<RangeEstimate>,
    pub command: Option<TurbineCommand>,
}

/// Single-threaded decision hub fed once per frame tick.
#[derive(Debug, Clone)]
pub struct Manager {
    pub config: ManagerConfig,
    cameras: BTreeMap<u32, CameraModel>,
    rig: Option<StereoRig>,
    pub ptu: PtuState,
    pub controller: ShutdownController,
    last_stereo: BTreeMap<TrackKey, (f64, f64)>,
    seed: u64,
    ticks: u64,
    pub commands: Vec<TurbineCommand>,
}

impl Manager {
    pub fn new(config: ManagerConfig, cameras: &[CameraModel], rig: Option<StereoRig>, seed: u64) -> Self {
        let (pan, tilt) = rig.as_ref().map(|r| (r.left.yaw, r.left.pitch)).unwrap_or((0.0, 0.0));
        Self {
            config,
            cameras: cameras.iter().map(|c| (c.id, c.clone())).collect(),
            rig,
            ptu: PtuState::new(pan, tilt, config.max_slew),
            controller: ShutdownController::new(config.zone, config.thresholds),
            last_stereo: BTreeMap::new(),
            seed,
            ticks: 0,
            commands: Vec::new(),
        }
    }

    /// Calibration-curve range from a box, measured on its source camera.
    pub fn fallback_range(&self, key: TrackKey, bbox: &BBox) -> Option<RangeEstimate> {
        let cam = self.cameras.get(&key.camera)?;
        let extent = bbox.diag() / std::f64::consts::SQRT_2;
        let distance_m = cam.curve().invert_diag(extent).ok()?;
        let (cx, cy) = bbox.center();
        Some(RangeEstimate {
            distance_m,
            sigma_z: distance_m * self.config.fallback_sigma_frac,
            source: RangeSource::Calibration,
            position: cam.position + cam.pixel_ray(cx, cy) * distance_m,
        })
    }

    /// Best current distance guess for tie-breaking.
    pub fn estimated_distance(&self, key: TrackKey, bbox: &BBox) -> f64 {
        if let Some(&(d, _)) = self.last_stereo.get(&key) {
            return d;
        }
        self.fallback_range(key, bbox)
            .map(|r| r.distance_m)
            .unwrap_or(f64::INFINITY)
    }

    fn stereo_position(&self, distance_m: f64) -> Vec3 {
        let center = self.rig.as_ref().map(|r| r.center()).unwrap_or(Vec3::ZERO);
        center + self.ptu.forward() * distance_m
    }

    /// One tick: choose a target, slew, range it and update the shutdown
    /// state. `truth` gives the world position of the object a track follows
    /// for the simulated stereo pair.
    pub fn step(
        &mut self,
        t: f64,
        dt: f64,
        snapshots: &[TrackSnapshot],
        truth: &dyn Fn(TrackKey) -> Option<Vec3>,
    ) -> TickOutcome {
        let tick = self.ticks;
        self.ticks += 1;
        let priority = select_priority(snapshots);
        let mut pointing = None;
        let mut range = None;
        let mut obs = None;
        if let Some(key) = priority {
            let snap = snapshots.iter().find(|s| s.key == key).expect("priority is in snapshots");
            if let Some(cam) = self.cameras.get(&key.camera) {
                let ray = cam.pixel_ray(snap.center.0, snap.center.1);
                let (next, err) = ptu_step(&self.ptu, direction_angles(ray), dt);
                self.ptu = next;
                pointing = Some(err);
            }
            range = self.measure(key, snap, truth, tick);
            if let Some(r) = range {
                obs = Some(ZoneObservation {
                    key,
                    posterior: snap.posterior,
                    position: r.position,
                    distance_m: r.distance_m,
                    sigma_z: r.sigma_z,
                });
            }
        }
        let command = self.controller.decide(t, obs.as_ref());
        if let Some(c) = &command {
            self.commands.push(c.clone());
        }
        TickOutcome {
            priority,
            ptu: self.ptu,
            pointing_error: pointing,
            range,
            command,
        }
    }

    fn measure(
        &mut self,
        key: TrackKey,
        snap: &TrackSnapshot,
        truth: &dyn Fn(TrackKey) -> Option<Vec3>,
        tick: u64,
    ) -> Option<RangeEstimate> {
        let fallback = self.fallback_range(key, &snap.bbox);
        let (Some(rig), Some(target)) = (self.rig.as_ref(), truth(key)) else {
            return fallback;
        };
        let aimed = rig.aimed(self.ptu.pan, self.ptu.tilt);
        let mut rng = SplitMix64::stream(self.seed, &[0x57e4e0, tick]);
        match stereo_measure(&aimed, target, self.config.sigma_disparity_px, &mut rng) {
            Ok(m) => {
                self.last_stereo.insert(key, (m.distance_m, m.sigma_z));
                Some(RangeEstimate {
                    distance_m: m.distance_m,
                    sigma_z: m.sigma_z,
                    source: RangeSource::Stereo,
                    position: self.stereo_position(m.distance_m),
                })
            }
            Err(StereoError::Geometry(GeometryError::DegenerateDisparity { .. })) => {
                let Some(&(d, s)) = self.last_stereo.get(&key) else {
                    return fallback;
                };
                let s = s * self.config.stale_sigma_factor;
                self.last_stereo.insert(key, (d, s));
                Some(RangeEstimate {
                    distance_m: d,
                    sigma_z: s,
                    source: RangeSource::StaleStereo,
                    position: self.stereo_position(d),
                })
            }
            Err(_) => fallback,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn deg(d: f64) -> f64 {
        d.to_radians()
    }

    #[test]
    fn slew_is_rate_limited() {
        let ptu = PtuState::new(0.0, 0.0, deg(20.0));
        let (next, err) = ptu_step(&ptu, (deg(10.0), 0.0), 0.25);
        assert_relative_eq!(next.pan, deg(5.0), epsilon = 1e-12);
        assert_relative_eq!(err, deg(5.0), epsilon = 1e-12);
        let (same, err) = ptu_step(&next, (next.pan, next.tilt), 0.25);
        assert_eq!(same, next);
        assert_eq!(err, 0.0);
    }

    #[test]
    fn pan_wraps_the_short_way() {
        let ptu = PtuState::new(deg(179.0), 0.0, deg(100.0));
        let (next, err) = ptu_step(&ptu, (deg(-179.0), 0.0), 0.25);
        assert_relative_eq!(next.pan, deg(-179.0), epsilon = 1e-9);
        assert!(err < 1e-9);
        let slow = PtuState::new(deg(179.0), 0.0, deg(4.0));
        let (mid, _) = ptu_step(&slow, (deg(-179.0), 0.0), 0.25);
        assert_relative_eq!(mid.pan.abs(), PI, epsilon = 1e-9);
    }

    #[test]
    fn cylinder_membership() {
        let z = DangerZone::default();
        assert!(z.contains(Vec3::new(450.0, 0.0, 100.0)));
        assert!(z.contains(Vec3::new(450.0, 249.0, 299.0)));
        assert!(!z.contains(Vec3::new(450.0, 251.0, 100.0)));
        assert!(!z.contains(Vec3::new(450.0, 0.0, 301.0)));
        assert!(!z.contains(Vec3::new(450.0, 0.0, -1.0)));
    }

    fn snap(id: u64, kite: f64, dist: f64, status: TrackStatus) -> TrackSnapshot {
        let rest = (1.0 - kite) / 3.0;
        TrackSnapshot {
            key: TrackKey { camera: 0, id },
            status,
            posterior: ClassPosterior::from_weights([kite, rest, rest, rest]).unwrap(),
            bbox: BBox::centered(10.0, 10.0, 4.0),
            center: (10.0, 10.0),
            est_distance_m: dist,
        }
    }

    #[test]
    fn priority_rules() {
        let one = [snap(3, 0.5, 100.0, TrackStatus::Confirmed)];
        assert_eq!(select_priority(&one).unwrap().id, 3);
        let tie = [
            snap(1, 0.9, 600.0, TrackStatus::Confirmed),
            snap(2, 0.9, 400.0, TrackStatus::Confirmed),
        ];
        assert_eq!(select_priority(&tie).unwrap().id, 2);
        let tentative = [snap(1, 0.99, 100.0, TrackStatus::Tentative)];
        assert_eq!(select_priority(&tentative), None);
    }

    fn rig() -> StereoRig {
        StereoRig::parallel(2, 3, Vec3::new(0.0, 0.0, 10.0), 0.0, 0.0, 1000.0, (1332, 1152), 1.0)
    }

    #[test]
    fn noiseless_stereo_is_exact() {
        let mut rng = SplitMix64::new(1);
        let m = stereo_measure(&rig(), Vec3::new(500.0, 0.0, 10.0), 0.0, &mut rng).unwrap();
        assert_relative_eq!(m.distance_m, 500.0, max_relative = 1e-12);
    }

    #[test]
    fn stereo_sigma_formula() {
        let mut rng = SplitMix64::new(1);
        let m = stereo_measure(&rig(), Vec3::new(500.0, 0.0, 10.0), 0.5, &mut rng).unwrap();
        let predicted = m.distance_m * m.distance_m * 0.5 / 1000.0;
        assert_relative_eq!(m.sigma_z, predicted, max_relative = 1e-12);
        assert_relative_eq!(stereo_sigma(&rig(), 500.0, 0.5), 125.0, max_relative = 1e-12);
    }

    #[test]
    fn stereo_spread_matches_first_order() {
        let r = StereoRig::parallel(2, 3, Vec3::ZERO, 0.0, 0.0, 18750.0, (1332, 1152), 1.0);
        let target = Vec3::new(300.0, 0.0, 0.0);
        let mut rng = SplitMix64::new(42);
        let zs: Vec<f64> = (0..10_000)
            .map(|_| stereo_measure(&r, target, 0.25, &mut rng).unwrap().distance_m)
            .collect();
        let mean = zs.iter().sum::<f64>() / zs.len() as f64;
        let sd = (zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (zs.len() - 1) as f64).sqrt();
        let predicted = stereo_sigma(&r, 300.0, 0.25);
        assert!((sd / predicted - 1.0).abs() < 0.15, "sd {sd} vs {predicted}");
    }

    #[test]
    fn out_of_view_and_degenerate() {
        let mut rng = SplitMix64::new(1);
        assert_eq!(
            stereo_measure(&rig(), Vec3::new(-500.0, 0.0, 10.0), 0.0, &mut rng),
            Err(StereoError::NotInView)
        );
        // Huge noise drives some draws to non-positive disparity.
        let far = Vec3::new(5000.0, 0.0, 10.0);
        let degenerate = (0..200)
            .filter(|_| {
                matches!(
                    stereo_measure(&rig(), far, 5.0, &mut rng),
                    Err(StereoError::Geometry(GeometryError::DegenerateDisparity { .. }))
                )
            })
            .count();
        assert!(degenerate > 0);
    }

    fn obs(kite: f64, inside: bool) -> ZoneObservation {
        let rest = (1.0 - kite) / 3.0;
        ZoneObservation {
            key: TrackKey { camera: 0, id: 7 },
            posterior: ClassPosterior::from_weights([kite, rest, rest, rest]).unwrap(),
            position: if inside {
                Vec3::new(450.0, 0.0, 100.0)
            } else {
                Vec3::new(1000.0, 0.0, 100.0)
            },
            distance_m: 400.0,
            sigma_z: 5.0,
        }
    }

    #[test]
    fn stop_only_inside_with_confident_kite() {
        let mut c = ShutdownController::new(DangerZone::default(), Thresholds::default());
        assert_eq!(c.decide(0.0, Some(&obs(0.95, false))), None);
        assert_eq!(c.decide(0.25, Some(&obs(0.5, true))), None);
        let cmd = c.decide(0.5, Some(&obs(0.95, true))).unwrap();
        assert_eq!(cmd.action, Action::Stop);
        assert_eq!(cmd.track_id, Some(7));
        assert_eq!(c.decide(0.75, Some(&obs(0.95, true))), None);
    }

    #[test]
    fn hysteresis_holds_through_short_gap() {
        let mut c = ShutdownController::new(DangerZone::default(), Thresholds::default());
        let mut cmds = Vec::new();
        cmds.extend(c.decide(0.0, Some(&obs(0.95, true))));
        // Clear from t=1 through t=29.75: 28.75 s.
        for k in 4..120 {
            cmds.extend(c.decide(k as f64 * 0.25, None));
        }
        cmds.extend(c.decide(30.0, Some(&obs(0.95, true))));
        for k in 121..=241 {
            cmds.extend(c.decide(k as f64 * 0.25, None));
        }
        let actions: Vec<Action> = cmds.iter().map(|c| c.action).collect();
        assert_eq!(actions, vec![Action::Stop, Action::Run]);
        // Clear again from 30.25; RUN exactly 30 s later.
        assert_eq!(cmds[1].t, 60.25);
    }

    proptest! {
        #[test]
        fn slew_limit_respected(pan in -PI..PI, tilt in -1.5f64..1.5, dp in -PI..PI, dt_ in -1.5f64..1.5,
                                slew in 0.01f64..3.0, dt in 0.01f64..1.0) {
            let ptu = PtuState::new(pan, tilt, slew);
            let (next, err) = ptu_step(&ptu, (dp, dt_), dt);
            prop_assert!(wrap_angle(next.pan - ptu.pan).abs() <= slew * dt + 1e-12);
            prop_assert!((next.tilt - ptu.tilt).abs() <= slew * dt + 1e-12);
            prop_assert!(next.pan.abs() <= PI);
            prop_assert!(err >= 0.0);
        }

        #[test]
        fn priority_ignores_order(n in 1usize..8, seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let mut v: Vec<TrackSnapshot> = (0..n).map(|i| {
                let kite = [0.2, 0.5, 0.9][(rng.next_f64() * 3.0) as usize];
                let dist = [300.0, 500.0][(rng.next_f64() * 2.0) as usize];
                let status = if rng.next_f64() < 0.7 { TrackStatus::Confirmed } else { TrackStatus::Tentative };
                snap(i as u64 + 1, kite, dist, status)
            }).collect();
            let a = select_priority(&v);
            v.reverse();
            prop_assert_eq!(select_priority(&v), a);
            v.rotate_left(n / 2);
            prop_assert_eq!(select_priority(&v), a);
        }

        #[test]
        fn commands_alternate(events in prop::collection::vec(any::<Option<bool>>(), 1..400)) {
            let mut c = ShutdownController::new(DangerZone::default(), Thresholds { tau_stop: 0.9, t_resume_s: 2.0 });
            let mut cmds = Vec::new();
            for (k, e) in events.iter().enumerate() {
                let o = e.map(|inside| obs(0.95, inside));
                cmds.extend(c.decide(k as f64 * 0.25, o.as_ref()));
            }
            for w in cmds.windows(2) {
                prop_assert!(w[0].action != w[1].action);
                prop_assert!(w[0].t < w[1].t);
            }
            if let Some(first) = cmds.first() {
                prop_assert_eq!(first.action, Action::Stop);
            }
        }
    }
}
