//! Camera models, pinhole projection, stereo ranging and the
//! blob-size/distance calibration curve.
//!
//! World frame is right-handed with `z` up. A camera looks along
//! `(cos pitch cos yaw, cos pitch sin yaw, sin pitch)`; image `u` grows to the
//! camera's right and `v` grows downward.

use std::ops::{Add, Mul, Sub};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point lies behind the camera (depth {depth} m)")]
    BehindCamera { depth: f64 },
    #[error("disparity {disparity_px} px is not positive; object at effectively infinite range")]
    DegenerateDisparity { disparity_px: f64 },
    #[error("value {value} outside the calibration curve domain")]
    OutOfDomain { value: f64 },
    #[error("calibration fit is singular: {0}")]
    SingularFit(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid stereo rig: {0}")]
    InvalidRig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn lerp(self, o: Vec3, s: f64) -> Vec3 {
        self + (o - self) * s
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Orthonormal camera basis for a yaw/pitch orientation.
#[derive(Debug, Clone, Copy)]
pub struct Basis {
    pub forward: Vec3,
    pub right: Vec3,
    pub up: Vec3,
}

impl Basis {
    pub fn from_angles(yaw: f64, pitch: f64) -> Self {
        let (sy, cy) = yaw.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let forward = Vec3::new(cp * cy, cp * sy, sp);
        let right = Vec3::new(sy, -cy, 0.0);
        // up = right x forward
        let up = Vec3::new(-sp * cy, -sp * sy, cp);
        Self { forward, right, up }
    }
}

/// Camera class selects the default calibration curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CameraClass {
    /// Wide-angle statically mounted sky camera.
    #[default]
    Static,
    /// Tele objective on the pan-tilt unit.
    Tele,
}

impl CameraClass {
    pub fn default_curve(self) -> CalibCurve {
        match self {
            CameraClass::Static => CalibCurve::STATIC_DEFAULT,
            CameraClass::Tele => CalibCurve::TELE_DEFAULT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub id: u32,
    #[serde(default)]
    pub class: CameraClass,
    pub position: Vec3,
    pub yaw: f64,
    pub pitch: f64,
    pub focal_px: f64,
    pub principal_point: (f64, f64),
    pub sensor: (u32, u32),
    /// Overrides the class calibration curve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calib: Option<CalibCurve>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl CameraModel {
    /// Camera with the principal point at the sensor center.
    pub fn centered(
        id: u32,
        class: CameraClass,
        position: Vec3,
        yaw: f64,
        pitch: f64,
        focal_px: f64,
        sensor: (u32, u32),
    ) -> Self {
        Self {
            id,
            class,
            position,
            yaw,
            pitch,
            focal_px,
            principal_point: (sensor.0 as f64 / 2.0, sensor.1 as f64 / 2.0),
            sensor,
            calib: None,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.focal_px > 0.0 && self.focal_px.is_finite()) {
            return Err(GeometryError::InvalidCamera(format!(
                "camera {}: focal_px must be > 0",
                self.id
            )));
        }
        if self.sensor.0 == 0 || self.sensor.1 == 0 {
            return Err(GeometryError::InvalidCamera(format!(
                "camera {}: sensor dimensions must be > 0",
                self.id
            )));
        }
        let (px, py) = self.principal_point;
        if !(0.0..=self.sensor.0 as f64).contains(&px) || !(0.0..=self.sensor.1 as f64).contains(&py)
        {
            return Err(GeometryError::InvalidCamera(format!(
                "camera {}: principal point outside sensor",
                self.id
            )));
        }
        if !self.position.is_finite() || !self.yaw.is_finite() || !self.pitch.is_finite() {
            return Err(GeometryError::InvalidCamera(format!(
                "camera {}: non-finite pose",
                self.id
            )));
        }
        Ok(())
    }

    pub fn curve(&self) -> CalibCurve {
        self.calib.unwrap_or_else(|| self.class.default_curve())
    }

    /// The same camera with every pixel dimension multiplied by `s`.
    pub fn scaled(&self, s: f64) -> CameraModel {
        let c = self.curve();
        CameraModel {
            focal_px: self.focal_px * s,
            principal_point: (self.principal_point.0 * s, self.principal_point.1 * s),
            sensor: (
                (self.sensor.0 as f64 * s).round() as u32,
                (self.sensor.1 as f64 * s).round() as u32,
            ),
            calib: Some(CalibCurve::new(c.a * s, c.b, c.c * s)),
            ..self.clone()
        }
    }

    pub fn basis(&self) -> Basis {
        Basis::from_angles(self.yaw, self.pitch)
    }

    pub fn project(&self, point: Vec3) -> Result<Projection, GeometryError> {
        project(self, point)
    }

    /// Unit ray in world coordinates through pixel `(u, v)`.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vec3 {
        let b = self.basis();
        let dx = (u - self.principal_point.0) / self.focal_px;
        let dy = (v - self.principal_point.1) / self.focal_px;
        let d = b.forward + b.right * dx - b.up * dy;
        d * (1.0 / d.norm())
    }

    pub fn in_sensor(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.sensor.0 as f64 && v < self.sensor.1 as f64
    }

    /// Copy of this camera re-aimed to a new orientation.
    pub fn aimed(&self, yaw: f64, pitch: f64) -> CameraModel {
        CameraModel {
            yaw,
            pitch,
            ..self.clone()
        }
    }
}

pub fn project(camera: &CameraModel, point: Vec3) -> Result<Projection, GeometryError> {
    let b = camera.basis();
    let rel = point - camera.position;
    let depth = rel.dot(b.forward);
    if depth <= 0.0 {
        return Err(GeometryError::BehindCamera { depth });
    }
    let f = camera.focal_px;
    Ok(Projection {
        u: camera.principal_point.0 + f * rel.dot(b.right) / depth,
        v: camera.principal_point.1 - f * rel.dot(b.up) / depth,
        depth,
    })
}

/// Two parallel cameras separated along their common right axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StereoRig {
    pub left: CameraModel,
    pub right: CameraModel,
    pub baseline_m: f64,
}

impl StereoRig {
    /// Builds a rectified rig centered on `center`, both cameras sharing the
    /// given orientation.
    pub fn parallel(
        left_id: u32,
        right_id: u32,
        center: Vec3,
        yaw: f64,
        pitch: f64,
        focal_px: f64,
        sensor: (u32, u32),
        baseline_m: f64,
    ) -> Self {
        let right_axis = Basis::from_angles(yaw, pitch).right;
        let half = right_axis * (baseline_m / 2.0);
        let make = |id, pos| {
            CameraModel::centered(id, CameraClass::Tele, pos, yaw, pitch, focal_px, sensor)
        };
        Self {
            left: make(left_id, center - half),
            right: make(right_id, center + half),
            baseline_m,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        self.left.validate()?;
        self.right.validate()?;
        if !(self.baseline_m > 0.0) {
            return Err(GeometryError::InvalidRig("baseline_m must be > 0".into()));
        }
        if self.left.focal_px != self.right.focal_px {
            return Err(GeometryError::InvalidRig(
                "left and right cameras must share focal_px".into(),
            ));
        }
        Ok(())
    }

    pub fn focal_px(&self) -> f64 {
        self.left.focal_px
    }

    pub fn center(&self) -> Vec3 {
        self.left.position.lerp(self.right.position, 0.5)
    }

    /// The same rig rotated about its center to a new yaw/pitch.
    pub fn aimed(&self, yaw: f64, pitch: f64) -> StereoRig {
        let mut rig = StereoRig::parallel(
            self.left.id,
            self.right.id,
            self.center(),
            yaw,
            pitch,
            self.focal_px(),
            self.left.sensor,
            self.baseline_m,
        );
        rig.left.principal_point = self.left.principal_point;
        rig.right.principal_point = self.right.principal_point;
        rig
    }

    /// Disparity `u_left - u_right` of a world point.
    pub fn disparity(&self, point: Vec3) -> Result<f64, GeometryError> {
        let l = self.left.project(point)?;
        let r = self.right.project(point)?;
        Ok(l.u - r.u)
    }
}

/// Axis-aligned pixel box, top-left corner plus size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    /// Square box of side `side` centered on `(cx, cy)`.
    pub fn centered(cx: f64, cy: f64, side: f64) -> Self {
        Self::new(cx - side / 2.0, cy - side / 2.0, side, side)
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.x.is_finite() && self.y.is_finite()
    }

    pub fn diag(&self) -> f64 {
        self.w.hypot(self.h)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn translated(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    pub fn intersection_area(&self, o: &BBox) -> f64 {
        let w = (self.right().min(o.right()) - self.x.max(o.x)).max(0.0);
        let h = (self.bottom().min(o.bottom()) - self.y.max(o.y)).max(0.0);
        w * h
    }

    /// Clips to `[0, width] x [0, height]`; `None` when nothing remains.
    pub fn clipped(&self, width: f64, height: f64) -> Option<BBox> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = self.right().min(width);
        let y1 = self.bottom().min(height);
        (x1 > x0 && y1 > y0).then(|| BBox::new(x0, y0, x1 - x0, y1 - y0))
    }
}

/// Distance from disparity: `Z = f * B / disparity`.
pub fn triangulate(rig: &StereoRig, disparity_px: f64) -> Result<f64, GeometryError> {
    if !(disparity_px > 0.0) {
        return Err(GeometryError::DegenerateDisparity { disparity_px });
    }
    Ok(rig.focal_px() * rig.baseline_m / disparity_px)
}

/// First-order range uncertainty `Z^2 * sigma_disparity / (f * B)`.
pub fn stereo_sigma(rig: &StereoRig, distance_m: f64, sigma_disparity_px: f64) -> f64 {
    distance_m * distance_m * sigma_disparity_px / (rig.focal_px() * rig.baseline_m)
}

/// Apparent bounding-box diagonal as a function of distance,
/// `diag(x) = a / (x + b) + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibCurve {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl CalibCurve {
    /// Wide static camera: a red kite at 800 m covers about 3 px.
    pub const STATIC_DEFAULT: CalibCurve = CalibCurve {
        a: 2400.0,
        b: 0.0,
        c: 0.0,
    };
    /// Tele camera: a red kite at 300 m covers about 100 px.
    pub const TELE_DEFAULT: CalibCurve = CalibCurve {
        a: 30000.0,
        b: 0.0,
        c: 0.0,
    };

    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    fn domain_floor(&self) -> f64 {
        (-self.b).max(0.0)
    }

    pub fn apparent_diag(&self, distance_m: f64) -> Result<f64, GeometryError> {
        if !(distance_m > self.domain_floor()) || !distance_m.is_finite() {
            return Err(GeometryError::OutOfDomain { value: distance_m });
        }
        Ok(self.a / (distance_m + self.b) + self.c)
    }

    pub fn invert_diag(&self, diag_px: f64) -> Result<f64, GeometryError> {
        if !(diag_px > self.c) || !diag_px.is_finite() {
            return Err(GeometryError::OutOfDomain { value: diag_px });
        }
        let x = self.a / (diag_px - self.c) - self.b;
        if !(x > self.domain_floor()) {
            return Err(GeometryError::OutOfDomain { value: diag_px });
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibSample {
    pub distance_m: f64,
    pub diag_px: f64,
}

/// Result of a calibration fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibFit {
    pub curve: CalibCurve,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
}

const FIT_MAX_ITERS: usize = 200;
const FIT_REL_TOL: f64 = 1e-10;

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn calib_cost(samples: &[CalibSample], p: &CalibCurve) -> f64 {
    samples
        .iter()
        .map(|s| {
            let r = p.a / (s.distance_m + p.b) + p.c - s.diag_px;
            r * r
        })
        .sum::<f64>()
        * 0.5
}

/// Least-squares fit of `a / (x + b) + c` to `(distance, diag)` samples,
/// Gauss-Newton with Levenberg damping.
pub fn fit_calib(samples: &[CalibSample]) -> Result<CalibCurve, GeometryError> {
    fit_calib_detailed(samples).map(|f| f.curve)
}

pub fn fit_calib_detailed(samples: &[CalibSample]) -> Result<CalibFit, GeometryError> {
    if samples.len() < 4 {
        return Err(GeometryError::SingularFit(format!(
            "need at least 4 samples, got {}",
            samples.len()
        )));
    }
    if samples
        .iter()
        .any(|s| !s.distance_m.is_finite() || !s.diag_px.is_finite() || s.distance_m <= 0.0)
    {
        return Err(GeometryError::SingularFit(
            "samples must be finite with positive distance".into(),
        ));
    }
    let mut distances: Vec<f64> = samples.iter().map(|s| s.distance_m).collect();
    let mut diags: Vec<f64> = samples.iter().map(|s| s.diag_px).collect();
    let mut sorted = distances.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted.dedup();
    if sorted.len() < 3 {
        return Err(GeometryError::SingularFit(format!(
            "only {} distinct distances; three parameters need at least 3",
            sorted.len()
        )));
    }
    let min_dist = sorted[0];
    let min_diag = diags.iter().copied().fold(f64::INFINITY, f64::min);

    let mut p = CalibCurve::new(median(&mut diags) * median(&mut distances), 0.0, min_diag / 2.0);
    let mut cost = calib_cost(samples, &p);
    let initial_cost = cost;
    let mut lambda = 1e-3;
    let mut iterations = 0;

    while iterations < FIT_MAX_ITERS {
        iterations += 1;
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for s in samples {
            let inv = 1.0 / (s.distance_m + p.b);
            let r = p.a * inv + p.c - s.diag_px;
            let j = Vector3::new(inv, -p.a * inv * inv, 1.0);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        // Scale-invariant rank test on the normalized normal matrix.
        let d = Vector3::new(jtj[(0, 0)], jtj[(1, 1)], jtj[(2, 2)]).map(|v| v.sqrt());
        if d.iter().any(|&v| !(v > 0.0)) {
            return Err(GeometryError::SingularFit("zero Jacobian column".into()));
        }
        let normalized = Matrix3::from_fn(|r, c| jtj[(r, c)] / (d[r] * d[c]));
        let eig = normalized.symmetric_eigenvalues();
        let min_eig = eig.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min_eig > 1e-14) {
            return Err(GeometryError::SingularFit(
                "normal equations are rank-deficient".into(),
            ));
        }
        if cost == 0.0 {
            break;
        }

        let mut accepted = false;
        for _ in 0..60 {
            let mut damped = jtj;
            for k in 0..3 {
                damped[(k, k)] += lambda * jtj[(k, k)];
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let cand = CalibCurve::new(p.a + step[0], p.b + step[1], p.c + step[2]);
            if !(min_dist + cand.b > 0.0) || !cand.a.is_finite() {
                lambda *= 10.0;
                continue;
            }
            let cand_cost = calib_cost(samples, &cand);
            if cand_cost <= cost {
                let rel_change = (cost - cand_cost) / cost.max(f64::MIN_POSITIVE);
                p = cand;
                cost = cand_cost;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                if rel_change < FIT_REL_TOL {
                    return Ok(CalibFit {
                        curve: p,
                        initial_cost,
                        final_cost: cost,
                        iterations,
                    });
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No descent direction left: at a minimum to machine precision.
            break;
        }
    }
    Ok(CalibFit {
        curve: p,
        initial_cost,
        final_cost: cost,
        iterations,
    })
}

/// Reads `distance_m,diag_px` samples from CSV.
pub fn read_calib_csv<R: std::io::Read>(reader: R) -> Result<Vec<CalibSample>, csv::Error> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .collect::<Result<Vec<CalibSample>, _>>()
}

pub fn write_calib_csv<W: std::io::Write>(
    writer: W,
    samples: &[CalibSample],
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for s in samples {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}
