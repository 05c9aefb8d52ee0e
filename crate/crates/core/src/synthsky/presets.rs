//! Built-in scenarios. The JSON files under `scenarios/` are generated from
//! these and checked against them in tests.

use super::{ClutterKind, ClutterSpec, RenderParams, Scenario, TargetTruth, Waypoint};
use crate::geometry::{BBox, CameraClass, CameraModel, StereoRig, Vec3};
use crate::species::Species;

pub const NAMES: [&str; 4] = ["default_flyby", "clutter", "zone_crossing", "empty"];

pub const STATION: Vec3 = Vec3::new(0.0, 0.0, 10.0);
pub const SENSOR: (u32, u32) = (1332, 1152);
pub const STATIC_FOCAL_PX: f64 = 1500.0;
pub const TELE_FOCAL_PX: f64 = 18750.0;

/// Flicker period giving a golden-angle phase step per frame at 4 Hz.
pub const FOLIAGE_PERIOD_S: f64 = 0.654_508_497;

/// Two wide cameras looking left and right of the turbine bearing.
pub fn station_cameras() -> Vec<CameraModel> {
    let pitch = 18f64.to_radians();
    vec![
        CameraModel::centered(0, CameraClass::Static, STATION, 22f64.to_radians(), pitch, STATIC_FOCAL_PX, SENSOR),
        CameraModel::centered(1, CameraClass::Static, STATION, (-22f64).to_radians(), pitch, STATIC_FOCAL_PX, SENSOR),
    ]
}

/// Tele stereo pair on the pan-tilt unit, parked toward the turbine.
pub fn tele_rig() -> StereoRig {
    StereoRig::parallel(2, 3, STATION, 0.0, 10f64.to_radians(), TELE_FOCAL_PX, SENSOR, 1.0)
}

fn target(id: u32, species: Species, size_m: f64, pts: &[(f64, [f64; 3])]) -> TargetTruth {
    TargetTruth {
        id,
        species,
        size_m,
        waypoints: pts
            .iter()
            .map(|&(t_s, p)| Waypoint {
                t_s,
                position: Vec3::new(p[0], p[1], p[2]),
            })
            .collect(),
    }
}

fn base(name: &str, duration_s: f64, seed: u64) -> Scenario {
    Scenario {
        name: name.to_string(),
        duration_s,
        frame_rate_hz: 4.0,
        cameras: station_cameras(),
        rigs: vec![tele_rig()],
        targets: Vec::new(),
        clutter: Vec::new(),
        pixel_noise_sigma: 2.0,
        render: RenderParams::default(),
        seed,
    }
}

/// Mixed population around the station: a red kite crossing the danger
/// zone plus birds of several sizes and a distant aircraft.
pub fn default_flyby() -> Scenario {
    let mut s = base("default_flyby", 90.0, 20240601);
    s.targets = vec![
        target(1, Species::Kite, 1.6, &[
            (0.0, [720.0, 420.0, 150.0]),
            (30.0, [500.0, 60.0, 120.0]),
            (55.0, [250.0, -200.0, 90.0]),
            (90.0, [620.0, -520.0, 140.0]),
        ]),
        target(2, Species::Bird, 1.2, &[(0.0, [650.0, -300.0, 180.0]), (90.0, [180.0, 120.0, 70.0])]),
        target(3, Species::Bird, 0.5, &[(0.0, [150.0, 60.0, 40.0]), (60.0, [300.0, 150.0, 80.0])]),
        target(4, Species::Bird, 0.5, &[(0.0, [300.0, -150.0, 80.0]), (40.0, [120.0, -40.0, 50.0])]),
        target(5, Species::Bird, 0.15, &[(20.0, [290.0, 150.0, 60.0]), (35.0, [300.0, 40.0, 70.0])]),
        target(6, Species::Bird, 0.25, &[(10.0, [120.0, -70.0, 35.0]), (50.0, [230.0, -120.0, 60.0])]),
        target(7, Species::Bird, 0.2, &[(0.0, [600.0, 100.0, 90.0]), (12.0, [570.0, 30.0, 100.0])]),
        target(8, Species::Bird, 1.0, &[(0.0, [680.0, 250.0, 160.0]), (90.0, [500.0, -100.0, 140.0])]),
        target(9, Species::Aircraft, 30.0, &[(0.0, [3000.0, 2000.0, 900.0]), (90.0, [3000.0, -2000.0, 900.0])]),
        target(10, Species::Other, 0.4, &[(0.0, [200.0, 150.0, 60.0]), (90.0, [300.0, -50.0, 80.0])]),
        target(11, Species::Bird, 0.25, &[(30.0, [550.0, -250.0, 110.0]), (42.0, [520.0, -330.0, 120.0])]),
        target(12, Species::Bird, 0.5, &[(40.0, [620.0, 300.0, 150.0]), (52.0, [640.0, 180.0, 140.0])]),
        target(13, Species::Bird, 0.15, &[(60.0, [280.0, -180.0, 70.0]), (75.0, [320.0, -90.0, 60.0])]),
        target(14, Species::Bird, 0.35, &[(60.0, [480.0, 200.0, 100.0]), (72.0, [450.0, 280.0, 110.0])]),
    ];
    s
}

/// Treetops along the bottom of camera 0 and a neighboring rotor on
/// camera 1, with one bird skimming over the foliage.
pub fn clutter() -> Scenario {
    let mut s = base("clutter", 30.0, 77);
    s.clutter = vec![
        ClutterSpec {
            camera_id: 0,
            region: BBox::new(0.0, 1000.0, 1332.0, 152.0),
            kind: ClutterKind::TreetopBand,
            amplitude: 3.0,
            period_s: FOLIAGE_PERIOD_S,
        },
        ClutterSpec {
            camera_id: 1,
            region: BBox::new(760.0, 560.0, 280.0, 280.0),
            kind: ClutterKind::RotorDisc,
            amplitude: 14.0,
            period_s: 4.0,
        },
    ];
    s.targets = vec![
        target(1, Species::Kite, 1.6, &[(0.0, [420.0, 260.0, 90.0]), (30.0, [380.0, 20.0, 110.0])]),
        target(2, Species::Bird, 1.2, &[(0.0, [300.0, 60.0, 4.0]), (30.0, [240.0, 170.0, 3.0])]),
        target(3, Species::Bird, 0.5, &[(0.0, [160.0, -40.0, 45.0]), (30.0, [220.0, -140.0, 60.0])]),
        target(4, Species::Bird, 1.0, &[(0.0, [500.0, -150.0, 120.0]), (30.0, [430.0, -300.0, 100.0])]),
    ];
    s
}

/// A single kite flying straight over the turbine and away.
pub fn zone_crossing() -> Scenario {
    let mut s = base("zone_crossing", 90.0, 4242);
    s.targets = vec![target(1, Species::Kite, 1.6, &[
        (0.0, [850.0, 350.0, 130.0]),
        (25.0, [450.0, 0.0, 110.0]),
        (45.0, [150.0, -120.0, 80.0]),
        (90.0, [110.0, -90.0, 80.0]),
    ])];
    s
}

pub fn empty() -> Scenario {
    base("empty", 10.0, 1)
}

pub fn by_name(name: &str) -> Option<Scenario> {
    match name {
        "default_flyby" => Some(default_flyby()),
        "clutter" => Some(clutter()),
        "zone_crossing" => Some(zone_crossing()),
        "empty" => Some(empty()),
        _ => None,
    }
}
