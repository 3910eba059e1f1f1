//! Sequential odometry over a recorded IMU stream and scan sequence.

use log::{debug, warn};

use crate::error::{Error, Result};
use crate::estimator::{
    estimate_scan_from, predict_state, undistorted_world_points, EstimatorConfig, OptimizationReport, ScanInput,
};
use crate::geometry::{Quat, RigidTransform, Vec3};
use crate::imu::{static_initialize, window_between, ImuSample, ImuState, StaticInitConfig};
use crate::map_matching::{GlobalMap, MapParams};
use crate::preintegration::integrate_backward;
use crate::scan::{extract_features, scan_transform, ExtractionParams, FeatureCloud, FeatureLabel, RawScan};
use crate::state::{ImuBias, State};

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct PipelineConfig {
    pub init: StaticInitConfig,
    pub estimator: EstimatorConfig,
    pub map: MapParams,
    pub extraction: ExtractionParams,
    /// LiDAR-to-IMU transform applied to every scan.
    pub extrinsic: RigidTransform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanStatus {
    /// The map was built from this scan.
    Bootstrap,
    Optimized,
    /// Too few correspondences; the IMU prediction was kept.
    Degenerate,
}

impl ScanStatus {
    pub fn name(self) -> &'static str {
        match self {
            ScanStatus::Bootstrap => "bootstrap",
            ScanStatus::Optimized => "optimized",
            ScanStatus::Degenerate => "degenerate",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanResult {
    pub state: State,
    pub status: ScanStatus,
    pub report: Option<OptimizationReport>,
    /// Feature points in the world frame after undistortion at the final
    /// state, with the index of the raw scan point they came from.
    pub world_points: Vec<(FeatureLabel, Vec3, usize)>,
}

#[derive(Clone, Debug)]
pub struct OdometryOutput {
    pub init: ImuState,
    pub initial_rotation: Quat,
    pub scans: Vec<ScanResult>,
    pub map: GlobalMap,
}

pub fn features_of(scan: &RawScan, config: &PipelineConfig) -> FeatureCloud {
    let scan = scan_transform(scan, &config.extrinsic);
    if scan.is_labeled() {
        FeatureCloud::from_labels(&scan, config.extraction.min_range, config.extraction.max_range)
    } else {
        extract_features(&scan, &config.extraction).0
    }
}

/// Drops features outside `[t0, t1]`.
fn clip_to_window(cloud: &FeatureCloud, t0: f64, t1: f64) -> FeatureCloud {
    const EPS: f64 = 1e-9;
    let keep = |f: &&crate::scan::FeaturePoint| f.t >= t0 - EPS && f.t <= t1 + EPS;
    let clamp = |f: &crate::scan::FeaturePoint| crate::scan::FeaturePoint {
        t: f.t.clamp(t0, t1),
        ..*f
    };
    FeatureCloud {
        edges: cloud.edges.iter().filter(keep).map(clamp).collect(),
        planars: cloud.planars.iter().filter(keep).map(clamp).collect(),
        t_start: cloud.t_start.max(t0),
        t_end: cloud.t_end.min(t1),
    }
}

fn tagged(cloud: &FeatureCloud, points: Vec<(FeatureLabel, Vec3)>) -> Vec<(FeatureLabel, Vec3, usize)> {
    cloud
        .iter()
        .zip(points)
        .map(|(f, (label, p))| (label, p, f.source_index))
        .collect()
}

/// Runs static initialization on the IMU data preceding the first scan end,
/// bootstraps the map with the first scan and estimates every later scan.
pub fn run_odometry(imu: &[ImuSample], scans: &[RawScan], config: &PipelineConfig) -> Result<OdometryOutput> {
    if scans.is_empty() {
        return Err(Error::Config("no scans".into()));
    }
    let t0 = scans[0].t_end;
    let init_window = window_between(imu, t0 - config.init.min_duration, t0).map_err(|e| match e {
        Error::OutOfWindow { start, .. } => Error::WindowTooShort {
            span: t0 - start,
            required: config.init.min_duration,
        },
        other => other,
    })?;
    let (init, q0) = static_initialize(&init_window, &config.init)?;
    let gravity = init.gravity;
    let mut x = State {
        t: t0,
        position: Vec3::zeros(),
        velocity: Vec3::zeros(),
        rotation: q0,
        bias: ImuBias::new(init.accel_bias, init.gyro_bias),
    };

    let mut map = GlobalMap::new(config.map);
    let first = features_of(&scans[0], config);
    let pose = RigidTransform::new(x.rotation, x.position);
    let first_points: Vec<_> = first.iter().map(|f| (f.label, pose.transform_point(&f.p))).collect();
    map.insert_points(first_points.iter().copied());
    let mut results = vec![ScanResult {
        state: x,
        status: ScanStatus::Bootstrap,
        report: None,
        world_points: tagged(&first, first_points),
    }];

    for (k, scan) in scans.iter().enumerate().skip(1) {
        let t_k = scan.t_end;
        if t_k <= x.t {
            return Err(Error::NonMonotonic { index: k, t: t_k });
        }
        let window = window_between(imu, x.t, t_k)?;
        let features = clip_to_window(&features_of(scan, config), x.t, t_k);
        let cache = integrate_backward(&window, &x.bias, &config.estimator.noise, &config.estimator.integration)?;
        let guess = predict_state(&x, &cache, &gravity);
        let input = ScanInput {
            prev: &x,
            features: &features,
            imu: &window,
            map: &map,
            gravity,
        };
        let (state, status, report) = match estimate_scan_from(&input, &guess, &config.estimator) {
            Ok(est) => (est.state, ScanStatus::Optimized, Some(est.report)),
            Err(Error::DegenerateScan { found, required }) => {
                warn!("scan {k}: {found} correspondences (< {required}); keeping IMU prediction");
                (guess, ScanStatus::Degenerate, None)
            }
            Err(e) => return Err(e),
        };
        if let Some(r) = &report {
            debug!(
                "scan {k}: cost {:.3e} -> {:.3e}, {} inner, rms {:.4}",
                r.initial_cost, r.final_cost, r.inner_iterations, r.final_rms
            );
        }
        let frozen = config.estimator.one_pass.then_some(&guess);
        let points = undistorted_world_points(&features, &window, &x, &state, frozen, &gravity, &config.estimator)?;
        map.insert_points(points.iter().copied());
        results.push(ScanResult {
            state,
            status,
            report,
            world_points: tagged(&features, points),
        });
        x = state;
    }
    Ok(OdometryOutput {
        init,
        initial_rotation: q0,
        scans: results,
        map,
    })
}
