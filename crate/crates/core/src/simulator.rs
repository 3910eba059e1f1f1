//! Synthetic worlds, analytic trajectories, IMU synthesis and motion-distorted
//! scans with ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{right_jacobian, Quat, RigidTransform, Vec3};
use crate::imu::{ImuNoiseParams, ImuSample, GRAVITY};
use crate::scan::{FeatureLabel, RawScan, ScanPoint};
use crate::state::{ImuBias, State};

/// Bounded plane `n·x = offset`, sampled inside the axis-aligned `bounds`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanePrimitive {
    pub normal: Vec3,
    pub offset: f64,
    pub bounds: (Vec3, Vec3),
}

/// Segment `anchor + s·direction`, `s ∈ extent`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgePrimitive {
    pub direction: Vec3,
    pub anchor: Vec3,
    pub extent: (f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PrimitiveId {
    Plane(usize),
    Edge(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimWorld {
    pub planes: Vec<PlanePrimitive>,
    pub edges: Vec<EdgePrimitive>,
}

impl Default for SimWorld {
    /// A 10 m box room centred on the origin with four floor-to-ceiling poles.
    fn default() -> Self {
        Self::room(5.0, 2.5)
    }
}

impl SimWorld {
    pub fn room(half: f64, pole_offset: f64) -> Self {
        let lo = Vec3::repeat(-half);
        let hi = Vec3::repeat(half);
        let mut planes = Vec::new();
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let mut normal = Vec3::zeros();
                normal[axis] = 1.0;
                let (mut a, mut b) = (lo, hi);
                a[axis] = sign * half;
                b[axis] = sign * half;
                planes.push(PlanePrimitive {
                    normal,
                    offset: sign * half,
                    bounds: (a, b),
                });
            }
        }
        let edges = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
            .iter()
            .map(|(sx, sy)| EdgePrimitive {
                direction: Vec3::z(),
                anchor: Vec3::new(sx * pole_offset, sy * pole_offset, 0.0),
                extent: (-half, half),
            })
            .collect();
        Self { planes, edges }
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty() && self.edges.is_empty()
    }

    /// Unsigned distance from `p` to the (unbounded) primitive.
    pub fn distance(&self, id: PrimitiveId, p: &Vec3) -> f64 {
        match id {
            PrimitiveId::Plane(i) => {
                let pl = &self.planes[i];
                (pl.normal.dot(p) - pl.offset).abs()
            }
            PrimitiveId::Edge(i) => {
                let e = &self.edges[i];
                (p - e.anchor).cross(&e.direction).norm()
            }
        }
    }

    fn sample_plane(&self, i: usize, rng: &mut ChaCha8Rng) -> Vec3 {
        let pl = &self.planes[i];
        let (a, b) = pl.bounds;
        let mut p = Vec3::zeros();
        for k in 0..3 {
            p[k] = if a[k] < b[k] { rng.random_range(a[k]..b[k]) } else { a[k] };
        }
        // Project onto the plane in case the bounds are not exactly on it.
        p - pl.normal * (pl.normal.dot(&p) - pl.offset)
    }

    fn sample_edge(&self, i: usize, rng: &mut ChaCha8Rng) -> Vec3 {
        let e = &self.edges[i];
        e.anchor + e.direction * rng.random_range(e.extent.0..e.extent.1)
    }

    fn plane_area(&self, i: usize) -> f64 {
        let (a, b) = self.planes[i].bounds;
        let d = b - a;
        let mut s = [d.x.abs(), d.y.abs(), d.z.abs()];
        s.sort_by(|x, y| y.total_cmp(x));
        s[0] * s[1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryKind {
    Rest,
    ConstantVelocity,
    Sinusoid,
}

impl TrajectoryKind {
    pub fn name(self) -> &'static str {
        match self {
            TrajectoryKind::Rest => "rest",
            TrajectoryKind::ConstantVelocity => "constant_velocity",
            TrajectoryKind::Sinusoid => "sinusoid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rest" => Some(TrajectoryKind::Rest),
            "constant_velocity" => Some(TrajectoryKind::ConstantVelocity),
            "sinusoid" => Some(TrajectoryKind::Sinusoid),
            _ => None,
        }
    }
}

/// Analytic trajectory. Orientation is `Exp(r(t))` for a rotation-vector
/// path `r(t)`; every motion term is multiplied by a C² ramp of length
/// `ramp` seconds so that a trajectory can start from rest.
///
/// * `constant_velocity`: `p = v E(t)`, `r = ω E(t)` with `E' = ramp(t)`.
/// * `sinusoid`: `p_i = A_i (sin(2π f_i t + φ) − sin φ) · ramp(t)`, same form
///   for `r` with the rotation amplitudes and frequencies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub duration: f64,
    pub ramp: f64,
    pub linear_velocity: Vec3,
    pub angular_velocity: Vec3,
    pub translation_amplitude: Vec3,
    pub translation_frequency: Vec3,
    pub rotation_amplitude: Vec3,
    pub rotation_frequency: Vec3,
    pub phase: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            kind: TrajectoryKind::Rest,
            duration: 5.0,
            ramp: 0.0,
            linear_velocity: Vec3::zeros(),
            angular_velocity: Vec3::zeros(),
            translation_amplitude: Vec3::zeros(),
            translation_frequency: Vec3::repeat(1.0),
            rotation_amplitude: Vec3::zeros(),
            rotation_frequency: Vec3::repeat(1.0),
            phase: 0.0,
        }
    }
}

/// Kinematic truth at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthSample {
    pub pose: RigidTransform,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    pub angular_velocity: Vec3,
}

/// Quintic smootherstep ramp and its first two derivatives.
fn ramp(t: f64, len: f64) -> (f64, f64, f64) {
    if len <= 0.0 || t >= len {
        return (1.0, 0.0, 0.0);
    }
    let u = t / len;
    let e = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
    let de = 30.0 * u * u * (1.0 - u) * (1.0 - u) / len;
    let dde = 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u) / (len * len);
    (e, de, dde)
}

/// `∫₀ᵗ ramp`.
fn ramp_integral(t: f64, len: f64) -> f64 {
    if len <= 0.0 {
        return t;
    }
    if t >= len {
        return t - 0.5 * len;
    }
    let u = t / len;
    len * u.powi(4) * (2.5 - 3.0 * u + u * u)
}

fn sinusoid_axis(t: f64, amp: f64, freq: f64, phase: f64, len: f64) -> (f64, f64, f64) {
    let w = 2.0 * std::f64::consts::PI * freq;
    let s = amp * ((w * t + phase).sin() - phase.sin());
    let ds = amp * w * (w * t + phase).cos();
    let dds = -amp * w * w * (w * t + phase).sin();
    let (e, de, dde) = ramp(t, len);
    (s * e, ds * e + s * de, dds * e + 2.0 * ds * de + s * dde)
}

/// Rotation vector, its rate, position, velocity and acceleration.
fn path(spec: &TrajectorySpec, t: f64) -> (Vec3, Vec3, Vec3, Vec3, Vec3) {
    match spec.kind {
        TrajectoryKind::Rest => (Vec3::zeros(), Vec3::zeros(), Vec3::zeros(), Vec3::zeros(), Vec3::zeros()),
        TrajectoryKind::ConstantVelocity => {
            let (e, de, _) = ramp(t, spec.ramp);
            let big_e = ramp_integral(t, spec.ramp);
            (
                spec.angular_velocity * big_e,
                spec.angular_velocity * e,
                spec.linear_velocity * big_e,
                spec.linear_velocity * e,
                spec.linear_velocity * de,
            )
        }
        TrajectoryKind::Sinusoid => {
            let mut out = [Vec3::zeros(); 5];
            for i in 0..3 {
                let (r, dr, _) = sinusoid_axis(
                    t,
                    spec.rotation_amplitude[i],
                    spec.rotation_frequency[i],
                    spec.phase,
                    spec.ramp,
                );
                let (p, dp, ddp) = sinusoid_axis(
                    t,
                    spec.translation_amplitude[i],
                    spec.translation_frequency[i],
                    spec.phase,
                    spec.ramp,
                );
                out[0][i] = r;
                out[1][i] = dr;
                out[2][i] = p;
                out[3][i] = dp;
                out[4][i] = ddp;
            }
            (out[0], out[1], out[2], out[3], out[4])
        }
    }
}

pub fn truth_at(spec: &TrajectorySpec, t: f64) -> Result<TruthSample> {
    const EPS: f64 = 1e-9;
    if !(t >= -EPS && t <= spec.duration + EPS) {
        return Err(Error::OutOfWindow {
            t,
            start: 0.0,
            end: spec.duration,
        });
    }
    Ok(truth_unchecked(spec, t.max(0.0)))
}

fn truth_unchecked(spec: &TrajectorySpec, t: f64) -> TruthSample {
    let (r, dr, p, v, a) = path(spec, t);
    TruthSample {
        pose: RigidTransform::new(Quat::exp(&r), p),
        velocity: v,
        acceleration: a,
        angular_velocity: right_jacobian(&r) * dr,
    }
}

/// A trajectory preceded by `static_seconds` at its initial pose; dataset
/// time `t` maps to trajectory time `t − static_seconds`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimTrajectory {
    pub spec: TrajectorySpec,
    pub static_seconds: f64,
}

impl SimTrajectory {
    pub fn new(spec: TrajectorySpec, static_seconds: f64) -> Self {
        Self { spec, static_seconds }
    }

    pub fn end_time(&self) -> f64 {
        self.static_seconds + self.spec.duration
    }

    pub fn truth(&self, t: f64) -> TruthSample {
        let local = (t - self.static_seconds).clamp(0.0, self.spec.duration);
        let mut s = truth_unchecked(&self.spec, local);
        if t < self.static_seconds {
            s.velocity = Vec3::zeros();
            s.acceleration = Vec3::zeros();
            s.angular_velocity = Vec3::zeros();
        }
        s
    }

    pub fn state(&self, t: f64, bias: ImuBias) -> State {
        let s = self.truth(t);
        State {
            t,
            position: s.pose.translation,
            velocity: s.velocity,
            rotation: s.pose.rotation,
            bias,
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> Vec3 {
    if sigma <= 0.0 {
        return Vec3::zeros();
    }
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSynthesis {
    pub rate: f64,
    pub noise: ImuNoiseParams,
    /// Adds white measurement noise when set.
    pub measurement_noise: bool,
    /// Lets the biases random-walk from `bias` when set.
    pub bias_random_walk: bool,
    pub bias: ImuBias,
    pub gravity: Vec3,
    pub seed: u64,
}

impl Default for ImuSynthesis {
    fn default() -> Self {
        Self {
            rate: 400.0,
            noise: ImuNoiseParams::default(),
            measurement_noise: false,
            bias_random_walk: false,
            bias: ImuBias::zero(),
            gravity: Vec3::new(0.0, 0.0, GRAVITY),
            seed: 0,
        }
    }
}

/// Samples `â = Rᵀ(a_w + g) + b_a + n_a`, `ω̂ = ω + b_ω + n_ω` on the grid
/// `k / rate` over `[0, end_time]`. Returns the samples and the true bias at
/// each sample.
pub fn synthesize_imu_with_bias(traj: &SimTrajectory, cfg: &ImuSynthesis) -> (Vec<ImuSample>, Vec<ImuBias>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = (traj.end_time() * cfg.rate).round() as usize;
    let sqrt_rate = cfg.rate.sqrt();
    let dt_sqrt = 1.0 / sqrt_rate;
    let mut bias = cfg.bias;
    let mut samples = Vec::with_capacity(n + 1);
    let mut biases = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = k as f64 / cfg.rate;
        let s = traj.truth(t);
        let rt = s.pose.rotation.inverse();
        let mut gyro = s.angular_velocity + bias.gyro;
        let mut accel = rt.rotate(&(s.acceleration + cfg.gravity)) + bias.accel;
        if cfg.measurement_noise {
            gyro += gaussian(&mut rng, cfg.noise.sigma_gyro * sqrt_rate);
            accel += gaussian(&mut rng, cfg.noise.sigma_accel * sqrt_rate);
        }
        samples.push(ImuSample::new(t, gyro, accel));
        biases.push(bias);
        if cfg.bias_random_walk {
            bias.accel += gaussian(&mut rng, cfg.noise.sigma_accel_bias * dt_sqrt);
            bias.gyro += gaussian(&mut rng, cfg.noise.sigma_gyro_bias * dt_sqrt);
        }
    }
    (samples, biases)
}

pub fn synthesize_imu(traj: &SimTrajectory, cfg: &ImuSynthesis) -> Vec<ImuSample> {
    synthesize_imu_with_bias(traj, cfg).0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanSynthesis {
    pub points_per_scan: usize,
    pub edge_fraction: f64,
    pub noise_sigma: f64,
    pub min_range: f64,
    pub max_range: f64,
    /// LiDAR-to-body transform; points are emitted in the LiDAR frame.
    pub extrinsic: RigidTransform,
}

impl Default for ScanSynthesis {
    fn default() -> Self {
        Self {
            points_per_scan: 3000,
            edge_fraction: 0.2,
            noise_sigma: 0.0,
            min_range: 0.5,
            max_range: 100.0,
            extrinsic: RigidTransform::identity(),
        }
    }
}

/// A labeled scan plus the world point and primitive behind every point.
#[derive(Clone, Debug, PartialEq)]
pub struct SimScan {
    pub scan: RawScan,
    pub world_points: Vec<Vec3>,
    pub primitives: Vec<PrimitiveId>,
}

/// Sweep over `[t_start, t_end]`: point `j` of `n` is taken at
/// `t_start + j/(n−1)·(t_end − t_start)` from the true pose at that time.
pub fn synthesize_scan(
    world: &SimWorld,
    traj: &SimTrajectory,
    t_start: f64,
    t_end: f64,
    cfg: &ScanSynthesis,
    seed: u64,
) -> Result<SimScan> {
    if world.is_empty() {
        return Err(Error::EmptyWorld);
    }
    if !(t_end > t_start) || cfg.points_per_scan < 2 {
        return Err(Error::Config(format!(
            "scan needs t_end > t_start and at least 2 points (got [{t_start}, {t_end}], {})",
            cfg.points_per_scan
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let areas: Vec<f64> = (0..world.planes.len()).map(|i| world.plane_area(i)).collect();
    let total_area: f64 = areas.iter().sum();
    let lengths: Vec<f64> = world.edges.iter().map(|e| e.extent.1 - e.extent.0).collect();
    let total_length: f64 = lengths.iter().sum();
    let pick = |weights: &[f64], total: f64, rng: &mut ChaCha8Rng| -> usize {
        let mut u = rng.random_range(0.0..total);
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                return i;
            }
            u -= w;
        }
        weights.len() - 1
    };
    let ext_inv = cfg.extrinsic.inverse();
    let n = cfg.points_per_scan;
    let mut points = Vec::with_capacity(n);
    let mut world_points = Vec::with_capacity(n);
    let mut primitives = Vec::with_capacity(n);
    for j in 0..n {
        let t = t_start + (t_end - t_start) * j as f64 / (n - 1) as f64;
        let pose = traj.truth(t).pose;
        let mut attempts = 0;
        let (id, x_w) = loop {
            attempts += 1;
            let use_edge = !world.edges.is_empty()
                && (world.planes.is_empty() || rng.random_range(0.0..1.0) < cfg.edge_fraction);
            let (id, x) = if use_edge {
                let i = pick(&lengths, total_length, &mut rng);
                (PrimitiveId::Edge(i), world.sample_edge(i, &mut rng))
            } else {
                let i = pick(&areas, total_area, &mut rng);
                (PrimitiveId::Plane(i), world.sample_plane(i, &mut rng))
            };
            let range = (x - pose.translation).norm();
            if (range >= cfg.min_range && range <= cfg.max_range) || attempts > 1000 {
                break (id, x);
            }
        };
        let body = pose.inverse().transform_point(&x_w);
        let p = ext_inv.transform_point(&body) + gaussian(&mut rng, cfg.noise_sigma);
        let label = match id {
            PrimitiveId::Edge(_) => FeatureLabel::Edge,
            PrimitiveId::Plane(_) => FeatureLabel::Planar,
        };
        points.push(ScanPoint {
            t,
            p,
            ring: 0,
            label: Some(label),
        });
        world_points.push(x_w);
        primitives.push(id);
    }
    let scan = RawScan {
        points,
        t_start,
        t_end,
    };
    Ok(SimScan {
        scan,
        world_points,
        primitives,
    })
}

/// Complete simulation setup.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub trajectory: TrajectorySpec,
    pub static_seconds: f64,
    pub scan_rate: f64,
    pub imu: ImuSynthesis,
    pub scan: ScanSynthesis,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::preset("high_dynamics").expect("known preset")
    }
}

impl SimConfig {
    pub fn preset(name: &str) -> Option<Self> {
        let base = SimConfig {
            trajectory: TrajectorySpec::default(),
            static_seconds: 10.0,
            scan_rate: 10.0,
            imu: ImuSynthesis::default(),
            scan: ScanSynthesis::default(),
            seed: 0,
        };
        match name {
            "rest" => Some(base),
            "constant_velocity" => Some(SimConfig {
                trajectory: TrajectorySpec {
                    kind: TrajectoryKind::ConstantVelocity,
                    ramp: 1.0,
                    linear_velocity: Vec3::new(0.5, 0.0, 0.0),
                    angular_velocity: Vec3::new(0.0, 0.0, 0.3),
                    ..TrajectorySpec::default()
                },
                ..base
            }),
            "high_dynamics" => Some(SimConfig {
                trajectory: TrajectorySpec {
                    kind: TrajectoryKind::Sinusoid,
                    ramp: 1.0,
                    translation_amplitude: Vec3::new(0.5, 0.3, 0.2),
                    translation_frequency: Vec3::new(1.0, 1.0, 1.0),
                    rotation_amplitude: Vec3::new(0.1, 0.1, 0.5),
                    rotation_frequency: Vec3::new(1.0, 1.0, 1.0),
                    ..TrajectorySpec::default()
                },
                imu: ImuSynthesis {
                    noise: ImuNoiseParams {
                        sigma_accel: 1e-2,
                        sigma_gyro: 1e-3,
                        sigma_accel_bias: 1e-4,
                        sigma_gyro_bias: 1e-5,
                    },
                    measurement_noise: true,
                    bias: ImuBias::new(Vec3::zeros(), Vec3::new(0.004, -0.003, 0.002)),
                    ..ImuSynthesis::default()
                },
                scan: ScanSynthesis {
                    noise_sigma: 0.01,
                    ..ScanSynthesis::default()
                },
                ..base
            }),
            _ => None,
        }
    }

    pub fn trajectory(&self) -> SimTrajectory {
        SimTrajectory::new(self.trajectory, self.static_seconds)
    }

    pub fn num_scans(&self) -> usize {
        (self.trajectory.duration * self.scan_rate).round() as usize
    }

    /// End time of scan `k`; scan 0 is the last static sweep.
    pub fn scan_end(&self, k: usize) -> f64 {
        self.static_seconds + k as f64 / self.scan_rate
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub imu: Vec<ImuSample>,
    pub scans: Vec<SimScan>,
    /// True state at each scan end time.
    pub truth: Vec<State>,
    pub world: SimWorld,
    pub config: SimConfig,
}

fn scan_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(k as u64 + 1)
        .rotate_left(17)
}

pub fn generate_dataset(world: &SimWorld, config: &SimConfig) -> Result<Dataset> {
    let traj = config.trajectory();
    if config.static_seconds > 0.0 {
        let start = truth_unchecked(&config.trajectory, 0.0);
        if start.velocity.norm() > 1e-12 || start.angular_velocity.norm() > 1e-12 {
            return Err(Error::Config(
                "trajectory must start at rest when preceded by a static interval (set a ramp)".into(),
            ));
        }
    }
    if config.scan_rate <= 0.0 || config.static_seconds * config.scan_rate < 1.0 - 1e-9 {
        return Err(Error::Config("static interval must cover at least one scan period".into()));
    }
    let imu_cfg = ImuSynthesis {
        seed: config.seed,
        ..config.imu
    };
    let (imu, biases) = synthesize_imu_with_bias(&traj, &imu_cfg);
    let bias_at = |t: f64| {
        let i = ((t * imu_cfg.rate).round() as usize).min(biases.len() - 1);
        biases[i]
    };
    let period = 1.0 / config.scan_rate;
    let mut scans = Vec::new();
    let mut truth = Vec::new();
    for k in 0..config.num_scans() {
        let t_end = config.scan_end(k);
        let scan = synthesize_scan(world, &traj, t_end - period, t_end, &config.scan, scan_seed(config.seed, k))?;
        scans.push(scan);
        truth.push(traj.state(t_end, bias_at(t_end)));
    }
    Ok(Dataset {
        imu,
        scans,
        truth,
        world: world.clone(),
        config: *config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preintegration::{imu_residual, integrate_backward, IntegrationOptions};
    use std::f64::consts::PI;

    fn g() -> Vec3 {
        Vec3::new(0.0, 0.0, GRAVITY)
    }

    #[test]
    fn rest_truth() {
        let spec = TrajectorySpec::default();
        let s = truth_at(&spec, 1.3).unwrap();
        assert_eq!(s.pose, RigidTransform::identity());
        assert_eq!(s.velocity, Vec3::zeros());
        assert_eq!(s.acceleration, Vec3::zeros());
        assert_eq!(s.angular_velocity, Vec3::zeros());
        assert!(truth_at(&spec, 5.1).is_err());
        assert!(truth_at(&spec, -0.1).is_err());
    }

    #[test]
    fn constant_velocity_truth() {
        let spec = TrajectorySpec {
            kind: TrajectoryKind::ConstantVelocity,
            linear_velocity: Vec3::new(1.0, 0.0, 0.0),
            ..Default::default()
        };
        for t in [0.0, 0.7, 2.0] {
            let s = truth_at(&spec, t).unwrap();
            assert!((s.pose.translation - Vec3::new(t, 0.0, 0.0)).norm() < 1e-15);
            assert_eq!(s.acceleration, Vec3::zeros());
        }
    }

    #[test]
    fn sinusoid_second_derivative() {
        let (amp, f) = (0.5, 1.0);
        let spec = TrajectorySpec {
            kind: TrajectoryKind::Sinusoid,
            translation_amplitude: Vec3::new(amp, 0.0, 0.0),
            translation_frequency: Vec3::repeat(f),
            ..Default::default()
        };
        let s0 = truth_at(&spec, 0.0).unwrap();
        assert!(s0.acceleration.norm() < 1e-12);
        let s = truth_at(&spec, 0.25 / f).unwrap();
        let expect = -amp * (2.0 * PI * f).powi(2);
        assert!((s.acceleration.x - expect).abs() < 1e-9);
    }

    /// Derivatives agree with central differences of the analytic path.
    #[test]
    fn derivatives_match_finite_differences() {
        let spec = SimConfig::preset("high_dynamics").unwrap().trajectory;
        let h = 1e-5;
        for &t in &[0.05, 0.4, 0.999, 1.0, 1.3, 2.7, 4.9] {
            let (r, dr, _, v, a) = path(&spec, t);
            let (r1, _, p1, v1, _) = path(&spec, t + h);
            let (r0, _, p0, v0, _) = path(&spec, t - h);
            assert!(((p1 - p0) / (2.0 * h) - v).norm() < 1e-6, "v at {t}");
            assert!(((v1 - v0) / (2.0 * h) - a).norm() < 1e-5, "a at {t}");
            assert!(((r1 - r0) / (2.0 * h) - dr).norm() < 1e-6, "r' at {t}");
            // Body rate from the rotation derivative.
            let q = Quat::exp(&r);
            let omega = (q.inverse() * Quat::exp(&r1)).log() / h;
            let s = truth_at(&spec, t).unwrap();
            assert!((omega - s.angular_velocity).norm() < 1e-3, "ω at {t}");
        }
    }

    #[test]
    fn ramp_is_c2() {
        for len in [0.5, 1.0] {
            let (e0, d0, dd0) = ramp(0.0, len);
            assert_eq!((e0, d0, dd0), (0.0, 0.0, 0.0));
            let (e1, d1, dd1) = ramp(len - 1e-12, len);
            assert!((e1 - 1.0).abs() < 1e-9 && d1.abs() < 1e-9 && dd1.abs() < 1e-6);
            let h = 1e-6;
            let t = 0.3 * len;
            let num = (ramp_integral(t + h, len) - ramp_integral(t - h, len)) / (2.0 * h);
            assert!((num - ramp(t, len).0).abs() < 1e-8);
            assert!((ramp_integral(len, len) - 0.5 * len).abs() < 1e-12);
        }
    }

    #[test]
    fn imu_rest_and_bias() {
        let traj = SimTrajectory::new(TrajectorySpec::default(), 0.0);
        let s = synthesize_imu(&traj, &ImuSynthesis::default());
        assert_eq!(s.len(), 2001);
        assert!(s.iter().all(|x| x.accel == g() && x.gyro == Vec3::zeros()));
        let cfg = ImuSynthesis {
            bias: ImuBias::new(Vec3::zeros(), Vec3::new(0.01, 0.0, 0.0)),
            ..Default::default()
        };
        assert!(synthesize_imu(&traj, &cfg)
            .iter()
            .all(|x| x.gyro == Vec3::new(0.01, 0.0, 0.0)));
    }

    #[test]
    fn imu_noise_variance_and_determinism() {
        let traj = SimTrajectory::new(
            TrajectorySpec {
                duration: 250.0,
                ..Default::default()
            },
            0.0,
        );
        let cfg = ImuSynthesis {
            measurement_noise: true,
            seed: 42,
            ..Default::default()
        };
        let s = synthesize_imu(&traj, &cfg);
        assert!(s.len() >= 100_000);
        let n = s.len() as f64;
        let mean = s.iter().map(|x| x.gyro.x).sum::<f64>() / n;
        let var = s.iter().map(|x| (x.gyro.x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expect = cfg.noise.sigma_gyro.powi(2) * cfg.rate;
        assert!((var / expect - 1.0).abs() < 0.1, "{var} vs {expect}");
        assert_eq!(s, synthesize_imu(&traj, &cfg));
    }

    #[test]
    fn kinematic_consistency_with_preintegration() {
        let mut cfg = SimConfig::preset("high_dynamics").unwrap();
        cfg.imu.measurement_noise = false;
        cfg.imu.rate = 4000.0;
        let traj = cfg.trajectory();
        let imu = synthesize_imu(&traj, &cfg.imu);
        let bias = cfg.imu.bias;
        for k in [5usize, 17, 33] {
            let (t0, t1) = (cfg.scan_end(k - 1), cfg.scan_end(k));
            let w: Vec<_> = imu
                .iter()
                .filter(|s| s.t >= t0 - 1e-9 && s.t <= t1 + 1e-9)
                .copied()
                .collect();
            let cache = integrate_backward(&w, &bias, &ImuNoiseParams::default(), &IntegrationOptions::default())
                .unwrap();
            let r = imu_residual(&traj.state(t1, bias), &traj.state(t0, bias), cache.full(), &g());
            assert!(r.norm() < 1e-6, "scan {k}: {}", r.norm());
        }
    }

    #[test]
    fn scan_rest_has_no_distortion() {
        let world = SimWorld::default();
        let traj = SimTrajectory::new(TrajectorySpec::default(), 0.0);
        let sim = synthesize_scan(&world, &traj, 0.0, 0.1, &ScanSynthesis::default(), 1).unwrap();
        for ((p, x), id) in sim.scan.points.iter().zip(&sim.world_points).zip(&sim.primitives) {
            assert!((p.p - x).norm() < 1e-12);
            assert!(world.distance(*id, &p.p) < 1e-12);
        }
        assert!((sim.scan.points[0].t - 0.0).abs() < 1e-15);
        assert!((sim.scan.points.last().unwrap().t - 0.1).abs() < 1e-15);
        let edges = sim
            .scan
            .points
            .iter()
            .filter(|p| p.label == Some(FeatureLabel::Edge))
            .count();
        assert!((400..800).contains(&edges), "{edges}");
    }

    #[test]
    fn scan_rotation_distortion() {
        let spec = TrajectorySpec {
            kind: TrajectoryKind::ConstantVelocity,
            angular_velocity: Vec3::new(0.0, 0.0, 2.0),
            ..Default::default()
        };
        let traj = SimTrajectory::new(spec, 0.0);
        let x = Vec3::new(5.0, 1.0, 0.3);
        let at = |t: f64| traj.truth(t).pose.inverse().transform_point(&x);
        let (a, b) = (at(0.0), at(0.1));
        assert!((a.y.atan2(a.x) - b.y.atan2(b.x) - 0.2).abs() < 1e-12);
        assert!((a.z - b.z).abs() < 1e-12);
        assert!((at(0.0) - Quat::exp(&Vec3::new(0.0, 0.0, 0.2)).rotate(&at(0.1))).norm() < 1e-12);
    }

    #[test]
    fn scan_translation_distortion() {
        let world = SimWorld::default();
        let spec = TrajectorySpec {
            kind: TrajectoryKind::ConstantVelocity,
            linear_velocity: Vec3::new(3.0, 0.0, 0.0),
            ..Default::default()
        };
        let traj = SimTrajectory::new(spec, 0.0);
        let sim = synthesize_scan(&world, &traj, 0.0, 0.1, &ScanSynthesis::default(), 3).unwrap();
        let first = traj.truth(0.0).pose;
        let last = sim.scan.points.last().unwrap();
        let naive = first.transform_point(&last.p);
        let err = (naive - sim.world_points.last().unwrap()).norm();
        assert!((err - 0.3).abs() < 1e-12, "{err}");
    }

    #[test]
    fn empty_world_rejected() {
        let world = SimWorld {
            planes: vec![],
            edges: vec![],
        };
        let traj = SimTrajectory::new(TrajectorySpec::default(), 0.0);
        assert_eq!(
            synthesize_scan(&world, &traj, 0.0, 0.1, &ScanSynthesis::default(), 0),
            Err(Error::EmptyWorld)
        );
    }

    #[test]
    fn dataset_layout() {
        let mut cfg = SimConfig::preset("high_dynamics").unwrap();
        cfg.scan.points_per_scan = 50;
        let d = generate_dataset(&SimWorld::default(), &cfg).unwrap();
        assert_eq!(d.scans.len(), 50);
        assert!((d.scans[0].scan.t_end - 10.0).abs() < 1e-12);
        assert!((d.scans[49].scan.t_end - 14.9).abs() < 1e-9);
        assert_eq!(d.truth[0].position, Vec3::zeros());
        assert!((d.imu.last().unwrap().t - 15.0).abs() < 1e-12);
        assert_eq!(d, generate_dataset(&SimWorld::default(), &cfg).unwrap());

        let mut bad = cfg;
        bad.trajectory.ramp = 0.0;
        bad.trajectory.kind = TrajectoryKind::ConstantVelocity;
        bad.trajectory.linear_velocity = Vec3::x();
        assert!(generate_dataset(&SimWorld::default(), &bad).is_err());
    }
}
