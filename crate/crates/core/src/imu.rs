//! IMU measurement model and static initialization.
//!
//! Measurement model, with `g_w = (0, 0, +G)`:
//!
//! ```text
//! â = R_wᵀ (a_w + g_w) + b_a + n_a
//! ω̂ = ω + b_ω + n_ω
//! ```
//!
//! so a level device at rest reads `+G` on its z axis.

use crate::error::{Error, Result};
use crate::geometry::{Quat, Vec3};

pub const GRAVITY: f64 = 9.81;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub gyro: Vec3,
    pub accel: Vec3,
}

impl ImuSample {
    pub fn new(t: f64, gyro: Vec3, accel: Vec3) -> Self {
        Self { t, gyro, accel }
    }

    /// Linear interpolation of both channels to time `t`.
    pub fn lerp(a: &ImuSample, b: &ImuSample, t: f64) -> ImuSample {
        let span = b.t - a.t;
        let s = if span > 0.0 { (t - a.t) / span } else { 0.0 };
        ImuSample {
            t,
            gyro: a.gyro + (b.gyro - a.gyro) * s,
            accel: a.accel + (b.accel - a.accel) * s,
        }
    }
}

/// Continuous-time noise densities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuNoiseParams {
    /// Accelerometer white noise, m/s²/√Hz.
    pub sigma_accel: f64,
    /// Gyroscope white noise, rad/s/√Hz.
    pub sigma_gyro: f64,
    /// Accelerometer bias random walk, m/s³/√Hz.
    pub sigma_accel_bias: f64,
    /// Gyroscope bias random walk, rad/s²/√Hz.
    pub sigma_gyro_bias: f64,
}

impl Default for ImuNoiseParams {
    fn default() -> Self {
        Self {
            sigma_accel: 1e-2,
            sigma_gyro: 1e-3,
            sigma_accel_bias: 1e-4,
            sigma_gyro_bias: 1e-5,
        }
    }
}

impl ImuNoiseParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.sigma_accel,
            self.sigma_gyro,
            self.sigma_accel_bias,
            self.sigma_gyro_bias,
        ];
        if all.iter().all(|s| *s > 0.0 && s.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "IMU noise densities must be strictly positive: {self:?}"
            )))
        }
    }
}

/// Biases and the world gravity vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuState {
    pub accel_bias: Vec3,
    pub gyro_bias: Vec3,
    pub gravity: Vec3,
}

impl ImuState {
    pub fn with_gravity(magnitude: f64) -> Self {
        Self {
            accel_bias: Vec3::zeros(),
            gyro_bias: Vec3::zeros(),
            gravity: Vec3::new(0.0, 0.0, magnitude),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StationarityThresholds {
    /// Largest allowed per-axis sample variance of ω̂, (rad/s)².
    pub gyro_variance: f64,
    /// Largest allowed sample variance of ‖â‖, (m/s²)².
    pub accel_norm_variance: f64,
}

impl Default for StationarityThresholds {
    fn default() -> Self {
        Self {
            gyro_variance: 1e-2,
            accel_norm_variance: 0.25,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StaticInitConfig {
    pub min_duration: f64,
    pub gravity: f64,
    pub thresholds: StationarityThresholds,
}

impl Default for StaticInitConfig {
    fn default() -> Self {
        Self {
            min_duration: 10.0,
            gravity: GRAVITY,
            thresholds: StationarityThresholds::default(),
        }
    }
}

fn mean<I: Iterator<Item = Vec3>>(it: I) -> (Vec3, usize) {
    let mut sum = Vec3::zeros();
    let mut n = 0;
    for v in it {
        sum += v;
        n += 1;
    }
    (sum / n.max(1) as f64, n)
}

struct WindowStats {
    gyro_variance: f64,
    accel_norm_variance: f64,
}

fn window_stats(window: &[ImuSample]) -> WindowStats {
    let n = window.len() as f64;
    let denom = (n - 1.0).max(1.0);
    let (gyro_mean, _) = mean(window.iter().map(|s| s.gyro));
    let mut gyro_var = Vec3::zeros();
    for s in window {
        let d = s.gyro - gyro_mean;
        gyro_var += d.component_mul(&d);
    }
    gyro_var /= denom;
    let norm_mean = window.iter().map(|s| s.accel.norm()).sum::<f64>() / n;
    let accel_var = window
        .iter()
        .map(|s| (s.accel.norm() - norm_mean).powi(2))
        .sum::<f64>()
        / denom;
    WindowStats {
        gyro_variance: gyro_var.max(),
        accel_norm_variance: accel_var,
    }
}

/// True iff both the per-axis gyro variance and the accel-norm variance lie
/// below their thresholds. An empty window is never stationary.
pub fn stationarity_check(window: &[ImuSample], thresholds: &StationarityThresholds) -> bool {
    if window.is_empty() {
        return false;
    }
    let stats = window_stats(window);
    stats.gyro_variance < thresholds.gyro_variance
        && stats.accel_norm_variance < thresholds.accel_norm_variance
}

/// Estimates the gyro bias and the initial attitude from a stationary window.
///
/// The returned orientation (body to world) maps the mean specific force onto
/// `+z` with zero yaw. The accelerometer bias is left at zero.
pub fn static_initialize(
    window: &[ImuSample],
    config: &StaticInitConfig,
) -> Result<(ImuState, Quat)> {
    if window.len() < 2 {
        return Err(Error::TooFewSamples {
            required: 2,
            got: window.len(),
        });
    }
    let span = window[window.len() - 1].t - window[0].t;
    if span + 1e-9 < config.min_duration {
        return Err(Error::WindowTooShort {
            span,
            required: config.min_duration,
        });
    }
    let stats = window_stats(window);
    if !(stats.gyro_variance < config.thresholds.gyro_variance
        && stats.accel_norm_variance < config.thresholds.accel_norm_variance)
    {
        return Err(Error::NotStationary {
            gyro_var: stats.gyro_variance,
            gyro_limit: config.thresholds.gyro_variance,
            accel_var: stats.accel_norm_variance,
            accel_limit: config.thresholds.accel_norm_variance,
        });
    }

    let (gyro_bias, _) = mean(window.iter().map(|s| s.gyro));
    let (accel_mean, _) = mean(window.iter().map(|s| s.accel));

    let tilt = Quat::rotation_between(&accel_mean, &Vec3::z());
    let yaw = tilt.yaw();
    let q = Quat::from_axis_angle(&Vec3::z(), -yaw) * tilt;

    let mut state = ImuState::with_gravity(config.gravity);
    state.gyro_bias = gyro_bias;
    Ok((state, q))
}

/// Samples covering `[t0, t1]`, with interior samples kept as-is and the
/// endpoints linearly interpolated when no sample falls exactly on them.
pub fn window_between(samples: &[ImuSample], t0: f64, t1: f64) -> Result<Vec<ImuSample>> {
    const EPS: f64 = 1e-9;
    if samples.is_empty() {
        return Err(Error::TooFewSamples {
            required: 2,
            got: 0,
        });
    }
    let first = samples[0].t;
    let last = samples[samples.len() - 1].t;
    if t0 < first - EPS || t1 > last + EPS || t1 < t0 {
        return Err(Error::OutOfWindow {
            t: if t0 < first - EPS { t0 } else { t1 },
            start: first,
            end: last,
        });
    }
    let at = |t: f64| -> ImuSample {
        let idx = samples.partition_point(|s| s.t < t - EPS);
        if idx < samples.len() && (samples[idx].t - t).abs() <= EPS {
            let mut s = samples[idx];
            s.t = t;
            return s;
        }
        if idx == 0 {
            let mut s = samples[0];
            s.t = t;
            return s;
        }
        if idx >= samples.len() {
            let mut s = samples[samples.len() - 1];
            s.t = t;
            return s;
        }
        ImuSample::lerp(&samples[idx - 1], &samples[idx], t)
    };
    let mut out = vec![at(t0)];
    out.extend(
        samples
            .iter()
            .filter(|s| s.t > t0 + EPS && s.t < t1 - EPS)
            .copied(),
    );
    out.push(at(t1));
    Ok(out)
}
