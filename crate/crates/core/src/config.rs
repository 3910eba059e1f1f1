//! Flat `section.key = value` run configuration.
//!
//! Lines starting with `#` are comments and `#` also ends a value. The
//! `sim.preset` key is applied before every other key regardless of its
//! position, so a file can name a preset and override parts of it. Vector
//! values are three numbers separated by commas or whitespace.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{Quat, RigidTransform, Vec3};
use crate::pipeline::PipelineConfig;
use crate::simulator::{SimConfig, SimWorld, TrajectoryKind};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub sim: SimConfig,
    pub room_half_extent: f64,
    pub pole_offset: f64,
    pub pipeline: PipelineConfig,
    /// LiDAR-to-body rotation as a rotation vector.
    pub extrinsic_rotation: Vec3,
    pub extrinsic_translation: Vec3,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_preset("high_dynamics").expect("known preset")
    }
}

trait Value: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn format_value(&self) -> String;
}

impl Value for f64 {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        let v: f64 = s.parse().map_err(|_| format!("expected a number, got `{s}`"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("expected a finite number, got `{s}`"))
        }
    }

    fn format_value(&self) -> String {
        format!("{self:?}")
    }
}

impl Value for usize {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|_| format!("expected a non-negative integer, got `{s}`"))
    }

    fn format_value(&self) -> String {
        self.to_string()
    }
}

impl Value for u64 {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|_| format!("expected a non-negative integer, got `{s}`"))
    }

    fn format_value(&self) -> String {
        self.to_string()
    }
}

impl Value for bool {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        match s {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(format!("expected true or false, got `{s}`")),
        }
    }

    fn format_value(&self) -> String {
        self.to_string()
    }
}

impl Value for Vec3 {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|p| !p.is_empty())
            .collect();
        if parts.len() != 3 {
            return Err(format!("expected three numbers, got `{s}`"));
        }
        Ok(Vec3::new(
            f64::parse_value(parts[0])?,
            f64::parse_value(parts[1])?,
            f64::parse_value(parts[2])?,
        ))
    }

    fn format_value(&self) -> String {
        format!("{:?}, {:?}, {:?}", self.x, self.y, self.z)
    }
}

impl Value for TrajectoryKind {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        TrajectoryKind::parse(s).ok_or_else(|| format!("unknown trajectory kind `{s}`"))
    }

    fn format_value(&self) -> String {
        self.name().to_string()
    }
}

macro_rules! keys {
    ($($key:literal => $($field:ident).+;)*) => {
        /// Every accepted key other than `sim.preset`, in dump order.
        pub const KEYS: &[&str] = &[$($key),*];

        impl RunConfig {
            fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
                match key {
                    $($key => self.$($field).+ = Value::parse_value(value)?,)*
                    _ => return Err(format!("unknown key `{key}`")),
                }
                Ok(())
            }

            fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$(($key, self.$($field).+.format_value())),*]
            }
        }
    };
}

keys! {
    "sim.seed" => sim.seed;
    "sim.trajectory" => sim.trajectory.kind;
    "sim.duration" => sim.trajectory.duration;
    "sim.ramp" => sim.trajectory.ramp;
    "sim.linear_velocity" => sim.trajectory.linear_velocity;
    "sim.angular_velocity" => sim.trajectory.angular_velocity;
    "sim.translation_amplitude" => sim.trajectory.translation_amplitude;
    "sim.translation_frequency" => sim.trajectory.translation_frequency;
    "sim.rotation_amplitude" => sim.trajectory.rotation_amplitude;
    "sim.rotation_frequency" => sim.trajectory.rotation_frequency;
    "sim.phase" => sim.trajectory.phase;
    "sim.static_seconds" => sim.static_seconds;
    "sim.scan_rate" => sim.scan_rate;
    "sim.points_per_scan" => sim.scan.points_per_scan;
    "sim.edge_fraction" => sim.scan.edge_fraction;
    "sim.lidar_noise" => sim.scan.noise_sigma;
    "sim.room_half_extent" => room_half_extent;
    "sim.pole_offset" => pole_offset;
    "sim.imu_rate" => sim.imu.rate;
    "sim.measurement_noise" => sim.imu.measurement_noise;
    "sim.bias_random_walk" => sim.imu.bias_random_walk;
    "sim.accel_bias" => sim.imu.bias.accel;
    "sim.gyro_bias" => sim.imu.bias.gyro;
    "imu.gravity" => pipeline.init.gravity;
    "imu.sigma_accel" => pipeline.estimator.noise.sigma_accel;
    "imu.sigma_gyro" => pipeline.estimator.noise.sigma_gyro;
    "imu.sigma_accel_bias" => pipeline.estimator.noise.sigma_accel_bias;
    "imu.sigma_gyro_bias" => pipeline.estimator.noise.sigma_gyro_bias;
    "init.static_seconds" => pipeline.init.min_duration;
    "init.gyro_variance" => pipeline.init.thresholds.gyro_variance;
    "init.accel_norm_variance" => pipeline.init.thresholds.accel_norm_variance;
    "preint.max_gap" => pipeline.estimator.integration.max_gap;
    "scan.window" => pipeline.extraction.window;
    "scan.sectors" => pipeline.extraction.sectors;
    "scan.max_edges_per_sector" => pipeline.extraction.max_edges_per_sector;
    "scan.max_planars_per_sector" => pipeline.extraction.max_planars_per_sector;
    "scan.edge_threshold" => pipeline.extraction.edge_threshold;
    "scan.planar_threshold" => pipeline.extraction.planar_threshold;
    "scan.min_range" => pipeline.extraction.min_range;
    "scan.max_range" => pipeline.extraction.max_range;
    "scan.extrinsic_rotation" => extrinsic_rotation;
    "scan.extrinsic_translation" => extrinsic_translation;
    "map.voxel_edge" => pipeline.map.voxel_edge;
    "map.voxel_planar" => pipeline.map.voxel_planar;
    "map.knn" => pipeline.map.knn;
    "map.max_dist" => pipeline.map.max_dist;
    "map.line_eigen_ratio" => pipeline.map.line_eigen_ratio;
    "map.plane_max_residual" => pipeline.map.plane_max_residual;
    "lidar.sigma" => pipeline.estimator.lidar_sigma;
    "lidar.huber_delta" => pipeline.estimator.huber_delta;
    "lidar.min_correspondences" => pipeline.estimator.min_correspondences;
    "solver.max_inner" => pipeline.estimator.max_inner;
    "solver.max_outer" => pipeline.estimator.max_outer;
    "solver.initial_lambda" => pipeline.estimator.initial_lambda;
    "solver.step_tolerance" => pipeline.estimator.step_tolerance;
    "solver.cost_tolerance" => pipeline.estimator.cost_tolerance;
    "solver.relinearize_threshold" => pipeline.estimator.relinearize_threshold;
    "solver.one_pass" => pipeline.estimator.one_pass;
}

fn strip_comment(line: &str) -> &str {
    line.split('#').next().unwrap_or("").trim()
}

impl RunConfig {
    pub fn from_preset(name: &str) -> Result<Self> {
        let sim = SimConfig::preset(name).ok_or_else(|| Error::Config(format!("unknown preset `{name}`")))?;
        let mut pipeline = PipelineConfig::default();
        pipeline.estimator.noise = sim.imu.noise;
        let mut cfg = RunConfig {
            preset: name.to_string(),
            sim,
            room_half_extent: 5.0,
            pole_offset: 2.5,
            pipeline,
            extrinsic_rotation: Vec3::zeros(),
            extrinsic_translation: Vec3::zeros(),
        };
        cfg.sync();
        Ok(cfg)
    }

    /// Copies the values shared between simulation and estimation into both.
    fn sync(&mut self) {
        let extrinsic = RigidTransform::new(Quat::exp(&self.extrinsic_rotation), self.extrinsic_translation);
        self.pipeline.extrinsic = extrinsic;
        self.sim.scan.extrinsic = extrinsic;
        self.sim.scan.min_range = self.pipeline.extraction.min_range;
        self.sim.scan.max_range = self.pipeline.extraction.max_range;
        self.sim.imu.noise = self.pipeline.estimator.noise;
        self.sim.imu.gravity = Vec3::new(0.0, 0.0, self.pipeline.init.gravity);
        self.sim.imu.seed = self.sim.seed;
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut preset = None;
        for (i, raw) in text.lines().enumerate() {
            let line = strip_comment(raw);
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line: i + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `section.key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if entries.iter().any(|(_, k, _): &(usize, &str, &str)| *k == key) || (key == "sim.preset" && preset.is_some()) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            if key == "sim.preset" {
                preset = Some((i + 1, value));
            } else {
                entries.push((i + 1, key, value));
            }
        }
        let mut cfg = match preset {
            Some((line, name)) => Self::from_preset(name).map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?,
            None => Self::default(),
        };
        for (line, key, value) in entries {
            cfg.set(key, value).map_err(|message| Error::Parse {
                line,
                message: if message.starts_with("unknown key") {
                    message
                } else {
                    format!("`{key}`: {message}")
                },
            })?;
        }
        cfg.sync();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        let est = &self.pipeline.estimator;
        est.noise.validate()?;
        if self.sim.trajectory.duration <= 0.0 {
            return bad("sim.duration must be positive");
        }
        if self.sim.scan_rate <= 0.0 || self.sim.imu.rate < 100.0 {
            return bad("sim.scan_rate must be positive and sim.imu_rate at least 100 Hz");
        }
        if !(0.0..=1.0).contains(&self.sim.scan.edge_fraction) {
            return bad("sim.edge_fraction must lie in [0, 1]");
        }
        if self.room_half_extent <= self.pole_offset.abs() || self.pole_offset < 0.0 {
            return bad("sim.pole_offset must lie in [0, sim.room_half_extent)");
        }
        if est.lidar_sigma <= 0.0 || est.huber_delta <= 0.0 || est.initial_lambda <= 0.0 {
            return bad("lidar.sigma, lidar.huber_delta and solver.initial_lambda must be positive");
        }
        if est.max_inner == 0 || est.max_outer == 0 {
            return bad("solver.max_inner and solver.max_outer must be at least 1");
        }
        let map = &self.pipeline.map;
        if map.voxel_edge <= 0.0 || map.voxel_planar <= 0.0 || map.max_dist <= 0.0 || map.knn < 3 {
            return bad("map voxel sizes and max_dist must be positive and map.knn at least 3");
        }
        if self.pipeline.init.min_duration <= 0.0 || self.pipeline.init.gravity <= 0.0 {
            return bad("init.static_seconds and imu.gravity must be positive");
        }
        Ok(())
    }

    pub fn world(&self) -> SimWorld {
        SimWorld::room(self.room_half_extent, self.pole_offset)
    }

    /// Text form that parses back to an identical configuration.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "sim.preset = {}", self.preset);
        for (key, value) in self.entries() {
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }
}
