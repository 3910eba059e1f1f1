//! Per-scan MAP estimation: one IMU factor against the fixed previous state
//! plus point-to-line / point-to-plane factors, solved by Levenberg-Marquardt
//! with outer re-association.

use std::sync::Arc;

use nalgebra::{Cholesky, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::{Quat, Vec3};
use crate::imu::{ImuNoiseParams, ImuSample};
use crate::lidar_factor::{evaluate_with, world_point, LidarResidualContext, WindowTerms};
use crate::map_matching::{find_line, find_plane, Correspondence, GlobalMap, PrimitiveKind};
use crate::preintegration::{
    imu_residual, imu_residual_jacobian, integrate_backward, IntegrationOptions, Preintegration, PreintegrationCache,
};
use crate::scan::{FeatureCloud, FeatureLabel};
use crate::state::{Matrix15, State, Vector15};

/// `Σ JᵀWJ`, `Σ JᵀWr` and `Σ rᵀWr` over a set of factors.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalEquations {
    pub hessian: Matrix15,
    pub gradient: Vector15,
    pub cost: f64,
}

impl Default for NormalEquations {
    fn default() -> Self {
        Self {
            hessian: Matrix15::zeros(),
            gradient: Vector15::zeros(),
            cost: 0.0,
        }
    }
}

pub trait Factor {
    fn cost(&self, x: &State) -> f64;
    fn accumulate(&self, x: &State, ne: &mut NormalEquations);
}

/// IMU factor weighted by the inverse preintegration covariance.
#[derive(Clone, Debug)]
pub struct ImuFactor {
    pub prev: State,
    pub preintegration: Arc<Preintegration>,
    pub gravity: Vec3,
    pub information: Matrix15,
}

impl ImuFactor {
    pub fn new(prev: State, preintegration: Arc<Preintegration>, gravity: Vec3) -> Self {
        let information = information_from(&preintegration.covariance);
        Self {
            prev,
            preintegration,
            gravity,
            information,
        }
    }

    pub fn residual(&self, x: &State) -> Vector15 {
        imu_residual(x, &self.prev, &self.preintegration, &self.gravity)
    }
}

/// Inverse of a covariance, jittered only when it is not positive definite.
pub fn information_from(cov: &Matrix15) -> Matrix15 {
    let sym = 0.5 * (cov + cov.transpose());
    if let Some(ch) = Cholesky::new(sym) {
        return ch.inverse();
    }
    let scale = (sym.trace() / 15.0).abs().max(1.0);
    let mut jitter = 1e-12 * scale;
    loop {
        if let Some(ch) = Cholesky::new(sym + Matrix15::identity() * jitter) {
            return ch.inverse();
        }
        jitter *= 10.0;
    }
}

impl Factor for ImuFactor {
    fn cost(&self, x: &State) -> f64 {
        let r = self.residual(x);
        (r.transpose() * self.information * r)[0]
    }

    fn accumulate(&self, x: &State, ne: &mut NormalEquations) {
        let r = self.residual(x);
        let j = imu_residual_jacobian(x, &self.prev, &self.preintegration, &self.gravity);
        let jtw = j.transpose() * self.information;
        ne.hessian += jtw * j;
        ne.gradient += jtw * r;
        ne.cost += (r.transpose() * self.information * r)[0];
    }
}

/// Huber cost of a residual of norm `e` with isotropic `σ`; `delta <= 0`
/// disables the robust loss.
pub fn robust_cost(e: f64, sigma: f64, delta: f64) -> f64 {
    if delta <= 0.0 || e <= delta {
        e * e / (sigma * sigma)
    } else {
        (2.0 * delta * e - delta * delta) / (sigma * sigma)
    }
}

fn robust_weight(e: f64, delta: f64) -> f64 {
    if delta <= 0.0 || e <= delta {
        1.0
    } else {
        delta / e
    }
}

/// LiDAR factors of one scan sharing a single window evaluation per call.
#[derive(Clone, Debug)]
pub struct LidarFactors {
    pub contexts: Vec<LidarResidualContext>,
    pub huber_delta: f64,
}

impl LidarFactors {
    fn window(&self, x: &State) -> Option<WindowTerms> {
        self.contexts
            .iter()
            .find(|c| c.frozen.is_none())
            .map(|c| c.window_terms(x))
    }

    /// Per-factor residual norms (meters).
    pub fn residual_norms(&self, x: &State) -> Vec<f64> {
        self.contexts
            .iter()
            .map(|c| crate::lidar_factor::primitive_residual(&c.correspondence, &world_point(c, x)).norm())
            .collect()
    }
}

impl Factor for LidarFactors {
    fn cost(&self, x: &State) -> f64 {
        self.contexts
            .iter()
            .zip(self.residual_norms(x))
            .map(|(c, e)| c.correspondence.weight * robust_cost(e, c.noise_sigma, self.huber_delta))
            .sum()
    }

    fn accumulate(&self, x: &State, ne: &mut NormalEquations) {
        let window = self.window(x);
        for c in &self.contexts {
            let (r, j) = evaluate_with(c, x, window.as_ref());
            let e = r.norm();
            let info = c.correspondence.weight / (c.noise_sigma * c.noise_sigma);
            let w = info * robust_weight(e, self.huber_delta);
            let jt = j.transpose();
            ne.hessian += w * jt * j;
            ne.gradient += w * jt * r;
            ne.cost += c.correspondence.weight * robust_cost(e, c.noise_sigma, self.huber_delta);
        }
    }
}

pub fn total_cost(factors: &[&dyn Factor], x: &State) -> f64 {
    factors.iter().map(|f| f.cost(x)).sum()
}

pub fn normal_equations(factors: &[&dyn Factor], x: &State) -> NormalEquations {
    let mut ne = NormalEquations::default();
    for f in factors {
        f.accumulate(x, &mut ne);
    }
    ne
}

/// Solves `(H + λ diag(H)) δx = −g`.
pub fn solve_step(ne: &NormalEquations, damping: f64) -> Result<Vector15> {
    let mut a = ne.hessian;
    for i in 0..15 {
        a[(i, i)] += damping * ne.hessian[(i, i)];
    }
    let a = 0.5 * (a + a.transpose());
    match Cholesky::new(a) {
        Some(ch) => Ok(ch.solve(&(-ne.gradient))),
        None => {
            let eig = SymmetricEigen::new(a);
            let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
            Err(Error::Singular {
                condition: if min > 0.0 { max / min } else { f64::INFINITY },
            })
        }
    }
}

/// Builds and solves the damped normal equations of `factors` at `x`.
pub fn solve_normal_equations(factors: &[&dyn Factor], x: &State, damping: f64) -> Result<Vector15> {
    solve_step(&normal_equations(factors, x), damping)
}

/// Initial guess for `x_k` from `x_{k-1}` and the window preintegration.
pub fn predict_state(x_prev: &State, cache: &PreintegrationCache, gravity: &Vec3) -> State {
    predict_with(x_prev, cache.full(), cache.t_end(), gravity)
}

pub fn predict_with(x_prev: &State, p: &Preintegration, t_k: f64, gravity: &Vec3) -> State {
    let p = p.corrected(&x_prev.bias);
    let dt = p.dt;
    let rotation = x_prev.rotation * p.gamma.inverse();
    let r = rotation.to_matrix();
    let velocity = x_prev.velocity - gravity * dt - r * p.beta;
    let position = x_prev.position + velocity * dt + 0.5 * gravity * dt * dt - r * p.alpha;
    State {
        t: t_k,
        position,
        velocity,
        rotation,
        bias: x_prev.bias,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorConfig {
    pub max_inner: usize,
    pub max_outer: usize,
    pub initial_lambda: f64,
    pub step_tolerance: f64,
    pub cost_tolerance: f64,
    pub one_pass: bool,
    pub min_correspondences: usize,
    pub lidar_sigma: f64,
    /// Huber threshold in meters, `0` disables.
    pub huber_delta: f64,
    pub relinearize_threshold: f64,
    pub noise: ImuNoiseParams,
    pub integration: IntegrationOptions,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            max_inner: 10,
            max_outer: 3,
            initial_lambda: 1e-4,
            step_tolerance: 1e-6,
            cost_tolerance: 1e-8,
            one_pass: false,
            min_correspondences: 20,
            lidar_sigma: 0.02,
            huber_delta: 0.1,
            relinearize_threshold: 0.1,
            noise: ImuNoiseParams::default(),
            integration: IntegrationOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizationReport {
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    pub num_line_factors: usize,
    pub num_plane_factors: usize,
    /// RMS of final point-to-primitive distances, meters.
    pub final_rms: f64,
    pub reintegrations: usize,
}

/// Result of one scan with the factors of the last association.
#[derive(Clone, Debug)]
pub struct ScanEstimate {
    pub state: State,
    pub report: OptimizationReport,
    pub imu: ImuFactor,
    pub lidar: LidarFactors,
}

impl ScanEstimate {
    pub fn factors(&self) -> [&dyn Factor; 2] {
        [&self.imu, &self.lidar]
    }
}

/// Scan-level inputs shared by the estimation entry points.
pub struct ScanInput<'a> {
    pub prev: &'a State,
    pub features: &'a FeatureCloud,
    /// IMU samples covering `[t_{k-1}, t_k]`, oldest first.
    pub imu: &'a [ImuSample],
    pub map: &'a GlobalMap,
    pub gravity: Vec3,
}

pub fn estimate_scan(input: &ScanInput, config: &EstimatorConfig) -> Result<ScanEstimate> {
    let cache = integrate_backward(input.imu, &input.prev.bias, &config.noise, &config.integration)?;
    let guess = predict_state(input.prev, &cache, &input.gravity);
    estimate_scan_from(input, &guess, config)
}

fn associate(
    input: &ScanInput,
    cache: &PreintegrationCache,
    full: &Arc<Preintegration>,
    x: &State,
    x_init: &State,
    config: &EstimatorConfig,
) -> Result<Vec<LidarResidualContext>> {
    let params = &input.map.params;
    let mut out = Vec::new();
    let placeholder = Correspondence {
        kind: PrimitiveKind::Plane,
        normal: Vec3::z(),
        point: Vec3::zeros(),
        point_index: 0,
        weight: 1.0,
    };
    for (index, f) in input.features.iter().enumerate() {
        let mut ctx = LidarResidualContext::new(
            placeholder,
            f.p,
            cache,
            full.clone(),
            f.t,
            *input.prev,
            input.gravity,
            config.lidar_sigma,
        )?;
        if config.one_pass {
            ctx.freeze_at(x_init);
        }
        let query = world_point(&ctx, x);
        let found = match f.label {
            FeatureLabel::Edge => find_line(input.map, &query, params.knn, params.max_dist),
            FeatureLabel::Planar => find_plane(input.map, &query, params.knn, params.max_dist),
        };
        if let Some(mut c) = found {
            c.point_index = index;
            ctx.correspondence = c;
            out.push(ctx);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimization {
    pub state: State,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after every accepted step.
    pub accepted_costs: Vec<f64>,
}

/// Levenberg-Marquardt on fixed factors starting at `x` whose cost is `cost`.
pub fn minimize(factors: &[&dyn Factor], x: State, cost: f64, config: &EstimatorConfig) -> Result<Minimization> {
    let mut m = Minimization {
        state: x,
        cost,
        iterations: 0,
        converged: false,
        accepted_costs: Vec::new(),
    };
    let mut lambda = config.initial_lambda;
    for _ in 0..config.max_inner {
        m.iterations += 1;
        let ne = normal_equations(factors, &m.state);
        let mut accepted = false;
        while lambda < 1e12 {
            let step = match solve_step(&ne, lambda) {
                Ok(s) => s,
                Err(e) if lambda >= 1e10 => return Err(e),
                Err(_) => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let candidate = m.state.boxplus(&step);
            let c = total_cost(factors, &candidate);
            if step.norm() < config.step_tolerance {
                if c < m.cost {
                    m.state = candidate;
                    m.cost = c;
                    m.accepted_costs.push(c);
                }
                m.converged = true;
                accepted = true;
                break;
            }
            if c < m.cost {
                let rel = (m.cost - c) / m.cost.max(f64::MIN_POSITIVE);
                m.state = candidate;
                m.cost = c;
                m.accepted_costs.push(c);
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                m.converged = rel < config.cost_tolerance;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            m.converged = m.cost <= f64::MIN_POSITIVE;
            break;
        }
        if m.converged {
            break;
        }
    }
    Ok(m)
}

/// Levenberg-Marquardt from `x_init` with outer re-association.
pub fn estimate_scan_from(input: &ScanInput, x_init: &State, config: &EstimatorConfig) -> Result<ScanEstimate> {
    let mut cache = integrate_backward(input.imu, &input.prev.bias, &config.noise, &config.integration)?;
    let mut x = State {
        t: cache.t_end(),
        ..*x_init
    };
    let x_init = x;
    let mut report = OptimizationReport {
        inner_iterations: 0,
        outer_iterations: 0,
        initial_cost: 0.0,
        final_cost: 0.0,
        converged: false,
        num_line_factors: 0,
        num_plane_factors: 0,
        final_rms: 0.0,
        reintegrations: 0,
    };
    let mut last: Option<(ImuFactor, LidarFactors)> = None;

    for _ in 0..config.max_outer.max(1) {
        report.outer_iterations += 1;
        let ref_bias = cache.bias();
        let moved = (x.bias.accel - ref_bias.accel)
            .norm()
            .max((x.bias.gyro - ref_bias.gyro).norm());
        if moved > config.relinearize_threshold {
            cache = integrate_backward(input.imu, &x.bias, &config.noise, &config.integration)?;
            report.reintegrations += 1;
        }
        let full = Arc::new(cache.full().clone());
        let contexts = associate(input, &cache, &full, &x, &x_init, config)?;
        if contexts.len() < config.min_correspondences {
            return Err(Error::DegenerateScan {
                found: contexts.len(),
                required: config.min_correspondences,
            });
        }
        let imu = ImuFactor::new(*input.prev, full, input.gravity);
        let lidar = LidarFactors {
            contexts,
            huber_delta: config.huber_delta,
        };
        let factors: [&dyn Factor; 2] = [&imu, &lidar];

        let init_cost = total_cost(&factors, &x_init);
        let mut cost = total_cost(&factors, &x);
        if init_cost < cost {
            x = x_init;
            cost = init_cost;
        }
        report.initial_cost = init_cost;

        let m = minimize(&factors, x, cost, config)?;
        x = m.state;
        report.inner_iterations += m.iterations;
        report.converged = m.converged;
        report.final_cost = m.cost;
        last = Some((imu, lidar));
    }

    let (imu, lidar) = last.expect("at least one outer iteration");
    let norms = lidar.residual_norms(&x);
    report.num_line_factors = lidar
        .contexts
        .iter()
        .filter(|c| c.correspondence.kind == PrimitiveKind::Line)
        .count();
    report.num_plane_factors = lidar.contexts.len() - report.num_line_factors;
    report.final_rms = if norms.is_empty() {
        0.0
    } else {
        (norms.iter().map(|e| e * e).sum::<f64>() / norms.len() as f64).sqrt()
    };
    Ok(ScanEstimate {
        state: x,
        report,
        imu,
        lidar,
    })
}

/// Body-frame points of `features` undistorted at `x` with the same model the
/// estimator used, returned in the world frame.
pub fn undistorted_world_points(
    features: &FeatureCloud,
    imu: &[ImuSample],
    prev: &State,
    x: &State,
    x_init: Option<&State>,
    gravity: &Vec3,
    config: &EstimatorConfig,
) -> Result<Vec<(FeatureLabel, Vec3)>> {
    let cache = integrate_backward(imu, &prev.bias, &config.noise, &config.integration)?;
    let full = Arc::new(cache.full().clone());
    let placeholder = Correspondence {
        kind: PrimitiveKind::Plane,
        normal: Vec3::z(),
        point: Vec3::zeros(),
        point_index: 0,
        weight: 1.0,
    };
    features
        .iter()
        .map(|f| {
            let mut ctx =
                LidarResidualContext::new(placeholder, f.p, &cache, full.clone(), f.t, *prev, *gravity, 1.0)?;
            if let Some(x0) = x_init {
                ctx.freeze_at(x0);
            }
            Ok((f.label, world_point(&ctx, x)))
        })
        .collect()
}

/// Rotation error in radians between two orientations.
pub fn rotation_error(a: &Quat, b: &Quat) -> f64 {
    a.boxminus(b).norm()
}
