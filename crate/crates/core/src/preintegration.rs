//! Backward IMU preintegration.
//!
//! Integration starts at the newest time `t_k` with the identity element and
//! walks toward older samples, so every quantity is expressed in the body
//! frame at `t_k`:
//!
//! ```text
//! γ_{i-1} = γ_i ⊗ Exp(-(½(ω̂_i + ω̂_{i-1}) - b_ω) δt)
//! β_{i-1} = β_i - ½ [γ_i (â_i - b_a) + γ_{i-1} (â_{i-1} - b_a)] δt
//! α_{i-1} = α_i - ½ (β_i + β_{i-1}) δt
//! ```
//!
//! These satisfy, for states at `t_{k-1}` and `t_k` with `Δt = t_k - t_{k-1}`:
//!
//! ```text
//! R_kᵀ p_{k-1} = R_kᵀ (p_k - v_k Δt - ½ g Δt²) + α
//! R_kᵀ v_{k-1} = R_kᵀ (v_k + g Δt) + β
//! q_k⁻¹ ⊗ q_{k-1} = γ
//! ```
//!
//! The error state of a preintegration is `[δα, δβ, δθ, δb_a, δb_ω]` with
//! `γ_true = γ ⊗ Exp(δθ)`.

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};
use crate::geometry::{right_jacobian, skew, Mat3, Quat, Vec3};
use crate::imu::{ImuNoiseParams, ImuSample};
use crate::state::{ImuBias, Matrix15, State, Vector15, BA, BW, P, THETA, V};

/// Preintegrated quantities over `[t_k - dt, t_k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Preintegration {
    pub alpha: Vec3,
    pub beta: Vec3,
    pub gamma: Quat,
    pub dt: f64,
    /// Biases the quantities were integrated with.
    pub bias: ImuBias,
    pub covariance: Matrix15,
    /// Full error-state transition; columns `BA..` and `BW..` are the bias Jacobians.
    pub jacobian: Matrix15,
}

impl Preintegration {
    pub fn identity(bias: ImuBias) -> Self {
        Self {
            alpha: Vec3::zeros(),
            beta: Vec3::zeros(),
            gamma: Quat::identity(),
            dt: 0.0,
            bias,
            covariance: Matrix15::zeros(),
            jacobian: Matrix15::identity(),
        }
    }

    fn block(&self, row: usize, col: usize) -> Mat3 {
        self.jacobian.fixed_view::<3, 3>(row, col).into_owned()
    }

    pub fn d_alpha_d_ba(&self) -> Mat3 {
        self.block(P, BA)
    }

    pub fn d_alpha_d_bg(&self) -> Mat3 {
        self.block(P, BW)
    }

    pub fn d_beta_d_ba(&self) -> Mat3 {
        self.block(V, BA)
    }

    pub fn d_beta_d_bg(&self) -> Mat3 {
        self.block(V, BW)
    }

    pub fn d_theta_d_bg(&self) -> Mat3 {
        self.block(THETA, BW)
    }

    /// Rotation-vector correction `J_θ,bω (b_ω - b_ω,ref)` for a new gyro bias.
    pub fn rotation_correction(&self, gyro_bias: &Vec3) -> Vec3 {
        self.d_theta_d_bg() * (gyro_bias - self.bias.gyro)
    }

    /// First-order bias update; no threshold check.
    pub fn corrected(&self, new_bias: &ImuBias) -> Preintegration {
        let dba = new_bias.accel - self.bias.accel;
        let dbg = new_bias.gyro - self.bias.gyro;
        if dba == Vec3::zeros() && dbg == Vec3::zeros() {
            return self.clone();
        }
        let mut out = self.clone();
        out.alpha += self.d_alpha_d_ba() * dba + self.d_alpha_d_bg() * dbg;
        out.beta += self.d_beta_d_ba() * dba + self.d_beta_d_bg() * dbg;
        out.gamma = self.gamma.boxplus(&(self.d_theta_d_bg() * dbg));
        out.bias = *new_bias;
        out
    }

    /// One backward mid-point step from `newer` (this preintegration's oldest
    /// time) to `older`.
    fn step_back(&self, newer: &ImuSample, older: &ImuSample, noise: &ImuNoiseParams) -> Self {
        let dt = newer.t - older.t;
        let ba = self.bias.accel;
        let bg = self.bias.gyro;

        let omega = 0.5 * (newer.gyro + older.gyro) - bg;
        let phi = -omega * dt;
        let step = Quat::exp(&phi);
        let gamma_new = self.gamma;
        let gamma_old = gamma_new * step;

        let r_new = gamma_new.to_matrix();
        let r_old = gamma_old.to_matrix();
        let a_new = newer.accel - ba;
        let a_old = older.accel - ba;

        let beta_old = self.beta - 0.5 * (r_new * a_new + r_old * a_old) * dt;
        let alpha_old = self.alpha - 0.5 * (self.beta + beta_old) * dt;

        // Error-state transition e_{i-1} = F e_i + G n.
        let jr = right_jacobian(&phi);
        let step_t = step.to_matrix().transpose();
        let f_theta_theta = step_t;
        let f_theta_bg = jr * dt;
        let f_beta_theta = 0.5 * dt * (r_new * skew(&a_new) + r_old * skew(&a_old) * step_t);
        let f_beta_ba = 0.5 * dt * (r_new + r_old);
        let f_beta_bg = 0.5 * dt * r_old * skew(&a_old) * f_theta_bg;

        let mut f = Matrix15::identity();
        f.fixed_view_mut::<3, 3>(P, V)
            .copy_from(&(-dt * Mat3::identity()));
        f.fixed_view_mut::<3, 3>(P, THETA)
            .copy_from(&(-0.5 * dt * f_beta_theta));
        f.fixed_view_mut::<3, 3>(P, BA)
            .copy_from(&(-0.5 * dt * f_beta_ba));
        f.fixed_view_mut::<3, 3>(P, BW)
            .copy_from(&(-0.5 * dt * f_beta_bg));
        f.fixed_view_mut::<3, 3>(V, THETA).copy_from(&f_beta_theta);
        f.fixed_view_mut::<3, 3>(V, BA).copy_from(&f_beta_ba);
        f.fixed_view_mut::<3, 3>(V, BW).copy_from(&f_beta_bg);
        f.fixed_view_mut::<3, 3>(THETA, THETA)
            .copy_from(&f_theta_theta);
        f.fixed_view_mut::<3, 3>(THETA, BW).copy_from(&f_theta_bg);

        // Noise columns: [n_a, n_ω, n_ba, n_bω].
        let mut g = SMatrix::<f64, 15, 12>::zeros();
        g.fixed_view_mut::<3, 3>(V, 0).copy_from(&f_beta_ba);
        g.fixed_view_mut::<3, 3>(V, 3).copy_from(&f_beta_bg);
        g.fixed_view_mut::<3, 3>(P, 0)
            .copy_from(&(-0.5 * dt * f_beta_ba));
        g.fixed_view_mut::<3, 3>(P, 3)
            .copy_from(&(-0.5 * dt * f_beta_bg));
        g.fixed_view_mut::<3, 3>(THETA, 3).copy_from(&f_theta_bg);
        g.fixed_view_mut::<3, 3>(BA, 6)
            .copy_from(&(dt * Mat3::identity()));
        g.fixed_view_mut::<3, 3>(BW, 9)
            .copy_from(&(dt * Mat3::identity()));

        // Continuous densities discretized as σ²/δt.
        let mut q = SVector::<f64, 12>::zeros();
        if dt > 0.0 {
            let inv = 1.0 / dt;
            for k in 0..3 {
                q[k] = noise.sigma_accel.powi(2) * inv;
                q[3 + k] = noise.sigma_gyro.powi(2) * inv;
                q[6 + k] = noise.sigma_accel_bias.powi(2) * inv;
                q[9 + k] = noise.sigma_gyro_bias.powi(2) * inv;
            }
        }
        let q = SMatrix::<f64, 12, 12>::from_diagonal(&q);

        let mut covariance = f * self.covariance * f.transpose() + g * q * g.transpose();
        covariance = 0.5 * (covariance + covariance.transpose());

        Self {
            alpha: alpha_old,
            beta: beta_old,
            gamma: gamma_old,
            dt: self.dt + dt,
            bias: self.bias,
            covariance,
            jacobian: f * self.jacobian,
        }
    }
}

/// Checkpoints of a backward integration, newest first.
#[derive(Clone, Debug)]
pub struct PreintegrationCache {
    /// Samples in newest-first order, aligned with `checkpoints`.
    samples: Vec<ImuSample>,
    checkpoints: Vec<Preintegration>,
    noise: ImuNoiseParams,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegrationOptions {
    /// Largest allowed spacing between consecutive samples, seconds.
    pub max_gap: f64,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        Self { max_gap: 0.02 }
    }
}

/// Integrates `samples` (oldest first, spanning `[t_{k-1}, t_k]`) backward
/// from the newest sample, storing one checkpoint per sample time.
pub fn integrate_backward(
    samples: &[ImuSample],
    bias: &ImuBias,
    noise: &ImuNoiseParams,
    options: &IntegrationOptions,
) -> Result<PreintegrationCache> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            required: 2,
            got: samples.len(),
        });
    }
    for (i, pair) in samples.windows(2).enumerate() {
        let gap = pair[1].t - pair[0].t;
        if gap <= 0.0 {
            return Err(Error::NonMonotonic {
                index: i + 1,
                t: pair[1].t,
            });
        }
        if gap > options.max_gap {
            return Err(Error::ImuGap {
                t: pair[0].t,
                gap,
                max_gap: options.max_gap,
            });
        }
    }

    let newest_first: Vec<ImuSample> = samples.iter().rev().copied().collect();
    let mut checkpoints = Vec::with_capacity(samples.len());
    checkpoints.push(Preintegration::identity(*bias));
    for pair in newest_first.windows(2) {
        let next = checkpoints
            .last()
            .expect("seeded with identity")
            .step_back(&pair[0], &pair[1], noise);
        checkpoints.push(next);
    }
    Ok(PreintegrationCache {
        samples: newest_first,
        checkpoints,
        noise: *noise,
    })
}

impl PreintegrationCache {
    /// Window end `t_k`.
    pub fn t_end(&self) -> f64 {
        self.samples[0].t
    }

    /// Window start `t_{k-1}`.
    pub fn t_start(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    pub fn bias(&self) -> ImuBias {
        self.checkpoints[0].bias
    }

    /// Preintegration over the full window.
    pub fn full(&self) -> &Preintegration {
        &self.checkpoints[self.checkpoints.len() - 1]
    }

    pub fn checkpoints(&self) -> &[Preintegration] {
        &self.checkpoints
    }

    pub fn sample_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.t)
    }

    /// Preintegration from `t_j` to `t_k`.
    pub fn at(&self, t_j: f64) -> Result<Preintegration> {
        sub_preintegration(self, t_j)
    }
}

const TIME_EPS: f64 = 1e-12;

/// Preintegration from `t_j` to the window end. Between two samples a single
/// partial mid-point step is taken from the newer checkpoint using the
/// linearly interpolated measurement at `t_j`.
pub fn sub_preintegration(cache: &PreintegrationCache, t_j: f64) -> Result<Preintegration> {
    let (start, end) = (cache.t_start(), cache.t_end());
    if t_j > end + TIME_EPS || t_j < start - TIME_EPS || t_j.is_nan() {
        return Err(Error::OutOfWindow { t: t_j, start, end });
    }
    let samples = &cache.samples;
    // First index (newest first) whose time is <= t_j.
    let idx = samples.partition_point(|s| s.t > t_j + TIME_EPS);
    let idx = idx.min(samples.len() - 1);
    if (samples[idx].t - t_j).abs() <= TIME_EPS {
        return Ok(cache.checkpoints[idx].clone());
    }
    let newer = idx - 1;
    let interp = ImuSample::lerp(&samples[idx], &samples[newer], t_j);
    Ok(cache.checkpoints[newer].step_back(&samples[newer], &interp, &cache.noise))
}

/// Re-linearization guard around [`Preintegration::corrected`].
pub fn bias_corrected(
    p: &Preintegration,
    new_bias: &ImuBias,
    threshold: f64,
) -> Result<Preintegration> {
    let delta = (new_bias.accel - p.bias.accel)
        .norm()
        .max((new_bias.gyro - p.bias.gyro).norm());
    if delta > threshold {
        return Err(Error::RelinearizationRequired { delta, threshold });
    }
    Ok(p.corrected(new_bias))
}

/// IMU factor residual `[r_p, r_v, r_θ, r_ba, r_bω]`.
///
/// The preintegration is first-order corrected to `x_k`'s biases.
pub fn imu_residual(x_k: &State, x_prev: &State, p: &Preintegration, gravity: &Vec3) -> Vector15 {
    let p = p.corrected(&x_k.bias);
    let dt = p.dt;
    let rt = x_k.rotation_matrix().transpose();
    let mut r = Vector15::zeros();
    let u_p = x_k.position - x_k.velocity * dt - 0.5 * gravity * dt * dt - x_prev.position;
    let u_v = x_k.velocity + gravity * dt - x_prev.velocity;
    r.fixed_rows_mut::<3>(P).copy_from(&(rt * u_p + p.alpha));
    r.fixed_rows_mut::<3>(V).copy_from(&(rt * u_v + p.beta));
    let q_e = x_k.rotation.inverse() * x_prev.rotation * p.gamma.inverse();
    r.fixed_rows_mut::<3>(THETA).copy_from(&(2.0 * q_e.vec()));
    r.fixed_rows_mut::<3>(BA)
        .copy_from(&(x_k.bias.accel - x_prev.bias.accel));
    r.fixed_rows_mut::<3>(BW)
        .copy_from(&(x_k.bias.gyro - x_prev.bias.gyro));
    r
}

/// Derivative of `2 vec(q_k⁻¹ ⊗ q_prev ⊗ γ(b_ω)⁻¹)` with respect to
/// `(δθ_k, δb_ω)`.
pub(crate) fn rotation_residual_jacobians(
    x_k: &State,
    x_prev: &State,
    p: &Preintegration,
) -> (Vec3, Mat3, Mat3) {
    let phi = p.rotation_correction(&x_k.bias.gyro);
    let gamma = p.gamma.boxplus(&phi);
    let a = x_k.rotation.inverse() * x_prev.rotation;
    let q_e = a * gamma.inverse();
    let r_right = q_e.right_matrix();
    let d_theta = -r_right.fixed_view::<3, 3>(1, 1).into_owned();
    let mut m = a.left_matrix() * gamma.inverse().right_matrix();
    // Canonicalization may have flipped q_e relative to the raw product.
    if (a.left_matrix() * gamma.inverse().coords())[0] < 0.0 {
        m = -m;
    }
    let d_bg = -m.fixed_view::<3, 3>(1, 1).into_owned() * right_jacobian(&phi) * p.d_theta_d_bg();
    (2.0 * q_e.vec(), d_theta, d_bg)
}

/// Analytic Jacobian of [`imu_residual`] with respect to `x_k`'s error state.
pub fn imu_residual_jacobian(
    x_k: &State,
    x_prev: &State,
    p: &Preintegration,
    gravity: &Vec3,
) -> Matrix15 {
    let dt = p.dt;
    let rt = x_k.rotation_matrix().transpose();
    let u_p = x_k.position - x_k.velocity * dt - 0.5 * gravity * dt * dt - x_prev.position;
    let u_v = x_k.velocity + gravity * dt - x_prev.velocity;
    let mut j = Matrix15::zeros();

    j.fixed_view_mut::<3, 3>(P, P).copy_from(&rt);
    j.fixed_view_mut::<3, 3>(P, V).copy_from(&(-dt * rt));
    j.fixed_view_mut::<3, 3>(P, THETA)
        .copy_from(&skew(&(rt * u_p)));
    j.fixed_view_mut::<3, 3>(P, BA).copy_from(&p.d_alpha_d_ba());
    j.fixed_view_mut::<3, 3>(P, BW).copy_from(&p.d_alpha_d_bg());

    j.fixed_view_mut::<3, 3>(V, V).copy_from(&rt);
    j.fixed_view_mut::<3, 3>(V, THETA)
        .copy_from(&skew(&(rt * u_v)));
    j.fixed_view_mut::<3, 3>(V, BA).copy_from(&p.d_beta_d_ba());
    j.fixed_view_mut::<3, 3>(V, BW).copy_from(&p.d_beta_d_bg());

    let (_, d_theta, d_bg) = rotation_residual_jacobians(x_k, x_prev, p);
    j.fixed_view_mut::<3, 3>(THETA, THETA).copy_from(&d_theta);
    j.fixed_view_mut::<3, 3>(THETA, BW).copy_from(&d_bg);

    j.fixed_view_mut::<3, 3>(BA, BA)
        .copy_from(&Mat3::identity());
    j.fixed_view_mut::<3, 3>(BW, BW)
        .copy_from(&Mat3::identity());
    j
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const RATE: f64 = 400.0;

    fn constant(duration: f64, gyro: Vec3, accel: Vec3) -> Vec<ImuSample> {
        let n = (duration * RATE).round() as usize;
        (0..=n)
            .map(|i| ImuSample::new(i as f64 / RATE, gyro, accel))
            .collect()
    }

    fn integrate(samples: &[ImuSample], bias: ImuBias) -> PreintegrationCache {
        integrate_backward(samples, &bias, &ImuNoiseParams::default(), &IntegrationOptions::default())
            .unwrap()
    }

    #[test]
    fn measurements_equal_to_bias_give_identity() {
        let bias = ImuBias::new(Vec3::new(0.1, -0.2, 0.3), Vec3::new(0.01, 0.02, -0.03));
        let cache = integrate(&constant(0.3, bias.gyro, bias.accel), bias);
        let full = cache.full();
        assert!(full.alpha.norm() < 1e-15);
        assert!(full.beta.norm() < 1e-15);
        assert!(full.gamma.angle() < 1e-15);
    }

    #[test]
    fn constant_acceleration_closed_form() {
        let cache = integrate(&constant(1.0, Vec3::zeros(), Vec3::x()), ImuBias::zero());
        let full = cache.full();
        assert!((full.beta - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
        assert!((full.alpha - Vec3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
        assert!((full.dt - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_rate_closed_form() {
        let cache = integrate(&constant(1.0, Vec3::z(), Vec3::zeros()), ImuBias::zero());
        let expected = Quat::from_axis_angle(&Vec3::z(), -1.0);
        assert!((cache.full().gamma.inverse() * expected).angle() < 1e-12);
    }

    #[test]
    fn checkpoints_are_newest_first() {
        let cache = integrate(&constant(0.1, Vec3::z(), Vec3::x()), ImuBias::zero());
        let cps = cache.checkpoints();
        assert_eq!(cps[0], Preintegration::identity(ImuBias::zero()));
        let times: Vec<f64> = cache.sample_times().collect();
        assert!(times.windows(2).all(|w| w[0] > w[1]));
        assert!(cps.windows(2).all(|w| w[0].dt < w[1].dt));
    }

    #[test]
    fn sub_preintegration_endpoints_and_midpoints() {
        let samples = constant(0.1, Vec3::zeros(), Vec3::x());
        let cache = integrate(&samples, ImuBias::zero());
        let at_end = cache.at(cache.t_end()).unwrap();
        assert_eq!(at_end, Preintegration::identity(ImuBias::zero()));
        assert_eq!(&cache.at(cache.t_start()).unwrap(), cache.full());

        // Midway between two samples.
        let t_j = 0.05 + 0.5 / RATE;
        let sub = cache.at(t_j).unwrap();
        let dt = cache.t_end() - t_j;
        assert!((sub.dt - dt).abs() < 1e-12);
        assert!((sub.beta - Vec3::new(-dt, 0.0, 0.0)).norm() < 1e-9);
        assert!((sub.alpha - Vec3::new(0.5 * dt * dt, 0.0, 0.0)).norm() < 1e-9);

        // At a sample time, the stored checkpoint is returned verbatim.
        let t_s = samples[17].t;
        let idx = samples.len() - 1 - 17;
        assert_eq!(cache.at(t_s).unwrap(), cache.checkpoints()[idx]);

        assert!(matches!(cache.at(0.2), Err(Error::OutOfWindow { .. })));
        assert!(matches!(cache.at(-0.01), Err(Error::OutOfWindow { .. })));
    }

    #[test]
    fn integration_errors() {
        let opts = IntegrationOptions::default();
        let noise = ImuNoiseParams::default();
        let one = constant(0.0, Vec3::zeros(), Vec3::zeros());
        assert!(matches!(
            integrate_backward(&one, &ImuBias::zero(), &noise, &opts),
            Err(Error::TooFewSamples { .. })
        ));
        let mut bad = constant(0.05, Vec3::zeros(), Vec3::zeros());
        bad[5].t = bad[3].t;
        assert!(matches!(
            integrate_backward(&bad, &ImuBias::zero(), &noise, &opts),
            Err(Error::NonMonotonic { .. })
        ));
        let mut gap = constant(0.05, Vec3::zeros(), Vec3::zeros());
        gap.remove(4);
        let strict = IntegrationOptions { max_gap: 0.003 };
        assert!(matches!(
            integrate_backward(&gap, &ImuBias::zero(), &noise, &strict),
            Err(Error::ImuGap { .. })
        ));
    }

    fn wobbly(duration: f64, seed: u64) -> Vec<ImuSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a0 = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 9.81);
        let w0 = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-2.0..2.0));
        let n = (duration * RATE).round() as usize;
        (0..=n)
            .map(|i| {
                let t = i as f64 / RATE;
                let s = (7.0 * t).sin();
                ImuSample::new(t, w0 * (1.0 + 0.5 * s), a0 + Vec3::new(s, -s, 0.5 * s))
            })
            .collect()
    }

    #[test]
    fn bias_correction_matches_reintegration() {
        let samples = wobbly(0.1, 3);
        let base = ImuBias::zero();
        let full = integrate(&samples, base).full().clone();

        let dbg = ImuBias::new(Vec3::zeros(), Vec3::new(1e-3, 0.0, 0.0));
        let reint = integrate(&samples, dbg).full().clone();
        let corr = bias_corrected(&full, &dbg, 0.1).unwrap();
        assert!((corr.gamma.inverse() * reint.gamma).angle() < 1e-5);

        let dba = ImuBias::new(Vec3::new(1e-2, 0.0, 0.0), Vec3::zeros());
        let flat = constant(1.0, Vec3::zeros(), Vec3::new(0.3, 0.0, 9.81));
        let p0 = integrate(&flat, base).full().clone();
        let p1 = integrate(&flat, dba).full().clone();
        let corr = p0.corrected(&dba);
        assert!((corr.alpha - p1.alpha).norm() < 1e-6);
        // α' - α = J δb_a, and the Jacobian reproduces -½ δb_a Δt².
        assert!((corr.alpha - p0.alpha - Vec3::new(-0.5e-2, 0.0, 0.0)).norm() < 1e-9);

        assert_eq!(p0.corrected(&base), p0);
        assert!(matches!(
            bias_corrected(&p0, &ImuBias::new(Vec3::new(0.2, 0.0, 0.0), Vec3::zeros()), 0.1),
            Err(Error::RelinearizationRequired { .. })
        ));
    }

    #[test]
    fn covariance_is_symmetric_psd_and_grows() {
        let samples = wobbly(0.2, 5);
        let cache = integrate(&samples, ImuBias::zero());
        let mut last_trace = -1.0;
        for cp in cache.checkpoints() {
            let c = &cp.covariance;
            assert!((c - c.transpose()).norm() == 0.0);
            let eig = c.symmetric_eigenvalues();
            assert!(eig.min() >= -1e-12);
            assert!(c.trace() >= last_trace);
            last_trace = c.trace();
        }
    }

    /// Forward Euler-free oracle: integrate states forward with the same
    /// mid-point scheme, then substitute them into the IMU factor.
    #[test]
    fn forward_integrated_states_satisfy_factor() {
        let samples = wobbly(0.1, 11);
        let g = Vec3::new(0.0, 0.0, 9.81);
        let x_prev = State {
            t: samples[0].t,
            position: Vec3::new(1.0, -2.0, 0.5),
            velocity: Vec3::new(0.3, 0.1, -0.2),
            rotation: Quat::new(0.9, 0.2, -0.1, 0.3),
            bias: ImuBias::zero(),
        };
        let mut q = x_prev.rotation;
        let mut p = x_prev.position;
        let mut v = x_prev.velocity;
        for pair in samples.windows(2) {
            let dt = pair[1].t - pair[0].t;
            let q1 = q * Quat::exp(&(0.5 * (pair[0].gyro + pair[1].gyro) * dt));
            let a = 0.5 * (q.rotate(&pair[0].accel) + q1.rotate(&pair[1].accel)) - g;
            p += v * dt + 0.5 * a * dt * dt;
            v += a * dt;
            q = q1;
        }
        let x_k = State {
            t: samples[samples.len() - 1].t,
            position: p,
            velocity: v,
            rotation: q,
            bias: ImuBias::zero(),
        };
        let cache = integrate(&samples, ImuBias::zero());
        let r = imu_residual(&x_k, &x_prev, cache.full(), &g);
        // Forward and backward mid-point schemes agree to O(δt²) per unit time.
        assert!(r.norm() < 1e-6, "residual {}", r.norm());

        let rest = State::default();
        let id = Preintegration::identity(ImuBias::zero());
        assert_eq!(imu_residual(&rest, &rest, &id, &g), Vector15::zeros());

        let mut shifted = x_k;
        shifted.rotation = Quat::identity();
        let base = imu_residual(&shifted, &x_prev, cache.full(), &g);
        shifted.position += Vec3::new(0.1, 0.0, 0.0);
        let moved = imu_residual(&shifted, &x_prev, cache.full(), &g);
        let d = (moved - base).fixed_rows::<3>(P).into_owned();
        assert!((d - Vec3::new(0.1, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn jacobian_bias_rows_are_identity() {
        let samples = wobbly(0.1, 2);
        let cache = integrate(&samples, ImuBias::zero());
        let x = State::default();
        let j = imu_residual_jacobian(&x, &x, cache.full(), &Vec3::new(0.0, 0.0, 9.81));
        assert_eq!(j.fixed_view::<3, 3>(BA, BA).into_owned(), Mat3::identity());
        assert_eq!(j.fixed_view::<3, 3>(BW, BW).into_owned(), Mat3::identity());
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let g = Vec3::new(0.0, 0.0, 9.81);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for seed in 0..20 {
            let samples = wobbly(0.1, seed);
            let bias = ImuBias::new(Vec3::new(0.05, -0.02, 0.01), Vec3::new(0.01, 0.0, -0.02));
            let cache = integrate(&samples, bias);
            let mut rv = |s: f64| Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s));
            let x_prev = State {
                t: 0.0,
                position: rv(2.0),
                velocity: rv(1.0),
                rotation: Quat::exp(&rv(1.0)),
                bias: ImuBias::new(rv(0.05), rv(0.01)),
            };
            let x_k = State {
                t: 0.1,
                position: rv(2.0),
                velocity: rv(1.0),
                rotation: Quat::exp(&rv(1.0)),
                bias: ImuBias::new(bias.accel + rv(0.05), bias.gyro + rv(0.05)),
            };
            let j = imu_residual_jacobian(&x_k, &x_prev, cache.full(), &g);
            let h = 1e-6;
            for c in 0..15 {
                let mut d = Vector15::zeros();
                d[c] = h;
                let rp = imu_residual(&x_k.boxplus(&d), &x_prev, cache.full(), &g);
                let rm = imu_residual(&x_k.boxplus(&-d), &x_prev, cache.full(), &g);
                let fd = (rp - rm) / (2.0 * h);
                let col = j.column(c);
                let err = (fd - col).norm() / col.norm().max(1.0);
                assert!(err < 1e-5, "seed {seed} col {c}: fd {fd} analytic {col}");
            }
        }
    }
}
